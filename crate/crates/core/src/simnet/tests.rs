use super::*;
use crate::group::TestGroup61;
use crate::transport::Request;

type G = TestGroup61;

fn steps(events: Vec<(Event, Option<&str>)>) -> Vec<Step> {
    events
        .into_iter()
        .map(|(event, expect)| Step {
            event,
            expect: expect.map(str::to_string),
        })
        .collect()
}

fn screen_hazard(acc: &str) -> Event {
    Event::Screen {
        hazard: Some(acc.into()),
        range: None,
        reverse_complement: false,
        random: None,
        fasta: None,
        mode: QueryMode::Provider,
    }
}

fn screen_random(len: usize) -> Event {
    Event::Screen {
        hazard: None,
        range: None,
        reverse_complement: false,
        random: Some(len),
        fasta: None,
        mode: QueryMode::Provider,
    }
}

fn scenario(events: Vec<(Event, Option<&str>)>) -> Scenario {
    Scenario {
        seed: 42,
        n: 5,
        t: 3,
        region: "US".into(),
        hazards: vec![HazardSpec {
            accession: "HZ1".into(),
            kind: HazardKind::Virus,
            regions: vec!["US".into()],
            residues: None,
            length: Some(240),
        }],
        peptide_stride: 1,
        events: steps(events),
    }
}

#[test]
fn downtime_tolerance() {
    let s = scenario(vec![
        (screen_hazard("HZ1"), Some("denied")),
        (Event::Kill { server: 1 }, None),
        (Event::Kill { server: 4 }, None),
        (screen_hazard("HZ1"), Some("denied")),
        (screen_random(200), Some("accepted")),
        (Event::Kill { server: 2 }, None),
        (screen_hazard("HZ1"), Some("quorum_unavailable")),
        (Event::Revive { server: 4 }, None),
        (screen_hazard("HZ1"), Some("denied")),
    ]);
    let t = run_scenario::<G>(&s).unwrap();
    let verdicts: Vec<_> = t
        .records
        .iter()
        .filter_map(|r| match r {
            TranscriptRecord::Verdict { event, matches, accessions, .. } => Some((*event, *matches, accessions.clone())),
            _ => None,
        })
        .collect();
    assert_eq!(verdicts.len(), 4);
    assert_eq!(verdicts[0].1, verdicts[1].1);
    assert_eq!(verdicts[0].1, verdicts[3].1);
    assert_eq!(verdicts[0].2, vec!["HZ1".to_string()]);
    for p in Predicate::ALL {
        assert!(transcript_assert(&t, p), "{p:?}");
    }
}

#[test]
fn mixed_epoch_capture_is_useless() {
    let s = scenario(vec![
        (Event::Capture { server: 1 }, Some("captured epoch 0")),
        (Event::Capture { server: 2 }, None),
        (Event::Reshare, Some("epoch 1 committed [1, 2, 3, 4, 5]")),
        (Event::Capture { server: 3 }, Some("captured epoch 1")),
        (Event::AttemptReconstruct { servers: None }, Some("failed")),
        (screen_hazard("HZ1"), Some("denied")),
        (Event::Capture { server: 1 }, None),
        (Event::Capture { server: 2 }, None),
        (Event::AttemptReconstruct { servers: None }, Some("reconstructed")),
    ]);
    let t = run_scenario::<G>(&s).unwrap();
    assert!(transcript_assert(&t, Predicate::NoShareValues));
}

#[test]
fn rotation_scenario() {
    let s = scenario(vec![
        (screen_hazard("HZ1"), Some("denied")),
        (Event::Rotate, None),
        (screen_hazard("HZ1"), Some("denied")),
        (Event::AdvanceClock { ms: 60_000 }, None),
        (screen_random(300), Some("accepted")),
    ]);
    let t = run_scenario::<G>(&s).unwrap();
    let outcomes = t.outcomes();
    assert!(outcomes[1].1.starts_with("rotated to k2"), "{}", outcomes[1].1);
    assert!(!t.secrets.pre_rotation_hashes.is_empty());
    assert!(t.secrets.pre_rotation_hashes.is_disjoint(&t.secrets.table_hashes));
    for p in Predicate::ALL {
        assert!(transcript_assert(&t, p), "{p:?}");
    }
    // the rekey really went through the keyservers
    assert!(t.messages().any(|m| m.from == DB_NAME && m.to.starts_with("ks")));
}

#[test]
fn replay_is_byte_identical() {
    let s = scenario(vec![
        (screen_random(120), None),
        (Event::Kill { server: 5 }, None),
        (Event::Reshare, None),
        (screen_hazard("HZ1"), None),
    ]);
    let a = run_scenario::<G>(&s).unwrap().to_jsonl();
    let b = run_scenario::<G>(&s).unwrap().to_jsonl();
    assert_eq!(a, b);
    let parsed = Transcript::from_jsonl(&a).unwrap();
    assert_eq!(parsed.len(), a.lines().count());
    let mut other = s.clone();
    other.seed = 43;
    assert_ne!(run_scenario::<G>(&other).unwrap().to_jsonl(), a);
}

#[test]
fn scenario_validation() {
    let mut s = scenario(vec![(Event::Kill { server: 6 }, None)]);
    assert!(matches!(run_scenario::<G>(&s), Err(SimError::ScenarioInvalid(_))));
    s.events = steps(vec![(screen_hazard("nope"), None)]);
    assert!(matches!(run_scenario::<G>(&s), Err(SimError::ScenarioInvalid(_))));
    s.events = steps(vec![(screen_random(100), Some("denied"))]);
    assert!(matches!(run_scenario::<G>(&s), Err(SimError::Expectation { .. })));
    s.t = 6;
    assert!(matches!(run_scenario::<G>(&s), Err(SimError::ScenarioInvalid(_))));
    let json = r#"{"seed":1,"n":3,"t":2,"events":[{"event":"kill","server":1},{"event":"screen","random":50,"expect":"accepted"}]}"#;
    let parsed: Scenario = serde_json::from_str(json).unwrap();
    assert_eq!(parsed.events[1].expect.as_deref(), Some("accepted"));
    run_scenario::<G>(&parsed).unwrap();
}

#[test]
fn leaky_client_is_caught() {
    let mut world = World::<G>::new(3, 3, 2, LimiterConfig::default()).unwrap();
    let mut secrets = Secrets::default();
    let record = SequenceRecord::new("o", random_dna(&mut ChaCha20Rng::seed_from_u64(1), 90));
    let windows = query_windows(0, &record, QueryMode::Provider);
    for w in &windows.windows {
        secrets.add_window(&w.payload, &w.hash_input());
    }
    world.net.take_transcript();
    // an honest screen first
    let honest = world.screener("US", QueryMode::Provider).screen_records(&[record.clone()]).unwrap();
    assert_eq!(honest.windows, windows.len());
    let t = Transcript {
        records: world.net.take_transcript().into_iter().map(TranscriptRecord::from).collect(),
        secrets: secrets.clone(),
    };
    assert!(transcript_assert(&t, Predicate::NoPlaintextWindows));

    // a client that ships one window in the clear
    let leak = serde_json::json!({ "key_id": "k1", "region": "US", "hashes": [], "note": windows.windows[7].payload });
    let resp = world
        .net
        .transport("leaky")
        .send(DB_NAME, Request::post_json("/screen", &leak).signed(&world.provider.credentials()))
        .unwrap();
    assert!(resp.status < 500);
    let t = Transcript {
        records: world.net.take_transcript().into_iter().map(TranscriptRecord::from).collect(),
        secrets,
    };
    assert!(!transcript_assert(&t, Predicate::NoPlaintextWindows));
    assert_eq!(violations(&t, Predicate::NoPlaintextWindows).len(), 1);
}
