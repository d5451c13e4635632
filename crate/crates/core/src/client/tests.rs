use std::collections::BTreeSet;

use super::*;
use crate::builder::{BuildConfig, HazardKind, HazardSource};
use crate::group::TestGroup61;
use crate::keyserver::LimiterConfig;
use crate::simnet::{random_dna, World};
use crate::builder::MIN_ENTROPY;
use crate::windows::{shannon_entropy, translate};

type G = TestGroup61;

fn world_with(hazard: &str) -> World<G> {
    let mut w = World::<G>::new(11, 3, 2, LimiterConfig::default()).unwrap();
    w.install_hazards(&[HazardSource::new("HZ", hazard, HazardKind::Virus, &["US"])], &BuildConfig::default())
        .unwrap();
    w
}

fn hazard_seq() -> String {
    random_dna(&mut ChaCha20Rng::seed_from_u64(77), 300)
}

type Coord = (WindowKind, u32, Strand, Option<u8>);

fn peptides(seq: &str) -> Vec<(u8, u32, String)> {
    let mut out = Vec::new();
    for frame in 0..3usize {
        if seq.len() < frame + 3 {
            continue;
        }
        let usable = (seq.len() - frame) / 3 * 3;
        let p = translate(&seq[frame..frame + usable]).unwrap();
        for j in 0..p.len().saturating_sub(19) {
            out.push((frame as u8, (frame + 3 * j) as u32, p[j..j + 20].to_string()));
        }
    }
    out
}

/// Exact-substring oracle over the hazard's windows on both strands.
fn naive_matches(hazard: &str, query: &str) -> BTreeSet<Coord> {
    let rc = crate::windows::reverse_complement(hazard);
    let mut out = BTreeSet::new();
    for (kind, len) in [(WindowKind::Dna30, 30), (WindowKind::Dna42, 42)] {
        for o in 0..=query.len().saturating_sub(len) {
            if query.len() < len {
                break;
            }
            let w = &query[o..o + len];
            // the table drops low-complexity DNA windows
            if (hazard.contains(w) || rc.contains(w)) && shannon_entropy(w) >= MIN_ENTROPY {
                out.insert((kind, o as u32, Strand::Fwd, None));
            }
        }
    }
    let hz: BTreeSet<String> = peptides(hazard).into_iter().chain(peptides(&rc)).map(|(_, _, p)| p).collect();
    let qrc = crate::windows::reverse_complement(query);
    for (strand, s) in [(Strand::Fwd, query.to_string()), (Strand::Rev, qrc)] {
        for (frame, offset, p) in peptides(&s) {
            if hz.contains(&p) {
                out.insert((WindowKind::Aa20, offset, strand, Some(frame)));
            }
        }
    }
    out
}

fn coords(r: &ScreeningReport) -> BTreeSet<Coord> {
    r.matches.iter().map(|m| (m.kind, m.offset, m.strand, m.frame)).collect()
}

#[test]
fn hazard_fragment_matches_the_naive_oracle() {
    let hz = hazard_seq();
    let mut w = world_with(&hz);
    let s = w.screener("US", QueryMode::Provider);
    let flank = random_dna(&mut ChaCha20Rng::seed_from_u64(5), 60);
    let query = format!("{}{}{}", flank, &hz[40..200], flank);
    let r = s.screen_records(&[SequenceRecord::new("q", query.clone())]).unwrap();
    assert_eq!(r.decision, Decision::Denied);
    assert_eq!(r.exit_code(), 3);
    assert_eq!(coords(&r), naive_matches(&hz, &query));
    assert!(r.matches.iter().all(|m| m.accession == "HZ" && m.record == "q"));
    // every coordinate is a window the client emitted
    let emitted: BTreeSet<Coord> = query_windows(0, &SequenceRecord::new("q", query.clone()), QueryMode::Provider)
        .windows
        .iter()
        .map(|w| (w.kind, w.origin.offset, w.origin.strand, w.origin.frame))
        .collect();
    assert!(coords(&r).is_subset(&emitted));
    let offsets: Vec<(u32, u32)> = r.matches.iter().map(|m| (m.record_index, m.offset)).collect();
    let mut sorted = offsets.clone();
    sorted.sort();
    assert_eq!(offsets, sorted);

    let rc = crate::windows::reverse_complement(&hz[100..250]);
    let r = s.screen_records(&[SequenceRecord::new("rc", rc.clone())]).unwrap();
    assert_eq!(r.decision, Decision::Denied);
    assert_eq!(coords(&r), naive_matches(&hz, &rc));
}

#[test]
fn per_record_verdicts_and_rendering() {
    let hz = hazard_seq();
    let mut w = world_with(&hz);
    let s = w.screener("US", QueryMode::Provider);
    let clean = random_dna(&mut ChaCha20Rng::seed_from_u64(6), 200);
    let r = s.screen_records(&[SequenceRecord::new("clean", clean.clone())]).unwrap();
    assert_eq!(r.decision, Decision::Accepted);
    let text = String::from_utf8(render_report(&r, OutputFormat::Text)).unwrap();
    assert_eq!(text, format!("accepted ({} windows, db v1)\n", r.windows));

    let records = vec![
        SequenceRecord::new("clean", clean),
        SequenceRecord::new("bad", hz[0..42].to_string()),
    ];
    let r = s.screen_records(&records).unwrap();
    assert_eq!(r.records[0].decision, Decision::Accepted);
    assert_eq!(r.records[1].decision, Decision::Denied);
    let text = String::from_utf8(render_report(&r, OutputFormat::Text)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("denied ("));
    assert!(lines.contains(&"bad:0+ dna42 HZ wild-type"), "{text}");
    let back = parse_report(&render_report(&r, OutputFormat::Json)).unwrap();
    assert_eq!(back, r);
}

#[test]
fn idempotent_and_batch_transparent() {
    let hz = hazard_seq();
    let mut w = world_with(&hz);
    let query = format!("{}{}", &hz[10..130], random_dna(&mut ChaCha20Rng::seed_from_u64(9), 80));
    let rec = [SequenceRecord::new("q", query)];
    let a = w.screener("US", QueryMode::Provider).screen_records(&rec).unwrap();
    let b = w.screener("US", QueryMode::Provider).screen_records(&rec).unwrap();
    assert!(a.same_outcome(&b));
    assert_eq!(a.receipt.count, b.receipt.count);
    assert_eq!(a.receipt.requester, b.receipt.requester);
    let db = RemoteHashDb::new(crate::simnet::DB_NAME, w.net.transport("p"), w.provider.credentials());
    let tiny = Screener::new(w.doprf_client(&w.provider.clone(), "p").with_batch_size(1), db, "US", QueryMode::Provider)
        .screen_records(&rec)
        .unwrap();
    assert!(tiny.same_outcome(&a));
}

#[test]
fn errors_and_exit_codes() {
    let mut w = world_with(&hazard_seq());
    let s = w.screener("US", QueryMode::Provider);
    let e = s.screen_fasta(b"").unwrap_err();
    assert_eq!(e, ClientError::EmptyInput);
    assert_eq!(e.exit_code(), 4);
    let e = s.screen_fasta(b">x\nAC#GT\n").unwrap_err();
    assert!(matches!(e, ClientError::Parse(_)));
    assert_eq!(e.exit_code(), 4);
    w.kill(1);
    w.kill(2);
    let e = s.screen_fasta(&format!(">x\n{}\n", "ACGT".repeat(20)).into_bytes()).unwrap_err();
    assert!(matches!(e, ClientError::QuorumUnavailable(_)));
    w.revive(1);
    w.revive(2);
    w.net.kill(crate::simnet::DB_NAME);
    let e = s.screen_fasta(&format!(">x\n{}\n", "ACGT".repeat(20)).into_bytes()).unwrap_err();
    assert!(matches!(e, ClientError::DatabaseUnreachable(_)));
    let codes: BTreeSet<i32> = [
        ClientError::EmptyInput,
        ClientError::QuorumUnavailable(String::new()),
        ClientError::DatabaseUnreachable(String::new()),
        ClientError::DatabaseRejected { status: 400, code: String::new(), message: String::new() },
        ClientError::Keyserver(DoprfError::MalformedPoint),
        ClientError::Config(String::new()),
    ]
    .iter()
    .map(ClientError::exit_code)
    .collect();
    assert_eq!(codes.len(), 6);
    assert!(codes.iter().all(|c| *c > 3));
}

#[test]
fn receipts_are_stored() {
    let dir = std::env::temp_dir().join(format!("receipts-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("r.jsonl");
    let _ = std::fs::remove_file(&path);
    let mut w = world_with(&hazard_seq());
    let s = w.screener("US", QueryMode::Provider).with_receipt_store(ReceiptStore::open(&path).unwrap());
    let rec = [SequenceRecord::new("q", random_dna(&mut ChaCha20Rng::seed_from_u64(1), 100))];
    let a = s.screen_records(&rec).unwrap();
    w.clock.advance(5);
    s.screen_records(&rec).unwrap();
    let store = ReceiptStore::open(&path).unwrap();
    let got = store.for_order(&a.order_hash).unwrap();
    assert_eq!(got.len(), 2);
    assert_eq!(got[0].receipt, a.receipt);
    assert!(got[1].receipt.verify(&w.db.receipt_key()));
    assert_ne!(got[0].receipt.timestamp_ms, got[1].receipt.timestamp_ms);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn config_validation() {
    let cfg = |n: u32, t: u32, eps: &[u32], region: &str| ClientConfig {
        keyservers: eps.iter().map(|i| KeyserverEndpoint { index: *i, url: format!("http://ks{i}") }).collect(),
        database: "http://db".into(),
        n,
        t,
        mode: QueryMode::Provider,
        region: region.into(),
        certificate: "chain.json".into(),
        key: "key.json".into(),
        elt: None,
        batch_size: 4096,
        format: OutputFormat::Text,
        group: default_group(),
        receipts: None,
        subset: None,
        trust_root: None,
    };
    assert!(cfg(3, 2, &[1, 2, 3], "US").validate().is_ok());
    assert!(cfg(3, 2, &[1, 2], "US").validate().is_err());
    assert!(cfg(3, 4, &[1, 2, 3], "US").validate().is_err());
    assert!(cfg(3, 2, &[1, 2, 3], " ").validate().is_err());
    assert!(cfg(3, 2, &[1, 1, 3], "US").validate().is_err());
    let json = r#"{"keyservers":[{"index":1,"url":"u"}],"database":"d","n":1,"t":1,"region":"US","certificate":"c","key":"k"}"#;
    let parsed: ClientConfig = serde_json::from_str(json).unwrap();
    assert_eq!(parsed.batch_size, DEFAULT_BATCH_SIZE);
    assert_eq!(parsed.group, "ristretto255");
}

#[test]
fn digests_are_normalized() {
    assert_eq!(sequence_digest("acgu"), sequence_digest("ACGT"));
    assert_eq!(sequence_digest("ACGT").len(), 64);
}
