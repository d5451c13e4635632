use std::sync::Arc;

use super::*;
use crate::certs::{DevPki, Identity};
use crate::clock::VirtualClock;
use crate::doprf::{direct_eval, DoprfClient, HandleError, KeyserverHandle, SubsetPolicy};
use crate::group::{hash_to_group, TestGroup61};
use crate::sharing::{distributed_keygen, proactive_reshare, reconstruct, run_keygen, run_product, ShareSlot};
use crate::transport::{InMemoryNetwork, Transport};

type G = TestGroup61;
type S = <G as Group>::Scalar;

struct Cluster {
    net: Arc<InMemoryNetwork>,
    servers: Vec<Arc<Keyserver<G>>>,
    clock: Arc<VirtualClock>,
    infra: Identity,
    provider: Identity,
    cfg: SharingConfig,
}

impl Cluster {
    fn new(n: u32, t: u32, limiter: LimiterConfig) -> Self {
        let mut pki = DevPki::new(7, 0, u64::MAX / 2);
        let clock = Arc::new(VirtualClock::new(1_000_000));
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let net = InMemoryNetwork::new();
        let servers: Vec<Arc<Keyserver<G>>> = provision(n, t, limiter, &mut rng)
            .into_iter()
            .map(|(cfg, key)| {
                let i = cfg.index;
                Arc::new(Keyserver::new(cfg, key, pki.trust(), clock.clone(), 100 + i as u64).unwrap())
            })
            .collect();
        for s in &servers {
            net.register(&format!("ks{}", s.index()), s.clone());
        }
        Self {
            net,
            servers,
            clock,
            infra: pki.identity("coordinator", Role::Infrastructure),
            provider: pki.identity("provider", Role::Provider),
            cfg: SharingConfig::new(n, t).unwrap(),
        }
    }

    fn remotes(&self, who: &Identity) -> Vec<RemoteKeyserver<G>> {
        let transport: Arc<dyn Transport> = self.net.transport(&who.leaf().body.subject);
        self.servers
            .iter()
            .map(|s| RemoteKeyserver::new(s.index(), &format!("ks{}", s.index()), transport.clone(), who.credentials()))
            .collect()
    }

    fn handles(&self, who: &Identity) -> Vec<Arc<dyn KeyserverHandle<G>>> {
        self.remotes(who)
            .into_iter()
            .map(|r| Arc::new(r) as Arc<dyn KeyserverHandle<G>>)
            .collect()
    }

    fn captured(&self) -> Vec<KeyShare<S>> {
        self.servers.iter().filter_map(|s| s.capture_share()).collect()
    }

    fn key(&self) -> S {
        reconstruct(&self.captured()[..self.cfg.t as usize], &self.cfg).unwrap()
    }
}

#[test]
fn keygen_and_eval_over_the_network() {
    let c = Cluster::new(5, 3, LimiterConfig::default());
    let admin = c.remotes(&c.infra);
    distributed_keygen(&admin, &c.cfg, SessionId::new("dkg"), KeyId::new("k1")).unwrap();
    let k = c.key();
    let client = DoprfClient::new(c.handles(&c.provider), c.cfg).with_policy(SubsetPolicy::LowestIndex).sequential();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let inputs: Vec<Vec<u8>> = (0..50u32).map(|i| format!("dna30:{i}").into_bytes()).collect();
    let refs: Vec<&[u8]> = inputs.iter().map(|v| v.as_slice()).collect();
    let out = client.eval_inputs(&refs, &mut rng).unwrap();
    for (x, y) in refs.iter().zip(&out.points) {
        assert_eq!(*y, direct_eval::<G>(x, &k).unwrap());
    }
    // no share value ever crossed the wire
    let shares = c.captured();
    for entry in c.net.transcript() {
        for s in &shares {
            let raw = s.value.to_bytes();
            assert!(!contains(&entry.payload, &raw));
            assert!(!contains(&entry.payload, crate::wire::encode_scalar(&s.value).as_bytes()));
            assert!(!contains(&entry.payload, hex::encode(raw).as_bytes()));
        }
    }
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}

#[test]
fn rate_limit_examples() {
    let c = Cluster::new(3, 2, LimiterConfig { capacity: 100, refill_per_sec: 100 });
    distributed_keygen(&c.servers, &c.cfg, SessionId::new("dkg"), KeyId::new("k1")).unwrap();
    let s = &c.servers[0];
    let req = |n: usize| EvalRequest {
        key_id: KeyId::new("k1"),
        epoch: 0,
        set: vec![1, 2],
        points: vec![hash_to_group::<G>(b"x").unwrap(); n],
    };
    assert!(matches!(s.handle_eval(&req(101), "a", false), Err(KeyserverError::RateLimited { .. })));
    assert_eq!(s.handle_eval(&req(50), "a", false).unwrap().len(), 50);
    c.clock.advance(400);
    assert_eq!(s.handle_eval(&req(50), "a", false).unwrap().len(), 50);
    // another client has its own bucket
    assert_eq!(s.handle_eval(&req(100), "b", false).unwrap().len(), 100);
    // and the HTTP surface carries the retry hint
    let handles = c.handles(&c.provider);
    let err = handles[0].evaluate(&req(101)).unwrap_err();
    assert!(matches!(err, HandleError::RateLimited { retry_after_ms } if retry_after_ms > 0));
    // a client told to back off by the quorum says so instead of reporting it unavailable
    let client = DoprfClient::new(c.handles(&c.provider), c.cfg).with_policy(SubsetPolicy::LowestIndex);
    let many: Vec<G> = vec![hash_to_group::<G>(b"y").unwrap(); 150];
    let err = client
        .eval_elements(&many, crate::doprf::KeyTarget::Primary, &mut ChaCha20Rng::seed_from_u64(3))
        .unwrap_err();
    assert!(matches!(err, DoprfError::RateLimited { retry_after_ms } if retry_after_ms > 0), "{err:?}");
}

#[test]
fn eval_rejections() {
    let c = Cluster::new(3, 2, LimiterConfig::default());
    distributed_keygen(&c.servers, &c.cfg, SessionId::new("dkg"), KeyId::new("k1")).unwrap();
    let s = &c.servers[2];
    let p = hash_to_group::<G>(b"x").unwrap();
    let mk = |set: Vec<u32>, epoch, points| EvalRequest {
        key_id: KeyId::new("k1"),
        epoch,
        set,
        points,
    };
    assert_eq!(s.handle_eval(&mk(vec![1, 2], 0, vec![p]), "a", false), Err(KeyserverError::NotInEvaluationSet { index: 3 }));
    assert_eq!(s.handle_eval(&mk(vec![1, 3], 1, vec![p]), "a", false), Err(KeyserverError::EpochMismatch { server_epoch: 0 }));
    assert_eq!(s.handle_eval(&mk(vec![1, 3], 0, vec![G::identity()]), "a", false), Err(KeyserverError::MalformedPoint));
    // malformed encodings over HTTP
    let r = Request::post_json(
        "/eval",
        &EvalWire {
            key_id: KeyId::new("k1"),
            epoch: 0,
            set: vec![1, 3],
            points: vec![crate::wire::b64_encode(&[0xff; 32])],
        },
    )
    .signed(&c.provider.credentials());
    let resp = s.handle(&r);
    assert_eq!(resp.status, 400);
    assert_eq!(resp.error_body().unwrap().error, "MalformedPoint");
    // unauthenticated and wrong-role callers
    let resp = s.handle(&Request::post("/eval", b"{}".to_vec()));
    assert_eq!(resp.status, 401);
    let resp = s.handle(&Request::post_json("/admin/round", &RoundEnvelope { to: 3, msg: RoundMsg::Status }).signed(&c.provider.credentials()));
    assert_eq!(resp.status, 403);
}

#[test]
fn stale_epoch_after_reshare() {
    let c = Cluster::new(5, 3, LimiterConfig::default());
    let admin = c.remotes(&c.infra);
    distributed_keygen(&admin, &c.cfg, SessionId::new("dkg"), KeyId::new("k1")).unwrap();
    let k = c.key();
    let old = EvalRequest {
        key_id: KeyId::new("k1"),
        epoch: 0,
        set: vec![1, 2, 3],
        points: vec![hash_to_group::<G>(b"w").unwrap()],
    };
    assert!(c.servers[0].handle_eval(&old, "a", false).is_ok());
    let outcome = proactive_reshare(&admin, &c.cfg, SessionId::new("r1")).unwrap();
    assert_eq!(outcome.dealers, vec![1, 2, 3]);
    assert_eq!(outcome.committed, vec![1, 2, 3, 4, 5]);
    assert!(c.captured().iter().all(|s| s.epoch == 1));
    assert_eq!(c.key(), k);
    assert_eq!(c.servers[0].handle_eval(&old, "a", false), Err(KeyserverError::EpochMismatch { server_epoch: 1 }));
}

#[test]
fn rotation_yields_product_key() {
    let c = Cluster::new(5, 3, LimiterConfig::default());
    let admin = c.remotes(&c.infra);
    distributed_keygen(&admin, &c.cfg, SessionId::new("dkg"), KeyId::new("k1")).unwrap();
    let k = c.key();
    run_keygen(&admin, &c.cfg, SessionId::new("delta"), KeyId::new("d1"), ShareSlot::Update, 0).unwrap();
    let deltas: Vec<KeyShare<S>> = c.servers.iter().filter_map(|s| s.capture_update_share()).collect();
    let delta = reconstruct(&deltas[..3], &c.cfg).unwrap();

    // the update key is only for infrastructure callers
    let upd = EvalRequest {
        key_id: KeyId::new("d1"),
        epoch: 0,
        set: vec![1, 2, 3],
        points: vec![hash_to_group::<G>(b"w").unwrap()],
    };
    assert_eq!(c.servers[0].handle_eval(&upd, "p", false), Err(KeyserverError::UpdateKeyRestricted));
    assert!(c.servers[0].handle_eval(&upd, "i", true).is_ok());

    let out = run_product(&admin, &c.cfg, SessionId::new("prod"), KeyId::new("k2")).unwrap();
    assert_eq!(out.epoch, 1);
    let after = c.captured();
    assert!(after.iter().all(|s| s.key_id == KeyId::new("k2") && s.epoch == 1));
    assert_eq!(c.key(), k * delta);
    assert!(c.servers.iter().all(|s| s.capture_update_share().is_none()));
}

#[test]
fn misaddressed_round_message() {
    let c = Cluster::new(3, 2, LimiterConfig::default());
    let env = RoundEnvelope {
        to: 2,
        msg: RoundMsg::Commit {
            session: SessionId::new("x"),
        },
    };
    assert!(matches!(c.servers[0].handle_round(&env), Err(KeyserverError::UnknownRound(_))));
    let env = RoundEnvelope {
        to: 1,
        msg: RoundMsg::Commit {
            session: SessionId::new("x"),
        },
    };
    assert!(matches!(c.servers[0].handle_round(&env), Err(KeyserverError::UnknownRound(_))));
}

#[test]
fn state_file_round_trip() {
    let dir = std::env::temp_dir().join(format!("ks-state-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("ks1.state");
    let _ = std::fs::remove_file(&path);
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let pki = DevPki::new(1, 0, 10);
    let clock: Arc<dyn Clock> = Arc::new(VirtualClock::new(0));
    let provisioned = provision(1, 1, LimiterConfig::default(), &mut rng);
    let (cfg, key) = provisioned[0].clone();
    let ks = Arc::new(
        Keyserver::<G>::new(cfg.clone(), key.clone(), pki.trust(), clock.clone(), 1)
            .unwrap()
            .with_state_file(&path)
            .unwrap(),
    );
    distributed_keygen(&[ks.clone()], &SharingConfig::new(1, 1).unwrap(), SessionId::new("s"), KeyId::new("k")).unwrap();
    let share = ks.capture_share().unwrap();
    let blob = std::fs::read(&path).unwrap();
    assert!(!contains(&blob, &share.value.to_bytes()));
    let again = Keyserver::<G>::new(cfg.clone(), key, pki.trust(), clock.clone(), 2)
        .unwrap()
        .with_state_file(&path)
        .unwrap();
    assert_eq!(again.capture_share(), Some(share));
    let wrong = Keyserver::<G>::new(cfg, TransportKey::generate(&mut rng), pki.trust(), clock, 3).unwrap();
    assert!(wrong.with_state_file(&path).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}
