use dnascreen_core::doprf::{blind, direct_eval, evaluate_share, unblind_combine, EvaluatedShare};
use dnascreen_core::group::{Group, Ristretto, Scalar, TestGroup10007, TestGroup61};
use dnascreen_core::sharing::{
    distributed_keygen, interpolate, proactive_reshare, reconstruct, share, KeyId, LocalParty, SessionId, SharingConfig,
};
use proptest::prelude::*;
use proptest::sample::subsequence;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn config() -> impl Strategy<Value = (u32, u32)> {
    (1u32..=7).prop_flat_map(|n| (Just(n), 1..=n))
}

fn evaluate<G: Group>(x: &[u8], shares: &[(u32, G::Scalar)], set: &[u32], beta: &G::Scalar) -> G {
    let blinded = blind::<G>(x, beta).unwrap();
    let responses: Vec<EvaluatedShare<G>> = set
        .iter()
        .map(|i| {
            let k_i = shares.iter().find(|(j, _)| j == i).unwrap().1;
            evaluate_share(&blinded, set, *i, &k_i).unwrap()
        })
        .collect();
    unblind_combine(&responses, beta, set.len()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_t_shares_reconstruct(seed: u64, (n, t) in config(), pick in any::<prop::sample::Index>()) {
        type S = <TestGroup61 as Group>::Scalar;
        let cfg = SharingConfig::new(n, t).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let secret = S::random(&mut rng);
        let shares = share(secret, &cfg, &KeyId::new("k"), 0, &mut rng).unwrap();
        let start = pick.index((n - t + 1) as usize);
        prop_assert_eq!(reconstruct(&shares[start..start + t as usize], &cfg).unwrap(), secret);
    }

    #[test]
    fn blinded_evaluation_matches_direct(
        seed: u64,
        x in prop::collection::vec(any::<u8>(), 1..64),
        set in subsequence((1u32..=5).collect::<Vec<_>>(), 3),
    ) {
        type G = TestGroup61;
        let cfg = SharingConfig::new(5, 3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let k = <G as Group>::Scalar::random_nonzero(&mut rng);
        let shares: Vec<_> = share(k, &cfg, &KeyId::new("k"), 0, &mut rng)
            .unwrap()
            .into_iter()
            .map(|s| (s.server_index, s.value))
            .collect();
        let beta = <G as Group>::Scalar::random_nonzero(&mut rng);
        prop_assert_eq!(evaluate::<G>(&x, &shares, &set, &beta), direct_eval::<G>(&x, &k).unwrap());
    }

    #[test]
    fn output_independent_of_blind(seed: u64, x in prop::collection::vec(any::<u8>(), 1..32)) {
        type G = TestGroup10007;
        let cfg = SharingConfig::new(3, 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let k = <G as Group>::Scalar::random_nonzero(&mut rng);
        let shares: Vec<_> = share(k, &cfg, &KeyId::new("k"), 0, &mut rng)
            .unwrap()
            .into_iter()
            .map(|s| (s.server_index, s.value))
            .collect();
        let b1 = <G as Group>::Scalar::random_nonzero(&mut rng);
        let b2 = <G as Group>::Scalar::random_nonzero(&mut rng);
        prop_assert_eq!(evaluate::<G>(&x, &shares, &[1, 3], &b1), evaluate::<G>(&x, &shares, &[2, 3], &b2));
    }

    #[test]
    fn reshare_preserves_key_and_changes_shares(seed: u64, (n, t) in (3u32..=6).prop_flat_map(|n| (Just(n), 2..n))) {
        type S = <TestGroup61 as Group>::Scalar;
        let cfg = SharingConfig::new(n, t).unwrap();
        let parties: Vec<LocalParty<S>> = (1..=n).map(|i| LocalParty::new(i, seed ^ u64::from(i))).collect();
        distributed_keygen(&parties, &cfg, SessionId::new("dkg"), KeyId::new("k")).unwrap();
        let before: Vec<(u32, S)> = parties.iter().map(|p| p.primary().unwrap()).map(|s| (s.server_index, s.value)).collect();
        let k = interpolate(&before[..t as usize], 0).unwrap();
        let outcome = proactive_reshare(&parties, &cfg, SessionId::new("r1")).unwrap();
        prop_assert_eq!(outcome.epoch, 1);
        let after: Vec<(u32, S)> = parties.iter().map(|p| p.primary().unwrap()).map(|s| (s.server_index, s.value)).collect();
        prop_assert_eq!(interpolate(&after[after.len() - t as usize..], 0).unwrap(), k);
        prop_assert!(before.iter().zip(&after).any(|(a, b)| a.1 != b.1));
    }

    #[test]
    fn exponentiation_commutes(seed: u64, x in prop::collection::vec(any::<u8>(), 0..48)) {
        type G = Ristretto;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let a = <G as Group>::Scalar::random(&mut rng);
        let b = <G as Group>::Scalar::random(&mut rng);
        let m = G::map_to_group(&x);
        prop_assert_eq!(m.exp(&a).exp(&b), m.exp(&b).exp(&a));
        prop_assert_eq!(m.exp(&(a * b)), m.exp(&a).exp(&b));
        prop_assert_eq!(G::decode(&m.encode()).unwrap(), m);
    }
}
