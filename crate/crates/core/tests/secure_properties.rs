use fpp_core::secure::{self, FixedPointVector, MaskingSession};
use fpp_core::{seed, ParamVector};
use proptest::prelude::*;
use rand::Rng;

fn random_vec(len: usize, seed: u64, scale: f64) -> ParamVector {
    let mut rng = seed::rng(seed);
    ParamVector::new((0..len).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect())
}

fn session_shares(ids: &[u64], plains: &[ParamVector], round: u64, master: u64) -> (MaskingSession, Vec<FixedPointVector>) {
    let s = MaskingSession::new(ids, plains[0].len(), round, master).unwrap();
    // Shares in ascending id order; `ids` may be in any order.
    let mut pairs: Vec<(u64, &ParamVector)> = ids.iter().copied().zip(plains).collect();
    pairs.sort_by_key(|p| p.0);
    let shares = pairs.iter().map(|(id, p)| s.mask(*id, p).unwrap()).collect();
    (s, shares)
}

/// Exact integer sum of encoded plains, computed in i128 without wrapping.
fn encoded_sum(plains: &[ParamVector]) -> Vec<i128> {
    let len = plains[0].len();
    let mut out = vec![0i128; len];
    for p in plains {
        for (o, v) in out.iter_mut().zip(secure::encode(p).unwrap().as_slice()) {
            *o += v;
        }
    }
    out
}

#[test]
fn masked_sum_is_exact() {
    for n in [1usize, 2, 6, 12] {
        for len in [1usize, 1000] {
            let ids: Vec<u64> = (0..n as u64).map(|i| 3 * i + 1).rev().collect();
            let plains: Vec<ParamVector> = (0..n).map(|i| random_vec(len, (n * 1000 + len + i) as u64, 50.0)).collect();
            let (_, shares) = session_shares(&ids, &plains, 17, 99);
            let sum = FixedPointVector::wrapping_sum(len, &shares);
            assert_eq!(sum.as_slice(), &encoded_sum(&plains)[..], "n={n} len={len}");
        }
    }
}

#[test]
fn single_participant_share_is_the_encoding() {
    let p = random_vec(10, 1, 3.0);
    let s = MaskingSession::new(&[42], 10, 0, 5).unwrap();
    assert_eq!(s.mask(42, &p).unwrap(), secure::encode(&p).unwrap());
}

#[test]
fn masked_mean_matches_plain_mean() {
    let n = 6;
    let plains: Vec<ParamVector> = (0..n).map(|i| random_vec(1000, 500 + i, 10.0)).collect();
    let ids: Vec<u64> = (0..n).collect();
    let (s, shares) = session_shares(&ids, &plains, 3, 4);
    let got = s.aggregate_masked(&shares).unwrap();
    let tol = 6.0 * 2f64.powi(-40);
    for i in 0..1000 {
        let oracle: f64 = plains.iter().map(|p| p.as_slice()[i]).sum::<f64>() / n as f64;
        assert!((got.as_slice()[i] - oracle).abs() <= tol, "coord {i}");
    }
}

#[test]
fn unit_basis_mean() {
    let plains: Vec<ParamVector> = (0..3)
        .map(|i| {
            let mut v = vec![0.0; 3];
            v[i] = 1.0;
            ParamVector::new(v)
        })
        .collect();
    let (s, shares) = session_shares(&[7, 8, 9], &plains, 0, 0);
    for v in s.aggregate_masked(&shares).unwrap().as_slice() {
        assert!((v - 1.0 / 3.0).abs() <= 2f64.powi(-40));
    }
}

#[test]
fn a_single_share_hides_its_value() {
    let plain = ParamVector::new(vec![0.75]);
    let other = ParamVector::new(vec![-0.25]);
    let draws: Vec<f64> = (0..10_000u64)
        .map(|master| {
            let s = MaskingSession::new(&[1, 2], 1, 0, master).unwrap();
            s.mask(1, &plain).unwrap().as_slice()[0] as f64 / 2f64.powi(40)
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    assert!(var >= 1e6 * 0.75, "variance {var}");
    // The same sessions still cancel.
    let s = MaskingSession::new(&[1, 2], 1, 0, 3).unwrap();
    let shares = [s.mask(1, &plain).unwrap(), s.mask(2, &other).unwrap()];
    assert!((s.aggregate_masked(&shares).unwrap().as_slice()[0] - 0.25).abs() <= 2f64.powi(-40));
}

#[test]
fn session_errors() {
    assert!(MaskingSession::new(&[1, 1], 4, 0, 0).is_err());
    assert!(MaskingSession::new(&[], 4, 0, 0).is_err());
    let s = MaskingSession::new(&[1, 2, 3], 4, 0, 0).unwrap();
    assert_eq!(s.pair_seeds().len(), 3);
    assert!(s.mask(9, &ParamVector::zeros(4)).is_err());
    assert!(s.mask(1, &ParamVector::zeros(5)).is_err());
    assert!(secure::encode(&ParamVector::new(vec![2f64.powi(20)])).is_err());
    assert!(secure::encode(&ParamVector::new(vec![f64::NAN])).is_err());
    let share = s.mask(1, &ParamVector::zeros(4)).unwrap();
    assert!(s.aggregate_masked(&[share.clone(), share]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sum_preserved_for_any_group(n in 1usize..=12, len in 1usize..40, master in any::<u64>(), round in any::<u64>(), scale in 1e-6f64..1e5) {
        let ids: Vec<u64> = (0..n as u64).map(|i| i.wrapping_mul(0x9E37_79B9) ^ master).collect();
        prop_assume!({ let mut d = ids.clone(); d.sort_unstable(); d.dedup(); d.len() == n });
        let plains: Vec<ParamVector> = (0..n).map(|i| random_vec(len, master ^ i as u64, scale)).collect();
        let (s, shares) = session_shares(&ids, &plains, round, master);
        let sum = FixedPointVector::wrapping_sum(len, &shares);
        prop_assert_eq!(sum.as_slice(), &encoded_sum(&plains)[..]);
        let (_, again) = session_shares(&ids, &plains, round, master);
        prop_assert_eq!(&shares, &again);
        prop_assert_eq!(s.pair_seed(ids[0], ids[n - 1]), s.pair_seed(ids[n - 1], ids[0]));
    }

    #[test]
    fn encoding_roundtrip_error(v in -1048575.9f64..1048575.9) {
        let back = secure::decode(&secure::encode(&ParamVector::new(vec![v])).unwrap());
        prop_assert!((back.as_slice()[0] - v).abs() <= 2f64.powi(-40));
    }
}
