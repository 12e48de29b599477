use proptest::prelude::*;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spotkd::ecc::{
    crc, effective_key, reconcile, remaining_search_exponent, CrcConfig, GeneratorPolynomial, Remainder,
    SyndromeDecoder, DEFAULT_KEY_LEN,
};
use spotkd::Error;

/// Schoolbook GF(2) long division of `m(x) * x^n` by the full generator
/// `g`, both given most-significant coefficient first.
fn long_division(m: &[u8], g: &[u8]) -> Vec<u8> {
    let n = g.len() - 1;
    let mut work: Vec<u8> = m.iter().copied().chain(std::iter::repeat_n(0, n)).collect();
    for i in 0..m.len() {
        if work[i] == 1 {
            for (j, &c) in g.iter().enumerate() {
                work[i + j] ^= c;
            }
        }
    }
    work[m.len()..].to_vec()
}

fn coeffs(full: u128, degree: u32) -> Vec<u8> {
    (0..=degree).rev().map(|k| ((full >> k) & 1) as u8).collect()
}

fn random_bits(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

fn toy(budget: usize) -> CrcConfig {
    CrcConfig::new(GeneratorPolynomial::from_full(0x139).unwrap(), budget, 16).unwrap()
}

#[test]
fn textbook_division() {
    let g = GeneratorPolynomial::from_full(0b1011).unwrap();
    let cfg = CrcConfig::new(g, 0, 4).unwrap();
    let r = crc(&[1, 1, 0, 1], &cfg).unwrap();
    assert_eq!(r.bits(), vec![0, 0, 1]);
    assert_eq!(long_division(&[1, 1, 0, 1], &[1, 0, 1, 1]), vec![0, 0, 1]);
    assert_eq!(crc(&[0; 4], &cfg).unwrap().value(), 0);
}

#[test]
fn matches_long_division_on_default_polynomial() {
    let cfg = CrcConfig::default();
    assert_eq!(cfg.poly.full(), 0x17A3_7D8B);
    let g = coeffs(cfg.poly.full(), cfg.degree());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let m = random_bits(&mut rng, cfg.key_len);
        assert_eq!(crc(&m, &cfg).unwrap().bits(), long_division(&m, &g));
    }
}

#[test]
fn koopman_forms_agree() {
    let toy = GeneratorPolynomial::from_koopman(0x9C).unwrap();
    assert_eq!(toy.full(), 0x139);
    assert_eq!(toy.normal(), 0x39);
    assert_eq!(toy.degree(), 8);
    let default = GeneratorPolynomial::parse_koopman("0xBD1BEC5").unwrap();
    assert_eq!(default.degree(), 28);
    assert_eq!(default.koopman(), 0xBD1_BEC5);
    assert_eq!(default, GeneratorPolynomial::from_normal(0x7A3_7D8B, 28).unwrap());
    assert!(GeneratorPolynomial::from_full(0).is_err());
}

#[test]
fn length_and_remainder_errors() {
    let cfg = toy(1);
    assert!(matches!(
        crc(&[0; 15], &cfg),
        Err(Error::LengthMismatch {
            expected: 16,
            actual: 15
        })
    ));
    assert!(matches!(
        effective_key(&[0; 17], &cfg),
        Err(Error::LengthMismatch { .. })
    ));
    let dec = SyndromeDecoder::new(cfg).unwrap();
    let wrong_degree = Remainder::new(0, 7).unwrap();
    assert!(dec.reconcile(&[0; 16], &wrong_degree).is_err());
    assert!(Remainder::from_hex("zz", 8).is_err());
    assert!(Remainder::new(0x1ff, 8).is_err());
}

#[test]
fn effective_length_bookkeeping() {
    let cfg = CrcConfig::default();
    assert_eq!(cfg.key_len, DEFAULT_KEY_LEN);
    assert_eq!(cfg.effective_len(), 256);
    assert_eq!(effective_key(&vec![1; 284], &cfg).unwrap().len(), 256);
    assert_eq!(remaining_search_exponent(256, &cfg), 228);

    let identity = CrcConfig::new(GeneratorPolynomial::one(), 0, 12).unwrap();
    let m: Vec<u8> = (0..12).map(|i| (i % 3 == 0) as u8).collect();
    assert_eq!(effective_key(&m, &identity).unwrap(), m);
}

/// Every toy error pattern of weight <= 2 is recovered exactly.
#[test]
fn toy_budget_two_recovers_all_light_errors() {
    let cfg = toy(2);
    let dec = SyndromeDecoder::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut patterns: Vec<Vec<usize>> = vec![vec![]];
    patterns.extend((0..16).map(|i| vec![i]));
    patterns.extend((0..16).flat_map(|i| (i + 1..16).map(move |j| vec![i, j])));
    assert_eq!(patterns.len(), 137);
    for e in &patterns {
        for _ in 0..64 {
            let user = random_bits(&mut rng, 16);
            let mut server = user.clone();
            for &i in e {
                server[i] ^= 1;
            }
            let r = crc(&user, &cfg).unwrap();
            let got = dec.reconcile(&server, &r).unwrap();
            assert_eq!(got.key, user, "e = {e:?}");
            assert_eq!(&got.flipped, e);
        }
    }
}

/// The toy code has minimum distance 5. With budget 1 no weight-2 error can
/// be mistaken for a weight-1 one, so every such error fails outright.
#[test]
fn toy_budget_one_never_returns_a_wrong_key() {
    let cfg = toy(1);
    let dec = SyndromeDecoder::new(cfg).unwrap();

    // Minimum distance by exhaustive enumeration of all nonzero codewords.
    let gf = coeffs(cfg.poly.full(), 8);
    let d = (1u32..1 << 16)
        .filter(|&w| {
            let m: Vec<u8> = (0..16).map(|i| ((w >> (15 - i)) & 1) as u8).collect();
            long_division(&m, &gf).iter().all(|&b| b == 0)
        })
        .map(|w| w.count_ones())
        .min()
        .unwrap();
    assert_eq!(d, 5);

    for m in (0u32..1 << 16).step_by(97) {
        let user: Vec<u8> = (0..16).map(|i| ((m >> i) & 1) as u8).collect();
        let r = crc(&user, &cfg).unwrap();
        for i in 0..16 {
            for j in i + 1..16 {
                let mut server = user.clone();
                server[i] ^= 1;
                server[j] ^= 1;
                match dec.reconcile(&server, &r) {
                    Err(Error::ReconciliationFailed { budget: 1 }) => {}
                    other => panic!("({i}, {j}): {other:?}"),
                }
            }
        }
    }
}

/// Decoder output against a brute-force scan of all 2^16 patterns: lowest
/// weight first, then lexicographically smallest index list.
#[test]
fn toy_search_matches_exhaustive_scan() {
    let cfg = toy(8);
    let dec = SyndromeDecoder::new(cfg).unwrap();
    let mut best: Vec<Option<Vec<usize>>> = vec![None; 256];
    for w in 0u32..1 << 16 {
        let e: Vec<usize> = (0..16).filter(|i| (w >> i) & 1 == 1).collect();
        let mut m = vec![0u8; 16];
        for &i in &e {
            m[i] = 1;
        }
        let s = crc(&m, &cfg).unwrap().value() as usize;
        let better = match &best[s] {
            None => true,
            Some(b) => (e.len(), &e) < (b.len(), b),
        };
        if better {
            best[s] = Some(e);
        }
    }
    for (s, want) in best.iter().enumerate() {
        let want = want.as_ref().unwrap();
        let (got, _) = dec.search(s as u64).unwrap();
        assert_eq!(&got, want, "syndrome {s:#x}");
    }
}

#[test]
fn default_code_recovers_sampled_light_errors() {
    let cfg = CrcConfig::default();
    let dec = SyndromeDecoder::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..300 {
        let user = random_bits(&mut rng, cfg.key_len);
        let w = trial % 4;
        let mut e = sample(&mut rng, cfg.key_len, w).into_vec();
        e.sort_unstable();
        let mut server = user.clone();
        for &i in &e {
            server[i] ^= 1;
        }
        let r = crc(&user, &cfg).unwrap();
        let got = dec.reconcile(&server, &r).unwrap();
        assert_eq!(got.key, user, "trial {trial}, e = {e:?}");
        assert_eq!(got.flipped, e);
    }
    // Heavier errors go through the split search; the result always
    // satisfies the remainder and is no heavier than the true error.
    for w in 4..=5 {
        let user = random_bits(&mut rng, cfg.key_len);
        let mut server = user.clone();
        for i in sample(&mut rng, cfg.key_len, w) {
            server[i] ^= 1;
        }
        let r = crc(&user, &cfg).unwrap();
        let got = dec.reconcile(&server, &r).unwrap();
        assert_eq!(crc(&got.key, &cfg).unwrap(), r);
        assert!(got.weight() <= w);
    }
    assert_eq!(
        reconcile(&user_zero(), &crc(&user_zero(), &cfg).unwrap(), &cfg).unwrap(),
        user_zero()
    );
}

fn user_zero() -> Vec<u8> {
    vec![0; DEFAULT_KEY_LEN]
}

#[test]
fn op_cap_is_enforced() {
    // Few light patterns against 2^28 syndromes: most need the split search.
    let cfg = CrcConfig::new(CrcConfig::default().poly, 8, 40)
        .unwrap()
        .with_op_cap(10);
    let dec = SyndromeDecoder::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut capped = 0;
    for _ in 0..50 {
        let s = rng.random_range(1..1u64 << 28);
        match dec.search(s) {
            Ok((e, ops)) => {
                assert!(e.len() <= 3 && ops <= 10);
            }
            Err(Error::SearchBudgetExceeded { cap: 10 }) => capped += 1,
            Err(other) => panic!("{other}"),
        }
    }
    assert!(capped > 0);
}

proptest! {
    #[test]
    fn crc_is_linear(a in prop::collection::vec(0u8..2, 284), b in prop::collection::vec(0u8..2, 284)) {
        let cfg = CrcConfig::default();
        let ab: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
        prop_assert_eq!(
            crc(&ab, &cfg).unwrap().value(),
            crc(&a, &cfg).unwrap().value() ^ crc(&b, &cfg).unwrap().value()
        );
    }

    #[test]
    fn remainder_hex_round_trips(v in 0u64..1 << 28) {
        let r = Remainder::new(v, 28).unwrap();
        prop_assert_eq!(Remainder::from_hex(&r.to_hex(), 28).unwrap(), r);
    }

    #[test]
    fn toy_reconcile_never_disagrees_with_remainder(
        user in prop::collection::vec(0u8..2, 16),
        flips in prop::collection::vec(0usize..16, 0..6),
    ) {
        let cfg = toy(2);
        let mut server = user.clone();
        for i in flips {
            server[i] ^= 1;
        }
        let r = crc(&user, &cfg).unwrap();
        match reconcile(&server, &r, &cfg) {
            Ok(key) => prop_assert_eq!(crc(&key, &cfg).unwrap(), r),
            Err(e) => prop_assert!(matches!(e, Error::ReconciliationFailed { .. }), "{}", e),
        }
    }
}
