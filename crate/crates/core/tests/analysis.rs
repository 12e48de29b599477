use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spotkd::analysis::{
    bit_mismatch_sweep, chip_bound, eavesdrop_attack, eavesdrop_study, eavesdrop_sweep, noise_failure_study,
    sampling_reduction, search_space, shannon_entropy, EavesdropRow, NoiseStudyConfig, StudySetup,
};
use spotkd::chipset::Chipset;
use spotkd::timer_model::{AdcConfig, ParamRanges};
use spotkd::Error;

/// Binary entropy through natural logs, as an independent evaluation.
fn entropy_ln(d: f64) -> f64 {
    let t = |p: f64| if p == 0.0 { 0.0 } else { -p * p.ln() };
    (t(d) + t(1.0 - d)) / std::f64::consts::LN_2
}

#[test]
fn entropy_values() {
    assert_eq!(shannon_entropy(0.0).unwrap(), 0.0);
    assert_eq!(shannon_entropy(1.0).unwrap(), 0.0);
    assert_eq!(shannon_entropy(0.5).unwrap(), 1.0);
    let h = shannon_entropy(0.25).unwrap();
    assert!((h - 0.811278).abs() < 5e-7, "{h}");
    assert!((h - entropy_ln(0.25)).abs() < 1e-15);
    for bad in [-1e-9, 1.0 + 1e-9, f64::NAN] {
        assert!(matches!(shannon_entropy(bad), Err(Error::EntropyDomain(_))));
    }
}

#[test]
fn search_space_constants() {
    let r = search_space(128, 63);
    assert_eq!(r.p_total, 516);
    assert_eq!(r.sp_exponent, 32508);
    assert_eq!(search_space(0, 63).sp_exponent, 252);
    assert_eq!(chip_bound(128, 63), 32507);
    assert_eq!(r.max_chips(), 32507);
    assert_eq!(sampling_reduction(128, 63, 0), 32508);
    assert_eq!(sampling_reduction(128, 63, 32508 - 2), 2);
    // At the largest permitted chip count the expected solution set still
    // holds two candidates; one more chip would leave exactly one.
    assert_eq!(sampling_reduction(128, 63, chip_bound(128, 63)), 1);
    for g in [0u64, 1, 7, 128, 1000] {
        for j in [0u128, 1, 100, 252 * (g as u128 + 1)] {
            assert_eq!(sampling_reduction(g, 63, j), 252 * (g as i128 + 1) - j as i128);
        }
    }
}

#[test]
fn attacker_synchronized_at_zero_wait() {
    let timers = ParamRanges::default().sample_many(2048, &mut ChaCha8Rng::seed_from_u64(1));
    let adc = AdcConfig::new(12, 1.0).unwrap();
    let mut user = Chipset::fabricate("u", timers.clone(), adc).unwrap();
    let mut eve = Chipset::fabricate("e", timers, adc).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let o = eavesdrop_attack(&mut user, &mut eve, 16, 64, 86_400.0, 0.0, 20, &mut rng).unwrap();
    assert_eq!(o.d, 0.0);
    assert_eq!(o.h_se, 0.0);
    assert_eq!(o.per_bit_mismatch.len(), 64);
    assert!(matches!(
        eavesdrop_attack(&mut user, &mut eve, 16, 64, 86_400.0, 0.0, 20, &mut rng),
        Err(Error::InsufficientTimers { .. })
    ));
}

#[test]
fn attacker_entropy_is_high_after_a_day() {
    let o = eavesdrop_study(&StudySetup::default(), 12, 24.0 * 3600.0, 500, 3).unwrap();
    assert!(o.h_se >= 0.95, "{o:?}");
    assert!(o.per_bit_mismatch.iter().all(|p| (0.0..=1.0).contains(p)));
    assert!((o.h_se - shannon_entropy(o.d).unwrap()).abs() < 1e-15);
}

/// Before the hash mask saturates (seconds to a minute), `d` grows with the
/// wait and with the key ADC resolution. Cells share random numbers, so the
/// comparison tolerance only absorbs rounding-level Monte-Carlo effects.
#[test]
fn attacker_difference_is_monotone() {
    const TOL: f64 = 0.005;
    let bits = [4, 8, 12, 16];
    let hours: Vec<f64> = [0.0, 1.0, 5.0, 20.0, 60.0].iter().map(|s| s / 3600.0).collect();
    let rows = eavesdrop_sweep(&StudySetup::default(), &bits, &hours, 500, 4).unwrap();
    let d = |a: usize, k: usize| rows[a * hours.len() + k].d;
    for (a, b) in bits.iter().enumerate() {
        assert_eq!(d(a, 0), 0.0);
        for k in 1..hours.len() {
            assert!(d(a, k) + TOL >= d(a, k - 1), "b={b} {rows:?}");
        }
    }
    for (k, h) in hours.iter().enumerate() {
        for a in 1..bits.len() {
            assert!(d(a, k) + TOL >= d(a - 1, k), "dt={h} {rows:?}");
        }
    }
    assert!(d(3, 4) > d(3, 1) + 0.1);
    assert!(EavesdropRow::to_csv(&rows).starts_with("adc_bits,delta_t_hours,trials,d,h_se\n"));
}

#[test]
fn bit_mismatch_rows_are_one_based() {
    let setup = StudySetup {
        key_timers: 32,
        hash_timers: 16,
        ..StudySetup::default()
    };
    let rows = bit_mismatch_sweep(&setup, 12, &[0.0, 24.0], 50, 5).unwrap();
    assert_eq!(rows.len(), 64);
    assert_eq!(rows[0].bit_index, 1);
    assert_eq!(rows[31].bit_index, 32);
    assert!(rows[..32].iter().all(|r| r.mismatch_prob == 0.0));
}

fn small_noise(ecc: bool) -> NoiseStudyConfig {
    NoiseStudyConfig {
        adc_bits: vec![12],
        snr_db: vec![110.0, f64::INFINITY],
        trials: 40,
        repetitions: 4,
        ecc: ecc.then(spotkd::ecc::CrcConfig::default),
        ..NoiseStudyConfig::default()
    }
}

#[test]
fn noise_study_is_deterministic_and_noiseless_cells_never_fail() {
    let a = noise_failure_study(&small_noise(true), 9).unwrap();
    let b = noise_failure_study(&small_noise(true), 9).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a
        .to_csv()
        .starts_with("adc_bits,snr_db,ecc,trials,failure_pct,failure_var\n"));
    for ecc in [false, true] {
        let cell = a.cell(12, f64::INFINITY, ecc).unwrap();
        assert_eq!(cell.failure_pct, 0.0);
        assert_eq!(cell.trials, 40);
    }
    let other = noise_failure_study(&small_noise(true), 10).unwrap();
    assert_ne!(a.to_csv(), other.to_csv());
}

#[test]
fn noise_study_rejects_bad_config() {
    let mut c = small_noise(false);
    c.snr_db = vec![f64::NEG_INFINITY];
    assert!(matches!(noise_failure_study(&c, 1), Err(Error::InvalidSnr(_))));
    let mut c = small_noise(false);
    c.trials = 0;
    assert!(noise_failure_study(&c, 1).is_err());
}

proptest! {
    #[test]
    fn entropy_symmetric_and_bounded(d in 0.0f64..=1.0) {
        let h = shannon_entropy(d).unwrap();
        prop_assert!((h - shannon_entropy(1.0 - d).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!((h - entropy_ln(d)).abs() < 1e-12);
        if (d - 0.5).abs() > 1e-6 {
            prop_assert!(h < 1.0);
        }
    }
}
