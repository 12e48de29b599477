use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spotkd::analysis::StudySetup;
use spotkd::randomness::{
    pass_percentage_sweep, pass_rows_to_csv, run_battery_bits, runs, TestName, DEFAULT_ALPHA, PASS_CSV_HEADER,
};

#[test]
fn alternating_sequence_fails_runs() {
    let bits: Vec<u8> = (0..256).map(|i| (i % 2) as u8).collect();
    // pi = 1/2 and every adjacent pair differs, so V = n and the erfc
    // argument is |n - n/2| / (2 sqrt(2n) / 4) = sqrt(n/2) = 11.3.
    let n = 256.0f64;
    let z = (n - n / 2.0).abs() / (2.0 * (2.0 * n).sqrt() * 0.25);
    assert!((z - (n / 2.0).sqrt()).abs() < 1e-12);
    assert!(runs(&bits) < 1e-50);
    let report = run_battery_bits(&bits, DEFAULT_ALPHA).unwrap();
    assert_eq!(report.get(TestName::Runs).passed, Some(false));
    assert_eq!(report.get(TestName::Frequency).passed, Some(true));
    assert!(!report.overall_pass);
}

#[test]
fn constant_sequence_fails_frequency_and_runs_prerequisite() {
    let report = run_battery_bits(&[1; 256], DEFAULT_ALPHA).unwrap();
    assert_eq!(report.get(TestName::Frequency).passed, Some(false));
    assert_eq!(report.get(TestName::Runs).p_value, Some(0.0));
}

#[test]
fn short_keys_skip_tests() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bits: Vec<u8> = (0..110).map(|_| rng.random_range(0..2)).collect();
    let report = run_battery_bits(&bits, DEFAULT_ALPHA).unwrap();
    assert_eq!(report.get(TestName::LongestRun).p_value, None);
    assert!(report.get(TestName::Frequency).p_value.is_some());
    assert!(run_battery_bits(&bits, 0.0).is_err());
    assert!(run_battery_bits(&bits, 1.0).is_err());
}

/// Seeded PRNG keys pass each test at about 1 - alpha.
#[test]
fn prng_keys_pass_at_expected_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut passed = [0usize; 5];
    let keys = 10_000;
    for _ in 0..keys {
        let bits: Vec<u8> = (0..256).map(|_| rng.random_range(0..2)).collect();
        let report = run_battery_bits(&bits, DEFAULT_ALPHA).unwrap();
        for (i, r) in report.results.iter().enumerate() {
            passed[i] += (r.passed == Some(true)) as usize;
        }
    }
    for (i, p) in passed.iter().enumerate() {
        let pct = 100.0 * *p as f64 / keys as f64;
        assert!(pct >= 98.0, "{}: {pct}", TestName::ALL[i]);
    }
}

#[test]
fn higher_resolution_passes_at_least_as_often() {
    let rows = pass_percentage_sweep(&StudySetup::default(), &[4, 16], 1000, DEFAULT_ALPHA, 3).unwrap();
    assert_eq!(rows.len(), 15);
    for test in TestName::ALL {
        let pct = |b: Option<u32>| {
            rows.iter()
                .find(|r| r.adc_bits == b && r.test_name == test)
                .unwrap()
                .pass_pct
        };
        assert!(pct(Some(16)) >= pct(Some(4)), "{test}");
    }
    let csv = pass_rows_to_csv(&rows);
    assert!(csv.starts_with(PASS_CSV_HEADER));
    assert!(csv.contains("\nprng,frequency,1000,"));
    assert!(pass_percentage_sweep(&StudySetup::default(), &[8], 99, DEFAULT_ALPHA, 3).is_err());
}
