//! Five SP 800-22 statistical tests suited to short keys, and the pass-rate
//! sweep over key ADC resolutions.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::analysis::{trial_rng, StudySetup};
use crate::chipset::Chipset;
use crate::error::{Error, Result};
use crate::protocol::KeyString;
use crate::timer_model::{AdcConfig, TimerParams};

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const BLOCK_FREQUENCY_M: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestName {
    Frequency,
    BlockFrequency,
    Runs,
    LongestRun,
    CumulativeSums,
}

impl TestName {
    pub const ALL: [TestName; 5] = [
        TestName::Frequency,
        TestName::BlockFrequency,
        TestName::Runs,
        TestName::LongestRun,
        TestName::CumulativeSums,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TestName::Frequency => "frequency",
            TestName::BlockFrequency => "block_frequency",
            TestName::Runs => "runs",
            TestName::LongestRun => "longest_run",
            TestName::CumulativeSums => "cumulative_sums",
        }
    }

    /// Shortest sequence the battery runs this test on.
    pub fn min_len(&self) -> usize {
        match self {
            TestName::LongestRun => 128,
            _ => 100,
        }
    }
}

impl fmt::Display for TestName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper regularized incomplete gamma, `igamc` in SP 800-22.
fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(a, x)
}

fn ones(bits: &[u8]) -> usize {
    bits.iter().filter(|&&b| b == 1).count()
}

/// Frequency (monobit) test.
pub fn frequency(bits: &[u8]) -> f64 {
    let n = bits.len() as f64;
    let s: f64 = 2.0 * ones(bits) as f64 - n;
    erfc(s.abs() / n.sqrt() / std::f64::consts::SQRT_2)
}

/// Frequency within blocks of `m` bits. Leftover bits are discarded.
pub fn block_frequency(bits: &[u8], m: usize) -> f64 {
    assert!(m > 0, "block length must be positive");
    let blocks = bits.len() / m;
    let chi2: f64 = bits
        .chunks_exact(m)
        .map(|b| {
            let pi = ones(b) as f64 / m as f64;
            (pi - 0.5).powi(2)
        })
        .sum::<f64>()
        * 4.0
        * m as f64;
    igamc(blocks as f64 / 2.0, chi2 / 2.0)
}

/// Runs test. Returns 0 when the frequency prerequisite fails.
pub fn runs(bits: &[u8]) -> f64 {
    let n = bits.len() as f64;
    let pi = ones(bits) as f64 / n;
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return 0.0;
    }
    let v = 1 + bits.windows(2).filter(|w| w[0] != w[1]).count();
    let q = pi * (1.0 - pi);
    erfc((v as f64 - 2.0 * n * q).abs() / (2.0 * (2.0 * n).sqrt() * q))
}

const LONGEST_RUN_PI: [f64; 4] = [0.2148, 0.3672, 0.2305, 0.1875];

/// Longest run of ones in 8-bit blocks. Needs at least 128 bits.
pub fn longest_run(bits: &[u8]) -> Option<f64> {
    if bits.len() < 128 {
        return None;
    }
    let mut nu = [0f64; 4];
    let mut blocks = 0f64;
    for block in bits.chunks_exact(8) {
        let (mut best, mut run) = (0, 0);
        for &b in block {
            run = if b == 1 { run + 1 } else { 0 };
            best = best.max(run);
        }
        nu[best.clamp(1, 4) - 1] += 1.0;
        blocks += 1.0;
    }
    let chi2: f64 = nu
        .iter()
        .zip(LONGEST_RUN_PI)
        .map(|(&v, p)| (v - blocks * p).powi(2) / (blocks * p))
        .sum();
    Some(igamc(1.5, chi2 / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CusumMode {
    Forward,
    Backward,
}

/// Cumulative sums test in one direction.
pub fn cumulative_sums(bits: &[u8], mode: CusumMode) -> f64 {
    let n = bits.len() as f64;
    let step = |b: &u8| if *b == 1 { 1i64 } else { -1 };
    let z = match mode {
        CusumMode::Forward => max_excursion(bits.iter().map(step)),
        CusumMode::Backward => max_excursion(bits.iter().rev().map(step)),
    } as f64;
    let sqrt_n = n.sqrt();
    // Summation bounds use truncating integer division, as in the
    // reference implementation.
    let (ni, zi) = (bits.len() as i64, z as i64);
    let mut sum1 = 0.0;
    let lo = (-ni / zi + 1) / 4;
    let hi = (ni / zi - 1) / 4;
    for k in lo..=hi {
        let k = k as f64;
        sum1 += std_normal_cdf((4.0 * k + 1.0) * z / sqrt_n) - std_normal_cdf((4.0 * k - 1.0) * z / sqrt_n);
    }
    let mut sum2 = 0.0;
    let lo = (-ni / zi - 3) / 4;
    for k in lo..=hi {
        let k = k as f64;
        sum2 += std_normal_cdf((4.0 * k + 3.0) * z / sqrt_n) - std_normal_cdf((4.0 * k + 1.0) * z / sqrt_n);
    }
    (1.0 - sum1 + sum2).clamp(0.0, 1.0)
}

fn max_excursion(steps: impl Iterator<Item = i64>) -> i64 {
    steps
        .scan(0i64, |s, x| {
            *s += x;
            Some(s.abs())
        })
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestName,
    /// `None` when the key is shorter than the test's minimum length.
    pub p_value: Option<f64>,
    pub passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub key_len: usize,
    pub alpha: f64,
    pub results: Vec<TestResult>,
    /// Every applicable test passed.
    pub overall_pass: bool,
}

impl TestReport {
    pub fn get(&self, test: TestName) -> &TestResult {
        self.results
            .iter()
            .find(|r| r.test == test)
            .expect("every test is reported")
    }
}

/// Runs the five tests on raw bits. Cumulative sums reports the smaller of
/// its forward and backward p-values.
pub fn run_battery_bits(bits: &[u8], alpha: f64) -> Result<TestReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} must lie in (0, 1)")));
    }
    let n = bits.len();
    let results: Vec<TestResult> = TestName::ALL
        .iter()
        .map(|&test| {
            let p = (n >= test.min_len()).then(|| match test {
                TestName::Frequency => frequency(bits),
                TestName::BlockFrequency => block_frequency(bits, BLOCK_FREQUENCY_M),
                TestName::Runs => runs(bits),
                TestName::LongestRun => longest_run(bits).expect("length checked"),
                TestName::CumulativeSums => {
                    cumulative_sums(bits, CusumMode::Forward).min(cumulative_sums(bits, CusumMode::Backward))
                }
            });
            TestResult {
                test,
                p_value: p,
                passed: p.map(|p| p >= alpha),
            }
        })
        .collect();
    let overall_pass = results.iter().all(|r| r.passed != Some(false));
    Ok(TestReport {
        key_len: n,
        alpha,
        results,
        overall_pass,
    })
}

pub fn run_battery(key: &KeyString, alpha: f64) -> Result<TestReport> {
    run_battery_bits(key.bits(), alpha)
}

/// One CSV row. `adc_bits` is `None` for the PRNG baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRow {
    pub adc_bits: Option<u32>,
    pub test_name: TestName,
    pub keys: usize,
    pub pass_pct: f64,
}

pub const PASS_CSV_HEADER: &str = "adc_bits,test_name,keys,pass_pct";

pub fn pass_rows_to_csv(rows: &[PassRow]) -> String {
    let mut s = format!("{PASS_CSV_HEADER}\n");
    for r in rows {
        let b = r.adc_bits.map_or_else(|| "prng".to_string(), |b| b.to_string());
        s += &format!("{b},{},{},{:.2}\n", r.test_name, r.keys, r.pass_pct);
    }
    s
}

#[derive(Default, Clone)]
struct PassCount {
    passed: [usize; 5],
    applicable: [usize; 5],
}

impl PassCount {
    fn add(&mut self, report: &TestReport) {
        for (i, r) in report.results.iter().enumerate() {
            if let Some(p) = r.passed {
                self.applicable[i] += 1;
                self.passed[i] += p as usize;
            }
        }
    }

    fn merge(mut self, o: PassCount) -> PassCount {
        for i in 0..5 {
            self.passed[i] += o.passed[i];
            self.applicable[i] += o.applicable[i];
        }
        self
    }

    fn rows(&self, adc_bits: Option<u32>) -> Vec<PassRow> {
        TestName::ALL
            .iter()
            .enumerate()
            .map(|(i, &test_name)| PassRow {
                adc_bits,
                test_name,
                keys: self.applicable[i],
                pass_pct: if self.applicable[i] == 0 {
                    f64::NAN
                } else {
                    100.0 * self.passed[i] as f64 / self.applicable[i] as f64
                },
            })
            .collect()
    }
}

const PRNG_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Pass percentage per test for keys read at uniformly random times, one
/// block of rows per ADC resolution, followed by a PRNG baseline block.
/// Key `i` uses the same timers and sample time at every resolution.
pub fn pass_percentage_sweep(
    setup: &StudySetup,
    adc_bits: &[u32],
    keys_per_point: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<PassRow>> {
    setup.validate()?;
    if keys_per_point < 100 {
        return Err(Error::Config(format!("keys_per_point {keys_per_point} must be >= 100")));
    }
    let adcs: Vec<AdcConfig> = adc_bits
        .iter()
        .map(|&b| AdcConfig::new(b, setup.full_scale))
        .collect::<Result<_>>()?;
    let (g, n) = (setup.hash_timers, setup.key_timers);
    let hash: Vec<usize> = (0..g).collect();
    let key: Vec<usize> = (g..g + n).collect();

    let counts = (0..keys_per_point as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<PassCount>> {
            let mut rng = trial_rng(seed, i);
            let timers: Arc<[TimerParams]> = setup.ranges.sample_many(g + n, &mut rng).into();
            let t = setup.sample_times.sample(&mut rng);
            let mut out = vec![PassCount::default(); adcs.len() + 1];
            for (slot, adc) in out.iter_mut().zip(&adcs) {
                let mut chip = Chipset::fabricate("sweep", timers.clone(), *adc)?;
                let bits = chip.generate_key_output(&key, &hash, t)?.bits;
                slot.add(&run_battery_bits(&bits, alpha)?);
            }
            let mut prng = trial_rng(seed ^ PRNG_STREAM_SALT, i);
            let bits: Vec<u8> = (0..n).map(|_| prng.random_range(0..2u8)).collect();
            out[adcs.len()].add(&run_battery_bits(&bits, alpha)?);
            Ok(out)
        })
        .try_reduce(
            || vec![PassCount::default(); adcs.len() + 1],
            |a, b| Ok(a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect()),
        )?;

    let mut rows = Vec::new();
    for (c, &b) in counts.iter().zip(adc_bits) {
        rows.extend(c.rows(Some(b)));
    }
    rows.extend(counts[adcs.len()].rows(None));
    Ok(rows)
}
