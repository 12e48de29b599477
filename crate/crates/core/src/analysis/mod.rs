//! Quantitative studies: search-space arithmetic, eavesdropper entropy,
//! per-bit mismatch profiles and noise robustness.
//!
//! Every Monte-Carlo trial draws from its own ChaCha stream selected by the
//! trial index, so results do not depend on thread count or scheduling.

mod eavesdrop;
mod noise;
mod search;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::HOUR;
use crate::timer_model::{Interval, ParamRanges};

pub use eavesdrop::{
    bit_mismatch_sweep, eavesdrop_attack, eavesdrop_study, eavesdrop_sweep, AttackOutcome, BitMismatchRow, EavesdropRow,
};
pub use noise::{noise_failure_study, NoiseCell, NoiseStudy, NoiseStudyConfig};
pub use search::{
    chip_bound, sampling_reduction, search_space, shannon_entropy, SearchSpaceReport, DEFAULT_PRECISION_BITS,
};

/// Shared knobs for the Monte-Carlo studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySetup {
    #[serde(default)]
    pub ranges: ParamRanges,
    /// Seconds since the chipset epoch at which keys are measured.
    #[serde(default = "default_sample_times")]
    pub sample_times: Interval,
    #[serde(default = "default_hash_timers")]
    pub hash_timers: usize,
    #[serde(default = "default_key_timers")]
    pub key_timers: usize,
    #[serde(default = "default_full_scale")]
    pub full_scale: f64,
}

fn default_sample_times() -> Interval {
    Interval::new(HOUR, 30.0 * 24.0 * HOUR)
}

fn default_hash_timers() -> usize {
    128
}

fn default_key_timers() -> usize {
    256
}

fn default_full_scale() -> f64 {
    1.0
}

impl Default for StudySetup {
    fn default() -> Self {
        StudySetup {
            ranges: ParamRanges::default(),
            sample_times: default_sample_times(),
            hash_timers: default_hash_timers(),
            key_timers: default_key_timers(),
            full_scale: default_full_scale(),
        }
    }
}

impl StudySetup {
    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        self.sample_times.validate("sample_times")?;
        if self.sample_times.lo < 0.0 {
            return Err(Error::InvalidRange("sample_times must be >= 0".into()));
        }
        if self.key_timers == 0 {
            return Err(Error::Config("key_timers must be >= 1".into()));
        }
        if !(self.full_scale > 0.0) || !self.full_scale.is_finite() {
            return Err(Error::Config(format!(
                "full_scale {} must be positive",
                self.full_scale
            )));
        }
        Ok(())
    }
}

/// RNG for trial `trial` of a study seeded with `master`.
pub fn trial_rng(master: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(trial);
    rng
}

/// Sample mean and unbiased sample variance.
pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
