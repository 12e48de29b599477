use std::sync::Arc;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_var, trial_rng, StudySetup};
use crate::chipset::{db_to_linear, AwgnModel, Chipset};
use crate::ecc::{crc, CrcConfig, SyndromeDecoder};
use crate::error::{Error, Result};
use crate::timer_model::{AdcConfig, TimerParams};

/// Sweep definition for the noise-robustness study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseStudyConfig {
    #[serde(default)]
    pub setup: StudySetup,
    pub adc_bits: Vec<u32>,
    /// Signal-to-noise ratios in dB; `inf` disables the noise.
    pub snr_db: Vec<f64>,
    /// Keys per sweep cell.
    pub trials: usize,
    /// Groups the trials are split into to estimate the variance.
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Adds a reconciled row to every cell when present.
    #[serde(default)]
    pub ecc: Option<CrcConfig>,
}

fn default_repetitions() -> usize {
    10
}

impl Default for NoiseStudyConfig {
    fn default() -> Self {
        NoiseStudyConfig {
            setup: StudySetup::default(),
            adc_bits: vec![12, 16],
            snr_db: vec![100.0, 115.0, 130.0, 145.0, 160.0],
            trials: 1000,
            repetitions: default_repetitions(),
            ecc: None,
        }
    }
}

impl NoiseStudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.setup.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("noise study needs at least one trial".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        for &db in &self.snr_db {
            let lin = db_to_linear(db);
            if db.is_nan() || !(lin > 0.0) {
                return Err(Error::InvalidSnr(lin));
            }
        }
        for &b in &self.adc_bits {
            AdcConfig::new(b, self.setup.full_scale)?;
        }
        if let Some(ecc) = &self.ecc {
            ecc.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCell {
    pub adc_bits: u32,
    pub snr_db: f64,
    pub ecc: bool,
    pub trials: usize,
    pub failure_pct: f64,
    /// Sample variance of the failure percentage across repetitions.
    pub failure_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudy {
    pub cells: Vec<NoiseCell>,
}

impl NoiseStudy {
    pub const CSV_HEADER: &'static str = "adc_bits,snr_db,ecc,trials,failure_pct,failure_var";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for c in &self.cells {
            s += &format!(
                "{},{},{},{},{:.4},{:.6}\n",
                c.adc_bits, c.snr_db, c.ecc, c.trials, c.failure_pct, c.failure_var
            );
        }
        s
    }

    pub fn cell(&self, adc_bits: u32, snr_db: f64, ecc: bool) -> Option<&NoiseCell> {
        self.cells
            .iter()
            .find(|c| c.adc_bits == adc_bits && c.snr_db == snr_db && c.ecc == ecc)
    }
}

/// Reads `n` key timers masked by `g` hash timers at `t`. Noise, when
/// given, is applied by the hardware before quantization.
fn read(
    timers: &Arc<[TimerParams]>,
    g: usize,
    n: usize,
    adc: AdcConfig,
    t: f64,
    noise: Option<AwgnModel>,
) -> Result<Vec<u8>> {
    let mut chip = Chipset::fabricate("trial", timers.clone(), adc)?;
    if let Some(noise) = noise {
        chip = chip.with_noise(noise);
    }
    let hash: Vec<usize> = (0..g).collect();
    let key: Vec<usize> = (g..g + n).collect();
    Ok(chip.generate_key_output(&key, &hash, t)?.bits)
}

/// Monte-Carlo key failure rate under AWGN for every `(b, snr)` cell.
///
/// A plain key fails on any bit mismatch against the noiseless server key.
/// With ECC the server reconciles its key toward the user's broadcast CRC
/// and the exchange fails unless the result equals the user's key. All
/// cells of one trial share its timers, sample time and noise draws.
pub fn noise_failure_study(cfg: &NoiseStudyConfig, seed: u64) -> Result<NoiseStudy> {
    cfg.validate()?;
    let setup = &cfg.setup;
    let (g, n) = (setup.hash_timers, setup.key_timers);
    let decoder = cfg.ecc.map(SyndromeDecoder::new).transpose()?;
    let ecc_n = cfg.ecc.map_or(0, |c| c.key_len);
    let population = g + n.max(ecc_n);
    let adcs: Vec<AdcConfig> = cfg
        .adc_bits
        .iter()
        .map(|&b| AdcConfig::new(b, setup.full_scale))
        .collect::<Result<_>>()?;
    let per_cell = if decoder.is_some() { 2 } else { 1 };
    let cells = adcs.len() * cfg.snr_db.len() * per_cell;

    let failures: Vec<Vec<bool>> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<Vec<bool>> {
            let mut rng = trial_rng(seed, trial);
            let timers: Arc<[TimerParams]> = setup.ranges.sample_many(population, &mut rng).into();
            let t = setup.sample_times.sample(&mut rng);
            let noise_seed = rng.next_u64();
            let mut out = Vec::with_capacity(cells);
            for &adc in &adcs {
                let gold = read(&timers, g, n, adc, t, None)?;
                let gold_ecc = match &decoder {
                    Some(_) => read(&timers, g, ecc_n, adc, t, None)?,
                    None => Vec::new(),
                };
                for &db in &cfg.snr_db {
                    let noisy = read(&timers, g, n, adc, t, Some(AwgnModel::from_db(db, noise_seed)?))?;
                    out.push(noisy != gold);
                    if let Some(dec) = &decoder {
                        let user = read(&timers, g, ecc_n, adc, t, Some(AwgnModel::from_db(db, noise_seed)?))?;
                        let failed = user != gold_ecc && {
                            let r_user = crc(&user, dec.config())?;
                            match dec.reconcile(&gold_ecc, &r_user) {
                                Ok(fixed) => fixed.key != user,
                                Err(Error::ReconciliationFailed { .. } | Error::SearchBudgetExceeded { .. }) => true,
                                Err(e) => return Err(e),
                            }
                        };
                        out.push(failed);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let reps = cfg.repetitions.min(cfg.trials);
    let mut rows = Vec::with_capacity(cells);
    let mut col = 0;
    for &b in &cfg.adc_bits {
        for &db in &cfg.snr_db {
            for ecc in [false, true].into_iter().take(per_cell) {
                let mut fails = vec![0usize; reps];
                let mut sizes = vec![0usize; reps];
                for (i, f) in failures.iter().enumerate() {
                    let r = i * reps / cfg.trials;
                    sizes[r] += 1;
                    fails[r] += f[col] as usize;
                }
                let pcts: Vec<f64> = fails
                    .iter()
                    .zip(&sizes)
                    .map(|(&f, &s)| 100.0 * f as f64 / s as f64)
                    .collect();
                let (_, var) = mean_var(&pcts);
                let total: usize = fails.iter().sum();
                rows.push(NoiseCell {
                    adc_bits: b,
                    snr_db: db,
                    ecc,
                    trials: cfg.trials,
                    failure_pct: 100.0 * total as f64 / cfg.trials as f64,
                    failure_var: var,
                });
                col += 1;
            }
        }
    }
    Ok(NoiseStudy { cells: rows })
}
