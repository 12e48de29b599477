use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{shannon_entropy, trial_rng, StudySetup};
use crate::chipset::Chipset;
use crate::error::{Error, Result};
use crate::protocol::{user_generate, HOUR};
use crate::timer_model::AdcConfig;

/// Aggregate view of the attacker's keys against the users' keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    /// Mean fraction of differing bits.
    pub d: f64,
    pub h_se: f64,
    /// Mismatch probability per key bit position.
    pub per_bit_mismatch: Vec<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    trials: usize,
    per_bit: Vec<u64>,
}

impl Tally {
    fn new(n: usize) -> Self {
        Tally {
            trials: 0,
            per_bit: vec![0; n],
        }
    }

    fn record(&mut self, user: &[u8], attacker: &[u8]) {
        self.trials += 1;
        for ((c, u), a) in self.per_bit.iter_mut().zip(user).zip(attacker) {
            *c += (u != a) as u64;
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.trials += other.trials;
        for (a, b) in self.per_bit.iter_mut().zip(other.per_bit) {
            *a += b;
        }
        self
    }

    fn outcome(&self) -> Result<AttackOutcome> {
        let n = self.per_bit.len();
        let total: u64 = self.per_bit.iter().sum();
        let d = if self.trials == 0 || n == 0 {
            0.0
        } else {
            total as f64 / (self.trials * n) as f64
        };
        Ok(AttackOutcome {
            d,
            h_se: shannon_entropy(d)?,
            per_bit_mismatch: self
                .per_bit
                .iter()
                .map(|&c| c as f64 / self.trials.max(1) as f64)
                .collect(),
            trials: self.trials,
        })
    }
}

/// The user reads `user` at `t` and broadcasts `(O, H, t)`; the attacker
/// reads the same indices on its own replica at `t + delta_t`. Repeated
/// `trials` times on fresh timers of the same pair of replicas.
#[allow(clippy::too_many_arguments)]
pub fn eavesdrop_attack<R: Rng + ?Sized>(
    user: &mut Chipset,
    attacker: &mut Chipset,
    g: usize,
    n: usize,
    t: f64,
    delta_t: f64,
    trials: usize,
    rng: &mut R,
) -> Result<AttackOutcome> {
    let mut tally = Tally::new(n);
    run_attacks(user, attacker, g, n, t, delta_t, trials, rng, &mut tally)?;
    tally.outcome()
}

#[allow(clippy::too_many_arguments)]
fn run_attacks<R: Rng + ?Sized>(
    user: &mut Chipset,
    attacker: &mut Chipset,
    g: usize,
    n: usize,
    t: f64,
    delta_t: f64,
    trials: usize,
    rng: &mut R,
    tally: &mut Tally,
) -> Result<()> {
    if !(delta_t >= 0.0) || !delta_t.is_finite() {
        return Err(Error::InvalidRange(format!("delta_t = {delta_t} must be >= 0")));
    }
    for _ in 0..trials {
        let (key, req) = user_generate(user, "user", g, n, t, rng)?;
        let stale = attacker.generate_key_output(&req.key_indices, &req.hash_indices, t + delta_t)?;
        tally.record(key.bits(), &stale.bits);
    }
    Ok(())
}

/// Fresh pair of replicas and a fresh sample time for every trial.
pub fn eavesdrop_study(
    setup: &StudySetup,
    adc_bits: u32,
    delta_t: f64,
    trials: usize,
    seed: u64,
) -> Result<AttackOutcome> {
    tally_cells(setup, &[adc_bits], &[delta_t], trials, seed)?
        .remove(0)
        .outcome()
}

fn tally_cells(setup: &StudySetup, adc_bits: &[u32], delta_ts: &[f64], trials: usize, seed: u64) -> Result<Vec<Tally>> {
    setup.validate()?;
    let adcs: Vec<AdcConfig> = adc_bits
        .iter()
        .map(|&b| AdcConfig::new(b, setup.full_scale))
        .collect::<Result<_>>()?;
    let (g, n) = (setup.hash_timers, setup.key_timers);
    let cells = adcs.len() * delta_ts.len();
    let empty = || vec![Tally::new(n); cells];

    (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<Vec<Tally>> {
            let mut rng = trial_rng(seed, trial);
            let timers: std::sync::Arc<[_]> = setup.ranges.sample_many(g + n, &mut rng).into();
            let t = setup.sample_times.sample(&mut rng);
            let mut out = empty();
            for (a, adc) in adcs.iter().enumerate() {
                for (k, &dt) in delta_ts.iter().enumerate() {
                    // Same index choice in every cell of this trial.
                    let mut pick = trial_rng(seed ^ 0x5eed, trial);
                    let mut user = Chipset::fabricate("user", timers.clone(), *adc)?;
                    let mut eve = Chipset::fabricate("eve", timers.clone(), *adc)?;
                    run_attacks(
                        &mut user,
                        &mut eve,
                        g,
                        n,
                        t,
                        dt,
                        1,
                        &mut pick,
                        &mut out[a * delta_ts.len() + k],
                    )?;
                }
            }
            Ok(out)
        })
        .try_reduce(empty, |x, y| {
            Ok(x.into_iter().zip(y).map(|(a, b)| a.merge(b)).collect())
        })
}

/// One row per `(adc_bits, delta_t)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EavesdropRow {
    pub adc_bits: u32,
    pub delta_t_hours: f64,
    pub trials: usize,
    pub d: f64,
    pub h_se: f64,
}

impl EavesdropRow {
    pub const CSV_HEADER: &'static str = "adc_bits,delta_t_hours,trials,d,h_se";

    pub fn to_csv(rows: &[Self]) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in rows {
            s += &format!(
                "{},{},{},{:.6},{:.6}\n",
                r.adc_bits, r.delta_t_hours, r.trials, r.d, r.h_se
            );
        }
        s
    }
}

/// Attacker entropy over a grid of ADC resolutions and wait periods, sorted
/// by `(adc_bits, delta_t_hours)` as given.
pub fn eavesdrop_sweep(
    setup: &StudySetup,
    adc_bits: &[u32],
    delta_t_hours: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<EavesdropRow>> {
    let secs: Vec<f64> = delta_t_hours.iter().map(|h| h * HOUR).collect();
    let tallies = tally_cells(setup, adc_bits, &secs, trials, seed)?;
    let mut rows = Vec::with_capacity(tallies.len());
    for (a, &b) in adc_bits.iter().enumerate() {
        for (k, &h) in delta_t_hours.iter().enumerate() {
            let o = tallies[a * delta_t_hours.len() + k].outcome()?;
            rows.push(EavesdropRow {
                adc_bits: b,
                delta_t_hours: h,
                trials: o.trials,
                d: o.d,
                h_se: o.h_se,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitMismatchRow {
    pub delta_t_hours: f64,
    /// 1-based key bit position.
    pub bit_index: usize,
    pub mismatch_prob: f64,
}

impl BitMismatchRow {
    pub const CSV_HEADER: &'static str = "delta_t_hours,bit_index,mismatch_prob";

    pub fn to_csv(rows: &[Self]) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in rows {
            s += &format!("{},{},{:.6}\n", r.delta_t_hours, r.bit_index, r.mismatch_prob);
        }
        s
    }
}

/// Per-bit mismatch probability for each wait period at one resolution.
pub fn bit_mismatch_sweep(
    setup: &StudySetup,
    adc_bits: u32,
    delta_t_hours: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<BitMismatchRow>> {
    let secs: Vec<f64> = delta_t_hours.iter().map(|h| h * HOUR).collect();
    let tallies = tally_cells(setup, &[adc_bits], &secs, trials, seed)?;
    let mut rows = Vec::new();
    for (tally, &h) in tallies.iter().zip(delta_t_hours) {
        for (i, p) in tally.outcome()?.per_bit_mismatch.into_iter().enumerate() {
            rows.push(BitMismatchRow {
                delta_t_hours: h,
                bit_index: i + 1,
                mismatch_prob: p,
            });
        }
    }
    Ok(rows)
}
