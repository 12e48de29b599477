use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bits of precision assumed per timer coordinate.
pub const DEFAULT_PRECISION_BITS: u64 = 63;

/// Binary entropy of the attacker's per-bit difference fraction `d`.
pub fn shannon_entropy(d: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::EntropyDomain(d));
    }
    let term = |p: f64| if p == 0.0 { 0.0 } else { -p * p.log2() };
    Ok(term(d) + term(1.0 - d))
}

/// Brute-force search space for recovering one chipset's key-relevant
/// parameters. Exponents are base 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpaceReport {
    pub hash_timers: u64,
    pub precision_bits: u64,
    /// Unknown real parameters: four per timer, `G + 1` timers.
    pub p_total: u128,
    pub sp_exponent: u128,
    /// Chips an attacker may sample while the expected solution set still
    /// exceeds one candidate (strict upper bound).
    pub c_total_bound: u128,
}

impl SearchSpaceReport {
    /// Exponent of the expected solution-set size after `j` samples.
    pub fn after_samples(&self, j: u128) -> i128 {
        self.sp_exponent as i128 - j as i128
    }

    /// Largest chip count strictly below the bound.
    pub fn max_chips(&self) -> u128 {
        self.c_total_bound.saturating_sub(1)
    }
}

pub fn search_space(hash_timers: u64, precision_bits: u64) -> SearchSpaceReport {
    let p_total = 4 * (hash_timers as u128 + 1);
    let sp_exponent = precision_bits as u128 * p_total;
    SearchSpaceReport {
        hash_timers,
        precision_bits,
        p_total,
        sp_exponent,
        c_total_bound: sp_exponent,
    }
}

/// `log2 E(SP_J)` after `j` one-bit samples.
pub fn sampling_reduction(hash_timers: u64, precision_bits: u64, j: u128) -> i128 {
    search_space(hash_timers, precision_bits).after_samples(j)
}

/// Maximum number of chips that keeps `E(SP_J)` above one candidate.
pub fn chip_bound(hash_timers: u64, precision_bits: u64) -> u128 {
    search_space(hash_timers, precision_bits).max_chips()
}
