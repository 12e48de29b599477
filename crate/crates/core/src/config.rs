//! Lab configuration file (TOML). Every section and field is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::StudySetup;
use crate::ecc::CrcConfig;
use crate::error::{Error, Result};
use crate::protocol::DeltaTDistribution;
use crate::randomness::DEFAULT_ALPHA;
use crate::timer_model::AdcConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub setup: StudySetup,
    pub ecc: CrcConfig,
    pub exchange: ExchangeConfig,
    pub randomness: RandomnessConfig,
    pub eavesdrop: EavesdropConfig,
    pub bit_mismatch: BitMismatchConfig,
    pub noise: NoiseConfig,
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig {
            seed: 1,
            threads: 0,
            setup: StudySetup::default(),
            ecc: CrcConfig::default(),
            exchange: ExchangeConfig::default(),
            randomness: RandomnessConfig::default(),
            eavesdrop: EavesdropConfig::default(),
            bit_mismatch: BitMismatchConfig::default(),
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExchangeConfig {
    /// Timers per fabricated chipset.
    pub capacity: usize,
    pub key_adc_bits: u32,
    pub delta_t: DeltaTDistribution,
    /// Simulated clock at the start of the demo, seconds.
    pub start_time: f64,
    pub ecc: bool,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        ExchangeConfig {
            capacity: 1024,
            key_adc_bits: 12,
            delta_t: DeltaTDistribution::default(),
            start_time: 86_400.0,
            ecc: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomnessConfig {
    pub adc_bits: Vec<u32>,
    pub keys: usize,
    pub alpha: f64,
}

impl Default for RandomnessConfig {
    fn default() -> Self {
        RandomnessConfig {
            adc_bits: (4..=16).collect(),
            keys: 10_000,
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EavesdropConfig {
    pub adc_bits: Vec<u32>,
    pub delta_t_hours: Vec<f64>,
    pub trials: usize,
}

impl Default for EavesdropConfig {
    fn default() -> Self {
        EavesdropConfig {
            adc_bits: vec![4, 8, 12, 16],
            delta_t_hours: vec![0.0, 1.0, 6.0, 24.0, 48.0],
            trials: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BitMismatchConfig {
    pub adc_bits: u32,
    pub delta_t_hours: Vec<f64>,
    pub trials: usize,
}

impl Default for BitMismatchConfig {
    fn default() -> Self {
        BitMismatchConfig {
            adc_bits: 12,
            delta_t_hours: vec![1.0, 24.0],
            trials: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub adc_bits: Vec<u32>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub repetitions: usize,
    pub ecc: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            adc_bits: vec![12, 16],
            snr_db: vec![100.0, 115.0, 130.0, 145.0, 160.0],
            trials: 1000,
            repetitions: 10,
            ecc: false,
        }
    }
}

fn check_adc(bits: &[u32], full_scale: f64, what: &str) -> Result<()> {
    if bits.is_empty() {
        return Err(Error::Config(format!("{what}: adc_bits is empty")));
    }
    for &b in bits {
        AdcConfig::new(b, full_scale)?;
    }
    Ok(())
}

fn check_hours(hours: &[f64], what: &str) -> Result<()> {
    if hours.is_empty() {
        return Err(Error::Config(format!("{what}: delta_t_hours is empty")));
    }
    if let Some(h) = hours.iter().find(|h| !(**h >= 0.0) || !h.is_finite()) {
        return Err(Error::Config(format!("{what}: delta_t_hours {h} must be >= 0")));
    }
    Ok(())
}

impl LabConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Most key timers any single exchange read takes from one chipset.
    pub fn exchange_key_timers(&self) -> usize {
        if self.exchange.ecc {
            self.ecc.key_len.max(self.setup.key_timers)
        } else {
            self.setup.key_timers
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.setup;
        s.validate()?;
        self.ecc.validate()?;
        let fs = s.full_scale;

        let e = &self.exchange;
        AdcConfig::new(e.key_adc_bits, fs)?;
        e.delta_t.validate()?;
        if !(e.start_time >= 0.0) || !e.start_time.is_finite() {
            return Err(Error::Config(format!(
                "exchange.start_time {} must be >= 0",
                e.start_time
            )));
        }
        let need = s.hash_timers + self.exchange_key_timers();
        if need > e.capacity {
            return Err(Error::Config(format!(
                "G + N = {need} exceeds chipset capacity C = {}",
                e.capacity
            )));
        }

        let r = &self.randomness;
        check_adc(&r.adc_bits, fs, "randomness")?;
        if r.keys < 100 {
            return Err(Error::Config(format!("randomness.keys {} must be >= 100", r.keys)));
        }
        if !(r.alpha > 0.0 && r.alpha < 1.0) {
            return Err(Error::Config(format!(
                "randomness.alpha {} must lie in (0, 1)",
                r.alpha
            )));
        }

        let ev = &self.eavesdrop;
        check_adc(&ev.adc_bits, fs, "eavesdrop")?;
        check_hours(&ev.delta_t_hours, "eavesdrop")?;
        if ev.trials == 0 {
            return Err(Error::Config("eavesdrop.trials must be >= 1".into()));
        }

        let bm = &self.bit_mismatch;
        check_adc(&[bm.adc_bits], fs, "bit_mismatch")?;
        check_hours(&bm.delta_t_hours, "bit_mismatch")?;
        if bm.trials == 0 {
            return Err(Error::Config("bit_mismatch.trials must be >= 1".into()));
        }

        let n = &self.noise;
        check_adc(&n.adc_bits, fs, "noise")?;
        if n.snr_db.is_empty() {
            return Err(Error::Config("noise.snr_db is empty".into()));
        }
        self.noise_study().validate()
    }

    pub fn noise_study(&self) -> crate::analysis::NoiseStudyConfig {
        crate::analysis::NoiseStudyConfig {
            setup: self.setup,
            adc_bits: self.noise.adc_bits.clone(),
            snr_db: self.noise.snr_db.clone(),
            trials: self.noise.trials,
            repetitions: self.noise.repetitions,
            ecc: self.noise.ecc.then_some(self.ecc),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = LabConfig::default();
        c.validate().unwrap();
        let text = c.to_toml_string().unwrap();
        assert_eq!(LabConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = LabConfig::from_toml_str(
            "seed = 9\n[setup]\nhash_timers = 64\n[ecc]\npolynomial = \"0x9C\"\n[noise]\nsnr_db = [120.0, inf]\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.setup.hash_timers, 64);
        assert_eq!(c.setup.key_timers, 256);
        assert_eq!(c.ecc.poly.full(), 0x139);
        assert_eq!(c.ecc.key_len, 284);
        assert!(c.noise.snr_db[1].is_infinite());
        c.validate().unwrap();
    }

    #[test]
    fn capacity_violation_is_config_error() {
        let mut c = LabConfig::default();
        c.exchange.capacity = 300;
        let err = c.validate().unwrap_err();
        assert!(err.is_config(), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(LabConfig::from_toml_str("bogus = 1").unwrap_err().is_config());
        assert!(LabConfig::from_toml_str("[ecc]\npolynomial = \"zz\"").is_err());
    }
}
