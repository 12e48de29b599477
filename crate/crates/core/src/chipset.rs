//! Emulated timer chipset with one-time read semantics.
//!
//! The chipset keeps its timer tuples behind the hardware boundary: the only
//! successful read path is [`Chipset::generate_key_output`], which returns the
//! XOR-masked key bits and nothing else. Every timer touched by a read (or a
//! raw probe) is marked consumed and can never be read again.
//!
//! Indices are 0-based in this API; errors and exported formats use 1-based
//! indices.

use std::convert::Infallible;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timer_model::{AdcConfig, ParamRanges, TimerParams};

/// Resolution of the ADC used for hash timers.
pub const HASH_ADC_BITS: u32 = 11;

/// Additive white Gaussian noise on the readout current, hardware side only.
///
/// Each sample gets noise with variance `I^2 / snr`, where `I` is the
/// noiseless current of the timer being read.
#[derive(Clone)]
pub struct AwgnModel {
    snr: f64,
    rng: ChaCha8Rng,
}

impl AwgnModel {
    /// `snr` is a linear power ratio; `f64::INFINITY` disables the noise.
    pub fn new(snr: f64, seed: u64) -> Result<Self> {
        if !(snr > 0.0) {
            return Err(Error::InvalidSnr(snr));
        }
        Ok(AwgnModel {
            snr,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn from_db(snr_db: f64, seed: u64) -> Result<Self> {
        Self::new(db_to_linear(snr_db), seed)
    }

    pub fn snr(&self) -> f64 {
        self.snr
    }

    fn perturb(&mut self, current: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        if self.snr.is_infinite() {
            return current;
        }
        current + z * current.abs() / self.snr.sqrt()
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Output of one successful chipset read.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadReceipt {
    /// Key bits `Q_L = s_{O_L} xor X`, in the order of the key indices.
    pub bits: Vec<u8>,
    /// Every index consumed by the read, key indices first (0-based).
    pub indices_consumed: Vec<usize>,
    pub sample_time: f64,
}

/// A fabricated chipset replica.
pub struct Chipset {
    id: String,
    timers: Arc<[TimerParams]>,
    consumed: Vec<bool>,
    key_adc: AdcConfig,
    hash_adc: AdcConfig,
    probe_neighbors: Vec<isize>,
    noise: Option<AwgnModel>,
}

impl fmt::Debug for Chipset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Chipset")
            .field("id", &self.id)
            .field("capacity", &self.timers.len())
            .field("unconsumed", &self.unconsumed_count())
            .field("key_adc", &self.key_adc)
            .field("hash_adc", &self.hash_adc)
            .finish_non_exhaustive()
    }
}

impl Chipset {
    /// Builds a replica holding `timers`. The hash ADC defaults to
    /// [`HASH_ADC_BITS`] with the key ADC's full scale.
    pub fn fabricate(id: impl Into<String>, timers: impl Into<Arc<[TimerParams]>>, key_adc: AdcConfig) -> Result<Self> {
        let timers = timers.into();
        if timers.is_empty() {
            return Err(Error::EmptyChipset);
        }
        let hash_adc = AdcConfig::new(HASH_ADC_BITS, key_adc.full_scale())?;
        Ok(Chipset {
            id: id.into(),
            consumed: vec![false; timers.len()],
            timers,
            key_adc,
            hash_adc,
            probe_neighbors: Vec::new(),
            noise: None,
        })
    }

    pub fn with_hash_adc(mut self, hash_adc: AdcConfig) -> Self {
        self.hash_adc = hash_adc;
        self
    }

    /// Offsets of timers destroyed together with a probed timer.
    pub fn with_probe_neighbors(mut self, offsets: Vec<isize>) -> Self {
        self.probe_neighbors = offsets;
        self
    }

    pub fn with_noise(mut self, noise: AwgnModel) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn capacity(&self) -> usize {
        self.timers.len()
    }

    pub fn key_adc(&self) -> AdcConfig {
        self.key_adc
    }

    pub fn hash_adc(&self) -> AdcConfig {
        self.hash_adc
    }

    pub fn is_consumed(&self, index: usize) -> bool {
        self.consumed.get(index).copied().unwrap_or(false)
    }

    pub fn unconsumed_count(&self) -> usize {
        self.consumed.iter().filter(|c| !**c).count()
    }

    pub fn unconsumed_indices(&self) -> Vec<usize> {
        self.consumed
            .iter()
            .enumerate()
            .filter_map(|(i, c)| (!c).then_some(i))
            .collect()
    }

    fn check_request(&self, key_idx: &[usize], hash_idx: &[usize]) -> Result<()> {
        let capacity = self.capacity();
        // 0 = unseen, 1 = key, 2 = hash
        let mut seen = vec![0u8; capacity];
        for (role, list) in [(1u8, key_idx), (2u8, hash_idx)] {
            for &i in list {
                if i >= capacity {
                    return Err(Error::IndexOutOfRange { index: i + 1, capacity });
                }
                match seen[i] {
                    0 => seen[i] = role,
                    r if r == role => return Err(Error::DuplicateIndex { index: i + 1 }),
                    _ => return Err(Error::OverlappingIndices { index: i + 1 }),
                }
            }
        }
        if let Some(&i) = key_idx.iter().chain(hash_idx).find(|&&i| self.consumed[i]) {
            return Err(Error::Consumed { index: i + 1 });
        }
        Ok(())
    }

    fn measure(&mut self, index: usize, adc: AdcConfig, t: f64) -> Result<u8> {
        let mut current = self.timers[index].current_at(t)?;
        if let Some(noise) = self.noise.as_mut() {
            current = noise.perturb(current);
        }
        Ok(adc.lsb(current))
    }

    /// Reads the key timers `key_idx` masked by the XOR of the hash timers
    /// `hash_idx`, all sampled at `t`.
    ///
    /// A rejected request consumes nothing. On success every listed timer is
    /// consumed.
    pub fn generate_key_output(&mut self, key_idx: &[usize], hash_idx: &[usize], t: f64) -> Result<ReadReceipt> {
        self.check_request(key_idx, hash_idx)?;
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain { arg: f64::NAN, t });
        }

        let mut mask = 0u8;
        for &h in hash_idx {
            mask ^= self.measure(h, self.hash_adc, t)?;
        }
        let mut bits = Vec::with_capacity(key_idx.len());
        for &o in key_idx {
            bits.push(self.measure(o, self.key_adc, t)? ^ mask);
        }

        for &i in key_idx.iter().chain(hash_idx) {
            self.consumed[i] = true;
        }
        Ok(ReadReceipt {
            bits,
            indices_consumed: key_idx.iter().chain(hash_idx).copied().collect(),
            sample_time: t,
        })
    }

    /// Attempts to read a timer's raw state outside the protocol. Always
    /// fails; the probed timer and its configured neighbors are destroyed.
    pub fn raw_state_probe(&mut self, index: usize) -> Result<Infallible> {
        let capacity = self.capacity();
        if index >= capacity {
            return Err(Error::IndexOutOfRange {
                index: index + 1,
                capacity,
            });
        }
        self.consumed[index] = true;
        for &off in &self.probe_neighbors {
            let j = index as isize + off;
            if (0..capacity as isize).contains(&j) {
                self.consumed[j as usize] = true;
            }
        }
        Err(Error::TamperDetected { index: index + 1 })
    }

    pub fn ledger_snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            id: self.id.clone(),
            capacity: self.capacity(),
            consumed: self
                .consumed
                .iter()
                .enumerate()
                .filter_map(|(i, c)| c.then_some(i + 1))
                .collect(),
        }
    }

    /// Marks every timer in `snapshot` as consumed. Never un-consumes.
    pub fn apply_ledger(&mut self, snapshot: &LedgerSnapshot) -> Result<()> {
        if snapshot.id != self.id || snapshot.capacity != self.capacity() {
            return Err(Error::Config(format!(
                "ledger for {}/{} does not match chipset {}/{}",
                snapshot.id,
                snapshot.capacity,
                self.id,
                self.capacity()
            )));
        }
        for &i in &snapshot.consumed {
            if i == 0 || i > self.capacity() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    capacity: self.capacity(),
                });
            }
        }
        for &i in &snapshot.consumed {
            self.consumed[i - 1] = true;
        }
        Ok(())
    }
}

/// Consumed-ledger export, 1-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub id: String,
    pub capacity: usize,
    pub consumed: Vec<usize>,
}

/// Fabrication manifest.
///
/// Exactly one of `seed` (tuples drawn from the configured ranges) or
/// `params` (explicit tuples) must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChipsetManifest {
    pub id: String,
    #[serde(rename = "C")]
    pub capacity: usize,
    pub key_adc_bits: u32,
    #[serde(default = "default_hash_bits")]
    pub hash_adc_bits: u32,
    #[serde(default = "default_full_scale")]
    pub full_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<TimerParams>>,
}

fn default_hash_bits() -> u32 {
    HASH_ADC_BITS
}

fn default_full_scale() -> f64 {
    1.0
}

impl ChipsetManifest {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Resolves the timer tuples the manifest describes.
    pub fn timers(&self, ranges: &ParamRanges) -> Result<Vec<TimerParams>> {
        match (&self.seed, &self.params) {
            (Some(seed), None) => {
                ranges.validate()?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok(ranges.sample_many(self.capacity, &mut rng))
            }
            (None, Some(params)) => {
                if params.len() != self.capacity {
                    return Err(Error::Config(format!(
                        "manifest lists {} tuples but C = {}",
                        params.len(),
                        self.capacity
                    )));
                }
                Ok(params.clone())
            }
            _ => Err(Error::Config("manifest needs exactly one of `seed` or `params`".into())),
        }
    }

    pub fn key_adc(&self) -> Result<AdcConfig> {
        AdcConfig::new(self.key_adc_bits, self.full_scale)
    }

    pub fn hash_adc(&self) -> Result<AdcConfig> {
        AdcConfig::new(self.hash_adc_bits, self.full_scale)
    }

    pub fn fabricate(&self, ranges: &ParamRanges) -> Result<Chipset> {
        let timers = self.timers(ranges)?;
        Ok(Chipset::fabricate(self.id.clone(), timers, self.key_adc()?)?.with_hash_adc(self.hash_adc()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timer_model::Interval;

    fn chip(c: usize, seed: u64) -> Chipset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let timers = ParamRanges::default().sample_many(c, &mut rng);
        Chipset::fabricate("chip", timers, AdcConfig::new(12, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn empty_fabrication_fails() {
        let r = Chipset::fabricate("x", Vec::<TimerParams>::new(), AdcConfig::new(8, 1.0).unwrap());
        assert!(matches!(r, Err(Error::EmptyChipset)));
    }

    #[test]
    fn replicas_agree() {
        let mut a = chip(64, 1);
        let mut b = chip(64, 1);
        let ra = a.generate_key_output(&[0, 1, 2, 3], &[10, 11, 12], 5000.0).unwrap();
        let rb = b.generate_key_output(&[0, 1, 2, 3], &[10, 11, 12], 5000.0).unwrap();
        assert_eq!(ra.bits, rb.bits);
    }

    #[test]
    fn rejection_cases() {
        let mut c = chip(16, 2);
        assert!(matches!(
            c.generate_key_output(&[0, 1], &[1, 2], 1.0),
            Err(Error::OverlappingIndices { index: 2 })
        ));
        assert!(matches!(
            c.generate_key_output(&[0, 0], &[1], 1.0),
            Err(Error::DuplicateIndex { index: 1 })
        ));
        assert!(matches!(
            c.generate_key_output(&[16], &[1], 1.0),
            Err(Error::IndexOutOfRange {
                index: 17,
                capacity: 16
            })
        ));
        assert_eq!(c.unconsumed_count(), 16);
        c.generate_key_output(&[3], &[4], 1.0).unwrap();
        assert!(matches!(
            c.generate_key_output(&[5], &[4], 2.0),
            Err(Error::Consumed { index: 5 })
        ));
        assert!(!c.is_consumed(5));
    }

    #[test]
    fn probe_destroys_neighbors_when_configured() {
        let mut c = chip(10, 3).with_probe_neighbors(vec![-1, 1]);
        assert!(matches!(c.raw_state_probe(0), Err(Error::TamperDetected { index: 1 })));
        assert!(c.is_consumed(0) && c.is_consumed(1) && !c.is_consumed(2));
        let _ = c.raw_state_probe(9);
        assert!(c.is_consumed(8) && c.is_consumed(9));
        assert!(matches!(c.raw_state_probe(10), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn key_bits_are_masked_by_single_hash_bit() {
        let iv = |v| Interval::new(v, v);
        let ranges = ParamRanges {
            p0: iv(std::f64::consts::E),
            p1: iv(1e-12),
            p2: iv(1.0),
            p3: iv(1.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let timers = ranges.sample_many(4, &mut rng);
        let adc = AdcConfig::new(12, 1.0).unwrap();
        let mut c = Chipset::fabricate("c", timers.clone(), adc).unwrap();
        let hash_bit = timers[3].bit_at(&c.hash_adc(), 0.0).unwrap();
        let key_bits: Vec<u8> = (0..3).map(|i| timers[i].bit_at(&adc, 0.0).unwrap()).collect();
        let r = c.generate_key_output(&[0, 1, 2], &[3], 0.0).unwrap();
        let expect: Vec<u8> = key_bits.iter().map(|b| b ^ hash_bit).collect();
        assert_eq!(r.bits, expect);
    }

    #[test]
    fn ledger_snapshot_round_trip() {
        let mut a = chip(8, 4);
        a.generate_key_output(&[1, 2], &[7], 10.0).unwrap();
        let snap = a.ledger_snapshot();
        assert_eq!(snap.consumed, vec![2, 3, 8]);
        let json = serde_json::to_string(&snap).unwrap();
        let mut b = chip(8, 4);
        b.apply_ledger(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(b.unconsumed_indices(), a.unconsumed_indices());
    }

    #[test]
    fn manifest_seed_or_params() {
        let m = ChipsetManifest::from_json(r#"{"id":"lot-7","C":32,"key_adc_bits":12,"hash_adc_bits":11,"seed":42}"#)
            .unwrap();
        let c = m.fabricate(&ParamRanges::default()).unwrap();
        assert_eq!(c.capacity(), 32);
        assert_eq!(c.hash_adc().bits(), 11);

        let both = r#"{"id":"x","C":1,"key_adc_bits":12,"seed":1,"params":[{"p0":2,"p1":1,"p2":1,"p3":1}]}"#;
        assert!(ChipsetManifest::from_json(both)
            .unwrap()
            .timers(&ParamRanges::default())
            .is_err());
        let short = r#"{"id":"x","C":2,"key_adc_bits":12,"params":[{"p0":2,"p1":1,"p2":1,"p3":1}]}"#;
        assert!(ChipsetManifest::from_json(short)
            .unwrap()
            .timers(&ParamRanges::default())
            .is_err());
    }

    #[test]
    fn noise_model_rejects_nonpositive_snr() {
        assert!(AwgnModel::new(0.0, 1).is_err());
        assert!(AwgnModel::new(-3.0, 1).is_err());
        assert!(AwgnModel::new(f64::INFINITY, 1).is_ok());
    }
}
