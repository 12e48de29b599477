//! Behavioral model of a single self-powered tunneling timer.
//!
//! The readout current follows
//!
//! ```text
//! I(t) = p3 * exp(-p2 / ln(p1 * t + p0))
//! ```
//!
//! and a timer's binary state is the LSB of the ADC code `floor(I / delta)`.
//! Times are seconds since the chipset initialization epoch; currents are in
//! normalized units (ADC full scale defaults to 1.0).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported ADC resolution. Keeps every code exactly representable.
pub const MAX_ADC_BITS: u32 = 48;

/// The secret tuple `[p0, p1, p2, p3]` driving one timer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTimerParams", into = "RawTimerParams")]
pub struct TimerParams {
    p0: f64,
    p1: f64,
    p2: f64,
    p3: f64,
}

#[derive(Serialize, Deserialize)]
struct RawTimerParams {
    p0: f64,
    p1: f64,
    p2: f64,
    p3: f64,
}

impl TryFrom<RawTimerParams> for TimerParams {
    type Error = Error;

    fn try_from(raw: RawTimerParams) -> Result<Self> {
        TimerParams::new(raw.p0, raw.p1, raw.p2, raw.p3)
    }
}

impl From<TimerParams> for RawTimerParams {
    fn from(p: TimerParams) -> Self {
        RawTimerParams {
            p0: p.p0,
            p1: p.p1,
            p2: p.p2,
            p3: p.p3,
        }
    }
}

impl TimerParams {
    pub fn new(p0: f64, p1: f64, p2: f64, p3: f64) -> Result<Self> {
        let all_finite = [p0, p1, p2, p3].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidParams(format!(
                "non-finite tuple [{p0}, {p1}, {p2}, {p3}]"
            )));
        }
        if p0 <= 1.0 {
            return Err(Error::InvalidParams(format!("p0 = {p0} must exceed 1")));
        }
        for (name, v) in [("p1", p1), ("p2", p2), ("p3", p3)] {
            if v <= 0.0 {
                return Err(Error::InvalidParams(format!("{name} = {v} must be positive")));
            }
        }
        Ok(TimerParams { p0, p1, p2, p3 })
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p2(&self) -> f64 {
        self.p2
    }

    pub fn p3(&self) -> f64 {
        self.p3
    }

    fn log_term(&self, t: f64) -> Result<f64> {
        let arg = self.p1 * t + self.p0;
        if !(t >= 0.0) || !t.is_finite() || !(arg > 1.0) {
            return Err(Error::Domain { arg, t });
        }
        Ok(arg.ln())
    }

    /// Readout current at time `t` (seconds). Strictly increasing, bounded by `p3`.
    pub fn current_at(&self, t: f64) -> Result<f64> {
        let log = self.log_term(t)?;
        Ok(self.p3 * (-self.p2 / log).exp())
    }

    /// Floating-gate potential `beta*tox0 / ln(p1*t + p0)`, in volts.
    pub fn floating_gate_voltage(&self, beta_tox0: f64, t: f64) -> Result<f64> {
        let log = self.log_term(t)?;
        Ok(beta_tox0 / log)
    }

    /// The timer's binary state at `t` as seen through `adc`.
    pub fn bit_at(&self, adc: &AdcConfig, t: f64) -> Result<u8> {
        Ok(adc.lsb(self.current_at(t)?))
    }
}

/// Device-level quantities from which a timer tuple is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Initial floating-gate voltage (V).
    pub v0: f64,
    /// Tunneling junction area (m^2).
    pub a0: f64,
    /// Average oxide thickness (m).
    pub tox0: f64,
    /// Total floating-gate capacitance (F).
    pub ct: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Readout MOSFET characteristic current.
    pub i0: f64,
    /// Gate efficiency.
    pub kp: f64,
    /// Thermal voltage (V).
    pub ut: f64,
    /// Source voltage (V).
    pub vs: f64,
    /// Threshold voltage (V).
    pub vt: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v0", self.v0),
            ("a0", self.a0),
            ("tox0", self.tox0),
            ("ct", self.ct),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("i0", self.i0),
            ("kp", self.kp),
            ("ut", self.ut),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidPhysical(format!("{name} = {v} must be positive")));
            }
        }
        for (name, v) in [("vs", self.vs), ("vt", self.vt)] {
            if !v.is_finite() {
                return Err(Error::InvalidPhysical(format!("{name} = {v} must be finite")));
            }
        }
        Ok(())
    }

    /// `beta * tox0`, the voltage scale of the floating-gate discharge.
    pub fn beta_tox0(&self) -> f64 {
        self.beta * self.tox0
    }

    /// Maps device quantities onto the behavioral tuple.
    pub fn to_timer_params(&self) -> Result<TimerParams> {
        self.validate()?;
        let bt = self.beta_tox0();
        let p0 = (bt / self.v0).exp();
        let p1 = self.a0 * self.alpha * self.beta / (self.ct * self.tox0);
        let p2 = (self.kp / self.ut) * bt;
        let p3 = self.i0 * (self.kp * (self.vs - self.vt) / self.ut).exp();
        TimerParams::new(p0, p1, p2, p3).map_err(|e| match e {
            Error::InvalidParams(msg) => Error::InvalidPhysical(format!("derived tuple: {msg}")),
            other => other,
        })
    }
}

/// See [`PhysicalParams::to_timer_params`].
pub fn params_from_physical(phys: &PhysicalParams) -> Result<TimerParams> {
    phys.to_timer_params()
}

/// An ideal `bits`-bit ADC spanning `[0, full_scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcConfig {
    bits: u32,
    full_scale: f64,
}

impl AdcConfig {
    pub fn new(bits: u32, full_scale: f64) -> Result<Self> {
        if bits == 0 || bits > MAX_ADC_BITS {
            return Err(Error::InvalidAdc(format!(
                "resolution {bits} outside 1..={MAX_ADC_BITS}"
            )));
        }
        if !(full_scale > 0.0) || !full_scale.is_finite() {
            return Err(Error::InvalidAdc(format!("full scale {full_scale} must be positive")));
        }
        Ok(AdcConfig { bits, full_scale })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn full_scale(&self) -> f64 {
        self.full_scale
    }

    /// Resolution `full_scale / 2^bits`.
    pub fn resolution(&self) -> f64 {
        self.full_scale / (1u64 << self.bits) as f64
    }

    /// Integer code `floor(current / delta)`. No saturation is applied.
    pub fn code(&self, current: f64) -> i64 {
        (current / self.resolution()).floor() as i64
    }

    /// Least-significant bit of the code.
    pub fn lsb(&self, current: f64) -> u8 {
        self.code(current).rem_euclid(2) as u8
    }
}

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Interval { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(iv: Interval) -> Self {
        [iv.lo, iv.hi]
    }
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo > self.hi {
            return Err(Error::InvalidRange(format!(
                "{name}: [{}, {}] is empty or non-finite",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// Per-coordinate sampling intervals for timer tuples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRanges {
    pub p0: Interval,
    pub p1: Interval,
    pub p2: Interval,
    pub p3: Interval,
}

impl Default for ParamRanges {
    /// One device family with small fabrication spread. Calibration values,
    /// not hardware measurements.
    fn default() -> Self {
        ParamRanges {
            p0: Interval::new(15.0, 25.0),
            p1: Interval::new(0.8, 1.2),
            p2: Interval::new(9.8, 10.2),
            p3: Interval::new(0.72, 0.78),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        self.p0.validate("p0")?;
        self.p1.validate("p1")?;
        self.p2.validate("p2")?;
        self.p3.validate("p3")?;
        if self.p0.lo <= 1.0 {
            return Err(Error::InvalidRange(format!(
                "p0 lower bound {} must exceed 1",
                self.p0.lo
            )));
        }
        for (name, iv) in [("p1", self.p1), ("p2", self.p2), ("p3", self.p3)] {
            if iv.lo <= 0.0 {
                return Err(Error::InvalidRange(format!(
                    "{name} lower bound {} must be positive",
                    iv.lo
                )));
            }
        }
        Ok(())
    }

    /// Draws one tuple, uniform per coordinate. Call [`Self::validate`] first.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TimerParams {
        let p0 = self.p0.sample(rng);
        let p1 = self.p1.sample(rng);
        let p2 = self.p2.sample(rng);
        let p3 = self.p3.sample(rng);
        TimerParams { p0, p1, p2, p3 }
    }

    pub fn sample_many<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<TimerParams> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

/// Draws one tuple deterministically from `seed`.
pub fn sample_random_params(ranges: &ParamRanges, seed: u64) -> Result<TimerParams> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ranges.sample(&mut rng))
}
