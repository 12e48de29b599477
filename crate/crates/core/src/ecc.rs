//! CRC over GF(2) and server-side key reconciliation.
//!
//! Bit index 0 of a message is its highest-degree coefficient. Generator
//! polynomials are written in Koopman notation: the hex value holds every
//! coefficient except `x^0`, which is implicitly 1. `0x9C` is therefore
//! `x^8 + x^5 + x^4 + x^3 + 1` (normal form `0x139`).

use std::fmt;
use std::sync::Arc;

use rayon::slice::ParallelSliceMut;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Koopman form of the default degree-28 generator, HD 8 up to 483 data bits.
pub const DEFAULT_POLY_KOOPMAN: u64 = 0xBD1_BEC5;
pub const DEFAULT_HD_BUDGET: usize = 8;
pub const DEFAULT_KEY_LEN: usize = 284;
pub const DEFAULT_OP_CAP: u64 = 1_000_000_000;

/// Upper bound on entries in the largest precomputed syndrome table.
const MAX_TABLE_ENTRIES: u128 = 8_000_000;
/// Widest table the decoder will build.
const MAX_TABLE_WEIGHT: usize = 3;

/// A generator polynomial of degree 0..=63.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct GeneratorPolynomial {
    /// Every coefficient, bit `i` = coefficient of `x^i`.
    full: u128,
    degree: u32,
}

impl fmt::Debug for GeneratorPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GeneratorPolynomial(0x{:X}, degree {})", self.full, self.degree)
    }
}

impl GeneratorPolynomial {
    /// From all coefficients including the leading one.
    pub fn from_full(full: u128) -> Result<Self> {
        if full == 0 {
            return Err(Error::InvalidPolynomial("zero polynomial".into()));
        }
        let degree = 127 - full.leading_zeros();
        if degree > 63 {
            return Err(Error::InvalidPolynomial(format!("degree {degree} exceeds 63")));
        }
        if full & 1 == 0 {
            return Err(Error::InvalidPolynomial(format!("0x{full:X} has no constant term")));
        }
        Ok(GeneratorPolynomial { full, degree })
    }

    /// From the coefficients below `x^degree`.
    pub fn from_normal(normal: u64, degree: u32) -> Result<Self> {
        if degree > 63 || (degree < 64 && (normal as u128) >> degree != 0) {
            return Err(Error::InvalidPolynomial(format!(
                "0x{normal:X} does not fit below x^{degree}"
            )));
        }
        Self::from_full((1u128 << degree) | normal as u128)
    }

    /// From Koopman notation (implicit `+1`).
    pub fn from_koopman(koopman: u64) -> Result<Self> {
        if koopman == 0 {
            return Err(Error::InvalidPolynomial("Koopman value 0".into()));
        }
        Self::from_full(((koopman as u128) << 1) | 1)
    }

    /// Parses a Koopman hex string, with or without a `0x` prefix.
    pub fn parse_koopman(hex: &str) -> Result<Self> {
        let s = hex.trim();
        let s = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
        let k = u64::from_str_radix(s, 16).map_err(|e| Error::InvalidPolynomial(format!("{hex:?}: {e}")))?;
        Self::from_koopman(k)
    }

    /// The constant polynomial 1: every remainder is empty.
    pub fn one() -> Self {
        GeneratorPolynomial { full: 1, degree: 0 }
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn full(&self) -> u128 {
        self.full
    }

    /// Coefficients below the leading term.
    pub fn normal(&self) -> u64 {
        (self.full & ((1u128 << self.degree) - 1)) as u64
    }

    pub fn koopman(&self) -> u64 {
        (self.full >> 1) as u64
    }

    pub fn koopman_hex(&self) -> String {
        format!("0x{:X}", self.koopman())
    }

    fn mask(&self) -> u64 {
        ((1u128 << self.degree) - 1) as u64
    }

    /// `x * r mod g` for `r` already reduced.
    fn times_x(&self, r: u64) -> u64 {
        if self.degree == 0 {
            return 0;
        }
        let top = (r >> (self.degree - 1)) & 1;
        let shifted = (r << 1) & self.mask();
        if top == 1 {
            shifted ^ self.normal()
        } else {
            shifted
        }
    }
}

impl Serialize for GeneratorPolynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.koopman_hex())
    }
}

impl<'de> Deserialize<'de> for GeneratorPolynomial {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        GeneratorPolynomial::parse_koopman(&s).map_err(serde::de::Error::custom)
    }
}

/// The `n` coefficients of a CRC remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Remainder {
    value: u64,
    degree: u32,
}

impl Remainder {
    pub fn new(value: u64, degree: u32) -> Result<Self> {
        if degree > 63 || value >> degree != 0 {
            return Err(Error::InvalidPolynomial(format!(
                "remainder 0x{value:X} wider than {degree} bits"
            )));
        }
        Ok(Remainder { value, degree })
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Lowercase hex without prefix, as carried in a key request.
    pub fn to_hex(&self) -> String {
        format!("{:x}", self.value)
    }

    pub fn from_hex(hex: &str, degree: u32) -> Result<Self> {
        let v = u64::from_str_radix(hex, 16).map_err(|e| Error::MalformedRequest(format!("crc {hex:?}: {e}")))?;
        Self::new(v, degree).map_err(|e| Error::MalformedRequest(e.to_string()))
    }

    /// Coefficients from `x^(n-1)` down to `x^0`.
    pub fn bits(&self) -> Vec<u8> {
        (0..self.degree).rev().map(|i| ((self.value >> i) & 1) as u8).collect()
    }
}

/// Reconciliation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrcConfig {
    #[serde(rename = "polynomial")]
    pub poly: GeneratorPolynomial,
    pub hd_budget: usize,
    /// Total key bits covered by the CRC, effective bits plus `n`.
    pub key_len: usize,
    pub op_cap: u64,
}

impl Default for CrcConfig {
    fn default() -> Self {
        CrcConfig {
            poly: GeneratorPolynomial::from_koopman(DEFAULT_POLY_KOOPMAN).unwrap(),
            hd_budget: DEFAULT_HD_BUDGET,
            key_len: DEFAULT_KEY_LEN,
            op_cap: DEFAULT_OP_CAP,
        }
    }
}

impl CrcConfig {
    pub fn new(poly: GeneratorPolynomial, hd_budget: usize, key_len: usize) -> Result<Self> {
        let cfg = CrcConfig {
            poly,
            hd_budget,
            key_len,
            op_cap: DEFAULT_OP_CAP,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_op_cap(mut self, cap: u64) -> Self {
        self.op_cap = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.key_len < self.degree() as usize {
            return Err(Error::Config(format!(
                "key_len {} is shorter than the CRC degree {}",
                self.key_len,
                self.degree()
            )));
        }
        if self.key_len > u16::MAX as usize {
            return Err(Error::Config(format!("key_len {} too large", self.key_len)));
        }
        if self.hd_budget > self.key_len {
            return Err(Error::Config(format!(
                "hd_budget {} exceeds key_len {}",
                self.hd_budget, self.key_len
            )));
        }
        Ok(())
    }

    pub fn degree(&self) -> u32 {
        self.poly.degree()
    }

    pub fn effective_len(&self) -> usize {
        self.key_len - self.degree() as usize
    }
}

/// `(m(x) * x^n) mod g(x)`.
pub fn crc(m: &[u8], cfg: &CrcConfig) -> Result<Remainder> {
    if m.len() != cfg.key_len {
        return Err(Error::LengthMismatch {
            expected: cfg.key_len,
            actual: m.len(),
        });
    }
    Ok(crc_raw(m, &cfg.poly))
}

/// CRC of a message of any length.
pub fn crc_raw(m: &[u8], g: &GeneratorPolynomial) -> Remainder {
    let n = g.degree();
    if n == 0 {
        return Remainder { value: 0, degree: 0 };
    }
    let mut r = 0u64;
    for &bit in m {
        let feedback = ((r >> (n - 1)) as u8 & 1) ^ (bit & 1);
        r = (r << 1) & g.mask();
        if feedback == 1 {
            r ^= g.normal();
        }
    }
    Remainder { value: r, degree: n }
}

/// First `key_len - n` bits of a reconciled key.
pub fn effective_key(m: &[u8], cfg: &CrcConfig) -> Result<Vec<u8>> {
    if m.len() != cfg.key_len {
        return Err(Error::LengthMismatch {
            expected: cfg.key_len,
            actual: m.len(),
        });
    }
    Ok(m[..cfg.effective_len()].to_vec())
}

/// Bits of brute-force search space revealed by broadcasting the remainder.
pub fn security_reduction(cfg: &CrcConfig) -> u32 {
    cfg.degree()
}

/// Search-space exponent left for a `key_bits`-bit key once the remainder
/// of `cfg` is public.
pub fn remaining_search_exponent(key_bits: usize, cfg: &CrcConfig) -> usize {
    key_bits.saturating_sub(security_reduction(cfg) as usize)
}

#[derive(Clone, Copy)]
struct Entry<const K: usize> {
    syn: u64,
    idx: [u16; K],
}

/// Every weight-`K` pattern's syndrome, sorted by `(syndrome, indices)`.
#[derive(Default)]
struct Tables {
    t1: Vec<Entry<1>>,
    t2: Vec<Entry<2>>,
    t3: Vec<Entry<3>>,
}

fn build_table<const K: usize>(cols: &[u64]) -> Vec<Entry<K>> {
    let mut out = Vec::new();
    let mut comb = Combinations::new(cols.len(), K);
    while let Some(c) = comb.current() {
        let mut idx = [0u16; K];
        let mut syn = 0u64;
        for (slot, &i) in idx.iter_mut().zip(c) {
            *slot = i as u16;
            syn ^= cols[i];
        }
        out.push(Entry { syn, idx });
        comb.advance();
    }
    out.par_sort_unstable_by(|a, b| a.syn.cmp(&b.syn).then(a.idx.cmp(&b.idx)));
    out
}

/// Smallest entry with syndrome `syn` whose first index exceeds `after`.
fn lookup<const K: usize>(table: &[Entry<K>], syn: u64, after: Option<usize>) -> Option<[u16; K]> {
    let start = table.partition_point(|e| e.syn < syn);
    table[start..]
        .iter()
        .take_while(|e| e.syn == syn)
        .find(|e| after.is_none_or(|a| e.idx[0] as usize > a))
        .map(|e| e.idx)
}

/// Lexicographic `k`-subsets of `0..n`.
struct Combinations {
    n: usize,
    c: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            c: (0..k).collect(),
            done: k > n,
        }
    }

    fn current(&self) -> Option<&[usize]> {
        (!self.done).then_some(&self.c)
    }

    fn advance(&mut self) {
        let k = self.c.len();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if self.c[i] < self.n - k + i {
                self.c[i] += 1;
                for j in i + 1..k {
                    self.c[j] = self.c[j - 1] + 1;
                }
                return;
            }
        }
        self.done = true;
    }
}

/// Outcome of a successful reconciliation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reconciled {
    pub key: Vec<u8>,
    /// Flipped positions, ascending.
    pub flipped: Vec<usize>,
    /// Search operations spent.
    pub ops: u64,
}

impl Reconciled {
    pub fn weight(&self) -> usize {
        self.flipped.len()
    }
}

/// Minimum-weight syndrome decoder for one [`CrcConfig`].
///
/// Weights up to three are answered by table lookup. Heavier patterns
/// enumerate their lowest positions and look the remaining three up in the
/// weight-3 table. Cloning shares the tables.
#[derive(Clone)]
pub struct SyndromeDecoder {
    cfg: CrcConfig,
    cols: Arc<[u64]>,
    tables: Arc<Tables>,
    table_weight: usize,
}

impl fmt::Debug for SyndromeDecoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SyndromeDecoder")
            .field("cfg", &self.cfg)
            .field("table_weight", &self.table_weight)
            .finish()
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

impl SyndromeDecoder {
    pub fn new(cfg: CrcConfig) -> Result<Self> {
        cfg.validate()?;
        let len = cfg.key_len;
        // Column i is the syndrome of a single error at position i.
        let mut cols = vec![0u64; len];
        let mut r = if cfg.degree() == 0 { 0 } else { cfg.poly.normal() };
        for i in (0..len).rev() {
            cols[i] = r;
            r = cfg.poly.times_x(r);
        }

        let mut table_weight = cfg.hd_budget.min(MAX_TABLE_WEIGHT);
        while table_weight > 1 && binomial(len, table_weight) > MAX_TABLE_ENTRIES {
            table_weight -= 1;
        }
        let mut tables = Tables::default();
        if table_weight >= 1 {
            tables.t1 = build_table::<1>(&cols);
        }
        if table_weight >= 2 {
            tables.t2 = build_table::<2>(&cols);
        }
        if table_weight >= 3 {
            tables.t3 = build_table::<3>(&cols);
        }
        Ok(SyndromeDecoder {
            cfg,
            cols: cols.into(),
            tables: Arc::new(tables),
            table_weight,
        })
    }

    pub fn config(&self) -> &CrcConfig {
        &self.cfg
    }

    pub fn syndrome(&self, m_server: &[u8], r_user: &Remainder) -> Result<u64> {
        if r_user.degree() != self.cfg.degree() {
            return Err(Error::MalformedRequest(format!(
                "remainder has {} bits, polynomial degree is {}",
                r_user.degree(),
                self.cfg.degree()
            )));
        }
        Ok(crc(m_server, &self.cfg)?.value ^ r_user.value)
    }

    /// Finds the lightest error pattern within budget explaining the
    /// difference between `m_server` and the user's remainder, and returns
    /// `m_server` with it applied. Ties go to the lexicographically
    /// smallest ascending index list.
    pub fn reconcile(&self, m_server: &[u8], r_user: &Remainder) -> Result<Reconciled> {
        let s = self.syndrome(m_server, r_user)?;
        let (flipped, ops) = self.search(s)?;
        let mut key = m_server.to_vec();
        for &i in &flipped {
            key[i] ^= 1;
        }
        Ok(Reconciled { key, flipped, ops })
    }

    /// Minimum-weight error pattern with syndrome `s`.
    pub fn search(&self, s: u64) -> Result<(Vec<usize>, u64)> {
        let budget = self.cfg.hd_budget;
        let cap = self.cfg.op_cap;
        let mut ops = 1u64;
        if s == 0 {
            return Ok((Vec::new(), ops));
        }
        let k = self.table_weight;
        for w in 1..=budget.min(k) {
            ops += 1;
            let hit = match w {
                1 => lookup(&self.tables.t1, s, None).map(|i| i.to_vec()),
                2 => lookup(&self.tables.t2, s, None).map(|i| i.to_vec()),
                _ => lookup(&self.tables.t3, s, None).map(|i| i.to_vec()),
            };
            if let Some(idx) = hit {
                return Ok((idx.into_iter().map(usize::from).collect(), ops));
            }
        }
        for w in k + 1..=budget {
            let head = w - k;
            let len = self.cfg.key_len;
            if head + k > len {
                break;
            }
            let mut comb = Combinations::new(len - k, head);
            while let Some(c) = comb.current() {
                ops += 1;
                if ops > cap {
                    return Err(Error::SearchBudgetExceeded { cap });
                }
                let partial = c.iter().fold(s, |acc, &i| acc ^ self.cols[i]);
                let last = *c.last().unwrap();
                let tail: Option<Vec<usize>> = match k {
                    1 => lookup(&self.tables.t1, partial, Some(last)).map(|t| t.map(usize::from).to_vec()),
                    2 => lookup(&self.tables.t2, partial, Some(last)).map(|t| t.map(usize::from).to_vec()),
                    _ => lookup(&self.tables.t3, partial, Some(last)).map(|t| t.map(usize::from).to_vec()),
                };
                if let Some(tail) = tail {
                    let mut pattern = c.to_vec();
                    pattern.extend(tail);
                    return Ok((pattern, ops));
                }
                comb.advance();
            }
        }
        Err(Error::ReconciliationFailed { budget })
    }
}

/// One-shot reconciliation. Builds a decoder; reuse a [`SyndromeDecoder`]
/// when reconciling many keys.
pub fn reconcile(m_server: &[u8], r_user: &Remainder, cfg: &CrcConfig) -> Result<Vec<u8>> {
    Ok(SyndromeDecoder::new(*cfg)?.reconcile(m_server, r_user)?.key)
}
