//! Self-powered timer key distribution: timer model, one-time-read
//! chipsets, key-exchange protocols, CRC reconciliation and the attack,
//! noise and randomness studies built on them.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod chipset;
pub mod config;
pub mod ecc;
pub mod error;
pub mod protocol;
pub mod randomness;
pub mod timer_model;

pub use error::{Error, Result};
