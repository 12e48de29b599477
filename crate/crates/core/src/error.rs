use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the key-distribution stack.
///
/// Timer indices carried by the chipset and protocol variants are 1-based,
/// matching the public message format.
#[derive(Debug, Error)]
pub enum Error {
    #[error("timer model undefined: ln({arg}) is not positive (t = {t})")]
    Domain { arg: f64, t: f64 },

    #[error("invalid timer parameters: {0}")]
    InvalidParams(String),

    #[error("invalid physical parameters: {0}")]
    InvalidPhysical(String),

    #[error("invalid ADC configuration: {0}")]
    InvalidAdc(String),

    #[error("invalid parameter range: {0}")]
    InvalidRange(String),

    #[error("cannot fabricate a chipset with zero timers")]
    EmptyChipset,

    #[error("timer {index} was already read or destroyed (tamper/desync)")]
    Consumed { index: usize },

    #[error("tamper detected: raw probe of timer {index} destroyed its state")]
    TamperDetected { index: usize },

    #[error("protocol violation: timer {index} appears in both key and hash sets")]
    OverlappingIndices { index: usize },

    #[error("protocol violation: timer {index} listed more than once")]
    DuplicateIndex { index: usize },

    #[error("timer index {index} is outside 1..={capacity}")]
    IndexOutOfRange { index: usize, capacity: usize },

    #[error("insufficient unconsumed timers: need {needed}, have {available}")]
    InsufficientTimers { needed: usize, available: usize },

    #[error("replay rejected: user {user} already used timer {index} of chipset {chipset}")]
    Replay {
        user: String,
        chipset: String,
        index: usize,
    },

    #[error("unknown chipset id {0:?}")]
    UnknownChipset(String),

    #[error("malformed key request: {0}")]
    MalformedRequest(String),

    #[error("length mismatch: expected {expected} bits, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("authentication failed: wrong key or tampered ciphertext")]
    AuthenticationFailed,

    #[error("no correction of weight <= {budget} matches the broadcast remainder")]
    ReconciliationFailed { budget: usize },

    #[error("syndrome search exceeded the operation cap of {cap}")]
    SearchBudgetExceeded { cap: u64 },

    #[error("invalid generator polynomial: {0}")]
    InvalidPolynomial(String),

    #[error("invalid SNR {0}: must be > 0")]
    InvalidSnr(f64),

    #[error("invalid entropy argument {0}: must lie in [0, 1]")]
    EntropyDomain(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("secret store error: {0}")]
    SecretStore(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input or configuration rather than a runtime fault.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParams(_)
                | Error::InvalidPhysical(_)
                | Error::InvalidAdc(_)
                | Error::InvalidRange(_)
                | Error::EmptyChipset
                | Error::InvalidPolynomial(_)
                | Error::InvalidSnr(_)
                | Error::Config(_)
        )
    }
}
