use thiserror::Error;

use crate::fock::{ModeId, Spatial};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("null state: all amplitudes are zero")]
    NullState,

    #[error("state needs {photons} photons but the space is truncated at {max}")]
    TruncationExceeded { photons: u32, max: u8 },

    #[error("time bin {bin} outside the configured {slots} slots")]
    SlotOutOfRange { bin: i64, slots: u8 },

    #[error("port {0:?} is not declared in this Fock space")]
    UnknownPort(Spatial),

    #[error("beam splitter ports must differ (got {0:?} twice)")]
    SamePort(Spatial),

    #[error("states live in different Fock spaces")]
    SpaceMismatch,

    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("expected exactly {expected} photon(s) across {modes:?}, found {found}")]
    PhotonNumber {
        expected: u32,
        found: u32,
        modes: Vec<ModeId>,
    },

    #[error("photon found in unexpected time bin {0}")]
    UnexpectedSlot(u8),

    #[error("composed click probability {0} exceeds 1")]
    ProbabilityOverflow(f64),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub(crate) fn check_range(name: &'static str, value: f64, lo: f64, hi: f64, range: &'static str) -> Result<()> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(Error::OutOfRange { name, value, range })
    }
}
