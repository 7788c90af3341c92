use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("droplets {first} and {second} overlap at the {sensor} sensor")]
    Overlap {
        first: usize,
        second: usize,
        sensor: &'static str,
    },

    #[error("baseline window holds {got} samples, need at least {need}")]
    WindowTooShort { got: usize, need: usize },

    #[error("no rising edge found in trace")]
    NoSignal,

    #[error("bit sequences differ in length ({sent} sent, {received} received)")]
    LengthMismatch { sent: usize, received: usize },

    #[error("baseline channel {channel} is zero, cannot normalize")]
    ZeroBaseline { channel: usize },

    #[error("empty sample window")]
    EmptyWindow,

    #[error("reference library is empty")]
    EmptyLibrary,

    #[error("concentration not identifiable: {0}")]
    Unidentifiable(&'static str),

    #[error("no pulse above zero in signal")]
    NoPulse,

    #[error("signal has {runs} disjoint runs above half maximum")]
    Ambiguous { runs: usize },

    #[error("cannot match droplets between sensors ({ir} IR pulses, {spectral} spectral notches)")]
    UnmatchedDroplet { ir: usize, spectral: usize },

    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("non-uniform sampling at line {line}")]
    NonUniformSampling { line: usize },

    #[error("line {line}: expected {expected} channel columns, found {found}")]
    ChannelCountMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
