use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of the called operation does not hold.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The input has no meaningful value for the requested quantity
    /// (zero waveform for PAPR or OBO, zero denominator for PTE).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The transmit envelope reaches the SSPA saturation voltage, where the
    /// inverse amplifier characteristic diverges.
    #[error("saturation infeasible: envelope {envelope:.6e} V is not below A_s = {a_s:.6e} V")]
    SaturationInfeasible { envelope: f64, a_s: f64 },

    /// No strictly feasible starting point exists for the requested limits.
    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
