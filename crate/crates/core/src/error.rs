use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("under-resolved grid for {what}: need n_per_axis >= {required}, have {have}")]
    Resolution {
        what: String,
        required: usize,
        have: usize,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("energy overshoot at t = {t}: e(t) - |u|^2 = {gap}")]
    EnergyOvershoot { t: f64, gap: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown {kind} '{name}' (available: {available})")]
    Unknown {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Invalid(_) | Error::Unknown { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
