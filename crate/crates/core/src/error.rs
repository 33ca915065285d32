use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid too coarse: dt = {dt} exceeds pulse_width/8 = {limit}")]
    GridTooCoarse { dt: f64, limit: f64 },

    #[error("filter too narrow: tau_a = {tau_a} is below 2*dt = {limit}")]
    FilterTooNarrow { tau_a: f64, limit: f64 },

    #[error("unsupported pulse moment order {0}; expected one of 2, 4, 6, 8")]
    UnsupportedMoment(u32),

    #[error("degenerate amplitude: {0}")]
    DegenerateAmplitude(String),

    #[error("non-finite value detected after step {step}")]
    NanDetected { step: usize },

    #[error("noise band of {noise} samples does not match grid of {grid} samples")]
    Aliasing { noise: usize, grid: usize },

    #[error("regime violation: {0}")]
    RegimeViolation(String),

    #[error("config invalid: {0}")]
    ConfigInvalid(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization failure: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::ConfigInvalid(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
