use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot parse expression '{input}': {msg}")]
    Parse { input: String, msg: String },

    #[error("x = {x} lies outside the domain [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },

    #[error("x = {0} is a branch point; a one-sided evaluation needs a side")]
    Ambiguous(f64),

    #[error("x = {0} is a critical or singular point; the derivative is not defined there")]
    Singular(f64),

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("critical orbit of c = {location} hits the critical set at k = {k}")]
    CriticalOrbitHit { location: f64, k: usize },

    #[error("no admissible return neighbourhood within budget; worst window at [{lo}, {hi}]")]
    ReturnSearchExhausted { lo: f64, hi: f64 },

    #[error("tower is not uniformly expanding: measured expansion {0} <= 1")]
    NotExpanding(f64),

    #[error("parameter out of range: {0}")]
    Range(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
