use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("epoch length {epoch_len} must be positive and divide key period {key_period}")]
    InvalidClock { epoch_len: u64, key_period: u64 },
    #[error("epoch {epoch} is outside the window of the day-{day_index} key")]
    EpochOutsideKeyWindow { epoch: u64, day_index: u64 },
    #[error("exposure parameters must be positive")]
    InvalidExposureParams,
    #[error("key database line {line}: {reason}")]
    KeyDbFormat { line: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("failed to parse scenario config: {0}")]
    Parse(String),
}

impl ConfigError {
    pub fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field, reason: reason.into() }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ServerError {
    #[error("firewall rejected connection from source `{source_addr}` (threshold {threshold})")]
    FirewallRejected { source_addr: String, threshold: u32 },
    #[error("unknown account {0}")]
    UnknownAccount(u64),
    #[error("invalid covidcode")]
    InvalidCovidcode,
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("pool count must be at least 2, got {0}")]
    TooFewPools(usize),
    #[error("broadcast capacity exceeded: {requested} codes, at most {max} admissible")]
    CapacityExceeded { requested: usize, max: usize },
    #[error("server error during attack: {0}")]
    Server(#[from] ServerError),
    #[error("average speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
}

#[derive(Debug, Error)]
pub enum PoiError {
    #[error("invalid coordinates ({lat}, {lon})")]
    InvalidCoordinates { lat: f64, lon: f64 },
    #[error("no records match city `{0}`")]
    EmptyCityFilter(String),
    #[error("population must be positive")]
    ZeroPopulation,
    #[error("POI csv row {row}: {reason}")]
    Format { row: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
