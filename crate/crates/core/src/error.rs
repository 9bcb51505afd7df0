use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("packet age must be at least 1")]
    ZeroPacketAge,
    #[error("arrival rate {rate} of terminal {terminal} is outside [0, 1]")]
    RateOutOfRange { terminal: usize, rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("arrival rate must lie in (0, 1], got {0}")]
    Lambda(f64),
    #[error("auxiliary cost must be finite and non-negative, got {0}")]
    Cost(f64),
    #[error("packet age must be at least 1")]
    Age,
    #[error("invalid grid: {0}")]
    Grid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("invalid truncation: {0}")]
    Truncation(String),
    #[error("value iteration did not converge in {iterations} iterations (span {span:e})")]
    NotConverged { iterations: usize, span: f64 },
    #[error("joint solver supports exactly 2 terminals, got {0}")]
    UnsupportedTerminalCount(usize),
    #[error("greedy policy is not of threshold form at a = {a}: schedules at d = {scheduled} but idles at d = {idle}")]
    NotThreshold { a: u64, scheduled: u64, idle: u64 },
    #[error("operation requires a {expected} value table")]
    WrongModel { expected: &'static str },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IpraError {
    #[error("transmission probability must lie in (0, 1], got {0}")]
    Probability(f64),
    #[error("index threshold must be finite and non-negative, got {0}")]
    Threshold(f64),
    #[error("frame lengths must be positive and the contention slot no longer than a frame")]
    Timing,
    #[error("empty trace")]
    EmptyTrace,
    #[error("empty search range {0}")]
    Range(&'static str),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Field-level scenario validation failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {message}")]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {}", join(.0))]
    Invalid(Vec<FieldError>),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Ipra(#[from] IpraError),
    #[error("trace output failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace output failed: {0}")]
    Csv(#[from] csv::Error),
}

fn join(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Problems with a scenario file, each kind reported distinctly.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid config: {}", join(.0))]
    Invalid(Vec<FieldError>),
}

impl ConfigError {
    /// One line per problem.
    pub fn diagnostics(&self) -> Vec<String> {
        match self {
            ConfigError::Invalid(errors) => errors.iter().map(ToString::to_string).collect(),
            other => vec![other.to_string()],
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("invalid override '{0}': {1}")]
    Override(String, String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Ipra(#[from] IpraError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("output failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("output failed: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Whether the failure lies in the user's configuration rather than at
    /// run time.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::UnknownPreset(_)
                | HarnessError::Override(..)
                | HarnessError::Sim(SimError::Invalid(_))
                | HarnessError::Ipra(IpraError::Probability(_) | IpraError::Threshold(_) | IpraError::Timing | IpraError::Range(_))
                | HarnessError::Param(_)
        )
    }
}
