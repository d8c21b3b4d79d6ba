use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("no checkpoint at {0}; run `train` first")]
    MissingCheckpoint(String),
    #[error("no input volume: pass --input or run `phantom` first")]
    MissingInput,
    #[error("no ground truth at {0}")]
    MissingTruth(String),
    #[error("no label maps to evaluate in {0}")]
    NothingToEvaluate(String),
    #[error("{artifact} was made with config {found}, current config is {expected} (use --force to override)")]
    HashMismatch { artifact: String, expected: String, found: String },
    #[error("{0}")]
    Config(#[from] jule3d::config::ConfigError),
    #[error("{0}")]
    Volume(#[from] jule3d::volume::VolumeError),
    #[error("{0}")]
    Sampler(#[from] jule3d::sampler::SamplerError),
    #[error("{0}")]
    Net(#[from] jule3d::net3d::NetError),
    #[error("{0}")]
    Jule(#[from] jule3d::jule::JuleError),
    #[error("{0}")]
    Segment(#[from] jule3d::segmenter::SegmentError),
    #[error("{0}")]
    Artifact(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::MissingCheckpoint(_) => "MissingCheckpoint",
            Self::MissingInput => "MissingInput",
            Self::MissingTruth(_) => "MissingTruth",
            Self::NothingToEvaluate(_) => "NothingToEvaluate",
            Self::HashMismatch { .. } => "HashMismatch",
            Self::Config(e) => match e {
                jule3d::config::ConfigError::UnknownKey(_) => "UnknownKey",
                jule3d::config::ConfigError::TypeError { .. } => "TypeError",
                jule3d::config::ConfigError::ConstraintViolation { .. } => "ConstraintViolation",
                jule3d::config::ConfigError::Syntax { .. } => "ConfigSyntax",
                jule3d::config::ConfigError::Io { .. } => "ConfigIo",
            },
            Self::Volume(_) => "VolumeError",
            Self::Sampler(_) => "SamplerError",
            Self::Net(_) => "NetError",
            Self::Jule(_) => "JuleError",
            Self::Segment(_) => "SegmentError",
            Self::Artifact(_) => "ArtifactInvalid",
            Self::Io(_) => "IoError",
        }
    }

    /// `error kind=<Kind> msg="<message>"` on one line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ").replace('"', "'");
        format!("error kind={} msg=\"{msg}\"", self.kind())
    }
}
