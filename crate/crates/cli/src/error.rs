use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    GenData,
    Linearize,
    Train,
    Invert,
    Ablate,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::Config => "config",
            Self::GenData => "gen-data",
            Self::Linearize => "linearize",
            Self::Train => "train",
            Self::Invert => "invert",
            Self::Ablate => "ablate",
            Self::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A failure tagged with the pipeline stage that produced it.
#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {message}")]
pub struct CliError {
    pub stage: Stage,
    pub message: String,
}

impl CliError {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        Self {
            stage,
            message: message.into(),
        }
    }

    pub fn from_core(stage: Stage, e: petal_core::Error) -> Self {
        Self::new(stage, e.to_string())
    }
}

/// Tags any displayable error with a stage.
pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> Result<T, CliError>;
}

impl<T, E: fmt::Display> StageContext<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(stage, e.to_string()))
    }
}
