use std::fmt;

/// Pipeline stage, used to attribute failures. The discriminant is the
/// process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config = 2,
    Input = 3,
    Preprocess = 4,
    Fit = 5,
    Evaluate = 6,
    Output = 7,
    Simulate = 8,
    Diagnose = 9,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        self as i32
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Input => "input",
            Stage::Preprocess => "preprocess",
            Stage::Fit => "fit",
            Stage::Evaluate => "evaluate",
            Stage::Output => "output",
            Stage::Simulate => "simulate",
            Stage::Diagnose => "diagnose",
        })
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: anyhow::Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {:#}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

pub type StageResult<T> = Result<T, StageError>;

/// Tags an error with the stage it happened in.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T, E: Into<anyhow::Error>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|e| StageError {
            stage,
            source: e.into(),
        })
    }
}

pub fn fail<T>(stage: Stage, msg: impl Into<String>) -> StageResult<T> {
    Err(StageError {
        stage,
        source: anyhow::anyhow!(msg.into()),
    })
}
