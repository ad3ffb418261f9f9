use std::fmt;

/// Errors produced anywhere in the clustering pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated an operation's precondition (shape, range, emptiness).
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// A binary file did not match its declared layout.
    #[error("format error: {0}")]
    Format(String),

    /// Well-formed data that carries forbidden values (NaN, out-of-range, inconsistent shapes).
    #[error("validation error: {0}")]
    Validation(String),

    /// A line-oriented text file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// An error raised inside a named pipeline stage.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stages, used to attribute failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    BuildGraph,
    TrainConfidence,
    PredictConfidence,
    RebuildGraph,
    TrainConnectivity,
    PredictConnectivity,
    Partition,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::BuildGraph => "build-graph",
            Stage::TrainConfidence => "train-v",
            Stage::PredictConfidence => "infer-v",
            Stage::RebuildGraph => "rebuild-graph",
            Stage::TrainConnectivity => "train-e",
            Stage::PredictConnectivity => "infer-e",
            Stage::Partition => "partition",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(name)
    }
}

pub(crate) fn rejected(msg: impl Into<String>) -> Error {
    Error::RejectedInput(msg.into())
}

pub(crate) trait StageExt<T> {
    fn in_stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn in_stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
