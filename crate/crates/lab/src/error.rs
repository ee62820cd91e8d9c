use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: unlearnlab_core::Error,
    },

    #[error("access audit violation in stage {stage}: {message}")]
    Audit { stage: String, message: String },

    #[error("missing series: {0}")]
    MissingSeries(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub fn stage(stage: &str, source: unlearnlab_core::Error) -> Self {
        match source {
            unlearnlab_core::Error::Audit(message) => LabError::Audit {
                stage: stage.to_string(),
                message,
            },
            source => LabError::Stage {
                stage: stage.to_string(),
                source,
            },
        }
    }

    /// Process exit status for the command line.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Audit { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
