use ctts_core::Error as CoreError;

/// Process exit codes.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_MISSING_UPSTREAM: i32 = 4;
pub const EXIT_RUNTIME: i32 = 5;

pub const STAGE_ORDER: &str = "prepare -> pretrain -> finetune -> synthesize -> evaluate -> report";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0} (stage order: {STAGE_ORDER})")]
    MissingUpstream(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::MissingUpstream(_) => EXIT_MISSING_UPSTREAM,
            CliError::Core(e) => match e {
                CoreError::Config(_) => EXIT_CONFIG,
                CoreError::Io { .. } | CoreError::Audio(_) | CoreError::ManifestLine { .. } => {
                    EXIT_IO
                }
                _ => EXIT_RUNTIME,
            },
        }
    }
}
