//! Failure classes of a run, each owning one exit code. The classes mirror
//! where in the lifecycle the run died: before computation (schema), during
//! it (runtime), or after it completed with failing acceptance checks.

use fsde_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    /// Unreadable, unparsable, or invalid configuration. Exit 2.
    #[error("{0}")]
    Schema(String),
    /// The experiment started and died: blow-up, stiffness, or a broken
    /// internal invariant. Exit 3.
    #[error("{0}")]
    Runtime(String),
    /// The experiment completed and its results fail an acceptance check.
    /// Results stay on disk. Exit 4.
    #[error("{0}")]
    Acceptance(String),
    /// Filesystem trouble. Exit 1.
    #[error("{0}")]
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Schema(_) => 2,
            Failure::Runtime(_) => 3,
            Failure::Acceptance(_) => 4,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Failure::Io(_) => "io",
            Failure::Schema(_) => "schema",
            Failure::Runtime(_) => "runtime",
            Failure::Acceptance(_) => "acceptance",
        }
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Failure::Schema(msg.into())
    }
}

/// Parameter-class core errors are preconditions the config failed to meet;
/// blow-ups, stiffness refusals, and internal diagnostics are runtime deaths.
impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::BlowUp { .. } | CoreError::Stiffness { .. } | CoreError::Diagnostic(_) => {
                Failure::Runtime(e.to_string())
            }
            _ => Failure::Schema(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Failure>;
