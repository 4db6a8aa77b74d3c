use std::path::Path;

/// Failures of the command line and experiment harness, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    pub fn read(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure::Data(format!("{}: {e}", path.display()))
    }

    pub fn write(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<pdc_core::Error> for Failure {
    fn from(e: pdc_core::Error) -> Self {
        use pdc_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Pairing(_) => Failure::Config(msg),
            E::Shape(_) | E::Data(_) | E::Normalization(_) | E::EmptyMask(_) => Failure::Data(msg),
            E::Alignment(_) | E::Diverged(_) | E::Sink(_) => Failure::Runtime(msg),
        }
    }
}

pub type Result<T, E = Failure> = std::result::Result<T, E>;
