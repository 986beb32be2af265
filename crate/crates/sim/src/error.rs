use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(epr_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    /// Process exit code: 2 for configuration problems, 3 for numerical
    /// failures and I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            SimError::Config(_) => 2,
            SimError::Numerical(_) | SimError::Io(_) => 3,
        }
    }
}

impl From<epr_core::Error> for SimError {
    fn from(e: epr_core::Error) -> Self {
        use epr_core::Error as E;
        match e {
            E::InvalidArgument(_) | E::Capacity(_) | E::StepTooCoarse { .. } => SimError::Config(e.to_string()),
            other => SimError::Numerical(other),
        }
    }
}
