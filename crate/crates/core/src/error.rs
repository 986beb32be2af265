use alloc::string::String;

/// Errors raised by the simulation and reconstruction routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("channel is not physical: uncertainty-relation eigenvalue {eigenvalue:e} below tolerance")]
    ChannelNotPhysical { eigenvalue: f64 },

    #[error("degenerate measurement: variance {variance:e} of the measured quadrature is too small")]
    DegenerateMeasurement { variance: f64 },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("entanglement witness undefined: mean longitudinal spin {mean_spin:e} vanishes")]
    UndefinedWitness { mean_spin: f64 },

    #[error("stationary state is not unique (null-space dimension {dimension})")]
    Degeneracy { dimension: usize },

    #[error("ill-conditioned reconstruction: kappa^2 = {kappa2:e}")]
    IllConditionedReconstruction { kappa2: f64 },

    #[error("calibration undefined: first-pulse displacement {displacement:e} vanishes")]
    CalibrationUndefined { displacement: f64 },

    #[error("time step too coarse: gamma_s * dt = {product} (must be < 0.01)")]
    StepTooCoarse { product: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
