use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown surface {0:?} (expected torus, disc or sphere)")]
    UnknownSurface(String),

    #[error("point ({x}, {y}, {z}) is outside the {surface} chart")]
    OutsideChart {
        surface: &'static str,
        x: f64,
        y: f64,
        z: f64,
    },

    #[error("advected point left the disc: |p| = {radius} at t = {time}")]
    StepOut { radius: f64, time: f64 },

    #[error("tube radius {tube_radius} too wide: {reason}")]
    TubeTooWide { tube_radius: f64, reason: String },

    #[error("points {i} and {j} coincide (separation {separation:e} below floor)")]
    CoincidentPoints { i: usize, j: usize, separation: f64 },

    #[error("configuration path is not closed (endpoint gap {gap:e})")]
    NotClosed { gap: f64 },

    #[error("relative lift of pair ({i}, {j}) is ambiguous at step {step}")]
    LiftAmbiguous { i: usize, j: usize, step: usize },

    #[error("degenerate crossing at step {step}: {reason}")]
    DegenerateCrossing { step: usize, reason: String },

    #[error("winding entry ({i}, {j}) = {value} is not integral")]
    NonIntegralWinding { i: usize, j: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Failures caused by the numerics of a run rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepOut { .. }
                | Error::TubeTooWide { .. }
                | Error::CoincidentPoints { .. }
                | Error::NotClosed { .. }
                | Error::LiftAmbiguous { .. }
                | Error::DegenerateCrossing { .. }
                | Error::NonIntegralWinding { .. }
        )
    }
}
