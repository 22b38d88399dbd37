use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("exponential overflow in segment {segment} (s*duration = {exponent})")]
    Overflow { segment: usize, exponent: f64 },
    #[error("degenerate simplex {0}")]
    DegenerateSimplex(usize),
    #[error("point {0:?} lies outside the domain")]
    OutOfDomain(Vec<f64>),
    #[error("map is not factorizable: {0}")]
    NotFactorizable(String),
    #[error("tower placement failed: {0}")]
    TowerPlacement(String),
    #[error("permutation conflict: cubes {first} and {second} both claim core {target}")]
    Conflict {
        first: usize,
        second: usize,
        target: usize,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("mixture has no mass")]
    DegenerateMixture,
    #[error("density degeneracy: {0}")]
    DensityDegenerate(String),
    #[error("interpolation isotopy is not invertible: {0}")]
    Isotopy(String),
    #[error("singular transport Jacobian at {0:?}")]
    SingularTransport(Vec<f64>),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("not a homeomorphism: {0}")]
    NotHomeomorphism(String),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
