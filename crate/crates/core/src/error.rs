use thiserror::Error;

/// Errors raised by scene validation and the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("array must contain at least one emitter")]
    EmptyArray,

    #[error("dipole orientation has zero norm")]
    ZeroDipole,

    #[error("waveguide emitters must lie on the axis; emitter {index} has transverse offset {offset:e}")]
    NonCollinear { index: usize, offset: f64 },

    #[error("emitters {i} and {j} coincide (separation {separation:e} wavelengths)")]
    CoincidentEmitters { i: usize, j: usize, separation: f64 },

    #[error("operation requires a waveguide scene")]
    RequiresWaveguide,

    #[error("operation requires a free-space scene")]
    RequiresFreeSpace,

    #[error("linear system is singular at laser detuning {detuning}: {hint}")]
    Singular { detuning: f64, hint: &'static str },

    #[error("steady-state residual {residual:e} exceeds tolerance {tolerance:e}")]
    InaccurateSolve { residual: f64, tolerance: f64 },

    #[error("low-excitation limit violated: max excitation {excitation:.3} > {limit}")]
    ExcitationTooHigh { excitation: f64, limit: f64 },

    #[error("eigensolver did not converge for a {dim}x{dim} matrix")]
    EigenNonConvergence { dim: usize },

    #[error("lattice sum did not converge: residual {residual:e} > tolerance {tolerance:e}")]
    LatticeSumNonConvergence { residual: f64, tolerance: f64 },

    #[error("quadrature did not converge: error estimate {estimate:e} > tolerance {tolerance:e}")]
    QuadratureNonConvergence { estimate: f64, tolerance: f64 },

    #[error("motion quadrature and Monte Carlo disagree by {difference:e} (limit {limit:e})")]
    QuadratureDisagreement { difference: f64, limit: f64 },

    #[error("need at least as many frequency samples ({samples}) as parameters ({parameters})")]
    TooFewSamples { samples: usize, parameters: usize },

    #[error("jacobian is rank deficient (rank {rank} of {parameters}, condition number {kappa:e})")]
    RankDeficient { rank: usize, parameters: usize, kappa: f64 },

    #[error("jacobian is ill-conditioned: kappa = {kappa:e} exceeds {limit:e}")]
    IllConditioned { kappa: f64, limit: f64 },

    #[error("reconstruction did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of a numerical method, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::InaccurateSolve { .. }
                | Error::EigenNonConvergence { .. }
                | Error::LatticeSumNonConvergence { .. }
                | Error::QuadratureNonConvergence { .. }
                | Error::QuadratureDisagreement { .. }
                | Error::NoConvergence { .. }
        )
    }
}
