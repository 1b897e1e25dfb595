//! Unified error type. Numerical failures carry the measured quantity that
//! tripped the check so callers can report actionable diagnostics.

use num_complex::Complex;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix is not hermitian: defect {defect:.3e} exceeds {tolerance:.1e}")]
    NotHermitian { defect: f64, tolerance: f64 },

    #[error(
        "ambiguous frame matching for labels {label_a} and {label_b}: \
         overlaps {overlap_a:.6} and {overlap_b:.6} differ by less than 1e-6; \
         the continuation step is too large"
    )]
    AmbiguousMatching {
        label_a: usize,
        label_b: usize,
        overlap_a: f64,
        overlap_b: f64,
    },

    #[error(
        "frame continuation lost track (best overlap {overlap:.3} below {floor:.2}); \
         refine the step"
    )]
    OverlapTooSmall { overlap: f64, floor: f64 },

    #[error(
        "derivative stencils disagree by {disagreement:.3e} (limit {limit:.1e}); \
         the projector varies too rapidly near t = {t:.6} (near-degeneracy?)"
    )]
    DerivativeInconsistent {
        t: f64,
        disagreement: f64,
        limit: f64,
    },

    #[error("point {z} lies outside the analyticity strip |Im z| < {halfwidth}")]
    OutsideStrip { z: Complex<f64>, halfwidth: f64 },

    #[error(
        "Newton iteration failed to converge after {iterations} iterations \
         (last iterate {last}, |f| = {residual:.3e})"
    )]
    NewtonDiverged {
        iterations: usize,
        last: Complex<f64>,
        residual: f64,
    },

    #[error(
        "step count would exceed cap {cap} for epsilon = {epsilon} at \
         tolerance {tolerance:.1e}"
    )]
    StepCapExceeded {
        epsilon: f64,
        tolerance: f64,
        cap: usize,
    },

    #[error(
        "transition probability did not converge in the interval length: \
         relative change {last_change:.3e} after {doublings} doublings (T = {t_final})"
    )]
    NoConvergenceInT {
        last_change: f64,
        doublings: usize,
        t_final: f64,
    },

    #[error(
        "model has no constant limits at t = ±∞; use the convergence-in-T mode \
         instead of a fixed truncation time"
    )]
    NotScatteringSafe,

    #[error(
        "closed-loop continuation returned a column with orthogonal-complement \
         weight {defect:.3e} (limit {limit:.1e}); the loop sampling is too coarse"
    )]
    ClosureNotProportional { defect: f64, limit: f64 },

    #[error(
        "loop closure permuted labels as {permutation:?}, which is neither the \
         identity nor a single exchange"
    )]
    UnexpectedMonodromy { permutation: Vec<usize> },

    #[error("expected {expected} crossing(s) in the search region, found {found}")]
    CrossingCount { expected: usize, found: usize },

    #[error(
        "spectral gap of the level-{q} hamiltonian closes near t = {t:.4} at \
         epsilon = {epsilon} (min gap {min_gap:.3e}); the scheme is only defined \
         below a model-dependent epsilon threshold"
    )]
    GapClosure {
        q: usize,
        t: f64,
        epsilon: f64,
        min_gap: f64,
    },

    #[error("projector rank {rank} does not match the requested effective dimension {expected}")]
    RankMismatch { rank: usize, expected: usize },

    #[error("decay fit needs at least {needed} usable points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("decay fit requires strictly positive probabilities; sample {index} is {value:.3e}")]
    NonPositiveProbability { index: usize, value: f64 },

    #[error("quadrature failed to converge: relative change {change:.3e} after {refinements} refinements")]
    QuadratureNotConverged { change: f64, refinements: usize },

    #[error("contour left the analyticity strip at {z}")]
    PathEscapedStrip { z: Complex<f64> },

    #[error("contour sample {z} approaches a crossing point within {distance:.3e} (minimum 1e-3)")]
    PathTooCloseToCrossing { z: Complex<f64>, distance: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
