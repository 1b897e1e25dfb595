//! Transition estimates assembled from complex crossing data, and decay-law
//! extraction from numerical sweeps.
//!
//! For a single generic crossing z₀ of the branch pair (1,2) the probability
//! of crossing the gap behaves as
//!
//!   P ≈ e^{2 Im θ21} · e^{2 Im ∮ e₁ / ε} · (1 + O(ε)),
//!
//! where the loop integral runs around the rectangle based on the real axis
//! enclosing z₀ and θ21 is the geometric closure phase of the transported
//! eigenframe. Several crossings in a cascade contribute multiplicatively,
//! one factor per crossing with its own branch pair. The module computes
//! these estimates, fits measured sweeps ln P vs 1/ε, and exposes the pure
//! linear-sweep exponent as a reference point.

use crate::complexplane::{
    crossing_census, dissipativity_along, geometric_prefactor_on, half_action_height,
    loop_integral, rectangle_loop, trace_level_line, CrossingPoint, DissipativityReport, LineEnd,
};
use crate::error::{Error, Result};
use crate::models::HamiltonianModel;

/// Census resolution used when locating the crossings behind an estimate.
const CENSUS_GRID: usize = 41;
/// Lower edge of the census window; crossings below this height have no room
/// for a loop between them and the real axis.
const CENSUS_IM_FLOOR: f64 = 0.05;
/// The census looks no higher than this, and never beyond 90% of the strip.
const CENSUS_IM_CAP: f64 = 1.2;
/// Level lines for the dissipativity report are traced with this step.
const LEVEL_LINE_STEP: f64 = 0.01;
/// The report path starts this far to the left of the first crossing and ends
/// this far to the right of the last one.
const LEVEL_LINE_OVERHANG: f64 = 4.0;

/// Least-squares decay law P = C e^{−2γ/ε} extracted from a sweep.
#[derive(Debug, Clone)]
pub struct DecayFit {
    /// Decay rate γ, from the slope of ln P against 1/ε.
    pub gamma: f64,
    /// Fitted prefactor C.
    pub prefactor: f64,
    /// Coefficient of determination of the line on (1/ε, ln P).
    pub r_squared: f64,
    /// Sweep grid, in input order.
    pub epsilons: Vec<f64>,
    /// ln P residuals against the fitted line, same order.
    pub residuals: Vec<f64>,
}

/// One crossing's multiplicative share of an estimate.
#[derive(Debug, Clone)]
pub struct CrossingContribution {
    pub crossing: CrossingPoint,
    /// 2 Im ∮ e_j around this crossing (j the lower branch of its pair);
    /// enters the probability as exp(· / ε).
    pub exponent_per_eps: f64,
    /// 2 Im θ of the frame closure; enters as exp(·).
    pub log_prefactor: f64,
    /// Dissipativity of a level line traced below this crossing's pair, when
    /// the tracer connects; reported, not enforced.
    pub dissipativity: Option<DissipativityReport>,
}

/// A closed-form transition estimate at fixed ε.
#[derive(Debug, Clone)]
pub struct AsymptoticEstimate {
    /// exp(log_prefactor + exponent_per_eps / ε).
    pub value: f64,
    pub epsilon: f64,
    /// Sum of the per-crossing loop exponents.
    pub exponent_per_eps: f64,
    /// Sum of the per-crossing closure factors.
    pub log_prefactor: f64,
    pub contributions: Vec<CrossingContribution>,
}

impl AsymptoticEstimate {
    /// Estimates are probabilities; values outside [0, 1] mean ε is outside
    /// the regime where the leading-order formula can be trusted.
    pub fn in_unit_interval(&self) -> bool {
        (0.0..=1.0).contains(&self.value)
    }
}

/// Exponent per unit 1/ε of the pure linear sweep: −π δ²/(2a). The δ → 0
/// limit is 0 (no gap, no suppression).
pub fn lz_exponent(rate: f64, coupling: f64) -> f64 {
    assert!(rate > 0.0, "sweep rate must be positive");
    -std::f64::consts::PI * coupling * coupling / (2.0 * rate)
}

/// Fit ln P = ln C − 2γ/ε by unweighted least squares.
pub fn fit_decay_rate(samples: &[(f64, f64)]) -> Result<DecayFit> {
    if samples.len() < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: samples.len() });
    }
    for (index, &(eps, p)) in samples.iter().enumerate() {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {eps} at position {index}"
            )));
        }
        if !(p > 0.0) {
            return Err(Error::NonPositiveProbability { index, value: p });
        }
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|&(eps, _)| 1.0 / eps).collect();
    let ys: Vec<f64> = samples.iter().map(|&(_, p)| p.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidArgument(
            "decay fit needs at least two distinct epsilon values".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let residuals: Vec<f64> =
        xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let r_squared = if ss_tot > 1e-300 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(DecayFit {
        gamma: -0.5 * slope,
        prefactor: intercept.exp(),
        r_squared,
        epsilons: samples.iter().map(|&(eps, _)| eps).collect(),
        residuals,
    })
}

fn census_im_range(model: &HamiltonianModel) -> (f64, f64) {
    (CENSUS_IM_FLOOR, CENSUS_IM_CAP.min(0.9 * model.strip_halfwidth()))
}

/// Evaluate one crossing's factors: loop exponent, closure prefactor, and a
/// dissipativity report along a level line spanning `(re_from, re_to)`.
fn contribution(
    model: &HamiltonianModel,
    crossing: &CrossingPoint,
    span: (f64, f64),
) -> Result<CrossingContribution> {
    let path = rectangle_loop(model, crossing, None, None)?;
    let lower = crossing.pair.0;
    let integral = loop_integral(model, &path, lower)?;
    if integral.returned_as_label != crossing.pair.1 {
        return Err(Error::UnexpectedMonodromy {
            permutation: vec![integral.returned_as_label, lower],
        });
    }
    let prefactor = geometric_prefactor_on(model, &path, lower)?;
    let seed_height = half_action_height(model, crossing.pair, integral.value.im.abs(), span.0);
    let dissipativity = trace_level_line(
        model,
        crate::C64::new(span.0, seed_height),
        crossing.pair,
        span.1,
        LEVEL_LINE_STEP,
    )
    .ok()
    .filter(|line| line.end == LineEnd::ReachedGoal)
    .and_then(|line| dissipativity_along(model, &line.points, crossing.pair).ok());
    Ok(CrossingContribution {
        crossing: crossing.clone(),
        exponent_per_eps: 2.0 * integral.value.im,
        log_prefactor: 2.0 * prefactor.theta_im,
        dissipativity,
    })
}

fn assemble(epsilon: f64, contributions: Vec<CrossingContribution>) -> AsymptoticEstimate {
    let exponent_per_eps: f64 = contributions.iter().map(|c| c.exponent_per_eps).sum();
    let log_prefactor: f64 = contributions.iter().map(|c| c.log_prefactor).sum();
    AsymptoticEstimate {
        value: (log_prefactor + exponent_per_eps / epsilon).exp(),
        epsilon,
        exponent_per_eps,
        log_prefactor,
        contributions,
    }
}

/// Single-crossing estimate for a two-level model.
///
/// Requires exactly one crossing in the searched upper-strip window
/// (Re ∈ (−2, 2)); several crossings put the model outside the regime this
/// formula covers, and the count mismatch is reported as an error.
pub fn theorem1_estimate(model: &HamiltonianModel, epsilon: f64) -> Result<AsymptoticEstimate> {
    if model.dimension() != 2 {
        return Err(Error::InvalidArgument(format!(
            "single-crossing estimate needs a two-level model, got dimension {}",
            model.dimension()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let crossings = crossing_census(model, (-2.0, 2.0), census_im_range(model), CENSUS_GRID)?;
    if crossings.len() != 1 {
        return Err(Error::CrossingCount { expected: 1, found: crossings.len() });
    }
    let z0 = crossings[0].z0;
    let span = (z0.re - LEVEL_LINE_OVERHANG, z0.re + LEVEL_LINE_OVERHANG);
    let c = contribution(model, &crossings[0], span)?;
    Ok(assemble(epsilon, vec![c]))
}

/// Two-crossing estimate for a three-level cascade: the product of the
/// factors of the (1,2) crossing and the (2,3) crossing.
///
/// Checks that the two crossings couple consecutive pairs in order, and that
/// the spectator branch closes trivially around each loop.
pub fn theorem1prime_estimate(model: &HamiltonianModel, epsilon: f64) -> Result<AsymptoticEstimate> {
    if model.dimension() != 3 {
        return Err(Error::InvalidArgument(format!(
            "cascade estimate needs a three-level model, got dimension {}",
            model.dimension()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let crossings = crossing_census(model, (-2.5, 2.5), census_im_range(model), CENSUS_GRID)?;
    if crossings.len() != 2 {
        return Err(Error::CrossingCount { expected: 2, found: crossings.len() });
    }
    if crossings[0].pair != (1, 2) || crossings[1].pair != (2, 3) {
        return Err(Error::InvalidArgument(format!(
            "cascade estimate needs crossings coupling (1,2) then (2,3), got {:?} and {:?}",
            crossings[0].pair, crossings[1].pair
        )));
    }
    // The level not involved in a crossing must come back to itself around
    // that crossing's loop, otherwise the per-crossing factorization breaks.
    for (crossing, spectator) in [(&crossings[0], 3usize), (&crossings[1], 1usize)] {
        let path = rectangle_loop(model, crossing, None, None)?;
        let closed = loop_integral(model, &path, spectator)?;
        if closed.returned_as_label != spectator {
            return Err(Error::UnexpectedMonodromy {
                permutation: vec![closed.returned_as_label, spectator],
            });
        }
    }
    let span = (
        crossings[0].z0.re - LEVEL_LINE_OVERHANG,
        crossings[1].z0.re + LEVEL_LINE_OVERHANG,
    );
    let parts = vec![
        contribution(model, &crossings[0], span)?,
        contribution(model, &crossings[1], span)?,
    ];
    Ok(assemble(epsilon, parts))
}
