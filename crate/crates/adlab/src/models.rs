//! Catalog of analytic Hamiltonian families H(z).
//!
//! Every model is hermitian for real arguments and extends analytically into a
//! strip |Im z| < `strip_halfwidth` around the real axis, satisfying the
//! Schwarz reflection H(z̄) = H(z)†. Models that flatten out at t → ±∞ carry
//! their limit matrices and are flagged `scattering_safe`; those are the ones
//! for which a fixed truncation time makes sense.
//!
//! Catalog, with σ_i the Pauli matrices:
//!
//! * [`landau_zener`]`(a, δ)` — ½ (a z σ_z + δ σ_x). Linear sweep, gap
//!   √(a²t² + δ²), eigenvalue collisions at z = ± i δ/a. Not scattering safe.
//! * [`tanh_sweep`]`(δ)` — ½ (tanh z σ_z + δ σ_x). Bounded sweep with limits
//!   ½(±σ_z + δ σ_x); collisions at z = i (arctan δ + kπ).
//! * [`complex_hermitian`]`(a, δ, b)` — ½ (tanh(az) σ_z + δ σ_x + b sech(az) σ_y).
//!   The σ_y term makes the family genuinely complex (not real symmetric), so
//!   closed loops of its eigenframe can pick up a nontrivial geometric factor.
//! * [`three_level_cascade`]`(δ, t0, t1)` — a rising level crossing two flat
//!   ones: at δ = 0 the analytic eigenvalue branches cross at t0 (lowest pair)
//!   and t1 (upper pair); δ > 0 lifts both crossings through constant
//!   off-diagonal couplings.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg;
use crate::{C64, CMat};

const HALF: f64 = 0.5;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// ½ (x σ_x + y σ_y + z σ_z) for complex component functions.
fn pauli_combination(x: C64, y: C64, z: C64) -> CMat {
    let i = C64::new(0.0, 1.0);
    CMat::from_row_slice(2, 2, &[z * HALF, (x - i * y) * HALF, (x + i * y) * HALF, -z * HALF])
}

#[derive(Clone)]
enum Family {
    LinearSweep { rate: f64, coupling: f64 },
    TanhSweep { coupling: f64 },
    TwistedTanhSweep { rate: f64, coupling: f64, twist: f64 },
    Cascade { coupling: f64, steepness: f64, center: f64 },
    Constant { matrix: CMat },
    Closure { f: Arc<dyn Fn(C64) -> CMat + Send + Sync> },
}

/// An analytic family z ↦ H(z) together with the geometry the solvers need:
/// strip halfwidth, decay metadata, t → ±∞ limits, and display parameters.
#[derive(Clone)]
pub struct HamiltonianModel {
    family: Family,
    name: &'static str,
    dimension: usize,
    strip_halfwidth: f64,
    /// Decay exponent α of ‖H(t) − H(±∞)‖ ≤ C/(1+|t|)^{1+α} (metadata; the
    /// catalog decays exponentially, so any finite α is valid).
    decay_exponent: f64,
    scattering_safe: bool,
    /// Number of levels in the lower spectral group of the canonical gap
    /// partition (σ_1 = labels 1..=partition).
    partition: usize,
    params: Vec<(&'static str, f64)>,
}

impl fmt::Debug for HamiltonianModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)?;
        let mut first = true;
        for (k, v) in &self.params {
            write!(f, "{}{k}={v}", if first { "(" } else { ", " })?;
            first = false;
        }
        if !first {
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// Linear sweep ½ (a z σ_z + δ σ_x): gap √(a²t² + δ²) on the real axis,
/// eigenvalue collisions at z = ± i δ/a. Entire in z, but unbounded at ±∞,
/// so transition probabilities need the convergence-in-T mode.
pub fn landau_zener(rate: f64, coupling: f64) -> HamiltonianModel {
    assert!(rate > 0.0, "sweep rate must be positive");
    assert!(coupling >= 0.0, "gap parameter must be nonnegative");
    HamiltonianModel {
        family: Family::LinearSweep { rate, coupling },
        name: "landau_zener",
        dimension: 2,
        strip_halfwidth: f64::INFINITY,
        decay_exponent: 1.0,
        scattering_safe: false,
        partition: 1,
        params: vec![("a", rate), ("delta", coupling)],
    }
}

/// Bounded sweep ½ (tanh z σ_z + δ σ_x) with limits ½ (±σ_z + δ σ_x).
/// Poles of tanh sit at i(π/2 + kπ); the strip stays clear of them.
pub fn tanh_sweep(coupling: f64) -> HamiltonianModel {
    assert!(coupling >= 0.0, "gap parameter must be nonnegative");
    HamiltonianModel {
        family: Family::TanhSweep { coupling },
        name: "tanh_sweep",
        dimension: 2,
        strip_halfwidth: 1.4,
        decay_exponent: 1.0,
        scattering_safe: true,
        partition: 1,
        params: vec![("delta", coupling)],
    }
}

/// ½ (tanh(az) σ_z + δ σ_x + b sech(az) σ_y). Hermitian but not real on the
/// real axis; the transported eigenframe around a complex collision can pick
/// up a geometric factor with nonzero imaginary part, unlike the real
/// symmetric members of the catalog.
pub fn complex_hermitian(rate: f64, coupling: f64, twist: f64) -> HamiltonianModel {
    assert!(rate > 0.0, "sweep rate must be positive");
    HamiltonianModel {
        family: Family::TwistedTanhSweep { rate, coupling, twist },
        name: "complex_hermitian",
        dimension: 2,
        strip_halfwidth: 1.4 / rate,
        decay_exponent: 1.0,
        scattering_safe: true,
        partition: 1,
        params: vec![("a", rate), ("delta", coupling), ("b", twist)],
    }
}

/// Three levels: f(z) = tanh(γ(z − μ)) rises through two flat levels ∓½,
/// with γ, μ chosen so that at δ = 0 the analytic branches cross exactly at
/// t0 (against −½) and t1 (against +½). The coupling δ enters as constant
/// off-diagonal entries between the rising level and each flat one, lifting
/// both crossings into avoided ones.
pub fn three_level_cascade(coupling: f64, first: f64, second: f64) -> HamiltonianModel {
    assert!(second > first, "crossing times must be ordered");
    assert!(coupling >= 0.0, "coupling must be nonnegative");
    let center = 0.5 * (first + second);
    // tanh(γ (t1 − μ)) = ½ fixes the steepness.
    let steepness = 2.0 * 0.5f64.atanh() / (second - first);
    HamiltonianModel {
        family: Family::Cascade { coupling, steepness, center },
        name: "three_level_cascade",
        dimension: 3,
        // Nearest pole of f at Im(z − μ) = π/(2γ).
        strip_halfwidth: 0.95 * std::f64::consts::FRAC_PI_2 / steepness,
        decay_exponent: 1.0,
        scattering_safe: true,
        partition: 2,
        params: vec![("delta", coupling), ("t0", first), ("t1", second)],
    }
}

/// Time-independent Hamiltonian; mostly useful as a degenerate reference case.
pub fn constant(matrix: CMat) -> HamiltonianModel {
    let dimension = matrix.nrows();
    assert_eq!(dimension, matrix.ncols());
    HamiltonianModel {
        family: Family::Constant { matrix },
        name: "constant",
        dimension,
        strip_halfwidth: f64::INFINITY,
        decay_exponent: 1.0,
        scattering_safe: true,
        partition: 1,
        params: vec![],
    }
}

impl HamiltonianModel {
    /// Bring-your-own analytic family. The closure must satisfy the Schwarz
    /// reflection H(z̄) = H(z)† inside the declared strip; nothing checks it
    /// at construction, but the property tests will catch violations.
    pub fn from_closure(
        dimension: usize,
        strip_halfwidth: f64,
        scattering_safe: bool,
        partition: usize,
        f: impl Fn(C64) -> CMat + Send + Sync + 'static,
    ) -> Self {
        HamiltonianModel {
            family: Family::Closure { f: Arc::new(f) },
            name: "custom",
            dimension,
            strip_halfwidth,
            decay_exponent: 1.0,
            scattering_safe,
            partition,
            params: vec![],
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn strip_halfwidth(&self) -> f64 {
        self.strip_halfwidth
    }

    pub fn decay_exponent(&self) -> f64 {
        self.decay_exponent
    }

    pub fn scattering_safe(&self) -> bool {
        self.scattering_safe
    }

    pub fn partition(&self) -> usize {
        self.partition
    }

    pub fn params(&self) -> &[(&'static str, f64)] {
        &self.params
    }

    pub fn contains(&self, z: C64) -> bool {
        z.im.abs() < self.strip_halfwidth
    }

    /// H at a complex point of the strip.
    pub fn evaluate(&self, z: C64) -> Result<CMat> {
        if !self.contains(z) {
            return Err(Error::OutsideStrip { z, halfwidth: self.strip_halfwidth });
        }
        Ok(self.evaluate_unchecked(z))
    }

    /// H(t) on the real axis (always inside the strip).
    pub fn evaluate_real(&self, t: f64) -> CMat {
        self.evaluate_unchecked(c(t))
    }

    fn evaluate_unchecked(&self, z: C64) -> CMat {
        match &self.family {
            Family::LinearSweep { rate, coupling } => {
                pauli_combination(c(*coupling), C64::default(), z * *rate)
            }
            Family::TanhSweep { coupling } => {
                pauli_combination(c(*coupling), C64::default(), z.tanh())
            }
            Family::TwistedTanhSweep { rate, coupling, twist } => {
                let w = z * *rate;
                pauli_combination(c(*coupling), w.cosh().inv() * *twist, w.tanh())
            }
            Family::Cascade { coupling, steepness, center, .. } => {
                let f = ((z - c(*center)) * *steepness).tanh();
                let d = c(*coupling);
                let zero = C64::default();
                CMat::from_row_slice(3, 3, &[
                    f, d, d,
                    d, c(-0.5), zero,
                    d, zero, c(0.5),
                ])
            }
            Family::Constant { matrix } => matrix.clone(),
            Family::Closure { f, .. } => f(z),
        }
    }

    /// Limits H(±∞) when they exist: (H(-∞), H(+∞)).
    pub fn limits(&self) -> Option<(CMat, CMat)> {
        match &self.family {
            Family::LinearSweep { .. } => None,
            Family::TanhSweep { coupling } => Some((
                pauli_combination(c(*coupling), C64::default(), c(-1.0)),
                pauli_combination(c(*coupling), C64::default(), c(1.0)),
            )),
            Family::TwistedTanhSweep { coupling, .. } => Some((
                pauli_combination(c(*coupling), C64::default(), c(-1.0)),
                pauli_combination(c(*coupling), C64::default(), c(1.0)),
            )),
            Family::Cascade { coupling, .. } => {
                let build = |sign: f64| {
                    let d = c(*coupling);
                    let zero = C64::default();
                    CMat::from_row_slice(3, 3, &[
                        c(sign), d, d,
                        d, c(-0.5), zero,
                        d, zero, c(0.5),
                    ])
                };
                Some((build(-1.0), build(1.0)))
            }
            Family::Constant { matrix } => Some((matrix.clone(), matrix.clone())),
            Family::Closure { .. } => None,
        }
    }

    /// Schwarz reflection defect ‖H(z̄) − H(z)†‖_max at one strip point.
    pub fn schwarz_defect(&self, z: C64) -> Result<f64> {
        let at = self.evaluate(z)?;
        let reflected = self.evaluate(z.conj())?;
        Ok(linalg::max_abs(&(reflected - at.adjoint())))
    }
}

/// Smallest T with sup_{|t| ≥ T} ‖H(t) − H(±∞)‖ ≤ tol, for scattering-safe
/// models. The tail is probed at the interval edge with a one-decade safety
/// margin (the catalog decays monotonically beyond its transition region), and
/// the threshold is then located by bisection.
pub fn truncation_time(model: &HamiltonianModel, tol: f64) -> Result<f64> {
    if !model.scattering_safe() {
        return Err(Error::NotScatteringSafe);
    }
    assert!(tol > 0.0, "tolerance must be positive");
    let (lim_minus, lim_plus) = model.limits().ok_or(Error::NotScatteringSafe)?;
    let edge_defect = |t: f64| -> f64 {
        let lo = linalg::max_abs(&(model.evaluate_real(-t) - &lim_minus));
        let hi = linalg::max_abs(&(model.evaluate_real(t) - &lim_plus));
        lo.max(hi)
    };
    let target = tol / 10.0;

    let mut hi = 1.0;
    let mut tries = 0;
    while edge_defect(hi) > target {
        hi *= 1.5;
        tries += 1;
        if tries > 200 {
            return Err(Error::InvalidArgument(format!(
                "no truncation time below {hi:.3e} reaches tolerance {tol:.1e}"
            )));
        }
    }
    let mut lo = hi / 1.5;
    if edge_defect(lo) <= target {
        lo = 0.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if edge_defect(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-3 {
            break;
        }
    }
    Ok(hi)
}
