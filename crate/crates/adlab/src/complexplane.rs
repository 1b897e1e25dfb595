//! Analytic continuation into the strip: complex crossing points, loop
//! integrals of eigenvalue branches, geometric prefactors, and level lines.
//!
//! Off the real axis H(z) is no longer hermitian, but it stays analytic and
//! (for the catalog models) satisfies H(z̄) = H(z)†. Pairs of real-axis
//! eigenvalue branches meet at complex *crossing points*, square-root branch
//! points of the gap where the characteristic discriminant has a simple
//! zero. Everything here is organized around those points:
//!
//! * [`find_crossing`] polishes a seed to a discriminant zero by Newton
//!   iteration and verifies its order.
//! * [`loop_integral`] integrates a continued eigenvalue branch around a
//!   closed contour. Only the imaginary part is homotopy invariant (the real
//!   part keeps a contour-dependent piece), and twice that imaginary part is
//!   the exponential decay rate per 1/ε of the associated transition.
//! * [`geometric_prefactor`] transports the pair of left and right
//!   eigenvectors around the loop in the analytic gauge χᵀφ' = 0 and reads
//!   off the branch-connection coefficient; its imaginary part controls the
//!   deviation of the transition prefactor from 1.
//! * [`trace_level_line`] follows curves of constant Im ∫ (e_a − e_b) dz,
//!   the paths along which phase factors neither grow nor decay, and
//!   [`dissipativity_along`] checks monotonicity of that quantity on an
//!   arbitrary sampled path.

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::HamiltonianModel;
use crate::spectral;
use crate::{C64, CVec};

/// Contour samples must keep this distance from every crossing point.
pub const CROSSING_MARGIN: f64 = 1e-3;
/// Relative convergence target for loop quadratures.
pub const QUADRATURE_TOL: f64 = 1e-8;
/// Maximum sample-count doublings for a loop quadrature.
pub const MAX_REFINEMENTS: usize = 8;
/// Monotonicity slack in dissipativity checks; traced level lines keep their
/// level only to roughly this accuracy.
pub const DISSIPATIVITY_TOL: f64 = 1e-6;

const NEWTON_MAX_ITER: usize = 50;
const FD_STEP: f64 = 1e-6;

fn discriminant(model: &HamiltonianModel, z: C64) -> Result<C64> {
    linalg::char_discriminant(&model.evaluate(z)?)
}

fn discriminant_derivative(model: &HamiltonianModel, z: C64) -> Result<C64> {
    // H is analytic, so a real-direction central difference gives the
    // complex derivative.
    let h = C64::new(FD_STEP, 0.0);
    Ok((discriminant(model, z + h)? - discriminant(model, z - h)?) / (2.0 * h))
}

/// A complex crossing point of two eigenvalue branches.
#[derive(Debug, Clone)]
pub struct CrossingPoint {
    /// Location of the discriminant zero, upper half of the strip.
    pub z0: C64,
    /// The 1-based labels of the two branches that collide here.
    pub pair: (usize, usize),
    /// Mean log₂ decay ratio of |Δ| on shrinking circles; ≈ 1 for the simple
    /// zero that makes the gap a square-root branch point.
    pub order_check: f64,
    /// |Δ(z0)| after polishing.
    pub residual: f64,
    pub iterations: usize,
}

/// Polish `seed` to a zero of the characteristic discriminant.
pub fn find_crossing(model: &HamiltonianModel, seed: C64) -> Result<CrossingPoint> {
    let mut z = seed;
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..NEWTON_MAX_ITER {
        let f = discriminant(model, z)?;
        let df = discriminant_derivative(model, z)?;
        if df.norm() == 0.0 {
            break;
        }
        let step = f / df;
        z -= step;
        iterations = k + 1;
        if step.norm() < 1e-12 * (1.0 + z.norm()) {
            converged = true;
            break;
        }
    }
    let residual = discriminant(model, z)?.norm();
    if !converged {
        return Err(Error::NewtonDiverged { iterations, last: z, residual });
    }

    let order_check = zero_order(model, z)?;
    let pair = identify_pair(model, z)?;
    Ok(CrossingPoint { z0: z, pair, order_check, residual, iterations })
}

/// Mean log₂ ratio of |Δ| between circles of radius r and r/2 around `z0`.
fn zero_order(model: &HamiltonianModel, z0: C64) -> Result<f64> {
    let to_edge = model.strip_halfwidth() - z0.im.abs();
    let radius = (0.1f64).min(0.5 * z0.im.abs().max(0.05)).min(0.45 * to_edge.max(0.05));
    let mut total = 0.0;
    let angles = 8;
    for k in 0..angles {
        let dir = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / angles as f64);
        let outer = discriminant(model, z0 + dir * radius)?.norm();
        let inner = discriminant(model, z0 + dir * (radius / 2.0))?.norm();
        total += (outer / inner).log2();
    }
    Ok(total / angles as f64)
}

/// Which branch pair collides: continue the frame up from the real axis to
/// just below the crossing and take the two labels with the smallest gap.
fn identify_pair(model: &HamiltonianModel, z0: C64) -> Result<(usize, usize)> {
    let n = model.dimension();
    if n == 2 {
        return Ok((1, 2));
    }
    let x = z0.re;
    let top = 0.85 * z0.im;
    let frame0 = spectral::eigen_frame(&model.evaluate_real(x), C64::new(x, 0.0))?;
    let steps = 40;
    let path: Vec<C64> = (1..=steps).map(|k| C64::new(x, top * k as f64 / steps as f64)).collect();
    let frame = spectral::continue_along_path(model, frame0, &path)?;
    let mut best = (0usize, 1usize);
    let mut best_gap = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let gap = (frame.eigenvalues[i] - frame.eigenvalues[j]).norm();
            if gap < best_gap {
                best_gap = gap;
                best = (i, j);
            }
        }
    }
    let (a, b) = (frame.labels[best.0], frame.labels[best.1]);
    Ok((a.min(b), a.max(b)))
}

/// All crossings in the rectangle `re_range × im_range`, found by a grid
/// scan of |Δ| polished with Newton steps, deduplicated, and cross-checked
/// against the argument-principle count over the rectangle boundary.
pub fn crossing_census(
    model: &HamiltonianModel,
    re_range: (f64, f64),
    im_range: (f64, f64),
    grid: usize,
) -> Result<Vec<CrossingPoint>> {
    assert!(grid >= 8, "census grid too coarse");
    let (x_lo, x_hi) = re_range;
    let (y_lo, y_hi) = im_range;
    assert!(x_hi > x_lo && y_hi > y_lo, "empty census region");

    let value = |i: usize, j: usize| -> Result<f64> {
        let z = C64::new(
            x_lo + (x_hi - x_lo) * i as f64 / (grid - 1) as f64,
            y_lo + (y_hi - y_lo) * j as f64 / (grid - 1) as f64,
        );
        Ok(discriminant(model, z)?.norm())
    };
    let mut table = vec![vec![0.0f64; grid]; grid];
    for (i, row) in table.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = value(i, j)?;
        }
    }

    let mut found: Vec<CrossingPoint> = Vec::new();
    for i in 1..grid - 1 {
        for j in 1..grid - 1 {
            let c = table[i][j];
            let is_min = (-1i32..=1)
                .flat_map(|di| (-1i32..=1).map(move |dj| (di, dj)))
                .filter(|&(di, dj)| (di, dj) != (0, 0))
                .all(|(di, dj)| table[(i as i32 + di) as usize][(j as i32 + dj) as usize] >= c);
            if !is_min {
                continue;
            }
            let seed = C64::new(
                x_lo + (x_hi - x_lo) * i as f64 / (grid - 1) as f64,
                y_lo + (y_hi - y_lo) * j as f64 / (grid - 1) as f64,
            );
            let Ok(crossing) = find_crossing(model, seed) else { continue };
            let z = crossing.z0;
            if z.re < x_lo || z.re > x_hi || z.im < y_lo || z.im > y_hi {
                continue;
            }
            if found.iter().all(|c| (c.z0 - z).norm() > 1e-6) {
                found.push(crossing);
            }
        }
    }
    found.sort_by(|a, b| a.z0.re.partial_cmp(&b.z0.re).unwrap());

    let expected = boundary_zero_count(model, re_range, im_range)?;
    if expected != found.len() {
        return Err(Error::CrossingCount { expected, found: found.len() });
    }
    Ok(found)
}

/// Number of discriminant zeros inside the rectangle, from (1/2πi) ∮ Δ'/Δ.
fn boundary_zero_count(
    model: &HamiltonianModel,
    re_range: (f64, f64),
    im_range: (f64, f64),
) -> Result<usize> {
    let corners = [
        C64::new(re_range.0, im_range.0),
        C64::new(re_range.1, im_range.0),
        C64::new(re_range.1, im_range.1),
        C64::new(re_range.0, im_range.1),
    ];
    let mut per_edge = 256;
    let mut previous: Option<f64> = None;
    for _ in 0..4 {
        let mut total = C64::default();
        for e in 0..4 {
            let a = corners[e];
            let b = corners[(e + 1) % 4];
            let mut prev = discriminant_derivative(model, a)? / discriminant(model, a)?;
            for k in 1..=per_edge {
                let z = a + (b - a) * (k as f64 / per_edge as f64);
                let next = discriminant_derivative(model, z)? / discriminant(model, z)?;
                total += 0.5 * (prev + next) * (b - a) / per_edge as f64;
                prev = next;
            }
        }
        let count = (total / C64::new(0.0, 2.0 * std::f64::consts::PI)).re;
        if let Some(p) = previous {
            if (count - p).abs() < 0.05 && (count - count.round()).abs() < 0.05 {
                return Ok(count.round() as usize);
            }
        }
        previous = Some(count);
        per_edge *= 2;
    }
    Err(Error::QuadratureNotConverged { change: f64::NAN, refinements: 4 })
}

/// Closed polyline contour; the final vertex connects back to the first.
#[derive(Debug, Clone)]
pub struct ContourPath {
    pub vertices: Vec<C64>,
}

impl ContourPath {
    /// Uniform samples, `per_edge` per segment, wrap duplicate included, so
    /// the result has `edges · per_edge + 1` points and ends where it began.
    pub fn closed_samples(&self, per_edge: usize) -> Vec<C64> {
        let m = self.vertices.len();
        let mut out = Vec::with_capacity(m * per_edge + 1);
        for e in 0..m {
            let a = self.vertices[e];
            let b = self.vertices[(e + 1) % m];
            for k in 0..per_edge {
                out.push(a + (b - a) * (k as f64 / per_edge as f64));
            }
        }
        out.push(self.vertices[0]);
        out
    }

    /// The same geometric loop traversed twice.
    pub fn doubled(&self) -> ContourPath {
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&self.vertices);
        ContourPath { vertices }
    }

    /// Euclidean distance from `z` to the nearest point of the contour.
    pub fn distance_to(&self, z: C64) -> f64 {
        let m = self.vertices.len();
        let mut best = f64::INFINITY;
        for e in 0..m {
            let a = self.vertices[e];
            let b = self.vertices[(e + 1) % m];
            let ab = b - a;
            let len2 = ab.norm_sqr();
            let t = if len2 == 0.0 {
                0.0
            } else {
                (((z - a).re * ab.re + (z - a).im * ab.im) / len2).clamp(0.0, 1.0)
            };
            best = best.min((z - (a + ab * t)).norm());
        }
        best
    }

    pub fn max_im(&self) -> f64 {
        self.vertices.iter().map(|v| v.im).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Clockwise rectangle around one crossing, base on the real axis.
///
/// The contour starts at (Re z0 − w, 0), rises along the left edge, crosses
/// above the crossing, descends along the right edge, and returns along the
/// axis; this negative orientation is the convention under which
/// 2 · Im ∮ e_lower is the (negative) decay exponent per 1/ε. Defaults:
/// half width max(0.6 · Im z0, 0.25), height 1.5 · Im z0.
pub fn rectangle_loop(
    model: &HamiltonianModel,
    crossing: &CrossingPoint,
    half_width: Option<f64>,
    height: Option<f64>,
) -> Result<ContourPath> {
    let z0 = crossing.z0;
    if z0.im <= CROSSING_MARGIN {
        return Err(Error::InvalidArgument(format!(
            "crossing {z0} sits too close to the real axis for a loop"
        )));
    }
    let w = half_width.unwrap_or((0.6 * z0.im).max(0.25));
    let h = height.unwrap_or(1.5 * z0.im);
    if w <= 0.0 || h <= z0.im {
        return Err(Error::InvalidArgument(format!(
            "rectangle {w} × {h} does not enclose the crossing at {z0}"
        )));
    }
    let top_left = C64::new(z0.re - w, h);
    if !model.contains(top_left) {
        return Err(Error::PathEscapedStrip { z: top_left });
    }
    let path = ContourPath {
        vertices: vec![
            C64::new(z0.re - w, 0.0),
            C64::new(z0.re - w, h),
            C64::new(z0.re + w, h),
            C64::new(z0.re + w, 0.0),
        ],
    };
    let distance = path.distance_to(z0);
    if distance < CROSSING_MARGIN {
        return Err(Error::PathTooCloseToCrossing { z: z0, distance });
    }
    Ok(path)
}

/// One eigenvalue branch tracked by Newton continuation.
#[derive(Debug, Clone)]
struct Branch {
    e: C64,
    v: CVec,
}

fn branch_at_real_point(model: &HamiltonianModel, label: usize, t: f64) -> Result<Branch> {
    let frame = spectral::eigen_frame(&model.evaluate_real(t), C64::new(t, 0.0))?;
    let e = frame
        .eigenvalue_of_label(label)
        .ok_or_else(|| Error::InvalidArgument(format!("no level labelled {label}")))?;
    let v = frame.vector_of_label(label).unwrap();
    Ok(Branch { e, v })
}

fn continue_branch(model: &HamiltonianModel, from: &Branch, z: C64) -> Result<Branch> {
    let h = model.evaluate(z)?;
    let (e, v) = linalg::newton_eigenpair(&h, from.e, &from.v)?;
    let overlap = from.v.dotc(&v).norm();
    if overlap < spectral::OVERLAP_FLOOR {
        return Err(Error::OverlapTooSmall { overlap, floor: spectral::OVERLAP_FLOOR });
    }
    Ok(Branch { e, v })
}

/// Vertical continuation from the real axis to `z`, in steps of ≤ 0.02.
fn branch_below(model: &HamiltonianModel, label: usize, z: C64) -> Result<Branch> {
    let mut branch = branch_at_real_point(model, label, z.re)?;
    let steps = (z.im.abs() / 0.02).ceil().max(1.0) as usize;
    for k in 1..=steps {
        let p = C64::new(z.re, z.im * k as f64 / steps as f64);
        branch = continue_branch(model, &branch, p)?;
    }
    Ok(branch)
}

/// ∮ of a continued eigenvalue branch around a closed contour.
#[derive(Debug, Clone)]
pub struct LoopIntegral {
    /// The integral for this specific contour. Only `value.im` is invariant
    /// under deformations of the loop.
    pub value: C64,
    /// Label whose branch the tracked level turned into after one circuit;
    /// equals the starting label iff the loop encloses no crossing of it.
    pub returned_as_label: usize,
    pub refinements: usize,
    pub estimated_error: f64,
    pub samples_per_edge: usize,
}

/// Integrate branch `label` of the model around `path` (trapezoid sums,
/// Richardson-accelerated over sample doublings). The contour must start on
/// the real axis and keep clear of every crossing.
pub fn loop_integral(model: &HamiltonianModel, path: &ContourPath, label: usize) -> Result<LoopIntegral> {
    let base = path.vertices[0];
    if base.im.abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "loop must start on the real axis, got base {base}"
        )));
    }
    for &v in &path.vertices {
        if !model.contains(v) {
            return Err(Error::PathEscapedStrip { z: v });
        }
    }

    let mut per_edge = 64usize;
    'restart: for _ in 0..3 {
        let mut table: Vec<Vec<C64>> = Vec::new();
        for level in 0..MAX_REFINEMENTS {
            let n = per_edge << level;
            let samples = path.closed_samples(n);
            let mut branch = branch_at_real_point(model, label, base.re)?;
            let mut value = C64::default();
            let mut prev_e = branch.e;
            let mut prev_z = samples[0];
            for &z in samples.iter().skip(1) {
                branch = match continue_branch(model, &branch, z) {
                    Ok(b) => b,
                    Err(Error::OverlapTooSmall { .. }) => {
                        per_edge *= 2;
                        continue 'restart;
                    }
                    Err(e) => return Err(e),
                };
                value += 0.5 * (prev_e + branch.e) * (z - prev_z);
                prev_e = branch.e;
                prev_z = z;
            }

            // Richardson table for the h² Euler-Maclaurin expansion.
            let mut row = vec![value];
            for j in 1..=table.len() {
                let factor = 4f64.powi(j as i32);
                let above = table[table.len() - 1][j - 1];
                let left = row[j - 1];
                row.push((left * factor - above) / (factor - 1.0));
            }
            if let Some(previous) = table.last() {
                let change = (row[row.len() - 1] - previous[previous.len() - 1]).norm();
                if change <= QUADRATURE_TOL * row[row.len() - 1].norm().max(1.0) {
                    let frame =
                        spectral::eigen_frame(&model.evaluate_real(base.re), base)?;
                    let returned_as_label = nearest_label(&frame, branch.e);
                    return Ok(LoopIntegral {
                        value: row[row.len() - 1],
                        returned_as_label,
                        refinements: level,
                        estimated_error: change,
                        samples_per_edge: n,
                    });
                }
            }
            table.push(row);
        }
        return Err(Error::QuadratureNotConverged {
            change: f64::NAN,
            refinements: MAX_REFINEMENTS,
        });
    }
    Err(Error::OverlapTooSmall { overlap: 0.0, floor: spectral::OVERLAP_FLOOR })
}

fn nearest_label(frame: &spectral::SpectralFrame, e: C64) -> usize {
    let mut best = frame.labels[0];
    let mut best_d = f64::INFINITY;
    for (k, &label) in frame.labels.iter().enumerate() {
        let d = (frame.eigenvalues[k] - e).norm();
        if d < best_d {
            best_d = d;
            best = label;
        }
    }
    best
}

/// Branch-connection coefficient of one circuit around a crossing.
#[derive(Debug, Clone)]
pub struct PrefactorResult {
    /// θ with e^{−iθ} = ⟨φ_landed(base) | φ_start continued around the loop⟩.
    /// Only the imaginary part is invariant under loop deformations.
    pub theta_re: f64,
    pub theta_im: f64,
    /// e^{2 Im θ}, the factor by which the transition probability prefactor
    /// deviates from 1.
    pub probability_factor: f64,
    /// Label the starting branch landed on after the circuit.
    pub landed_label: usize,
    /// Relative weight of the continued vector outside the landed direction.
    pub closure_defect: f64,
    pub refinements: usize,
    pub estimated_error: f64,
}

/// Left/right eigenvector pair in the analytic gauge.
#[derive(Debug, Clone)]
struct BiBranch {
    e: C64,
    phi: CVec,
    chi: CVec,
}

/// One continuation step preserving χᵀφ = 1 with the symmetric scaling that
/// discretizes the gauge condition χᵀφ' = 0.
fn continue_bibranch(model: &HamiltonianModel, from: &BiBranch, z: C64) -> Result<BiBranch> {
    let h = model.evaluate(z)?;
    let (e_r, phi_raw) = linalg::newton_eigenpair(&h, from.e, &from.phi)?;
    let (e_l, chi_raw) = linalg::newton_eigenpair(&h.transpose(), from.e, &from.chi)?;
    if (e_r - e_l).norm() > 1e-8 * (1.0 + e_r.norm()) {
        return Err(Error::InvalidArgument(format!(
            "left/right eigenvalues disagree at {z}: {e_r} vs {e_l}"
        )));
    }
    if from.phi.dotc(&phi_raw).norm() < spectral::OVERLAP_FLOOR {
        return Err(Error::OverlapTooSmall {
            overlap: from.phi.dotc(&phi_raw).norm(),
            floor: spectral::OVERLAP_FLOOR,
        });
    }
    let u = from.chi.dot(&phi_raw);
    let v = chi_raw.dot(&from.phi);
    let w = chi_raw.dot(&phi_raw);
    if u.norm() < 1e-12 || v.norm() < 1e-12 || w.norm() < 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "biorthogonal overlaps degenerate at {z}; the contour runs too \
             close to a crossing"
        )));
    }
    let mut s = (v / (u * w)).sqrt();
    let target = C64::new(1.0, 0.0) / u;
    if (-s - target).norm() < (s - target).norm() {
        s = -s;
    }
    let phi = &phi_raw * s;
    let chi = &chi_raw / (s * w);
    Ok(BiBranch { e: e_r, phi, chi })
}

fn transport_theta(
    model: &HamiltonianModel,
    path: &ContourPath,
    from_label: usize,
    per_edge: usize,
) -> Result<(C64, usize, f64)> {
    let base = path.vertices[0];
    let frame = spectral::eigen_frame(&model.evaluate_real(base.re), base)?;
    let phi0 = frame
        .vector_of_label(from_label)
        .ok_or_else(|| Error::InvalidArgument(format!("no level labelled {from_label}")))?;
    let chi0 = phi0.map(|c| c.conj());
    let mut branch = BiBranch { e: frame.eigenvalue_of_label(from_label).unwrap(), phi: phi0, chi: chi0 };

    let samples = path.closed_samples(per_edge);
    for &z in samples.iter().skip(1) {
        branch = continue_bibranch(model, &branch, z)?;
    }

    let landed_label = nearest_label(&frame, branch.e);
    let target = frame.vector_of_label(landed_label).unwrap();
    let overlap = target.dotc(&branch.phi);
    let residual = (&branch.phi - &target * overlap).norm() / branch.phi.norm();
    // θ with e^{−iθ} = overlap: Re θ = −arg, Im θ = ln |overlap|.
    Ok((overlap, landed_label, residual))
}

/// Transport branch `from_label` around `path` and extract the connection
/// coefficient, Richardson-extrapolated over sampling doublings.
pub fn geometric_prefactor_on(
    model: &HamiltonianModel,
    path: &ContourPath,
    from_label: usize,
) -> Result<PrefactorResult> {
    let base = path.vertices[0];
    if base.im.abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "loop must start on the real axis, got base {base}"
        )));
    }
    let mut per_edge = 64usize;
    let mut history: Vec<(C64, usize, f64)> = Vec::new();
    for level in 0..MAX_REFINEMENTS {
        let n = per_edge << level;
        match transport_theta(model, path, from_label, n) {
            Ok(t) => history.push(t),
            Err(Error::OverlapTooSmall { .. }) if history.is_empty() => {
                per_edge *= 2;
                continue;
            }
            Err(e) => return Err(e),
        }
        if history.len() >= 2 {
            let (o1, l1, _) = history[history.len() - 2];
            let (o2, l2, r2) = history[history.len() - 1];
            if l1 != l2 {
                history.clear();
                continue;
            }
            // Transport error is O(h²) per circuit; one Richardson stage.
            let extrapolated = (o2 * 4.0 - o1) / 3.0;
            let change = (o2 - o1).norm();
            if change <= QUADRATURE_TOL * extrapolated.norm().max(1e-3) {
                if r2 > 1e-6 {
                    return Err(Error::ClosureNotProportional { defect: r2, limit: 1e-6 });
                }
                let theta_im = extrapolated.norm().ln();
                let theta_re = -extrapolated.arg();
                return Ok(PrefactorResult {
                    theta_re,
                    theta_im,
                    probability_factor: (2.0 * theta_im).exp(),
                    landed_label: l2,
                    closure_defect: r2,
                    refinements: level,
                    estimated_error: change,
                });
            }
        }
    }
    Err(Error::QuadratureNotConverged { change: f64::NAN, refinements: MAX_REFINEMENTS })
}

/// [`geometric_prefactor_on`] over the default rectangle of a crossing,
/// starting from the lower branch of its pair.
pub fn geometric_prefactor(model: &HamiltonianModel, crossing: &CrossingPoint) -> Result<PrefactorResult> {
    let path = rectangle_loop(model, crossing, None, None)?;
    geometric_prefactor_on(model, &path, crossing.pair.0)
}

/// Im ∫ (e_a − e_b) dz along a sampled path, with a monotonicity report.
#[derive(Debug, Clone)]
pub struct DissipativityReport {
    /// Running values of Im ∫ (e_a − e_b), one per path sample, starting at 0.
    pub values: Vec<f64>,
    /// True when no increment falls below −[`DISSIPATIVITY_TOL`].
    pub dissipative: bool,
    /// Largest decrease of the running value over a single increment.
    pub max_violation: f64,
    /// Highest Im z reached by the path.
    pub max_im: f64,
}

/// Evaluate the dissipativity functional along `points` for the branch pair
/// `(a, b)`. The first point must be reachable by vertical continuation from
/// the real axis.
pub fn dissipativity_along(
    model: &HamiltonianModel,
    points: &[C64],
    pair: (usize, usize),
) -> Result<DissipativityReport> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("dissipativity path needs at least two points".into()));
    }
    let mut a = branch_below(model, pair.0, points[0])?;
    let mut b = branch_below(model, pair.1, points[0])?;
    let mut values = vec![0.0f64];
    let mut max_violation = 0.0f64;
    let mut max_im = points[0].im;
    for k in 1..points.len() {
        let z = points[k];
        let a_next = continue_branch(model, &a, z)?;
        let b_next = continue_branch(model, &b, z)?;
        let g_prev = a.e - b.e;
        let g_next = a_next.e - b_next.e;
        let increment = (0.5 * (g_prev + g_next) * (z - points[k - 1])).im;
        values.push(values[k - 1] + increment);
        if increment < 0.0 {
            max_violation = max_violation.max(-increment);
        }
        max_im = max_im.max(z.im);
        a = a_next;
        b = b_next;
    }
    Ok(DissipativityReport {
        dissipative: max_violation <= DISSIPATIVITY_TOL,
        max_violation,
        values,
        max_im,
    })
}

/// Seed height at `re_start` for a witness line below a crossing of `pair`
/// whose loop action (|Im ∮ e| of the lower branch) is `action`.
///
/// The vertical lift to this height accumulates half the action in the level
/// functional, so the level line through the seed runs mid-corridor between
/// the real axis and the crossing no matter how fast the gap grows toward
/// the window ends.
pub fn half_action_height(
    model: &HamiltonianModel,
    pair: (usize, usize),
    action: f64,
    re_start: f64,
) -> f64 {
    assert!(action > 0.0, "crossing action must be positive, got {action}");
    let h = model.evaluate_real(re_start);
    let (vals, _) = linalg::jacobi_hermitian(&h);
    let gap = vals[pair.1 - 1] - vals[pair.0 - 1];
    assert!(gap > 0.0, "branch pair {pair:?} must be gapped at {re_start}");
    let height = 0.5 * action / gap;
    let strip = model.strip_halfwidth();
    if strip.is_finite() { height.min(0.8 * strip) } else { height }
}

/// How a traced level line ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineEnd {
    /// Reached the requested real part.
    ReachedGoal,
    /// Left the analyticity strip.
    EscapedStrip,
    /// Came too close to a crossing (the gap nearly vanished).
    NearCrossing,
    /// Exhausted the step budget.
    Stalled,
}

/// A traced curve of constant Im ∫ (e_a − e_b) dz.
#[derive(Debug, Clone)]
pub struct LevelLine {
    pub points: Vec<C64>,
    /// Worst deviation of the level functional from its seed value.
    pub max_drift: f64,
    pub end: LineEnd,
}

/// Trace the level line of Im ∫ (e_a − e_b) dz through `seed` toward
/// increasing Re z until `re_goal`, by an explicit predictor (unit tangent
/// with Im(g dz) = 0) and a first-order corrector along the normal.
pub fn trace_level_line(
    model: &HamiltonianModel,
    seed: C64,
    pair: (usize, usize),
    re_goal: f64,
    step: f64,
) -> Result<LevelLine> {
    assert!(step > 0.0, "tracer step must be positive");
    let mut a = branch_below(model, pair.0, seed)?;
    let mut b = branch_below(model, pair.1, seed)?;
    let mut z = seed;
    let mut f = 0.0f64;
    let mut max_drift = 0.0f64;
    let mut points = vec![z];
    let strip = model.strip_halfwidth();
    let budget = 200_000usize;

    for _ in 0..budget {
        if z.re >= re_goal {
            return Ok(LevelLine { points, max_drift, end: LineEnd::ReachedGoal });
        }
        let g = a.e - b.e;
        if g.norm() < 1e-2 {
            return Ok(LevelLine { points, max_drift, end: LineEnd::NearCrossing });
        }
        // Tangent: dz = e^{−i arg g} keeps Im(g dz) = 0; pick the branch
        // that moves toward +Re.
        let mut u = C64::from_polar(1.0, -g.arg());
        if u.re < 0.0 {
            u = -u;
        }
        if u.re.abs() < 1e-6 {
            return Ok(LevelLine { points, max_drift, end: LineEnd::Stalled });
        }
        let z_next = z + u * step;
        if z_next.im.abs() >= 0.98 * strip {
            return Ok(LevelLine { points, max_drift, end: LineEnd::EscapedStrip });
        }
        let a_mid = continue_branch(model, &a, z_next)?;
        let b_mid = continue_branch(model, &b, z_next)?;
        let g_mid = a_mid.e - b_mid.e;
        let mut f_next = f + (0.5 * (g + g_mid) * (z_next - z)).im;

        // Corrector: move along i e^{−i arg g}, where the level functional
        // changes at rate |g|, to cancel the accumulated drift.
        let correction = C64::new(0.0, 1.0) * C64::from_polar(1.0, -g_mid.arg()) * (-f_next / g_mid.norm());
        let capped = if correction.norm() > step { correction * (step / correction.norm()) } else { correction };
        let z_corr = z_next + capped;
        if z_corr.im.abs() >= 0.98 * strip {
            return Ok(LevelLine { points, max_drift, end: LineEnd::EscapedStrip });
        }
        let a_next = continue_branch(model, &a_mid, z_corr)?;
        let b_next = continue_branch(model, &b_mid, z_corr)?;
        f_next += (0.5 * ((a_mid.e - b_mid.e) + (a_next.e - b_next.e)) * (z_corr - z_next)).im;

        z = z_corr;
        a = a_next;
        b = b_next;
        f = f_next;
        max_drift = max_drift.max(f.abs());
        points.push(z);
    }
    Ok(LevelLine { points, max_drift, end: LineEnd::Stalled })
}
