//! Higher-order adiabatic frames.
//!
//! Starting from H₀ = H, each round replaces the spectral projector of the
//! previous Hamiltonian into the generator correction:
//!
//!   H_{q+1}(t) = H(t) − iε [P′_{1,q}(t), P_{1,q}(t)],
//!
//! where P_{1,q} projects onto the lowest `partition` levels of H_q.  The
//! sign matters: under iε∂_t U = H U the tilted frame of H − iε[P′, P]
//! absorbs the leading boundary transient, while +iε[P′, P] stays the
//! transport generator that carries ran P_{1,q} along exactly.  The
//! transition probability measured in the q-th frame,
//! ‖P_{2,q}(t1) · U(t1,t0) · P_{1,q}(t0)‖², drops from O(ε²) at q = 0 to
//! O(ε^{2q+2}), until the exponentially small channel is reached at the
//! optimal truncation order q*.
//!
//! Everything is built on a uniform time grid with ghost nodes outside the
//! requested window; each recursion level consumes two nodes per side for the
//! Richardson projector derivative, so levels stay valid on the interior.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_defect, jacobi_hermitian, op_norm};
use crate::models::HamiltonianModel;
use crate::propagator::{propagate, propagate_with};
use crate::{C64, CMat};

/// Uniform grid spacing for the frame recursion.
pub const GRID_STEP: f64 = 0.01;
/// Default cap on the recursion depth.
pub const DEFAULT_Q_MAX: usize = 12;
/// Number of evenly spaced nodes at which the intertwining defect is sampled.
const INTERTWINING_CHECKPOINTS: usize = 9;
/// Absolute floor under which the block gap counts as closed.
const GAP_FLOOR_ABS: f64 = 1e-8;
/// The block gap must also stay above this multiple of ε for the frames to
/// make sense as adiabatic objects.
const GAP_FLOOR_EPS_FACTOR: f64 = 0.05;
/// Hermiticity budget for the recursed Hamiltonians on the grid.
const GRID_HERMITICITY_TOL: f64 = 1e-9;
/// Smallest tolerated eigenvalue of the frame overlap W†W during transport.
const FRAME_OVERLAP_FLOOR: f64 = 0.04;
/// Orders within this factor of the minimal criterion value count as ties,
/// and the smallest such order wins.
pub const TRUNCATION_TIE_FACTOR: f64 = 1.05;
/// The search is reported as stalled when the best value is not below this
/// fraction of the q = 0 value.
pub const NO_GAIN_FACTOR: f64 = 0.75;

/// One level of the frame recursion, tabulated on a uniform grid.
///
/// The stored arrays extend at least two nodes beyond `window` on each side
/// so that cubic interpolation near the window ends never runs out of
/// stencil.
#[derive(Debug, Clone)]
pub struct SuperadiabaticLevel {
    /// Recursion depth (0 is the plain adiabatic frame).
    pub q: usize,
    /// Adiabatic parameter the correction terms are proportional to.
    pub epsilon: f64,
    /// Number of levels in the lower spectral block.
    pub partition: usize,
    /// Requested window, snapped outward to grid nodes.
    pub window: (f64, f64),
    /// Grid spacing.
    pub grid_step: f64,
    /// Grid nodes the arrays below are tabulated on.
    pub times: Vec<f64>,
    /// H_q at each node.
    pub hamiltonians: Vec<CMat>,
    /// P_{1,q} at each node.
    pub projectors: Vec<CMat>,
    /// Generator H_q + iε[P′_{1,q}, P_{1,q}] at each node.
    pub generators: Vec<CMat>,
    /// sup over window nodes of ‖H_{q+1} − H_q‖, the size of the next
    /// correction. Small values mean the recursion has nearly converged.
    pub defect_norm: f64,
    /// Smallest gap between the block and the rest of the spectrum seen on
    /// the grid.
    pub min_block_gap: f64,
}

impl SuperadiabaticLevel {
    /// Index of the grid node at time `t`, if `t` lies on the grid.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let r = (t - self.times[0]) / self.grid_step;
        let i = r.round();
        if (r - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < self.times.len() {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Indices of the window endpoints in the grid arrays.
    pub fn window_indices(&self) -> (usize, usize) {
        let i0 = self.node_index(self.window.0);
        let i1 = self.node_index(self.window.1);
        match (i0, i1) {
            (Some(a), Some(b)) => (a, b),
            _ => unreachable!("window endpoints are grid nodes by construction"),
        }
    }

    /// H_q interpolated off the grid (cubic, 4-node stencil).
    pub fn hamiltonian_at(&self, t: f64) -> CMat {
        cubic_interp(&self.hamiltonians, self.times[0], self.grid_step, t)
    }

    /// Generator of the intertwining propagator V_q, interpolated off the
    /// grid.
    pub fn generator_at(&self, t: f64) -> CMat {
        cubic_interp(&self.generators, self.times[0], self.grid_step, t)
    }

    /// P_{1,q} interpolated off the grid. Idempotence holds only to O(h⁴)
    /// between nodes; on nodes the stored projector is returned.
    pub fn projector_at(&self, t: f64) -> CMat {
        if let Some(i) = self.node_index(t) {
            return self.projectors[i].clone();
        }
        cubic_interp(&self.projectors, self.times[0], self.grid_step, t)
    }
}

/// Transition probability measured in a superadiabatic frame.
#[derive(Debug, Clone)]
pub struct SuperadiabaticTransition {
    /// ‖P_{2,q}(t1) · U(t1,t0) · P_{1,q}(t0)‖² with the true propagator U.
    pub probability: f64,
    /// Unitarity defect of the underlying propagation.
    pub unitarity_defect: f64,
    /// Accepted integrator steps.
    pub step_count: usize,
}

/// How `optimal_truncation` picks q*.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationCriterion {
    /// Minimize the forward defect sup‖H_{q+1} − H_q‖ (cheap, the default).
    DefectNorm,
    /// Minimize the measured transition probability itself; needs a
    /// propagation tolerance because each candidate order is integrated.
    MeasuredTransition { tolerance: f64 },
}

/// Result of the truncation-order search.
#[derive(Debug, Clone)]
pub struct Truncation {
    /// Smallest order within [`TRUNCATION_TIE_FACTOR`] of the minimal
    /// criterion value, searched over 0 ≤ q < q_max.
    pub q_star: usize,
    /// The criterion values indexed by q.
    pub criterion_values: Vec<f64>,
    /// True when even the best order fails to improve materially on q = 0,
    /// meaning ε is outside the asymptotic regime of the recursion.
    pub stalled: bool,
    /// All built levels, 0 ..= q_max.
    pub levels: Vec<SuperadiabaticLevel>,
}

/// Two-dimensional effective dynamics obtained by compressing H onto the
/// transported range of P_{1,q}.
#[derive(Debug, Clone)]
pub struct EffectiveReduction {
    pub epsilon: f64,
    pub grid_step: f64,
    /// Window nodes the frames are tabulated on.
    pub times: Vec<f64>,
    /// n×2 orthonormal frames spanning range P_{1,q}(t), parallel-transported
    /// from the window start.
    pub frames: Vec<CMat>,
    /// 2×2 compressions W†(t) H(t) W(t).
    pub effective: Vec<CMat>,
}

impl EffectiveReduction {
    /// Effective Hamiltonian interpolated off the grid.
    pub fn effective_at(&self, t: f64) -> CMat {
        cubic_interp(&self.effective, self.times[0], self.grid_step, t)
    }
}

fn snap_index(t: f64, h: f64, up: bool) -> i64 {
    let r = t / h;
    let n = r.round();
    if (r - n).abs() < 1e-9 {
        n as i64
    } else if up {
        r.ceil() as i64
    } else {
        r.floor() as i64
    }
}

/// Cubic Lagrange interpolation on a uniform grid. Real weights, so a
/// hermitian table interpolates to a hermitian matrix exactly.
fn cubic_interp(table: &[CMat], t0: f64, h: f64, t: f64) -> CMat {
    let n = table.len();
    assert!(n >= 4, "cubic interpolation needs at least 4 nodes");
    let mut i = ((t - t0) / h).floor() as i64;
    i = i.clamp(1, n as i64 - 3);
    let i = i as usize;
    let x = (t - (t0 + i as f64 * h)) / h;
    let wm1 = -x * (x - 1.0) * (x - 2.0) / 6.0;
    let w0 = (x * x - 1.0) * (x - 2.0) / 2.0;
    let w1 = -x * (x + 1.0) * (x - 2.0) / 2.0;
    let w2 = x * (x * x - 1.0) / 6.0;
    let mut out = &table[i - 1] * C64::new(wm1, 0.0);
    out += &table[i] * C64::new(w0, 0.0);
    out += &table[i + 1] * C64::new(w1, 0.0);
    out += &table[i + 2] * C64::new(w2, 0.0);
    out
}

/// Projector onto the lowest `partition` eigenvectors, with the gap to the
/// rest of the spectrum.
fn block_projector(h: &CMat, partition: usize) -> (CMat, f64) {
    let n = h.nrows();
    let (vals, vecs) = jacobi_hermitian(h);
    let gap = if partition < n {
        vals[partition] - vals[partition - 1]
    } else {
        f64::INFINITY
    };
    let mut p = CMat::zeros(n, n);
    for c in 0..partition {
        let v = vecs.column(c).clone_owned();
        p += &v * v.adjoint();
    }
    (p, gap)
}

/// Build levels 0 ..= q_max of the frame recursion over `window`.
///
/// The window is snapped outward to grid nodes. Each level's tabulation
/// keeps at least two ghost nodes beyond the window on each side.
pub fn build_levels(
    model: &HamiltonianModel,
    window: (f64, f64),
    epsilon: f64,
    q_max: usize,
) -> Result<Vec<SuperadiabaticLevel>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(window.1 > window.0) {
        return Err(Error::InvalidArgument(format!(
            "window must be increasing, got ({}, {})",
            window.0, window.1
        )));
    }
    if q_max > 40 {
        return Err(Error::InvalidArgument(format!(
            "recursion depth {q_max} is unreasonably large"
        )));
    }
    let h = GRID_STEP;
    let partition = model.partition();
    let i0 = snap_index(window.0, h, false);
    let i1 = snap_index(window.1, h, true);
    let snapped = (i0 as f64 * h, i1 as f64 * h);
    // Two nodes per recursion level and side, plus two spare for cubic
    // stencils at the window ends.
    let margin = 2 * (q_max + 1) + 2;
    let first = i0 - margin as i64;
    let count = (i1 - i0) as usize + 2 * margin + 1;
    let node_time = |k: usize| (first + k as i64) as f64 * h;

    let base: Vec<CMat> = (0..count).map(|k| model.evaluate_real(node_time(k))).collect();
    let defect = hermitian_defect(&base[count / 2]);
    if defect > GRID_HERMITICITY_TOL {
        return Err(Error::NotHermitian {
            defect,
            tolerance: GRID_HERMITICITY_TOL,
        });
    }

    let gap_floor = GAP_FLOOR_ABS.max(GAP_FLOOR_EPS_FACTOR * epsilon);
    let ie = C64::new(0.0, epsilon);
    let mut levels = Vec::with_capacity(q_max + 1);
    let mut cur = base.clone();
    // Index into `base` of cur[0]; grows by 2 per level as derivatives trim
    // the edges.
    let mut start = 0usize;

    for q in 0..=q_max {
        let len = cur.len();
        let mut projs = Vec::with_capacity(len);
        let mut min_gap = f64::INFINITY;
        for (k, hq) in cur.iter().enumerate() {
            let (p, gap) = block_projector(hq, partition);
            if gap < min_gap {
                min_gap = gap;
            }
            if gap < gap_floor {
                return Err(Error::GapClosure {
                    q,
                    t: node_time(start + k),
                    epsilon,
                    min_gap: gap,
                });
            }
            projs.push(p);
        }

        // Richardson grid derivative (4 D_h − D_{2h}) / 3, valid two nodes in
        // from each edge.
        let inner = len - 4;
        let mut hams_out = Vec::with_capacity(inner);
        let mut projs_out = Vec::with_capacity(inner);
        let mut gens_out = Vec::with_capacity(inner);
        let mut next = Vec::with_capacity(inner);
        let mut defect_norm: f64 = 0.0;
        let win_lo = snapped.0 - 0.5 * h;
        let win_hi = snapped.1 + 0.5 * h;
        for k in 2..len - 2 {
            let dp = (&projs[k + 1] - &projs[k - 1]) * C64::new(8.0 / (12.0 * h), 0.0)
                - (&projs[k + 2] - &projs[k - 2]) * C64::new(1.0 / (12.0 * h), 0.0);
            let comm = (&dp * &projs[k] - &projs[k] * &dp) * ie;
            let gen = &cur[k] + &comm;
            // Opposite tilt from the transport generator, so the leading
            // boundary transient of the next frame cancels instead of
            // doubling.
            let hn = &base[start + k] - &comm;
            let t = node_time(start + k);
            if t > win_lo && t < win_hi {
                let d = op_norm(&(&hn - &cur[k]));
                if d > defect_norm {
                    defect_norm = d;
                }
            }
            hams_out.push(cur[k].clone());
            projs_out.push(projs[k].clone());
            gens_out.push(gen);
            next.push(hn);
        }

        start += 2;
        let times: Vec<f64> = (0..inner).map(|k| node_time(start + k)).collect();
        levels.push(SuperadiabaticLevel {
            q,
            epsilon,
            partition,
            window: snapped,
            grid_step: h,
            times,
            hamiltonians: hams_out,
            projectors: projs_out,
            generators: gens_out,
            defect_norm,
            min_block_gap: min_gap,
        });
        cur = next;
    }
    Ok(levels)
}

/// Build the single level of order `q`.
pub fn build_level(
    model: &HamiltonianModel,
    window: (f64, f64),
    epsilon: f64,
    q: usize,
) -> Result<SuperadiabaticLevel> {
    let mut levels = build_levels(model, window, epsilon, q)?;
    Ok(levels.remove(q))
}

/// Transition probability in the frame of `level`, measured with the true
/// propagator of `model` over the level's window.
pub fn superadiabatic_transition(
    model: &HamiltonianModel,
    level: &SuperadiabaticLevel,
    tolerance: f64,
) -> Result<SuperadiabaticTransition> {
    let (i0, i1) = level.window_indices();
    let (t0, t1) = (level.times[i0], level.times[i1]);
    let prop = propagate(model, (t0, t1), level.epsilon, tolerance)?;
    let n = model.dimension();
    let eye = CMat::identity(n, n);
    let upper = &eye - &level.projectors[i1];
    let blocked = &upper * &prop.u * &level.projectors[i0];
    let amp = op_norm(&blocked);
    Ok(SuperadiabaticTransition {
        probability: amp * amp,
        unitarity_defect: crate::linalg::unitarity_defect(&prop.u),
        step_count: prop.step_count,
    })
}

/// Search for the truncation order q* over 0 ≤ q < q_max.
///
/// With the defect criterion, q* minimizes the size of the next correction.
/// When the values grow from q = 0 on, ε is too large for the recursion to
/// help; the result then carries `stalled` and a low q*.
pub fn optimal_truncation(
    model: &HamiltonianModel,
    window: (f64, f64),
    epsilon: f64,
    q_max: usize,
    criterion: TruncationCriterion,
) -> Result<Truncation> {
    if q_max == 0 {
        return Err(Error::InvalidArgument(
            "q_max must be at least 1 to search for a truncation order".into(),
        ));
    }
    let levels = build_levels(model, window, epsilon, q_max)?;
    let values: Vec<f64> = match criterion {
        TruncationCriterion::DefectNorm => {
            levels[..q_max].iter().map(|l| l.defect_norm).collect()
        }
        TruncationCriterion::MeasuredTransition { tolerance } => {
            let mut v = Vec::with_capacity(q_max);
            for level in &levels[..q_max] {
                v.push(superadiabatic_transition(model, level, tolerance)?.probability);
            }
            v
        }
    };
    let minimum = values.iter().copied().fold(f64::INFINITY, f64::min);
    // Smallest order that is essentially as good as the minimum: ties go to
    // the simpler frame, so a fluke 1% dip at high q cannot win.
    let q_star = values
        .iter()
        .position(|&v| v <= TRUNCATION_TIE_FACTOR * minimum)
        .unwrap_or(0);
    let stalled = minimum >= NO_GAIN_FACTOR * values[0];
    Ok(Truncation { q_star, criterion_values: values, stalled, levels })
}

/// Sup over checkpoints of ‖V_q(t, t0) P_{1,q}(t0) − P_{1,q}(t) V_q(t, t0)‖,
/// where V_q is generated by H_q + iε[P′_{1,q}, P_{1,q}].
///
/// Exact intertwining holds in the continuum; the measured defect collects
/// interpolation and integration error.
pub fn verify_intertwining(
    model: &HamiltonianModel,
    level: &SuperadiabaticLevel,
    tolerance: f64,
) -> Result<f64> {
    let _ = model;
    let (i0, i1) = level.window_indices();
    let gen = |t: f64| -> Result<CMat> { Ok(level.generator_at(t)) };
    let p0 = &level.projectors[i0];
    let mut u = CMat::identity(p0.nrows(), p0.ncols());
    let mut sup: f64 = 0.0;
    let mut prev = i0;
    for c in 1..INTERTWINING_CHECKPOINTS {
        let k = i0 + (i1 - i0) * c / (INTERTWINING_CHECKPOINTS - 1);
        let seg = propagate_with(gen, (level.times[prev], level.times[k]), level.epsilon, tolerance)?;
        u = &seg.u * &u;
        let defect = op_norm(&(&u * p0 - &level.projectors[k] * &u));
        if defect > sup {
            sup = defect;
        }
        prev = k;
    }
    Ok(sup)
}

/// Operator-norm distance ‖V_q(t1, t0) − U(t1, t0)‖ between the intertwining
/// propagator of `level` and the true one.
pub fn comparison_propagator(
    model: &HamiltonianModel,
    level: &SuperadiabaticLevel,
    tolerance: f64,
) -> Result<f64> {
    let (i0, i1) = level.window_indices();
    let span = (level.times[i0], level.times[i1]);
    let gen = |t: f64| -> Result<CMat> { Ok(level.generator_at(t)) };
    let v = propagate_with(gen, span, level.epsilon, tolerance)?;
    let u = propagate(model, span, level.epsilon, tolerance)?;
    Ok(op_norm(&(&v.u - &u.u)))
}

/// Orthonormalize the columns of a thin frame symmetrically (closest
/// orthonormal frame in the same column span).
fn orthonormalize_frame(w: &CMat) -> Result<CMat> {
    let overlap = w.adjoint() * w;
    let (vals, vecs) = jacobi_hermitian(&overlap);
    if vals[0] < FRAME_OVERLAP_FLOOR {
        return Err(Error::OverlapTooSmall {
            overlap: vals[0].max(0.0).sqrt(),
            floor: FRAME_OVERLAP_FLOOR.sqrt(),
        });
    }
    let k = overlap.nrows();
    let mut inv_sqrt = CMat::zeros(k, k);
    for (c, &val) in vals.iter().enumerate().take(k) {
        let v = vecs.column(c).clone_owned();
        inv_sqrt += &v * v.adjoint() * C64::new(1.0 / val.sqrt(), 0.0);
    }
    Ok(w * inv_sqrt)
}

/// Compress `model` onto the transported range of P_{1,q}.
///
/// The frame starts from the lowest two eigenvectors at the window start and
/// is parallel-transported node to node (project, then symmetric
/// re-orthonormalization), so the effective 2×2 Hamiltonian W†HW is smooth
/// in t. Requires a two-dimensional block inside a larger system.
pub fn reduce_to_effective(
    model: &HamiltonianModel,
    level: &SuperadiabaticLevel,
) -> Result<EffectiveReduction> {
    if level.partition != 2 || model.dimension() <= 2 {
        return Err(Error::RankMismatch {
            rank: level.partition,
            expected: 2,
        });
    }
    let (i0, i1) = level.window_indices();
    let n = model.dimension();
    let (_, vecs) = jacobi_hermitian(&level.hamiltonians[i0]);
    let mut w = CMat::zeros(n, 2);
    w.set_column(0, &vecs.column(0));
    w.set_column(1, &vecs.column(1));

    let mut times = Vec::with_capacity(i1 - i0 + 1);
    let mut frames = Vec::with_capacity(i1 - i0 + 1);
    let mut effective = Vec::with_capacity(i1 - i0 + 1);
    for k in i0..=i1 {
        if k > i0 {
            w = orthonormalize_frame(&(&level.projectors[k] * &w))?;
        }
        let t = level.times[k];
        let h_eff = w.adjoint() * model.evaluate_real(t) * &w;
        // reassemble as the exact hermitian part; the asymmetry is fp noise
        let h_eff = (&h_eff + h_eff.adjoint()) * C64::new(0.5, 0.0);
        times.push(t);
        frames.push(w.clone());
        effective.push(h_eff);
    }
    Ok(EffectiveReduction {
        epsilon: level.epsilon,
        grid_step: level.grid_step,
        times,
        frames,
        effective,
    })
}

/// Transition probability 1 → 2 of the effective two-level dynamics.
pub fn effective_transition(reduction: &EffectiveReduction, tolerance: f64) -> Result<f64> {
    let span = (reduction.times[0], *reduction.times.last().unwrap());
    let gen = |t: f64| -> Result<CMat> { Ok(reduction.effective_at(t)) };
    let prop = propagate_with(gen, span, reduction.epsilon, tolerance)?;
    // The transported frame is not the eigenbasis at the endpoints, so the
    // amplitude is taken between the eigenvectors of the compressed
    // Hamiltonian there, lower in, upper out.
    let (_, vecs0) = jacobi_hermitian(reduction.effective.first().unwrap());
    let (_, vecs1) = jacobi_hermitian(reduction.effective.last().unwrap());
    let amplitude = vecs1.column(1).dotc(&(&prop.u * vecs0.column(0)));
    Ok(amplitude.norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use crate::models::{self, HamiltonianModel};
    use crate::propagator::transition_probability_on;

    fn tanh_model() -> HamiltonianModel {
        models::tanh_sweep(0.3)
    }

    #[test]
    fn constant_model_is_a_fixed_point() {
        let m = models::constant(
            nalgebra::dmatrix![
                C64::new(1.0, 0.0), C64::new(0.3, 0.1);
                C64::new(0.3, -0.1), C64::new(-0.5, 0.0);
            ],
        );
        let levels = build_levels(&m, (-1.0, 1.0), 0.1, 3).unwrap();
        for level in &levels {
            assert!(
                level.defect_norm <= 1e-13,
                "constant Hamiltonian must not move under the recursion, defect {:.3e} at q={}",
                level.defect_norm,
                level.q
            );
        }
        let tr = superadiabatic_transition(&m, &levels[0], 1e-10).unwrap();
        assert!(
            tr.probability <= 1e-12,
            "time-independent blocks must not exchange population, got {:.3e}",
            tr.probability
        );
        let defect = verify_intertwining(&m, &levels[1], 1e-10).unwrap();
        assert!(defect <= 1e-9, "constant intertwining defect {:.3e}", defect);
    }

    #[test]
    fn level_zero_reproduces_plain_spectral_objects() {
        let m = tanh_model();
        let level = build_level(&m, (-2.0, 2.0), 0.05, 0).unwrap();
        let (i0, i1) = level.window_indices();
        for k in [i0, (i0 + i1) / 2, i1] {
            let t = level.times[k];
            let direct = crate::spectral::model_projector(&m, t, &[1]).unwrap();
            assert!(
                max_abs(&(&level.projectors[k] - &direct.matrix)) <= 1e-10,
                "q=0 projector must match the spectral one at t={t}"
            );
            assert!(
                max_abs(&(&level.hamiltonians[k] - &m.evaluate_real(t))) == 0.0,
                "q=0 Hamiltonian must be the model itself at t={t}"
            );
        }
    }

    #[test]
    fn first_correction_size_matches_the_mixing_rate() {
        // For a two-level real model the commutator norm is half the rotation
        // rate of the eigenframe; for tanh_sweep(δ) the rate peaks at t = 0
        // with value 1/δ, so sup‖H₁ − H₀‖ = ε/(2δ).
        let m = tanh_model();
        let eps = 0.05;
        let level = build_level(&m, (-3.0, 3.0), eps, 0).unwrap();
        let expected = eps / (2.0 * 0.3);
        assert!(
            (level.defect_norm - expected).abs() <= 1e-4,
            "sup‖H₁ − H₀‖ = {:.6} but ε/(2δ) = {:.6}",
            level.defect_norm,
            expected
        );
        let half = build_level(&m, (-3.0, 3.0), eps / 2.0, 0).unwrap();
        let ratio = level.defect_norm / half.defect_norm;
        assert!(
            (ratio - 2.0).abs() <= 1e-6,
            "first correction must be linear in ε, halving ratio {ratio:.8}"
        );
    }

    #[test]
    fn correction_decays_away_from_the_avoided_crossing() {
        let m = tanh_model();
        let eps = 0.05;
        let level = build_level(&m, (-6.0, 6.0), eps, 0).unwrap();
        let (i0, i1) = level.window_indices();
        let at = |k: usize| {
            let dp = crate::spectral::projector_derivative(&m, level.times[k], &[1], 1e-4).unwrap();
            let p = &level.projectors[k];
            eps * op_norm(&(&dp * p - p * &dp))
        };
        let mid = at((i0 + i1) / 2);
        let edge = at(i1);
        assert!(
            edge * 100.0 <= mid,
            "correction at the window edge ({edge:.3e}) must be far below the peak ({mid:.3e})"
        );
    }

    #[test]
    fn defects_shrink_with_each_level_before_truncation() {
        // Well below the series turn-over (the per-level growth factor is
        // roughly 30ε here), so the first three defects still descend.
        let m = tanh_model();
        let levels = build_levels(&m, (-6.0, 6.0), 0.015, 3).unwrap();
        assert!(
            levels[1].defect_norm < 0.6 * levels[0].defect_norm,
            "defect did not drop from q=0 ({:.3e}) to q=1 ({:.3e})",
            levels[0].defect_norm,
            levels[1].defect_norm
        );
        assert!(
            levels[2].defect_norm < levels[1].defect_norm,
            "defect did not drop from q=1 ({:.3e}) to q=2 ({:.3e})",
            levels[1].defect_norm,
            levels[2].defect_norm
        );
    }

    #[test]
    fn defect_norms_scale_with_their_order() {
        // d_q ~ C_q ε^{q+1}, so halving ε divides the level-q defect by 2^{q+1}.
        let m = tanh_model();
        let big = build_levels(&m, (-6.0, 6.0), 0.04, 3).unwrap();
        let small = build_levels(&m, (-6.0, 6.0), 0.02, 3).unwrap();
        for q in [1usize, 2] {
            let ratio = big[q].defect_norm / small[q].defect_norm;
            let expected = 2f64.powi(q as i32 + 1);
            assert!(
                (ratio / expected - 1.0).abs() < 0.35,
                "level {q}: halving ratio {ratio:.3} vs 2^{} = {expected}",
                q + 1
            );
        }
    }

    #[test]
    fn truncation_order_grows_as_epsilon_shrinks() {
        let m = tanh_model();
        let coarse = optimal_truncation(&m, (-6.0, 6.0), 0.1, 8, TruncationCriterion::DefectNorm).unwrap();
        let fine = optimal_truncation(&m, (-6.0, 6.0), 0.05, 8, TruncationCriterion::DefectNorm).unwrap();
        assert!(coarse.q_star >= 1, "q*(0.1) = {} should be at least 1", coarse.q_star);
        assert!(
            fine.q_star >= coarse.q_star,
            "q*(0.05) = {} must not be below q*(0.1) = {}",
            fine.q_star,
            coarse.q_star
        );
    }

    #[test]
    fn large_epsilon_yields_order_zero_with_warning() {
        let m = tanh_model();
        let tr = optimal_truncation(&m, (-6.0, 6.0), 0.5, 6, TruncationCriterion::DefectNorm).unwrap();
        assert_eq!(tr.q_star, 0, "at ε = 0.5 the recursion must not help: {:?}", tr.criterion_values);
        assert!(
            tr.stalled,
            "the search should report a stall: {:?}",
            tr.criterion_values
        );
    }

    #[test]
    fn transition_orders_improve_with_q_on_a_crossing_free_window() {
        // Window (1, 3) keeps the avoided crossing at t = 0 outside, so the
        // measured probability is the pure boundary transient ~ ε^{2q+2}.
        let m = tanh_model();
        let mut slopes = Vec::new();
        for q in [1usize, 2] {
            let mut lo = 0.0;
            let mut hi = 0.0;
            for (i, eps) in [0.08, 0.04].into_iter().enumerate() {
                let level = build_level(&m, (1.0, 3.0), eps, q).unwrap();
                let tol = if q == 2 { 1e-13 } else { 1e-11 };
                let p = superadiabatic_transition(&m, &level, tol).unwrap().probability;
                assert!(p > 0.0, "transient probability underflowed at q={q}, ε={eps}");
                if i == 0 {
                    hi = p;
                } else {
                    lo = p;
                }
            }
            slopes.push((hi / lo).ln() / 2f64.ln());
        }
        assert!(
            (slopes[0] - 4.0).abs() <= 0.6,
            "q=1 transient should scale like ε⁴, slope {:.3}",
            slopes[0]
        );
        assert!(
            (slopes[1] - 6.0).abs() <= 0.8,
            "q=2 transient should scale like ε⁶, slope {:.3}",
            slopes[1]
        );
    }

    #[test]
    fn frames_converge_to_the_adiabatic_one() {
        let m = tanh_model();
        let sup_diff = |eps: f64| {
            let levels = build_levels(&m, (-2.0, 2.0), eps, 1).unwrap();
            let (a0, a1) = levels[0].window_indices();
            let (b0, _) = levels[1].window_indices();
            (0..=a1 - a0)
                .map(|j| max_abs(&(&levels[1].projectors[b0 + j] - &levels[0].projectors[a0 + j])))
                .fold(0.0f64, f64::max)
        };
        let d1 = sup_diff(0.1);
        let d2 = sup_diff(0.05);
        let ratio = d1 / d2;
        assert!(
            (1.5..=2.6).contains(&ratio),
            "P_(1,1) − P_(1,0) must shrink linearly in ε, ratio {ratio:.3}"
        );
    }

    #[test]
    fn intertwining_defect_is_small_for_low_orders() {
        let m = tanh_model();
        for q in [0usize, 1] {
            let level = build_level(&m, (-3.0, 3.0), 0.05, q).unwrap();
            let defect = verify_intertwining(&m, &level, 1e-10).unwrap();
            assert!(
                defect <= 1e-6,
                "intertwining defect {defect:.3e} too large at q={q}"
            );
        }
    }

    #[test]
    fn comparison_propagator_is_small_at_low_order() {
        // V_0 and U differ by the ε-small frame rotation accumulated over the
        // window; the distance must be O(ε), not O(1).
        let m = tanh_model();
        let level = build_level(&m, (-3.0, 3.0), 0.05, 0).unwrap();
        let d = comparison_propagator(&m, &level, 1e-10).unwrap();
        assert!(d < 0.6, "‖V₀ − U‖ = {d:.3} should be well below the unitary scale 2");
    }

    #[test]
    fn gap_closure_is_reported_with_location() {
        let m = HamiltonianModel::from_closure(3, 0.5, false, 2, |z| {
            nalgebra::dmatrix![
                C64::new(-2.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0);
                C64::new(0.0, 0.0), -z, C64::new(0.0, 0.0);
                C64::new(0.0, 0.0), C64::new(0.0, 0.0), z;
            ]
        });
        let err = build_levels(&m, (-1.0, 1.0), 0.05, 1).unwrap_err();
        match err {
            Error::GapClosure { q, t, min_gap, .. } => {
                assert_eq!(q, 0);
                assert!(t.abs() <= 0.02, "closure should be located near t=0, got {t}");
                assert!(min_gap.abs() <= 1e-9);
            }
            other => panic!("expected GapClosure, got {other:?}"),
        }
    }

    fn block_diagonal_model() -> HamiltonianModel {
        HamiltonianModel::from_closure(3, 1.4, true, 2, |z| {
            let t = z.tanh() * 0.5;
            nalgebra::dmatrix![
                t, C64::new(0.15, 0.0), C64::new(0.0, 0.0);
                C64::new(0.15, 0.0), -t, C64::new(0.0, 0.0);
                C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(2.0, 0.0);
            ]
        })
    }

    #[test]
    fn reduction_is_exact_for_a_decoupled_block() {
        let m = block_diagonal_model();
        let eps = 0.05;
        let level = build_level(&m, (-3.0, 3.0), eps, 0).unwrap();
        let red = reduce_to_effective(&m, &level).unwrap();
        for f in [&red.frames[0], red.frames.last().unwrap()] {
            assert!(
                f[(2, 0)].norm() + f[(2, 1)].norm() <= 1e-9,
                "frames must stay inside the decoupled block"
            );
        }
        let p_eff = effective_transition(&red, 1e-10).unwrap();
        let p_full = transition_probability_on(&m, 1, 2, (-3.0, 3.0), eps, 1e-10)
            .unwrap()
            .probability;
        assert!(
            (p_eff - p_full).abs() <= 1e-7,
            "decoupled block must reduce exactly: effective {p_eff:.9e}, full {p_full:.9e}"
        );
    }

    #[test]
    fn reduction_requires_a_two_dimensional_block() {
        let m = models::landau_zener(1.0, 0.5);
        let level = build_level(&m, (-1.0, 1.0), 0.1, 0).unwrap();
        match reduce_to_effective(&m, &level) {
            Err(Error::RankMismatch { rank, expected }) => {
                assert_eq!((rank, expected), (1, 2));
            }
            other => panic!("expected RankMismatch, got {other:?}"),
        }
    }

    #[test]
    fn cascade_reduction_tracks_the_full_first_transition() {
        // Window ends before the second avoided crossing, so only the 1-2
        // channel is active and the compressed dynamics must reproduce it.
        let m = models::three_level_cascade(0.1, -1.0, 1.0);
        let eps = 0.05;
        let level = build_level(&m, (-4.0, 0.0), eps, 2).unwrap();
        let red = reduce_to_effective(&m, &level).unwrap();
        let p_eff = effective_transition(&red, 1e-10).unwrap();
        let p_full = transition_probability_on(&m, 1, 2, (-4.0, 0.0), eps, 1e-10)
            .unwrap()
            .probability;
        let band = (0.05 * p_full).max(1e-4);
        assert!(
            (p_eff - p_full).abs() <= band,
            "effective {p_eff:.6e} vs full {p_full:.6e} beyond band {band:.1e}"
        );
    }

    #[test]
    fn effective_hamiltonian_settles_as_epsilon_drops() {
        let m = models::three_level_cascade(0.1, -1.0, 1.0);
        let mid_gap = |eps: f64| {
            let level = build_level(&m, (-2.0, 0.0), eps, 1).unwrap();
            let red = reduce_to_effective(&m, &level).unwrap();
            let adiabatic = {
                let l0 = build_level(&m, (-2.0, 0.0), eps, 0).unwrap();
                let r0 = reduce_to_effective(&m, &l0).unwrap();
                r0.effective[r0.effective.len() / 2].clone()
            };
            max_abs(&(&red.effective[red.effective.len() / 2] - &adiabatic))
        };
        let d1 = mid_gap(0.1);
        let d2 = mid_gap(0.05);
        assert!(
            d2 < d1 && d1 / d2 > 1.5,
            "effective Hamiltonian must approach the adiabatic compression, diffs {d1:.3e} / {d2:.3e}"
        );
    }
}
