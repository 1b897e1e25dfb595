//! End-to-end acceptance checks, one per numbered criterion.
//!
//! Each test measures with the public API only, pins its tolerances in the
//! constants below, and prints one summary line (visible under
//! `--nocapture`); the harness line `criterion_N_... ok/FAILED` is the
//! per-criterion verdict. Budgets are wall-clock seconds on a single
//! developer machine with the default thread pool.

use std::time::Instant;

use adlab::asymptotics::{fit_decay_rate, lz_exponent, theorem1_estimate, theorem1prime_estimate};
use adlab::complexplane::{find_crossing, loop_integral, rectangle_loop};
use adlab::linalg::{max_abs, op_norm, unitarity_defect};
use adlab::models;
use adlab::propagator::{coefficients, propagate, transition_probability};
use adlab::spectral::model_projector;
use adlab::superadiabatic::{
    build_level, comparison_propagator, optimal_truncation, superadiabatic_transition,
    verify_intertwining, TruncationCriterion,
};
use adlab::{C64, CMat};

/// Relative slack on fitted decay rates against their closed-form or contour
/// references (criteria 1, 3).
const RATE_RTOL: f64 = 0.03;
/// Relative slack on the measured probability at ε = 0.1 against the pure
/// linear-sweep value (criterion 1).
const POINT_RTOL: f64 = 0.03;
/// Admissible fitted prefactor band for the real symmetric sweep
/// (criterion 2).
const PREFACTOR_BAND: (f64, f64) = (0.8, 1.25);
/// Bound on |Im θ| of the frame closure for a real symmetric sweep
/// (criterion 2).
const CLOSURE_IM_TOL: f64 = 1e-6;
/// Relative slack on the fitted prefactor against the geometric one
/// (criterion 3).
const PREFACTOR_RTOL: f64 = 0.10;
/// Finite-window transient power law and its slack (criterion 4).
const WINDOW_SLOPE: (f64, f64) = (2.0, 0.2);
/// Frame-order power laws and their slacks (criterion 5).
const ORDER_ONE_SLOPE: (f64, f64) = (4.0, 0.3);
const ORDER_TWO_SLOPE: (f64, f64) = (6.0, 0.5);
/// Crossing-free window used for the transient power laws (criteria 4, 5);
/// the full window contains the crossing-driven exponential channel, which
/// would mask the ε-power transients these checks isolate.
const TRANSIENT_WINDOW: (f64, f64) = (1.0, 3.0);
/// Linearity floor for ln P versus 1/ε at the truncation order
/// (criterion 6).
const EXP_LAW_R2: f64 = 0.99;
/// The propagator distance must decay with a rate within this relative band
/// of half the probability rate (criterion 6).
const DISTANCE_RATE_RTOL: f64 = 0.25;
/// Relative slack on the fitted cascade exponent against the two-crossing
/// contour sum (criterion 7).
const CASCADE_RATE_RTOL: f64 = 0.05;
/// Propagator algebra bound: unitarity, composition, time reversal
/// (criterion 8).
const PROPAGATOR_ALGEBRA_TOL: f64 = 1e-7;
/// Projector algebra bound (criterion 8).
const PROJECTOR_ALGEBRA_TOL: f64 = 1e-9;
/// Reflection symmetry bound over the sampled strip points (criterion 8).
const REFLECTION_TOL: f64 = 1e-10;
/// Intertwining defect bound for the plain adiabatic frame (criterion 8).
const INTERTWINING_TOL: f64 = 1e-6;
/// Transient-size power law of the followed coefficient and its slack
/// (criterion 8).
const BORN_FOCK_SLOPE: (f64, f64) = (1.0, 0.15);

/// Wall-clock budgets, seconds (criteria 1, 3, 7).
const BUDGET_LINEAR: f64 = 120.0;
const BUDGET_TWISTED: f64 = 300.0;
const BUDGET_CASCADE: f64 = 600.0;

fn log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    sxy / sxx
}

fn sweep(
    model: &models::HamiltonianModel,
    from: usize,
    to: usize,
    epsilons: &[f64],
    tolerance: f64,
) -> Vec<(f64, f64)> {
    epsilons
        .iter()
        .map(|&eps| {
            let r = transition_probability(model, from, to, eps, tolerance)
                .unwrap_or_else(|e| panic!("sweep failed at eps = {eps}: {e}"));
            (eps, r.probability)
        })
        .collect()
}

#[test]
fn criterion_1_linear_sweep_decay_rate() {
    let start = Instant::now();
    let model = models::landau_zener(1.0, 0.5);
    let grid = [0.10, 0.08, 0.06, 0.05, 0.04];
    let samples = sweep(&model, 1, 2, &grid, 1e-10);
    let fit = fit_decay_rate(&samples).unwrap();
    let reference = -lz_exponent(1.0, 0.5);
    let rate_dev = (2.0 * fit.gamma - reference).abs() / reference;
    let point_ref = (lz_exponent(1.0, 0.5) / 0.10).exp();
    let point_dev = (samples[0].1 - point_ref).abs() / point_ref;
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        rate_dev <= RATE_RTOL,
        "fitted rate 2g = {:.6} deviates {:.2}% from {:.6}",
        2.0 * fit.gamma,
        100.0 * rate_dev,
        reference
    );
    assert!(
        point_dev <= POINT_RTOL,
        "P(0.1) = {:.6e} deviates {:.2}% from {:.6e}",
        samples[0].1,
        100.0 * point_dev,
        point_ref
    );
    assert!(elapsed <= BUDGET_LINEAR, "took {elapsed:.1} s, budget {BUDGET_LINEAR} s");
    println!(
        "criterion 1 (linear sweep decay): PASS; 2g = {:.6} vs {:.6} ({:+.3}%), \
         P(0.1) = {:.5e} vs {:.5e} ({:+.3}%), {:.1} s",
        2.0 * fit.gamma,
        reference,
        100.0 * (2.0 * fit.gamma - reference) / reference,
        samples[0].1,
        point_ref,
        100.0 * (samples[0].1 - point_ref) / point_ref,
        elapsed
    );
}

#[test]
fn criterion_2_linear_sweep_prefactor() {
    let model = models::landau_zener(1.0, 0.5);
    let grid = [0.10, 0.08, 0.06, 0.05, 0.04];
    let samples = sweep(&model, 1, 2, &grid, 1e-10);
    let fit = fit_decay_rate(&samples).unwrap();
    let estimate = theorem1_estimate(&model, 0.1).unwrap();
    let closure_im = estimate.log_prefactor / 2.0;
    assert!(
        (PREFACTOR_BAND.0..=PREFACTOR_BAND.1).contains(&fit.prefactor),
        "fitted prefactor {:.4} outside [{}, {}]",
        fit.prefactor,
        PREFACTOR_BAND.0,
        PREFACTOR_BAND.1
    );
    assert!(
        closure_im.abs() <= CLOSURE_IM_TOL,
        "real symmetric sweep must close with real θ, got Im θ = {closure_im:.3e}"
    );
    println!(
        "criterion 2 (geometric prefactor, symmetric sweep): PASS; C = {:.4}, Im θ = {:.2e}",
        fit.prefactor, closure_im
    );
}

#[test]
fn criterion_3_twisted_sweep_prefactor() {
    let start = Instant::now();
    let model = models::complex_hermitian(1.0, 0.3, 0.2);
    let grid = [0.05, 0.045, 0.04, 0.035, 0.03];
    let samples = sweep(&model, 1, 2, &grid, 1e-10);
    let fit = fit_decay_rate(&samples).unwrap();
    let estimate = theorem1_estimate(&model, 0.05).unwrap();
    let rate_ref = -estimate.exponent_per_eps;
    let prefactor_ref = estimate.log_prefactor.exp();
    let rate_dev = (2.0 * fit.gamma - rate_ref).abs() / rate_ref;
    let prefactor_dev = (fit.prefactor - prefactor_ref).abs() / prefactor_ref;
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        rate_dev <= RATE_RTOL,
        "fitted rate 2g = {:.6} deviates {:.2}% from contour value {:.6}",
        2.0 * fit.gamma,
        100.0 * rate_dev,
        rate_ref
    );
    assert!(
        prefactor_dev <= PREFACTOR_RTOL,
        "fitted prefactor {:.5} deviates {:.2}% from geometric value {:.5}",
        fit.prefactor,
        100.0 * prefactor_dev,
        prefactor_ref
    );
    assert!(elapsed <= BUDGET_TWISTED, "took {elapsed:.1} s, budget {BUDGET_TWISTED} s");
    println!(
        "criterion 3 (twisted sweep prefactor): PASS; 2g = {:.6} vs {:.6}, \
         C = {:.5} vs {:.5} ({:+.3}%), {:.1} s",
        2.0 * fit.gamma,
        rate_ref,
        fit.prefactor,
        prefactor_ref,
        100.0 * (fit.prefactor - prefactor_ref) / prefactor_ref,
        elapsed
    );
}

#[test]
fn criterion_4_window_transient_power_law() {
    let model = models::tanh_sweep(0.3);
    let mut points = Vec::new();
    for eps in [0.2, 0.14, 0.1, 0.07, 0.05, 0.035, 0.02] {
        let level = build_level(&model, TRANSIENT_WINDOW, eps, 0).unwrap();
        let p = superadiabatic_transition(&model, &level, 1e-12).unwrap().probability;
        points.push((eps, p));
    }
    let slope = log_slope(&points);
    assert!(
        (slope - WINDOW_SLOPE.0).abs() <= WINDOW_SLOPE.1,
        "transient power law: slope {:.3}, expected {} +- {}",
        slope,
        WINDOW_SLOPE.0,
        WINDOW_SLOPE.1
    );
    println!("criterion 4 (finite-window transient): PASS; slope = {slope:.3}");
}

#[test]
fn criterion_5_higher_frame_power_laws() {
    let model = models::tanh_sweep(0.3);
    let mut slopes = Vec::new();
    for (q, tol) in [(1usize, 1e-12), (2, 1e-13)] {
        let mut points = Vec::new();
        for eps in [0.08, 0.04, 0.02] {
            let level = build_level(&model, TRANSIENT_WINDOW, eps, q).unwrap();
            let p = superadiabatic_transition(&model, &level, tol).unwrap().probability;
            points.push((eps, p));
        }
        slopes.push(log_slope(&points));
    }
    assert!(
        (slopes[0] - ORDER_ONE_SLOPE.0).abs() <= ORDER_ONE_SLOPE.1,
        "first frame: slope {:.3}, expected {} +- {}",
        slopes[0],
        ORDER_ONE_SLOPE.0,
        ORDER_ONE_SLOPE.1
    );
    assert!(
        (slopes[1] - ORDER_TWO_SLOPE.0).abs() <= ORDER_TWO_SLOPE.1,
        "second frame: slope {:.3}, expected {} +- {}",
        slopes[1],
        ORDER_TWO_SLOPE.0,
        ORDER_TWO_SLOPE.1
    );
    println!(
        "criterion 5 (frame-order transients): PASS; q=1 slope = {:.3}, q=2 slope = {:.3}",
        slopes[0], slopes[1]
    );
}

#[test]
fn criterion_6_truncated_frame_exponential_law() {
    let model = models::tanh_sweep(0.3);
    let window = (-10.4, 10.4);
    let mut probabilities = Vec::new();
    let mut distances = Vec::new();
    for eps in [0.085, 0.07, 0.055, 0.045, 0.035] {
        let tr = optimal_truncation(&model, window, eps, 12, TruncationCriterion::DefectNorm)
            .unwrap();
        assert!(!tr.stalled, "truncation search stalled at eps = {eps}");
        let level = &tr.levels[tr.q_star];
        let p = superadiabatic_transition(&model, level, 1e-11).unwrap().probability;
        let d = comparison_propagator(&model, level, 1e-11).unwrap();
        probabilities.push((eps, p));
        distances.push((eps, d));
    }
    let fit_p = fit_decay_rate(&probabilities).unwrap();
    let fit_d = fit_decay_rate(&distances).unwrap();
    let rate_dev = (2.0 * fit_d.gamma - fit_p.gamma).abs() / fit_p.gamma;
    assert!(
        fit_p.r_squared >= EXP_LAW_R2,
        "ln P at q* is not linear in 1/eps: r2 = {:.5}",
        fit_p.r_squared
    );
    assert!(
        fit_d.r_squared >= EXP_LAW_R2,
        "propagator distance is not exponential in 1/eps: r2 = {:.5}",
        fit_d.r_squared
    );
    assert!(
        rate_dev <= DISTANCE_RATE_RTOL,
        "distance rate 2g = {:.4} vs amplitude rate {:.4}, off by {:.1}%",
        2.0 * fit_d.gamma,
        fit_p.gamma,
        100.0 * rate_dev
    );
    println!(
        "criterion 6 (exponential law at q*): PASS; P rate = {:.5} (r2 = {:.5}), \
         distance rate = {:.5} (r2 = {:.5})",
        2.0 * fit_p.gamma,
        fit_p.r_squared,
        2.0 * fit_d.gamma,
        fit_d.r_squared
    );
}

#[test]
fn criterion_7_cascade_factorization() {
    let start = Instant::now();
    let model = models::three_level_cascade(0.1, -1.0, 1.0);
    let grid = [0.1, 0.08, 0.065, 0.05, 0.04];
    let samples = sweep(&model, 1, 3, &grid, 1e-10);
    let fit = fit_decay_rate(&samples).unwrap();
    let estimate = theorem1prime_estimate(&model, 0.05).unwrap();
    let rate_ref = -estimate.exponent_per_eps;
    let rate_dev = (2.0 * fit.gamma - rate_ref).abs() / rate_ref;
    assert!(
        rate_dev <= CASCADE_RATE_RTOL,
        "fitted P31 rate {:.5} deviates {:.2}% from the two-crossing sum {:.5}",
        2.0 * fit.gamma,
        100.0 * rate_dev,
        rate_ref
    );
    let mut values = Vec::new();
    for delta in [0.1, 0.05, 0.025] {
        let m = models::three_level_cascade(delta, -1.0, 1.0);
        values.push(theorem1prime_estimate(&m, 0.05).unwrap().value);
    }
    assert!(
        values[0] < values[1] && values[1] < values[2],
        "estimate must rise toward 1 as the gap closes: {values:?}"
    );
    assert!(
        values[2] > 0.6,
        "estimate at the smallest gap should approach 1, got {:.3}",
        values[2]
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed <= BUDGET_CASCADE, "took {elapsed:.1} s, budget {BUDGET_CASCADE} s");
    println!(
        "criterion 7 (cascade factorization): PASS; 2g = {:.5} vs {:.5} ({:+.3}%), \
         estimates {:?}, {:.1} s",
        2.0 * fit.gamma,
        rate_ref,
        100.0 * (2.0 * fit.gamma - rate_ref) / rate_ref,
        values,
        elapsed
    );
}

#[test]
fn criterion_8_structural_properties() {
    let model = models::tanh_sweep(0.3);
    let eps = 0.1;
    let tol = 1e-9;

    // Propagator algebra: unitarity, composition, time reversal.
    let full = propagate(&model, (-6.0, 6.0), eps, tol).unwrap();
    let first = propagate(&model, (-6.0, 0.0), eps, tol).unwrap();
    let second = propagate(&model, (0.0, 6.0), eps, tol).unwrap();
    let back = propagate(&model, (6.0, -6.0), eps, tol).unwrap();
    let n = 2;
    let eye = CMat::identity(n, n);
    let unitarity = unitarity_defect(&full.u);
    let composition = op_norm(&(&second.u * &first.u - &full.u));
    let reversal = op_norm(&(&back.u * &full.u - &eye));
    assert!(unitarity <= PROPAGATOR_ALGEBRA_TOL, "unitarity defect {unitarity:.2e}");
    assert!(composition <= PROPAGATOR_ALGEBRA_TOL, "composition defect {composition:.2e}");
    assert!(reversal <= PROPAGATOR_ALGEBRA_TOL, "time-reversal defect {reversal:.2e}");

    // Projector algebra on the real axis.
    let mut projector_defect = 0.0f64;
    for k in 0..9 {
        let t = -2.0 + 0.5 * k as f64;
        let h = model.evaluate_real(t);
        let p = model_projector(&model, t, &[1]).unwrap().matrix;
        let q = model_projector(&model, t, &[2]).unwrap().matrix;
        let idem = max_abs(&(&p * &p - &p));
        let herm = max_abs(&(p.adjoint() - &p));
        let commute = max_abs(&(&h * &p - &p * &h));
        let complete = max_abs(&(&p + &q - &eye));
        projector_defect = projector_defect.max(idem).max(herm).max(commute).max(complete);
    }
    assert!(
        projector_defect <= PROJECTOR_ALGEBRA_TOL,
        "projector algebra defect {projector_defect:.2e}"
    );

    // Reflection symmetry H(z̄) = H(z)† on 100 strip points per model.
    let mut reflection = 0.0f64;
    for m in [
        models::landau_zener(1.0, 0.5),
        models::tanh_sweep(0.3),
        models::complex_hermitian(1.0, 0.3, 0.2),
        models::three_level_cascade(0.1, -1.0, 1.0),
    ] {
        let cap = 0.9 * m.strip_halfwidth().min(1.5);
        for k in 0..100 {
            let re = -3.0 + 6.0 * (k % 10) as f64 / 9.0;
            let im_mag = 0.05 + (cap - 0.05) * (k / 10) as f64 / 9.0;
            let im = if k % 2 == 0 { im_mag } else { -im_mag };
            let z = C64::new(re, im);
            let here = m.evaluate(z).unwrap();
            let mirrored = m.evaluate(z.conj()).unwrap();
            reflection = reflection.max(max_abs(&(mirrored - here.adjoint())));
        }
    }
    assert!(reflection <= REFLECTION_TOL, "reflection defect {reflection:.2e}");

    // Monodromy: one circuit around the crossing exchanges the pair labels.
    let crossing = find_crossing(&model, C64::new(0.1, 0.35)).unwrap();
    let path = rectangle_loop(&model, &crossing, None, None).unwrap();
    let circuit = loop_integral(&model, &path, crossing.pair.0).unwrap();
    assert_eq!(
        circuit.returned_as_label, crossing.pair.1,
        "branch {} should return as {}, got {}",
        crossing.pair.0, crossing.pair.1, circuit.returned_as_label
    );

    // Intertwining of the plain adiabatic frame.
    let level = build_level(&model, (-3.0, 3.0), 0.05, 0).unwrap();
    let intertwining = verify_intertwining(&model, &level, 1e-9).unwrap();
    assert!(
        intertwining <= INTERTWINING_TOL,
        "intertwining defect {intertwining:.2e} at q = 0"
    );

    // Size of the followed coefficient's transient is linear in ε.
    let mut drifts = Vec::new();
    for e in [0.1, 0.05, 0.025] {
        let trace = coefficients(&model, 1, (-6.0, 6.0), e, 1e-9, 120).unwrap();
        drifts.push((e, trace.sup_drift(1)));
    }
    let bf_slope = log_slope(&drifts);
    assert!(
        (bf_slope - BORN_FOCK_SLOPE.0).abs() <= BORN_FOCK_SLOPE.1,
        "coefficient transient: slope {:.3}, expected {} +- {}",
        bf_slope,
        BORN_FOCK_SLOPE.0,
        BORN_FOCK_SLOPE.1
    );

    println!(
        "criterion 8 (structural properties): PASS; unitarity {:.1e}, composition {:.1e}, \
         reversal {:.1e}, projectors {:.1e}, reflection {:.1e}, monodromy {} -> {}, \
         intertwining {:.1e}, transient slope {:.3}",
        unitarity,
        composition,
        reversal,
        projector_defect,
        reflection,
        crossing.pair.0,
        circuit.returned_as_label,
        intertwining,
        bf_slope
    );
}
