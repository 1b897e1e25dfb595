//! Dense complex linear algebra for small matrices (n ≤ 8).
//!
//! The hermitian eigensolver is a hand-written cyclic Jacobi iteration rather
//! than a library call: the pivot order is fixed, so the eigendecomposition is
//! reproducible bit-for-bit across runs and platforms, which the rest of the
//! pipeline (phase conventions, continuation, CSV output) relies on.

use crate::error::{Error, Result};
use crate::{C64, CMat, CVec};

/// Machine-level tolerance used to decide when the off-diagonal mass of a
/// Jacobi iterate is negligible.
const JACOBI_EPS: f64 = 1e-15;
/// Jacobi sweeps converge cubically; n ≤ 8 needs ~6 sweeps, 60 is a safeguard.
const JACOBI_MAX_SWEEPS: usize = 60;

/// Largest deviation from hermiticity, max_ij |m_ij - conj(m_ji)|.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut defect = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            if d > defect {
                defect = d;
            }
        }
    }
    defect
}

pub fn require_hermitian(m: &CMat, tolerance: f64) -> Result<()> {
    let defect = hermitian_defect(m);
    if defect > tolerance {
        return Err(Error::NotHermitian { defect, tolerance });
    }
    Ok(())
}

/// Max entry modulus.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Frobenius norm of the off-diagonal part.
fn off_diagonal_norm(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Eigendecomposition of a hermitian matrix by cyclic Jacobi rotations.
///
/// Returns ascending eigenvalues and the matching orthonormal eigenvector
/// columns. The input is symmetrized first, so callers must enforce their own
/// hermiticity tolerance beforehand. Column phases are left untouched here;
/// [`phase_fix_column`] applies the deterministic convention.
pub fn jacobi_hermitian(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "eigensolver needs a square matrix");
    // Work on the hermitian average; drops defects below the caller's tolerance.
    let mut a = CMat::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
    let mut v = CMat::identity(n, n);
    let scale = a.norm().max(1.0);

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) <= JACOBI_EPS * scale {
            break;
        }
        // Fixed row-major pivot order makes the iteration deterministic.
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let abs_apq = apq.norm();
                if abs_apq <= JACOBI_EPS * scale * 1e-2 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                // Phase that makes the pivot entry real, then a real Givens
                // rotation that zeroes it.
                let phase = apq / abs_apq; // e^{i φ}
                let tau = (aqq - app) / (2.0 * abs_apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // U restricted to (p,q): [[c, s], [-e^{-iφ} s, e^{-iφ} c]].
                let u_pp = C64::new(c, 0.0);
                let u_pq = C64::new(s, 0.0);
                let u_qp = -phase.conj() * s;
                let u_qq = phase.conj() * c;

                // A <- U† A U; first columns, then rows.
                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = aip * u_pp + aiq * u_qp;
                    a[(i, q)] = aip * u_pq + aiq * u_qq;
                }
                for j in 0..n {
                    let apj = a[(p, j)];
                    let aqj = a[(q, j)];
                    a[(p, j)] = u_pp.conj() * apj + u_qp.conj() * aqj;
                    a[(q, j)] = u_pq.conj() * apj + u_qq.conj() * aqj;
                }
                // Clean the pivot pair exactly; rounding noise here feeds the
                // convergence test.
                a[(p, q)] = C64::new(0.0, 0.0);
                a[(q, p)] = C64::new(0.0, 0.0);

                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = vip * u_pp + viq * u_qp;
                    v[(i, q)] = vip * u_pq + viq * u_qq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let values: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap().then(i.cmp(&j)));

    let sorted_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut sorted_vectors = CMat::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        sorted_vectors.set_column(new_col, &v.column(old_col));
    }
    (sorted_values, sorted_vectors)
}

/// Deterministic phase convention: multiply the column by a unit scalar so its
/// largest-modulus entry becomes real positive; ties resolve to the lowest
/// index (strict `>` keeps the first maximal entry).
pub fn phase_fix_column(col: &mut CVec) {
    let mut best = 0usize;
    let mut best_norm = 0.0f64;
    for (i, c) in col.iter().enumerate() {
        let nrm = c.norm();
        if nrm > best_norm {
            best_norm = nrm;
            best = i;
        }
    }
    if best_norm == 0.0 {
        return;
    }
    let phase = col[best] / best_norm;
    let correction = phase.conj();
    for c in col.iter_mut() {
        *c *= correction;
    }
}

/// exp(-i s K) for hermitian K, via the Jacobi eigendecomposition. The result
/// is a product V diag(e^{-i s λ}) V†, unitary to rounding accuracy.
pub fn unitary_exp_neg_i(k: &CMat, s: f64) -> CMat {
    let n = k.nrows();
    let (values, vectors) = jacobi_hermitian(k);
    let mut phased = vectors.clone();
    for (j, lambda) in values.iter().enumerate() {
        let ph = C64::new(0.0, -s * lambda).exp();
        for i in 0..n {
            phased[(i, j)] *= ph;
        }
    }
    phased * vectors.adjoint()
}

/// ‖U†U - I‖ (Frobenius), the unitarity defect.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let n = u.nrows();
    (u.adjoint() * u - CMat::identity(n, n)).norm()
}

/// Operator 2-norm, the largest singular value.
pub fn op_norm(m: &CMat) -> f64 {
    let (values, _) = jacobi_hermitian(&(m.adjoint() * m));
    values.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// One eigenpair of a general complex matrix by Newton iteration on the
/// bordered system ((H - e)v, c†v - 1) = 0, seeded from a nearby eigenpair.
/// The normalization direction c is the seed vector, so the solve stays
/// well-conditioned as long as the eigenvector rotates by less than ~90°.
pub fn newton_eigenpair(h: &CMat, seed_value: C64, seed_vector: &CVec) -> Result<(C64, CVec)> {
    let n = h.nrows();
    let c = seed_vector / C64::new(seed_vector.norm(), 0.0);
    let mut v = c.clone();
    let mut e = seed_value;
    let scale = max_abs(h).max(1.0);

    for iteration in 0..50 {
        let mut residual = h * &v - &v * e;
        let constraint = c.dotc(&v) - C64::new(1.0, 0.0);
        let res_norm = (residual.norm_squared() + constraint.norm_sqr()).sqrt();
        if res_norm <= 1e-13 * scale {
            let norm = v.norm();
            return Ok((e, v / C64::new(norm, 0.0)));
        }

        let mut jac = CMat::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                jac[(i, j)] = h[(i, j)];
            }
            jac[(i, i)] -= e;
            jac[(i, n)] = -v[i];
            jac[(n, i)] = c[i].conj();
        }
        let mut rhs = CVec::zeros(n + 1);
        for i in 0..n {
            rhs[i] = -residual[i];
        }
        rhs[n] = -constraint;

        let delta = jac.lu().solve(&rhs).ok_or(Error::NewtonDiverged {
            iterations: iteration,
            last: e,
            residual: res_norm,
        })?;
        for i in 0..n {
            v[i] += delta[i];
        }
        e += delta[n];
        residual = h * &v - &v * e;
        let _ = residual;
    }

    let res = (h * &v - &v * e).norm();
    Err(Error::NewtonDiverged {
        iterations: 50,
        last: e,
        residual: res,
    })
}

/// Eigenvalues of a general complex 2×2.
pub fn eigenvalues_2x2(m: &CMat) -> [C64; 2] {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let half = tr * 0.5;
    let root = (half * half - det).sqrt();
    [half - root, half + root]
}

/// Eigenvalues of a general complex 3×3 via Cardano's formula.
pub fn eigenvalues_3x3(m: &CMat) -> [C64; 3] {
    // Characteristic polynomial λ³ + p λ² + q λ + r.
    let (p, q, r) = char_poly_3x3(m);
    let third = C64::new(1.0 / 3.0, 0.0);
    // Depressed cubic t³ + at + b with λ = t - p/3.
    let a = q - p * p * third;
    let b = p * p * p * C64::new(2.0 / 27.0, 0.0) - p * q * third + r;
    let shift = -p * third;

    let disc = b * b * 0.25 + a * a * a / 27.0;
    let sqrt_disc = disc.sqrt();
    let mut u3 = -b * 0.5 + sqrt_disc;
    if u3.norm() < 1e-300 {
        u3 = -b * 0.5 - sqrt_disc;
    }
    let u = u3.powf(1.0 / 3.0);
    let omega = C64::new(-0.5, 3.0f64.sqrt() / 2.0);
    let mut roots = [C64::default(); 3];
    for (k, root) in roots.iter_mut().enumerate() {
        let uk = u * omega.powu(k as u32);
        let t = if uk.norm() > 1e-150 {
            uk - a / (uk * 3.0)
        } else {
            C64::default()
        };
        *root = t + shift;
    }
    roots
}

/// Coefficients (p, q, r) of det(λI - M) = λ³ + p λ² + q λ + r for 3×3.
fn char_poly_3x3(m: &CMat) -> (C64, C64, C64) {
    let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
        + m[(0, 0)] * m[(2, 2)]
        - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let det = m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)]);
    (-tr, minors, -det)
}

/// Discriminant of the characteristic polynomial, Π_{i<j} (λ_i - λ_j)².
///
/// This is a polynomial in the matrix entries, hence analytic in any analytic
/// family z ↦ H(z); its zeros are exactly the eigenvalue collisions. Supported
/// for n ∈ {2, 3}, which covers the model catalog.
pub fn char_discriminant(m: &CMat) -> Result<C64> {
    match m.nrows() {
        2 => {
            let d = m[(0, 0)] - m[(1, 1)];
            Ok(d * d + m[(0, 1)] * m[(1, 0)] * 4.0)
        }
        3 => {
            let (p, q, r) = char_poly_3x3(m);
            Ok(p * q * r * 18.0 - p * p * p * r * 4.0 + p * p * q * q
                - q * q * q * 4.0
                - r * r * 27.0)
        }
        n => Err(Error::InvalidArgument(format!(
            "discriminant only implemented for n = 2, 3 (got {n})"
        ))),
    }
}

/// All eigenvalues of a general complex matrix, n ∈ {2, 3}.
pub fn general_eigenvalues(m: &CMat) -> Result<Vec<C64>> {
    match m.nrows() {
        2 => Ok(eigenvalues_2x2(m).to_vec()),
        3 => Ok(eigenvalues_3x3(m).to_vec()),
        n => Err(Error::InvalidArgument(format!(
            "closed-form eigenvalues only implemented for n = 2, 3 (got {n})"
        ))),
    }
}
