//! Instantaneous eigenframes and spectral projectors.
//!
//! A [`SpectralFrame`] is the eigendecomposition of H at one (possibly
//! complex) point, with each column carrying a persistent *label*: the index
//! of the branch it continues, tied to the increasing eigenvalue order at the
//! left end of the sweep. On the real axis frames are orthonormal and come
//! from the Jacobi solver; off the axis H is no longer hermitian and frames
//! are tracked by Newton continuation from the nearest previously computed
//! frame.
//!
//! Phase conventions are deterministic everywhere: isolated frames make the
//! largest-modulus entry of each column real positive; continued frames make
//! the overlap with the previous frame real positive, which is the discrete
//! form of the parallel-transport gauge ⟨φ_j | φ_j'⟩ = 0.

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::HamiltonianModel;
use crate::{C64, CMat, CVec};

/// Hermiticity tolerance for real-axis eigendecompositions.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Two candidate overlaps closer than this cannot be told apart.
pub const MATCHING_AMBIGUITY_TOL: f64 = 1e-6;
/// Continuation steps whose best overlap drops below this must be refined.
pub const OVERLAP_FLOOR: f64 = 0.75;
/// Default central-difference step for projector derivatives.
pub const DEFAULT_DERIVATIVE_STEP: f64 = 1e-4;
/// Richardson consistency factor: the h and h/2 estimates of a smooth
/// projector differ by ≈ h²·‖P‴‖/8, so a gap hiding below the stencil
/// shows up as a disagreement far above this multiple of h²·‖Ṗ‖.
pub const DERIVATIVE_CONSISTENCY_FACTOR: f64 = 10.0;

/// Eigenframe of H at one point of the strip.
#[derive(Debug, Clone)]
pub struct SpectralFrame {
    /// Where the frame lives; real axis points have `point.im == 0`.
    pub point: C64,
    /// Eigenvalue per column (real on the axis, complex off it).
    pub eigenvalues: Vec<C64>,
    /// Eigenvector columns, unit norm.
    pub eigenvectors: CMat,
    /// `labels[k]` is the 1-based branch label carried by column k.
    pub labels: Vec<usize>,
}

impl SpectralFrame {
    pub fn dimension(&self) -> usize {
        self.labels.len()
    }

    /// Column index currently carrying `label`.
    pub fn column_of_label(&self, label: usize) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn eigenvalue_of_label(&self, label: usize) -> Option<C64> {
        self.column_of_label(label).map(|k| self.eigenvalues[k])
    }

    pub fn vector_of_label(&self, label: usize) -> Option<CVec> {
        self.column_of_label(label).map(|k| self.eigenvectors.column(k).clone_owned())
    }

    /// ‖Φ†Φ − I‖, zero for orthonormal (real-axis) frames.
    pub fn orthonormality_defect(&self) -> f64 {
        linalg::unitarity_defect(&self.eigenvectors)
    }
}

/// Eigenframe of a hermitian matrix, columns in ascending eigenvalue order,
/// labels 1..=n, phases fixed by the largest-entry convention.
pub fn eigen_frame(h: &CMat, point: C64) -> Result<SpectralFrame> {
    linalg::require_hermitian(h, HERMITICITY_TOL)?;
    let n = h.nrows();
    let (values, mut vectors) = linalg::jacobi_hermitian(h);
    for j in 0..n {
        let mut col = vectors.column(j).clone_owned();
        linalg::phase_fix_column(&mut col);
        vectors.set_column(j, &col);
    }
    Ok(SpectralFrame {
        point,
        eigenvalues: values.into_iter().map(|v| C64::new(v, 0.0)).collect(),
        eigenvectors: vectors,
        labels: (1..=n).collect(),
    })
}

/// Continue a frame to the next sample of a path.
///
/// Candidates at the new point come from the Jacobi solver when `h_next` is
/// hermitian and from seeded Newton iteration otherwise. Each previous column
/// is matched to the candidate with the largest overlap modulus; the matched
/// column is rephased so the overlap is real positive, and it inherits the
/// previous column's label. Matching that is ambiguous (two candidates within
/// 1e-6 in overlap) or weak (best overlap below 0.75) is an error: the step
/// along the path is too large, typically near a complex crossing.
pub fn continue_frame(prev: &SpectralFrame, h_next: &CMat, point_next: C64) -> Result<SpectralFrame> {
    let n = prev.dimension();
    assert_eq!(h_next.nrows(), n, "dimension change along a path");

    let (cand_values, cand_vectors): (Vec<C64>, CMat) =
        if linalg::hermitian_defect(h_next) <= HERMITICITY_TOL {
            let (values, vectors) = linalg::jacobi_hermitian(h_next);
            (values.into_iter().map(|v| C64::new(v, 0.0)).collect(), vectors)
        } else {
            let mut vectors = CMat::zeros(n, n);
            let mut values = Vec::with_capacity(n);
            for k in 0..n {
                let seed_vec = prev.eigenvectors.column(k).clone_owned();
                let (e, v) = linalg::newton_eigenpair(h_next, prev.eigenvalues[k], &seed_vec)?;
                values.push(e);
                vectors.set_column(k, &v);
            }
            (values, vectors)
        };

    // Greedy assignment with an ambiguity gate. Legitimate continuation steps
    // have near-orthonormal candidates with one dominant overlap per column.
    let mut taken = vec![false; n];
    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = CMat::zeros(n, n);
    for k in 0..n {
        let prev_col = prev.eigenvectors.column(k);
        let mut best = usize::MAX;
        let mut best_overlap = -1.0;
        let mut second_overlap = -1.0;
        let mut second = usize::MAX;
        for (cand, &cand_taken) in taken.iter().enumerate() {
            if cand_taken {
                continue;
            }
            let overlap = prev_col.dotc(&cand_vectors.column(cand)).norm();
            if overlap > best_overlap {
                second_overlap = best_overlap;
                second = best;
                best_overlap = overlap;
                best = cand;
            } else if overlap > second_overlap {
                second_overlap = overlap;
                second = cand;
            }
        }
        if second != usize::MAX && (best_overlap - second_overlap).abs() < MATCHING_AMBIGUITY_TOL {
            return Err(Error::AmbiguousMatching {
                label_a: prev.labels[k],
                label_b: prev.labels.get(second).copied().unwrap_or(second + 1),
                overlap_a: best_overlap,
                overlap_b: second_overlap,
            });
        }
        if best_overlap < OVERLAP_FLOOR {
            return Err(Error::OverlapTooSmall { overlap: best_overlap, floor: OVERLAP_FLOOR });
        }
        taken[best] = true;

        // Transport phase: make the overlap real positive.
        let w = prev_col.dotc(&cand_vectors.column(best));
        let phase = w / w.norm();
        let col = cand_vectors.column(best).clone_owned() * phase.conj();
        eigenvectors.set_column(k, &col);
        eigenvalues.push(cand_values[best]);
    }

    // On the real axis the spectrum is gapped, so the ranking of labels by
    // eigenvalue can never change; a flip means the step skipped over an
    // avoided crossing and landed on the wrong branch.
    if prev.point.im == 0.0 && point_next.im == 0.0 {
        let ranking = |values: &[C64], labels: &[usize]| -> Vec<usize> {
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&i, &j| values[i].re.total_cmp(&values[j].re));
            order.into_iter().map(|i| labels[i]).collect()
        };
        let before = ranking(&prev.eigenvalues, &prev.labels);
        let after = ranking(&eigenvalues, &prev.labels);
        if before != after {
            return Err(Error::UnexpectedMonodromy { permutation: after });
        }
    }

    Ok(SpectralFrame {
        point: point_next,
        eigenvalues,
        eigenvectors,
        labels: prev.labels.clone(),
    })
}

/// Chain [`continue_frame`] along a sampled path, starting from `start`.
pub fn continue_along_path(
    model: &HamiltonianModel,
    start: SpectralFrame,
    points: &[C64],
) -> Result<SpectralFrame> {
    let mut frame = start;
    for &z in points {
        let h = model.evaluate(z)?;
        frame = continue_frame(&frame, &h, z)?;
    }
    Ok(frame)
}

/// Discrete parallel transport of a label-continuous frame sequence: rephase
/// each column so every consecutive overlap is real positive. Applying the
/// transport twice changes nothing.
pub fn gauge_transport(frames: &[SpectralFrame]) -> Vec<SpectralFrame> {
    let mut out: Vec<SpectralFrame> = Vec::with_capacity(frames.len());
    for frame in frames {
        let Some(prev) = out.last() else {
            out.push(frame.clone());
            continue;
        };
        let n = frame.dimension();
        let mut adjusted = frame.clone();
        for j in 0..n {
            let w = prev.eigenvectors.column(j).dotc(&frame.eigenvectors.column(j));
            let norm = w.norm();
            if norm == 0.0 {
                continue;
            }
            let col = frame.eigenvectors.column(j).clone_owned() * (w / norm).conj();
            adjusted.eigenvectors.set_column(j, &col);
        }
        out.push(adjusted);
    }
    out
}

/// Match a continued frame against a reference frame at the same point:
/// `perm[k]` is the reference label whose column the continued column k now
/// occupies. A closed loop that exchanges two branches returns the
/// transposition; a contractible loop returns the identity.
pub fn closure_permutation(reference: &SpectralFrame, continued: &SpectralFrame) -> Result<Vec<usize>> {
    let n = reference.dimension();
    let mut taken = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    for k in 0..n {
        let col = continued.eigenvectors.column(k);
        let mut best = usize::MAX;
        let mut best_overlap = -1.0;
        for (r, &used) in taken.iter().enumerate() {
            if used {
                continue;
            }
            let overlap = reference.eigenvectors.column(r).dotc(&col).norm();
            if overlap > best_overlap {
                best_overlap = overlap;
                best = r;
            }
        }
        if best_overlap < OVERLAP_FLOOR {
            return Err(Error::OverlapTooSmall { overlap: best_overlap, floor: OVERLAP_FLOOR });
        }
        taken[best] = true;
        perm.push(reference.labels[best]);
    }
    Ok(perm)
}

/// Orthogonal projector onto a spectral subspace.
#[derive(Debug, Clone)]
pub struct Projector {
    pub matrix: CMat,
    pub rank: usize,
}

impl Projector {
    /// Build from an explicit matrix, enforcing the projector algebra:
    /// hermitian to 1e-12, idempotent to 1e-10, trace equal to the rank.
    pub fn new(matrix: CMat) -> Result<Self> {
        let herm = linalg::hermitian_defect(&matrix);
        if herm > 1e-12 {
            return Err(Error::NotHermitian { defect: herm, tolerance: 1e-12 });
        }
        let idem = linalg::max_abs(&(&matrix * &matrix - &matrix));
        if idem > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "matrix is not idempotent: ‖P² − P‖ = {idem:.3e}"
            )));
        }
        let trace: C64 = (0..matrix.nrows()).map(|i| matrix[(i, i)]).sum();
        let rank = trace.re.round() as usize;
        if (trace.re - rank as f64).abs() > 1e-9 || trace.im.abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "projector trace {trace} is not close to an integer"
            )));
        }
        Ok(Projector { matrix, rank })
    }

    pub fn complement(&self) -> Projector {
        let n = self.matrix.nrows();
        Projector {
            matrix: CMat::identity(n, n) - &self.matrix,
            rank: n - self.rank,
        }
    }
}

/// P = Σ_{j ∈ labels} φ_j φ_j† over the frame's columns with those labels.
/// Meaningful on the real axis, where the frame is orthonormal.
pub fn spectral_projector(frame: &SpectralFrame, labels: &[usize]) -> Result<Projector> {
    let n = frame.dimension();
    let mut matrix = CMat::zeros(n, n);
    for &label in labels {
        let col = frame
            .vector_of_label(label)
            .ok_or_else(|| Error::InvalidArgument(format!("no column carries label {label}")))?;
        matrix += &col * col.adjoint();
    }
    Projector::new(matrix)
}

/// Projector onto the selected labels of H(t) for a model, on the real axis.
pub fn model_projector(model: &HamiltonianModel, t: f64, labels: &[usize]) -> Result<Projector> {
    let frame = eigen_frame(&model.evaluate_real(t), C64::new(t, 0.0))?;
    spectral_projector(&frame, labels)
}

/// dP/dt by Richardson-extrapolated central differences.
///
/// The step-h and step-h/2 stencils must agree to a multiple of h² times the
/// derivative scale; a larger disagreement means the projector varies too
/// rapidly at this scale — usually a near-degeneracy — and is reported as an
/// error rather than smoothed over. Projectors are gauge invariant, so no
/// phase bookkeeping is needed here.
pub fn projector_derivative(
    model: &HamiltonianModel,
    t: f64,
    labels: &[usize],
    step: f64,
) -> Result<CMat> {
    assert!(step > 0.0, "derivative step must be positive");
    let p = |t: f64| -> Result<CMat> { Ok(model_projector(model, t, labels)?.matrix) };
    let coarse = (p(t + step)? - p(t - step)?) / C64::new(2.0 * step, 0.0);
    let half = step / 2.0;
    let fine = (p(t + half)? - p(t - half)?) / C64::new(2.0 * half, 0.0);
    let disagreement = linalg::max_abs(&(&fine - &coarse));
    let scale = linalg::max_abs(&fine).max(1.0);
    // second term is the roundoff floor of the difference quotients
    let limit = (DERIVATIVE_CONSISTENCY_FACTOR * step * step * scale).max(1e-12 / step);
    if disagreement > limit {
        return Err(Error::DerivativeInconsistent { t, disagreement, limit });
    }
    // Richardson: central differences have even error expansions, so the
    // (4 D_{h/2} − D_h)/3 combination cancels the h² term.
    Ok((fine * C64::new(4.0, 0.0) - coarse) / C64::new(3.0, 0.0))
}
