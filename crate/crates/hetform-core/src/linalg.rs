//! Small numeric helpers shared across modules: planar angles, projection
//! matrices, numeric rank/kernel extraction, central-difference Jacobians and
//! eigenvalue utilities.
//!
//! These are deliberately thin wrappers over `nalgebra`'s decompositions; the
//! value they add is the fixed conventions (angle range, kernel ordering,
//! rank cutoff) that the rest of the library and its tests rely on.

use nalgebra::{Complex, DMatrix, DVector, Matrix2, Vector2};

use crate::tol;

/// Angle of a planar vector, counter-clockwise from +x, in `(-π, π]`.
///
/// `atan2` returns values in `[-π, π]`; the single point `-π` is folded to
/// `π` so that every direction has exactly one representative.
pub fn angle_of(v: &Vector2<f64>) -> f64 {
    let a = v.y.atan2(v.x);
    if a == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    }
}

/// Unit vector at angle `alpha`.
pub fn unit(alpha: f64) -> Vector2<f64> {
    Vector2::new(alpha.cos(), alpha.sin())
}

/// Orthogonal projection onto the line at angle `alpha`: `P = v vᵀ` with
/// `v = (cos α, sin α)`. Note `P(α + π) = P(α)`; projections only see lines,
/// not orientations.
pub fn projection(alpha: f64) -> Matrix2<f64> {
    let v = unit(alpha);
    v * v.transpose()
}

/// Projection onto the orthogonal complement of the line at angle `alpha`:
/// `P⊥ = v̄ v̄ᵀ` with `v̄ = (sin α, -cos α)`; equals `I − P(α)`.
pub fn projection_perp(alpha: f64) -> Matrix2<f64> {
    let vb = Vector2::new(alpha.sin(), -alpha.cos());
    vb * vb.transpose()
}

/// Projection onto the complement of a *unit* direction `g`: `I − g gᵀ`.
pub fn perp_of_unit(g: &Vector2<f64>) -> Matrix2<f64> {
    Matrix2::identity() - g * g.transpose()
}

/// Numeric rank and an orthonormal kernel basis of `m`.
///
/// Rank counts singular values `σ > rel_tol · σ_max`. The kernel basis is the
/// corresponding right-singular vectors, re-ordered deterministically by
/// descending `|first component|` (ties broken by descending
/// `|second component|`).
pub fn rank_and_kernel(m: &DMatrix<f64>, rel_tol: f64) -> (usize, Vec<DVector<f64>>) {
    let ncols = m.ncols();
    let svd = m.clone().svd(false, true);
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_tol * sigma_max;
    let rank = sigma.iter().filter(|&&s| s > cutoff).count();

    let v_t = svd
        .v_t
        .expect("SVD was requested with right-singular vectors");
    // Right-singular vectors are the rows of Vᵀ; those beyond the rank span
    // the kernel. A wide matrix with fewer rows than columns only yields
    // min(nrows, ncols) singular triples, so the remaining kernel directions
    // must be completed separately; for the matrices this library analyzes
    // (3m×2n with 3m ≥ 2n−... ) completion is still needed when 3m < 2n.
    let mut kernel: Vec<DVector<f64>> = (rank..v_t.nrows())
        .map(|i| v_t.row(i).transpose())
        .collect();

    // Complete the basis when the decomposition is "thin" (fewer singular
    // triples than columns): the omitted right-singular directions are all
    // kernel. Build them by orthogonalizing the coordinate basis against the
    // known rows of Vᵀ.
    let missing = ncols.saturating_sub(v_t.nrows());
    if missing > 0 {
        let mut basis: Vec<DVector<f64>> = (0..v_t.nrows())
            .map(|i| v_t.row(i).transpose())
            .collect();
        for j in 0..ncols {
            if basis.len() == ncols {
                break;
            }
            let mut cand = DVector::zeros(ncols);
            cand[j] = 1.0;
            for b in &basis {
                let proj = b.dot(&cand);
                cand -= b * proj;
            }
            let norm = cand.norm();
            if norm > 1e-12 {
                cand /= norm;
                basis.push(cand.clone());
                kernel.push(cand);
            }
        }
    }

    kernel.sort_by(|a, b| {
        let ka = (a[0].abs(), a.get(1).map(|x| x.abs()).unwrap_or(0.0));
        let kb = (b[0].abs(), b.get(1).map(|x| x.abs()).unwrap_or(0.0));
        kb.partial_cmp(&ka).expect("singular vectors are finite")
    });
    (rank, kernel)
}

/// Central-difference Jacobian of `f` at `x0`: column `j` is
/// `(f(x0 + h eⱼ) − f(x0 − h eⱼ)) / (2h)`.
pub fn central_difference_jacobian<F>(f: F, x0: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x0.len();
    let m = f(x0).len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += step;
        xm[j] -= step;
        let df = (f(&xp) - f(&xm)) / (2.0 * step);
        jac.set_column(j, &df);
    }
    jac
}

/// Full complex spectrum of a square matrix.
pub fn spectrum(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.clone().complex_eigenvalues().iter().cloned().collect()
}

/// Largest real part over a spectrum.
pub fn max_real_part(spec: &[Complex<f64>]) -> f64 {
    spec.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// `true` iff every eigenvalue of `m` has strictly negative real part.
pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    max_real_part(&spectrum(m)) < 0.0
}

/// Smallest eigenvalue of the symmetric part `(M + Mᵀ)/2 · 2 = M + Mᵀ`.
///
/// Returned for `M + Mᵀ` itself (not halved), matching the `λ_min(A + Aᵀ)`
/// quantity used by the stability conditions.
pub fn lambda_min_sym_part(m: &DMatrix<f64>) -> f64 {
    let s = m + m.transpose();
    let eig = s.symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Eigenvalue range `(λ_min, λ_max)` of a symmetric 2×2 matrix.
pub fn sym2_eigen_range(m: &Matrix2<f64>) -> (f64, f64) {
    let tr = m.trace();
    let det = m.determinant();
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 - disc, tr / 2.0 + disc)
}

/// Spectral norm (largest `|eigenvalue|`) of a symmetric 2×2 matrix.
pub fn sym2_spectral_norm(m: &Matrix2<f64>) -> f64 {
    let (lo, hi) = sym2_eigen_range(m);
    lo.abs().max(hi.abs())
}

/// Moore–Penrose pseudo-inverse with the library's rank cutoff.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sigma_max = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max);
    m.clone()
        .pseudo_inverse(tol::RANK_REL * sigma_max)
        .expect("SVD of a finite matrix succeeds")
}

/// Distance from `v` to the span of rigid translations
/// `{ 1 ⊗ t : t ∈ ℝ² }` in stacked coordinates `(x₀, y₀, x₁, y₁, …)`.
pub fn distance_to_translation_span(v: &DVector<f64>) -> f64 {
    let n = v.len() / 2;
    assert_eq!(v.len(), 2 * n, "stacked planar vector has even length");
    let mut mean = Vector2::zeros();
    for i in 0..n {
        mean += Vector2::new(v[2 * i], v[2 * i + 1]);
    }
    mean /= n as f64;
    let mut residual = 0.0_f64;
    for i in 0..n {
        let d = Vector2::new(v[2 * i], v[2 * i + 1]) - mean;
        residual += d.norm_squared();
    }
    residual.sqrt()
}
