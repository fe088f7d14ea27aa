//! Small dense linear-algebra helpers shared across the crate: spectral
//! norms, principal angles, orthonormalization, and deterministic sampling.

use nalgebra::{DMatrix, DVector};

/// Extreme singular values of a 2x2 matrix in closed form (through the
/// eigenvalues of M^T M).
fn sv2_closed_form(m: &DMatrix<f64>) -> (f64, f64) {
    let (a, b) = (m[(0, 0)], m[(0, 1)]);
    let (c, d) = (m[(1, 0)], m[(1, 1)]);
    let g11 = a * a + c * c;
    let g22 = b * b + d * d;
    let g12 = a * b + c * d;
    let tr = g11 + g22;
    let disc = ((g11 - g22) * (g11 - g22) + 4.0 * g12 * g12).max(0.0).sqrt();
    let hi = (0.5 * (tr + disc)).max(0.0).sqrt();
    let lo = (0.5 * (tr - disc)).max(0.0).sqrt();
    (hi, lo)
}

/// Spectral (operator 2-) norm. Returns 0 for empty matrices; 1x1 and 2x2
/// cases avoid the SVD.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    if m.nrows() == 2 && m.ncols() == 1 {
        return (m[(0, 0)].powi(2) + m[(1, 0)].powi(2)).sqrt();
    }
    if m.nrows() == 1 && m.ncols() == 2 {
        return (m[(0, 0)].powi(2) + m[(0, 1)].powi(2)).sqrt();
    }
    if m.nrows() == 2 && m.ncols() == 2 {
        return sv2_closed_form(m).0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Smallest singular value. Returns +inf for matrices with zero columns so
/// that emptiness never masquerades as rank deficiency.
pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 0 {
        return f64::INFINITY;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    if m.nrows() == 2 && m.ncols() == 1 {
        return (m[(0, 0)].powi(2) + m[(1, 0)].powi(2)).sqrt();
    }
    if m.nrows() == 2 && m.ncols() == 2 {
        return sv2_closed_form(m).1;
    }
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Orthonormalize the columns of `m` with thin QR. Column count is preserved;
/// rank deficiency is reported as an error by the caller via the R diagonal.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return m.clone();
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    // QR sign convention: flip columns so the R diagonal is nonnegative.
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            for i in 0..q.nrows() {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Cosines of the principal angles between the column spans of two
/// orthonormal bases, in decreasing order (clamped to [0, 1]).
pub fn principal_cosines(u: &DMatrix<f64>, w: &DMatrix<f64>) -> Vec<f64> {
    if u.ncols() == 0 || w.ncols() == 0 {
        return Vec::new();
    }
    let m = u.transpose() * w;
    let mut sv: Vec<f64> = m.svd(false, false).singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv.into_iter().map(|c| c.clamp(0.0, 1.0)).collect()
}

/// Minimal principal angle between two subspaces given by orthonormal bases.
/// Returns pi/2 when either subspace is trivial (no constraint).
pub fn minimal_principal_angle(u: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let cos = principal_cosines(u, w);
    match cos.first() {
        Some(&c) => c.acos(),
        None => std::f64::consts::FRAC_PI_2,
    }
}

/// Sine of the largest principal angle between two equidimensional subspaces;
/// the standard gap distance. Computed through the complement projection
/// |(I - W W^T) U| to stay accurate for nearly equal subspaces. Trivial
/// subspaces are at distance 0 from each other.
pub fn subspace_distance(u: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    if u.ncols() == 0 && w.ncols() == 0 {
        return 0.0;
    }
    if u.ncols() != w.ncols() {
        return 1.0;
    }
    let residual = u - w * (w.transpose() * u);
    spectral_norm(&residual).min(1.0)
}

/// Angle between a nonzero vector and a subspace (orthonormal basis).
pub fn vector_subspace_angle(v: &DVector<f64>, u: &DMatrix<f64>) -> f64 {
    let n = v.norm();
    if n == 0.0 {
        return 0.0;
    }
    if u.ncols() == 0 {
        return std::f64::consts::FRAC_PI_2;
    }
    let proj = u.transpose() * v;
    (proj.norm() / n).clamp(0.0, 1.0).acos()
}

/// Angle between two nonzero vectors, in [0, pi].
pub fn vector_angle(v: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let d = v.dot(w) / (v.norm() * w.norm());
    d.clamp(-1.0, 1.0).acos()
}

/// Radical-inverse (van der Corput) value of `i` in base `b`.
fn radical_inverse(mut i: usize, b: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

const HALTON_PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// The `i`-th point of the `dim`-dimensional Halton sequence in [0,1)^dim.
pub fn halton(i: usize, dim: usize) -> Vec<f64> {
    (0..dim).map(|d| radical_inverse(i + 1, HALTON_PRIMES[d % 8])).collect()
}

/// The `i`-th Halton point mapped affinely into the cube [-h, h]^dim.
pub fn halton_in_cube(i: usize, dim: usize, h: f64) -> DVector<f64> {
    DVector::from_iterator(dim, halton(i, dim).into_iter().map(|t| (2.0 * t - 1.0) * h))
}

/// Deterministic unit direction: Halton point on the cube pushed to the
/// sphere (skipping near-zero draws).
pub fn halton_unit(i: usize, dim: usize) -> DVector<f64> {
    let mut k = i;
    loop {
        let v = halton_in_cube(k, dim, 1.0);
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
        k += 7919;
    }
}

/// Solve the square system `a x = b` by LU with a rank guard.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().lu().solve(b)
}

/// Solve `a X = B` columnwise.
pub fn solve_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> crate::error::Result<DMatrix<f64>> {
    a.clone().lu().solve(b).ok_or_else(|| {
        crate::error::Error::PreconditionViolated("singular basis matrix".into())
    })
}

/// Orthonormal basis of the numerical null space of `m`, taking the
/// `expect` right-singular directions of smallest singular value.
pub fn nullspace(m: &DMatrix<f64>, expect: usize) -> DMatrix<f64> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let rows = vt.nrows();
    let d = vt.ncols();
    let mut cols = DMatrix::zeros(d, expect.min(rows));
    for j in 0..cols.ncols() {
        cols.set_column(j, &vt.row(rows - 1 - j).transpose());
    }
    cols
}

/// Split R^d into the invariant subspaces of `m` with eigenvalue modulus
/// above and below 1 (moduli of exactly 1 are grouped as expanding).
/// Handles real eigenvalues and complex-conjugate pairs.
pub fn eigen_split(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = m.nrows();
    let eigs = m.complex_eigenvalues();
    let ident = DMatrix::<f64>::identity(d, d);
    let mut used = vec![false; d];
    let mut unstable: Vec<DVector<f64>> = Vec::new();
    let mut stable: Vec<DVector<f64>> = Vec::new();
    for i in 0..d {
        if used[i] {
            continue;
        }
        let lam = eigs[i];
        let scale = 1.0 + lam.norm();
        if lam.im.abs() <= 1e-10 * scale {
            // real eigenvalue, possibly repeated
            let mut mult = 0;
            for (j, flag) in used.iter_mut().enumerate() {
                if !*flag
                    && eigs[j].im.abs() <= 1e-10 * scale
                    && (eigs[j].re - lam.re).abs() <= 1e-8 * scale
                {
                    *flag = true;
                    mult += 1;
                }
            }
            let mut lam_re = lam.re;
            let ns = nullspace(&(m - &ident * lam_re), mult);
            let mut cols: Vec<DVector<f64>> = ns.column_iter().map(|c| c.into_owned()).collect();
            if mult == 1 {
                // inverse iteration with Rayleigh updates sharpens the
                // eigenpair well past the eigenvalue solver's accuracy
                for c in &mut cols {
                    for _ in 0..3 {
                        if let Some(w) = (m - &ident * lam_re).clone().lu().solve(&*c) {
                            let n = w.norm();
                            if n > 1e-300 && n.is_finite() {
                                *c = w / n;
                            }
                        }
                        lam_re = c.dot(&(m * &*c));
                    }
                }
            }
            for c in cols {
                if lam_re.abs() >= 1.0 {
                    unstable.push(c);
                } else {
                    stable.push(c);
                }
            }
        } else {
            used[i] = true;
            if let Some(j) = (i + 1..d).find(|&j| {
                !used[j]
                    && (eigs[j].re - lam.re).abs() <= 1e-8 * scale
                    && (eigs[j].im + lam.im).abs() <= 1e-8 * scale
            }) {
                used[j] = true;
            }
            let a = lam.re;
            let b = lam.im;
            let quad = m * m - m * (2.0 * a) + &ident * (a * a + b * b);
            let ns = nullspace(&quad, 2);
            for c in ns.column_iter() {
                if lam.norm() >= 1.0 {
                    unstable.push(c.into_owned());
                } else {
                    stable.push(c.into_owned());
                }
            }
        }
    }
    let stack = |cols: &[DVector<f64>]| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(d, cols.len());
        for (j, c) in cols.iter().enumerate() {
            m.set_column(j, c);
        }
        orthonormalize(&m)
    };
    (stack(&unstable), stack(&stable))
}
