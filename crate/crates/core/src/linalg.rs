//! Dense complex linear algebra on top of `ndarray`.
//!
//! Everything in scope is at most 32-dimensional (and usually 3, 6 or 8),
//! so plain dense kernels and a cyclic Jacobi eigensolver are both simpler
//! and faster to audit than an external LAPACK binding.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

/// Dense complex square matrix.
pub type CMat = Array2<Complex64>;
/// Dense complex vector.
pub type CVec = Array1<Complex64>;

pub const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const C_ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const C_I: Complex64 = Complex64::new(0.0, 1.0);

/// n×n identity.
pub fn identity(n: usize) -> CMat {
    Array2::eye(n)
}

/// Computational basis ket |i⟩ in dimension `dim`.
pub fn basis_ket(dim: usize, i: usize) -> CVec {
    let mut v = Array1::zeros(dim);
    v[i] = C_ONE;
    v
}

/// Rank-1 projector |i⟩⟨i| in dimension `dim`.
pub fn basis_projector(dim: usize, i: usize) -> CMat {
    let mut m = Array2::zeros((dim, dim));
    m[[i, i]] = C_ONE;
    m
}

/// Outer product |u⟩⟨v|.
pub fn outer(u: &CVec, v: &CVec) -> CMat {
    let (n, m) = (u.len(), v.len());
    Array2::from_shape_fn((n, m), |(i, j)| u[i] * v[j].conj())
}

/// Conjugate transpose.
pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

/// Kronecker product, left factor owns the slow (major) index.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == C_ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Matrix trace.
pub fn trace(a: &CMat) -> Complex64 {
    a.diag().sum()
}

/// Largest elementwise |a - b|.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Largest elementwise deviation from the conjugate transpose.
pub fn hermiticity_defect(a: &CMat) -> f64 {
    max_abs_diff(a, &dagger(a))
}

/// Largest elementwise deviation of U·U† from the identity.
pub fn unitarity_defect(u: &CMat) -> f64 {
    max_abs_diff(&u.dot(&dagger(u)), &identity(u.nrows()))
}

/// Eigenvalues and orthonormal eigenvectors (as columns) of a real
/// symmetric matrix, by the cyclic Jacobi method. Ascending order.
pub fn sym_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "sym_eigen requires a square matrix");
    let mut m = a.clone();
    let mut v: Array2<f64> = Array2::eye(n);
    let fro = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let stop = 1e-14 * (fro + 1.0);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m[[p, q]] * m[[p, q]])
            .sum::<f64>()
            .sqrt();
        if off <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap());
    let eigs: Vec<f64> = order.iter().map(|&i| m[[i, i]]).collect();
    let mut vecs = Array2::zeros((n, n));
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vecs[[k, new]] = v[[k, old]];
        }
    }
    (eigs, vecs)
}

/// Eigenvalues of a complex Hermitian matrix, ascending.
///
/// Uses the real 2n×2n embedding [[Re A, −Im A], [Im A, Re A]], whose
/// spectrum is that of A with every eigenvalue doubled.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let n = a.nrows();
    let mut big = Array2::zeros((2 * n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            let z = a[[i, j]];
            big[[i, j]] = z.re;
            big[[i + n, j + n]] = z.re;
            big[[i, j + n]] = -z.im;
            big[[i + n, j]] = z.im;
        }
    }
    let (eigs, _) = sym_eigen(&big);
    // Doubled spectrum: after sorting, indices 0,2,4,... are one copy each.
    eigs.into_iter().step_by(2).collect()
}

/// Trace distance ½‖a − b‖₁ between Hermitian matrices.
pub fn trace_distance(a: &CMat, b: &CMat) -> f64 {
    let diff = a - b;
    hermitian_eigenvalues(&diff).iter().map(|x| x.abs()).sum::<f64>() / 2.0
}
