//! Action of `exp(-i H t)` on a vector for Hermitian `H`.
//!
//! The Krylov route projects `H` onto the Lanczos basis
//! `K_m = span{v, Hv, ..., H^{m-1}v}` and exponentiates the tridiagonal
//! projection. The subspace grows until the standard a posteriori estimate
//! `β_m |e_mᵀ exp(-i T_m t) e_1|` falls below the requested tolerance.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::sparse::{inner, norm, CsrMatrix, C64, ZERO};

const FULL_REORTH_FROM: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovOptions {
    /// Bound on the error estimate, relative to the input norm.
    pub tol: f64,
    /// Largest Lanczos basis before giving up.
    pub max_dim: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_dim: 80,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KrylovStats {
    pub dim: usize,
    pub estimate: f64,
}

/// Returns `exp(-i H t) v`.
pub fn expm_multiply(h: &CsrMatrix, v: &[C64], t: f64, opts: &KrylovOptions) -> Result<(Vec<C64>, KrylovStats)> {
    let dim = h.nrows();
    if v.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    let beta0 = norm(v);
    if t == 0.0 || beta0 == 0.0 {
        return Ok((v.to_vec(), KrylovStats::default()));
    }

    let max_dim = opts.max_dim.min(dim).max(1);
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(max_dim);
    basis.push(v.iter().map(|x| x / beta0).collect());
    let mut alphas: Vec<f64> = Vec::with_capacity(max_dim);
    let mut betas: Vec<f64> = Vec::with_capacity(max_dim);
    let mut w = vec![ZERO; dim];
    let mut last_estimate = f64::INFINITY;

    for j in 0..max_dim {
        h.mul_vec_into(&basis[j], &mut w);
        let a = inner(&basis[j], &w).re;
        for (wi, vi) in w.iter_mut().zip(&basis[j]) {
            *wi -= vi * a;
        }
        if j > 0 {
            let b = betas[j - 1];
            for (wi, vi) in w.iter_mut().zip(&basis[j - 1]) {
                *wi -= vi * b;
            }
        }
        // second Gram-Schmidt pass: the two most recent vectors for short
        // bases, all of them once orthogonality loss can set in
        let lo = if j < FULL_REORTH_FROM { j.saturating_sub(1) } else { 0 };
        for prev in &basis[lo..=j] {
            let c = inner(prev, &w);
            for (wi, vi) in w.iter_mut().zip(prev) {
                *wi -= vi * c;
            }
        }
        alphas.push(a);
        let b = norm(&w);
        let m = j + 1;

        let coeffs = tridiagonal_exp_e1(&alphas, &betas, t);
        let estimate = b * coeffs[m - 1].norm();
        last_estimate = estimate;
        let invariant = b <= 1e-14 * (a.abs() + betas.last().copied().unwrap_or(0.0)).max(1.0);
        if estimate < opts.tol || invariant || m == dim {
            let mut out = vec![ZERO; dim];
            for (c, vk) in coeffs.iter().zip(&basis) {
                let c = c * beta0;
                for (o, x) in out.iter_mut().zip(vk) {
                    *o += x * c;
                }
            }
            return Ok((out, KrylovStats { dim: m, estimate }));
        }
        if m == max_dim {
            break;
        }
        betas.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    Err(Error::KrylovNonConvergence {
        estimate: last_estimate,
        dim: max_dim,
    })
}

/// First column of `exp(-i T t)` for the symmetric tridiagonal `T` with
/// diagonal `alphas` and off-diagonal `betas`.
fn tridiagonal_exp_e1(alphas: &[f64], betas: &[f64], t: f64) -> Vec<C64> {
    let m = alphas.len();
    let mut tm = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        tm[(i, i)] = alphas[i];
        if i + 1 < m {
            tm[(i, i + 1)] = betas[i];
            tm[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(tm);
    let q = &eig.eigenvectors;
    let phases: Vec<C64> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &lam)| C64::from_polar(q[(0, k)], -lam * t))
        .collect();
    (0..m).map(|i| (0..m).map(|k| phases[k] * q[(i, k)]).sum()).collect()
}

/// Dense `exp(-i H t)` for a Hermitian matrix via eigendecomposition.
pub fn dense_propagator(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let eig = SymmetricEigen::new(h.clone());
    let u = &eig.eigenvectors;
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|lam| C64::from_polar(1.0, -lam * t)));
    u * phases * u.adjoint()
}

/// Propagates `v` under a time-independent `H` for `t`, using the dense
/// propagator for small problems and Krylov substeps otherwise.
pub fn propagate_constant(h: &CsrMatrix, v: &[C64], t: f64, dt_max: f64, opts: &KrylovOptions) -> Result<Vec<C64>> {
    if h.nrows() <= DENSE_PROPAGATOR_MAX_DIM {
        let u = dense_propagator(&h.to_dense(), t);
        let x = nalgebra::DVector::from_column_slice(v);
        return Ok((u * x).iter().copied().collect());
    }
    let steps = ((t.abs() / dt_max).ceil() as usize).max(1);
    let dt = t / steps as f64;
    let mut state = v.to_vec();
    for _ in 0..steps {
        state = expm_multiply(h, &state, dt, opts)?.0;
    }
    Ok(state)
}

/// Above this dimension [`propagate_constant`] switches to Krylov steps.
pub const DENSE_PROPAGATOR_MAX_DIM: usize = 600;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_is_identity() {
        let h = CsrMatrix::from_diagonal(&[1.0, 2.0]);
        let v = vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let (out, stats) = expm_multiply(&h, &v, 0.0, &KrylovOptions::default()).unwrap();
        assert_eq!(out, v);
        assert_eq!(stats.dim, 0);
    }

    #[test]
    fn diagonal_phases() {
        let diag: Vec<f64> = (0..40).map(|n| -2.0 * n as f64).collect();
        let h = CsrMatrix::from_diagonal(&diag);
        let v: Vec<C64> = (0..40).map(|n| C64::new(1.0 / (1.0 + n as f64), 0.3)).collect();
        let t = 0.37;
        let (out, _) = expm_multiply(&h, &v, t, &KrylovOptions::default()).unwrap();
        for n in 0..40 {
            let expect = v[n] * C64::from_polar(1.0, -diag[n] * t);
            assert!((out[n] - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let diag: Vec<f64> = (0..200).map(|n| n as f64).collect();
        let h = CsrMatrix::from_diagonal(&diag);
        let v = vec![C64::new(1.0, 0.0); 200];
        let opts = KrylovOptions { tol: 1e-10, max_dim: 5 };
        assert!(matches!(
            expm_multiply(&h, &v, 10.0, &opts),
            Err(Error::KrylovNonConvergence { .. })
        ));
    }
}
