//! Lowest eigenpairs of real symmetric sparse matrices.
//!
//! Lanczos with full reorthogonalization. An optional projector is applied
//! to every new basis vector, which keeps the iteration inside a symmetry
//! sector when rounding would otherwise leak out of it.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LanczosOptions {
    /// Ritz residual target relative to `‖H‖_∞`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 800,
        }
    }
}

/// Real-valued CSR copy of a matrix whose entries have zero imaginary part.
#[derive(Clone, Debug)]
pub struct RealCsr {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl RealCsr {
    pub fn new(m: &CsrMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(invalid("expected a square matrix"));
        }
        if !m.is_real() {
            return Err(invalid("matrix has complex entries"));
        }
        let n = m.nrows();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(m.nnz());
        let mut values = Vec::with_capacity(m.nnz());
        indptr.push(0);
        for i in 0..n {
            for (j, v) in m.row(i) {
                indices.push(j);
                values.push(v.re);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            n,
            indptr,
            indices,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
            *yi = self.indices[lo..hi]
                .iter()
                .zip(&self.values[lo..hi])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }

    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.values[self.indptr[i]..self.indptr[i + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn nrm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Deterministic start vector with no special structure.
pub fn start_vector(n: usize) -> Vec<f64> {
    const STEP: f64 = 0.754_877_666_246_692_8;
    (0..n).map(|i| ((i as f64 + 1.0) * STEP).fract() - 0.5 + 1e-3).collect()
}

/// In-place projection applied to every Lanczos vector.
pub type Projector<'a> = dyn Fn(&mut [f64]) + 'a;

/// The `k` smallest eigenpairs of `h` reachable from `start`.
///
/// Fewer than `k` pairs are returned only when the Krylov space starting
/// from `start` (after `project`) is exhausted first.
pub fn lanczos_lowest(
    h: &RealCsr,
    k: usize,
    start: &[f64],
    project: Option<&Projector<'_>>,
    opts: &LanczosOptions,
) -> Result<Eigenpairs> {
    let n = h.dim();
    if start.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: start.len(),
        });
    }
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    let scale = h.inf_norm().max(f64::MIN_POSITIVE);
    let mut v0 = start.to_vec();
    if let Some(p) = project {
        p(&mut v0);
    }
    let b0 = nrm(&v0);
    if b0 == 0.0 {
        return Err(invalid("start vector vanishes after projection"));
    }
    v0.iter_mut().for_each(|x| *x /= b0);

    let max_iter = opts.max_iter.min(n);
    let mut basis = vec![v0];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut exhausted = false;
    let mut ritz: Option<SymmetricEigen<f64, nalgebra::Dyn>> = None;
    let mut next_check = k.max(5);

    for j in 0..max_iter {
        h.mul_vec_into(&basis[j], &mut w);
        let a = dot(&basis[j], &w);
        alphas.push(a);
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
        if let Some(p) = project {
            p(&mut w);
        }
        let b = nrm(&w);
        let m = j + 1;
        if b <= 1e-12 * scale || m == n {
            exhausted = true;
        }
        if exhausted || m == max_iter || m >= next_check {
            next_check = (m + 5).max(m + m / 8);
            let eig = tridiagonal_eigen(&alphas, &betas);
            let order = ascending(&eig.eigenvalues);
            let found = order.len().min(k);
            let converged = order[..found]
                .iter()
                .all(|&i| b * eig.eigenvectors[(m - 1, i)].abs() < opts.tol * scale);
            if exhausted || (found == k && converged) {
                ritz = Some(eig);
                break;
            }
            if m == max_iter {
                let worst = order[..found]
                    .iter()
                    .map(|&i| b * eig.eigenvectors[(m - 1, i)].abs())
                    .fold(0.0, f64::max);
                return Err(Error::EigenNonConvergence(format!(
                    "Lanczos stopped at {m} vectors with Ritz residual {worst:.3e}"
                )));
            }
        }
        betas.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }

    let eig = ritz.expect("loop exits through a convergence check");
    let order = ascending(&eig.eigenvalues);
    let m = alphas.len();
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    let mut hx = vec![0.0; n];
    for &i in order.iter().take(k) {
        let mut x = vec![0.0; n];
        for (r, q) in basis.iter().take(m).enumerate() {
            let c = eig.eigenvectors[(r, i)];
            x.iter_mut().zip(q).for_each(|(xi, qi)| *xi += c * qi);
        }
        let nx = nrm(&x);
        x.iter_mut().for_each(|xi| *xi /= nx);
        let lam = eig.eigenvalues[i];
        h.mul_vec_into(&x, &mut hx);
        let res = hx
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - lam * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if res > 1e-8 * scale {
            return Err(Error::EigenNonConvergence(format!(
                "eigenpair {lam:.6e} has residual {res:.3e}"
            )));
        }
        values.push(lam);
        vectors.push(x);
    }
    Ok(Eigenpairs { values, vectors })
}

fn tridiagonal_eigen(alphas: &[f64], betas: &[f64]) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let m = alphas.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    SymmetricEigen::new(t)
}

pub(crate) fn ascending(values: &nalgebra::DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::C64;

    fn laplacian(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, C64::new(2.0, 0.0)));
            if i + 1 < n {
                t.push((i, i + 1, C64::new(-1.0, 0.0)));
                t.push((i + 1, i, C64::new(-1.0, 0.0)));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn path_laplacian_spectrum() {
        let n = 300;
        let h = RealCsr::new(&laplacian(n)).unwrap();
        let e = lanczos_lowest(&h, 3, &start_vector(n), None, &LanczosOptions::default()).unwrap();
        for (k, &lam) in e.values.iter().enumerate() {
            let theta = (k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64;
            let exact = 2.0 - 2.0 * theta.cos();
            assert!((lam - exact).abs() < 1e-10, "{k}: {lam} vs {exact}");
        }
    }

    #[test]
    fn projector_restricts_sector() {
        // reflection symmetry i ↔ n-1-i; odd sector holds the second level
        let n = 101;
        let h = RealCsr::new(&laplacian(n)).unwrap();
        let odd = |x: &mut [f64]| {
            let y: Vec<f64> = x.iter().rev().copied().collect();
            x.iter_mut().zip(y).for_each(|(a, b)| *a = 0.5 * (*a - b));
        };
        let e = lanczos_lowest(&h, 1, &start_vector(n), Some(&odd), &LanczosOptions::default()).unwrap();
        let theta = 2.0 * std::f64::consts::PI / (n + 1) as f64;
        assert!((e.values[0] - (2.0 - 2.0 * theta.cos())).abs() < 1e-10);
    }

    #[test]
    fn small_space_exhausts() {
        let h = RealCsr::new(&CsrMatrix::from_diagonal(&[3.0, 1.0, 2.0])).unwrap();
        let e = lanczos_lowest(&h, 5, &[1.0, 1.0, 1.0], None, &LanczosOptions::default()).unwrap();
        assert_eq!(e.values.len(), 3);
        assert!((e.values[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_complex() {
        let m = CsrMatrix::from_triplets(1, 1, vec![(0, 0, C64::new(0.0, 1.0))]);
        assert!(RealCsr::new(&m).is_err());
    }
}
