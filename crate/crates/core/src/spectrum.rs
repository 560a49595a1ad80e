//! Low-lying spectrum, parity labels and the same-parity energy gap.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{ascending, lanczos_lowest, start_vector, LanczosOptions, RealCsr};
use crate::error::{invalid, Error, Result};
use crate::hilbert::ProductSpace;
use crate::model::{critical_field, default_n_max, DickeConfig, DickeHamiltonian, Driven};
use crate::observables::ObservableSet;
use crate::sparse::{CsrMatrix, C64};

/// Problems up to this dimension are diagonalized densely.
pub const DENSE_EIGEN_MAX_DIM: usize = 2000;
/// Relative level spacing below which eigenvectors are re-resolved in the
/// parity basis.
pub const CLUSTER_TOL: f64 = 1e-8;
/// Points in [`default_b_grid`].
pub const DEFAULT_GRID_POINTS: usize = 81;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumResult {
    /// Ascending, rad/ms.
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<C64>>,
    /// ±1 from the rounded parity expectation.
    pub parities: Vec<i8>,
    /// `E_j - E_0` for the lowest `j > 0` with the ground state's parity.
    pub gap: Option<f64>,
}

impl SpectrumResult {
    fn new(eigenvalues: Vec<f64>, eigenvectors: Vec<Vec<C64>>, parities: Vec<i8>) -> Self {
        let gap = parities
            .iter()
            .skip(1)
            .position(|&p| p == parities[0])
            .map(|j| eigenvalues[j + 1] - eigenvalues[0]);
        Self {
            eigenvalues,
            eigenvectors,
            parities,
            gap,
        }
    }
}

fn rdot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn parity_label(parity: &RealCsr, v: &[f64]) -> Result<i8> {
    let mut pv = vec![0.0; v.len()];
    parity.mul_vec_into(v, &mut pv);
    let p = rdot(v, &pv) / rdot(v, v);
    if p.abs() < 0.99 {
        return Err(Error::EigenNonConvergence(format!(
            "eigenvector is not a parity eigenstate (⟨Π⟩ = {p:.4})"
        )));
    }
    Ok(if p > 0.0 { 1 } else { -1 })
}

/// The `k` lowest eigenpairs of `h` with parity labels measured by
/// `parity`. Both matrices must be real. On the dense path the result is
/// extended past `k` when `k` would cut through a degenerate cluster.
pub fn lowest_eigenpairs(h: &CsrMatrix, parity: &CsrMatrix, k: usize) -> Result<SpectrumResult> {
    if k < 2 {
        return Err(invalid(format!("need k >= 2 eigenpairs, got {k}")));
    }
    if h.nrows() != parity.nrows() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            found: parity.nrows(),
        });
    }
    let scale = h.inf_norm().max(f64::MIN_POSITIVE);
    if h.hermiticity_defect() > 1e-12 * scale {
        return Err(invalid("Hamiltonian is not Hermitian"));
    }
    let hr = RealCsr::new(h)?;
    let pr = RealCsr::new(parity)?;
    let (values, vectors, parities) = if h.nrows() <= DENSE_EIGEN_MAX_DIM {
        dense_lowest(h, &pr, k, scale)?
    } else {
        sector_lowest(&hr, &pr, k)?
    };
    let vectors = vectors
        .into_iter()
        .map(|v| v.into_iter().map(|x| C64::new(x, 0.0)).collect())
        .collect();
    Ok(SpectrumResult::new(values, vectors, parities))
}

type Lowest = (Vec<f64>, Vec<Vec<f64>>, Vec<i8>);

fn dense_lowest(h: &CsrMatrix, parity: &RealCsr, k: usize, scale: f64) -> Result<Lowest> {
    let dim = h.nrows();
    let eig = SymmetricEigen::new(h.to_dense_real());
    let order = ascending(&eig.eigenvalues);
    let mut end = k.min(dim);
    while end < dim && eig.eigenvalues[order[end]] - eig.eigenvalues[order[end - 1]] < CLUSTER_TOL * scale {
        end += 1;
    }
    let mut values: Vec<f64> = order[..end].iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors: Vec<Vec<f64>> = order[..end]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();

    let mut start = 0;
    while start < end {
        let mut stop = start + 1;
        while stop < end && values[stop] - values[stop - 1] < CLUSTER_TOL * scale {
            stop += 1;
        }
        if stop - start > 1 {
            resolve_cluster(h, parity, &mut values[start..stop], &mut vectors[start..stop]);
        }
        start = stop;
    }
    let parities = vectors
        .iter()
        .map(|v| parity_label(parity, v))
        .collect::<Result<Vec<_>>>()?;
    Ok((values, vectors, parities))
}

/// Rotates a near-degenerate block onto eigenvectors of the projected
/// parity. Even states are listed first, which matches the `B → 0⁺` limit of
/// the ground doublet.
fn resolve_cluster(h: &CsrMatrix, parity: &RealCsr, values: &mut [f64], vectors: &mut [Vec<f64>]) {
    let m = vectors.len();
    let n = vectors[0].len();
    let mut pv = vec![0.0; n];
    let mut proj = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        parity.mul_vec_into(&vectors[j], &mut pv);
        for i in 0..m {
            proj[(i, j)] = rdot(&vectors[i], &pv);
        }
    }
    let proj = (&proj + proj.transpose()) * 0.5;
    let eig = SymmetricEigen::new(proj);
    let mut cols: Vec<usize> = (0..m).collect();
    cols.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let hr = RealCsr::new(h).expect("checked by caller");
    let mut hx = vec![0.0; n];
    let rotated: Vec<(f64, Vec<f64>)> = cols
        .iter()
        .map(|&c| {
            let mut x = vec![0.0; n];
            for (r, v) in vectors.iter().enumerate() {
                let w = eig.eigenvectors[(r, c)];
                x.iter_mut().zip(v).for_each(|(xi, vi)| *xi += w * vi);
            }
            hr.mul_vec_into(&x, &mut hx);
            (rdot(&x, &hx), x)
        })
        .collect();
    for ((val, vec), (e, x)) in values.iter_mut().zip(vectors.iter_mut()).zip(rotated) {
        *val = e;
        *vec = x;
    }
}

/// Lanczos separately in each parity sector, seeded with `(1 ± Π) r / 2`.
fn sector_lowest(h: &RealCsr, parity: &RealCsr, k: usize) -> Result<Lowest> {
    let n = h.dim();
    let start = start_vector(n);
    let mut all: Vec<(f64, Vec<f64>, i8)> = Vec::new();
    for sign in [1.0, -1.0] {
        let project = |x: &mut [f64]| {
            let mut px = vec![0.0; x.len()];
            parity.mul_vec_into(x, &mut px);
            x.iter_mut().zip(&px).for_each(|(a, b)| *a = 0.5 * (*a + sign * b));
        };
        let mut seed = start.clone();
        project(&mut seed);
        if seed.iter().all(|&x| x == 0.0) {
            continue;
        }
        let pairs = lanczos_lowest(h, k, &seed, Some(&project), &LanczosOptions::default())?;
        for (lam, v) in pairs.values.into_iter().zip(pairs.vectors) {
            let label = parity_label(parity, &v)?;
            all.push((lam, v, label));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    all.truncate(k);
    let mut values = Vec::with_capacity(all.len());
    let mut vectors = Vec::with_capacity(all.len());
    let mut parities = Vec::with_capacity(all.len());
    for (lam, v, p) in all {
        values.push(lam);
        vectors.push(v);
        parities.push(p);
    }
    Ok((values, vectors, parities))
}

/// Same-parity gap of `h`, requesting more eigenpairs until one is found.
pub fn gap_of(h: &CsrMatrix, parity: &CsrMatrix) -> Result<SpectrumResult> {
    let mut k = 4;
    loop {
        let k_eff = k.min(h.nrows());
        let res = lowest_eigenpairs(h, parity, k_eff)?;
        if res.gap.is_some() {
            return Ok(res);
        }
        if k_eff == h.nrows() || k >= 64 {
            return Err(Error::EigenNonConvergence(format!(
                "no excited state with the ground-state parity among the lowest {k_eff}"
            )));
        }
        k *= 2;
    }
}

/// Ground-state quantities at one field value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub n_ions: usize,
    pub b: f64,
    pub gap: f64,
    pub ground_energy: f64,
    pub ground_parity: i8,
    /// `⟨(a + a†) S_z⟩` in the ground state.
    pub order_param: f64,
    /// `⟨(a + a†) S_y⟩` in the ground state.
    pub corr_sy: f64,
}

/// Operators for repeated spectral queries at fixed `N` and couplings.
pub struct SpectrumProblem {
    pub space: ProductSpace,
    ham: DickeHamiltonian,
    obs: ObservableSet,
}

impl SpectrumProblem {
    /// Truncation defaults to `ceil((|α0| + 4)²)` unless overridden.
    pub fn new(cfg: &DickeConfig) -> Result<Self> {
        cfg.validate()?;
        let n_max = match cfg.numerics.n_max {
            Some(n) => n,
            None => default_n_max(cfg, 0)?,
        };
        let space = ProductSpace::new(cfg.n_ions, n_max)?;
        Ok(Self {
            ham: DickeHamiltonian::new(&space, cfg)?,
            obs: ObservableSet::new(&space)?,
            space,
        })
    }

    pub fn hamiltonian(&self, b: f64) -> CsrMatrix {
        self.ham.at(b)
    }

    pub fn parity(&self) -> &CsrMatrix {
        self.obs.parity()
    }

    pub fn lowest(&self, b: f64, k: usize) -> Result<SpectrumResult> {
        lowest_eigenpairs(&self.ham.at(b), self.obs.parity(), k)
    }

    pub fn gap_at(&self, b: f64) -> Result<GapPoint> {
        let res = gap_of(&self.ham.at(b), self.obs.parity())?;
        let o = self.obs.measure(&res.eigenvectors[0]);
        Ok(GapPoint {
            n_ions: self.space.n_ions(),
            b,
            gap: res.gap.expect("gap_of guarantees a gap"),
            ground_energy: res.eigenvalues[0],
            ground_parity: res.parities[0],
            order_param: o.order_z,
            corr_sy: o.corr_sy,
        })
    }

    pub fn ground_state(&self, b: f64) -> Result<(f64, Vec<C64>)> {
        let mut res = self.lowest(b, 2)?;
        Ok((res.eigenvalues[0], res.eigenvectors.swap_remove(0)))
    }
}

pub fn parity_gap(cfg: &DickeConfig, b: f64) -> Result<f64> {
    Ok(SpectrumProblem::new(cfg)?.gap_at(b)?.gap)
}

pub fn ground_state(cfg: &DickeConfig, b: f64) -> Result<(f64, Vec<C64>)> {
    SpectrumProblem::new(cfg)?.ground_state(b)
}

/// `DEFAULT_GRID_POINTS` evenly spaced fields over `[0, 4 B_c]`.
pub fn default_b_grid(cfg: &DickeConfig) -> Result<Vec<f64>> {
    let top = 4.0 * critical_field(cfg)?;
    let n = DEFAULT_GRID_POINTS;
    Ok((0..n).map(|i| top * i as f64 / (n - 1) as f64).collect())
}

/// `Δ(N, B)` and the ground-state order parameter, row-major in `n_list`.
pub fn scan_gap_vs_n_and_b(cfg: &DickeConfig, n_list: &[usize], b_grid: &[f64]) -> Result<Vec<GapPoint>> {
    let mut rows = Vec::with_capacity(n_list.len() * b_grid.len());
    for &n in n_list {
        let mut c = cfg.clone();
        c.n_ions = n;
        let problem = SpectrumProblem::new(&c)?;
        let points: Vec<Result<GapPoint>> = b_grid.par_iter().map(|&b| problem.gap_at(b)).collect();
        for p in points {
            rows.push(p?);
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetuningPoint {
    pub delta: f64,
    pub g0: f64,
    /// Same-parity gap at `B = B_c`.
    pub gap: f64,
}

/// Gap at the critical field for each detuning, with `g0 = √(B_c |δ|)` so
/// that `B_c` stays fixed.
pub fn scan_gap_vs_detuning(cfg: &DickeConfig, b_c: f64, deltas: &[f64], n_ions: usize) -> Result<Vec<DetuningPoint>> {
    if !(b_c > 0.0) {
        return Err(invalid(format!("critical field must be positive, got {b_c}")));
    }
    deltas
        .par_iter()
        .map(|&delta| {
            let mut c = cfg.clone();
            c.n_ions = n_ions;
            c.delta = delta;
            c.g0 = (b_c * delta.abs()).sqrt();
            let gap = SpectrumProblem::new(&c)?.gap_at(b_c)?.gap;
            Ok(DetuningPoint { delta, g0: c.g0, gap })
        })
        .collect()
}

/// Interior indices `i` with `v[i-1] > v[i] <= v[i+1]`.
pub fn local_minima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i - 1] > values[i] && values[i] <= values[i + 1])
        .collect()
}

/// Shape of `Δ(B)` along one row of a gap scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapScanSummary {
    pub n_ions: usize,
    pub min_gap: f64,
    pub min_b_over_bc: f64,
    pub gap_first: f64,
    pub gap_last: f64,
    /// `1 - min / min(first, last)`.
    pub depth: f64,
    pub interior_minima_b_over_bc: Vec<f64>,
    /// Global minimum is interior and at least 20% below both endpoints.
    pub minimum_emerged: bool,
}

/// Summarizes a row of [`GapPoint`]s ordered by field.
pub fn summarize_gap_scan(points: &[GapPoint], b_c: f64) -> Result<GapScanSummary> {
    if points.len() < 3 {
        return Err(invalid("a gap scan needs at least three field values"));
    }
    let gaps: Vec<f64> = points.iter().map(|p| p.gap).collect();
    let (imin, &min_gap) = gaps
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let gap_first = gaps[0];
    let gap_last = gaps[gaps.len() - 1];
    let depth = 1.0 - min_gap / gap_first.min(gap_last);
    let interior = imin > 0 && imin + 1 < gaps.len();
    Ok(GapScanSummary {
        n_ions: points[0].n_ions,
        min_gap,
        min_b_over_bc: points[imin].b / b_c,
        gap_first,
        gap_last,
        depth,
        interior_minima_b_over_bc: local_minima(&gaps).into_iter().map(|i| points[i].b / b_c).collect(),
        minimum_emerged: interior && depth >= 0.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RampProfile;

    fn cfg(n: usize) -> DickeConfig {
        let mut c = DickeConfig::ion_trap_with_ramp(n, RampProfile::Constant { b: 0.0 });
        c.nbar = 0.0;
        c
    }

    #[test]
    fn decoupled_limit_enumeration() {
        let mut c = cfg(3);
        c.g0 = 0.0;
        c.numerics.n_max = Some(6);
        let p = SpectrumProblem::new(&c).unwrap();
        let b = 2.5;
        let res = p.lowest(b, 10).unwrap();
        let mut exact: Vec<f64> = Vec::new();
        for n in 0..=6 {
            for mx in [-1.5, -0.5, 0.5, 1.5] {
                exact.push(b * mx - c.delta * n as f64);
            }
        }
        exact.sort_by(f64::total_cmp);
        for (got, want) in res.eigenvalues.iter().zip(&exact) {
            assert!((got - want).abs() < 1e-10);
        }
        // both elementary excitations flip parity
        let d = c.delta.abs();
        let expect = (2.0 * b).min(2.0 * d).min(b + d);
        assert!((res.gap.unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn sparse_matches_dense() {
        let c = cfg(4);
        let mut c8 = c.clone();
        c8.numerics.n_max = Some(8);
        let p = SpectrumProblem::new(&c8).unwrap();
        let h = p.hamiltonian(6.0);
        let dense = lowest_eigenpairs(&h, p.parity(), 6).unwrap();
        let hr = RealCsr::new(&h).unwrap();
        let pr = RealCsr::new(p.parity()).unwrap();
        let (vals, _, pars) = sector_lowest(&hr, &pr, 6).unwrap();
        for i in 0..6 {
            assert!((vals[i] - dense.eigenvalues[i]).abs() < 1e-10, "{i}");
            assert_eq!(pars[i], dense.parities[i]);
        }
    }

    #[test]
    fn zero_field_doublet_resolved() {
        let c = cfg(6);
        let p = SpectrumProblem::new(&c).unwrap();
        let res = p.lowest(0.0, 2).unwrap();
        let b_c = critical_field(&c).unwrap();
        assert!(res.eigenvalues[1] - res.eigenvalues[0] < 1e-6 * b_c);
        assert_eq!(res.parities, vec![1, -1]);
    }

    #[test]
    fn minima_finder() {
        assert!(local_minima(&[3.0, 2.0, 1.0]).is_empty());
        assert_eq!(local_minima(&[3.0, 1.0, 2.0, 0.5, 4.0]), vec![1, 3]);
    }
}
