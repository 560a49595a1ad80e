//! Density-matrix integration of the dephasing master equation
//!
//! `dρ/dt = -i[H, ρ] + (Γ_el/2) Σ_i (σ_i^z ρ σ_i^z - ρ)`
//!
//! on the full `2^N`-dimensional spin space times a truncated Fock space.
//! Individual `σ_i^z` jumps leave the symmetric sector, so the collective
//! operators of [`crate::hilbert`] are not reused here.
//!
//! Basis index `k = n · 2^N + s`, where bit `i` of `s` is set when spin `i`
//! points up. In this basis every `σ_i^z` is diagonal, and the dissipator
//! multiplies `ρ[a, b]` by `-Γ_el · popcount(s_a XOR s_b)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expm::{propagate_constant, KrylovOptions};
use crate::hilbert::{fock_state, spin_x_eigenstate, ProductSpace};
use crate::model::{default_n_max, dicke_hamiltonian, DickeConfig};
use crate::observables::infer_spin_phonon;
use crate::sparse::{CsrMatrix, C64, ZERO};
use crate::units::per_s_to_per_ms;

pub const MAX_IONS: usize = 4;
pub const MAX_N_MAX: usize = 40;

/// Operators on the full spin ⊗ Fock space.
#[derive(Clone, Debug)]
pub struct FullSpace {
    n_ions: usize,
    n_max: usize,
    pub sx: CsrMatrix,
    pub sy: CsrMatrix,
    pub sz: CsrMatrix,
    pub number: CsrMatrix,
    /// `(a + a†) S_z`
    pub quad_sz: CsrMatrix,
    /// `(a + a†) S_y`
    pub quad_sy: CsrMatrix,
    /// `S_x² + S_y² + S_z²`
    pub s_squared: CsrMatrix,
    hamming: DMatrix<f64>,
}

impl FullSpace {
    pub fn new(n_ions: usize, n_max: usize) -> Result<Self> {
        if n_ions == 0 || n_ions > MAX_IONS {
            return Err(invalid(format!(
                "full-space oracle supports 1..={MAX_IONS} ions, got {n_ions}"
            )));
        }
        if n_max == 0 || n_max > MAX_N_MAX {
            return Err(invalid(format!(
                "full-space oracle supports n_max in 1..={MAX_N_MAX}, got {n_max}"
            )));
        }
        let ns = 1usize << n_ions;
        let mut sx = Vec::new();
        let mut sy = Vec::new();
        let mut sz = Vec::new();
        for s in 0..ns {
            let mut m = 0.0;
            for i in 0..n_ions {
                let up = s >> i & 1 == 1;
                let t = s ^ (1 << i);
                sx.push((t, s, C64::new(0.5, 0.0)));
                // σ^y|↓⟩ = -i|↑⟩, σ^y|↑⟩ = i|↓⟩
                sy.push((t, s, C64::new(0.0, if up { 0.5 } else { -0.5 })));
                m += if up { 0.5 } else { -0.5 };
            }
            sz.push((s, s, C64::new(m, 0.0)));
        }
        let sx = CsrMatrix::from_triplets(ns, ns, sx);
        let sy = CsrMatrix::from_triplets(ns, ns, sy);
        let sz = CsrMatrix::from_triplets(ns, ns, sz);
        let s_squared = sx
            .matmul(&sx)?
            .add_scaled(C64::new(1.0, 0.0), &sy.matmul(&sy)?)?
            .add_scaled(C64::new(1.0, 0.0), &sz.matmul(&sz)?)?;

        let nf = n_max + 1;
        let id_f = CsrMatrix::identity(nf);
        let id_s = CsrMatrix::identity(ns);
        let a = CsrMatrix::from_triplets(nf, nf, (1..nf).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))));
        let quad = a.add_scaled(C64::new(1.0, 0.0), &a.adjoint())?;
        let number = CsrMatrix::from_diagonal(&(0..nf).map(|n| n as f64).collect::<Vec<_>>());

        let dim = nf * ns;
        let hamming = DMatrix::from_fn(dim, dim, |i, j| ((i % ns) ^ (j % ns)).count_ones() as f64);
        Ok(Self {
            n_ions,
            n_max,
            quad_sz: quad.kron(&sz),
            quad_sy: quad.kron(&sy),
            sx: id_f.kron(&sx),
            sy: id_f.kron(&sy),
            sz: id_f.kron(&sz),
            s_squared: id_f.kron(&s_squared),
            number: number.kron(&id_s),
            hamming,
        })
    }

    pub fn n_ions(&self) -> usize {
        self.n_ions
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn spin_dim(&self) -> usize {
        1 << self.n_ions
    }

    pub fn dim(&self) -> usize {
        (self.n_max + 1) * self.spin_dim()
    }

    /// Static part `-(g0/√N)(a + a†)S_z - δ a†a + ε S_z` and transverse `S_x`.
    fn hamiltonian_parts(&self, cfg: &DickeConfig) -> Result<(CsrMatrix, CsrMatrix)> {
        let lambda = cfg.g0 / (cfg.n_ions as f64).sqrt();
        let mut h0 = self
            .quad_sz
            .scale(C64::new(-lambda, 0.0))
            .add_scaled(C64::new(-cfg.delta, 0.0), &self.number)?;
        if cfg.bias != 0.0 {
            h0 = h0.add_scaled(C64::new(cfg.bias, 0.0), &self.sz)?;
        }
        Ok((h0, self.sx.clone()))
    }

    pub fn hamiltonian(&self, cfg: &DickeConfig, b: f64) -> Result<CsrMatrix> {
        let (h0, t) = self.hamiltonian_parts(cfg)?;
        h0.add_scaled(C64::new(b, 0.0), &t)
    }

    /// Symmetric Dicke states `|S = N/2, M⟩` as columns over the `2^N` spin
    /// basis, `M` ascending.
    pub fn symmetric_isometry(&self) -> DMatrix<f64> {
        let n = self.n_ions;
        let ns = self.spin_dim();
        let mut v = DMatrix::zeros(ns, n + 1);
        for s in 0..ns {
            v[(s, s.count_ones() as usize)] = 1.0;
        }
        for mut col in v.column_iter_mut() {
            let norm = col.norm();
            col /= norm;
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FullDensityMatrix {
    pub rho: DMatrix<C64>,
}

impl FullDensityMatrix {
    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (&self.rho - self.rho.adjoint())
            .iter()
            .map(|x| x.norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.rho + self.rho.adjoint()) * C64::new(0.5, 0.0);
        SymmetricEigen::new(herm).eigenvalues.min()
    }

    pub fn expectation(&self, op: &CsrMatrix) -> f64 {
        op.iter().map(|(i, j, v)| v * self.rho[(j, i)]).sum::<C64>().re
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn pure(psi: &[C64]) -> Self {
        let v = nalgebra::DVector::from_column_slice(psi);
        Self { rho: &v * v.adjoint() }
    }

    /// Restriction to the symmetric sector, in the collective basis used by
    /// [`crate::hilbert::ProductSpace`].
    pub fn symmetric_block(&self, space: &FullSpace) -> DMatrix<C64> {
        let v = space.symmetric_isometry().map(|x| C64::new(x, 0.0));
        let nf = space.n_max + 1;
        let id = DMatrix::<C64>::identity(nf, nf);
        let w = id.kronecker(&v);
        w.adjoint() * &self.rho * w
    }
}

/// Thermal phonons times `|-N/2⟩_x`, i.e. every spin in `(|↓⟩ - |↑⟩)/√2`.
pub fn initial_state(space: &FullSpace, nbar: f64) -> Result<FullDensityMatrix> {
    if !(nbar >= 0.0) {
        return Err(invalid(format!("nbar must be >= 0, got {nbar}")));
    }
    let ns = space.spin_dim();
    let amp = (ns as f64).sqrt().recip();
    let spin: Vec<C64> = (0..ns)
        .map(|s| C64::new(if s.count_ones() % 2 == 0 { amp } else { -amp }, 0.0))
        .collect();
    let nf = space.n_max + 1;
    let ratio = nbar / (nbar + 1.0);
    let mut weights: Vec<f64> = (0..nf).map(|n| ratio.powi(n as i32)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let dim = space.dim();
    let mut rho = DMatrix::<C64>::zeros(dim, dim);
    for (n, &w) in weights.iter().enumerate() {
        if w < 1e-300 {
            continue;
        }
        for a in 0..ns {
            for b in 0..ns {
                rho[(n * ns + a, n * ns + b)] = spin[a] * spin[b].conj() * w;
            }
        }
    }
    Ok(FullDensityMatrix { rho })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LindbladOptions {
    /// Upper bound on the first integration attempt's step (ms).
    pub dt_max: f64,
    /// Sampled observables must agree to this between successive halvings.
    pub obs_tol: f64,
    pub max_halvings: usize,
    pub positivity_tol: f64,
}

impl Default for LindbladOptions {
    fn default() -> Self {
        Self {
            dt_max: 0.005,
            obs_tol: 1e-6,
            max_halvings: 6,
            positivity_tol: 1e-7,
        }
    }
}

/// Sampled observables of an oracle run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LindbladSeries {
    pub times: Vec<f64>,
    pub sx: Vec<f64>,
    pub sy: Vec<f64>,
    pub sz: Vec<f64>,
    pub corr_sy: Vec<f64>,
    pub n_phonon: Vec<f64>,
    pub s_squared: Vec<f64>,
    pub trace: Vec<f64>,
    /// `Tr(S_x L(ρ))` evaluated from the generator at each sample.
    pub dsx_dt: Vec<f64>,
    /// Step used by the accepted integration (ms).
    pub dt: f64,
    pub min_eigenvalue: f64,
    pub max_hermiticity_defect: f64,
}

/// `H0 + b·T` on the union sparsity pattern of both real matrices.
struct RealPair {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    v0: Vec<f64>,
    vt: Vec<f64>,
}

impl RealPair {
    fn new(h0: &CsrMatrix, t: &CsrMatrix) -> Self {
        let n = h0.nrows();
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut v0 = Vec::new();
        let mut vt = Vec::new();
        for i in 0..n {
            let mut row: Vec<(usize, f64, f64)> = h0.row(i).map(|(j, v)| (j, v.re, 0.0)).collect();
            row.extend(t.row(i).map(|(j, v)| (j, 0.0, v.re)));
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let (j, mut a, mut b) = row[k];
                while k + 1 < row.len() && row[k + 1].0 == j {
                    k += 1;
                    a += row[k].1;
                    b += row[k].2;
                }
                indices.push(j);
                v0.push(a);
                vt.push(b);
                k += 1;
            }
            indptr.push(indices.len());
        }
        Self {
            n,
            indptr,
            indices,
            v0,
            vt,
        }
    }
}

struct Generator<'a> {
    h: RealPair,
    gamma: f64,
    hamming: &'a DMatrix<f64>,
}

impl Generator<'_> {
    /// `out = L(ρ)` for a Hermitian `ρ` and real symmetric `H`, all column-major.
    fn apply(&self, b: f64, rho: &[C64], x: &mut [C64], out: &mut [C64]) {
        let h = &self.h;
        let n = h.n;
        let vals: Vec<f64> = h.v0.iter().zip(&h.vt).map(|(a, t)| a + b * t).collect();
        // X = Hρ, then -i[H, ρ] = -i(X - X†)
        for (xc, col) in x.chunks_exact_mut(n).zip(rho.chunks_exact(n)) {
            for (i, xi) in xc.iter_mut().enumerate() {
                let mut acc = ZERO;
                for k in h.indptr[i]..h.indptr[i + 1] {
                    acc += col[h.indices[k]] * vals[k];
                }
                *xi = acc;
            }
        }
        let ham = self.hamming.as_slice();
        let g = self.gamma;
        for j in 0..n {
            for i in 0..n {
                let c = x[j * n + i] - x[i * n + j].conj();
                out[j * n + i] = C64::new(c.im, -c.re) - rho[j * n + i] * (g * ham[j * n + i]);
            }
        }
    }
}

fn measure(space: &FullSpace, rho: FullDensityMatrix, series: &mut LindbladSeries, dsx: f64) {
    series.sx.push(rho.expectation(&space.sx));
    series.sy.push(rho.expectation(&space.sy));
    series.sz.push(rho.expectation(&space.sz));
    series.corr_sy.push(rho.expectation(&space.quad_sy));
    series.n_phonon.push(rho.expectation(&space.number));
    series.s_squared.push(rho.expectation(&space.s_squared));
    series.trace.push(rho.trace());
    series.dsx_dt.push(dsx);
    series.max_hermiticity_defect = series.max_hermiticity_defect.max(rho.hermiticity_defect());
}

fn integrate(
    space: &FullSpace,
    gen: &Generator,
    cfg: &DickeConfig,
    rho0: &FullDensityMatrix,
    sample_times: &[f64],
    dt: f64,
) -> (FullDensityMatrix, LindbladSeries) {
    let n = rho0.rho.nrows();
    let len = n * n;
    let mut rho = rho0.rho.as_slice().to_vec();
    let mut x = vec![ZERO; len];
    let mut y = vec![ZERO; len];
    let mut k = [vec![ZERO; len], vec![ZERO; len], vec![ZERO; len], vec![ZERO; len]];
    let mut series = LindbladSeries {
        dt,
        ..LindbladSeries::default()
    };
    let b_at = |t: f64| cfg.ramp.field_at(t.max(0.0));
    let as_matrix = |v: &[C64]| FullDensityMatrix {
        rho: DMatrix::from_column_slice(n, n, v),
    };
    let mut t = sample_times[0];
    for (idx, &target) in sample_times.iter().enumerate() {
        if idx > 0 {
            let steps = ((target - t) / dt).ceil().max(1.0) as usize;
            let h = (target - t) / steps as f64;
            for _ in 0..steps {
                let [k1, k2, k3, k4] = &mut k;
                gen.apply(b_at(t), &rho, &mut x, k1);
                y.iter_mut()
                    .zip(&rho)
                    .zip(k1.iter())
                    .for_each(|((y, r), d)| *y = r + d * (0.5 * h));
                gen.apply(b_at(t + 0.5 * h), &y, &mut x, k2);
                y.iter_mut()
                    .zip(&rho)
                    .zip(k2.iter())
                    .for_each(|((y, r), d)| *y = r + d * (0.5 * h));
                gen.apply(b_at(t + 0.5 * h), &y, &mut x, k3);
                y.iter_mut()
                    .zip(&rho)
                    .zip(k3.iter())
                    .for_each(|((y, r), d)| *y = r + d * h);
                gen.apply(b_at(t + h), &y, &mut x, k4);
                for (i, r) in rho.iter_mut().enumerate() {
                    *r += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
                }
                t += h;
            }
            t = target;
        }
        gen.apply(b_at(t), &rho, &mut x, &mut y);
        let dsx = as_matrix(&y).expectation(&space.sx);
        measure(space, as_matrix(&rho), &mut series, dsx);
    }
    series.times = sample_times.to_vec();
    (as_matrix(&rho), series)
}

fn max_series_diff(a: &LindbladSeries, b: &LindbladSeries) -> f64 {
    let pairs = [
        (&a.sx, &b.sx),
        (&a.sy, &b.sy),
        (&a.sz, &b.sz),
        (&a.corr_sy, &b.corr_sy),
        (&a.n_phonon, &b.n_phonon),
    ];
    pairs
        .iter()
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Integrates from `sample_times[0]` to the last sample with RK4, halving
/// the step until every sampled observable changes by less than
/// `opts.obs_tol`.
pub fn evolve_lindblad(
    space: &FullSpace,
    cfg: &DickeConfig,
    rho0: &FullDensityMatrix,
    sample_times: &[f64],
    opts: &LindbladOptions,
) -> Result<(FullDensityMatrix, LindbladSeries)> {
    if cfg.n_ions != space.n_ions {
        return Err(Error::DimensionMismatch {
            expected: space.n_ions,
            found: cfg.n_ions,
        });
    }
    if rho0.rho.nrows() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            found: rho0.rho.nrows(),
        });
    }
    if sample_times.len() < 2 || sample_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid(
            "sample times must be strictly increasing with at least two entries",
        ));
    }
    let (h0, transverse) = space.hamiltonian_parts(cfg)?;
    let b_max = sample_times.iter().map(|&t| cfg.ramp.field_at(t)).fold(0.0, f64::max);
    let gamma = per_s_to_per_ms(cfg.gamma_el);
    let norm = h0.inf_norm() + b_max * transverse.inf_norm() + gamma * space.n_ions as f64;
    let gen = Generator {
        h: RealPair::new(&h0, &transverse),
        gamma,
        hamming: &space.hamming,
    };
    // RK4 is stable on the imaginary axis up to |λ dt| ≈ 2.8
    let mut dt = opts.dt_max.min(0.5 / norm.max(1e-12));
    let mut prev = integrate(space, &gen, cfg, rho0, sample_times, dt);
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_halvings {
        dt *= 0.5;
        let next = integrate(space, &gen, cfg, rho0, sample_times, dt);
        change = max_series_diff(&prev.1, &next.1);
        prev = next;
        if change < opts.obs_tol {
            let min = prev.0.min_eigenvalue();
            if min < -opts.positivity_tol {
                continue;
            }
            prev.1.min_eigenvalue = min;
            return Ok(prev);
        }
    }
    let min = prev.0.min_eigenvalue();
    if min < -opts.positivity_tol {
        return Err(Error::Positivity { min_eigenvalue: min });
    }
    Err(Error::StepNonConvergence { change, dt })
}

/// Oracle at `Γ_el = 0` against pure-state propagation in the symmetric
/// sector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedSystemCheck {
    pub trace_distance: f64,
    /// `max |⟨S²⟩ - (N/2)(N/2 + 1)|` over the samples.
    pub s_squared_drift: f64,
}

/// Evolves `|0⟩|-N/2⟩_x` for `t` ms under a constant field `b` both ways.
pub fn closed_system_check(cfg: &DickeConfig, b: f64, t: f64, opts: &LindbladOptions) -> Result<ClosedSystemCheck> {
    let mut c = cfg.clone();
    c.gamma_el = 0.0;
    c.nbar = 0.0;
    c.ramp = crate::model::RampProfile::Constant { b };
    c.validate()?;
    let space = FullSpace::new(c.n_ions, oracle_n_max(&c)?)?;
    let rho0 = initial_state(&space, 0.0)?;
    let (rho, series) = evolve_lindblad(&space, &c, &rho0, &uniform_times(t, 11), opts)?;

    let sym = ProductSpace::new(c.n_ions, space.n_max())?;
    let spin = spin_x_eigenstate(&sym.spin, -sym.spin.spin())?;
    let psi0 = sym.product_state(&fock_state(&sym.fock, 0)?, &spin)?.amps;
    let h = dicke_hamiltonian(&sym, &c, b)?;
    let psi = propagate_constant(&h, &psi0, t, c.numerics.dt_max, &KrylovOptions::default())?;
    let diff = rho.symmetric_block(&space) - FullDensityMatrix::pure(&psi).rho;
    let trace_distance = 0.5
        * SymmetricEigen::new(diff)
            .eigenvalues
            .iter()
            .map(|x| x.abs())
            .sum::<f64>();

    let s = 0.5 * c.n_ions as f64;
    let s_squared_drift = series
        .s_squared
        .iter()
        .map(|v| (v - s * (s + 1.0)).abs())
        .fold(0.0, f64::max);
    Ok(ClosedSystemCheck {
        trace_distance,
        s_squared_drift,
    })
}

/// Evenly spaced samples over `[0, t_end]`.
pub fn uniform_times(t_end: f64, samples: usize) -> Vec<f64> {
    (0..samples).map(|k| t_end * k as f64 / (samples - 1) as f64).collect()
}

/// Truncation used by the oracle: the dynamics default, capped at [`MAX_N_MAX`].
pub fn oracle_n_max(cfg: &DickeConfig) -> Result<usize> {
    Ok(match cfg.numerics.n_max {
        Some(n) => n,
        None => default_n_max(cfg, 0)?.min(MAX_N_MAX),
    })
}

/// Least-squares rate `k` in `|x(t)| ∝ e^{-k t}`.
pub fn fit_decay_rate(times: &[f64], values: &[f64]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| v.abs() > 0.0)
        .map(|(&t, v)| (t, v.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return Err(invalid("decay fit needs at least two non-zero samples"));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(-sxy / sxx)
}

/// Outcome of [`validate_inference`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub n_ions: usize,
    pub gamma_el: f64,
    /// `max |Tr(S_x L(ρ)) - ((g0/√N)⟨(a+a†)S_y⟩ - Γ_el⟨S_x⟩)|`.
    pub generator_residual: f64,
    /// Same identity with `d⟨S_x⟩/dt` from a five-point stencil on the
    /// dense samples.
    pub dense_residual: f64,
    pub dense_samples: usize,
    /// Peak-normalized error of the backward-difference reconstruction.
    pub production_error: f64,
    pub production_samples: usize,
    pub fine_error: f64,
    pub fine_samples: usize,
    pub peak_corr: f64,
    /// Γ_el multiplier used in the reconstruction (1 unless deliberately corrupted).
    pub gamma_factor: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferenceOptions {
    pub dense_samples: usize,
    pub production_samples: usize,
    pub fine_samples: usize,
    /// Scales Γ_el inside the reconstruction only; values other than 1 are a
    /// negative control.
    pub gamma_factor: f64,
    pub lindblad: LindbladOptions,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            dense_samples: 4001,
            production_samples: 100,
            fine_samples: 1000,
            gamma_factor: 1.0,
            lindblad: LindbladOptions::default(),
        }
    }
}

fn reconstruction_error(series: &LindbladSeries, cfg: &DickeConfig, gamma_el: f64) -> Result<(f64, f64)> {
    let inferred = infer_spin_phonon(&series.times, &series.sx, gamma_el, cfg.n_ions, cfg.g0)?;
    let peak = series.corr_sy.iter().map(|c| c.abs()).fold(0.0, f64::max);
    let err = inferred
        .iter()
        .zip(&series.corr_sy)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((err / peak.max(f64::MIN_POSITIVE), peak))
}

fn lcm(a: usize, b: usize) -> usize {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}

fn subsample(series: &LindbladSeries, stride: usize) -> LindbladSeries {
    let pick = |v: &[f64]| v.iter().step_by(stride).copied().collect::<Vec<_>>();
    LindbladSeries {
        times: pick(&series.times),
        sx: pick(&series.sx),
        sy: pick(&series.sy),
        sz: pick(&series.sz),
        corr_sy: pick(&series.corr_sy),
        n_phonon: pick(&series.n_phonon),
        s_squared: pick(&series.s_squared),
        trace: pick(&series.trace),
        dsx_dt: pick(&series.dsx_dt),
        ..series.clone()
    }
}

/// Checks `d⟨S_x⟩/dt = (g0/√N)⟨(a+a†)S_y⟩ - Γ_el⟨S_x⟩` along a ramp and
/// measures how well the one-sided reconstruction recovers the correlator.
pub fn validate_inference(cfg: &DickeConfig, opts: &InferenceOptions) -> Result<InferenceReport> {
    cfg.validate()?;
    if cfg.n_ions > 3 {
        return Err(invalid(format!(
            "inference validation runs at N <= 3, got {}",
            cfg.n_ions
        )));
    }
    if cfg.bias != 0.0 {
        return Err(invalid("the S_x identity holds only without a longitudinal bias"));
    }
    let space = FullSpace::new(cfg.n_ions, oracle_n_max(cfg)?)?;
    let rho0 = initial_state(&space, cfg.nbar)?;
    let t_end = cfg.numerics.t_end;
    let lambda = cfg.g0 / (cfg.n_ions as f64).sqrt();
    let gamma = per_s_to_per_ms(cfg.gamma_el);

    // one integration on a grid that contains both coarse grids exactly
    let (p, f) = (opts.production_samples, opts.fine_samples);
    if p < 2 || f < 2 {
        return Err(invalid("reconstruction grids need at least two samples"));
    }
    let m = lcm(p - 1, f - 1);
    let intervals = m * opts.dense_samples.saturating_sub(1).div_ceil(m).max(1);
    let (_, dense) = evolve_lindblad(&space, cfg, &rho0, &uniform_times(t_end, intervals + 1), &opts.lindblad)?;
    let rhs = |k: usize| lambda * dense.corr_sy[k] - gamma * dense.sx[k];
    let generator_residual = (0..dense.times.len())
        .map(|k| (dense.dsx_dt[k] - rhs(k)).abs())
        .fold(0.0, f64::max);
    let h = t_end / intervals as f64;
    let dense_residual = (2..dense.times.len().saturating_sub(2))
        .map(|k| {
            let x = &dense.sx;
            let d = (x[k - 2] - 8.0 * x[k - 1] + 8.0 * x[k + 1] - x[k + 2]) / (12.0 * h);
            (d - rhs(k)).abs()
        })
        .fold(0.0, f64::max);

    let used_gamma = cfg.gamma_el * opts.gamma_factor;
    let (production_error, peak_corr) = reconstruction_error(&subsample(&dense, intervals / (p - 1)), cfg, used_gamma)?;
    let (fine_error, _) = reconstruction_error(&subsample(&dense, intervals / (f - 1)), cfg, used_gamma)?;

    Ok(InferenceReport {
        n_ions: cfg.n_ions,
        gamma_el: cfg.gamma_el,
        generator_residual,
        dense_residual,
        dense_samples: intervals + 1,
        production_error,
        production_samples: opts.production_samples,
        fine_error,
        fine_samples: opts.fine_samples,
        peak_corr,
        gamma_factor: opts.gamma_factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RampProfile;

    fn cfg(n: usize, gamma_el: f64, ramp: RampProfile) -> DickeConfig {
        let mut c = DickeConfig::ion_trap_with_ramp(n, ramp);
        c.nbar = 0.0;
        c.gamma_el = gamma_el;
        c
    }

    #[test]
    fn rejects_large_systems() {
        assert!(FullSpace::new(5, 10).is_err());
        assert!(FullSpace::new(2, 41).is_err());
        assert!(FullSpace::new(0, 10).is_err());
    }

    #[test]
    fn spin_algebra_on_full_space() {
        let s = FullSpace::new(3, 2).unwrap();
        let comm = CsrMatrix::commutator(&s.sx, &s.sy).unwrap();
        let defect = comm.add_scaled(C64::new(0.0, -1.0), &s.sz).unwrap().max_abs();
        assert!(defect < 1e-14);
        // trace of S² over the 2^3 spin states: 4·(15/4) + 4·(3/4) per Fock level
        let tr: f64 = (0..s.dim()).map(|i| s.s_squared.get(i, i).re).sum();
        assert!((tr - 3.0 * 18.0).abs() < 1e-12);
    }

    #[test]
    fn initial_state_is_x_polarized() {
        let s = FullSpace::new(3, 4).unwrap();
        let rho = initial_state(&s, 0.0).unwrap();
        assert!((rho.trace() - 1.0).abs() < 1e-14);
        assert!((rho.expectation(&s.sx) + 1.5).abs() < 1e-14);
        assert!((rho.expectation(&s.s_squared) - 3.75).abs() < 1e-13);
    }

    #[test]
    fn pure_dephasing_decay() {
        let c = cfg(2, 280.0, RampProfile::Constant { b: 0.0 });
        let mut c = c;
        c.g0 = 0.0;
        let s = FullSpace::new(2, 3).unwrap();
        let rho = initial_state(&s, 0.0).unwrap();
        let times = uniform_times(2.0, 21);
        let (_, series) = evolve_lindblad(&s, &c, &rho, &times, &LindbladOptions::default()).unwrap();
        for (t, sx) in series.times.iter().zip(&series.sx) {
            let exact = -(-0.28 * t).exp();
            assert!((sx - exact).abs() < 1e-5, "t={t}");
        }
    }

    #[test]
    fn symmetric_block_of_initial_state() {
        let s = FullSpace::new(2, 2).unwrap();
        let rho = initial_state(&s, 0.0).unwrap();
        let block = rho.symmetric_block(&s);
        assert!((block.trace().re - 1.0).abs() < 1e-14);
        let space = crate::hilbert::ProductSpace::new(2, 2).unwrap();
        let spin = crate::hilbert::spin_x_eigenstate(&space.spin, -1.0).unwrap();
        let boson = crate::hilbert::fock_state(&space.fock, 0).unwrap();
        let psi = space.product_state(&boson, &spin).unwrap().amps;
        let expect = FullDensityMatrix::pure(&psi).rho;
        assert!((block - expect).iter().map(|x| x.norm()).fold(0.0, f64::max) < 1e-14);
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let t = uniform_times(3.0, 31);
        let v: Vec<f64> = t.iter().map(|x| -2.0 * (-0.37 * x).exp()).collect();
        assert!((fit_decay_rate(&t, &v).unwrap() - 0.37).abs() < 1e-12);
    }
}
