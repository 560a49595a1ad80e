//! Expectation values, the `S_z` distribution, the phenomenological
//! dephasing of `⟨S_x⟩`, and reconstruction of the spin-phonon correlator
//! `⟨(a + a†) S_y⟩` from a `⟨S_x⟩` time series.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hilbert::{ProductSpace, SpinSector};
use crate::model::{parity_operator, spin_parity};
use crate::sparse::{CsrMatrix, C64};
use crate::units::per_s_to_per_ms;

/// Everything recorded at one sample time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    /// `P(M)` for `M = -N/2, ..., N/2`.
    pub p_mz: Vec<f64>,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
    pub abs_sz: f64,
    pub n_phonon: f64,
    /// `⟨(a + a†) S_z⟩`.
    pub order_z: f64,
    /// `⟨(a + a†) S_y⟩`.
    pub corr_sy: f64,
    /// `Re ⟨Π⟩`.
    pub parity: f64,
}

impl Observables {
    pub fn zeros(spin_dim: usize) -> Self {
        Self {
            p_mz: vec![0.0; spin_dim],
            sx: 0.0,
            sy: 0.0,
            sz: 0.0,
            abs_sz: 0.0,
            n_phonon: 0.0,
            order_z: 0.0,
            corr_sy: 0.0,
            parity: 0.0,
        }
    }

    /// `self += w * other`.
    pub fn add_weighted(&mut self, other: &Observables, w: f64) {
        for (a, b) in self.p_mz.iter_mut().zip(&other.p_mz) {
            *a += w * b;
        }
        self.sx += w * other.sx;
        self.sy += w * other.sy;
        self.sz += w * other.sz;
        self.abs_sz += w * other.abs_sz;
        self.n_phonon += w * other.n_phonon;
        self.order_z += w * other.order_z;
        self.corr_sy += w * other.corr_sy;
        self.parity += w * other.parity;
    }
}

/// Embedded operators needed to evaluate [`Observables`] on product states.
#[derive(Clone, Debug)]
pub struct ObservableSet {
    spin_dim: usize,
    fock_dim: usize,
    m_values: Vec<f64>,
    sx: CsrMatrix,
    sy: CsrMatrix,
    quad_sz: CsrMatrix,
    quad_sy: CsrMatrix,
    parity: CsrMatrix,
}

impl ObservableSet {
    pub fn new(space: &ProductSpace) -> Result<Self> {
        let quad = space.fock.quadrature();
        Ok(Self {
            spin_dim: space.spin.dim(),
            fock_dim: space.fock.dim(),
            m_values: space.spin.m_values(),
            sx: space.embed_spin(&space.spin.sx)?,
            sy: space.embed_spin(&space.spin.sy)?,
            quad_sz: space.embed_pair(&quad, &space.spin.sz)?,
            quad_sy: space.embed_pair(&quad, &space.spin.sy)?,
            parity: parity_operator(space),
        })
    }

    pub fn parity(&self) -> &CsrMatrix {
        &self.parity
    }

    pub fn measure(&self, psi: &[C64]) -> Observables {
        let mut p_mz = vec![0.0; self.spin_dim];
        let mut n_phonon = 0.0;
        for (k, amp) in psi.iter().enumerate() {
            let w = amp.norm_sqr();
            p_mz[k % self.spin_dim] += w;
            n_phonon += (k / self.spin_dim) as f64 * w;
        }
        let (sz, abs_sz) = z_moments(&self.m_values, &p_mz);
        Observables {
            sx: self.sx.expectation(psi).re,
            sy: self.sy.expectation(psi).re,
            sz,
            abs_sz,
            n_phonon,
            order_z: self.quad_sz.expectation(psi).re,
            corr_sy: self.quad_sy.expectation(psi).re,
            parity: self.parity.expectation(psi).re,
            p_mz,
        }
    }

    /// Population of the `levels` highest Fock states.
    pub fn top_level_population(&self, psi: &[C64], levels: usize) -> f64 {
        let first = self.fock_dim.saturating_sub(levels) * self.spin_dim;
        psi[first..].iter().map(|a| a.norm_sqr()).sum()
    }
}

/// Operators for spin-only states (Lipkin dynamics).
#[derive(Clone, Debug)]
pub struct SpinObservableSet {
    m_values: Vec<f64>,
    sx: CsrMatrix,
    sy: CsrMatrix,
    parity: CsrMatrix,
}

impl SpinObservableSet {
    pub fn new(spin: &SpinSector) -> Self {
        Self {
            m_values: spin.m_values(),
            sx: spin.sx.clone(),
            sy: spin.sy.clone(),
            parity: spin_parity(spin),
        }
    }

    /// Spin observables; boson quantities are reported as NaN.
    pub fn measure(&self, psi: &[C64]) -> Observables {
        let p_mz: Vec<f64> = psi.iter().map(|a| a.norm_sqr()).collect();
        let (sz, abs_sz) = z_moments(&self.m_values, &p_mz);
        Observables {
            sx: self.sx.expectation(psi).re,
            sy: self.sy.expectation(psi).re,
            sz,
            abs_sz,
            n_phonon: f64::NAN,
            order_z: f64::NAN,
            corr_sy: f64::NAN,
            parity: self.parity.expectation(psi).re,
            p_mz,
        }
    }
}

fn z_moments(m_values: &[f64], p: &[f64]) -> (f64, f64) {
    m_values
        .iter()
        .zip(p)
        .fold((0.0, 0.0), |(s, a), (m, w)| (s + m * w, a + m.abs() * w))
}

/// `P(M) = Σ_n |⟨n, M|ψ⟩|²`.
pub fn sz_distribution(space: &ProductSpace, psi: &[C64]) -> Vec<f64> {
    let d = space.spin.dim();
    let mut p = vec![0.0; d];
    for (k, amp) in psi.iter().enumerate() {
        p[k % d] += amp.norm_sqr();
    }
    p
}

/// Weighted average of distributions.
pub fn ensemble_sz_distribution(members: &[(f64, Vec<f64>)]) -> Vec<f64> {
    let d = members.first().map_or(0, |(_, p)| p.len());
    let mut out = vec![0.0; d];
    for (w, p) in members {
        for (o, x) in out.iter_mut().zip(p) {
            *o += w * x;
        }
    }
    out
}

/// All expectation values of a normalized product-space state.
pub fn expectations(space: &ProductSpace, psi: &[C64]) -> Result<Observables> {
    Ok(ObservableSet::new(space)?.measure(psi))
}

/// Phenomenological dephasing: `⟨S_x⟩ → ⟨S_x⟩ exp(-Γ t)` with `Γ = Γ_el / 2`.
/// `S_z`-derived quantities are left alone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DephasingModel {
    /// Single-particle dephasing rate in 1/s.
    pub gamma_el: f64,
}

impl DephasingModel {
    pub fn new(gamma_el: f64) -> Result<Self> {
        if !(gamma_el >= 0.0) {
            return Err(invalid(format!("gamma_el must be >= 0, got {gamma_el}")));
        }
        Ok(Self { gamma_el })
    }

    /// Attenuation rate of `⟨S_x⟩` in 1/ms.
    pub fn sx_rate(&self) -> f64 {
        per_s_to_per_ms(self.gamma_el) / 2.0
    }

    pub fn factor(&self, t_ms: f64) -> f64 {
        (-self.sx_rate() * t_ms).exp()
    }

    pub fn apply(&self, times: &[f64], sx: &[f64]) -> Vec<f64> {
        times.iter().zip(sx).map(|(&t, &s)| s * self.factor(t)).collect()
    }
}

/// Reconstructs `C = (√N/g0)(Γ_el ⟨S_x⟩ + d⟨S_x⟩/dt)` from samples.
///
/// The derivative is the backward difference `(S_k - S_{k-1})/(t_k - t_{k-1})`;
/// the first sample uses the forward difference. `gamma_el` is in 1/s, times
/// in ms and `g0` in rad/ms.
pub fn infer_spin_phonon(times: &[f64], sx: &[f64], gamma_el: f64, n_ions: usize, g0: f64) -> Result<Vec<f64>> {
    if times.len() != sx.len() {
        return Err(invalid("time and S_x series differ in length"));
    }
    if times.len() < 2 {
        return Err(invalid("need at least two samples to differentiate"));
    }
    if g0 == 0.0 {
        return Err(invalid("g0 must be nonzero"));
    }
    let rate = per_s_to_per_ms(gamma_el);
    let prefactor = (n_ions as f64).sqrt() / g0;
    Ok((0..times.len())
        .map(|k| {
            let (a, b) = if k == 0 { (0, 1) } else { (k - 1, k) };
            let deriv = (sx[b] - sx[a]) / (times[b] - times[a]);
            prefactor * (rate * sx[k] + deriv)
        })
        .collect())
}

/// `max - min` of `values` over samples with `t < t_max`.
pub fn peak_to_trough(times: &[f64], values: &[f64], t_max: f64) -> f64 {
    let window = times.iter().zip(values).filter(|(&t, _)| t < t_max).map(|(_, &v)| v);
    let (lo, hi) = window.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{displaced_fock_state, fock_state, spin_x_eigenstate};
    use crate::sparse::{ONE, ZERO};

    fn binomial(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn z_polarized_distribution() {
        let space = ProductSpace::new(6, 3).unwrap();
        let psi = space.basis_state(0, 0);
        let p = sz_distribution(&space, psi.as_slice());
        assert_eq!(p[0], 1.0);
        assert_eq!(p.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn x_polarized_distribution_is_binomial() {
        let n_ions = 10;
        let space = ProductSpace::new(n_ions, 2).unwrap();
        let spin = spin_x_eigenstate(&space.spin, -5.0).unwrap();
        let psi = space
            .product_state(&fock_state(&space.fock, 0).unwrap(), &spin)
            .unwrap();
        let p = sz_distribution(&space, psi.as_slice());
        for (k, pk) in p.iter().enumerate() {
            let expect = binomial(n_ions, k) / 2f64.powi(n_ions as i32);
            assert!((pk - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn cat_state_distribution() {
        let n_ions = 4;
        let space = ProductSpace::new(n_ions, 40).unwrap();
        let alpha = C64::new(2.0, 0.0);
        let up = displaced_fock_state(&space.fock, alpha, 0).unwrap();
        let dn = displaced_fock_state(&space.fock, -alpha, 0).unwrap();
        let mut s_up = vec![ZERO; 5];
        s_up[4] = ONE;
        let mut s_dn = vec![ZERO; 5];
        s_dn[0] = ONE;
        let a = space.product_state(&up, &s_up).unwrap();
        let b = space.product_state(&dn, &s_dn).unwrap();
        let r = 0.5f64.sqrt();
        let cat: Vec<C64> = a.amps.iter().zip(&b.amps).map(|(x, y)| (x + y) * r).collect();
        let p = sz_distribution(&space, &cat);
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[4] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normal_state_expectations() {
        let n_ions = 8;
        let space = ProductSpace::new(n_ions, 5).unwrap();
        let spin = spin_x_eigenstate(&space.spin, -4.0).unwrap();
        let psi = space
            .product_state(&fock_state(&space.fock, 0).unwrap(), &spin)
            .unwrap();
        let o = expectations(&space, psi.as_slice()).unwrap();
        assert!((o.sx + 4.0).abs() < 1e-12);
        assert!(o.order_z.abs() < 1e-12 && o.corr_sy.abs() < 1e-12);
        assert!(o.n_phonon.abs() < 1e-15);
        assert!((o.parity - 1.0).abs() < 1e-10);
        assert!(o.abs_sz >= o.sz.abs());
    }

    #[test]
    fn coherent_times_polarized_order_parameter() {
        let n_ions = 6;
        let space = ProductSpace::new(n_ions, 40).unwrap();
        let alpha = 1.7;
        let boson = displaced_fock_state(&space.fock, C64::new(alpha, 0.0), 0).unwrap();
        let mut spin = vec![ZERO; 7];
        spin[6] = ONE;
        let psi = space.product_state(&boson, &spin).unwrap();
        let o = expectations(&space, psi.as_slice()).unwrap();
        assert!((o.order_z - alpha * n_ions as f64).abs() < 1e-9);
        assert!((o.n_phonon - alpha * alpha).abs() < 1e-9);
    }

    #[test]
    fn dephasing_factors() {
        let none = DephasingModel::new(0.0).unwrap();
        assert_eq!(none.apply(&[0.0, 1.0], &[2.0, 3.0]), vec![2.0, 3.0]);
        let m = DephasingModel::new(120.0).unwrap();
        assert!((m.factor(2.0) - (-0.12f64).exp()).abs() < 1e-15);
        assert!((m.factor(2.0) - 0.8869).abs() < 1e-4);
        let m = DephasingModel::new(280.0).unwrap();
        assert!((m.factor(2.0) - 0.7558).abs() < 1e-4);
        assert!(DephasingModel::new(-1.0).is_err());
    }

    #[test]
    fn inference_of_constant_series_vanishes() {
        let t: Vec<f64> = (0..10).map(|k| 0.1 * k as f64).collect();
        let c = infer_spin_phonon(&t, &[-3.0; 10], 0.0, 9, 2.0).unwrap();
        assert!(c.iter().all(|x| x.abs() < 1e-15));
        assert!(infer_spin_phonon(&t[..1], &[1.0], 0.0, 9, 2.0).is_err());
    }

    #[test]
    fn inference_error_is_first_order() {
        // S_x = s e^{-Γ t}: exact correlator vanishes, the residual is the
        // one-sided difference error, bounded by (Γ²Δt/2) s e^{-Γ t_{k-1}}.
        let gamma_per_s = 500.0;
        let rate = gamma_per_s * 1e-3;
        let (n_ions, g0, s) = (16, 4.0, -8.0);
        let pref = (n_ions as f64).sqrt() / g0;
        let mut last_err = f64::INFINITY;
        for samples in [50, 500, 5000] {
            let dt = 4.0 / samples as f64;
            let t: Vec<f64> = (0..=samples).map(|k| k as f64 * dt).collect();
            let sx: Vec<f64> = t.iter().map(|&t| s * (-rate * t).exp()).collect();
            let c = infer_spin_phonon(&t, &sx, gamma_per_s, n_ions, g0).unwrap();
            let err = c.iter().map(|x| x.abs()).fold(0.0, f64::max);
            let bound = pref * s.abs() * rate * rate * dt / 2.0 * (rate * dt).exp();
            assert!(err <= bound * (1.0 + 1e-9), "err {err} bound {bound}");
            assert!(err < last_err / 9.0);
            last_err = err;
        }
    }
}
