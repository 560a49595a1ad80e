//! Mapping the spin-phonon cat onto phonon vacuum times a spin cat.
//!
//! At `B = 0` the Hamiltonian conserves `S_z`, and each `M` block is a
//! displaced oscillator centred on `α_M = -(g0/√N) M / δ`. Two protocols
//! return every `α_M` to the origin:
//!
//! * detuning quench: `δ → 2δ` halves the displacement centre, and half an
//!   oscillation period `π/|2δ|` carries `α_M` to `0`;
//! * resonant drive: `H' = i(g0/√N)(a - a†) S_z` for `1/|δ|` applies the
//!   displacement `-α_M` directly.
//!
//! Tracing out the phonons before and after exposes the spin coherence
//! between `M = ±N/2`, which is suppressed by the phonon overlap
//! `e^{-2|α_0|²}` beforehand.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expm::{propagate_constant, KrylovOptions};
use crate::hilbert::ProductSpace;
use crate::model::{critical_field, DickeConfig, DickeHamiltonian, Driven, RampProfile, TRAP_B0_KHZ, TRAP_TAU_EXP_MS};
use crate::observables::ObservableSet;
use crate::propagate::QuenchSetup;
use crate::sparse::{CsrMatrix, C64};
use crate::units::khz_to_angular;

/// Reduced spin state over `|M⟩_z`, `M` ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinDensityMatrix {
    pub rho: DMatrix<C64>,
}

impl SpinDensityMatrix {
    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn purity(&self) -> f64 {
        (&self.rho * &self.rho).trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.rho.clone()).eigenvalues.min()
    }

    /// Unit trace to 1e-8 and eigenvalues above -1e-10.
    pub fn check(&self) -> Result<()> {
        let tr = self.trace();
        if (tr - 1.0).abs() > 1e-8 {
            return Err(invalid(format!("reduced state has trace {tr}")));
        }
        let min = self.min_eigenvalue();
        if min < -1e-10 {
            return Err(Error::Positivity { min_eigenvalue: min });
        }
        Ok(())
    }

    /// Weighted sum, used for ensemble averages.
    pub fn add_weighted(&mut self, other: &SpinDensityMatrix, w: f64) {
        self.rho += &other.rho * C64::new(w, 0.0);
    }
}

/// `ρ_s[M, M'] = Σ_n ψ(n, M) ψ*(n, M')`.
pub fn partial_trace_boson(space: &ProductSpace, psi: &[C64]) -> SpinDensityMatrix {
    let d = space.spin.dim();
    let mut rho = DMatrix::<C64>::zeros(d, d);
    for block in psi.chunks(d) {
        for i in 0..d {
            if block[i] == C64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..d {
                rho[(i, j)] += block[i] * block[j].conj();
            }
        }
    }
    SpinDensityMatrix { rho }
}

/// Phonon reduced state `ρ_ph[n, n'] = Σ_M ψ(n, M) ψ*(n', M)`.
pub fn partial_trace_spin(space: &ProductSpace, psi: &[C64]) -> DMatrix<C64> {
    let d = space.spin.dim();
    let f = space.fock.dim();
    DMatrix::from_fn(f, f, |n, k| {
        psi[n * d..(n + 1) * d]
            .iter()
            .zip(&psi[k * d..(k + 1) * d])
            .map(|(x, y)| x * y.conj())
            .sum()
    })
}

/// Population of the phonon vacuum.
pub fn vacuum_fidelity(space: &ProductSpace, psi: &[C64]) -> f64 {
    psi[..space.spin.dim()].iter().map(|a| a.norm_sqr()).sum()
}

/// `|⟨N/2| ρ_s |-N/2⟩|`.
pub fn cat_coherence(rho: &SpinDensityMatrix) -> f64 {
    rho.rho[(rho.dim() - 1, 0)].norm()
}

/// Population outside `M = ±N/2`.
pub fn off_cat_population(rho: &SpinDensityMatrix) -> f64 {
    let d = rho.dim();
    (1..d - 1).map(|i| rho.rho[(i, i)].re).sum()
}

/// `½ Σ |λ_i(a - b)|`.
pub fn trace_distance(a: &SpinDensityMatrix, b: &SpinDensityMatrix) -> f64 {
    let diff = &a.rho - &b.rho;
    let herm = (&diff + diff.adjoint()) * C64::new(0.5, 0.0);
    0.5 * SymmetricEigen::new(herm)
        .eigenvalues
        .iter()
        .map(|x| x.abs())
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Detuning,
    Resonant,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Detuning => "detuning",
            Protocol::Resonant => "resonant",
        }
    }
}

/// Protocol Hamiltonian and its duration (ms).
pub fn protocol_hamiltonian(space: &ProductSpace, cfg: &DickeConfig, protocol: Protocol) -> Result<(CsrMatrix, f64)> {
    if cfg.delta == 0.0 {
        return Err(invalid("protocols need a non-zero detuning"));
    }
    match protocol {
        Protocol::Detuning => {
            let mut quenched = cfg.clone();
            quenched.delta = 2.0 * cfg.delta;
            let h = DickeHamiltonian::new(space, &quenched)?.at(0.0);
            Ok((h, std::f64::consts::PI / quenched.delta.abs()))
        }
        Protocol::Resonant => {
            let lambda = cfg.g0 / (cfg.n_ions as f64).sqrt();
            // i(a - a†) is Hermitian
            let quad = space.fock.a.add_scaled(C64::new(-1.0, 0.0), &space.fock.adag)?;
            let h = space.embed_pair(&quad, &space.spin.sz)?.scale(C64::new(0.0, lambda));
            Ok((h, 1.0 / cfg.delta.abs()))
        }
    }
}

fn run_protocol(space: &ProductSpace, cfg: &DickeConfig, psi: &[C64], protocol: Protocol) -> Result<Vec<C64>> {
    let (h, t_d) = protocol_hamiltonian(space, cfg, protocol)?;
    let opts = KrylovOptions {
        tol: cfg.numerics.krylov_tol,
        ..KrylovOptions::default()
    };
    let out = propagate_constant(&h, psi, t_d, cfg.numerics.dt_max, &opts)?;
    let d = space.spin.dim();
    let first = space.fock.dim().saturating_sub(5) * d;
    let leak: f64 = out[first..].iter().map(|a| a.norm_sqr()).sum();
    if leak > cfg.numerics.leakage_tol {
        return Err(Error::Truncation {
            leakage: leak,
            threshold: cfg.numerics.leakage_tol,
            n_max: space.n_max(),
        });
    }
    Ok(out)
}

/// Evolves under `H(B = 0, δ → 2δ)` for `π/|2δ|`.
pub fn run_detuning_quench_protocol(space: &ProductSpace, cfg: &DickeConfig, psi: &[C64]) -> Result<Vec<C64>> {
    run_protocol(space, cfg, psi, Protocol::Detuning)
}

/// Evolves under `i(g0/√N)(a - a†) S_z` for `1/|δ|`.
pub fn run_resonant_protocol(space: &ProductSpace, cfg: &DickeConfig, psi: &[C64]) -> Result<Vec<C64>> {
    run_protocol(space, cfg, psi, Protocol::Resonant)
}

pub fn apply_protocol(space: &ProductSpace, cfg: &DickeConfig, psi: &[C64], protocol: Protocol) -> Result<Vec<C64>> {
    run_protocol(space, cfg, psi, protocol)
}

/// Coherent amplitude `⟨a⟩` conditioned on each `S_z` eigenvalue; `None`
/// where `P(M)` vanishes.
pub fn displacement_per_mz(space: &ProductSpace, psi: &[C64]) -> Vec<Option<C64>> {
    let d = space.spin.dim();
    let nf = space.fock.dim();
    (0..d)
        .map(|m| {
            let p: f64 = (0..nf).map(|n| psi[n * d + m].norm_sqr()).sum();
            if p < 1e-14 {
                return None;
            }
            let a: C64 = (0..nf - 1)
                .map(|n| psi[n * d + m].conj() * psi[(n + 1) * d + m] * ((n + 1) as f64).sqrt())
                .sum();
            Some(a / p)
        })
        .collect()
}

/// `⟨a⟩(t)` for phonon vacuum evolving at `B = 0` with `S_z = M`:
/// `(g0 M / (δ√N)) (e^{iδt} - 1)`.
pub fn heisenberg_displacement(cfg: &DickeConfig, m: f64, t: f64) -> C64 {
    let lambda = cfg.g0 / (cfg.n_ions as f64).sqrt();
    let phase = C64::from_polar(1.0, cfg.delta * t);
    (phase - 1.0) * (lambda * m / cfg.delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub protocol: Protocol,
    pub duration_ms: f64,
    pub vacuum_fidelity: f64,
    pub coherence_after: f64,
    pub parity_after: f64,
    /// Spin population outside `M = ±N/2` after the protocol.
    pub off_cat_population: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentangleReport {
    pub n_ions: usize,
    pub n_max: usize,
    /// Field at the end of the ramp, rad/ms; switched to zero for the protocol.
    pub ramp_end_field: f64,
    pub vacuum_fidelity_before: f64,
    pub coherence_before: f64,
    pub parity_before: f64,
    pub detuning: ProtocolOutcome,
    pub resonant: ProtocolOutcome,
    /// Trace distance between the two post-protocol spin states.
    pub protocol_trace_distance: f64,
}

impl DisentangleReport {
    pub fn outcome(&self, protocol: Protocol) -> &ProtocolOutcome {
        match protocol {
            Protocol::Detuning => &self.detuning,
            Protocol::Resonant => &self.resonant,
        }
    }
}

struct Accumulated {
    rho: SpinDensityMatrix,
    vacuum: f64,
    parity: f64,
}

impl Accumulated {
    fn new(d: usize) -> Self {
        Self {
            rho: SpinDensityMatrix {
                rho: DMatrix::zeros(d, d),
            },
            vacuum: 0.0,
            parity: 0.0,
        }
    }

    fn add(&mut self, space: &ProductSpace, obs: &ObservableSet, psi: &[C64], w: f64) {
        self.rho.add_weighted(&partial_trace_boson(space, psi), w);
        self.vacuum += w * vacuum_fidelity(space, psi);
        self.parity += w * obs.parity().expectation(psi).re;
    }
}

/// Ion-trap couplings at `N` ions with the exponential ramp slowed down by
/// `slowdown` and run until `B = end_field_over_bc · B_c`, at `n̄ = 0`.
pub fn slow_exp_config(n_ions: usize, slowdown: f64, end_field_over_bc: f64) -> Result<DickeConfig> {
    if !(slowdown > 0.0) || !(end_field_over_bc > 0.0) {
        return Err(invalid("slowdown and end field must be positive"));
    }
    let b0 = khz_to_angular(TRAP_B0_KHZ);
    let ramp = RampProfile::Exponential {
        b0,
        tau: slowdown * TRAP_TAU_EXP_MS,
    };
    let mut cfg = DickeConfig::ion_trap_with_ramp(n_ions, ramp);
    cfg.nbar = 0.0;
    let b_end = end_field_over_bc * critical_field(&cfg)?;
    cfg.numerics.t_end = ramp
        .crossing_time(b_end)
        .filter(|&t| t > 0.0)
        .ok_or_else(|| invalid("end field must lie below B0"))?;
    Ok(cfg)
}

/// Ramp from `|n⟩|-N/2⟩_x` (thermally weighted) to `t_end`, switch the
/// field off, then apply both protocols to the same final states.
pub fn run_end_to_end(cfg: &DickeConfig) -> Result<DisentangleReport> {
    let setup = QuenchSetup::new(cfg)?;
    let space = &setup.space;
    let d = space.spin.dim();
    let mut before = Accumulated::new(d);
    let mut after = [Accumulated::new(d), Accumulated::new(d)];
    let protocols = [Protocol::Detuning, Protocol::Resonant];
    for &(n, w) in &setup.ensemble.members {
        let run = setup.run_member(n)?;
        before.add(space, &setup.obs, &run.final_state, w);
        for (acc, &p) in after.iter_mut().zip(&protocols) {
            let out = run_protocol(space, cfg, &run.final_state, p)?;
            acc.add(space, &setup.obs, &out, w);
        }
    }
    before.rho.check()?;
    let outcome = |acc: &Accumulated, p: Protocol| -> Result<ProtocolOutcome> {
        acc.rho.check()?;
        Ok(ProtocolOutcome {
            protocol: p,
            duration_ms: protocol_hamiltonian(space, cfg, p)?.1,
            vacuum_fidelity: acc.vacuum,
            coherence_after: cat_coherence(&acc.rho),
            parity_after: acc.parity,
            off_cat_population: off_cat_population(&acc.rho),
        })
    };
    Ok(DisentangleReport {
        n_ions: cfg.n_ions,
        n_max: space.n_max(),
        ramp_end_field: cfg.ramp.field_at(cfg.numerics.t_end),
        vacuum_fidelity_before: before.vacuum,
        coherence_before: cat_coherence(&before.rho),
        parity_before: before.parity,
        detuning: outcome(&after[0], Protocol::Detuning)?,
        resonant: outcome(&after[1], Protocol::Resonant)?,
        protocol_trace_distance: trace_distance(&after[0].rho, &after[1].rho),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{displaced_fock_state, spin_x_eigenstate};
    use crate::model::{alpha0, RampProfile};

    fn cfg(n: usize) -> DickeConfig {
        let mut c = DickeConfig::ion_trap_with_ramp(n, RampProfile::Constant { b: 0.0 });
        c.nbar = 0.0;
        c
    }

    #[test]
    fn product_state_is_pure() {
        let space = ProductSpace::new(3, 10).unwrap();
        let boson = displaced_fock_state(&space.fock, C64::new(0.7, 0.2), 0).unwrap();
        let spin = spin_x_eigenstate(&space.spin, 0.5).unwrap();
        let psi = space.product_state(&boson, &spin).unwrap().amps;
        let rho = partial_trace_boson(&space, &psi);
        rho.check().unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cat_coherence_cases() {
        let d = 5;
        let mut pure = DMatrix::<C64>::zeros(d, d);
        for (i, j) in [(0, 0), (0, 4), (4, 0), (4, 4)] {
            pure[(i, j)] = C64::new(0.5, 0.0);
        }
        assert!((cat_coherence(&SpinDensityMatrix { rho: pure.clone() }) - 0.5).abs() < 1e-15);
        let mut mixed = pure;
        mixed[(0, 4)] = C64::new(0.0, 0.0);
        mixed[(4, 0)] = C64::new(0.0, 0.0);
        assert_eq!(cat_coherence(&SpinDensityMatrix { rho: mixed }), 0.0);
    }

    #[test]
    fn coherent_overlap_suppresses_coherence() {
        // (|α⟩|N/2⟩ + |-α⟩|-N/2⟩)/√2: coherence is ⟨-α|α⟩/2 = e^{-2|α|²}/2
        let space = ProductSpace::new(2, 40).unwrap();
        let plus = displaced_fock_state(&space.fock, C64::new(1.0, 0.0), 0).unwrap();
        let minus = displaced_fock_state(&space.fock, C64::new(-1.0, 0.0), 0).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut psi = vec![C64::new(0.0, 0.0); space.dim()];
        for n in 0..=40 {
            psi[space.index(n, 2)] += plus[n] * s;
            psi[space.index(n, 0)] += minus[n] * s;
        }
        let rho = partial_trace_boson(&space, &psi);
        assert!((cat_coherence(&rho) - (-2.0f64).exp() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn trace_distance_basics() {
        let a = SpinDensityMatrix {
            rho: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                C64::new(1.0, 0.0),
                C64::new(0.0, 0.0),
            ])),
        };
        let b = SpinDensityMatrix {
            rho: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                C64::new(0.0, 0.0),
                C64::new(1.0, 0.0),
            ])),
        };
        assert!((trace_distance(&a, &b) - 1.0).abs() < 1e-12);
        assert!(trace_distance(&a, &a) < 1e-15);
    }

    #[test]
    fn protocols_return_displacements_to_vacuum() {
        let c = cfg(4);
        let space = ProductSpace::new(4, 30).unwrap();
        let a0 = alpha0(&c).unwrap();
        for protocol in [Protocol::Detuning, Protocol::Resonant] {
            for (m_idx, m) in [(4usize, 2.0f64), (0, -2.0), (3, 1.0)] {
                // B = 0 eigenstate with S_z = M sits at -(g0/√N) M / δ
                let alpha = C64::new(-(c.g0 / 2.0) * m / c.delta, 0.0);
                assert!((alpha.re.abs() - a0.abs() * m.abs() / 2.0).abs() < 1e-12);
                let boson = displaced_fock_state(&space.fock, alpha, 0).unwrap();
                let mut psi = vec![C64::new(0.0, 0.0); space.dim()];
                for n in 0..=30 {
                    psi[space.index(n, m_idx)] = boson[n];
                }
                let out = apply_protocol(&space, &c, &psi, protocol).unwrap();
                assert!(vacuum_fidelity(&space, &out) > 1.0 - 1e-9, "{protocol:?} M={m}");
            }
        }
    }

    #[test]
    fn heisenberg_displacement_matches_propagation() {
        let c = cfg(4);
        let space = ProductSpace::new(4, 30).unwrap();
        let h = DickeHamiltonian::new(&space, &c).unwrap().at(0.0);
        let t = 0.37;
        let mut psi = vec![C64::new(0.0, 0.0); space.dim()];
        let amp = C64::new(1.0 / 5f64.sqrt(), 0.0);
        for m_idx in 0..5 {
            psi[space.index(0, m_idx)] = amp;
        }
        let out = propagate_constant(&h, &psi, t, 0.01, &KrylovOptions::default()).unwrap();
        let fitted = displacement_per_mz(&space, &out);
        for (m_idx, m) in space.spin.m_values().into_iter().enumerate() {
            let want = heisenberg_displacement(&c, m, t);
            assert!((fitted[m_idx].unwrap() - want).norm() < 1e-6, "M={m}");
        }
    }

    #[test]
    fn decoupled_protocols_leave_state_alone() {
        let mut c = cfg(3);
        c.g0 = 0.0;
        let space = ProductSpace::new(3, 12).unwrap();
        let spin = spin_x_eigenstate(&space.spin, -1.5).unwrap();
        let boson = crate::hilbert::fock_state(&space.fock, 0).unwrap();
        let psi = space.product_state(&boson, &spin).unwrap().amps;
        let rho0 = partial_trace_boson(&space, &psi);
        for p in [Protocol::Detuning, Protocol::Resonant] {
            let out = apply_protocol(&space, &c, &psi, p).unwrap();
            let fid = crate::sparse::inner(&psi, &out).norm();
            assert!((fid - 1.0).abs() < 1e-12);
            assert!(trace_distance(&rho0, &partial_trace_boson(&space, &out)) < 1e-12);
        }
    }
}
