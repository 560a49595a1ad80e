//! Dicke and Lipkin Hamiltonians, transverse-field ramps and the parity
//! symmetry.
//!
//! All frequencies are angular (rad/ms), times are in ms. The detuning is
//! kept signed; the physical regime has `delta < 0`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hilbert::{FockSpace, ProductSpace, SpinSector};
use crate::sparse::{CsrMatrix, C64};
use crate::units::khz_to_angular;

/// Transverse field schedule `B(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RampProfile {
    /// `B0 (1 - t/tau_ramp)`, clamped at zero once the ramp is over.
    Linear {
        b0: f64,
        tau_ramp: f64,
    },
    /// `B0 exp(-t/tau)`.
    Exponential {
        b0: f64,
        tau: f64,
    },
    Constant {
        b: f64,
    },
}

impl RampProfile {
    pub fn field_at(&self, t: f64) -> f64 {
        match *self {
            RampProfile::Linear { b0, tau_ramp } => (b0 * (1.0 - t / tau_ramp)).max(0.0),
            RampProfile::Exponential { b0, tau } => b0 * (-t / tau).exp(),
            RampProfile::Constant { b } => b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RampProfile::Linear { b0, tau_ramp } => b0 >= 0.0 && tau_ramp > 0.0,
            RampProfile::Exponential { b0, tau } => b0 >= 0.0 && tau > 0.0,
            RampProfile::Constant { b } => b >= 0.0,
        };
        if ok && self.field_at(0.0).is_finite() {
            Ok(())
        } else {
            Err(invalid(format!(
                "ramp {self:?} needs B >= 0 and positive time constants"
            )))
        }
    }

    /// First time at which the field reaches `b` (zero if it starts below).
    pub fn crossing_time(&self, b: f64) -> Option<f64> {
        match *self {
            RampProfile::Linear { b0, tau_ramp } => {
                if b0 <= b {
                    Some(0.0)
                } else {
                    Some(tau_ramp * (1.0 - b / b0))
                }
            }
            RampProfile::Exponential { b0, tau } => {
                if b0 <= b {
                    Some(0.0)
                } else if b <= 0.0 {
                    None
                } else {
                    Some(tau * (b0 / b).ln())
                }
            }
            RampProfile::Constant { b: c } => (c <= b).then_some(0.0),
        }
    }
}

/// Numerical controls shared by the propagators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Numerics {
    /// Fock truncation; derived from the physical parameters when absent.
    pub n_max: Option<usize>,
    /// Largest change of `B` per step, as a fraction of `B_c`.
    pub eta: f64,
    /// Largest step in ms.
    pub dt_max: f64,
    /// End of the simulated window in ms.
    pub t_end: f64,
    /// Number of uniformly spaced sample times over `[0, t_end]`.
    pub samples: usize,
    pub krylov_tol: f64,
    /// Abort threshold for the population of the top five Fock levels.
    pub leakage_tol: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            n_max: None,
            eta: 0.02,
            dt_max: 0.01,
            t_end: 2.0,
            samples: 100,
            krylov_tol: 1e-10,
            leakage_tol: 1e-6,
        }
    }
}

/// Physical parameters of one simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DickeConfig {
    pub n_ions: usize,
    /// Spin-phonon coupling, rad/ms.
    pub g0: f64,
    /// Signed detuning from the boson mode, rad/ms.
    pub delta: f64,
    /// Single-particle dephasing rate, 1/s.
    pub gamma_el: f64,
    /// Mean initial thermal occupation of the boson mode.
    pub nbar: f64,
    /// Longitudinal bias `ε S_z`, rad/ms.
    pub bias: f64,
    pub ramp: RampProfile,
    pub numerics: Numerics,
}

/// Ion-trap values used throughout: `g0/2π = 1.32 kHz`, `δ/2π = -1 kHz`.
pub const TRAP_G0_KHZ: f64 = 1.32;
pub const TRAP_DELTA_KHZ: f64 = -1.0;
pub const TRAP_B0_KHZ: f64 = 7.1;
pub const TRAP_TAU_EXP_MS: f64 = 0.6;
pub const TRAP_TAU_LIN_MS: f64 = 2.0;
pub const TRAP_GAMMA_EL: f64 = 120.0;
pub const TRAP_NBAR: f64 = 6.0;

impl DickeConfig {
    /// Experimental parameters with an exponential ramp (`N = 68`).
    pub fn ion_trap_exp() -> Self {
        Self::ion_trap_with_ramp(
            68,
            RampProfile::Exponential {
                b0: khz_to_angular(TRAP_B0_KHZ),
                tau: TRAP_TAU_EXP_MS,
            },
        )
    }

    /// Experimental parameters with a linear ramp (`N = 69`).
    pub fn ion_trap_lin() -> Self {
        Self::ion_trap_with_ramp(
            69,
            RampProfile::Linear {
                b0: khz_to_angular(TRAP_B0_KHZ),
                tau_ramp: TRAP_TAU_LIN_MS,
            },
        )
    }

    pub fn ion_trap_with_ramp(n_ions: usize, ramp: RampProfile) -> Self {
        Self {
            n_ions,
            g0: khz_to_angular(TRAP_G0_KHZ),
            delta: khz_to_angular(TRAP_DELTA_KHZ),
            gamma_el: TRAP_GAMMA_EL,
            nbar: TRAP_NBAR,
            bias: 0.0,
            ramp,
            numerics: Numerics::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ions == 0 {
            return Err(invalid("n_ions must be at least 1"));
        }
        // g0 = 0 is the decoupled reference case
        if !(self.g0 >= 0.0) || !self.g0.is_finite() {
            return Err(invalid(format!("g0 must be finite and >= 0, got {}", self.g0)));
        }
        if !(self.delta < 0.0) {
            return Err(invalid(format!("delta must be negative, got {}", self.delta)));
        }
        if !(self.gamma_el >= 0.0) {
            return Err(invalid(format!("gamma_el must be >= 0, got {}", self.gamma_el)));
        }
        if !(self.nbar >= 0.0) {
            return Err(invalid(format!("nbar must be >= 0, got {}", self.nbar)));
        }
        if !self.bias.is_finite() {
            return Err(invalid("bias must be finite"));
        }
        self.ramp.validate()?;
        let n = &self.numerics;
        if !(n.eta > 0.0 && n.dt_max > 0.0 && n.t_end > 0.0 && n.krylov_tol > 0.0 && n.leakage_tol > 0.0) {
            return Err(invalid("numerical controls must be positive"));
        }
        if n.samples < 2 {
            return Err(invalid("need at least two sample times"));
        }
        if n.n_max == Some(0) {
            return Err(invalid("n_max must be at least 1"));
        }
        Ok(())
    }

    /// Uniform sample grid over `[0, t_end]`.
    pub fn sample_times(&self) -> Vec<f64> {
        let n = self.numerics.samples;
        let t_end = self.numerics.t_end;
        (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect()
    }
}

/// `B_c = g0² / |δ|`.
pub fn critical_field(cfg: &DickeConfig) -> Result<f64> {
    if cfg.delta == 0.0 {
        return Err(invalid("critical field undefined at zero detuning"));
    }
    Ok(cfg.g0 * cfg.g0 / cfg.delta.abs())
}

/// Superradiant displacement `α0 = g0 √N / (2δ)`, negative for `δ < 0`.
pub fn alpha0(cfg: &DickeConfig) -> Result<f64> {
    if cfg.delta == 0.0 {
        return Err(invalid("alpha0 undefined at zero detuning"));
    }
    Ok(cfg.g0 * (cfg.n_ions as f64).sqrt() / (2.0 * cfg.delta))
}

/// Lipkin coupling `J = g0² / δ` (signed).
pub fn lipkin_coupling(cfg: &DickeConfig) -> Result<f64> {
    if cfg.delta == 0.0 {
        return Err(invalid("Lipkin coupling undefined at zero detuning"));
    }
    Ok(cfg.g0 * cfg.g0 / cfg.delta)
}

/// A Hamiltonian family `H(B) = H_static + B · H_transverse`.
pub trait Driven: Sync {
    fn dim(&self) -> usize;
    fn at(&self, b: f64) -> CsrMatrix;
}

/// `H = -(g0/√N)(a + a†) S_z + B S_x - δ a†a + ε S_z` on a [`ProductSpace`].
#[derive(Clone, Debug)]
pub struct DickeHamiltonian {
    static_part: CsrMatrix,
    transverse: CsrMatrix,
}

impl DickeHamiltonian {
    pub fn new(space: &ProductSpace, cfg: &DickeConfig) -> Result<Self> {
        check_ions(space.n_ions(), cfg.n_ions)?;
        let lambda = cfg.g0 / (cfg.n_ions as f64).sqrt();
        let coupling = space.embed_pair(&space.fock.quadrature(), &space.spin.sz)?;
        let number = space.embed_boson(&space.fock.number)?;
        let mut static_part = coupling
            .scale(C64::new(-lambda, 0.0))
            .add_scaled(C64::new(-cfg.delta, 0.0), &number)?;
        if cfg.bias != 0.0 {
            static_part = static_part.add_scaled(C64::new(cfg.bias, 0.0), &space.embed_spin(&space.spin.sz)?)?;
        }
        let transverse = space.embed_spin(&space.spin.sx)?;
        Ok(Self {
            static_part,
            transverse,
        })
    }
}

impl Driven for DickeHamiltonian {
    fn dim(&self) -> usize {
        self.static_part.nrows()
    }

    fn at(&self, b: f64) -> CsrMatrix {
        self.static_part
            .add_scaled(C64::new(b, 0.0), &self.transverse)
            .expect("parts share one space")
    }
}

/// Dicke Hamiltonian at a fixed transverse field.
pub fn dicke_hamiltonian(space: &ProductSpace, cfg: &DickeConfig, b: f64) -> Result<CsrMatrix> {
    Ok(DickeHamiltonian::new(space, cfg)?.at(b))
}

/// `H_LM = (J/N) S_z² + B S_x + ε S_z` on the spin sector alone.
#[derive(Clone, Debug)]
pub struct LipkinHamiltonian {
    static_part: CsrMatrix,
    transverse: CsrMatrix,
}

impl LipkinHamiltonian {
    pub fn new(spin: &SpinSector, cfg: &DickeConfig) -> Result<Self> {
        check_ions(spin.n_ions(), cfg.n_ions)?;
        let j = lipkin_coupling(cfg)?;
        let sz2 = spin.sz.matmul(&spin.sz)?;
        let mut static_part = sz2.scale(C64::new(j / cfg.n_ions as f64, 0.0));
        if cfg.bias != 0.0 {
            static_part = static_part.add_scaled(C64::new(cfg.bias, 0.0), &spin.sz)?;
        }
        Ok(Self {
            static_part,
            transverse: spin.sx.clone(),
        })
    }
}

impl Driven for LipkinHamiltonian {
    fn dim(&self) -> usize {
        self.static_part.nrows()
    }

    fn at(&self, b: f64) -> CsrMatrix {
        self.static_part
            .add_scaled(C64::new(b, 0.0), &self.transverse)
            .expect("parts share one space")
    }
}

pub fn lipkin_hamiltonian(spin: &SpinSector, cfg: &DickeConfig, b: f64) -> Result<CsrMatrix> {
    Ok(LipkinHamiltonian::new(spin, cfg)?.at(b))
}

fn check_ions(space_n: usize, cfg_n: usize) -> Result<()> {
    if space_n != cfg_n {
        return Err(crate::Error::DimensionMismatch {
            expected: cfg_n + 1,
            found: space_n + 1,
        });
    }
    Ok(())
}

/// Spin part `exp(iπ(S_x + N/2))` of the parity, built from its diagonal
/// form `(-1)^{M_x + N/2}` in the `S_x` eigenbasis.
pub fn spin_parity(spin: &SpinSector) -> CsrMatrix {
    let v = spin.x_eigenbasis();
    let signs =
        nalgebra::DVector::from_iterator(spin.dim(), (0..spin.dim()).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }));
    let p = &v * nalgebra::DMatrix::from_diagonal(&signs) * v.transpose();
    CsrMatrix::from_dense(&p.map(|x| C64::new(x, 0.0)), 1e-9)
}

/// Boson parity `(-1)^{a†a}`.
pub fn boson_parity(fock: &FockSpace) -> CsrMatrix {
    CsrMatrix::from_diagonal(
        &(0..fock.dim())
            .map(|n| if n % 2 == 0 { 1.0 } else { -1.0 })
            .collect::<Vec<_>>(),
    )
}

/// `Π = exp(iπ(a†a + S_x + N/2))` on the product space.
pub fn parity_operator(space: &ProductSpace) -> CsrMatrix {
    boson_parity(&space.fock).kron(&spin_parity(&space.spin))
}

/// Default truncation `ceil((|α0| + 4)² + n_cut)` for states that start in
/// Fock levels up to `n_cut`.
pub fn default_n_max(cfg: &DickeConfig, n_cut: usize) -> Result<usize> {
    let a = alpha0(cfg)?.abs();
    Ok(((a + 4.0).powi(2) + n_cut as f64).ceil() as usize)
}

/// Zero-temperature energy at `B = 0`: `-N g0² / (4|δ|)`.
pub fn superradiant_ground_energy(cfg: &DickeConfig) -> f64 {
    -(cfg.n_ions as f64) * cfg.g0 * cfg.g0 / (4.0 * cfg.delta.abs())
}
