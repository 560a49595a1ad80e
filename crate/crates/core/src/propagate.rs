//! Time evolution through transverse-field ramps.
//!
//! The field is held piecewise constant at its interval midpoint. Steps are
//! bounded by `dt_max` and by `|B(t + dt) - B(t)| <= η B_c`; every sample time
//! is hit exactly. Thermal initial states are handled by evolving each Fock
//! component `|n⟩ ⊗ |-N/2⟩_x` separately and averaging the observables with
//! Bose-Einstein weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expm::{expm_multiply, KrylovOptions, KrylovStats};
use crate::hilbert::{fock_state, spin_x_eigenstate, ProductSpace, SpinSector};
use crate::model::{
    critical_field, default_n_max, DickeConfig, DickeHamiltonian, Driven, LipkinHamiltonian, RampProfile,
};
use crate::observables::{ObservableSet, Observables, SpinObservableSet};
use crate::sparse::{CsrMatrix, C64};

/// Step-size policy for [`evolve_ramp`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    pub eta: f64,
    /// Field scale for the `eta` bound: B_c, or |B(0)| when the coupling vanishes.
    pub b_scale: f64,
    pub dt_max: f64,
    pub krylov: KrylovOptions,
}

impl StepControl {
    pub fn from_config(cfg: &DickeConfig) -> Result<Self> {
        Ok(Self {
            eta: cfg.numerics.eta,
            b_scale: {
                let b_c = critical_field(cfg)?;
                if b_c > 0.0 {
                    b_c
                } else {
                    cfg.ramp.field_at(0.0).abs()
                }
            },
            dt_max: cfg.numerics.dt_max,
            krylov: KrylovOptions {
                tol: cfg.numerics.krylov_tol,
                ..KrylovOptions::default()
            },
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub steps: usize,
    pub krylov_vectors: usize,
    pub max_krylov_dim: usize,
    /// Steps that had to be subdivided because the Krylov basis ran out.
    pub splits: usize,
}

impl StepStats {
    fn record(&mut self, k: KrylovStats) {
        self.krylov_vectors += k.dim;
        self.max_krylov_dim = self.max_krylov_dim.max(k.dim);
    }

    fn merge(&mut self, other: &StepStats) {
        self.steps += other.steps;
        self.krylov_vectors += other.krylov_vectors;
        self.max_krylov_dim = self.max_krylov_dim.max(other.max_krylov_dim);
        self.splits += other.splits;
    }
}

/// One propagator step `state ← exp(-i H dt) state`.
pub fn evolve_step(state: &[C64], h: &CsrMatrix, dt: f64, opts: &KrylovOptions) -> Result<Vec<C64>> {
    if dt < 0.0 {
        return Err(invalid(format!("time step must be non-negative, got {dt}")));
    }
    Ok(expm_multiply(h, state, dt, opts)?.0)
}

fn advance(
    state: &[C64],
    h: &CsrMatrix,
    dt: f64,
    opts: &KrylovOptions,
    stats: &mut StepStats,
    depth: u32,
) -> Result<Vec<C64>> {
    match expm_multiply(h, state, dt, opts) {
        Ok((next, k)) => {
            stats.record(k);
            Ok(next)
        }
        Err(Error::KrylovNonConvergence { .. }) if depth < 12 => {
            stats.splits += 1;
            let half = advance(state, h, dt / 2.0, opts, stats, depth + 1)?;
            advance(&half, h, dt / 2.0, opts, stats, depth + 1)
        }
        Err(e) => Err(e),
    }
}

/// Evolves `state` from `t0` to `t1` under `ham` with the field following
/// `ramp`. `on_sample(k, t, ψ)` runs at every `sample_times[k]` inside
/// `[t0, t1]`; an error from it aborts the evolution.
#[allow(clippy::too_many_arguments)]
pub fn evolve_ramp<H, F>(
    state: &mut Vec<C64>,
    ham: &H,
    ramp: &RampProfile,
    t0: f64,
    t1: f64,
    sample_times: &[f64],
    ctl: &StepControl,
    mut on_sample: F,
) -> Result<StepStats>
where
    H: Driven + ?Sized,
    F: FnMut(usize, f64, &[C64]) -> Result<()>,
{
    if !(t1 > t0) {
        return Err(invalid(format!("evolve_ramp needs t1 > t0, got [{t0}, {t1}]")));
    }
    if state.len() != ham.dim() {
        return Err(Error::DimensionMismatch {
            expected: ham.dim(),
            found: state.len(),
        });
    }
    let db_max = ctl.eta * ctl.b_scale;
    let mut stats = StepStats::default();
    let mut targets: Vec<(Option<usize>, f64)> = sample_times
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= t0 && t <= t1)
        .map(|(k, &t)| (Some(k), t))
        .collect();
    if targets.last().is_none_or(|&(_, t)| t < t1) {
        targets.push((None, t1));
    }

    let mut t = t0;
    let mut cached: Option<(f64, CsrMatrix)> = None;
    for (sample, target) in targets {
        while t < target {
            let mut dt = ctl.dt_max.min(target - t);
            let b_start = ramp.field_at(t);
            while db_max > 0.0 && (ramp.field_at(t + dt) - b_start).abs() > db_max {
                dt *= 0.5;
            }
            let b_mid = ramp.field_at(t + 0.5 * dt);
            let h = match &cached {
                Some((b, h)) if *b == b_mid => h,
                _ => &cached.insert((b_mid, ham.at(b_mid))).1,
            };
            *state = advance(state, h, dt, &ctl.krylov, &mut stats, 0)?;
            stats.steps += 1;
            t = if target - (t + dt) <= 1e-12 * target.abs().max(1.0) {
                target
            } else {
                t + dt
            };
        }
        if let Some(k) = sample {
            on_sample(k, target, state)?;
        }
    }
    Ok(stats)
}

/// Bose-Einstein weights `p_n = n̄ⁿ / (n̄ + 1)^{n+1}` truncated once the
/// retained weight reaches [`ThermalEnsemble::RETAINED`], then renormalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalEnsemble {
    pub nbar: f64,
    /// `(n, weight)` pairs; weights sum to one.
    pub members: Vec<(usize, f64)>,
    pub cutoff: usize,
    /// Raw weight kept before renormalization.
    pub retained: f64,
}

impl ThermalEnsemble {
    pub const RETAINED: f64 = 1.0 - 1e-4;

    pub fn new(nbar: f64) -> Result<Self> {
        if !(nbar >= 0.0) || !nbar.is_finite() {
            return Err(invalid(format!("nbar must be finite and >= 0, got {nbar}")));
        }
        let ratio = nbar / (nbar + 1.0);
        let mut members = Vec::new();
        let mut p = 1.0 / (nbar + 1.0);
        let mut total = 0.0;
        loop {
            members.push((members.len(), p));
            total += p;
            if total >= Self::RETAINED || ratio == 0.0 {
                break;
            }
            p *= ratio;
        }
        for m in &mut members {
            m.1 /= total;
        }
        Ok(Self {
            nbar,
            cutoff: members.len() - 1,
            members,
            retained: total,
        })
    }
}

/// Time series of ensemble-averaged observables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub fields: Vec<f64>,
    pub samples: Vec<Observables>,
    pub meta: RunMeta,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub n_ions: usize,
    /// Fock truncation; zero for spin-only runs.
    pub n_max: usize,
    pub dim: usize,
    pub members: usize,
    pub retained_weight: f64,
    pub stats: StepStats,
    /// Largest top-five-level Fock population seen at any sample.
    pub max_leakage: f64,
}

impl TrajectoryRecord {
    pub fn series(&self, f: impl Fn(&Observables) -> f64) -> Vec<f64> {
        self.samples.iter().map(f).collect()
    }
}

/// Evolution of a single ensemble member.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberRun {
    pub samples: Vec<Observables>,
    pub stats: StepStats,
    pub max_leakage: f64,
    pub final_state: Vec<C64>,
}

/// Everything shared by the members of one thermal quench.
pub struct QuenchSetup {
    pub cfg: DickeConfig,
    pub space: ProductSpace,
    pub ham: DickeHamiltonian,
    pub obs: ObservableSet,
    pub ensemble: ThermalEnsemble,
    pub times: Vec<f64>,
    pub ctl: StepControl,
    spin_initial: Vec<C64>,
}

impl QuenchSetup {
    pub fn new(cfg: &DickeConfig) -> Result<Self> {
        cfg.validate()?;
        let ensemble = ThermalEnsemble::new(cfg.nbar)?;
        let n_max = match cfg.numerics.n_max {
            Some(n) => n,
            None => default_n_max(cfg, ensemble.cutoff)?,
        };
        if n_max < ensemble.cutoff + 5 {
            return Err(invalid(format!(
                "n_max = {n_max} cannot hold thermal members up to n = {}",
                ensemble.cutoff
            )));
        }
        let space = ProductSpace::new(cfg.n_ions, n_max)?;
        let spin_initial = spin_x_eigenstate(&space.spin, -space.spin.spin())?;
        Ok(Self {
            ham: DickeHamiltonian::new(&space, cfg)?,
            obs: ObservableSet::new(&space)?,
            times: cfg.sample_times(),
            ctl: StepControl::from_config(cfg)?,
            cfg: cfg.clone(),
            ensemble,
            space,
            spin_initial,
        })
    }

    /// `|n⟩ ⊗ |-N/2⟩_x`.
    pub fn initial_state(&self, n: usize) -> Result<Vec<C64>> {
        let boson = fock_state(&self.space.fock, n)?;
        Ok(self.space.product_state(&boson, &self.spin_initial)?.amps)
    }

    pub fn run_member(&self, n: usize) -> Result<MemberRun> {
        let mut state = self.initial_state(n)?;
        self.run_from(&mut state)
            .map(|(samples, stats, max_leakage)| MemberRun {
                samples,
                stats,
                max_leakage,
                final_state: state,
            })
    }

    /// Evolves an arbitrary initial state over the configured window.
    pub fn run_from(&self, state: &mut Vec<C64>) -> Result<(Vec<Observables>, StepStats, f64)> {
        let mut samples = Vec::with_capacity(self.times.len());
        let mut max_leakage: f64 = 0.0;
        let tol = self.cfg.numerics.leakage_tol;
        let n_max = self.space.n_max();
        let stats = evolve_ramp(
            state,
            &self.ham,
            &self.cfg.ramp,
            0.0,
            self.cfg.numerics.t_end,
            &self.times,
            &self.ctl,
            |_, _, psi| {
                let leak = self.obs.top_level_population(psi, 5);
                max_leakage = max_leakage.max(leak);
                if leak > tol {
                    return Err(Error::Truncation {
                        leakage: leak,
                        threshold: tol,
                        n_max,
                    });
                }
                samples.push(self.obs.measure(psi));
                Ok(())
            },
        )?;
        Ok((samples, stats, max_leakage))
    }
}

/// Thermal quench: every member evolved independently, observables
/// averaged with the ensemble weights in member order.
pub fn run_quench(cfg: &DickeConfig) -> Result<TrajectoryRecord> {
    let setup = QuenchSetup::new(cfg)?;
    let runs: Vec<Result<MemberRun>> = setup
        .ensemble
        .members
        .par_iter()
        .map(|&(n, _)| setup.run_member(n))
        .collect();
    let mut samples: Vec<Observables> = setup
        .times
        .iter()
        .map(|_| Observables::zeros(setup.space.spin.dim()))
        .collect();
    let mut meta = RunMeta {
        n_ions: cfg.n_ions,
        n_max: setup.space.n_max(),
        dim: setup.space.dim(),
        members: setup.ensemble.members.len(),
        retained_weight: setup.ensemble.retained,
        ..RunMeta::default()
    };
    for (run, &(_, w)) in runs.into_iter().zip(&setup.ensemble.members) {
        let run = run?;
        for (acc, s) in samples.iter_mut().zip(&run.samples) {
            acc.add_weighted(s, w);
        }
        meta.stats.merge(&run.stats);
        meta.max_leakage = meta.max_leakage.max(run.max_leakage);
    }
    Ok(TrajectoryRecord {
        fields: setup.times.iter().map(|&t| cfg.ramp.field_at(t)).collect(),
        times: setup.times,
        samples,
        meta,
    })
}

/// Same protocol for the spin-only Lipkin model, starting from `|-N/2⟩_x`.
pub fn run_lipkin_quench(cfg: &DickeConfig) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let spin = SpinSector::new(cfg.n_ions)?;
    let ham = LipkinHamiltonian::new(&spin, cfg)?;
    let obs = SpinObservableSet::new(&spin);
    let times = cfg.sample_times();
    let ctl = StepControl::from_config(cfg)?;
    let mut state = spin_x_eigenstate(&spin, -spin.spin())?;
    let mut samples = Vec::with_capacity(times.len());
    let stats = evolve_ramp(
        &mut state,
        &ham,
        &cfg.ramp,
        0.0,
        cfg.numerics.t_end,
        &times,
        &ctl,
        |_, _, psi| {
            samples.push(obs.measure(psi));
            Ok(())
        },
    )?;
    Ok(TrajectoryRecord {
        fields: times.iter().map(|&t| cfg.ramp.field_at(t)).collect(),
        times,
        samples,
        meta: RunMeta {
            n_ions: cfg.n_ions,
            n_max: 0,
            dim: spin.dim(),
            members: 1,
            retained_weight: 1.0,
            stats,
            max_leakage: 0.0,
        },
    })
}

/// Runs the same quench for several initial thermal occupations.
pub fn sweep_nbar(cfg: &DickeConfig, nbars: &[f64]) -> Result<Vec<TrajectoryRecord>> {
    nbars
        .iter()
        .map(|&nbar| {
            let mut c = cfg.clone();
            c.nbar = nbar;
            run_quench(&c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_temperature_ensemble() {
        let e = ThermalEnsemble::new(0.0).unwrap();
        assert_eq!(e.members, vec![(0, 1.0)]);
        assert_eq!(e.cutoff, 0);
    }

    #[test]
    fn thermal_weights() {
        let e = ThermalEnsemble::new(6.0).unwrap();
        // (6/7)^(n+1) <= 1e-4 first holds at n = 59
        assert_eq!(e.cutoff, 59);
        assert!(e.retained >= ThermalEnsemble::RETAINED);
        let sum: f64 = e.members.iter().map(|m| m.1).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(e.members.iter().all(|m| m.1 > 0.0));
        let ratio = e.members[1].1 / e.members[0].1;
        assert!((ratio - 6.0 / 7.0).abs() < 1e-12);
        assert!(ThermalEnsemble::new(-1.0).is_err());
    }

    #[test]
    fn negative_step_rejected() {
        let h = CsrMatrix::identity(2);
        let v = vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        assert!(evolve_step(&v, &h, -0.1, &KrylovOptions::default()).is_err());
        assert_eq!(evolve_step(&v, &h, 0.0, &KrylovOptions::default()).unwrap(), v);
    }

    #[test]
    fn ramp_steps_respect_field_bound() {
        struct Recorder;
        impl Driven for Recorder {
            fn dim(&self) -> usize {
                1
            }
            fn at(&self, b: f64) -> CsrMatrix {
                CsrMatrix::from_diagonal(&[b])
            }
        }
        // with H = B on a single level the accumulated phase is ∫B dt
        let ramp = RampProfile::Exponential { b0: 50.0, tau: 0.6 };
        let ctl = StepControl {
            eta: 0.02,
            b_scale: 10.0,
            dt_max: 0.01,
            krylov: KrylovOptions::default(),
        };
        let mut state = vec![C64::new(1.0, 0.0)];
        let times = [0.0, 0.5, 1.0];
        let mut seen = Vec::new();
        let stats = evolve_ramp(&mut state, &Recorder, &ramp, 0.0, 1.0, &times, &ctl, |k, t, _| {
            seen.push((k, t));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(0, 0.0), (1, 0.5), (2, 1.0)]);
        // B drops by 50(1 - e^{-1/0.6}) ≈ 40.6, at most 0.2 per step
        assert!(stats.steps >= 203);
        let phase = 50.0 * 0.6 * (1.0 - (-1.0f64 / 0.6).exp());
        let got = -state[0].arg();
        let wrapped = (got - phase).rem_euclid(std::f64::consts::TAU);
        let err = wrapped.min(std::f64::consts::TAU - wrapped);
        // midpoint rule on an exponential
        assert!(err < 1e-4, "phase error {err}");
    }
}
