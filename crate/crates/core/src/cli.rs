//! Command line front end.
//!
//! Every subcommand reads one TOML file. Keys carry their units in the
//! name (`g0_khz`, `tau_ms`, `gamma_el_per_s`); unknown keys are rejected.
//! Frequencies are ordinary frequencies and are converted to rad/ms once, on
//! load. Outputs are a CSV table (where the command produces one) plus a
//! JSON summary that echoes the configuration and carries SHA-256 hashes of
//! the configuration and of the emitted content. Identical configurations
//! produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::disentangle::{run_end_to_end, DisentangleReport};
use crate::error::{Error, Result};
use crate::lindblad_oracle::{
    closed_system_check, evolve_lindblad, fit_decay_rate, initial_state, oracle_n_max, uniform_times,
    validate_inference, ClosedSystemCheck, FullSpace, InferenceOptions, InferenceReport, LindbladOptions,
};
use crate::model::{
    critical_field, DickeConfig, Numerics, RampProfile, TRAP_B0_KHZ, TRAP_DELTA_KHZ, TRAP_G0_KHZ, TRAP_GAMMA_EL,
    TRAP_NBAR, TRAP_TAU_EXP_MS,
};
use crate::observables::{infer_spin_phonon, peak_to_trough, DephasingModel};
use crate::propagate::{run_lipkin_quench, run_quench, sweep_nbar, RunMeta, TrajectoryRecord};
use crate::spectrum::{scan_gap_vs_detuning, scan_gap_vs_n_and_b, summarize_gap_scan, GapScanSummary};
use crate::units::{angular_to_khz, khz_to_angular, per_s_to_per_ms};

#[derive(Debug, Parser)]
#[command(
    name = "dicke",
    version,
    about = "Quench, spectrum and disentangling simulator for the Dicke model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Thermal-ensemble quench along the configured ramp.
    Quench(RunArgs),
    /// Same ramp for the spin-only Lipkin model.
    Lipkin(RunArgs),
    /// Same-parity gap and order parameter versus N and B.
    Spectrum(RunArgs),
    /// Gap at the critical field versus detuning.
    ScanDetuning(RunArgs),
    /// Ramp followed by both disentangling protocols.
    Disentangle(RunArgs),
    /// Master-equation oracle checks.
    Validate(RunArgs),
    /// Quench repeated for several thermal occupations.
    SweepNbar(RunArgs),
    /// Print the default configuration file.
    DefaultConfig,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML configuration file.
    pub config: PathBuf,
    /// Overrides `[output] dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub n_ions: usize,
    pub g0_khz: f64,
    pub delta_khz: f64,
    pub gamma_el_per_s: f64,
    pub nbar: f64,
    pub bias_khz: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            n_ions: 68,
            g0_khz: TRAP_G0_KHZ,
            delta_khz: TRAP_DELTA_KHZ,
            gamma_el_per_s: TRAP_GAMMA_EL,
            nbar: TRAP_NBAR,
            bias_khz: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RampKind {
    Exp,
    Lin,
    Constant,
}

/// `exp` needs `b0_khz` and `tau_ms`, `lin` needs `b0_khz` and
/// `tau_ramp_ms`, `constant` needs `b_khz`. The default exponential ramp applies only when
/// the whole section is absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampSection {
    pub kind: RampKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0_khz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_ramp_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_khz: Option<f64>,
}

impl Default for RampSection {
    fn default() -> Self {
        Self {
            kind: RampKind::Exp,
            b0_khz: Some(TRAP_B0_KHZ),
            tau_ms: Some(TRAP_TAU_EXP_MS),
            tau_ramp_ms: None,
            b_khz: None,
        }
    }
}

impl RampSection {
    fn profile(&self) -> Result<RampProfile> {
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| Error::Config(format!("ramp kind {:?} needs `{key}`", self.kind)))
        };
        let forbid = |v: Option<f64>, key: &str| match v {
            Some(_) => Err(Error::Config(format!(
                "`{key}` does not apply to ramp kind {:?}",
                self.kind
            ))),
            None => Ok(()),
        };
        Ok(match self.kind {
            RampKind::Exp => {
                forbid(self.tau_ramp_ms, "tau_ramp_ms")?;
                forbid(self.b_khz, "b_khz")?;
                RampProfile::Exponential {
                    b0: khz_to_angular(need(self.b0_khz, "b0_khz")?),
                    tau: need(self.tau_ms, "tau_ms")?,
                }
            }
            RampKind::Lin => {
                forbid(self.tau_ms, "tau_ms")?;
                forbid(self.b_khz, "b_khz")?;
                RampProfile::Linear {
                    b0: khz_to_angular(need(self.b0_khz, "b0_khz")?),
                    tau_ramp: need(self.tau_ramp_ms, "tau_ramp_ms")?,
                }
            }
            RampKind::Constant => {
                forbid(self.b0_khz, "b0_khz")?;
                forbid(self.tau_ms, "tau_ms")?;
                forbid(self.tau_ramp_ms, "tau_ramp_ms")?;
                RampProfile::Constant {
                    b: khz_to_angular(need(self.b_khz, "b_khz")?),
                }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    pub eta: f64,
    pub dt_max_ms: f64,
    pub t_end_ms: f64,
    pub samples: usize,
    pub krylov_tol: f64,
    pub leakage_tol: f64,
}

impl Default for NumericsSection {
    fn default() -> Self {
        let n = Numerics::default();
        Self {
            n_max: n.n_max,
            eta: n.eta,
            dt_max_ms: n.dt_max,
            t_end_ms: n.t_end,
            samples: n.samples,
            krylov_tol: n.krylov_tol,
            leakage_tol: n.leakage_tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// File stem; defaults to the subcommand name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("."),
            prefix: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub n_list: Vec<usize>,
    pub b_max_over_bc: f64,
    pub points: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            n_list: vec![2, 3, 5, 10, 20, 40],
            b_max_over_bc: 4.0,
            points: 81,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanDetuningSection {
    pub n_ions: usize,
    /// Critical field held fixed along the scan; defaults to the value set
    /// by `[system]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bc_khz: Option<f64>,
    /// `|δ| / B_c` values.
    pub delta_over_bc: Vec<f64>,
}

impl Default for ScanDetuningSection {
    fn default() -> Self {
        Self {
            n_ions: 40,
            bc_khz: None,
            delta_over_bc: vec![0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 10.0, 15.0, 20.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub inference_n_ions: usize,
    pub production_samples: usize,
    pub fine_samples: usize,
    pub dense_samples: usize,
    /// Scales Γ_el inside the reconstruction only (negative control).
    pub corrupt_gamma_factor: f64,
    pub decay_n_ions: usize,
    pub decay_window_ms: f64,
    pub decay_samples: usize,
    pub strong_field_over_bc: f64,
    pub equivalence_window_ms: f64,
    /// Fock truncation for every oracle run; derived when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            inference_n_ions: 3,
            production_samples: 100,
            fine_samples: 1000,
            dense_samples: 4001,
            corrupt_gamma_factor: 1.0,
            decay_n_ions: 2,
            decay_window_ms: 5.0,
            decay_samples: 101,
            strong_field_over_bc: 10.0,
            equivalence_window_ms: 1.0,
            n_max: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepNbarSection {
    pub nbar_list: Vec<f64>,
    /// Peak-to-trough amplitude is measured over `t < window_ms`.
    pub window_ms: f64,
}

impl Default for SweepNbarSection {
    fn default() -> Self {
        Self {
            nbar_list: vec![0.0, 3.0, 6.0, 9.0],
            window_ms: 1.0,
        }
    }
}

/// Contents of one configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub ramp: RampSection,
    pub numerics: NumericsSection,
    pub output: OutputSection,
    pub spectrum: SpectrumSection,
    pub scan_detuning: ScanDetuningSection,
    pub validate: ValidateSection,
    pub sweep_nbar: SweepNbarSection,
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.dicke()?;
        let s = &self.spectrum;
        if s.n_list.is_empty() || s.n_list.contains(&0) {
            return Err(Error::Config("spectrum.n_list needs positive ion numbers".into()));
        }
        if s.points < 3 || !(s.b_max_over_bc > 0.0) {
            return Err(Error::Config("spectrum needs points >= 3 and b_max_over_bc > 0".into()));
        }
        let d = &self.scan_detuning;
        if d.n_ions == 0 || d.delta_over_bc.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Config(
                "scan_detuning needs n_ions >= 1 and positive delta_over_bc".into(),
            ));
        }
        if d.bc_khz.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::Config("scan_detuning.bc_khz must be positive".into()));
        }
        let v = &self.validate;
        if v.production_samples < 2 || v.fine_samples < 2 || v.decay_samples < 2 {
            return Err(Error::Config("validate sample counts must be at least 2".into()));
        }
        if !(v.decay_window_ms > 0.0 && v.equivalence_window_ms > 0.0 && v.strong_field_over_bc > 0.0) {
            return Err(Error::Config(
                "validate windows and field ratio must be positive".into(),
            ));
        }
        if !v.corrupt_gamma_factor.is_finite() {
            return Err(Error::Config("validate.corrupt_gamma_factor must be finite".into()));
        }
        if self.sweep_nbar.nbar_list.iter().any(|&n| !(n >= 0.0)) || !(self.sweep_nbar.window_ms > 0.0) {
            return Err(Error::Config("sweep_nbar needs nbar >= 0 and window_ms > 0".into()));
        }
        Ok(())
    }

    /// Physical parameters in internal units.
    pub fn dicke(&self) -> Result<DickeConfig> {
        let s = &self.system;
        let n = &self.numerics;
        let cfg = DickeConfig {
            n_ions: s.n_ions,
            g0: khz_to_angular(s.g0_khz),
            delta: khz_to_angular(s.delta_khz),
            gamma_el: s.gamma_el_per_s,
            nbar: s.nbar,
            bias: khz_to_angular(s.bias_khz),
            ramp: self.ramp.profile()?,
            numerics: Numerics {
                n_max: n.n_max,
                eta: n.eta,
                dt_max: n.dt_max_ms,
                t_end: n.t_end_ms,
                samples: n.samples,
                krylov_tol: n.krylov_tol,
                leakage_tol: n.leakage_tol,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("configuration serializes")
                .as_bytes(),
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Twelve significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

/// Written next to every table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary<T> {
    pub command: String,
    pub result: T,
    pub config: RunConfig,
    pub config_hash: String,
    /// SHA-256 of the CSV file, or of `result` when there is no table.
    pub content_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalObservables {
    pub t_ms: f64,
    pub b_khz: f64,
    pub sx: f64,
    pub sx_dephased: f64,
    pub sy: f64,
    pub abs_sz_over_n: f64,
    pub n_phonon: f64,
    pub orderparam_z: f64,
    pub corr_sy: f64,
    pub parity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuenchSummary {
    pub b_c_khz: f64,
    /// First time with `B(t) <= B_c`.
    pub t_crit_ms: Option<f64>,
    #[serde(rename = "final")]
    pub final_observables: FinalObservables,
    pub meta: RunMeta,
}

/// Quench table: fixed leading columns, `P(M)` for every `M`, then the
/// observables.
pub fn trajectory_csv(record: &TrajectoryRecord, cfg: &DickeConfig) -> Result<String> {
    let n = cfg.n_ions;
    let sx = record.series(|o| o.sx);
    let dephased = DephasingModel::new(cfg.gamma_el)?.apply(&record.times, &sx);
    let inferred = if cfg.g0 > 0.0 {
        infer_spin_phonon(&record.times, &dephased, cfg.gamma_el, n, cfg.g0)?
    } else {
        vec![f64::NAN; record.times.len()]
    };
    let mut out = String::from("t_ms,B_kHz");
    for k in 0..=n {
        let m = k as f64 - 0.5 * n as f64;
        write!(out, ",P(M={m})").expect("string write");
    }
    out.push_str(",Sx,Sx_dephased,Sy,abs_Sz_over_N,n_phonon,orderparam_z,corr_sy,corr_sy_inferred,parity\n");
    for (k, o) in record.samples.iter().enumerate() {
        let mut row = vec![fmt_num(record.times[k]), fmt_num(angular_to_khz(record.fields[k]))];
        row.extend(o.p_mz.iter().map(|&p| fmt_num(p)));
        row.extend(
            [
                o.sx,
                dephased[k],
                o.sy,
                o.abs_sz / n as f64,
                o.n_phonon,
                o.order_z,
                o.corr_sy,
                inferred[k],
                o.parity,
            ]
            .map(fmt_num),
        );
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn quench_summary(record: &TrajectoryRecord, cfg: &DickeConfig) -> Result<QuenchSummary> {
    let b_c = critical_field(cfg)?;
    let k = record.samples.len() - 1;
    let o = &record.samples[k];
    let t = record.times[k];
    Ok(QuenchSummary {
        b_c_khz: angular_to_khz(b_c),
        t_crit_ms: cfg.ramp.crossing_time(b_c),
        final_observables: FinalObservables {
            t_ms: t,
            b_khz: angular_to_khz(record.fields[k]),
            sx: o.sx,
            sx_dephased: o.sx * DephasingModel::new(cfg.gamma_el)?.factor(t),
            sy: o.sy,
            abs_sz_over_n: o.abs_sz / cfg.n_ions as f64,
            n_phonon: o.n_phonon,
            orderparam_z: o.order_z,
            corr_sy: o.corr_sy,
            parity: o.parity,
        },
        meta: record.meta.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub b_c_khz: f64,
    pub rows: Vec<GapScanSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetuningSummary {
    pub n_ions: usize,
    pub b_c_khz: f64,
    /// `Δ(B_c)/B_c` in scan order.
    pub gap_over_bc: Vec<f64>,
    pub non_decreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbarRow {
    pub nbar: f64,
    /// Peak-to-trough `⟨|S_z|⟩/N` over the configured window.
    pub amplitude_over_n: f64,
    pub final_abs_sz_over_n: f64,
    pub members: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckEntry {
    fn below(name: &str, measured: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            threshold,
            pass: measured < threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckEntry>,
    pub all_pass: bool,
    pub inference: InferenceReport,
    pub closed_system: ClosedSystemCheck,
    /// Fitted `⟨S_x⟩` decay rates in 1/ms.
    pub decay_rate_decoupled: f64,
    pub decay_rate_strong_field: f64,
}

/// Runs the oracle suite described by `[validate]`.
pub fn validation_report(run: &RunConfig) -> Result<ValidationReport> {
    let v = &run.validate;
    let base = run.dicke()?;
    let with_n = |n: usize| {
        let mut c = base.clone();
        c.n_ions = n;
        c.bias = 0.0;
        c.numerics.n_max = v.n_max;
        c
    };
    let opts = LindbladOptions::default();
    let gamma = per_s_to_per_ms(base.gamma_el);
    let mut checks = Vec::new();

    let inf_cfg = with_n(v.inference_n_ions);
    let inference = validate_inference(
        &inf_cfg,
        &InferenceOptions {
            dense_samples: v.dense_samples,
            production_samples: v.production_samples,
            fine_samples: v.fine_samples,
            gamma_factor: v.corrupt_gamma_factor,
            lindblad: opts,
        },
    )?;
    let n = v.inference_n_ions as f64;
    checks.push(CheckEntry::below(
        "identity_residual_generator",
        inference.generator_residual,
        1e-5 * n,
    ));
    checks.push(CheckEntry::below(
        "identity_residual_dense_sampling",
        inference.dense_residual,
        1e-5 * n,
    ));
    checks.push(CheckEntry::below(
        "inference_error_production",
        inference.production_error,
        0.05,
    ));
    checks.push(CheckEntry::below("inference_error_fine", inference.fine_error, 0.005));

    let decay = |g0: f64, b: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut c = with_n(v.decay_n_ions);
        c.g0 = g0;
        c.nbar = 0.0;
        c.ramp = RampProfile::Constant { b };
        let space = FullSpace::new(c.n_ions, oracle_n_max(&c)?)?;
        let rho0 = initial_state(&space, 0.0)?;
        let times = uniform_times(v.decay_window_ms, v.decay_samples);
        let (_, series) = evolve_lindblad(&space, &c, &rho0, &times, &opts)?;
        Ok((series.times, series.sx))
    };
    let half = 0.5 * v.decay_n_ions as f64;
    let (times, sx) = decay(0.0, 0.0)?;
    let analytic = times
        .iter()
        .zip(&sx)
        .map(|(t, s)| (s + half * (-gamma * t).exp()).abs())
        .fold(0.0, f64::max);
    checks.push(CheckEntry::below("pure_dephasing_analytic", analytic, 1e-5));
    let decay_rate_decoupled = fit_decay_rate(&times, &sx)?;
    let rel = |rate: f64, target: f64| {
        if target > 0.0 {
            (rate / target - 1.0).abs()
        } else {
            rate.abs()
        }
    };
    checks.push(CheckEntry::below(
        "decay_rate_decoupled_vs_gamma_el",
        rel(decay_rate_decoupled, gamma),
        0.01,
    ));
    let b_strong = v.strong_field_over_bc * critical_field(&base)?;
    let (times, sx) = decay(base.g0, b_strong)?;
    let decay_rate_strong_field = fit_decay_rate(&times, &sx)?;
    checks.push(CheckEntry::below(
        "decay_rate_strong_field_vs_half_gamma_el",
        rel(decay_rate_strong_field, 0.5 * gamma),
        0.2,
    ));

    let eq_cfg = with_n(v.decay_n_ions);
    let closed_system = closed_system_check(&eq_cfg, critical_field(&base)?, v.equivalence_window_ms, &opts)?;
    checks.push(CheckEntry::below(
        "closed_system_trace_distance",
        closed_system.trace_distance,
        1e-6,
    ));
    checks.push(CheckEntry::below(
        "closed_system_total_spin_drift",
        closed_system.s_squared_drift,
        1e-8,
    ));

    Ok(ValidationReport {
        all_pass: checks.iter().all(|c| c.pass),
        checks,
        inference,
        closed_system,
        decay_rate_decoupled,
        decay_rate_strong_field,
    })
}

fn write_outputs<T: Serialize>(
    run: &RunConfig,
    out_dir: &Path,
    command: &str,
    csv: Option<String>,
    result: T,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let stem = run.output.prefix.clone().unwrap_or_else(|| command.to_string());
    let mut written = Vec::new();
    let content_hash = match &csv {
        Some(text) => {
            let path = out_dir.join(format!("{stem}.csv"));
            fs::write(&path, text)?;
            written.push(path);
            sha256_hex(text.as_bytes())
        }
        None => sha256_hex(serde_json::to_string(&result).expect("result serializes").as_bytes()),
    };
    let summary = Summary {
        command: command.to_string(),
        result,
        config: run.clone(),
        config_hash: run.hash(),
        content_hash,
    };
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    let path = out_dir.join(format!("{stem}.json"));
    fs::write(&path, json)?;
    written.push(path);
    Ok(written)
}

/// Runs one subcommand and returns the files it wrote.
pub fn execute(command: &Command, run: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let cfg = run.dicke()?;
    match command {
        Command::Quench(_) => {
            let record = run_quench(&cfg)?;
            let csv = trajectory_csv(&record, &cfg)?;
            write_outputs(run, out_dir, "quench", Some(csv), quench_summary(&record, &cfg)?)
        }
        Command::Lipkin(_) => {
            let record = run_lipkin_quench(&cfg)?;
            let csv = trajectory_csv(&record, &cfg)?;
            write_outputs(run, out_dir, "lipkin", Some(csv), quench_summary(&record, &cfg)?)
        }
        Command::Spectrum(_) => {
            let s = &run.spectrum;
            let b_c = critical_field(&cfg)?;
            let grid: Vec<f64> = (0..s.points)
                .map(|i| s.b_max_over_bc * b_c * i as f64 / (s.points - 1) as f64)
                .collect();
            let points = scan_gap_vs_n_and_b(&cfg, &s.n_list, &grid)?;
            let mut csv = String::from("N,B_kHz,gap_kHz,orderparam\n");
            for p in &points {
                writeln!(
                    csv,
                    "{},{},{},{}",
                    p.n_ions,
                    fmt_num(angular_to_khz(p.b)),
                    fmt_num(angular_to_khz(p.gap)),
                    fmt_num(p.order_param)
                )
                .expect("string write");
            }
            let rows = points
                .chunks(grid.len())
                .map(|row| summarize_gap_scan(row, b_c))
                .collect::<Result<Vec<_>>>()?;
            let summary = SpectrumSummary {
                b_c_khz: angular_to_khz(b_c),
                rows,
            };
            write_outputs(run, out_dir, "spectrum", Some(csv), summary)
        }
        Command::ScanDetuning(_) => {
            let d = &run.scan_detuning;
            let b_c = match d.bc_khz {
                Some(f) => khz_to_angular(f),
                None => critical_field(&cfg)?,
            };
            let deltas: Vec<f64> = d.delta_over_bc.iter().map(|r| -r * b_c).collect();
            let points = scan_gap_vs_detuning(&cfg, b_c, &deltas, d.n_ions)?;
            let mut csv = String::from("delta_kHz,gap_at_Bc_kHz\n");
            for p in &points {
                writeln!(
                    csv,
                    "{},{}",
                    fmt_num(angular_to_khz(p.delta)),
                    fmt_num(angular_to_khz(p.gap))
                )
                .expect("string write");
            }
            let gap_over_bc: Vec<f64> = points.iter().map(|p| p.gap / b_c).collect();
            let summary = DetuningSummary {
                n_ions: d.n_ions,
                b_c_khz: angular_to_khz(b_c),
                non_decreasing: gap_over_bc.windows(2).all(|w| w[1] >= w[0] * 0.99),
                gap_over_bc,
            };
            write_outputs(run, out_dir, "scan-detuning", Some(csv), summary)
        }
        Command::Disentangle(_) => {
            let report: DisentangleReport = run_end_to_end(&cfg)?;
            write_outputs(run, out_dir, "disentangle", None, report)
        }
        Command::Validate(_) => {
            let report = validation_report(run)?;
            write_outputs(run, out_dir, "validate", None, report)
        }
        Command::SweepNbar(_) => {
            let s = &run.sweep_nbar;
            let records = sweep_nbar(&cfg, &s.nbar_list)?;
            let n = cfg.n_ions as f64;
            let mut csv = String::from("t_ms,B_kHz");
            for nbar in &s.nbar_list {
                write!(csv, ",abs_Sz_over_N(nbar={nbar})").expect("string write");
            }
            csv.push('\n');
            let times = &records[0].times;
            for (k, &t) in times.iter().enumerate() {
                let mut row = vec![fmt_num(t), fmt_num(angular_to_khz(records[0].fields[k]))];
                row.extend(records.iter().map(|r| fmt_num(r.samples[k].abs_sz / n)));
                csv.push_str(&row.join(","));
                csv.push('\n');
            }
            let rows: Vec<NbarRow> = records
                .iter()
                .zip(&s.nbar_list)
                .map(|(r, &nbar)| {
                    let abs = r.series(|o| o.abs_sz / n);
                    NbarRow {
                        nbar,
                        amplitude_over_n: peak_to_trough(&r.times, &abs, s.window_ms),
                        final_abs_sz_over_n: *abs.last().expect("samples"),
                        members: r.meta.members,
                    }
                })
                .collect();
            write_outputs(run, out_dir, "sweep-nbar", Some(csv), rows)
        }
        Command::DefaultConfig => Err(Error::Config("default-config takes no configuration".into())),
    }
}

/// Entry point behind `main`; prints the written paths.
pub fn run(cli: Cli) -> Result<()> {
    let args = match &cli.command {
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml());
            return Ok(());
        }
        Command::Quench(a)
        | Command::Lipkin(a)
        | Command::Spectrum(a)
        | Command::ScanDetuning(a)
        | Command::Disentangle(a)
        | Command::Validate(a)
        | Command::SweepNbar(a) => a,
    };
    let run = RunConfig::load(&args.config)?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| run.output.dir.clone());
    for path in execute(&cli.command, &run, &out_dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[system]\ng0 = 1.0\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 2);
        assert!(RunConfig::from_toml("[colour]\nx = 1\n").is_err());
    }

    #[test]
    fn ramp_keys_must_match_kind() {
        assert!(RunConfig::from_toml("[ramp]\nkind = \"lin\"\nb0_khz = 7.1\ntau_ms = 0.6\n").is_err());
        let lin = RunConfig::from_toml("[ramp]\nkind = \"lin\"\nb0_khz = 7.1\ntau_ramp_ms = 2.0\n").unwrap();
        assert!(matches!(lin.dicke().unwrap().ramp, RampProfile::Linear { .. }));
    }

    #[test]
    fn physical_validation_applies_on_load() {
        assert!(RunConfig::from_toml("[system]\ndelta_khz = 1.0\n").is_err());
        assert!(RunConfig::from_toml("[system]\nn_ions = 0\n").is_err());
    }

    #[test]
    fn units_convert_once() {
        let cfg = RunConfig::default().dicke().unwrap();
        assert!((cfg.g0 - 2.0 * std::f64::consts::PI * 1.32).abs() < 1e-12);
        assert_eq!(cfg.gamma_el, 120.0);
    }

    #[test]
    fn number_format_has_twelve_digits() {
        assert_eq!(fmt_num(1.0), "1.00000000000e0");
        assert_eq!(fmt_num(-0.000123456789012345), "-1.23456789012e-4");
    }
}
