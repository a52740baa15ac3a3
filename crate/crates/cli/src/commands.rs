use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rampedgate::analytic::{
    bessel_j, displacement_asymptotic, displacement_closed_form, displacement_envelope,
    displacement_numeric, geometric_phase, residual_infidelity, AnalyticParams,
};
use rampedgate::experiments::{
    bell_sequence, calibrate, shot_sample, spin_eigenvalues, sweep_detuning_offset,
    sweep_ramp_duration, BellResult, Calibration, InitialMotionalState, SweepRow,
};
use rampedgate::hamiltonian::{
    gate_hamiltonian_truncated, sdf_spectrum, write_spectrum_csv, ArmTiming, ModeSpec, SdfAxis,
};
use rampedgate::propagator::{spin_branch_displacement, write_trajectory_csv};
use rampedgate::quantum::HilbertSpec;
use rampedgate::ramps::{DetuningRamp, GateParams, PulseSchedule};
use rampedgate::units::rad_per_us_to_hz;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, RunConfig};
use crate::output::{self, Sidecar};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
    /// Files were written but some sweep rows failed.
    Partial {
        failed: usize,
        total: usize,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io(_) => 1,
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Partial { .. } => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "{m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
            Self::Partial { failed, total } => write!(f, "{failed} of {total} sweep rows failed"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

fn numerical(e: rampedgate::Error) -> CliError {
    CliError::Numerical(e.to_string())
}

pub struct Context {
    pub config: RunConfig,
    pub hash: String,
    pub out_dir: PathBuf,
    pub resume: bool,
    started: f64,
    clock: Instant,
}

impl Context {
    pub fn new(config: RunConfig, out_dir: PathBuf, resume: bool) -> Result<Self, CliError> {
        config.validate()?;
        std::fs::create_dir_all(&out_dir)?;
        let hash = config.hash();
        std::fs::write(
            out_dir.join("config.resolved.json"),
            config.to_json() + "\n",
        )?;
        Ok(Self {
            config,
            hash,
            out_dir,
            resume,
            started: output::unix_time(),
            clock: Instant::now(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn sidecar(
        &self,
        command: &str,
        path: &Path,
        counts: BTreeMap<&'static str, usize>,
        rows: BTreeMap<usize, f64>,
    ) -> Result<(), CliError> {
        let meta = Sidecar {
            command,
            config_sha256: &self.hash,
            config: &self.config,
            seed: self.config.seed,
            started_unix_s: self.started,
            finished_unix_s: output::unix_time(),
            wall_time_s: self.clock.elapsed().as_secs_f64(),
            counts,
            row_wall_time_s: rows,
        };
        output::write_json(&output::sidecar_path(path), &meta)?;
        Ok(())
    }

    /// Flat top from the config or from calibration.
    fn flat_top(
        &self,
        params: &GateParams,
        ramp: &DetuningRamp,
    ) -> Result<(f64, Option<Calibration>), CliError> {
        if let Some(t) = self.config.flat_top_s {
            return Ok((rampedgate::units::s_to_us(t), None));
        }
        let cal = calibrate(
            params,
            ramp,
            &self.config.bell_config(),
            &self.config.calibration_options(),
        )
        .map_err(numerical)?;
        log::info!(
            "calibrated flat top {:.4} us (theta {:.8})",
            cal.flat_top,
            cal.theta_total
        );
        Ok((cal.flat_top, Some(cal)))
    }

    fn resolved_schedule(
        &self,
    ) -> Result<(GateParams, DetuningRamp, Option<Calibration>), CliError> {
        let mut params = self.config.gate_params();
        let ramp = self
            .config
            .ramp()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let (flat, cal) = self.flat_top(&params, &ramp)?;
        params.flat_top = flat;
        Ok((params, ramp, cal))
    }
}

fn schedule_hash(params: &GateParams, ramp: &DetuningRamp) -> String {
    let text = serde_json::to_string(&(params, ramp)).expect("schedule serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn spectrum(ctx: &Context) -> Result<(), CliError> {
    let p = ctx.config.gate_params();
    let lines =
        sdf_spectrum(p.mod_index, p.delta, ctx.config.simulation.n_max).map_err(numerical)?;
    let mut body = Vec::new();
    write_spectrum_csv(&lines, &mut body)?;
    let path = ctx.path("spectrum.csv");
    output::write_csv(&path, &ctx.hash, &body)?;
    let carrier = lines
        .iter()
        .find(|l| l.m == 0)
        .map(|l| l.weight)
        .unwrap_or(0.0);
    let strongest = lines
        .iter()
        .filter(|l| l.spin_axis == SdfAxis::Z && l.m != 0)
        .max_by(|a, b| a.weight.abs().total_cmp(&b.weight.abs()));
    println!("carrier S_z weight J0({:.4}) = {carrier:.3e}", p.mod_index);
    if let Some(l) = strongest {
        println!(
            "strongest S_z sideband m = {} (weight {:.4}, ratio to carrier {:.3e})",
            l.m,
            l.weight,
            carrier.abs() / l.weight.abs()
        );
    }
    ctx.sidecar(
        "spectrum",
        &path,
        BTreeMap::from([("lines", lines.len())]),
        BTreeMap::new(),
    )
}

pub fn analytic(ctx: &Context) -> Result<(), CliError> {
    let p = ctx.config.gate_params();
    let omega_phi = p.rabi_g * bessel_j(2, p.mod_index).map_err(numerical)?;
    let (d_f, d_n) = (
        ctx.config.far_detuning_hz * 1e-6,
        ctx.config.near_detuning_hz * 1e-6,
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "t_f_us",
        "mu",
        "xi_closed_abs",
        "xi_numeric_abs",
        "xi_asymptotic_abs",
        "rel_err_numeric",
        "rel_err_asymptotic",
        "envelope",
        "theta",
        "infidelity_n0",
        "flag",
    ])?;
    let mut flagged = 0;
    let mut envelope = 0.0;
    for &t in &ctx.config.analytic.arm_durations_s {
        let a = AnalyticParams::new(omega_phi, d_f, d_n, rampedgate::units::s_to_us(t))
            .map_err(numerical)?;
        envelope = displacement_envelope(&a);
        let closed = displacement_closed_form(&a).map_err(numerical)?;
        let numeric = displacement_numeric(&a).map_err(numerical)?;
        let mut flags = Vec::new();
        let asym = match displacement_asymptotic(&a) {
            Ok(x) => Some(x),
            Err(e) => {
                flags.push(format!("asymptotic unavailable: {e}"));
                None
            }
        };
        if a.mu() < 20.0 {
            flags.push("outside asymptotic regime (mu < 20)".into());
        }
        if closed.norm() < 1e-6 * omega_phi.abs() * a.t_f {
            flags.push("closure point".into());
        }
        flagged += usize::from(!flags.is_empty());
        let rel = |x: rampedgate::C64| (x - closed).norm() / closed.norm().max(f64::MIN_POSITIVE);
        let e = |x: f64| format!("{x:.12e}");
        w.write_record([
            e(a.t_f),
            e(a.mu()),
            e(closed.norm()),
            e(numeric.norm()),
            asym.map(|x| e(x.norm())).unwrap_or_default(),
            e(rel(numeric)),
            asym.map(|x| e(rel(x))).unwrap_or_default(),
            e(envelope),
            e(geometric_phase(&a)),
            e(residual_infidelity(closed, 0)),
            flags.join("; "),
        ])?;
    }
    let body = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    let path = ctx.path("analytic.csv");
    output::write_csv(&path, &ctx.hash, &body)?;
    println!(
        "Omega_phi = {omega_phi:.6e} rad/us; worst-case |xi| envelope Omega_phi/(pi d_f) = {envelope:.6e} ({} of {} rows flagged)",
        flagged,
        ctx.config.analytic.arm_durations_s.len()
    );
    let n = ctx.config.analytic.arm_durations_s.len();
    ctx.sidecar(
        "analytic",
        &path,
        BTreeMap::from([("rows", n), ("flagged", flagged)]),
        BTreeMap::new(),
    )
}

fn bell_json(r: &BellResult) -> serde_json::Value {
    let mut v = serde_json::to_value(r).expect("result serializes");
    if let Some(m) = v.as_object_mut() {
        m.remove("wall_time_s");
        m.insert("infidelity".into(), json!(r.infidelity()));
    }
    v
}

pub fn bell(ctx: &Context) -> Result<(), CliError> {
    let (params, ramp, cal) = ctx.resolved_schedule()?;
    let cfg = ctx.config.bell_config();
    let initial = InitialMotionalState::PoissonMixture {
        nbar: ctx.config.simulation.nbar,
    };
    let r = bell_sequence(&params, &ramp, &initial, &cfg).map_err(numerical)?;
    let sampled = match ctx.config.shot_options() {
        Some(opts) => Some(shot_sample(&r, &opts).map_err(numerical)?),
        None => None,
    };
    let doc = json!({
        "config_sha256": ctx.hash,
        "schedule_sha256": schedule_hash(&params, &ramp),
        "calibration": cal.map(|c| json!({
            "method": ctx.config.calibration.method,
            "flat_top_us": c.flat_top,
            "theta_total": c.theta_total,
            "evaluations": c.evaluations,
        })),
        "result": bell_json(&r),
        "sampled": sampled,
    });
    let path = ctx.path("bell.json");
    output::write_json(&path, &doc)?;
    println!(
        "flat top {:.3} us, gate {:.3} us: F_parity = {:.6}, F_overlap = {:.6}, theta = {:.6}",
        r.flat_top_us, r.gate_time_us, r.fidelity_parity, r.fidelity_overlap, r.theta_total
    );
    let mut rows = BTreeMap::new();
    rows.insert(0, r.wall_time_s);
    ctx.sidecar("bell", &path, BTreeMap::new(), rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Ramp,
    Detuning,
}

/// Grid errors are config errors; call before anything is written.
pub fn validate_sweep(config: &RunConfig, kind: SweepKind) -> Result<(), CliError> {
    let checked = match kind {
        SweepKind::Ramp => config.ramp_sweep().validate(),
        SweepKind::Detuning => config.detuning_sweep().validate(),
    };
    checked.map_err(|e| CliError::Config(format!("invalid sweep: {e}")))
}

pub fn sweep(ctx: &Context, kind: SweepKind) -> Result<(), CliError> {
    let (name, command, total) = match kind {
        SweepKind::Ramp => (
            "sweep_ramp.csv",
            "sweep-ramp",
            ctx.config.ramp_sweep().len(),
        ),
        SweepKind::Detuning => (
            "sweep_detuning.csv",
            "sweep-detuning",
            ctx.config.detuning_sweep().len(),
        ),
    };
    validate_sweep(&ctx.config, kind)?;
    let path = ctx.path(name);
    let kept = if ctx.resume {
        output::existing_rows(&path, &ctx.hash)?
    } else {
        BTreeMap::new()
    };
    if !kept.is_empty() {
        log::info!("resuming: {} of {total} rows already present", kept.len());
    }
    let skip: BTreeSet<usize> = kept.keys().copied().collect();
    let rows: Vec<SweepRow> = match kind {
        SweepKind::Ramp => sweep_ramp_duration(&ctx.config.ramp_sweep(), &skip),
        SweepKind::Detuning => sweep_detuning_offset(&ctx.config.detuning_sweep(), &skip),
    }
    .map_err(numerical)?;
    let body = output::merge_sweep(&kept, &rows)?;
    output::write_csv(&path, &ctx.hash, &body)?;
    let failed = rows.iter().filter(|r| r.failed()).count();
    for r in rows.iter().filter(|r| r.failed()) {
        log::warn!(
            "row {} ({}) failed: {}",
            r.index,
            r.config,
            r.error.as_deref().unwrap_or("")
        );
    }
    let counts = BTreeMap::from([
        ("rows", total),
        ("computed", rows.len()),
        ("reused", kept.len()),
        ("failed", failed),
    ]);
    let times = rows.iter().map(|r| (r.index, r.wall_time_s)).collect();
    ctx.sidecar(command, &path, counts, times)?;
    println!(
        "{command}: {total} rows ({} computed, {} reused)",
        rows.len(),
        kept.len()
    );
    if failed > 0 {
        return Err(CliError::Partial { failed, total });
    }
    Ok(())
}

pub fn schedule_export(ctx: &Context) -> Result<(), CliError> {
    let (params, ramp, _) = ctx.resolved_schedule()?;
    let s = PulseSchedule::build(&params, &ramp).map_err(numerical)?;
    let step = rampedgate::units::s_to_us(ctx.config.output.export_step_s);
    let n = (s.t_f() / step).ceil() as usize;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "t_us",
        "gradient_envelope",
        "bichromatic_envelope",
        "rabi_g_hz",
        "rabi_mu_hz",
        "rabi_phi_hz",
        "detuning_hz",
    ])?;
    for k in 0..=n {
        let t = (k as f64 * step).min(s.t_f());
        let e = |x: f64| format!("{x:.12e}");
        w.write_record([
            e(t),
            e(s.gradient_envelope(t)),
            e(s.bichromatic_envelope(t)),
            e(rad_per_us_to_hz(s.rabi_g(t))),
            e(rad_per_us_to_hz(s.rabi_mu(t))),
            e(rad_per_us_to_hz(s.rabi_phi(t))),
            e(rad_per_us_to_hz(s.detuning(t))),
        ])?;
    }
    let body = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;

    let times: Vec<f64> = (0..=n).map(|k| (k as f64 * step).min(s.t_f())).collect();
    let mode = ModeSpec::gate_mode(&params, 2);
    let space = HilbertSpec::two_spins(vec![2]).map_err(numerical)?;
    let h = gate_hamiltonian_truncated(&s, &mode, &space, ArmTiming::first()).map_err(numerical)?;
    let mut eigen: Vec<f64> = spin_eigenvalues(mode.spin_sign)
        .into_iter()
        .filter(|e| *e != 0.0)
        .collect();
    eigen.sort_by(|a, b| b.total_cmp(a));
    eigen.dedup();
    let branches = eigen
        .into_iter()
        .map(|e| Ok((e, spin_branch_displacement(&h, e, &times)?)))
        .collect::<rampedgate::Result<Vec<_>>>()
        .map_err(numerical)?;
    let mut traj = Vec::new();
    write_trajectory_csv(&times, &branches, &mut traj)?;
    output::write_csv(&ctx.path("trajectory.csv"), &ctx.hash, &traj)?;

    let path = ctx.path("schedule.csv");
    output::write_csv(&path, &ctx.hash, &body)?;
    println!(
        "arm duration {:.3} us, flat top {:.3} us, schedule {}",
        s.t_f(),
        params.flat_top,
        schedule_hash(&params, &ramp)
    );
    ctx.sidecar(
        "schedule-export",
        &path,
        BTreeMap::from([("samples", n + 1)]),
        BTreeMap::new(),
    )
}
