//! Run configuration. Frequencies are ordinary Hz and times are seconds;
//! everything is converted to rad/μs and μs in [`RunConfig::gate_params`]
//! and friends.

use std::f64::consts::TAU;
use std::path::Path;

use rampedgate::experiments::{
    BellConfig, CalibrationMethod, CalibrationOptions, DetuningSweepSpec, ModeSet, RampSweepSpec,
    ShotOptions, SimulationLevel,
};
use rampedgate::hamiltonian::PhaseContinuity;
use rampedgate::propagator::{IntegratorConfig, Method};
use rampedgate::ramps::{DetuningRamp, EpsilonMode, GateParams, RampProfile, REFERENCE_RABI_G};
use rampedgate::units::{hz_to_rad_per_us, rad_per_us_to_hz, s_to_us, us_to_s};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub enum ConfigError {
    Read(String),
    Parse(String),
    Invalid(String),
}

impl std::error::Error for ConfigError {}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Read(m) => write!(f, "cannot read config: {m}"),
            Self::Parse(m) => write!(f, "config parse error: {m}"),
            Self::Invalid(m) => write!(f, "invalid config: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub qubit_freq_hz: f64,
    pub gradient_freq_hz: f64,
    pub delta_hz: f64,
    pub modulation_index: f64,
    pub far_detuning_hz: f64,
    pub near_detuning_hz: f64,
    pub alpha: f64,
    pub tau_g_s: f64,
    pub tau_mu_s: f64,
    /// Peak gradient Rabi rate Ω_g/2π.
    pub gradient_rabi_hz: f64,
    /// Detuning offset ε/2π.
    pub epsilon_hz: f64,
    pub epsilon_mode: EpsilonMode,
    pub ramp: RampConfig,
    /// Fixed flat top; calibrated when absent.
    pub flat_top_s: Option<f64>,
    pub modes: ModeTable,
    pub simulation: SimulationConfig,
    pub calibration: CalibrationConfig,
    pub integrator: IntegratorSettings,
    pub sweeps: SweepConfig,
    pub analytic: AnalyticConfig,
    pub shots: Option<ShotConfig>,
    pub output: OutputConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RampConfig {
    pub profile: RampProfile,
    /// Total motional ramp duration (adiabatic and sine-squared profiles).
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeTable {
    pub set: ModeSet,
    pub fock_dim: usize,
    pub spectator_fock_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub level: SimulationLevel,
    pub echo: bool,
    pub continuity: PhaseContinuity,
    /// Sideband cutoff of the bichromatic frame and the spectrum.
    pub n_max: usize,
    /// Mean occupation of the Poisson initial state.
    pub nbar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub method: CalibrationMethod,
    pub target_theta: f64,
    pub max_flat_top_s: f64,
    pub scan_step_s: f64,
    pub tolerance_s: f64,
    pub fidelity_step_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSettings {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step_s: Option<f64>,
    pub fixed_step_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub ramp_durations_s: Vec<f64>,
    pub ramp_nbar: Vec<f64>,
    pub ramp_fock_dim: usize,
    pub detuning_configs_s: Vec<f64>,
    pub detuning_reference: usize,
    /// ε grid in units of 1/T_gate of the reference configuration.
    pub epsilon_units: Vec<f64>,
    pub detuning_nbar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticConfig {
    /// Arm durations of the sine-squared comparison.
    pub arm_durations_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShotConfig {
    pub population_shots: usize,
    pub parity_shots: usize,
    pub bootstrap_resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    /// Sampling step of `schedule-export`.
    pub export_step_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = GateParams::reference();
        let hz = rad_per_us_to_hz;
        Self {
            qubit_freq_hz: hz(p.omega_0),
            gradient_freq_hz: hz(p.omega_g),
            delta_hz: hz(p.delta),
            modulation_index: p.mod_index,
            far_detuning_hz: hz(p.detuning_far),
            near_detuning_hz: hz(p.detuning_near),
            alpha: p.alpha,
            tau_g_s: us_to_s(p.tau_g),
            tau_mu_s: us_to_s(p.tau_mu),
            gradient_rabi_hz: hz(REFERENCE_RABI_G),
            epsilon_hz: 0.0,
            epsilon_mode: EpsilonMode::DriveDetuning,
            ramp: RampConfig::default(),
            flat_top_s: None,
            modes: ModeTable::default(),
            simulation: SimulationConfig::default(),
            calibration: CalibrationConfig::default(),
            integrator: IntegratorSettings::default(),
            sweeps: SweepConfig::default(),
            analytic: AnalyticConfig::default(),
            shots: None,
            output: OutputConfig::default(),
            seed: 2024,
        }
    }
}

impl Default for RampConfig {
    fn default() -> Self {
        Self {
            profile: RampProfile::Adiabatic,
            duration_s: 50e-6,
        }
    }
}

impl Default for ModeTable {
    fn default() -> Self {
        let b = BellConfig::default();
        Self {
            set: b.modes,
            fock_dim: b.fock_dim,
            spectator_fock_dim: b.spectator_fock_dim,
        }
    }
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let b = BellConfig::default();
        Self {
            level: b.level,
            echo: b.echo,
            continuity: b.continuity,
            n_max: b.n_max,
            nbar: 0.0,
        }
    }
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        let c = CalibrationOptions::default();
        Self {
            method: c.method,
            target_theta: c.target_theta,
            max_flat_top_s: us_to_s(c.max_flat_top),
            scan_step_s: us_to_s(c.scan_step),
            tolerance_s: us_to_s(c.tolerance),
            fidelity_step_s: us_to_s(c.fidelity_step),
        }
    }
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        let i = IntegratorConfig::default();
        Self {
            method: i.method,
            rel_tol: i.rel_tol,
            abs_tol: i.abs_tol,
            max_step_s: i.max_step.map(us_to_s),
            fixed_step_s: i.fixed_step.map(us_to_s),
        }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        let r = RampSweepSpec::reference(GateParams::reference());
        let d = DetuningSweepSpec::reference(GateParams::reference());
        Self {
            ramp_durations_s: r.tau_m_us.iter().map(|&t| us_to_s(t)).collect(),
            ramp_nbar: r.nbar,
            ramp_fock_dim: r.bell.fock_dim,
            detuning_configs_s: d.configs_tau_m_us.iter().map(|&t| us_to_s(t)).collect(),
            detuning_reference: d.reference_config,
            epsilon_units: d.epsilon_units,
            detuning_nbar: d.nbar,
        }
    }
}

impl Default for AnalyticConfig {
    fn default() -> Self {
        Self {
            arm_durations_s: (3..=15).map(|k| k as f64 * 100e-6).collect(),
        }
    }
}

impl Default for ShotConfig {
    fn default() -> Self {
        let s = ShotOptions::reference(0);
        Self {
            population_shots: s.population_shots,
            parity_shots: s.parity_shots,
            bootstrap_resamples: s.bootstrap_resamples,
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "results".into(),
            export_step_s: 0.1e-6,
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// serde_json reports line and column of the first offending token.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact serialization of the resolved config, with
    /// the output directory blanked so reruns elsewhere hash identically.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir.clear();
        let compact = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let positive = [
            ("qubit_freq_hz", self.qubit_freq_hz),
            ("gradient_freq_hz", self.gradient_freq_hz),
            ("delta_hz", self.delta_hz),
            ("far_detuning_hz", self.far_detuning_hz),
            ("near_detuning_hz", self.near_detuning_hz),
            ("gradient_rabi_hz", self.gradient_rabi_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be a positive frequency (got {v})"));
            }
        }
        if self.modes.fock_dim < 2
            || self.modes.spectator_fock_dim < 2
            || self.sweeps.ramp_fock_dim < 2
        {
            return invalid("Fock dimensions must be at least 2".into());
        }
        if let Some(t) = self.flat_top_s {
            if !(t >= 0.0 && t.is_finite()) {
                return invalid(format!("flat_top_s must be >= 0 (got {t})"));
            }
        }
        if !(self.output.export_step_s > 0.0) {
            return invalid("output.export_step_s must be positive".into());
        }
        if let Some(s) = &self.shots {
            if s.population_shots == 0 || s.parity_shots == 0 || s.bootstrap_resamples == 0 {
                return invalid("shot and resample counts must be positive".into());
            }
        }
        let core = |r: rampedgate::Result<()>| r.map_err(|e| ConfigError::Invalid(e.to_string()));
        core(self.gate_params().validate())?;
        core(self.bell_config().integrator.validate())?;
        core(self.calibration_options().validate())?;
        core(self.ramp().map(|_| ()))?;
        Ok(())
    }

    pub fn gate_params(&self) -> GateParams {
        let mut p = GateParams::reference();
        p.omega_0 = hz_to_rad_per_us(self.qubit_freq_hz);
        p.omega_g = hz_to_rad_per_us(self.gradient_freq_hz);
        p.delta = hz_to_rad_per_us(self.delta_hz);
        p.rabi_g = hz_to_rad_per_us(self.gradient_rabi_hz);
        p.mod_index = self.modulation_index;
        p.detuning_far = hz_to_rad_per_us(self.far_detuning_hz);
        p.detuning_near = hz_to_rad_per_us(self.near_detuning_hz);
        p.alpha = self.alpha;
        p.tau_g = s_to_us(self.tau_g_s);
        p.tau_mu = s_to_us(self.tau_mu_s);
        p.flat_top = self.flat_top_s.map(s_to_us).unwrap_or(0.0);
        p.epsilon = TAU * self.epsilon_hz * 1e-6;
        p.epsilon_mode = self.epsilon_mode;
        p
    }

    pub fn ramp(&self) -> rampedgate::Result<DetuningRamp> {
        let (d0, d1) = (
            hz_to_rad_per_us(self.far_detuning_hz),
            hz_to_rad_per_us(self.near_detuning_hz),
        );
        let tau = s_to_us(self.ramp.duration_s);
        match self.ramp.profile {
            RampProfile::None => DetuningRamp::none(d0, d1),
            RampProfile::SineSquared => DetuningRamp::sine_squared(d0, d1, tau),
            RampProfile::Adiabatic if tau == 0.0 => DetuningRamp::adiabatic(d0, d1, self.alpha),
            RampProfile::Adiabatic => DetuningRamp::adiabatic_with_duration(d0, d1, tau),
        }
    }

    pub fn bell_config(&self) -> BellConfig {
        BellConfig {
            level: self.simulation.level,
            modes: self.modes.set,
            fock_dim: self.modes.fock_dim,
            spectator_fock_dim: self.modes.spectator_fock_dim,
            echo: self.simulation.echo,
            continuity: self.simulation.continuity,
            n_max: self.simulation.n_max,
            integrator: IntegratorConfig {
                method: self.integrator.method,
                rel_tol: self.integrator.rel_tol,
                abs_tol: self.integrator.abs_tol,
                max_step: self.integrator.max_step_s.map(s_to_us),
                fixed_step: self.integrator.fixed_step_s.map(s_to_us),
                ..IntegratorConfig::default()
            },
            analysis_phases: None,
        }
    }

    pub fn calibration_options(&self) -> CalibrationOptions {
        let c = &self.calibration;
        CalibrationOptions {
            target_theta: c.target_theta,
            max_flat_top: s_to_us(c.max_flat_top_s),
            scan_step: s_to_us(c.scan_step_s),
            tolerance: s_to_us(c.tolerance_s),
            method: c.method,
            fidelity_step: s_to_us(c.fidelity_step_s),
        }
    }

    pub fn shot_options(&self) -> Option<ShotOptions> {
        self.shots.as_ref().map(|s| ShotOptions {
            population_shots: s.population_shots,
            parity_shots: s.parity_shots,
            bootstrap_resamples: s.bootstrap_resamples,
            seed: self.seed,
        })
    }

    pub fn ramp_sweep(&self) -> RampSweepSpec {
        let mut bell = self.bell_config();
        bell.fock_dim = self.sweeps.ramp_fock_dim;
        RampSweepSpec {
            params: self.gate_params(),
            tau_m_us: self
                .sweeps
                .ramp_durations_s
                .iter()
                .map(|&t| s_to_us(t))
                .collect(),
            nbar: self.sweeps.ramp_nbar.clone(),
            bell,
            calibration: self.calibration_options(),
        }
    }

    pub fn detuning_sweep(&self) -> DetuningSweepSpec {
        DetuningSweepSpec {
            params: self.gate_params(),
            configs_tau_m_us: self
                .sweeps
                .detuning_configs_s
                .iter()
                .map(|&t| s_to_us(t))
                .collect(),
            reference_config: self.sweeps.detuning_reference,
            epsilon_units: self.sweeps.epsilon_units.clone(),
            nbar: self.sweeps.detuning_nbar,
            bell: self.bell_config(),
            calibration: self.calibration_options(),
        }
    }
}
