//! Time-dependent gate Hamiltonians in the ion frame, the bichromatic frame
//! and the resonant-term (truncated) approximation, plus the SDF spectrum.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::analytic::{bessel_j, bessel_j_all};
use crate::quantum::{collective_spin, mode_ladder, Axis, HilbertSpec, Operator, SpinSign};
use crate::ramps::{GateParams, PulseSchedule};
use crate::units::rad_per_us_to_hz;
use crate::{Error, Result, C64};

/// Default Jacobi–Anger cutoff: J_{2n} and J_{2n−1} for n ≤ 5.
pub const DEFAULT_N_MAX: usize = 5;

/// One motional mode coupled to the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub label: String,
    /// Frequency at the near point, rad/μs.
    pub omega_m0: f64,
    /// Ramp depth: ω(t) = ω_m0 + ω_m1·g(t) with g = 1 at the far point.
    pub omega_m1: f64,
    /// Peak gradient coupling Ω_g for this mode, rad/μs.
    pub rabi_g: f64,
    pub spin_sign: SpinSign,
    pub fock_dim: usize,
}

impl ModeSpec {
    /// The out-of-phase rocking mode driven by the gate: resonant with
    /// ω_g + 2δ + Δ₁ at the near point.
    pub fn gate_mode(params: &GateParams, fock_dim: usize) -> Self {
        Self {
            label: "r,OP".into(),
            omega_m0: params.omega_ref() + params.detuning_near,
            omega_m1: params.detuning_far - params.detuning_near,
            rabi_g: params.rabi_g,
            spin_sign: SpinSign::OutOfPhase,
            fock_dim,
        }
    }

    /// Gate mode plus three spectators (c,IP at 6.50 MHz, r,IP at 6.60 MHz,
    /// c,OP at 7.10 MHz near-point frequencies) with the gate mode's ramp
    /// depth and half its coupling. Only the gate mode frequency is a
    /// measured value; the spectator values are illustrative.
    pub fn four_mode_set(params: &GateParams, gate_dim: usize, spectator_dim: usize) -> Vec<Self> {
        let gate = Self::gate_mode(params, gate_dim);
        let spectator = |label: &str, mhz: f64, sign| Self {
            label: label.into(),
            omega_m0: 2.0 * PI * mhz,
            omega_m1: gate.omega_m1,
            rabi_g: 0.5 * params.rabi_g,
            spin_sign: sign,
            fock_dim: spectator_dim,
        };
        vec![
            spectator("c,IP", 6.50, SpinSign::InPhase),
            spectator("r,IP", 6.60, SpinSign::OutOfPhase),
            spectator("c,OP", 7.10, SpinSign::InPhase),
            gate,
        ]
        .into_iter()
        .rev()
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_m0 > 0.0) || !self.omega_m1.is_finite() || !self.rabi_g.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mode '{}' has invalid frequencies",
                self.label
            )));
        }
        if self.fock_dim < 2 {
            return Err(Error::InvalidDimension {
                dim: self.fock_dim,
                reason: "fock dimension must be >= 2",
            });
        }
        Ok(())
    }

    /// Fastest |ω(t) − ω_g − 2δ| over the ramp, plus |ε|.
    fn max_relative_rate(&self, params: &GateParams) -> f64 {
        let off = self.omega_m0 - params.omega_ref();
        off.abs().max((off + self.omega_m1).abs()) + params.epsilon.abs()
    }

    fn max_frequency(&self, params: &GateParams) -> f64 {
        self.omega_m0 + self.omega_m1.max(0.0) + params.epsilon.abs()
    }
}

/// Whether a later arm continues the drive and motional phases of the
/// earlier ones or restarts them from zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseContinuity {
    #[default]
    Continuous,
    /// Every arm sees identical phases (perfectly matched arms).
    Restart,
}

/// Position of an arm within a multi-arm sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmTiming {
    pub arm: usize,
    pub continuity: PhaseContinuity,
}

impl ArmTiming {
    pub fn first() -> Self {
        Self {
            arm: 0,
            continuity: PhaseContinuity::Continuous,
        }
    }

    pub fn new(arm: usize, continuity: PhaseContinuity) -> Self {
        Self { arm, continuity }
    }

    /// Number of complete arms elapsed before this one, as seen by phases.
    fn elapsed(&self) -> f64 {
        match self.continuity {
            PhaseContinuity::Continuous => self.arm as f64,
            PhaseContinuity::Restart => 0.0,
        }
    }
}

/// Writes every term coefficient at time t.
pub type CoefficientFn = Arc<dyn Fn(f64, &mut [C64]) + Send + Sync>;
/// Complex scalar function of time.
pub type DriveFn = Arc<dyn Fn(f64) -> C64 + Send + Sync>;

/// Marks a Hamiltonian of the form `S (g(t) a† + g*(t) a)` on one mode.
#[derive(Clone)]
pub struct SzDrive {
    pub spin_sign: SpinSign,
    pub drive: DriveFn,
    /// Points where the drive has derivative jumps.
    pub breakpoints: Vec<f64>,
    /// Fastest phase rotation of the drive, rad/μs.
    pub max_rate: f64,
}

/// H(t) = Σ_k c_k(t) O_k on `[t_start, t_end]` (local arm time).
#[derive(Clone)]
pub struct TimeDependentHamiltonian {
    dim: usize,
    ops: Vec<Operator>,
    op_norms: Vec<f64>,
    coeffs: CoefficientFn,
    t_start: f64,
    t_end: f64,
    max_frequency: f64,
    sz_drive: Option<SzDrive>,
}

impl fmt::Debug for TimeDependentHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeDependentHamiltonian")
            .field("dim", &self.dim)
            .field("terms", &self.ops.len())
            .field("interval", &(self.t_start, self.t_end))
            .field("max_frequency", &self.max_frequency)
            .field("sz_only", &self.sz_drive.is_some())
            .finish()
    }
}

impl TimeDependentHamiltonian {
    pub fn new(
        dim: usize,
        ops: Vec<Operator>,
        coeffs: CoefficientFn,
        interval: (f64, f64),
        max_frequency: f64,
    ) -> Result<Self> {
        if let Some(op) = ops.iter().find(|op| op.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: op.dim(),
            });
        }
        let op_norms = ops.iter().map(Operator::norm_inf).collect();
        Ok(Self {
            dim,
            ops,
            op_norms,
            coeffs,
            t_start: interval.0,
            t_end: interval.1,
            max_frequency,
            sz_drive: None,
        })
    }

    /// H = 0 on the interval.
    pub fn zero(dim: usize, interval: (f64, f64)) -> Self {
        Self::new(dim, Vec::new(), Arc::new(|_, _| {}), interval, 0.0).expect("no operators")
    }

    fn with_sz_drive(mut self, drive: SzDrive) -> Self {
        self.sz_drive = Some(drive);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn operators(&self) -> &[Operator] {
        &self.ops
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    /// Fastest oscillation in any coefficient, rad/μs.
    pub fn max_frequency(&self) -> f64 {
        self.max_frequency
    }

    pub fn sz_drive(&self) -> Option<&SzDrive> {
        self.sz_drive.as_ref()
    }

    pub fn coefficients(&self, t: f64) -> Vec<C64> {
        let mut c = vec![C64::new(0.0, 0.0); self.ops.len()];
        (self.coeffs)(t, &mut c);
        c
    }

    /// `y = H(t)·x` using caller-provided coefficient scratch space.
    pub fn apply_with(&self, t: f64, x: &[C64], y: &mut [C64], scratch: &mut Vec<C64>) {
        scratch.clear();
        scratch.resize(self.ops.len(), C64::new(0.0, 0.0));
        (self.coeffs)(t, scratch);
        y.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for (op, &c) in self.ops.iter().zip(scratch.iter()) {
            if c != C64::new(0.0, 0.0) {
                op.apply_add(c, x, y);
            }
        }
    }

    /// Upper bound on ‖H(t)‖ from the coefficient magnitudes.
    pub fn norm_bound(&self, coeffs: &[C64]) -> f64 {
        coeffs
            .iter()
            .zip(&self.op_norms)
            .map(|(c, n)| c.norm() * n)
            .sum()
    }

    /// Assembled sparse matrix at time t.
    pub fn matrix_at(&self, t: f64) -> Operator {
        let c = self.coefficients(t);
        let triplets = self
            .ops
            .iter()
            .zip(c)
            .flat_map(|(op, ck)| {
                op.entries()
                    .map(move |(r, col, v)| (r, col, v * ck))
                    .collect::<Vec<_>>()
            })
            .collect();
        Operator::from_triplets(self.dim, triplets)
    }

    pub fn hermiticity_defect(&self, t: f64) -> f64 {
        self.matrix_at(t).hermiticity_defect()
    }
}

fn check_modes(modes: &[ModeSpec], spec: &HilbertSpec) -> Result<()> {
    if modes.len() != spec.n_modes() {
        return Err(Error::DimensionMismatch {
            expected: spec.n_modes(),
            found: modes.len(),
        });
    }
    for (m, &d) in modes.iter().zip(&spec.fock_dims) {
        m.validate()?;
        if m.fock_dim != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: m.fock_dim,
            });
        }
    }
    Ok(())
}

/// Per-mode clock: local arm time to global phases.
#[derive(Clone)]
struct ModeClock {
    omega_0: f64,
    depth: f64,
    /// ω_m0 − (ω_g + 2δ), kept separately to avoid cancellation.
    offset: f64,
    coupling_scale: f64,
}

impl ModeClock {
    fn new(mode: &ModeSpec, params: &GateParams) -> Self {
        Self {
            omega_0: mode.omega_m0 + params.motional_shift(),
            depth: mode.omega_m1,
            offset: mode.omega_m0 - params.omega_ref(),
            coupling_scale: if params.rabi_g == 0.0 {
                0.0
            } else {
                mode.rabi_g / params.rabi_g
            },
        }
    }

    /// Local motional phase φ_i(t).
    fn phi(&self, s: &PulseSchedule, t: f64) -> f64 {
        self.omega_0 * t + self.depth * s.ramp_progress_integral(t)
    }

    /// Local resonant phase Δφ_i(t) = φ_i(t) − (ω_g + 2δ_eff)t.
    fn delta_phi(&self, s: &PulseSchedule, t: f64) -> f64 {
        self.offset * t + self.depth * s.ramp_progress_integral(t) - s.params().epsilon * t
    }
}

struct Frame {
    schedule: Arc<PulseSchedule>,
    clocks: Vec<ModeClock>,
    /// Global time offset of this arm.
    t0: f64,
    elapsed: f64,
    phi_end: Vec<f64>,
    dphi_end: Vec<f64>,
}

impl Frame {
    fn new(schedule: &PulseSchedule, modes: &[ModeSpec], timing: ArmTiming) -> Self {
        let schedule = Arc::new(schedule.clone());
        let clocks: Vec<ModeClock> = modes
            .iter()
            .map(|m| ModeClock::new(m, schedule.params()))
            .collect();
        let t_f = schedule.t_f();
        let phi_end = clocks.iter().map(|c| c.phi(&schedule, t_f)).collect();
        let dphi_end = clocks.iter().map(|c| c.delta_phi(&schedule, t_f)).collect();
        let elapsed = timing.elapsed();
        Self {
            t0: elapsed * t_f,
            elapsed,
            schedule,
            clocks,
            phi_end,
            dphi_end,
        }
    }

    fn global_phi(&self, i: usize, t: f64) -> f64 {
        self.clocks[i].phi(&self.schedule, t) + self.elapsed * self.phi_end[i]
    }

    fn global_delta_phi(&self, i: usize, t: f64) -> f64 {
        self.clocks[i].delta_phi(&self.schedule, t) + self.elapsed * self.dphi_end[i]
    }
}

fn sz_ops(modes: &[ModeSpec], spec: &HilbertSpec, axis: Axis) -> Result<Vec<(Operator, Operator)>> {
    modes
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let s = collective_spin(axis, m.spin_sign, spec)?;
            let (a, ad) = mode_ladder(i, spec)?;
            Ok((s.matmul(&ad)?, s.matmul(&a)?))
        })
        .collect()
}

/// δ·τ_μ, the validity measure of the slowly-varying bichromatic frame.
pub fn frame_validity(schedule: &PulseSchedule) -> f64 {
    schedule.params().delta_eff() * schedule.params().tau_mu
}

/// Ion-frame Hamiltonian
/// `2Ω_μ(t)S_{x,c}cos(δt) + Σ_i 2Ω_{g,i}(t)cos(ω_g t)S_{z,i}(a_i e^{−iφ_i} + h.c.)`.
pub fn ion_frame_hamiltonian(
    schedule: &PulseSchedule,
    modes: &[ModeSpec],
    spec: &HilbertSpec,
    timing: ArmTiming,
) -> Result<TimeDependentHamiltonian> {
    check_modes(modes, spec)?;
    let sx = collective_spin(Axis::X, SpinSign::InPhase, spec)?;
    let pairs = sz_ops(modes, spec, Axis::Z)?;
    let mut ops = vec![sx];
    for (up, down) in pairs {
        ops.push(up);
        ops.push(down);
    }
    let frame = Frame::new(schedule, modes, timing);
    let p = schedule.params().clone();
    let max_frequency = modes
        .iter()
        .map(|m| m.max_frequency(&p))
        .fold(p.delta_eff(), f64::max)
        + p.omega_g;
    let coeffs: CoefficientFn = Arc::new(move |t, c| {
        let s = &frame.schedule;
        let big_t = frame.t0 + t;
        c[0] = C64::new(2.0 * s.rabi_mu(t) * (p.delta_eff() * big_t).cos(), 0.0);
        let carrier = 2.0 * s.rabi_g(t) * (p.omega_g * big_t).cos();
        for (i, clock) in frame.clocks.iter().enumerate() {
            let v = C64::from_polar(carrier * clock.coupling_scale, frame.global_phi(i, t));
            c[1 + 2 * i] = v;
            c[2 + 2 * i] = v.conj();
        }
    });
    TimeDependentHamiltonian::new(
        spec.dim(),
        ops,
        coeffs,
        (0.0, schedule.t_f()),
        max_frequency,
    )
}

/// Bichromatic-frame Hamiltonian with the Jacobi–Anger series cut at
/// J_{2n_max}.
pub fn bichromatic_frame_hamiltonian(
    schedule: &PulseSchedule,
    modes: &[ModeSpec],
    spec: &HilbertSpec,
    n_max: usize,
    timing: ArmTiming,
) -> Result<TimeDependentHamiltonian> {
    bichromatic_frame_filtered(schedule, modes, spec, n_max, timing, |_| true)
}

/// As [`bichromatic_frame_hamiltonian`], keeping only Bessel orders for
/// which `keep(order)` holds.
pub fn bichromatic_frame_filtered<K>(
    schedule: &PulseSchedule,
    modes: &[ModeSpec],
    spec: &HilbertSpec,
    n_max: usize,
    timing: ArmTiming,
    keep: K,
) -> Result<TimeDependentHamiltonian>
where
    K: Fn(usize) -> bool + Send + Sync + 'static,
{
    if n_max < 1 {
        return Err(Error::InvalidParameter(
            "sideband cutoff n_max must be >= 1".into(),
        ));
    }
    check_modes(modes, spec)?;
    let validity = frame_validity(schedule);
    if validity < 50.0 {
        warn!("bichromatic frame assumes slow Omega_mu ramps; delta*tau_mu = {validity:.1} < 50");
    }
    let z_pairs = sz_ops(modes, spec, Axis::Z)?;
    let y_pairs = sz_ops(modes, spec, Axis::Y)?;
    let mut ops = Vec::with_capacity(4 * modes.len());
    for ((zu, zd), (yu, yd)) in z_pairs.into_iter().zip(y_pairs) {
        ops.extend([zu, zd, yu, yd]);
    }
    let frame = Frame::new(schedule, modes, timing);
    let p = schedule.params().clone();
    let orders = 2 * n_max;
    let max_frequency = modes
        .iter()
        .map(|m| m.max_frequency(&p))
        .fold(0.0, f64::max)
        + p.omega_g
        + orders as f64 * p.delta_eff();
    let coeffs: CoefficientFn = Arc::new(move |t, c| {
        let s = &frame.schedule;
        let big_t = frame.t0 + t;
        let d = p.delta_eff();
        let j =
            bessel_j_all(orders, s.modulation_argument(t)).expect("modulation index within range");
        let mut cos2f = if keep(0) { j[0] } else { 0.0 };
        let mut sin2f = 0.0;
        for k in 1..=orders {
            if !keep(k) {
                continue;
            }
            let arg = k as f64 * d * big_t;
            if k % 2 == 0 {
                cos2f += 2.0 * j[k] * arg.cos();
            } else {
                sin2f += 2.0 * j[k] * arg.sin();
            }
        }
        let carrier = 2.0 * s.rabi_g(t) * (p.omega_g * big_t).cos();
        for (i, clock) in frame.clocks.iter().enumerate() {
            let e = C64::from_polar(carrier * clock.coupling_scale, frame.global_phi(i, t));
            let (vz, vy) = (e * cos2f, e * sin2f);
            c[4 * i] = vz;
            c[4 * i + 1] = vz.conj();
            c[4 * i + 2] = vy;
            c[4 * i + 3] = vy.conj();
        }
    });
    TimeDependentHamiltonian::new(
        spec.dim(),
        ops,
        coeffs,
        (0.0, schedule.t_f()),
        max_frequency,
    )
}

/// Single-mode resonant-term Hamiltonian
/// `4Ω_g(t)J₂(4Ω_μ(t)/δ)cos(ω_g t)cos(2δt)S_z(a e^{−iφ} + a† e^{iφ})`.
pub fn gate_hamiltonian_truncated(
    schedule: &PulseSchedule,
    mode: &ModeSpec,
    spec: &HilbertSpec,
    timing: ArmTiming,
) -> Result<TimeDependentHamiltonian> {
    if spec.n_modes() != 1 {
        return Err(Error::Unsupported(format!(
            "truncated gate Hamiltonian is single-mode, spec has {} modes",
            spec.n_modes()
        )));
    }
    let modes = std::slice::from_ref(mode);
    check_modes(modes, spec)?;
    let (up, down) = sz_ops(modes, spec, Axis::Z)?.remove(0);
    let frame = Arc::new(Frame::new(schedule, modes, timing));
    let p = schedule.params().clone();
    let max_frequency = mode.max_frequency(&p) + p.omega_g + 2.0 * p.delta_eff();
    let drive: DriveFn = {
        let frame = frame.clone();
        Arc::new(move |t| {
            let s = &frame.schedule;
            let big_t = frame.t0 + t;
            let j2 = bessel_j(2, s.modulation_argument(t)).expect("modulation index within range");
            let amp = 4.0
                * s.rabi_g(t)
                * frame.clocks[0].coupling_scale
                * j2
                * (p.omega_g * big_t).cos()
                * (2.0 * p.delta_eff() * big_t).cos();
            C64::from_polar(amp, frame.global_phi(0, t))
        })
    };
    let d = drive.clone();
    let coeffs: CoefficientFn = Arc::new(move |t, c| {
        let v = d(t);
        c[0] = v;
        c[1] = v.conj();
    });
    let h = TimeDependentHamiltonian::new(
        spec.dim(),
        vec![up, down],
        coeffs,
        (0.0, schedule.t_f()),
        max_frequency,
    )?;
    Ok(h.with_sz_drive(SzDrive {
        spin_sign: mode.spin_sign,
        drive,
        breakpoints: schedule.breakpoints(),
        max_rate: max_frequency,
    }))
}

/// Rotating-wave form `Σ_i Ω_{φ,i}(t)S_{z,i}(a_i† e^{iΔφ_i} + a_i e^{−iΔφ_i})`
/// with Ω_φ = Ω_g J₂(4Ω_μ/δ) and Δφ_i = φ_i − (ω_g + 2δ)t.
pub fn gate_hamiltonian_rwa(
    schedule: &PulseSchedule,
    modes: &[ModeSpec],
    spec: &HilbertSpec,
    timing: ArmTiming,
) -> Result<TimeDependentHamiltonian> {
    check_modes(modes, spec)?;
    let pairs = sz_ops(modes, spec, Axis::Z)?;
    let mut ops = Vec::with_capacity(2 * modes.len());
    for (up, down) in pairs {
        ops.push(up);
        ops.push(down);
    }
    let p = schedule.params().clone();
    let max_rate = modes
        .iter()
        .map(|m| m.max_relative_rate(&p))
        .fold(0.0, f64::max);
    let frame = Arc::new(Frame::new(schedule, modes, timing));
    let f = frame.clone();
    let coeffs: CoefficientFn = Arc::new(move |t, c| {
        let omega_phi = f.schedule.rabi_phi(t);
        for (i, clock) in f.clocks.iter().enumerate() {
            let v = C64::from_polar(omega_phi * clock.coupling_scale, f.global_delta_phi(i, t));
            c[2 * i] = v;
            c[2 * i + 1] = v.conj();
        }
    });
    let h =
        TimeDependentHamiltonian::new(spec.dim(), ops, coeffs, (0.0, schedule.t_f()), max_rate)?;
    if modes.len() != 1 {
        return Ok(h);
    }
    let drive: DriveFn = Arc::new(move |t| {
        C64::from_polar(
            frame.schedule.rabi_phi(t) * frame.clocks[0].coupling_scale,
            frame.global_delta_phi(0, t),
        )
    });
    Ok(h.with_sz_drive(SzDrive {
        spin_sign: modes[0].spin_sign,
        drive,
        breakpoints: schedule.breakpoints(),
        max_rate,
    }))
}

/// Resonant-term drive `Ω_{φ,i}(t) e^{iΔφ_i(t)}` of one mode, without
/// building operators.
pub fn resonant_drive(schedule: &PulseSchedule, mode: &ModeSpec, timing: ArmTiming) -> SzDrive {
    let p = schedule.params();
    let max_rate = mode.max_relative_rate(p);
    let frame = Frame::new(schedule, std::slice::from_ref(mode), timing);
    let breakpoints = schedule.breakpoints();
    SzDrive {
        spin_sign: mode.spin_sign,
        drive: Arc::new(move |t| {
            C64::from_polar(
                frame.schedule.rabi_phi(t) * frame.clocks[0].coupling_scale,
                frame.global_delta_phi(0, t),
            )
        }),
        breakpoints,
        max_rate,
    }
}

/// Local resonant phase of a mode at the end of the arm, Δφ_i(t_f).
pub fn arm_phase_advance(schedule: &PulseSchedule, mode: &ModeSpec) -> f64 {
    ModeClock::new(mode, schedule.params()).delta_phi(schedule, schedule.t_f())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdfAxis {
    #[serde(rename = "S_z")]
    Z,
    #[serde(rename = "S_y")]
    Y,
}

impl fmt::Display for SdfAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Z => "S_z",
            Self::Y => "S_y",
        })
    }
}

/// One spectral line of the state-dependent force, offset m·δ from ω_g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfLine {
    pub m: i32,
    /// m·δ, rad/μs.
    pub frequency_offset: f64,
    /// J_|m|(modulation index).
    pub weight: f64,
    pub spin_axis: SdfAxis,
}

/// Lines m = −n_max..=n_max with Bessel weights; even lines act on S_z, odd
/// lines on S_y.
pub fn sdf_spectrum(modulation_index: f64, delta: f64, n_max: usize) -> Result<Vec<SdfLine>> {
    if n_max < 1 {
        return Err(Error::InvalidParameter(
            "sideband cutoff n_max must be >= 1".into(),
        ));
    }
    let j = bessel_j_all(n_max, modulation_index)?;
    let n = n_max as i32;
    Ok((-n..=n)
        .map(|m| {
            let k = m.unsigned_abs() as usize;
            SdfLine {
                m,
                frequency_offset: m as f64 * delta,
                weight: j[k],
                spin_axis: if k % 2 == 0 { SdfAxis::Z } else { SdfAxis::Y },
            }
        })
        .collect())
}

/// CSV with columns `m, offset_hz, weight, axis`.
pub fn write_spectrum_csv<W: Write>(lines: &[SdfLine], mut w: W) -> io::Result<()> {
    writeln!(w, "m,offset_hz,weight,axis")?;
    for l in lines {
        writeln!(
            w,
            "{},{:.6},{:.15e},{}",
            l.m,
            rad_per_us_to_hz(l.frequency_offset),
            l.weight,
            l.spin_axis
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::J0_FIRST_ZERO;
    use crate::ramps::DetuningRamp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_schedule(rabi_g: f64) -> PulseSchedule {
        let mut p = GateParams::reference();
        p.rabi_g = rabi_g;
        p.flat_top = 20.0;
        p.tau_g = 5.0;
        p.tau_mu = 20.0;
        let ramp =
            DetuningRamp::adiabatic_with_duration(p.detuning_far, p.detuning_near, 25.0).unwrap();
        PulseSchedule::build(&p, &ramp).unwrap()
    }

    fn single(s: &PulseSchedule, dim: usize) -> (Vec<ModeSpec>, HilbertSpec) {
        let modes = vec![ModeSpec::gate_mode(s.params(), dim)];
        (modes, HilbertSpec::two_spins(vec![dim]).unwrap())
    }

    #[test]
    fn zero_drive_is_zero() {
        let s = small_schedule(0.0);
        let (mut modes, spec) = single(&s, 4);
        modes[0].rabi_g = 0.0;
        let mut p = s.params().clone();
        p.mod_index = 0.0;
        let s0 = PulseSchedule::build(&p, s.ramp()).unwrap();
        let h = ion_frame_hamiltonian(&s0, &modes, &spec, ArmTiming::first()).unwrap();
        for t in [0.0, 13.0, 40.0] {
            assert_eq!(h.matrix_at(t).nnz(), 0);
        }
    }

    #[test]
    fn hermitian_at_random_times() {
        let s = small_schedule(0.05);
        let (modes, spec) = single(&s, 5);
        let hams = [
            ion_frame_hamiltonian(&s, &modes, &spec, ArmTiming::first()).unwrap(),
            bichromatic_frame_hamiltonian(&s, &modes, &spec, 5, ArmTiming::first()).unwrap(),
            gate_hamiltonian_truncated(&s, &modes[0], &spec, ArmTiming::first()).unwrap(),
            gate_hamiltonian_rwa(
                &s,
                &modes,
                &spec,
                ArmTiming::new(1, PhaseContinuity::Continuous),
            )
            .unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for h in &hams {
            for _ in 0..1000 {
                let t = rng.random_range(0.0..s.t_f());
                assert!(h.hermiticity_defect(t) < 1e-12);
            }
        }
    }

    #[test]
    fn truncated_is_j2_part_of_bichromatic() {
        let s = small_schedule(0.05);
        let (modes, spec) = single(&s, 4);
        let timing = ArmTiming::new(1, PhaseContinuity::Continuous);
        let full = bichromatic_frame_filtered(&s, &modes, &spec, 3, timing, |k| k == 2).unwrap();
        let trunc = gate_hamiltonian_truncated(&s, &modes[0], &spec, timing).unwrap();
        for k in 0..200 {
            let t = s.t_f() * k as f64 / 200.0;
            let diff = full.matrix_at(t).max_abs_diff(&trunc.matrix_at(t)).unwrap();
            assert!(diff < 1e-14, "t = {t}: {diff}");
        }
    }

    #[test]
    fn jacobi_anger_series_matches_direct() {
        let (z, d) = (2.1, 5.6);
        let j = bessel_j_all(40, z).unwrap();
        for k in 0..50 {
            let t = 0.037 * k as f64;
            let mut c = j[0];
            let mut s = 0.0;
            for n in 1..=20 {
                c += 2.0 * j[2 * n] * (2.0 * n as f64 * d * t).cos();
                s += 2.0 * j[2 * n - 1] * ((2 * n - 1) as f64 * d * t).sin();
            }
            assert!((c - (z * (d * t).sin()).cos()).abs() < 1e-10);
            assert!((s - (z * (d * t).sin()).sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn carrier_suppressed_at_j0_zero() {
        let mut p = GateParams::reference();
        p.mod_index = J0_FIRST_ZERO;
        p.tau_g = 5.0;
        p.tau_mu = 20.0;
        p.flat_top = 10.0;
        let ramp = DetuningRamp::none(p.detuning_far, p.detuning_near).unwrap();
        let s = PulseSchedule::build(&p, &ramp).unwrap();
        let (modes, spec) = single(&s, 3);
        let h = bichromatic_frame_filtered(&s, &modes, &spec, 1, ArmTiming::first(), |k| k == 0)
            .unwrap();
        let t = 0.5 * s.t_f();
        let c = h.coefficients(t);
        let carrier = 2.0 * p.rabi_g;
        assert!(c[0].norm() / carrier < 1e-4);
    }

    #[test]
    fn peak_effective_coupling() {
        let mut p = GateParams::reference();
        p.rabi_g = 2.0 * PI * 1e-3;
        p.flat_top = 10.0;
        let ramp = DetuningRamp::none(p.detuning_far, p.detuning_near).unwrap();
        let s = PulseSchedule::build(&p, &ramp).unwrap();
        let ratio = s.rabi_phi(0.5 * s.t_f()) / p.rabi_g;
        assert!((ratio - 0.4318).abs() < 1e-4, "{ratio}");
        assert_eq!(s.rabi_phi(0.0), 0.0);
    }

    #[test]
    fn rwa_phase_tracks_schedule() {
        let s = small_schedule(0.05);
        let (modes, spec) = single(&s, 3);
        let h = gate_hamiltonian_rwa(&s, &modes, &spec, ArmTiming::first()).unwrap();
        let drive = &h.sz_drive().unwrap().drive;
        for k in 0..50 {
            let t = s.t_f() * k as f64 / 50.0;
            let expect = s.resonant_drive(t);
            assert!((drive(t) - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn spectrum_lines() {
        let lines = sdf_spectrum(2.405, 2.0 * PI * 0.894, 5).unwrap();
        assert_eq!(lines.len(), 11);
        let carrier = lines.iter().find(|l| l.m == 0).unwrap();
        assert!(carrier.weight.abs() < 2e-4);
        let m2 = lines.iter().find(|l| l.m == 2).unwrap();
        assert!((m2.weight - 0.4318).abs() < 1e-4);
        assert!(lines
            .iter()
            .all(|l| (l.m % 2 == 0) == (l.spin_axis == SdfAxis::Z)));
        let zero = sdf_spectrum(0.0, 1.0, 3).unwrap();
        assert!(zero.iter().all(|l| (l.m == 0) == (l.weight != 0.0)));
        assert!(sdf_spectrum(2.4, 1.0, 0).is_err());
        let mut buf = Vec::new();
        write_spectrum_csv(&lines, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("m,offset_hz,weight,axis\n-5,"));
        assert!(text.contains("\n2,1788000.000000,"));
    }

    #[test]
    fn mode_checks() {
        let s = small_schedule(0.05);
        let (modes, _) = single(&s, 4);
        let wrong = HilbertSpec::two_spins(vec![5]).unwrap();
        assert!(ion_frame_hamiltonian(&s, &modes, &wrong, ArmTiming::first()).is_err());
        let two = HilbertSpec::two_spins(vec![4, 4]).unwrap();
        assert!(matches!(
            gate_hamiltonian_truncated(&s, &modes[0], &two, ArmTiming::first()),
            Err(Error::Unsupported(_))
        ));
        assert!(bichromatic_frame_hamiltonian(
            &s,
            &modes,
            &HilbertSpec::two_spins(vec![4]).unwrap(),
            0,
            ArmTiming::first()
        )
        .is_err());
    }

    #[test]
    fn four_mode_defaults() {
        let p = GateParams::reference();
        let modes = ModeSpec::four_mode_set(&p, 8, 3);
        assert_eq!(modes.len(), 4);
        assert_eq!(modes[0].label, "r,OP");
        let gate_mhz = rad_per_us_to_hz(modes[0].omega_m0) * 1e-6;
        assert!((gate_mhz - 6.803).abs() < 1e-9);
    }
}
