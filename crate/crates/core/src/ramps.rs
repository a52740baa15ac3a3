//! Amplitude envelopes, detuning ramps and the single-arm pulse schedule.
//!
//! All quantities use μs and rad/μs.

use std::f64::consts::PI;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::analytic::bessel_j;
use crate::quadrature::{gauss_legendre_10, integrate, QuadOptions};
use crate::units::{rad_per_us_to_rad_per_s, us_to_s};
use crate::{Error, Result, C64};

/// 4-term Blackman–Harris coefficients.
pub const BH_COEFFS: [f64; 4] = [0.35875, 0.48829, 0.14128, 0.01168];

/// Smoothed fraction of the core ramp replaced at each end.
const SMOOTH_FRACTION: f64 = 0.1;
const SMOOTH_STEP: f64 = 0.05;
const ADIABATIC_GRID: usize = 10_000;
/// Longest panel of the cached phase table.
const PHASE_PANEL: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    On,
    Off,
}

fn bh_window(x: f64) -> f64 {
    let [a0, a1, a2, a3] = BH_COEFFS;
    let p = 2.0 * PI * x;
    a0 - a1 * p.cos() + a2 * (2.0 * p).cos() - a3 * (3.0 * p).cos()
}

fn bh_window_derivative(x: f64) -> f64 {
    let [_, a1, a2, a3] = BH_COEFFS;
    let p = 2.0 * PI * x;
    2.0 * PI * (a1 * p.sin() - 2.0 * a2 * (2.0 * p).sin() + 3.0 * a3 * (3.0 * p).sin())
}

/// Rising half of the window on `r ∈ [0, 1]`, rescaled to span exactly [0, 1].
fn bh_rise(r: f64) -> f64 {
    let w0 = bh_window(0.0);
    let w1 = bh_window(0.5);
    (bh_window(0.5 * r) - w0) / (w1 - w0)
}

/// `d/dr` of [`bh_rise`].
fn bh_rise_derivative(r: f64) -> f64 {
    0.5 * bh_window_derivative(0.5 * r) / (bh_window(0.5) - bh_window(0.0))
}

/// Blackman–Harris turn-on (or turn-off) amplitude at time `t` of a ramp of
/// length `tau`.
pub fn blackman_harris_ramp(t: f64, tau: f64, direction: Direction) -> Result<f64> {
    if !(tau >= 0.0) || !(t >= 0.0 && t <= tau) {
        return Err(Error::OutOfRange {
            x: t,
            range: "[0, tau]",
        });
    }
    let r = if tau == 0.0 { 1.0 } else { t / tau };
    Ok(match direction {
        Direction::On => bh_rise(r),
        Direction::Off => bh_rise(1.0 - r),
    })
}

/// How a detuning offset ε enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    /// δ → δ + ε/2, moving the ω_g + 2δ resonance by ε.
    #[default]
    DriveDetuning,
    /// Every motional frequency shifted by −ε.
    MotionalShift,
}

/// Physical gate parameters in internal units (rad/μs, μs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// Qubit angular frequency ω₀.
    pub omega_0: f64,
    /// Gradient drive angular frequency ω_g.
    pub omega_g: f64,
    /// Bichromatic detuning δ.
    pub delta: f64,
    /// Peak gradient Rabi rate Ω_g.
    pub rabi_g: f64,
    /// Peak modulation index 4Ω_μ/δ.
    pub mod_index: f64,
    /// Far detuning Δ₀.
    pub detuning_far: f64,
    /// Near detuning Δ₁.
    pub detuning_near: f64,
    pub alpha: f64,
    pub tau_g: f64,
    pub tau_mu: f64,
    pub flat_top: f64,
    /// Detuning offset ε.
    pub epsilon: f64,
    #[serde(default)]
    pub epsilon_mode: EpsilonMode,
}

/// Gradient Rabi rate (rad/μs) that gives θ_total = π/8 for the 50 μs ramp
/// configuration with a 527 μs arm. Regenerate with
/// `experiments::infer_rabi_g`.
pub const REFERENCE_RABI_G: f64 = 0.015_628_832_600_162_61;

impl GateParams {
    /// Parameters of the experiment: ω_g = 2π·5 MHz, δ = 2π·894 kHz,
    /// 4Ω_μ/δ = 2.405, Δ₀ = 2π·153.5 kHz, Δ₁ = 2π·15 kHz, 10 μs and 30 μs
    /// amplitude ramps, and the 347 μs flat top of the 50 μs ramp gate.
    pub fn reference() -> Self {
        let two_pi = 2.0 * PI;
        Self {
            omega_0: two_pi * 596.0,
            omega_g: two_pi * 5.0,
            delta: two_pi * 0.894,
            rabi_g: REFERENCE_RABI_G,
            mod_index: 2.405,
            detuning_far: two_pi * 0.1535,
            detuning_near: two_pi * 0.015,
            alpha: 0.2,
            tau_g: 10.0,
            tau_mu: 30.0,
            flat_top: 347.0,
            epsilon: 0.0,
            epsilon_mode: EpsilonMode::DriveDetuning,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.omega_0,
            self.omega_g,
            self.delta,
            self.rabi_g,
            self.mod_index,
            self.detuning_far,
            self.detuning_near,
            self.alpha,
            self.tau_g,
            self.tau_mu,
            self.flat_top,
            self.epsilon,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite gate parameter".into()));
        }
        if !(self.detuning_far > self.detuning_near && self.detuning_near > 0.0) {
            return Err(Error::InvalidParameter("need Delta_0 > Delta_1 > 0".into()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::InvalidParameter("alpha must be positive".into()));
        }
        if self.tau_g < 0.0 || self.tau_mu < 0.0 || self.flat_top < 0.0 {
            return Err(Error::InvalidParameter(
                "durations must be non-negative".into(),
            ));
        }
        if self.mod_index < 0.0 || self.delta <= 0.0 || self.omega_g <= 0.0 {
            return Err(Error::InvalidParameter(
                "need modulation index >= 0 and positive drive frequencies".into(),
            ));
        }
        Ok(())
    }

    /// Peak Ω_μ = index·δ/4.
    pub fn rabi_mu(&self) -> f64 {
        self.mod_index * self.delta / 4.0
    }

    /// Bichromatic detuning used by the Hamiltonian, including ε.
    pub fn delta_eff(&self) -> f64 {
        match self.epsilon_mode {
            EpsilonMode::DriveDetuning => self.delta + 0.5 * self.epsilon,
            EpsilonMode::MotionalShift => self.delta,
        }
    }

    /// Nominal resonance ω_g + 2δ.
    pub fn omega_ref(&self) -> f64 {
        self.omega_g + 2.0 * self.delta
    }

    /// Shift applied to every motional frequency.
    pub fn motional_shift(&self) -> f64 {
        match self.epsilon_mode {
            EpsilonMode::DriveDetuning => 0.0,
            EpsilonMode::MotionalShift => -self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampProfile {
    /// Constant-adiabaticity core with quintic endpoint smoothing.
    Adiabatic,
    /// Δ₁ + (Δ₀ − Δ₁)cos²(πs/2τ).
    SineSquared,
    /// No motional ramp: Δ = Δ₁ throughout.
    None,
}

/// Detuning ramp from Δ₀ down to Δ₁.
///
/// The adiabatic profile is built in `u = 1/Δ`, where the constant-α core is
/// the line `u = 1/Δ₀ + α s` and `|Δ′/Δ²| = |u′|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetuningRamp {
    pub profile: RampProfile,
    pub delta_0: f64,
    pub delta_1: f64,
    pub alpha: f64,
    pub tau_m_base: f64,
    pub tau_m_total: f64,
    pub knots: Vec<(f64, f64)>,
    /// Junction slope ratio of the quintic segments (segment length over
    /// replaced core length).
    slope_ratio: f64,
}

/// Quintic with p(0) = p′(0) = p″(0) = 0, p(1) = 1, p′(1) = m, p″(1) = 0.
fn quintic(m: f64, s: f64) -> (f64, f64) {
    let a = 10.0 - 4.0 * m;
    let b = 7.0 * m - 15.0;
    let c = 6.0 - 3.0 * m;
    let p = s * s * s * (a + s * (b + s * c));
    let dp = s * s * (3.0 * a + s * (4.0 * b + s * 5.0 * c));
    (p, dp)
}

fn check_detunings(delta_0: f64, delta_1: f64) -> Result<()> {
    if !(delta_0.is_finite() && delta_1.is_finite() && delta_0 > delta_1 && delta_1 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ramp needs Delta_0 > Delta_1 > 0 (got {delta_0}, {delta_1})"
        )));
    }
    Ok(())
}

impl DetuningRamp {
    /// Constant-adiabaticity ramp with smoothed endpoints.
    pub fn adiabatic(delta_0: f64, delta_1: f64, alpha: f64) -> Result<Self> {
        check_detunings(delta_0, delta_1)?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive (got {alpha})"
            )));
        }
        for k in 0..=400 {
            let ramp =
                Self::adiabatic_with_ratio(delta_0, delta_1, alpha, 1.0 + SMOOTH_STEP * k as f64);
            if ramp.max_adiabaticity_on_grid(ADIABATIC_GRID) <= alpha * (1.0 + 1e-12) {
                return Ok(ramp);
            }
        }
        Err(Error::InvalidParameter(
            "endpoint smoothing failed to satisfy the alpha bound".into(),
        ))
    }

    /// Adiabatic ramp whose smoothed duration equals `total`.
    pub fn adiabatic_with_duration(delta_0: f64, delta_1: f64, total: f64) -> Result<Self> {
        check_detunings(delta_0, delta_1)?;
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ramp duration must be positive (got {total})"
            )));
        }
        // The accepted slope ratio does not depend on α, so find it once on a
        // unit-α ramp and solve τ_total = (1/Δ₁ − 1/Δ₀)(0.8 + 0.2m)/α.
        let m = Self::adiabatic(delta_0, delta_1, 1.0)?.slope_ratio;
        let span = 1.0 / delta_1 - 1.0 / delta_0;
        let alpha = span * (1.0 - 2.0 * SMOOTH_FRACTION + 2.0 * SMOOTH_FRACTION * m) / total;
        let ramp = Self::adiabatic_with_ratio(delta_0, delta_1, alpha, m);
        if ramp.max_adiabaticity_on_grid(ADIABATIC_GRID) > alpha * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(
                "rescaled ramp violates the alpha bound".into(),
            ));
        }
        Ok(ramp)
    }

    fn adiabatic_with_ratio(delta_0: f64, delta_1: f64, alpha: f64, m: f64) -> Self {
        let tau_base = (delta_0 - delta_1) / (alpha * delta_0 * delta_1);
        let c1 = SMOOTH_FRACTION * tau_base;
        let c2 = tau_base - c1;
        let len = m * c1;
        let total = 2.0 * len + (c2 - c1);
        let core = |s: f64| delta_0 / (1.0 + alpha * delta_0 * s);
        let knots = vec![
            (0.0, delta_0),
            (len, core(c1)),
            (len + c2 - c1, core(c2)),
            (total, delta_1),
        ];
        Self {
            profile: RampProfile::Adiabatic,
            delta_0,
            delta_1,
            alpha,
            tau_m_base: tau_base,
            tau_m_total: total,
            knots,
            slope_ratio: m,
        }
    }

    /// Sine-squared ramp of duration `tau`.
    pub fn sine_squared(delta_0: f64, delta_1: f64, tau: f64) -> Result<Self> {
        check_detunings(delta_0, delta_1)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ramp duration must be positive (got {tau})"
            )));
        }
        // max |u′| occurs where d/ds(Δ′/Δ²) = 0; report the grid maximum.
        let mut ramp = Self {
            profile: RampProfile::SineSquared,
            delta_0,
            delta_1,
            alpha: 0.0,
            tau_m_base: tau,
            tau_m_total: tau,
            knots: vec![(0.0, delta_0), (tau, delta_1)],
            slope_ratio: 1.0,
        };
        ramp.alpha = ramp.max_adiabaticity_on_grid(ADIABATIC_GRID);
        Ok(ramp)
    }

    /// No motional ramp.
    pub fn none(delta_0: f64, delta_1: f64) -> Result<Self> {
        check_detunings(delta_0, delta_1)?;
        Ok(Self {
            profile: RampProfile::None,
            delta_0,
            delta_1,
            alpha: 0.0,
            tau_m_base: 0.0,
            tau_m_total: 0.0,
            knots: Vec::new(),
            slope_ratio: 1.0,
        })
    }

    /// Unsmoothed core Δ₀/(1 + αΔ₀s).
    pub fn core_detuning(&self, s: f64) -> f64 {
        self.delta_0 / (1.0 + self.alpha * self.delta_0 * s)
    }

    /// `(u, u′)` with `u = 1/Δ` for the adiabatic profile.
    fn inverse_detuning(&self, s: f64) -> (f64, f64) {
        let u0 = 1.0 / self.delta_0;
        let u1 = 1.0 / self.delta_1;
        let len = self.knots[1].0;
        let jump = SMOOTH_FRACTION * self.tau_m_base * self.alpha;
        let m = self.slope_ratio;
        if s <= len {
            let (p, dp) = quintic(m, s / len);
            (u0 + jump * p, jump * dp / len)
        } else if s < self.tau_m_total - len {
            (u0 + jump + self.alpha * (s - len), self.alpha)
        } else {
            let (p, dp) = quintic(m, (self.tau_m_total - s) / len);
            (u1 - jump * p, jump * dp / len)
        }
    }

    /// Δ(s) for `s ∈ [0, τ_m_total]` (clamped outside).
    pub fn detuning(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.tau_m_total);
        match self.profile {
            RampProfile::None => self.delta_1,
            RampProfile::SineSquared => {
                let c = (PI * s / (2.0 * self.tau_m_total)).cos();
                self.delta_1 + (self.delta_0 - self.delta_1) * c * c
            }
            RampProfile::Adiabatic => {
                if s >= self.tau_m_total {
                    return self.delta_1;
                }
                1.0 / self.inverse_detuning(s).0
            }
        }
    }

    /// dΔ/ds.
    pub fn rate(&self, s: f64) -> f64 {
        if !(0.0..=self.tau_m_total).contains(&s) {
            return 0.0;
        }
        match self.profile {
            RampProfile::None => 0.0,
            RampProfile::SineSquared => {
                let x = PI * s / self.tau_m_total;
                -(self.delta_0 - self.delta_1) * PI / (2.0 * self.tau_m_total) * x.sin()
            }
            RampProfile::Adiabatic => {
                let (u, du) = self.inverse_detuning(s);
                -du / (u * u)
            }
        }
    }

    /// |Δ′/Δ²| at `s`.
    pub fn adiabaticity(&self, s: f64) -> f64 {
        let d = self.detuning(s);
        (self.rate(s) / (d * d)).abs()
    }

    fn max_adiabaticity_on_grid(&self, n: usize) -> f64 {
        (0..=n)
            .map(|k| self.adiabaticity(self.tau_m_total * k as f64 / n as f64))
            .fold(0.0, f64::max)
    }

    /// Knot times, used as quadrature breakpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.knots.iter().map(|k| k.0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScheduleKind {
    /// Fig. 1(a) arm: sequential amplitude ramps, detuning ramp, flat top and
    /// the time-reversed second half.
    Gate,
    /// Constant amplitudes, Δ(t) = Δ₁ + (Δ₀ − Δ₁)cos²(πt/t_f).
    SineSquaredArm,
}

/// One arm of the gate with cached detuning integral.
#[derive(Debug, Clone)]
pub struct PulseSchedule {
    params: GateParams,
    ramp: DetuningRamp,
    kind: ScheduleKind,
    t_f: f64,
    boundaries: Vec<f64>,
    nodes: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PulseSchedule {
    /// Builds one arm: Ω_g on over τ_g, Ω_μ on over τ_μ at Δ₀, the detuning
    /// ramp, the flat top, then the mirror image.
    pub fn build(params: &GateParams, ramp: &DetuningRamp) -> Result<Self> {
        params.validate()?;
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        if !rel(ramp.delta_0, params.detuning_far) || !rel(ramp.delta_1, params.detuning_near) {
            return Err(Error::InvalidParameter(
                "ramp detunings do not match the gate parameters".into(),
            ));
        }
        let t1 = params.tau_g;
        let t2 = t1 + params.tau_mu;
        let t3 = t2 + ramp.tau_m_total;
        let t4 = t3 + params.flat_top;
        let t5 = t4 + ramp.tau_m_total;
        let t6 = t5 + params.tau_mu;
        let t_f = t6 + params.tau_g;
        if !(t_f > 0.0) {
            return Err(Error::InvalidParameter(
                "arm duration must be positive".into(),
            ));
        }
        let boundaries = vec![0.0, t1, t2, t3, t4, t5, t6, t_f];
        let mut breaks = boundaries.clone();
        for k in ramp.breakpoints() {
            breaks.push(t2 + k);
            breaks.push(t5 - k);
        }
        Ok(Self::with_breaks(
            params.clone(),
            ramp.clone(),
            ScheduleKind::Gate,
            t_f,
            boundaries,
            breaks,
        ))
    }

    /// Constant-amplitude arm with the full sine-squared detuning sweep used
    /// by the closed-form displacement model.
    pub fn sine_squared_arm(params: &GateParams, t_f: f64) -> Result<Self> {
        params.validate()?;
        if !(t_f > 0.0 && t_f.is_finite()) {
            return Err(Error::InvalidParameter(
                "arm duration must be positive".into(),
            ));
        }
        let ramp =
            DetuningRamp::sine_squared(params.detuning_far, params.detuning_near, 0.5 * t_f)?;
        let boundaries = vec![0.0, 0.5 * t_f, t_f];
        let breaks = boundaries.clone();
        Ok(Self::with_breaks(
            params.clone(),
            ramp,
            ScheduleKind::SineSquaredArm,
            t_f,
            boundaries,
            breaks,
        ))
    }

    fn with_breaks(
        params: GateParams,
        ramp: DetuningRamp,
        kind: ScheduleKind,
        t_f: f64,
        boundaries: Vec<f64>,
        mut breaks: Vec<f64>,
    ) -> Self {
        breaks.retain(|t| (0.0..=t_f).contains(t));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let mut nodes = vec![0.0];
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let n = ((b - a) / PHASE_PANEL).ceil().max(1.0) as usize;
            for k in 1..=n {
                nodes.push(if k == n {
                    b
                } else {
                    a + (b - a) * k as f64 / n as f64
                });
            }
        }
        let mut schedule = Self {
            params,
            ramp,
            kind,
            t_f,
            boundaries,
            nodes,
            cumulative: Vec::new(),
        };
        let mut acc = 0.0;
        let mut cumulative = vec![0.0];
        for w in schedule.nodes.windows(2) {
            acc += gauss_legendre_10(|t| schedule.detuning(t), w[0], w[1]);
            cumulative.push(acc);
        }
        schedule.cumulative = cumulative;
        schedule
    }

    pub fn params(&self) -> &GateParams {
        &self.params
    }

    pub fn ramp(&self) -> &DetuningRamp {
        &self.ramp
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    /// Segment boundary times.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Boundaries, ramp knots and phase-table nodes: every point where a
    /// derivative of an envelope may jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.boundaries.clone();
        if self.kind == ScheduleKind::Gate {
            let (t2, t5) = (self.boundaries[2], self.boundaries[5]);
            for k in self.ramp.breakpoints() {
                b.push(t2 + k);
                b.push(t5 - k);
            }
        }
        b.sort_by(f64::total_cmp);
        b.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        b
    }

    /// Time folded onto the first half of the arm, and whether it was mirrored.
    fn fold(&self, t: f64) -> (f64, bool) {
        let t = t.clamp(0.0, self.t_f);
        if t > 0.5 * self.t_f {
            (self.t_f - t, true)
        } else {
            (t, false)
        }
    }

    /// Ω_g(t).
    pub fn rabi_g(&self, t: f64) -> f64 {
        self.params.rabi_g * self.gradient_envelope(t)
    }

    /// Normalized Ω_g envelope in [0, 1].
    pub fn gradient_envelope(&self, t: f64) -> f64 {
        if self.kind == ScheduleKind::SineSquaredArm {
            return 1.0;
        }
        let (s, _) = self.fold(t);
        let tau = self.params.tau_g;
        if s < tau {
            bh_rise(s / tau)
        } else {
            1.0
        }
    }

    /// Ω_μ(t).
    pub fn rabi_mu(&self, t: f64) -> f64 {
        self.params.rabi_mu() * self.bichromatic_envelope(t)
    }

    /// Normalized Ω_μ envelope; zero while Ω_g is still ramping.
    pub fn bichromatic_envelope(&self, t: f64) -> f64 {
        if self.kind == ScheduleKind::SineSquaredArm {
            return 1.0;
        }
        let (s, _) = self.fold(t);
        let (t1, t2) = (self.boundaries[1], self.boundaries[2]);
        if s < t1 {
            0.0
        } else if s < t2 {
            bh_rise((s - t1) / self.params.tau_mu)
        } else {
            1.0
        }
    }

    /// Instantaneous detuning Δ(t) = ω_m(t) − ω_g − 2δ (before any ε).
    pub fn detuning(&self, t: f64) -> f64 {
        let (s, _) = self.fold(t);
        match self.kind {
            ScheduleKind::SineSquaredArm => self.ramp.detuning(s),
            ScheduleKind::Gate => {
                if self.ramp.profile == RampProfile::None {
                    return self.params.detuning_near;
                }
                let (t2, t3) = (self.boundaries[2], self.boundaries[3]);
                if s < t2 {
                    self.params.detuning_far
                } else if s < t3 {
                    self.ramp.detuning(s - t2)
                } else {
                    self.params.detuning_near
                }
            }
        }
    }

    /// dΔ/dt.
    pub fn detuning_rate(&self, t: f64) -> f64 {
        let (s, mirrored) = self.fold(t);
        let rate = match self.kind {
            ScheduleKind::SineSquaredArm => self.ramp.rate(s),
            ScheduleKind::Gate => {
                let (t2, t3) = (self.boundaries[2], self.boundaries[3]);
                if self.ramp.profile != RampProfile::None && s >= t2 && s < t3 {
                    self.ramp.rate(s - t2)
                } else {
                    0.0
                }
            }
        };
        if mirrored {
            -rate
        } else {
            rate
        }
    }

    /// Cached D(t) = ∫₀ᵗ Δ(t′)dt′.
    pub fn detuning_integral(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.t_f);
        let k = match self.nodes.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(k) => return self.cumulative[k],
            Err(k) => k - 1,
        };
        self.cumulative[k] + gauss_legendre_10(|x| self.detuning(x), self.nodes[k], t)
    }

    /// Normalized ramp progress integral G(t) = ∫ g with
    /// g = (Δ − Δ₁)/(Δ₀ − Δ₁).
    pub fn ramp_progress_integral(&self, t: f64) -> f64 {
        let p = &self.params;
        (self.detuning_integral(t) - p.detuning_near * t) / (p.detuning_far - p.detuning_near)
    }

    /// Normalized ramp progress g(t).
    pub fn ramp_progress(&self, t: f64) -> f64 {
        let p = &self.params;
        (self.detuning(t) - p.detuning_near) / (p.detuning_far - p.detuning_near)
    }

    /// Gate-mode frequency ω_m(t).
    pub fn omega_m(&self, t: f64) -> f64 {
        self.params.omega_ref() + self.detuning(t) + self.params.motional_shift()
    }

    /// Accumulated gate-mode phase φ(t) = ∫₀ᵗ ω_m.
    pub fn phi(&self, t: f64) -> f64 {
        (self.params.omega_ref() + self.params.motional_shift()) * t + self.detuning_integral(t)
    }

    /// Resonant-term phase Δφ(t) = φ(t) − (ω_g + 2δ_eff)t = D(t) − εt.
    pub fn delta_phi(&self, t: f64) -> f64 {
        self.detuning_integral(t) - self.params.epsilon * t
    }

    /// Modulation argument 4Ω_μ(t)/δ_eff.
    pub fn modulation_argument(&self, t: f64) -> f64 {
        4.0 * self.rabi_mu(t) / self.params.delta_eff()
    }

    /// Effective SDF strength Ω_φ(t) = Ω_g(t)·J₂(4Ω_μ(t)/δ).
    pub fn rabi_phi(&self, t: f64) -> f64 {
        let j2 = bessel_j(2, self.modulation_argument(t)).expect("modulation index within range");
        self.rabi_g(t) * j2
    }

    /// Resonant-term drive `Ω_φ(t) e^{iΔφ(t)}` whose integral is the
    /// gate-mode displacement.
    pub fn resonant_drive(&self, t: f64) -> C64 {
        C64::from_polar(self.rabi_phi(t), self.delta_phi(t))
    }

    /// Writes `t_s, Omega_g_rad_s, Omega_mu_rad_s, omega_m_rad_s, phi_rad`
    /// sampled at `sample_rate_hz`, always including the final point.
    pub fn write_csv<W: Write>(&self, mut w: W, sample_rate_hz: f64) -> io::Result<()> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "sample rate must be positive",
            ));
        }
        writeln!(w, "t_s,Omega_g_rad_s,Omega_mu_rad_s,omega_m_rad_s,phi_rad")?;
        let dt = 1e6 / sample_rate_hz;
        let n = (self.t_f / dt).floor() as usize;
        let mut times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        if self.t_f - times[n] > 1e-9 * dt {
            times.push(self.t_f);
        }
        for t in times {
            writeln!(
                w,
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                us_to_s(t),
                rad_per_us_to_rad_per_s(self.rabi_g(t)),
                rad_per_us_to_rad_per_s(self.rabi_mu(t)),
                rad_per_us_to_rad_per_s(self.omega_m(t)),
                self.phi(t)
            )?;
        }
        Ok(())
    }
}

/// Output of [`verify_adiabaticity`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticityReport {
    /// max |Δ′/Δ²| on the dense grid.
    pub max_alpha: f64,
    /// |∫ (dΩ_g/dt)/Ω_g e^{−iω_m t} dt| over the gradient turn-on: the
    /// fraction of a hard step's spectral weight left at ω_m.
    pub spectral_guard: f64,
}

/// Dense-grid adiabaticity check plus the spectral guard of the Ω_g ramp.
pub fn verify_adiabaticity(schedule: &PulseSchedule) -> AdiabaticityReport {
    let t_f = schedule.t_f();
    let mut grid: Vec<f64> = (0..=ADIABATIC_GRID)
        .map(|k| t_f * k as f64 / ADIABATIC_GRID as f64)
        .collect();
    if schedule.kind == ScheduleKind::Gate && schedule.ramp.tau_m_total > 0.0 {
        let (t2, t5) = (schedule.boundaries[2], schedule.boundaries[5]);
        let tau = schedule.ramp.tau_m_total;
        for k in 0..=ADIABATIC_GRID {
            let s = tau * k as f64 / ADIABATIC_GRID as f64;
            grid.push(t2 + s);
            grid.push(t5 + s);
        }
    }
    let max_alpha = grid
        .iter()
        .map(|&t| {
            let d = schedule.detuning(t);
            (schedule.detuning_rate(t) / (d * d)).abs()
        })
        .fold(0.0, f64::max);
    AdiabaticityReport {
        max_alpha,
        spectral_guard: spectral_guard(schedule),
    }
}

fn spectral_guard(schedule: &PulseSchedule) -> f64 {
    let tau = schedule.params.tau_g;
    if schedule.kind == ScheduleKind::SineSquaredArm {
        return 1.0;
    }
    if tau == 0.0 {
        return 1.0;
    }
    let w = schedule.omega_m(0.0);
    let opts = QuadOptions {
        abs_tol: 1e-15,
        rel_tol: 1e-10,
        max_intervals: 5_000,
    };
    let re = integrate(
        |t| bh_rise_derivative(t / tau) / tau * (w * t).cos(),
        0.0,
        tau,
        opts,
    );
    let im = integrate(
        |t| -bh_rise_derivative(t / tau) / tau * (w * t).sin(),
        0.0,
        tau,
        opts,
    );
    match (re, im) {
        (Ok(re), Ok(im)) => C64::new(re.value, im.value).norm(),
        _ => f64::NAN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_ramp(alpha: f64) -> DetuningRamp {
        let p = GateParams::reference();
        DetuningRamp::adiabatic(p.detuning_far, p.detuning_near, alpha).unwrap()
    }

    #[test]
    fn blackman_harris_endpoints() {
        assert_eq!(blackman_harris_ramp(5.0, 5.0, Direction::On).unwrap(), 1.0);
        assert!((bh_window(0.0) - 6e-5).abs() < 1e-15);
        assert!(blackman_harris_ramp(0.0, 5.0, Direction::On).unwrap().abs() < 1e-15);
        for k in 0..=20 {
            let t = 0.25 * k as f64;
            let on = blackman_harris_ramp(t, 5.0, Direction::On).unwrap();
            let off = blackman_harris_ramp(5.0 - t, 5.0, Direction::Off).unwrap();
            assert!((on - off).abs() < 1e-15);
        }
        assert!(blackman_harris_ramp(5.1, 5.0, Direction::On).is_err());
        assert!(blackman_harris_ramp(-0.1, 5.0, Direction::On).is_err());
    }

    #[test]
    fn blackman_harris_monotone() {
        let vals: Vec<f64> = (0..=1000)
            .map(|k| blackman_harris_ramp(k as f64 / 1000.0, 1.0, Direction::On).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn base_duration_matches_formula() {
        let r = default_ramp(0.2);
        let two_pi = 2.0 * PI;
        let (d0, d1) = (two_pi * 0.1535, two_pi * 0.015);
        let expect = (1.0 / d1 - 1.0 / d0) / 0.2;
        assert!((r.tau_m_base - expect).abs() < 1e-9);
        assert!((r.tau_m_base - 47.9).abs() < 0.05, "{}", r.tau_m_base);
        assert!(r.tau_m_total >= r.tau_m_base);
        // Core endpoint reaches Δ₁.
        assert!((r.core_detuning(r.tau_m_base) - d1).abs() < 1e-12);
    }

    #[test]
    fn ramp_endpoints_exact() {
        let r = default_ramp(0.2);
        assert_eq!(r.detuning(0.0), r.delta_0);
        assert_eq!(r.detuning(r.tau_m_total), r.delta_1);
        assert_eq!(r.rate(0.0), 0.0);
        assert!(r.rate(r.tau_m_total).abs() < 1e-15);
        assert_eq!(r.knots.first().unwrap().1, r.delta_0);
        assert_eq!(r.knots.last().unwrap(), &(r.tau_m_total, r.delta_1));
    }

    #[test]
    fn core_profile_exactly_alpha() {
        let r = default_ramp(0.2);
        let (a, b) = (r.knots[1].0, r.knots[2].0);
        for k in 1..100 {
            let s = a + (b - a) * k as f64 / 100.0;
            assert!((r.adiabaticity(s) - 0.2).abs() < 1e-12);
        }
        // Unsmoothed core: |Δ′/Δ²| = α by construction.
        let core = |s: f64| r.core_detuning(s);
        for k in 1..50 {
            let s = r.tau_m_base * k as f64 / 50.0;
            let h = 1e-4;
            let d = (core(s + h) - core(s - h)) / (2.0 * h);
            assert!((d.abs() / core(s).powi(2) - 0.2).abs() < 1e-6);
        }
    }

    #[test]
    fn duration_targeted_ramp() {
        let p = GateParams::reference();
        let r =
            DetuningRamp::adiabatic_with_duration(p.detuning_far, p.detuning_near, 50.0).unwrap();
        assert!((r.tau_m_total - 50.0).abs() < 1e-9);
        assert!(r.alpha > 0.2 && r.alpha < 0.3, "{}", r.alpha);
        let again = DetuningRamp::adiabatic(p.detuning_far, p.detuning_near, r.alpha).unwrap();
        assert!((again.tau_m_total - 50.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_ramps_rejected() {
        assert!(DetuningRamp::adiabatic(1.0, 1.0, 0.2).is_err());
        assert!(DetuningRamp::adiabatic(1.0, 0.5, 0.0).is_err());
        assert!(DetuningRamp::adiabatic(-1.0, -2.0, 0.2).is_err());
    }

    fn schedule(tau_m: f64, flat: f64) -> PulseSchedule {
        let mut p = GateParams::reference();
        p.flat_top = flat;
        let ramp = if tau_m == 0.0 {
            DetuningRamp::none(p.detuning_far, p.detuning_near).unwrap()
        } else {
            DetuningRamp::adiabatic_with_duration(p.detuning_far, p.detuning_near, tau_m).unwrap()
        };
        PulseSchedule::build(&p, &ramp).unwrap()
    }

    #[test]
    fn default_arm_duration() {
        let s = schedule(50.0, 347.0);
        assert!((s.t_f() - 527.0).abs() < 1e-9);
        assert_eq!(s.boundaries()[1], 10.0);
        assert_eq!(s.boundaries()[2], 40.0);
    }

    #[test]
    fn sequential_turn_on() {
        let s = schedule(50.0, 347.0);
        for k in 0..100 {
            let t = 10.0 * k as f64 / 100.0;
            assert_eq!(s.rabi_mu(t), 0.0);
            assert_eq!(s.rabi_mu(s.t_f() - t), 0.0);
        }
        assert_eq!(s.rabi_g(0.0), 0.0);
        assert!(s.rabi_g(10.0) == s.params().rabi_g);
    }

    #[test]
    fn time_reversal_symmetry() {
        for s in [
            schedule(50.0, 347.0),
            schedule(0.0, 100.0),
            schedule(300.0, 10.0),
        ] {
            let t_f = s.t_f();
            for k in 0..=500 {
                let t = t_f * k as f64 / 500.0;
                assert!((s.rabi_g(t) - s.rabi_g(t_f - t)).abs() <= 1e-12);
                assert!((s.rabi_mu(t) - s.rabi_mu(t_f - t)).abs() <= 1e-12);
                assert!((s.omega_m(t) - s.omega_m(t_f - t)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn unramped_is_constant_detuning() {
        let s = schedule(0.0, 200.0);
        let d1 = s.params().detuning_near;
        for k in 0..=100 {
            let t = s.t_f() * k as f64 / 100.0;
            assert_eq!(s.detuning(t), d1);
        }
        assert!((s.detuning_integral(s.t_f()) - d1 * s.t_f()).abs() < 1e-10);
        assert_eq!(verify_adiabaticity(&s).max_alpha, 0.0);
    }

    #[test]
    fn phase_integral_accuracy() {
        let s = schedule(50.0, 347.0);
        let opts = QuadOptions {
            abs_tol: 1e-13,
            rel_tol: 1e-15,
            max_intervals: 50_000,
        };
        let mut reference = 0.0;
        let b = s.breakpoints();
        for w in b.windows(2) {
            reference += integrate(|t| s.detuning(t), w[0], w[1], opts)
                .unwrap()
                .value;
        }
        assert!((s.detuning_integral(s.t_f()) - reference).abs() < 1e-10);
        // φ(t_f) equals the time-average of ω_m times t_f.
        let mean_omega = (s.params().omega_ref() * s.t_f() + reference) / s.t_f();
        assert!((s.phi(s.t_f()) - mean_omega * s.t_f()).abs() < 1e-9);
        // Monotone and continuous.
        let mut last = 0.0;
        for k in 1..=2000 {
            let t = s.t_f() * k as f64 / 2000.0;
            let phi = s.phi(t);
            assert!(phi > last);
            last = phi;
        }
        let t = s.boundaries()[3];
        assert!((s.phi(t - 1e-9) - s.phi(t + 1e-9)).abs() < 1e-6);
    }

    #[test]
    fn adiabaticity_of_schedules() {
        let s = schedule(50.0, 347.0);
        let report = verify_adiabaticity(&s);
        assert!(report.max_alpha <= s.ramp().alpha + 1e-6);
        assert!(report.max_alpha > 0.99 * s.ramp().alpha);
        assert!(report.spectral_guard < 1e-3, "{}", report.spectral_guard);
    }

    #[test]
    fn resonance_bookkeeping() {
        let s = schedule(50.0, 347.0);
        let p = s.params();
        for k in 0..=50 {
            let t = s.t_f() * k as f64 / 50.0;
            let delta = s.omega_m(t) - p.omega_g - 2.0 * p.delta;
            assert!((delta - s.detuning(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_export() {
        let s = schedule(50.0, 347.0);
        let mut buf = Vec::new();
        s.write_csv(&mut buf, 1e6).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "t_s,Omega_g_rad_s,Omega_mu_rad_s,omega_m_rad_s,phi_rad"
        );
        assert_eq!(lines.len(), 1 + 528);
        assert!(s.write_csv(Vec::new(), 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn alpha_bound_holds(alpha in 0.05f64..1.5, far in 0.3f64..2.0, ratio in 0.02f64..0.5) {
            let ramp = DetuningRamp::adiabatic(far, far * ratio, alpha).unwrap();
            prop_assert!(ramp.max_adiabaticity_on_grid(20_000) <= alpha * (1.0 + 1e-6));
            prop_assert!(ramp.tau_m_total >= ramp.tau_m_base);
            let vals: Vec<f64> = (0..=500).map(|k| ramp.detuning(ramp.tau_m_total * k as f64 / 500.0)).collect();
            prop_assert!(vals.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
