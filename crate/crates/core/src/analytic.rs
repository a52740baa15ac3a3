//! Bessel, Anger and Weber functions and the closed-form displacement model
//! for a constant-amplitude gate with a sine-squared detuning sweep.
//!
//! Detunings here are ordinary frequencies in MHz (cycles/μs), times in μs
//! and Ω_φ in rad/μs, so μ = (d_f + d_n)t_f/2 is dimensionless.

use std::f64::consts::PI;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::quadrature::{integrate, QuadOptions, GL10_NODES, GL10_WEIGHTS};
use crate::ramps::PulseSchedule;
use crate::units::s_to_us;
use crate::{Error, Result, C64};

/// Largest |x| accepted by [`bessel_j`].
pub const BESSEL_MAX_ARG: f64 = 50.0;

/// First zero of J₀.
pub const J0_FIRST_ZERO: f64 = 2.404_825_557_695_773;

fn bessel_series(n: usize, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    for k in 1..=n {
        term *= half / k as f64;
    }
    let mut sum = term;
    let q = -half * half;
    for k in 1..60 {
        term *= q / (k as f64 * (k + n) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// J₀(x), …, J_{n_max}(x) by Miller's backward recurrence normalized with
/// J₀ + 2ΣJ_{2k} = 1.
pub fn bessel_j_all(n_max: usize, x: f64) -> Result<Vec<f64>> {
    if !x.is_finite() || x.abs() > BESSEL_MAX_ARG {
        return Err(Error::OutOfRange {
            x,
            range: "|x| <= 50",
        });
    }
    let ax = x.abs();
    let mut out = vec![0.0; n_max + 1];
    if ax <= 1.0 {
        for (n, v) in out.iter_mut().enumerate() {
            *v = bessel_series(n, ax);
        }
    } else {
        let top = (n_max as f64).max(ax);
        let mut start = (top + 15.0 + (40.0 * top).sqrt()) as usize;
        start += start % 2;
        let (mut jp1, mut j) = (0.0f64, 1e-300f64);
        let mut norm = 0.0;
        for k in (1..=start).rev() {
            // j holds J_k, jp1 holds J_{k+1}.
            let jm1 = 2.0 * k as f64 / ax * j - jp1;
            jp1 = j;
            j = jm1;
            let k1 = k - 1;
            if k1 <= n_max {
                out[k1] = j;
            }
            if k1 % 2 == 0 && k1 > 0 {
                norm += 2.0 * j;
            }
            if j.abs() > 1e250 {
                let s = 1e-250;
                j *= s;
                jp1 *= s;
                norm *= s;
                out.iter_mut().for_each(|v| *v *= s);
            }
        }
        norm += j;
        out.iter_mut().for_each(|v| *v /= norm);
    }
    if x < 0.0 {
        for (n, v) in out.iter_mut().enumerate() {
            if n % 2 == 1 {
                *v = -*v;
            }
        }
    }
    Ok(out)
}

/// Bessel function of the first kind J_n(x) for |x| ≤ 50.
pub fn bessel_j(n: usize, x: f64) -> Result<f64> {
    Ok(bessel_j_all(n, x)?[n])
}

fn anger_weber_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-14,
        max_intervals: 20_000,
    }
}

/// Anger function 𝐉_ν(x) = (1/π)∫₀^π cos(νθ − x sin θ)dθ.
pub fn anger_j(nu: f64, x: f64) -> Result<f64> {
    if !nu.is_finite() || !x.is_finite() {
        return Err(Error::InvalidParameter(
            "Anger function needs finite arguments".into(),
        ));
    }
    let r = integrate(
        |th| (nu * th - x * th.sin()).cos(),
        0.0,
        PI,
        anger_weber_opts(),
    )?;
    Ok(r.value / PI)
}

/// Weber function 𝐄_ν(x) = (1/π)∫₀^π sin(νθ − x sin θ)dθ.
pub fn weber_e(nu: f64, x: f64) -> Result<f64> {
    if !nu.is_finite() || !x.is_finite() {
        return Err(Error::InvalidParameter(
            "Weber function needs finite arguments".into(),
        ));
    }
    let r = integrate(
        |th| (nu * th - x * th.sin()).sin(),
        0.0,
        PI,
        anger_weber_opts(),
    )?;
    Ok(r.value / PI)
}

/// Constant-amplitude sine-squared sweep from d_f to d_n and back over t_f.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticParams {
    /// Ω_φ = Ω_g J₂(4Ω_μ/δ), rad/μs.
    pub omega_phi: f64,
    /// Far detuning, MHz.
    pub d_f: f64,
    /// Near detuning, MHz.
    pub d_n: f64,
    /// Arm duration, μs.
    pub t_f: f64,
}

impl AnalyticParams {
    pub fn new(omega_phi: f64, d_f: f64, d_n: f64, t_f: f64) -> Result<Self> {
        if ![omega_phi, d_f, d_n, t_f].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite analytic parameter".into(),
            ));
        }
        if !(d_f >= d_n && d_n > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need d_f >= d_n > 0 (got {d_f}, {d_n})"
            )));
        }
        if t_f <= 0.0 {
            return Err(Error::InvalidParameter("t_f must be positive".into()));
        }
        Ok(Self {
            omega_phi,
            d_f,
            d_n,
            t_f,
        })
    }

    /// From rad/s, Hz and seconds.
    pub fn from_si(omega_phi_rad_s: f64, d_f_hz: f64, d_n_hz: f64, t_f_s: f64) -> Result<Self> {
        Self::new(
            omega_phi_rad_s * 1e-6,
            d_f_hz * 1e-6,
            d_n_hz * 1e-6,
            s_to_us(t_f_s),
        )
    }

    /// μ = (d_f + d_n)t_f/2.
    pub fn mu(&self) -> f64 {
        0.5 * (self.d_f + self.d_n) * self.t_f
    }

    /// λ = (d_f − d_n)/(d_f + d_n).
    pub fn lambda(&self) -> f64 {
        (self.d_f - self.d_n) / (self.d_f + self.d_n)
    }

    /// x = (d_f − d_n)t_f/2 = λμ.
    pub fn x(&self) -> f64 {
        0.5 * (self.d_f - self.d_n) * self.t_f
    }

    /// β with λ = sech β, computed as ln((1 + √(1 − λ²))/λ).
    pub fn beta(&self) -> Result<f64> {
        let l = self.lambda();
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::Regime(format!(
                "sech beta needs 0 < lambda < 1 (lambda = {l})"
            )));
        }
        Ok(((1.0 + (1.0 - l * l).sqrt()) / l).ln())
    }

    /// Detuning Δ(t) = 2π[d_n + (d_f − d_n)cos²(πt/t_f)] in rad/μs.
    pub fn detuning(&self, t: f64) -> f64 {
        let c = (PI * t / self.t_f).cos();
        2.0 * PI * (self.d_n + (self.d_f - self.d_n) * c * c)
    }

    /// ∫₀ᵗ Δ = 2πμ t/t_f + x sin(2πt/t_f).
    pub fn phase(&self, t: f64) -> f64 {
        2.0 * PI * self.mu() * t / self.t_f + self.x() * (2.0 * PI * t / self.t_f).sin()
    }

    /// Drive `Ω_φ e^{iΔφ(t)}` whose integral is the displacement.
    pub fn drive(&self, t: f64) -> C64 {
        C64::from_polar(self.omega_phi, self.phase(t))
    }
}

/// ξ(t_f) = Ω_φ t_f e^{iπμ} 𝐉_μ(λμ).
pub fn displacement_closed_form(p: &AnalyticParams) -> Result<C64> {
    let mu = p.mu();
    Ok(C64::from_polar(p.omega_phi * p.t_f, PI * mu) * anger_j(mu, p.x())?)
}

/// ξ(t_f) = ∫₀^{t_f} Ω_φ e^{iΔφ(t)} dt by adaptive quadrature.
pub fn displacement_numeric(p: &AnalyticParams) -> Result<C64> {
    if p.omega_phi == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    let scale = p.omega_phi.abs() * p.t_f;
    let opts = QuadOptions {
        abs_tol: 1e-14 * scale,
        rel_tol: 1e-14,
        max_intervals: 20_000,
    };
    let mut xi = C64::new(0.0, 0.0);
    // Split at the midpoint where the sweep turns around.
    for (a, b) in [(0.0, 0.5 * p.t_f), (0.5 * p.t_f, p.t_f)] {
        let re = integrate(|t| p.drive(t).re, a, b, opts)?;
        let im = integrate(|t| p.drive(t).im, a, b, opts)?;
        xi += C64::new(re.value, im.value);
    }
    Ok(xi)
}

/// Resonant-term displacement of a full schedule, ∫ Ω_φ(t) e^{iΔφ(t)} dt.
pub fn displacement_numeric_schedule(schedule: &PulseSchedule) -> Result<C64> {
    let t_f = schedule.t_f();
    let scale = schedule.params().rabi_g.abs() * t_f;
    if scale == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    let opts = QuadOptions {
        abs_tol: 1e-14 * scale,
        rel_tol: 1e-14,
        max_intervals: 50_000,
    };
    let mut xi = C64::new(0.0, 0.0);
    for w in schedule.breakpoints().windows(2) {
        let re = integrate(|t| schedule.resonant_drive(t).re, w[0], w[1], opts)?;
        let im = integrate(|t| schedule.resonant_drive(t).im, w[0], w[1], opts)?;
        xi += C64::new(re.value, im.value);
    }
    Ok(xi)
}

/// Leading Debye term √(t_f/(2π√(d_f d_n)))·exp(t_f(√(d_f d_n) − (d_f + d_n)atanh√(d_n/d_f))).
pub fn debye_term(p: &AnalyticParams) -> Result<f64> {
    if !(p.d_f > p.d_n) {
        return Err(Error::Regime("Debye term needs d_f > d_n strictly".into()));
    }
    let g = (p.d_f * p.d_n).sqrt();
    let r = (p.d_n / p.d_f).sqrt();
    // atanh r = ½ ln((1 + r)/(1 − r)), guarded by d_n < d_f.
    let atanh = 0.5 * ((1.0 + r) / (1.0 - r)).ln();
    Ok((p.t_f / (2.0 * PI * g)).sqrt() * (p.t_f * (g - (p.d_f + p.d_n) * atanh)).exp())
}

/// Large-μ form Ω_φ e^{iπμ}[Debye term + sin(πμ)/(π d_f)].
pub fn displacement_asymptotic(p: &AnalyticParams) -> Result<C64> {
    let mu = p.mu();
    if mu < 5.0 {
        return Err(Error::Regime(format!(
            "asymptotic form needs mu >= 5 (mu = {mu:.3})"
        )));
    }
    if mu < 20.0 {
        warn!("asymptotic displacement used at mu = {mu:.2} < 20");
    }
    let bracket = debye_term(p)? + (PI * mu).sin() / (PI * p.d_f);
    Ok(C64::from_polar(p.omega_phi, PI * mu) * bracket)
}

/// Worst case over μ of the non-Debye part of |ξ|: Ω_φ/(π d_f).
pub fn displacement_envelope(p: &AnalyticParams) -> f64 {
    p.omega_phi.abs() / (PI * p.d_f)
}

/// Displacement and geometric phase accumulated by a drive `g(t)` under
/// `H = S (g a† + g* a)` per unit spin eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopIntegral {
    /// ξ = ∫ g dt.
    pub xi: C64,
    /// θ = ∫ Im(ξ* ξ̇) dt.
    pub theta: f64,
}

/// Integrates ξ and θ panel by panel with nested 10-point Gauss rules.
///
/// `breaks` must include every point where `g` has a derivative jump;
/// panels are further split to at most `max_panel`.
pub fn loop_integral<G: Fn(f64) -> C64>(g: G, breaks: &[f64], max_panel: f64) -> LoopIntegral {
    let mut xi = C64::new(0.0, 0.0);
    let mut theta = 0.0;
    for w in breaks.windows(2) {
        let (a0, b0) = (w[0], w[1]);
        if b0 <= a0 {
            continue;
        }
        let n = ((b0 - a0) / max_panel).ceil().max(1.0) as usize;
        for k in 0..n {
            let a = a0 + (b0 - a0) * k as f64 / n as f64;
            let b = if k + 1 == n {
                b0
            } else {
                a0 + (b0 - a0) * (k + 1) as f64 / n as f64
            };
            let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
            let mut panel = C64::new(0.0, 0.0);
            for (x, wgt) in GL10_NODES.iter().zip(GL10_WEIGHTS.iter()) {
                for t in [c - h * x, c + h * x] {
                    let gt = g(t);
                    let inner = gl10_complex(&g, a, t);
                    theta += wgt * h * ((xi + inner).conj() * gt).im;
                    panel += gt * (wgt * h);
                }
            }
            xi += panel;
        }
    }
    LoopIntegral { xi, theta }
}

fn gl10_complex<G: Fn(f64) -> C64>(g: &G, a: f64, b: f64) -> C64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    let mut s = C64::new(0.0, 0.0);
    for (x, w) in GL10_NODES.iter().zip(GL10_WEIGHTS.iter()) {
        s += (g(c - h * x) + g(c + h * x)) * *w;
    }
    s * h
}

/// Panel length for a drive whose phase advances at most `max_rate` rad/μs.
pub fn panel_for_rate(max_rate: f64) -> f64 {
    (1.5 / max_rate.abs().max(1e-9)).min(2.0)
}

/// θ(t_f) of the constant-amplitude sine-squared arm.
pub fn geometric_phase(p: &AnalyticParams) -> f64 {
    let rate = 2.0 * PI * p.d_f;
    loop_integral(
        |t| p.drive(t),
        &[0.0, 0.5 * p.t_f, p.t_f],
        panel_for_rate(rate),
    )
    .theta
}

/// θ(t_f) of a full schedule's resonant term.
pub fn geometric_phase_schedule(schedule: &PulseSchedule) -> f64 {
    let p = schedule.params();
    let rate = p.detuning_far + p.epsilon.abs();
    loop_integral(
        |t| schedule.resonant_drive(t),
        &schedule.breakpoints(),
        panel_for_rate(rate),
    )
    .theta
}

/// Residual infidelity (8/5)|ξ|²(2n + 1).
pub fn residual_infidelity(xi: C64, n: usize) -> f64 {
    if xi.norm() > 0.3 {
        warn!(
            "residual infidelity law used outside |xi| << 1 (|xi| = {:.3})",
            xi.norm()
        );
    }
    1.6 * xi.norm_sqr() * (2 * n + 1) as f64
}

/// All displacement paths for one parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementResult {
    pub xi_exact: C64,
    pub xi_numeric: C64,
    /// `None` when μ < 5 or d_f = d_n.
    pub xi_asymptotic: Option<C64>,
    pub envelope: f64,
    pub theta: f64,
}

impl DisplacementResult {
    pub fn evaluate(p: &AnalyticParams) -> Result<Self> {
        Ok(Self {
            xi_exact: displacement_closed_form(p)?,
            xi_numeric: displacement_numeric(p)?,
            xi_asymptotic: displacement_asymptotic(p).ok(),
            envelope: displacement_envelope(p),
            theta: geometric_phase(p),
        })
    }

    pub fn infidelity_estimate(&self, n: usize) -> f64 {
        residual_infidelity(self.xi_exact, n)
    }
}

/// Integrates a drive with constant Ω and Δ in closed form: Ω(e^{iΔt} − 1)/(iΔ).
pub fn constant_detuning_displacement(omega: f64, delta: f64, t: f64) -> C64 {
    if delta == 0.0 {
        return C64::new(omega * t, 0.0);
    }
    let i = C64::new(0.0, 1.0);
    (C64::from_polar(1.0, delta * t) - 1.0) * omega / (i * delta)
}
