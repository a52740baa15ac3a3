//! Schrödinger-equation propagation of state vectors and ensembles.

use std::f64::consts::PI;
use std::io::{self, Write};
use std::time::Instant;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{loop_integral, panel_for_rate, LoopIntegral};
use crate::hamiltonian::TimeDependentHamiltonian;
use crate::quadrature::{GL10_NODES, GL10_WEIGHTS};
use crate::quantum::{mode_ladder, DensityMatrix, HilbertSpec, StateVector};
use crate::units::us_to_s;
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Adaptive embedded Runge–Kutta 5(4).
    #[default]
    DormandPrince45,
    /// Fixed-step exponential midpoint rule (order 2).
    MidpointExponential,
    /// Fixed-step fourth-order commutator-free Magnus integrator.
    CommutatorFree4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on the step, μs. Always further capped at 1/20 of the
    /// shortest coefficient period.
    pub max_step: Option<f64>,
    /// Step of the fixed-step methods, μs (defaults to the cap).
    pub fixed_step: Option<f64>,
    pub min_step: f64,
    /// Largest tolerated |‖ψ‖ − 1| at the end of a propagation.
    pub norm_tolerance: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::DormandPrince45,
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            max_step: None,
            fixed_step: None,
            min_step: 1e-10,
            norm_tolerance: 1e-7,
        }
    }
}

impl IntegratorConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tol_ok = |x: f64| x > 0.0 && x <= 1e-3;
        if !tol_ok(self.rel_tol) || !tol_ok(self.abs_tol) {
            return Err(Error::InvalidParameter(
                "integrator tolerances must lie in (0, 1e-3]".into(),
            ));
        }
        if self.max_step.is_some_and(|h| !(h > 0.0)) || self.fixed_step.is_some_and(|h| !(h > 0.0))
        {
            return Err(Error::InvalidParameter(
                "step sizes must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Largest step allowed for `h`.
    pub fn step_cap(&self, h: &TimeDependentHamiltonian) -> f64 {
        let (t0, t1) = h.interval();
        let mut cap = self
            .max_step
            .unwrap_or(f64::INFINITY)
            .min((t1 - t0).max(f64::MIN_POSITIVE));
        if h.max_frequency() > 0.0 {
            cap = cap.min(2.0 * PI / h.max_frequency() / 20.0);
        }
        cap
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub state: StateVector,
    pub norm_drift: f64,
    pub steps: usize,
    pub rejected: usize,
    pub wall_time_s: f64,
}

/// ⟨a⟩ of one mode conditioned on each two-spin basis state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchSample {
    pub t: f64,
    /// `None` where the branch has no population.
    pub mean_a: [Option<C64>; 4],
}

/// ⟨a_mode⟩ within each spin branch of ψ.
pub fn branch_mean_a(psi: &[C64], spec: &HilbertSpec, mode: usize) -> Result<[Option<C64>; 4]> {
    if spec.n_spins != 2 {
        return Err(Error::Unsupported(
            "branch trajectories need two spins".into(),
        ));
    }
    if psi.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: psi.len(),
        });
    }
    let (a, _) = mode_ladder(mode, spec)?;
    let ay = a.apply(psi);
    let m = spec.motional_dim();
    let mut out = [None; 4];
    for (b, slot) in out.iter_mut().enumerate() {
        let range = b * m..(b + 1) * m;
        let p: f64 = psi[range.clone()].iter().map(|z| z.norm_sqr()).sum();
        if p > 1e-14 {
            let s: C64 = psi[range.clone()]
                .iter()
                .zip(&ay[range])
                .map(|(x, y)| x.conj() * y)
                .sum();
            *slot = Some(s / p);
        }
    }
    Ok(out)
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

struct Rhs<'a> {
    h: &'a TimeDependentHamiltonian,
    scratch: Vec<C64>,
}

impl Rhs<'_> {
    /// dy = −i H(t) y.
    fn eval(&mut self, t: f64, y: &[C64], dy: &mut [C64]) {
        self.h.apply_with(t, y, dy, &mut self.scratch);
        for v in dy.iter_mut() {
            *v = C64::new(v.im, -v.re);
        }
    }
}

const DP_C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [&[f64]; 6] = [
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    ],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
    &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order minus embedded fourth-order weights.
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Counters {
    steps: usize,
    rejected: usize,
}

fn dp45_segment(
    rhs: &mut Rhs<'_>,
    y: &mut Vec<C64>,
    t0: f64,
    t1: f64,
    h_try: &mut f64,
    cap: f64,
    cfg: &IntegratorConfig,
    n: &mut Counters,
) -> Result<()> {
    let dim = y.len();
    let mut k: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); dim]; 7];
    let mut tmp = vec![C64::new(0.0, 0.0); dim];
    let mut t = t0;
    rhs.eval(t, y, &mut k[0]);
    while t < t1 {
        let remaining = t1 - t;
        let last = *h_try >= remaining;
        let h = if last { remaining } else { *h_try };
        if h < cfg.min_step && !last {
            return Err(Error::StepUnderflow { t, h });
        }
        for (s, row) in DP_A.iter().enumerate() {
            for i in 0..dim {
                let mut acc = y[i];
                for (j, &a) in row.iter().enumerate() {
                    if a != 0.0 {
                        acc += k[j][i] * (h * a);
                    }
                }
                tmp[i] = acc;
            }
            let (head, tail) = k.split_at_mut(s + 1);
            let _ = head;
            rhs.eval(t + DP_C[s] * h, &tmp, &mut tail[0]);
        }
        // tmp now holds the fifth-order solution (last row is the b weights).
        let mut err = 0.0;
        for i in 0..dim {
            let mut e = C64::new(0.0, 0.0);
            for (j, &w) in DP_E.iter().enumerate() {
                if w != 0.0 {
                    e += k[j][i] * w;
                }
            }
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].norm().max(tmp[i].norm());
            err += (e.norm() * h / sc).powi(2);
        }
        let err = (err / dim as f64).sqrt();
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        if err <= 1.0 {
            std::mem::swap(y, &mut tmp);
            t = if last { t1 } else { t + h };
            k.swap(0, 6);
            n.steps += 1;
            if !last || factor < 1.0 {
                *h_try = (h * factor).min(cap);
            }
        } else {
            n.rejected += 1;
            *h_try = (h * factor.min(1.0)).min(cap);
        }
    }
    Ok(())
}

/// `y ← exp(−i·Σ c_k O_k)·y` by substepped Taylor series.
fn expm_apply(h: &TimeDependentHamiltonian, c: &[C64], y: &mut Vec<C64>) {
    let ops = h.operators();
    let bound = h.norm_bound(c);
    let m = bound.ceil().max(1.0) as usize;
    let scale = C64::new(0.0, -1.0 / m as f64);
    let coefs: Vec<C64> = c.iter().map(|&ck| ck * scale).collect();
    let mut term = vec![C64::new(0.0, 0.0); y.len()];
    let mut next = vec![C64::new(0.0, 0.0); y.len()];
    for _ in 0..m {
        term.copy_from_slice(y);
        for k in 1..=60 {
            next.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            for (op, &ck) in ops.iter().zip(&coefs) {
                if ck != C64::new(0.0, 0.0) {
                    op.apply_add(ck / k as f64, &term, &mut next);
                }
            }
            std::mem::swap(&mut term, &mut next);
            for (yi, ti) in y.iter_mut().zip(&term) {
                *yi += ti;
            }
            if norm(&term) <= 1e-17 * norm(y) {
                break;
            }
        }
    }
}

fn exponential_segment(
    h: &TimeDependentHamiltonian,
    y: &mut Vec<C64>,
    t0: f64,
    t1: f64,
    step: f64,
    method: Method,
    n: &mut Counters,
) {
    if t1 <= t0 {
        return;
    }
    let count = ((t1 - t0) / step).ceil().max(1.0) as usize;
    let dt = (t1 - t0) / count as f64;
    let r3 = 3f64.sqrt();
    let (c1, c2) = (0.5 - r3 / 6.0, 0.5 + r3 / 6.0);
    let (a1, a2) = (0.25 + r3 / 6.0, 0.25 - r3 / 6.0);
    for s in 0..count {
        let t = t0 + s as f64 * dt;
        match method {
            Method::MidpointExponential => {
                let c: Vec<C64> = h
                    .coefficients(t + 0.5 * dt)
                    .iter()
                    .map(|z| z * dt)
                    .collect();
                expm_apply(h, &c, y);
            }
            Method::CommutatorFree4 => {
                let h1 = h.coefficients(t + c1 * dt);
                let h2 = h.coefficients(t + c2 * dt);
                let first: Vec<C64> = h1
                    .iter()
                    .zip(&h2)
                    .map(|(x, z)| (x * a1 + z * a2) * dt)
                    .collect();
                let second: Vec<C64> = h1
                    .iter()
                    .zip(&h2)
                    .map(|(x, z)| (x * a2 + z * a1) * dt)
                    .collect();
                expm_apply(h, &first, y);
                expm_apply(h, &second, y);
            }
            Method::DormandPrince45 => unreachable!("adaptive method handled separately"),
        }
        n.steps += 1;
    }
}

/// Propagates ψ₀ over the Hamiltonian's interval, calling `observer` at each
/// requested time (sorted, inside the interval).
pub fn evolve_state_observed<F>(
    h: &TimeDependentHamiltonian,
    psi0: &StateVector,
    cfg: &IntegratorConfig,
    sample_times: &[f64],
    mut observer: F,
) -> Result<EvolutionResult>
where
    F: FnMut(f64, &[C64]),
{
    cfg.validate()?;
    if psi0.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: psi0.dim(),
        });
    }
    let (t0, t1) = h.interval();
    if sample_times.windows(2).any(|w| w[1] < w[0])
        || sample_times.iter().any(|&t| t < t0 || t > t1)
    {
        return Err(Error::InvalidParameter(
            "sample times must be sorted and inside the interval".into(),
        ));
    }
    let start = Instant::now();
    let cap = cfg.step_cap(h);
    let mut y = psi0.amplitudes().to_vec();
    let mut counters = Counters {
        steps: 0,
        rejected: 0,
    };
    let mut rhs = Rhs {
        h,
        scratch: Vec::new(),
    };
    let mut h_try = cap;
    let mut t = t0;
    let stops = sample_times.iter().copied().chain(std::iter::once(t1));
    for (idx, stop) in stops.enumerate() {
        if stop > t {
            match cfg.method {
                Method::DormandPrince45 => dp45_segment(
                    &mut rhs,
                    &mut y,
                    t,
                    stop,
                    &mut h_try,
                    cap,
                    cfg,
                    &mut counters,
                )?,
                m => exponential_segment(
                    h,
                    &mut y,
                    t,
                    stop,
                    cfg.fixed_step.unwrap_or(cap),
                    m,
                    &mut counters,
                ),
            }
            t = stop;
        }
        if idx < sample_times.len() {
            observer(stop, &y);
        }
    }
    let drift = (norm(&y) - 1.0).abs();
    if drift > cfg.norm_tolerance {
        return Err(Error::NormDrift { drift });
    }
    debug!(
        "propagated {} steps ({} rejected), norm drift {drift:.2e}",
        counters.steps, counters.rejected
    );
    Ok(EvolutionResult {
        state: StateVector::from_raw(y),
        norm_drift: drift,
        steps: counters.steps,
        rejected: counters.rejected,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

pub fn evolve_state(
    h: &TimeDependentHamiltonian,
    psi0: &StateVector,
    cfg: &IntegratorConfig,
) -> Result<EvolutionResult> {
    evolve_state_observed(h, psi0, cfg, &[], |_, _| {})
}

/// Propagation that also records per-branch ⟨a⟩ of `mode` at `times`.
pub fn evolve_with_trajectory(
    h: &TimeDependentHamiltonian,
    psi0: &StateVector,
    cfg: &IntegratorConfig,
    spec: &HilbertSpec,
    mode: usize,
    times: &[f64],
) -> Result<(EvolutionResult, Vec<BranchSample>)> {
    let mut samples = Vec::with_capacity(times.len());
    let mut failure = None;
    let res = evolve_state_observed(h, psi0, cfg, times, |t, y| {
        match branch_mean_a(y, spec, mode) {
            Ok(mean_a) => samples.push(BranchSample { t, mean_a }),
            Err(e) => failure = Some(e),
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok((res, samples)),
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub state: DensityMatrix,
    pub max_norm_drift: f64,
    pub steps: usize,
    pub wall_time_s: f64,
}

/// Propagates every branch of an ensemble in parallel. Branch order, and so
/// every later sum, is independent of the thread count.
pub fn evolve_ensemble(
    h: &TimeDependentHamiltonian,
    rho0: &DensityMatrix,
    cfg: &IntegratorConfig,
) -> Result<EnsembleResult> {
    let DensityMatrix::Ensemble(branches) = rho0 else {
        return Err(Error::Unsupported(
            "dense density matrices are not propagated; use an ensemble".into(),
        ));
    };
    let start = Instant::now();
    let results: Vec<(f64, EvolutionResult)> = branches
        .par_iter()
        .map(|(w, psi)| evolve_state(h, psi, cfg).map(|r| (*w, r)))
        .collect::<Result<_>>()?;
    let max_norm_drift = results
        .iter()
        .map(|(_, r)| r.norm_drift)
        .fold(0.0, f64::max);
    let steps = results.iter().map(|(_, r)| r.steps).sum();
    let state = DensityMatrix::Ensemble(results.into_iter().map(|(w, r)| (w, r.state)).collect());
    Ok(EnsembleResult {
        state,
        max_norm_drift,
        steps,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Branch displacement ⟨a⟩ = −i·s·ξ(t) for spin eigenvalue `s` of a
/// Hamiltonian `S (g a† + g* a)`, at sorted `times` within the interval.
pub fn spin_branch_displacement(
    h: &TimeDependentHamiltonian,
    spin_eigenvalue: f64,
    times: &[f64],
) -> Result<Vec<C64>> {
    let drive = h
        .sz_drive()
        .ok_or_else(|| Error::Unsupported("Hamiltonian is not a pure S_z drive".into()))?;
    let (t0, t1) = h.interval();
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|&t| t < t0 || t > t1) {
        return Err(Error::InvalidParameter(
            "times must be sorted and inside the interval".into(),
        ));
    }
    let panel = panel_for_rate(drive.max_rate);
    let mut xi = C64::new(0.0, 0.0);
    let mut t = t0;
    let mut out = Vec::with_capacity(times.len());
    for &stop in times {
        let mut knots = vec![t];
        knots.extend(
            drive
                .breakpoints
                .iter()
                .copied()
                .filter(|&b| b > t && b < stop),
        );
        knots.push(stop);
        for w in knots.windows(2) {
            let n = ((w[1] - w[0]) / panel).ceil().max(1.0) as usize;
            let dt = (w[1] - w[0]) / n as f64;
            for k in 0..n {
                let (c, half) = (w[0] + (k as f64 + 0.5) * dt, 0.5 * dt);
                for (x, wt) in GL10_NODES.iter().zip(GL10_WEIGHTS.iter()) {
                    xi += ((drive.drive)(c - half * x) + (drive.drive)(c + half * x)) * (wt * half);
                }
            }
        }
        t = stop;
        out.push(C64::new(0.0, -spin_eigenvalue) * xi);
    }
    Ok(out)
}

/// CSV with columns `t_s`, then `re_xi_<s>`, `im_xi_<s>` for every branch
/// eigenvalue `s`. Times are in μs on input.
pub fn write_trajectory_csv<W: Write>(
    times: &[f64],
    branches: &[(f64, Vec<C64>)],
    mut w: W,
) -> io::Result<()> {
    write!(w, "t_s")?;
    for (s, _) in branches {
        write!(w, ",re_xi_{s},im_xi_{s}")?;
    }
    writeln!(w)?;
    for (k, &t) in times.iter().enumerate() {
        write!(w, "{:.12e}", us_to_s(t))?;
        for (_, xi) in branches {
            write!(w, ",{:.12e},{:.12e}", xi[k].re, xi[k].im)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// ξ and θ of a pure S_z-drive Hamiltonian over its interval.
pub fn arm_loop(h: &TimeDependentHamiltonian) -> Result<LoopIntegral> {
    let drive = h
        .sz_drive()
        .ok_or_else(|| Error::Unsupported("Hamiltonian is not a pure S_z drive".into()))?;
    Ok(loop_integral(
        |t| (drive.drive)(t),
        &drive.breakpoints,
        panel_for_rate(drive.max_rate),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{collective_spin, ladder, Axis, Operator, SpinSign};
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn spin_flip(omega: f64, t_end: f64) -> (TimeDependentHamiltonian, Operator) {
        let spec = HilbertSpec::two_spins(vec![]).unwrap();
        let sx = collective_spin(Axis::X, SpinSign::InPhase, &spec).unwrap();
        let h = TimeDependentHamiltonian::new(
            4,
            vec![sx.clone()],
            Arc::new(move |_, c| c[0] = C64::new(0.5 * omega, 0.0)),
            (0.0, t_end),
            0.0,
        )
        .unwrap();
        (h, sx)
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let psi = StateVector::normalized(vec![
            C64::new(0.3, 0.1),
            C64::new(0.0, -0.5),
            C64::new(0.2, 0.0),
            C64::new(0.7, 0.2),
        ])
        .unwrap();
        let h = TimeDependentHamiltonian::zero(4, (0.0, 10.0));
        for m in [
            Method::DormandPrince45,
            Method::MidpointExponential,
            Method::CommutatorFree4,
        ] {
            let r = evolve_state(&h, &psi, &IntegratorConfig::with_method(m)).unwrap();
            assert_eq!(r.state.amplitudes(), psi.amplitudes());
        }
    }

    #[test]
    fn rabi_flip_every_method() {
        // ω/2·S_x for t = π/ω flips both spins.
        let omega = 0.7;
        let (h, _) = spin_flip(omega, PI / omega);
        let psi = StateVector::basis(4, 0);
        for m in [
            Method::DormandPrince45,
            Method::MidpointExponential,
            Method::CommutatorFree4,
        ] {
            let r = evolve_state(&h, &psi, &IntegratorConfig::with_method(m)).unwrap();
            assert!((r.state.amplitudes()[3].norm() - 1.0).abs() < 1e-9, "{m:?}");
        }
    }

    #[test]
    fn matches_matrix_exponential() {
        let (h, sx) = spin_flip(1.3, 2.0);
        let psi = StateVector::normalized(vec![
            C64::new(1.0, 0.0),
            C64::new(0.0, 1.0),
            C64::new(0.5, 0.0),
            C64::new(0.0, 0.0),
        ])
        .unwrap();
        let exact = (sx.to_dense() * C64::new(0.0, -0.65 * 2.0)).exp()
            * nalgebra::DVector::from_column_slice(psi.amplitudes());
        let r = evolve_state(&h, &psi, &IntegratorConfig::default()).unwrap();
        let diff: f64 = r
            .state
            .amplitudes()
            .iter()
            .zip(exact.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn commutator_free_is_fourth_order() {
        // Driven oscillator with a time-dependent phase: H = g(t) a† + h.c.
        let (a, ad) = ladder(30).unwrap();
        let h_of = |step: Option<f64>, method| {
            let h = TimeDependentHamiltonian::new(
                30,
                vec![ad.clone(), a.clone()],
                Arc::new(|t, c| {
                    let g = C64::from_polar(0.4 * (1.0 + t).sin(), 1.3 * t * t);
                    c[0] = g;
                    c[1] = g.conj();
                }),
                (0.0, 3.0),
                0.0,
            )
            .unwrap();
            let cfg = IntegratorConfig {
                method,
                fixed_step: step,
                rel_tol: 1e-12,
                abs_tol: 1e-14,
                ..IntegratorConfig::default()
            };
            evolve_state(&h, &StateVector::basis(30, 0), &cfg)
                .unwrap()
                .state
        };
        let reference = h_of(None, Method::DormandPrince45);
        let err = |s: f64| {
            let psi = h_of(Some(s), Method::CommutatorFree4);
            psi.amplitudes()
                .iter()
                .zip(reference.amplitudes())
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.1), err(0.05));
        let order = (e1 / e2).log2();
        assert!(
            order > 3.6 && order < 4.6,
            "order {order}, errors {e1:e} {e2:e}"
        );
    }

    #[test]
    fn norm_drift_is_reported() {
        // Non-Hermitian generator: the integrator is exact, the norm is not kept.
        let op = Operator::from_dense(&DMatrix::from_diagonal_element(2, 2, C64::new(0.0, -1.0)))
            .unwrap();
        let h = TimeDependentHamiltonian::new(
            2,
            vec![op],
            Arc::new(|_, c| c[0] = C64::new(1.0, 0.0)),
            (0.0, 1.0),
            0.0,
        )
        .unwrap();
        let r = evolve_state(&h, &StateVector::basis(2, 0), &IntegratorConfig::default());
        assert!(matches!(r, Err(Error::NormDrift { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        let (h, _) = spin_flip(1.0, 1.0);
        assert!(matches!(
            evolve_state(&h, &StateVector::basis(3, 0), &IntegratorConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ensemble_preserves_order_and_weights() {
        let (h, _) = spin_flip(0.4, 1.0);
        let rho = DensityMatrix::ensemble(vec![
            (0.25, StateVector::basis(4, 0)),
            (0.75, StateVector::basis(4, 3)),
        ])
        .unwrap();
        let r = evolve_ensemble(&h, &rho, &IntegratorConfig::default()).unwrap();
        let DensityMatrix::Ensemble(b) = &r.state else {
            panic!("ensemble expected")
        };
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].0, b[1].0), (0.25, 0.75));
        let single =
            evolve_state(&h, &StateVector::basis(4, 3), &IntegratorConfig::default()).unwrap();
        assert_eq!(b[1].1.amplitudes(), single.state.amplitudes());
        assert!((r.state.trace() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn trajectory_csv_layout() {
        let xi = vec![C64::new(1.0, -2.0), C64::new(0.5, 0.25)];
        let mut out = Vec::new();
        write_trajectory_csv(&[0.0, 2.0], &[(2.0, xi.clone()), (-2.0, xi)], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t_s,re_xi_2,im_xi_2,re_xi_-2,im_xi_-2");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("2.000000000000e-6,5.000000000000e-1,2.500000000000e-1"));
    }

    #[test]
    fn branch_displacement_needs_sz_drive() {
        let (h, _) = spin_flip(1.0, 1.0);
        assert!(matches!(
            spin_branch_displacement(&h, 1.0, &[0.5]),
            Err(Error::Unsupported(_))
        ));
        assert!(arm_loop(&h).is_err());
    }
}
