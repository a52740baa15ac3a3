//! Bell-state protocol, fidelity analysis, flat-top calibration, sweeps,
//! cross-Kerr shifts and shot-noise resampling.
//!
//! The sequence is R_x(π/2) – arm – R_x(π) – arm – R_x(π/2) on |↑↑⟩ with
//! ideal instantaneous single-qubit pulses. Spin basis order is
//! |↑↑⟩, |↑↓⟩, |↓↑⟩, |↓↓⟩.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, FRAC_PI_8, PI};
use std::time::Instant;

use log::{info, warn};
use nalgebra::{Matrix2, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::analytic::{loop_integral, panel_for_rate};
use crate::hamiltonian::{
    arm_phase_advance, bichromatic_frame_hamiltonian, gate_hamiltonian_rwa, ion_frame_hamiltonian,
    resonant_drive, ArmTiming, ModeSpec, PhaseContinuity, TimeDependentHamiltonian, DEFAULT_N_MAX,
};
use crate::propagator::{evolve_ensemble, IntegratorConfig};
use crate::quantum::{
    fock_displacement_overlap, poisson_tail, poisson_weights, spin_reduced, truncation_guard,
    DensityMatrix, HilbertSpec, Populations, SpinMatrix, SpinSign, StateVector, DD, UU,
};
use crate::ramps::{DetuningRamp, GateParams, PulseSchedule};
use crate::{Error, Result, C64};

/// Fock weights below this are dropped from ensembles.
const WEIGHT_FLOOR: f64 = 1e-15;

/// Initial state of the gate mode. Spectator modes start in the ground state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialMotionalState {
    Ground,
    Fock {
        n: usize,
    },
    /// Phase-averaged coherent state.
    PoissonMixture {
        nbar: f64,
    },
    Thermal {
        nbar: f64,
    },
}

impl InitialMotionalState {
    pub fn mean_occupation(&self) -> f64 {
        match *self {
            Self::Ground => 0.0,
            Self::Fock { n } => n as f64,
            Self::PoissonMixture { nbar } | Self::Thermal { nbar } => nbar,
        }
    }

    pub fn validate(&self, fock_dim: usize) -> Result<()> {
        let nbar = self.mean_occupation();
        if !(nbar >= 0.0 && nbar.is_finite()) {
            return Err(Error::InvalidState(format!(
                "mean occupation {nbar} must be finite and >= 0"
            )));
        }
        if let Self::Fock { n } = *self {
            if n >= fock_dim {
                return Err(Error::TruncationGuard {
                    mean: nbar,
                    dim: fock_dim,
                    required: n + 1,
                });
            }
            return Ok(());
        }
        truncation_guard(fock_dim, nbar)
    }

    /// Non-negligible (n, p_n) pairs, renormalized over the truncated space.
    pub fn fock_weights(&self, fock_dim: usize) -> Result<Vec<(usize, f64)>> {
        self.validate(fock_dim)?;
        let raw = match *self {
            Self::Ground => return Ok(vec![(0, 1.0)]),
            Self::Fock { n } => return Ok(vec![(n, 1.0)]),
            Self::PoissonMixture { nbar } => {
                let tail = poisson_tail(nbar, fock_dim);
                if tail > 1e-10 {
                    warn!("Poisson mixture n̄ = {nbar} loses {tail:.1e} probability to truncation");
                }
                poisson_weights(nbar, fock_dim)
            }
            Self::Thermal { nbar } => {
                let q = nbar / (1.0 + nbar);
                let w: Vec<f64> = (0..fock_dim)
                    .map(|n| q.powi(n as i32) / (1.0 + nbar))
                    .collect();
                let total: f64 = w.iter().sum();
                w.into_iter().map(|x| x / total).collect()
            }
        };
        let kept: Vec<(usize, f64)> = raw
            .into_iter()
            .enumerate()
            .filter(|&(_, w)| w > WEIGHT_FLOOR)
            .collect();
        let total: f64 = kept.iter().map(|(_, w)| w).sum();
        Ok(kept.into_iter().map(|(n, w)| (n, w / total)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulationLevel {
    /// Branch displacements and geometric phases of the resonant term,
    /// evaluated by quadrature (exact for that Hamiltonian).
    #[default]
    Truncated,
    /// The resonant-term Hamiltonian propagated on the truncated Fock space.
    TruncatedPropagated,
    /// Full bichromatic-frame Hamiltonian.
    Bichromatic,
    /// Ion-frame Hamiltonian.
    IonFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSet {
    #[default]
    Single,
    Four,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellConfig {
    pub level: SimulationLevel,
    pub modes: ModeSet,
    pub fock_dim: usize,
    pub spectator_fock_dim: usize,
    /// π pulse between the arms; when false it is applied after both arms.
    pub echo: bool,
    pub continuity: PhaseContinuity,
    pub n_max: usize,
    pub integrator: IntegratorConfig,
    /// Analysis phases of the parity scan; `None` uses the bunched default.
    pub analysis_phases: Option<Vec<f64>>,
}

impl Default for BellConfig {
    fn default() -> Self {
        Self {
            level: SimulationLevel::Truncated,
            modes: ModeSet::Single,
            fock_dim: 24,
            spectator_fock_dim: 6,
            echo: true,
            continuity: PhaseContinuity::Continuous,
            n_max: DEFAULT_N_MAX,
            integrator: IntegratorConfig::default(),
            analysis_phases: None,
        }
    }
}

impl BellConfig {
    /// Gate mode first.
    pub fn mode_list(&self, params: &GateParams) -> Vec<ModeSpec> {
        match self.modes {
            ModeSet::Single => vec![ModeSpec::gate_mode(params, self.fock_dim)],
            ModeSet::Four => {
                ModeSpec::four_mode_set(params, self.fock_dim, self.spectator_fock_dim)
            }
        }
    }
}

/// Per-mode result of both arms in the Magnus form
/// `Σ_s P_s D(−i s Ξ) e^{iΘ s²}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeLoop {
    pub label: String,
    pub spin_sign: SpinSign,
    pub xi_arm: C64,
    pub theta_arm: f64,
    pub xi_total: C64,
    pub theta_total: f64,
}

/// Displacement and phase of each mode over one arm, composed for the two
/// arms of the sequence.
pub fn sequence_loops(
    schedule: &PulseSchedule,
    modes: &[ModeSpec],
    echo: bool,
    continuity: PhaseContinuity,
) -> Vec<ModeLoop> {
    modes
        .iter()
        .map(|mode| {
            let drive = resonant_drive(schedule, mode, ArmTiming::first());
            let arm = loop_integral(
                |t| (drive.drive)(t),
                &drive.breakpoints,
                panel_for_rate(drive.max_rate),
            );
            let xi2 = match continuity {
                PhaseContinuity::Continuous => {
                    arm.xi * C64::from_polar(1.0, arm_phase_advance(schedule, mode))
                }
                PhaseContinuity::Restart => arm.xi,
            };
            let cross = (xi2 * arm.xi.conj()).im;
            let (xi_total, theta_total) = if echo {
                (arm.xi - xi2, 2.0 * arm.theta - cross)
            } else {
                (arm.xi + xi2, 2.0 * arm.theta + cross)
            };
            ModeLoop {
                label: mode.label.clone(),
                spin_sign: mode.spin_sign,
                xi_arm: arm.xi,
                theta_arm: arm.theta,
                xi_total,
                theta_total,
            }
        })
        .collect()
}

/// Eigenvalues of `σ_z ⊗ 𝕀 ± 𝕀 ⊗ σ_z` on the spin basis.
pub fn spin_eigenvalues(sign: SpinSign) -> [f64; 4] {
    let k = sign.factor();
    [1.0 + k, 1.0 - k, -1.0 + k, -1.0 - k]
}

fn rx_half() -> SpinMatrix {
    let c = C64::new(FRAC_1_SQRT_2, 0.0);
    let s = C64::new(0.0, -FRAC_1_SQRT_2);
    let r = Matrix2::new(c, s, s, c);
    r.kronecker(&r)
}

fn flip(rho: &SpinMatrix) -> SpinMatrix {
    SpinMatrix::from_fn(|r, c| rho[(3 - r, 3 - c)])
}

fn initial_spin() -> SpinMatrix {
    let r = rx_half();
    let psi = r.column(UU).into_owned();
    psi * psi.adjoint()
}

/// Target `(|↓↓⟩ + iκ|↑↑⟩)/√2`; κ = −1 for an out-of-phase gate mode.
pub fn bell_target(kappa: f64) -> nalgebra::Vector4<C64> {
    let mut v = nalgebra::Vector4::zeros();
    v[DD] = C64::new(FRAC_1_SQRT_2, 0.0);
    v[UU] = C64::new(0.0, kappa * FRAC_1_SQRT_2);
    v
}

/// Spin state after both arms and the final π/2 pulse, from the Magnus
/// factors. Only the first mode carries `weights`; the rest start in |0⟩.
pub fn fast_spin_state(loops: &[ModeLoop], weights: &[(usize, f64)]) -> SpinMatrix {
    let rho0 = initial_spin();
    let eig: Vec<[f64; 4]> = loops
        .iter()
        .map(|l| spin_eigenvalues(l.spin_sign))
        .collect();
    let mut rho = SpinMatrix::zeros();
    for a in 0..4 {
        for b in 0..4 {
            let mut factor = C64::new(1.0, 0.0);
            for (k, (l, s)) in loops.iter().zip(&eig).enumerate() {
                factor *= C64::from_polar(1.0, l.theta_total * (s[a] * s[a] - s[b] * s[b]));
                let gamma = C64::new(0.0, -(s[a] - s[b])) * l.xi_total;
                if k == 0 {
                    factor *= weights
                        .iter()
                        .map(|&(n, w)| w * fock_displacement_overlap(n, gamma))
                        .sum::<f64>();
                } else {
                    factor *= fock_displacement_overlap(0, gamma);
                }
            }
            rho[(a, b)] = rho0[(a, b)] * factor;
        }
    }
    let r = rx_half();
    r * flip(&rho) * r.adjoint()
}

/// Parity after an analysis pulse R_φ(π/2) on both qubits.
pub fn parity_at(rho: &SpinMatrix, phi: f64) -> f64 {
    let c = C64::new(FRAC_PI_4.cos(), 0.0);
    let off = C64::new(0.0, -FRAC_PI_4.sin());
    let r = Matrix2::new(
        c,
        off * C64::from_polar(1.0, -phi),
        off * C64::from_polar(1.0, phi),
        c,
    );
    let rr = r.kronecker(&r);
    let out = rr * rho * rr.adjoint();
    out[(0, 0)].re - out[(1, 1)].re - out[(2, 2)].re + out[(3, 3)].re
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityScan {
    pub phases: Vec<f64>,
    pub parity: Vec<f64>,
    /// Fitted |A| of `A cos(2φ + φ₀) + B`.
    pub amplitude: f64,
    pub phase_offset: f64,
    pub offset: f64,
}

/// Least-squares fit of `B + a cos 2φ + b sin 2φ`.
pub fn fit_fringe(phases: &[f64], parity: &[f64]) -> Result<(f64, f64, f64)> {
    if phases.len() != parity.len() {
        return Err(Error::DimensionMismatch {
            expected: phases.len(),
            found: parity.len(),
        });
    }
    let mut m = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for (&phi, &p) in phases.iter().zip(parity) {
        let row = Vector3::new(1.0, (2.0 * phi).cos(), (2.0 * phi).sin());
        m += row * row.transpose();
        rhs += row * p;
    }
    let scale = phases.len().max(1) as f64;
    let min_eig = m.symmetric_eigenvalues().min();
    if phases.len() < 3 || min_eig < 1e-9 * scale {
        return Err(Error::DegenerateFit(format!(
            "{} analysis phases do not determine a 2φ fringe",
            phases.len()
        )));
    }
    let x = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateFit("singular normal equations".into()))?;
    Ok((x[0], x[1], x[2]))
}

pub fn parity_scan(rho: &SpinMatrix, phases: &[f64]) -> Result<ParityScan> {
    let parity: Vec<f64> = phases.iter().map(|&p| parity_at(rho, p)).collect();
    let (offset, a, b) = fit_fringe(phases, &parity)?;
    Ok(ParityScan {
        phases: phases.to_vec(),
        parity,
        amplitude: a.hypot(b),
        phase_offset: (-b).atan2(a),
        offset,
    })
}

/// `n` phases evenly covering [0, 2π).
pub fn uniform_analysis_phases(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

/// 28 phases in four clusters of seven (0.05 rad apart) centred on the
/// fringe extrema of the target state.
pub fn bunched_analysis_phases(kappa: f64) -> Vec<f64> {
    let target = bell_target(kappa);
    let rho = target * target.adjoint();
    let probe = uniform_analysis_phases(16);
    let parity: Vec<f64> = probe.iter().map(|&p| parity_at(&rho, p)).collect();
    let (_, a, b) = fit_fringe(&probe, &parity).expect("uniform phases are non-degenerate");
    let centre = b.atan2(a) / 2.0;
    let mut phases = Vec::with_capacity(28);
    for k in 0..4 {
        let c = centre + k as f64 * PI / 2.0;
        for j in -3..=3 {
            phases.push((c + 0.05 * j as f64).rem_euclid(2.0 * PI));
        }
    }
    phases
}

fn serialize_spin<S: Serializer>(rho: &SpinMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<[f64; 2]>> = (0..4)
        .map(|r| (0..4).map(|c| [rho[(r, c)].re, rho[(r, c)].im]).collect())
        .collect();
    rows.serialize(s)
}

/// Spin-state analysis shared by every simulation level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BellResult {
    pub populations: Populations,
    pub parity_fringe_amplitude: f64,
    /// (P_↓↓ + P_↑↑)/2 + |C|/2.
    pub fidelity_parity: f64,
    /// ⟨Φ|ρ|Φ⟩ for the target state.
    pub fidelity_overlap: f64,
    /// Sign κ of the target `(|↓↓⟩ + iκ|↑↑⟩)/√2`.
    pub target_kappa: f64,
    pub theta_total: f64,
    pub xi_residual_abs: f64,
    pub flat_top_us: f64,
    pub gate_time_us: f64,
    pub analysis_phases: Vec<f64>,
    pub parity: Vec<f64>,
    #[serde(serialize_with = "serialize_spin")]
    pub rho_spin: SpinMatrix,
    pub wall_time_s: f64,
}

impl BellResult {
    pub fn infidelity(&self) -> f64 {
        1.0 - self.fidelity_parity
    }
}

/// Populations, parity scan and both fidelity estimates of a spin state.
pub fn analyze_spin_state(rho: &SpinMatrix, phases: &[f64], kappa: f64) -> Result<BellResult> {
    let populations = Populations::from_spin(rho);
    let scan = parity_scan(rho, phases)?;
    let target = bell_target(kappa);
    let overlap = (target.adjoint() * rho * target)[(0, 0)].re;
    Ok(BellResult {
        populations,
        parity_fringe_amplitude: scan.amplitude,
        fidelity_parity: 0.5 * (populations.p_dd + populations.p_uu) + 0.5 * scan.amplitude,
        fidelity_overlap: overlap,
        target_kappa: kappa,
        theta_total: 0.0,
        xi_residual_abs: 0.0,
        flat_top_us: 0.0,
        gate_time_us: 0.0,
        analysis_phases: scan.phases,
        parity: scan.parity,
        rho_spin: *rho,
        wall_time_s: 0.0,
    })
}

fn propagate_arms(
    schedule: &PulseSchedule,
    modes: &[ModeSpec],
    weights: &[(usize, f64)],
    cfg: &BellConfig,
) -> Result<SpinMatrix> {
    let spec = HilbertSpec::two_spins(modes.iter().map(|m| m.fock_dim).collect())?;
    let motional = spec.motional_dim();
    let spectator_stride: usize = modes[1..].iter().map(|m| m.fock_dim).product();
    let spin0 = rx_half().column(UU).into_owned();
    let branches = weights
        .iter()
        .map(|&(n, w)| {
            let mut amps = vec![C64::new(0.0, 0.0); spec.dim()];
            for (s, &c) in spin0.iter().enumerate() {
                amps[s * motional + n * spectator_stride] = c;
            }
            Ok((w, StateVector::new(amps)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let build = |arm: usize| -> Result<TimeDependentHamiltonian> {
        let timing = ArmTiming::new(arm, cfg.continuity);
        match cfg.level {
            SimulationLevel::TruncatedPropagated => {
                gate_hamiltonian_rwa(schedule, modes, &spec, timing)
            }
            SimulationLevel::Bichromatic => {
                bichromatic_frame_hamiltonian(schedule, modes, &spec, cfg.n_max, timing)
            }
            SimulationLevel::IonFrame => ion_frame_hamiltonian(schedule, modes, &spec, timing),
            SimulationLevel::Truncated => unreachable!("fast path handled by caller"),
        }
    };
    let flip_state = |rho: DensityMatrix| -> DensityMatrix {
        let DensityMatrix::Ensemble(b) = rho else {
            unreachable!("propagation keeps ensembles")
        };
        let flipped = b
            .into_iter()
            .map(|(w, psi)| {
                let a = psi.amplitudes();
                let mut out = vec![C64::new(0.0, 0.0); a.len()];
                for s in 0..4 {
                    out[(3 - s) * motional..(4 - s) * motional]
                        .copy_from_slice(&a[s * motional..(s + 1) * motional]);
                }
                (w, StateVector::from_raw(out))
            })
            .collect();
        DensityMatrix::Ensemble(flipped)
    };
    let mut rho = DensityMatrix::Ensemble(branches);
    for arm in 0..2 {
        let h = build(arm).map_err(|e| Error::Arm {
            arm,
            source: Box::new(e),
        })?;
        rho = evolve_ensemble(&h, &rho, &cfg.integrator)
            .map_err(|e| Error::Arm {
                arm,
                source: Box::new(e),
            })?
            .state;
        if (arm == 0) == cfg.echo {
            rho = flip_state(rho);
        }
    }
    let r = rx_half();
    Ok(r * spin_reduced(&rho, &spec)? * r.adjoint())
}

/// Runs the Bell sequence with the flat top in `params` as given.
pub fn bell_sequence(
    params: &GateParams,
    ramp: &DetuningRamp,
    initial: &InitialMotionalState,
    cfg: &BellConfig,
) -> Result<BellResult> {
    let start = Instant::now();
    let schedule = PulseSchedule::build(params, ramp)?;
    let modes = cfg.mode_list(params);
    let weights = initial.fock_weights(cfg.fock_dim)?;
    let loops = sequence_loops(&schedule, &modes, cfg.echo, cfg.continuity);
    let rho = match cfg.level {
        SimulationLevel::Truncated => fast_spin_state(&loops, &weights),
        _ => propagate_arms(&schedule, &modes, &weights, cfg)?,
    };
    let kappa = modes[0].spin_sign.factor();
    let phases = cfg
        .analysis_phases
        .clone()
        .unwrap_or_else(|| bunched_analysis_phases(kappa));
    let mut result = analyze_spin_state(&rho, &phases, kappa)?;
    result.theta_total = loops[0].theta_total;
    result.xi_residual_abs = loops[0].xi_total.norm();
    result.flat_top_us = params.flat_top;
    result.gate_time_us = 2.0 * schedule.t_f();
    result.wall_time_s = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Gate-mode Θ of both arms at the flat top in `params`.
pub fn theta_total(params: &GateParams, ramp: &DetuningRamp, cfg: &BellConfig) -> Result<f64> {
    let schedule = PulseSchedule::build(params, ramp)?;
    let mode = ModeSpec::gate_mode(params, cfg.fock_dim);
    Ok(sequence_loops(
        &schedule,
        std::slice::from_ref(&mode),
        cfg.echo,
        cfg.continuity,
    )[0]
    .theta_total)
}

/// How sweeps choose the flat top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMethod {
    /// Bisection on the two-arm gate-mode phase.
    #[default]
    GeometricPhase,
    /// Maximum ground-state Bell fidelity within one gate-mode loop period of
    /// the geometric-phase solution.
    BellFidelity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub target_theta: f64,
    pub max_flat_top: f64,
    pub scan_step: f64,
    pub tolerance: f64,
    #[serde(default)]
    pub method: CalibrationMethod,
    /// Grid spacing of the fidelity search, μs.
    #[serde(default = "default_fidelity_step")]
    pub fidelity_step: f64,
}

fn default_fidelity_step() -> f64 {
    1.0
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            target_theta: FRAC_PI_8,
            max_flat_top: 5000.0,
            scan_step: 20.0,
            tolerance: 1e-7,
            method: CalibrationMethod::GeometricPhase,
            fidelity_step: default_fidelity_step(),
        }
    }
}

impl CalibrationOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        if !(ok(self.target_theta)
            && ok(self.max_flat_top)
            && ok(self.scan_step)
            && ok(self.tolerance)
            && ok(self.fidelity_step))
        {
            return Err(Error::InvalidParameter(
                "calibration options must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub flat_top: f64,
    pub theta_total: f64,
    pub evaluations: usize,
}

/// Smallest flat top whose two-arm Θ reaches the target, by a forward scan
/// followed by bisection. A target already exceeded with no flat top
/// returns zero.
pub fn calibrate_flat_top(
    params: &GateParams,
    ramp: &DetuningRamp,
    cfg: &BellConfig,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    let mut evaluations = 0;
    let mut theta_at = |flat: f64| -> Result<f64> {
        evaluations += 1;
        let mut p = params.clone();
        p.flat_top = flat;
        theta_total(&p, ramp, cfg)
    };
    let target = opts.target_theta;
    let theta0 = theta_at(0.0)?;
    if theta0 >= target {
        return Ok(Calibration {
            flat_top: 0.0,
            theta_total: theta0,
            evaluations,
        });
    }
    let (mut lo, mut hi) = (0.0, 0.0);
    let mut reached = theta0;
    let mut found = false;
    while hi < opts.max_flat_top {
        lo = hi;
        hi = (hi + opts.scan_step).min(opts.max_flat_top);
        let th = theta_at(hi)?;
        reached = reached.max(th);
        if th >= target {
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::Bracket {
            lo: 0.0,
            hi: opts.max_flat_top,
            target,
            reached,
        });
    }
    let mut best = (hi, theta_at(hi)?);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let th = theta_at(mid)?;
        if th >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if (th - target).abs() < (best.1 - target).abs() {
            best = (mid, th);
        }
        if (th - target).abs() <= opts.tolerance || hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Ok(Calibration {
        flat_top: best.0,
        theta_total: best.1,
        evaluations,
    })
}

/// Flat top maximizing the ground-state Bell fidelity (fast path) over
/// one gate-mode loop period either side of the geometric-phase solution:
/// a grid search followed by golden-section refinement.
pub fn optimize_flat_top(
    params: &GateParams,
    ramp: &DetuningRamp,
    cfg: &BellConfig,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    opts.validate()?;
    let start = calibrate_flat_top(params, ramp, cfg, opts)?;
    let fast = BellConfig {
        level: SimulationLevel::Truncated,
        ..cfg.clone()
    };
    let mut evaluations = start.evaluations;
    let mut infidelity = |flat: f64| -> Result<f64> {
        evaluations += 1;
        let mut p = params.clone();
        p.flat_top = flat;
        Ok(bell_sequence(&p, ramp, &InitialMotionalState::Ground, &fast)?.infidelity())
    };
    let period = 2.0 * PI / params.detuning_near.abs();
    let lo = (start.flat_top - period).max(0.0);
    let hi = start.flat_top + period;
    let n = ((hi - lo) / opts.fidelity_step).ceil().max(2.0) as usize;
    let step = (hi - lo) / n as f64;
    let mut best = (start.flat_top, infidelity(start.flat_top)?);
    for k in 0..=n {
        let f = lo + k as f64 * step;
        let i = infidelity(f)?;
        if i < best.1 {
            best = (f, i);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(0.0), best.0 + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (infidelity(c)?, infidelity(d)?);
    while b - a > 1e-4 {
        if fc < fd {
            (b, d, fd) = (d, c, fc);
            c = b - g * (b - a);
            fc = infidelity(c)?;
        } else {
            (a, c, fc) = (c, d, fd);
            d = a + g * (b - a);
            fd = infidelity(d)?;
        }
    }
    for (f, i) in [(c, fc), (d, fd)] {
        if i < best.1 {
            best = (f, i);
        }
    }
    let theta = {
        let mut p = params.clone();
        p.flat_top = best.0;
        theta_total(&p, ramp, cfg)?
    };
    Ok(Calibration {
        flat_top: best.0,
        theta_total: theta,
        evaluations,
    })
}

/// Calibration with the method selected in `opts`.
pub fn calibrate(
    params: &GateParams,
    ramp: &DetuningRamp,
    cfg: &BellConfig,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    match opts.method {
        CalibrationMethod::GeometricPhase => calibrate_flat_top(params, ramp, cfg, opts),
        CalibrationMethod::BellFidelity => optimize_flat_top(params, ramp, cfg, opts),
    }
}

/// Calibrates the flat top, then runs the sequence at the configured level.
pub fn calibrated_bell_sequence(
    params: &GateParams,
    ramp: &DetuningRamp,
    initial: &InitialMotionalState,
    cfg: &BellConfig,
    opts: &CalibrationOptions,
) -> Result<(Calibration, BellResult)> {
    let cal = calibrate(params, ramp, cfg, opts)?;
    let mut p = params.clone();
    p.flat_top = cal.flat_top;
    Ok((cal, bell_sequence(&p, ramp, initial, cfg)?))
}

/// Gradient Rabi rate giving `target` two-arm phase at the flat top in
/// `params`. Θ scales as Ω_g² at fixed timing, so one rescaling suffices.
pub fn infer_rabi_g(
    params: &GateParams,
    ramp: &DetuningRamp,
    cfg: &BellConfig,
    target: f64,
) -> Result<f64> {
    let theta = theta_total(params, ramp, cfg)?;
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "reference phase {theta} must be positive"
        )));
    }
    Ok(params.rabi_g * (target / theta).sqrt())
}

/// Reference timing: 10 μs Ω_g ramps, 30 μs Ω_μ ramps, a 50 μs motional ramp
/// and a 527 μs arm.
pub fn reference_ramp(params: &GateParams) -> Result<DetuningRamp> {
    DetuningRamp::adiabatic_with_duration(params.detuning_far, params.detuning_near, 50.0)
}

/// Ramp with total duration `tau_m`; zero means unramped.
pub fn ramp_for_duration(params: &GateParams, tau_m: f64) -> Result<DetuningRamp> {
    if tau_m == 0.0 {
        DetuningRamp::none(params.detuning_far, params.detuning_near)
    } else {
        DetuningRamp::adiabatic_with_duration(params.detuning_far, params.detuning_near, tau_m)
    }
}

/// One sweep grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub config: String,
    pub tau_m_us: f64,
    pub alpha: f64,
    pub nbar: f64,
    /// ε in units of 1/T_ref.
    pub epsilon_units: f64,
    /// ε as angular frequency, rad/μs.
    pub epsilon: f64,
    pub flat_top_us: f64,
    pub gate_time_us: f64,
    pub infidelity: f64,
    pub fidelity_overlap: f64,
    pub theta_total_rad: f64,
    pub xi_residual_abs: f64,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl SweepRow {
    fn pending(index: usize, config: &str, tau_m: f64, nbar: f64) -> Self {
        Self {
            index,
            config: config.into(),
            tau_m_us: tau_m,
            alpha: 0.0,
            nbar,
            epsilon_units: 0.0,
            epsilon: 0.0,
            flat_top_us: 0.0,
            gate_time_us: 0.0,
            infidelity: f64::NAN,
            fidelity_overlap: f64::NAN,
            theta_total_rad: f64::NAN,
            xi_residual_abs: f64::NAN,
            wall_time_s: 0.0,
            error: None,
        }
    }

    fn fill(mut self, res: Result<BellResult>) -> Self {
        match res {
            Ok(r) => {
                self.infidelity = r.infidelity();
                self.fidelity_overlap = r.fidelity_overlap;
                self.theta_total_rad = r.theta_total;
                self.xi_residual_abs = r.xi_residual_abs;
                self.gate_time_us = r.gate_time_us;
                self.wall_time_s = r.wall_time_s;
            }
            Err(e) => self.error = Some(e.to_string()),
        }
        self
    }

    fn fail(mut self, msg: String) -> Self {
        self.error = Some(msg);
        self
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

fn ramp_label(tau_m: f64) -> String {
    if tau_m == 0.0 {
        "unramped".into()
    } else {
        format!("ramp_{tau_m}us")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampSweepSpec {
    pub params: GateParams,
    pub tau_m_us: Vec<f64>,
    pub nbar: Vec<f64>,
    pub bell: BellConfig,
    pub calibration: CalibrationOptions,
}

impl RampSweepSpec {
    pub fn reference(params: GateParams) -> Self {
        Self {
            params,
            tau_m_us: vec![0.0, 25.0, 50.0, 200.0, 250.0, 300.0],
            nbar: vec![0.0, 2.0, 5.0, 10.0],
            bell: BellConfig {
                fock_dim: 48,
                ..BellConfig::default()
            },
            calibration: CalibrationOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_m_us.is_empty() || self.nbar.is_empty() {
            return Err(Error::InvalidParameter("ramp sweep grid is empty".into()));
        }
        if self.tau_m_us.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter(
                "ramp durations must be finite and >= 0".into(),
            ));
        }
        for &n in &self.nbar {
            InitialMotionalState::PoissonMixture { nbar: n }.validate(self.bell.fock_dim)?;
        }
        self.calibration.validate()?;
        self.params.validate()
    }

    pub fn len(&self) -> usize {
        self.tau_m_us.len() * self.nbar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bell infidelity over (τ_m, n̄) with Poisson-mixture motion and one
/// flat-top calibration per τ_m. Rows are in grid order (τ_m outer); rows
/// whose index is in `skip` are not computed or returned.
pub fn sweep_ramp_duration(spec: &RampSweepSpec, skip: &BTreeSet<usize>) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let n_nbar = spec.nbar.len();
    let per_ramp: Vec<Vec<SweepRow>> = spec
        .tau_m_us
        .par_iter()
        .enumerate()
        .map(|(i, &tau)| {
            let indices: Vec<usize> = (0..n_nbar)
                .map(|j| i * n_nbar + j)
                .filter(|k| !skip.contains(k))
                .collect();
            if indices.is_empty() {
                return Vec::new();
            }
            let label = ramp_label(tau);
            let setup = ramp_for_duration(&spec.params, tau).and_then(|ramp| {
                let cal = calibrate(&spec.params, &ramp, &spec.bell, &spec.calibration)?;
                Ok((ramp, cal))
            });
            indices
                .par_iter()
                .map(|&k| {
                    let nbar = spec.nbar[k % n_nbar];
                    let row = SweepRow::pending(k, &label, tau, nbar);
                    match &setup {
                        Ok((ramp, cal)) => {
                            let mut p = spec.params.clone();
                            p.flat_top = cal.flat_top;
                            let mut row = row;
                            row.alpha = ramp.alpha;
                            row.flat_top_us = cal.flat_top;
                            row.fill(bell_sequence(
                                &p,
                                ramp,
                                &InitialMotionalState::PoissonMixture { nbar },
                                &spec.bell,
                            ))
                        }
                        Err(e) => row.fail(format!("calibration failed: {e}")),
                    }
                })
                .collect()
        })
        .collect();
    let rows: Vec<SweepRow> = per_ramp.into_iter().flatten().collect();
    info!(
        "ramp sweep finished: {} rows, {} failed",
        rows.len(),
        rows.iter().filter(|r| r.failed()).count()
    );
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetuningSweepSpec {
    pub params: GateParams,
    /// Motional ramp durations of the compared configurations (0 = unramped).
    pub configs_tau_m_us: Vec<f64>,
    /// Configuration whose calibrated gate time defines T_ref.
    pub reference_config: usize,
    /// ε grid in units of 1/T_ref.
    pub epsilon_units: Vec<f64>,
    pub nbar: f64,
    pub bell: BellConfig,
    pub calibration: CalibrationOptions,
}

impl DetuningSweepSpec {
    pub fn reference(params: GateParams) -> Self {
        Self {
            params,
            configs_tau_m_us: vec![0.0, 50.0, 300.0],
            reference_config: 1,
            epsilon_units: (-15..=15).map(|k| k as f64 / 10.0).collect(),
            nbar: 0.0,
            bell: BellConfig::default(),
            calibration: CalibrationOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.configs_tau_m_us.is_empty() || self.epsilon_units.is_empty() {
            return Err(Error::InvalidParameter(
                "detuning sweep grid is empty".into(),
            ));
        }
        if self.reference_config >= self.configs_tau_m_us.len() {
            return Err(Error::InvalidParameter(
                "reference configuration out of range".into(),
            ));
        }
        let lo = self
            .epsilon_units
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .epsilon_units
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !(lo <= -1.0 && hi >= 1.0) || self.epsilon_units.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidParameter(
                "epsilon grid must span at least ±1/T_gate".into(),
            ));
        }
        InitialMotionalState::PoissonMixture { nbar: self.nbar }.validate(self.bell.fock_dim)?;
        self.calibration.validate()?;
        self.params.validate()
    }

    pub fn len(&self) -> usize {
        self.configs_tau_m_us.len() * self.epsilon_units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bell infidelity against the detuning offset ε with the flat top of every
/// configuration calibrated at ε = 0 and frozen. Rows are in grid order
/// (configuration outer).
pub fn sweep_detuning_offset(
    spec: &DetuningSweepSpec,
    skip: &BTreeSet<usize>,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut base = spec.params.clone();
    base.epsilon = 0.0;
    let setups: Vec<Result<(DetuningRamp, Calibration)>> = spec
        .configs_tau_m_us
        .par_iter()
        .map(|&tau| {
            let ramp = ramp_for_duration(&base, tau)?;
            let cal = calibrate(&base, &ramp, &spec.bell, &spec.calibration)?;
            Ok((ramp, cal))
        })
        .collect();
    if setups[spec.reference_config].is_err() {
        return setups
            .into_iter()
            .nth(spec.reference_config)
            .expect("index checked")
            .map(|_| Vec::new());
    }
    let t_ref = match &setups[spec.reference_config] {
        Ok((ramp, cal)) => {
            let mut p = base.clone();
            p.flat_top = cal.flat_top;
            2.0 * PulseSchedule::build(&p, ramp)?.t_f()
        }
        Err(_) => unreachable!("checked above"),
    };
    let n_eps = spec.epsilon_units.len();
    let rows: Vec<SweepRow> = (0..spec.len())
        .into_par_iter()
        .filter(|k| !skip.contains(k))
        .map(|k| {
            let (c, e) = (k / n_eps, k % n_eps);
            let tau = spec.configs_tau_m_us[c];
            let mut row = SweepRow::pending(k, &ramp_label(tau), tau, spec.nbar);
            row.epsilon_units = spec.epsilon_units[e];
            row.epsilon = 2.0 * PI * row.epsilon_units / t_ref;
            match &setups[c] {
                Ok((ramp, cal)) => {
                    let mut p = base.clone();
                    p.flat_top = cal.flat_top;
                    p.epsilon = row.epsilon;
                    row.alpha = ramp.alpha;
                    row.flat_top_us = cal.flat_top;
                    let initial = InitialMotionalState::PoissonMixture { nbar: spec.nbar };
                    row.fill(bell_sequence(&p, ramp, &initial, &spec.bell))
                }
                Err(err) => row.fail(format!("calibration failed: {err}")),
            }
        })
        .collect();
    Ok(rows)
}

/// Least-squares parabola `c0 + c1 x + c2 x²`.
pub fn quadratic_fit(x: &[f64], y: &[f64]) -> Result<[f64; 3]> {
    let mut m = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let row = Vector3::new(1.0, xi, xi * xi);
        m += row * row.transpose();
        rhs += row * yi;
    }
    let c = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateFit("need three distinct abscissae".into()))?;
    Ok([c[0], c[1], c[2]])
}

/// Cross-Kerr coupling χ n_a n_b, Hz per phonon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KerrCoupling {
    pub a: String,
    pub b: String,
    pub chi_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KerrSpec {
    pub couplings: Vec<KerrCoupling>,
    /// Mean occupation per mode label.
    pub occupations: Vec<(String, f64)>,
}

impl KerrSpec {
    /// Couplings among the x-stretch (xs), y-rocking (yr) and z-rocking
    /// (zr) modes, with every occupation zero.
    pub fn reference() -> Self {
        let c = |a: &str, b: &str, chi_hz| KerrCoupling {
            a: a.into(),
            b: b.into(),
            chi_hz,
        };
        Self {
            couplings: vec![
                c("xs", "zr", -28.0),
                c("xs", "yr", -41.0),
                c("yr", "zr", 9.0),
            ],
            occupations: ["xs", "yr", "zr"]
                .iter()
                .map(|m| (m.to_string(), 0.0))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, k) in self.couplings.iter().enumerate() {
            if !k.chi_hz.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "chi({}, {}) is not finite",
                    k.a, k.b
                )));
            }
            if k.a == k.b {
                return Err(Error::InvalidParameter(format!(
                    "self-Kerr term on '{}' is not a cross-Kerr coupling",
                    k.a
                )));
            }
            let dup = self.couplings[..i]
                .iter()
                .any(|o| (o.a == k.a && o.b == k.b) || (o.a == k.b && o.b == k.a));
            if dup {
                return Err(Error::InvalidParameter(format!(
                    "chi({}, {}) given twice",
                    k.a, k.b
                )));
            }
        }
        if self
            .occupations
            .iter()
            .any(|(_, n)| !(*n >= 0.0 && n.is_finite()))
        {
            return Err(Error::InvalidParameter(
                "occupations must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// χ between two modes (symmetric), zero when not listed.
    pub fn chi(&self, a: &str, b: &str) -> f64 {
        self.couplings
            .iter()
            .find(|k| (k.a == a && k.b == b) || (k.a == b && k.b == a))
            .map_or(0.0, |k| k.chi_hz)
    }

    fn knows(&self, mode: &str) -> bool {
        self.occupations.iter().any(|(m, _)| m == mode)
            || self.couplings.iter().any(|k| k.a == mode || k.b == mode)
    }

    pub fn set_occupation(&mut self, mode: &str, nbar: f64) {
        match self.occupations.iter_mut().find(|(m, _)| m == mode) {
            Some(slot) => slot.1 = nbar,
            None => self.occupations.push((mode.into(), nbar)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KerrShift {
    /// Gate-mode frequency shift Σ_b χ_{gate,b} n_b, Hz.
    pub shift_hz: f64,
    /// Equivalent detuning offset ε (rad/μs) for the detuning sweep.
    pub epsilon_equivalent: f64,
}

pub fn kerr_shift(kerr: &KerrSpec, gate_mode: &str) -> Result<KerrShift> {
    kerr.validate()?;
    if !kerr.knows(gate_mode) {
        return Err(Error::UnknownMode(gate_mode.into()));
    }
    let shift_hz: f64 = kerr
        .occupations
        .iter()
        .filter(|(m, _)| m != gate_mode)
        .map(|(m, n)| kerr.chi(gate_mode, m) * n)
        .sum();
    // A mode shifted up by δω looks like ε = −δω.
    Ok(KerrShift {
        shift_hz,
        epsilon_equivalent: -2.0 * PI * shift_hz * 1e-6,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotOptions {
    pub population_shots: usize,
    pub parity_shots: usize,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

impl ShotOptions {
    /// 2200 population and 5600 parity trials.
    pub fn reference(seed: u64) -> Self {
        Self {
            population_shots: 2200,
            parity_shots: 5600,
            bootstrap_resamples: 1000,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledBellResult {
    pub populations: Populations,
    pub parity: Vec<f64>,
    pub parity_fringe_amplitude: f64,
    pub fidelity_parity: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_half_width: f64,
    pub exact_fidelity_parity: f64,
}

struct ShotCounts {
    pop: [u64; 3],
    parity_plus: Vec<u64>,
    parity_total: Vec<u64>,
}

fn binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    let p = p.clamp(0.0, 1.0);
    if n == 0 || p == 0.0 {
        return 0;
    }
    if p == 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

fn multinomial3<R: Rng>(rng: &mut R, n: u64, p: [f64; 3]) -> [u64; 3] {
    let total: f64 = p.iter().sum();
    let k0 = binomial(rng, n, p[0] / total);
    let rest = p[1] + p[2];
    let k1 = if rest > 0.0 {
        binomial(rng, n - k0, p[1] / rest)
    } else {
        0
    };
    [k0, k1, n - k0 - k1]
}

fn sample_counts<R: Rng>(
    rng: &mut R,
    pop: [f64; 3],
    n_pop: u64,
    p_plus: &[f64],
    shots: &[u64],
) -> ShotCounts {
    ShotCounts {
        pop: multinomial3(rng, n_pop, pop),
        parity_plus: p_plus
            .iter()
            .zip(shots)
            .map(|(&p, &n)| binomial(rng, n, p))
            .collect(),
        parity_total: shots.to_vec(),
    }
}

fn estimate(counts: &ShotCounts, phases: &[f64]) -> Result<(Populations, Vec<f64>, f64, f64)> {
    let n: u64 = counts.pop.iter().sum();
    let frac = |k: u64| k as f64 / n as f64;
    let pops = Populations {
        p_dd: frac(counts.pop[0]),
        p_mixed: frac(counts.pop[1]),
        p_uu: frac(counts.pop[2]),
    };
    let mut used_phases = Vec::new();
    let mut parity = Vec::new();
    for ((&phi, &plus), &total) in phases
        .iter()
        .zip(&counts.parity_plus)
        .zip(&counts.parity_total)
    {
        if total > 0 {
            used_phases.push(phi);
            parity.push(2.0 * plus as f64 / total as f64 - 1.0);
        }
    }
    let (_, a, b) = fit_fringe(&used_phases, &parity)?;
    let c = a.hypot(b);
    Ok((pops, parity, c, 0.5 * (pops.p_dd + pops.p_uu) + 0.5 * c))
}

/// Multinomial population and binomial per-phase parity sampling of a
/// result, with a nonparametric bootstrap 95 % interval for the parity
/// fidelity. Deterministic for a fixed seed.
pub fn shot_sample(result: &BellResult, opts: &ShotOptions) -> Result<SampledBellResult> {
    if opts.population_shots == 0 || opts.parity_shots == 0 || opts.bootstrap_resamples == 0 {
        return Err(Error::InvalidParameter(
            "shot and resample counts must be positive".into(),
        ));
    }
    let p = &result.populations;
    let pop = [p.p_dd.max(0.0), p.p_mixed.max(0.0), p.p_uu.max(0.0)];
    if pop.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidState("populations sum to zero".into()));
    }
    let n_phases = result.analysis_phases.len();
    let per = opts.parity_shots / n_phases;
    let extra = opts.parity_shots % n_phases;
    let shots: Vec<u64> = (0..n_phases)
        .map(|k| (per + usize::from(k < extra)) as u64)
        .collect();
    let p_plus: Vec<f64> = result.parity.iter().map(|&x| 0.5 * (1.0 + x)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let observed = sample_counts(&mut rng, pop, opts.population_shots as u64, &p_plus, &shots);
    let (populations, parity, amplitude, fidelity) = estimate(&observed, &result.analysis_phases)?;

    let n_pop = opts.population_shots as u64;
    let pop_hat = observed.pop.map(|k| k as f64 / n_pop as f64);
    let plus_hat: Vec<f64> = observed
        .parity_plus
        .iter()
        .zip(&shots)
        .map(|(&k, &n)| if n == 0 { 0.5 } else { k as f64 / n as f64 })
        .collect();
    let mut boot = Vec::with_capacity(opts.bootstrap_resamples);
    for _ in 0..opts.bootstrap_resamples {
        let resampled = sample_counts(&mut rng, pop_hat, n_pop, &plus_hat, &shots);
        boot.push(estimate(&resampled, &result.analysis_phases)?.3);
    }
    boot.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let pos = q * (boot.len() - 1) as f64;
        let (i, frac) = (pos.floor() as usize, pos.fract());
        if i + 1 < boot.len() {
            boot[i] * (1.0 - frac) + boot[i + 1] * frac
        } else {
            boot[i]
        }
    };
    let (ci_low, ci_high) = (quantile(0.025), quantile(0.975));
    Ok(SampledBellResult {
        populations,
        parity,
        parity_fringe_amplitude: amplitude,
        fidelity_parity: fidelity,
        ci_low,
        ci_high,
        ci_half_width: 0.5 * (ci_high - ci_low),
        exact_fidelity_parity: result.fidelity_parity,
    })
}
