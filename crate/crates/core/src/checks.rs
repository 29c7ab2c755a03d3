//! Invariant suite: conservation laws, gradient consistency, thermal
//! statistics and scalar parameter checks.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    axial_displacement_ratio, conserved_precession_quantity, cooling_power_elliptical, cooling_power_linear,
    mode_state, CoolingParams, SmallAngleParams,
};
use crate::constants::BOLTZMANN;
use crate::error::Result;
use crate::feedback::{FeedbackConfig, SignalChoice};
use crate::integrator::{Integrator, IntegratorConfig, Sampling};
use crate::noise::NoiseConfig;
use crate::physics::{
    lab_angular_momentum, potential_at, potential_gradient, rotation_matrix, shifted_energy_kelvin,
    thermal_coupling_frequency, EulerState, ParticleParams, SmallAngleState, TrapParams,
};
use crate::simulation::{FullSystem, SmallAngleSystem};
use crate::stats::{fit_maxwell_boltzmann, mean, slope, DofExponent};
use crate::thermal::{sample_state, SamplerStats, ThermalConfig};

/// Reference inertia values (kg m^2).
pub const REFERENCE_INERTIA_X: f64 = 1.041e-31;
pub const REFERENCE_INERTIA_Z: f64 = 2.974e-32;
/// Axial displacement over Rayleigh range for the default trap.
pub const REFERENCE_DISPLACEMENT_RATIO: f64 = 0.159;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Passing means `value <= tolerance`, or `value` within `tolerance`
    /// (relative) of `target` when one is set.
    pub tolerance: f64,
    pub target: Option<f64>,
    pub passed: bool,
}

impl Check {
    pub fn below(name: &str, value: f64, tolerance: f64) -> Check {
        Check {
            name: name.into(),
            value,
            tolerance,
            target: None,
            passed: value <= tolerance,
        }
    }

    pub fn near(name: &str, value: f64, target: f64, tolerance: f64) -> Check {
        Check {
            name: name.into(),
            value,
            tolerance,
            target: Some(target),
            passed: ((value - target) / target).abs() <= tolerance,
        }
    }
}

/// Integrator used by the conservation checks.
pub fn tight_integrator() -> IntegratorConfig {
    IntegratorConfig {
        rel_tol: 1e-11,
        abs_tol: 1e-13,
        ..IntegratorConfig::default()
    }
}

fn rel_change(a: f64, b: f64) -> f64 {
    ((b - a) / a).abs()
}

/// Relative changes of `omega3`, the shifted energy and the lab-frame
/// angular momentum `L_x` over a free (unmodulated) run.
pub fn free_conservation(
    particle: &ParticleParams,
    trap: &TrapParams,
    s0: &EulerState,
    duration: f64,
    integrator: IntegratorConfig,
) -> Result<(f64, f64)> {
    let fb = FeedbackConfig::off();
    let noise = NoiseConfig::default();
    let mut sys = FullSystem::new(particle, trap, &fb, &noise, None);
    sys.escape_kelvin = f64::INFINITY;
    let mut integ = Integrator::new(integrator)?;
    let rec = integ.advance(&mut sys, 0.0, s0.to_vector(), duration, Sampling::Endpoints)?;
    let s1 = EulerState::from_vector(rec.final_t, &rec.final_y);
    Ok((
        rel_change(s0.omega3, s1.omega3),
        rel_change(
            shifted_energy_kelvin(s0, trap, particle),
            shifted_energy_kelvin(&s1, trap, particle),
        ),
    ))
}

/// Relative change of the precession quantity of the linearized dynamics
/// under linear-polarization feedback.
pub fn small_angle_precession_drift(
    particle: &ParticleParams,
    trap: &TrapParams,
    s0: &EulerState,
    feedback: &FeedbackConfig,
    duration: f64,
    integrator: IntegratorConfig,
) -> Result<f64> {
    let params = SmallAngleParams::new(trap, particle, s0.omega3);
    let wc = params.omega_c;
    let mut sys = SmallAngleSystem::new(params, feedback, particle);
    let y0 = SmallAngleSystem::vector(&SmallAngleState::from_euler(s0));
    let mut integ = Integrator::new(integrator)?;
    let rec = integ.advance(&mut sys, 0.0, y0, duration, Sampling::Endpoints)?;
    let q0 = conserved_precession_quantity(&SmallAngleSystem::state(0.0, &y0), wc);
    let q1 = conserved_precession_quantity(&SmallAngleSystem::state(rec.final_t, &rec.final_y), wc);
    Ok(rel_change(q0, q1))
}

/// Relative change of the lab-frame `L_x` of the full dynamics under
/// linear-polarization feedback.
pub fn full_lx_drift(
    particle: &ParticleParams,
    trap: &TrapParams,
    s0: &EulerState,
    feedback: &FeedbackConfig,
    duration: f64,
    integrator: IntegratorConfig,
) -> Result<f64> {
    let noise = NoiseConfig::default();
    let mut sys = FullSystem::new(particle, trap, feedback, &noise, None);
    let mut integ = Integrator::new(integrator)?;
    let rec = integ.advance(&mut sys, 0.0, s0.to_vector(), duration, Sampling::Endpoints)?;
    let s1 = EulerState::from_vector(rec.final_t, &rec.final_y);
    Ok(rel_change(
        lab_angular_momentum(s0, particle)[0],
        lab_angular_momentum(&s1, particle)[0],
    ))
}

/// Largest relative deviation between the analytic potential gradient and
/// central differences over random orientations.
pub fn gradient_error(particle: &ParticleParams, trap: &TrapParams, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = trap.e0 * trap.e0 * particle.anisotropy();
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let b = rng.gen_range(0.1..std::f64::consts::PI - 0.1);
        let h = 1e-5;
        let fa = (potential_at(a + h, b, trap, particle) - potential_at(a - h, b, trap, particle)) / (2.0 * h);
        let fb = (potential_at(a, b + h, trap, particle) - potential_at(a, b - h, trap, particle)) / (2.0 * h);
        let (ga, gb) = potential_gradient(a, b, trap, particle);
        // relative to the gradient scale; components can vanish
        let err = ((ga - fa).abs() + (gb - fb).abs()) / (ga.abs() + gb.abs()).max(1e-3 * scale);
        worst = worst.max(err);
    }
    worst
}

/// Largest deviation of `R^T R` from the identity and of `det R` from 1.
pub fn rotation_error(draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let r = rotation_matrix(
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
        );
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                worst = worst.max((d - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        worst = worst.max((det - 1.0).abs());
    }
    worst
}

/// Mean shifted energy and `n = 1` fit temperature of `n` thermal draws.
pub fn thermal_ensemble(
    particle: &ParticleParams,
    trap: &TrapParams,
    thermal: &ThermalConfig,
    n: usize,
    seed: u64,
) -> Result<(f64, f64, SamplerStats)> {
    let mut stats = SamplerStats::default();
    let mut e = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let s = sample_state(thermal, trap, particle, &mut rng, &mut stats)?;
        e.push(shifted_energy_kelvin(&s, trap, particle));
    }
    let fit = fit_maxwell_boltzmann(&e, DofExponent::Fixed(1.0))?;
    Ok((mean(&e), fit.temperature, stats))
}

/// A reproducible thermal starting state.
pub fn thermal_state(particle: &ParticleParams, trap: &TrapParams, thermal: &ThermalConfig, seed: u64) -> Result<EulerState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_state(thermal, trap, particle, &mut rng, &mut SamplerStats::default())
}

/// One simulated window compared with the cycle-averaged cooling rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateComparison {
    pub theta: f64,
    pub omega_c: f64,
    pub a_plus: f64,
    pub a_minus: f64,
    pub signal: SignalChoice,
    pub chi: f64,
    /// Least-squares slope of the simulated energy (W).
    pub simulated: f64,
    /// Closed-form rate at the initial amplitudes (W).
    pub analytic: f64,
}

impl RateComparison {
    pub fn relative_error(&self) -> f64 {
        ((self.simulated - self.analytic) / self.analytic).abs()
    }
}

/// Launches the full dynamics on a superposition of the two normal modes
/// and compares the slope of the energy over `window` with the analytic
/// rate. `chi` is lowered where needed so the energy changes by at most
/// half a percent over the window. Draws whose rate nearly cancels between
/// terms are skipped.
pub fn cooling_rate_comparison(
    particle: &ParticleParams,
    base: &TrapParams,
    chi: f64,
    draws: usize,
    window: f64,
    seed: u64,
) -> Result<Vec<RateComparison>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = NoiseConfig::default();
    let integ = IntegratorConfig {
        rel_tol: 1e-10,
        abs_tol: 1e-13,
        ..IntegratorConfig::default()
    };
    let omega = base.omega();
    let mut out = Vec::with_capacity(draws);
    while out.len() < draws {
        // every fourth draw at linear polarization
        let linear = out.len() % 4 == 0;
        let theta = if linear { 0.0 } else { rng.gen_range(0.05..0.7) };
        let trap = base.with_theta(theta, particle)?;
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let omega_c = sign * omega * rng.gen_range(0.03..0.2);
        let omega3 = omega_c * particle.inertia_x / particle.inertia_z;
        let signal = match (linear, rng.gen_range(0..3)) {
            (true, 0) | (false, 0) => SignalChoice::Xi,
            (false, 1) => SignalChoice::Eta,
            _ => SignalChoice::Sum,
        };
        let (a_plus, a_minus) = (rng.gen_range(1e-3..5e-3), rng.gen_range(1e-3..5e-3));
        let modes = SmallAngleParams::new(&trap, particle, omega3).modes()?;
        let m = mode_state(0.0, a_plus, rng.gen_range(0.0..TAU), a_minus, rng.gen_range(0.0..TAU), &modes);
        let mut cp = CoolingParams {
            omega_xi: trap.omega_xi(),
            omega_eta: trap.omega_eta(),
            omega_c,
            chi,
            radius: particle.radius,
            inertia_x: particle.inertia_x,
        };
        let rate = |cp: &CoolingParams| -> Result<f64> {
            Ok(if linear {
                let one = cooling_power_linear(a_plus, a_minus, omega, omega_c, cp.chi, cp.radius, cp.inertia_x);
                if signal == SignalChoice::Sum {
                    2.0 * one
                } else {
                    one
                }
            } else {
                cooling_power_elliptical(a_plus, a_minus, cp, signal)?
            })
        };
        let scale = cooling_power_elliptical(a_plus, a_minus, &cp, SignalChoice::Sum)?.abs();
        if rate(&cp)?.abs() < 0.2 * scale {
            continue;
        }
        let energy = particle.inertia_x
            * 0.5
            * (m.xi_dot * m.xi_dot + m.eta_dot * m.eta_dot)
            + 0.5 * particle.inertia_x * (trap.omega_xi_sq * m.xi * m.xi + trap.omega_eta_sq * m.eta * m.eta);
        cp.chi *= (5e-3 * energy / (rate(&cp)?.abs() * window)).min(1.0);
        let analytic = rate(&cp)?;

        let s0 = EulerState {
            alpha: m.xi,
            beta: FRAC_PI_2 - m.eta,
            gamma: 0.0,
            alpha_dot: m.xi_dot,
            beta_dot: -m.eta_dot,
            omega3,
            t: 0.0,
        };
        let fb = FeedbackConfig {
            signal,
            chi: cp.chi,
            ..FeedbackConfig::default()
        };
        let mut sys = FullSystem::new(particle, &trap, &fb, &noise, None);
        let dt = TAU / omega / 16.0;
        let rec = Integrator::new(integ)?.advance(&mut sys, 0.0, s0.to_vector(), window, Sampling::Interpolated(dt))?;
        let simulated = slope(&rec.t, &rec.energy) * BOLTZMANN;
        out.push(RateComparison {
            theta,
            omega_c,
            a_plus,
            a_minus,
            signal,
            chi: cp.chi,
            simulated,
            analytic,
        });
    }
    Ok(out)
}

/// The full invariant suite on the given parameters.
pub fn invariant_suite(
    particle: &ParticleParams,
    trap: &TrapParams,
    thermal: &ThermalConfig,
    seed: u64,
) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let s0 = thermal_state(particle, trap, thermal, seed)?;
    let (dw3, de) = free_conservation(particle, trap, &s0, 1e-3, tight_integrator())?;
    out.push(Check::below("omega3_conservation", dw3, 1e-8));
    out.push(Check::below("energy_conservation", de, 1e-8));

    let linear = trap.with_theta(0.0, particle)?;
    let fb = FeedbackConfig {
        signal: SignalChoice::Sum,
        ..FeedbackConfig::default()
    };
    out.push(Check::below(
        "precession_quantity_linearized",
        small_angle_precession_drift(particle, &linear, &s0, &fb, 1e-3, tight_integrator())?,
        1e-8,
    ));
    out.push(Check::below(
        "lab_lx_under_feedback",
        full_lx_drift(particle, &linear, &s0, &fb, 1e-3, tight_integrator())?,
        1e-8,
    ));
    out.push(Check::below("potential_gradient", gradient_error(particle, trap, 200, seed), 1e-6));
    out.push(Check::below("rotation_orthogonality", rotation_error(200, seed), 1e-12));

    let (mean_e, t_fit, stats) = thermal_ensemble(particle, trap, thermal, 1000, seed)?;
    out.push(Check::near("thermal_mean_energy", mean_e, 2.0 * thermal.temperature, 0.05));
    out.push(Check::near("thermal_fit_temperature", t_fit, thermal.temperature, 0.05));
    out.push(Check::below("sampler_rejection_rate", 1.0 - stats.acceptance(), 1.0 - 1e-3));

    out.push(Check::near("inertia_x", particle.inertia_x, REFERENCE_INERTIA_X, 5e-3));
    out.push(Check::near("inertia_z", particle.inertia_z, REFERENCE_INERTIA_Z, 5e-3));
    out.push(Check::near(
        "axial_displacement_ratio",
        axial_displacement_ratio(particle, trap),
        REFERENCE_DISPLACEMENT_RATIO,
        0.2,
    ));
    let wc = thermal_coupling_frequency(particle, thermal.temperature);
    out.push(Check::near("thermal_coupling_frequency", wc, 1.1e5, 0.2));
    out.push(Check::below(
        "thermal_energy_scale",
        (BOLTZMANN * thermal.temperature / (particle.inertia_x * trap.omega_sq)).sqrt(),
        0.3,
    ));
    Ok(out)
}
