//! Thermal initial conditions: orientation from the Boltzmann weight of the
//! trap potential, body rates from equipartition.
//!
//! With `u = cos(beta)` the orientation density `sin(beta) exp(-dU/kT)`
//! becomes `exp(-dU/kT) dalpha du`, and for fixed `alpha` the `u` dependence
//! is Gaussian: `dU/kT = L (cos^2 theta - g(alpha)) + L g(alpha) u^2` with
//! `L = (alpha_z - alpha_x) E0^2 / (4 kT)`. The sampler draws `alpha` from
//! its marginal by rejection and then `u` from the truncated Gaussian.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::constants::BOLTZMANN;
use crate::error::{Error, Result};
use crate::physics::{euler_rates_from_body, EulerState, ParticleParams, TrapParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermalConfig {
    /// Temperature (K).
    pub temperature: f64,
    /// Maximum proposals per draw.
    pub rejection_cap: usize,
    /// Drop the `sin(beta)` Jacobian from the orientation density.
    pub literal_eq26: bool,
}

impl Default for ThermalConfig {
    fn default() -> Self {
        ThermalConfig {
            temperature: 300.0,
            rejection_cap: 1_000_000,
            literal_eq26: false,
        }
    }
}

impl ThermalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::validation("thermal.temperature", "must be positive"));
        }
        if self.rejection_cap == 0 {
            return Err(Error::validation("thermal.rejection_cap", "must be positive"));
        }
        Ok(())
    }
}

/// Proposal counters for acceptance-rate reporting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub proposals: u64,
    pub accepted: u64,
}

impl SamplerStats {
    pub fn acceptance(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
    pub fn merge(&mut self, other: &SamplerStats) {
        self.proposals += other.proposals;
        self.accepted += other.accepted;
    }
}

/// Body-frame rates with `omega_i ~ N(0, k T / I_i)`.
pub fn sample_angular_velocities<R: Rng + ?Sized>(
    cfg: &ThermalConfig,
    particle: &ParticleParams,
    rng: &mut R,
) -> [f64; 3] {
    let kt = BOLTZMANN * cfg.temperature;
    let sx = (kt / particle.inertia_x).sqrt();
    let sz = (kt / particle.inertia_z).sqrt();
    let n = |rng: &mut R| -> f64 { rng.sample(StandardNormal) };
    [sx * n(rng), sx * n(rng), sz * n(rng)]
}

/// Maps `alpha` in `[0, pi/2]` to one of its four images under the
/// symmetries of the potential.
fn reflect_alpha<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    match rng.gen_range(0..4u8) {
        0 => a,
        1 => PI - a,
        2 => PI + a,
        _ => 2.0 * PI - a,
    }
}

/// `(alpha, beta, gamma)` from the Boltzmann-weighted orientation density.
pub fn sample_orientation<R: Rng + ?Sized>(
    cfg: &ThermalConfig,
    trap: &TrapParams,
    particle: &ParticleParams,
    rng: &mut R,
    stats: &mut SamplerStats,
) -> Result<(f64, f64, f64)> {
    let kt = BOLTZMANN * cfg.temperature;
    let lam = 0.25 * trap.e0 * trap.e0 * particle.anisotropy() / kt;
    let (st, ct) = trap.theta.sin_cos();
    let (c2, s2) = (ct * ct, st * st);
    let g = |a: f64| {
        let (sa, ca) = a.sin_cos();
        c2 * ca * ca + s2 * sa * sa
    };
    let (alpha, beta) = if cfg.literal_eq26 {
        // uniform proposals on the fundamental cell, envelope 1 at the minimum
        let mut found = None;
        for _ in 0..cfg.rejection_cap {
            stats.proposals += 1;
            let a = rng.gen_range(0.0..=FRAC_PI_2);
            let b = rng.gen_range(0.0..=FRAC_PI_2);
            let sb = b.sin();
            let du = lam * (c2 - sb * sb * g(a));
            if rng.gen::<f64>() < (-du).exp() {
                found = Some((a, b));
                break;
            }
        }
        let (a, b) = found.ok_or(Error::RejectionCapExceeded(cfg.rejection_cap))?;
        stats.accepted += 1;
        let b = if rng.gen::<bool>() { b } else { PI - b };
        (reflect_alpha(a, rng), b)
    } else {
        // marginal of alpha: exp(-L (c2 - g)) Z(g), Z(g) = int_{-1}^{1} exp(-L g u^2) du
        let z = |gv: f64| {
            let x = (lam * gv).sqrt();
            if x < 1e-8 {
                2.0
            } else {
                PI.sqrt() / x * erf(x)
            }
        };
        // Z is decreasing in g; split at g = c2/2 to bound the marginal
        let bound = z(0.5 * c2).max((-0.5 * lam * c2).exp() * 2.0);
        let mut found = None;
        for _ in 0..cfg.rejection_cap {
            stats.proposals += 1;
            let a = rng.gen_range(0.0..=FRAC_PI_2);
            let gv = g(a);
            let f = (-lam * (c2 - gv)).exp() * z(gv);
            if rng.gen::<f64>() * bound < f {
                found = Some((a, gv));
                break;
            }
        }
        let (a, gv) = found.ok_or(Error::RejectionCapExceeded(cfg.rejection_cap))?;
        stats.accepted += 1;
        let u = truncated_gaussian(lam * gv, rng, cfg.rejection_cap)?;
        (reflect_alpha(a, rng), u.clamp(-1.0, 1.0).acos())
    };
    let gamma = rng.gen_range(0.0..2.0 * PI);
    Ok((alpha, beta, gamma))
}

/// Draws `u` on `[-1, 1]` with density proportional to `exp(-k u^2)`.
fn truncated_gaussian<R: Rng + ?Sized>(k: f64, rng: &mut R, cap: usize) -> Result<f64> {
    if k < 0.5 {
        // wide: uniform proposals, acceptance at least exp(-1/2)
        for _ in 0..cap {
            let u = rng.gen_range(-1.0..=1.0);
            if rng.gen::<f64>() < (-k * u * u).exp() {
                return Ok(u);
            }
        }
    } else {
        let sd = (0.5 / k).sqrt();
        for _ in 0..cap {
            let u = sd * rng.sample::<f64, _>(StandardNormal);
            if u.abs() <= 1.0 {
                return Ok(u);
            }
        }
    }
    Err(Error::RejectionCapExceeded(cap))
}

/// A full thermal state: orientation plus body rates mapped to Euler rates.
pub fn sample_state<R: Rng + ?Sized>(
    cfg: &ThermalConfig,
    trap: &TrapParams,
    particle: &ParticleParams,
    rng: &mut R,
    stats: &mut SamplerStats,
) -> Result<EulerState> {
    let (alpha, beta, gamma) = sample_orientation(cfg, trap, particle, rng, stats)?;
    let w = sample_angular_velocities(cfg, particle, rng);
    let (alpha_dot, beta_dot) = euler_rates_from_body(beta, gamma, w);
    Ok(EulerState {
        alpha,
        beta,
        gamma,
        alpha_dot,
        beta_dot,
        omega3: w[2],
        t: 0.0,
    })
}
