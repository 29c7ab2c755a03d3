//! Gas-collision (Langevin) and photon shot-noise kicks applied between
//! integrator steps.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constants::BOLTZMANN;
use crate::error::{Error, Result};
use crate::physics::{EulerState, ParticleParams};

/// Damping rate of the `alpha`/`beta` channels at atmospheric pressure.
pub const REFERENCE_DAMPING_760_TORR: f64 = 1e5;
/// Ratio of spin damping to transverse damping.
pub const SPIN_DAMPING_FACTOR: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub langevin: bool,
    /// Gas pressure (Torr); sets the damping unless overridden.
    pub pressure: f64,
    pub gas_temperature: f64,
    /// Direct override of the `alpha_dot`/`beta_dot` damping rate (1/s).
    pub gamma_ab: Option<f64>,
    /// Direct override of the spin damping rate (1/s).
    pub gamma_spin: Option<f64>,
    pub shot: bool,
    /// Mean number of kicks per second.
    pub shot_rate: f64,
    /// RMS angular-velocity change per kick and channel (rad/s).
    pub shot_kick_rms: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            langevin: false,
            pressure: 0.0,
            gas_temperature: 300.0,
            gamma_ab: None,
            gamma_spin: None,
            shot: false,
            shot_rate: 0.0,
            shot_kick_rms: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |key: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(key, "must be finite and >= 0"))
            }
        };
        nonneg("noise.pressure", self.pressure)?;
        nonneg("noise.gas_temperature", self.gas_temperature)?;
        nonneg("noise.shot_rate", self.shot_rate)?;
        nonneg("noise.shot_kick_rms", self.shot_kick_rms)?;
        if let Some(g) = self.gamma_ab {
            nonneg("noise.gamma_ab", g)?;
        }
        if let Some(g) = self.gamma_spin {
            nonneg("noise.gamma_spin", g)?;
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.langevin || (self.shot && self.shot_rate > 0.0 && self.shot_kick_rms > 0.0)
    }

    /// `(Gamma_ab, Gamma_spin)` after applying overrides.
    pub fn damping_rates(&self) -> (f64, f64) {
        let (gab, gs) = damping_from_pressure(self.pressure);
        (self.gamma_ab.unwrap_or(gab), self.gamma_spin.unwrap_or(gs))
    }

    /// Langevin at the given pressure, shot noise off.
    pub fn gas(pressure: f64) -> Self {
        NoiseConfig {
            langevin: true,
            pressure,
            ..Default::default()
        }
    }
}

/// Free-molecular rotational damping, linear in pressure and normalized to
/// [`REFERENCE_DAMPING_760_TORR`] at one atmosphere.
pub fn damping_from_pressure(pressure_torr: f64) -> (f64, f64) {
    let g = REFERENCE_DAMPING_760_TORR * pressure_torr.max(0.0) / 760.0;
    (g, SPIN_DAMPING_FACTOR * g)
}

/// Exact Ornstein-Uhlenbeck relaxation of `x` over `dt` towards zero with
/// stationary variance `var`.
fn ou<R: Rng + ?Sized>(x: f64, gamma: f64, var: f64, dt: f64, rng: &mut R) -> f64 {
    if gamma <= 0.0 {
        return x;
    }
    let decay = (-gamma * dt).exp();
    let spread = (var * (-(-2.0 * gamma * dt).exp_m1())).sqrt();
    let n: f64 = rng.sample(StandardNormal);
    x * decay + spread * n
}

/// Thermalizing update of `alpha_dot`, `beta_dot` and `omega3`. The
/// `alpha_dot` channel uses the metric inertia `I_x sin^2 beta`.
pub fn langevin_update<R: Rng + ?Sized>(
    s: &EulerState,
    cfg: &NoiseConfig,
    particle: &ParticleParams,
    dt: f64,
    rng: &mut R,
) -> EulerState {
    let (gab, gs) = cfg.damping_rates();
    let kt = BOLTZMANN * cfg.gas_temperature;
    let sb2 = s.beta.sin().powi(2).max(1e-300);
    let mut out = *s;
    out.alpha_dot = ou(s.alpha_dot, gab, kt / (particle.inertia_x * sb2), dt, rng);
    out.beta_dot = ou(s.beta_dot, gab, kt / particle.inertia_x, dt, rng);
    out.omega3 = ou(s.omega3, gs, kt / particle.inertia_z, dt, rng);
    out
}

/// Poisson number of kicks in `dt`, each adding independent Gaussian
/// increments to `alpha_dot`, `beta_dot` and `omega3`.
pub fn shot_noise_update<R: Rng + ?Sized>(
    s: &EulerState,
    cfg: &NoiseConfig,
    dt: f64,
    rng: &mut R,
) -> EulerState {
    let lambda = cfg.shot_rate * dt;
    if !(lambda > 0.0) || cfg.shot_kick_rms == 0.0 {
        return *s;
    }
    let kicks = Poisson::new(lambda).map(|p| p.sample(rng)).unwrap_or(0.0);
    if kicks == 0.0 {
        return *s;
    }
    // sum of k Gaussian kicks is Gaussian with k times the variance
    let sd = cfg.shot_kick_rms * kicks.sqrt();
    let mut out = *s;
    out.alpha_dot += sd * rng.sample::<f64, _>(StandardNormal);
    out.beta_dot += sd * rng.sample::<f64, _>(StandardNormal);
    out.omega3 += sd * rng.sample::<f64, _>(StandardNormal);
    out
}

/// Applies the enabled mechanisms in order (gas, then shot noise).
pub fn apply_noise<R: Rng + ?Sized>(
    s: &EulerState,
    cfg: &NoiseConfig,
    particle: &ParticleParams,
    dt: f64,
    rng: &mut R,
) -> EulerState {
    let mut out = *s;
    if cfg.langevin {
        out = langevin_update(&out, cfg, particle, dt, rng);
    }
    if cfg.shot {
        out = shot_noise_update(&out, cfg, dt, rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn state() -> EulerState {
        EulerState {
            alpha: 0.1,
            beta: 1.2,
            gamma: 0.3,
            alpha_dot: 1e4,
            beta_dot: -2e4,
            omega3: 3e5,
            t: 0.0,
        }
    }

    #[test]
    fn zero_damping_leaves_state() {
        let p = ParticleParams::silica_default();
        let cfg = NoiseConfig {
            langevin: true,
            gamma_ab: Some(0.0),
            gamma_spin: Some(0.0),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(langevin_update(&state(), &cfg, &p, 1e-6, &mut rng), state());
        assert_eq!(damping_from_pressure(0.0), (0.0, 0.0));
    }

    #[test]
    fn zero_shot_rate_leaves_state() {
        let cfg = NoiseConfig {
            shot: true,
            shot_rate: 0.0,
            shot_kick_rms: 1.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(shot_noise_update(&state(), &cfg, 1e-6, &mut rng), state());
    }

    #[test]
    fn stationary_spin_variance_matches_equipartition() {
        let p = ParticleParams::silica_default();
        let g = 1e3;
        let cfg = NoiseConfig {
            langevin: true,
            gamma_ab: Some(g),
            gamma_spin: Some(g),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = EulerState::at_rest(0.0);
        let dt = 0.5 / g;
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            s = langevin_update(&s, &cfg, &p, dt, &mut rng);
            s.beta = FRAC_PI_2;
            acc += 0.5 * p.inertia_z * s.omega3 * s.omega3;
        }
        let mean = acc / n as f64;
        assert_relative_eq!(mean, 0.5 * BOLTZMANN * 300.0, max_relative = 0.03);
    }

    #[test]
    fn small_step_matches_euler_maruyama_moments() {
        // mean and variance of one OU step agree with the Euler-Maruyama
        // update to first order in gamma dt
        let (x0, g, var, dt) = (2.0, 10.0, 3.0, 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 400_000;
        let samples: Vec<f64> = (0..n).map(|_| ou(x0, g, var, dt, &mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let v = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let em_mean = x0 * (1.0 - g * dt);
        let em_var = 2.0 * g * var * dt;
        assert!((mean - em_mean).abs() < 4.0 * (em_var / n as f64).sqrt() + 1e-12);
        assert_relative_eq!(v, em_var, max_relative = 0.01);
    }

    #[test]
    fn shot_noise_energy_grows_linearly() {
        let p = ParticleParams::silica_default();
        let cfg = NoiseConfig {
            shot: true,
            shot_rate: 1e6,
            shot_kick_rms: 10.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (dt, steps, walkers) = (1e-6, 200, 2000);
        let mut acc = 0.0;
        for _ in 0..walkers {
            let mut s = EulerState::at_rest(0.0);
            for _ in 0..steps {
                s = shot_noise_update(&s, &cfg, dt, &mut rng);
            }
            acc += 0.5 * p.inertia_z * s.omega3 * s.omega3;
        }
        let mean = acc / walkers as f64;
        let t = dt * steps as f64;
        let want = 0.5 * p.inertia_z * cfg.shot_rate * cfg.shot_kick_rms.powi(2) * t;
        assert_relative_eq!(mean, want, max_relative = 0.1);
    }

    #[test]
    fn pressure_scaling_is_linear() {
        let (a, b) = damping_from_pressure(1.0);
        let (c, d) = damping_from_pressure(2.0);
        assert_relative_eq!(c, 2.0 * a, max_relative = 1e-15);
        assert_relative_eq!(d, 2.0 * b, max_relative = 1e-15);
        assert_relative_eq!(damping_from_pressure(760.0).0, REFERENCE_DAMPING_760_TORR);
    }
}
