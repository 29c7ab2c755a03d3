//! ODE systems for the integrator: the full Euler-angle dynamics with
//! feedback and noise hooks, and the linearized tip equations.

use std::f64::consts::TAU;

use rand_chacha::ChaCha8Rng;

use crate::analytics::{
    conserved_precession_quantity, coupling_frequency, small_angle_energy, small_angle_rhs,
    SmallAngleParams,
};
use crate::constants::BOLTZMANN;
use crate::error::Result;
use crate::feedback::{chi_at, feedback_signal, feedback_signal_small, modulation, FeedbackConfig};
use crate::integrator::OdeSystem;
use crate::noise::{apply_noise, NoiseConfig};
use crate::physics::{
    eom_rhs, lab_angular_momentum, shifted_energy_kelvin, total_energy, EulerState,
    ParticleParams, SmallAngleState, TrapParams,
};

/// Default escape threshold as a fraction of the lowest potential barrier.
pub const ESCAPE_BARRIER_FRACTION: f64 = 0.5;

/// Lowest barrier out of the well around `alpha = 0` (K): the saddle at
/// `alpha = pi/2` in the trap plane.
pub fn barrier_kelvin(trap: &TrapParams, particle: &ParticleParams) -> f64 {
    particle.inertia_x * trap.omega_xi_sq / 2.0 / BOLTZMANN
}

pub const FULL_MONITORS: [&str; 4] = ["omega3", "total_energy_j", "precession_invariant", "lab_lx"];

/// Full rigid-body dynamics in the state layout of
/// [`EulerState::to_vector`].
pub struct FullSystem<'a> {
    pub particle: &'a ParticleParams,
    pub trap: &'a TrapParams,
    pub feedback: &'a FeedbackConfig,
    pub noise: &'a NoiseConfig,
    rng: Option<ChaCha8Rng>,
    radius: f64,
    modulation: f64,
    /// Shifted energy (K) beyond which the run is stopped as escaped.
    pub escape_kelvin: f64,
}

impl<'a> FullSystem<'a> {
    pub fn new(
        particle: &'a ParticleParams,
        trap: &'a TrapParams,
        feedback: &'a FeedbackConfig,
        noise: &'a NoiseConfig,
        rng: Option<ChaCha8Rng>,
    ) -> Self {
        FullSystem {
            particle,
            trap,
            feedback,
            noise,
            rng,
            radius: feedback.radius.unwrap_or(particle.radius),
            modulation: 1.0,
            escape_kelvin: ESCAPE_BARRIER_FRACTION * barrier_kelvin(trap, particle),
        }
    }

    pub fn current_modulation(&self) -> f64 {
        self.modulation
    }

    pub fn state(t: f64, y: &[f64; 6]) -> EulerState {
        EulerState::from_vector(t, y)
    }
}

impl OdeSystem<6> for FullSystem<'_> {
    fn rhs(&self, t: f64, y: &[f64; 6]) -> Result<[f64; 6]> {
        let s = EulerState::from_vector(t, y);
        let d = eom_rhs(&s, self.trap, self.particle, self.modulation)?;
        Ok([d[0], d[1], d[2], d[3], d[4], 0.0])
    }

    fn before_step(&mut self, t: f64, y: &[f64; 6]) {
        self.modulation = if self.feedback.is_active() {
            let s = EulerState::from_vector(t, y);
            let q = feedback_signal(&s, self.feedback.signal);
            modulation(q, chi_at(t, self.feedback), self.radius)
        } else {
            1.0
        };
    }

    fn after_step(&mut self, t: f64, y: &mut [f64; 6], dt: f64) {
        if self.noise.is_active() {
            if let Some(rng) = self.rng.as_mut() {
                let s = EulerState::from_vector(t, y);
                *y = apply_noise(&s, self.noise, self.particle, dt, rng).to_vector();
            }
        }
        y[2] = y[2].rem_euclid(TAU);
    }

    fn escaped(&self, t: f64, y: &[f64; 6]) -> bool {
        shifted_energy_kelvin(&EulerState::from_vector(t, y), self.trap, self.particle)
            > self.escape_kelvin
    }

    fn energy(&self, t: f64, y: &[f64; 6]) -> f64 {
        shifted_energy_kelvin(&EulerState::from_vector(t, y), self.trap, self.particle)
    }

    fn monitor_names(&self) -> Vec<&'static str> {
        FULL_MONITORS.to_vec()
    }

    fn monitors(&self, t: f64, y: &[f64; 6]) -> Vec<f64> {
        let s = EulerState::from_vector(t, y);
        let wc = coupling_frequency(self.particle, s.omega3);
        let tip = SmallAngleState::from_euler_tip(&s);
        vec![
            s.omega3,
            total_energy(&s, self.trap, self.particle),
            conserved_precession_quantity(&tip, wc),
            lab_angular_momentum(&s, self.particle)[0],
        ]
    }

    fn canonicalize(&self, y: &mut [f64; 6]) {
        y[2] = y[2].rem_euclid(TAU);
    }
}

pub const SMALL_MONITORS: [&str; 1] = ["precession_invariant"];

/// Linearized tip dynamics, state `(xi, eta, xi_dot, eta_dot)`.
pub struct SmallAngleSystem<'a> {
    pub params: SmallAngleParams,
    pub feedback: &'a FeedbackConfig,
    pub inertia_x: f64,
    radius: f64,
    modulation: f64,
}

impl<'a> SmallAngleSystem<'a> {
    pub fn new(params: SmallAngleParams, feedback: &'a FeedbackConfig, particle: &ParticleParams) -> Self {
        SmallAngleSystem {
            params,
            feedback,
            inertia_x: particle.inertia_x,
            radius: feedback.radius.unwrap_or(particle.radius),
            modulation: 1.0,
        }
    }

    pub fn state(t: f64, y: &[f64; 4]) -> SmallAngleState {
        SmallAngleState {
            xi: y[0],
            eta: y[1],
            xi_dot: y[2],
            eta_dot: y[3],
            t,
        }
    }

    pub fn vector(s: &SmallAngleState) -> [f64; 4] {
        [s.xi, s.eta, s.xi_dot, s.eta_dot]
    }
}

impl OdeSystem<4> for SmallAngleSystem<'_> {
    fn rhs(&self, t: f64, y: &[f64; 4]) -> Result<[f64; 4]> {
        Ok(small_angle_rhs(&Self::state(t, y), &self.params, self.modulation))
    }

    fn before_step(&mut self, t: f64, y: &[f64; 4]) {
        self.modulation = if self.feedback.is_active() {
            let q = feedback_signal_small(&Self::state(t, y), self.feedback.signal);
            modulation(q, chi_at(t, self.feedback), self.radius)
        } else {
            1.0
        };
    }

    fn energy(&self, t: f64, y: &[f64; 4]) -> f64 {
        small_angle_energy(&Self::state(t, y), &self.params, self.inertia_x) / BOLTZMANN
    }

    fn monitor_names(&self) -> Vec<&'static str> {
        SMALL_MONITORS.to_vec()
    }

    fn monitors(&self, t: f64, y: &[f64; 4]) -> Vec<f64> {
        vec![conserved_precession_quantity(&Self::state(t, y), self.params.omega_c)]
    }
}
