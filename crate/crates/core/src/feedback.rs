//! Parametric feedback: the measured `q q_dot` signal, the modulation factor
//! `1 + chi R^2 q q_dot` and piecewise-constant cooling-strength schedules.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{fold_alpha, EulerState, SmallAngleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignalChoice {
    /// `xi xi_dot`
    Xi,
    /// `eta eta_dot`
    Eta,
    /// `xi xi_dot + eta eta_dot`
    #[default]
    Sum,
    /// `p_y p_y_dot`, normalized by `((alpha_z - alpha_x) E0)^2`
    Py,
    Off,
}

impl std::str::FromStr for SignalChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xi" => Ok(SignalChoice::Xi),
            "eta" => Ok(SignalChoice::Eta),
            "sum" => Ok(SignalChoice::Sum),
            "py" => Ok(SignalChoice::Py),
            "off" => Ok(SignalChoice::Off),
            other => Err(Error::validation("feedback.signal", format!("unknown signal `{other}`"))),
        }
    }
}

/// `chi` is multiplied by `multiplier` from `t_start` on (until the next entry).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChiStep {
    pub t_start: f64,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedbackConfig {
    pub signal: SignalChoice,
    /// Cooling strength (s/m^2).
    pub chi: f64,
    /// Length scale in the modulation; the particle radius when absent.
    pub radius: Option<f64>,
    pub schedule: Vec<ChiStep>,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            signal: SignalChoice::Sum,
            chi: 1e7,
            radius: None,
            schedule: Vec::new(),
        }
    }
}

impl FeedbackConfig {
    pub fn off() -> Self {
        FeedbackConfig {
            signal: SignalChoice::Off,
            chi: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chi >= 0.0 && self.chi.is_finite()) {
            return Err(Error::validation("feedback.chi", "must be finite and >= 0"));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return Err(Error::validation("feedback.radius", "must be positive"));
            }
        }
        for w in self.schedule.windows(2) {
            if !(w[1].t_start > w[0].t_start) {
                return Err(Error::validation(
                    "feedback.schedule",
                    "start times must be strictly increasing",
                ));
            }
        }
        if self.schedule.iter().any(|s| !(s.multiplier >= 0.0)) {
            return Err(Error::validation("feedback.schedule", "multipliers must be >= 0"));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.signal != SignalChoice::Off && self.chi > 0.0
    }

    /// Times at which `chi` changes.
    pub fn boundaries(&self) -> Vec<f64> {
        self.schedule.iter().map(|s| s.t_start).collect()
    }
}

/// `chi` starts at `base`, then grows tenfold every `interval` beginning at
/// `first`, `steps` times.
pub fn decade_schedule(first: f64, interval: f64, steps: usize) -> Vec<ChiStep> {
    (0..steps)
        .map(|k| ChiStep {
            t_start: first + k as f64 * interval,
            multiplier: 10f64.powi(k as i32 + 1),
        })
        .collect()
}

/// The staged protocol: `1e7 s/m^2` from 0, tenfold each millisecond from
/// 3 ms until `1e12 s/m^2`.
pub fn staged_feedback() -> FeedbackConfig {
    FeedbackConfig {
        signal: SignalChoice::Sum,
        chi: 1e7,
        radius: None,
        schedule: decade_schedule(3e-3, 1e-3, 5),
    }
}

/// Piecewise-constant cooling strength at time `t`.
pub fn chi_at(t: f64, cfg: &FeedbackConfig) -> f64 {
    let mult = cfg
        .schedule
        .iter()
        .take_while(|s| s.t_start <= t)
        .last()
        .map_or(1.0, |s| s.multiplier);
    cfg.chi * mult
}

/// `1 + chi R^2 q q_dot`.
pub fn modulation(qqdot: f64, chi: f64, radius: f64) -> f64 {
    1.0 + chi * radius * radius * qqdot
}

/// The measured `q q_dot` (1/s) from the exact state.
pub fn feedback_signal(s: &EulerState, choice: SignalChoice) -> f64 {
    match choice {
        SignalChoice::Off => 0.0,
        SignalChoice::Xi => fold_alpha(s.alpha) * s.alpha_dot,
        SignalChoice::Eta => (FRAC_PI_2 - s.beta) * (-s.beta_dot),
        SignalChoice::Sum => {
            fold_alpha(s.alpha) * s.alpha_dot + (FRAC_PI_2 - s.beta) * (-s.beta_dot)
        }
        SignalChoice::Py => {
            let (sb, cb) = s.beta.sin_cos();
            let (s2a, c2a) = (2.0 * s.alpha).sin_cos();
            let py = 0.5 * sb * sb * s2a;
            let py_dot = sb * cb * s2a * s.beta_dot + sb * sb * c2a * s.alpha_dot;
            py * py_dot
        }
    }
}

/// The same signal on small-angle coordinates (`Py` reduces to `Xi`).
pub fn feedback_signal_small(s: &SmallAngleState, choice: SignalChoice) -> f64 {
    match choice {
        SignalChoice::Off => 0.0,
        SignalChoice::Xi | SignalChoice::Py => s.xi * s.xi_dot,
        SignalChoice::Eta => s.eta * s.eta_dot,
        SignalChoice::Sum => s.xi * s.xi_dot + s.eta * s.eta_dot,
    }
}
