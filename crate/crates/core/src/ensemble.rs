//! Monte-Carlo ensembles of thermal trajectories, run in parallel with one
//! deterministic random stream per trajectory index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{fit_modes_refined, ModeDecomposition, SmallAngleParams};
use crate::constants::BOLTZMANN;
use crate::error::{Error, Result};
use crate::feedback::FeedbackConfig;
use crate::integrator::{Integrator, IntegratorConfig, Method, Sampling, Termination, TrajectoryRecord};
use crate::noise::NoiseConfig;
use crate::physics::{shifted_energy_kelvin, EulerState, ParticleParams, SmallAngleState, TrapParams};
use crate::simulation::{barrier_kelvin, FullSystem, ESCAPE_BARRIER_FRACTION};
use crate::stats::{fit_maxwell_boltzmann, mean, sem, slope, std_dev, DofExponent, Histogram, MbFit, MIN_FIT_SAMPLES};
use crate::thermal::{sample_state, SamplerStats, ThermalConfig};

/// Trajectory failures tolerated before the whole experiment is an error.
pub const MAX_FAILED_FRACTION: f64 = 0.1;

/// Largest relative frequency adjustment allowed in window fits.
pub const FIT_MAX_SHIFT: f64 = 0.01;

/// Fine-sampled windows at the start and end of each trajectory, used for
/// mode fits and the precession invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindows {
    /// Window length (s).
    pub duration: f64,
    /// Sampling interval inside the windows (s).
    pub dt: f64,
}

impl FitWindows {
    /// `periods` librational periods sampled `per_period` times each.
    pub fn periods(trap: &TrapParams, periods: f64, per_period: f64) -> Self {
        let t = std::f64::consts::TAU / trap.omega();
        FitWindows {
            duration: periods * t,
            dt: t / per_period,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub n: usize,
    pub seed: u64,
    /// Simulated time per trajectory (s).
    pub duration: f64,
    /// Energy-trace sampling interval (s).
    pub sample_dt: f64,
    pub particle: ParticleParams,
    pub trap: TrapParams,
    pub feedback: FeedbackConfig,
    pub noise: NoiseConfig,
    pub integrator: IntegratorConfig,
    pub thermal: ThermalConfig,
    pub fit_windows: Option<FitWindows>,
    /// Escape threshold as a fraction of the in-plane saddle energy.
    pub escape_fraction: f64,
    pub histogram_bins: usize,
    /// Keep the sampled energy trace of every trajectory.
    pub keep_traces: bool,
}

/// Integrator settings used for ensembles: Dormand-Prince at `1e-7`.
pub fn ensemble_integrator() -> IntegratorConfig {
    IntegratorConfig {
        method: Method::DormandPrince45,
        rel_tol: 1e-7,
        abs_tol: 1e-9,
        ..Default::default()
    }
}

impl ExperimentConfig {
    /// Linear polarization, sum-signal feedback at `chi = 1e7`, 80 ms.
    pub fn reference_default() -> Self {
        let particle = ParticleParams::silica_default();
        ExperimentConfig {
            scenario: "custom".into(),
            n: 500,
            seed: 1,
            duration: 80e-3,
            sample_dt: 1e-4,
            trap: TrapParams::default_for(&particle),
            particle,
            feedback: FeedbackConfig::default(),
            noise: NoiseConfig::default(),
            integrator: ensemble_integrator(),
            thermal: ThermalConfig::default(),
            fit_windows: None,
            escape_fraction: ESCAPE_BARRIER_FRACTION,
            histogram_bins: 40,
            keep_traces: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("ensemble.n", "must be at least 1"));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::validation("ensemble.duration", "must be finite and >= 0"));
        }
        if !(self.sample_dt > 0.0) {
            return Err(Error::validation("output.sample_dt", "must be positive"));
        }
        if !(self.escape_fraction > 0.0) {
            return Err(Error::validation("ensemble.escape_fraction", "must be positive"));
        }
        if let Some(w) = self.fit_windows {
            if !(w.dt > 0.0 && w.duration > w.dt && 2.0 * w.duration <= self.duration) {
                return Err(Error::validation(
                    "ensemble.fit_windows",
                    "need 0 < dt < duration and two windows within the run",
                ));
            }
        }
        self.particle.validate()?;
        self.feedback.validate()?;
        self.noise.validate()?;
        self.integrator.validate()?;
        self.thermal.validate()
    }

    /// Generator for trajectory `index`: the master seed on stream `index`.
    pub fn rng_for(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

/// Cycle-averaged precession quantity and mode fit over one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub t_start: f64,
    pub invariant_mean: f64,
    pub energy_mean: f64,
    pub fit: Option<ModeDecomposition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub index: usize,
    pub initial_energy: f64,
    /// Shifted energy at the last sampled point (K).
    pub final_energy: f64,
    pub final_t: f64,
    pub termination: Termination,
    pub omega3: f64,
    pub error: Option<String>,
    pub start_window: Option<WindowSummary>,
    pub end_window: Option<WindowSummary>,
    /// `(t, energy)` trace when `keep_traces` is set.
    pub trace: Option<(Vec<f64>, Vec<f64>)>,
    /// Least-squares slope of the energy over the last fifth of the run (K/s).
    pub final_slope: f64,
    pub steps: u64,
}

impl TrajectoryOutcome {
    pub fn completed(&self) -> bool {
        self.error.is_none() && self.termination == Termination::Completed
    }
    pub fn escaped(&self) -> bool {
        self.error.is_none() && self.termination == Termination::Escaped
    }
    /// Change of the cycle-averaged precession quantity between the two
    /// windows, relative to its natural scale `(Omega/2)(A+^2 + A-^2)`,
    /// which equals `E / (I_x omega)` for the starting energy `E`.
    pub fn invariant_drift(&self, inertia_x: f64, omega: f64) -> Option<f64> {
        let (a, b) = (self.start_window?, self.end_window?);
        let scale = a.energy_mean * BOLTZMANN / (inertia_x * omega);
        Some((b.invariant_mean - a.invariant_mean).abs() / scale)
    }
}

fn summarize_window(
    rec: &TrajectoryRecord<6>,
    trap: &TrapParams,
    particle: &ParticleParams,
    omega3: f64,
) -> WindowSummary {
    let inv = rec.monitor("precession_invariant").unwrap_or_default();
    let samples: Vec<SmallAngleState> = rec
        .t
        .iter()
        .zip(&rec.y)
        .map(|(t, y)| SmallAngleState::from_euler_tip(&EulerState::from_vector(*t, y)))
        .collect();
    let fit = SmallAngleParams::new(trap, particle, omega3)
        .modes()
        .and_then(|m| fit_modes_refined(&samples, &m, FIT_MAX_SHIFT))
        .ok();
    WindowSummary {
        t_start: rec.t.first().copied().unwrap_or(0.0),
        invariant_mean: if inv.is_empty() { 0.0 } else { mean(&inv) },
        energy_mean: mean(&rec.energy),
        fit,
    }
}

/// Integrates one thermal trajectory of the experiment.
pub fn run_trajectory(cfg: &ExperimentConfig, index: usize) -> TrajectoryOutcome {
    let mut out = TrajectoryOutcome {
        index,
        initial_energy: f64::NAN,
        final_energy: f64::NAN,
        final_t: 0.0,
        termination: Termination::Completed,
        omega3: 0.0,
        error: None,
        start_window: None,
        end_window: None,
        trace: None,
        final_slope: 0.0,
        steps: 0,
    };
    if let Err(e) = run_into(cfg, index, &mut out) {
        out.error = Some(e.to_string());
    }
    out
}

fn run_into(cfg: &ExperimentConfig, index: usize, out: &mut TrajectoryOutcome) -> Result<()> {
    let mut rng = cfg.rng_for(index);
    let mut stats = SamplerStats::default();
    let s0 = sample_state(&cfg.thermal, &cfg.trap, &cfg.particle, &mut rng, &mut stats)?;
    out.omega3 = s0.omega3;
    out.initial_energy = shifted_energy_kelvin(&s0, &cfg.trap, &cfg.particle);
    let mut sys = FullSystem::new(&cfg.particle, &cfg.trap, &cfg.feedback, &cfg.noise, Some(rng));
    sys.escape_kelvin = cfg.escape_fraction * barrier_kelvin(&cfg.trap, &cfg.particle);
    let mut integ = Integrator::new(cfg.integrator)?;
    let coarse = Sampling::Interpolated(cfg.sample_dt);
    let y0 = s0.to_vector();
    let t_end = cfg.duration;

    let mut trace: TrajectoryRecord<6>;
    if let Some(w) = cfg.fit_windows {
        let first = integ.advance(&mut sys, 0.0, y0, w.duration, Sampling::Interpolated(w.dt))?;
        out.start_window = Some(summarize_window(&first, &cfg.trap, &cfg.particle, s0.omega3));
        trace = thin(&first, cfg.sample_dt);
        if first.termination == Termination::Completed {
            let t_mid = t_end - w.duration;
            let mid = integ.advance(&mut sys, first.final_t, first.final_y, t_mid, coarse)?;
            let (t1, y1, done) = (mid.final_t, mid.final_y, mid.termination == Termination::Completed);
            trace.extend(mid);
            if done {
                let last = integ.advance(&mut sys, t1, y1, t_end, Sampling::Interpolated(w.dt))?;
                out.end_window = Some(summarize_window(&last, &cfg.trap, &cfg.particle, s0.omega3));
                trace.extend(last);
            }
        }
    } else {
        trace = integ.advance(&mut sys, 0.0, y0, t_end, coarse)?;
    }

    out.termination = trace.termination;
    out.final_t = trace.final_t;
    out.final_energy = *trace.energy.last().expect("records hold the initial sample");
    out.steps = integ.stats.accepted;
    let n = trace.t.len();
    let tail = n - n / 5;
    if n - tail >= 3 {
        out.final_slope = slope(&trace.t[tail..], &trace.energy[tail..]);
    }
    if cfg.keep_traces {
        out.trace = Some((trace.t, trace.energy));
    }
    Ok(())
}

/// Keeps the samples of a finely sampled record closest to a coarse grid.
pub(crate) fn thin(rec: &TrajectoryRecord<6>, dt: f64) -> TrajectoryRecord<6> {
    let mut keep = Vec::new();
    let mut next = rec.t.first().copied().unwrap_or(0.0);
    for (i, &t) in rec.t.iter().enumerate() {
        if t >= next - 1e-12 * dt.max(t.abs()) {
            keep.push(i);
            next += dt;
        }
    }
    if keep.last() != Some(&(rec.t.len() - 1)) {
        keep.push(rec.t.len() - 1);
    }
    let mut r = rec.clone();
    r.t = keep.iter().map(|&i| rec.t[i]).collect();
    r.y = keep.iter().map(|&i| rec.y[i]).collect();
    r.energy = keep.iter().map(|&i| rec.energy[i]).collect();
    r.monitors = keep.iter().map(|&i| rec.monitors[i].clone()).collect();
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n: usize,
    pub completed: usize,
    pub escaped: usize,
    pub failed: usize,
    /// Statistics of the final energies of completed trajectories (K).
    pub mean: f64,
    pub sem: f64,
    pub std: f64,
    pub histogram: Option<Histogram>,
    pub fit_n0: Option<MbFit>,
    pub fit_n1: Option<MbFit>,
    pub fit_free: Option<MbFit>,
    pub initial_mean: f64,
    pub initial_sem: f64,
    pub initial_fit_n1: Option<MbFit>,
    /// Initial mean within 5% of `2 T` (only meaningful for large `n`).
    pub initial_check_passed: bool,
    /// SHA-256 of the little-endian final energies in index order.
    pub digest: String,
}

impl EnsembleStats {
    pub fn from_outcomes(cfg: &ExperimentConfig, outcomes: &[TrajectoryOutcome]) -> Self {
        let finals: Vec<f64> = outcomes
            .iter()
            .filter(|o| o.completed())
            .map(|o| o.final_energy)
            .collect();
        let initials: Vec<f64> = outcomes
            .iter()
            .map(|o| o.initial_energy)
            .filter(|e| e.is_finite())
            .collect();
        let fit = |x: &[f64], n| {
            if x.len() >= MIN_FIT_SAMPLES {
                fit_maxwell_boltzmann(x, n).ok()
            } else {
                None
            }
        };
        let mut h = Sha256::new();
        for o in outcomes {
            h.update(o.final_energy.to_le_bytes());
        }
        let initial_mean = if initials.is_empty() { f64::NAN } else { mean(&initials) };
        EnsembleStats {
            n: outcomes.len(),
            completed: finals.len(),
            escaped: outcomes.iter().filter(|o| o.escaped()).count(),
            failed: outcomes.iter().filter(|o| o.error.is_some()).count(),
            mean: if finals.is_empty() { f64::NAN } else { mean(&finals) },
            sem: sem(&finals),
            std: std_dev(&finals),
            histogram: Histogram::new(&finals, cfg.histogram_bins).ok(),
            fit_n0: fit(&finals, DofExponent::Fixed(0.0)),
            fit_n1: fit(&finals, DofExponent::Fixed(1.0)),
            fit_free: fit(&finals, DofExponent::Free),
            initial_mean,
            initial_sem: sem(&initials),
            initial_fit_n1: fit(&initials, DofExponent::Fixed(1.0)),
            initial_check_passed: (initial_mean / (2.0 * cfg.thermal.temperature) - 1.0).abs() < 0.05,
            digest: format!("{:x}", h.finalize()),
        }
    }

    pub fn final_energies(outcomes: &[TrajectoryOutcome]) -> Vec<f64> {
        outcomes.iter().filter(|o| o.completed()).map(|o| o.final_energy).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub stats: EnsembleStats,
    pub outcomes: Vec<TrajectoryOutcome>,
}

/// Runs all trajectories in parallel. Results are in index order and do not
/// depend on the number of worker threads.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let outcomes: Vec<TrajectoryOutcome> = (0..cfg.n)
        .into_par_iter()
        .map(|i| run_trajectory(cfg, i))
        .collect();
    let stats = EnsembleStats::from_outcomes(cfg, &outcomes);
    if stats.failed as f64 > MAX_FAILED_FRACTION * cfg.n as f64 {
        return Err(Error::ExperimentFailed {
            failed: stats.failed,
            total: cfg.n,
        });
    }
    Ok(ExperimentResult { stats, outcomes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub theta: f64,
    pub mean: f64,
    pub sem: f64,
    pub completed: usize,
    pub escaped: usize,
}

/// Final-energy statistics versus ellipticity at fixed field amplitude.
pub fn theta_sweep(base: &ExperimentConfig, thetas: &[f64]) -> Result<Vec<(SweepPoint, ExperimentResult)>> {
    thetas
        .iter()
        .map(|&theta| {
            let mut cfg = base.clone();
            cfg.trap = base.trap.with_theta(theta, &base.particle)?;
            let r = run_experiment(&cfg)?;
            let p = SweepPoint {
                theta,
                mean: r.stats.mean,
                sem: r.stats.sem,
                completed: r.stats.completed,
                escaped: r.stats.escaped,
            };
            Ok((p, r))
        })
        .collect()
}

/// `n` ellipticities `k pi / 32`, `k = 0..n`.
pub fn default_thetas(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * std::f64::consts::PI / 32.0).collect()
}

/// Shifted energies (K) of the ensemble's initial states, without
/// integrating them.
pub fn thermal_energies(cfg: &ExperimentConfig) -> Result<(Vec<f64>, SamplerStats)> {
    cfg.validate()?;
    let mut stats = SamplerStats::default();
    let mut out = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let s = sample_state(&cfg.thermal, &cfg.trap, &cfg.particle, &mut cfg.rng_for(i), &mut stats)?;
        out.push(shifted_energy_kelvin(&s, &cfg.trap, &cfg.particle));
    }
    Ok((out, stats))
}

/// One trajectory recorded coarsely, with finely sampled windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedRun {
    pub initial: EulerState,
    /// Samples every `sample_dt` (the windows thinned to that grid).
    pub coarse: TrajectoryRecord<6>,
    pub windows: Vec<TrajectoryRecord<6>>,
}

/// Integrates trajectory `index` of `cfg`, sampling every `fine_dt` over
/// `[start, start + length]` for each start time. Windows past the end of
/// the run are clipped to it; an escape ends the run early.
pub fn windowed_run(
    cfg: &ExperimentConfig,
    index: usize,
    starts: &[f64],
    length: f64,
    fine_dt: f64,
) -> Result<WindowedRun> {
    cfg.validate()?;
    if !(length > 0.0 && fine_dt > 0.0 && fine_dt < length) {
        return Err(Error::validation("output.window", "need 0 < dt < window length"));
    }
    let mut rng = cfg.rng_for(index);
    let s0 = sample_state(&cfg.thermal, &cfg.trap, &cfg.particle, &mut rng, &mut SamplerStats::default())?;
    let mut sys = FullSystem::new(&cfg.particle, &cfg.trap, &cfg.feedback, &cfg.noise, Some(rng));
    sys.escape_kelvin = cfg.escape_fraction * barrier_kelvin(&cfg.trap, &cfg.particle);
    let mut integ = Integrator::new(cfg.integrator)?;
    let mut starts: Vec<f64> = starts.iter().map(|s| s.clamp(0.0, (cfg.duration - length).max(0.0))).collect();
    starts.sort_by(|a, b| a.total_cmp(b));
    starts.dedup();

    let (mut t, mut y) = (0.0, s0.to_vector());
    let mut coarse: Option<TrajectoryRecord<6>> = None;
    let mut windows = Vec::new();
    let push = |coarse: &mut Option<TrajectoryRecord<6>>, r: TrajectoryRecord<6>| match coarse {
        Some(c) => c.extend(r),
        None => *coarse = Some(r),
    };
    for &a in &starts {
        if a > t {
            let r = integ.advance(&mut sys, t, y, a, Sampling::Interpolated(cfg.sample_dt))?;
            (t, y) = (r.final_t, r.final_y);
            let stop = r.termination != Termination::Completed;
            push(&mut coarse, r);
            if stop {
                break;
            }
        }
        let end = (a + length).min(cfg.duration);
        if end <= t {
            continue;
        }
        let w = integ.advance(&mut sys, t, y, end, Sampling::Interpolated(fine_dt))?;
        (t, y) = (w.final_t, w.final_y);
        let stop = w.termination != Termination::Completed;
        push(&mut coarse, thin(&w, cfg.sample_dt));
        windows.push(w);
        if stop {
            break;
        }
    }
    let done = coarse.as_ref().map_or(true, |c| c.termination == Termination::Completed);
    if done && t < cfg.duration {
        let r = integ.advance(&mut sys, t, y, cfg.duration, Sampling::Interpolated(cfg.sample_dt))?;
        push(&mut coarse, r);
    }
    let coarse = match coarse {
        Some(c) => c,
        None => integ.advance(&mut sys, 0.0, s0.to_vector(), 0.0, Sampling::Endpoints)?,
    };
    Ok(WindowedRun {
        initial: s0,
        coarse,
        windows,
    })
}

/// A single staged-cooling trajectory from a given state.
pub fn staged_chi_run(
    particle: &ParticleParams,
    trap: &TrapParams,
    feedback: &FeedbackConfig,
    integrator: &IntegratorConfig,
    s0: &EulerState,
    duration: f64,
    sample_dt: f64,
) -> Result<TrajectoryRecord<6>> {
    let noise = NoiseConfig::default();
    let mut sys = FullSystem::new(particle, trap, feedback, &noise, None);
    let mut integ = Integrator::new(*integrator)?;
    integ.advance(&mut sys, 0.0, s0.to_vector(), duration, Sampling::Interpolated(sample_dt))
}
