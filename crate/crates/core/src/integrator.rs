//! Adaptive explicit Runge-Kutta integration with hooks between accepted
//! steps and uniform dense output.
//!
//! The default method is classical RK4 with step doubling: one full step and
//! two half steps are compared, the difference drives the step-size control
//! and the two-half-step result is extrapolated by `(y2 - y1)/15`. An
//! embedded Dormand-Prince 5(4) pair is available behind the same interface.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A first-order system `dy/dt = f(t, y)` with hooks for operator-split
/// effects (feedback, noise) and per-sample observables.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &[f64; N]) -> Result<[f64; N]>;

    /// Called before each attempted step. Anything set here is held constant
    /// over the step.
    fn before_step(&mut self, _t: f64, _y: &[f64; N]) {}

    /// Called after each accepted step; may modify the state (noise kicks,
    /// angle wrapping).
    fn after_step(&mut self, _t: f64, _y: &mut [f64; N], _dt: f64) {}

    /// Returns true once the trajectory has left the region of interest.
    fn escaped(&self, _t: f64, _y: &[f64; N]) -> bool {
        false
    }

    /// Energy-like scalar recorded with every sample.
    fn energy(&self, _t: f64, _y: &[f64; N]) -> f64 {
        0.0
    }

    fn monitor_names(&self) -> Vec<&'static str> {
        Vec::new()
    }

    /// Extra monitored quantities; must match `monitor_names` in length.
    fn monitors(&self, _t: f64, _y: &[f64; N]) -> Vec<f64> {
        Vec::new()
    }

    /// Map a dense-output sample into canonical form (e.g. wrap angles).
    fn canonicalize(&self, _y: &mut [f64; N]) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4StepDoubling,
    DormandPrince45,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Rk4StepDoubling,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            dt_init: 1e-9,
            dt_min: 1e-16,
            dt_max: 1e-7,
            max_steps: 500_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::validation("integrator", "tolerances must be positive"));
        }
        if !(self.dt_min > 0.0 && self.dt_min < self.dt_init && self.dt_init < self.dt_max) {
            return Err(Error::validation(
                "integrator",
                "need 0 < dt_min < dt_init < dt_max",
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::validation("integrator.max_steps", "must be positive"));
        }
        Ok(())
    }
}

/// Result of one accepted step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome<const N: usize> {
    pub y: [f64; N],
    pub dt_used: f64,
    /// Scaled error norm of the accepted step (`<= 1`).
    pub error: f64,
    /// Suggested size for the next step.
    pub dt_next: f64,
    /// Derivative at the start of the step (reused for dense output).
    pub f0: [f64; N],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// Singularity guard or escape criterion tripped.
    Escaped,
    StepUnderflow,
    MaxSteps,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
}

/// Uniformly sampled output of one integration segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord<const N: usize> {
    pub t: Vec<f64>,
    #[serde(with = "state_vec")]
    pub y: Vec<[f64; N]>,
    pub energy: Vec<f64>,
    pub monitor_names: Vec<String>,
    /// One row per sample, aligned with `monitor_names`.
    pub monitors: Vec<Vec<f64>>,
    pub termination: Termination,
    pub final_t: f64,
    #[serde(with = "state_arr")]
    pub final_y: [f64; N],
    pub stats: StepStats,
}

impl<const N: usize> TrajectoryRecord<N> {
    pub fn len(&self) -> usize {
        self.t.len()
    }
    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
    pub fn monitor(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.monitor_names.iter().position(|n| n == name)?;
        Some(self.monitors.iter().map(|row| row[k]).collect())
    }
    /// Appends another record's samples (e.g. the next segment of a run). A
    /// leading sample that repeats the current last time is dropped.
    pub fn extend(&mut self, other: TrajectoryRecord<N>) {
        let skip = usize::from(matches!((self.t.last(), other.t.first()), (Some(a), Some(b)) if a == b));
        self.t.extend(other.t.into_iter().skip(skip));
        self.y.extend(other.y.into_iter().skip(skip));
        self.energy.extend(other.energy.into_iter().skip(skip));
        self.monitors.extend(other.monitors.into_iter().skip(skip));
        self.termination = other.termination;
        self.final_t = other.final_t;
        self.final_y = other.final_y;
        self.stats.accepted += other.stats.accepted;
        self.stats.rejected += other.stats.rejected;
        self.stats.rhs_evals += other.stats.rhs_evals;
    }
}

mod state_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    pub fn serialize<S: Serializer, const N: usize>(
        v: &[[f64; N]],
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = v.iter().map(|r| r.as_slice()).collect();
        rows.serialize(s)
    }
    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(
        d: D,
    ) -> Result<Vec<[f64; N]>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        rows.into_iter()
            .map(|r| {
                r.try_into()
                    .map_err(|_| serde::de::Error::custom("state row has the wrong length"))
            })
            .collect()
    }
}

mod state_arr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    pub fn serialize<S: Serializer, const N: usize>(v: &[f64; N], s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }
    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[f64; N], D::Error> {
        let row: Vec<f64> = Vec::deserialize(d)?;
        row.try_into()
            .map_err(|_| serde::de::Error::custom("state has the wrong length"))
    }
}

/// How samples are produced inside a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// Only the initial and final states.
    Endpoints,
    /// Uniform grid `t0 + k dt`, filled by cubic Hermite interpolation.
    Interpolated(f64),
    /// Uniform grid `t0 + k dt`, with steps shortened to land on every
    /// sample exactly (slower, no interpolation error).
    Exact(f64),
}

fn scaled_error<const N: usize>(
    cfg: &IntegratorConfig,
    y0: &[f64; N],
    y1: &[f64; N],
    delta: &[f64; N],
) -> f64 {
    let mut e: f64 = 0.0;
    for i in 0..N {
        let scale = cfg.abs_tol + cfg.rel_tol * y0[i].abs().max(y1[i].abs());
        e = e.max(delta[i].abs() / scale);
    }
    e
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += h * k[i];
    }
    out
}

fn rk4<const N: usize, S: OdeSystem<N> + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64; N],
    f0: &[f64; N],
    h: f64,
    evals: &mut u64,
) -> Result<[f64; N]> {
    let k1 = f0;
    let k2 = sys.rhs(t + 0.5 * h, &axpy(y, 0.5 * h, k1))?;
    let k3 = sys.rhs(t + 0.5 * h, &axpy(y, 0.5 * h, &k2))?;
    let k4 = sys.rhs(t + h, &axpy(y, h, &k3))?;
    *evals += 3;
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
    }
    Ok(out)
}

/// Attempts one step of size `h`; returns the new state and the scaled error.
fn attempt<const N: usize, S: OdeSystem<N> + ?Sized>(
    sys: &S,
    cfg: &IntegratorConfig,
    t: f64,
    y: &[f64; N],
    f0: &[f64; N],
    h: f64,
    evals: &mut u64,
) -> Result<([f64; N], f64)> {
    match cfg.method {
        Method::Rk4StepDoubling => {
            let full = rk4(sys, t, y, f0, h, evals)?;
            let half = rk4(sys, t, y, f0, 0.5 * h, evals)?;
            let fm = sys.rhs(t + 0.5 * h, &half)?;
            *evals += 1;
            let two = rk4(sys, t + 0.5 * h, &half, &fm, 0.5 * h, evals)?;
            let mut delta = [0.0; N];
            let mut out = two;
            for i in 0..N {
                delta[i] = two[i] - full[i];
                out[i] += delta[i] / 15.0;
            }
            Ok((out, scaled_error(cfg, y, &out, &delta)))
        }
        Method::DormandPrince45 => dopri_step(sys, cfg, t, y, f0, h, evals),
    }
}

#[allow(clippy::excessive_precision)]
fn dopri_step<const N: usize, S: OdeSystem<N> + ?Sized>(
    sys: &S,
    cfg: &IntegratorConfig,
    t: f64,
    y: &[f64; N],
    f0: &[f64; N],
    h: f64,
    evals: &mut u64,
) -> Result<([f64; N], f64)> {
    const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    // fifth-order minus fourth-order weights
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let mut k = [[0.0; N]; 7];
    k[0] = *f0;
    let mut out = *y;
    for s in 0..6 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s + 1) {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..N {
                    ys[i] += h * a * kj[i];
                }
            }
        }
        if s == 5 {
            out = ys;
        }
        k[s + 1] = sys.rhs(t + C[s] * h, &ys)?;
        *evals += 1;
    }
    let mut delta = [0.0; N];
    for (j, kj) in k.iter().enumerate() {
        for i in 0..N {
            delta[i] += h * E[j] * kj[i];
        }
    }
    Ok((out, scaled_error(cfg, y, &out, &delta)))
}

/// One accepted adaptive step starting from `dt`. `f0` is the derivative at
/// `(t, y)`.
pub fn step_adaptive<const N: usize, S: OdeSystem<N> + ?Sized>(
    sys: &S,
    cfg: &IntegratorConfig,
    t: f64,
    y: &[f64; N],
    f0: &[f64; N],
    dt: f64,
    stats: &mut StepStats,
) -> Result<StepOutcome<N>> {
    let mut h = dt.min(cfg.dt_max);
    loop {
        match attempt(sys, cfg, t, y, f0, h, &mut stats.rhs_evals) {
            Ok((y1, err)) if err <= 1.0 && y1.iter().all(|v| v.is_finite()) => {
                stats.accepted += 1;
                let grow = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                return Ok(StepOutcome {
                    y: y1,
                    dt_used: h,
                    error: err,
                    dt_next: (h * grow).clamp(cfg.dt_min, cfg.dt_max),
                    f0: *f0,
                });
            }
            Ok((_, err)) => {
                stats.rejected += 1;
                let shrink = if err.is_finite() {
                    (0.9 * err.powf(-0.25)).clamp(0.1, 0.9)
                } else {
                    0.1
                };
                h *= shrink;
            }
            Err(e) if e.is_escape() => {
                // a stage wandered onto the guard; retry smaller unless the
                // step is already minimal
                stats.rejected += 1;
                if 0.25 * h < cfg.dt_min {
                    return Err(e);
                }
                h *= 0.25;
            }
            Err(e) => return Err(e),
        }
        if h < cfg.dt_min {
            return Err(Error::StepUnderflow { t, dt: h });
        }
    }
}

fn hermite<const N: usize>(
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    h: f64,
    y1: &[f64; N],
    f1: &[f64; N],
    t: f64,
) -> [f64; N] {
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = h00 * y0[i] + h * h10 * f0[i] + h01 * y1[i] + h * h11 * f1[i];
    }
    out
}

/// Drives a system across successive segments, carrying the step size and
/// counters between calls.
#[derive(Debug, Clone)]
pub struct Integrator {
    pub cfg: IntegratorConfig,
    pub dt_next: f64,
    pub stats: StepStats,
}

impl Integrator {
    pub fn new(cfg: IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Integrator {
            dt_next: cfg.dt_init,
            cfg,
            stats: StepStats::default(),
        })
    }

    /// Integrates from `(t0, y0)` to `t_end`, recording samples.
    /// Escapes, step underflow and an exhausted step budget end the segment
    /// early and are reported in `termination`; other errors propagate.
    pub fn advance<const N: usize, S: OdeSystem<N> + ?Sized>(
        &mut self,
        sys: &mut S,
        t0: f64,
        y0: [f64; N],
        t_end: f64,
        sampling: Sampling,
    ) -> Result<TrajectoryRecord<N>> {
        if !(t_end >= t0) {
            return Err(Error::validation("t_end", "must not precede the start time"));
        }
        let names: Vec<String> = sys.monitor_names().iter().map(|s| s.to_string()).collect();
        let mut rec = TrajectoryRecord {
            t: Vec::new(),
            y: Vec::new(),
            energy: Vec::new(),
            monitor_names: names,
            monitors: Vec::new(),
            termination: Termination::Completed,
            final_t: t0,
            final_y: y0,
            stats: StepStats::default(),
        };
        let before = self.stats;
        let push = |rec: &mut TrajectoryRecord<N>, sys: &S, t: f64, mut y: [f64; N]| {
            sys.canonicalize(&mut y);
            rec.t.push(t);
            rec.energy.push(sys.energy(t, &y));
            rec.monitors.push(sys.monitors(t, &y));
            rec.y.push(y);
        };

        let (grid_dt, exact) = match sampling {
            Sampling::Endpoints => (None, false),
            Sampling::Interpolated(d) => (Some(d), false),
            Sampling::Exact(d) => (Some(d), true),
        };
        if let Some(d) = grid_dt {
            if !(d > 0.0) {
                return Err(Error::validation("sampling", "interval must be positive"));
            }
        }
        let n_samples = grid_dt.map(|d| ((t_end - t0) / d * (1.0 + 1e-12)).floor() as u64 + 1);
        let sample_time = |k: u64| t0 + k as f64 * grid_dt.unwrap();

        push(&mut rec, sys, t0, y0);
        let mut next_k: u64 = 1;
        let (mut t, mut y) = (t0, y0);
        let mut steps: usize = 0;

        while t < t_end {
            if sys.escaped(t, &y) {
                rec.termination = Termination::Escaped;
                break;
            }
            if steps >= self.cfg.max_steps {
                rec.termination = Termination::MaxSteps;
                break;
            }
            sys.before_step(t, &y);
            let f0 = match sys.rhs(t, &y) {
                Ok(f) => f,
                Err(e) if e.is_escape() => {
                    rec.termination = Termination::Escaped;
                    break;
                }
                Err(e) => return Err(e),
            };
            self.stats.rhs_evals += 1;
            let mut limit = t_end;
            if exact {
                if let Some(n) = n_samples {
                    if next_k < n {
                        limit = limit.min(sample_time(next_k));
                    }
                }
            }
            let proposal = self.dt_next;
            let clipped = proposal >= limit - t;
            let h = if clipped { limit - t } else { proposal };
            let out = match step_adaptive(sys, &self.cfg, t, &y, &f0, h, &mut self.stats) {
                Ok(o) => o,
                Err(e) if e.is_escape() => {
                    rec.termination = Termination::Escaped;
                    break;
                }
                Err(Error::StepUnderflow { .. }) => {
                    rec.termination = Termination::StepUnderflow;
                    break;
                }
                Err(e) => return Err(e),
            };
            steps += 1;
            let t1 = if clipped && out.dt_used == h { limit } else { t + out.dt_used };
            // a clipped final step should not shrink the next proposal
            self.dt_next = if clipped && out.dt_used == h {
                out.dt_next.max(proposal.min(self.cfg.dt_max))
            } else {
                out.dt_next
            };

            if let Some(n) = n_samples {
                let mut f1: Option<[f64; N]> = None;
                while next_k < n {
                    let ts = sample_time(next_k);
                    if ts > t1 {
                        break;
                    }
                    let ys = if exact || ts == t1 {
                        out.y
                    } else {
                        if f1.is_none() {
                            f1 = Some(sys.rhs(t1, &out.y)?);
                            self.stats.rhs_evals += 1;
                        }
                        hermite(t, &y, &out.f0, t1 - t, &out.y, f1.as_ref().unwrap(), ts)
                    };
                    push(&mut rec, sys, ts, ys);
                    next_k += 1;
                }
            }

            y = out.y;
            sys.after_step(t1, &mut y, t1 - t);
            t = t1;
        }

        if grid_dt.is_none() && t > t0 {
            push(&mut rec, sys, t, y);
        }
        rec.final_t = t;
        rec.final_y = y;
        rec.stats = StepStats {
            accepted: self.stats.accepted - before.accepted,
            rejected: self.stats.rejected - before.rejected,
            rhs_evals: self.stats.rhs_evals - before.rhs_evals,
        };
        Ok(rec)
    }
}

/// One-shot convenience wrapper around [`Integrator::advance`].
pub fn integrate<const N: usize, S: OdeSystem<N> + ?Sized>(
    sys: &mut S,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    cfg: &IntegratorConfig,
    sampling: Sampling,
) -> Result<TrajectoryRecord<N>> {
    Integrator::new(*cfg)?.advance(sys, t0, y0, t_end, sampling)
}
