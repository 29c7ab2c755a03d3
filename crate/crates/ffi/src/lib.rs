//! C ABI over the simulator.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every fallible call returns an [`NdbStatus`];
//! on failure [`ndb_last_error`] describes the error for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nanodumbbell::analytics::SmallAngleParams;
use nanodumbbell::config::{self, RunConfig};
use nanodumbbell::ensemble::{run_experiment, ExperimentResult};
use nanodumbbell::feedback::SignalChoice;
use nanodumbbell::integrator::{Integrator, Sampling, Termination, TrajectoryRecord};
use nanodumbbell::output::Derived;
use nanodumbbell::physics::{shifted_energy_kelvin, EulerState};
use nanodumbbell::scenarios::scenario_defaults;
use nanodumbbell::simulation::{barrier_kelvin, FullSystem};
use nanodumbbell::thermal::{sample_state, SamplerStats};
use nanodumbbell::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NdbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    RuntimeError = 4,
    OutOfRange = 5,
    Panic = 6,
}

/// Resolved run configuration.
pub struct NdbConfig {
    cfg: RunConfig,
    scenario: String,
}

/// Sampled trajectory.
pub struct NdbTrajectory {
    rec: TrajectoryRecord<6>,
}

/// Results of an ensemble run.
pub struct NdbEnsemble {
    result: ExperimentResult,
}

/// Euler angles and rates; `t` is the time of the state.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NdbState {
    pub t: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub alpha_dot: f64,
    pub beta_dot: f64,
    pub omega3: f64,
}

impl From<EulerState> for NdbState {
    fn from(s: EulerState) -> Self {
        NdbState {
            t: s.t,
            alpha: s.alpha,
            beta: s.beta,
            gamma: s.gamma,
            alpha_dot: s.alpha_dot,
            beta_dot: s.beta_dot,
            omega3: s.omega3,
        }
    }
}

impl From<NdbState> for EulerState {
    fn from(s: NdbState) -> Self {
        EulerState {
            alpha: s.alpha,
            beta: s.beta,
            gamma: s.gamma,
            alpha_dot: s.alpha_dot,
            beta_dot: s.beta_dot,
            omega3: s.omega3,
            t: s.t,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NdbDerived {
    pub e0: f64,
    pub omega: f64,
    pub omega_xi: f64,
    pub omega_eta: f64,
    pub inertia_x: f64,
    pub inertia_z: f64,
    pub alpha_x: f64,
    pub alpha_z: f64,
    pub barrier_k: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NdbModes {
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub omega_c: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NdbEnsembleSummary {
    pub n: usize,
    pub completed: usize,
    pub escaped: usize,
    pub failed: usize,
    pub mean_k: f64,
    pub sem_k: f64,
    pub initial_mean_k: f64,
    /// `NaN` when fewer than the minimum number of samples completed.
    pub fit_n0_temperature: f64,
    pub fit_n1_temperature: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn status_of(e: &Error) -> NdbStatus {
    if e.is_config_error() {
        NdbStatus::ConfigError
    } else {
        NdbStatus::RuntimeError
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (NdbStatus, String)>) -> NdbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NdbStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NdbStatus::Panic
        }
    }
}

fn lib(e: Error) -> (NdbStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (NdbStatus, String) {
    (NdbStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (NdbStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (NdbStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (NdbStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn in_ptr<'a, T>(p: *const T, what: &str) -> Result<&'a T, (NdbStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ndb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ndb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn new_config(table: toml::Table, overrides: &[String], scenario: &str) -> Result<*mut NdbConfig, Error> {
    let cfg = config::load(table, None, overrides)?;
    Ok(Box::into_raw(Box::new(NdbConfig {
        cfg,
        scenario: scenario.to_string(),
    })))
}

/// Paper-default configuration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ndb_config_default(out: *mut *mut NdbConfig) -> NdbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = new_config(toml::Table::new(), &[], "custom").map_err(lib)?;
        Ok(())
    })
}

/// Configuration of a registered scenario, with optional TOML text layered
/// on top (`toml` may be null).
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ndb_config_new(
    scenario: *const c_char,
    toml_text: *const c_char,
    out: *mut *mut NdbConfig,
) -> NdbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (mut table, name) = if scenario.is_null() {
            (toml::Table::new(), "custom".to_string())
        } else {
            let name = str_arg(scenario, "scenario")?;
            (scenario_defaults(name).map_err(lib)?, name.to_string())
        };
        if !toml_text.is_null() {
            let text = str_arg(toml_text, "toml")?;
            config::merge(&mut table, config::parse_table(text, "<toml>").map_err(lib)?);
        }
        *out = new_config(table, &[], &name).map_err(lib)?;
        Ok(())
    })
}

/// Applies a dotted `key=value` override and revalidates. The
/// configuration is unchanged on failure.
///
/// # Safety
/// `cfg` must come from this library; `assignment` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ndb_config_set(cfg: *mut NdbConfig, assignment: *const c_char) -> NdbStatus {
    guard(|| {
        let c = out_ptr(cfg, "cfg")?;
        let a = str_arg(assignment, "assignment")?;
        let text = c.cfg.to_toml();
        let mut table = config::parse_table(&text, "<config>").map_err(lib)?;
        config::apply_override(&mut table, a).map_err(lib)?;
        let next = config::from_table(table, "<config>").map_err(lib)?;
        next.resolve().map_err(lib)?;
        c.cfg = next;
        Ok(())
    })
}

/// Releases a configuration; null is ignored.
///
/// # Safety
/// `cfg` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ndb_config_free(cfg: *mut NdbConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Physical quantities implied by the configuration.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ndb_config_derived(cfg: *const NdbConfig, out: *mut NdbDerived) -> NdbStatus {
    guard(|| {
        let c = in_ptr(cfg, "cfg")?;
        let out = out_ptr(out, "out")?;
        let (p, t) = c.cfg.resolve().map_err(lib)?;
        let d = Derived::new(&p, &t, c.cfg.thermal.temperature);
        *out = NdbDerived {
            e0: d.e0,
            omega: d.omega,
            omega_xi: d.omega_xi,
            omega_eta: d.omega_eta,
            inertia_x: d.inertia_x,
            inertia_z: d.inertia_z,
            alpha_x: d.alpha_x,
            alpha_z: d.alpha_z,
            barrier_k: d.barrier_k,
        };
        Ok(())
    })
}

/// Normal-mode frequencies of the linearized motion at spin `omega3`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ndb_normal_modes(cfg: *const NdbConfig, omega3: f64, out: *mut NdbModes) -> NdbStatus {
    guard(|| {
        let c = in_ptr(cfg, "cfg")?;
        let out = out_ptr(out, "out")?;
        let (p, t) = c.cfg.resolve().map_err(lib)?;
        let params = SmallAngleParams::new(&t, &p, omega3);
        let m = params.modes().map_err(lib)?;
        *out = NdbModes {
            omega_plus: m.omega_plus,
            omega_minus: m.omega_minus,
            kappa1: m.kappa1,
            kappa2: m.kappa2,
            omega_c: params.omega_c,
        };
        Ok(())
    })
}

/// Thermal initial state number `index` of the configured ensemble.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ndb_thermal_state(cfg: *const NdbConfig, index: u64, out: *mut NdbState) -> NdbStatus {
    guard(|| {
        let c = in_ptr(cfg, "cfg")?;
        let out = out_ptr(out, "out")?;
        let exp = c.cfg.experiment(&c.scenario).map_err(lib)?;
        let mut rng = exp.rng_for(index as usize);
        let s = sample_state(&exp.thermal, &exp.trap, &exp.particle, &mut rng, &mut SamplerStats::default())
            .map_err(lib)?;
        *out = s.into();
        Ok(())
    })
}

/// Shifted energy of a state (K).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ndb_energy_kelvin(cfg: *const NdbConfig, state: *const NdbState, out: *mut f64) -> NdbStatus {
    guard(|| {
        let c = in_ptr(cfg, "cfg")?;
        let s = in_ptr(state, "state")?;
        let out = out_ptr(out, "out")?;
        let (p, t) = c.cfg.resolve().map_err(lib)?;
        *out = shifted_energy_kelvin(&EulerState::from(*s), &t, &p);
        Ok(())
    })
}

/// Integrates the full dynamics from `state` for `duration` seconds with
/// the configured feedback (noise off), sampling every `sample_dt`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ndb_integrate(
    cfg: *const NdbConfig,
    state: *const NdbState,
    duration: f64,
    sample_dt: f64,
    out: *mut *mut NdbTrajectory,
) -> NdbStatus {
    guard(|| {
        let c = in_ptr(cfg, "cfg")?;
        let s0 = EulerState::from(*in_ptr(state, "state")?);
        let out = out_ptr(out, "out")?;
        if !(duration >= 0.0 && sample_dt > 0.0) {
            return Err((NdbStatus::OutOfRange, "need duration >= 0 and sample_dt > 0".into()));
        }
        let exp = c.cfg.experiment(&c.scenario).map_err(lib)?;
        let noise = nanodumbbell::noise::NoiseConfig::default();
        let mut sys = FullSystem::new(&exp.particle, &exp.trap, &exp.feedback, &noise, None);
        sys.escape_kelvin = exp.escape_fraction * barrier_kelvin(&exp.trap, &exp.particle);
        let mut integ = Integrator::new(exp.integrator).map_err(lib)?;
        let rec = integ
            .advance(&mut sys, s0.t, s0.to_vector(), s0.t + duration, Sampling::Interpolated(sample_dt))
            .map_err(lib)?;
        *out = Box::into_raw(Box::new(NdbTrajectory { rec }));
        Ok(())
    })
}

/// Number of samples; 0 for null.
///
/// # Safety
/// `traj` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ndb_trajectory_len(traj: *const NdbTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.rec.len())
}

/// Whether the run stopped early because the particle escaped.
///
/// # Safety
/// `traj` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ndb_trajectory_escaped(traj: *const NdbTrajectory) -> bool {
    traj.as_ref().is_some_and(|t| t.rec.termination == Termination::Escaped)
}

/// Sample `i`: state and shifted energy (K). Either output may be null.
///
/// # Safety
/// `traj` must come from this library; outputs must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn ndb_trajectory_sample(
    traj: *const NdbTrajectory,
    i: usize,
    state: *mut NdbState,
    energy_k: *mut f64,
) -> NdbStatus {
    guard(|| {
        let t = in_ptr(traj, "traj")?;
        if i >= t.rec.len() {
            return Err((NdbStatus::OutOfRange, format!("sample {i} of {}", t.rec.len())));
        }
        if let Some(s) = state.as_mut() {
            *s = EulerState::from_vector(t.rec.t[i], &t.rec.y[i]).into();
        }
        if let Some(e) = energy_k.as_mut() {
            *e = t.rec.energy[i];
        }
        Ok(())
    })
}

/// # Safety
/// `traj` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ndb_trajectory_free(traj: *mut NdbTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Runs the configured ensemble (parallel, deterministic per seed).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ndb_run_ensemble(cfg: *const NdbConfig, out: *mut *mut NdbEnsemble) -> NdbStatus {
    guard(|| {
        let c = in_ptr(cfg, "cfg")?;
        let out = out_ptr(out, "out")?;
        let exp = c.cfg.experiment(&c.scenario).map_err(lib)?;
        let result = run_experiment(&exp).map_err(lib)?;
        *out = Box::into_raw(Box::new(NdbEnsemble { result }));
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ndb_ensemble_summary(ens: *const NdbEnsemble, out: *mut NdbEnsembleSummary) -> NdbStatus {
    guard(|| {
        let s = &in_ptr(ens, "ens")?.result.stats;
        let out = out_ptr(out, "out")?;
        *out = NdbEnsembleSummary {
            n: s.n,
            completed: s.completed,
            escaped: s.escaped,
            failed: s.failed,
            mean_k: s.mean,
            sem_k: s.sem,
            initial_mean_k: s.initial_mean,
            fit_n0_temperature: s.fit_n0.map_or(f64::NAN, |f| f.temperature),
            fit_n1_temperature: s.fit_n1.map_or(f64::NAN, |f| f.temperature),
        };
        Ok(())
    })
}

/// Copies final energies (K, index order; `NaN` for runs that did not
/// complete) into `buf`. `written` receives the number copied, which is
/// `min(cap, n)`.
///
/// # Safety
/// `buf` must hold `cap` doubles; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ndb_ensemble_final_energies(
    ens: *const NdbEnsemble,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> NdbStatus {
    guard(|| {
        let e = in_ptr(ens, "ens")?;
        let written = out_ptr(written, "written")?;
        if buf.is_null() && cap > 0 {
            return Err(null("buf"));
        }
        let n = cap.min(e.result.outcomes.len());
        for (k, o) in e.result.outcomes.iter().take(n).enumerate() {
            *buf.add(k) = if o.completed() { o.final_energy } else { f64::NAN };
        }
        *written = n;
        Ok(())
    })
}

/// # Safety
/// `ens` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ndb_ensemble_free(ens: *mut NdbEnsemble) {
    if !ens.is_null() {
        drop(Box::from_raw(ens));
    }
}

/// Parses a feedback signal name (`xi`, `eta`, `sum`, `py`, `off`) and sets
/// it on the configuration.
///
/// # Safety
/// `cfg` must come from this library; `name` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ndb_config_set_signal(cfg: *mut NdbConfig, name: *const c_char) -> NdbStatus {
    guard(|| {
        let c = out_ptr(cfg, "cfg")?;
        let sig: SignalChoice = str_arg(name, "name")?.parse().map_err(lib)?;
        c.cfg.feedback.signal = sig;
        Ok(())
    })
}
