//! Registry of figure protocols. Each scenario is a TOML layer applied over
//! the defaults, plus the code that runs it and collects its outputs.

use std::f64::consts::TAU;

use serde::Serialize;
use serde_json::json;

use crate::analytics::{ModeFrequencies, SmallAngleParams};
use crate::checks::{invariant_suite, Check};
use crate::config::{parse_table, RunConfig};
use crate::ensemble::{
    default_thetas, run_experiment, theta_sweep, thermal_energies, windowed_run, ExperimentConfig, ExperimentResult,
};
use crate::error::{Error, Result};
use crate::feedback::chi_at;
use crate::integrator::TrajectoryRecord;
use crate::output::{histogram_csv, psd_csv, table_csv, tip_csv, trajectory_csv, OutputFile};
use crate::spectral::{estimate_psd, gouy_attenuation, significant_peaks, signal_series, height_near};
use crate::stats::{slope, Histogram};

pub const SCENARIOS: [&str; 10] = [
    "fig2a", "fig2b", "fig3b", "fig3c", "fig3d", "fig4a", "fig4b", "fig5a", "fig5b", "validate",
];

const ENSEMBLE_INTEGRATOR: &str = r#"
[integrator]
method = "dormand_prince45"
rel_tol = 1e-8
abs_tol = 1e-10
"#;

const FIG2A: &str = r#"
[feedback]
signal = "off"
chi = 0.0
[ensemble]
n = 1
duration = 2e-3
[output]
windows = [0.0]
window_periods = 700.0
"#;

const FIG2B: &str = r#"
[ensemble]
n = 1
duration = 80e-3
[output]
windows = [80e-3]
window_periods = 100.0
[output.psd]
segment_length = 512
"#;

const FIG3B: &str = r#"
[ensemble]
n = 1000
"#;

const FIG3C: &str = r#"
[feedback]
signal = "py"
[ensemble]
n = 500
duration = 80e-3
"#;

const FIG3D: &str = r#"
[trap]
theta = 0.39269908169872414
[ensemble]
n = 500
duration = 80e-3
"#;

const FIG4A: &str = r#"
[trap]
theta = 0.39269908169872414
[feedback]
signal = "sum"
chi = 1e7
schedule = [
    { t_start = 3e-3, multiplier = 10.0 },
    { t_start = 4e-3, multiplier = 100.0 },
    { t_start = 5e-3, multiplier = 1000.0 },
    { t_start = 6e-3, multiplier = 10000.0 },
    { t_start = 7e-3, multiplier = 100000.0 },
]
[integrator]
method = "rk4_step_doubling"
rel_tol = 1e-12
abs_tol = 1e-16
[ensemble]
n = 1
duration = 8e-3
[output]
sample_dt = 1e-6
"#;

const FIG4B: &str = r#"
[ensemble]
n = 200
duration = 80e-3
"#;

const FIG5A: &str = r#"
[ensemble]
n = 1
duration = 80e-3
[output]
windows = [0.0, 5e-3, 10e-3, 20e-3, 40e-3, 80e-3]
window_periods = 700.0
"#;

const FIG5B: &str = r#"
[trap]
theta = 0.39269908169872414
[ensemble]
n = 1
duration = 80e-3
[output]
windows = [0.0, 5e-3, 10e-3, 20e-3, 40e-3, 80e-3]
window_periods = 700.0
"#;

const VALIDATE: &str = r#"
[ensemble]
n = 1000
"#;

/// The scenario's configuration layer.
pub fn scenario_defaults(name: &str) -> Result<toml::Table> {
    let body = match name {
        "fig2a" => FIG2A,
        "fig2b" => FIG2B,
        "fig3b" => FIG3B,
        "fig3c" => FIG3C,
        "fig3d" => FIG3D,
        "fig4a" => return parse_table(FIG4A, name),
        "fig4b" => FIG4B,
        "fig5a" => FIG5A,
        "fig5b" => FIG5B,
        "validate" => VALIDATE,
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    let mut t = parse_table(ENSEMBLE_INTEGRATOR, name)?;
    crate::config::merge(&mut t, parse_table(body, name)?);
    Ok(t)
}

/// Files and results produced by a scenario.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub files: Vec<OutputFile>,
    pub results: serde_json::Value,
    /// False when a check of the `validate` scenario failed.
    pub passed: bool,
}

fn file(name: &str, bytes: Vec<u8>) -> OutputFile {
    OutputFile {
        name: name.to_string(),
        bytes,
    }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

pub fn run_scenario(name: &str, cfg: &RunConfig) -> Result<ScenarioRun> {
    let exp = cfg.experiment(name)?;
    match name {
        "fig2a" | "fig2b" | "fig5a" | "fig5b" => windowed(cfg, &exp),
        "fig3b" => thermal_histogram(&exp),
        "fig3c" | "fig3d" => ensemble(&exp),
        "fig4a" => staged(&exp),
        "fig4b" => sweep(cfg, &exp),
        "validate" => validate(&exp),
        other => Err(Error::UnknownScenario(other.to_string())),
    }
}

fn analytic_modes(exp: &ExperimentConfig, omega3: f64) -> Result<ModeFrequencies> {
    SmallAngleParams::new(&exp.trap, &exp.particle, omega3).modes()
}

fn windowed(cfg: &RunConfig, exp: &ExperimentConfig) -> Result<ScenarioRun> {
    let period = TAU / exp.trap.omega();
    let length = cfg.output.window_periods * period;
    let dt = period / cfg.output.samples_per_period;
    let run = windowed_run(exp, 0, &cfg.output.windows, length, dt)?;
    let modes = analytic_modes(exp, run.initial.omega3)?;
    let gouy = cfg.output.gouy.then(|| gouy_attenuation(&exp.particle, &exp.trap));

    let mut files = vec![file("energy.csv", energy_csv(&run.coarse, exp)?)];
    let mut windows = Vec::new();
    for (k, w) in run.windows.iter().enumerate() {
        files.push(file(&format!("trajectory_w{k}.csv"), trajectory_csv(w)?));
        files.push(file(&format!("tip_w{k}.csv"), tip_csv(w)?));
        let series = signal_series(&w.t, &w.y, cfg.output.psd_signal, gouy, &exp.particle, &exp.trap);
        let mut summary = json!({
            "t_start": w.t.first(),
            "t_end": w.final_t,
            "energy_mean_k": crate::stats::mean(&w.energy),
        });
        match estimate_psd(&series, dt, &cfg.output.psd) {
            Ok(psd) => {
                files.push(file(&format!("psd_w{k}.csv"), psd_csv(&psd)?));
                let df = psd.bin_width();
                summary["peaks"] = to_json(&significant_peaks(&psd, 1e-3, 2.0 * df));
                summary["height_omega_plus"] = json!(height_near(&psd, modes.omega_plus, 0.02));
                summary["height_omega_minus"] = json!(height_near(&psd, modes.omega_minus, 0.02));
            }
            Err(e) => summary["psd_error"] = json!(e.to_string()),
        }
        windows.push(summary);
    }
    Ok(ScenarioRun {
        files,
        results: json!({
            "initial_state": to_json(&run.initial),
            "initial_energy_k": run.coarse.energy.first(),
            "final_energy_k": run.coarse.energy.last(),
            "termination": to_json(&run.coarse.termination),
            "analytic_modes": to_json(&modes),
            "psd_signal": to_json(&cfg.output.psd_signal),
            "windows": windows,
        }),
        passed: true,
    })
}

fn energy_csv(rec: &TrajectoryRecord<6>, exp: &ExperimentConfig) -> Result<Vec<u8>> {
    let rows = rec
        .t
        .iter()
        .zip(&rec.energy)
        .map(|(&t, &e)| [t, e, chi_at(t, &exp.feedback)]);
    table_csv(&["t", "energy_k", "chi"], rows)
}

fn thermal_histogram(exp: &ExperimentConfig) -> Result<ScenarioRun> {
    let (energies, sampler) = thermal_energies(exp)?;
    let h = Histogram::new(&energies, exp.histogram_bins)?;
    let fit = |n| crate::stats::fit_maxwell_boltzmann(&energies, n).ok();
    use crate::stats::DofExponent::{Fixed, Free};
    Ok(ScenarioRun {
        files: vec![
            file("histogram.csv", histogram_csv(&h)?),
            file("energies.csv", table_csv(&["energy_k"], energies.iter().map(|v| [*v]))?),
        ],
        results: json!({
            "n": energies.len(),
            "mean_k": crate::stats::mean(&energies),
            "sem_k": crate::stats::sem(&energies),
            "fit_n1": to_json(&fit(Fixed(1.0))),
            "fit_n0": to_json(&fit(Fixed(0.0))),
            "fit_free": to_json(&fit(Free)),
            "sampler": to_json(&sampler),
            "acceptance": sampler.acceptance(),
        }),
        passed: true,
    })
}

fn outcomes_csv(r: &ExperimentResult, exp: &ExperimentConfig) -> Result<Vec<u8>> {
    let rows = r.outcomes.iter().map(|o| {
        let ratio = o
            .end_window
            .and_then(|w| w.fit)
            .map_or(f64::NAN, |f| f.amplitude_ratio());
        let drift = o
            .invariant_drift(exp.particle.inertia_x, exp.trap.omega())
            .unwrap_or(f64::NAN);
        [
            o.index as f64,
            o.initial_energy,
            o.final_energy,
            o.final_t,
            f64::from(u8::from(o.completed())),
            f64::from(u8::from(o.escaped())),
            o.omega3,
            o.final_slope,
            ratio,
            drift,
        ]
    });
    table_csv(
        &[
            "index",
            "initial_energy_k",
            "final_energy_k",
            "final_t",
            "completed",
            "escaped",
            "omega3",
            "final_slope_k_per_s",
            "amplitude_ratio",
            "invariant_drift",
        ],
        rows,
    )
}

fn ensemble_files(prefix: &str, r: &ExperimentResult, exp: &ExperimentConfig) -> Result<Vec<OutputFile>> {
    let mut files = vec![file(&format!("{prefix}outcomes.csv"), outcomes_csv(r, exp)?)];
    if let Some(h) = &r.stats.histogram {
        files.push(file(&format!("{prefix}histogram.csv"), histogram_csv(h)?));
    }
    let initial: Vec<f64> = r.outcomes.iter().map(|o| o.initial_energy).filter(|e| e.is_finite()).collect();
    if let Ok(h) = Histogram::new(&initial, exp.histogram_bins) {
        files.push(file(&format!("{prefix}initial_histogram.csv"), histogram_csv(&h)?));
    }
    if exp.keep_traces {
        let bytes = bincode::serialize(&r.outcomes).map_err(|e| Error::Io(e.to_string()))?;
        files.push(file(&format!("{prefix}trajectories.bin"), bytes));
    }
    Ok(files)
}

fn stats_json(r: &ExperimentResult) -> serde_json::Value {
    let mut s = to_json(&r.stats);
    if let Some(m) = s.as_object_mut() {
        m.remove("histogram");
    }
    s
}

fn ensemble(exp: &ExperimentConfig) -> Result<ScenarioRun> {
    let r = run_experiment(exp)?;
    Ok(ScenarioRun {
        files: ensemble_files("", &r, exp)?,
        results: stats_json(&r),
        passed: true,
    })
}

/// Least-squares slope of `ln E` over `[t0, t1]`.
pub fn log_slope(rec: &TrajectoryRecord<6>, t0: f64, t1: f64) -> f64 {
    let (t, e): (Vec<f64>, Vec<f64>) = rec
        .t
        .iter()
        .zip(&rec.energy)
        .filter(|(t, e)| **t >= t0 && **t <= t1 && **e > 0.0)
        .map(|(t, e)| (*t, e.ln()))
        .unzip();
    if t.len() < 3 {
        f64::NAN
    } else {
        slope(&t, &e)
    }
}

/// `ln E` slopes over each stage between consecutive schedule boundaries.
pub fn stage_rates(rec: &TrajectoryRecord<6>, boundaries: &[f64]) -> Vec<f64> {
    let mut edges = vec![0.0];
    edges.extend_from_slice(boundaries);
    edges.push(rec.final_t);
    edges.windows(2).map(|w| log_slope(rec, w[0], w[1])).collect()
}

/// `ln E` slopes over `span` just before and just after each boundary.
pub fn boundary_rates(rec: &TrajectoryRecord<6>, boundaries: &[f64], span: f64) -> Vec<(f64, f64)> {
    boundaries
        .iter()
        .map(|&b| (log_slope(rec, b - span, b), log_slope(rec, b, b + span)))
        .collect()
}

/// Width of the windows used by [`boundary_rates`] in the staged protocol.
pub const BOUNDARY_SPAN: f64 = 2e-4;

fn staged(exp: &ExperimentConfig) -> Result<ScenarioRun> {
    let run = windowed_run(exp, 0, &[], exp.duration, exp.sample_dt)?;
    let rec = &run.coarse;
    let rates = stage_rates(rec, &exp.feedback.boundaries());
    Ok(ScenarioRun {
        files: vec![file("energy.csv", energy_csv(rec, exp)?)],
        results: json!({
            "initial_energy_k": rec.energy.first(),
            "final_energy_k": rec.energy.last(),
            "min_energy_k": rec.energy.iter().copied().fold(f64::INFINITY, f64::min),
            "boundaries": exp.feedback.boundaries(),
            "log_energy_rates": rates,
            "boundary_rates": boundary_rates(rec, &exp.feedback.boundaries(), BOUNDARY_SPAN),
            "termination": to_json(&rec.termination),
            "steps": rec.stats.accepted,
        }),
        passed: true,
    })
}

fn sweep(cfg: &RunConfig, exp: &ExperimentConfig) -> Result<ScenarioRun> {
    let thetas = if cfg.ensemble.thetas.is_empty() {
        default_thetas(8)
    } else {
        cfg.ensemble.thetas.clone()
    };
    let points = theta_sweep(exp, &thetas)?;
    let rows = points
        .iter()
        .map(|(p, _)| [p.theta, p.mean, p.sem, p.completed as f64, p.escaped as f64]);
    let mut files = vec![file(
        "sweep.csv",
        table_csv(&["theta", "mean_energy_k", "sem_k", "completed", "escaped"], rows)?,
    )];
    let mut per_point = Vec::new();
    for (k, (p, r)) in points.iter().enumerate() {
        files.extend(ensemble_files(&format!("theta{k}_"), r, exp)?);
        per_point.push(json!({ "point": to_json(p), "stats": stats_json(r) }));
    }
    Ok(ScenarioRun {
        files,
        results: json!({ "points": per_point }),
        passed: true,
    })
}

fn validate(exp: &ExperimentConfig) -> Result<ScenarioRun> {
    let checks = invariant_suite(&exp.particle, &exp.trap, &exp.thermal, exp.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &checks {
        w.serialize(c).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    let passed = checks.iter().all(|c| c.passed);
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    Ok(ScenarioRun {
        files: vec![file("checks.csv", bytes)],
        results: json!({ "checks": to_json(&checks), "failed": to_json(&failed), "passed": passed }),
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{from_table, merge};

    fn config(name: &str, extra: &str) -> RunConfig {
        let mut t = scenario_defaults(name).unwrap();
        merge(&mut t, parse_table(extra, "test").unwrap());
        from_table(t, name).unwrap()
    }

    #[test]
    fn every_scenario_has_a_valid_layer() {
        for s in SCENARIOS {
            let cfg = config(s, "");
            cfg.experiment(s).unwrap();
        }
        assert!(matches!(scenario_defaults("fig9"), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn scenario_layers_encode_the_protocols() {
        assert_eq!(config("fig3c", "").feedback.signal, crate::feedback::SignalChoice::Py);
        assert_eq!(config("fig3d", "").trap.theta, 4.0 * std::f64::consts::PI / 32.0);
        let f4 = config("fig4a", "").experiment("fig4a").unwrap();
        assert_eq!(f4.feedback, crate::feedback::staged_feedback());
        assert_eq!(config("fig2a", "").feedback.is_active(), false);
    }

    #[test]
    fn short_fig2a_emits_trajectory_and_psd() {
        let cfg = config(
            "fig2a",
            "[ensemble]\nduration = 3e-4\n[output]\nwindow_periods = 100.0\n[output.psd]\nsegment_length = 512\n",
        );
        let run = run_scenario("fig2a", &cfg).unwrap();
        let names: Vec<&str> = run.files.iter().map(|f| f.name.as_str()).collect();
        assert!(names.contains(&"trajectory_w0.csv") && names.contains(&"psd_w0.csv"), "{names:?}");
        let again = run_scenario("fig2a", &cfg).unwrap();
        assert_eq!(run.files, again.files);
    }

    #[test]
    fn small_ensemble_scenario_runs() {
        let cfg = config("fig3d", "[ensemble]\nn = 4\nduration = 2e-4\nkeep_traces = true\n");
        let run = run_scenario("fig3d", &cfg).unwrap();
        assert!(run.files.iter().any(|f| f.name == "trajectories.bin"));
        assert_eq!(run.results["completed"], 4);
    }

    #[test]
    fn stage_rates_split_at_boundaries() {
        let mut rec = TrajectoryRecord::<6> {
            t: Vec::new(),
            y: Vec::new(),
            energy: Vec::new(),
            monitor_names: Vec::new(),
            monitors: Vec::new(),
            termination: crate::integrator::Termination::Completed,
            final_t: 2.0,
            final_y: [0.0; 6],
            stats: Default::default(),
        };
        for k in 0..=200 {
            let t = k as f64 * 0.01;
            rec.t.push(t);
            rec.energy.push(if t < 1.0 { (-t).exp() } else { (-1.0 - 3.0 * (t - 1.0)).exp() });
        }
        let r = stage_rates(&rec, &[1.0]);
        assert!((r[0] + 1.0).abs() < 1e-9 && (r[1] + 3.0).abs() < 1e-9, "{r:?}");
        let (before, after) = boundary_rates(&rec, &[1.0], 0.2)[0];
        assert!((before + 1.0).abs() < 1e-9 && (after + 3.0).abs() < 1e-9);
    }
}
