//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion.
//!
//! Runs every criterion by default; pass criterion numbers to select, e.g.
//! `cargo test --test acceptance -- 1 9 10`. Failures are reported but do
//! not fail the process unless `ACCEPTANCE_STRICT=1`; errors always do.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use nanodumbbell::analytics::axial_displacement_ratio;
use nanodumbbell::checks::{
    cooling_rate_comparison, free_conservation, full_lx_drift, gradient_error, small_angle_precession_drift,
    thermal_state, tight_integrator, REFERENCE_DISPLACEMENT_RATIO, REFERENCE_INERTIA_X, REFERENCE_INERTIA_Z,
};
use nanodumbbell::config::{self, RunConfig};
use nanodumbbell::ensemble::{default_thetas, run_experiment, thermal_energies, windowed_run, ExperimentResult};
use nanodumbbell::feedback::{FeedbackConfig, SignalChoice};
use nanodumbbell::physics::thermal_coupling_frequency;
use nanodumbbell::scenarios::{boundary_rates, run_scenario, scenario_defaults, BOUNDARY_SPAN};
use nanodumbbell::stats::{fit_maxwell_boltzmann, mean, sem, DofExponent};
use nanodumbbell::Result;

const THETA_4: f64 = 4.0 * PI / 32.0;
const FIT_WINDOW: &str = "ensemble.fit_windows={ periods = 40.0, per_period = 16.0 }";

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn say(line: &str) {
    // written to the handle directly so the lines survive output capture
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn scenario(name: &str, overrides: &[&str]) -> Result<RunConfig> {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    config::load(scenario_defaults(name)?, None, &o)
}

fn run(name: &str, overrides: &[&str]) -> Result<ExperimentResult> {
    run_experiment(&scenario(name, overrides)?.experiment(name)?)
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

/// Results shared between criteria.
#[derive(Default)]
struct Shared {
    linear: Option<ExperimentResult>,
    elliptical: Option<ExperimentResult>,
}

impl Shared {
    /// N=500, sum signal, linear polarization, 80 ms, with fit windows.
    fn linear(&mut self) -> Result<&ExperimentResult> {
        if self.linear.is_none() {
            self.linear = Some(run("fig3c", &["feedback.signal=\"sum\"", FIT_WINDOW])?);
        }
        Ok(self.linear.as_ref().unwrap())
    }

    /// N=200, sum signal, theta = 4 pi / 32, 80 ms.
    fn elliptical(&mut self) -> Result<&ExperimentResult> {
        if self.elliptical.is_none() {
            let theta = format!("trap.theta={THETA_4:e}");
            self.elliptical = Some(run("fig4b", &[&theta])?);
        }
        Ok(self.elliptical.as_ref().unwrap())
    }
}

fn criterion_1() -> Result<Verdict> {
    let exp = scenario("fig3b", &[])?.experiment("fig3b")?;
    let (e, stats) = thermal_energies(&exp)?;
    let m = mean(&e);
    let t = fit_maxwell_boltzmann(&e, DofExponent::Fixed(1.0))?.temperature;
    let target = 2.0 * exp.thermal.temperature;
    let passed = rel(m, target) < 0.05 && rel(t, exp.thermal.temperature) < 0.05;

    // the same estimator on a large sample, to separate bias from scatter
    let big = scenario("fig3b", &["ensemble.n=40000"])?.experiment("fig3b")?;
    let (eb, _) = thermal_energies(&big)?;
    let tb = fit_maxwell_boltzmann(&eb, DofExponent::Fixed(1.0))?.temperature;
    Ok(verdict(
        passed,
        format!(
            "N={} seed={}: mean {m:.1} K ({:+.2}% of {target} K, sem {:.1} K), n=1 fit T {t:.1} K ({:+.2}%), \
             acceptance {:.3}; N={}: mean {:.1} +- {:.1} K, fit T {tb:.1} K",
            e.len(),
            exp.seed,
            100.0 * (m / target - 1.0),
            sem(&e),
            100.0 * (t / exp.thermal.temperature - 1.0),
            stats.acceptance(),
            eb.len(),
            mean(&eb),
            sem(&eb),
        ),
    ))
}

fn criterion_2(shared: &mut Shared) -> Result<Verdict> {
    let r = shared.linear()?;
    let s = &r.stats;
    let (n0, n1) = (s.fit_n0.as_ref(), s.fit_n1.as_ref());
    let better = matches!((n0, n1), (Some(a), Some(b)) if a.residual < b.residual);
    let passed = rel(s.mean, 300.0) < 0.1 && better;
    Ok(verdict(
        passed,
        format!(
            "N={} completed={} escaped={}: mean final {:.1} +- {:.1} K ({:+.2}% of 300 K), initial {:.1} K; \
             KS residual n=0 {:.4} vs n=1 {:.4}",
            s.n,
            s.completed,
            s.escaped,
            s.mean,
            s.sem,
            100.0 * (s.mean / 300.0 - 1.0),
            s.initial_mean,
            n0.map_or(f64::NAN, |f| f.residual),
            n1.map_or(f64::NAN, |f| f.residual),
        ),
    ))
}

fn criterion_3(shared: &mut Shared) -> Result<Verdict> {
    let r = shared.linear()?;
    let exp = scenario("fig3c", &[])?.experiment("fig3c")?;
    let (ix, w) = (exp.particle.inertia_x, exp.trap.omega());
    let mut single = 0;
    let mut ratio_ok = 0;
    let mut drift_ok = 0;
    let mut worst_drift: f64 = 0.0;
    for o in &r.outcomes {
        let ratio = o.end_window.and_then(|w| w.fit).map(|f| f.amplitude_ratio());
        let drift = o.invariant_drift(ix, w);
        let r_ok = ratio.is_some_and(|x| x < 1e-3);
        let d_ok = drift.is_some_and(|x| x < 1e-2);
        worst_drift = worst_drift.max(drift.unwrap_or(f64::INFINITY));
        ratio_ok += usize::from(r_ok);
        drift_ok += usize::from(d_ok);
        single += usize::from(r_ok && d_ok);
    }
    let n = r.outcomes.len();
    let frac = single as f64 / n as f64;
    Ok(verdict(
        frac >= 0.95,
        format!(
            "{single}/{n} = {:.1}% single-mode (ratio < 1e-3: {ratio_ok}, drift < 1%: {drift_ok}, \
             worst drift {worst_drift:.2e})",
            100.0 * frac
        ),
    ))
}

fn criterion_4(shared: &mut Shared) -> Result<Verdict> {
    let s = shared.elliptical()?.stats.clone();
    let theta = format!("trap.theta={THETA_4:e}");
    let xi = run("fig4b", &[&theta, "feedback.signal=\"xi\""])?;
    let heating = xi
        .outcomes
        .iter()
        .filter(|o| o.escaped() || (o.completed() && o.final_slope > 0.0))
        .count();
    let frac = heating as f64 / xi.outcomes.len() as f64;
    Ok(verdict(
        s.mean < 10.0 && frac >= 0.8,
        format!(
            "sum: N={} mean final {:.2} +- {:.2} K (< 10 K); xi only: {heating}/{} = {:.1}% heating \
             ({} escaped, mean final {:.1} K)",
            s.n,
            s.mean,
            s.sem,
            xi.outcomes.len(),
            100.0 * frac,
            xi.stats.escaped,
            xi.stats.mean,
        ),
    ))
}

fn criterion_5() -> Result<Verdict> {
    let exp = scenario("fig4a", &[])?.experiment("fig4a")?;
    let rec = windowed_run(&exp, 0, &[], exp.duration, exp.sample_dt)?.coarse;
    let final_e = *rec.energy.last().unwrap();
    let bounds = exp.feedback.boundaries();
    let rates = boundary_rates(&rec, &bounds, BOUNDARY_SPAN);
    let steps_up = rates.iter().all(|(before, after)| after < before);
    let listed: Vec<String> = bounds
        .iter()
        .zip(&rates)
        .map(|(b, (x, y))| format!("{:.0}ms {x:.3e}->{y:.3e}", b * 1e3))
        .collect();
    Ok(verdict(
        final_e <= 1e-6 && steps_up,
        format!(
            "initial {:.1} K, final {final_e:.3e} K at {:.1} ms (target <= 1e-6 K); \
             d lnE/dt (1/s) around boundaries: {}",
            rec.energy[0],
            rec.final_t * 1e3,
            listed.join(", ")
        ),
    ))
}

fn criterion_6(shared: &mut Shared) -> Result<Verdict> {
    let thetas = default_thetas(8);
    let mut points = Vec::new();
    for &theta in &thetas {
        let s = if (theta - THETA_4).abs() < 1e-12 {
            shared.elliptical()?.stats.clone()
        } else {
            run("fig4b", &[&format!("trap.theta={theta:e}")])?.stats
        };
        points.push((theta, s.mean, s.sem));
    }
    let near_300 = rel(points[0].1, 300.0) < 0.1;
    let monotone = points
        .windows(2)
        .all(|w| w[1].1 <= w[0].1 + 2.0 * (w[0].2.powi(2) + w[1].2.powi(2)).sqrt());
    let plateau: Vec<f64> = points.iter().filter(|p| p.0 >= THETA_4 - 1e-12).map(|p| p.1).collect();
    let spread = plateau.iter().copied().fold(f64::MIN, f64::max) - plateau.iter().copied().fold(f64::MAX, f64::min);
    let flat = spread <= 0.05 * points[0].1;
    let listed: Vec<String> = points
        .iter()
        .map(|(t, m, s)| format!("{:.0}pi/32 {m:.1}+-{s:.1}", t * 32.0 / PI))
        .collect();
    Ok(verdict(
        near_300 && monotone && flat,
        format!(
            "{}; theta=0 within 10% of 300 K: {near_300}, non-increasing within 2 SEM: {monotone}, \
             plateau spread from 4pi/32 {spread:.1} K (<= 5% of theta=0): {flat}",
            listed.join(", ")
        ),
    ))
}

fn peaks(window: &serde_json::Value) -> Vec<(f64, f64)> {
    window["peaks"]
        .as_array()
        .map(|a| {
            a.iter()
                .map(|p| (p["freq_hz"].as_f64().unwrap() * 2.0 * PI, p["height"].as_f64().unwrap()))
                .collect()
        })
        .unwrap_or_default()
}

fn criterion_7() -> Result<Verdict> {
    let uncooled = run_scenario("fig2a", &scenario("fig2a", &[])?)?.results;
    let modes = &uncooled["analytic_modes"];
    let (wp, wm) = (modes["omega_plus"].as_f64().unwrap(), modes["omega_minus"].as_f64().unwrap());
    let mut found = peaks(&uncooled["windows"][0]);
    found.sort_by(|a, b| b.1.total_cmp(&a.1));
    let top: Vec<f64> = found.iter().take(2).map(|p| p.0).collect();
    let err = |w: f64| top.iter().map(|p| rel(*p, w)).fold(f64::INFINITY, f64::min);
    let (ep, em) = (err(wp), err(wm));
    let two_peaks = top.len() == 2 && ep < 0.02 && em < 0.02;

    let linear = run_scenario("fig5a", &scenario("fig5a", &[])?)?.results;
    let windows = linear["windows"].as_array().cloned().unwrap_or_default();
    let last = windows.last().map(peaks).unwrap_or_default();
    let one_peak = last.len() == 1;

    let ellip = run_scenario("fig5b", &scenario("fig5b", &[])?)?.results;
    let ew = ellip["windows"].as_array().cloned().unwrap_or_default();
    let heights = |key: &str| -> Vec<f64> { ew.iter().map(|w| w[key].as_f64().unwrap_or(f64::NAN)).collect() };
    let (hp, hm) = (heights("height_omega_plus"), heights("height_omega_minus"));
    let falling = |h: &[f64]| h.len() >= 2 && h.windows(2).all(|w| w[1] < w[0]);
    let both_fall = falling(&hp) && falling(&hm);
    let fmt = |h: &[f64]| h.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ");
    Ok(verdict(
        two_peaks && one_peak && both_fall,
        format!(
            "uncooled peaks {:?} rad/s vs analytic {wp:.4e}/{wm:.4e} (errors {:.2}%/{:.2}%); \
             linear cooled final window: {} peak(s); elliptical heights w+ [{}] w- [{}]",
            top.iter().map(|w| format!("{w:.4e}")).collect::<Vec<_>>(),
            100.0 * ep,
            100.0 * em,
            last.len(),
            fmt(&hp),
            fmt(&hm),
        ),
    ))
}

fn criterion_8() -> Result<Verdict> {
    let cfg = scenario("validate", &[])?;
    let (p, t) = cfg.resolve()?;
    let draws = cooling_rate_comparison(&p, &t, cfg.feedback.chi, 20, 2e-3, 1)?;
    let worst = draws.iter().map(|d| d.relative_error()).fold(0.0, f64::max);
    let linear = draws.iter().filter(|d| d.theta == 0.0).count();
    Ok(verdict(
        worst < 0.05,
        format!(
            "{} draws ({linear} linear, {} elliptical): worst relative error {:.2}%, mean {:.2}%",
            draws.len(),
            draws.len() - linear,
            100.0 * worst,
            100.0 * draws.iter().map(|d| d.relative_error()).sum::<f64>() / draws.len() as f64,
        ),
    ))
}

fn criterion_9() -> Result<Verdict> {
    let cfg = scenario("validate", &[])?;
    let (p, t) = cfg.resolve()?;
    let s0 = thermal_state(&p, &t, &cfg.thermal, cfg.ensemble.seed)?;
    let (dw3, de) = free_conservation(&p, &t, &s0, 1e-3, tight_integrator())?;
    let linear = t.with_theta(0.0, &p)?;
    let fb = FeedbackConfig {
        signal: SignalChoice::Sum,
        ..FeedbackConfig::default()
    };
    let dq = small_angle_precession_drift(&p, &linear, &s0, &fb, 1e-3, tight_integrator())?;
    let dlx = full_lx_drift(&p, &linear, &s0, &fb, 1e-3, tight_integrator())?;
    let grad = gradient_error(&p, &t, 500, cfg.ensemble.seed);
    Ok(verdict(
        dw3 < 1e-8 && de < 1e-8 && dq < 1e-8 && dlx < 1e-8 && grad < 1e-6,
        format!(
            "omega3 {dw3:.1e}, energy {de:.1e}, precession quantity {dq:.1e}, lab L_x {dlx:.1e} \
             (all < 1e-8 over 1 ms); gradient {grad:.1e} (< 1e-6)"
        ),
    ))
}

fn criterion_10() -> Result<Verdict> {
    let cfg = scenario("validate", &[])?;
    let (p, t) = cfg.resolve()?;
    let ratio = axial_displacement_ratio(&p, &t);
    let wc = thermal_coupling_frequency(&p, cfg.thermal.temperature);
    let (ix, iz) = (rel(p.inertia_x, REFERENCE_INERTIA_X), rel(p.inertia_z, REFERENCE_INERTIA_Z));
    Ok(verdict(
        rel(ratio, REFERENCE_DISPLACEMENT_RATIO) <= 0.2 && rel(wc, 1.1e5) <= 0.2 && ix < 5e-3 && iz < 5e-3,
        format!(
            "z_d/z_R {ratio:.4}; thermal omega_c {wc:.3e} rad/s ({:.1} kHz); I_x {:.4e} ({:.2}%), \
             I_z {:.4e} ({:.2}%)",
            wc / (2.0 * PI) / 1e3,
            p.inertia_x,
            100.0 * ix,
            p.inertia_z,
            100.0 * iz,
        ),
    ))
}

fn criterion_11(shared: &mut Shared) -> Result<Verdict> {
    let gas = run("fig3c", &["feedback.signal=\"sum\"", "noise.langevin=true", "noise.pressure=760.0"])?;
    let low = run(
        "fig3c",
        &["feedback.signal=\"sum\"", "noise.langevin=true", "noise.pressure=1e-3", FIT_WINDOW],
    )?;
    let base = &shared.linear()?.stats;
    let thermalized = rel(gas.stats.mean, 600.0) < 0.1;
    let unchanged = (low.stats.mean - base.mean).abs() <= 2.0 * base.sem;
    Ok(verdict(
        thermalized && unchanged,
        format!(
            "760 Torr: mean final {:.1} +- {:.1} K ({:+.2}% of 600 K); 1e-3 Torr: {:.1} +- {:.1} K vs \
             noiseless {:.1} +- {:.1} K (difference {:.2} SEM)",
            gas.stats.mean,
            gas.stats.sem,
            100.0 * (gas.stats.mean / 600.0 - 1.0),
            low.stats.mean,
            low.stats.sem,
            base.mean,
            base.sem,
            (low.stats.mean - base.mean).abs() / base.sem,
        ),
    ))
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    // `cargo test --test acceptance -- --list` and similar harness flags
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut shared = Shared::default();
    let mut failed = Vec::new();
    let mut errors = Vec::new();
    for id in 1..=11u32 {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let clock = Instant::now();
        let out = match id {
            1 => criterion_1(),
            2 => criterion_2(&mut shared),
            3 => criterion_3(&mut shared),
            4 => criterion_4(&mut shared),
            5 => criterion_5(),
            6 => criterion_6(&mut shared),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(),
            10 => criterion_10(),
            _ => criterion_11(&mut shared),
        };
        let secs = clock.elapsed().as_secs_f64();
        match out {
            Ok(v) => {
                let tag = if v.passed { "PASS" } else { "FAIL" };
                say(&format!("criterion {id}: {tag} [{secs:.0} s] {}", v.detail));
                if !v.passed {
                    failed.push(id);
                }
            }
            Err(e) => {
                say(&format!("criterion {id}: ERROR [{secs:.0} s] {e}"));
                errors.push(id);
            }
        }
    }
    say(&format!(
        "acceptance: {} failed {:?}, {} errors {:?}{}",
        failed.len(),
        failed,
        errors.len(),
        errors,
        if strict { " (strict)" } else { "" }
    ));
    if !errors.is_empty() || (strict && !failed.is_empty()) {
        std::process::exit(1);
    }
}
