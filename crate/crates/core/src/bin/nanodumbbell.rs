use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use nanodumbbell::config::{self, RunConfig};
use nanodumbbell::output::{run_directory, write_run, Derived, RunManifest};
use nanodumbbell::scenarios::{run_scenario, scenario_defaults, SCENARIOS};
use nanodumbbell::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

/// Simulates a levitated nanodumbbell under parametric feedback cooling and
/// writes the data behind each figure protocol.
///
/// Any `--section.key value` argument is shorthand for `--set section.key=value`.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Scenario to run: fig2a, fig2b, fig3b, fig3c, fig3d, fig4a, fig4b,
    /// fig5a, fig5b or validate.
    #[arg(long, required_unless_present_any = ["manifest", "list"])]
    scenario: Option<String>,

    /// TOML configuration applied over the scenario defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed (overrides `ensemble.seed`).
    #[arg(long)]
    seed: Option<u64>,

    /// Output root (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Dotted-key override, e.g. `--set trap.theta=0.3927`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Re-run the scenario recorded in a manifest and compare checksums.
    #[arg(long, conflicts_with_all = ["scenario", "config", "seed", "overrides"])]
    manifest: Option<PathBuf>,

    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,

    /// List the registered scenarios and exit.
    #[arg(long)]
    list: bool,
}

/// Rewrites `--a.b value` and `--a.b=value` into `--set a.b=value`.
fn expand_dotted(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    if let Some(bin) = it.next() {
        out.push(bin);
    }
    while let Some(a) = it.next() {
        let dotted = a
            .strip_prefix("--")
            .filter(|k| k.split('=').next().is_some_and(|k| k.contains('.')));
        match dotted {
            Some(k) if k.contains('=') => {
                out.push("--set".into());
                out.push(k.to_string());
            }
            Some(k) => {
                out.push("--set".into());
                let v = it.next().unwrap_or_default();
                out.push(format!("{k}={v}"));
            }
            None => out.push(a),
        }
    }
    out
}

fn fail(code: u8, e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}

fn error_code(e: &Error) -> u8 {
    if e.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

fn resolve(cli: &Cli) -> Result<(String, RunConfig, Option<RunManifest>), Error> {
    if let Some(path) = &cli.manifest {
        let m = RunManifest::read(path)?;
        let mut cfg = m.config.clone();
        if let Some(out) = &cli.out {
            cfg.output.dir = out.clone();
        }
        return Ok((m.scenario.clone(), cfg, Some(m)));
    }
    let name = cli.scenario.clone().unwrap_or_default();
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("ensemble.seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("output.dir={}", toml::Value::String(out.display().to_string())));
    }
    let cfg = config::load(scenario_defaults(&name)?, cli.config.as_deref(), &overrides)?;
    Ok((name, cfg, None))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse_from(expand_dotted(std::env::args().collect())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    if cli.list {
        for s in SCENARIOS {
            println!("{s}");
        }
        return ExitCode::SUCCESS;
    }
    let (name, cfg, previous) = match resolve(&cli) {
        Ok(r) => r,
        Err(e) => return fail(error_code(&e), &e),
    };
    let (particle, trap) = match cfg.resolve() {
        Ok(r) => r,
        Err(e) => return fail(EXIT_CONFIG, &e),
    };
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }

    let started = chrono::Utc::now();
    let clock = Instant::now();
    eprintln!("running {name} with {} threads", rayon::current_num_threads());
    let run = match run_scenario(&name, &cfg) {
        Ok(r) => r,
        Err(e) => return fail(error_code(&e), &e),
    };
    let manifest = RunManifest {
        scenario: name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.ensemble.seed,
        derived: Derived::new(&particle, &trap, cfg.thermal.temperature),
        config: cfg.clone(),
        outputs: Vec::new(),
        results: run.results,
        started_utc: started.to_rfc3339(),
        wall_clock_s: clock.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
    };
    let stamp = started.format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let written = run_directory(&cfg.output.dir, &name, &stamp)
        .and_then(|dir| write_run(&dir, &run.files, manifest).map(|m| (dir, m)));
    let (dir, manifest) = match written {
        Ok(r) => r,
        Err(e) => return fail(EXIT_RUNTIME, &e),
    };
    println!("{}", dir.display());
    let summary = serde_json::to_string(&manifest.results).unwrap_or_default();
    if summary.len() <= 2000 {
        println!("{summary}");
    }

    if let Some(prev) = previous {
        let bad = prev.checksum_mismatches(&manifest);
        if !bad.is_empty() {
            eprintln!("outputs differ from the manifest: {}", bad.join(", "));
            return ExitCode::from(EXIT_CHECK);
        }
        eprintln!("all {} outputs reproduced", manifest.outputs.len());
    }
    if !run.passed {
        eprintln!("validation failed");
        return ExitCode::from(EXIT_CHECK);
    }
    ExitCode::SUCCESS
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(a: &[&str]) -> Vec<String> {
        a.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn dotted_arguments_become_overrides() {
        assert_eq!(
            expand_dotted(v(&["bin", "--scenario", "fig3c", "--ensemble.n", "500", "--trap.theta=0.1"])),
            v(&["bin", "--scenario", "fig3c", "--set", "ensemble.n=500", "--set", "trap.theta=0.1"])
        );
        assert_eq!(expand_dotted(v(&["bin", "--config", "a.toml"])), v(&["bin", "--config", "a.toml"]));
    }
}
