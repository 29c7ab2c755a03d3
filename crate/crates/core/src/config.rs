//! Declarative run configuration in TOML, layered as scenario defaults, then
//! the user's file, then dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::{ExperimentConfig, FitWindows};
use crate::error::{Error, Result};
use crate::feedback::FeedbackConfig;
use crate::integrator::IntegratorConfig;
use crate::noise::NoiseConfig;
use crate::physics::{FieldSpec, ParticleParams, TrapParams};
use crate::simulation::ESCAPE_BARRIER_FRACTION;
use crate::spectral::{PsdConfig, PsdSignal};
use crate::thermal::ThermalConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleSection {
    pub radius: f64,
    /// Mass of the whole dumbbell (kg).
    pub total_mass: f64,
    pub refractive_index: f64,
    pub density: f64,
    pub alpha_bar: f64,
    /// Explicit polarizabilities replacing the spheroid model (C m^2 / V).
    pub polarizability_x: Option<f64>,
    pub polarizability_z: Option<f64>,
}

impl Default for ParticleSection {
    fn default() -> Self {
        ParticleSection {
            radius: 85e-9,
            total_mass: 1.029e-17,
            refractive_index: 1.458,
            density: 2000.0,
            alpha_bar: 0.59,
            polarizability_x: None,
            polarizability_z: None,
        }
    }
}

impl ParticleSection {
    pub fn build(&self) -> Result<ParticleParams> {
        let p = ParticleParams::from_geometry(
            self.radius,
            0.5 * self.total_mass,
            self.refractive_index,
            self.density,
            self.alpha_bar,
        )?;
        match (self.polarizability_x, self.polarizability_z) {
            (None, None) => Ok(p),
            (Some(ax), Some(az)) => p.with_polarizabilities(ax, az),
            _ => Err(Error::validation(
                "particle.polarizability_x",
                "set both polarizabilities or neither",
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapSection {
    pub wavelength: f64,
    pub power: f64,
    pub numerical_aperture: f64,
    pub theta: f64,
    pub field: FieldSpec,
}

impl Default for TrapSection {
    fn default() -> Self {
        TrapSection {
            wavelength: 1550e-9,
            power: 0.5,
            numerical_aperture: 0.45,
            theta: 0.0,
            field: FieldSpec::default(),
        }
    }
}

impl TrapSection {
    pub fn build(&self, particle: &ParticleParams) -> Result<TrapParams> {
        TrapParams::new(
            self.wavelength,
            self.power,
            self.numerical_aperture,
            self.theta,
            self.field,
            particle,
        )
    }
}

/// Window fits sized in librational periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub periods: f64,
    pub per_period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub n: usize,
    pub seed: u64,
    /// Simulated time per trajectory (s).
    pub duration: f64,
    pub escape_fraction: f64,
    pub histogram_bins: usize,
    pub keep_traces: bool,
    pub fit_windows: Option<WindowSection>,
    /// Ellipticities for sweeps; `k pi / 32` for `k < 8` when empty.
    pub thetas: Vec<f64>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            n: 500,
            seed: 1,
            duration: 80e-3,
            escape_fraction: ESCAPE_BARRIER_FRACTION,
            histogram_bins: 40,
            keep_traces: false,
            fit_windows: None,
            thetas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Sampling interval of energy traces (s).
    pub sample_dt: f64,
    /// Samples per librational period for trajectory and PSD output.
    pub samples_per_period: f64,
    pub psd: PsdConfig,
    pub psd_signal: PsdSignal,
    /// Scale the homodyne signal by the Gouy attenuation.
    pub gouy: bool,
    /// Length of finely sampled windows, in librational periods.
    pub window_periods: f64,
    /// Start times of the finely sampled windows (s).
    pub windows: Vec<f64>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            sample_dt: 1e-4,
            samples_per_period: 16.0,
            psd: PsdConfig::default(),
            psd_signal: PsdSignal::P45,
            gouy: false,
            window_periods: 700.0,
            windows: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub particle: ParticleSection,
    pub trap: TrapSection,
    pub feedback: FeedbackConfig,
    pub noise: NoiseConfig,
    pub integrator: IntegratorConfig,
    pub thermal: ThermalConfig,
    pub ensemble: EnsembleSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Validates every section and derives the physical parameters.
    pub fn resolve(&self) -> Result<(ParticleParams, TrapParams)> {
        let p = self.particle.build()?;
        let t = self.trap.build(&p)?;
        self.feedback.validate()?;
        self.noise.validate()?;
        self.integrator.validate()?;
        self.thermal.validate()?;
        let o = &self.output;
        if !(o.sample_dt > 0.0 && o.samples_per_period >= 2.0 && o.window_periods > 0.0) {
            return Err(Error::validation(
                "output",
                "sample_dt and window_periods must be positive, samples_per_period at least 2",
            ));
        }
        Ok((p, t))
    }

    pub fn experiment(&self, scenario: &str) -> Result<ExperimentConfig> {
        let (particle, trap) = self.resolve()?;
        let e = &self.ensemble;
        let cfg = ExperimentConfig {
            scenario: scenario.to_string(),
            n: e.n,
            seed: e.seed,
            duration: e.duration,
            sample_dt: self.output.sample_dt,
            particle,
            trap,
            feedback: self.feedback.clone(),
            noise: self.noise.clone(),
            integrator: self.integrator,
            thermal: self.thermal,
            fit_windows: e
                .fit_windows
                .map(|w| FitWindows::periods(&trap, w.periods, w.per_period)),
            escape_fraction: e.escape_fraction,
            histogram_bins: e.histogram_bins,
            keep_traces: e.keep_traces,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

fn parse_error(src: &str, origin: &str, e: toml::de::Error) -> Error {
    let location = match e.span() {
        Some(span) => {
            let (l, c) = line_col(src, span.start);
            format!("{origin}:{l}:{c}")
        }
        None => origin.to_string(),
    };
    Error::ParseError {
        location,
        message: e.message().to_string(),
    }
}

/// Parses TOML text into a table.
pub fn parse_table(src: &str, origin: &str) -> Result<toml::Table> {
    src.parse::<toml::Table>().map_err(|e| parse_error(src, origin, e))
}

/// Recursively overlays `top` onto `base`; tables merge, other values replace.
pub fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the value of an override as TOML, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("probe key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` (any depth) to a table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| Error::ParseError {
        location: format!("--set {assignment}"),
        message: "expected key=value".into(),
    })?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::ParseError {
            location: format!("--set {assignment}"),
            message: "empty key segment".into(),
        });
    }
    let mut cur = table;
    for seg in &path[..path.len() - 1] {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(Error::ParseError {
                    location: format!("--set {assignment}"),
                    message: format!("`{seg}` is not a section"),
                })
            }
        };
    }
    cur.insert(path[path.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}

/// Deserializes a merged table, reporting unknown keys and type errors.
pub fn from_table(table: toml::Table, origin: &str) -> Result<RunConfig> {
    // round-trip through text so errors carry line numbers
    let text = toml::to_string(&table).map_err(|e| Error::ParseError {
        location: origin.to_string(),
        message: e.to_string(),
    })?;
    toml::from_str::<RunConfig>(&text).map_err(|e| parse_error(&text, origin, e))
}

/// Full configuration from optional scenario defaults, an optional file and
/// overrides, validated.
pub fn load(base: toml::Table, path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut table = base;
    let mut file = None;
    if let Some(p) = path {
        let origin = p.display().to_string();
        let src = std::fs::read_to_string(p).map_err(|e| Error::ParseError {
            location: origin.clone(),
            message: e.to_string(),
        })?;
        merge(&mut table, parse_table(&src, &origin)?);
        file = Some((src, origin));
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg = from_table(table, "<merged config>").map_err(|merged| {
        // blame the file itself when it is wrong on its own
        match &file {
            Some((src, origin)) => match toml::from_str::<RunConfig>(src) {
                Err(e) => parse_error(src, origin, e),
                Ok(_) => merged,
            },
            None => merged,
        }
    })?;
    cfg.resolve()?;
    Ok(cfg)
}

/// Parses a configuration file on top of the defaults.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    load(toml::Table::new(), Some(path), &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn write(src: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(src.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_file_gives_defaults() {
        let f = write("");
        let cfg = parse_config(f.path()).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let (p, t) = cfg.resolve().unwrap();
        assert_relative_eq!(p.inertia_x, 1.041e-31, max_relative = 5e-3);
        assert_relative_eq!(p.inertia_z, 2.974e-32, max_relative = 5e-3);
        assert_relative_eq!(t.omega(), 2.19e6, max_relative = 1e-12);
        assert_eq!(t.wavelength, 1550e-9);
        assert_eq!(t.numerical_aperture, 0.45);
    }

    #[test]
    fn theta_sets_elliptical_frequencies() {
        let f = write("[trap]\ntheta = 0.3927\n");
        let (_, t) = parse_config(f.path()).unwrap().resolve().unwrap();
        assert_relative_eq!(t.omega_eta() / t.omega_xi(), 0.3927f64.cos() / (2.0 * 0.3927f64).cos().sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn invalid_values_are_validation_errors() {
        let f = write("[trap]\ntheta = 1.0\n");
        assert!(matches!(parse_config(f.path()), Err(Error::ValidationError { .. })));
        let f = write("[feedback]\nchi = -1.0\n");
        assert!(matches!(parse_config(f.path()), Err(Error::ValidationError { .. })));
    }

    #[test]
    fn unknown_keys_and_syntax_errors_report_location() {
        let f = write("[trap]\nthetta = 0.1\n");
        match parse_config(f.path()) {
            Err(Error::ParseError { message, .. }) => assert!(message.contains("thetta"), "{message}"),
            other => panic!("{other:?}"),
        }
        let f = write("[trap]\ntheta = = 0.1\n");
        match parse_config(f.path()) {
            Err(Error::ParseError { location, .. }) => assert!(location.ends_with(":2:9"), "{location}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_and_layering() {
        let mut base = toml::Table::new();
        apply_override(&mut base, "ensemble.n=20").unwrap();
        apply_override(&mut base, "feedback.signal=xi").unwrap();
        let f = write("[ensemble]\nn = 30\nseed = 9\n");
        let cfg = load(base.clone(), Some(f.path()), &["trap.theta=0.1".into()]).unwrap();
        assert_eq!(cfg.ensemble.n, 30);
        assert_eq!(cfg.ensemble.seed, 9);
        assert_eq!(cfg.trap.theta, 0.1);
        assert_eq!(cfg.feedback.signal, crate::feedback::SignalChoice::Xi);
        let cfg = load(base, None, &["trap.field.mode=direct".into(), "trap.field.e0=1e6".into()]).unwrap();
        assert_eq!(cfg.trap.build(&cfg.particle.build().unwrap()).unwrap().e0, 1e6);
        let bad = load(toml::Table::new(), None, &["trap.field.mode=direct".into(), "trap.field.omega=1.0".into()]);
        assert!(matches!(bad, Err(Error::ParseError { .. })));
        assert!(apply_override(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn field_modes_parse() {
        let f = write("[trap.field]\nmode = \"direct\"\ne0 = 2e6\n");
        let (_, t) = parse_config(f.path()).unwrap().resolve().unwrap();
        assert_eq!(t.e0, 2e6);
        let f = write("[trap.field]\nmode = \"calibrated\"\nomega = 3.5e5\nunit = \"hz\"\n");
        let (_, t) = parse_config(f.path()).unwrap().resolve().unwrap();
        assert_relative_eq!(t.omega(), 2.0 * std::f64::consts::PI * 3.5e5, max_relative = 1e-12);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.ensemble.fit_windows = Some(WindowSection { periods: 40.0, per_period: 16.0 });
        cfg.feedback = crate::feedback::staged_feedback();
        let back = from_table(parse_table(&cfg.to_toml(), "x").unwrap(), "x").unwrap();
        assert_eq!(back, cfg);
        let e = cfg.experiment("t").unwrap();
        assert!(e.fit_windows.is_some());
    }
}
