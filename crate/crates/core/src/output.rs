//! CSV writers and the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::axial_displacement_ratio;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::integrator::TrajectoryRecord;
use crate::physics::{potential_minimum, EulerState, ParticleParams, SmallAngleState, TrapParams};
use crate::physics::thermal_coupling_frequency;
use crate::simulation::barrier_kelvin;
use crate::spectral::PsdResult;
use crate::stats::Histogram;

/// A named output file held in memory until the run directory is written.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl OutputFile {
    pub fn sha256(&self) -> String {
        sha256_hex(&self.bytes)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

/// Writes rows of numbers under a header.
pub fn table_csv<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(r.as_ref().iter().map(|v| format!("{v:e}")))
            .map_err(csv_error)?;
    }
    w.into_inner().map_err(csv_error)
}

/// Full-dynamics record with the state, shifted energy, monitors and the
/// tip projections `Z/2R = cos(beta)`, `Y/2R = sin(beta) sin(alpha)`.
pub fn trajectory_csv(rec: &TrajectoryRecord<6>) -> Result<Vec<u8>> {
    let mut header = vec!["t", "alpha", "beta", "gamma", "alpha_dot", "beta_dot", "omega3", "energy_k"];
    // monitors repeating a state column are dropped
    let extra: Vec<usize> = (0..rec.monitor_names.len())
        .filter(|&k| !header.contains(&rec.monitor_names[k].as_str()))
        .collect();
    header.extend(extra.iter().map(|&k| rec.monitor_names[k].as_str()));
    header.extend(["tip_y", "tip_z"]);
    let rows = rec.t.iter().enumerate().map(|(i, &t)| {
        let y = &rec.y[i];
        let mut row = vec![t, y[0], y[1], y[2], y[3], y[4], y[5], rec.energy[i]];
        row.extend(extra.iter().map(|&k| rec.monitors[i][k]));
        row.push(y[1].sin() * y[0].sin());
        row.push(y[1].cos());
        row
    });
    table_csv(&header, rows)
}

/// Tip coordinates folded onto one well, with their rates.
pub fn tip_csv(rec: &TrajectoryRecord<6>) -> Result<Vec<u8>> {
    let rows = rec.t.iter().zip(&rec.y).map(|(&t, y)| {
        let s = SmallAngleState::from_euler_tip(&EulerState::from_vector(t, y));
        [t, s.xi, s.eta, s.xi_dot, s.eta_dot]
    });
    table_csv(&["t", "tip_y", "tip_z", "tip_y_dot", "tip_z_dot"], rows)
}

pub fn psd_csv(psd: &PsdResult) -> Result<Vec<u8>> {
    let rows = (0..psd.psd.len()).map(|k| [psd.freq_hz[k], psd.omega[k], psd.psd[k]]);
    table_csv(&["f_Hz", "omega_rad_s", "psd"], rows)
}

pub fn histogram_csv(h: &Histogram) -> Result<Vec<u8>> {
    let rows = (0..h.counts.len()).map(|k| {
        [
            h.edges[k],
            h.edges[k + 1],
            0.5 * (h.edges[k] + h.edges[k + 1]),
            h.density[k],
            h.counts[k] as f64,
        ]
    });
    table_csv(&["energy_lo_k", "energy_hi_k", "energy_center_k", "density", "count"], rows)
}

/// Physical quantities implied by the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub e0: f64,
    pub omega: f64,
    pub omega_xi: f64,
    pub omega_eta: f64,
    pub inertia_x: f64,
    pub inertia_z: f64,
    pub alpha_x: f64,
    pub alpha_z: f64,
    pub potential_minimum_j: f64,
    pub barrier_k: f64,
    pub thermal_omega_c: f64,
    pub axial_displacement_ratio: f64,
}

impl Derived {
    pub fn new(particle: &ParticleParams, trap: &TrapParams, temperature: f64) -> Self {
        Derived {
            e0: trap.e0,
            omega: trap.omega(),
            omega_xi: trap.omega_xi(),
            omega_eta: trap.omega_eta(),
            inertia_x: particle.inertia_x,
            inertia_z: particle.inertia_z,
            alpha_x: particle.polarizability_x,
            alpha_z: particle.polarizability_z,
            potential_minimum_j: potential_minimum(trap, particle),
            barrier_k: barrier_kelvin(trap, particle),
            thermal_omega_c: thermal_coupling_frequency(particle, temperature),
            axial_displacement_ratio: axial_displacement_ratio(particle, trap),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub derived: Derived,
    pub outputs: Vec<OutputEntry>,
    /// Scenario-specific results: fits, peaks, check outcomes.
    pub results: serde_json::Value,
    pub started_utc: String,
    pub wall_clock_s: f64,
    pub threads: usize,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::ParseError {
            location: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Files whose checksum differs from `other`, or that only one side has.
    pub fn checksum_mismatches(&self, other: &RunManifest) -> Vec<String> {
        let mut bad: Vec<String> = self
            .outputs
            .iter()
            .filter(|a| !other.outputs.iter().any(|b| b.file == a.file && b.sha256 == a.sha256))
            .map(|a| a.file.clone())
            .collect();
        for b in &other.outputs {
            if !self.outputs.iter().any(|a| a.file == b.file) {
                bad.push(b.file.clone());
            }
        }
        bad
    }
}

/// Creates `root/<scenario>/<timestamp>` (suffixed if it exists already).
pub fn run_directory(root: &Path, scenario: &str, stamp: &str) -> Result<PathBuf> {
    let base = root.join(scenario);
    std::fs::create_dir_all(&base)?;
    let mut dir = base.join(stamp);
    let mut k = 1;
    while dir.exists() {
        dir = base.join(format!("{stamp}-{k}"));
        k += 1;
    }
    std::fs::create_dir(&dir)?;
    Ok(dir)
}

/// Writes the files and a `manifest.json` listing their checksums.
pub fn write_run(dir: &Path, files: &[OutputFile], mut manifest: RunManifest) -> Result<RunManifest> {
    manifest.outputs.clear();
    for f in files {
        std::fs::write(dir.join(&f.name), &f.bytes)?;
        manifest.outputs.push(OutputEntry {
            file: f.name.clone(),
            sha256: f.sha256(),
            bytes: f.bytes.len(),
        });
    }
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{Integrator, IntegratorConfig, Sampling};
    use crate::feedback::FeedbackConfig;
    use crate::noise::NoiseConfig;
    use crate::simulation::FullSystem;

    #[test]
    fn csv_layout() {
        let p = ParticleParams::silica_default();
        let t = TrapParams::default_for(&p);
        let fb = FeedbackConfig::off();
        let noise = NoiseConfig::default();
        let mut sys = FullSystem::new(&p, &t, &fb, &noise, None);
        let s0 = EulerState {
            alpha: 0.05,
            beta: 1.5,
            ..EulerState::at_rest(1e5)
        };
        let mut integ = Integrator::new(IntegratorConfig::default()).unwrap();
        let rec = integ
            .advance(&mut sys, 0.0, s0.to_vector(), 1e-6, Sampling::Interpolated(2e-7))
            .unwrap();
        let text = String::from_utf8(trajectory_csv(&rec).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,alpha,beta,gamma,alpha_dot,beta_dot,omega3,energy_k,total_energy_j,precession_invariant,lab_lx,tip_y,tip_z"
        );
        assert_eq!(lines.count(), rec.len());
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let first = r.records().next().unwrap().unwrap();
        assert_eq!(first.len(), 13);
        let z: f64 = first[12].parse().unwrap();
        assert_eq!(z, 1.5f64.cos());
    }

    #[test]
    fn directories_never_collide() {
        let root = tempfile::tempdir().unwrap();
        let a = run_directory(root.path(), "fig2a", "x").unwrap();
        let b = run_directory(root.path(), "fig2a", "x").unwrap();
        assert_ne!(a, b);
        assert!(b.ends_with("x-1"));
    }
}
