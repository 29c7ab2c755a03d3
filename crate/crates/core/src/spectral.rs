//! Detector signals and power spectral densities.
//!
//! Detector gains are set to one: the homodyne signal is the orientation
//! factor of `p_y` and the split-detection signal that of `p_z`.

use std::f64::consts::TAU;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::analytics::axial_displacement_ratio;
use crate::error::{Error, Result};
use crate::physics::{polarization_vector, EulerState, ParticleParams, TrapParams};

/// `sin^2(beta) cos(alpha) sin(alpha)`, approximately `xi` near equilibrium.
pub fn signal_p45(s: &EulerState, gouy: Option<f64>) -> f64 {
    let sb = s.beta.sin();
    let v = sb * sb * s.alpha.cos() * s.alpha.sin();
    v * gouy.unwrap_or(1.0)
}

/// `cos(beta) sin(beta) cos(alpha)`, approximately `eta` near equilibrium.
pub fn signal_split(s: &EulerState) -> f64 {
    s.beta.cos() * s.beta.sin() * s.alpha.cos()
}

/// Detector channel recorded for spectra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PsdSignal {
    #[default]
    P45,
    Split,
    /// `y` component of the induced dipole.
    Py,
}

/// The chosen detector signal at every sample of a record.
pub fn signal_series(
    t: &[f64],
    y: &[[f64; 6]],
    signal: PsdSignal,
    gouy: Option<f64>,
    particle: &ParticleParams,
    trap: &TrapParams,
) -> Vec<f64> {
    t.iter()
        .zip(y)
        .map(|(&t, y)| {
            let s = EulerState::from_vector(t, y);
            match signal {
                PsdSignal::P45 => signal_p45(&s, gouy),
                PsdSignal::Split => signal_split(&s),
                PsdSignal::Py => polarization_vector(&s, trap, particle)[1],
            }
        })
        .collect()
}

/// Homodyne attenuation from the axial displacement, `z_d / z_R`.
pub fn gouy_attenuation(particle: &ParticleParams, trap: &TrapParams) -> f64 {
    axial_displacement_ratio(particle, trap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsdConfig {
    pub segment_length: usize,
    pub overlap: f64,
}

impl Default for PsdConfig {
    fn default() -> Self {
        PsdConfig {
            segment_length: 4096,
            overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdResult {
    pub freq_hz: Vec<f64>,
    pub omega: Vec<f64>,
    /// One-sided density (signal^2 / Hz).
    pub psd: Vec<f64>,
    pub segments: usize,
    pub segment_length: usize,
    pub overlap: f64,
    pub dt: f64,
    pub window: String,
}

impl PsdResult {
    pub fn bin_width(&self) -> f64 {
        1.0 / (self.segment_length as f64 * self.dt)
    }

    /// Integral of the density over frequency.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.bin_width()
    }

    /// Power in `[f_lo, f_hi]` (Hz).
    pub fn band_power(&self, f_lo: f64, f_hi: f64) -> f64 {
        self.freq_hz
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(_, p)| p)
            .sum::<f64>()
            * self.bin_width()
    }

    pub fn median(&self) -> f64 {
        let mut v: Vec<f64> = self.psd.iter().copied().skip(1).collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        v[v.len() / 2]
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (TAU * k as f64 / n as f64).cos())
        .collect()
}

/// Welch estimate with a periodic Hann window. Segments are mean-subtracted.
pub fn estimate_psd(series: &[f64], dt: f64, cfg: &PsdConfig) -> Result<PsdResult> {
    let n = cfg.segment_length;
    if !(dt > 0.0) || n < 8 || !(0.0..1.0).contains(&cfg.overlap) {
        return Err(Error::validation("psd", "need dt > 0, segment_length >= 8, 0 <= overlap < 1"));
    }
    if series.len() < n {
        return Err(Error::InsufficientData(format!(
            "{} samples, segment length {n}",
            series.len()
        )));
    }
    let hop = ((n as f64 * (1.0 - cfg.overlap)).round() as usize).max(1);
    let w = hann(n);
    let wpow: f64 = w.iter().map(|x| x * x).sum();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let nf = n / 2 + 1;
    let mut acc = vec![0.0; nf];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut segments = 0;
    let mut start = 0;
    while start + n <= series.len() {
        let seg = &series[start..start + n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        for (b, (x, wk)) in buf.iter_mut().zip(seg.iter().zip(&w)) {
            *b = Complex::new((x - mean) * wk, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let scale = dt / (wpow * segments as f64);
    let psd: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let df = 1.0 / (n as f64 * dt);
    let freq_hz: Vec<f64> = (0..nf).map(|k| k as f64 * df).collect();
    Ok(PsdResult {
        omega: freq_hz.iter().map(|f| TAU * f).collect(),
        freq_hz,
        psd,
        segments,
        segment_length: n,
        overlap: cfg.overlap,
        dt,
        window: "hann".into(),
    })
}

/// Relative mismatch between the integrated density and the variance of the
/// series (mean removed).
pub fn parseval_error(series: &[f64], psd: &PsdResult) -> f64 {
    let m = series.iter().sum::<f64>() / series.len() as f64;
    let var = series.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / series.len() as f64;
    (psd.total_power() - var).abs() / var
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub freq_hz: f64,
    pub height: f64,
    /// Full width at half maximum (Hz), from linear interpolation.
    pub width_hz: f64,
}

impl Peak {
    pub fn omega(&self) -> f64 {
        TAU * self.freq_hz
    }
}

/// Local maxima more than this many times the median level count as peaks.
pub const PEAK_FLOOR_FACTOR: f64 = 3.0;

/// All local maxima above `PEAK_FLOOR_FACTOR` times the median, highest
/// first, with parabolic (log-domain) sub-bin refinement.
pub fn all_peaks(psd: &PsdResult) -> Vec<Peak> {
    let floor = PEAK_FLOOR_FACTOR * psd.median();
    let p = &psd.psd;
    let df = psd.bin_width();
    let mut out = Vec::new();
    for k in 1..p.len().saturating_sub(1) {
        if !(p[k] > p[k - 1] && p[k] >= p[k + 1] && p[k] > floor) {
            continue;
        }
        let (a, b, c) = (p[k - 1].max(1e-300).ln(), p[k].ln(), p[k + 1].max(1e-300).ln());
        let den = a - 2.0 * b + c;
        let delta = if den < 0.0 { (0.5 * (a - c) / den).clamp(-0.5, 0.5) } else { 0.0 };
        let height = (b - 0.25 * (a - c) * delta).exp();
        let half = 0.5 * p[k];
        let mut lo = k as f64;
        for j in (0..k).rev() {
            if p[j] < half {
                lo = j as f64 + (half - p[j]) / (p[j + 1] - p[j]);
                break;
            }
        }
        let mut hi = k as f64;
        for j in k + 1..p.len() {
            if p[j] < half {
                hi = j as f64 - (half - p[j]) / (p[j - 1] - p[j]);
                break;
            }
        }
        out.push(Peak {
            freq_hz: (k as f64 + delta) * df,
            height,
            width_hz: (hi - lo) * df,
        });
    }
    out.sort_by(|a, b| b.height.total_cmp(&a.height));
    out
}

/// The `n` highest peaks, sorted by frequency.
pub fn find_peaks(psd: &PsdResult, n: usize) -> Result<Vec<Peak>> {
    let all = all_peaks(psd);
    if n == 0 || all.len() < n {
        return Err(Error::PeaksNotFound {
            wanted: n,
            found: all.len(),
        });
    }
    let mut top: Vec<Peak> = all.into_iter().take(n).collect();
    top.sort_by(|a, b| a.freq_hz.total_cmp(&b.freq_hz));
    Ok(top)
}

/// Highest density within `rel` of `omega` (rad/s), or 0 if the band is empty.
pub fn height_near(psd: &PsdResult, omega: f64, rel: f64) -> f64 {
    let f0 = omega / TAU;
    psd.freq_hz
        .iter()
        .zip(&psd.psd)
        .filter(|(f, _)| (**f - f0).abs() <= rel * f0)
        .map(|(_, p)| *p)
        .fold(0.0, f64::max)
}

/// Number of distinct spectral lines: peaks whose height is at least
/// `fraction` of the tallest one, merging maxima closer than `min_sep_hz`.
pub fn significant_peaks(psd: &PsdResult, fraction: f64, min_sep_hz: f64) -> Vec<Peak> {
    let all = all_peaks(psd);
    let Some(top) = all.first().map(|p| p.height) else {
        return Vec::new();
    };
    let mut kept: Vec<Peak> = Vec::new();
    for p in all.into_iter().filter(|p| p.height >= fraction * top) {
        if kept.iter().all(|k| (k.freq_hz - p.freq_hz).abs() > min_sep_hz) {
            kept.push(p);
        }
    }
    kept.sort_by(|a, b| a.freq_hz.total_cmp(&b.freq_hz));
    kept
}
