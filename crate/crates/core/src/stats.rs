//! Energy-distribution statistics: moments, normalized histograms and
//! Maxwell-Boltzmann fits `D(e) = A e^n exp(-e/T)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// Minimum sample count for a distribution fit.
pub const MIN_FIT_SAMPLES: usize = 100;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 points.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Standard error of the mean.
pub fn sem(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        std_dev(x) / (x.len() as f64).sqrt()
    }
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// Probability density per bin; integrates to one over the edges.
    pub density: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// `bins` equal-width bins on `[0, max]`.
    pub fn new(x: &[f64], bins: usize) -> Result<Histogram> {
        if x.is_empty() || bins == 0 {
            return Err(Error::InsufficientData("empty histogram input".into()));
        }
        let hi = x.iter().copied().fold(0.0, f64::max);
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
        let mut counts = vec![0u64; bins];
        for &v in x {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let n = x.len() as f64;
        let density = counts.iter().map(|&c| c as f64 / (n * width)).collect();
        Ok(Histogram {
            edges,
            density,
            counts,
        })
    }

    pub fn integral(&self) -> f64 {
        self.density
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DofExponent {
    Fixed(f64),
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MbFit {
    /// Exponent `n` of `e^n`.
    pub n: f64,
    pub temperature: f64,
    /// Normalization `1 / (Gamma(n+1) T^(n+1))`.
    pub amplitude: f64,
    /// Kolmogorov-Smirnov distance between the samples and the fit.
    pub residual: f64,
    pub log_likelihood: f64,
}

impl MbFit {
    pub fn density(&self, e: f64) -> f64 {
        if e <= 0.0 {
            return if self.n == 0.0 && e == 0.0 { self.amplitude } else { 0.0 };
        }
        self.amplitude * e.powf(self.n) * (-e / self.temperature).exp()
    }

    pub fn cdf(&self, e: f64) -> f64 {
        if e <= 0.0 {
            0.0
        } else {
            gamma_lr(self.n + 1.0, e / self.temperature)
        }
    }
}

fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Shape `k` of a Gamma distribution from `ln k - digamma(k) = s` by Newton
/// iteration (Minka's starting point).
fn gamma_shape(s: f64) -> f64 {
    let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..50 {
        let f = k.ln() - digamma(k) - s;
        // trigamma by a central difference of digamma
        let h = 1e-5 * k;
        let tri = (digamma(k + h) - digamma(k - h)) / (2.0 * h);
        let step = f / (1.0 / k - tri);
        let next = (k - step).max(0.5 * k);
        if (next - k).abs() < 1e-12 * k {
            return next;
        }
        k = next;
    }
    k
}

/// Maximum-likelihood fit of `A e^n exp(-e/T)` (a Gamma distribution with
/// shape `n + 1` and scale `T`).
pub fn fit_maxwell_boltzmann(energies: &[f64], n: DofExponent) -> Result<MbFit> {
    if energies.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} energies, at least {MIN_FIT_SAMPLES} needed",
            energies.len()
        )));
    }
    if energies.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::FitDegenerate("energies must be positive and finite".into()));
    }
    let m = mean(energies);
    let sd = std_dev(energies);
    if !(sd > 1e-9 * m) {
        return Err(Error::FitDegenerate(format!("variance {sd:e}^2 is too small")));
    }
    let shape = match n {
        DofExponent::Fixed(n) => {
            if !(n > -1.0) {
                return Err(Error::validation("n", "exponent must exceed -1"));
            }
            n + 1.0
        }
        DofExponent::Free => {
            let mean_ln = energies.iter().map(|e| e.ln()).sum::<f64>() / energies.len() as f64;
            let s = m.ln() - mean_ln;
            if !(s > 0.0) {
                return Err(Error::FitDegenerate("log-mean gap is not positive".into()));
            }
            gamma_shape(s)
        }
    };
    let t = m / shape;
    let mut sorted = energies.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n_exp = shape - 1.0;
    let ln_a = -ln_gamma(shape) - shape * t.ln();
    let ll = energies
        .iter()
        .map(|e| ln_a + n_exp * e.ln() - e / t)
        .sum::<f64>();
    let fit = MbFit {
        n: n_exp,
        temperature: t,
        amplitude: ln_a.exp(),
        residual: 0.0,
        log_likelihood: ll,
    };
    Ok(MbFit {
        residual: ks_distance(&sorted, |x| fit.cdf(x)),
        ..fit
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, Gamma};

    #[test]
    fn moments() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&x), 2.5);
        assert_relative_eq!(std_dev(&x), (5.0f64 / 3.0).sqrt());
        assert_relative_eq!(sem(&x), (5.0f64 / 3.0).sqrt() / 2.0);
        assert_relative_eq!(slope(&x, &[3.0, 5.0, 7.0, 9.0]), 2.0);
    }

    #[test]
    fn histogram_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = Exp::new(1.0 / 300.0).unwrap().sample_iter(&mut rng).take(5000).collect();
        let h = Histogram::new(&x, 40).unwrap();
        assert!((h.integral() - 1.0).abs() < 1e-6);
        assert_eq!(h.counts.iter().sum::<u64>(), 5000);
        assert_eq!(h.edges.len(), 41);
    }

    #[test]
    fn gamma_two_recovers_temperature_with_n1() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = Gamma::new(2.0, 300.0).unwrap().sample_iter(&mut rng).take(10_000).collect();
        let f = fit_maxwell_boltzmann(&x, DofExponent::Fixed(1.0)).unwrap();
        assert_relative_eq!(f.temperature, 300.0, max_relative = 0.03);
        assert!(f.residual < 0.02);
        let free = fit_maxwell_boltzmann(&x, DofExponent::Free).unwrap();
        assert!((free.n - 1.0).abs() < 0.1, "{}", free.n);
        assert!(free.log_likelihood >= f.log_likelihood - 1e-6);
        let f0 = fit_maxwell_boltzmann(&x, DofExponent::Fixed(0.0)).unwrap();
        assert!(f.residual < f0.residual);
    }

    #[test]
    fn exponential_recovers_scale_with_n0() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = Exp::new(1.0 / 312.0).unwrap().sample_iter(&mut rng).take(4000).collect();
        let f = fit_maxwell_boltzmann(&x, DofExponent::Fixed(0.0)).unwrap();
        assert_relative_eq!(f.temperature, mean(&x), max_relative = 1e-12);
        let f1 = fit_maxwell_boltzmann(&x, DofExponent::Fixed(1.0)).unwrap();
        assert!(f.residual < f1.residual);
    }

    #[test]
    fn fit_density_normalizes() {
        let f = MbFit {
            n: 1.0,
            temperature: 300.0,
            amplitude: 1.0 / (300.0f64 * 300.0),
            residual: 0.0,
            log_likelihood: 0.0,
        };
        let de = 0.5;
        let s: f64 = (0..20_000).map(|k| f.density((k as f64 + 0.5) * de) * de).sum();
        assert_relative_eq!(s, 1.0, max_relative = 1e-4);
        assert_relative_eq!(f.cdf(600.0), 1.0 - 3.0 * (-2.0f64).exp(), max_relative = 1e-10);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            fit_maxwell_boltzmann(&[300.0; 200], DofExponent::Fixed(1.0)),
            Err(Error::FitDegenerate(_))
        ));
        assert!(matches!(
            fit_maxwell_boltzmann(&[1.0; 10], DofExponent::Free),
            Err(Error::InsufficientData(_))
        ));
    }
}
