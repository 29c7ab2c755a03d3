//! Closed-form small-angle results: normal modes, cooling rates, the
//! precession invariant, mode fitting and the axial-displacement estimate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::SPEED_OF_LIGHT;
use crate::constants::VACUUM_PERMITTIVITY;
use crate::error::{Error, Result};
use crate::feedback::SignalChoice;
use crate::physics::{ParticleParams, SmallAngleState, TrapParams};

/// `omega_c = (I_z / I_x) omega3`.
pub fn coupling_frequency(particle: &ParticleParams, omega3: f64) -> f64 {
    particle.inertia_ratio() * omega3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModes {
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub big_omega: f64,
}

/// `Omega = sqrt(4 w^2 + wc^2)`, `w_pm = (Omega +- wc) / 2`.
pub fn normal_modes_linear(omega: f64, omega_c: f64) -> Result<LinearModes> {
    if !(omega > 0.0) {
        return Err(Error::validation("omega", "must be positive"));
    }
    let big = (4.0 * omega * omega + omega_c * omega_c).sqrt();
    Ok(LinearModes {
        omega_plus: 0.5 * (big + omega_c),
        omega_minus: 0.5 * (big - omega_c),
        big_omega: big,
    })
}

/// Normal-mode frequencies and ellipticities of
/// `xi'' = -w_xi^2 xi - wc eta'`, `eta'' = -w_eta^2 eta + wc xi'`.
///
/// Modes: `xi = A+ cos(phi+) + A- cos(phi-)`,
/// `eta = k1 A+ sin(phi+) - k2 A- sin(phi-)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeFrequencies {
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub q: f64,
}

impl ModeFrequencies {
    pub fn from_linear(m: &LinearModes) -> Self {
        ModeFrequencies {
            omega_plus: m.omega_plus,
            omega_minus: m.omega_minus,
            kappa1: 1.0,
            kappa2: 1.0,
            q: 0.0,
        }
    }
}

pub fn normal_modes_elliptical(omega_xi: f64, omega_eta: f64, omega_c: f64) -> Result<ModeFrequencies> {
    if !(omega_xi > 0.0) {
        return Err(Error::ParameterOrderViolation(format!(
            "omega_xi must be positive, got {omega_xi}"
        )));
    }
    if omega_xi > omega_eta {
        return Err(Error::ParameterOrderViolation(format!(
            "omega_xi = {omega_xi} exceeds omega_eta = {omega_eta}"
        )));
    }
    let (wx2, we2, wc) = (omega_xi * omega_xi, omega_eta * omega_eta, omega_c);
    let wc2 = wc * wc;
    let s = wx2 + we2 + wc2;
    let a = wc2 + wx2 - we2;
    let q = (4.0 * we2 * wc2 + a * a).sqrt();
    let wp2 = 0.5 * (s + q);
    let wm2 = wx2 * we2 / wp2;
    let (wp, wm) = (wp2.sqrt(), wm2.sqrt());
    let (k1, k2) = if wc == 0.0 {
        if wx2 == we2 {
            (1.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else if a >= 0.0 {
        // Q + a is free of cancellation; Q - a = 4 we2 wc2 / (Q + a)
        (2.0 * wp * wc / (q + a), wm * (q + a) / (2.0 * we2 * wc))
    } else {
        (wp * (q - a) / (2.0 * we2 * wc), 2.0 * wm * wc / (q - a))
    };
    Ok(ModeFrequencies {
        omega_plus: wp,
        omega_minus: wm,
        kappa1: k1,
        kappa2: k2,
        q,
    })
}

/// Linearized parameters of the tip motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallAngleParams {
    pub omega_xi_sq: f64,
    pub omega_eta_sq: f64,
    pub omega_c: f64,
}

impl SmallAngleParams {
    pub fn new(trap: &TrapParams, particle: &ParticleParams, omega3: f64) -> Self {
        SmallAngleParams {
            omega_xi_sq: trap.omega_xi_sq,
            omega_eta_sq: trap.omega_eta_sq,
            omega_c: coupling_frequency(particle, omega3),
        }
    }

    pub fn modes(&self) -> Result<ModeFrequencies> {
        if self.omega_xi_sq == self.omega_eta_sq {
            let lin = normal_modes_linear(self.omega_xi_sq.sqrt(), self.omega_c)?;
            Ok(ModeFrequencies::from_linear(&lin))
        } else {
            normal_modes_elliptical(self.omega_xi_sq.sqrt(), self.omega_eta_sq.sqrt(), self.omega_c)
        }
    }
}

/// `d/dt (xi, eta, xi_dot, eta_dot)` with the restoring terms scaled by
/// `modulation`.
pub fn small_angle_rhs(s: &SmallAngleState, p: &SmallAngleParams, modulation: f64) -> [f64; 4] {
    [
        s.xi_dot,
        s.eta_dot,
        -p.omega_xi_sq * modulation * s.xi - p.omega_c * s.eta_dot,
        -p.omega_eta_sq * modulation * s.eta + p.omega_c * s.xi_dot,
    ]
}

/// Librational energy `(I_x/2)(xi'^2 + eta'^2 + w_xi^2 xi^2 + w_eta^2 eta^2)` (J).
pub fn small_angle_energy(s: &SmallAngleState, p: &SmallAngleParams, inertia_x: f64) -> f64 {
    0.5 * inertia_x
        * (s.xi_dot * s.xi_dot
            + s.eta_dot * s.eta_dot
            + p.omega_xi_sq * s.xi * s.xi
            + p.omega_eta_sq * s.eta * s.eta)
}

/// `xi eta' - eta xi' - (wc/2)(xi^2 + eta^2)`; constant under linear
/// polarization for any feedback modulation.
pub fn conserved_precession_quantity(s: &SmallAngleState, omega_c: f64) -> f64 {
    s.xi * s.eta_dot - s.eta * s.xi_dot - 0.5 * omega_c * (s.xi * s.xi + s.eta * s.eta)
}

/// Cycle mean of [`conserved_precession_quantity`] on the linear modes.
pub fn precession_quantity_of_modes(a_plus: f64, a_minus: f64, big_omega: f64) -> f64 {
    0.5 * big_omega * (a_plus * a_plus - a_minus * a_minus)
}

/// Average energy change (W) under `xi xi_dot` feedback with linear
/// polarization; never positive.
pub fn cooling_power_linear(
    a_plus: f64,
    a_minus: f64,
    omega: f64,
    omega_c: f64,
    chi: f64,
    radius: f64,
    inertia_x: f64,
) -> f64 {
    let big2 = 4.0 * omega * omega + omega_c * omega_c;
    let ap = a_plus * a_minus;
    -0.25 * inertia_x * omega * omega * chi * radius * radius * big2 * ap * ap
}

/// Coefficients of the elliptical cooling rates,
/// `P_xi  =  A+^4 y1 - A-^4 y2 - A+^2 A-^2 y3`,
/// `P_eta = -A+^4 z1 + A-^4 z2 - A+^2 A-^2 z3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoolingCoefficients {
    pub y1: f64,
    pub y2: f64,
    pub y3: f64,
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
}

impl CoolingCoefficients {
    pub fn rate(&self, a_plus: f64, a_minus: f64, choice: SignalChoice) -> f64 {
        let (p4, m4, pm) = (a_plus.powi(4), a_minus.powi(4), (a_plus * a_minus).powi(2));
        let xi = p4 * self.y1 - m4 * self.y2 - pm * self.y3;
        let eta = -p4 * self.z1 + m4 * self.z2 - pm * self.z3;
        match choice {
            SignalChoice::Xi | SignalChoice::Py => xi,
            SignalChoice::Eta => eta,
            SignalChoice::Sum => xi + eta,
            SignalChoice::Off => 0.0,
        }
    }
}

/// Physical parameters entering the cooling rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoolingParams {
    pub omega_xi: f64,
    pub omega_eta: f64,
    pub omega_c: f64,
    pub chi: f64,
    pub radius: f64,
    pub inertia_x: f64,
}

/// Cycle-averaged coefficients obtained by substituting the normal modes
/// into `dE/dt = -I_x chi R^2 (q q') (w_xi^2 xi xi' + w_eta^2 eta eta')`.
pub fn cooling_coefficients(p: &CoolingParams) -> Result<CoolingCoefficients> {
    if p.omega_xi > p.omega_eta {
        return Err(Error::ParameterOrderViolation(format!(
            "omega_xi = {} exceeds omega_eta = {}",
            p.omega_xi, p.omega_eta
        )));
    }
    let m = normal_modes_elliptical(p.omega_xi, p.omega_eta, p.omega_c)?;
    let c = p.inertia_x * p.chi * p.radius * p.radius;
    let (wx2, we2) = (p.omega_xi * p.omega_xi, p.omega_eta * p.omega_eta);
    let (k1, k2) = (m.kappa1, m.kappa2);
    let (wp, wm) = (m.omega_plus, m.omega_minus);
    let sum2 = (wp + wm).powi(2);
    let diff2 = (wp - wm).powi(2);
    let n1 = wp * wp * (we2 * k1 * k1 - wx2);
    let n2 = wm * wm * (wx2 - we2 * k2 * k2);
    let kk = k1 * k2;
    Ok(CoolingCoefficients {
        y1: c * n1 / 8.0,
        y2: c * n2 / 8.0,
        y3: c * (sum2 * (wx2 + we2 * kk) + diff2 * (wx2 - we2 * kk)) / 8.0,
        z1: c * k1 * k1 * n1 / 8.0,
        z2: c * k2 * k2 * n2 / 8.0,
        z3: c * kk * (sum2 * (wx2 + we2 * kk) - diff2 * (wx2 - we2 * kk)) / 8.0,
    })
}

/// Average energy change (W) for the chosen feedback signal under
/// elliptical polarization.
pub fn cooling_power_elliptical(
    a_plus: f64,
    a_minus: f64,
    p: &CoolingParams,
    choice: SignalChoice,
) -> Result<f64> {
    Ok(cooling_coefficients(p)?.rate(a_plus, a_minus, choice))
}

/// The combinations `(z1 - y1, y2 - z2, y3 + z3)` in their commonly quoted
/// closed forms, kept for comparison with [`cooling_coefficients`].
/// They agree with the derived coefficients at `theta = 0` only.
pub fn printed_sum_coefficients(p: &CoolingParams) -> Result<(f64, f64, f64)> {
    let m = normal_modes_elliptical(p.omega_xi, p.omega_eta, p.omega_c)?;
    let c = p.inertia_x * p.chi * p.radius * p.radius;
    let (wx2, we2) = (p.omega_xi * p.omega_xi, p.omega_eta * p.omega_eta);
    let (k1, k2) = (m.kappa1, m.kappa2);
    Ok((
        c * m.omega_plus.powi(2) / 4.0 * (k1 * k1 - 1.0) * (we2 * k1 * k1 - wx2),
        c * m.omega_minus.powi(2) / 4.0 * (1.0 - k2 * k2) * (wx2 - we2 * k2 * k2),
        c * wx2 / 2.0 * (4.0 * wx2 + p.omega_c * p.omega_c),
    ))
}

/// Amplitudes and phases of the two modes fitted to a window of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDecomposition {
    pub a_plus: f64,
    pub a_minus: f64,
    pub delta_plus: f64,
    pub delta_minus: f64,
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub q: f64,
    /// RMS of the residual over all scaled rows.
    pub residual_rms: f64,
    /// `residual_rms` divided by the RMS of the scaled data.
    pub relative_residual: f64,
}

impl ModeDecomposition {
    /// `min(A+, A-) / max(A+, A-)`.
    pub fn amplitude_ratio(&self) -> f64 {
        let (lo, hi) = if self.a_plus < self.a_minus {
            (self.a_plus, self.a_minus)
        } else {
            (self.a_minus, self.a_plus)
        };
        if hi == 0.0 {
            0.0
        } else {
            lo / hi
        }
    }

    /// Evaluates the fitted modes at `t`.
    pub fn evaluate(&self, t: f64) -> SmallAngleState {
        mode_state(
            t,
            self.a_plus,
            self.delta_plus,
            self.a_minus,
            self.delta_minus,
            &ModeFrequencies {
                omega_plus: self.omega_plus,
                omega_minus: self.omega_minus,
                kappa1: self.kappa1,
                kappa2: self.kappa2,
                q: self.q,
            },
        )
    }
}

/// State of the superposed normal modes at time `t`.
pub fn mode_state(
    t: f64,
    a_plus: f64,
    delta_plus: f64,
    a_minus: f64,
    delta_minus: f64,
    m: &ModeFrequencies,
) -> SmallAngleState {
    let (sp, cp) = (m.omega_plus * t + delta_plus).sin_cos();
    let (sm, cm) = (m.omega_minus * t + delta_minus).sin_cos();
    SmallAngleState {
        xi: a_plus * cp + a_minus * cm,
        eta: m.kappa1 * a_plus * sp - m.kappa2 * a_minus * sm,
        xi_dot: -a_plus * m.omega_plus * sp - a_minus * m.omega_minus * sm,
        eta_dot: m.kappa1 * a_plus * m.omega_plus * cp - m.kappa2 * a_minus * m.omega_minus * cm,
        t,
    }
}

/// Minimum number of `omega_minus` cycles a fit window must span.
pub const MIN_FIT_CYCLES: f64 = 10.0;
/// Largest accepted relative residual.
pub const MAX_FIT_RESIDUAL: f64 = 0.1;

struct LinearFit {
    x: [f64; 4],
    residual_rms: f64,
    relative_residual: f64,
}

fn check_window(samples: &[SmallAngleState], modes: &ModeFrequencies) -> Result<()> {
    if samples.len() < 8 {
        return Err(Error::FitDegenerate(format!(
            "{} samples are too few",
            samples.len()
        )));
    }
    if !(modes.kappa1.is_finite() && modes.kappa2.is_finite()) {
        return Err(Error::FitDegenerate("mode ellipticity is unbounded".into()));
    }
    let span = samples.last().unwrap().t - samples[0].t;
    let cycles = span * modes.omega_minus.abs() / (2.0 * PI);
    if cycles < MIN_FIT_CYCLES {
        return Err(Error::FitDegenerate(format!(
            "window spans {cycles:.2} cycles of omega_minus, need {MIN_FIT_CYCLES}"
        )));
    }
    Ok(())
}

/// Least squares for `(A+ cos d+, A+ sin d+, A- cos d-, A- sin d-)` at fixed
/// frequencies. Velocity rows are scaled by `1/sqrt(w+ w-)`.
fn linear_fit(samples: &[SmallAngleState], wp: f64, wm: f64, k1: f64, k2: f64) -> Result<LinearFit> {
    let scale = 1.0 / (wp * wm).abs().sqrt();
    let mut ata = [[0.0; 4]; 4];
    let mut atb = [0.0; 4];
    let mut data_sq = 0.0;
    let rows_of = |s: &SmallAngleState| -> [([f64; 4], f64); 4] {
        let (sp, cp) = (wp * s.t).sin_cos();
        let (sm, cm) = (wm * s.t).sin_cos();
        [
            ([cp, -sp, cm, -sm], s.xi),
            ([k1 * sp, k1 * cp, -k2 * sm, -k2 * cm], s.eta),
            (
                [-wp * sp * scale, -wp * cp * scale, -wm * sm * scale, -wm * cm * scale],
                s.xi_dot * scale,
            ),
            (
                [
                    k1 * wp * cp * scale,
                    -k1 * wp * sp * scale,
                    -k2 * wm * cm * scale,
                    k2 * wm * sm * scale,
                ],
                s.eta_dot * scale,
            ),
        ]
    };
    for s in samples {
        for (row, b) in rows_of(s) {
            data_sq += b * b;
            for i in 0..4 {
                atb[i] += row[i] * b;
                for j in 0..4 {
                    ata[i][j] += row[i] * row[j];
                }
            }
        }
    }
    let x = solve4(ata, atb)
        .ok_or_else(|| Error::FitDegenerate("normal equations are singular".into()))?;
    let mut res_sq = 0.0;
    for s in samples {
        for (row, b) in rows_of(s) {
            let model: f64 = (0..4).map(|i| row[i] * x[i]).sum();
            res_sq += (model - b).powi(2);
        }
    }
    let nrows = (4 * samples.len()) as f64;
    let residual_rms = (res_sq / nrows).sqrt();
    let data_rms = (data_sq / nrows).sqrt();
    Ok(LinearFit {
        x,
        residual_rms,
        relative_residual: if data_rms > 0.0 { residual_rms / data_rms } else { 0.0 },
    })
}

fn decomposition(f: &LinearFit, wp: f64, wm: f64, modes: &ModeFrequencies) -> Result<ModeDecomposition> {
    if f.relative_residual > MAX_FIT_RESIDUAL {
        return Err(Error::FitDegenerate(format!(
            "residual is {:.1}% of the signal RMS",
            100.0 * f.relative_residual
        )));
    }
    let x = f.x;
    Ok(ModeDecomposition {
        a_plus: x[0].hypot(x[1]),
        a_minus: x[2].hypot(x[3]),
        delta_plus: x[1].atan2(x[0]),
        delta_minus: x[3].atan2(x[2]),
        omega_plus: wp,
        omega_minus: wm,
        kappa1: modes.kappa1,
        kappa2: modes.kappa2,
        q: modes.q,
        residual_rms: f.residual_rms,
        relative_residual: f.relative_residual,
    })
}

/// Amplitudes and phases of both modes by linear least squares, with the
/// frequencies held at `modes`.
pub fn fit_modes(samples: &[SmallAngleState], modes: &ModeFrequencies) -> Result<ModeDecomposition> {
    check_window(samples, modes)?;
    let (wp, wm) = (modes.omega_plus, modes.omega_minus);
    let f = linear_fit(samples, wp, wm, modes.kappa1, modes.kappa2)?;
    decomposition(&f, wp, wm, modes)
}

/// As [`fit_modes`], but each mode frequency is also adjusted within a
/// relative band `max_shift` to minimize the residual (amplitude-dependent
/// frequency shifts of the full dynamics). The ellipticities stay fixed.
pub fn fit_modes_refined(
    samples: &[SmallAngleState],
    modes: &ModeFrequencies,
    max_shift: f64,
) -> Result<ModeDecomposition> {
    check_window(samples, modes)?;
    let (k1, k2) = (modes.kappa1, modes.kappa2);
    let cost = |wp: f64, wm: f64| {
        linear_fit(samples, wp, wm, k1, k2).map_or(f64::INFINITY, |f| f.residual_rms)
    };
    let golden = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64| -> f64 {
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..40 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d);
            }
        }
        0.5 * (a + b)
    };
    let (mut wp, mut wm) = (modes.omega_plus, modes.omega_minus);
    for _ in 0..3 {
        wp = golden(&|w| cost(w, wm), modes.omega_plus * (1.0 - max_shift), modes.omega_plus * (1.0 + max_shift));
        wm = golden(&|w| cost(wp, w), modes.omega_minus * (1.0 - max_shift), modes.omega_minus * (1.0 + max_shift));
    }
    let f = linear_fit(samples, wp, wm, k1, k2)?;
    decomposition(&f, wp, wm, modes)
}

/// Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    let norm = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-13 * norm {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Radiation-pressure force along the beam,
/// `(4/3)(P NA^2 / c)(2 pi R / lambda)^6 alpha_bar^2` (N).
pub fn axial_radiation_force(particle: &ParticleParams, trap: &TrapParams) -> f64 {
    let na = trap.numerical_aperture;
    4.0 / 3.0 * trap.power * na * na / SPEED_OF_LIGHT
        * (2.0 * PI * particle.radius / trap.wavelength).powi(6)
        * particle.alpha_bar
        * particle.alpha_bar
}

/// Axial trap stiffness `m w_z^2 = 2 alpha_0 NA^6 pi^3 P / (c eps0 lambda^4)`
/// with `alpha_0 = 4 pi eps0 R^3 alpha_bar`.
pub fn axial_stiffness(particle: &ParticleParams, trap: &TrapParams) -> f64 {
    let alpha0 = 4.0 * PI * VACUUM_PERMITTIVITY * particle.radius.powi(3) * particle.alpha_bar;
    2.0 * alpha0 * trap.numerical_aperture.powi(6) * PI.powi(3) * trap.power
        / (SPEED_OF_LIGHT * VACUUM_PERMITTIVITY * trap.wavelength.powi(4))
}

/// Rayleigh range `lambda / (pi NA^2)`.
pub fn rayleigh_range(trap: &TrapParams) -> f64 {
    trap.wavelength / (PI * trap.numerical_aperture * trap.numerical_aperture)
}

/// `z_d / z_R = (32 alpha_bar / 3)(pi R / lambda)^3 / NA^2`.
pub fn axial_displacement_ratio(particle: &ParticleParams, trap: &TrapParams) -> f64 {
    32.0 * particle.alpha_bar / 3.0 * (PI * particle.radius / trap.wavelength).powi(3)
        / (trap.numerical_aperture * trap.numerical_aperture)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Positive imaginary parts of the eigenvalues of the first-order form of
    /// the linear system, sorted descending.
    fn eigen_frequencies(wx2: f64, we2: f64, wc: f64) -> (f64, f64) {
        // work in units of omega_eta to keep the matrix well scaled
        let u = we2.sqrt();
        let (wx2, we2, wc) = (wx2 / (u * u), we2 / (u * u), wc / u);
        let m = Matrix4::new(
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            -wx2, 0.0, 0.0, -wc, //
            0.0, -we2, wc, 0.0,
        );
        let mut f: Vec<f64> = m
            .complex_eigenvalues()
            .iter()
            .map(|z| z.im)
            .filter(|&im| im > 0.0)
            .collect();
        f.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(f.len(), 2);
        (f[0] * u, f[1] * u)
    }

    #[test]
    fn coupling_frequency_cases() {
        let p = ParticleParams::silica_default();
        assert_eq!(coupling_frequency(&p, 0.0), 0.0);
        assert_relative_eq!(coupling_frequency(&p, 3.5e5), 1.0e5, max_relative = 1e-14);
        assert_relative_eq!(coupling_frequency(&p, -3.5e5), -1.0e5, max_relative = 1e-14);
    }

    #[test]
    fn linear_modes_identities() {
        let m = normal_modes_linear(1e6, 0.0).unwrap();
        assert_eq!(m.omega_plus, 1e6);
        assert_eq!(m.omega_minus, 1e6);
        let m = normal_modes_linear(1e6, 1e5).unwrap();
        assert_relative_eq!(m.omega_plus - m.omega_minus, 1e5, max_relative = 1e-10);
        assert_relative_eq!(m.omega_plus * m.omega_minus, 1e12, max_relative = 1e-15);
        let (a, b) = eigen_frequencies(1e12, 1e12, 1e5);
        assert_relative_eq!(m.omega_plus, a, max_relative = 1e-10);
        assert_relative_eq!(m.omega_minus, b, max_relative = 1e-10);
        assert!(normal_modes_linear(0.0, 1.0).is_err());
    }

    #[test]
    fn elliptical_reduces_to_linear() {
        let e = normal_modes_elliptical(1e6, 1e6, 1e5).unwrap();
        let l = normal_modes_linear(1e6, 1e5).unwrap();
        assert_relative_eq!(e.kappa1, 1.0, max_relative = 1e-12);
        assert_relative_eq!(e.kappa2, 1.0, max_relative = 1e-12);
        assert_relative_eq!(e.omega_plus, l.omega_plus, max_relative = 1e-14);
        assert_relative_eq!(e.omega_minus, l.omega_minus, max_relative = 1e-14);
    }

    #[test]
    fn elliptical_matches_eigen_solver_and_kappa_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let w = rng.gen_range(1e5..1e7);
            let theta: f64 = rng.gen_range(0.0..0.78);
            let wc = w * rng.gen_range(-0.3..0.3);
            let wx = w * (2.0 * theta).cos().sqrt();
            let we = w * theta.cos();
            let m = normal_modes_elliptical(wx, we, wc).unwrap();
            let (a, b) = eigen_frequencies(wx * wx, we * we, wc);
            assert_relative_eq!(m.omega_plus, a, max_relative = 1e-10);
            assert_relative_eq!(m.omega_minus, b, max_relative = 1e-10);
            assert!(m.kappa1 * m.kappa1 >= 1.0 - 1e-12);
            assert!(m.kappa2 * m.kappa2 <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn modes_solve_the_linear_equations() {
        // substitute the mode forms into the equations of motion
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let w: f64 = 2e6;
            let theta: f64 = rng.gen_range(0.0..0.7);
            let wc = w * rng.gen_range(0.001..0.3);
            let p = SmallAngleParams {
                omega_xi_sq: w * w * (2.0 * theta).cos(),
                omega_eta_sq: w * w * theta.cos().powi(2),
                omega_c: wc,
            };
            let m = p.modes().unwrap();
            let (ap, am, dp, dm) = (1e-3, 4e-4, 0.3, 1.9);
            for k in 0..20 {
                let t = k as f64 * 1.3e-7;
                let s = mode_state(t, ap, dp, am, dm, &m);
                let d = small_angle_rhs(&s, &p, 1.0);
                // second derivative of the mode forms
                let (sp, cp) = (m.omega_plus * t + dp).sin_cos();
                let (sm, cm) = (m.omega_minus * t + dm).sin_cos();
                let wp2 = m.omega_plus.powi(2);
                let wm2 = m.omega_minus.powi(2);
                let xi_dd = -ap * wp2 * cp - am * wm2 * cm;
                let eta_dd = -m.kappa1 * ap * wp2 * sp + m.kappa2 * am * wm2 * sm;
                let scale = w * w * ap;
                assert!((d[2] - xi_dd).abs() < 1e-10 * scale);
                assert!((d[3] - eta_dd).abs() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn conserved_quantity_values() {
        assert_eq!(conserved_precession_quantity(&SmallAngleState::default(), 1e5), 0.0);
        let l = normal_modes_linear(2e6, 1e5).unwrap();
        let m = ModeFrequencies::from_linear(&l);
        let (ap, am) = (2e-3, 1e-3);
        let want = precession_quantity_of_modes(ap, am, l.big_omega);
        // exact for single modes, cycle-mean otherwise
        let single = mode_state(0.37e-6, ap, 0.2, 0.0, 0.0, &m);
        assert_relative_eq!(
            conserved_precession_quantity(&single, 1e5),
            precession_quantity_of_modes(ap, 0.0, l.big_omega),
            max_relative = 1e-12
        );
        let n = 20000;
        let t_span = 2.0 * PI / 1e5 * 3.0;
        let mean: f64 = (0..n)
            .map(|k| {
                let s = mode_state(k as f64 * t_span / n as f64, ap, 0.2, am, 1.0, &m);
                conserved_precession_quantity(&s, 1e5)
            })
            .sum::<f64>()
            / n as f64;
        assert_relative_eq!(mean, want, max_relative = 1e-3);
    }

    #[test]
    fn cooling_power_linear_cases() {
        assert_eq!(cooling_power_linear(1e-3, 0.0, 2e6, 1e5, 1e7, 85e-9, 1e-31), 0.0);
        assert_eq!(cooling_power_linear(0.0, 0.0, 2e6, 1e5, 1e7, 85e-9, 1e-31), 0.0);
        assert!(cooling_power_linear(1e-3, 2e-3, 2e6, 1e5, 1e7, 85e-9, 1e-31) < 0.0);
    }

    /// Phase average of `-c (q q') (w_xi^2 xi xi' + w_eta^2 eta eta')` over
    /// independent mode phases.
    fn phase_average(p: &CoolingParams, ap: f64, am: f64, choice: SignalChoice) -> f64 {
        let m = normal_modes_elliptical(p.omega_xi, p.omega_eta, p.omega_c).unwrap();
        let c = p.inertia_x * p.chi * p.radius * p.radius;
        let (wx2, we2) = (p.omega_xi.powi(2), p.omega_eta.powi(2));
        let n = 256;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dp = 2.0 * PI * i as f64 / n as f64;
                let dm = 2.0 * PI * j as f64 / n as f64;
                let s = mode_state(0.0, ap, dp, am, dm, &m);
                let xx = s.xi * s.xi_dot;
                let ee = s.eta * s.eta_dot;
                let q = match choice {
                    SignalChoice::Xi => xx,
                    SignalChoice::Eta => ee,
                    _ => xx + ee,
                };
                acc += -c * q * (wx2 * xx + we2 * ee);
            }
        }
        acc / (n * n) as f64
    }

    #[test]
    fn elliptical_coefficients_match_phase_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let w: f64 = 2.19e6;
            let theta: f64 = rng.gen_range(0.0..0.7);
            let p = CoolingParams {
                omega_xi: w * (2.0 * theta).cos().sqrt(),
                omega_eta: w * theta.cos(),
                omega_c: w * rng.gen_range(0.01..0.2),
                chi: 1e7,
                radius: 85e-9,
                inertia_x: 1.04e-31,
            };
            let (ap, am) = (rng.gen_range(1e-3..1e-2), rng.gen_range(1e-3..1e-2));
            for choice in [SignalChoice::Xi, SignalChoice::Eta, SignalChoice::Sum] {
                let want = phase_average(&p, ap, am, choice);
                let got = cooling_power_elliptical(ap, am, &p, choice).unwrap();
                assert_relative_eq!(got, want, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn theta_zero_reduces_to_linear_rate() {
        let (w, wc) = (2.19e6, 1e5);
        let p = CoolingParams {
            omega_xi: w,
            omega_eta: w,
            omega_c: wc,
            chi: 1e7,
            radius: 85e-9,
            inertia_x: 1.04e-31,
        };
        let c = cooling_coefficients(&p).unwrap();
        assert_relative_eq!(c.z1 - c.y1, 0.0, epsilon = 1e-12 * c.y3);
        assert_relative_eq!(c.y2 - c.z2, 0.0, epsilon = 1e-12 * c.y3);
        let (ap, am) = (3e-3, 1e-3);
        let lin = cooling_power_linear(ap, am, w, wc, 1e7, 85e-9, 1.04e-31);
        let xi = c.rate(ap, am, SignalChoice::Xi);
        assert_relative_eq!(xi, lin, max_relative = 1e-9);
        assert_relative_eq!(c.rate(ap, am, SignalChoice::Sum), 2.0 * lin, max_relative = 1e-9);
        let printed = printed_sum_coefficients(&p).unwrap();
        assert_relative_eq!(printed.2, c.y3 + c.z3, max_relative = 1e-9);
    }

    #[test]
    fn sign_structure_over_random_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10_000 {
            let w: f64 = 2.19e6;
            let theta: f64 = rng.gen_range(1e-3..PI / 4.0 - 1e-3);
            let p = CoolingParams {
                omega_xi: w * (2.0 * theta).cos().sqrt(),
                omega_eta: w * theta.cos(),
                omega_c: w * rng.gen_range(1e-4..0.3),
                chi: 1e7,
                radius: 85e-9,
                inertia_x: 1.04e-31,
            };
            let c = cooling_coefficients(&p).unwrap();
            let tol = 1e-12 * c.y3;
            assert!(c.z1 - c.y1 >= -tol);
            assert!(c.y2 - c.z2 >= -tol);
            assert!(c.y3 + c.z3 > 0.0);
            let (ap, am) = (rng.gen_range(0.0..1e-2), rng.gen_range(0.0..1e-2));
            assert!(c.rate(ap, am, SignalChoice::Sum) <= tol * 1e-4);
        }
    }

    #[test]
    fn parameter_order_is_enforced() {
        let p = CoolingParams {
            omega_xi: 2e6,
            omega_eta: 1e6,
            omega_c: 1e4,
            chi: 1e7,
            radius: 85e-9,
            inertia_x: 1e-31,
        };
        assert!(matches!(
            cooling_coefficients(&p),
            Err(Error::ParameterOrderViolation(_))
        ));
    }

    fn synthetic(m: &ModeFrequencies, ap: f64, dp: f64, am: f64, dm: f64, n: usize, dt: f64) -> Vec<SmallAngleState> {
        (0..n).map(|k| mode_state(1e-3 + k as f64 * dt, ap, dp, am, dm, m)).collect()
    }

    #[test]
    fn fit_recovers_pure_mode() {
        let p = SmallAngleParams {
            omega_xi_sq: 4e12,
            omega_eta_sq: 4e12,
            omega_c: 1e5,
        };
        let m = p.modes().unwrap();
        let data = synthetic(&m, 1e-3, 0.4, 0.0, 0.0, 800, 5e-8);
        let fit = fit_modes(&data, &m).unwrap();
        assert_relative_eq!(fit.a_plus, 1e-3, max_relative = 1e-10);
        assert!(fit.a_minus < 1e-13);
        assert_relative_eq!(fit.delta_plus, 0.4, epsilon = 1e-9);
    }

    #[test]
    fn fit_recovers_two_modes() {
        let p = SmallAngleParams {
            omega_xi_sq: 4e12 * (PI / 4.0).cos(),
            omega_eta_sq: 4e12 * (PI / 8.0).cos().powi(2),
            omega_c: 8e4,
        };
        let m = p.modes().unwrap();
        let data = synthetic(&m, 2e-3, -1.0, 7e-4, 2.5, 1000, 5e-8);
        let fit = fit_modes(&data, &m).unwrap();
        assert_relative_eq!(fit.a_plus, 2e-3, max_relative = 1e-8);
        assert_relative_eq!(fit.a_minus, 7e-4, max_relative = 1e-8);
        assert_relative_eq!(fit.delta_plus, -1.0, epsilon = 1e-8);
        assert_relative_eq!(fit.delta_minus, 2.5, epsilon = 1e-8);
        assert!(fit.relative_residual < 1e-10);
    }

    #[test]
    fn refined_fit_tracks_shifted_frequencies() {
        let p = SmallAngleParams {
            omega_xi_sq: 4e12 * (PI / 4.0).cos(),
            omega_eta_sq: 4e12 * (PI / 8.0).cos().powi(2),
            omega_c: 8e4,
        };
        let m = p.modes().unwrap();
        let shifted = ModeFrequencies {
            omega_plus: m.omega_plus * (1.0 - 3e-3),
            omega_minus: m.omega_minus * (1.0 - 2e-3),
            ..m
        };
        let data = synthetic(&shifted, 2e-3, -1.0, 2e-6, 2.5, 2000, 5e-8);
        assert!(fit_modes(&data, &m).is_err());
        let fit = fit_modes_refined(&data, &m, 0.01).unwrap();
        assert_relative_eq!(fit.omega_plus, shifted.omega_plus, max_relative = 1e-7);
        assert_relative_eq!(fit.a_plus, 2e-3, max_relative = 1e-5);
        assert_relative_eq!(fit.a_minus, 2e-6, max_relative = 1e-2);
        assert!(fit.amplitude_ratio() < 1.1e-3);
    }

    #[test]
    fn fit_rejects_short_window_and_bad_model() {
        let p = SmallAngleParams {
            omega_xi_sq: 4e12,
            omega_eta_sq: 4e12,
            omega_c: 1e5,
        };
        let m = p.modes().unwrap();
        let data = synthetic(&m, 1e-3, 0.0, 1e-3, 0.0, 100, 1e-8);
        assert!(matches!(fit_modes(&data, &m), Err(Error::FitDegenerate(_))));
        // data at the wrong frequencies
        let wrong = ModeFrequencies {
            omega_plus: m.omega_plus * 1.3,
            omega_minus: m.omega_minus * 0.7,
            ..m
        };
        let data = synthetic(&wrong, 1e-3, 0.0, 1e-3, 0.0, 2000, 5e-8);
        assert!(matches!(fit_modes(&data, &m), Err(Error::FitDegenerate(_))));
    }

    #[test]
    fn axial_displacement_values() {
        let p = ParticleParams::silica_default();
        let t = TrapParams::default_for(&p);
        let r = axial_displacement_ratio(&p, &t);
        assert_relative_eq!(r, 0.159, max_relative = 0.01);
        // force balance route
        let zd = axial_radiation_force(&p, &t) / axial_stiffness(&p, &t);
        assert_relative_eq!(zd / rayleigh_range(&t), r, max_relative = 1e-12);
        let mut small = p;
        small.radius = 1e-12;
        assert!(axial_displacement_ratio(&small, &t) < 1e-9);
        let wide = TrapParams::new(1550e-9, 0.5, 0.9, 0.0, Default::default(), &p).unwrap();
        assert_relative_eq!(axial_displacement_ratio(&p, &wide), r / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn small_angle_rhs_cases() {
        let p = SmallAngleParams {
            omega_xi_sq: 4.0,
            omega_eta_sq: 9.0,
            omega_c: 0.0,
        };
        assert_eq!(small_angle_rhs(&SmallAngleState::default(), &p, 1.0), [0.0; 4]);
        let s = SmallAngleState {
            xi: 1.0,
            eta: 2.0,
            xi_dot: 3.0,
            eta_dot: 4.0,
            t: 0.0,
        };
        assert_eq!(small_angle_rhs(&s, &p, 1.0), [3.0, 4.0, -4.0, -18.0]);
    }
}
