//! Rigid-body model of the nanodumbbell: parameters, rotations, energies and
//! the full (non-linearized) Euler-angle equations of motion.
//!
//! Angles follow the z-y'-z'' convention: `alpha` about the lab z axis, `beta`
//! about the intermediate y' axis and `gamma` about the body symmetry axis.
//! The trapping field points along lab x (linear polarization) or is the
//! elliptical field `E0 (cos θ, i sin θ, 0)`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::constants::{BOLTZMANN, SPEED_OF_LIGHT, VACUUM_PERMITTIVITY};
use crate::error::{Error, Result};

/// Trajectories with `|sin β|` at or below this value are treated as escaped.
pub const BETA_GUARD: f64 = 1e-6;

/// Aspect ratio of the prolate spheroid standing in for the dumbbell.
pub const DUMBBELL_ASPECT_RATIO: f64 = 2.0;

pub type Matrix3 = [[f64; 3]; 3];

/// Geometry, inertia and polarizability of a dumbbell of two touching spheres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleParams {
    /// Sphere radius (m).
    pub radius: f64,
    /// Mass of one sphere (kg).
    pub sphere_mass: f64,
    pub refractive_index: f64,
    /// Material density (kg/m^3).
    pub density: f64,
    /// Moment of inertia about a transverse axis (kg m^2).
    pub inertia_x: f64,
    /// Moment of inertia about the symmetry axis (kg m^2).
    pub inertia_z: f64,
    /// Transverse polarizability (C m^2 / V).
    pub polarizability_x: f64,
    /// Axial polarizability (C m^2 / V).
    pub polarizability_z: f64,
    /// Dimensionless isotropic polarizability, `alpha_0 = 4 pi eps0 R^3 alpha_bar`.
    pub alpha_bar: f64,
}

impl ParticleParams {
    /// Builds the parameters from sphere geometry. Inertia follows from two
    /// touching spheres; polarizabilities from the prolate-spheroid model.
    pub fn from_geometry(
        radius: f64,
        sphere_mass: f64,
        refractive_index: f64,
        density: f64,
        alpha_bar: f64,
    ) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::validation("particle.radius", "must be positive"));
        }
        if !(sphere_mass > 0.0) {
            return Err(Error::validation("particle.sphere_mass", "must be positive"));
        }
        let mr2 = sphere_mass * radius * radius;
        let mut params = ParticleParams {
            radius,
            sphere_mass,
            refractive_index,
            density,
            inertia_x: 14.0 / 5.0 * mr2,
            inertia_z: 4.0 / 5.0 * mr2,
            polarizability_x: 0.0,
            polarizability_z: 0.0,
            alpha_bar,
        };
        let (ax, az) = ellipsoid_polarizabilities(&params)?;
        params.polarizability_x = ax;
        params.polarizability_z = az;
        params.validate()?;
        Ok(params)
    }

    /// 85 nm amorphous silica dumbbell, total mass 1.029e-17 kg.
    pub fn silica_default() -> Self {
        Self::from_geometry(85e-9, 1.029e-17 / 2.0, 1.458, 2000.0, 0.59)
            .expect("default particle parameters are valid")
    }

    /// Replaces the model polarizabilities with explicit values.
    pub fn with_polarizabilities(mut self, alpha_x: f64, alpha_z: f64) -> Result<Self> {
        self.polarizability_x = alpha_x;
        self.polarizability_z = alpha_z;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inertia_x > self.inertia_z && self.inertia_z > 0.0) {
            return Err(Error::validation(
                "particle",
                format!(
                    "need I_x > I_z > 0, got I_x = {:e}, I_z = {:e}",
                    self.inertia_x, self.inertia_z
                ),
            ));
        }
        if !(self.polarizability_z > self.polarizability_x && self.polarizability_x > 0.0) {
            return Err(Error::validation(
                "particle",
                format!(
                    "need alpha_z > alpha_x > 0, got alpha_x = {:e}, alpha_z = {:e}",
                    self.polarizability_x, self.polarizability_z
                ),
            ));
        }
        Ok(())
    }

    /// `alpha_z - alpha_x`.
    pub fn anisotropy(&self) -> f64 {
        self.polarizability_z - self.polarizability_x
    }

    /// `I_z / I_x`, exactly 2/7 for the geometric dumbbell.
    pub fn inertia_ratio(&self) -> f64 {
        self.inertia_z / self.inertia_x
    }

    /// Volume of the two spheres.
    pub fn volume(&self) -> f64 {
        2.0 * 4.0 / 3.0 * PI * self.radius.powi(3)
    }
}

/// Depolarization factors `(L_x, L_z)` of a prolate spheroid with the given
/// long/short axis ratio; `2 L_x + L_z = 1`.
pub fn depolarization_factors(aspect_ratio: f64) -> (f64, f64) {
    assert!(aspect_ratio >= 1.0, "prolate spheroid needs aspect ratio >= 1");
    let e2 = 1.0 - 1.0 / (aspect_ratio * aspect_ratio);
    let lz = if e2 < 1e-8 {
        // series about the sphere
        1.0 / 3.0 - 2.0 / 15.0 * e2
    } else {
        let e = e2.sqrt();
        (1.0 - e2) / e2 * (e.atanh() / e - 1.0)
    };
    ((1.0 - lz) / 2.0, lz)
}

/// Polarizabilities `(alpha_x, alpha_z)` of a dielectric prolate spheroid
/// with the dumbbell's volume and aspect ratio 2.
pub fn ellipsoid_polarizabilities(particle: &ParticleParams) -> Result<(f64, f64)> {
    let n = particle.refractive_index;
    if !(n > 1.0) {
        return Err(Error::InvalidMaterial(format!(
            "refractive index must exceed 1, got {n}"
        )));
    }
    if !(particle.radius > 0.0) {
        return Err(Error::InvalidMaterial("radius must be positive".into()));
    }
    Ok(spheroid_polarizabilities(
        n * n,
        particle.volume(),
        DUMBBELL_ASPECT_RATIO,
    ))
}

/// `alpha_j = eps0 V (eps_r - 1) / (1 + L_j (eps_r - 1))`.
pub fn spheroid_polarizabilities(eps_r: f64, volume: f64, aspect_ratio: f64) -> (f64, f64) {
    let (lx, lz) = depolarization_factors(aspect_ratio);
    let chi = eps_r - 1.0;
    let alpha = |l: f64| VACUUM_PERMITTIVITY * volume * chi / (1.0 + l * chi);
    (alpha(lx), alpha(lz))
}

/// Field amplitude at the focus of a Gaussian beam with waist `lambda/(pi NA)`.
pub fn field_amplitude(wavelength: f64, power: f64, numerical_aperture: f64) -> f64 {
    let waist = wavelength / (PI * numerical_aperture);
    (4.0 * power / (PI * waist * waist * SPEED_OF_LIGHT * VACUUM_PERMITTIVITY)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyUnit {
    #[default]
    RadPerS,
    Hz,
}

impl FrequencyUnit {
    pub fn to_angular(self, value: f64) -> f64 {
        match self {
            FrequencyUnit::RadPerS => value,
            FrequencyUnit::Hz => 2.0 * PI * value,
        }
    }
}

/// How the trap field amplitude is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// Choose `E0` so the librational frequency equals `omega`.
    Calibrated {
        omega: f64,
        #[serde(default)]
        unit: FrequencyUnit,
    },
    /// Focused Gaussian beam from power and numerical aperture.
    Beam,
    /// Explicit field amplitude (V/m).
    Direct { e0: f64 },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Calibrated {
            omega: 2.19e6,
            unit: FrequencyUnit::RadPerS,
        }
    }
}

/// Laser and derived trap quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapParams {
    pub wavelength: f64,
    pub power: f64,
    pub numerical_aperture: f64,
    /// Ellipticity angle, `0 <= theta < pi/4`.
    pub theta: f64,
    /// Field amplitude (V/m).
    pub e0: f64,
    /// `omega^2 = (alpha_z - alpha_x) E0^2 / (2 I_x)`.
    pub omega_sq: f64,
    pub omega_xi_sq: f64,
    pub omega_eta_sq: f64,
    cos_sq_theta: f64,
    sin_sq_theta: f64,
}

impl TrapParams {
    pub fn new(
        wavelength: f64,
        power: f64,
        numerical_aperture: f64,
        theta: f64,
        field: FieldSpec,
        particle: &ParticleParams,
    ) -> Result<Self> {
        if !(0.0..FRAC_PI_4).contains(&theta) {
            return Err(Error::validation(
                "trap.theta",
                format!("must satisfy 0 <= theta < pi/4 (omega_xi^2 > 0), got {theta}"),
            ));
        }
        if !(wavelength > 0.0) {
            return Err(Error::validation("trap.wavelength", "must be positive"));
        }
        if !(numerical_aperture > 0.0 && numerical_aperture < 1.0) {
            return Err(Error::validation("trap.numerical_aperture", "must lie in (0, 1)"));
        }
        let e0 = match field {
            FieldSpec::Beam => {
                if !(power > 0.0) {
                    return Err(Error::validation("trap.power", "must be positive"));
                }
                field_amplitude(wavelength, power, numerical_aperture)
            }
            FieldSpec::Direct { e0 } => e0,
            FieldSpec::Calibrated { omega, unit } => {
                let w = unit.to_angular(omega);
                if !(w > 0.0) {
                    return Err(Error::validation("trap.field.omega", "must be positive"));
                }
                (2.0 * particle.inertia_x * w * w / particle.anisotropy()).sqrt()
            }
        };
        if !(e0 > 0.0 && e0.is_finite()) {
            return Err(Error::validation("trap.field", "field amplitude must be positive"));
        }
        let omega_sq = particle.anisotropy() * e0 * e0 / (2.0 * particle.inertia_x);
        let (s, c) = theta.sin_cos();
        Ok(TrapParams {
            wavelength,
            power,
            numerical_aperture,
            theta,
            e0,
            omega_sq,
            omega_xi_sq: omega_sq * (c * c - s * s),
            omega_eta_sq: omega_sq * c * c,
            cos_sq_theta: c * c,
            sin_sq_theta: s * s,
        })
    }

    /// 1550 nm, 500 mW, NA 0.45, linear polarization, calibrated to
    /// omega = 2.19e6 rad/s.
    pub fn default_for(particle: &ParticleParams) -> Self {
        Self::new(1550e-9, 0.5, 0.45, 0.0, FieldSpec::default(), particle)
            .expect("default trap parameters are valid")
    }

    /// Same laser, different ellipticity; the field amplitude is kept.
    pub fn with_theta(&self, theta: f64, particle: &ParticleParams) -> Result<Self> {
        Self::new(
            self.wavelength,
            self.power,
            self.numerical_aperture,
            theta,
            FieldSpec::Direct { e0: self.e0 },
            particle,
        )
    }

    pub fn omega(&self) -> f64 {
        self.omega_sq.sqrt()
    }
    pub fn omega_xi(&self) -> f64 {
        self.omega_xi_sq.sqrt()
    }
    pub fn omega_eta(&self) -> f64 {
        self.omega_eta_sq.sqrt()
    }
    pub fn is_linear(&self) -> bool {
        self.theta == 0.0
    }
}

/// Orientation and rates of the dumbbell. `omega3` is the body-frame spin
/// about the symmetry axis, conserved by the deterministic dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerState {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub alpha_dot: f64,
    pub beta_dot: f64,
    pub omega3: f64,
    pub t: f64,
}

impl EulerState {
    /// Resting at the potential minimum with the given spin.
    pub fn at_rest(omega3: f64) -> Self {
        EulerState {
            beta: FRAC_PI_2,
            omega3,
            ..Default::default()
        }
    }

    /// Integrator vector `(alpha, beta, gamma, alpha_dot, beta_dot, omega3)`.
    pub fn to_vector(&self) -> [f64; 6] {
        [
            self.alpha,
            self.beta,
            self.gamma,
            self.alpha_dot,
            self.beta_dot,
            self.omega3,
        ]
    }

    pub fn from_vector(t: f64, y: &[f64; 6]) -> Self {
        EulerState {
            alpha: y[0],
            beta: y[1],
            gamma: y[2],
            alpha_dot: y[3],
            beta_dot: y[4],
            omega3: y[5],
            t,
        }
    }

    /// `gamma_dot = omega3 - alpha_dot cos(beta)`.
    pub fn gamma_dot(&self) -> f64 {
        self.omega3 - self.alpha_dot * self.beta.cos()
    }
}

/// Small-angle coordinates of the long-axis tip around the field axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SmallAngleState {
    pub xi: f64,
    pub eta: f64,
    pub xi_dot: f64,
    pub eta_dot: f64,
    pub t: f64,
}

/// Default validity bound on `max(|xi|, |eta|)` for small-angle treatment.
pub const SMALL_ANGLE_THRESHOLD: f64 = 0.3;

impl SmallAngleState {
    /// `xi` = deviation of `alpha` from the nearer of {0, pi},
    /// `eta = pi/2 - beta`.
    pub fn from_euler(s: &EulerState) -> Self {
        SmallAngleState {
            xi: fold_alpha(s.alpha),
            eta: FRAC_PI_2 - s.beta,
            xi_dot: s.alpha_dot,
            eta_dot: -s.beta_dot,
            t: s.t,
        }
    }

    /// Lab-frame y and z projections of the long axis (`Y/2R`, `Z/2R`),
    /// folded onto the `+x` well. They coincide with `from_euler` to first
    /// order and trace exact circles for steady precession about the field.
    pub fn from_euler_tip(s: &EulerState) -> Self {
        let (sa, ca) = s.alpha.sin_cos();
        let (sb, cb) = s.beta.sin_cos();
        let sign = if ca < 0.0 { -1.0 } else { 1.0 };
        SmallAngleState {
            xi: sign * sb * sa,
            eta: cb,
            xi_dot: sign * (cb * sa * s.beta_dot + sb * ca * s.alpha_dot),
            eta_dot: -sb * s.beta_dot,
            t: s.t,
        }
    }

    pub fn max_angle(&self) -> f64 {
        self.xi.abs().max(self.eta.abs())
    }

    pub fn is_small(&self, threshold: f64) -> bool {
        self.max_angle() < threshold
    }
}

/// Maps `alpha` into `(-pi/2, pi/2]` modulo pi.
pub fn fold_alpha(alpha: f64) -> f64 {
    let mut x = alpha.rem_euclid(PI);
    if x > FRAC_PI_2 {
        x -= PI;
    }
    x
}

/// Lab-to-body rotation `R = R_z''(gamma) R_y'(beta) R_z(alpha)`.
pub fn rotation_matrix(alpha: f64, beta: f64, gamma: f64) -> Matrix3 {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    let rz = [[ca, sa, 0.0], [-sa, ca, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cb, 0.0, -sb], [0.0, 1.0, 0.0], [sb, 0.0, cb]];
    let rzz = [[cg, sg, 0.0], [-sg, cg, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rzz, &mat_mul(&ry, &rz))
}

pub(crate) fn mat_mul(a: &Matrix3, b: &Matrix3) -> Matrix3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Unit vector along the body symmetry axis, in lab coordinates.
pub fn tip_direction(alpha: f64, beta: f64) -> [f64; 3] {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    [sb * ca, sb * sa, cb]
}

/// Body-frame angular velocity `(omega1, omega2, omega3)`.
pub fn body_angular_velocity(s: &EulerState) -> [f64; 3] {
    let (sg, cg) = s.gamma.sin_cos();
    let sb = s.beta.sin();
    [
        s.beta_dot * sg - s.alpha_dot * sb * cg,
        s.beta_dot * cg + s.alpha_dot * sb * sg,
        s.omega3,
    ]
}

/// Inverse of [`body_angular_velocity`]: `(alpha_dot, beta_dot)` from body
/// rates at the given orientation.
pub fn euler_rates_from_body(beta: f64, gamma: f64, omega: [f64; 3]) -> (f64, f64) {
    let (sg, cg) = gamma.sin_cos();
    let beta_dot = omega[0] * sg + omega[1] * cg;
    let alpha_dot = (omega[1] * sg - omega[0] * cg) / beta.sin();
    (alpha_dot, beta_dot)
}

/// `U(alpha, beta)` including the constant `-(E0^2/4) alpha_x`.
pub fn potential_at(alpha: f64, beta: f64, trap: &TrapParams, particle: &ParticleParams) -> f64 {
    let (sa, ca) = alpha.sin_cos();
    let sb = beta.sin();
    let angular = sb * sb * (trap.cos_sq_theta * ca * ca + trap.sin_sq_theta * sa * sa);
    -0.25 * trap.e0 * trap.e0 * (particle.polarizability_x + particle.anisotropy() * angular)
}

pub fn potential_energy(s: &EulerState, trap: &TrapParams, particle: &ParticleParams) -> f64 {
    potential_at(s.alpha, s.beta, trap, particle)
}

/// `U(0, pi/2)`, the global minimum for `0 <= theta < pi/4`.
pub fn potential_minimum(trap: &TrapParams, particle: &ParticleParams) -> f64 {
    potential_at(0.0, FRAC_PI_2, trap, particle)
}

/// Analytic `(dU/dalpha, dU/dbeta)`.
pub fn potential_gradient(
    alpha: f64,
    beta: f64,
    trap: &TrapParams,
    particle: &ParticleParams,
) -> (f64, f64) {
    let scale = 0.25 * trap.e0 * trap.e0 * particle.anisotropy();
    let (s2a, c2a) = (2.0 * alpha).sin_cos();
    let sb = beta.sin();
    let cos_2theta = trap.cos_sq_theta - trap.sin_sq_theta;
    let angular = 0.5 * (1.0 + cos_2theta * c2a);
    (
        scale * sb * sb * cos_2theta * s2a,
        -scale * (2.0 * beta).sin() * angular,
    )
}

pub fn kinetic_energy(s: &EulerState, particle: &ParticleParams) -> f64 {
    let sb = s.beta.sin();
    let transverse = s.beta_dot * s.beta_dot + s.alpha_dot * s.alpha_dot * sb * sb;
    0.5 * particle.inertia_x * transverse + 0.5 * particle.inertia_z * s.omega3 * s.omega3
}

pub fn total_energy(s: &EulerState, trap: &TrapParams, particle: &ParticleParams) -> f64 {
    kinetic_energy(s, particle) + potential_energy(s, trap, particle)
}

/// Energy of the four librational degrees of freedom, in kelvin: total
/// energy minus the potential minimum and the spin energy.
pub fn shifted_energy_kelvin(s: &EulerState, trap: &TrapParams, particle: &ParticleParams) -> f64 {
    let sb = s.beta.sin();
    let transverse = s.beta_dot * s.beta_dot + s.alpha_dot * s.alpha_dot * sb * sb;
    let kin = 0.5 * particle.inertia_x * transverse;
    // U - U_min evaluated without cancellation against the constant terms.
    let (sa, ca) = s.alpha.sin_cos();
    let deficit =
        trap.cos_sq_theta * (1.0 - sb * sb * ca * ca) - trap.sin_sq_theta * sb * sb * sa * sa;
    let pot = 0.25 * trap.e0 * trap.e0 * particle.anisotropy() * deficit;
    (kin + pot) / BOLTZMANN
}

/// Lab-frame induced dipole (anisotropic part) for the linear field
/// `E0 x`: `(alpha_z - alpha_x) E0 (n . x) n` with `n` the long axis.
pub fn polarization_vector(s: &EulerState, trap: &TrapParams, particle: &ParticleParams) -> [f64; 3] {
    let n = tip_direction(s.alpha, s.beta);
    let scale = particle.anisotropy() * trap.e0 * n[0];
    [scale * n[0], scale * n[1], scale * n[2]]
}

/// Lab-frame angular momentum `R^T I omega_body`.
pub fn lab_angular_momentum(s: &EulerState, particle: &ParticleParams) -> [f64; 3] {
    let w = body_angular_velocity(s);
    let lb = [
        particle.inertia_x * w[0],
        particle.inertia_x * w[1],
        particle.inertia_z * w[2],
    ];
    let r = rotation_matrix(s.alpha, s.beta, s.gamma);
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..3).map(|k| r[k][i] * lb[k]).sum();
    }
    out
}

/// Time derivative of `(alpha, beta, gamma, alpha_dot, beta_dot)` with the
/// potential scaled by `modulation`.
pub fn eom_rhs(
    s: &EulerState,
    trap: &TrapParams,
    particle: &ParticleParams,
    modulation: f64,
) -> Result<[f64; 5]> {
    let (sb, cb) = s.beta.sin_cos();
    if sb.abs() <= BETA_GUARD {
        return Err(Error::SingularityGuard {
            t: s.t,
            sin_beta: sb.abs(),
        });
    }
    let (du_da, du_db) = potential_gradient(s.alpha, s.beta, trap, particle);
    let ix = particle.inertia_x;
    let wc = particle.inertia_ratio() * s.omega3;
    let (ad, bd) = (s.alpha_dot, s.beta_dot);
    let alpha_dd = -2.0 * ad * bd * cb / sb + bd * wc / sb - modulation * du_da / (ix * sb * sb);
    let beta_dd = sb * (ad * ad * cb - ad * wc) - modulation * du_db / ix;
    Ok([ad, bd, s.omega3 - ad * cb, alpha_dd, beta_dd])
}

/// Thermal-RMS coupling frequency `sqrt(k_B T I_z) / I_x`.
pub fn thermal_coupling_frequency(particle: &ParticleParams, temperature: f64) -> f64 {
    (BOLTZMANN * temperature * particle.inertia_z).sqrt() / particle.inertia_x
}
