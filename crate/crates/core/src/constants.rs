//! Physical constants (SI, CODATA 2018 exact values where defined).

pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const REDUCED_PLANCK: f64 = 1.054_571_817e-34;
pub const PASCAL_PER_TORR: f64 = 101_325.0 / 760.0;
/// Mass of an N2 molecule, used for the mean thermal speed of the background gas.
pub const NITROGEN_MOLECULE_MASS: f64 = 4.652e-26;
