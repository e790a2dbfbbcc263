//! Unit helpers. The simulator works in ns and rad/ns throughout.

use core::f64::consts::PI;

/// Angular frequency in rad/ns of a cyclic frequency given in MHz.
pub fn mhz(f_mhz: f64) -> f64 {
    2.0 * PI * f_mhz * 1e-3
}

/// Angular frequency in rad/ns of a cyclic frequency given in GHz.
pub fn ghz(f_ghz: f64) -> f64 {
    2.0 * PI * f_ghz
}

/// Inverse of [`mhz`].
pub fn to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e-3)
}
