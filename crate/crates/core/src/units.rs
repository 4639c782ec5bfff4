//! Physical constants, atomic species data, and the internal unit system.
//!
//! All dynamics are computed in units of micrometers and milliseconds with
//! the reduced Planck constant equal to one. This keeps grid amplitudes and
//! timestep magnitudes O(1) instead of dragging 1e-34 factors through every
//! kinetic term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced Planck constant [J s], CODATA 2018.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant [J/K], CODATA 2018 (exact).
pub const K_B: f64 = 1.380_649e-23;
/// Newtonian constant of gravitation [m^3 kg^-1 s^-2], CODATA 2018.
pub const BIG_G: f64 = 6.674_30e-11;
/// Standard gravity [m/s^2].
pub const G_EARTH: f64 = 9.806_65;
/// Atomic mass unit [kg], CODATA 2018.
pub const AMU: f64 = 1.660_539_066_60e-27;
/// Speed of light [m/s] (exact).
pub const C_LIGHT: f64 = 299_792_458.0;

/// Internal base units: micrometer / millisecond, hbar = 1.
pub const LENGTH_UNIT: f64 = 1e-6; // m
pub const TIME_UNIT: f64 = 1e-3; // s
/// Energy unit follows from hbar * (1/time_unit).
pub const ENERGY_UNIT: f64 = HBAR / TIME_UNIT; // J
/// Mass unit follows from E = m L^2 / T^2.
pub const MASS_UNIT: f64 = ENERGY_UNIT * TIME_UNIT * TIME_UNIT / (LENGTH_UNIT * LENGTH_UNIT); // kg

/// An atomic species, identified by name and mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub name: String,
    /// Mass in kg.
    pub mass_kg: f64,
}

impl Species {
    pub fn new(name: impl Into<String>, mass_kg: f64) -> Result<Self> {
        if !mass_kg.is_finite() {
            return Err(Error::NonFinite("species mass"));
        }
        if mass_kg <= 0.0 {
            return Err(Error::invalid(format!("species mass must be > 0, got {mass_kg}")));
        }
        Ok(Species { name: name.into(), mass_kg })
    }

    /// Fermionic potassium-40 (mass number times amu).
    pub fn k40() -> Self {
        Species { name: "40K".into(), mass_kg: 40.0 * AMU }
    }

    /// Fermionic ytterbium-171.
    pub fn yb171() -> Self {
        Species { name: "171Yb".into(), mass_kg: 171.0 * AMU }
    }

    /// Mass in internal units.
    pub fn mass_internal(&self) -> f64 {
        self.mass_kg / MASS_UNIT
    }
}

/// The kind of physical quantity being converted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Length,
    Time,
    Energy,
    Mass,
}

fn unit_of(kind: Kind) -> f64 {
    match kind {
        Kind::Length => LENGTH_UNIT,
        Kind::Time => TIME_UNIT,
        Kind::Energy => ENERGY_UNIT,
        Kind::Mass => MASS_UNIT,
    }
}

/// SI -> internal.
pub fn to_internal(value: f64, kind: Kind) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::NonFinite("unit conversion input"));
    }
    Ok(value / unit_of(kind))
}

/// Internal -> SI.
pub fn from_internal(value: f64, kind: Kind) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::NonFinite("unit conversion input"));
    }
    Ok(value * unit_of(kind))
}

/// Convert a temperature-equivalent depth in microkelvin to internal energy.
pub fn uk_to_internal_energy(micro_kelvin: f64) -> f64 {
    K_B * micro_kelvin * 1e-6 / ENERGY_UNIT
}

/// Angular frequency of the tweezer laser for a given vacuum wavelength [m].
pub fn laser_angular_frequency(wavelength_m: f64) -> f64 {
    2.0 * std::f64::consts::PI * C_LIGHT / wavelength_m
}

/// Harmonic oscillation frequency of a Gaussian well of depth `depth` [J]
/// and waist `waist` [m]: omega0 = sqrt(4 V0 / (m sigma^2)).
///
/// The well -V0 exp(-2 x^2/sigma^2) expands to -V0 + (2 V0/sigma^2) x^2,
/// so m omega0^2 / 2 = 2 V0 / sigma^2.
pub fn trap_frequency(depth_j: f64, waist_m: f64, species: &Species) -> Result<f64> {
    if !(depth_j.is_finite() && waist_m.is_finite()) {
        return Err(Error::NonFinite("trap frequency input"));
    }
    if depth_j <= 0.0 || waist_m <= 0.0 {
        return Err(Error::invalid(format!(
            "trap_frequency requires positive depth and waist, got V0 = {depth_j}, sigma = {waist_m}"
        )));
    }
    Ok((4.0 * depth_j / (species.mass_kg * waist_m * waist_m)).sqrt())
}

/// Same as [`trap_frequency`] but in internal units throughout
/// (depth in internal energy, waist in internal length, returns rad per
/// internal time unit).
pub fn trap_frequency_internal(depth: f64, waist: f64, mass: f64) -> f64 {
    (4.0 * depth / (mass * waist * waist)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn length_conversion_is_unit_definition() {
        assert_abs_diff_eq!(to_internal(1.3e-6, Kind::Length).unwrap(), 1.3, epsilon = 1e-15);
        assert_abs_diff_eq!(to_internal(10.0, Kind::Time).unwrap(), 1.0e4, epsilon = 1e-9);
    }

    #[test]
    fn energy_round_trip() {
        // k_B * 116 uK for 40K
        let e_si = K_B * 116e-6;
        assert_relative_eq!(e_si, 1.601e-27, max_relative = 1e-3);
        let internal = to_internal(e_si, Kind::Energy).unwrap();
        let back = from_internal(internal, Kind::Energy).unwrap();
        assert_relative_eq!(back, e_si, max_relative = 1e-12);
    }

    #[test]
    fn round_trip_all_kinds() {
        for kind in [Kind::Length, Kind::Time, Kind::Energy, Kind::Mass] {
            let v = 3.71e-8;
            let back = from_internal(to_internal(v, kind).unwrap(), kind).unwrap();
            assert_relative_eq!(back, v, max_relative = 1e-12);
        }
    }

    #[test]
    fn non_finite_rejected() {
        assert!(to_internal(f64::NAN, Kind::Length).is_err());
        assert!(to_internal(f64::INFINITY, Kind::Energy).is_err());
    }

    #[test]
    fn hbar_is_one_internally() {
        // E = hbar * omega with omega in 1/time_unit must map to E_internal = omega_internal
        let omega_si = 2.39e5; // rad/s
        let e_si = HBAR * omega_si;
        let e_int = to_internal(e_si, Kind::Energy).unwrap();
        let omega_int = omega_si * TIME_UNIT;
        assert_relative_eq!(e_int, omega_int, max_relative = 1e-12);
    }

    #[test]
    fn trap_frequency_reference_value() {
        // V0 = k_B * 116 uK, sigma = 1.3 um, 40K -> about 2.39e5 rad/s
        let w = trap_frequency(K_B * 116e-6, 1.3e-6, &Species::k40()).unwrap();
        assert_relative_eq!(w, 2.39e5, max_relative = 5e-3);
    }

    #[test]
    fn trap_frequency_scaling() {
        let sp = Species::k40();
        let w = trap_frequency(K_B * 116e-6, 1.3e-6, &sp).unwrap();
        let w4 = trap_frequency(4.0 * K_B * 116e-6, 1.3e-6, &sp).unwrap();
        assert_relative_eq!(w4, 2.0 * w, max_relative = 1e-12);
        let w_wide = trap_frequency(K_B * 116e-6, 2.6e-6, &sp).unwrap();
        assert_relative_eq!(w_wide, 0.5 * w, max_relative = 1e-12);
        // homogeneity: depth * s^2, waist * s leaves omega0 unchanged
        let s = 1.7;
        let w_h = trap_frequency(s * s * K_B * 116e-6, s * 1.3e-6, &sp).unwrap();
        assert_relative_eq!(w_h, w, max_relative = 1e-12);
    }

    #[test]
    fn trap_frequency_rejects_nonpositive() {
        let sp = Species::k40();
        assert!(trap_frequency(-1e-27, 1.3e-6, &sp).is_err());
        assert!(trap_frequency(1e-27, 0.0, &sp).is_err());
    }

    #[test]
    fn yb_over_k_mass_ratio() {
        let r = Species::yb171().mass_kg / Species::k40().mass_kg;
        assert_relative_eq!(r, 4.275, max_relative = 1e-12);
    }

    #[test]
    fn internal_trap_frequency_consistent_with_si() {
        let sp = Species::k40();
        let w_si = trap_frequency(K_B * 116e-6, 1.3e-6, &sp).unwrap();
        let w_int = trap_frequency_internal(uk_to_internal_energy(116.0), 1.3, sp.mass_internal());
        assert_relative_eq!(w_int / TIME_UNIT, w_si, max_relative = 1e-12);
    }
}
