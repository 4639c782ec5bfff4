//! Sensitivity and application calculators: gravimetric phase, comparison
//! with a free-fall Raman interferometer, the Casimir-Polder phase map, and
//! the cut-sphere big-G measurement.
//!
//! These are closed-form or quadrature-based estimators layered on the
//! potential stack; the Monte Carlo phase uncertainties they consume come
//! from the campaign module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{cut_sphere_potential, CutSphere};
use crate::units::{Species, HBAR};

/// Gravimetry configuration: arms separated by `h` held for `t` under
/// acceleration `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCase {
    pub species: Species,
    /// Arm separation [m].
    pub h: f64,
    /// Hold duration [s].
    pub t: f64,
    /// Acceleration along the separation axis [m/s^2].
    pub a: f64,
}

impl SensitivityCase {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.t > 0.0) {
            return Err(Error::invalid(format!(
                "sensitivity case requires h > 0 and t > 0, got h = {}, t = {}",
                self.h, self.t
            )));
        }
        if !self.a.is_finite() {
            return Err(Error::NonFinite("acceleration"));
        }
        Ok(())
    }
}

/// Differential phase m h a T / hbar [rad] accumulated between two arms at
/// rest separated by h in a linear potential.
pub fn gravity_phase(case: &SensitivityCase) -> Result<f64> {
    case.validate()?;
    Ok(case.species.mass_kg * case.h * case.a * case.t / HBAR)
}

/// Phase k_eff a T^2 [rad] of a free-fall Raman interferometer with
/// effective wavevector `k_eff` [1/m], the conventional benchmark.
pub fn kc_phase(k_eff: f64, a: f64, t: f64) -> Result<f64> {
    if !(k_eff > 0.0 && t > 0.0) {
        return Err(Error::invalid(format!(
            "kc_phase requires k_eff > 0 and t > 0, got k_eff = {k_eff}, t = {t}"
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("acceleration"));
    }
    Ok(k_eff * a * t * t)
}

/// Casimir-Polder mapping configuration. One arm probes the surface at
/// distance z, the reference arm sits far away at `z_reference`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpCase {
    /// Retarded CP coefficient [J m^4].
    pub c4: f64,
    /// Reference arm distance from the surface [m].
    pub z_reference: f64,
    /// Hold duration [s].
    pub t: f64,
}

/// Validity domain of the retarded -C4/z^4 form probed here [m]. Below
/// ~1 um the transition to the van der Waals regime matters; beyond 20 um
/// the phase is too small to map.
pub const CP_Z_MIN: f64 = 1e-6;
pub const CP_Z_MAX: f64 = 20e-6;

impl CpCase {
    pub fn validate(&self) -> Result<()> {
        if !(self.c4 > 0.0) {
            return Err(Error::invalid(format!("C4 must be > 0, got {}", self.c4)));
        }
        if !(self.t > 0.0) {
            return Err(Error::invalid(format!("hold duration must be > 0, got {}", self.t)));
        }
        if !(self.z_reference >= 2.0 * CP_Z_MAX) {
            return Err(Error::invalid(format!(
                "reference arm at {} m is not far from the mapped region (needs >= {} m)",
                self.z_reference,
                2.0 * CP_Z_MAX
            )));
        }
        Ok(())
    }

    /// Differential phase between the reference arm and an arm at `z` [m]:
    /// [U_CP(z_ref) - U_CP(z)] T / hbar = C4 T / hbar (1/z^4 - 1/z_ref^4).
    pub fn phase_at(&self, z: f64) -> Result<f64> {
        self.validate()?;
        if !(CP_Z_MIN..=CP_Z_MAX).contains(&z) {
            return Err(Error::invalid(format!(
                "z = {z} m outside the CP validity domain [{CP_Z_MIN}, {CP_Z_MAX}]"
            )));
        }
        Ok(self.c4 * self.t / HBAR * (z.powi(-4) - self.z_reference.powi(-4)))
    }
}

/// One point of the CP phase map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpPoint {
    /// Arm-surface distance [m].
    pub z: f64,
    /// Differential phase [rad].
    pub phase: f64,
    /// sigma_phase / phase for the supplied measurement uncertainty.
    pub relative_accuracy: f64,
}

/// CP phases and relative accuracies over a z grid, with `sigma_phase` the
/// per-measurement phase uncertainty [rad] of the chosen campaign scenario.
pub fn cp_phase_map(case: &CpCase, zs: &[f64], sigma_phase: f64) -> Result<Vec<CpPoint>> {
    if !(sigma_phase >= 0.0) {
        return Err(Error::invalid(format!("sigma_phase must be >= 0, got {sigma_phase}")));
    }
    zs.iter()
        .map(|&z| {
            let phase = case.phase_at(z)?;
            Ok(CpPoint { z, phase, relative_accuracy: sigma_phase / phase })
        })
        .collect()
}

/// Big-G measurement configuration: a cut-sphere source mass probed by two
/// arms on the measurement side of its axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigGCase {
    pub geometry: CutSphere,
    /// Source mass [kg]; the density follows from mass and geometry.
    pub mass: f64,
    /// Arm distances from the declared reference point, along the axis [m].
    pub arms: Vec<f64>,
    /// Offset of the arm coordinates from the sector apex along the
    /// measurement axis [m]: an arm at distance `a` sits at
    /// `a + reference_offset` from the apex. Same convention as the
    /// `ref_offset` of the source-mass external potential.
    pub reference_offset: f64,
    pub species: Species,
    /// Hold duration [s].
    pub t: f64,
}

impl BigGCase {
    /// Reference configuration: 253 kg tungsten sphere of radius 20 cm cut
    /// at 141 degrees, arms 1 mm and 50 mm out, 40K held for 10 s.
    pub fn reference() -> Self {
        BigGCase {
            geometry: CutSphere::new(0.2, 141.0),
            mass: 253.0,
            arms: vec![1e-3, 50e-3],
            reference_offset: -0.9e-3,
            species: Species::k40(),
            t: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if !(self.mass > 0.0) {
            return Err(Error::invalid(format!("source mass must be > 0, got {}", self.mass)));
        }
        if !(self.t > 0.0) {
            return Err(Error::invalid(format!("hold duration must be > 0, got {}", self.t)));
        }
        if self.arms.len() < 2 {
            return Err(Error::invalid("big-G needs at least two arm positions".to_string()));
        }
        Ok(())
    }

    /// Density implied by the mass and the cut-sphere volume [kg/m^3].
    pub fn density(&self) -> f64 {
        self.mass / self.geometry.volume()
    }
}

/// Big-G phases and accuracy estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigGReport {
    /// Phase per arm [rad], same order as the case's arms.
    pub phases: Vec<f64>,
    /// Differential phase between the first two arms [rad].
    pub phase_difference: f64,
    /// sigma_phase / phase_difference: the relative G accuracy reachable
    /// with the supplied per-measurement uncertainty.
    pub delta_g_over_g: f64,
    /// Density implied by mass and geometry [kg/m^3].
    pub density: f64,
    /// Duration-sweep metadata: the fringe is scanned by varying the hold
    /// around `t` within +-`duration_scan_half_width` [s].
    pub duration_scan_half_width: f64,
}

/// Per-arm gravitational phases m |U| T / hbar of the cut-sphere source and
/// the G accuracy for a given phase uncertainty `sigma_phase` [rad].
pub fn big_g_phases(case: &BigGCase, sigma_phase: f64) -> Result<BigGReport> {
    case.validate()?;
    if !(sigma_phase >= 0.0) {
        return Err(Error::invalid(format!("sigma_phase must be >= 0, got {sigma_phase}")));
    }
    let density = case.density();
    let mut phases = Vec::with_capacity(case.arms.len());
    for &arm in &case.arms {
        let point = case.geometry.axis_point(arm + case.reference_offset);
        let u = cut_sphere_potential(&case.geometry, density, point)?;
        phases.push(case.species.mass_kg * u.abs() * case.t / HBAR);
    }
    let phase_difference = (phases[0] - phases[1]).abs();
    Ok(BigGReport {
        delta_g_over_g: sigma_phase / phase_difference,
        phase_difference,
        phases,
        density,
        duration_scan_half_width: 20e-3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{BIG_G, G_EARTH};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn reference_sensitivity() -> SensitivityCase {
        SensitivityCase { species: Species::k40(), h: 10e-3, t: 10.0, a: G_EARTH }
    }

    #[test]
    fn gravity_phase_anchor() {
        // 40K, h = 10 mm, T = 10 s, a = g -> ~6.2e8 rad
        let phi = gravity_phase(&reference_sensitivity()).unwrap();
        assert_relative_eq!(phi, 6.2e8, max_relative = 0.01);
    }

    #[test]
    fn gravity_phase_long_hold_anchor() {
        // h = 50 mm, T = 60 s -> ~2e10 rad
        let mut case = reference_sensitivity();
        case.h = 50e-3;
        case.t = 60.0;
        let phi = gravity_phase(&case).unwrap();
        assert_relative_eq!(phi, 2e10, max_relative = 0.1);
    }

    #[test]
    fn gravity_phase_linearity() {
        let base = gravity_phase(&reference_sensitivity()).unwrap();
        for scale in [2.0, 5.0] {
            let mut c = reference_sensitivity();
            c.h *= scale;
            assert_relative_eq!(gravity_phase(&c).unwrap(), scale * base, max_relative = 1e-12);
            let mut c = reference_sensitivity();
            c.t *= scale;
            assert_relative_eq!(gravity_phase(&c).unwrap(), scale * base, max_relative = 1e-12);
            let mut c = reference_sensitivity();
            c.a *= scale;
            assert_relative_eq!(gravity_phase(&c).unwrap(), scale * base, max_relative = 1e-12);
        }
        let mut c = reference_sensitivity();
        c.a = 0.0;
        assert_eq!(gravity_phase(&c).unwrap(), 0.0);
    }

    #[test]
    fn kc_phase_anchor() {
        // k_eff = 4 pi / 780 nm, T = 1 s, a = g -> ~1.6e8 rad
        let k_eff = 4.0 * std::f64::consts::PI / 780e-9;
        let phi = kc_phase(k_eff, G_EARTH, 1.0).unwrap();
        assert_relative_eq!(phi, 1.6e8, max_relative = 0.03);
        // quadratic in T, zero at a = 0
        assert_relative_eq!(kc_phase(k_eff, G_EARTH, 2.0).unwrap(), 4.0 * phi, max_relative = 1e-12);
        assert_eq!(kc_phase(k_eff, 0.0, 1.0).unwrap(), 0.0);
        assert!(kc_phase(-1.0, G_EARTH, 1.0).is_err());
    }

    fn reference_cp() -> CpCase {
        CpCase { c4: 1.64e-55, z_reference: 100e-6, t: 10.0 }
    }

    #[test]
    fn cp_phase_anchor_at_5um() {
        // C4 T / (hbar z^4) at z = 5 um -> ~24.9 rad; scenario-2 sigma of
        // 34 mrad -> relative accuracy ~0.0014
        let map = cp_phase_map(&reference_cp(), &[5e-6], 0.034).unwrap();
        assert_relative_eq!(map[0].phase, 24.9, max_relative = 0.02);
        assert_relative_eq!(map[0].relative_accuracy, 0.0014, max_relative = 0.05);
    }

    #[test]
    fn cp_inverse_quartic_law() {
        let case = reference_cp();
        let map = cp_phase_map(&case, &[2.5e-6, 5e-6, 10e-6], 0.0).unwrap();
        assert_relative_eq!(map[0].phase / map[1].phase, 16.0, max_relative = 1e-3);
        assert_relative_eq!(map[1].phase / map[2].phase, 16.0, max_relative = 1e-3);
        // log-log slope over [2, 20] um
        let zs: Vec<f64> = (0..20).map(|i| 2e-6 + 18e-6 * i as f64 / 19.0).collect();
        let pts = cp_phase_map(&case, &zs, 0.0).unwrap();
        let slope = {
            let xs: Vec<f64> = pts.iter().map(|p| p.z.ln()).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.phase.ln()).collect();
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
            sxy / sxx
        };
        assert_abs_diff_eq!(slope, -4.0, epsilon = 0.01);
    }

    #[test]
    fn cp_reference_arm_far_enough() {
        // 100 um vs infinite reference differ by (5/100)^4 ~ 6e-6 relative
        let far = CpCase { z_reference: 1.0, ..reference_cp() };
        let a = reference_cp().phase_at(5e-6).unwrap();
        let b = far.phase_at(5e-6).unwrap();
        assert!((a / b - 1.0).abs() < 1e-5);
    }

    #[test]
    fn cp_domain_enforced() {
        let case = reference_cp();
        assert!(case.phase_at(0.5e-6).is_err());
        assert!(case.phase_at(25e-6).is_err());
        assert!(cp_phase_map(&case, &[5e-6], -0.1).is_err());
        let close_ref = CpCase { z_reference: 30e-6, ..case };
        assert!(close_ref.validate().is_err());
    }

    #[test]
    fn big_g_reference_anchors() {
        // arms 1 mm and 50 mm -> ~798 and ~615 rad for 40K at T = 10 s
        let report = big_g_phases(&BigGCase::reference(), 0.004).unwrap();
        assert_relative_eq!(report.phases[0], 798.0, max_relative = 0.02);
        assert_relative_eq!(report.phases[1], 615.0, max_relative = 0.02);
        // scenario-3 sigma of ~4 mrad -> delta G / G ~ 2.2e-5
        assert_relative_eq!(report.delta_g_over_g, 2.2e-5, max_relative = 0.15);
    }

    #[test]
    fn big_g_full_sphere_reduces_to_point_mass() {
        let mut case = BigGCase::reference();
        case.geometry = CutSphere::new(0.2, 360.0);
        case.reference_offset = 0.0;
        case.arms = vec![0.3, 0.5];
        let report = big_g_phases(&case, 0.0).unwrap();
        for (&arm, &phase) in case.arms.iter().zip(&report.phases) {
            let expected = case.species.mass_kg * BIG_G * case.mass / arm * case.t / HBAR;
            assert_relative_eq!(phase, expected, max_relative = 1e-4);
        }
    }

    #[test]
    fn big_g_yb_mass_ratio() {
        // phases scale with the atomic mass, so the accuracy improves by
        // exactly the Yb/K mass ratio 4.275
        let k = big_g_phases(&BigGCase::reference(), 0.004).unwrap();
        let mut case = BigGCase::reference();
        case.species = Species::yb171();
        let yb = big_g_phases(&case, 0.004).unwrap();
        assert_relative_eq!(k.delta_g_over_g / yb.delta_g_over_g, 4.275, max_relative = 1e-4);
    }

    #[test]
    fn big_g_density_crosscheck() {
        // 253 kg over the 141-degree cut volume: the implied density is of
        // tungsten's order
        let case = BigGCase::reference();
        let rho = case.density();
        assert!(rho > 15_000.0 && rho < 25_000.0, "density {rho}");
    }

    #[test]
    fn big_g_rejects_arm_inside_mass() {
        let mut case = BigGCase::reference();
        case.arms = vec![-5e-3, 50e-3]; // first arm inside the solid
        assert!(big_g_phases(&case, 0.004).is_err());
    }
}
