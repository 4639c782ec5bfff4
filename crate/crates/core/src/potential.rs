//! Builds V(x, t): moving Gaussian tweezers with detuning schedules plus
//! additive external potentials (uniform acceleration, Casimir-Polder,
//! source-mass gravity).
//!
//! All quantities are in internal units (see [`crate::units`]) unless a
//! field name says otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{self, Species, BIG_G, ENERGY_UNIT, LENGTH_UNIT, MASS_UNIT};

/// Gaussians are truncated beyond this many waists from the center; the
/// neglected tail is exp(-2 * 8^2) ~ 3e-56.
const GAUSS_WINDOW_WAISTS: f64 = 8.0;

/// Casimir-Polder clip distance [internal length]. The -C4/z^4 form is
/// clipped to a constant below this z to keep the grid finite; the
/// interferometer never operates closer than 1 um.
pub const CP_CLIP_Z: f64 = 0.5;

/// Cosine separation ramp plus linear detuning ramp shared by both
/// splitter schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    /// Minimal tweezer separation [internal length].
    pub d_min: f64,
    /// Maximal (initial and final) separation [internal length].
    pub d_max: f64,
    /// Process duration [internal time].
    pub t_proc: f64,
    /// Relative detuning amplitude (dimensionless depth fraction).
    pub delta_max: f64,
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0 && self.d_max > self.d_min) {
            return Err(Error::invalid(format!(
                "schedule requires 0 < d_min < d_max, got d_min = {}, d_max = {}",
                self.d_min, self.d_max
            )));
        }
        if !(self.t_proc > 0.0) {
            return Err(Error::invalid(format!("schedule requires t_proc > 0, got {}", self.t_proc)));
        }
        if !(self.delta_max.abs() <= 1.0) {
            return Err(Error::invalid(format!(
                "relative detuning amplitude must lie in [-1, 1], got {}",
                self.delta_max
            )));
        }
        Ok(())
    }
}

/// Separation and detuning of the two-tweezer schedule at time `t`.
///
/// d(t) = (d_max + d_min)/2 + (d_max - d_min)/2 * cos(2 pi t / T);
/// the relative detuning ramps linearly to zero over the first half of the
/// process and stays zero afterwards.
pub fn standard_schedule(params: &ScheduleParams, t: f64) -> Result<(f64, f64)> {
    params.validate()?;
    if !(0.0..=params.t_proc).contains(&t) {
        return Err(Error::OutOfSchedule { t, duration: params.t_proc });
    }
    let half_sum = 0.5 * (params.d_max + params.d_min);
    let half_diff = 0.5 * (params.d_max - params.d_min);
    let d = half_sum + half_diff * (2.0 * std::f64::consts::PI * t / params.t_proc).cos();
    let delta = if t < 0.5 * params.t_proc {
        params.delta_max * (1.0 - 2.0 * t / params.t_proc)
    } else {
        0.0
    };
    Ok((d, delta))
}

/// Outer-tweezer offset and relative detuning of the three-tweezer schedule.
///
/// The outer tweezers sit at +-d(t) with d(t) as in [`standard_schedule`];
/// their relative detuning ramps linearly from `+delta_max` (shallower by
/// the detuning energy) at t = 0 through zero at mid-process to
/// `-delta_max` (deeper) at t = T.
pub fn three_tweezer_schedule(params: &ScheduleParams, t: f64) -> Result<(f64, f64)> {
    params.validate()?;
    if !(0.0..=params.t_proc).contains(&t) {
        return Err(Error::OutOfSchedule { t, duration: params.t_proc });
    }
    let half_sum = 0.5 * (params.d_max + params.d_min);
    let half_diff = 0.5 * (params.d_max - params.d_min);
    let d = half_sum + half_diff * (2.0 * std::f64::consts::PI * t / params.t_proc).cos();
    let delta = params.delta_max * (1.0 - 2.0 * t / params.t_proc);
    Ok((d, delta))
}

/// Static external potential added to the tweezer stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExternalPotential {
    None,
    /// Uniform acceleration along the tweezer line; V = m a x.
    UniformAcceleration {
        /// Acceleration [m/s^2]. (Numerically equal in internal units.)
        a: f64,
    },
    /// Retarded Casimir-Polder attraction to a surface at `surface_x`
    /// (atom side is x > surface_x): U = -C4 / (x - surface_x)^4.
    CasimirPolder {
        /// C4 coefficient [J m^4].
        c4: f64,
        /// Surface position on the grid [internal length].
        surface_x: f64,
    },
    /// Newtonian potential of a cut-sphere source mass, evaluated along the
    /// tweezer line. Grid coordinate x maps to the 3D point
    /// `ref_point + (x + ref_offset) * axis`.
    SourceMass {
        /// Mass density [kg/m^3].
        density: f64,
        geometry: CutSphere,
        /// Offset of the grid origin from the geometry reference point,
        /// along the axis [internal length].
        ref_offset: f64,
    },
}

impl ExternalPotential {
    pub fn validate(&self) -> Result<()> {
        match self {
            ExternalPotential::None => Ok(()),
            ExternalPotential::UniformAcceleration { a } => {
                if !a.is_finite() {
                    return Err(Error::NonFinite("uniform acceleration"));
                }
                Ok(())
            }
            ExternalPotential::CasimirPolder { c4, .. } => {
                if !(*c4 > 0.0) {
                    return Err(Error::invalid(format!("C4 must be > 0, got {c4}")));
                }
                Ok(())
            }
            ExternalPotential::SourceMass { density, geometry, .. } => {
                if !(*density > 0.0) {
                    return Err(Error::invalid(format!("density must be > 0, got {density}")));
                }
                geometry.validate()
            }
        }
    }

    /// Potential energy [internal] at grid coordinate `x` for an atom of
    /// internal mass `mass`.
    pub fn energy_at(&self, x: f64, mass: f64) -> f64 {
        match self {
            ExternalPotential::None => 0.0,
            // a [m/s^2] equals a [um/ms^2] numerically
            ExternalPotential::UniformAcceleration { a } => mass * a * x,
            ExternalPotential::CasimirPolder { c4, surface_x } => {
                let z = (x - surface_x).max(CP_CLIP_Z);
                let c4_int = c4 / (ENERGY_UNIT * LENGTH_UNIT.powi(4));
                -c4_int / z.powi(4)
            }
            ExternalPotential::SourceMass { density, geometry, ref_offset } => {
                let point = geometry.axis_point((x + ref_offset) * LENGTH_UNIT);
                match cut_sphere_potential(geometry, *density, point) {
                    // U [J/kg] -> internal energy: E = m_int * U * (mass_unit/energy_unit)
                    Ok(u_si) => mass * u_si * (MASS_UNIT / ENERGY_UNIT),
                    Err(_) => f64::INFINITY, // inside the mass: not a valid grid point
                }
            }
        }
    }
}

/// Tungsten sphere truncated to a spherical sector: the set of points
/// within `radius` of `center` whose direction from the center lies within
/// half the cut angle of `axis`. A cut angle of 360 degrees degenerates to
/// the full sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutSphere {
    /// Sphere radius [m].
    pub radius: f64,
    /// Full apex angle of the kept sector [degrees].
    pub cut_angle_deg: f64,
    /// Symmetry axis (unit vector); the solid opens along +axis, the
    /// measurement side is -axis.
    pub axis: [f64; 3],
    /// Sphere center [m].
    pub center: [f64; 3],
}

impl CutSphere {
    pub fn new(radius: f64, cut_angle_deg: f64) -> Self {
        CutSphere { radius, cut_angle_deg, axis: [0.0, 0.0, 1.0], center: [0.0; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::invalid(format!("sphere radius must be > 0, got {}", self.radius)));
        }
        if !(self.cut_angle_deg > 0.0 && self.cut_angle_deg <= 360.0) {
            return Err(Error::invalid(format!(
                "cut angle must lie in (0, 360] degrees, got {}",
                self.cut_angle_deg
            )));
        }
        let n = norm3(self.axis);
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("axis must be a unit vector, |axis| = {n}")));
        }
        Ok(())
    }

    /// Half apex angle [rad].
    pub fn half_angle(&self) -> f64 {
        (self.cut_angle_deg * 0.5).to_radians()
    }

    /// Volume of the sector (cone plus cap) [m^3].
    pub fn volume(&self) -> f64 {
        2.0 * std::f64::consts::PI / 3.0 * self.radius.powi(3) * (1.0 - self.half_angle().cos())
    }

    /// Point on the measurement side of the axis at signed distance `s` [m]
    /// from the center (positive s moves away from the solid).
    pub fn axis_point(&self, s: f64) -> [f64; 3] {
        [
            self.center[0] - s * self.axis[0],
            self.center[1] - s * self.axis[1],
            self.center[2] - s * self.axis[2],
        ]
    }

    pub fn contains(&self, point: [f64; 3]) -> bool {
        let d = sub3(point, self.center);
        let r = norm3(d);
        if r > self.radius {
            return false;
        }
        if r == 0.0 {
            return true;
        }
        let cos_t = dot3(d, self.axis) / r;
        cos_t >= self.half_angle().cos()
    }
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

/// Newtonian gravitational potential per unit mass [J/kg] of the cut
/// sphere at `point` [m], by midpoint-rule volume integration in spherical
/// coordinates, refined until the relative change is below 1e-5.
///
/// Returns an error if the point lies inside the mass.
pub fn cut_sphere_potential(geometry: &CutSphere, density: f64, point: [f64; 3]) -> Result<f64> {
    geometry.validate()?;
    if geometry.contains(point) {
        return Err(Error::InsideMass(norm3(sub3(point, geometry.center))));
    }
    let p = sub3(point, geometry.center);
    let beta = geometry.half_angle();
    let r_max = geometry.radius;

    // axial component of the field point and its distance from the axis
    let z_p = dot3(p, geometry.axis);
    let p_norm2 = dot3(p, p);
    let rho_p2 = (p_norm2 - z_p * z_p).max(0.0);
    let rho_p = rho_p2.sqrt();
    let on_axis = rho_p < 1e-9 * r_max;

    let mut prev = f64::NAN;
    let mut n = 64usize;
    loop {
        let val = if on_axis {
            sector_integral_axial(r_max, beta, z_p, n)
        } else {
            sector_integral_3d(r_max, beta, z_p, rho_p, n)
        };
        if prev.is_finite() && ((val - prev) / val).abs() < 1e-5 {
            return Ok(-BIG_G * density * val);
        }
        prev = val;
        n *= 2;
        if n > 8192 {
            return Ok(-BIG_G * density * val);
        }
    }
}

/// Integral of r^2 sin(theta) / |r - p| over the sector for an on-axis
/// field point, with the azimuthal integral done analytically (2 pi).
fn sector_integral_axial(r_max: f64, beta: f64, z_p: f64, n: usize) -> f64 {
    let dr = r_max / n as f64;
    let dth = beta / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        let r = (i as f64 + 0.5) * dr;
        let r2 = r * r;
        for j in 0..n {
            let th = (j as f64 + 0.5) * dth;
            let dist2 = r2 + z_p * z_p - 2.0 * r * z_p * th.cos();
            sum += r2 * th.sin() / dist2.sqrt();
        }
    }
    2.0 * std::f64::consts::PI * sum * dr * dth
}

/// Full 3D midpoint integration for off-axis field points. The azimuth is
/// measured from the plane containing the axis and the field point.
fn sector_integral_3d(r_max: f64, beta: f64, z_p: f64, rho_p: f64, n: usize) -> f64 {
    let n_phi = (n / 2).max(16);
    let dr = r_max / n as f64;
    let dth = beta / n as f64;
    let dph = 2.0 * std::f64::consts::PI / n_phi as f64;
    let p2 = z_p * z_p + rho_p * rho_p;
    let mut sum = 0.0;
    for i in 0..n {
        let r = (i as f64 + 0.5) * dr;
        let r2 = r * r;
        for j in 0..n {
            let th = (j as f64 + 0.5) * dth;
            let (sin_t, cos_t) = th.sin_cos();
            let a = r2 + p2 - 2.0 * r * z_p * cos_t;
            let b = 2.0 * r * sin_t * rho_p;
            for k in 0..n_phi {
                let ph = (k as f64 + 0.5) * dph;
                sum += r2 * sin_t / (a - b * ph.cos()).sqrt();
            }
        }
    }
    sum * dr * dth * dph
}

/// A time-parameterized set of Gaussian tweezers plus an external
/// potential; immutable value object, evaluation is pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweezerScene {
    pub species: Species,
    /// Full tweezer depth V0 [internal energy].
    pub depth: f64,
    /// Gaussian waist sigma [internal length].
    pub waist: f64,
    pub layout: Layout,
    pub external: ExternalPotential,
}

/// Tweezer arrangement over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Occupied tweezer at -d/2, empty detuned tweezer at +d/2.
    TwoTweezer { schedule: ScheduleParams, reversed: bool },
    /// Occupied tweezer at 0, detuned outer tweezers at +-d.
    ThreeTweezer { schedule: ScheduleParams, reversed: bool },
    /// Fixed configuration with explicit centers and relative detunings.
    Static { centers: Vec<f64>, detunings: Vec<f64> },
}

/// Instantaneous tweezer configuration (at most three tweezers).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TweezerConfig {
    pub n: usize,
    /// Tweezer centers, ordered left to right.
    pub centers: [f64; 3],
    /// Depth factors (1 - relative detuning) per tweezer, same order.
    pub depth_factors: [f64; 3],
}

impl TweezerConfig {
    pub fn centers(&self) -> &[f64] {
        &self.centers[..self.n]
    }
}

impl TweezerScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth > 0.0) {
            return Err(Error::invalid(format!("tweezer depth must be > 0, got {}", self.depth)));
        }
        if !(self.waist > 0.0) {
            return Err(Error::invalid(format!("tweezer waist must be > 0, got {}", self.waist)));
        }
        match &self.layout {
            Layout::TwoTweezer { schedule, .. } | Layout::ThreeTweezer { schedule, .. } => {
                schedule.validate()?
            }
            Layout::Static { centers, detunings } => {
                if centers.is_empty() || centers.len() > 3 || centers.len() != detunings.len() {
                    return Err(Error::invalid(
                        "static layout needs 1..=3 centers with matching detunings".to_string(),
                    ));
                }
                if detunings.iter().any(|d| d.abs() > 1.0) {
                    return Err(Error::invalid("relative detunings must lie in [-1, 1]".to_string()));
                }
            }
        }
        self.external.validate()
    }

    /// Scene duration [internal time]; unbounded for static layouts.
    pub fn duration(&self) -> f64 {
        match &self.layout {
            Layout::TwoTweezer { schedule, .. } | Layout::ThreeTweezer { schedule, .. } => {
                schedule.t_proc
            }
            Layout::Static { .. } => f64::INFINITY,
        }
    }

    /// Harmonic frequency of a full-depth tweezer [rad / internal time].
    pub fn trap_frequency(&self) -> f64 {
        units::trap_frequency_internal(self.depth, self.waist, self.species.mass_internal())
    }

    /// Tweezer centers and depth factors at time `t`.
    pub fn config_at(&self, t: f64) -> Result<TweezerConfig> {
        match &self.layout {
            Layout::TwoTweezer { schedule, reversed } => {
                let t_eff = if *reversed { schedule.t_proc - t } else { t };
                let (d, delta) = standard_schedule(schedule, t_eff)
                    .map_err(|_| Error::OutOfSchedule { t, duration: schedule.t_proc })?;
                Ok(TweezerConfig {
                    n: 2,
                    centers: [-0.5 * d, 0.5 * d, 0.0],
                    depth_factors: [1.0, 1.0 - delta, 0.0],
                })
            }
            Layout::ThreeTweezer { schedule, reversed } => {
                let t_eff = if *reversed { schedule.t_proc - t } else { t };
                let (d, delta) = three_tweezer_schedule(schedule, t_eff)
                    .map_err(|_| Error::OutOfSchedule { t, duration: schedule.t_proc })?;
                // The detuning is the site-energy detuning between the
                // central and external wells of the combined potential, so
                // the central beam amplitude must compensate the overlapping
                // Gaussian tails of the outer tweezers. A naive factor of 1
                // leaves the central site deeper by ~V0 exp(-2 d^2/sigma^2)
                // plus an anharmonic zero-point bias, which dwarfs any
                // sub-level-spacing detuning wherever tunneling is alive.
                // The compensated factor f_c(d) is defined spectrally: at
                // applied detuning zero the ground state of the static stack
                // is split evenly between the central and outer regions.
                let f_c = center_compensation(
                    self.depth,
                    self.waist,
                    self.species.mass_internal(),
                    d,
                )?;
                let f_o = 1.0 - delta;
                Ok(TweezerConfig {
                    n: 3,
                    centers: [-d, 0.0, d],
                    depth_factors: [f_o, f_c, f_o],
                })
            }
            Layout::Static { centers, detunings } => {
                let mut cfg = TweezerConfig { n: centers.len(), centers: [0.0; 3], depth_factors: [0.0; 3] };
                for (i, (&c, &det)) in centers.iter().zip(detunings).enumerate() {
                    cfg.centers[i] = c;
                    cfg.depth_factors[i] = 1.0 - det;
                }
                Ok(cfg)
            }
        }
    }

    /// Fill `out` with V(x, t) on the grid `xs`, scaling every tweezer depth
    /// by `depth_noise` (1.0 for the noiseless potential). `xs` must be
    /// uniform and ascending.
    pub fn fill_potential(
        &self,
        xs: &[f64],
        t: f64,
        depth_noise: f64,
        out: &mut [f64],
    ) -> Result<()> {
        assert_eq!(xs.len(), out.len());
        let cfg = self.config_at(t)?;
        let mass = self.species.mass_internal();
        let ext_is_none = matches!(self.external, ExternalPotential::None);
        if ext_is_none {
            out.fill(0.0);
        } else {
            for (o, &x) in out.iter_mut().zip(xs) {
                *o = self.external.energy_at(x, mass);
            }
        }
        let dx = xs[1] - xs[0];
        let x0 = xs[0];
        let window = GAUSS_WINDOW_WAISTS * self.waist;
        let inv_s2 = 2.0 / (self.waist * self.waist);
        for i in 0..cfg.n {
            let c = cfg.centers[i];
            let amp = self.depth * cfg.depth_factors[i] * depth_noise;
            if amp == 0.0 {
                continue;
            }
            let lo = (((c - window - x0) / dx).ceil().max(0.0)) as usize;
            let hi = ((((c + window - x0) / dx).floor()) as isize).min(xs.len() as isize - 1);
            if hi < lo as isize {
                continue;
            }
            for k in lo..=(hi as usize) {
                let u = xs[k] - c;
                out[k] -= amp * (-inv_s2 * u * u).exp();
            }
        }
        Ok(())
    }
}

/// Central-beam depth factor equalizing the central and outer site energies
/// of a symmetric triple-Gaussian stack (outer factors 1) at separation `d`:
/// the factor at which the ground state places exactly half its probability
/// beyond |x| = d/2. Monotone in the factor, found by bisection on a
/// finite-difference ground-state solve.
///
/// Values are computed on a node grid of spacing waist/64, memoized
/// process-wide, and linearly interpolated, so the per-timestep cost after
/// warm-up is a hash lookup.
fn center_compensation(depth: f64, waist: f64, mass: f64, d: f64) -> Result<f64> {
    let h = waist / 64.0;
    let idx = (d / h).floor();
    let f0 = compensation_node(depth, waist, mass, idx as i64, h)?;
    let f1 = compensation_node(depth, waist, mass, idx as i64 + 1, h)?;
    let w = d / h - idx;
    Ok(f0 + w * (f1 - f0))
}

type CompensationKey = (u64, u64, u64, i64);

static COMPENSATION_CACHE: std::sync::OnceLock<std::sync::Mutex<std::collections::HashMap<CompensationKey, f64>>> =
    std::sync::OnceLock::new();

fn compensation_node(depth: f64, waist: f64, mass: f64, idx: i64, h: f64) -> Result<f64> {
    let key = (depth.to_bits(), waist.to_bits(), mass.to_bits(), idx);
    let cache = COMPENSATION_CACHE.get_or_init(|| std::sync::Mutex::new(std::collections::HashMap::new()));
    if let Some(&f) = cache.lock().unwrap().get(&key) {
        return Ok(f);
    }
    let f = solve_center_factor(depth, waist, mass, idx as f64 * h)?;
    cache.lock().unwrap().insert(key, f);
    Ok(f)
}

fn solve_center_factor(depth: f64, waist: f64, mass: f64, d: f64) -> Result<f64> {
    let tail = (-2.0 * d * d / (waist * waist)).exp();
    if tail < 1e-7 {
        // cross-tweezer overlap negligible: no compensation needed
        return Ok(1.0);
    }
    // symmetric grid of midpoints so the stack parity is exact
    let n = 1024usize;
    let half = d + GAUSS_WINDOW_WAISTS * waist;
    let dx = 2.0 * half / n as f64;
    let xs: Vec<f64> = (0..n).map(|j| -half + (j as f64 + 0.5) * dx).collect();
    let inv_s2 = 2.0 / (waist * waist);
    let mut v = vec![0.0f64; n];
    let fill = |fc: f64, v: &mut [f64]| {
        for (o, &x) in v.iter_mut().zip(&xs) {
            let l = x + d;
            let r = x - d;
            *o = -depth
                * ((-inv_s2 * l * l).exp() + fc * (-inv_s2 * x * x).exp() + (-inv_s2 * r * r).exp());
        }
    };
    // ground-state probability outside |x| = d/2 decreases monotonically as
    // the central well deepens; bisect it to 1/2
    let mut lo = 0.0f64;
    let mut hi = 1.5f64;
    for _ in 0..34 {
        let mid = 0.5 * (lo + hi);
        fill(mid, &mut v);
        let outer = crate::solver::ground_state_outer_fraction(&xs, &v, mass, dx, 0.5 * d)?;
        if outer > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Convenience wrapper allocating a fresh potential grid.
pub fn evaluate_potential(scene: &TweezerScene, xs: &[f64], t: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; xs.len()];
    scene.fill_potential(xs, t, 1.0, &mut out)?;
    Ok(out)
}
