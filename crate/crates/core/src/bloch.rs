//! Effective two-level model of a tweezer pair: Bloch-vector dynamics under
//! the torque vector P = (J, 0, Delta), plus spectral extraction of (J,
//! Delta) from the full potential. Serves as an independent oracle for the
//! adiabatic splitter protocols.

use crate::error::{Error, Result};
use crate::potential::{ExternalPotential, Layout, TweezerScene};
use crate::solver::{solve_eigenstates, SpatialGrid};

/// Bloch vector (<sigma_x>, <sigma_y>, <sigma_z>).
pub type BlochState = [f64; 3];

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// 4th-order Runge-Kutta integration of the optical Bloch equation
/// v' = P x v, where `torque(t)` returns (J, Delta) so that P = (J, 0,
/// Delta). Returns the trajectory sampled after every step, starting with
/// (t0, v0).
///
/// The timestep must resolve the precession: dt * |P| < 0.1 at every
/// sampled time, otherwise the call is rejected.
pub fn integrate_bloch(
    v0: BlochState,
    torque: impl Fn(f64) -> (f64, f64),
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<Vec<(f64, BlochState)>> {
    if !(dt > 0.0 && t1 > t0) {
        return Err(Error::invalid(format!("integrate_bloch requires t1 > t0 and dt > 0, got [{t0}, {t1}], dt = {dt}")));
    }
    let steps = ((t1 - t0) / dt).round().max(1.0) as usize;
    let dt = (t1 - t0) / steps as f64;
    let p_at = |t: f64| -> [f64; 3] {
        let (j, delta) = torque(t);
        [j, 0.0, delta]
    };
    let deriv = |t: f64, v: [f64; 3]| cross(p_at(t), v);

    let mut traj = Vec::with_capacity(steps + 1);
    let mut v = v0;
    traj.push((t0, v));
    for s in 0..steps {
        let t = t0 + s as f64 * dt;
        let p_mag = norm(p_at(t)).max(norm(p_at(t + dt)));
        if dt * p_mag >= 0.1 {
            return Err(Error::invalid(format!(
                "Bloch step under-resolved: dt * |P| = {:.3} at t = {t}",
                dt * p_mag
            )));
        }
        let k1 = deriv(t, v);
        let vk = |k: [f64; 3], h: f64| [v[0] + h * k[0], v[1] + h * k[1], v[2] + h * k[2]];
        let k2 = deriv(t + 0.5 * dt, vk(k1, 0.5 * dt));
        let k3 = deriv(t + 0.5 * dt, vk(k2, 0.5 * dt));
        let k4 = deriv(t + dt, vk(k3, dt));
        for i in 0..3 {
            v[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        traj.push((t + dt, v));
    }
    Ok(traj)
}

/// Tunneling rate J and detuning Delta (angular frequencies, internal
/// units) of the two-tweezer scene at time `t`, for vibrational band `n`,
/// extracted spectrally from the full potential:
///
/// - J = (E_antisym - E_sym) / hbar of the equal-depth double well,
/// - Delta = difference of the n-th single-tweezer eigenenergies of the two
///   (detuned) wells in isolation.
///
/// Rejected if the two-level subspace is not spectrally isolated (gap to
/// the next level < 5 hbar J).
pub fn extract_j_delta(scene: &TweezerScene, t: f64, n: usize) -> Result<(f64, f64)> {
    let cfg = scene.config_at(t)?;
    if cfg.n != 2 {
        return Err(Error::invalid(format!(
            "J/Delta extraction needs exactly two tweezers, scene has {}",
            cfg.n
        )));
    }
    let mass = scene.species.mass_internal();
    let d = cfg.centers[1] - cfg.centers[0];

    // symmetric double well at full depth for J
    let sym = TweezerScene {
        layout: Layout::Static {
            centers: vec![-0.5 * d, 0.5 * d],
            detunings: vec![0.0, 0.0],
        },
        external: ExternalPotential::None,
        ..scene.clone()
    };
    let grid = SpatialGrid::new(
        -0.5 * d - 8.0 * scene.waist,
        0.5 * d + 8.0 * scene.waist,
        2048,
    )?;
    let v = crate::potential::evaluate_potential(&sym, grid.xs(), 0.0)?;
    let n_states = 2 * (n + 1) + 1;
    let sol = solve_eigenstates(&grid, &v, mass, n_states)?;
    let e_sym = sol.energies[2 * n];
    let e_anti = sol.energies[2 * n + 1];
    let j = e_anti - e_sym;
    if j < 0.0 {
        return Err(Error::Eigensolver("band ordering violated".to_string()));
    }
    let gap_to_next = sol.energies[2 * n + 2] - e_anti;
    if gap_to_next < 5.0 * j {
        return Err(Error::SubspaceNotIsolated(format!(
            "gap to next level {gap_to_next:.3e} < 5 J = {:.3e}",
            5.0 * j
        )));
    }

    // isolated single tweezers for Delta
    let single_energy = |depth_factor: f64| -> Result<f64> {
        let single = TweezerScene {
            depth: scene.depth * depth_factor,
            layout: Layout::Static { centers: vec![0.0], detunings: vec![0.0] },
            external: ExternalPotential::None,
            ..scene.clone()
        };
        let g = SpatialGrid::new(-8.0 * scene.waist, 8.0 * scene.waist, 1024)?;
        let v = crate::potential::evaluate_potential(&single, g.xs(), 0.0)?;
        let sol = solve_eigenstates(&g, &v, mass, n + 1)?;
        Ok(sol.energies[n])
    };
    let e_left = single_energy(cfg.depth_factors[0])?;
    let e_right = single_energy(cfg.depth_factors[1])?;
    let delta = e_right - e_left;
    Ok((j, delta))
}
