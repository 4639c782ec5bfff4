//! 1D quantum mechanics engine: stationary eigenstates of V(x) and
//! split-step Fourier propagation under a time-dependent tweezer scene.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::TweezerScene;

/// Boundary probability density above which a propagation run is flagged
/// as having overflowed the grid.
pub const BOUNDARY_OVERFLOW: f64 = 1e-8;

/// Uniform 1D spatial grid with periodic topology (Fourier method).
///
/// `dx = (x_max - x_min) / n`; the sample points are
/// `x_j = x_min + j dx` for `j = 0..n`, so `x_max` itself is the periodic
/// image of `x_min` and is not a sample point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    #[serde(skip)]
    xs: Vec<f64>,
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Arc<Self>> {
        if !(x_max > x_min) {
            return Err(Error::invalid(format!("grid requires x_max > x_min, got [{x_min}, {x_max}]")));
        }
        if n < 256 || !n.is_power_of_two() {
            return Err(Error::invalid(format!(
                "grid size must be a power of two >= 256, got {n}"
            )));
        }
        let dx = (x_max - x_min) / n as f64;
        let xs = (0..n).map(|j| x_min + j as f64 * dx).collect();
        Ok(Arc::new(SpatialGrid { x_min, x_max, n, xs }))
    }

    /// Symmetric grid covering a scene: half-width `d_extent + 8 sigma`.
    pub fn for_scene(scene: &TweezerScene, n: usize) -> Result<Arc<Self>> {
        let extent = match &scene.layout {
            crate::potential::Layout::TwoTweezer { schedule, .. } => 0.5 * schedule.d_max,
            crate::potential::Layout::ThreeTweezer { schedule, .. } => schedule.d_max,
            crate::potential::Layout::Static { centers, .. } => centers
                .iter()
                .fold(0.0f64, |m, c| m.max(c.abs())),
        };
        let half = extent + 8.0 * scene.waist;
        Self::new(-half, half, n)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n as f64
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    /// Angular wavenumber of FFT bin `j` (standard wraparound ordering).
    pub fn k(&self, j: usize) -> f64 {
        let n = self.n as isize;
        let j = j as isize;
        let m = if j <= n / 2 { j } else { j - n };
        2.0 * std::f64::consts::PI * m as f64 / (self.x_max - self.x_min)
    }

    pub fn same_as(&self, other: &SpatialGrid) -> bool {
        self.x_min == other.x_min && self.x_max == other.x_max && self.n == other.n
    }
}

/// Complex amplitudes on a [`SpatialGrid`].
#[derive(Debug, Clone)]
pub struct WaveFunction {
    pub grid: Arc<SpatialGrid>,
    pub amps: Vec<C64>,
}

impl WaveFunction {
    pub fn new(grid: Arc<SpatialGrid>, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != grid.n {
            return Err(Error::GridMismatch);
        }
        Ok(WaveFunction { grid, amps })
    }

    /// Normalized Gaussian packet centered at `x0` with position spread
    /// `sigma_x` and mean wavenumber `k0`.
    pub fn gaussian(grid: Arc<SpatialGrid>, x0: f64, sigma_x: f64, k0: f64) -> Self {
        let amps = grid
            .xs()
            .iter()
            .map(|&x| {
                let u = (x - x0) / sigma_x;
                C64::from_polar((-0.25 * u * u).exp(), k0 * x)
            })
            .collect();
        let mut wf = WaveFunction { grid, amps };
        wf.normalize();
        wf
    }

    pub fn norm_sq(&self) -> f64 {
        let dx = self.grid.dx();
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>() * dx
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sq().sqrt();
        if n > 0.0 {
            let inv = 1.0 / n;
            for a in &mut self.amps {
                *a *= inv;
            }
        }
    }

    /// Probability density |psi|^2 at the two grid edges (max of both).
    pub fn boundary_density(&self) -> f64 {
        let n = self.grid.n;
        self.amps[0].norm_sqr().max(self.amps[n - 1].norm_sqr())
    }

    pub fn expectation_x(&self) -> f64 {
        let dx = self.grid.dx();
        self.amps
            .iter()
            .zip(self.grid.xs())
            .map(|(a, &x)| a.norm_sqr() * x)
            .sum::<f64>()
            * dx
    }

    /// Position spread sqrt(<x^2> - <x>^2).
    pub fn sigma_x(&self) -> f64 {
        let dx = self.grid.dx();
        let mean = self.expectation_x();
        let x2 = self
            .amps
            .iter()
            .zip(self.grid.xs())
            .map(|(a, &x)| a.norm_sqr() * x * x)
            .sum::<f64>()
            * dx;
        (x2 - mean * mean).max(0.0).sqrt()
    }
}

/// Discrete inner product integral psi* phi dx.
pub fn overlap(psi: &WaveFunction, phi: &WaveFunction) -> Result<C64> {
    if !psi.grid.same_as(&phi.grid) {
        return Err(Error::GridMismatch);
    }
    let dx = psi.grid.dx();
    Ok(psi
        .amps
        .iter()
        .zip(&phi.amps)
        .map(|(a, b)| a.conj() * b)
        .sum::<C64>()
        * dx)
}

/// Multiply amplitudes at x > `boundary` by exp(i phi); norm unchanged.
pub fn imprint_phase(psi: &mut WaveFunction, phi: f64, boundary: f64) {
    let factor = C64::from_polar(1.0, phi);
    let xs: Vec<f64> = psi.grid.xs().to_vec();
    for (a, x) in psi.amps.iter_mut().zip(xs) {
        if x > boundary {
            *a *= factor;
        }
    }
}

/// Probability per tweezer, integrating |psi|^2 over Voronoi cells of the
/// tweezer centers (boundaries at midpoints).
pub fn port_populations(psi: &WaveFunction, scene: &TweezerScene, t: f64) -> Result<Vec<f64>> {
    let cfg = scene.config_at(t)?;
    let centers = cfg.centers();
    for w in centers.windows(2) {
        let sep = w[1] - w[0];
        if sep <= 2.0 * scene.waist {
            return Err(Error::TweezersTooClose { separation: sep, waist: scene.waist });
        }
    }
    let mut bounds = Vec::with_capacity(centers.len() + 1);
    bounds.push(f64::NEG_INFINITY);
    for w in centers.windows(2) {
        bounds.push(0.5 * (w[0] + w[1]));
    }
    bounds.push(f64::INFINITY);
    let dx = psi.grid.dx();
    let mut pops = vec![0.0; centers.len()];
    for (a, &x) in psi.amps.iter().zip(psi.grid.xs()) {
        // linear scan over <= 3 cells
        for (i, pair) in bounds.windows(2).enumerate() {
            if x >= pair[0] && x < pair[1] {
                pops[i] += a.norm_sqr() * dx;
                break;
            }
        }
    }
    Ok(pops)
}

/// Lowest eigenpairs of -(1/2m) d^2/dx^2 + V.
#[derive(Debug, Clone)]
pub struct EigenSolution {
    /// Energies, non-decreasing. Refined as spectral Rayleigh quotients so
    /// they are consistent with the Fourier propagator.
    pub energies: Vec<f64>,
    pub states: Vec<WaveFunction>,
    /// True for states bound in the trap (E < 0 for potentials with a
    /// vanishing asymptote).
    pub bound: Vec<bool>,
    /// Finite-difference residuals ||H phi - E phi|| / ||phi||.
    pub residuals: Vec<f64>,
}

/// Diagonalize the second-order finite-difference Hamiltonian (Dirichlet
/// boundaries) for the lowest `n_states` states, then refine each energy as
/// the Rayleigh quotient under the spectral (FFT) kinetic operator.
pub fn solve_eigenstates(
    grid: &Arc<SpatialGrid>,
    v: &[f64],
    mass: f64,
    n_states: usize,
) -> Result<EigenSolution> {
    if n_states == 0 {
        return Err(Error::invalid("n_states must be >= 1".to_string()));
    }
    let n = grid.n;
    if v.len() != n {
        return Err(Error::GridMismatch);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("potential grid"));
    }
    let dx = grid.dx();
    let kin = 1.0 / (2.0 * mass * dx * dx);
    let diag: Vec<f64> = v.iter().map(|&vi| vi + 2.0 * kin).collect();
    let off = -kin;

    // Gershgorin bounds
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for d in &diag {
        lo = lo.min(d - 2.0 * kin.abs());
        hi = hi.max(d + 2.0 * kin.abs());
    }
    let scale = hi.abs().max(lo.abs()).max(1.0);

    // compute a few extra states so the Ritz refinement below can rotate
    // finite-difference discretization error out of the requested ones
    let m = (n_states + 8).min(n / 2);
    let mut energies_fd = Vec::with_capacity(m);
    for k in 0..m {
        energies_fd.push(bisect_eigenvalue(&diag, off, lo, hi, k, scale));
    }

    let mut states = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    for k in 0..m {
        let lambda = energies_fd[k];
        // states of a near-degenerate cluster must be orthogonalized against
        let cluster_tol = 1e-8 * scale;
        let prior: Vec<&Vec<C64>> = (0..k)
            .filter(|&j| (energies_fd[j] - lambda).abs() < cluster_tol)
            .map(|j| &states[j as usize])
            .collect();
        let vec = inverse_iteration(&diag, off, lambda, scale, &prior)?;
        let res = fd_residual(&diag, off, lambda, &vec);
        residuals.push(res);
        if k < n_states && res > 1e-6 * scale.max(1.0) {
            return Err(Error::Eigensolver(format!(
                "residual {res:.3e} for state {k} exceeds tolerance"
            )));
        }
        states.push(vec);
    }
    residuals.truncate(n_states);

    // Ritz refinement: diagonalize the spectral Hamiltonian in the span of
    // the finite-difference eigenvectors, so the returned energies and
    // states are consistent with the Fourier propagator
    let mut ws = SpectralWorkspace::new(grid.clone());
    // inverse iteration can return nearly parallel vectors inside a
    // near-degenerate cluster; the Ritz projection below assumes an
    // orthonormal basis, so orthonormalize and drop collapsed directions
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m);
    for vec in &states {
        let mut w: Vec<C64> = vec.iter().map(|&c| c / dx.sqrt()).collect();
        for b in &basis {
            let dot = b
                .iter()
                .zip(&w)
                .map(|(x, y)| x.conj() * y)
                .sum::<C64>()
                * dx;
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= dot * bi;
            }
        }
        let norm = (w.iter().map(|c| c.norm_sqr()).sum::<f64>() * dx).sqrt();
        if norm > 1e-6 {
            let inv = 1.0 / norm;
            for wi in &mut w {
                *wi *= inv;
            }
            basis.push(w);
        }
    }
    let m = basis.len();
    if m < n_states {
        return Err(Error::Eigensolver(format!(
            "only {m} independent states recovered, {n_states} requested"
        )));
    }
    let mut h_basis = Vec::with_capacity(m);
    for b in &basis {
        h_basis.push(ws.apply_hamiltonian(b, v, mass));
    }
    let mut a = vec![0.0f64; m * m];
    for i in 0..m {
        for j in i..m {
            let val: f64 = basis[i]
                .iter()
                .zip(&h_basis[j])
                .map(|(x, y)| (x.conj() * y).re)
                .sum::<f64>()
                * dx;
            a[i * m + j] = val;
            a[j * m + i] = val;
        }
    }
    let (ritz_vals, rot) = jacobi_eigen(&a, m);

    let mut wavefns = Vec::with_capacity(n_states);
    let mut energies = Vec::with_capacity(n_states);
    for k in 0..n_states {
        let mut amps = vec![C64::default(); n];
        for (i, b) in basis.iter().enumerate() {
            let w = rot[i * m + k];
            if w != 0.0 {
                for (out, &x) in amps.iter_mut().zip(b) {
                    *out += w * x;
                }
            }
        }
        let mut wf = WaveFunction::new(grid.clone(), amps)?;
        wf.normalize();
        energies.push(ritz_vals[k]);
        wavefns.push(wf);
    }
    let bound = energies.iter().map(|&e| e < 0.0).collect();
    Ok(EigenSolution { energies, states: wavefns, bound, residuals })
}

/// Probability fraction of the finite-difference ground state of `v` at
/// |x| > `x_cut`. Cheap single-state path (no Ritz refinement) used by the
/// three-tweezer depth compensation, which only needs the coarse shape of
/// the ground state.
pub(crate) fn ground_state_outer_fraction(
    xs: &[f64],
    v: &[f64],
    mass: f64,
    dx: f64,
    x_cut: f64,
) -> Result<f64> {
    let kin = 1.0 / (2.0 * mass * dx * dx);
    let diag: Vec<f64> = v.iter().map(|&vi| vi + 2.0 * kin).collect();
    let off = -kin;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for d in &diag {
        lo = lo.min(d - 2.0 * kin);
        hi = hi.max(d + 2.0 * kin);
    }
    let scale = hi.abs().max(lo.abs()).max(1.0);
    let e0 = bisect_eigenvalue(&diag, off, lo, hi, 0, scale);
    let vec = inverse_iteration(&diag, off, e0, scale, &[])?;
    let outer: f64 = vec
        .iter()
        .zip(xs)
        .filter(|&(_, &x)| x.abs() > x_cut)
        .map(|(c, _)| c.norm_sqr())
        .sum();
    let total: f64 = vec.iter().map(|c| c.norm_sqr()).sum();
    Ok(outer / total)
}

/// Number of eigenvalues of the tridiagonal matrix below `x` (Sturm count).
fn sturm_count(diag: &[f64], off: f64, x: f64) -> usize {
    let mut count = 0usize;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    let off2 = off * off;
    for &d in &diag[1..] {
        if q == 0.0 {
            q = 1e-300;
        }
        q = d - x - off2 / q;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn bisect_eigenvalue(diag: &[f64], off: f64, mut lo: f64, mut hi: f64, k: usize, scale: f64) -> f64 {
    let tol = 1e-14 * scale;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if sturm_count(diag, off, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Inverse iteration for the eigenvector at eigenvalue `lambda`, using a
/// partially pivoted tridiagonal LU solve. Prior vectors of a degenerate
/// cluster are projected out each sweep.
fn inverse_iteration(
    diag: &[f64],
    off: f64,
    lambda: f64,
    scale: f64,
    prior: &[&Vec<C64>],
) -> Result<Vec<C64>> {
    let n = diag.len();
    // deterministic pseudo-random start vector
    let mut state = 0x9e37_79b9_7f4a_7c15u64 ^ (lambda.to_bits());
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut x: Vec<f64> = (0..n).map(|_| next()).collect();
    // small shift off the exact eigenvalue keeps the factorization regular
    let shift = lambda + 1e-12 * scale;
    for _ in 0..6 {
        for p in prior {
            let dot: f64 = x.iter().zip(p.iter()).map(|(a, b)| a * b.re).sum();
            for (xi, pi) in x.iter_mut().zip(p.iter()) {
                *xi -= dot * pi.re;
            }
        }
        solve_shifted_tridiag(diag, off, shift, &mut x)?;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Eigensolver("inverse iteration diverged".to_string()));
        }
        let inv = 1.0 / norm;
        for v in &mut x {
            *v *= inv;
        }
    }
    // fix the overall sign so results are deterministic
    let pivot = x
        .iter()
        .cloned()
        .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
    let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
    Ok(x.into_iter().map(|v| C64::new(sign * v, 0.0)).collect())
}

/// Solve (T - shift I) y = x in place for a symmetric tridiagonal T with
/// constant off-diagonal, via LU with partial pivoting.
fn solve_shifted_tridiag(diag: &[f64], off: f64, shift: f64, x: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let mut d: Vec<f64> = diag.iter().map(|&v| v - shift).collect();
    let mut du: Vec<f64> = vec![off; n - 1];
    let mut du2: Vec<f64> = vec![0.0; n.saturating_sub(2)];
    let mut dl: Vec<f64> = vec![off; n - 1];
    let mut swapped = vec![false; n - 1];
    // LU factorization with partial pivoting (dgttrf scheme)
    for i in 0..n - 1 {
        if d[i].abs() >= dl[i].abs() {
            // eliminate without row interchange
            if d[i] == 0.0 {
                d[i] = 1e-300;
            }
            let fact = dl[i] / d[i];
            dl[i] = fact;
            d[i + 1] -= fact * du[i];
            if i + 1 < n - 1 {
                du2[i] = 0.0;
            }
        } else {
            // interchange rows i and i+1
            swapped[i] = true;
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            dl[i] = fact;
            let temp = du[i];
            du[i] = d[i + 1];
            d[i + 1] = temp - fact * d[i + 1];
            if i + 1 < n - 1 {
                du2[i] = du[i + 1];
                du[i + 1] = -fact * du[i + 1];
            }
        }
    }
    if d[n - 1] == 0.0 {
        d[n - 1] = 1e-300;
    }
    // forward solve L y = P x
    for i in 0..n - 1 {
        if !swapped[i] {
            x[i + 1] -= dl[i] * x[i];
        } else {
            let temp = x[i];
            x[i] = x[i + 1];
            x[i + 1] = temp - dl[i] * x[i];
        }
    }
    // back substitution U z = y
    x[n - 1] /= d[n - 1];
    if n >= 2 {
        let i = n - 2;
        x[i] = (x[i] - du[i] * x[i + 1]) / d[i];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (x[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigensolver("singular shifted system".to_string()));
    }
    Ok(())
}

/// Cyclic Jacobi diagonalization of a small symmetric matrix `a` (row-major,
/// m x m). Returns eigenvalues ascending and the eigenvector matrix with
/// eigenvector k in column k.
fn jacobi_eigen(a: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0f64; m * m];
    for i in 0..m {
        v[i * m + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off_norm = 0.0f64;
        for p in 0..m {
            for q in (p + 1)..m {
                off_norm += a[p * m + q] * a[p * m + q];
            }
        }
        if off_norm.sqrt() < 1e-14 * (1.0 + a.iter().fold(0.0f64, |s, &x| s.max(x.abs()))) {
            break;
        }
        for p in 0..m {
            for q in (p + 1)..m {
                let apq = a[p * m + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * m + q] - a[p * m + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..m {
                    let aip = a[i * m + p];
                    let aiq = a[i * m + q];
                    a[i * m + p] = c * aip - s * aiq;
                    a[i * m + q] = s * aip + c * aiq;
                }
                for j in 0..m {
                    let apj = a[p * m + j];
                    let aqj = a[q * m + j];
                    a[p * m + j] = c * apj - s * aqj;
                    a[q * m + j] = s * apj + c * aqj;
                }
                for i in 0..m {
                    let vip = v[i * m + p];
                    let viq = v[i * m + q];
                    v[i * m + p] = c * vip - s * viq;
                    v[i * m + q] = s * vip + c * viq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| a[i * m + i].partial_cmp(&a[j * m + j]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| a[i * m + i]).collect();
    let mut vecs = vec![0.0f64; m * m];
    for (k, &src) in order.iter().enumerate() {
        for i in 0..m {
            vecs[i * m + k] = v[i * m + src];
        }
    }
    (vals, vecs)
}

fn fd_residual(diag: &[f64], off: f64, lambda: f64, vec: &[C64]) -> f64 {
    let n = diag.len();
    let mut sum = 0.0;
    for i in 0..n {
        let mut r = (diag[i] - lambda) * vec[i].re;
        if i > 0 {
            r += off * vec[i - 1].re;
        }
        if i + 1 < n {
            r += off * vec[i + 1].re;
        }
        sum += r * r;
    }
    sum.sqrt()
}

/// Reusable FFT buffers for one grid.
pub struct SpectralWorkspace {
    grid: Arc<SpatialGrid>,
    fft: Arc<dyn rustfft::Fft<f64>>,
    ifft: Arc<dyn rustfft::Fft<f64>>,
    scratch: Vec<C64>,
    buf: Vec<C64>,
}

impl SpectralWorkspace {
    pub fn new(grid: Arc<SpatialGrid>) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(grid.n);
        let ifft = planner.plan_fft_inverse(grid.n);
        let scratch_len = fft.get_inplace_scratch_len().max(ifft.get_inplace_scratch_len());
        SpectralWorkspace {
            scratch: vec![C64::default(); scratch_len],
            buf: vec![C64::default(); grid.n],
            grid,
            fft,
            ifft,
        }
    }

    /// (T_spectral + V) applied to raw amplitudes.
    pub fn apply_hamiltonian(&mut self, amps: &[C64], v: &[f64], mass: f64) -> Vec<C64> {
        let n = self.grid.n;
        self.buf.copy_from_slice(amps);
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (j, a) in self.buf.iter_mut().enumerate() {
            let k = self.grid.k(j);
            *a *= k * k / (2.0 * mass);
        }
        self.ifft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let inv_n = 1.0 / n as f64;
        self.buf
            .iter()
            .zip(amps)
            .zip(v)
            .map(|((t, a), &vi)| t * inv_n + a * vi)
            .collect()
    }

    /// <psi| T_spectral + V |psi> (assumes psi normalized).
    pub fn energy_expectation(&mut self, psi: &WaveFunction, v: &[f64], mass: f64) -> f64 {
        self.buf.copy_from_slice(&psi.amps);
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let dx = self.grid.dx();
        // Parseval: sum |psi_k|^2 / n = sum |psi_j|^2; weight by k^2/2m
        let mut kin = 0.0;
        let mut tot = 0.0;
        for (j, a) in self.buf.iter().enumerate() {
            let k = self.grid.k(j);
            let w = a.norm_sqr();
            kin += w * k * k / (2.0 * mass);
            tot += w;
        }
        let kin = kin / tot;
        let pot: f64 = psi
            .amps
            .iter()
            .zip(v)
            .map(|(a, &vi)| a.norm_sqr() * vi)
            .sum::<f64>()
            * dx;
        kin + pot
    }
}

/// Result of a propagation run.
#[derive(Debug, Clone)]
pub struct PropagationOutcome {
    pub psi: WaveFunction,
    /// True if the boundary density ever exceeded [`BOUNDARY_OVERFLOW`].
    pub grid_overflow: bool,
    pub max_boundary_density: f64,
    pub steps: usize,
}

/// Per-step depth noise source; `factor(step)` multiplies every tweezer
/// depth during that step.
pub trait DepthNoise {
    fn factor(&mut self, step: usize) -> f64;
}

/// Noiseless propagation.
pub struct NoNoise;
impl DepthNoise for NoNoise {
    fn factor(&mut self, _step: usize) -> f64 {
        1.0
    }
}

impl<F: FnMut(usize) -> f64> DepthNoise for F {
    fn factor(&mut self, step: usize) -> f64 {
        self(step)
    }
}

/// Strang-split propagation of `psi` under `scene` from `t0` to `t1` with
/// timestep `dt` (which must divide the interval): half-kinetic, full
/// potential sampled at the step midpoint, half-kinetic.
pub fn propagate(
    psi: &WaveFunction,
    scene: &TweezerScene,
    t0: f64,
    t1: f64,
    dt: f64,
    noise: &mut dyn DepthNoise,
) -> Result<PropagationOutcome> {
    if !(dt > 0.0 && t1 > t0) {
        return Err(Error::invalid(format!("propagate requires t1 > t0 and dt > 0, got [{t0}, {t1}], dt = {dt}")));
    }
    let span = t1 - t0;
    let steps_f = span / dt;
    let steps = steps_f.round() as usize;
    if steps == 0 || ((steps as f64 - steps_f) / steps_f).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "dt = {dt} does not divide the interval {span}"
        )));
    }
    let grid = psi.grid.clone();
    let n = grid.n;
    let mass = scene.species.mass_internal();
    let mut ws = SpectralWorkspace::new(grid.clone());

    // kinetic phase factors for a half and a full step
    let mut kin_half = Vec::with_capacity(n);
    let mut kin_full = Vec::with_capacity(n);
    for j in 0..n {
        let k = grid.k(j);
        let w = k * k / (2.0 * mass);
        kin_half.push(C64::from_polar(1.0, -w * 0.5 * dt));
        kin_full.push(C64::from_polar(1.0, -w * dt));
    }
    let inv_n = 1.0 / n as f64;

    let mut amps = psi.amps.clone();
    let mut vbuf = vec![0.0f64; n];
    let mut max_bd: f64 = psi.boundary_density();

    // leading half kinetic step
    apply_kinetic(&mut amps, &kin_half, inv_n, &mut ws);

    for step in 0..steps {
        let t_mid = t0 + (step as f64 + 0.5) * dt;
        let factor = noise.factor(step);
        scene.fill_potential(grid.xs(), t_mid.min(scene.duration()), factor, &mut vbuf)?;
        for (a, &v) in amps.iter_mut().zip(&vbuf) {
            *a *= C64::from_polar(1.0, -v * dt);
        }
        let kin = if step + 1 == steps { &kin_half } else { &kin_full };
        apply_kinetic(&mut amps, kin, inv_n, &mut ws);
        let bd = amps[0].norm_sqr().max(amps[n - 1].norm_sqr());
        if bd > max_bd {
            max_bd = bd;
        }
    }

    let out = WaveFunction { grid, amps };
    Ok(PropagationOutcome {
        grid_overflow: max_bd > BOUNDARY_OVERFLOW,
        max_boundary_density: max_bd,
        psi: out,
        steps,
    })
}

fn apply_kinetic(amps: &mut [C64], phases: &[C64], inv_n: f64, ws: &mut SpectralWorkspace) {
    ws.fft.process_with_scratch(amps, &mut ws.scratch);
    for (a, p) in amps.iter_mut().zip(phases) {
        *a *= p;
    }
    ws.ifft.process_with_scratch(amps, &mut ws.scratch);
    for a in amps.iter_mut() {
        *a *= inv_n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{ExternalPotential, Layout, TweezerScene};
    use crate::units::{uk_to_internal_energy, Species};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn harmonic_grid_and_potential(mass: f64, omega: f64, n: usize, half: f64) -> (Arc<SpatialGrid>, Vec<f64>) {
        let grid = SpatialGrid::new(-half, half, n).unwrap();
        let v: Vec<f64> = grid
            .xs()
            .iter()
            .map(|&x| 0.5 * mass * omega * omega * x * x)
            .collect();
        (grid, v)
    }

    fn single_tweezer_scene(depth_uk: f64) -> TweezerScene {
        TweezerScene {
            species: Species::k40(),
            depth: uk_to_internal_energy(depth_uk),
            waist: 1.3,
            layout: Layout::Static { centers: vec![0.0], detunings: vec![0.0] },
            external: ExternalPotential::None,
        }
    }

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(SpatialGrid::new(-1.0, 1.0, 255).is_err());
        assert!(SpatialGrid::new(-1.0, 1.0, 300).is_err());
        assert!(SpatialGrid::new(1.0, -1.0, 512).is_err());
    }

    #[test]
    fn harmonic_spectrum_matches_analytics() {
        // natural units: m = 1, omega = 1 -> E_n = n + 1/2
        let (grid, v) = harmonic_grid_and_potential(1.0, 1.0, 2048, 12.0);
        let sol = solve_eigenstates(&grid, &v, 1.0, 6).unwrap();
        for (n, &e) in sol.energies.iter().enumerate() {
            assert_relative_eq!(e, n as f64 + 0.5, max_relative = 1e-4);
        }
    }

    #[test]
    fn eigenstates_are_orthonormal() {
        let (grid, v) = harmonic_grid_and_potential(1.0, 1.0, 1024, 12.0);
        let sol = solve_eigenstates(&grid, &v, 1.0, 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let o = overlap(&sol.states[i], &sol.states[j]).unwrap().norm();
                if i == j {
                    assert_abs_diff_eq!(o, 1.0, epsilon = 1e-8);
                } else {
                    assert!(o < 1e-8, "overlap({i},{j}) = {o:.2e}");
                }
            }
        }
    }

    #[test]
    fn gaussian_tweezer_is_anharmonically_soft() {
        let scene = single_tweezer_scene(116.0);
        let grid = SpatialGrid::for_scene(&scene, 2048).unwrap();
        let v = crate::potential::evaluate_potential(&scene, grid.xs(), 0.0).unwrap();
        let sol = solve_eigenstates(&grid, &v, scene.species.mass_internal(), 2).unwrap();
        let gap = sol.energies[1] - sol.energies[0];
        let omega0 = scene.trap_frequency();
        assert!(gap < omega0, "gap {gap} not softened below harmonic {omega0}");
        assert!(gap > 0.9 * omega0, "gap {gap} implausibly small vs {omega0}");
        assert!(sol.bound.iter().all(|&b| b));
    }

    #[test]
    fn unbound_states_flagged() {
        // shallow trap holds few states; ask for many and expect E >= 0 flags
        let scene = single_tweezer_scene(0.5);
        let grid = SpatialGrid::for_scene(&scene, 1024).unwrap();
        let v = crate::potential::evaluate_potential(&scene, grid.xs(), 0.0).unwrap();
        let sol = solve_eigenstates(&grid, &v, scene.species.mass_internal(), 12).unwrap();
        assert!(sol.bound[0]);
        assert!(sol.bound.iter().any(|b| !b));
    }

    #[test]
    fn symmetric_double_well_degeneracy_and_parity() {
        let depth = uk_to_internal_energy(116.0);
        let scene = TweezerScene {
            species: Species::k40(),
            depth,
            waist: 1.3,
            layout: Layout::Static { centers: vec![-3.5, 3.5], detunings: vec![0.0, 0.0] },
            external: ExternalPotential::None,
        };
        let grid = SpatialGrid::for_scene(&scene, 2048).unwrap();
        let v = crate::potential::evaluate_potential(&scene, grid.xs(), 0.0).unwrap();
        let m = scene.species.mass_internal();
        let sol = solve_eigenstates(&grid, &v, m, 2).unwrap();
        let gap = sol.energies[1] - sol.energies[0];
        let omega0 = scene.trap_frequency();
        assert!(gap.abs() < 1e-3 * omega0, "splitting {gap} too large for d = 7 um");
        // the subspace is spanned by states localized at +-3.5 um: the
        // position operator restricted to it must have eigenvalues near the
        // two centers (the s/a mixing angle itself is arbitrary at exact
        // degeneracy)
        let dx = grid.dx();
        let xij = |a: &WaveFunction, b: &WaveFunction| -> f64 {
            a.amps
                .iter()
                .zip(&b.amps)
                .zip(grid.xs())
                .map(|((p, q), &x)| (p.conj() * q).re * x)
                .sum::<f64>()
                * dx
        };
        let x00 = xij(&sol.states[0], &sol.states[0]);
        let x11 = xij(&sol.states[1], &sol.states[1]);
        let x01 = xij(&sol.states[0], &sol.states[1]);
        let mean = 0.5 * (x00 + x11);
        let r = (0.25 * (x00 - x11).powi(2) + x01 * x01).sqrt();
        assert_abs_diff_eq!(mean + r, 3.5, epsilon = 0.01);
        assert_abs_diff_eq!(mean - r, -3.5, epsilon = 0.01);
    }

    #[test]
    fn free_gaussian_dispersion() {
        // V = 0: sigma_x(t)^2 = sigma_0^2 (1 + (t / (2 m sigma_0^2))^2)
        let grid = SpatialGrid::new(-40.0, 40.0, 2048).unwrap();
        let scene = TweezerScene {
            species: Species::k40(),
            depth: 1.0,
            waist: 1.0,
            // a fully detuned tweezer contributes nothing: free particle
            layout: Layout::Static { centers: vec![0.0], detunings: vec![1.0] },
            external: ExternalPotential::None,
        };
        let m = scene.species.mass_internal();
        let s0 = 1.5;
        let psi = WaveFunction::gaussian(grid.clone(), 0.0, s0, 0.0);
        let t = 2.0;
        let out = propagate(&psi, &scene, 0.0, t, 1e-3, &mut NoNoise).unwrap();
        let expected = s0 * (1.0 + (t / (2.0 * m * s0 * s0)).powi(2)).sqrt();
        assert_relative_eq!(out.psi.sigma_x(), expected, max_relative = 1e-6);
        assert!(!out.grid_overflow);
    }

    #[test]
    fn eigenstate_is_stationary() {
        let scene = single_tweezer_scene(116.0);
        let grid = SpatialGrid::for_scene(&scene, 1024).unwrap();
        let v = crate::potential::evaluate_potential(&scene, grid.xs(), 0.0).unwrap();
        let m = scene.species.mass_internal();
        let sol = solve_eigenstates(&grid, &v, m, 3).unwrap();
        for n in [0usize, 2] {
            let out = propagate(&sol.states[n], &scene, 0.0, 10.0, 2e-4, &mut NoNoise).unwrap();
            let f = overlap(&sol.states[n], &out.psi).unwrap().norm();
            assert!(f > 0.9999, "stationarity broken for n = {n}: |f| = {f}");
            assert_abs_diff_eq!(out.psi.norm_sq(), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn displaced_packet_oscillates_at_trap_frequency() {
        // a wide deep Gaussian is harmonic near its center; a slightly
        // displaced ground state sloshes at the trap frequency
        let mass = 1.0;
        let grid = SpatialGrid::new(-14.0, 14.0, 1024).unwrap();
        let scene = TweezerScene {
            species: Species::new("unit", crate::units::MASS_UNIT).unwrap(),
            depth: 5000.0,
            waist: 8.0,
            layout: Layout::Static { centers: vec![0.0], detunings: vec![0.0] },
            external: ExternalPotential::None,
        };
        let w0 = scene.trap_frequency();
        let x0 = 0.05;
        // ground state of the harmonic approximation has position spread
        // sqrt(1/(2 m w0)), which is the sigma_x of gaussian()
        let psi = WaveFunction::gaussian(grid, x0, (0.5 / (mass * w0)).sqrt(), 0.0);
        let period = 2.0 * std::f64::consts::PI / w0;
        let steps = 2000;
        let dt = period / steps as f64;
        let half = propagate(&psi, &scene, 0.0, period / 2.0, dt, &mut NoNoise).unwrap();
        assert_relative_eq!(half.psi.expectation_x(), -x0, max_relative = 2e-3);
        let full = propagate(&half.psi, &scene, period / 2.0, period, dt, &mut NoNoise).unwrap();
        assert_abs_diff_eq!(full.psi.expectation_x() / x0, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn overlap_normalization_and_orthogonality() {
        let scene = single_tweezer_scene(116.0);
        let grid = SpatialGrid::for_scene(&scene, 1024).unwrap();
        let v = crate::potential::evaluate_potential(&scene, grid.xs(), 0.0).unwrap();
        let sol = solve_eigenstates(&grid, &v, scene.species.mass_internal(), 2).unwrap();
        assert_abs_diff_eq!(overlap(&sol.states[0], &sol.states[0]).unwrap().re, 1.0, epsilon = 1e-8);
        assert!(overlap(&sol.states[0], &sol.states[1]).unwrap().norm() < 1e-8);
        let other_grid = SpatialGrid::new(-10.0, 10.0, 512).unwrap();
        let other = WaveFunction::gaussian(other_grid, 0.0, 1.0, 0.0);
        assert!(overlap(&sol.states[0], &other).is_err());
    }

    #[test]
    fn imprint_phase_identity_cases() {
        let grid = SpatialGrid::new(-10.0, 10.0, 512).unwrap();
        let psi = WaveFunction::gaussian(grid.clone(), 2.0, 1.0, 0.0);
        let mut a = psi.clone();
        imprint_phase(&mut a, 0.0, 0.0);
        let mut b = psi.clone();
        imprint_phase(&mut b, 2.0 * std::f64::consts::PI, 0.0);
        for (x, (ya, yb)) in psi.amps.iter().zip(a.amps.iter().zip(&b.amps)) {
            assert!((x - ya).norm() == 0.0);
            assert!((x - yb).norm() < 1e-12);
        }
        assert_abs_diff_eq!(b.norm_sq(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn port_populations_localized_and_error_paths() {
        let depth = uk_to_internal_energy(116.0);
        let scene = TweezerScene {
            species: Species::k40(),
            depth,
            waist: 1.3,
            layout: Layout::Static { centers: vec![-3.0, 3.0], detunings: vec![0.0, 0.0] },
            external: ExternalPotential::None,
        };
        let grid = SpatialGrid::for_scene(&scene, 1024).unwrap();
        let psi = WaveFunction::gaussian(grid.clone(), -3.0, 0.1, 0.0);
        let pops = port_populations(&psi, &scene, 0.0).unwrap();
        assert!(pops[0] > 1.0 - 1e-6, "left population {}", pops[0]);
        assert!(pops[1] < 1e-6);
        assert_abs_diff_eq!(pops[0] + pops[1], 1.0, epsilon = 1e-8);

        let close = TweezerScene {
            layout: Layout::Static { centers: vec![-1.0, 1.0], detunings: vec![0.0, 0.0] },
            ..scene
        };
        assert!(port_populations(&psi, &close, 0.0).is_err());
    }

    #[test]
    fn propagator_phase_matches_eigenenergy() {
        let scene = single_tweezer_scene(116.0);
        let grid = SpatialGrid::for_scene(&scene, 1024).unwrap();
        let v = crate::potential::evaluate_potential(&scene, grid.xs(), 0.0).unwrap();
        let m = scene.species.mass_internal();
        let sol = solve_eigenstates(&grid, &v, m, 2).unwrap();
        let t = 0.5;
        for n in 0..2 {
            let out = propagate(&sol.states[n], &scene, 0.0, t, 1e-5, &mut NoNoise).unwrap();
            let f = overlap(&sol.states[n], &out.psi).unwrap();
            let measured = -f.arg(); // exp(-i E t)
            let expected = (sol.energies[n] * t).rem_euclid(2.0 * std::f64::consts::PI);
            let measured = measured.rem_euclid(2.0 * std::f64::consts::PI);
            let mut diff = (measured - expected).abs();
            diff = diff.min(2.0 * std::f64::consts::PI - diff);
            let rate = diff / t;
            assert!(rate < 1e-4, "phase mismatch for n = {n}: {rate:.2e} rad/ms");
        }
    }

    #[test]
    fn rejects_nondividing_dt() {
        let scene = single_tweezer_scene(116.0);
        let grid = SpatialGrid::for_scene(&scene, 512).unwrap();
        let psi = WaveFunction::gaussian(grid, 0.0, 0.2, 0.0);
        assert!(propagate(&psi, &scene, 0.0, 1.0, 0.3, &mut NoNoise).is_err());
    }
}
