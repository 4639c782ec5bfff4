//! Monte Carlo experiment pipeline: the realization lookup table, the
//! experimental scenarios, fringe scans, phase fitting, and uncertainty /
//! fail-ratio estimation.
//!
//! The expensive part — full loop simulations with amplitude-noise
//! realizations at a grid of deterministic phases — is done once and stored
//! as a lookup table. A fringe scan then only draws shot-noise phases,
//! selects the nearest stored realization, and Bernoulli-samples exit ports
//! per atom, so repeating campaigns is cheap.

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::noise::{shot_noise_phase, NoiseSpec};
use crate::protocols::{derive_seed, run_loop_projected, LoopSpec, SplitterKind};

/// Number of equally spaced deterministic phases in a fringe scan.
pub const FRINGE_PHASES: usize = 20;

/// An experimental scenario: how often the fringe is sampled and with how
/// many atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub label: String,
    /// Repetitions per deterministic phase.
    pub repetitions: usize,
    /// Atoms in the tweezer per run; they share one noise realization.
    pub atoms_per_run: usize,
    /// Duration of each run [s].
    pub t: f64,
}

impl Scenario {
    pub fn one() -> Self {
        Scenario { label: "scenario 1".into(), repetitions: 10, atoms_per_run: 1, t: 10.0 }
    }
    pub fn two() -> Self {
        Scenario { label: "scenario 2".into(), repetitions: 10, atoms_per_run: 10, t: 10.0 }
    }
    pub fn three() -> Self {
        Scenario { label: "scenario 3".into(), repetitions: 285, atoms_per_run: 100, t: 10.0 }
    }
    pub fn four() -> Self {
        Scenario { label: "scenario 4".into(), repetitions: 66, atoms_per_run: 100, t: 60.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 || self.atoms_per_run < 1 {
            return Err(Error::invalid(format!(
                "scenario counts must be >= 1, got repetitions = {}, atoms = {}",
                self.repetitions, self.atoms_per_run
            )));
        }
        if !(self.t > 0.0) {
            return Err(Error::invalid(format!("run duration must be > 0, got {}", self.t)));
        }
        Ok(())
    }

    /// Total atom detections in one fringe scan.
    pub fn total_detections(&self) -> usize {
        FRINGE_PHASES * self.repetitions * self.atoms_per_run
    }

    /// Wall-clock metadata of the physical experiment [s]: runs times
    /// (run duration + per-run overhead).
    pub fn total_runtime(&self, overhead: f64) -> f64 {
        (FRINGE_PHASES * self.repetitions) as f64 * (self.t + overhead)
    }
}

/// Loop spec the Table II campaigns are run with: the reference splitter at
/// campaign resolution (512 grid points, coarser step — convergence checked
/// against the reference resolution), a plain hold with no external
/// potential. The physical phase enters through the lookup in the fringe
/// scan, not through the table.
pub fn campaign_loop_spec(kind: SplitterKind) -> LoopSpec {
    let mut splitter = match kind {
        SplitterKind::TwoTweezer => crate::protocols::SplitterSpec::reference_two_tweezer(),
        SplitterKind::ThreeTweezer => crate::protocols::SplitterSpec::reference_three_tweezer(),
    };
    splitter.grid_points = 512;
    // port probabilities at this step agree with the reference resolution
    // to ~2e-4, well below the fringe uncertainties of interest
    splitter.dt = 2e-3;
    LoopSpec {
        hold_t: 10.0,
        hold_separation: 4.0 * splitter.waist,
        phi_det: 0.0,
        hold_external: crate::potential::ExternalPotential::None,
        splitter,
    }
}

/// One stored loop realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    /// Deterministic phase of this realization [rad].
    pub phase: f64,
    /// Noise stream seed the realization was simulated with.
    pub seed: u64,
    /// Output port probabilities after the combiner (left to right).
    pub ports: Vec<f64>,
    /// Probability that the split failed (central-port detection,
    /// three-tweezer only; 0 for two tweezers).
    pub failure_probability: f64,
    pub grid_overflow: bool,
}

/// Lookup table of loop realizations at uniformly spaced deterministic
/// phases. Entries are immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationTable {
    pub kind: SplitterKind,
    /// Hex SHA-256 of the loop spec (with the per-entry phase zeroed).
    pub spec_hash: String,
    /// Hex SHA-256 of the noise spec (seed included).
    pub noise_hash: String,
    pub entries: Vec<TableEntry>,
}

/// Hex SHA-256 of the canonical JSON of the loop spec, with the per-entry
/// deterministic phase zeroed (the table spans all phases).
pub fn spec_hash(spec: &LoopSpec) -> String {
    let canonical = LoopSpec { phi_det: 0.0, ..spec.clone() };
    let json = serde_json::to_string(&canonical).expect("loop spec serializes");
    hex(&Sha256::digest(json.as_bytes()))
}

/// Hex SHA-256 of the canonical JSON of the noise spec.
pub fn noise_hash(noise: &NoiseSpec) -> String {
    let json = serde_json::to_string(noise).expect("noise spec serializes");
    hex(&Sha256::digest(json.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Build the lookup table: `n_real` full loop simulations at uniformly
/// spaced deterministic phases, each with a fresh amplitude-noise
/// realization derived from the noise spec's seed. The shot-noise phase is
/// not included here — it is drawn per run during the fringe scan.
pub fn build_realization_table(
    spec: &LoopSpec,
    noise: &NoiseSpec,
    n_real: usize,
) -> Result<RealizationTable> {
    spec.validate()?;
    noise.validate()?;
    if n_real < 100 {
        return Err(Error::invalid(format!("n_real must be >= 100, got {n_real}")));
    }
    let entries: Vec<TableEntry> = (0..n_real)
        .into_par_iter()
        .map(|i| {
            let phase = TAU * i as f64 / n_real as f64;
            let seed = derive_seed(noise.seed, i as u64);
            let entry_spec = LoopSpec { phi_det: phase, ..spec.clone() };
            // suppress the lumped shot-noise phase: the hold phase scales
            // with the hold depth, so a vanishing depth zeroes it without
            // touching the amplitude-noise statistics
            let entry_noise = NoiseSpec { hold_depth_uk: 1e-300, ..noise.clone() };
            let out = run_loop_projected(&entry_spec, &entry_noise, seed)?;
            Ok(TableEntry {
                phase,
                seed,
                ports: out.ports,
                failure_probability: out.central_population.clamp(0.0, 1.0),
                grid_overflow: out.grid_overflow,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RealizationTable {
        kind: spec.splitter.kind,
        spec_hash: spec_hash(spec),
        noise_hash: noise_hash(noise),
        entries,
    })
}

const TABLE_MAGIC: &[u8; 8] = b"TWZTABLE";
const TABLE_VERSION: u32 = 1;

impl RealizationTable {
    /// Entry with the smallest circular phase distance to `phase`; ties
    /// broken toward the lower stored phase.
    pub fn nearest_entry(&self, phase: f64) -> &TableEntry {
        let p = phase.rem_euclid(TAU);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, e) in self.entries.iter().enumerate() {
            let r = (e.phase - p).rem_euclid(TAU);
            let d = r.min(TAU - r);
            if d + 1e-12 < best_d {
                best = i;
                best_d = d;
            } else if (d - best_d).abs() <= 1e-12 && e.phase < self.entries[best].phase {
                best = i;
            }
        }
        &self.entries[best]
    }

    /// Serialized payload (everything the content hash covers).
    fn payload(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(TABLE_MAGIC);
        buf.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        buf.push(match self.kind {
            SplitterKind::TwoTweezer => 2,
            SplitterKind::ThreeTweezer => 3,
        });
        buf.extend_from_slice(self.spec_hash.as_bytes());
        buf.extend_from_slice(self.noise_hash.as_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            buf.extend_from_slice(&e.phase.to_le_bytes());
            buf.extend_from_slice(&e.seed.to_le_bytes());
            buf.extend_from_slice(&e.failure_probability.to_le_bytes());
            buf.push(e.grid_overflow as u8);
            buf.push(e.ports.len() as u8);
            for p in &e.ports {
                buf.extend_from_slice(&p.to_le_bytes());
            }
        }
        buf
    }

    /// Hex SHA-256 of the serialized payload.
    pub fn content_hash(&self) -> String {
        hex(&Sha256::digest(self.payload()))
    }

    /// File name the table persists under, keyed by spec hash, noise hash
    /// and size.
    pub fn file_name(&self) -> String {
        format!(
            "table-{}-{}-{}.bin",
            &self.spec_hash[..16],
            &self.noise_hash[..16],
            self.entries.len()
        )
    }

    /// Write the versioned binary file (payload + trailing content hash)
    /// into `dir`; returns the path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Persistence(format!("creating {}: {e}", dir.display())))?;
        let path = dir.join(self.file_name());
        let payload = self.payload();
        let digest = Sha256::digest(&payload);
        let mut f = std::fs::File::create(&path)
            .map_err(|e| Error::Persistence(format!("creating {}: {e}", path.display())))?;
        f.write_all(&payload)
            .and_then(|()| f.write_all(&digest))
            .map_err(|e| Error::Persistence(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }

    /// Read a table back; the trailing content hash must match.
    pub fn load(path: &Path) -> Result<RealizationTable> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::Persistence(format!("reading {}: {e}", path.display())))?;
        if buf.len() < 32 {
            return Err(Error::Persistence(format!("{} is truncated", path.display())));
        }
        let (payload, stored_hash) = buf.split_at(buf.len() - 32);
        if Sha256::digest(payload).as_slice() != stored_hash {
            return Err(Error::HashMismatch(path.display().to_string()));
        }
        let mut cur = Cursor { buf: payload, pos: 0, path };
        let magic = cur.take(8)?;
        if magic != TABLE_MAGIC {
            return Err(Error::Persistence(format!("{} is not a table file", path.display())));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != TABLE_VERSION {
            return Err(Error::Persistence(format!(
                "{}: unsupported table version {version}",
                path.display()
            )));
        }
        let kind = match cur.u8()? {
            2 => SplitterKind::TwoTweezer,
            3 => SplitterKind::ThreeTweezer,
            other => {
                return Err(Error::Persistence(format!(
                    "{}: unknown splitter kind tag {other}",
                    path.display()
                )))
            }
        };
        let spec_hash = String::from_utf8(cur.take(64)?.to_vec())
            .map_err(|_| Error::Persistence(format!("{}: bad spec hash", path.display())))?;
        let noise_hash = String::from_utf8(cur.take(64)?.to_vec())
            .map_err(|_| Error::Persistence(format!("{}: bad noise hash", path.display())))?;
        let n = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let phase = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            let seed = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            let failure_probability = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            let grid_overflow = cur.u8()? != 0;
            let n_ports = cur.u8()? as usize;
            let mut ports = Vec::with_capacity(n_ports);
            for _ in 0..n_ports {
                ports.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
            }
            entries.push(TableEntry { phase, seed, ports, failure_probability, grid_overflow });
        }
        Ok(RealizationTable { kind, spec_hash, noise_hash, entries })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Persistence(format!("{} is truncated", self.path.display())));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Load a persisted table matching (spec, noise, n_real) from `cache_dir`,
/// or build and persist it. The second return value is true if the table
/// was (re)built.
pub fn load_or_build(
    cache_dir: &Path,
    spec: &LoopSpec,
    noise: &NoiseSpec,
    n_real: usize,
) -> Result<(RealizationTable, bool)> {
    let key = RealizationTable {
        kind: spec.splitter.kind,
        spec_hash: spec_hash(spec),
        noise_hash: noise_hash(noise),
        entries: Vec::new(),
    };
    let path = cache_dir.join(format!(
        "table-{}-{}-{}.bin",
        &key.spec_hash[..16],
        &key.noise_hash[..16],
        n_real
    ));
    if path.exists() {
        let table = RealizationTable::load(&path)?;
        if table.spec_hash != key.spec_hash
            || table.noise_hash != key.noise_hash
            || table.entries.len() != n_real
        {
            return Err(Error::HashMismatch(path.display().to_string()));
        }
        return Ok((table, false));
    }
    let table = build_realization_table(spec, noise, n_real)?;
    table.save(cache_dir)?;
    Ok((table, true))
}

/// Counts accumulated at one deterministic phase of a fringe scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub phi_det: f64,
    pub atoms_total: u64,
    /// Atoms detected in a port other than the input port.
    pub atoms_opposite: u64,
    pub runs_total: u64,
    /// Runs rejected by the central-port error indicator.
    pub runs_failed: u64,
}

/// Simulate one fringe scan against the lookup table.
///
/// For each of the 20 deterministic phases and each repetition: draw one
/// shot-noise phase (shared by all atoms of the run), pick the stored
/// realization nearest in circular phase to the total phase, re-sample the
/// split-failure indicator, and Bernoulli-sample an exit port per atom.
pub fn run_fringe_scan(
    table: &RealizationTable,
    scenario: &Scenario,
    noise: &NoiseSpec,
    phi_physical: f64,
    seed: u64,
) -> Result<Vec<FringePoint>> {
    scenario.validate()?;
    noise.validate()?;
    if table.entries.is_empty() {
        return Err(Error::invalid("realization table is empty".to_string()));
    }
    // the shot-noise spread depends on the scenario's run duration
    let shot_noise = NoiseSpec { hold_t: scenario.t, ..noise.clone() };
    let opposite_ports: Vec<usize> = match table.kind {
        SplitterKind::TwoTweezer => vec![1],
        SplitterKind::ThreeTweezer => vec![0, 2],
    };
    let mut points = Vec::with_capacity(FRINGE_PHASES);
    for k in 0..FRINGE_PHASES {
        let phi_det = TAU * k as f64 / FRINGE_PHASES as f64;
        let mut point = FringePoint {
            phi_det,
            atoms_total: 0,
            atoms_opposite: 0,
            runs_total: 0,
            runs_failed: 0,
        };
        for rep in 0..scenario.repetitions {
            let run_seed = derive_seed(seed, (k * scenario.repetitions + rep) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
            let phi_shot = shot_noise_phase(&shot_noise, &mut rng);
            let entry = table.nearest_entry(phi_det + phi_physical + phi_shot);
            point.runs_total += 1;
            if rng.gen::<f64>() < entry.failure_probability {
                point.runs_failed += 1;
                continue;
            }
            let total: f64 = entry.ports.iter().sum();
            let p_opp: f64 =
                opposite_ports.iter().map(|&i| entry.ports[i]).sum::<f64>() / total.max(1e-300);
            for _ in 0..scenario.atoms_per_run {
                point.atoms_total += 1;
                if rng.gen::<f64>() < p_opp {
                    point.atoms_opposite += 1;
                }
            }
        }
        points.push(point);
    }
    Ok(points)
}

/// Result of fitting A sin^2((phi_det + phase)/2) + B to fringe counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    /// Fitted phase in (-pi, pi].
    pub phase: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// Standard error of the amplitude from the fit covariance.
    pub amplitude_sigma: f64,
    pub converged: bool,
    /// Degenerate fringe: non-convergence or amplitude consistent with
    /// zero at two standard errors.
    pub undefined: bool,
    pub sse: f64,
}

/// Least-squares fit of the opposite-port fraction to
/// A sin^2((phi_det + phase)/2) + B by damped Gauss-Newton.
pub fn fit_fringe(points: &[FringePoint]) -> Result<FringeFit> {
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.atoms_total > 0)
        .map(|p| (p.phi_det, p.atoms_opposite as f64 / p.atoms_total as f64))
        .collect();
    let mut distinct: Vec<f64> = data.iter().map(|d| d.0).collect();
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if distinct.len() < 3 {
        return Err(Error::Fit(format!(
            "need >= 3 distinct phases with counts, got {}",
            distinct.len()
        )));
    }

    // coarse grid over the phase; A and B are linear at fixed phase
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0); // (sse, a, b, p)
    for j in 0..64 {
        let p = TAU * j as f64 / 64.0;
        if let Some((a, b, sse)) = linear_ab(&data, p) {
            if sse < best.0 {
                best = (sse, a, b, p);
            }
        }
    }
    let (mut sse, mut a, mut b, mut p) = best;

    // Levenberg-Marquardt refinement
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..500 {
        let (jtj, jtr) = normal_equations(&data, a, b, p);
        let mut damped = jtj;
        for i in 0..3 {
            damped[i][i] *= 1.0 + lambda;
        }
        let Some(step) = solve3(damped, jtr) else {
            lambda *= 5.0;
            continue;
        };
        let (a2, b2, p2) = (a + step[0], b + step[1], p + step[2]);
        let sse2 = sum_sq(&data, a2, b2, p2);
        if sse2 <= sse {
            let delta = step.iter().map(|s| s * s).sum::<f64>().sqrt();
            let improved = sse - sse2;
            a = a2;
            b = b2;
            p = p2;
            sse = sse2;
            lambda = (lambda / 3.0).max(1e-12);
            if delta < 1e-10 || improved < 1e-15 {
                converged = true;
                break;
            }
        } else {
            lambda *= 5.0;
            if lambda > 1e12 {
                break;
            }
        }
    }

    // canonical form: positive amplitude, phase in (-pi, pi]
    if a < 0.0 {
        a = -a;
        p += std::f64::consts::PI;
        b -= a;
    }
    p = wrap_phase(p);

    // amplitude standard error from the Gauss-Newton covariance
    let (jtj, _) = normal_equations(&data, a, b, p);
    let dof = data.len().saturating_sub(3).max(1) as f64;
    let s2 = sse / dof;
    let amplitude_sigma = covariance00(jtj).map(|c| (s2 * c).sqrt()).unwrap_or(f64::INFINITY);

    let undefined = !converged || !a.is_finite() || a <= 2.0 * amplitude_sigma;
    Ok(FringeFit { phase: p, amplitude: a, offset: b, amplitude_sigma, converged, undefined, sse })
}

/// Wrap to (-pi, pi].
pub fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    if w > std::f64::consts::PI {
        w - TAU
    } else {
        w
    }
}

fn model(phi: f64, a: f64, b: f64, p: f64) -> f64 {
    let s = (0.5 * (phi + p)).sin();
    a * s * s + b
}

fn sum_sq(data: &[(f64, f64)], a: f64, b: f64, p: f64) -> f64 {
    data.iter().map(|&(phi, y)| (y - model(phi, a, b, p)).powi(2)).sum()
}

/// Least-squares (A, B) at fixed phase; returns (A, B, SSE).
fn linear_ab(data: &[(f64, f64)], p: f64) -> Option<(f64, f64, f64)> {
    let n = data.len() as f64;
    let (mut ss, mut s1, mut sy, mut ssy) = (0.0, 0.0, 0.0, 0.0);
    for &(phi, y) in data {
        let s = (0.5 * (phi + p)).sin().powi(2);
        ss += s * s;
        s1 += s;
        sy += y;
        ssy += s * y;
    }
    let det = ss * n - s1 * s1;
    if det.abs() < 1e-12 {
        return None;
    }
    let a = (ssy * n - s1 * sy) / det;
    let b = (ss * sy - s1 * ssy) / det;
    Some((a, b, sum_sq(data, a, b, p)))
}

/// J^T J and J^T r for the current parameters.
fn normal_equations(data: &[(f64, f64)], a: f64, b: f64, p: f64) -> ([[f64; 3]; 3], [f64; 3]) {
    let mut jtj = [[0.0; 3]; 3];
    let mut jtr = [0.0; 3];
    for &(phi, y) in data {
        let s = (0.5 * (phi + p)).sin();
        let j = [s * s, 1.0, 0.5 * a * (phi + p).sin()];
        let r = y - model(phi, a, b, p);
        for i in 0..3 {
            jtr[i] += j[i] * r;
            for k in 0..3 {
                jtj[i][k] += j[i] * j[k];
            }
        }
    }
    (jtj, jtr)
}

/// Solve a 3x3 system by Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for col in (0..3).rev() {
        let mut v = rhs[col];
        for k in col + 1..3 {
            v -= m[col][k] * x[k];
        }
        x[col] = v / m[col][col];
    }
    Some(x)
}

/// (J^T J)^{-1}[0][0] — the amplitude variance factor.
fn covariance00(jtj: [[f64; 3]; 3]) -> Option<f64> {
    let x = solve3(jtj, [1.0, 0.0, 0.0])?;
    if x[0].is_finite() && x[0] >= 0.0 {
        Some(x[0])
    } else {
        None
    }
}

/// Aggregated campaign statistics for one (scenario, noise, splitter) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub scenario: Scenario,
    pub eta: f64,
    pub kind: SplitterKind,
    /// Physical phase the campaigns were run at [rad].
    pub physical_phase: f64,
    /// Circular mean of the fitted phases [rad].
    pub fitted_phase: f64,
    /// Standard deviation of (fitted - physical) phase [rad]; None when the
    /// cell is undefined.
    pub uncertainty: Option<f64>,
    /// Fraction of runs rejected by the error indicator.
    pub fail_ratio: f64,
    /// More than half of the campaign fits were degenerate.
    pub undefined: bool,
    pub n_campaigns: usize,
}

/// Repeat fringe scan + fit `n_campaigns` times with independent seeds; the
/// uncertainty is the standard deviation of (fitted - physical) phase. The
/// physical phase is drawn once from the noise spec's seed.
pub fn estimate_uncertainty(
    table: &RealizationTable,
    scenario: &Scenario,
    noise: &NoiseSpec,
    n_campaigns: usize,
) -> Result<CampaignResult> {
    scenario.validate()?;
    noise.validate()?;
    if n_campaigns < 20 {
        return Err(Error::invalid(format!("n_campaigns must be >= 20, got {n_campaigns}")));
    }
    let master = derive_seed(noise.seed, 0xca3f_ba11);
    let phi_physical = ChaCha8Rng::seed_from_u64(derive_seed(master, 0)).gen::<f64>() * TAU;

    let runs: Vec<(FringeFit, u64, u64)> = (0..n_campaigns)
        .into_par_iter()
        .map(|c| {
            let scan_seed = derive_seed(master, 1 + c as u64);
            let points = run_fringe_scan(table, scenario, noise, phi_physical, scan_seed)?;
            let fit = fit_fringe(&points)?;
            let failed: u64 = points.iter().map(|p| p.runs_failed).sum();
            let total: u64 = points.iter().map(|p| p.runs_total).sum();
            Ok((fit, failed, total))
        })
        .collect::<Result<_>>()?;

    let failed: u64 = runs.iter().map(|r| r.1).sum();
    let total: u64 = runs.iter().map(|r| r.2).sum();
    let defined: Vec<&FringeFit> = runs.iter().filter(|r| !r.0.undefined).map(|r| &r.0).collect();
    let undefined = 2 * defined.len() < n_campaigns;

    // circular mean of fitted phases and spread of the wrapped errors
    let (mut cs, mut sn) = (0.0, 0.0);
    for f in &defined {
        cs += f.phase.cos();
        sn += f.phase.sin();
    }
    let fitted_phase = sn.atan2(cs);
    let uncertainty = if undefined || defined.len() < 2 {
        None
    } else {
        let errs: Vec<f64> =
            defined.iter().map(|f| wrap_phase(f.phase - phi_physical)).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let var =
            errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (errs.len() - 1) as f64;
        Some(var.sqrt())
    };

    Ok(CampaignResult {
        scenario: scenario.clone(),
        eta: noise.eta,
        kind: table.kind,
        physical_phase: wrap_phase(phi_physical),
        fitted_phase,
        uncertainty,
        fail_ratio: failed as f64 / total.max(1) as f64,
        undefined: undefined || uncertainty.is_none(),
        n_campaigns,
    })
}
