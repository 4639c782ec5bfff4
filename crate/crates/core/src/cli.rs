//! Config-driven pipelines behind the command-line binary: schema-validated
//! run configs, artifact writing (CSV/JSON), run manifests, and bit-exact
//! replay.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::applications::{
    big_g_phases, cp_phase_map, gravity_phase, kc_phase, BigGCase, CpCase, SensitivityCase,
};
use crate::campaign::{
    campaign_loop_spec, estimate_uncertainty, load_or_build, Scenario,
};
use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::potential::{CutSphere, ExternalPotential};
use crate::protocols::{
    run_combiner, run_loop, run_splitter, spectrum_trace, LoopSpec, SplitterKind, SplitterSpec,
};
use crate::solver::imprint_phase;
use crate::units::{laser_angular_frequency, uk_to_internal_energy, Species, G_EARTH};

/// Current config schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the realization-table cache directory.
pub const CACHE_DIR_ENV: &str = "TWEEZERSIM_CACHE_DIR";

/// A complete, schema-validated run configuration. One section must be
/// present and must match `command`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// One of: split, combine, loop, spectrum, table, campaign, cp-map,
    /// big-g, sensitivity.
    pub command: String,
    /// Master seed for every stochastic stage of the run.
    #[serde(default)]
    pub seed: u64,
    /// Default output directory (the --out flag overrides it).
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub split: Option<SplitterParams>,
    #[serde(default)]
    pub combine: Option<CombineParams>,
    #[serde(default, rename = "loop")]
    pub loop_: Option<LoopParams>,
    #[serde(default)]
    pub spectrum: Option<SpectrumParams>,
    #[serde(default)]
    pub table: Option<TableParams>,
    #[serde(default)]
    pub campaign: Option<CampaignParams>,
    #[serde(default)]
    pub cp_map: Option<CpMapParams>,
    #[serde(default)]
    pub big_g: Option<BigGParams>,
    #[serde(default)]
    pub sensitivity: Option<SensitivityParams>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        const COMMANDS: &[&str] = &[
            "split",
            "combine",
            "loop",
            "spectrum",
            "table",
            "campaign",
            "cp-map",
            "big-g",
            "sensitivity",
        ];
        if !COMMANDS.contains(&cfg.command.as_str()) {
            return Err(Error::Config(format!("unknown command {:?}", cfg.command)));
        }
        Ok(cfg)
    }
}

fn species_from_name(name: &str) -> Result<Species> {
    match name.to_ascii_lowercase().as_str() {
        "40k" | "k40" | "k" => Ok(Species::k40()),
        "171yb" | "yb171" | "yb" => Ok(Species::yb171()),
        other => Err(Error::Config(format!("unknown species {other:?}"))),
    }
}

/// Splitter parameters: a reference spec selected by `kind` with optional
/// field overrides. Lengths in um, durations in ms, depths in uK.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitterParams {
    /// "two" or "three".
    pub kind: String,
    /// Initial vibrational index.
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub grid_points: Option<usize>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub d_min: Option<f64>,
    #[serde(default)]
    pub d_max: Option<f64>,
    #[serde(default)]
    pub t_proc: Option<f64>,
    /// Relative detuning amplitude (fraction of the depth).
    #[serde(default)]
    pub delta_max: Option<f64>,
    #[serde(default)]
    pub depth_uk: Option<f64>,
    #[serde(default)]
    pub waist: Option<f64>,
    #[serde(default)]
    pub species: Option<String>,
}

impl SplitterParams {
    pub fn kind(&self) -> Result<SplitterKind> {
        match self.kind.as_str() {
            "two" => Ok(SplitterKind::TwoTweezer),
            "three" => Ok(SplitterKind::ThreeTweezer),
            other => Err(Error::Config(format!(
                "splitter kind must be \"two\" or \"three\", got {other:?}"
            ))),
        }
    }

    pub fn build(&self) -> Result<SplitterSpec> {
        let mut spec = match self.kind()? {
            SplitterKind::TwoTweezer => SplitterSpec::reference_two_tweezer(),
            SplitterKind::ThreeTweezer => SplitterSpec::reference_three_tweezer(),
        };
        spec.n = self.n;
        if let Some(g) = self.grid_points {
            spec.grid_points = g;
        }
        if let Some(dt) = self.dt {
            spec.dt = dt;
        }
        if let Some(v) = self.d_min {
            spec.schedule.d_min = v;
        }
        if let Some(v) = self.d_max {
            spec.schedule.d_max = v;
        }
        if let Some(v) = self.t_proc {
            spec.schedule.t_proc = v;
        }
        if let Some(v) = self.delta_max {
            spec.schedule.delta_max = v;
        }
        if let Some(v) = self.depth_uk {
            spec.depth = uk_to_internal_energy(v);
        }
        if let Some(v) = self.waist {
            spec.waist = v;
        }
        if let Some(s) = &self.species {
            spec.species = species_from_name(s)?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombineParams {
    pub splitter: SplitterParams,
    /// Phase imprinted between split and combine [rad].
    #[serde(default)]
    pub phi: f64,
}

/// Noise model parameters; defaults follow [`NoiseSpec::default`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub p0_uw: Option<f64>,
    #[serde(default)]
    pub lambda_nm: Option<f64>,
    #[serde(default)]
    pub hold_t: Option<f64>,
    #[serde(default)]
    pub hold_depth_uk: Option<f64>,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams { eta: 0.0, p0_uw: None, lambda_nm: None, hold_t: None, hold_depth_uk: None }
    }
}

impl NoiseParams {
    pub fn build(&self, seed: u64) -> Result<NoiseSpec> {
        let mut spec = NoiseSpec { eta: self.eta, seed, ..NoiseSpec::default() };
        if let Some(p0) = self.p0_uw {
            spec.p0 = p0 * 1e-6;
        }
        if let Some(l) = self.lambda_nm {
            spec.omega_t = laser_angular_frequency(l * 1e-9);
        }
        if let Some(t) = self.hold_t {
            spec.hold_t = t;
        }
        if let Some(d) = self.hold_depth_uk {
            spec.hold_depth_uk = d;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopParams {
    pub splitter: SplitterParams,
    /// Hold duration [s].
    #[serde(default)]
    pub hold_t: Option<f64>,
    /// Arm separation during the hold [um].
    #[serde(default)]
    pub hold_separation: Option<f64>,
    /// Deterministic phase [rad].
    #[serde(default)]
    pub phi_det: f64,
    #[serde(default)]
    pub external: Option<ExternalPotential>,
    #[serde(default)]
    pub noise: Option<NoiseParams>,
}

impl LoopParams {
    pub fn build(&self) -> Result<LoopSpec> {
        let splitter = self.splitter.build()?;
        let spec = LoopSpec {
            hold_t: self.hold_t.unwrap_or(10.0),
            hold_separation: self.hold_separation.unwrap_or(4.0 * splitter.waist),
            phi_det: self.phi_det,
            hold_external: self.external.clone().unwrap_or(ExternalPotential::None),
            splitter,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumParams {
    pub splitter: SplitterParams,
    #[serde(default = "default_n_levels")]
    pub n_levels: usize,
    #[serde(default = "default_n_times")]
    pub n_times: usize,
}

fn default_n_levels() -> usize {
    4
}
fn default_n_times() -> usize {
    121
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableParams {
    /// "two" or "three"; the campaign-resolution reference loop.
    pub kind: String,
    #[serde(default = "default_n_real")]
    pub n_real: usize,
    #[serde(default)]
    pub noise: NoiseParams,
    /// Optional full override of the loop the table is built from.
    #[serde(default, rename = "loop")]
    pub loop_: Option<LoopParams>,
}

fn default_n_real() -> usize {
    400
}

impl TableParams {
    pub fn loop_spec(&self) -> Result<LoopSpec> {
        match &self.loop_ {
            Some(params) => params.build(),
            None => {
                let kind = match self.kind.as_str() {
                    "two" => SplitterKind::TwoTweezer,
                    "three" => SplitterKind::ThreeTweezer,
                    other => {
                        return Err(Error::Config(format!(
                            "table kind must be \"two\" or \"three\", got {other:?}"
                        )))
                    }
                };
                Ok(campaign_loop_spec(kind))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignParams {
    /// "two" or "three".
    pub kind: String,
    /// Scenario numbers from Table I (1-4).
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<u32>,
    #[serde(default = "default_n_real")]
    pub n_real: usize,
    #[serde(default = "default_n_campaigns")]
    pub n_campaigns: usize,
    #[serde(default)]
    pub noise: NoiseParams,
}

fn default_scenarios() -> Vec<u32> {
    vec![1, 2, 3, 4]
}
fn default_n_campaigns() -> usize {
    50
}

pub fn scenario_by_number(n: u32) -> Result<Scenario> {
    match n {
        1 => Ok(Scenario::one()),
        2 => Ok(Scenario::two()),
        3 => Ok(Scenario::three()),
        4 => Ok(Scenario::four()),
        other => Err(Error::Config(format!("scenario number must be 1-4, got {other}"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpMapParams {
    /// Retarded CP coefficient [J m^4].
    #[serde(default = "default_c4")]
    pub c4: f64,
    /// Hold duration [s].
    #[serde(default = "default_hold_10s")]
    pub t: f64,
    #[serde(default = "default_z_reference_um")]
    pub z_reference_um: f64,
    #[serde(default = "default_z_start_um")]
    pub z_start_um: f64,
    #[serde(default = "default_z_end_um")]
    pub z_end_um: f64,
    #[serde(default = "default_z_points")]
    pub z_points: usize,
    /// Phase uncertainty of the chosen scenario [rad].
    #[serde(default = "default_sigma_scenario2")]
    pub sigma_phase: f64,
    /// Per-run overhead for the acquisition-time metadata [s].
    #[serde(default = "default_overhead")]
    pub overhead: f64,
}

fn default_c4() -> f64 {
    1.64e-55
}
fn default_hold_10s() -> f64 {
    10.0
}
fn default_z_reference_um() -> f64 {
    100.0
}
fn default_z_start_um() -> f64 {
    2.0
}
fn default_z_end_um() -> f64 {
    20.0
}
fn default_z_points() -> usize {
    19
}
fn default_sigma_scenario2() -> f64 {
    0.034
}
fn default_overhead() -> f64 {
    5.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BigGParams {
    #[serde(default = "default_radius_m")]
    pub radius_m: f64,
    #[serde(default = "default_cut_angle")]
    pub cut_angle_deg: f64,
    #[serde(default = "default_source_mass")]
    pub mass_kg: f64,
    #[serde(default = "default_arms_mm")]
    pub arms_mm: Vec<f64>,
    #[serde(default = "default_reference_offset_mm")]
    pub reference_offset_mm: f64,
    #[serde(default = "default_species_k40")]
    pub species: String,
    #[serde(default = "default_hold_10s")]
    pub t: f64,
    /// Phase uncertainty of the chosen scenario [rad].
    #[serde(default = "default_sigma_scenario3")]
    pub sigma_phase: f64,
}

fn default_radius_m() -> f64 {
    0.2
}
fn default_cut_angle() -> f64 {
    141.0
}
fn default_source_mass() -> f64 {
    253.0
}
fn default_arms_mm() -> Vec<f64> {
    vec![1.0, 50.0]
}
fn default_reference_offset_mm() -> f64 {
    -0.9
}
fn default_species_k40() -> String {
    "40K".to_string()
}
fn default_sigma_scenario3() -> f64 {
    0.004
}

impl BigGParams {
    pub fn build(&self) -> Result<BigGCase> {
        Ok(BigGCase {
            geometry: CutSphere::new(self.radius_m, self.cut_angle_deg),
            mass: self.mass_kg,
            arms: self.arms_mm.iter().map(|a| a * 1e-3).collect(),
            reference_offset: self.reference_offset_mm * 1e-3,
            species: species_from_name(&self.species)?,
            t: self.t,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityParams {
    #[serde(default = "default_species_k40")]
    pub species: String,
    /// Arm separation [mm].
    #[serde(default = "default_h_mm")]
    pub h_mm: f64,
    #[serde(default = "default_hold_10s")]
    pub t: f64,
    /// Acceleration [m/s^2].
    #[serde(default = "default_g")]
    pub a: f64,
    /// Raman effective wavevector [1/m] of the free-fall benchmark.
    #[serde(default = "default_k_eff")]
    pub k_eff: f64,
    /// Free-fall interrogation time [s].
    #[serde(default = "default_kc_t")]
    pub kc_t: f64,
}

fn default_h_mm() -> f64 {
    10.0
}
fn default_g() -> f64 {
    G_EARTH
}
fn default_k_eff() -> f64 {
    4.0 * PI / 780e-9
}
fn default_kc_t() -> f64 {
    1.0
}

/// Record of one run: enough to reproduce its artifacts bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub crate_version: String,
    pub seed: u64,
    /// Exact text of the config the run executed.
    pub config: String,
    /// Artifact file name -> hex SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    /// Realization-table file name -> content hash, for tables the run used.
    pub tables: BTreeMap<String, String>,
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_artifact(
    out_dir: &Path,
    name: &str,
    bytes: &[u8],
    manifest: &mut Manifest,
) -> Result<()> {
    let path = out_dir.join(name);
    std::fs::write(&path, bytes)
        .map_err(|e| Error::Persistence(format!("writing {}: {e}", path.display())))?;
    manifest.artifacts.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

fn json_artifact<T: Serialize>(
    out_dir: &Path,
    name: &str,
    value: &T,
    manifest: &mut Manifest,
) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Persistence(format!("serializing {name}: {e}")))?;
    text.push('\n');
    write_artifact(out_dir, name, text.as_bytes(), manifest)
}

/// Render one CSV cell; floats use the shortest round-trip representation.
pub fn csv_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_artifact(
    out_dir: &Path,
    name: &str,
    header: &[&str],
    rows: &[Vec<String>],
    manifest: &mut Manifest,
) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_artifact(out_dir, name, text.as_bytes(), manifest)
}

fn section<'a, T>(opt: &'a Option<T>, command: &str) -> Result<&'a T> {
    opt.as_ref()
        .ok_or_else(|| Error::Config(format!("config is missing the [{command}] section")))
}

/// Execute a parsed config, writing artifacts into `out_dir` (which must
/// already exist and be writable) and using `cache_dir` for realization
/// tables. Returns the manifest; the caller persists it.
pub fn execute(cfg: &RunConfig, config_text: &str, out_dir: &Path, cache_dir: &Path) -> Result<Manifest> {
    let mut manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: cfg.command.clone(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: config_text.to_string(),
        artifacts: BTreeMap::new(),
        tables: BTreeMap::new(),
    };

    match cfg.command.as_str() {
        "split" => {
            let spec = section(&cfg.split, "split")?.build()?;
            let (_, diag) = run_splitter(&spec)?;
            let rows: Vec<Vec<String>> = diag
                .populations
                .iter()
                .zip(&diag.fidelities)
                .enumerate()
                .map(|(i, (p, f))| vec![i.to_string(), csv_f64(*p), csv_f64(*f)])
                .collect();
            csv_artifact(out_dir, "split.csv", &["port", "population", "fidelity"], &rows, &mut manifest)?;
            json_artifact(out_dir, "split.json", &diag, &mut manifest)?;
        }
        "combine" => {
            let params = section(&cfg.combine, "combine")?;
            let spec = params.splitter.build()?;
            let (mut psi, _) = run_splitter(&spec)?;
            imprint_phase(&mut psi, params.phi.rem_euclid(2.0 * PI), 0.0);
            let outcome = run_combiner(&psi, &spec)?;
            json_artifact(out_dir, "combine.json", &outcome, &mut manifest)?;
        }
        "loop" => {
            let params = section(&cfg.loop_, "loop")?;
            let spec = params.build()?;
            let noise = params.noise.clone().unwrap_or_default().build(cfg.seed)?;
            let outcome = run_loop(&spec, &noise, cfg.seed)?;
            json_artifact(out_dir, "loop.json", &outcome, &mut manifest)?;
        }
        "spectrum" => {
            let params = section(&cfg.spectrum, "spectrum")?;
            let spec = params.splitter.build()?;
            let trace = spectrum_trace(&spec, params.n_levels, params.n_times)?;
            let mut header: Vec<String> = vec!["t".to_string()];
            header.extend((0..params.n_levels).map(|i| format!("e{i}")));
            header.push("ambiguous".to_string());
            let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            let rows: Vec<Vec<String>> = trace
                .iter()
                .map(|p| {
                    let mut row = vec![csv_f64(p.t)];
                    row.extend(p.energies.iter().map(|&e| csv_f64(e)));
                    row.push(p.ambiguous.to_string());
                    row
                })
                .collect();
            csv_artifact(out_dir, "spectrum.csv", &header_refs, &rows, &mut manifest)?;
        }
        "table" => {
            let params = section(&cfg.table, "table")?;
            let spec = params.loop_spec()?;
            let noise = params.noise.build(cfg.seed)?;
            let (table, built) = load_or_build(cache_dir, &spec, &noise, params.n_real)?;
            let mean_failure = table
                .entries
                .iter()
                .map(|e| e.failure_probability)
                .sum::<f64>()
                / table.entries.len() as f64;
            manifest.tables.insert(table.file_name(), table.content_hash());
            #[derive(Serialize)]
            struct TableSummary {
                file_name: String,
                content_hash: String,
                spec_hash: String,
                noise_hash: String,
                n_real: usize,
                rebuilt: bool,
                mean_failure_probability: f64,
            }
            json_artifact(
                out_dir,
                "table.json",
                &TableSummary {
                    file_name: table.file_name(),
                    content_hash: table.content_hash(),
                    spec_hash: table.spec_hash.clone(),
                    noise_hash: table.noise_hash.clone(),
                    n_real: table.entries.len(),
                    rebuilt: built,
                    mean_failure_probability: mean_failure,
                },
                &mut manifest,
            )?;
        }
        "campaign" => {
            let params = section(&cfg.campaign, "campaign")?;
            let kind = match params.kind.as_str() {
                "two" => SplitterKind::TwoTweezer,
                "three" => SplitterKind::ThreeTweezer,
                other => {
                    return Err(Error::Config(format!(
                        "campaign kind must be \"two\" or \"three\", got {other:?}"
                    )))
                }
            };
            let spec = campaign_loop_spec(kind);
            let noise = params.noise.build(cfg.seed)?;
            let (table, _) = load_or_build(cache_dir, &spec, &noise, params.n_real)?;
            manifest.tables.insert(table.file_name(), table.content_hash());
            let mut results = Vec::new();
            for &num in &params.scenarios {
                let scenario = scenario_by_number(num)?;
                results.push(estimate_uncertainty(&table, &scenario, &noise, params.n_campaigns)?);
            }
            let splitter_type = match kind {
                SplitterKind::TwoTweezer => "II",
                SplitterKind::ThreeTweezer => "III",
            };
            let rows: Vec<Vec<String>> = results
                .iter()
                .map(|r| {
                    vec![
                        csv_f64(r.eta),
                        splitter_type.to_string(),
                        r.scenario.label.clone(),
                        csv_f64(100.0 * r.fail_ratio),
                        r.uncertainty.map(|u| csv_f64(u * 1e3)).unwrap_or_default(),
                        if r.undefined { "undefined".to_string() } else { "ok".to_string() },
                    ]
                })
                .collect();
            csv_artifact(
                out_dir,
                "campaign.csv",
                &["eta", "splitter_type", "scenario", "fail_ratio_percent", "uncertainty_mrad", "status"],
                &rows,
                &mut manifest,
            )?;
            json_artifact(out_dir, "campaign.json", &results, &mut manifest)?;
        }
        "cp-map" => {
            let params = section(&cfg.cp_map, "cp-map")?;
            if params.z_points < 2 || !(params.z_end_um > params.z_start_um) {
                return Err(Error::Config("cp-map needs z_points >= 2 and z_end > z_start".into()));
            }
            let case = CpCase {
                c4: params.c4,
                z_reference: params.z_reference_um * 1e-6,
                t: params.t,
            };
            let zs: Vec<f64> = (0..params.z_points)
                .map(|i| {
                    let f = i as f64 / (params.z_points - 1) as f64;
                    (params.z_start_um + f * (params.z_end_um - params.z_start_um)) * 1e-6
                })
                .collect();
            let map = cp_phase_map(&case, &zs, params.sigma_phase)?;
            let rows: Vec<Vec<String>> = map
                .iter()
                .map(|p| vec![csv_f64(p.z * 1e6), csv_f64(p.phase), csv_f64(p.relative_accuracy)])
                .collect();
            csv_artifact(
                out_dir,
                "cp_map.csv",
                &["z_um", "phase_rad", "relative_accuracy"],
                &rows,
                &mut manifest,
            )?;
            // acquisition metadata: one scenario-2-style scan per z point
            let acquisition_s =
                map.len() as f64 * Scenario::two().total_runtime(params.overhead);
            #[derive(Serialize)]
            struct CpMeta {
                points: usize,
                acquisition_hours: f64,
            }
            json_artifact(
                out_dir,
                "cp_map_meta.json",
                &CpMeta { points: map.len(), acquisition_hours: acquisition_s / 3600.0 },
                &mut manifest,
            )?;
        }
        "big-g" => {
            let params = section(&cfg.big_g, "big-g")?;
            let case = params.build()?;
            let report = big_g_phases(&case, params.sigma_phase)?;
            #[derive(Serialize)]
            struct BigGArtifact<'a> {
                case: &'a BigGCase,
                report: &'a crate::applications::BigGReport,
            }
            json_artifact(
                out_dir,
                "big_g.json",
                &BigGArtifact { case: &case, report: &report },
                &mut manifest,
            )?;
        }
        "sensitivity" => {
            let params = section(&cfg.sensitivity, "sensitivity")?;
            let case = SensitivityCase {
                species: species_from_name(&params.species)?,
                h: params.h_mm * 1e-3,
                t: params.t,
                a: params.a,
            };
            let noise = NoiseSpec { hold_t: params.t, ..NoiseSpec::default() };
            #[derive(Serialize)]
            struct SensitivityReport {
                gravity_phase_rad: f64,
                kc_phase_rad: f64,
                relative_shot_noise: f64,
                shot_noise_phase_rad: f64,
            }
            json_artifact(
                out_dir,
                "sensitivity.json",
                &SensitivityReport {
                    gravity_phase_rad: gravity_phase(&case)?,
                    kc_phase_rad: kc_phase(params.k_eff, params.a, params.kc_t)?,
                    relative_shot_noise: noise.relative_shot_noise(),
                    shot_noise_phase_rad: noise.shot_noise_sigma(),
                },
                &mut manifest,
            )?;
        }
        other => return Err(Error::Config(format!("unknown command {other:?}"))),
    }

    Ok(manifest)
}

/// Run a config text end to end: parse, execute, write `manifest.json`.
pub fn run_config_text(
    config_text: &str,
    command: &str,
    out_dir: &Path,
    cache_dir: &Path,
) -> Result<Manifest> {
    let cfg = RunConfig::parse(config_text)?;
    if cfg.command != command {
        return Err(Error::Config(format!(
            "config declares command {:?} but {command:?} was invoked",
            cfg.command
        )));
    }
    prepare_output_dir(out_dir)?;
    std::fs::create_dir_all(cache_dir)
        .map_err(|e| Error::Persistence(format!("creating {}: {e}", cache_dir.display())))?;
    let manifest = execute(&cfg, config_text, out_dir, cache_dir)?;
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Persistence(format!("serializing manifest: {e}")))?;
    text.push('\n');
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, text)
        .map_err(|e| Error::Persistence(format!("writing {}: {e}", path.display())))?;
    Ok(manifest)
}

/// Create the output directory; an existing directory is never reused.
pub fn prepare_output_dir(out_dir: &Path) -> Result<()> {
    if out_dir.exists() {
        return Err(Error::Persistence(format!(
            "output directory {} already exists; runs are never overwritten",
            out_dir.display()
        )));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Persistence(format!("creating {}: {e}", out_dir.display())))
}

/// Re-execute a recorded manifest into `out_dir` and verify that every
/// artifact reproduces bit-exactly.
pub fn replay(manifest_path: &Path, out_dir: &Path, cache_dir: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| Error::Persistence(format!("reading {}: {e}", manifest_path.display())))?;
    let recorded: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Persistence(format!("parsing {}: {e}", manifest_path.display())))?;
    let reproduced = run_config_text(&recorded.config, &recorded.command, out_dir, cache_dir)?;
    for (name, hash) in &recorded.artifacts {
        match reproduced.artifacts.get(name) {
            Some(h) if h == hash => {}
            _ => return Err(Error::HashMismatch(name.clone())),
        }
    }
    for (name, hash) in &recorded.tables {
        match reproduced.tables.get(name) {
            Some(h) if h == hash => {}
            _ => return Err(Error::HashMismatch(name.clone())),
        }
    }
    Ok(reproduced)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_rejected() {
        match RunConfig::parse("") {
            Err(Error::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "schema_version = 1\ncommand = \"sensitivity\"\nbogus = 3\n";
        assert!(RunConfig::parse(text).is_err());
        let nested = "schema_version = 1\ncommand = \"sensitivity\"\n[sensitivity]\nbogus = 3\n";
        assert!(RunConfig::parse(nested).is_err());
    }

    #[test]
    fn schema_version_is_enforced() {
        let text = "schema_version = 99\ncommand = \"sensitivity\"\n";
        match RunConfig::parse(text) {
            Err(Error::Config(msg)) => assert!(msg.contains("schema_version")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_command_is_rejected() {
        let text = "schema_version = 1\ncommand = \"explode\"\n";
        assert!(RunConfig::parse(text).is_err());
    }

    #[test]
    fn splitter_params_build_reference() {
        let p = SplitterParams {
            kind: "two".into(),
            n: 1,
            grid_points: Some(512),
            dt: None,
            d_min: None,
            d_max: None,
            t_proc: None,
            delta_max: None,
            depth_uk: None,
            waist: None,
            species: None,
        };
        let spec = p.build().unwrap();
        assert_eq!(spec.kind, SplitterKind::TwoTweezer);
        assert_eq!(spec.n, 1);
        assert_eq!(spec.grid_points, 512);
        assert!(SplitterParams { kind: "five".into(), ..p }.build().is_err());
    }

    #[test]
    fn sensitivity_pipeline_end_to_end() {
        let text = "schema_version = 1\ncommand = \"sensitivity\"\n[sensitivity]\n";
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run1");
        let manifest = run_config_text(text, "sensitivity", &out, dir.path()).unwrap();
        assert!(out.join("sensitivity.json").exists());
        assert!(out.join("manifest.json").exists());
        assert_eq!(manifest.artifacts.len(), 1);
        let body = std::fs::read_to_string(out.join("sensitivity.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        let phi = v["gravity_phase_rad"].as_f64().unwrap();
        assert!((phi / 6.2e8 - 1.0).abs() < 0.01, "phi {phi}");
        // output dirs are never reused
        match run_config_text(text, "sensitivity", &out, dir.path()) {
            Err(Error::Persistence(_)) => {}
            other => panic!("expected persistence error, got {other:?}"),
        }
    }

    #[test]
    fn replay_detects_tampered_seed() {
        let text = "schema_version = 1\ncommand = \"big-g\"\nseed = 3\n[big_g]\n";
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("orig");
        run_config_text(text, "big-g", &out, dir.path()).unwrap();

        // faithful replay reproduces bit-exact artifacts
        let replay_out = dir.path().join("replayed");
        replay(&out.join("manifest.json"), &replay_out, dir.path()).unwrap();

        // a tampered artifact hash is reported as a reproducibility failure
        let manifest_path = out.join("manifest.json");
        let mut manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
        let key = manifest.artifacts.keys().next().unwrap().clone();
        manifest.artifacts.insert(key, "0".repeat(64));
        std::fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        match replay(&manifest_path, &dir.path().join("replayed2"), dir.path()) {
            Err(Error::HashMismatch(_)) => {}
            other => panic!("expected hash mismatch, got {other:?}"),
        }
    }

    #[test]
    fn cp_map_pipeline_writes_expected_csv() {
        let text = concat!(
            "schema_version = 1\ncommand = \"cp-map\"\n",
            "[cp_map]\nz_start_um = 5.0\nz_end_um = 10.0\nz_points = 2\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("cp");
        run_config_text(text, "cp-map", &out, dir.path()).unwrap();
        let csv = std::fs::read_to_string(out.join("cp_map.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "z_um,phase_rad,relative_accuracy");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "5.0");
        let phase: f64 = first[1].parse().unwrap();
        assert!((phase / 24.9 - 1.0).abs() < 0.02, "phase {phase}");
    }

    #[test]
    fn command_mismatch_is_a_config_error() {
        let text = "schema_version = 1\ncommand = \"sensitivity\"\n[sensitivity]\n";
        let dir = tempfile::tempdir().unwrap();
        match run_config_text(text, "split", &dir.path().join("x"), dir.path()) {
            Err(Error::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
