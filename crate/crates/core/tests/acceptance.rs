//! Release acceptance suite: one test per acceptance criterion, each
//! printing a single PASS/FAIL verdict line (visible with `--nocapture`;
//! failures always show the line in the panic message).
//!
//! Realization tables built by criterion 5 are cached under
//! `CARGO_TARGET_TMPDIR`, so reruns are cheap.

use std::path::Path;
use std::time::Instant;

use num_complex::Complex64 as C64;
use tweezersim::applications::{
    big_g_phases, cp_phase_map, gravity_phase, kc_phase, BigGCase, CpCase, SensitivityCase,
};
use tweezersim::bloch::integrate_bloch;
use tweezersim::campaign::{campaign_loop_spec, estimate_uncertainty, load_or_build, Scenario};
use tweezersim::noise::NoiseSpec;
use tweezersim::potential::{
    cut_sphere_potential, evaluate_potential, CutSphere, ExternalPotential, Layout, TweezerScene,
};
use tweezersim::protocols::{
    run_loop_projected, run_splitter, spectrum_trace, LoopSpec, SplitterKind, SplitterSpec,
};
use tweezersim::solver::{propagate, solve_eigenstates, NoNoise, SpatialGrid, WaveFunction};
use tweezersim::units::{uk_to_internal_energy, Species, BIG_G, G_EARTH};

/// Collects named checks for one criterion and emits the verdict line.
struct Criterion {
    number: usize,
    name: &'static str,
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Criterion {
    fn new(number: usize, name: &'static str) -> Self {
        Criterion { number, name, failures: Vec::new(), notes: Vec::new() }
    }

    fn check(&mut self, label: &str, pass: bool, detail: String) {
        if pass {
            self.notes.push(format!("{label} {detail}"));
        } else {
            self.failures.push(format!("{label} {detail}"));
        }
    }

    fn within(&mut self, label: &str, value: f64, target: f64, rel_tol: f64) {
        let pass = (value - target).abs() <= rel_tol * target.abs();
        self.check(label, pass, format!("= {value:.6e} (target {target:.3e} ± {rel_tol:.0e} rel)"));
    }

    fn in_band(&mut self, label: &str, value: f64, lo: f64, hi: f64) {
        self.check(label, (lo..=hi).contains(&value), format!("= {value:.4e} (band [{lo:.2e}, {hi:.2e}])"));
    }

    fn finish(self) {
        let verdict = if self.failures.is_empty() { "PASS" } else { "FAIL" };
        let detail =
            if self.failures.is_empty() { self.notes.join("; ") } else { self.failures.join("; ") };
        let line = format!("criterion {} ({}): {verdict} - {detail}", self.number, self.name);
        println!("{line}");
        assert!(self.failures.is_empty(), "{line}");
    }
}

fn quiet_noise() -> NoiseSpec {
    // hold phase suppressed; amplitude-noise statistics untouched
    NoiseSpec { hold_depth_uk: 1e-300, ..NoiseSpec::default() }
}

#[test]
fn criterion_1_splitter_balance() {
    let mut c = Criterion::new(1, "splitter balance");
    for n in [0usize, 1] {
        let mut spec = SplitterSpec::reference_two_tweezer();
        spec.grid_points = 4096;
        spec.n = n;
        let t0 = Instant::now();
        let (_, diag) = run_splitter(&spec).expect("splitter run");
        let elapsed = t0.elapsed().as_secs_f64();
        for (port, &p) in diag.populations.iter().enumerate() {
            c.check(
                &format!("n={n} port {port}"),
                (p - 0.5).abs() <= 0.02,
                format!("population {p:.4}"),
            );
        }
        c.check(&format!("n={n} runtime"), elapsed < 300.0, format!("{elapsed:.0}s (< 300s)"));
    }
    c.finish();
}

#[test]
fn criterion_2_phase_to_port() {
    let mut c = Criterion::new(2, "phase-to-port mapping");
    let mut spec = campaign_loop_spec(SplitterKind::TwoTweezer);
    spec.splitter.dt = 5e-4;
    let noise = quiet_noise();

    spec.phi_det = std::f64::consts::PI;
    let out = run_loop_projected(&spec, &noise, 1).expect("pi loop");
    let p_opp = out.opposite_port_probability(&spec.splitter);
    c.check("phi=pi opposite port", p_opp > 0.99, format!("p = {p_opp:.4}"));

    spec.phi_det = 0.0;
    let out = run_loop_projected(&spec, &noise, 1).expect("zero loop");
    let p_return = 1.0 - out.opposite_port_probability(&spec.splitter);
    c.check("phi=0 return port", p_return > 0.99, format!("p = {p_return:.4}"));
    c.finish();
}

#[test]
fn criterion_3_three_tweezer() {
    let mut c = Criterion::new(3, "three-tweezer splitter");

    let spec = SplitterSpec::reference_three_tweezer();
    let (_, diag) = run_splitter(&spec).expect("three-tweezer split");
    c.check(
        "post-split central population",
        diag.central_population < 0.01,
        format!("= {:.4}", diag.central_population),
    );

    // external-port fringe law over 9 phases at campaign resolution
    let base = campaign_loop_spec(SplitterKind::ThreeTweezer);
    let noise = quiet_noise();
    let mut sq_sum = 0.0;
    for k in 0..9 {
        let phi = std::f64::consts::TAU * k as f64 / 9.0;
        let spec = LoopSpec { phi_det: phi, ..base.clone() };
        let out = run_loop_projected(&spec, &noise, 1).expect("loop");
        let resid = out.opposite_port_probability(&spec.splitter) - (0.5 * phi).sin().powi(2);
        sq_sum += resid * resid;
    }
    let rms = (sq_sum / 9.0).sqrt();
    c.check("fringe-law RMS residual", rms < 0.02, format!("= {rms:.4}"));

    // avoided crossing: the spread of the lowest three levels collapses to a
    // small positive interior minimum and reopens
    let mut spec = SplitterSpec::reference_three_tweezer();
    spec.grid_points = 512;
    let trace = spectrum_trace(&spec, 3, 76).expect("spectrum trace");
    let spread = |p: &tweezersim::protocols::SpectrumPoint| -> f64 {
        let lo = p.energies.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = p.energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let (imin, smin) = trace
        .iter()
        .enumerate()
        .map(|(i, p)| (i, spread(p)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    let ends = spread(&trace[0]).min(spread(trace.last().unwrap()));
    c.check(
        "avoided-crossing gap",
        smin > 1.0 && smin < 15.0 && imin > 0 && imin + 1 < trace.len() && ends > 3.0 * smin,
        format!("min spread {smin:.2} at t = {:.1} (end spread {ends:.1})", trace[imin].t),
    );

    // the hybridizing pair at the crossing is even-parity; the odd level
    // passes between them untouched
    let scene = spec.scene(false);
    let grid = spec.grid().expect("grid");
    let v = evaluate_potential(&scene, grid.xs(), trace[imin].t).expect("potential");
    let sol = solve_eigenstates(&grid, &v, scene.species.mass_internal(), 3).expect("eigensolve");
    let parity = |psi: &WaveFunction| -> f64 {
        let n = psi.amps.len();
        let s: C64 = (0..n).map(|i| psi.amps[i].conj() * psi.amps[n - 1 - i]).sum();
        (s * psi.grid.dx()).re
    };
    let ps: Vec<f64> = sol.states.iter().map(parity).collect();
    c.check(
        "crossing parities (even, odd, even)",
        ps[0] > 0.5 && ps[1] < -0.5 && ps[2] > 0.5,
        format!("= {ps:.2?}"),
    );
    c.finish();
}

#[test]
fn criterion_4_sensitivity_anchors() {
    let mut c = Criterion::new(4, "sensitivity anchors");
    let case =
        SensitivityCase { species: Species::k40(), h: 10e-3, t: 10.0, a: G_EARTH };
    c.within("gravity phase", gravity_phase(&case).expect("gravity"), 6.2e8, 0.01);
    c.within(
        "free-fall benchmark phase",
        kc_phase(4.0 * std::f64::consts::PI / 780e-9, G_EARTH, 1.0).expect("kc"),
        1.6e8,
        0.03,
    );
    let noise = NoiseSpec::default();
    c.within("relative shot noise", noise.relative_shot_noise(), 2e-8, 0.10);
    c.within("shot-noise phase", noise.shot_noise_sigma(), 0.2, 0.15);
    c.finish();
}

#[test]
fn criterion_5_campaign_regression() {
    let mut c = Criterion::new(5, "campaign regression");
    let t0 = Instant::now();
    let cache = Path::new(env!("CARGO_TARGET_TMPDIR")).join("tables");
    std::fs::create_dir_all(&cache).expect("cache dir");
    let n_real = 400;
    let n_campaigns = 50;

    let table = |kind: SplitterKind, eta: f64| {
        let spec = campaign_loop_spec(kind);
        let noise = NoiseSpec { eta, ..quiet_noise() };
        load_or_build(&cache, &spec, &noise, n_real).expect("table").0
    };
    let estimate = |kind: SplitterKind, eta: f64, scenario: &Scenario| {
        let t = table(kind, eta);
        let noise = NoiseSpec { eta, ..NoiseSpec::default() };
        estimate_uncertainty(&t, scenario, &noise, n_campaigns).expect("estimate")
    };

    let r = estimate(SplitterKind::TwoTweezer, 1.0, &Scenario::one());
    c.in_band("scenario 1 uncertainty [rad]", r.uncertainty.unwrap_or(f64::NAN), 0.044, 0.175);
    let r = estimate(SplitterKind::TwoTweezer, 1.0, &Scenario::two());
    c.in_band("scenario 2 uncertainty [rad]", r.uncertainty.unwrap_or(f64::NAN), 0.017, 0.068);
    let r = estimate(SplitterKind::TwoTweezer, 1e8, &Scenario::one());
    c.check("eta=1e8 (two-tweezer)", r.undefined, format!("undefined = {}", r.undefined));

    let bands = [(1.0, 0.001, 0.004), (1e6, 0.008, 0.032), (1e7, 0.065, 0.26), (5e7, 0.16, 0.64)];
    let mut fails = Vec::new();
    for (eta, lo, hi) in bands {
        let r = estimate(SplitterKind::ThreeTweezer, eta, &Scenario::one());
        c.in_band(&format!("fail ratio at eta={eta:.0e}"), r.fail_ratio, lo, hi);
        fails.push(r.fail_ratio);
        if eta == 5e7 {
            c.check("eta=5e7 (three-tweezer)", r.undefined, format!("undefined = {}", r.undefined));
        }
    }
    c.check(
        "fail ratios strictly increasing",
        fails.windows(2).all(|w| w[0] < w[1]),
        format!("{fails:.4?}"),
    );
    let hours = t0.elapsed().as_secs_f64() / 3600.0;
    c.check("runtime", hours < 4.0, format!("{hours:.2} h (< 4 h)"));
    c.finish();
}

#[test]
fn criterion_6_cp_map() {
    let mut c = Criterion::new(6, "CP phase map");
    let case = CpCase { c4: 1.64e-55, z_reference: 100e-6, t: 10.0 };
    c.within("phase at 5 um", case.phase_at(5e-6).expect("phase"), 24.9, 0.02);

    let zs: Vec<f64> = (0..19).map(|i| (2.0 + i as f64) * 1e-6).collect();
    let map = cp_phase_map(&case, &zs, 0.034).expect("map");
    let at5 = map.iter().find(|p| (p.z - 5e-6).abs() < 1e-9).expect("5 um point");
    c.within("relative accuracy at 5 um", at5.relative_accuracy, 0.0014, 0.30);

    // log-log slope by least squares
    let (n, mut sx, mut sy, mut sxx, mut sxy) = (map.len() as f64, 0.0, 0.0, 0.0, 0.0);
    for p in &map {
        let (x, y) = (p.z.ln(), p.phase.ln());
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    c.check("log-log slope", (slope + 4.00).abs() <= 0.01, format!("= {slope:.4}"));
    c.finish();
}

#[test]
fn criterion_7_big_g() {
    let mut c = Criterion::new(7, "big-G source mass");
    let case = BigGCase::reference();
    let report = big_g_phases(&case, 0.004).expect("report");
    c.within("near-arm phase", report.phases[0], 798.0, 0.02);
    c.within("far-arm phase", report.phases[1], 615.0, 0.02);
    c.within("delta G / G", report.delta_g_over_g, 2.2e-5, 0.30);

    // full sphere reduces to a point mass
    let sphere = CutSphere::new(0.2, 360.0);
    let density = 22000.0;
    let r = 0.35;
    let u = cut_sphere_potential(&sphere, density, [0.0, 0.0, r]).expect("potential");
    let point = -BIG_G * density * sphere.volume() / r;
    c.check(
        "full-sphere point-mass limit",
        ((u - point) / point).abs() < 1e-4,
        format!("rel dev {:.2e}", ((u - point) / point).abs()),
    );

    let mut yb = BigGCase::reference();
    yb.species = Species::yb171();
    let yb_report = big_g_phases(&yb, 0.004).expect("yb report");
    let ratio = report.delta_g_over_g / yb_report.delta_g_over_g;
    c.check("Yb mass-ratio factor", (ratio - 4.275).abs() < 0.5e-3, format!("= {ratio:.5}"));
    c.finish();
}

#[test]
fn criterion_8_property_suites() {
    let mut c = Criterion::new(8, "property suites");

    // unitarity over a full protocol
    let mut spec = SplitterSpec::reference_two_tweezer();
    spec.grid_points = 512;
    spec.dt = 1e-3;
    let (psi, _) = run_splitter(&spec).expect("splitter");
    let drift = (psi.norm_sq() - 1.0).abs();
    c.check("unitarity drift", drift < 1e-8, format!("= {drift:.2e}"));

    // dt-halving convergence of the three-tweezer reference
    let spec = SplitterSpec::reference_three_tweezer();
    let (_, d1) = run_splitter(&spec).expect("splitter");
    let mut half = spec.clone();
    half.dt *= 0.5;
    let (_, d2) = run_splitter(&half).expect("splitter");
    let shift = d1
        .populations
        .iter()
        .zip(&d2.populations)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    c.check("dt-halving port shift", shift < 1e-4, format!("= {shift:.2e}"));

    // two-level oracle vs the full propagator in the tight-binding regime
    let d = 1.38;
    let scene = TweezerScene {
        species: Species::k40(),
        depth: uk_to_internal_energy(116.0),
        waist: 1.3,
        layout: Layout::Static { centers: vec![-0.5 * d, 0.5 * d], detunings: vec![0.0, 0.0] },
        external: ExternalPotential::None,
    };
    let grid = SpatialGrid::for_scene(&scene, 1024).expect("grid");
    let v = evaluate_potential(&scene, grid.xs(), 0.0).expect("potential");
    let sol = solve_eigenstates(&grid, &v, scene.species.mass_internal(), 2).expect("eigensolve");
    let j = sol.energies[1] - sol.energies[0];
    let amps: Vec<C64> = sol.states[0]
        .amps
        .iter()
        .zip(&sol.states[1].amps)
        .map(|(a, b)| (a + b) / f64::sqrt(2.0))
        .collect();
    let mut psi = WaveFunction::new(grid.clone(), amps).expect("state");
    psi.normalize();
    let side = psi.expectation_x().signum();
    let t_total = std::f64::consts::PI / (2.0 * j);
    let dt = 2.5e-4;
    let traj = integrate_bloch([0.0, 0.0, 1.0], |_| (j, 0.0), 0.0, t_total, 0.01)
        .expect("precession");
    let mut cur = psi;
    let mut t_prev = 0.0;
    let mut max_dev: f64 = 0.0;
    for k in 1..=4 {
        let tb = (t_total * k as f64 / 4.0 / dt).round() * dt;
        let out = propagate(&cur, &scene, t_prev, tb, dt, &mut NoNoise).expect("propagate");
        cur = out.psi;
        t_prev = tb;
        let dx = cur.grid.dx();
        let p_left: f64 = cur
            .grid
            .xs()
            .iter()
            .zip(&cur.amps)
            .filter(|(x, _)| **x < 0.0)
            .map(|(_, a)| a.norm_sqr() * dx)
            .sum();
        let p_stay = if side < 0.0 { p_left } else { cur.norm_sq() - p_left };
        let vb = traj
            .iter()
            .min_by(|a, b| (a.0 - tb).abs().partial_cmp(&(b.0 - tb).abs()).unwrap())
            .unwrap()
            .1;
        max_dev = max_dev.max((p_stay - 0.5 * (1.0 + vb[2])).abs());
    }
    c.check("two-level oracle deviation", max_dev <= 0.05, format!("= {max_dev:.4} (J = {j:.3})"));

    // eigensolver vs harmonic analytics
    let mass = Species::k40().mass_internal();
    let omega = 50.0;
    let hgrid = SpatialGrid::new(-6.0, 6.0, 1024).expect("grid");
    let hv: Vec<f64> = hgrid.xs().iter().map(|x| 0.5 * mass * omega * omega * x * x).collect();
    let hsol = solve_eigenstates(&hgrid, &hv, mass, 6).expect("eigensolve");
    let herr = hsol
        .energies
        .iter()
        .enumerate()
        .map(|(n, e)| ((e - (n as f64 + 0.5) * omega) / ((n as f64 + 0.5) * omega)).abs())
        .fold(0.0, f64::max);
    c.check("harmonic eigenvalues", herr < 1e-4, format!("max rel dev {herr:.2e}"));

    // replay reproducibility (bit-exact artifact hashes)
    let tmp = Path::new(env!("CARGO_TARGET_TMPDIR")).join("replay-check");
    let _ = std::fs::remove_dir_all(&tmp);
    let cache = tmp.join("cache");
    std::fs::create_dir_all(&cache).expect("cache dir");
    let config = "schema_version = 1\ncommand = \"big-g\"\nseed = 7\n\n[big_g]\n";
    let manifest = tweezersim::cli::run_config_text(config, "big-g", &tmp.join("run"), &cache)
        .expect("run");
    let replayed =
        tweezersim::cli::replay(&tmp.join("run").join("manifest.json"), &tmp.join("replay"), &cache)
            .expect("replay");
    c.check(
        "replay hashes",
        manifest.artifacts == replayed.artifacts,
        format!("{} artifacts bit-exact", manifest.artifacts.len()),
    );
    c.finish();
}
