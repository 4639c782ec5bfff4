//! Parameter-space scans used to pick the built-in reference schedules.
//! Run with: cargo run --release --example calibrate -- <subcommand>

use tweezersim::protocols::{run_splitter, SplitterSpec};

fn scan_two_tweezer() {
    let base = SplitterSpec::reference_two_tweezer();
    println!("two-tweezer scan: d_min, t_proc -> P_left(n=0), P_left(n=1), fid0, fid1");
    for &d_min in &[0.8, 1.0, 1.2, 1.4, 1.6] {
        for &t_proc in &[15.0, 30.0, 60.0] {
            let mut rows = vec![];
            for n in [0usize, 1] {
                let mut s = base.clone();
                s.schedule.d_min = d_min;
                s.schedule.t_proc = t_proc;
                s.n = n;
                s.grid_points = 512;
                s.dt = 5e-4;
                match run_splitter(&s) {
                    Ok((_, diag)) => rows.push(format!(
                        "P={:.4} fid={:.4} ovf={}",
                        diag.populations[0],
                        diag.fidelities.iter().sum::<f64>(),
                        diag.grid_overflow
                    )),
                    Err(e) => rows.push(format!("err: {e}")),
                }
            }
            println!("d_min={d_min:.2} T={t_proc:>5.1}  n0[{}]  n1[{}]", rows[0], rows[1]);
        }
    }
}

fn scan_three_tweezer() {
    let base = SplitterSpec::reference_three_tweezer();
    println!("three-tweezer scan: d_min, t_proc, delta -> P_out_l, P_c, P_out_r, fid");
    for &d_min in &[0.9, 1.0, 1.1] {
        for &t_proc in &[50.0, 75.0, 100.0] {
            let mut s = base.clone();
            s.schedule.d_min = d_min;
            s.schedule.t_proc = t_proc;
            s.grid_points = 1024;
            s.dt = 2.5e-4;
            match run_splitter(&s) {
                Ok((_, diag)) => println!(
                    "d_min={d_min:.2} T={t_proc:>5.1}  pops=[{:.4} {:.6} {:.4}] fid={:.4} ovf={}",
                    diag.populations[0],
                    diag.populations[1],
                    diag.populations[2],
                    diag.fidelities.iter().sum::<f64>(),
                    diag.grid_overflow
                ),
                Err(e) => println!("d_min={d_min:.2} T={t_proc:>5.1}  err: {e}"),
            }
        }
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "two".to_string());
    match which.as_str() {
        "two" => scan_two_tweezer(),
        "three" => scan_three_tweezer(),
        other => eprintln!("unknown scan: {other}"),
    }
}
