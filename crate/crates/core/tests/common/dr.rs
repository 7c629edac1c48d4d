use std::fs;
use std::path::Path;

use powermamba::drport::{DrProgram, ProgramKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn contract(name: &str, revenue: Vec<f64>, deployment: Vec<f64>) -> DrProgram {
    DrProgram::new(name, revenue, deployment, ProgramKind::Contract).unwrap()
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<DrProgram>, Vec<f64>, f64) {
    let n = rng.random_range(1..=5);
    let t = rng.random_range(1..=50);
    let r: Vec<f64> = (0..t).map(|_| rng.random_range(-20.0..80.0)).collect();
    let programs = (0..n)
        .map(|i| {
            let rev = (0..t).map(|_| rng.random_range(0.0..30.0)).collect();
            let dep = (0..t)
                .map(|_| {
                    if rng.random_bool(0.3) {
                        rng.random_range(0.0..=1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            contract(&format!("p{i}"), rev, dep)
        })
        .collect();
    (programs, r, rng.random_range(0.5..50.0))
}

/// Exhaustive maximum over the grid {c = k·C/100, Σk ≤ 100}, by dynamic
/// programming over programs.
pub fn grid_max(pi: &[f64], capacity: f64) -> f64 {
    let unit = capacity / 100.0;
    let mut best = vec![0.0f64; 101];
    for &p in pi {
        let prev = best.clone();
        for s in 0..=100 {
            best[s] = (0..=s)
                .map(|k| prev[s - k] + p * k as f64 * unit)
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    best[100]
}

/// The same grid, enumerated point by point (small N only).
pub fn grid_max_enumerated(pi: &[f64], capacity: f64) -> f64 {
    fn go(pi: &[f64], left: usize, unit: f64) -> f64 {
        match pi.split_first() {
            None => 0.0,
            Some((p, rest)) => (0..=left)
                .map(|k| p * k as f64 * unit + go(rest, left - k, unit))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
    go(pi, 100, capacity / 100.0)
}

/// Vertices of {c ≥ 0, Σc ≤ C}: pick N of the N+1 constraints as
/// equalities, solve, keep feasible points.
pub fn vertex_max(pi: &[f64], capacity: f64) -> f64 {
    let n = pi.len();
    let mut best = f64::NEG_INFINITY;
    for skip in 0..=n {
        // rows: c_i = 0 for i != skip (i < n), plus Σc = C when skip < n
        let mut a = vec![vec![0.0; n + 1]; n];
        let mut row = 0;
        for i in 0..n {
            if i != skip {
                a[row][i] = 1.0;
                row += 1;
            }
        }
        if skip < n {
            for j in 0..n {
                a[row][j] = 1.0;
            }
            a[row][n] = capacity;
        }
        // Gaussian elimination with partial pivoting
        let mut singular = false;
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            if a[piv][col].abs() < 1e-12 {
                singular = true;
                break;
            }
            a.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        if singular {
            continue;
        }
        let c: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
        if c.iter().all(|&v| v >= -1e-12) && c.iter().sum::<f64>() <= capacity + 1e-9 {
            best = best.max(c.iter().zip(pi).map(|(c, p)| c * p).sum());
        }
    }
    best
}

pub fn lmp_series(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| (rng.random_range(0.0..1.0f64).powi(3) * 300.0 * 100.0).round() / 100.0)
        .collect()
}

/// Writes a 48-hour LMP series, one contract program paying `revenue` per
/// hour, and a single-row economics file into `d`.
pub fn dr_inputs(d: &Path, revenue: f64) {
    let lmp: String = std::iter::once("lmp".to_string())
        .chain((0..48).map(|h| {
            let spike = if h % 17 == 0 { 250.0 } else { 0.0 };
            format!("{}", 20.0 + 15.0 * ((h as f64) * 0.7).sin() + spike)
        }))
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(d.join("lmp.csv"), lmp + "\n").unwrap();
    let series: String = std::iter::once("revenue,deployment".to_string())
        .chain((0..48).map(|h| format!("{revenue},{}", if h % 5 == 0 { 1 } else { 0 })))
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(d.join("ers.csv"), series + "\n").unwrap();
    fs::write(
        d.join("programs.csv"),
        "program,kind,theta,series\ners,contract,,ers.csv\n",
    )
    .unwrap();
    fs::write(d.join("econ.csv"), "btc_price,efficiency\n25000,143\n").unwrap();
}
