//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mgl::harness::{gamma_sweep, main_gap_suite, run_gap_experiment, verify_lemmas, ExperimentConfig, Suite};
use mgl::kernels::KernelSpec;
use mgl::measures::AdversarialSpec;

const GAP_MIN_ERR01: f64 = 0.10;
const GAP_MIN_RATIO: f64 = 5.0;
const GAP_MAX_CERTIFIED: f64 = 0.02;
const GAP_BUDGET_S: f64 = 300.0;
const SWEEP_GROWTH: f64 = 3.0;
const SWEEP_BUDGET_S: f64 = 600.0;
const ORTHOPOLY_BUDGET_S: f64 = 60.0;
const BAND_BUDGET_S: f64 = 60.0;
const KERNELS_BUDGET_S: f64 = 120.0;
const SOLVER_BUDGET_S: f64 = 120.0;
const GEOMETRY_BUDGET_S: f64 = 120.0;

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn gap_experiment() -> Line {
    let start = Instant::now();
    let mut passed = true;
    let mut worst_err01 = f64::INFINITY;
    let mut worst_ratio = f64::INFINITY;
    let mut worst_certified: f64 = 0.0;
    let mut notes = Vec::new();
    for cfg in main_gap_suite() {
        let label = cfg.learner.label();
        match run_gap_experiment(&cfg) {
            Ok(report) => {
                for s in &report.seeds {
                    worst_err01 = worst_err01.min(s.err01);
                    worst_ratio = worst_ratio.min(s.ratio);
                    worst_certified = worst_certified.max(s.err_margin_certified);
                    let ok = s.error.is_none()
                        && s.err01 >= GAP_MIN_ERR01
                        && s.ratio >= GAP_MIN_RATIO
                        && s.err_margin_certified <= GAP_MAX_CERTIFIED;
                    if !ok {
                        passed = false;
                        notes.push(format!(
                            "{label} seed {}: err01 {:.4} ratio {:.2} {:?}",
                            s.seed, s.err01, s.ratio, s.error
                        ));
                    }
                }
            }
            Err(e) => {
                passed = false;
                notes.push(format!("{label}: {e}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    passed &= secs <= GAP_BUDGET_S;
    Line {
        id: 1,
        name: "gap experiment",
        passed,
        detail: format!(
            "min err01 {worst_err01:.4}, min ratio {worst_ratio:.2}, certified {worst_certified:.6}, {secs:.1} s{}",
            if notes.is_empty() { String::new() } else { format!("; {}", notes.join("; ")) }
        ),
    }
}

fn gamma_trend() -> Line {
    let start = Instant::now();
    let configs = gamma_sweep();
    let mut medians = Vec::new();
    let mut notes = Vec::new();
    for cfg in &configs {
        match run_gap_experiment(cfg) {
            Ok(report) => {
                if let Some(s) = report.seeds.iter().find(|s| s.error.is_some()) {
                    notes.push(format!("gamma {} seed {}: {:?}", cfg.spec.gamma, s.seed, s.error));
                }
                medians.push((cfg.spec.gamma, median(report.seeds.iter().map(|s| s.ratio).collect())));
            }
            Err(e) => notes.push(format!("gamma {}: {e}", cfg.spec.gamma)),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let at = |g: f64| medians.iter().find(|(x, _)| *x == g).map_or(f64::NAN, |m| m.1);
    let (small, large) = (at(0.005), at(0.04));
    let passed = notes.is_empty() && small >= SWEEP_GROWTH * large && secs <= SWEEP_BUDGET_S;
    let trend: Vec<String> = medians.iter().map(|(g, m)| format!("{g}: {m:.2}")).collect();
    Line {
        id: 2,
        name: "gamma-sweep trend",
        passed,
        detail: format!(
            "median ratios [{}], growth {:.2}, {secs:.1} s{}",
            trend.join(", "),
            small / large,
            if notes.is_empty() { String::new() } else { format!("; {}", notes.join("; ")) }
        ),
    }
}

fn suite(id: usize, name: &'static str, which: Suite, budget: f64) -> Line {
    let start = Instant::now();
    let report = verify_lemmas(which);
    let secs = start.elapsed().as_secs_f64();
    let cases: usize = report.checks.iter().map(|c| c.cases).sum();
    let failed: Vec<String> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    Line {
        id,
        name,
        passed: report.passed && secs <= budget,
        detail: format!(
            "{} checks, {cases} cases, {secs:.1} s{}",
            report.checks.len(),
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    }
}

fn run_sweep(config: &Path, out: &Path, threads: usize) -> Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_mgl"))
        .arg("sweep")
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("mgl sweep exited with {status}"));
    }
    std::fs::read(out).map_err(|e| e.to_string())
}

fn reproducibility() -> Line {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut configs = Vec::new();
    for (kernel, c) in
        [(KernelSpec::sss(), 5.0), (KernelSpec::rbf(1.0).expect("valid sigma"), 5.0), (KernelSpec::linear(), 3.0)]
    {
        let mut cfg = ExperimentConfig::main_gap(kernel, c);
        cfg.spec = AdversarialSpec::new(10, 0.02, 0.7);
        cfg.spec.lambda3 = 0.05;
        cfg.n_train = 300;
        cfg.n_test = 2000;
        cfg.band.n_mc = 256;
        configs.push(cfg);
    }
    let config = dir.path().join("sweep.json");
    std::fs::write(&config, serde_json::to_string_pretty(&configs).expect("serializable")).expect("write config");
    let runs = [
        run_sweep(&config, &dir.path().join("a.csv"), 1),
        run_sweep(&config, &dir.path().join("b.csv"), 1),
        run_sweep(&config, &dir.path().join("c.csv"), 8),
    ];
    let (passed, detail) = match runs {
        [Ok(a), Ok(b), Ok(c)] => {
            let text = String::from_utf8_lossy(&a);
            let rows = text.lines().count().saturating_sub(1);
            // The error column is last; a clean row ends in an empty field.
            let failed = text.lines().skip(1).filter(|l| !l.ends_with(',')).count();
            let identical = a == b && a == c;
            (
                identical && rows == 9 && failed == 0,
                format!("{rows} rows, {failed} failed, {} bytes, identical: {identical}", a.len()),
            )
        }
        [a, b, c] => (false, format!("{:?}", [a.err(), b.err(), c.err()])),
    };
    Line { id: 8, name: "reproducibility", passed, detail }
}

fn main() {
    let lines = vec![
        gap_experiment(),
        gamma_trend(),
        suite(3, "orthopoly suite", Suite::Orthopoly, ORTHOPOLY_BUDGET_S),
        suite(4, "changes-slowly suite", Suite::Band, BAND_BUDGET_S),
        suite(5, "kernel suite", Suite::Kernels, KERNELS_BUDGET_S),
        suite(6, "solver vs oracle", Suite::Solver, SOLVER_BUDGET_S),
        suite(7, "geometry suite", Suite::Geometry, GEOMETRY_BUDGET_S),
        reproducibility(),
    ];
    for l in &lines {
        println!("criterion {} {}: {} ({})", l.id, l.name, if l.passed { "PASS" } else { "FAIL" }, l.detail);
    }
    if lines.iter().any(|l| !l.passed) {
        std::process::exit(1);
    }
}
