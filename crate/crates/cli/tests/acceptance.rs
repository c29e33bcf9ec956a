//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass name fragments as arguments to run a subset:
//! `cargo test -p klce-cli --test acceptance -- type1 isotonic`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic;
use std::process::Command;
use std::time::{Duration, Instant};

use klce::kernels::gram_pair_with;
use klce::recalibration::pava;
use klce::rng::{stream_rng, NormalSampler};
use klce::simulation::{gen_synthetic_with_truth, spearman};
use klce::{
    ece, fit_isotonic, fit_platt, fit_temperature, gen_synthetic, gram_pair, inference_estimate,
    klce2_unbiased, lcb_at, lcb_records, run_test, type1_experiment, type2_experiment,
    AuditDataset, AuditRecord, Kernel, KernelSpec, LcbKernels, SimConfig, SimModel, SimReport,
    TestConfig,
};
use rand::Rng;

type Check = fn() -> Result<String, String>;

/// Fixed bandwidths for criteria that compare against a population value.
const SIGMA_K: f64 = 0.3;
const SIGMA_L: f64 = 1.5;

/// Standard normal quantiles at 0.975 and 0.995.
const Z_975: f64 = 1.959_963_984_540_054;
const Z_995: f64 = 2.575_829_303_548_901;

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn fixed_klce2(d: &AuditDataset) -> f64 {
    let g = gram_pair_with(
        d,
        Kernel::rbf(SIGMA_K).unwrap(),
        Kernel::rbf(SIGMA_L).unwrap(),
    );
    klce2_unbiased(d, &g).unwrap().value
}

fn check(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalence() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = stream_rng(1, 3000, 0);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let n = rng.gen_range(2..=60);
        let dim = rng.gen_range(1..=4);
        let d = common::random_dataset(10_000 + i, n, dim);
        let g = gram_pair(&d, &KernelSpec::rbf_median(), &KernelSpec::rbf_median()).unwrap();
        let est = klce2_unbiased(&d, &g).unwrap().value;
        let oracle = common::naive_klce2(&d, &g.score_kernel, &g.feature_kernel);
        worst = worst.max((est - oracle).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-12 && secs < 10.0,
        format!("max |diff| = {worst:.2e} (tol 1e-12), {secs:.2} s (limit 10 s)"),
    )
}

fn unbiasedness() -> Result<String, String> {
    let cfg = SimConfig {
        d: 2,
        n: 200,
        model: SimModel::DropLast,
        seed: 2024,
        ..SimConfig::default()
    };
    let est: Vec<f64> = (0..2000)
        .map(|r| fixed_klce2(&gen_synthetic(&cfg, r).unwrap()))
        .collect();
    let (m, se) = mean_se(&est);
    let (truth, truth_se) = common::population_klce2_drop_last(SIGMA_K, SIGMA_L, 200_000, 7);
    let tot = (se * se + truth_se * truth_se).sqrt();
    let z = (m - truth) / tot;
    check(
        z.abs() <= 3.0,
        format!("mean {m:.6e} vs oracle {truth:.6e}, z = {z:.2} (|z| <= 3)"),
    )
}

fn zero_case() -> Result<String, String> {
    let mut rng = stream_rng(3, 3000, 1);
    for i in 0..20u64 {
        let n = rng.gen_range(2..=80);
        let dim = rng.gen_range(1..=3);
        let recs: Vec<AuditRecord> = (0..n)
            .map(|_| {
                let y = u8::from(rng.gen::<bool>());
                let x = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                AuditRecord::new(x, y, f64::from(y))
            })
            .collect();
        let names = (0..dim).map(|j| format!("x{j}")).collect();
        let d = AuditDataset::new(names, recs).unwrap();
        let res = run_test(
            &d,
            &TestConfig {
                n_bootstrap: 20,
                seed: i,
                ..TestConfig::default()
            },
        )
        .unwrap();
        if res.klce2_data != 0.0 || res.reject_at_alpha {
            return Err(format!("dataset {i}: klce2 = {:e}", res.klce2_data));
        }
        let kernels = LcbKernels {
            score: res.score_kernel,
            feature: res.feature_kernel,
        };
        let at_records = lcb_records(&d, &kernels);
        let at_random: Vec<_> = (0..20)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                lcb_at(&d, &kernels, &x, rng.gen_range(0.0..=1.0))
            })
            .collect();
        for e in at_records.iter().chain(&at_random) {
            let bias = e.as_ref().map_err(|e| e.to_string())?.bias;
            if bias != 0.0 {
                return Err(format!("dataset {i}: LCB = {bias:e}"));
            }
        }
    }
    Ok("20 datasets: klce2 == 0 and LCB == 0 at every record and 20 random queries".into())
}

/// Two rates `k / r` agree within the pooled two-sample interval.
fn pooled_ok(a: (usize, usize), b: (usize, usize), z: f64) -> bool {
    let (ra, rb) = (a.0 as f64 / a.1 as f64, b.0 as f64 / b.1 as f64);
    let pbar = (a.0 + b.0) as f64 / (a.1 + b.1) as f64;
    let half = z * (pbar * (1.0 - pbar) * (1.0 / a.1 as f64 + 1.0 / b.1 as f64)).sqrt();
    (ra - rb).abs() <= half
}

fn type1() -> Result<String, String> {
    let cfg = SimConfig {
        d: 2,
        replicates: 1000,
        alpha_p: 0.05,
        n_bootstrap: 500,
        seed: 11,
        ..SimConfig::default()
    };
    let sweep = type1_experiment(&cfg, &[1.0, 2.0, 0.5], &[500]).unwrap();
    let large = type1_experiment(&cfg, &[1.0], &[1000]).unwrap();
    let rows: Vec<_> = sweep.rows.iter().chain(&large.rows).collect();
    let base = rows[0].rejection_rate;
    let mut ok = (0.033..=0.070).contains(&base);
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            ok &= pooled_ok(
                (a.rejections, a.replicates),
                (b.rejections, b.replicates),
                Z_995,
            );
        }
    }
    let cells: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "N={} bw x{}: {:.3}",
                r.n, r.bandwidth_scale, r.rejection_rate
            )
        })
        .collect();
    check(
        ok,
        format!(
            "{} (base in [0.033, 0.070], pairwise within pooled 99% CI)",
            cells.join(", ")
        ),
    )
}

fn type2_report() -> SimReport {
    let cfg = SimConfig {
        replicates: 300,
        alpha_p: 0.05,
        n_bootstrap: 500,
        seed: 12,
        ..SimConfig::default()
    };
    type2_experiment(&cfg, &[2, 4, 6, 8, 10], &[500, 1000]).unwrap()
}

fn type2() -> Result<String, String> {
    let report = type2_report();
    let err = |d, n| 1.0 - report.row(d, n).unwrap().rejection_rate;
    let dims = [2usize, 4, 6, 8, 10];
    let a = err(2, 1000) <= 0.1;
    let mut b = true;
    for &d in &dims {
        let (r5, r10) = (report.row(d, 500).unwrap(), report.row(d, 1000).unwrap());
        let (e5, e10) = (err(d, 500), err(d, 1000));
        let pbar = (e5 + e10) / 2.0;
        let half =
            Z_975 * (2.0 * pbar * (1.0 - pbar) / r5.replicates.min(r10.replicates) as f64).sqrt();
        b &= e10 <= e5 + half;
    }
    let xs: Vec<f64> = dims.iter().map(|&d| d as f64).collect();
    let rho: Vec<f64> = [500, 1000]
        .iter()
        .map(|&n| spearman(&xs, &dims.iter().map(|&d| err(d, n)).collect::<Vec<_>>()))
        .collect();
    let c = rho.iter().all(|&r| r > 0.0);
    let table: Vec<String> = dims
        .iter()
        .map(|&d| format!("d={d}: {:.3}/{:.3}", err(d, 500), err(d, 1000)))
        .collect();
    check(
        a && b && c,
        format!(
            "Type-II (N=500/1000) {}; (a) {a} (b) {b} (c) {c}, spearman {:.2}/{:.2}",
            table.join(", "),
            rho[0],
            rho[1]
        ),
    )
}

fn convergence() -> Result<String, String> {
    let (truth, _) = common::population_klce2_drop_last(SIGMA_K, SIGMA_L, 2_000_000, 8);
    let ns = [250usize, 500, 1000, 2000];
    let mut log_n = Vec::new();
    let mut log_rmse = Vec::new();
    for &n in &ns {
        let cfg = SimConfig {
            n,
            model: SimModel::DropLast,
            seed: 13 + n as u64,
            ..SimConfig::default()
        };
        let sq: f64 = (0..100)
            .map(|r| (fixed_klce2(&gen_synthetic(&cfg, r).unwrap()) - truth).powi(2))
            .sum();
        log_n.push((n as f64).ln());
        log_rmse.push((sq / 100.0).sqrt().ln());
    }
    let mx = log_n.iter().sum::<f64>() / 4.0;
    let my = log_rmse.iter().sum::<f64>() / 4.0;
    let sxy: f64 = log_n
        .iter()
        .zip(&log_rmse)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let sxx: f64 = log_n.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    check(
        slope <= -0.4,
        format!("log-RMSE slope {slope:.3} (<= -0.4)"),
    )
}

/// Each recalibrator is fitted on one DropLast sample and scored on that
/// same sample. Held-out ECE on an independent sample is reported alongside
/// for information only.
fn recalibration_insufficiency() -> Result<String, String> {
    let seeds = 50;
    let mut reduced = [0usize; 3];
    let mut rejected = [0usize; 3];
    let mut held_out = [0usize; 3];
    for s in 0..seeds {
        let cfg = SimConfig {
            d: 3,
            n: 1500,
            model: SimModel::DropLast,
            seed: 500 + s,
            ..SimConfig::default()
        };
        let data = gen_synthetic(&cfg, 0).unwrap();
        let fresh = gen_synthetic(&cfg, 1).unwrap();
        let (raw_ece, fresh_ece) = (ece(&data, 10), ece(&fresh, 10));
        let fitted = [
            fit_platt(&data).unwrap(),
            fit_temperature(&data).unwrap(),
            fit_isotonic(&data).unwrap(),
        ];
        for (m, rec) in fitted.iter().enumerate() {
            let out = rec.apply(&data).unwrap();
            reduced[m] += usize::from(ece(&out, 10) < raw_ece);
            rejected[m] +=
                usize::from(run_test(&out, &cfg.test_config(s)).unwrap().reject_at_alpha);
            held_out[m] += usize::from(ece(&rec.apply(&fresh).unwrap(), 10) < fresh_ece);
        }
    }
    let need = (0.8 * seeds as f64).ceil() as usize;
    let ok = reduced.iter().chain(&rejected).all(|&c| c >= need);
    let names = ["platt", "temperature", "isotonic"];
    let detail: Vec<String> = (0..3)
        .map(|m| {
            format!(
                "{}: ECE down {}/{seeds}, rejected {}/{seeds} (held-out ECE down {}/{seeds})",
                names[m], reduced[m], rejected[m], held_out[m]
            )
        })
        .collect();
    check(ok, format!("{} (each >= {need})", detail.join("; ")))
}

fn isotonic_oracle() -> Result<String, String> {
    let mut rng = stream_rng(14, 3000, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=30);
        let binary = rng.gen::<bool>();
        let y: Vec<f64> = (0..n)
            .map(|_| {
                if binary {
                    f64::from(u8::from(rng.gen::<bool>()))
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        let fit = pava(&y, &vec![1.0; n]);
        let dp = common::isotonic_dp(&y);
        for (a, b) in fit.iter().zip(&dp) {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        worst <= 1e-10,
        format!("max |PAVA - DP| = {worst:.2e} over 100 instances (tol 1e-10)"),
    )
}

/// `E[x1 | y = 1]` by rejection sampling from the generator; returns the
/// mean and its standard error.
fn rejection_sampling_mean(draws: usize, seed: u64) -> (f64, f64) {
    let mut s = NormalSampler::new(stream_rng(seed, 4000, 0));
    let mut kept = Vec::new();
    for _ in 0..draws {
        let (x1, x2) = (s.sample(), s.sample());
        if s.uniform() < common::sigmoid(x1 + x2) {
            kept.push(x1);
        }
    }
    mean_se(&kept)
}

/// Delta-method standard error of the score-weighted mean.
fn ratio_se(d: &AuditDataset, values: &[f64], est: f64) -> f64 {
    let n = d.len() as f64;
    let pbar = d.scores().iter().sum::<f64>() / n;
    let var = d
        .scores()
        .iter()
        .zip(values)
        .map(|(p, v)| (p * (v - est)).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    (var / n).sqrt() / pbar
}

fn inference() -> Result<String, String> {
    let (oracle, oracle_se) = rejection_sampling_mean(2_000_000, 15);
    let mut out = Vec::new();
    let mut z = Vec::new();
    for model in [SimModel::Bayes, SimModel::DropLast] {
        let cfg = SimConfig {
            n: 20_000,
            model,
            seed: 16,
            ..SimConfig::default()
        };
        let d = gen_synthetic_with_truth(&cfg, 0).unwrap().data;
        let x1 = d.feature_column(0);
        let est = inference_estimate(&d, &x1).unwrap();
        let se = (ratio_se(&d, &x1, est).powi(2) + oracle_se * oracle_se).sqrt();
        z.push((est - oracle) / se);
        out.push(format!("{model:?} {est:.4}"));
    }
    check(
        z[0].abs() <= 3.0 && z[1].abs() > 3.0,
        format!(
            "oracle {oracle:.4}; {} (z = {:.2}), {} (z = {:.2}); need |z_bayes| <= 3 < |z_drop|",
            out[0], z[0], out[1], z[1]
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_klce"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    match out.status.code() {
        Some(0 | 2) => Ok(out.stdout),
        c => Err(format!(
            "{args:?} exited {c:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        )),
    }
}

fn cli_determinism() -> Result<String, String> {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let data = p("data.csv");
    let calib = p("calib.csv");
    let sample = |path: &str, replicate: &str| {
        run_cli(&[
            "simulate",
            "--mode",
            "sample",
            "--model",
            "drop-last",
            "--d-grid",
            "3",
            "--n-grid",
            "300",
            "--seed",
            "5",
            "--replicate",
            replicate,
            "-o",
            path,
        ])
    };
    sample(&data, "0")?;
    sample(&calib, "1")?;
    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "audit",
            vec![
                "audit".into(),
                "-i".into(),
                data.clone(),
                "--seed".into(),
                "3".into(),
                "--bootstrap".into(),
                "200".into(),
            ],
        ),
        (
            "diagnose",
            vec!["diagnose".into(), "-i".into(), data.clone()],
        ),
        ("metrics", vec!["metrics".into(), "-i".into(), data.clone()]),
        (
            "recalibrate",
            vec![
                "recalibrate".into(),
                "--calib".into(),
                calib.clone(),
                "--test".into(),
                data.clone(),
                "--method".into(),
                "isotonic".into(),
                "--then-audit".into(),
                "-".into(),
                "-o".into(),
                p("re.csv"),
                "--bootstrap".into(),
                "100".into(),
            ],
        ),
        (
            "simulate",
            vec![
                "simulate".into(),
                "--mode".into(),
                "type2".into(),
                "--d-grid".into(),
                "2,3".into(),
                "--n-grid".into(),
                "80".into(),
                "--replicates".into(),
                "12".into(),
                "--bootstrap".into(),
                "50".into(),
                "--seed".into(),
                "9".into(),
            ],
        ),
        (
            "sample",
            vec![
                "simulate".into(),
                "--mode".into(),
                "sample".into(),
                "--n-grid".into(),
                "50".into(),
                "--seed".into(),
                "4".into(),
            ],
        ),
    ];
    for (name, args) in &commands {
        let mut outputs = Vec::new();
        for threads in ["1", "1", "2", "4"] {
            let mut full = vec!["--threads", threads];
            full.extend(args.iter().map(String::as_str));
            outputs.push(run_cli(&full)?);
        }
        if outputs.iter().any(|o| o != &outputs[0]) {
            return Err(format!("{name}: output differs across runs or --threads"));
        }
        if outputs[0].is_empty() {
            return Err(format!("{name}: empty output"));
        }
    }
    Ok(format!(
        "{} invocations byte-identical over 2 runs and --threads 1/2/4",
        commands.len()
    ))
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("oracle-equivalence", oracle_equivalence),
        ("unbiasedness", unbiasedness),
        ("zero-case", zero_case),
        ("type1-error", type1),
        ("type2-trend", type2),
        ("convergence-rate", convergence),
        ("recalibration-insufficiency", recalibration_insufficiency),
        ("isotonic-oracle", isotonic_oracle),
        ("inference-estimator", inference),
        ("cli-determinism", cli_determinism),
    ];
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = fmt_duration(start.elapsed());
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{took}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{took}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}
