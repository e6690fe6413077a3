//! Acceptance run. Prints one PASS/FAIL line per criterion; numeric arguments pick a subset,
//! e.g. `cargo test --test acceptance -- 2 5`.
//!
//! Criteria 6 to 8 measure reproduction trends. They are reported with the same thresholds as
//! the others but do not fail the process; everything else does.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{check_gradients, random_dense_spn, random_rows, random_spn, GradCheck};
use sspn::config::ExperimentConfig;
use sspn::data::{load_csv, two_moons};
use sspn::experiment::{run_experiment_on, ExperimentReport, TrialResult};
use sspn::gen_learn::{fit_generative, EmConfig};
use sspn::metrics::{accuracy, predict_all};
use sspn::safe_ssl::{mcp_spn, project_simplex, McpConfig, Objective};
use sspn::spn::{parse_model, write_model};
use sspn::structure::{learn_structure, remove_degenerate_leaves, truncate, StructureConfig};
use sspn::{Batch, Evidence, Spn64};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

const ALL_DATASETS: [&str; 9] =
    ["bupa", "fertility", "haberman", "ilpd", "ionosphere", "iris", "parkinsons", "wdbc", "wine"];

/// Experiment reports keyed by `(dataset, objective)`; later requests for fewer trials reuse
/// the leading seeds of an earlier, larger run with the same protocol.
#[derive(Default)]
struct Runs {
    reports: BTreeMap<(String, &'static str), ExperimentReport>,
}

fn protocol(name: &str, objective: &str, trials: usize) -> Option<ExperimentConfig> {
    let path = common::data_path(&format!("{name}.csv"));
    if !path.exists() {
        return None;
    }
    let mut text = format!("dataset = {}\nobjective = {objective}\ntrials = {trials}\noracle = false\n", path.display());
    // Discriminative fits otherwise run to the iteration cap; keeps the single-core budget.
    if objective == "discriminative" {
        text.push_str("grad_max_iters = 100\ngrad_rel_tol = 1e-4\n");
    }
    Some(ExperimentConfig::parse(&text, None).unwrap())
}

impl Runs {
    fn get(&mut self, name: &str, objective: &'static str, trials: usize) -> Option<Vec<TrialResult>> {
        let key = (name.to_string(), objective);
        let enough = self.reports.get(&key).is_some_and(|r| r.trials.len() + r.failures.len() >= trials);
        if !enough {
            let cfg = protocol(name, objective, trials)?;
            let data = load_csv::<f64>(cfg.dataset.as_ref().unwrap(), &cfg.label_column).unwrap();
            let t = Instant::now();
            let report = run_experiment_on(&data, &cfg);
            eprintln!(
                "  {name} {objective}: {} trials, {} failed, {:.0}s",
                report.trials.len(),
                report.failures.len(),
                t.elapsed().as_secs_f64()
            );
            self.reports.insert(key.clone(), report);
        }
        let r = &self.reports[&key];
        Some(r.trials.iter().filter(|t| t.seed < trials as u64).cloned().collect())
    }
}

fn safety(runs: &mut Runs) -> Verdict {
    let mut total = 0;
    let mut safe = 0;
    let mut failed_trials = 0;
    let mut absent = Vec::new();
    for name in ALL_DATASETS {
        for objective in ["generative", "discriminative"] {
            match runs.get(name, objective, 10) {
                None => {
                    if objective == "generative" {
                        absent.push(name);
                    }
                }
                Some(trials) => {
                    failed_trials += 10 - trials.len();
                    total += trials.len();
                    safe += trials.iter().filter(|t| t.safety_ssl >= t.safety_supervised - 1e-9).count();
                }
            }
        }
    }
    let mut detail = format!("{safe}/{total} runs safe, {failed_trials} trials errored");
    if !absent.is_empty() {
        detail.push_str(&format!("; NOT RUN (data file absent): {}", absent.join(", ")));
    }
    verdict(safe == total && failed_trials == 0 && total > 0, detail)
}

fn gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut p, mut q) = (GradCheck::default(), GradCheck::default());
    let mut largest = 0;
    for _ in 0..20 {
        let d = rng.random_range(1..=3);
        let k = rng.random_range(2..=3);
        let spn = random_dense_spn(&mut rng, d, k, 50);
        largest = largest.max(spn.len());
        for seed in 0..3 {
            let (a, b) = check_gradients(&spn, seed);
            p.merge(a);
            q.merge(b);
        }
    }
    verdict(
        p.worst <= 1.0 && q.worst <= 1.0 && largest <= 50,
        format!(
            "{} parameter and {} soft-label components, worst error {:.3} and {:.3} of tolerance",
            p.compared, q.compared, p.worst, q.worst
        ),
    )
}

fn monotone(trace: &[f64], clamped: &[bool]) -> bool {
    trace.windows(2).enumerate().all(|(i, w)| {
        let tol = if clamped.get(i).copied().unwrap_or(false) { 1e-6 } else { 1e-8 };
        w[1] >= w[0] - tol
    })
}

fn em_monotone() -> Verdict {
    let mut runs = 0;
    let mut ok = 0;
    let mut steps = 0;
    for seed in 0..10 {
        let (rows, labels) = two_moons(200, 0.1, seed);
        let (x, y, u, _) = moons_split(&rows, &labels, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<Vec<f64>> = u.iter().map(|_| common::interior_simplex(&mut rng, 2)).collect();
        let cfg = StructureConfig { seed, ..StructureConfig::default() };
        let mut spn = learn_structure(&x, &y, &u, 2, &cfg).unwrap().spn;
        let batch = Batch::new(&x, &y, &u, &q).unwrap();
        let r = fit_generative(&mut spn, &batch, &EmConfig { max_iters: 100, ..EmConfig::default() }).unwrap();
        runs += 1;
        steps += r.iterations;
        ok += monotone(&r.trace, &r.clamped) as usize;

        let p = common::problem("iris.csv", seed);
        let cfg = StructureConfig { seed, ..StructureConfig::default() };
        let mut spn = learn_structure(&p.x, &p.y, &p.u, p.k, &cfg).unwrap().spn;
        let q: Vec<Vec<f64>> = p.u.iter().map(|_| common::interior_simplex(&mut rng, p.k)).collect();
        let batch = Batch::new(&p.x, &p.y, &p.u, &q).unwrap();
        let r = fit_generative(&mut spn, &batch, &EmConfig { max_iters: 100, ..EmConfig::default() }).unwrap();
        runs += 1;
        steps += r.iterations;
        ok += monotone(&r.trace, &r.clamped) as usize;
    }
    verdict(ok == runs, format!("{ok}/{runs} fits monotone over {steps} EM steps"))
}

fn marginal_consistency() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for _ in 0..100 {
        let d = rng.random_range(1..=5);
        let k = rng.random_range(1..=4);
        let spn = random_spn(&mut rng, d, k, 50);
        for x in random_rows(&mut rng, 10, d) {
            let total: f64 = spn.class_log_joint(&x).unwrap().iter().map(|v| v.exp()).sum();
            let marginal = spn.log_value(&Evidence::marginal(&x)).unwrap().exp();
            worst = worst.max((total - marginal).abs() / marginal);
            pairs += 1;
        }
    }
    verdict(worst <= 1e-10, format!("{pairs} pairs, worst relative gap {worst:.2e}"))
}

/// Minimizer of `|v - p|^2` over a regular grid on the simplex with `steps` cells per axis.
fn grid_projection(v: &[f64], steps: usize) -> (Vec<f64>, f64) {
    let h = 1.0 / steps as f64;
    let dist = |p: &[f64]| p.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut best = (Vec::new(), f64::INFINITY);
    match v.len() {
        2 => {
            for i in 0..=steps {
                let p = [i as f64 * h, 1.0 - i as f64 * h];
                let d = dist(&p);
                if d < best.1 {
                    best = (p.to_vec(), d);
                }
            }
        }
        3 => {
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let p = [i as f64 * h, j as f64 * h, (steps - i - j) as f64 * h];
                    let d = dist(&p);
                    if d < best.1 {
                        best = (p.to_vec(), d);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    best
}

fn simplex_projection() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_obj: f64 = 0.0;
    let mut worst_coord = [0.0f64; 2];
    let mut beaten = 0;
    let mut idempotent = 0;
    let mut cases = 0;
    for (slot, (k, steps)) in [(2usize, 10_000usize), (3, 1_000)].into_iter().enumerate() {
        for _ in 0..100 {
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = project_simplex(&v);
            let (g, gd) = grid_projection(&v, steps);
            let pd: f64 = p.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
            worst_obj = worst_obj.max((pd - gd).abs());
            worst_coord[slot] = worst_coord[slot].max(p.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            beaten += (gd < pd - 1e-12) as usize;
            idempotent += (project_simplex(&p) == p) as usize;
            cases += 1;
        }
    }
    // Coordinates can only be pinned to the grid resolution on the triangle.
    let pass = worst_obj <= 1e-4 && worst_coord[0] <= 1e-4 && worst_coord[1] <= 1e-3 && beaten == 0 && idempotent == cases;
    verdict(
        pass,
        format!(
            "{cases} inputs; objective gap {worst_obj:.1e}; coordinate gap {:.1e} on the segment, {:.1e} on the triangle; grid better in {beaten}; idempotent {idempotent}/{cases}",
            worst_coord[0], worst_coord[1]
        ),
    )
}

/// Five labelled points per class, the rest unlabelled. Returns `(x, y, u, true labels of u)`.
#[allow(clippy::type_complexity)]
fn moons_split(
    rows: &[Vec<f64>],
    labels: &[usize],
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (mut x, mut y, mut u, mut uy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut taken = [0, 0];
    for i in idx {
        let l = labels[i];
        if taken[l] < 5 {
            taken[l] += 1;
            x.push(rows[i].clone());
            y.push(l);
        } else {
            u.push(rows[i].clone());
            uy.push(l);
        }
    }
    (x, y, u, uy)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn two_moons_trend() -> Verdict {
    let (mut sup, mut ssl, mut iters) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..10 {
        let (rows, labels) = two_moons(200, 0.1, seed);
        let (tx, ty) = two_moons(500, 0.1, seed + 1000);
        let (x, y, u, _) = moons_split(&rows, &labels, seed);
        let cfg = StructureConfig { seed, ..StructureConfig::default() };
        let structure = learn_structure(&x, &y, &u, 2, &cfg).unwrap();
        let mut m = McpConfig::new(Objective::Generative);
        m.seed = seed;
        m.max_outer = 30;
        let out = mcp_spn(&structure.spn, &x, &y, &u, None, &m).unwrap();
        sup.push(accuracy(&ty, &predict_all(&out.theta_plus, &tx).unwrap()));
        ssl.push(accuracy(&ty, &predict_all(&out.theta_star, &tx).unwrap()));
        iters.push(out.history.len());
    }
    let (ms, mu) = (median(sup), median(ssl));
    let max_iter = *iters.iter().max().unwrap();
    verdict(
        mu >= 0.90 && ms < mu && max_iter <= 30,
        format!("median accuracy: ssl {mu:.3}, supervised {ms:.3}; at most {max_iter} outer iterations"),
    )
}

/// One-sided sign test: probability of at least `wins` successes in `wins + losses` fair flips.
fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let ln_choose = |k: usize| -> f64 { (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum() };
    (wins..=n).map(|k| (ln_choose(k) - n as f64 * std::f64::consts::LN_2).exp()).sum()
}

fn trend(runs: &mut Runs, names: &[&str], objective: &'static str, gap: f64) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in names {
        let Some(trials) = runs.get(name, objective, 100) else {
            pass = false;
            parts.push(format!("{name}: NOT RUN (data file absent)"));
            continue;
        };
        let n = trials.len() as f64;
        let sup = trials.iter().map(|t| t.supervised_metric).sum::<f64>() / n;
        let ssl = trials.iter().map(|t| t.ssl_metric).sum::<f64>() / n;
        let d: Vec<f64> = trials.iter().map(|t| t.ssl_metric - t.supervised_metric).collect();
        let wins = d.iter().filter(|&&v| v > 1e-12).count();
        let losses = d.iter().filter(|&&v| v < -1e-12).count();
        let p = sign_test(wins, losses);
        let ok = if objective == "discriminative" { ssl > sup && p < 0.05 } else { ssl - sup >= gap };
        pass &= ok && trials.len() == 100;
        parts.push(format!(
            "{name} {} trials: supervised {sup:.4}, ssl {ssl:.4}, {wins} wins / {losses} losses, p = {p:.3}",
            trials.len()
        ));
    }
    verdict(pass, parts.join("; "))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("d.conf");
    std::fs::write(
        &conf,
        format!("dataset = {}\nobjective = discriminative\noracle = true\nmax_outer = 8\n", common::data_path("iris.csv").display()),
    )
    .unwrap();
    let run = |threads: &str, out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_sspn"))
            .args(["experiment", "--config", conf.to_str().unwrap(), "--trials", "6", "--out-dir", out.to_str().unwrap()])
            .env("SSPN_THREADS", threads)
            .output()
            .unwrap()
            .status;
        assert!(status.success());
    };
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run("1", &a);
    run("1", &b);
    run("8", &c);
    let mut same = 0;
    let files = ["report.csv", "results.jsonl", "failures.txt"];
    for f in files {
        let x = std::fs::read(a.join(f)).unwrap();
        same += (x == std::fs::read(b.join(f)).unwrap() && x == std::fs::read(c.join(f)).unwrap()) as usize;
    }
    verdict(same == files.len(), format!("{same}/{} report files byte-identical across 3 runs (1, 1, 8 threads)", files.len()))
}

fn round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let files = common::DATASETS;
    let (mut identical, mut valid) = (0, 0);
    for i in 0..50u64 {
        let p = common::problem(files[i as usize % files.len()], i);
        let cfg = StructureConfig { seed: i, ..StructureConfig::default() };
        let learned = remove_degenerate_leaves(&learn_structure(&p.x, &p.y, &p.u, p.k, &cfg).unwrap());
        let depth = rng.random_range(1..=learned.spn.max_depth());
        let spn = truncate(&learned, depth).spn;
        let text = write_model(&spn);
        let back: Spn64 = parse_model(&text).unwrap();
        identical += (write_model(&back) == text) as usize;
        valid += back.is_valid() as usize;
    }
    verdict(identical == 50 && valid == 50, format!("{identical}/50 byte-identical, {valid}/50 valid"))
}

fn main() {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| picked.is_empty() || picked.contains(&n);
    let names = [
        "safety guarantee",
        "gradient correctness",
        "EM monotonicity",
        "marginal consistency",
        "simplex projection",
        "two-moons trend",
        "discriminative trend",
        "generative trend",
        "determinism",
        "model round trip",
    ];
    let mut runs = Runs::default();
    // Large experiment runs first so the safety sweep can reuse their leading seeds.
    let order = [2, 3, 4, 5, 10, 9, 6, 8, 7, 1];
    let mut results: BTreeMap<usize, (Verdict, f64)> = BTreeMap::new();
    for n in order {
        if !wanted(n) {
            continue;
        }
        eprintln!("criterion {n}: {}", names[n - 1]);
        let t = Instant::now();
        let v = match n {
            1 => safety(&mut runs),
            2 => gradients(),
            3 => em_monotone(),
            4 => marginal_consistency(),
            5 => simplex_projection(),
            6 => two_moons_trend(),
            7 => trend(&mut runs, &["iris", "wine", "ionosphere"], "discriminative", 0.0),
            8 => trend(&mut runs, &["bupa", "haberman"], "generative", 1.0),
            9 => determinism(),
            10 => round_trip(),
            _ => unreachable!(),
        };
        results.insert(n, (v, t.elapsed().as_secs_f64()));
    }
    let mut hard_failures = 0;
    for (n, (v, secs)) in &results {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {tag} {} ({secs:.0}s): {}", names[n - 1], v.detail);
        if !v.pass && !(6..=8).contains(n) {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
