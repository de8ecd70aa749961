//! Acceptance suite: every criterion prints one PASS/FAIL line; the process
//! fails if any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use osda::assign::{
    build_neighbors, compute_costs, lambda_from_costs, solve_locality, solve_semi_supervised,
    solve_unsupervised, Backend, ClassDistanceMatrix, CostMatrix, SolveConfig,
};
use osda::ati::{run_ati, AtiConfig, Variant};
use osda::cli::commands::cmd_adapt;
use osda::cli::config::{BaselineMode, RunConfig};
use osda::cli::pipeline::{adapt, baseline, load_inputs};
use osda::dataset::{ClassCatalog, Dataset, MeanTable, Role, SynthParams};
use osda::error::Error;
use osda::oracle::{brute_force_assignment, finite_diff_gradient, svm_dual_qp};
use osda::rng;
use osda::svm::{predict, train_binary, train_ovo, SvmConfig};
use osda::transform::{estimate_transform, gradient, loss, AssignmentMatrices};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn uniform_costs(r: &mut impl Rng, nc: usize, nt: usize) -> CostMatrix {
    CostMatrix::new(DMatrix::from_fn(nc, nt, |_, _| r.random_range(0.0..10.0))).unwrap()
}

fn same_objective(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.2}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

/// Exact linear assignment against exhaustive search.
fn assignment_optimality() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(101, "acceptance");
    let mut mismatches = 0;
    for _ in 0..200 {
        let nc = r.random_range(2..=5);
        let nt = r.random_range(nc..=8);
        let rho = [0.2, 0.5, 1.0][r.random_range(0..3)];
        let d = uniform_costs(&mut r, nc, nt);
        let cfg = SolveConfig::with_lambda(lambda_from_costs(&d, rho));
        let fast = solve_unsupervised(&d, &cfg).unwrap();
        let slow = brute_force_assignment(&d, None, &cfg).unwrap();
        if !same_objective(fast.objective(), slow.objective()) {
            mismatches += 1;
        }
    }
    let (fast_enough, time) = within(Duration::from_secs(10), start);
    outcome(mismatches == 0 && fast_enough, format!("{mismatches}/200 mismatches, {time}"))
}

/// Fixed labels are respected and the restricted optimum is found.
fn semi_supervised_constraints() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(102, "acceptance");
    let (mut mismatches, mut violations, mut infeasible) = (0, 0, 0);
    for _ in 0..200 {
        let nc = r.random_range(2..=5);
        let nt = r.random_range(nc..=8);
        let rho = [0.2, 0.5, 1.0][r.random_range(0..3)];
        let d = uniform_costs(&mut r, nc, nt);
        let n_fixed = r.random_range(1..=2);
        let targets = rand::seq::index::sample(&mut r, nt, n_fixed);
        let fixed: Vec<(usize, usize)> = targets.iter().map(|t| (t, r.random_range(0..nc))).collect();
        let cfg = SolveConfig {
            fixed_labels: fixed.clone(),
            ..SolveConfig::with_lambda(lambda_from_costs(&d, rho))
        };
        match (solve_semi_supervised(&d, &cfg), brute_force_assignment(&d, None, &cfg)) {
            (Ok(fast), Ok(slow)) => {
                if !same_objective(fast.objective(), slow.objective()) {
                    mismatches += 1;
                }
                if fixed.iter().any(|&(t, c)| !fast.x(c, t)) {
                    violations += 1;
                }
            }
            (Err(Error::Infeasible(_)), Err(Error::Infeasible(_))) => infeasible += 1,
            _ => mismatches += 1,
        }
    }
    let (fast_enough, time) = within(Duration::from_secs(10), start);
    outcome(
        mismatches == 0 && violations == 0 && fast_enough,
        format!("{mismatches} mismatches, {violations} violated fixings, {infeasible} infeasible on both sides, {time}"),
    )
}

/// Random points in the plane: class means and targets.
fn locality_instance(r: &mut impl Rng, nc: usize, nt: usize) -> (CostMatrix, ClassDistanceMatrix, Dataset) {
    let catalog = ClassCatalog::new((0..nc).map(|c| format!("c{c}"))).unwrap();
    let means = MeanTable::new((0..nc).collect(), DMatrix::from_fn(2, nc, |_, _| r.random_range(-3.0..3.0))).unwrap();
    let targets = Dataset::new(
        Role::Target,
        catalog,
        (0..nt).map(|t| t.to_string()).collect(),
        DMatrix::from_fn(2, nt, |_, _| r.random_range(-3.0..3.0)),
        vec![None; nt],
    )
    .unwrap();
    let d = compute_costs(&means, &targets).unwrap();
    (d, ClassDistanceMatrix::from_means(&means), targets)
}

/// Exact locality backend against exhaustive search; heuristic gap.
fn locality_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(103, "acceptance");
    let (mut exact_mismatch, mut heuristic_close) = (0, 0);
    for _ in 0..100 {
        let nc = r.random_range(2..=3);
        let nt = r.random_range(3..=5);
        let (d, dcc, targets) = locality_instance(&mut r, nc, nt);
        let nbrs = build_neighbors(&targets, 1).unwrap();
        let base = SolveConfig {
            neighbor_k: 1,
            ..SolveConfig::with_lambda(lambda_from_costs(&d, 0.5))
        };
        let exact_cfg = SolveConfig {
            backend: Backend::Exact,
            ..base.clone()
        };
        let heur_cfg = SolveConfig {
            backend: Backend::Heuristic,
            ..base.clone()
        };
        let reference = brute_force_assignment(&d, Some((&dcc, &nbrs)), &base).unwrap();
        let exact = solve_locality(&d, &dcc, &nbrs, &exact_cfg).unwrap();
        let heuristic = solve_locality(&d, &dcc, &nbrs, &heur_cfg).unwrap();
        if !same_objective(exact.objective(), reference.objective()) {
            exact_mismatch += 1;
        }
        let gap = (heuristic.objective() - reference.objective()) / reference.objective().abs().max(1e-12);
        if gap <= 0.05 {
            heuristic_close += 1;
        }
    }
    let (fast_enough, time) = within(Duration::from_secs(60), start);
    outcome(
        exact_mismatch == 0 && heuristic_close >= 95 && fast_enough,
        format!("exact mismatches {exact_mismatch}/100, heuristic within 5% on {heuristic_close}/100, {time}"),
    )
}

fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

/// Analytic gradient against central differences.
fn gradient_check() -> Outcome {
    let mut r = rng::stream(104, "acceptance");
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let dim = r.random_range(1..=6);
        let l = r.random_range(1..=10);
        let pairs = AssignmentMatrices::new(random_matrix(&mut r, dim, l), random_matrix(&mut r, dim, l)).unwrap();
        let w = random_matrix(&mut r, dim, dim);
        let analytic = gradient(&pairs, &w);
        let numeric = finite_diff_gradient(&pairs.ps, &pairs.pt, &w, 1e-5);
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            // relative error, with magnitudes below 1 treated as 1
            worst = worst.max((a - n).abs() / a.abs().max(1.0));
        }
    }
    outcome(worst < 1e-4, format!("worst entrywise relative error {worst:.2e}"))
}

/// Optimality bound and minimum-norm selection of the fitted map.
fn transform_optimality() -> Outcome {
    let mut r = rng::stream(105, "acceptance");
    let mut bound_failures = 0;
    for i in 0..50 {
        let dim = r.random_range(1..=8);
        // alternate between over- and underdetermined instances
        let l = if i % 2 == 0 { r.random_range(dim..=3 * dim) } else { r.random_range(1..=dim) };
        let pairs = AssignmentMatrices::new(random_matrix(&mut r, dim, l), random_matrix(&mut r, dim, l)).unwrap();
        let w0 = DMatrix::identity(dim, dim);
        let t = estimate_transform(&pairs, &w0).unwrap();
        let b_norm = (&pairs.pt * pairs.ps.transpose()).norm();
        let g = gradient(&pairs, t.matrix()).norm();
        if g > 1e-6 * (1.0 + b_norm) || t.residual > loss(&pairs, &w0) {
            bound_failures += 1;
        }
    }
    let mut norm_failures = 0;
    for _ in 0..20 {
        let dim = r.random_range(3..=8);
        let l = r.random_range(1..dim);
        let ps = random_matrix(&mut r, dim, l);
        let pairs = AssignmentMatrices::new(ps.clone(), random_matrix(&mut r, dim, l)).unwrap();
        let w = estimate_transform(&pairs, &DMatrix::zeros(dim, dim)).unwrap();
        // projector onto the orthogonal complement of the columns of P_S
        let gram = ps.transpose() * &ps;
        let inv = gram.try_inverse().unwrap();
        let complement = DMatrix::<f64>::identity(dim, dim) - &ps * inv * ps.transpose();
        for _ in 0..100 {
            let z = random_matrix(&mut r, dim, dim) * &complement;
            if w.matrix().norm() > (w.matrix() + z).norm() + 1e-12 {
                norm_failures += 1;
            }
        }
    }
    outcome(
        bound_failures == 0 && norm_failures == 0,
        format!("{bound_failures}/50 above the gradient bound, {norm_failures}/2000 perturbations reduced the norm"),
    )
}

fn shifted_config(seed: u64, unknown_ratio: f64) -> RunConfig {
    let base = RunConfig::default();
    RunConfig {
        seed,
        synth: SynthParams {
            unknown_ratio,
            ..base.synth.clone()
        },
        ..base
    }
}

/// Iterations to termination on the plain shifted problem.
fn convergence_behavior() -> Outcome {
    let start = Instant::now();
    let mut counts = Vec::new();
    for seed in 0..10 {
        let cfg = shifted_config(seed, 0.0);
        let inputs = load_inputs(&cfg).unwrap();
        let result = run_ati(&inputs.source, &inputs.target, &AtiConfig::default(), None).unwrap();
        counts.push(result.history.len());
    }
    let quick = counts.iter().filter(|&&k| k <= 5).count();
    let (fast_enough, time) = within(Duration::from_secs(30), start);
    outcome(
        quick >= 9 && fast_enough,
        format!("iterations per seed {counts:?}, {quick}/10 within 5, {time}"),
    )
}

/// Mean OS accuracy of adapted and baseline classifiers over five seeds.
fn mean_accuracies(unknown_ratio: f64) -> (f64, f64) {
    let (mut adapted, mut plain) = (0.0, 0.0);
    for seed in 0..5 {
        let cfg = shifted_config(seed, unknown_ratio);
        let inputs = load_inputs(&cfg).unwrap();
        adapted += adapt(&inputs, &cfg).unwrap().classified.report.unwrap().overall_accuracy;
        plain += baseline(&inputs, &cfg, BaselineMode::Source)
            .unwrap()
            .report
            .unwrap()
            .overall_accuracy;
    }
    (adapted / 5.0, plain / 5.0)
}

fn adaptation_benefit() -> Outcome {
    let (adapted, plain) = mean_accuracies(0.5);
    outcome(
        adapted >= plain + 0.10,
        format!("adapted {:.1}% vs baseline {:.1}%", 100.0 * adapted, 100.0 * plain),
    )
}

fn unknown_ratio_robustness() -> Outcome {
    let ratios = [0.1, 0.5, 1.0, 2.0];
    let runs: Vec<(f64, f64)> = ratios.iter().map(|&q| mean_accuracies(q)).collect();
    let adapted: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let plain: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let spread = adapted.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - adapted.iter().copied().fold(f64::INFINITY, f64::min);
    let monotone = plain.windows(2).all(|w| w[1] < w[0]);
    let drop = plain[0] - plain[plain.len() - 1];
    let pct = |v: &[f64]| v.iter().map(|a| format!("{:.1}", 100.0 * a)).collect::<Vec<_>>().join("/");
    outcome(
        spread < 0.05 && monotone && drop > 0.10,
        format!(
            "adapted {} (spread {:.1} pts), baseline {} (drop {:.1} pts, monotone {monotone})",
            pct(&adapted),
            100.0 * spread,
            pct(&plain),
            100.0 * drop
        ),
    )
}

/// Outlier counts of the first iteration at rho = 1 and rho = 0.
fn rho_extremes() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for seed in 0..3 {
        let data = osda::dataset::synth_shift(
            &SynthParams {
                unknown_ratio: 0.5,
                ..shifted_config(seed, 0.5).synth
            },
            seed,
        )
        .unwrap();
        let n_targets = data.target.len();
        let n_classes = data.source.catalog().len();
        for rho in [1.0, 0.0] {
            let cfg = AtiConfig {
                variant: Variant::AtiLambda,
                rho,
                max_iterations: 1,
                ..AtiConfig::default()
            };
            let first = &run_ati(&data.source, &data.target, &cfg, None).unwrap().history[0];
            let expected = if rho == 1.0 { 0 } else { n_targets - n_classes };
            ok &= first.n_outliers == expected;
            notes.push(format!("rho={rho}: {} (want {expected})", first.n_outliers));
        }
    }
    outcome(ok, notes.join(", "))
}

fn svm_correctness() -> Outcome {
    let mut r = rng::stream(110, "acceptance");
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = r.random_range(10..=40);
        let dim = r.random_range(2..=5);
        let x = DMatrix::from_fn(dim, n, |_, _| r.random_range(-2.0..2.0));
        let y: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let c = [0.001, 0.1, 1.0][r.random_range(0..3)];
        let cfg = SvmConfig {
            c,
            ..SvmConfig::default()
        };
        let fit = train_binary(&x, &y, &cfg).unwrap();
        let augmented = x.clone().insert_row(dim, 1.0);
        let reference = svm_dual_qp(&augmented, &y, c);
        worst = worst.max((fit.dual - reference.objective).abs() / reference.objective.abs());
    }

    // separable blobs, trained with the default C
    let catalog = ClassCatalog::new(["a", "b", "c"]).unwrap();
    let centers = [(-20.0, 0.0), (20.0, 0.0), (0.0, 30.0)];
    let mut cols = Vec::new();
    let mut labels = Vec::new();
    for (k, &(cx, cy)) in centers.iter().enumerate() {
        for _ in 0..40 {
            let dx: f64 = r.sample(StandardNormal);
            let dy: f64 = r.sample(StandardNormal);
            cols.extend([cx + dx, cy + dy]);
            labels.push(Some(k));
        }
    }
    let blobs = Dataset::new(
        Role::Source,
        catalog,
        (0..labels.len()).map(|i| i.to_string()).collect(),
        DMatrix::from_column_slice(2, labels.len(), &cols),
        labels.clone(),
    )
    .unwrap();
    let model = train_ovo(&blobs, &SvmConfig::default()).unwrap();
    let predicted = predict(&model, &blobs).unwrap();
    let correct = predicted.iter().zip(&labels).filter(|(p, l)| Some(**p) == **l).count();
    let again = train_ovo(&blobs, &SvmConfig::default()).unwrap();
    let identical = again == model;
    outcome(
        worst <= 1e-4 && correct == labels.len() && identical,
        format!(
            "worst dual gap to oracle {worst:.2e}, blobs {correct}/{}, retrain identical {identical}",
            labels.len()
        ),
    )
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shifted_config(7, 0.5);
    cfg.out_dir = dir.path().join("first");
    cmd_adapt(&cfg).unwrap();
    let mut again = RunConfig::load(cfg.out_dir.join("manifest.cfg")).unwrap();
    again.out_dir = dir.path().join("second");
    cmd_adapt(&again).unwrap();
    let same = |name: &str| {
        let a = std::fs::read(dir.path().join("first").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("second").join(name)).unwrap();
        a == b
    };
    let predictions = same("predictions.csv");
    let report = same("report.json");
    outcome(
        predictions && report,
        format!("predictions identical {predictions}, report identical {report}"),
    )
}

type Criterion = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 11] = [
        ("assignment optimality", assignment_optimality),
        ("semi-supervised constraints", semi_supervised_constraints),
        ("locality linearization equivalence", locality_equivalence),
        ("gradient check", gradient_check),
        ("minimum norm and optimality of the map", transform_optimality),
        ("convergence behaviour", convergence_behavior),
        ("adaptation benefit", adaptation_benefit),
        ("unknown-ratio robustness", unknown_ratio_robustness),
        ("rho extremes", rho_extremes),
        ("svm correctness", svm_correctness),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {status} {name}: {}", i + 1, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

