use nalgebra::DMatrix;
use proptest::prelude::*;

use osda::assign::{lambda_from_costs, solve_unsupervised, Assignment, CostMatrix, SolveConfig};
use osda::dataset::{class_means, ClassCatalog, Dataset, MeanTable, Role};
use osda::eval::{score, Protocol};
use osda::oracle::brute_force_assignment;
use osda::svm::{predict, train_ovo, SvmConfig};
use osda::transform::{build_pairs, estimate_transform, loss, AssignmentMatrices};

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn catalog(n: usize) -> ClassCatalog {
    ClassCatalog::new((0..n).map(|c| format!("k{c}"))).unwrap()
}

fn labeled(features: DMatrix<f64>, labels: Vec<usize>, n_shared: usize) -> Dataset {
    let n = labels.len();
    Dataset::new(
        Role::Source,
        catalog(n_shared),
        (0..n).map(|i| format!("s{i}")).collect(),
        features,
        labels.into_iter().map(Some).collect(),
    )
    .unwrap()
}

/// A permutation of `0..n` drawn from a shuffled index vector.
fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flow_matches_exhaustive_search(
        (nc, nt) in (2usize..=4).prop_flat_map(|nc| (Just(nc), nc..=6)),
        seed_costs in prop::collection::vec(0.0f64..10.0, 24),
        rho in 0.0f64..=1.0,
    ) {
        let d = CostMatrix::new(DMatrix::from_fn(nc, nt, |c, t| seed_costs[c * 6 + t])).unwrap();
        let cfg = SolveConfig::with_lambda(lambda_from_costs(&d, rho));
        let fast = solve_unsupervised(&d, &cfg).unwrap();
        let slow = brute_force_assignment(&d, None, &cfg).unwrap();
        prop_assert!((fast.objective() - slow.objective()).abs() <= 1e-9);
    }

    #[test]
    fn class_means_ignore_sample_order(
        x in matrix(3, 12, -5.0, 5.0),
        perm in permutation(12),
    ) {
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let ds = labeled(x, labels, 3);
        let shuffled = ds.select(&perm);
        let a = class_means(&ds, ds.catalog()).unwrap();
        let b = class_means(&shuffled, ds.catalog()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fitted_map_never_worse_than_start(
        dim in 1usize..=5,
        l in 1usize..=8,
        seed in prop::collection::vec(-3.0f64..3.0, 2 * 5 * 8 + 25),
    ) {
        let ps = DMatrix::from_fn(dim, l, |r, c| seed[r * 8 + c]);
        let pt = DMatrix::from_fn(dim, l, |r, c| seed[40 + r * 8 + c]);
        let w0 = DMatrix::from_fn(dim, dim, |r, c| seed[80 + r * 5 + c]);
        let pairs = AssignmentMatrices::new(ps, pt).unwrap();
        let fit = estimate_transform(&pairs, &w0).unwrap();
        prop_assert!(fit.residual <= loss(&pairs, &w0) + 1e-12);
    }

    #[test]
    fn scoring_is_order_free_and_consistent(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
        perm_seed in any::<u64>(),
    ) {
        let cat = catalog(3);
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let os = score(&pred, &truth, &cat, Protocol::Os).unwrap();
        prop_assert_eq!(os.confusion.iter().flatten().sum::<usize>(), os.n_evaluated);

        // reversing and rotating the sample order leaves the report unchanged
        let k = (perm_seed as usize) % pred.len();
        let mut p2 = pred.clone();
        let mut t2 = truth.clone();
        p2.reverse();
        t2.reverse();
        p2.rotate_left(k);
        t2.rotate_left(k);
        prop_assert_eq!(&score(&p2, &t2, &cat, Protocol::Os).unwrap(), &os);

        if let Ok(star) = score(&pred, &truth, &cat, Protocol::OsStar) {
            prop_assert!(star.n_evaluated <= os.n_evaluated);
            prop_assert_eq!(star.confusion.iter().flatten().sum::<usize>(), star.n_evaluated);
        }
    }

    #[test]
    fn outliers_shrink_as_lambda_grows(
        (nc, nt) in (2usize..=4).prop_flat_map(|nc| (Just(nc), nc..=8)),
        seed_costs in prop::collection::vec(0.0f64..10.0, 32),
        lambdas in (0.0f64..12.0, 0.0f64..12.0),
    ) {
        let d = CostMatrix::new(DMatrix::from_fn(nc, nt, |c, t| seed_costs[c * 8 + t])).unwrap();
        let (lo, hi) = if lambdas.0 <= lambdas.1 { lambdas } else { (lambdas.1, lambdas.0) };
        let a = solve_unsupervised(&d, &SolveConfig::with_lambda(lo)).unwrap();
        let b = solve_unsupervised(&d, &SolveConfig::with_lambda(hi)).unwrap();
        prop_assert!(a.n_outliers() >= b.n_outliers());
        for sol in [&a, &b] {
            prop_assert!(sol.class_counts().iter().all(|&n| n >= 1));
            prop_assert_eq!(sol.n_assigned() + sol.n_outliers(), nt);
        }
    }

    #[test]
    fn prediction_follows_sample_order(
        test in matrix(2, 20, -10.0, 10.0),
        perm in permutation(20),
    ) {
        let centers = [(-6.0, 0.0), (6.0, 0.0), (0.0, 6.0)];
        let mut cols = Vec::new();
        let mut labels = Vec::new();
        for (k, (cx, cy)) in centers.iter().enumerate() {
            for j in 0..5 {
                cols.extend([cx + 0.3 * j as f64, cy - 0.2 * j as f64]);
                labels.push(k);
            }
        }
        let train = labeled(DMatrix::from_column_slice(2, 15, &cols), labels, 3);
        let model = train_ovo(&train, &SvmConfig::default()).unwrap();
        let samples = labeled(test, vec![0; 20], 3);
        let base = predict(&model, &samples).unwrap();
        let shuffled = predict(&model, &samples.select(&perm)).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(shuffled[i], base[p]);
        }
    }

    #[test]
    fn pair_count_equals_assigned_targets(
        labels in prop::collection::vec(prop::option::of(0usize..3), 1..30),
    ) {
        let nt = labels.len();
        let means = MeanTable::new(vec![0, 1, 2], DMatrix::from_fn(2, 3, |r, c| (r + 2 * c) as f64)).unwrap();
        let targets = labeled(DMatrix::from_fn(2, nt, |r, c| (r * nt + c) as f64), vec![0; nt], 3)
            .with_role(Role::Target)
            .unwrap();
        let assignment = Assignment::new(labels.clone(), 3, 0.0).unwrap();
        let pairs = build_pairs(&assignment, &means, &targets).unwrap();
        prop_assert_eq!(pairs.len(), labels.iter().flatten().count());
    }
}

#[test]
fn os_star_ignores_unknown_class_only() {
    // unknowns predicted badly drag OS down but leave OS* untouched
    let cat = catalog(2);
    let truth = [0, 0, 1, 1, 2, 2];
    let pred = [0, 0, 1, 1, 0, 1];
    let os = score(&pred, &truth, &cat, Protocol::Os).unwrap();
    let star = score(&pred, &truth, &cat, Protocol::OsStar).unwrap();
    assert_eq!(star.mean_class_accuracy, 1.0);
    assert!(os.mean_class_accuracy < star.mean_class_accuracy);
}
