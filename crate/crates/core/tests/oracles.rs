//! Production routines against small independent reference computations.

use nalgebra::DMatrix;
use rand::Rng;

use osda::dataset::{subsample, ClassCatalog, Dataset, Role, SampleSize};
use osda::eval::{aggregate, score, EvalReport, Protocol};
use osda::rng;
use osda::svm::{predict, train_ovo, SvmConfig};
use osda::transform::{apply_transform, estimate_transform, AssignmentMatrices, Transform};

fn random(r: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

fn dataset(features: DMatrix<f64>, labels: Vec<Option<usize>>, n_shared: usize) -> Dataset {
    let n = labels.len();
    let role = if labels.iter().all(Option::is_some) { Role::Source } else { Role::Target };
    Dataset::new(
        role,
        ClassCatalog::new((0..n_shared).map(|c| format!("k{c}"))).unwrap(),
        (0..n).map(|i| format!("x{i}")).collect(),
        features,
        labels,
    )
    .unwrap()
}

/// Gauss-Jordan elimination with partial pivoting, written out by hand.
fn solve_dense(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| a[i].iter().chain(b[i].iter()).copied().collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = aug[row][col];
                for k in 0..n + m {
                    aug[row][k] -= f * aug[col][k];
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}

#[test]
fn overdetermined_fit_matches_normal_equations() {
    let mut r = rng::stream(21, "oracle-test");
    let (dim, l) = (8, 40);
    let ps = random(&mut r, dim, l);
    let pt = random(&mut r, dim, l);
    // W (Ps Psᵀ) = Pt Psᵀ, solved row by row through the transpose system
    let gram: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| (0..l).map(|k| ps[(i, k)] * ps[(j, k)]).sum()).collect())
        .collect();
    let rhs_t: Vec<Vec<f64>> = (0..dim)
        .map(|j| (0..dim).map(|i| (0..l).map(|k| pt[(i, k)] * ps[(j, k)]).sum()).collect())
        .collect();
    let wt = solve_dense(&gram, &rhs_t);

    let pairs = AssignmentMatrices::new(ps, pt).unwrap();
    let fit = estimate_transform(&pairs, &DMatrix::identity(dim, dim)).unwrap();
    for i in 0..dim {
        for j in 0..dim {
            assert!((fit.matrix()[(i, j)] - wt[j][i]).abs() < 1e-6, "entry ({i},{j})");
        }
    }
}

#[test]
fn applying_a_map_matches_explicit_products() {
    let mut r = rng::stream(22, "oracle-test");
    let w = random(&mut r, 5, 5);
    let x = random(&mut r, 5, 30);
    let ds = dataset(x.clone(), vec![Some(0); 30], 1);
    let moved = apply_transform(&Transform::from_matrix(w.clone()).unwrap(), &ds).unwrap();
    for s in 0..30 {
        for i in 0..5 {
            let mut acc = 0.0;
            for j in 0..5 {
                acc += w[(i, j)] * x[(j, s)];
            }
            assert!((moved.features()[(i, s)] - acc).abs() < 1e-12);
        }
    }
    assert_eq!(moved.labels(), ds.labels());
}

#[test]
fn votes_match_per_pair_signs() {
    let mut r = rng::stream(23, "oracle-test");
    let n_classes = 4;
    let train_labels: Vec<Option<usize>> = (0..80).map(|i| Some(i % n_classes)).collect();
    let mut x = random(&mut r, 3, 80);
    for (i, l) in train_labels.iter().enumerate() {
        x[(l.unwrap() % 3, i)] += 2.0;
    }
    // the fourth class is the unknown class of a three-class catalog
    let model = train_ovo(&dataset(x, train_labels, 3), &SvmConfig::default()).unwrap();
    let test = random(&mut r, 3, 500) * 3.0;
    let predicted = predict(&model, &dataset(test.clone(), vec![None; 500], 3)).unwrap();

    for s in 0..500 {
        let mut votes = [0usize; 4];
        for p in &model.pairs {
            let mut v = p.bias;
            for k in 0..3 {
                v += p.weights[k] * test[(k, s)];
            }
            votes[if v > 0.0 { p.positive } else { p.negative }] += 1;
        }
        let top = *votes.iter().max().unwrap();
        let expected = votes.iter().position(|&v| v == top).unwrap();
        assert_eq!(predicted[s], expected, "sample {s}");
    }
}

#[test]
fn aggregate_matches_two_pass_statistics() {
    let mut r = rng::stream(24, "oracle-test");
    let catalog = ClassCatalog::new(["a", "b"]).unwrap();
    let reports: Vec<EvalReport> = (0..7)
        .map(|_| {
            let truth: Vec<usize> = (0..50).map(|_| r.random_range(0..3)).collect();
            let pred: Vec<usize> = (0..50).map(|_| r.random_range(0..3)).collect();
            score(&pred, &truth, &catalog, Protocol::Os).unwrap()
        })
        .collect();
    let agg = aggregate(&reports).unwrap();

    let values: Vec<f64> = reports.iter().map(|r| r.overall_accuracy).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((agg.overall_accuracy.mean - mean).abs() < 1e-12);
    assert!((agg.overall_accuracy.std - var.sqrt()).abs() < 1e-12);
    assert_eq!(agg.overall_accuracy.n, 7);
}

#[test]
fn subsample_depends_on_seed() {
    let mut r = rng::stream(25, "oracle-test");
    let ds = dataset(random(&mut r, 2, 100), vec![Some(0); 100], 1);
    let a = subsample(&ds, SampleSize::Total(20), 1).unwrap();
    let b = subsample(&ds, SampleSize::Total(20), 2).unwrap();
    let again = subsample(&ds, SampleSize::Total(20), 1).unwrap();
    assert_ne!(a.ids(), b.ids());
    assert_eq!(a.ids(), again.ids());
    // rows keep their original relative order
    let pos: Vec<usize> = a.ids().iter().map(|id| id[1..].parse().unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
}
