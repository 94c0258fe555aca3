use ccgen::eval::*;
use ndarray::Array2;
use proptest::prelude::*;

fn curves(grid: &[f64], f: impl Fn(usize, f64) -> f64, rows: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|r| grid.iter().map(|&t| f(r, t)).collect()).collect()
}

#[test]
fn mise_perfect_and_offset() {
    let grid = uniform_grid(65);
    let truth = curves(&grid, |r, t| (t * r as f64).sin(), 3);
    assert_eq!(mise(&truth, &truth, &grid).unwrap(), 0.0);
    let shifted = curves(&grid, |r, t| (t * r as f64).sin() - 0.5, 3);
    assert!((mise(&shifted, &truth, &grid).unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn mise_quadratic_against_closed_form() {
    let zero = |g: &[f64]| vec![vec![0.0; g.len()]];
    let coarse = uniform_grid(65);
    let fine = uniform_grid(641);
    let a = mise(&[coarse.clone()], &zero(&coarse), &coarse).unwrap();
    let b = mise(&[fine.clone()], &zero(&fine), &fine).unwrap();
    assert!((a - 1.0 / 3.0).abs() < 1e-3);
    assert!((b - 1.0 / 3.0).abs() < 1e-5);
}

#[test]
fn mise_rejects_mismatched_grids() {
    let grid = uniform_grid(5);
    assert!(matches!(
        mise(&[vec![0.0; 4]], &[vec![0.0; 5]], &grid),
        Err(ccgen::Error::GridMismatch(_))
    ));
}

#[test]
fn dpe_examples() {
    let mesh = uniform_grid(65);
    let truth = curves(&mesh, |_, t| -(t - 0.5).powi(2), 1);
    let at_zero = curves(&mesh, |_, t| -t, 1);
    assert!((dpe(&at_zero, &truth, &mesh, OptimumMode::Max).unwrap() - 0.0625).abs() < 1e-12);
    let same_argmax = curves(&mesh, |_, t| -3.0 * (t - 0.5).abs(), 1);
    assert_eq!(dpe(&same_argmax, &truth, &mesh, OptimumMode::Max).unwrap(), 0.0);
    assert!(dpe(&truth, &truth, &mesh, OptimumMode::Monotone).is_err());
}

#[test]
fn kfold_examples() {
    let folds = kfold_split(10, 5, 0).unwrap();
    assert!(folds.iter().all(|f| f.len() == 2));
    let mut sizes: Vec<usize> = kfold_split(11, 5, 3).unwrap().iter().map(Vec::len).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    assert!(kfold_split(4, 5, 0).is_err());
    assert_eq!(kfold_split(50, 5, 9).unwrap(), kfold_split(50, 5, 9).unwrap());
}

#[test]
fn baselines_on_tiny_context() {
    let ctx = Observations::new(Array2::from_shape_fn((4, 1), |(i, _)| i as f64), vec![0.1, 0.2, 0.8, 0.9], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
    let q = QuerySet { rows: vec![0], covariates: Array2::from_elem((1, 1), 3.0) };
    let grid = uniform_grid(3);
    assert_eq!(ContextMean.predict_curves(&ctx, &q, &grid).unwrap(), vec![vec![3.0; 3]]);
    let knn = KnnBaseline { k: Some(1) }.predict_points(&ctx, &q, &[0.9]).unwrap();
    assert_eq!(knn, vec![6.0]);
}

proptest! {
    #[test]
    fn kfold_is_a_balanced_partition(n in 5usize..400, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let folds = kfold_split(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn dpe_ignores_vertical_shifts(coeffs in prop::collection::vec(-3.0f64..3.0, 3), shift in -100.0f64..100.0) {
        let mesh = uniform_grid(33);
        let truth = curves(&mesh, |_, t| coeffs[0] + coeffs[1] * t + coeffs[2] * t * t, 1);
        let lifted: Vec<Vec<f64>> = truth.iter().map(|c| c.iter().map(|v| v + shift).collect()).collect();
        for mode in [OptimumMode::Min, OptimumMode::Max] {
            prop_assert_eq!(dpe(&lifted, &truth, &mesh, mode).unwrap(), 0.0);
        }
    }

    #[test]
    fn mise_is_non_negative_and_symmetric(a in prop::collection::vec(-5.0f64..5.0, 9), b in prop::collection::vec(-5.0f64..5.0, 9)) {
        let grid = uniform_grid(9);
        let ab = mise(&[a.clone()], &[b.clone()], &grid).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, mise(&[b], &[a], &grid).unwrap());
    }
}
