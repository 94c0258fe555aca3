use ccgen::ppd::*;
use proptest::prelude::*;

/// Adaptive Simpson quadrature, used as an oracle independent of any
/// error-function implementation.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rule(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (l, r) = (rule(f, a, m), rule(f, m, b));
        if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
            l + r + (l + r - whole) / 15.0
        } else {
            step(f, a, m, l, 0.5 * tol, depth - 1) + step(f, m, b, r, 0.5 * tol, depth - 1)
        }
    }
    step(f, a, b, rule(f, a, b), tol, 40)
}

fn normal_pdf(mu: f64, sigma: f64) -> impl Fn(f64) -> f64 {
    move |y| (-0.5 * ((y - mu) / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

fn distribution(raw: Vec<f64>) -> HistogramDistribution {
    let s: f64 = raw.iter().sum();
    HistogramDistribution::new(raw.into_iter().map(|v| v / s).collect()).unwrap()
}

fn dist_strategy(bins: usize) -> impl Strategy<Value = HistogramDistribution> {
    prop::collection::vec(1e-4f64..1.0, bins).prop_map(distribution)
}

#[test]
fn bin_mass_matches_quadrature() {
    let grid = BinGrid::standard(64);
    for &(mu, sigma) in &[(0.0, 1.0), (1.3, 0.5), (-4.2, 2.0), (9.5, 0.7)] {
        let q = gaussian_bin_mass(mu, sigma, &grid);
        let pdf = normal_pdf(mu, sigma);
        for l in 1..grid.bin_count() - 1 {
            let oracle = simpson(&pdf, grid.edges[l], grid.edges[l + 1], 1e-14);
            assert!((q.probs[l] - oracle).abs() < 1e-9, "mu {mu} sigma {sigma} bin {l}");
        }
        // Edge bins collect everything beyond the grid.
        let inner: f64 = (1..grid.bin_count() - 1).map(|l| q.probs[l]).sum();
        let left = simpson(&pdf, mu - 40.0 * sigma, grid.edges[1], 1e-14);
        assert!((q.probs[0] - left).abs() < 1e-9);
        assert!((q.probs[0] + inner + q.probs[grid.bin_count() - 1] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn narrow_target_concentrates_on_central_bins() {
    let grid = BinGrid::standard(1024);
    let q = gaussian_bin_mass(0.0, 0.01, &grid);
    // The two central bins span +-w with w = 20/1024, i.e. about +-1.95 sigma.
    let w = 20.0 / 1024.0;
    let want = statrs::function::erf::erf(w / (0.01 * std::f64::consts::SQRT_2));
    let got = q.probs[511] + q.probs[512];
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert!(got > 0.949 && got < 0.95);
}

#[test]
fn histogram_loss_examples() {
    let one_hot = HistogramDistribution::one_hot(8, 3);
    assert_eq!(histogram_loss(&one_hot, &one_hot), 0.0);
    let p = distribution(vec![1.0, 2.0, 3.0, 4.0]);
    let entropy: f64 = -p.probs.iter().map(|v| v * v.ln()).sum::<f64>();
    assert!((histogram_loss(&p, &p) - entropy).abs() < 1e-14);
}

#[test]
fn histogram_mean_examples() {
    let grid = BinGrid::standard(16);
    assert_eq!(histogram_mean(&HistogramDistribution::one_hot(16, 5), &grid), grid.center(5));
    assert!(histogram_mean(&HistogramDistribution::uniform(16), &grid).abs() < 1e-12);
    let fine = BinGrid::standard(1024);
    let m = histogram_mean(&gaussian_bin_mass(1.3, 0.5, &fine), &fine);
    assert!((m - 1.3).abs() < fine.width());
}

#[test]
fn crps_examples() {
    let grid = BinGrid::standard(32);
    let y = 2.3;
    let q = HistogramDistribution::one_hot(32, grid.bin_of(y));
    assert!(crps_loss(&q, &grid, y) <= grid.width() + 1e-15);
    let near = crps_loss(&HistogramDistribution::one_hot(32, grid.bin_of(y) + 2), &grid, y);
    let far = crps_loss(&HistogramDistribution::one_hot(32, grid.bin_of(y) + 9), &grid, y);
    assert!(far > near);
}

#[test]
fn standardizer_degenerate_and_population_std() {
    let s = Standardizer::fit(&[1.0, 3.0]).unwrap();
    assert_eq!((s.mean, s.std), (2.0, 1.0));
    assert!(Standardizer::fit(&[4.0, 4.0, 4.0]).unwrap().degenerate);
    assert!(Standardizer::fit(&[1.0]).is_err());
}

#[test]
fn reversed_grid_fails_validation() {
    let mut g = BinGrid::standard(8);
    assert!(g.validate().is_ok());
    g.edges.reverse();
    assert_eq!(g.validate().unwrap_err(), "BinGrid monotonicity");
}

proptest! {
    #[test]
    fn bin_mass_sums_to_one(mu in -15.0f64..15.0, sigma in 1e-3f64..5.0, bins in 1usize..300) {
        let q = gaussian_bin_mass(mu, sigma, &BinGrid::standard(bins));
        prop_assert!((q.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(q.probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn bin_mass_is_translation_consistent(base in -3.0f64..3.0, shift in -20i32..20, sigma in 0.05f64..0.5) {
        let grid = BinGrid::standard(256);
        let w = grid.width();
        let a = gaussian_bin_mass(base, sigma, &grid);
        let b = gaussian_bin_mass(base + shift as f64 * w, sigma, &grid);
        let centre = grid.bin_of(base) as i64;
        for off in -10i64..=10 {
            let l = centre + off;
            let m = l + shift as i64;
            prop_assert!((a.probs[l as usize] - b.probs[m as usize]).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_is_minimal_at_the_target(q in dist_strategy(12), t in dist_strategy(12)) {
        prop_assert!(histogram_loss(&q, &t) >= histogram_loss(&t, &t) - 1e-12);
    }

    #[test]
    fn crps_is_non_negative(q in dist_strategy(20), y in -12.0f64..12.0) {
        prop_assert!(crps_loss(&q, &BinGrid::standard(20), y) >= 0.0);
    }

    #[test]
    fn loss_gradients_match_finite_differences(q in dist_strategy(10), t in dist_strategy(10), y in -9.0f64..9.0, l in 0usize..10) {
        let grid = BinGrid::standard(10);
        let eps = 1e-7;
        let bump = |d: f64| {
            let mut v = q.clone();
            v.probs[l] += d;
            v
        };
        let fd = (histogram_loss(&bump(eps), &t) - histogram_loss(&bump(-eps), &t)) / (2.0 * eps);
        let g = histogram_loss_grad(&q, &t)[l];
        prop_assert!((fd - g).abs() <= 1e-5 * g.abs().max(1.0));
        let fd = (crps_loss(&bump(eps), &grid, y) - crps_loss(&bump(-eps), &grid, y)) / (2.0 * eps);
        let g = crps_loss_grad(&q, &grid, y)[l];
        prop_assert!((fd - g).abs() <= 1e-5 * g.abs().max(1.0));
    }

    #[test]
    fn standardizer_round_trips(values in prop::collection::vec(-1e3f64..1e3, 2..40)) {
        let s = Standardizer::fit(&values).unwrap();
        for &v in &values {
            prop_assert!((s.invert(s.apply(v)) - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }
}
