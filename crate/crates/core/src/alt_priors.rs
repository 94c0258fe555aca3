//! Alternative priors used for ablations: a Bernstein-polynomial prior and a
//! value-based prior. Both sample an MLP-generated base table, draw treatments
//! from a sigmoid-normal conditional, and emit the same [`Dataset`] as the
//! 3-MLP prior.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::prior::corruption::CorruptionPlan;
use crate::prior::covariates::{check_finite, generate_covariates, sample_nodes, ColumnScaler};
use crate::prior::hyper::{sample_prior_hyperparams_with, PriorHyperparams};
use crate::prior::mlp::{build_random_mlp, softplus, MlpShape, RandomMlp};
use crate::prior::PriorConfig;
use crate::rng::{log_uniform, standard_normal, stream};
use crate::stats::{mean, pop_std, pop_var};

/// Pre-logistic values are clamped here so treatments stay strictly inside (0, 1).
const LOGIT_CLAMP: f64 = 30.0;

pub fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Per-row parameters of `t | x ~ logistic(N(mean, (overlap * std)^2))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmoidNormalTreatment {
    pub cond_mean: f64,
    pub cond_std: f64,
    pub overlap: f64,
}

impl SigmoidNormalTreatment {
    pub fn effective_std(&self) -> f64 {
        self.overlap * self.cond_std
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z = self.cond_mean + self.effective_std() * standard_normal(rng);
        logistic(z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
    }
}

pub fn sample_sigmoid_normal_treatment<R: Rng + ?Sized>(
    cond_mean: f64,
    cond_std: f64,
    overlap: f64,
    rng: &mut R,
) -> f64 {
    SigmoidNormalTreatment { cond_mean, cond_std, overlap }.sample(rng)
}

/// `binom(n, k)` as a float.
fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bernstein basis `b_{k,n}(t)` for `k = 0..=n`.
pub fn bernstein_basis(degree: usize, t: f64) -> Vec<f64> {
    (0..=degree)
        .map(|k| binomial(degree, k) * t.powi(k as i32) * (1.0 - t).powi((degree - k) as i32))
        .collect()
}

/// Base table shared by the alternative priors: `extra` columns beyond the
/// `k` covariates come from the same covariate MLP.
struct BaseTable {
    hyperparams: PriorHyperparams,
    /// Standardised covariates.
    covariates: Array2<f64>,
    extra: Array2<f64>,
}

fn sample_base_table<R: Rng + ?Sized>(config: &PriorConfig, extra: usize, rng: &mut R) -> Result<BaseTable> {
    let mut hp = sample_prior_hyperparams_with(rng, config.n_samples, config.max_covariates);
    let k = hp.n_covariates;
    let needed = k + extra;
    hp.x.width = hp.x.width.max(needed.div_ceil(hp.x.layers));
    let shape = MlpShape { inputs: hp.x.width, width: hp.x.width, layer_count: hp.x.layers, outputs: hp.x.width };
    let mlp_x = build_random_mlp(shape, hp.x.density, &[], false, rng);
    let nodes = sample_nodes(rng, &mlp_x.dims, 1, hp.x.layers, needed, &[]);
    let plan = CorruptionPlan::sample(&nodes[..k], config.corruption, rng);
    let mut full_plan = plan.clone();
    full_plan.entries.extend(nodes[k..].iter().map(|&node| crate::prior::corruption::NodeCorruption {
        node,
        phase: crate::prior::corruption::CorruptionPhase::None,
        kind: None,
    }));
    let table = generate_covariates(&mlp_x, hp.n_samples, &nodes, hp.noise_scale, &full_plan, rng)?;
    let raw = table.slice(ndarray::s![.., ..k]).to_owned();
    let scaler = ColumnScaler::fit(&raw);
    let covariates = Array2::from_shape_fn(raw.dim(), |(r, c)| scaler.scale(c, raw[(r, c)]));
    let extra = table.slice(ndarray::s![.., k..]).to_owned();
    Ok(BaseTable { hyperparams: hp, covariates, extra })
}

fn conditional_mlp<R: Rng + ?Sized>(inputs: usize, outputs: usize, shape: &crate::prior::hyper::MechanismShape, rng: &mut R) -> RandomMlp {
    let s = MlpShape { inputs, width: shape.width, layer_count: shape.layers, outputs };
    build_random_mlp(s, shape.density, &[], true, rng)
}

fn treatment_params(mlp: &RandomMlp, x: &[f64], overlap: f64) -> SigmoidNormalTreatment {
    let out = mlp.forward_row(x).pop().expect("output");
    SigmoidNormalTreatment { cond_mean: out[0], cond_std: softplus(out[1]), overlap }
}

fn standardized(col: &[f64]) -> Vec<f64> {
    let (m, s) = (mean(col), pop_std(col));
    if s > 1e-12 {
        col.iter().map(|v| (v - m) / s).collect()
    } else {
        vec![0.0; col.len()]
    }
}

fn counterfactuals<R: Rng + ?Sized, F: Fn(usize, f64) -> f64>(
    n: usize,
    per_row: usize,
    rng: &mut R,
    cepo: F,
) -> (Vec<f64>, Vec<f64>) {
    let mut t_cf = Vec::with_capacity(n * per_row);
    let mut cepo_cf = Vec::with_capacity(n * per_row);
    for _ in 0..per_row.max(1) {
        for row in 0..n {
            let t: f64 = rng.random::<f64>();
            t_cf.push(t);
            cepo_cf.push(cepo(row, t));
        }
    }
    (t_cf, cepo_cf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernsteinDgp {
    pub hyperparams: PriorHyperparams,
    pub degree: usize,
    pub global_coeffs: Vec<f64>,
    pub coeff_mlp: RandomMlp,
    pub treatment_mlp: RandomMlp,
    pub heterogeneity: f64,
    pub overlap: f64,
    pub noise_ratio: f64,
    /// Scaled, centred outcome noise per row.
    pub noise: Vec<f64>,
    pub seed: u64,
    pub covariates: Array2<f64>,
    pub t: Vec<f64>,
    pub cepo_factual: Vec<f64>,
}

impl BernsteinDgp {
    pub fn sample(config: &PriorConfig, seed: u64, attempt: u64) -> Result<(BernsteinDgp, Dataset)> {
        let mut rng = stream(seed, "bernstein", attempt);
        let base = sample_base_table(config, 1, &mut rng)?;
        let hp = base.hyperparams.clone();
        let (n, k) = base.covariates.dim();
        let degree = rng.random_range(2..=8);
        let global_coeffs: Vec<f64> = (0..=degree).map(|_| standard_normal(&mut rng)).collect();
        let coeff_mlp = conditional_mlp(k, degree + 1, &hp.y, &mut rng);
        let treatment_mlp = conditional_mlp(k, 2, &hp.t, &mut rng);
        let heterogeneity = rng.random_range(0.0..=1.0);
        let overlap = rng.random_range(0.1..=1.0);
        let noise_ratio = log_uniform(&mut rng, 0.05, 1.0);

        let mut dgp = BernsteinDgp {
            hyperparams: hp,
            degree,
            global_coeffs,
            coeff_mlp,
            treatment_mlp,
            heterogeneity,
            overlap,
            noise_ratio,
            noise: Vec::new(),
            seed,
            covariates: base.covariates,
            t: Vec::new(),
            cepo_factual: Vec::new(),
        };
        let t: Vec<f64> = (0..n)
            .map(|r| treatment_params(&dgp.treatment_mlp, dgp.covariates.row(r).as_slice().expect("row"), overlap).sample(&mut rng))
            .collect();
        check_finite(t.iter().copied(), "treatment")?;
        let mu: Vec<f64> = (0..n).map(|r| dgp.cepo_row(r, t[r])).collect();
        check_finite(mu.iter().copied(), "outcome")?;
        let sd_mu = pop_std(&mu);
        if !(sd_mu > 1e-10) {
            return Err(Error::DegenerateOutcome("constant factual CEPO"));
        }
        let noise_col: Vec<f64> = base.extra.column(0).to_vec();
        dgp.noise = standardized(&noise_col).into_iter().map(|e| noise_ratio * sd_mu * e).collect();
        let y: Vec<f64> = mu.iter().zip(&dgp.noise).map(|(m, e)| m + e).collect();
        dgp.t = t;
        dgp.cepo_factual = mu;
        let (t_cf, cepo_cf) = counterfactuals(n, config.counterfactuals_per_row, &mut rng, |r, tc| dgp.cepo_row(r, tc));
        check_finite(cepo_cf.iter().copied(), "counterfactual outcomes")?;
        let dataset = Dataset {
            covariates: dgp.covariates.clone(),
            t: dgp.t.clone(),
            y,
            t_cf,
            cepo_cf,
            cf_per_row: config.counterfactuals_per_row.max(1),
            outcome_standardization: None,
            treatment_standardization: None,
        };
        dataset.validate()?;
        Ok((dgp, dataset))
    }

    /// `lambda * c(x) + (1 - lambda) * c0` for a standardised covariate row.
    pub fn mixed_coeffs(&self, x_row: &[f64]) -> Vec<f64> {
        let cx = self.coeff_mlp.forward_row(x_row).pop().expect("output");
        cx.iter()
            .zip(&self.global_coeffs)
            .map(|(c, g)| self.heterogeneity * c + (1.0 - self.heterogeneity) * g)
            .collect()
    }

    pub fn cepo_row(&self, row: usize, t: f64) -> f64 {
        bernstein_cepo(self.covariates.row(row).as_slice().expect("contiguous row"), t, self)
    }

    pub fn query_cepo(&self, row: usize, t: f64) -> Result<f64> {
        if row >= self.covariates.nrows() {
            return Err(Error::RowOutOfRange { row, rows: self.covariates.nrows() });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TreatmentOutOfRange(t));
        }
        Ok(self.cepo_row(row, t))
    }
}

/// `sum_k c_k binom(K, k) t^k (1 - t)^(K - k)` with the row's mixed coefficients.
pub fn bernstein_cepo(x_row: &[f64], t: f64, dgp: &BernsteinDgp) -> f64 {
    let coeffs = dgp.mixed_coeffs(x_row);
    bernstein_basis(dgp.degree, t).iter().zip(&coeffs).map(|(b, c)| b * c).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueBasedDgp {
    pub hyperparams: PriorHyperparams,
    pub support_points: Vec<f64>,
    /// `N x n` CEPO values at the support points.
    pub cepo_columns: Array2<f64>,
    /// `N x n` individual noise at the support points.
    pub noise_columns: Array2<f64>,
    pub noise_fraction: f64,
    pub treatment_mlp: RandomMlp,
    pub overlap: f64,
    pub seed: u64,
    pub covariates: Array2<f64>,
    pub t: Vec<f64>,
    pub cepo_factual: Vec<f64>,
}

impl ValueBasedDgp {
    pub fn sample(config: &PriorConfig, seed: u64, attempt: u64) -> Result<(ValueBasedDgp, Dataset)> {
        let mut rng = stream(seed, "value_based", attempt);
        let knots = rng.random_range(3..=12);
        let base = sample_base_table(config, 2 * knots, &mut rng)?;
        let hp = base.hyperparams.clone();
        let (n, k) = base.covariates.dim();
        let mut support_points: Vec<f64> = (0..knots).map(|_| rng.random::<f64>()).collect();
        support_points.sort_by(|a, b| a.total_cmp(b));
        if support_points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::DegenerateTreatment("repeated support point"));
        }
        let noise_fraction = rng.random_range(0.05..=0.5);
        let cepo_columns = base.extra.slice(ndarray::s![.., ..knots]).to_owned();
        let mut noise_columns = Array2::<f64>::zeros((n, knots));
        for j in 0..knots {
            let signal_var = pop_var(&cepo_columns.column(j).to_vec());
            let z = standardized(&base.extra.column(knots + j).to_vec());
            let scale = (noise_fraction * signal_var).sqrt();
            noise_columns.column_mut(j).iter_mut().zip(z).for_each(|(d, s)| *d = scale * s);
        }
        let treatment_mlp = conditional_mlp(k, 2, &hp.t, &mut rng);
        let overlap = rng.random_range(0.1..=1.0);
        let mut dgp = ValueBasedDgp {
            hyperparams: hp,
            support_points,
            cepo_columns,
            noise_columns,
            noise_fraction,
            treatment_mlp,
            overlap,
            seed,
            covariates: base.covariates,
            t: Vec::new(),
            cepo_factual: Vec::new(),
        };
        let t: Vec<f64> = (0..n)
            .map(|r| treatment_params(&dgp.treatment_mlp, dgp.covariates.row(r).as_slice().expect("row"), overlap).sample(&mut rng))
            .collect();
        check_finite(t.iter().copied(), "treatment")?;
        let (mu, noise): (Vec<f64>, Vec<f64>) = (0..n).map(|r| value_based_cepo(r, t[r], &dgp)).unzip();
        if !(pop_std(&mu) > 1e-10) {
            return Err(Error::DegenerateOutcome("constant factual CEPO"));
        }
        let y: Vec<f64> = mu.iter().zip(&noise).map(|(m, e)| m + e).collect();
        dgp.t = t;
        dgp.cepo_factual = mu;
        let (t_cf, cepo_cf) = counterfactuals(n, config.counterfactuals_per_row, &mut rng, |r, tc| value_based_cepo(r, tc, &dgp).0);
        check_finite(cepo_cf.iter().chain(&y).copied(), "outcomes")?;
        let dataset = Dataset {
            covariates: dgp.covariates.clone(),
            t: dgp.t.clone(),
            y,
            t_cf,
            cepo_cf,
            cf_per_row: config.counterfactuals_per_row.max(1),
            outcome_standardization: None,
            treatment_standardization: None,
        };
        dataset.validate()?;
        Ok((dgp, dataset))
    }

    pub fn query_cepo(&self, row: usize, t: f64) -> Result<f64> {
        if row >= self.covariates.nrows() {
            return Err(Error::RowOutOfRange { row, rows: self.covariates.nrows() });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TreatmentOutOfRange(t));
        }
        Ok(value_based_cepo(row, t, self).0)
    }
}

/// Linear interpolation weights `(left knot, weight of right knot)`, clamped
/// to the outermost support points.
fn bracket(points: &[f64], t: f64) -> (usize, f64) {
    let n = points.len();
    if t <= points[0] {
        return (0, 0.0);
    }
    if t >= points[n - 1] {
        return (n - 2, 1.0);
    }
    let j = points.partition_point(|&p| p <= t) - 1;
    let w = (t - points[j]) / (points[j + 1] - points[j]);
    (j, w)
}

/// `(cepo, noise)` at treatment `t` for `row`, interpolated between the two
/// nearest support points.
pub fn value_based_cepo(row: usize, t: f64, dgp: &ValueBasedDgp) -> (f64, f64) {
    let (j, w) = bracket(&dgp.support_points, t);
    let lerp = |m: &Array2<f64>| (1.0 - w) * m[(row, j)] + w * m[(row, j + 1)];
    (lerp(&dgp.cepo_columns), lerp(&dgp.noise_columns))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> PriorConfig {
        PriorConfig { n_samples: 2048, ..PriorConfig::default() }
    }

    fn bernstein(seed: u64) -> (BernsteinDgp, Dataset) {
        (0..64).find_map(|a| BernsteinDgp::sample(&config(), seed, a).ok()).unwrap()
    }

    fn value_based(seed: u64) -> (ValueBasedDgp, Dataset) {
        (0..64).find_map(|a| ValueBasedDgp::sample(&config(), seed, a).ok()).unwrap()
    }

    #[test]
    fn sigmoid_normal_range_and_zero_variance_limit() {
        let mut rng = stream(1, "sn", 0);
        for _ in 0..1000 {
            let t = sample_sigmoid_normal_treatment(0.3, 5.0, 1.0, &mut rng);
            assert!(t > 0.0 && t < 1.0);
        }
        let t = sample_sigmoid_normal_treatment(0.3, 0.0, 1.0, &mut rng);
        assert_eq!(t, logistic(0.3));
        let extreme = sample_sigmoid_normal_treatment(500.0, 1.0, 1.0, &mut rng);
        assert!(extreme < 1.0);
    }

    #[test]
    fn smaller_overlap_shrinks_pre_logistic_variance() {
        let logit = |t: f64| (t / (1.0 - t)).ln();
        let draws = |alpha: f64| {
            let mut rng = stream(2, "sn", 0);
            (0..10_000)
                .map(|_| logit(sample_sigmoid_normal_treatment(0.0, 1.5, alpha, &mut rng)))
                .collect::<Vec<_>>()
        };
        let (wide, narrow) = (pop_var(&draws(1.0)), pop_var(&draws(0.1)));
        assert!(narrow < wide);
        assert!((wide - 2.25).abs() < 0.15);
        assert!((narrow - 0.0225).abs() < 0.0015);
    }

    #[test]
    fn bernstein_partition_of_unity() {
        for degree in 1..=8 {
            for i in 0..=100 {
                let t = i as f64 / 100.0;
                let s: f64 = bernstein_basis(degree, t).iter().sum();
                assert!((s - 1.0).abs() < 1e-14, "degree {degree} t {t}: {s}");
            }
        }
    }

    #[test]
    fn bernstein_endpoint_is_first_coefficient() {
        let (dgp, _) = bernstein(3);
        let x = dgp.covariates.row(0).to_vec();
        let c = dgp.mixed_coeffs(&x);
        assert_eq!(bernstein_cepo(&x, 0.0, &dgp), c[0]);
        assert!((bernstein_cepo(&x, 1.0, &dgp) - c[dgp.degree]).abs() < 1e-15);
    }

    #[test]
    fn bernstein_unit_coefficients_give_constant_curve() {
        let (mut dgp, _) = bernstein(4);
        dgp.heterogeneity = 0.0;
        dgp.global_coeffs = vec![1.0; dgp.degree + 1];
        for i in 0..=100 {
            assert!((dgp.cepo_row(0, i as f64 / 100.0) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn bernstein_homogeneity_limit() {
        let (mut dgp, _) = bernstein(5);
        dgp.heterogeneity = 0.0;
        let ref_curve: Vec<f64> = (0..11).map(|i| dgp.cepo_row(0, i as f64 / 10.0)).collect();
        for r in 1..50 {
            for (i, v) in ref_curve.iter().enumerate() {
                assert_eq!(dgp.cepo_row(r, i as f64 / 10.0), *v);
            }
        }
        dgp.heterogeneity = 1.0;
        let at_half: Vec<f64> = (0..200).map(|r| dgp.cepo_row(r, 0.5)).collect();
        assert!(pop_var(&at_half) >= 0.0);
    }

    #[test]
    fn value_based_exact_at_knots_and_linear_between() {
        let (dgp, _) = value_based(6);
        let row = 3;
        for (j, &tk) in dgp.support_points.iter().enumerate() {
            let (c, e) = value_based_cepo(row, tk, &dgp);
            assert_eq!(c, dgp.cepo_columns[(row, j)]);
            assert_eq!(e, dgp.noise_columns[(row, j)]);
        }
        let (a, b) = (dgp.support_points[0], dgp.support_points[1]);
        let (c, _) = value_based_cepo(row, 0.5 * (a + b), &dgp);
        let expected = 0.5 * (dgp.cepo_columns[(row, 0)] + dgp.cepo_columns[(row, 1)]);
        assert!((c - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        // Clamped outside the support.
        assert_eq!(value_based_cepo(row, 0.0, &dgp).0, dgp.cepo_columns[(row, 0)]);
    }

    #[test]
    fn value_based_noise_fraction_per_knot() {
        let (dgp, _) = value_based(7);
        for j in 0..dgp.support_points.len() {
            let sig = pop_var(&dgp.cepo_columns.column(j).to_vec());
            let noi = pop_var(&dgp.noise_columns.column(j).to_vec());
            if sig > 1e-12 {
                let ratio = noi / sig;
                assert!((ratio - dgp.noise_fraction).abs() <= 0.1 * dgp.noise_fraction, "knot {j}: {ratio}");
            }
        }
    }

    #[test]
    fn alternative_priors_emit_valid_datasets() {
        let (b, db) = bernstein(8);
        db.validate().unwrap();
        let (tc, cc) = db.counterfactual(0);
        for r in 0..db.n_rows() {
            assert_eq!(b.query_cepo(r, tc[r]).unwrap(), cc[r]);
        }
        let (v, dv) = value_based(8);
        dv.validate().unwrap();
        assert!(v.support_points.windows(2).all(|w| w[1] > w[0]));
    }
}
