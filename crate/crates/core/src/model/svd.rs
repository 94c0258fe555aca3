//! Truncated SVD projection of wide covariate tables.

use nalgebra::DMatrix;
use ndarray::Array2;

/// Top right-singular directions of a fitted matrix (no centering).
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedSvd {
    /// `target x k`; rows past the numerical rank are zero.
    pub components: Array2<f64>,
    pub singular_values: Vec<f64>,
}

impl TruncatedSvd {
    pub fn fit(x: &Array2<f64>, target: usize) -> Self {
        let (n, k) = x.dim();
        let m = DMatrix::from_fn(n, k, |i, j| x[(i, j)]);
        let svd = m.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let top = order.first().map_or(0.0, |&i| svd.singular_values[i]);
        let tol = top * (n.max(k) as f64) * f64::EPSILON;
        let mut components = Array2::zeros((target, k));
        let mut singular_values = vec![0.0; target];
        for (r, &i) in order.iter().take(target).enumerate() {
            let s = svd.singular_values[i];
            if s > tol {
                singular_values[r] = s;
                for j in 0..k {
                    components[(r, j)] = v_t[(i, j)];
                }
            }
        }
        TruncatedSvd { components, singular_values }
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.components.t())
    }
}

/// Projects context and query rows onto `target` directions fitted on the
/// context. Tables with at most `target` columns pass through unchanged.
pub fn reduce_dims_svd(context: &Array2<f64>, queries: &Array2<f64>, target: usize) -> (Array2<f64>, Array2<f64>) {
    if context.ncols() <= target {
        return (context.clone(), queries.clone());
    }
    let svd = TruncatedSvd::fit(context, target);
    (svd.transform(context), svd.transform(queries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn narrow_tables_pass_through() {
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) as f64);
        let (a, b) = reduce_dims_svd(&x, &x, 3);
        assert_eq!(a, x);
        assert_eq!(b, x);
    }

    #[test]
    fn rank_one_has_one_component() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [2.0, 1.0, -1.0];
        let x = Array2::from_shape_fn((4, 3), |(i, j)| u[i] * v[j]);
        let svd = TruncatedSvd::fit(&x, 2);
        assert!(svd.singular_values[0] > 1.0);
        assert_eq!(svd.singular_values[1], 0.0);
        let z = svd.transform(&x);
        assert!(z.column(1).iter().all(|v| v.abs() < 1e-12));
    }
}
