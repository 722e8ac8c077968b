use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Label-aware Gaussian-exponential transport cost between two labeled
/// embedding sets:
///
/// `C[a, b] = exp((|x_a - x_b|^2 + lambda |t_a - t_b|^2) / (2 sigma^2))`
///
/// where `t_a` is the text embedding of sample a's class. Entries are >= 1.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
    lambda: f64,
    sigma: f64,
}

impl CostMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

pub(crate) fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_cost_params(lambda: f64, sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    Ok(())
}

/// Builds the cost matrix between samples `xi` (texts `ti`) and `xj` (texts `tj`).
/// Row a of `ti` is the class text embedding of sample a of `xi`.
pub fn pairwise_cost(
    xi: ArrayView2<'_, f64>,
    xj: ArrayView2<'_, f64>,
    ti: ArrayView2<'_, f64>,
    tj: ArrayView2<'_, f64>,
    lambda: f64,
    sigma: f64,
) -> Result<CostMatrix> {
    check_cost_params(lambda, sigma)?;
    let dim = xi.ncols();
    if xj.ncols() != dim || ti.ncols() != dim || tj.ncols() != dim {
        return Err(Error::Shape(format!(
            "cost inputs disagree on dim: xi {}, xj {}, ti {}, tj {}",
            dim,
            xj.ncols(),
            ti.ncols(),
            tj.ncols()
        )));
    }
    if ti.nrows() != xi.nrows() || tj.nrows() != xj.nrows() {
        return Err(Error::Shape(format!(
            "text rows must align with samples: xi {} vs ti {}, xj {} vs tj {}",
            xi.nrows(),
            ti.nrows(),
            xj.nrows(),
            tj.nrows()
        )));
    }
    let denom = 2.0 * sigma * sigma;
    let values = Array2::from_shape_fn((xi.nrows(), xj.nrows()), |(a, b)| {
        let dx = squared_distance(xi.row(a), xj.row(b));
        let dt = squared_distance(ti.row(a), tj.row(b));
        ((dx + lambda * dt) / denom).exp()
    });
    if let Some(((r, c), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "cost overflow at ({r}, {c}): {v}; sigma too small for these inputs"
        )));
    }
    Ok(CostMatrix {
        values,
        lambda,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_unit_rows;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_sample_same_class_costs_one() {
        let x = array![[0.6, 0.8]];
        let t = array![[1.0, 0.0]];
        let c = pairwise_cost(x.view(), x.view(), t.view(), t.view(), 1.0, 1.0).unwrap();
        assert_eq!(c.values()[[0, 0]], 1.0);
    }

    #[test]
    fn unit_exponent_gives_e() {
        // |x_a - x_b|^2 = 2 = 2 sigma^2 with sigma = 1, lambda = 0.
        let xi = array![[1.0, 0.0]];
        let xj = array![[0.0, 1.0]];
        let t = array![[1.0, 0.0]];
        let c = pairwise_cost(
            xi.view(),
            xj.view(),
            t.view(),
            array![[0.0, 1.0]].view(),
            0.0,
            1.0,
        )
        .unwrap();
        assert!((c.values()[[0, 0]] - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xi = random_unit_rows(&mut rng, 3, 5);
        let xj = random_unit_rows(&mut rng, 4, 5);
        let ti = random_unit_rows(&mut rng, 3, 5);
        let tj = random_unit_rows(&mut rng, 4, 5);
        let (lambda, sigma) = (0.7, 1.3);
        let c = pairwise_cost(xi.view(), xj.view(), ti.view(), tj.view(), lambda, sigma).unwrap();
        for a in 0..3 {
            for b in 0..4 {
                let mut dx = 0.0;
                let mut dt = 0.0;
                for k in 0..5 {
                    dx += (xi[[a, k]] - xj[[b, k]]).powi(2);
                    dt += (ti[[a, k]] - tj[[b, k]]).powi(2);
                }
                let expect = ((dx + lambda * dt) / (2.0 * sigma * sigma)).exp();
                assert!((c.values()[[a, b]] - expect).abs() <= 1e-12 * expect);
            }
        }
    }

    #[test]
    fn rejects_bad_sigma_and_dims() {
        let x = array![[1.0, 0.0]];
        assert!(pairwise_cost(x.view(), x.view(), x.view(), x.view(), 1.0, 0.0).is_err());
        assert!(pairwise_cost(x.view(), x.view(), x.view(), x.view(), -1.0, 1.0).is_err());
        let y = array![[1.0, 0.0, 0.0]];
        assert!(matches!(
            pairwise_cost(x.view(), y.view(), x.view(), y.view(), 1.0, 1.0),
            Err(Error::Shape(_))
        ));
    }
}
