use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Solver settings for entropic OT. `zeta` is the inverse regularization
/// strength: the objective is `<C, J> - H(J) / zeta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    pub zeta: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        SinkhornParams {
            zeta: 10.0,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub row_marginal: Array1<f64>,
    pub col_marginal: Array1<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// |rows - a|_1 + |cols - b|_1 of the returned plan.
    pub marginal_error: f64,
    /// `<C, J>`
    pub transport_cost: f64,
    /// `H(J) = -sum J log J`, with 0 log 0 = 0.
    pub entropy: f64,
    /// `<C, J> - H(J) / zeta`
    pub value: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_marginal(name: &str, m: &[f64], len: usize) -> Result<()> {
    if m.len() != len {
        return Err(Error::InvalidMarginal(format!(
            "{name} has {} entries, cost matrix side is {len}",
            m.len()
        )));
    }
    if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidMarginal(format!(
            "{name} must be finite and non-negative"
        )));
    }
    let total: f64 = m.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidMarginal(format!(
            "{name} sums to {total}, expected 1"
        )));
    }
    Ok(())
}

pub fn uniform_marginal(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Log-domain Sinkhorn on the kernel `exp(-zeta C)`.
///
/// Iterates the dual log-scalings until the marginal L1 error drops below
/// `tol`. Hitting `max_iter` is not an error: the last iterate is returned
/// with `converged = false`.
pub fn sinkhorn(
    cost: ArrayView2<'_, f64>,
    a: &[f64],
    b: &[f64],
    params: &SinkhornParams,
) -> Result<TransportPlan> {
    let (n, m) = cost.dim();
    if n == 0 || m == 0 {
        return Err(Error::Shape("empty cost matrix".into()));
    }
    if !(params.zeta > 0.0 && params.zeta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "zeta must be positive, got {}",
            params.zeta
        )));
    }
    if !(params.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tol must be positive, got {}",
            params.tol
        )));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "cost matrix has non-finite entries".into(),
        ));
    }
    check_marginal("row marginal", a, n)?;
    check_marginal("column marginal", b, m)?;

    let kernel = cost.mapv(|c| -params.zeta * c);
    let kernel_t = kernel.t().as_standard_layout().into_owned();
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut log_u = vec![0.0; n];
    let mut log_v = vec![0.0; m];
    let mut row_lse = vec![0.0; n];
    let mut iterations = 0;

    // After each column update the column marginals are exact, so the row
    // log-sums needed by the next row update also give the marginal error.
    loop {
        for (i, lse) in row_lse.iter_mut().enumerate() {
            let k = kernel.row(i);
            *lse = log_sum_exp(k.iter().zip(&log_v).map(|(kij, lv)| kij + lv));
        }
        if iterations > 0 {
            let error: f64 = (0..n)
                .map(|i| ((log_u[i] + row_lse[i]).exp() - a[i]).abs())
                .sum();
            if error < params.tol {
                break;
            }
        }
        if iterations == params.max_iter {
            break;
        }
        iterations += 1;
        for i in 0..n {
            log_u[i] = if log_a[i] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                log_a[i] - row_lse[i]
            };
        }
        for j in 0..m {
            let k = kernel_t.row(j);
            let lse = log_sum_exp(k.iter().zip(&log_u).map(|(kij, lu)| kij + lu));
            log_v[j] = if log_b[j] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                log_b[j] - lse
            };
        }
    }

    let mut plan = Array2::zeros((n, m));
    let error = fill_plan(&mut plan, &kernel, &log_u, &log_v, a, b);
    let converged = error < params.tol;

    let mut transport_cost = 0.0;
    let mut entropy = 0.0;
    for ((i, j), &p) in plan.indexed_iter() {
        transport_cost += p * cost[[i, j]];
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    Ok(TransportPlan {
        plan,
        row_marginal: Array1::from(a.to_vec()),
        col_marginal: Array1::from(b.to_vec()),
        converged,
        iterations,
        marginal_error: error,
        transport_cost,
        entropy,
        value: transport_cost - entropy / params.zeta,
    })
}

/// Writes `J = exp(log_u + K + log_v)` and returns the marginal L1 error.
fn fill_plan(
    plan: &mut Array2<f64>,
    kernel: &Array2<f64>,
    log_u: &[f64],
    log_v: &[f64],
    a: &[f64],
    b: &[f64],
) -> f64 {
    let (n, m) = plan.dim();
    let mut col_sums = vec![0.0; m];
    let mut error = 0.0;
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..m {
            let p = (log_u[i] + kernel[[i, j]] + log_v[j]).exp();
            plan[[i, j]] = p;
            row_sum += p;
            col_sums[j] += p;
        }
        error += (row_sum - a[i]).abs();
    }
    for j in 0..m {
        error += (col_sums[j] - b[j]).abs();
    }
    error
}
