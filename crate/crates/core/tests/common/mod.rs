//! Fixtures and independent reference implementations shared by the
//! integration tests. Nothing here calls into the solver or loss code it is
//! used to check.

#![allow(dead_code)]

use landa::embstore::{DomainDataset, EmbeddingMatrix, PromptBank};
use landa::nn::Augmenter;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

pub fn random_unit_rows(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = random_matrix(rng, rows, cols, 1.0);
    for mut row in m.outer_iter_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    m
}

pub fn random_labels(rng: &mut impl Rng, n: usize, num_classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..num_classes)).collect()
}

/// An augmenter with every parameter drawn from U(-0.5, 0.5), biases
/// included, so no output row is exactly zero.
pub fn random_augmenter(rng: &mut impl Rng, m: usize, h: usize) -> Augmenter {
    Augmenter::from_parts(
        random_matrix(rng, h, m, 0.5),
        Array1::from_shape_fn(h, |_| rng.random_range(-0.5..0.5)),
        random_matrix(rng, m, h, 0.5),
        Array1::from_shape_fn(m, |_| rng.random_range(-0.5..0.5)),
    )
    .unwrap()
}

pub fn central_difference(step: f64, f: impl Fn(f64) -> f64) -> f64 {
    (f(step) - f(-step)) / (2.0 * step)
}

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂); 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

pub fn dataset(name: &str, x: &Array2<f64>, labels: Vec<usize>, classes: usize) -> DomainDataset {
    DomainDataset::new(
        name,
        EmbeddingMatrix::normalized_from_f64(x).unwrap(),
        labels,
        (0..classes).map(|c| format!("c{c}")).collect(),
    )
    .unwrap()
}

pub fn bank(
    class_text: &Array2<f64>,
    sources: Vec<(&str, Array2<f64>)>,
    target: (&str, Array2<f64>),
) -> PromptBank {
    let norm = |m: &Array2<f64>| EmbeddingMatrix::normalized_from_f64(m).unwrap();
    PromptBank::new(
        norm(class_text),
        sources
            .into_iter()
            .map(|(n, m)| (n.to_string(), norm(&m)))
            .collect(),
        target.0.to_string(),
        norm(&target.1),
    )
    .unwrap()
}

/// `exp((|x - y|² + λ |t - u|²) / (2σ²))` with plain loops.
pub fn scalar_cost(x: &[f64], y: &[f64], t: &[f64], u: &[f64], lambda: f64, sigma: f64) -> f64 {
    let mut dx = 0.0;
    for i in 0..x.len() {
        dx += (x[i] - y[i]) * (x[i] - y[i]);
    }
    let mut dt = 0.0;
    for i in 0..t.len() {
        dt += (t[i] - u[i]) * (t[i] - u[i]);
    }
    ((dx + lambda * dt) / (2.0 * sigma * sigma)).exp()
}

pub fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

/// `<C, J> - H(J) / ζ` with `H(J) = -Σ J ln J`.
pub fn entropic_objective(cost: &[Vec<f64>], plan: &[Vec<f64>], zeta: f64) -> f64 {
    let mut v = 0.0;
    for (crow, prow) in cost.iter().zip(plan) {
        for (&c, &p) in crow.iter().zip(prow) {
            v += c * p;
            if p > 0.0 {
                v += p * p.ln() / zeta;
            }
        }
    }
    v
}

pub fn marginal_error(plan: &[Vec<f64>], a: &[f64], b: &[f64]) -> f64 {
    let mut err = 0.0;
    for (row, ai) in plan.iter().zip(a) {
        err += (row.iter().sum::<f64>() - ai).abs();
    }
    for (j, bj) in b.iter().enumerate() {
        err += (plan.iter().map(|r| r[j]).sum::<f64>() - bj).abs();
    }
    err
}

/// Plain multiplicative Sinkhorn: `u = a / K v`, `v = b / Kᵀ u` with
/// `K = exp(-ζ (C - min C))`, iterated until the marginal error is below
/// `tol`. Returns the plan and its entropic objective.
pub fn scalar_sinkhorn(
    cost: &[Vec<f64>],
    a: &[f64],
    b: &[f64],
    zeta: f64,
    tol: f64,
) -> (Vec<Vec<f64>>, f64) {
    let (n, m) = (cost.len(), cost[0].len());
    let cmin = cost.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let k: Vec<Vec<f64>> = cost
        .iter()
        .map(|r| r.iter().map(|c| (-zeta * (c - cmin)).exp()).collect())
        .collect();
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut plan = vec![vec![0.0; m]; n];
    for _ in 0..10_000_000 {
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..m {
                s += k[i][j] * v[j];
            }
            u[i] = a[i] / s;
        }
        for j in 0..m {
            let mut s = 0.0;
            for i in 0..n {
                s += k[i][j] * u[i];
            }
            v[j] = b[j] / s;
        }
        for i in 0..n {
            for j in 0..m {
                plan[i][j] = u[i] * k[i][j] * v[j];
            }
        }
        if marginal_error(&plan, a, b) < tol {
            let value = entropic_objective(cost, &plan, zeta);
            return (plan, value);
        }
    }
    panic!("scalar Sinkhorn did not reach tol {tol}");
}

fn solve_dense(mut h: Vec<Vec<f64>>, mut g: Vec<f64>) -> Vec<f64> {
    let n = g.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| h[x][col].abs().total_cmp(&h[y][col].abs()))
            .unwrap();
        h.swap(col, pivot);
        g.swap(col, pivot);
        for row in col + 1..n {
            let f = h[row][col] / h[col][col];
            for c in col..n {
                h[row][c] -= f * h[col][c];
            }
            g[row] -= f * g[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = g[row];
        for c in row + 1..n {
            s -= h[row][c] * x[c];
        }
        x[row] = s / h[row][row];
    }
    x
}

/// Minimizes `<C, J> - H(J)/ζ` over couplings of `a` and `b` through its
/// dual: maximize `Σ a f + Σ b g - Σ J(f, g) / ζ` with
/// `J = exp(ζ (f_i + g_j - C_ij) - 1)` by damped Newton steps on the full
/// Hessian (one `g` pinned to zero). Returns the plan and its primal
/// objective.
pub fn brute_force_entropic(
    cost: &[Vec<f64>],
    a: &[f64],
    b: &[f64],
    zeta: f64,
) -> (Vec<Vec<f64>>, f64) {
    let (n, m) = (cost.len(), cost[0].len());
    let dims = n + m - 1;
    let plan_of = |y: &[f64]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        let g = if j + 1 < m { y[n + j] } else { 0.0 };
                        (zeta * (y[i] + g - cost[i][j]) - 1.0).exp()
                    })
                    .collect()
            })
            .collect()
    };
    // Negated dual, minimized.
    let phi = |y: &[f64], plan: &[Vec<f64>]| -> f64 {
        let mut v = plan.iter().flatten().sum::<f64>() / zeta;
        for i in 0..n {
            v -= a[i] * y[i];
        }
        for j in 0..m - 1 {
            v -= b[j] * y[n + j];
        }
        v
    };
    let mut y = vec![0.0; dims];
    for i in 0..n {
        y[i] = cost[i].iter().copied().fold(f64::INFINITY, f64::min);
    }
    for _ in 0..500 {
        let plan = plan_of(&y);
        let rows: Vec<f64> = plan.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..m).map(|j| plan.iter().map(|r| r[j]).sum()).collect();
        let mut grad = vec![0.0; dims];
        let mut hess = vec![vec![0.0; dims]; dims];
        for i in 0..n {
            grad[i] = rows[i] - a[i];
            hess[i][i] = zeta * rows[i];
            for j in 0..m - 1 {
                hess[i][n + j] = zeta * plan[i][j];
                hess[n + j][i] = zeta * plan[i][j];
            }
        }
        for j in 0..m - 1 {
            grad[n + j] = cols[j] - b[j];
            hess[n + j][n + j] = zeta * cols[j];
        }
        if grad.iter().map(|g| g.abs()).sum::<f64>() < 1e-15 {
            break;
        }
        let step = solve_dense(hess, grad.clone());
        let slope: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let f0 = phi(&y, &plan);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = y.iter().zip(&step).map(|(v, s)| v - t * s).collect();
            let f1 = phi(&cand, &plan_of(&cand));
            if (f1.is_finite() && f1 <= f0 - 1e-4 * t * slope) || t < 1e-12 {
                y = cand;
                break;
            }
            t *= 0.5;
        }
    }
    let plan = plan_of(&y);
    let v = entropic_objective(cost, &plan, zeta);
    (plan, v)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Unregularized OT between uniform marginals on a square cost matrix: the
/// optimum sits on a vertex of the Birkhoff polytope, so enumerate them.
pub fn vertex_lp(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}
