//! L2-penalized logistic regression fit by iteratively reweighted least
//! squares (Newton steps). Powers the propensity model e(x).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// softplus(x) = ln(1 + e^x), stable for large |x|.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LogisticModel {
    pub fn d(&self) -> usize {
        self.weights.len()
    }

    /// Predicted probabilities over column-major features. Extra trailing
    /// columns beyond the model's dimension are an error.
    pub fn predict(&self, columns: &[Vec<f64>]) -> Result<Vec<f64>> {
        if columns.len() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                actual: columns.len(),
            });
        }
        let n = columns.first().map_or(0, |c| c.len());
        let mut margins = vec![self.intercept; n];
        for (w, col) in self.weights.iter().zip(columns) {
            for (m, &x) in margins.iter_mut().zip(col) {
                *m += w * x;
            }
        }
        Ok(margins.into_iter().map(sigmoid).collect())
    }
}

/// Fit result; non-convergence is flagged, not fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticFit {
    pub model: LogisticModel,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
}

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;

/// Penalized log-likelihood: sum_i [y_i m_i - softplus(m_i)] - l2/2 ||w||^2.
/// The intercept is not penalized.
pub fn penalized_log_likelihood(
    columns: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    intercept: f64,
    l2: f64,
) -> f64 {
    let n = y.len();
    let mut ll = 0.0;
    for i in 0..n {
        let mut m = intercept;
        for (w, col) in weights.iter().zip(columns) {
            m += w * col[i];
        }
        ll += y[i] * m - softplus(m);
    }
    ll - 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of `penalized_log_likelihood` in (weights, intercept).
pub fn penalized_gradient(
    columns: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    intercept: f64,
    l2: f64,
) -> (Vec<f64>, f64) {
    let n = y.len();
    let d = weights.len();
    let mut residual = vec![0.0; n];
    for i in 0..n {
        let mut m = intercept;
        for (w, col) in weights.iter().zip(columns) {
            m += w * col[i];
        }
        residual[i] = y[i] - sigmoid(m);
    }
    let mut grad_w = vec![0.0; d];
    for j in 0..d {
        grad_w[j] = columns[j]
            .iter()
            .zip(&residual)
            .map(|(&x, &r)| x * r)
            .sum::<f64>()
            - l2 * weights[j];
    }
    let grad_b = residual.iter().sum::<f64>();
    (grad_w, grad_b)
}

/// Cholesky solve of the symmetric positive-definite system A x = b.
/// A is given row-major (dim x dim). Returns None if not positive definite.
fn cholesky_solve(a: &[f64], b: &[f64], dim: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0_f64; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * dim + i] = s.sqrt();
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    // forward then back substitution
    let mut z = vec![0.0; dim];
    for i in 0..dim {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * dim + k] * z[k];
        }
        z[i] = s / l[i * dim + i];
    }
    let mut x = vec![0.0; dim];
    for i in (0..dim).rev() {
        let mut s = z[i];
        for k in i + 1..dim {
            s -= l[k * dim + i] * x[k];
        }
        x[i] = s / l[i * dim + i];
    }
    Some(x)
}

/// Fit logistic(w.x + b) to a {0,1} target by IRLS, ridge penalty on the
/// weights only. Stops at gradient max-norm <= 1e-8 or 100 iterations.
pub fn logistic_fit(columns: &[Vec<f64>], y: &[f64], l2: f64) -> Result<LogisticFit> {
    let d = columns.len();
    let n = y.len();
    if d == 0 || n == 0 {
        return Err(Error::Parameter("empty design matrix".into()));
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension {
            expected: n,
            actual: columns.iter().map(|c| c.len()).find(|&m| m != n).unwrap_or(0),
        });
    }
    if n < d {
        return Err(Error::Parameter(format!(
            "need at least as many rows ({n}) as features ({d})"
        )));
    }
    if l2 < 0.0 {
        return Err(Error::Parameter("l2 must be >= 0".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Parameter("logistic target must be 0/1".into()));
    }
    let positives = y.iter().sum::<f64>();
    if positives == 0.0 || positives == n as f64 {
        return Err(Error::Fit(
            "logistic target has a single class; cannot fit".into(),
        ));
    }

    let dim = d + 1; // weights then intercept
    let mut params = vec![0.0_f64; dim];
    // warm start the intercept at the base-rate log-odds
    let base = positives / n as f64;
    params[d] = (base / (1.0 - base)).ln();

    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut margins = vec![0.0_f64; n];
    for iter in 0..MAX_ITER {
        iterations = iter + 1;
        for i in 0..n {
            let mut m = params[d];
            for j in 0..d {
                m += params[j] * columns[j][i];
            }
            margins[i] = m;
        }
        // gradient
        let mut grad = vec![0.0_f64; dim];
        for i in 0..n {
            let r = y[i] - sigmoid(margins[i]);
            for j in 0..d {
                grad[j] += columns[j][i] * r;
            }
            grad[d] += r;
        }
        for j in 0..d {
            grad[j] -= l2 * params[j];
        }
        grad_norm = grad.iter().fold(0.0_f64, |acc, g| acc.max(g.abs()));
        if grad_norm <= GRAD_TOL {
            break;
        }
        // negative Hessian: X' R X with R = diag(p(1-p)), ridge on weights.
        // Accumulate the lower triangle (intercept is the last row/col).
        let mut hess = vec![0.0_f64; dim * dim];
        for i in 0..n {
            let p = sigmoid(margins[i]);
            let r = (p * (1.0 - p)).max(1e-12);
            for j in 0..d {
                let xj = columns[j][i] * r;
                for k in 0..=j {
                    hess[j * dim + k] += xj * columns[k][i];
                }
                hess[d * dim + j] += xj;
            }
            hess[d * dim + d] += r;
        }
        for j in 0..d {
            hess[j * dim + j] += l2;
        }
        // mirror the lower triangle
        for j in 0..dim {
            for k in j + 1..dim {
                hess[j * dim + k] = hess[k * dim + j];
            }
        }
        let step = match cholesky_solve(&hess, &grad, dim) {
            Some(s) => s,
            None => {
                return Err(Error::Fit(
                    "singular Hessian in logistic regression".into(),
                ))
            }
        };
        for (p, s) in params.iter_mut().zip(&step) {
            *p += s;
        }
    }
    let model = LogisticModel {
        weights: params[..d].to_vec(),
        intercept: params[d],
    };
    Ok(LogisticFit {
        model,
        converged: grad_norm <= GRAD_TOL,
        grad_norm,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn balanced_independent_target_gives_null_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 2000;
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let fit = logistic_fit(&[x], &y, 1.0).unwrap();
        assert!(fit.converged);
        assert!(fit.model.weights[0].abs() < 0.2, "w {}", fit.model.weights[0]);
        assert!(fit.model.intercept.abs() < 0.2);
        let cols = vec![vec![0.3, 0.6]];
        for p in fit.model.predict(&cols).unwrap() {
            assert!((p - 0.5).abs() < 0.1);
        }
    }

    #[test]
    fn recovers_slope_of_logistic_dgp() {
        // y ~ Bernoulli(sigmoid(2x - 1)), x ~ U(0,1), n = 1e5
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| (rng.gen::<f64>() < sigmoid(2.0 * v - 1.0)) as u8 as f64)
            .collect();
        let fit = logistic_fit(&[x], &y, 0.0).unwrap();
        assert!(fit.converged, "grad norm {}", fit.grad_norm);
        assert!(
            (fit.model.weights[0] - 2.0).abs() < 0.1,
            "slope {}",
            fit.model.weights[0]
        );
        assert!((fit.model.intercept + 1.0).abs() < 0.1);
    }

    #[test]
    fn single_class_target_is_fit_error() {
        let x = vec![vec![0.1, 0.2, 0.3]];
        let err = logistic_fit(&x, &[1.0, 1.0, 1.0], 1.0).unwrap_err();
        assert!(matches!(err, Error::Fit(_)));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let d = 3;
        let columns: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() < 0.4) as u8 as f64).collect();
        let l2 = 0.7;
        let h = 1e-5;
        for _ in 0..10 {
            let w: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let b = rng.gen::<f64>() * 2.0 - 1.0;
            let (gw, gb) = penalized_gradient(&columns, &y, &w, b, l2);
            for j in 0..d {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += h;
                wm[j] -= h;
                let fd = (penalized_log_likelihood(&columns, &y, &wp, b, l2)
                    - penalized_log_likelihood(&columns, &y, &wm, b, l2))
                    / (2.0 * h);
                let rel = (gw[j] - fd).abs() / gw[j].abs().max(1e-8);
                assert!(rel < 1e-6, "weight {j}: analytic {} vs fd {fd}", gw[j]);
            }
            let fd = (penalized_log_likelihood(&columns, &y, &w, b + h, l2)
                - penalized_log_likelihood(&columns, &y, &w, b - h, l2))
                / (2.0 * h);
            let rel = (gb - fd).abs() / gb.abs().max(1e-8);
            assert!(rel < 1e-6, "intercept: analytic {gb} vs fd {fd}");
        }
    }

    #[test]
    fn saturated_margins_predict_exact_endpoints() {
        let model = LogisticModel {
            weights: vec![0.0],
            intercept: -800.0,
        };
        assert_eq!(model.predict(&[vec![1.0]]).unwrap()[0], 0.0);
        let model = LogisticModel {
            weights: vec![0.0],
            intercept: 800.0,
        };
        assert_eq!(model.predict(&[vec![1.0]]).unwrap()[0], 1.0);
    }
}
