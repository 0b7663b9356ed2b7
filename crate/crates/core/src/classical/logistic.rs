//! L2-regularised binary logistic regression fitted with L-BFGS.

use super::{ClassicalError, Matrix, TrainedClassifier};

const MEMORY: usize = 10;
const MAX_ITER: usize = 1000;
const GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LogisticRegression {
    weights: Vec<f64>,
    bias: f64,
}

fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Objective `sum_i logloss_i + |w|^2 / (2C)` and its gradient; the last
/// coordinate of `theta` is the unpenalised intercept.
fn objective(x: &Matrix, y: &[f64], c: f64, theta: &[f64], grad: &mut [f64]) -> f64 {
    let d = x.cols();
    let (w, b) = (&theta[..d], theta[d]);
    let mut f = 0.0;
    grad.iter_mut().for_each(|g| *g = 0.0);
    for i in 0..x.rows() {
        let row = x.row(i);
        let z: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        // y in {0, 1}: loss = log(1 + e^z) - y z
        f += log1pexp(z) - y[i] * z;
        let r = sigmoid(z) - y[i];
        for (g, a) in grad[..d].iter_mut().zip(row) {
            *g += r * a;
        }
        grad[d] += r;
    }
    for k in 0..d {
        f += w[k] * w[k] / (2.0 * c);
        grad[k] += w[k] / c;
    }
    f
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LogisticRegression {
    pub fn fit(x: &Matrix, y: &[usize], c: f64) -> Result<Self, ClassicalError> {
        let d = x.cols();
        let yf: Vec<f64> = y.iter().map(|&l| l as f64).collect();
        let mut theta = vec![0f64; d + 1];
        let mut grad = vec![0f64; d + 1];
        let mut f = objective(x, &yf, c, &theta, &mut grad);
        let g0 = dot(&grad, &grad).sqrt().max(1.0);
        let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
        let mut new_grad = vec![0f64; d + 1];
        for _ in 0..MAX_ITER {
            if dot(&grad, &grad).sqrt() <= GRAD_TOL * g0 {
                break;
            }
            // two-loop recursion
            let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
            let mut alphas = Vec::with_capacity(hist.len());
            for (s, yv, rho) in hist.iter().rev() {
                let a = rho * dot(s, &dir);
                dir.iter_mut().zip(yv).for_each(|(p, q)| *p -= a * q);
                alphas.push(a);
            }
            let gamma = hist
                .last()
                .map_or(1.0 / dot(&grad, &grad).sqrt().max(1e-12), |(s, yv, _)| dot(s, yv) / dot(yv, yv));
            dir.iter_mut().for_each(|p| *p *= gamma);
            for ((s, yv, rho), a) in hist.iter().zip(alphas.iter().rev()) {
                let bcoef = rho * dot(yv, &dir);
                dir.iter_mut().zip(s).for_each(|(p, q)| *p += (a - bcoef) * q);
            }
            let mut slope = dot(&grad, &dir);
            if slope >= 0.0 {
                dir = grad.iter().map(|g| -g).collect();
                slope = -dot(&grad, &grad);
                hist.clear();
            }
            // Armijo backtracking
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, p)| t + step * p).collect();
                let fc = objective(x, &yf, c, &cand, &mut new_grad);
                if fc.is_finite() && fc <= f + 1e-4 * step * slope {
                    accepted = Some((cand, fc));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, fc)) = accepted else { break };
            let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &yv);
            if sy > 1e-12 {
                if hist.len() == MEMORY {
                    hist.remove(0);
                }
                hist.push((s, yv, 1.0 / sy));
            }
            let rel = (f - fc).abs() / f.abs().max(fc.abs()).max(1.0);
            theta = cand;
            f = fc;
            std::mem::swap(&mut grad, &mut new_grad);
            if rel < 1e-12 {
                break;
            }
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(ClassicalError::Diverged("logistic regression".into()));
        }
        let bias = theta.pop().unwrap_or(0.0);
        Ok(Self { weights: theta, bias })
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, x) + self.bias)
    }
}

impl TrainedClassifier for LogisticRegression {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn score(&self, x: &[f64]) -> [f64; 2] {
        let p = self.probability(x);
        [1.0 - p, p]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_differences() {
        let x = Matrix::from_rows(vec![vec![0.5, -1.0], vec![2.0, 0.3], vec![-1.0, 1.0]]).unwrap();
        let y = [1.0, 0.0, 1.0];
        let theta = [0.3, -0.2, 0.1];
        let mut g = [0.0; 3];
        objective(&x, &y, 2.0, &theta, &mut g);
        for k in 0..3 {
            let mut tp = theta;
            let mut tm = theta;
            tp[k] += 1e-6;
            tm[k] -= 1e-6;
            let mut scratch = [0.0; 3];
            let fd = (objective(&x, &y, 2.0, &tp, &mut scratch) - objective(&x, &y, 2.0, &tm, &mut scratch)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-6, "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn one_dimensional_optimum_has_zero_gradient() {
        let x = Matrix::from_rows(vec![vec![-2.0], vec![-1.0], vec![1.0], vec![0.5], vec![2.0]]).unwrap();
        let y = [0, 0, 1, 0, 1];
        let m = LogisticRegression::fit(&x, &y, 1.0).unwrap();
        let mut g = [0.0; 2];
        let yf: Vec<f64> = y.iter().map(|&l| l as f64).collect();
        objective(&x, &yf, 1.0, &[m.weights[0], m.bias], &mut g);
        assert!(g.iter().all(|v| v.abs() < 1e-4), "{g:?}");
        assert!(m.probability(&[3.0]) > 0.5);
    }
}
