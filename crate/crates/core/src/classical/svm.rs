//! C-SVC solved by sequential minimal optimization with second-order working
//! set selection over a precomputed kernel matrix.

use super::{ClassicalError, Matrix, TrainedClassifier};

const TAU: f64 = 1e-12;
const EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d).exp()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Svm {
    kernel: Kernel,
    /// Support vectors with their signed coefficients `alpha_i * y_i`.
    support: Vec<(Vec<f64>, f64)>,
    rho: f64,
    dim: usize,
}

impl Svm {
    /// Class 1 maps to +1, class 0 to -1.
    pub fn fit(x: &Matrix, y: &[usize], c: f64, kernel: Kernel) -> Result<Self, ClassicalError> {
        let n = x.rows();
        let yy: Vec<f64> = y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let mut k = vec![0f64; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = kernel.eval(x.row(i), x.row(j));
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let q = |i: usize, j: usize| yy[i] * yy[j] * k[i * n + j];

        let mut alpha = vec![0f64; n];
        let mut grad = vec![-1f64; n];
        let is_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
        let is_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
        let max_iter = (100 * n).max(10_000_000);
        let mut iter = 0;
        loop {
            // i: maximal violating index in I_up
            let mut gmax = f64::NEG_INFINITY;
            let mut i_sel = None;
            for t in 0..n {
                if is_up(alpha[t], yy[t]) && -yy[t] * grad[t] >= gmax {
                    gmax = -yy[t] * grad[t];
                    i_sel = Some(t);
                }
            }
            let Some(i) = i_sel else { break };
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j_sel = None;
            let mut obj_min = f64::INFINITY;
            for t in 0..n {
                if !is_low(alpha[t], yy[t]) {
                    continue;
                }
                gmax2 = gmax2.max(yy[t] * grad[t]);
                let b = gmax + yy[t] * grad[t];
                if b > 0.0 {
                    let mut a = k[i * n + i] + k[t * n + t] - 2.0 * k[i * n + t];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    if -(b * b) / a <= obj_min {
                        obj_min = -(b * b) / a;
                        j_sel = Some(t);
                    }
                }
            }
            if gmax + gmax2 < EPS || iter >= max_iter {
                break;
            }
            let Some(j) = j_sel else { break };
            iter += 1;

            let (old_i, old_j) = (alpha[i], alpha[j]);
            if yy[i] != yy[j] {
                let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            for t in 0..n {
                grad[t] += q(t, i) * di + q(t, j) * dj;
            }
        }
        if iter >= max_iter {
            log::warn!("SMO stopped at the iteration cap ({max_iter})");
        }

        // rho: average over free vectors, else midpoint of the feasible range
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum_free, mut n_free) = (0.0, 0usize);
        for t in 0..n {
            let yg = yy[t] * grad[t];
            if alpha[t] >= c {
                if yy[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= 0.0 {
                if yy[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
        let support = (0..n)
            .filter(|&t| alpha[t] > 0.0)
            .map(|t| (x.row(t).to_vec(), alpha[t] * yy[t]))
            .collect();
        Ok(Self {
            kernel,
            support,
            rho,
            dim: x.cols(),
        })
    }

    pub fn support_count(&self) -> usize {
        self.support.len()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .map(|(sv, coef)| coef * self.kernel.eval(sv, x))
            .sum::<f64>()
            - self.rho
    }
}

impl TrainedClassifier for Svm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64]) -> [f64; 2] {
        let d = self.decision(x);
        [-d, d]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_points_with_max_margin() {
        let x = Matrix::from_rows(vec![vec![-1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let m = Svm::fit(&x, &[0, 1], 100.0, Kernel::Linear).unwrap();
        // w = (1, 0), b = 0: decision equals the first coordinate
        assert!((m.decision(&[0.5, 3.0]) - 0.5).abs() < 1e-2);
        assert_eq!(m.predict(&[-0.2, 0.0]), 0);
    }

    #[test]
    fn rbf_solves_xor() {
        let x = Matrix::from_rows(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let y = [0, 0, 1, 1];
        let m = Svm::fit(&x, &y, 1000.0, Kernel::Rbf { gamma: 2.0 }).unwrap();
        for (i, &l) in y.iter().enumerate() {
            assert_eq!(m.predict(x.row(i)), l);
        }
    }
}
