use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_classes, ClassWeight, ScoringError, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegConfig {
    /// Ridge penalty on the standardized coefficients (not the intercept).
    pub l2_penalty: f64,
    pub class_weight: ClassWeight,
    pub max_iterations: usize,
    /// Stop once the gradient norm of the penalized mean loss drops below this.
    pub tolerance: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2_penalty: 1e-3,
            class_weight: ClassWeight::Balanced,
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub standardizer: Standardizer,
    /// Intercept first, then one coefficient per standardized input.
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn linear(beta: &[f64], x: &[f64]) -> f64 {
    beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// Weighted mean cross-entropy plus `l2/2 · |β₁..|²` and its gradient.
///
/// `x` rows carry no intercept column; `beta[0]` is the intercept.
pub fn logreg_loss_gradient(beta: &[f64], x: &[Vec<f64>], bad: &[bool], weights: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let total: f64 = weights.iter().sum();
    let mut loss = 0.0;
    let mut grad = vec![0.0; beta.len()];
    for ((row, &y), &w) in x.iter().zip(bad).zip(weights) {
        let z = linear(beta, row);
        // -log p = softplus(-z), -log(1-p) = softplus(z)
        loss += w * if y { softplus(-z) } else { softplus(z) };
        let r = w * (sigmoid(z) - if y { 1.0 } else { 0.0 });
        grad[0] += r;
        for (g, v) in grad[1..].iter_mut().zip(row) {
            *g += r * v;
        }
    }
    loss /= total;
    grad.iter_mut().for_each(|g| *g /= total);
    for (g, b) in grad[1..].iter_mut().zip(&beta[1..]) {
        *g += l2 * b;
    }
    loss += 0.5 * l2 * beta[1..].iter().map(|b| b * b).sum::<f64>();
    (loss, grad)
}

fn hessian(beta: &[f64], x: &[Vec<f64>], weights: &[f64], l2: f64) -> DMatrix<f64> {
    let p = beta.len();
    let total: f64 = weights.iter().sum();
    let mut h = DMatrix::zeros(p, p);
    let mut row1 = vec![1.0; p];
    for (row, &w) in x.iter().zip(weights) {
        row1[1..].copy_from_slice(row);
        let s = sigmoid(linear(beta, row));
        let c = w * s * (1.0 - s) / total;
        for i in 0..p {
            let ci = c * row1[i];
            for j in i..p {
                h[(i, j)] += ci * row1[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
        if i > 0 {
            h[(i, i)] += l2;
        }
    }
    h
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|g| g * g).sum::<f64>().sqrt()
}

impl LogisticRegression {
    /// Damped Newton iterations on the penalized, class-weighted likelihood of
    /// the standardized inputs.
    pub fn fit(x: &[Vec<f64>], bad: &[bool], cfg: &LogRegConfig) -> Result<Self, ScoringError> {
        if !(cfg.l2_penalty >= 0.0) {
            return Err(ScoringError::InvalidConfig("l2_penalty must be nonnegative".into()));
        }
        check_classes(bad, 1)?;
        let standardizer = Standardizer::fit(x);
        let z: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r)).collect();
        let weights = cfg.class_weight.weights(bad);
        let p = standardizer.mean.len() + 1;
        let mut beta = vec![0.0; p];
        let (mut loss, mut grad) = logreg_loss_gradient(&beta, &z, bad, &weights, cfg.l2_penalty);

        for iteration in 0..cfg.max_iterations {
            let gradient_norm = norm(&grad);
            if gradient_norm < cfg.tolerance {
                return Ok(LogisticRegression {
                    standardizer,
                    coefficients: beta,
                    iterations: iteration,
                    gradient_norm,
                });
            }
            let mut h = hessian(&beta, &z, &weights, cfg.l2_penalty);
            // a small ridge keeps the system solvable without a penalty
            for i in 0..p {
                h[(i, i)] += 1e-10;
            }
            let g = DVector::from_column_slice(&grad);
            let step = match h.clone().cholesky() {
                Some(c) => c.solve(&g),
                None => h.lu().solve(&g).unwrap_or(g),
            };
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b - t * s).collect();
                let (trial_loss, trial_grad) = logreg_loss_gradient(&trial, &z, bad, &weights, cfg.l2_penalty);
                if trial_loss <= loss || t < 1e-10 {
                    beta = trial;
                    loss = trial_loss;
                    grad = trial_grad;
                    break;
                }
                t *= 0.5;
            }
        }
        let gradient_norm = norm(&grad);
        if gradient_norm < cfg.tolerance {
            return Ok(LogisticRegression {
                standardizer,
                coefficients: beta,
                iterations: cfg.max_iterations,
                gradient_norm,
            });
        }
        Err(ScoringError::NotConverged {
            iterations: cfg.max_iterations,
            gradient_norm,
        })
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        sigmoid(linear(&self.coefficients, &self.standardizer.apply(x)))
    }

    /// Intercept and coefficients on the original input scale.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        let s = &self.standardizer;
        let mut raw = vec![self.coefficients[0]];
        for ((b, m), sd) in self.coefficients[1..].iter().zip(&s.mean).zip(&s.scale) {
            raw[0] -= b * m / sd;
            raw.push(b / sd);
        }
        raw
    }
}
