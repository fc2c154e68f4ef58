use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_classes, ClassWeight, ScoringError, Standardizer};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedforwardConfig {
    pub hidden_units: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Multiplier on the Glorot-uniform initialization range; must be nonzero.
    pub init_scale: f64,
    pub class_weight: ClassWeight,
}

impl Default for FeedforwardConfig {
    fn default() -> Self {
        FeedforwardConfig {
            hidden_units: 16,
            epochs: 100,
            learning_rate: 0.05,
            batch_size: 32,
            init_scale: 1.0,
            class_weight: ClassWeight::Balanced,
        }
    }
}

/// Inputs → tanh hidden layer → sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedforwardNet {
    pub standardizer: Standardizer,
    pub inputs: usize,
    pub hidden: usize,
    /// Hidden weights (row per unit), hidden biases, output weights, output bias.
    pub params: Vec<f64>,
    /// Weighted training loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

struct Layout {
    inputs: usize,
    hidden: usize,
}

impl Layout {
    fn len(&self) -> usize {
        self.hidden * (self.inputs + 2) + 1
    }
    fn b1(&self) -> usize {
        self.hidden * self.inputs
    }
    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }
    fn b2(&self) -> usize {
        self.w2() + self.hidden
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn forward(params: &[f64], l: &Layout, x: &[f64], hidden: &mut [f64]) -> f64 {
    for (j, h) in hidden.iter_mut().enumerate() {
        let w = &params[j * l.inputs..(j + 1) * l.inputs];
        *h = (params[l.b1() + j] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh();
    }
    params[l.b2()] + params[l.w2()..l.b2()].iter().zip(hidden.iter()).map(|(a, b)| a * b).sum::<f64>()
}

/// Weighted mean cross-entropy of a batch and its gradient with respect to
/// the flat parameter vector.
pub fn net_loss_gradient(
    params: &[f64],
    inputs: usize,
    hidden: usize,
    x: &[Vec<f64>],
    bad: &[bool],
    weights: &[f64],
) -> (f64, Vec<f64>) {
    let l = Layout { inputs, hidden };
    let total: f64 = weights.iter().sum();
    let mut grad = vec![0.0; l.len()];
    let mut act = vec![0.0; hidden];
    let mut loss = 0.0;
    for ((row, &y), &w) in x.iter().zip(bad).zip(weights) {
        let z = forward(params, &l, row, &mut act);
        loss += w * if y { softplus(-z) } else { softplus(z) };
        let dz = w * (sigmoid(z) - if y { 1.0 } else { 0.0 }) / total;
        grad[l.b2()] += dz;
        for (j, &a) in act.iter().enumerate() {
            grad[l.w2() + j] += dz * a;
            let dh = dz * params[l.w2() + j] * (1.0 - a * a);
            grad[l.b1() + j] += dh;
            for (g, v) in grad[j * inputs..(j + 1) * inputs].iter_mut().zip(row) {
                *g += dh * v;
            }
        }
    }
    (loss / total, grad)
}

impl FeedforwardNet {
    pub fn fit(x: &[Vec<f64>], bad: &[bool], cfg: &FeedforwardConfig, seed: u64) -> Result<Self, ScoringError> {
        if cfg.hidden_units == 0 || cfg.batch_size == 0 || cfg.epochs == 0 {
            return Err(ScoringError::InvalidConfig("hidden_units, batch_size and epochs must be positive".into()));
        }
        if cfg.init_scale == 0.0 || !cfg.init_scale.is_finite() {
            return Err(ScoringError::InvalidConfig(
                "init_scale must be nonzero: identical hidden units never diverge from each other".into(),
            ));
        }
        if !(cfg.learning_rate > 0.0) {
            return Err(ScoringError::InvalidConfig("learning_rate must be positive".into()));
        }
        check_classes(bad, 1)?;
        let standardizer = Standardizer::fit(x);
        let z: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r)).collect();
        let weights = cfg.class_weight.weights(bad);
        let l = Layout {
            inputs: standardizer.mean.len(),
            hidden: cfg.hidden_units,
        };

        let mut rng = seed::rng(seed);
        let mut params = vec![0.0; l.len()];
        let r1 = cfg.init_scale * (6.0 / (l.inputs + l.hidden) as f64).sqrt();
        let r2 = cfg.init_scale * (6.0 / (l.hidden + 1) as f64).sqrt();
        for p in &mut params[..l.b1()] {
            *p = rng.random_range(-r1..r1);
        }
        for p in &mut params[l.w2()..l.b2()] {
            *p = rng.random_range(-r2..r2);
        }

        let mut order: Vec<usize> = (0..z.len()).collect();
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        let (mut bx, mut by, mut bw) = (Vec::new(), Vec::new(), Vec::new());
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                bx.clear();
                by.clear();
                bw.clear();
                for &i in batch {
                    bx.push(z[i].clone());
                    by.push(bad[i]);
                    bw.push(weights[i]);
                }
                let (_, grad) = net_loss_gradient(&params, l.inputs, l.hidden, &bx, &by, &bw);
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * g;
                }
            }
            let (loss, _) = net_loss_gradient(&params, l.inputs, l.hidden, &z, bad, &weights);
            if !loss.is_finite() {
                return Err(ScoringError::Diverged { epoch, loss });
            }
            epoch_losses.push(loss);
        }
        Ok(FeedforwardNet {
            standardizer,
            inputs: l.inputs,
            hidden: l.hidden,
            params,
            epoch_losses,
        })
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let l = Layout {
            inputs: self.inputs,
            hidden: self.hidden,
        };
        let mut act = vec![0.0; self.hidden];
        sigmoid(forward(&self.params, &l, &self.standardizer.apply(x), &mut act))
    }
}
