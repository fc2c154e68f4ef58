use std::cell::Cell;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use rand::Rng as _;
use rayon::prelude::*;

use super::{EmbedError, Embedding, Node2VecConfig, TrainingMode};
use crate::seed;

/// Walks handed to one task in parallel mode.
const WALKS_PER_TASK: usize = 256;
/// Floor on the decayed learning rate, as a fraction of the initial one.
const MIN_LR_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean loss per (center, context) pair in each epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative-sampling loss of one pair:
/// `-ln σ(c·o) - Σ_k ln σ(-c·n_k)`.
pub fn pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    -log_sigmoid(dot(center, context)) - negatives.iter().map(|n| log_sigmoid(-dot(center, n))).sum::<f64>()
}

/// Analytic gradients of [`pair_loss`] with respect to each argument.
pub fn pair_gradients(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> PairGradients {
    let pos = sigmoid(dot(center, context)) - 1.0;
    let mut g_center: Vec<f64> = context.iter().map(|o| pos * o).collect();
    let g_context = center.iter().map(|c| pos * c).collect();
    let g_negatives = negatives
        .iter()
        .map(|n| {
            let s = sigmoid(dot(center, n));
            for (g, x) in g_center.iter_mut().zip(n.iter()) {
                *g += s * x;
            }
            center.iter().map(|c| s * c).collect()
        })
        .collect();
    PairGradients {
        center: g_center,
        context: g_context,
        negatives: g_negatives,
    }
}

/// Flat parameter storage shared by the training loop.
trait Params {
    fn get(&self, i: usize) -> f64;
    fn add(&self, i: usize, delta: f64);
}

impl Params for [Cell<f64>] {
    fn get(&self, i: usize) -> f64 {
        self[i].get()
    }
    fn add(&self, i: usize, delta: f64) {
        self[i].set(self[i].get() + delta);
    }
}

// Hogwild: concurrent writers may lose each other's updates.
impl Params for [AtomicU64] {
    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self[i].load(Ordering::Relaxed))
    }
    fn add(&self, i: usize, delta: f64) {
        let v = Params::get(self, i) + delta;
        self[i].store(v.to_bits(), Ordering::Relaxed);
    }
}

/// One SGD step on a (center, context, negatives) example; returns the
/// loss before the update. Negatives equal to the context are skipped.
fn sgd_step<P: Params + ?Sized>(
    input: &P,
    output: &P,
    d: usize,
    center: usize,
    context: usize,
    negatives: &[usize],
    lr: f64,
    grad_center: &mut [f64],
) -> f64 {
    grad_center.iter_mut().for_each(|g| *g = 0.0);
    let (ci, mut loss) = (center * d, 0.0);
    let targets = std::iter::once((context, 1.0)).chain(negatives.iter().filter(|&&n| n != context).map(|&n| (n, 0.0)));
    for (target, label) in targets {
        let ti = target * d;
        let x: f64 = (0..d).map(|k| input.get(ci + k) * output.get(ti + k)).sum();
        loss -= if label == 1.0 { log_sigmoid(x) } else { log_sigmoid(-x) };
        // minus the loss gradient with respect to x
        let g = label - sigmoid(x);
        for k in 0..d {
            grad_center[k] += g * output.get(ti + k);
            output.add(ti + k, lr * g * input.get(ci + k));
        }
    }
    for (k, g) in grad_center.iter().enumerate() {
        input.add(ci + k, lr * g);
    }
    loss
}

/// Cumulative unigram^0.75 noise distribution.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(counts: &[usize]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        NoiseTable { cumulative }
    }

    fn sample(&self, rng: &mut seed::Rng) -> usize {
        let total = *self.cumulative.last().expect("nonempty table");
        let u = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

struct Schedule {
    lr: f64,
    total_tokens: f64,
}

impl Schedule {
    fn rate(&self, processed: usize) -> f64 {
        self.lr * (1.0 - processed as f64 / self.total_tokens).max(MIN_LR_FRACTION)
    }
}

/// Trains over a slice of walks; returns (summed loss, pair count).
#[allow(clippy::too_many_arguments)]
fn train_walks<P: Params + ?Sized>(
    input: &P,
    output: &P,
    walks: &[Vec<usize>],
    cfg: &Node2VecConfig,
    noise: &NoiseTable,
    schedule: &Schedule,
    processed: &AtomicUsize,
    rng: &mut seed::Rng,
) -> (f64, usize) {
    let d = cfg.dimensions;
    let mut grad = vec![0.0; d];
    let mut negatives = vec![0; cfg.negative_samples];
    let (mut loss, mut pairs) = (0.0, 0);
    for walk in walks {
        let lr = schedule.rate(processed.fetch_add(walk.len(), Ordering::Relaxed));
        for (i, &center) in walk.iter().enumerate() {
            let lo = i.saturating_sub(cfg.context_window);
            let hi = (i + cfg.context_window + 1).min(walk.len());
            for (j, &context) in walk.iter().enumerate().take(hi).skip(lo) {
                if j == i {
                    continue;
                }
                negatives.iter_mut().for_each(|n| *n = noise.sample(rng));
                loss += sgd_step(input, output, d, center, context, &negatives, lr, &mut grad);
                pairs += 1;
            }
        }
    }
    (loss, pairs)
}

/// Skip-gram with negative sampling over a walk corpus.
///
/// Input vectors start uniform in ±0.5/d and output vectors at zero. The
/// returned embedding holds the input vectors of all `node_count` nodes;
/// nodes absent from the corpus keep their initial values.
pub fn train_skipgram(
    walks: &[Vec<usize>],
    node_count: usize,
    cfg: &Node2VecConfig,
) -> Result<(Embedding, TrainingReport), EmbedError> {
    cfg.validate()?;
    if walks.iter().all(|w| w.is_empty()) {
        return Err(EmbedError::EmptyCorpus);
    }
    let d = cfg.dimensions;
    let mut counts = vec![0usize; node_count];
    for &node in walks.iter().flatten() {
        if node >= node_count {
            return Err(EmbedError::NodeOutOfRange { node, nodes: node_count });
        }
        counts[node] += 1;
    }

    let mut init_rng = seed::rng(seed::derive(cfg.seed, "skipgram-init"));
    let init: Vec<f64> = (0..node_count * d).map(|_| (init_rng.random::<f64>() - 0.5) / d as f64).collect();

    let distinct = counts.iter().filter(|&&c| c > 0).count();
    if distinct < 2 {
        log::warn!(target: "embed", "walk corpus has {distinct} distinct node(s); returning initial vectors");
        return Ok((to_embedding(init, d), TrainingReport { epoch_losses: Vec::new() }));
    }

    let noise = NoiseTable::new(&counts);
    let tokens: usize = walks.iter().map(Vec::len).sum();
    let schedule = Schedule {
        lr: cfg.learning_rate,
        total_tokens: (tokens * cfg.epochs) as f64,
    };
    let processed = AtomicUsize::new(0);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    let flat = match cfg.mode {
        TrainingMode::Deterministic => {
            let input: Vec<Cell<f64>> = init.into_iter().map(Cell::new).collect();
            let output: Vec<Cell<f64>> = (0..node_count * d).map(|_| Cell::new(0.0)).collect();
            let mut rng = seed::rng(seed::derive(cfg.seed, "skipgram-train"));
            for _ in 0..cfg.epochs {
                let (loss, pairs) =
                    train_walks(input.as_slice(), output.as_slice(), walks, cfg, &noise, &schedule, &processed, &mut rng);
                epoch_losses.push(loss / pairs.max(1) as f64);
            }
            input.into_iter().map(Cell::into_inner).collect()
        }
        TrainingMode::Parallel => {
            let input: Vec<AtomicU64> = init.into_iter().map(|v| AtomicU64::new(v.to_bits())).collect();
            let output: Vec<AtomicU64> = (0..node_count * d).map(|_| AtomicU64::new(0)).collect();
            for epoch in 0..cfg.epochs {
                let (loss, pairs) = walks
                    .par_chunks(WALKS_PER_TASK)
                    .enumerate()
                    .map(|(task, chunk)| {
                        let mut rng = seed::rng(seed::derive_indexed(cfg.seed, &[epoch as u64, task as u64]));
                        train_walks(input.as_slice(), output.as_slice(), chunk, cfg, &noise, &schedule, &processed, &mut rng)
                    })
                    .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
                epoch_losses.push(loss / pairs.max(1) as f64);
            }
            input.into_iter().map(|a| f64::from_bits(a.into_inner())).collect()
        }
    };
    Ok((to_embedding(flat, d), TrainingReport { epoch_losses }))
}

fn to_embedding(flat: Vec<f64>, d: usize) -> Embedding {
    Embedding {
        dimensions: d,
        vectors: flat.chunks(d).map(<[f64]>::to_vec).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(mode: TrainingMode) -> Node2VecConfig {
        Node2VecConfig {
            dimensions: 8,
            walks_per_node: 1,
            walk_length: 10,
            context_window: 2,
            negative_samples: 3,
            epochs: 20,
            learning_rate: 0.05,
            seed: 3,
            mode,
            ..Default::default()
        }
    }

    fn corpus() -> Vec<Vec<usize>> {
        let mut rng = seed::rng(9);
        (0..400)
            .map(|i| {
                // two communities: nodes 0..5 and 5..10
                let base = if i % 2 == 0 { 0 } else { 5 };
                (0..10).map(|_| base + rng.random_range(0..5)).collect()
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seed::rng(1);
        let mut v = || (0..6).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<f64>>();
        let (c, o, n1, n2) = (v(), v(), v(), v());
        let g = pair_gradients(&c, &o, &[&n1, &n2]);
        let h = 1e-6;
        let loss = |c: &[f64], o: &[f64], n1: &[f64], n2: &[f64]| pair_loss(c, o, &[n1, n2]);
        for k in 0..6 {
            let bump = |x: &[f64], s: f64| {
                let mut y = x.to_vec();
                y[k] += s;
                y
            };
            let fd_c = (loss(&bump(&c, h), &o, &n1, &n2) - loss(&bump(&c, -h), &o, &n1, &n2)) / (2.0 * h);
            let fd_o = (loss(&c, &bump(&o, h), &n1, &n2) - loss(&c, &bump(&o, -h), &n1, &n2)) / (2.0 * h);
            let fd_n = (loss(&c, &o, &n1, &bump(&n2, h)) - loss(&c, &o, &n1, &bump(&n2, -h))) / (2.0 * h);
            assert!((fd_c - g.center[k]).abs() < 1e-5);
            assert!((fd_o - g.context[k]).abs() < 1e-5);
            assert!((fd_n - g.negatives[1][k]).abs() < 1e-5);
        }
    }

    #[test]
    fn sgd_step_descends_along_gradient() {
        let d = 4;
        let mut rng = seed::rng(2);
        let input: Vec<Cell<f64>> = (0..3 * d).map(|_| Cell::new(rng.random::<f64>() - 0.5)).collect();
        let output: Vec<Cell<f64>> = (0..3 * d).map(|_| Cell::new(rng.random::<f64>() - 0.5)).collect();
        let row = |p: &[Cell<f64>], i: usize| p[i * d..(i + 1) * d].iter().map(Cell::get).collect::<Vec<_>>();
        let (c, o, n) = (row(&input, 0), row(&output, 1), row(&output, 2));
        let g = pair_gradients(&c, &o, &[&n]);
        let lr = 0.1;
        let mut scratch = vec![0.0; d];
        let loss = sgd_step(input.as_slice(), output.as_slice(), d, 0, 1, &[2, 1], lr, &mut scratch);
        assert!((loss - pair_loss(&c, &o, &[&n])).abs() < 1e-12);
        for k in 0..d {
            assert!((row(&input, 0)[k] - (c[k] - lr * g.center[k])).abs() < 1e-12);
            assert!((row(&output, 1)[k] - (o[k] - lr * g.context[k])).abs() < 1e-12);
            assert!((row(&output, 2)[k] - (n[k] - lr * g.negatives[0][k])).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_sigmoid(-800.0).is_finite());
        assert_eq!(log_sigmoid(800.0), 0.0);
    }

    #[test]
    fn noise_follows_smoothed_unigram() {
        let table = NoiseTable::new(&[1, 0, 16]);
        let mut rng = seed::rng(4);
        let mut hits = [0usize; 3];
        for _ in 0..100_000 {
            hits[table.sample(&mut rng)] += 1;
        }
        assert_eq!(hits[1], 0);
        // 1 : 16^0.75 = 1 : 8
        let share = hits[0] as f64 / 100_000.0;
        assert!((share - 1.0 / 9.0).abs() < 0.005, "{share}");
    }

    #[test]
    fn deterministic_mode_reproduces() {
        let cfg = small_cfg(TrainingMode::Deterministic);
        let a = train_skipgram(&corpus(), 10, &cfg).unwrap();
        let b = train_skipgram(&corpus(), 10, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn smoothed_loss_does_not_increase() {
        for mode in [TrainingMode::Deterministic, TrainingMode::Parallel] {
            let cfg = Node2VecConfig {
                epochs: 10,
                learning_rate: 0.01,
                ..small_cfg(mode)
            };
            let (_, report) = train_skipgram(&corpus(), 10, &cfg).unwrap();
            assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
            let mut ema = report.epoch_losses[0];
            for &l in &report.epoch_losses[1..] {
                let next = 0.5 * ema + 0.5 * l;
                // at convergence single epochs jitter by SGD noise
                assert!(next <= ema * 1.01, "{:?}", report.epoch_losses);
                ema = next;
            }
            assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
        }
    }

    #[test]
    fn degenerate_corpus_keeps_initial_vectors() {
        let cfg = small_cfg(TrainingMode::Deterministic);
        let (emb, report) = train_skipgram(&[vec![0], vec![0]], 2, &cfg).unwrap();
        assert!(report.epoch_losses.is_empty());
        assert_eq!(emb.vectors.len(), 2);
        assert!(emb.vectors.iter().flatten().all(|x| x.abs() <= 0.5 / 8.0));
    }

    #[test]
    fn corpus_errors() {
        let cfg = small_cfg(TrainingMode::Deterministic);
        assert!(matches!(train_skipgram(&[], 2, &cfg), Err(EmbedError::EmptyCorpus)));
        assert!(matches!(
            train_skipgram(&[vec![0, 5]], 2, &cfg),
            Err(EmbedError::NodeOutOfRange { node: 5, nodes: 2 })
        ));
    }
}
