use super::{Gradient, Minibatch, PolicyError, PolicyNet, Scalar};
use crate::rng::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Relative improvement of the epoch loss below which an epoch counts
    /// as stalled.
    pub plateau_rel_tol: f64,
    /// Consecutive stalled epochs that end training.
    pub plateau_patience: usize,
    pub max_epochs: usize,
    pub weight_init_scale: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            plateau_rel_tol: 1e-4,
            plateau_patience: 10,
            max_epochs: 500,
            weight_init_scale: 1.0,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.plateau_rel_tol >= 0.0 && self.plateau_rel_tol.is_finite()) {
            return bad("plateau_rel_tol must be >= 0");
        }
        if self.plateau_patience == 0 {
            return bad("plateau_patience must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if !(self.weight_init_scale >= 0.0 && self.weight_init_scale.is_finite()) {
            return bad("weight_init_scale must be >= 0");
        }
        Ok(())
    }
}

/// First-order optimizer with its moment buffers.
#[derive(Debug, Clone)]
pub struct Optimizer<S> {
    kind: OptimizerKind,
    lr: S,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: i32,
}

impl<S: Scalar> Optimizer<S> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self { kind, lr: S::lit(learning_rate), m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn step(&mut self, net: &mut PolicyNet<S>, grad: &Gradient<S>) {
        let blocks = grad.blocks();
        let params = net.param_blocks_mut();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(blocks) {
                    for (x, &d) in p.iter_mut().zip(g) {
                        *x = *x - self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = blocks.iter().map(|g| vec![S::zero(); g.len()]).collect();
                    self.v = self.m.clone();
                }
                self.t += 1;
                let (b1, b2) = (S::lit(Self::BETA1), S::lit(Self::BETA2));
                let c1 = S::one() - b1.powi(self.t);
                let c2 = S::one() - b2.powi(self.t);
                let eps = S::lit(Self::EPS);
                for (((p, g), m), v) in params.into_iter().zip(blocks).zip(&mut self.m).zip(&mut self.v) {
                    for i in 0..p.len() {
                        let d = g[i];
                        m[i] = b1 * m[i] + (S::one() - b1) * d;
                        v[i] = b2 * v[i] + (S::one() - b2) * d * d;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p[i] = p[i] - self.lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    /// Full-dataset loss before the first step.
    pub initial_loss: f64,
    /// Full-dataset loss after the last step.
    pub final_loss: f64,
    pub epochs: usize,
    /// Sample-weighted mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub plateaued: bool,
}

/// Shuffled minibatch training until the epoch loss stops improving by more
/// than `plateau_rel_tol` (relative) for `plateau_patience` consecutive
/// epochs, or `max_epochs` is reached. Warm-starts from `net`'s weights.
pub fn train_to_plateau<S: Scalar>(net: &mut PolicyNet<S>, data: &Minibatch<S>, cfg: &TrainConfig, rng: &mut Rng) -> Result<TrainStats, PolicyError> {
    cfg.validate()?;
    let initial_loss = net.loss(data)?.as_f64();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best = initial_loss;
    let mut stalled = 0;
    let mut epoch_losses = Vec::new();
    let mut plateaued = false;

    for _ in 0..cfg.max_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let (loss, grad) = net.gradient(&batch)?;
            opt.step(net, &grad);
            total += loss.as_f64() * chunk.len() as f64;
        }
        let epoch_loss = total / data.len() as f64;
        epoch_losses.push(epoch_loss);
        if !epoch_loss.is_finite() {
            return Err(PolicyError::NonFinite("training loss"));
        }
        if epoch_loss < best * (1.0 - cfg.plateau_rel_tol) {
            best = epoch_loss;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= cfg.plateau_patience {
                plateaued = true;
                break;
            }
        }
    }
    let final_loss = net.loss(data)?.as_f64();
    Ok(TrainStats { initial_loss, final_loss, epochs: epoch_losses.len(), epoch_losses, plateaued })
}
