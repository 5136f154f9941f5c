//! Feed-forward policy network with exact gradients.
//!
//! `PolicyNet<S>` maps an observation to an action through tanh hidden
//! layers and a tanh output, so every output component lies in (-1, 1).
//! Weights are stored `(fan_in, fan_out)` and a batch is a row-major
//! `B x input_dim` matrix, making each layer `tanh(X W + b)`.
//!
//! The loss is the mean over the batch of the squared L2 error, optionally
//! weighted per output component by a 0/1 mask (the centralized round-robin
//! learner uses it to train only the demonstrated agent's output head).

mod checkpoint;
mod scalar;
mod train;

pub use checkpoint::{CheckpointError, CHECKPOINT_SCHEMA};
pub use scalar::Scalar;
pub use train::{train_to_plateau, Optimizer, OptimizerKind, TrainConfig, TrainStats};

use crate::rng::{stream_rng, Stream};
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use thiserror::Error;

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("{what}: expected {expected}, got {got}")]
    DimMismatch { what: &'static str, expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid network: {0}")]
    InvalidShape(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

/// Observation/label pairs, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch<S> {
    pub obs: Array2<S>,
    pub act: Array2<S>,
    /// Per-component loss weights, same shape as `act`.
    pub mask: Option<Array2<S>>,
}

impl<S: Scalar> Minibatch<S> {
    pub fn new(obs: Array2<S>, act: Array2<S>) -> Result<Self, PolicyError> {
        Self::with_mask(obs, act, None)
    }

    pub fn with_mask(obs: Array2<S>, act: Array2<S>, mask: Option<Array2<S>>) -> Result<Self, PolicyError> {
        if obs.nrows() != act.nrows() {
            return Err(PolicyError::DimMismatch {
                what: "label rows",
                expected: obs.nrows(),
                got: act.nrows(),
            });
        }
        if let Some(m) = &mask {
            if m.dim() != act.dim() {
                return Err(PolicyError::DimMismatch {
                    what: "mask columns",
                    expected: act.ncols(),
                    got: m.ncols(),
                });
            }
        }
        Ok(Self { obs, act, mask })
    }

    /// Builds a batch from `f64` rows.
    pub fn from_rows(obs: &[Vec<f64>], act: &[Vec<f64>]) -> Result<Self, PolicyError> {
        Self::new(rows_to_array(obs)?, rows_to_array(act)?)
    }

    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.nrows() == 0
    }

    /// Rows `idx` as a new batch.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            obs: self.obs.select(Axis(0), idx),
            act: self.act.select(Axis(0), idx),
            mask: self.mask.as_ref().map(|m| m.select(Axis(0), idx)),
        }
    }
}

pub(crate) fn rows_to_array<S: Scalar>(rows: &[Vec<f64>]) -> Result<Array2<S>, PolicyError> {
    let cols = rows.first().map_or(0, Vec::len);
    let mut out = Array2::zeros((rows.len(), cols));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(PolicyError::DimMismatch { what: "row length", expected: cols, got: row.len() });
        }
        for (j, &v) in row.iter().enumerate() {
            out[[i, j]] = S::lit(v);
        }
    }
    Ok(out)
}

/// Parameter gradient, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<S> {
    pub weights: Vec<Array2<S>>,
    pub biases: Vec<Array1<S>>,
}

impl<S: Scalar> Gradient<S> {
    pub(crate) fn blocks(&self) -> Vec<&[S]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    /// All entries in the order of [`PolicyNet::params`].
    pub fn flat(&self) -> Vec<S> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet<S> {
    sizes: Vec<usize>,
    weights: Vec<Array2<S>>,
    biases: Vec<Array1<S>>,
    seed: u64,
}

impl<S: Scalar> PolicyNet<S> {
    /// Network `input -> hidden... -> output` with uniform(-s, s) weights and
    /// biases, `s = init_scale / sqrt(fan_in)`, drawn from the weight-init
    /// stream of `seed`.
    pub fn new(sizes: &[usize], init_scale: f64, seed: u64) -> Result<Self, PolicyError> {
        check_sizes(sizes)?;
        if !(init_scale.is_finite() && init_scale >= 0.0) {
            return Err(PolicyError::InvalidShape(format!("init scale {init_scale}")));
        }
        let mut rng = stream_rng(seed, Stream::WeightInit, 0);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let s = init_scale / (fan_in as f64).sqrt();
            let mut draw = || if s > 0.0 { S::lit(rng.gen_range(-s..s)) } else { S::zero() };
            weights.push(Array2::from_shape_simple_fn((fan_in, fan_out), &mut draw));
            biases.push(Array1::from_shape_simple_fn(fan_out, &mut draw));
        }
        Ok(Self { sizes: sizes.to_vec(), weights, biases, seed })
    }

    /// Default architecture: two hidden layers of 64 units.
    pub fn standard(input: usize, output: usize, seed: u64) -> Result<Self, PolicyError> {
        Self::new(&[input, DEFAULT_HIDDEN[0], DEFAULT_HIDDEN[1], output], 1.0, seed)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, PolicyError> {
        Self::new(sizes, 0.0, 0)
    }

    pub(crate) fn from_parts(sizes: Vec<usize>, weights: Vec<Array2<S>>, biases: Vec<Array1<S>>, seed: u64) -> Result<Self, PolicyError> {
        check_sizes(&sizes)?;
        for (l, pair) in sizes.windows(2).enumerate() {
            let ok = weights.get(l).is_some_and(|w| w.dim() == (pair[0], pair[1]))
                && biases.get(l).is_some_and(|b| b.len() == pair[1]);
            if !ok {
                return Err(PolicyError::InvalidShape(format!("layer {l} does not match sizes {sizes:?}")));
            }
        }
        if weights.len() != sizes.len() - 1 || biases.len() != sizes.len() - 1 {
            return Err(PolicyError::InvalidShape("layer count".into()));
        }
        Ok(Self { sizes, weights, biases, seed })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn weights(&self) -> &[Array2<S>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<S>] {
        &self.biases
    }

    /// Flattened parameters: per layer, row-major weights then biases.
    pub fn params(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[S]) -> Result<(), PolicyError> {
        if flat.len() != self.param_count() {
            return Err(PolicyError::DimMismatch { what: "parameter count", expected: self.param_count(), got: flat.len() });
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|x| *x = it.next().expect("length checked"));
            b.iter_mut().for_each(|x| *x = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite())) && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Outputs for a batch of inputs, one row each.
    pub fn forward_batch(&self, x: ArrayView2<S>) -> Result<Array2<S>, PolicyError> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            a = a.dot(w) + b;
            a.mapv_inplace(S::tanh);
        }
        Ok(a)
    }

    /// Output for one `f64` observation.
    pub fn forward(&self, obs: &[f64]) -> Result<Vec<f64>, PolicyError> {
        self.check_input(obs.len())?;
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite("observation"));
        }
        let x = Array2::from_shape_fn((1, obs.len()), |(_, j)| S::lit(obs[j]));
        let y = self.forward_batch(x.view())?;
        Ok(y.iter().map(|v| v.as_f64()).collect())
    }

    pub fn loss(&self, batch: &Minibatch<S>) -> Result<S, PolicyError> {
        self.check_batch(batch)?;
        let y = self.forward_batch(batch.obs.view())?;
        Ok(masked_sq_error(&y, batch) / S::lit(batch.len() as f64))
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn gradient(&self, batch: &Minibatch<S>) -> Result<(S, Gradient<S>), PolicyError> {
        self.check_batch(batch)?;
        let n = S::lit(batch.len() as f64);
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(batch.obs.clone());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let mut z = acts.last().expect("input pushed").dot(w) + b;
            z.mapv_inplace(S::tanh);
            acts.push(z);
        }
        let y = acts.last().expect("output layer");
        let loss = masked_sq_error(y, batch) / n;

        // dL/dy = 2 m (y - a) / B, then through tanh: * (1 - y^2)
        let two_over_n = S::lit(2.0) / n;
        let mut delta = y - &batch.act;
        if let Some(m) = &batch.mask {
            Zip::from(&mut delta).and(m).for_each(|d, &w| *d = *d * w);
        }
        Zip::from(&mut delta).and(y).for_each(|d, &yv| *d = *d * two_over_n * (S::one() - yv * yv));

        let layers = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); layers];
        let mut gb = vec![Array1::zeros(0); layers];
        for l in (0..layers).rev() {
            let input = &acts[l];
            gw[l] = input.t().dot(&delta);
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                Zip::from(&mut back).and(input).for_each(|d, &a| *d = *d * (S::one() - a * a));
                delta = back;
            }
        }
        Ok((loss, Gradient { weights: gw, biases: gb }))
    }

    /// Parameter blocks in gradient order: weights of layer 0, biases of
    /// layer 0, weights of layer 1, ...
    pub(crate) fn param_blocks_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    fn check_input(&self, got: usize) -> Result<(), PolicyError> {
        if got != self.input_dim() {
            return Err(PolicyError::DimMismatch { what: "observation length", expected: self.input_dim(), got });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Minibatch<S>) -> Result<(), PolicyError> {
        if batch.is_empty() {
            return Err(PolicyError::EmptyBatch);
        }
        self.check_input(batch.obs.ncols())?;
        if batch.act.ncols() != self.output_dim() {
            return Err(PolicyError::DimMismatch { what: "label length", expected: self.output_dim(), got: batch.act.ncols() });
        }
        Ok(())
    }
}

/// Analytic vs central-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over the
    /// parameters whose gradient magnitude exceeds `floor`.
    pub max_rel_err: f64,
    /// Largest absolute difference over all parameters.
    pub max_abs_err: f64,
    pub checked: usize,
    pub params: usize,
}

/// Compares [`PolicyNet::gradient`] with `(L(θ+h) - L(θ-h)) / 2h` for
/// every parameter. Parameters where both gradients are below `floor` are
/// excluded from the relative error, which is meaningless at round-off
/// scale; they still count toward `max_abs_err`.
pub fn finite_difference_check(net: &PolicyNet<f64>, batch: &Minibatch<f64>, h: f64, floor: f64) -> Result<GradCheck, PolicyError> {
    let (_, grad) = net.gradient(batch)?;
    let theta = net.params();
    let mut probe = net.clone();
    let mut out = GradCheck { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0, params: theta.len() };
    for (i, analytic) in grad.flat().into_iter().enumerate() {
        let mut p = theta.clone();
        p[i] = theta[i] + h;
        probe.set_params(&p)?;
        let up = probe.loss(batch)?;
        p[i] = theta[i] - h;
        probe.set_params(&p)?;
        let down = probe.loss(batch)?;
        let numeric = (up - down) / (2.0 * h);
        let abs = (analytic - numeric).abs();
        out.max_abs_err = out.max_abs_err.max(abs);
        let scale = analytic.abs().max(numeric.abs());
        if scale > floor {
            out.max_rel_err = out.max_rel_err.max(abs / scale);
            out.checked += 1;
        }
    }
    Ok(out)
}

fn check_sizes(sizes: &[usize]) -> Result<(), PolicyError> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(PolicyError::InvalidShape(format!("layer sizes {sizes:?}")));
    }
    Ok(())
}

fn masked_sq_error<S: Scalar>(y: &Array2<S>, batch: &Minibatch<S>) -> S {
    let mut total = S::zero();
    match &batch.mask {
        Some(m) => Zip::from(y).and(&batch.act).and(m).for_each(|&p, &a, &w| total = total + w * (p - a) * (p - a)),
        None => Zip::from(y).and(&batch.act).for_each(|&p, &a| total = total + (p - a) * (p - a)),
    }
    total
}
