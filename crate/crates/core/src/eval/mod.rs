//! Seeded evaluation, score normalization, loss gap and summary statistics.
//!
//! Every evaluation plays the fixed seed list `0..n_seeds`. Policies act
//! greedily. The expert reference is the noise-free joint demonstrator;
//! the random reference draws each agent's action uniformly from the unit
//! square, with a stream keyed by the evaluation seed.

mod sweep;

pub use sweep::{render_svg, summarize, BudgetAccounting, Cell, CellResult, CurveRow, GapRow, SummaryRow, SweepError, SweepSpec, Sweeper};

use crate::algorithms::{demo_loss, run_episode, AlgoError, PolicySet};
use crate::demo::Dataset;
use crate::experts::ExpertPolicy;
use crate::policy::Scalar;
use crate::rng::{stream_rng, Stream};
use crate::sim::{AgentAction, AgentObservation, EnvConfig, JointAction, TaskId};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EVAL_SEEDS: usize = 50;

/// z for a two-sided 99% normal interval.
pub const Z99: f64 = 2.576;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Algo(#[from] AlgoError),
    #[error("degenerate references: expert {expert} vs random {random}")]
    Degenerate { expert: f64, random: f64 },
    #[error("nothing to evaluate: {0}")]
    Empty(&'static str),
    #[error("policies control {policy} agents but {task} has {task_agents}")]
    AgentMismatch { task: TaskId, policy: usize, task_agents: usize },
}

/// Per-seed returns of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Returns {
    pub per_seed: Vec<f64>,
}

impl Returns {
    pub fn mean(&self) -> f64 {
        mean(&self.per_seed)
    }
}

/// Which demonstrator labels the states a learner visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Labeler {
    /// Each agent's own single-agent expert.
    Single,
    /// The coordinated joint expert.
    Joint,
}

/// Outcome of rolling a policy set out on the evaluation seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollouts {
    pub returns: Returns,
    /// Mean squared action error against clean expert labels on the visited
    /// states, in per-agent units.
    pub test_loss: f64,
}

fn check_agents<S: Scalar>(env: &EnvConfig, policies: &PolicySet<S>) -> Result<(), EvalError> {
    if policies.n_agents() != env.n_agents {
        return Err(EvalError::AgentMismatch { task: env.task, policy: policies.n_agents(), task_agents: env.n_agents });
    }
    Ok(())
}

/// Mean greedy return of `policies` over seeds `0..n_seeds`.
pub fn evaluate<S: Scalar>(env: &EnvConfig, policies: &PolicySet<S>, n_seeds: usize) -> Result<Returns, EvalError> {
    check_agents(env, policies)?;
    evaluate_with(env, n_seeds, |o| policies.act(o))
}

fn evaluate_with<F>(env: &EnvConfig, n_seeds: usize, mut act: F) -> Result<Returns, EvalError>
where
    F: FnMut(&[AgentObservation]) -> Result<JointAction, AlgoError>,
{
    if n_seeds == 0 {
        return Err(EvalError::Empty("zero evaluation seeds"));
    }
    let per_seed = (0..n_seeds as u64)
        .map(|seed| run_episode(env, seed, |_, o| act(o)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Returns { per_seed })
}

/// Greedy rollouts that also score the policy against clean expert labels
/// at every visited state.
pub fn rollouts<S: Scalar>(env: &EnvConfig, policies: &PolicySet<S>, expert: &ExpertPolicy, labeler: Labeler, n_seeds: usize) -> Result<Rollouts, EvalError> {
    check_agents(env, policies)?;
    if n_seeds == 0 {
        return Err(EvalError::Empty("zero evaluation seeds"));
    }
    let mut sq = 0.0;
    let mut terms = 0usize;
    let per_seed = (0..n_seeds as u64)
        .map(|seed| {
            run_episode(env, seed, |_, obs| {
                let action = policies.act(obs)?;
                let labels = match labeler {
                    Labeler::Joint => expert.clean_joint(obs)?,
                    Labeler::Single => JointAction::new(
                        obs.iter().enumerate().map(|(i, o)| expert.clean_single(o, i)).collect::<Result<_, _>>()?,
                    ),
                };
                for (a, l) in action.per_agent.iter().zip(&labels.per_agent) {
                    sq += (a.0[0] - l.0[0]).powi(2) + (a.0[1] - l.0[1]).powi(2);
                    terms += 1;
                }
                Ok(action)
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Rollouts { returns: Returns { per_seed }, test_loss: sq / terms as f64 })
}

/// Train and test losses of a policy set and their difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossGap {
    pub train_loss: f64,
    pub test_loss: f64,
    pub gap: f64,
}

impl LossGap {
    pub fn new(train_loss: f64, test_loss: f64) -> Self {
        Self { train_loss, test_loss, gap: test_loss - train_loss }
    }
}

/// Test loss on the learner's own rollouts minus training loss on the
/// demonstrations, both in per-agent units.
pub fn loss_gap<S: Scalar>(env: &EnvConfig, policies: &PolicySet<S>, dataset: &Dataset, expert: &ExpertPolicy, labeler: Labeler, n_seeds: usize) -> Result<LossGap, EvalError> {
    if dataset.total_records() == 0 {
        return Err(EvalError::Empty("empty demonstration set"));
    }
    let train = demo_loss(policies, dataset)?;
    let test = rollouts(env, policies, expert, labeler, n_seeds)?.test_loss;
    Ok(LossGap::new(train, test))
}

/// Returns of the noise-free joint expert.
pub fn expert_returns(env: &EnvConfig, expert: &ExpertPolicy, n_seeds: usize) -> Result<Returns, EvalError> {
    evaluate_with(env, n_seeds, |o| Ok(expert.clean_joint(o)?))
}

/// Returns of the uniform random controller.
pub fn random_returns(env: &EnvConfig, n_seeds: usize) -> Result<Returns, EvalError> {
    if n_seeds == 0 {
        return Err(EvalError::Empty("zero evaluation seeds"));
    }
    let n = env.n_agents;
    let per_seed = (0..n_seeds as u64)
        .map(|seed| {
            let mut rng = stream_rng(seed, Stream::EvalController, 0);
            run_episode(env, seed, |_, _| {
                Ok(JointAction::new(
                    (0..n).map(|_| AgentAction::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))).collect(),
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Returns { per_seed })
}

/// Mean returns of the two reference controllers on one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub random: f64,
    pub expert: f64,
}

impl References {
    pub fn measure(env: &EnvConfig, expert: &ExpertPolicy, n_seeds: usize) -> Result<Self, EvalError> {
        let refs = Self {
            random: random_returns(env, n_seeds)?.mean(),
            expert: expert_returns(env, expert, n_seeds)?.mean(),
        };
        refs.check()?;
        Ok(refs)
    }

    fn check(&self) -> Result<(), EvalError> {
        let span = self.expert - self.random;
        if !span.is_finite() || span.abs() <= 1e-12 * (1.0 + self.expert.abs().max(self.random.abs())) {
            return Err(EvalError::Degenerate { expert: self.expert, random: self.random });
        }
        Ok(())
    }

    pub fn normalize(&self, r: f64) -> Result<f64, EvalError> {
        normalize(r, self.random, self.expert)
    }
}

/// `(r - random) / (expert - random)`, unclipped.
pub fn normalize(r: f64, random: f64, expert: f64) -> Result<f64, EvalError> {
    References { random, expert }.check()?;
    if r == expert {
        return Ok(1.0);
    }
    Ok((r - random) / (expert - random))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Half-width of the 99% normal-approximation interval of the mean.
pub fn ci99_half_width(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    Z99 * sample_std(xs) / (xs.len() as f64).sqrt()
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation, or `None` when either side is constant or
/// the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
