use super::{AlgoError, PolicySet};
use crate::demo::{AgentSlot, Dataset, Layout};
use crate::policy::{rows_to_array, Minibatch, Scalar};
use crate::sim::{joint_observe, reset, step, AgentObservation, EnvConfig, JointAction};
use serde::{Deserialize, Serialize};

pub(crate) fn concat_obs(observations: &[AgentObservation]) -> Vec<f64> {
    observations.iter().flat_map(|o| o.iter().copied()).collect()
}

/// Plays one episode from `reset(env, seed)`. `control` receives the tick
/// and every agent's observation and returns the joint action to execute.
/// Returns the episode return.
pub fn run_episode<F>(env: &EnvConfig, seed: u64, mut control: F) -> Result<f64, AlgoError>
where
    F: FnMut(u32, &[AgentObservation]) -> Result<JointAction, AlgoError>,
{
    let mut state = reset(env, seed)?;
    let mut total = 0.0;
    loop {
        let obs = joint_observe(&state, env);
        let action = control(state.tick, &obs)?;
        let out = step(&state, &action, env)?;
        total += out.reward;
        state = out.state;
        if out.done {
            return Ok(total);
        }
    }
}

/// Which network a training set feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitTarget {
    Agent(usize),
    Centralized,
}

/// Training pairs for `target`, or `None` when the dataset holds none.
///
/// * per-agent layout, agent `i`: buffer `i` as stored;
/// * joint layout, agent `i`: observation and action slices of agent `i`;
/// * joint layout, centralized: whole records;
/// * centralized layout: concatenated observations with a joint label that
///   is zero outside the demonstrated agent's slice, masked to that slice.
pub fn training_set<S: Scalar>(dataset: &Dataset, target: FitTarget) -> Result<Option<Minibatch<S>>, AlgoError> {
    let h = &dataset.header;
    let (od, ad, n) = (h.obs_dim, h.act_dim, h.n_agents);
    let set = match (h.layout, target) {
        (Layout::PerAgent, FitTarget::Agent(i)) => {
            let Some(buf) = dataset.buffer(AgentSlot::Agent(i)) else { return Ok(None) };
            let obs: Vec<Vec<f64>> = buf.records().iter().map(|r| r.obs.clone()).collect();
            let act: Vec<Vec<f64>> = buf.records().iter().map(|r| r.action.clone()).collect();
            (obs, act, None)
        }
        (Layout::Joint, FitTarget::Agent(i)) => {
            let Some(buf) = dataset.buffer(AgentSlot::Joint) else { return Ok(None) };
            let obs = buf.records().iter().map(|r| r.obs[i * od..(i + 1) * od].to_vec()).collect();
            let act = buf.records().iter().map(|r| r.action[i * ad..(i + 1) * ad].to_vec()).collect();
            (obs, act, None)
        }
        (Layout::Joint, FitTarget::Centralized) => {
            let Some(buf) = dataset.buffer(AgentSlot::Joint) else { return Ok(None) };
            let obs = buf.records().iter().map(|r| r.obs.clone()).collect();
            let act = buf.records().iter().map(|r| r.action.clone()).collect();
            (obs, act, None)
        }
        (Layout::Centralized, FitTarget::Centralized) => {
            let mut obs = Vec::new();
            let mut act = Vec::new();
            let mut mask = Vec::new();
            for buf in &dataset.buffers {
                let AgentSlot::Agent(i) = buf.slot() else { continue };
                for r in buf.records() {
                    let mut a = vec![0.0; n * ad];
                    let mut m = vec![0.0; n * ad];
                    a[i * ad..(i + 1) * ad].copy_from_slice(&r.action);
                    m[i * ad..(i + 1) * ad].iter_mut().for_each(|x| *x = 1.0);
                    obs.push(r.obs.clone());
                    act.push(a);
                    mask.push(m);
                }
            }
            (obs, act, Some(mask))
        }
        (layout, target) => return Err(AlgoError::Config(format!("cannot train {target:?} from a {layout:?} dataset"))),
    };
    let (obs, act, mask) = set;
    if obs.is_empty() {
        return Ok(None);
    }
    let mask = mask.map(|m| rows_to_array(&m)).transpose()?;
    Ok(Some(Minibatch::with_mask(rows_to_array(&obs)?, rows_to_array(&act)?, mask)?))
}

/// Mean squared action error of `policies` on the demonstrations, in
/// per-agent units: one term per (record, demonstrated agent), each the
/// squared L2 error of that agent's 2D action.
pub fn demo_loss<S: Scalar>(policies: &PolicySet<S>, dataset: &Dataset) -> Result<f64, AlgoError> {
    let n = dataset.header.n_agents;
    let mut sum = 0.0;
    let mut terms = 0usize;
    match policies {
        PolicySet::Decentralized(nets) => {
            for (i, net) in nets.iter().enumerate() {
                if let Some(set) = training_set::<S>(dataset, FitTarget::Agent(i))? {
                    sum += net.loss(&set)?.as_f64() * set.len() as f64;
                    terms += set.len();
                }
            }
        }
        PolicySet::Centralized(net) => {
            if let Some(set) = training_set::<S>(dataset, FitTarget::Centralized)? {
                // a joint record holds n agent terms, a masked record one
                let per_record = if set.mask.is_some() { 1 } else { n };
                sum += net.loss(&set)?.as_f64() * set.len() as f64;
                terms += set.len() * per_record;
            }
        }
    }
    if terms == 0 {
        return Err(AlgoError::Config("no demonstrations to score".into()));
    }
    Ok(sum / terms as f64)
}

/// Running first and second moments of scalar samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl NoiseStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Sample standard deviation.
    pub fn std(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0).sqrt()
    }
}
