use super::collect::{concat_obs, demo_loss, run_episode, NoiseStats};
use super::round_robin::fit;
use super::{train_offline, AlgoConfig, AlgoError, Algorithm, EpisodeLog, PolicySet, RunLog, RunOutput, Snapshot};
use crate::demo::{AgentSlot, Dataset, DatasetHeader, Layout, Source, TransitionRecord, DATASET_SCHEMA};
use crate::experts::ExpertPolicy;
use crate::policy::Scalar;
use crate::rng::{episode_seed, stream_rng, Stream};
use crate::sim::{AgentAction, EnvConfig, JointAction};
use rand_distr::{Distribution, Normal};

fn joint_dataset(env: &EnvConfig, cfg: &AlgoConfig, expert_sigma: f64) -> Dataset {
    Dataset::empty(DatasetHeader {
        schema_version: DATASET_SCHEMA,
        task: env.task,
        n_agents: env.n_agents,
        obs_dim: env.obs_dim(),
        act_dim: 2,
        horizon: env.horizon,
        expert_sigma,
        seed: cfg.seed,
        algorithm: cfg.algorithm.as_str().to_string(),
        layout: Layout::Joint,
    })
}

fn joint_record(episode_id: u64, t: u32, obs: Vec<f64>, label: &JointAction, source: Source, executed: Option<&JointAction>) -> TransitionRecord {
    TransitionRecord {
        episode_id,
        agent: AgentSlot::Joint,
        t,
        obs,
        action: label.flatten(),
        source,
        executed: executed.map(JointAction::flatten),
    }
}

fn push_episode(dataset: &mut Dataset, log: &mut RunLog, records: Vec<TransitionRecord>, episode_id: u64, ret: f64, refits: usize) -> Result<(), AlgoError> {
    dataset.buffer_mut(AgentSlot::Joint).expect("joint layout").append_episode(records)?;
    log.episodes.push(EpisodeLog {
        episode_id,
        demo_agent: None,
        episode_return: ret,
        buffer_sizes: dataset.buffers.iter().map(|b| b.len()).collect(),
        refits,
    });
    Ok(())
}

/// JBC, decentralized JBC and DART: joint-expert collection followed by a
/// single offline fit.
pub(super) fn run_offline_joint<S: Scalar>(env: &EnvConfig, expert: &ExpertPolicy, cfg: &AlgoConfig, marks: &[usize]) -> Result<RunOutput<S>, AlgoError> {
    let dart = cfg.algorithm == Algorithm::Dart;
    let normal = Normal::new(0.0, cfg.dart_sigma).map_err(|e| AlgoError::Config(e.to_string()))?;
    let mut dataset = joint_dataset(env, cfg, expert.noise_sigma);
    let mut log = RunLog::default();
    let mut injected = NoiseStats::default();
    let mut snapshots = Vec::new();

    let offline_fit = |dataset: &Dataset, log: Option<&mut RunLog>| -> Result<(PolicySet<S>, f64), AlgoError> {
        let (policies, fits) = train_offline::<S>(env, cfg, dataset)?;
        if let Some(log) = log {
            log.fits.extend(fits);
        }
        let loss = demo_loss(&policies, dataset)?;
        Ok((policies, loss))
    };

    for e in 0..cfg.demo_budget as u64 {
        let mut noise = stream_rng(cfg.seed, Stream::ExpertNoise, e);
        let mut dart_rng = stream_rng(cfg.seed, Stream::DartNoise, e);
        let mut records = Vec::new();
        let ret = run_episode(env, episode_seed(cfg.seed, e), |t, obs| {
            let intended = expert.expert_joint(obs, &mut noise)?;
            if !dart {
                records.push(joint_record(e, t, concat_obs(obs), &intended, Source::ExpertJoint, None));
                return Ok(intended);
            }
            let executed = if cfg.dart_sigma > 0.0 {
                JointAction::new(
                    intended
                        .iter()
                        .map(|a| {
                            let (dx, dy) = (normal.sample(&mut dart_rng), normal.sample(&mut dart_rng));
                            injected.push(dx);
                            injected.push(dy);
                            AgentAction::new(a.0[0] + dx, a.0[1] + dy).clamped()
                        })
                        .collect(),
                )
            } else {
                intended.clone()
            };
            records.push(joint_record(e, t, concat_obs(obs), &intended, Source::DartIntended, Some(&executed)));
            Ok(executed)
        })?;
        push_episode(&mut dataset, &mut log, records, e, ret, 0)?;
        let done = e as usize + 1;
        if done < cfg.demo_budget && marks.contains(&done) {
            let (policies, train_loss) = offline_fit(&dataset, None)?;
            snapshots.push(Snapshot { budget: done, policies, train_loss });
        }
    }

    let (policies, train_loss) = offline_fit(&dataset, Some(&mut log))?;
    for ep in &mut log.episodes {
        if ep.episode_id + 1 == cfg.demo_budget as u64 {
            ep.refits = 1;
        }
    }
    if marks.contains(&cfg.demo_budget) {
        snapshots.push(Snapshot { budget: cfg.demo_budget, policies: policies.clone(), train_loss });
    }
    Ok(RunOutput {
        policies,
        dataset,
        log,
        snapshots,
        injected_noise: dart.then_some(injected),
        passive_actions: None,
    })
}

/// DAgger with learner-only execution after the seed iteration. An
/// iteration is `N` episodes, matching a round-robin cycle.
pub(super) fn run_dagger<S: Scalar>(env: &EnvConfig, expert: &ExpertPolicy, cfg: &AlgoConfig, marks: &[usize]) -> Result<RunOutput<S>, AlgoError> {
    let n = env.n_agents;
    let mut dataset = joint_dataset(env, cfg, expert.noise_sigma);
    let mut log = RunLog::default();
    let mut policies = PolicySet::<S>::init(env, Algorithm::Dagger, &cfg.train, cfg.seed)?;
    let mut snapshots = Vec::new();
    let mut fits = 0u64;
    let mut unfit = 0usize;

    for e in 0..cfg.demo_budget as u64 {
        let learner_acts = e as usize >= n;
        let mut noise = stream_rng(cfg.seed, Stream::ExpertNoise, e);
        let mut records = Vec::new();
        let ret = run_episode(env, episode_seed(cfg.seed, e), |t, obs| {
            let label = expert.expert_joint(obs, &mut noise)?;
            if learner_acts {
                let executed = policies.act(obs)?;
                records.push(joint_record(e, t, concat_obs(obs), &label, Source::DaggerLabel, Some(&executed)));
                Ok(executed)
            } else {
                records.push(joint_record(e, t, concat_obs(obs), &label, Source::ExpertJoint, None));
                Ok(label)
            }
        })?;
        let done = e as usize + 1;
        unfit += 1;
        if done.is_multiple_of(n) && (done / n).is_multiple_of(cfg.update_freq_k) {
            dataset.buffer_mut(AgentSlot::Joint).expect("joint layout").append_episode(records)?;
            log.fits.extend(fit(&mut policies, &dataset, cfg, fits, done)?);
            fits += 1;
            unfit = 0;
            log.episodes.push(EpisodeLog {
                episode_id: e,
                demo_agent: None,
                episode_return: ret,
                buffer_sizes: dataset.buffers.iter().map(|b| b.len()).collect(),
                refits: fits as usize,
            });
        } else {
            push_episode(&mut dataset, &mut log, records, e, ret, fits as usize)?;
        }
        if done < cfg.demo_budget && marks.contains(&done) {
            let mut snap = policies.clone();
            if unfit > 0 {
                fit(&mut snap, &dataset, cfg, fits, done)?;
            }
            let train_loss = demo_loss(&snap, &dataset)?;
            snapshots.push(Snapshot { budget: done, policies: snap, train_loss });
        }
    }
    if unfit > 0 {
        log.fits.extend(fit(&mut policies, &dataset, cfg, fits, cfg.demo_budget)?);
        if let Some(ep) = log.episodes.last_mut() {
            ep.refits = fits as usize + 1;
        }
    }
    if marks.contains(&cfg.demo_budget) {
        let train_loss = demo_loss(&policies, &dataset)?;
        snapshots.push(Snapshot { budget: cfg.demo_budget, policies: policies.clone(), train_loss });
    }
    Ok(RunOutput { policies, dataset, log, snapshots, injected_noise: None, passive_actions: None })
}
