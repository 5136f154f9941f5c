use r2bc::algorithms::{run, run_episode, AlgoConfig, Algorithm};
use r2bc::demo::{AgentSlot, Dataset, Source, TransitionRecord};
use r2bc::eval::*;
use r2bc::experts::ExpertPolicy;
use r2bc::policy::TrainConfig;
use r2bc::sim::{EnvConfig, TaskId};
use std::fs;

fn tiny_spec() -> SweepSpec {
    let base = AlgoConfig { train: TrainConfig { max_epochs: 2, ..TrainConfig::default() }, ..AlgoConfig::default() };
    SweepSpec {
        tasks: vec![TaskId::Buzzwire],
        algorithms: vec![Algorithm::R2bc, Algorithm::Jbc],
        budgets: vec![2, 4],
        seeds: vec![0, 1],
        eval_seeds: 3,
        accounting: BudgetAccounting::Episodes,
        base,
    }
}

#[test]
fn references_normalize_exactly() {
    for task in TaskId::ALL {
        let env = EnvConfig::for_task(task);
        let expert = ExpertPolicy::with_defaults(env.clone());
        let refs = References::measure(&env, &expert, 5).unwrap();
        assert_eq!(refs.normalize(expert_returns(&env, &expert, 5).unwrap().mean()).unwrap(), 1.0);
        assert_eq!(refs.normalize(random_returns(&env, 5).unwrap().mean()).unwrap(), 0.0);
        assert!(refs.expert > refs.random, "{task}");
    }
}

#[test]
fn evaluation_is_repeatable_and_checks_agents() {
    let env = EnvConfig::for_task(TaskId::Navigation);
    let expert = ExpertPolicy::with_defaults(env.clone());
    let cfg = AlgoConfig { algorithm: Algorithm::DecJbc, demo_budget: 1, train: TrainConfig { max_epochs: 1, ..Default::default() }, ..Default::default() };
    let out = run::<f64>(&env, &expert, &cfg, &[]).unwrap();
    let a = evaluate(&env, &out.policies, 4).unwrap();
    let b = evaluate(&env, &out.policies, 4).unwrap();
    assert_eq!(a, b);
    let buzz = EnvConfig::for_task(TaskId::Buzzwire);
    assert!(matches!(evaluate(&buzz, &out.policies, 1), Err(EvalError::AgentMismatch { .. })));
    assert!(matches!(evaluate(&env, &out.policies, 0), Err(EvalError::Empty(_))));
}

#[test]
fn loss_gap_is_test_minus_train() {
    let g = LossGap::new(0.25, 0.5);
    assert_eq!(g.gap, 0.25);
    assert_eq!(LossGap::new(0.5, 0.25).gap, -g.gap);
}

#[test]
fn loss_gap_vanishes_on_matched_distributions() {
    // train on exactly the states the policy visits, with the labels the
    // test loss uses
    let env = EnvConfig::for_task(TaskId::Navigation);
    let expert = ExpertPolicy::with_defaults(env.clone());
    let cfg = AlgoConfig { algorithm: Algorithm::Jbc, demo_budget: 1, train: TrainConfig { max_epochs: 1, ..Default::default() }, ..Default::default() };
    let out = run::<f64>(&env, &expert, &cfg, &[]).unwrap();
    let mut header = out.dataset.header.clone();
    header.algorithm = "matched".into();
    let mut matched = Dataset::empty(header);
    for seed in 0..2u64 {
        let mut records = Vec::new();
        run_episode(&env, seed, |t, obs| {
            let labels = expert.clean_joint(obs)?;
            records.push(TransitionRecord {
                episode_id: seed,
                agent: AgentSlot::Joint,
                t,
                obs: obs.iter().flat_map(|o| o.iter().copied()).collect(),
                action: labels.flatten(),
                source: Source::ExpertJoint,
                executed: None,
            });
            out.policies.act(obs)
        })
        .unwrap();
        matched.buffer_mut(AgentSlot::Joint).unwrap().append_episode(records).unwrap();
    }
    let gap = loss_gap(&env, &out.policies, &matched, &expert, Labeler::Joint, 2).unwrap();
    assert!(gap.train_loss > 0.0);
    assert!(gap.gap.abs() < 1e-12 * gap.train_loss.max(1.0), "{gap:?}");
}

#[test]
fn budget_accounting_scales_joint_episodes() {
    assert_eq!(BudgetAccounting::Episodes.episodes(Algorithm::Jbc, 3, 12), 12);
    assert_eq!(BudgetAccounting::AgentEpisodes.episodes(Algorithm::Jbc, 3, 12), 4);
    assert_eq!(BudgetAccounting::AgentEpisodes.episodes(Algorithm::R2bc, 3, 12), 12);
    assert_eq!(BudgetAccounting::AgentEpisodes.episodes(Algorithm::Dart, 3, 2), 1);
}

#[test]
fn sweep_grid_size() {
    let spec = SweepSpec { tasks: vec![TaskId::Navigation], ..SweepSpec::default() };
    assert_eq!(spec.cells().len() * spec.budgets.len(), 480);
}

#[test]
fn sweep_writes_sorted_reports_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let sweeper = Sweeper::new(tiny_spec(), dir.path(), 1).unwrap();
    assert_eq!(sweeper.pending().len(), 4);
    let results = sweeper.run::<f64>().unwrap();
    assert!(results.iter().all(|r| r.error.is_none()));
    assert!(sweeper.pending().is_empty());

    let curve = fs::read_to_string(dir.path().join("buzzwire/curve.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "task,algorithm,budget,seed,raw_return,normalized");
    assert_eq!(lines.len(), 1 + 2 * 2 * 2);
    let keys: Vec<(String, usize, u64)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].to_string(), f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    let gap_header = fs::read_to_string(dir.path().join("buzzwire/lossgap.csv")).unwrap();
    assert!(gap_header.starts_with("task,algorithm,budget,seed,train_loss,test_loss,gap\n"));
    assert!(dir.path().join("buzzwire/curve.svg").exists());

    // a rerun skips every cell and reproduces the same bytes
    let stamp = fs::metadata(dir.path().join("cells/buzzwire/r2bc/0.json")).unwrap().modified().unwrap();
    sweeper.run::<f64>().unwrap();
    assert_eq!(fs::metadata(dir.path().join("cells/buzzwire/r2bc/0.json")).unwrap().modified().unwrap(), stamp);
    assert_eq!(fs::read_to_string(dir.path().join("buzzwire/curve.csv")).unwrap(), curve);

    // a fresh directory, run in parallel, gives identical bytes
    let other = tempfile::tempdir().unwrap();
    Sweeper::new(tiny_spec(), other.path(), 2).unwrap().run::<f64>().unwrap();
    for f in ["curve.csv", "lossgap.csv", "summary.csv"] {
        assert_eq!(fs::read(dir.path().join("buzzwire").join(f)).unwrap(), fs::read(other.path().join("buzzwire").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn failed_cells_are_reported() {
    let spec = tiny_spec();
    let failed = CellResult { task: TaskId::Buzzwire, algorithm: Algorithm::Jbc, seed: 0, curve: vec![], gaps: vec![], error: Some("boom".into()), seconds: 0.0 };
    let rows = summarize(&spec, &[failed]);
    let jbc: Vec<_> = rows.iter().filter(|r| r.algorithm == Algorithm::Jbc).collect();
    assert!(jbc.iter().all(|r| r.failed == 1 && r.n == 0));
}

#[test]
fn invalid_sweeps_are_rejected() {
    let mut spec = tiny_spec();
    spec.budgets = vec![1];
    assert!(matches!(Sweeper::new(spec, "unused", 1), Err(SweepError::Spec(_))));
    let mut spec = tiny_spec();
    spec.seeds.clear();
    assert!(Sweeper::new(spec, "unused", 1).is_err());
}
