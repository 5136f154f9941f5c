//! Acceptance criteria 1-12. Runs as a plain binary so every verdict line
//! is printed whether or not it passes; exits non-zero if any fails.

use ndarray::Array2;
use r2bc::algorithms::{run, training_set, AlgoConfig, Algorithm, FitTarget, PolicySet};
use r2bc::demo::{AgentSlot, Dataset};
use r2bc::eval::{mean, spearman, summarize, CurveRow, GapRow, References, SweepSpec, Sweeper};
use r2bc::experts::ExpertPolicy;
use r2bc::geom::Vec2;
use r2bc::policy::{Minibatch, PolicyNet, TrainConfig};
use r2bc::rng::{stream_rng, Stream};
use r2bc::sim::{joint_observe, reset, step, AgentAction, AgentBody, EnvConfig, JointAction, TaskId, WorldState};
use r2bc_teleop::{scripted_client_driver, serve_connection, DriverOptions, Mode, Session, SessionConfig};
use rand::Rng;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn quick(algorithm: Algorithm, budget: usize, seed: u64) -> AlgoConfig {
    AlgoConfig { algorithm, demo_budget: budget, seed, train: TrainConfig { max_epochs: 1, ..TrainConfig::default() }, ..AlgoConfig::default() }
}

fn with_expert(task: TaskId) -> (EnvConfig, ExpertPolicy) {
    let env = EnvConfig::for_task(task);
    let expert = ExpertPolicy::with_defaults(env.clone());
    (env, expert)
}

/// Criterion 1: Analytic gradients of 100 random nets against central differences.
fn gradient_check() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let mut rng = stream_rng(1000 + i, Stream::WeightInit, 7);
        let mut sizes = vec![rng.gen_range(1..=6)];
        for _ in 0..rng.gen_range(1..=3) {
            sizes.push(rng.gen_range(1..=8));
        }
        sizes.push(rng.gen_range(1..=4));
        let (input, output) = (sizes[0], *sizes.last().unwrap());
        let net = PolicyNet::<f64>::new(&sizes, rng.gen_range(0.5..1.5), i).map_err(|e| e.to_string())?;
        let rows = rng.gen_range(1..=10);
        let obs = Array2::from_shape_simple_fn((rows, input), || rng.gen_range(-2.0..2.0));
        let act = Array2::from_shape_simple_fn((rows, output), || rng.gen_range(-1.0..1.0));
        let batch = Minibatch::new(obs, act).map_err(|e| e.to_string())?;
        let (_, grad) = net.gradient(&batch).map_err(|e| e.to_string())?;
        let theta = net.params();
        let mut probe = net.clone();
        let h = 1e-5;
        for (j, analytic) in grad.flat().into_iter().enumerate() {
            let mut p = theta.clone();
            p[j] += h;
            probe.set_params(&p).unwrap();
            let up = probe.loss(&batch).unwrap();
            p[j] = theta[j] - h;
            probe.set_params(&p).unwrap();
            let down = probe.loss(&batch).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs());
            // relative error is meaningless where both vanish to round-off
            if scale > 1e-7 {
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-4 && secs < 10.0, format!("max relative error {worst:.2e}, {secs:.2}s"))
}

fn collect_into(dir: &Path) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_r2bc"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("R2BC_")) {
        cmd.env_remove(k);
    }
    let out = cmd
        .args(["collect", "--algo", "r2bc", "--task", "navigation", "--budget", "24", "--seed", "0", "--jobs", "1", "--out", "run"])
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(())
}

fn files_under(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Criterion 2: Two identical collect invocations give byte-identical outputs.
fn determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    collect_into(a.path())?;
    collect_into(b.path())?;
    let (fa, fb) = (files_under(&a.path().join("run")), files_under(&b.path().join("run")));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    let needed = ["dataset.jsonl", "episodes.jsonl", "fits.jsonl", "policies/agent_0.policy"];
    let complete = needed.iter().all(|n| names.contains(n));
    check(complete && fa == fb, format!("{} files compared, identical: {}", fa.len(), fa == fb))
}

/// Criterion 3: Round-robin episode counts never differ by more than one, and each
/// buffer holds exactly C*T transitions after C full cycles.
fn fairness() -> Verdict {
    let mut notes = Vec::new();
    for task in [TaskId::Navigation, TaskId::Buzzwire, TaskId::Transport] {
        let (env, expert) = with_expert(task);
        let n = env.n_agents;
        let budget = 5 * n + 1;
        let out = run::<f32>(&env, &expert, &quick(Algorithm::R2bc, budget, 3), &[]).map_err(|e| e.to_string())?;
        let mut counts = vec![0usize; n];
        for (e, log) in out.log.episodes.iter().enumerate() {
            counts[log.demo_agent.ok_or("missing demo agent")?] += 1;
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            if spread > 1 {
                return Err(format!("{task}: spread {spread} after episode {e}"));
            }
            if (e + 1) % n == 0 {
                let c = (e + 1) / n;
                if log.buffer_sizes.iter().any(|&s| s != c * env.horizon as usize) {
                    return Err(format!("{task}: buffers {:?} after {c} cycles", log.buffer_sizes));
                }
            }
        }
        let stored: Vec<usize> = (0..n).map(|i| out.dataset.buffer(AgentSlot::Agent(i)).map_or(0, |b| b.episode_count())).collect();
        if stored != counts {
            return Err(format!("{task}: stored episodes {stored:?} vs log {counts:?}"));
        }
        notes.push(format!("{task} {counts:?}"));
    }
    Ok(notes.join(", "))
}

fn episode_return(env: &EnvConfig, seed: u64, mut act: impl FnMut(&WorldState) -> JointAction) -> f64 {
    let mut s = reset(env, seed).unwrap();
    let mut total = 0.0;
    loop {
        let out = step(&s, &act(&s), env).unwrap();
        total += out.reward;
        s = out.state;
        if out.done {
            return total;
        }
    }
}

/// Criterion 4: Normalization maps the expert and random references to exactly 1 and 0.
fn normalization() -> Verdict {
    let mut notes = Vec::new();
    for task in TaskId::ALL {
        let (env, expert) = with_expert(task);
        let refs = References::measure(&env, &expert, 50).map_err(|e| e.to_string())?;
        // references re-derived from plain rollouts
        let experts: Vec<f64> = (0..50).map(|seed| episode_return(&env, seed, |s| expert.clean_joint(&joint_observe(s, &env)).unwrap())).collect();
        let randoms: Vec<f64> = (0..50)
            .map(|seed| {
                let mut rng = stream_rng(seed, Stream::EvalController, 0);
                episode_return(&env, seed, |_| {
                    JointAction::new((0..env.n_agents).map(|_| AgentAction::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))).collect())
                })
            })
            .collect();
        let (e, r) = (mean(&experts), mean(&randoms));
        let (one, zero) = (refs.normalize(e).map_err(|x| x.to_string())?, refs.normalize(r).map_err(|x| x.to_string())?);
        if one != 1.0 || zero != 0.0 || e != refs.expert || r != refs.random {
            return Err(format!("{task}: expert {e} -> {one}, random {r} -> {zero}"));
        }
        notes.push(format!("{task} [{r:.2}, {e:.2}]"));
    }
    Ok(notes.join(", "))
}

fn package_travel(pushers: &[f64]) -> f64 {
    let env = EnvConfig::for_task(TaskId::Transport);
    let mut s = reset(&env, 11).unwrap();
    s.objects[0].pos = Vec2::ZERO;
    s.objects[1].pos = Vec2::new(0.8, 0.8);
    let contact = env.params.package_radius + env.physics.agent_radius;
    let parked = [Vec2::new(-0.9, 0.9), Vec2::new(-0.9, -0.9), Vec2::new(0.9, -0.9)];
    for (i, agent) in s.agents.iter_mut().enumerate() {
        *agent = match pushers.get(i) {
            Some(&angle) => AgentBody::at(Vec2::new(-contact * angle.cos(), contact * angle.sin())),
            None => AgentBody::at(parked[i]),
        };
    }
    let start = s.objects[0].pos;
    let push = JointAction::new((0..env.n_agents).map(|i| if i < pushers.len() { AgentAction::new(1.0, 0.0) } else { AgentAction::new(0.0, 0.0) }).collect());
    for _ in 0..50 {
        s = step(&s, &push, &env).unwrap().state;
    }
    (s.objects[0].pos - start).norm()
}

/// Criterion 5: One agent cannot move the package; three aligned agents can.
fn transport_gate() -> Verdict {
    let alone = package_travel(&[0.0]);
    let together = package_travel(&[-0.6, 0.0, 0.6]);
    check(alone == 0.0 && together > 0.1, format!("single push {alone} m, three agents {together:.3} m"))
}

struct NavSweep {
    curve: Vec<CurveRow>,
    gaps: Vec<GapRow>,
    summary: String,
    failed: usize,
    secs: f64,
    jobs: usize,
}

fn navigation_sweep() -> Result<NavSweep, String> {
    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec { algorithms: vec![Algorithm::R2bc, Algorithm::Jbc], ..SweepSpec::default() };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let start = Instant::now();
    let results = Sweeper::new(spec.clone(), dir.path(), jobs).map_err(|e| e.to_string())?.run::<f32>().map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let rows = summarize(&spec, &results);
    let summary = rows
        .iter()
        .map(|r| format!("{}@{} {:.4}+-{:.4} gap {:.5}", r.algorithm, r.budget, r.mean_normalized, r.ci99, r.mean_gap))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(NavSweep {
        curve: results.iter().flat_map(|c| c.curve.clone()).collect(),
        gaps: results.iter().flat_map(|c| c.gaps.clone()).collect(),
        summary,
        failed: results.iter().filter(|c| c.error.is_some()).count(),
        secs,
        jobs,
    })
}

fn mean_where<T>(rows: &[T], keep: impl Fn(&T) -> bool, value: impl Fn(&T) -> f64) -> f64 {
    mean(&rows.iter().filter(|r| keep(r)).map(value).collect::<Vec<_>>())
}

/// Criterion 6: R2BC matches JBC at the top budget and improves with budget.
fn navigation_curve(s: &NavSweep) -> Verdict {
    let score = |a: Algorithm, b: usize| mean_where(&s.curve, |r| r.algorithm == a && r.budget == b, |r| r.normalized);
    let budgets = SweepSpec::default().budgets;
    let (r2bc, jbc) = (score(Algorithm::R2bc, 240), score(Algorithm::Jbc, 240));
    let xs: Vec<f64> = budgets.iter().map(|&b| b as f64).collect();
    let curve: Vec<f64> = budgets.iter().map(|&b| score(Algorithm::R2bc, b)).collect();
    let rho = spearman(&xs, &curve).unwrap_or(f64::NAN);
    let (a, b) = (r2bc >= jbc - 0.10, rho > 0.0);
    check(
        s.failed == 0 && a && b,
        format!(
            "(a) r2bc@240 {r2bc:.4} vs jbc@240 {jbc:.4}: {}; (b) spearman {rho:.3}: {}; {} jobs, {:.0}s; {}",
            if a { "ok" } else { "fail" },
            if b { "ok" } else { "fail" },
            s.jobs,
            s.secs,
            s.summary
        ),
    )
}

/// Criterion 7: R2BC's loss gap at budget 96 is below JBC's.
fn loss_gap(s: &NavSweep) -> Verdict {
    let gap = |a: Algorithm| mean_where(&s.gaps, |r| r.algorithm == a && r.budget == 96, |r| r.gap);
    let (r2bc, jbc) = (gap(Algorithm::R2bc), gap(Algorithm::Jbc));
    check(s.failed == 0 && r2bc < jbc, format!("mean gap at 96: r2bc {r2bc:.5}, jbc {jbc:.5}"))
}

fn payload(ds: &Dataset) -> Vec<(u64, u32, Vec<f64>, Vec<f64>)> {
    ds.buffers.iter().flat_map(|b| b.records().iter().map(|r| (r.episode_id, r.t, r.obs.clone(), r.action.clone()))).collect()
}

/// Criterion 8: DART without noise collects JBC's data; with noise the injected
/// perturbation has the configured spread.
fn dart() -> Verdict {
    let (env, expert) = with_expert(TaskId::Navigation);
    let jbc = run::<f32>(&env, &expert, &quick(Algorithm::Jbc, 6, 4), &[]).map_err(|e| e.to_string())?;
    let silent = run::<f32>(&env, &expert, &AlgoConfig { dart_sigma: 0.0, ..quick(Algorithm::Dart, 6, 4) }, &[]).map_err(|e| e.to_string())?;
    let same = payload(&jbc.dataset) == payload(&silent.dataset) && jbc.dataset.header.layout == silent.dataset.header.layout;
    let noisy = run::<f32>(&env, &expert, &AlgoConfig { dart_sigma: 0.1, ..quick(Algorithm::Dart, 112, 0) }, &[]).map_err(|e| e.to_string())?;
    let stats = noisy.injected_noise.ok_or("no noise statistics")?;
    let std = stats.std();
    check(
        same && stats.count >= 100_000 && (std - 0.1).abs() <= 0.005,
        format!("sigma 0 matches jbc: {same}; sigma 0.1 std {std:.5} over {} samples", stats.count),
    )
}

/// Criterion 9: In the centralized variant each output head only learns from its own
/// agent's records.
fn centralized_mask() -> Verdict {
    let mut env = EnvConfig::for_task(TaskId::Navigation);
    env.horizon = 5;
    let expert = ExpertPolicy::with_defaults(env.clone());
    let out = run::<f64>(&env, &expert, &quick(Algorithm::CentralizedR2bc, 3, 1), &[]).map_err(|e| e.to_string())?;
    let PolicySet::Centralized(net) = &out.policies else { return Err("expected a centralized network".into()) };
    let batch = training_set::<f64>(&out.dataset, FitTarget::Centralized).map_err(|e| e.to_string())?.ok_or("empty training set")?;
    let mask = batch.mask.clone().ok_or("centralized batch without mask")?;
    let last = net.weights().len() - 1;
    for row in 0..batch.len() {
        let (_, g) = net.gradient(&batch.select(&[row])).map_err(|e| e.to_string())?;
        let own: Vec<usize> = (0..mask.ncols()).filter(|&c| mask[[row, c]] == 1.0).collect();
        if own.len() != 2 {
            return Err(format!("row {row} masks {own:?}"));
        }
        for c in 0..mask.ncols() {
            let column = g.weights[last].column(c);
            let silent = column.iter().all(|&v| v == 0.0) && g.biases[last][c] == 0.0;
            if own.contains(&c) == silent {
                return Err(format!("row {row}: head column {c} silent = {silent}"));
            }
        }
    }
    Ok(format!("{} records, each touching only its own head", batch.len()))
}

/// Criterion 10: Both offline ablations run end to end on every task.
fn offline_ablations() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec {
        tasks: TaskId::ALL.to_vec(),
        algorithms: vec![Algorithm::OfflineR2bcNoop, Algorithm::OfflineR2bcRandom],
        budgets: vec![6, 12],
        seeds: vec![0, 1],
        eval_seeds: 10,
        base: AlgoConfig { train: TrainConfig { max_epochs: 50, ..TrainConfig::default() }, ..AlgoConfig::default() },
        ..SweepSpec::default()
    };
    let results = Sweeper::new(spec.clone(), dir.path(), 1).map_err(|e| e.to_string())?.run::<f32>().map_err(|e| e.to_string())?;
    if let Some(bad) = results.iter().find(|c| c.error.is_some()) {
        return Err(format!("{}/{}: {:?}", bad.task, bad.algorithm, bad.error));
    }
    let rows = summarize(&spec, &results);
    let finite = rows.iter().all(|r| r.n == 2 && r.failed == 0 && r.mean_normalized.is_finite() && r.mean_gap.is_finite());
    let reports = TaskId::ALL
        .iter()
        .all(|t| ["curve.csv", "lossgap.csv", "summary.csv", "curve.svg"].iter().all(|f| dir.path().join(t.as_str()).join(f).exists()));
    check(finite && reports && rows.len() == 16, format!("{} summary rows, finite: {finite}, reports: {reports}", rows.len()))
}

/// Criterion 11: A scripted client driving the synchronous server reproduces run().
fn protocol_oracle() -> Verdict {
    let (env, expert) = with_expert(TaskId::Navigation);
    let cfg = AlgoConfig { algorithm: Algorithm::R2bc, demo_budget: 6, seed: 5, ..AlgoConfig::default() };
    let reference = run::<f64>(&env, &expert, &cfg, &[]).map_err(|e| e.to_string())?;
    let scfg = SessionConfig { mode: Mode::R2bcDemo, episodes: 6, sync: true, demonstrator_sigma: expert.noise_sigma, ..SessionConfig::default() };
    let session = Session::<f64>::new(scfg, env, cfg, None).map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let (session, report) = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let url = format!("ws://{}", listener.local_addr().unwrap());
        let server = tokio::spawn(async move {
            let (stream, _) = listener.accept().await.unwrap();
            serve_connection(stream, session, None).await
        });
        let report = scripted_client_driver(&url, &expert, DriverOptions { run_seed: 5, ..Default::default() }).await;
        (server.await, report)
    });
    let (session, _) = session.map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
    let report = report.map_err(|e| e.to_string())?;
    let data = session.dataset().ok_or("no dataset")?.to_jsonl().map_err(|e| e.to_string())? == reference.dataset.to_jsonl().map_err(|e| e.to_string())?;
    let nets = session.policies() == Some(&reference.policies);
    check(
        report.completed && report.errors.is_empty() && data && nets,
        format!("{} episodes, dataset identical: {data}, policies identical: {nets}", report.episodes_recorded),
    )
}

/// Criterion 12: Datasets of every algorithm round-trip; damaged files fail with
/// distinct errors.
fn dataset_round_trip() -> Verdict {
    let mut env = EnvConfig::for_task(TaskId::Balance);
    env.horizon = 20;
    let expert = ExpertPolicy::with_defaults(env.clone());
    let dir = tempfile::tempdir().unwrap();
    for algorithm in Algorithm::ALL {
        let out = run::<f32>(&env, &expert, &quick(algorithm, 6, 2), &[]).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("{algorithm}.jsonl"));
        out.dataset.save(&path).map_err(|e| e.to_string())?;
        let back = Dataset::load(&path).map_err(|e| e.to_string())?;
        if back != out.dataset || back.to_jsonl().unwrap().as_bytes() != std::fs::read(&path).unwrap() {
            return Err(format!("{algorithm}: round trip differs"));
        }
    }
    let text = std::fs::read_to_string(dir.path().join("r2bc.jsonl")).unwrap();
    let code = |t: &str| Dataset::from_jsonl(t).map(|_| ()).unwrap_err().code();
    let truncated = code(&text[..text.len() / 2]);
    let version = code(&text.replacen("\"schema_version\":1", "\"schema_version\":99", 1));
    let dims = code(&text.replacen("\"action\":[", "\"action\":[0.5,", 1));
    let missing = Dataset::load(&dir.path().join("absent.jsonl")).unwrap_err().code();
    let codes = [truncated, version, dims, missing];
    let distinct = codes.iter().enumerate().all(|(i, a)| codes[..i].iter().all(|b| a != b));
    check(distinct && truncated == "corrupt", format!("{} algorithms round-trip; errors {codes:?}", Algorithm::ALL.len()))
}

fn main() {
    // numeric arguments select a subset, e.g. `cargo test --test acceptance -- 5 9`
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| only.is_empty() || only.contains(&n);
    let started = Instant::now();
    let mut verdicts: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut report = |n: u32, name: &'static str, v: &dyn Fn() -> Verdict| {
        if !wanted(n) {
            return;
        }
        let v = v();
        match &v {
            Ok(d) => println!("criterion {n:>2} PASS {name}: {d}"),
            Err(d) => println!("criterion {n:>2} FAIL {name}: {d}"),
        }
        verdicts.push((n, name, v));
    };
    report(1, "gradient check", &gradient_check);
    report(2, "determinism", &determinism);
    report(3, "round-robin fairness", &fairness);
    report(4, "normalization endpoints", &normalization);
    report(5, "transport gate", &transport_gate);
    if wanted(6) || wanted(7) {
        let sweep = navigation_sweep();
        report(6, "navigation curve", &|| sweep.as_ref().map_err(Clone::clone).and_then(navigation_curve));
        report(7, "loss gap", &|| sweep.as_ref().map_err(Clone::clone).and_then(loss_gap));
    }
    report(8, "dart", &dart);
    report(9, "centralized mask", &centralized_mask);
    report(10, "offline ablations", &offline_ablations);
    report(11, "protocol oracle", &protocol_oracle);
    report(12, "dataset round trip", &dataset_round_trip);
    let failed: Vec<u32> = verdicts.iter().filter(|(_, _, v)| v.is_err()).map(|(n, _, _)| *n).collect();
    println!("acceptance: {} of {} passed in {:.0}s", verdicts.len() - failed.len(), verdicts.len(), started.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
