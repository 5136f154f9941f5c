use r2bc::algorithms::{run, AlgoConfig, Algorithm};
use r2bc::experts::ExpertPolicy;
use r2bc::policy::TrainConfig;
use r2bc::sim::{EnvConfig, TaskId};
use r2bc_teleop::protocol::ErrorCode;
use r2bc_teleop::{scripted_client_driver, serve_connection, DriverOptions, Mode, Session, SessionConfig, SessionSummary};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

type Served = JoinHandle<(Session<f64>, SessionSummary)>;

async fn start(session: Session<f64>) -> (String, Served) {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("ws://{}", listener.local_addr().unwrap());
    let handle = tokio::spawn(async move {
        let (stream, _) = listener.accept().await.unwrap();
        serve_connection(stream, session, None).await.unwrap()
    });
    (url, handle)
}

fn algo(algorithm: Algorithm, budget: usize, seed: u64) -> AlgoConfig {
    AlgoConfig { algorithm, demo_budget: budget, seed, train: TrainConfig { max_epochs: 3, ..TrainConfig::default() }, ..AlgoConfig::default() }
}

async fn sync_matches_run(algorithm: Algorithm, mode: Mode, sigma: f64) {
    let mut env = EnvConfig::for_task(TaskId::Navigation);
    env.horizon = 40;
    let mut expert = ExpertPolicy::with_defaults(env.clone());
    expert.noise_sigma = sigma;
    let cfg = algo(algorithm, 6, 7);
    let reference = run::<f64>(&env, &expert, &cfg, &[]).unwrap();

    let scfg = SessionConfig { mode, episodes: 6, sync: true, demonstrator_sigma: sigma, ..SessionConfig::default() };
    let session = Session::<f64>::new(scfg, env.clone(), cfg.clone(), None).unwrap();
    let (url, server) = start(session).await;
    let report = scripted_client_driver(&url, &expert, DriverOptions { run_seed: 7, ..Default::default() }).await.unwrap();
    let (session, summary) = server.await.unwrap();
    assert!(report.completed && summary.completed, "{report:?}");
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    assert_eq!(session.dataset().unwrap().to_jsonl().unwrap(), reference.dataset.to_jsonl().unwrap());
    assert_eq!(session.policies().unwrap(), &reference.policies);
}

#[tokio::test]
async fn sync_r2bc_reproduces_scripted_run_exactly() {
    sync_matches_run(Algorithm::R2bc, Mode::R2bcDemo, 0.0).await;
}

#[tokio::test]
async fn sync_r2bc_reproduces_noisy_run_exactly() {
    sync_matches_run(Algorithm::R2bc, Mode::R2bcDemo, 0.05).await;
}

#[tokio::test]
async fn sync_jbc_reproduces_scripted_run_exactly() {
    sync_matches_run(Algorithm::Jbc, Mode::JbcDemo, 0.05).await;
}

#[tokio::test]
async fn malformed_frames_get_errors_and_session_continues() {
    let mut env = EnvConfig::for_task(TaskId::Buzzwire);
    env.horizon = 10;
    let expert = ExpertPolicy::with_defaults(env.clone());
    let scfg = SessionConfig { episodes: 2, sync: true, ..SessionConfig::default() };
    let session = Session::<f64>::new(scfg, env, algo(Algorithm::R2bc, 2, 0), None).unwrap();
    let (url, server) = start(session).await;
    let opts = DriverOptions {
        extra_frames: vec!["{oops".into(), r#"{"type":"warp"}"#.into(), r#"{"type":"action","agent_id":0,"action":[2,0]}"#.into()],
        ..Default::default()
    };
    let report = scripted_client_driver(&url, &expert, opts).await.unwrap();
    let (_, summary) = server.await.unwrap();
    let codes: Vec<ErrorCode> = report.errors.iter().map(|e| e.0).collect();
    assert_eq!(codes, vec![ErrorCode::Malformed, ErrorCode::UnknownType, ErrorCode::BadAction]);
    assert!(summary.completed);
    assert_eq!(report.episodes_recorded, 2);
}

#[tokio::test]
async fn disconnect_discards_running_episode() {
    let mut env = EnvConfig::for_task(TaskId::Navigation);
    env.horizon = 20;
    let expert = ExpertPolicy::with_defaults(env.clone());
    let scfg = SessionConfig { episodes: 6, sync: true, ..SessionConfig::default() };
    let session = Session::<f64>::new(scfg, env, algo(Algorithm::R2bc, 6, 0), None).unwrap();
    let (url, server) = start(session).await;
    let opts = DriverOptions { disconnect_at: Some((1, 10)), ..Default::default() };
    let report = scripted_client_driver(&url, &expert, opts).await.unwrap();
    let (session, summary) = server.await.unwrap();
    assert_eq!(report.episodes_recorded, 1);
    assert!(!summary.completed);
    assert_eq!(summary.discarded, vec![1]);
    let sizes: Vec<usize> = session.dataset().unwrap().buffers.iter().map(|b| b.len()).collect();
    assert_eq!(sizes, vec![20, 0, 0]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn real_time_loop_holds_twenty_hertz() {
    let env = EnvConfig::for_task(TaskId::Navigation);
    assert_eq!(env.horizon, 150);
    let expert = ExpertPolicy::with_defaults(env.clone());
    let mut cfg = algo(Algorithm::R2bc, 3, 0);
    cfg.train.max_epochs = 1;
    let scfg = SessionConfig { episodes: 3, ..SessionConfig::default() };
    let session = Session::<f64>::new(scfg, env, cfg, None).unwrap();
    let (url, server) = start(session).await;
    let report = scripted_client_driver(&url, &expert, DriverOptions::default()).await.unwrap();
    let (_, summary) = server.await.unwrap();
    assert!(summary.completed);
    assert_eq!(summary.ticks, 450);
    for secs in &report.episode_secs {
        assert!((secs - 7.5).abs() <= 0.75, "episode took {secs:.3}s");
    }
}
