use super::{ci99_half_width, mean, rollouts, EvalError, Labeler, References};
use crate::algorithms::{run, AlgoConfig, AlgoError, Algorithm};
use crate::experts::ExpertPolicy;
use crate::policy::Scalar;
use crate::sim::{EnvConfig, TaskId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error at {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("invalid sweep: {0}")]
    Spec(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SweepError + '_ {
    move |e| SweepError::Io { path: path.to_path_buf(), msg: e.to_string() }
}

/// How a budget translates into joint episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetAccounting {
    /// One demonstrated episode is one episode, single-agent or joint.
    #[default]
    Episodes,
    /// A joint episode costs `N` single-agent episodes.
    AgentEpisodes,
}

impl BudgetAccounting {
    /// Episodes an algorithm actually collects for a nominal budget.
    pub fn episodes(self, algorithm: Algorithm, n_agents: usize, budget: usize) -> usize {
        match self {
            BudgetAccounting::AgentEpisodes if !algorithm.is_round_robin() => (budget / n_agents).max(1),
            _ => budget,
        }
    }
}

/// A grid of (task, algorithm, seed) cells evaluated at several budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub tasks: Vec<TaskId>,
    pub algorithms: Vec<Algorithm>,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub eval_seeds: usize,
    pub accounting: BudgetAccounting,
    /// Settings shared by every cell; algorithm, budget and seed are
    /// overwritten per cell.
    pub base: AlgoConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            tasks: vec![TaskId::Navigation],
            algorithms: Algorithm::ALL.to_vec(),
            budgets: vec![12, 24, 48, 96, 192, 240],
            seeds: (0..10).collect(),
            eval_seeds: super::DEFAULT_EVAL_SEEDS,
            accounting: BudgetAccounting::Episodes,
            base: AlgoConfig::default(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.tasks.is_empty() || self.algorithms.is_empty() || self.budgets.is_empty() || self.seeds.is_empty() {
            return Err(SweepError::Spec("tasks, algorithms, budgets and seeds must be non-empty".into()));
        }
        if self.eval_seeds == 0 {
            return Err(SweepError::Spec("eval_seeds must be >= 1".into()));
        }
        for task in &self.tasks {
            let n = task.default_agents();
            for algo in &self.algorithms {
                let mut cfg = self.base.clone();
                cfg.algorithm = *algo;
                cfg.demo_budget = self.budgets.iter().map(|b| self.accounting.episodes(*algo, n, *b)).min().unwrap_or(0);
                cfg.validate(n).map_err(|e| SweepError::Spec(format!("{task}/{algo}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &task in &self.tasks {
            for &algorithm in &self.algorithms {
                for &seed in &self.seeds {
                    cells.push(Cell { task, algorithm, seed });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cell {
    pub task: TaskId,
    pub algorithm: Algorithm,
    pub seed: u64,
}

impl Cell {
    fn file(&self, root: &Path) -> PathBuf {
        root.join("cells").join(self.task.as_str()).join(self.algorithm.as_str()).join(format!("{}.json", self.seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub task: TaskId,
    pub algorithm: Algorithm,
    pub budget: usize,
    pub seed: u64,
    pub raw_return: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub task: TaskId,
    pub algorithm: Algorithm,
    pub budget: usize,
    pub seed: u64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub gap: f64,
}

/// Stored outcome of one cell, written once it completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub task: TaskId,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub curve: Vec<CurveRow>,
    pub gaps: Vec<GapRow>,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task: TaskId,
    pub algorithm: Algorithm,
    pub budget: usize,
    pub n: usize,
    pub mean_normalized: f64,
    pub ci99: f64,
    pub mean_raw: f64,
    pub mean_gap: f64,
    pub failed: usize,
}

/// Runs a sweep into an output directory. Finished cells are stored one
/// file each and skipped on a rerun.
pub struct Sweeper {
    pub spec: SweepSpec,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl Sweeper {
    pub fn new(spec: SweepSpec, out_dir: impl Into<PathBuf>, jobs: usize) -> Result<Self, SweepError> {
        spec.validate()?;
        Ok(Self { spec, out_dir: out_dir.into(), jobs: jobs.max(1) })
    }

    /// Cells whose result file is missing.
    pub fn pending(&self) -> Vec<Cell> {
        self.spec.cells().into_iter().filter(|c| !c.file(&self.out_dir).exists()).collect()
    }

    /// Runs every pending cell, then rewrites the reports from all cell files.
    pub fn run<S: Scalar>(&self) -> Result<Vec<CellResult>, SweepError> {
        let mut refs = BTreeMap::new();
        for &task in &self.spec.tasks {
            let env = EnvConfig::for_task(task);
            let expert = ExpertPolicy::with_defaults(env.clone());
            refs.insert(task, References::measure(&env, &expert, self.spec.eval_seeds)?);
        }
        let pending = self.pending();
        let run_cell = |cell: &Cell| -> Result<(), SweepError> {
            let result = self.run_cell::<S>(*cell, refs[&cell.task]);
            let path = cell.file(&self.out_dir);
            fs::create_dir_all(path.parent().expect("cell path has parent")).map_err(io_err(&path))?;
            let text = serde_json::to_string(&result).map_err(|e| SweepError::Csv(e.to_string()))?;
            let tmp = path.with_extension("json.tmp");
            fs::write(&tmp, text).map_err(io_err(&tmp))?;
            fs::rename(&tmp, &path).map_err(io_err(&path))
        };
        if self.jobs == 1 {
            pending.iter().try_for_each(run_cell)?;
        } else {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build().map_err(|e| SweepError::Spec(e.to_string()))?;
            pool.install(|| pending.par_iter().try_for_each(run_cell))?;
        }
        let results = self.load_cells()?;
        self.write_reports(&results, &refs)?;
        Ok(results)
    }

    fn run_cell<S: Scalar>(&self, cell: Cell, refs: References) -> CellResult {
        let start = Instant::now();
        let mut result = CellResult { task: cell.task, algorithm: cell.algorithm, seed: cell.seed, curve: vec![], gaps: vec![], error: None, seconds: 0.0 };
        if let Err(e) = self.fill_cell::<S>(cell, refs, &mut result) {
            result.error = Some(e.to_string());
        }
        result.seconds = start.elapsed().as_secs_f64();
        result
    }

    fn fill_cell<S: Scalar>(&self, cell: Cell, refs: References, result: &mut CellResult) -> Result<(), EvalError> {
        let env = EnvConfig::for_task(cell.task);
        let expert = ExpertPolicy::with_defaults(env.clone());
        let n = env.n_agents;
        let marks: Vec<usize> = self.spec.budgets.iter().map(|&b| self.spec.accounting.episodes(cell.algorithm, n, b)).collect();
        let mut cfg = self.spec.base.clone();
        cfg.algorithm = cell.algorithm;
        cfg.seed = cell.seed;
        cfg.demo_budget = *marks.iter().max().expect("non-empty budgets");
        let out = run::<S>(&env, &expert, &cfg, &marks).map_err(EvalError::from)?;
        let labeler = if cell.algorithm.is_round_robin() { Labeler::Single } else { Labeler::Joint };
        for (&budget, &episodes) in self.spec.budgets.iter().zip(&marks) {
            let snap = out
                .snapshots
                .iter()
                .find(|s| s.budget == episodes)
                .ok_or_else(|| EvalError::Algo(AlgoError::Config(format!("missing snapshot at {episodes}"))))?;
            let r = rollouts(&env, &snap.policies, &expert, labeler, self.spec.eval_seeds)?;
            let raw = r.returns.mean();
            result.curve.push(CurveRow { task: cell.task, algorithm: cell.algorithm, budget, seed: cell.seed, raw_return: raw, normalized: refs.normalize(raw)? });
            result.gaps.push(GapRow {
                task: cell.task,
                algorithm: cell.algorithm,
                budget,
                seed: cell.seed,
                train_loss: snap.train_loss,
                test_loss: r.test_loss,
                gap: r.test_loss - snap.train_loss,
            });
        }
        Ok(())
    }

    /// Results of every cell of the grid that has a stored file.
    pub fn load_cells(&self) -> Result<Vec<CellResult>, SweepError> {
        let mut out = Vec::new();
        for cell in self.spec.cells() {
            let path = cell.file(&self.out_dir);
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            out.push(serde_json::from_str(&text).map_err(|e| SweepError::Io { path: path.clone(), msg: e.to_string() })?);
        }
        Ok(out)
    }

    fn write_reports(&self, results: &[CellResult], refs: &BTreeMap<TaskId, References>) -> Result<(), SweepError> {
        let mut curve: Vec<&CurveRow> = results.iter().flat_map(|r| &r.curve).collect();
        let mut gaps: Vec<&GapRow> = results.iter().flat_map(|r| &r.gaps).collect();
        curve.sort_by(|a, b| (a.task.as_str(), a.algorithm.as_str(), a.budget, a.seed).cmp(&(b.task.as_str(), b.algorithm.as_str(), b.budget, b.seed)));
        gaps.sort_by(|a, b| (a.task.as_str(), a.algorithm.as_str(), a.budget, a.seed).cmp(&(b.task.as_str(), b.algorithm.as_str(), b.budget, b.seed)));
        let summary = summarize(&self.spec, results);
        for &task in &self.spec.tasks {
            let dir = self.out_dir.join(task.as_str());
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            write_csv(&dir.join("curve.csv"), curve.iter().filter(|r| r.task == task))?;
            write_csv(&dir.join("lossgap.csv"), gaps.iter().filter(|r| r.task == task))?;
            let rows: Vec<&SummaryRow> = summary.iter().filter(|r| r.task == task).collect();
            write_csv(&dir.join("summary.csv"), rows.iter())?;
            let svg = dir.join("curve.svg");
            fs::write(&svg, render_svg(task, &rows)).map_err(io_err(&svg))?;
        }
        let failures: Vec<_> = results.iter().filter(|r| r.error.is_some()).collect();
        let mut text = String::from("task,algorithm,seed,error\n");
        for f in failures {
            let _ = writeln!(text, "{},{},{},\"{}\"", f.task, f.algorithm, f.seed, f.error.as_deref().unwrap_or("").replace('"', "'"));
        }
        let path = self.out_dir.join("failures.csv");
        fs::write(&path, text).map_err(io_err(&path))?;
        let path = self.out_dir.join("references.json");
        let refs: BTreeMap<&str, References> = refs.iter().map(|(t, r)| (t.as_str(), *r)).collect();
        fs::write(&path, serde_json::to_string_pretty(&refs).map_err(|e| SweepError::Csv(e.to_string()))?).map_err(io_err(&path))
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| SweepError::Csv(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| SweepError::Csv(e.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

/// Mean and 99% interval per (task, algorithm, budget); failed cells are
/// counted, not dropped.
pub fn summarize(spec: &SweepSpec, results: &[CellResult]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &task in &spec.tasks {
        for &algorithm in &spec.algorithms {
            let cells: Vec<&CellResult> = results.iter().filter(|r| r.task == task && r.algorithm == algorithm).collect();
            let failed = cells.iter().filter(|r| r.error.is_some()).count();
            for &budget in &spec.budgets {
                let norm: Vec<f64> = cells.iter().flat_map(|c| &c.curve).filter(|r| r.budget == budget).map(|r| r.normalized).collect();
                let raw: Vec<f64> = cells.iter().flat_map(|c| &c.curve).filter(|r| r.budget == budget).map(|r| r.raw_return).collect();
                let gap: Vec<f64> = cells.iter().flat_map(|c| &c.gaps).filter(|r| r.budget == budget).map(|r| r.gap).collect();
                rows.push(SummaryRow {
                    task,
                    algorithm,
                    budget,
                    n: norm.len(),
                    mean_normalized: mean(&norm),
                    ci99: ci99_half_width(&norm),
                    mean_raw: mean(&raw),
                    mean_gap: mean(&gap),
                    failed,
                });
            }
        }
    }
    rows
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Mean normalized score against budget, one line per algorithm, clipped
/// to [-0.2, 1.2] for display.
pub fn render_svg(task: TaskId, rows: &[&SummaryRow]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let max_b = rows.iter().map(|r| r.budget).max().unwrap_or(1) as f64;
    let x = |b: usize| pad + (w - 2.0 * pad) * b as f64 / max_b;
    let y = |s: f64| {
        let s = if s.is_finite() { s.clamp(-0.2, 1.2) } else { -0.2 };
        h - pad - (h - 2.0 * pad) * (s + 0.2) / 1.4
    };
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n");
    let _ = writeln!(svg, "<text x=\"{pad}\" y=\"20\" font-size=\"14\">{task}</text>");
    for level in [0.0, 1.0] {
        let _ = writeln!(svg, "<line x1=\"{pad}\" x2=\"{}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"#ccc\"/>", w - pad, y(level), y(level));
        let _ = writeln!(svg, "<text x=\"10\" y=\"{:.1}\">{level:.1}</text>", y(level) + 4.0);
    }
    let mut algos: Vec<Algorithm> = rows.iter().map(|r| r.algorithm).collect();
    algos.dedup();
    for (k, algo) in algos.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = rows.iter().filter(|r| r.algorithm == *algo && r.n > 0).map(|r| format!("{:.1},{:.1}", x(r.budget), y(r.mean_normalized))).collect();
        let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>", pts.join(" "));
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{algo}</text>", w - pad - 100.0, pad + 14.0 * k as f64);
    }
    for b in rows.iter().map(|r| r.budget).collect::<std::collections::BTreeSet<_>>() {
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{b}</text>", x(b), h - pad + 16.0);
    }
    svg.push_str("</svg>\n");
    svg
}
