//! Demonstration buffers and the JSON Lines dataset format.
//!
//! A dataset file is one header line, one line per transition and a footer
//! carrying the record count:
//!
//! ```text
//! {"kind":"header","schema_version":1,"task":"navigation","layout":"per_agent",...}
//! {"kind":"record","episode_id":0,"agent":0,"t":0,"obs":[...],"action":[...],"source":"expert_single"}
//! ...
//! {"kind":"footer","records":450}
//! ```
//!
//! Floats are written in shortest round-trip form, so loading a saved
//! dataset reproduces every value bit for bit. A file without its footer is
//! reported as corrupt rather than partially loaded.

use crate::sim::TaskId;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DATASET_SCHEMA: u32 = 1;

/// Which code path produced a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    ExpertSingle,
    ExpertJoint,
    DaggerLabel,
    DartIntended,
    HumanTeleop,
}

/// Owner of a record: one agent, or all agents at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentSlot {
    Agent(usize),
    Joint,
}

impl fmt::Display for AgentSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentSlot::Agent(i) => write!(f, "{i}"),
            AgentSlot::Joint => f.write_str("JOINT"),
        }
    }
}

impl Serialize for AgentSlot {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            AgentSlot::Agent(i) => s.serialize_u64(*i as u64),
            AgentSlot::Joint => s.serialize_str("JOINT"),
        }
    }
}

impl<'de> Deserialize<'de> for AgentSlot {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(AgentSlot::Agent(i)),
            Raw::Tag(t) if t == "JOINT" => Ok(AgentSlot::Joint),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!("unknown agent slot {t:?}"))),
        }
    }
}

/// How observations and actions of a dataset are shaped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Local observation and action of one agent per record.
    PerAgent,
    /// Concatenated observations and actions of all agents, in agent order.
    Joint,
    /// Concatenated observations of all agents; action of the one agent
    /// named by the record.
    Centralized,
}

impl Layout {
    /// `(obs_len, action_len)` of a record.
    pub fn record_dims(self, n_agents: usize, obs_dim: usize, act_dim: usize) -> (usize, usize) {
        match self {
            Layout::PerAgent => (obs_dim, act_dim),
            Layout::Joint => (n_agents * obs_dim, n_agents * act_dim),
            Layout::Centralized => (n_agents * obs_dim, act_dim),
        }
    }

    pub fn slots(self, n_agents: usize) -> Vec<AgentSlot> {
        match self {
            Layout::Joint => vec![AgentSlot::Joint],
            _ => (0..n_agents).map(AgentSlot::Agent).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    pub episode_id: u64,
    pub agent: AgentSlot,
    pub t: u32,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub source: Source,
    /// Action actually executed when it differs in kind from the label
    /// (DART stores the perturbed command here).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executed: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub task: TaskId,
    pub n_agents: usize,
    /// Per-agent observation and action widths.
    pub obs_dim: usize,
    pub act_dim: usize,
    pub horizon: u32,
    pub expert_sigma: f64,
    pub seed: u64,
    pub algorithm: String,
    pub layout: Layout,
}

impl DatasetHeader {
    pub fn record_dims(&self) -> (usize, usize) {
        self.layout.record_dims(self.n_agents, self.obs_dim, self.act_dim)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("dataset i/o: {0}")]
    Io(String),
    #[error("dataset schema version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("corrupt dataset at line {line}: {msg}")]
    Corrupt { line: usize, msg: String },
    #[error("record for agent {got} appended to buffer of agent {expected}")]
    AgentMismatch { expected: AgentSlot, got: AgentSlot },
    #[error("episode id {got} after {last}; buffers are append-only in episode order")]
    EpisodeOrder { last: u64, got: u64 },
    #[error("record holds non-finite values")]
    NonFinite,
}

impl DatasetError {
    /// Stable short code per error kind.
    pub fn code(&self) -> &'static str {
        match self {
            DatasetError::Io(_) => "io",
            DatasetError::Version { .. } => "version",
            DatasetError::DimMismatch(_) => "dim_mismatch",
            DatasetError::Corrupt { .. } => "corrupt",
            DatasetError::AgentMismatch { .. } => "agent_mismatch",
            DatasetError::EpisodeOrder { .. } => "episode_order",
            DatasetError::NonFinite => "non_finite",
        }
    }
}

/// Append-only store of one slot's transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoBuffer {
    slot: AgentSlot,
    obs_len: usize,
    act_len: usize,
    records: Vec<TransitionRecord>,
    episodes: usize,
}

impl DemoBuffer {
    pub fn new(slot: AgentSlot, obs_len: usize, act_len: usize) -> Self {
        Self { slot, obs_len, act_len, records: Vec::new(), episodes: 0 }
    }

    pub fn slot(&self) -> AgentSlot {
        self.slot
    }

    pub fn obs_len(&self) -> usize {
        self.obs_len
    }

    pub fn act_len(&self) -> usize {
        self.act_len
    }

    pub fn append(&mut self, record: TransitionRecord) -> Result<(), DatasetError> {
        if record.agent != self.slot {
            return Err(DatasetError::AgentMismatch { expected: self.slot, got: record.agent });
        }
        if record.obs.len() != self.obs_len || record.action.len() != self.act_len {
            return Err(DatasetError::DimMismatch(format!(
                "record ({}, {}) in buffer ({}, {})",
                record.obs.len(),
                record.action.len(),
                self.obs_len,
                self.act_len
            )));
        }
        let finite = record.obs.iter().chain(&record.action).chain(record.executed.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(DatasetError::NonFinite);
        }
        match self.records.last() {
            Some(last) if record.episode_id < last.episode_id => {
                return Err(DatasetError::EpisodeOrder { last: last.episode_id, got: record.episode_id });
            }
            Some(last) if record.episode_id == last.episode_id => {}
            _ => self.episodes += 1,
        }
        self.records.push(record);
        Ok(())
    }

    /// Appends every record or none.
    pub fn append_episode(&mut self, records: Vec<TransitionRecord>) -> Result<(), DatasetError> {
        let mut staged = self.clone();
        for r in records {
            staged.append(r)?;
        }
        *self = staged;
        Ok(())
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of distinct episode ids.
    pub fn episode_count(&self) -> usize {
        self.episodes
    }
}

/// Buffers of one run plus the header describing them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub buffers: Vec<DemoBuffer>,
}

impl Dataset {
    /// Empty buffers for every slot of the header's layout.
    pub fn empty(header: DatasetHeader) -> Self {
        let (o, a) = header.record_dims();
        let buffers = header.layout.slots(header.n_agents).into_iter().map(|s| DemoBuffer::new(s, o, a)).collect();
        Self { header, buffers }
    }

    pub fn buffer(&self, slot: AgentSlot) -> Option<&DemoBuffer> {
        self.buffers.iter().find(|b| b.slot == slot)
    }

    pub fn buffer_mut(&mut self, slot: AgentSlot) -> Option<&mut DemoBuffer> {
        self.buffers.iter_mut().find(|b| b.slot == slot)
    }

    pub fn total_records(&self) -> usize {
        self.buffers.iter().map(DemoBuffer::len).sum()
    }

    /// Checks the header against the task and every buffer against the header.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let h = &self.header;
        if h.schema_version != DATASET_SCHEMA {
            return Err(DatasetError::Version { found: h.schema_version, expected: DATASET_SCHEMA });
        }
        if h.obs_dim != h.task.obs_dim() || h.act_dim != 2 {
            return Err(DatasetError::DimMismatch(format!(
                "header dims ({}, {}) but {} uses ({}, 2)",
                h.obs_dim,
                h.act_dim,
                h.task,
                h.task.obs_dim()
            )));
        }
        let slots = h.layout.slots(h.n_agents);
        let (o, a) = h.record_dims();
        if self.buffers.len() != slots.len() {
            return Err(DatasetError::DimMismatch(format!("{} buffers for {} slots", self.buffers.len(), slots.len())));
        }
        for (b, s) in self.buffers.iter().zip(slots) {
            if b.slot != s || b.obs_len != o || b.act_len != a {
                return Err(DatasetError::DimMismatch(format!("buffer {} does not match header", b.slot)));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String, DatasetError> {
        self.validate()?;
        let mut out = Vec::new();
        let line = |out: &mut Vec<u8>, v: &serde_json::Value| {
            serde_json::to_writer(&mut *out, v).expect("in-memory write");
            out.push(b'\n');
        };
        line(&mut out, &tagged("header", &self.header));
        for b in &self.buffers {
            for r in &b.records {
                line(&mut out, &tagged("record", r));
            }
        }
        line(&mut out, &serde_json::json!({"kind": "footer", "records": self.total_records()}));
        Ok(String::from_utf8(out).expect("json is utf-8"))
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DatasetError> {
        let mut lines = text.split_terminator('\n').enumerate().map(|(i, l)| (i + 1, l));
        let (_, head) = lines.next().ok_or(DatasetError::Corrupt { line: 1, msg: "empty file".into() })?;
        let head_value: serde_json::Value = parse_line(1, head)?;
        expect_kind(1, &head_value, "header")?;
        // version first, so a bumped schema is reported as such even if the
        // rest of the header changed shape
        let version = head_value.get("schema_version").and_then(|v| v.as_u64());
        match version {
            Some(v) if v == DATASET_SCHEMA as u64 => {}
            Some(v) => return Err(DatasetError::Version { found: v as u32, expected: DATASET_SCHEMA }),
            None => return Err(DatasetError::Corrupt { line: 1, msg: "header without schema_version".into() }),
        }
        let header: DatasetHeader = untag(1, head_value)?;
        let mut dataset = Dataset::empty(header);
        dataset.validate()?;

        let mut count = 0usize;
        for (n, line) in lines.by_ref() {
            let value: serde_json::Value = parse_line(n, line)?;
            match value.get("kind").and_then(|k| k.as_str()) {
                Some("record") => {
                    let record: TransitionRecord = untag(n, value)?;
                    if record.t >= dataset.header.horizon {
                        return Err(DatasetError::Corrupt { line: n, msg: format!("t = {} outside horizon", record.t) });
                    }
                    let slot = record.agent;
                    let buffer = dataset.buffer_mut(slot).ok_or_else(|| DatasetError::Corrupt { line: n, msg: format!("no buffer for agent {slot}") })?;
                    buffer.append(record)?;
                    count += 1;
                }
                Some("footer") => {
                    let declared = value.get("records").and_then(|r| r.as_u64());
                    if declared != Some(count as u64) {
                        return Err(DatasetError::Corrupt { line: n, msg: format!("footer declares {declared:?} records, read {count}") });
                    }
                    if let Some((n, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
                        return Err(DatasetError::Corrupt { line: n, msg: "data after footer".into() });
                    }
                    return Ok(dataset);
                }
                _ => return Err(DatasetError::Corrupt { line: n, msg: "unexpected line kind".into() }),
            }
        }
        Err(DatasetError::Corrupt { line: count + 2, msg: "missing footer (truncated file)".into() })
    }

    /// Writes the dataset, creating parent directories.
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let text = self.to_jsonl()?;
        let io = |e: std::io::Error| DatasetError::Io(format!("{}: {e}", path.display()));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let tmp = path.with_extension("jsonl.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(text.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }
}

/// `<root>/datasets/<task>/<algo>/<seed>.jsonl`
pub fn dataset_path(root: &Path, task: TaskId, algorithm: &str, seed: u64) -> PathBuf {
    root.join("datasets").join(task.as_str()).join(algorithm).join(format!("{seed}.jsonl"))
}

fn tagged<T: Serialize>(kind: &str, value: &T) -> serde_json::Value {
    let mut v = serde_json::to_value(value).expect("plain data serializes");
    let obj = v.as_object_mut().expect("struct serializes to an object");
    let mut out = serde_json::Map::with_capacity(obj.len() + 1);
    out.insert("kind".into(), kind.into());
    out.extend(std::mem::take(obj));
    serde_json::Value::Object(out)
}

fn parse_line(line: usize, text: &str) -> Result<serde_json::Value, DatasetError> {
    serde_json::from_str(text).map_err(|e| DatasetError::Corrupt { line, msg: e.to_string() })
}

fn expect_kind(line: usize, v: &serde_json::Value, kind: &str) -> Result<(), DatasetError> {
    if v.get("kind").and_then(|k| k.as_str()) == Some(kind) {
        Ok(())
    } else {
        Err(DatasetError::Corrupt { line, msg: format!("expected {kind} line") })
    }
}

fn untag<T: serde::de::DeserializeOwned>(line: usize, mut v: serde_json::Value) -> Result<T, DatasetError> {
    if let Some(obj) = v.as_object_mut() {
        obj.remove("kind");
    }
    serde_json::from_value(v).map_err(|e| DatasetError::Corrupt { line, msg: e.to_string() })
}
