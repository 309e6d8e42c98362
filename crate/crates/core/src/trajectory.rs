//! Step records, per-run records and their line-delimited persistence.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::defect::{ActionPattern, TriggerEvent};
use crate::error::{Error, Result};
use crate::orchestrator::{Attribution, MonitorVerdict};
use crate::persist::TRAJECTORY_SCHEMA;
use crate::screen::{annotate_action, Action, Marker, Observation};

/// One executed action with the observations around it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub pre: Observation,
    pub action: Action,
    pub marker: Marker,
    /// Filled in when the next observation is synced.
    pub post: Option<Observation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<MonitorVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<Attribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask_id: Option<String>,
}

impl StepRecord {
    pub fn new(pre: Observation, action: Action) -> Self {
        let marker = annotate_action(&pre, &action).marker;
        Self { pre, action, marker, post: None, verdict: None, attribution: None, subtask_id: None }
    }

    pub fn step_index(&self) -> u64 {
        self.pre.step_index
    }

    /// Element pattern the action addressed, if it hit an element.
    pub fn pattern(&self) -> Option<ActionPattern> {
        ActionPattern::resolve(&self.pre, &self.action)
    }

    /// Whether the action left the state digest untouched.
    pub fn unchanged(&self) -> bool {
        self.post.as_ref().is_some_and(|p| p.state_digest == self.pre.state_digest)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_steps(steps: Vec<StepRecord>) -> Self {
        Self { steps }
    }

    pub fn push(&mut self, record: StepRecord) {
        self.steps.push(record);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }

    pub fn last_mut(&mut self) -> Option<&mut StepRecord> {
        self.steps.last_mut()
    }

    /// Element patterns of every step that hit an element, in order.
    pub fn patterns(&self) -> Vec<ActionPattern> {
        self.steps.iter().filter_map(StepRecord::pattern).collect()
    }

    /// Checks that each post-observation equals the next pre-observation.
    pub fn is_chained(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].post.as_ref() == Some(&w[1].pre))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Orchestrated,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclarationSource {
    /// A GUI_BUG attribution from the reflector.
    Reflector,
    /// An `answer("GUI_BUG")` action in baseline mode.
    Answer,
}

/// A defect report issued by the agent under test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Declaration {
    pub step_index: u64,
    pub source: DeclarationSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<ActionPattern>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    BudgetExhausted,
    Aborted { reason: String },
}

/// Everything recorded about one task run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub run_index: u32,
    pub seed: u64,
    pub mode: Mode,
    pub steps: Vec<StepRecord>,
    pub declarations: Vec<Declaration>,
    pub status: RunStatus,
    /// Defect ledger trigger log. Harness-side only.
    pub ground_truth: Vec<TriggerEvent>,
    #[serde(default)]
    pub bench_hash: String,
}

#[derive(Serialize, Deserialize)]
struct StepLine {
    schema: String,
    record: String,
    #[serde(flatten)]
    step: StepRecord,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    schema: String,
    record: String,
    task_id: String,
    run_index: u32,
    seed: u64,
    mode: Mode,
    bench_hash: String,
    steps: usize,
    status: RunStatus,
    declarations: Vec<Declaration>,
    ground_truth: Vec<TriggerEvent>,
}

impl RunRecord {
    pub fn trajectory(&self) -> Trajectory {
        Trajectory::from_steps(self.steps.clone())
    }

    pub fn declared(&self) -> bool {
        !self.declarations.is_empty()
    }

    /// Line-delimited encoding: one line per step and a summary footer.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for step in &self.steps {
            let line = StepLine { schema: TRAJECTORY_SCHEMA.into(), record: "step".into(), step: step.clone() };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        let summary = SummaryLine {
            schema: TRAJECTORY_SCHEMA.into(),
            record: "summary".into(),
            task_id: self.task_id.clone(),
            run_index: self.run_index,
            seed: self.seed,
            mode: self.mode,
            bench_hash: self.bench_hash.clone(),
            steps: self.steps.len(),
            status: self.status.clone(),
            declarations: self.declarations.clone(),
            ground_truth: self.ground_truth.clone(),
        };
        out.push_str(&serde_json::to_string(&summary)?);
        out.push('\n');
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut steps = Vec::new();
        let mut summary = None;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if summary.is_some() {
                return Err(Error::Input(format!("line {}: record after summary", n + 1)));
            }
            let value: serde_json::Value = serde_json::from_str(line)?;
            let schema = value.get("schema").and_then(|v| v.as_str()).unwrap_or("<missing>");
            if schema != TRAJECTORY_SCHEMA {
                return Err(Error::Schema { expected: TRAJECTORY_SCHEMA, found: schema.to_owned() });
            }
            match value.get("record").and_then(|v| v.as_str()) {
                Some("step") => steps.push(serde_json::from_value::<StepLine>(value)?.step),
                Some("summary") => summary = Some(serde_json::from_value::<SummaryLine>(value)?),
                other => return Err(Error::Input(format!("line {}: unknown record kind {other:?}", n + 1))),
            }
        }
        let s = summary.ok_or_else(|| Error::Input("trajectory has no summary line".into()))?;
        if s.steps != steps.len() {
            return Err(Error::Input(format!("summary declares {} steps, found {}", s.steps, steps.len())));
        }
        Ok(RunRecord {
            task_id: s.task_id,
            run_index: s.run_index,
            seed: s.seed,
            mode: s.mode,
            steps,
            declarations: s.declarations,
            status: s.status,
            ground_truth: s.ground_truth,
            bench_hash: s.bench_hash,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the line-delimited encoding.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_jsonl()?.as_bytes())))
    }
}
