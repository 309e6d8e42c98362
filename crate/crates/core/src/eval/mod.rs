//! Verification, judging, scoring and aggregation of recorded runs.

mod judge;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::defect::DefectSpec;
use crate::error::{Error, Result};
use crate::persist::{to_document, REPORT_SCHEMA};
use crate::scalar::Scalar;
use crate::trajectory::RunRecord;

pub use judge::{Checklist, JudgeBackend, JudgeValue, JudgeVerdict, RemoteJudge, RuleJudge};
pub use metrics::{cell_metrics, f1, round4, CellMetrics};

/// Steps a trigger may follow the last declaration and still be credited.
pub const DEFAULT_WINDOW: u64 = 3;

/// Table columns in display order.
pub const CELLS: [&str; 6] = ["UI-ONR", "UI-UTR", "UI-NLE", "UX-UTR", "UX-NLE", "Overall"];
pub const OVERALL: &str = "Overall";

/// State and action matching of a single-action trigger.
pub fn verify_single_action(run: &RunRecord, defect: &DefectSpec) -> Result<bool> {
    if !defect.is_single_action() {
        return Err(Error::Misuse(format!("defect `{}` has preconditions; use the judge path", defect.id)));
    }
    Ok(run.steps.iter().any(|s| {
        s.pre.screen_id == defect.trigger.screen
            && s.marker.hit.as_ref() == Some(&defect.trigger.element)
            && s.action.kind == defect.trigger.action
    }))
}

pub fn judge_multi_action(run: &RunRecord, defect: &DefectSpec, judge: &mut dyn JudgeBackend) -> Result<JudgeVerdict> {
    if defect.is_single_action() {
        return Err(Error::Misuse(format!("defect `{}` is single-action; use rule verification", defect.id)));
    }
    judge.judge(run, defect).map_err(|e| Error::Evaluation(format!("judge failed on `{}`: {e}", run.task_id)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub run_index: u32,
    /// Table cell of the task's defect, such as `UI-ONR`.
    pub cell: String,
    pub triggered: bool,
    pub declared: bool,
    pub detected: bool,
    pub declaration_steps: Vec<u64>,
    pub trigger_step: Option<u64>,
    /// Set when the judge failed and the run was scored as not detected.
    #[serde(default)]
    pub judge_failed: bool,
}

/// Scores one run against its defect.
pub fn evaluate_run(run: &RunRecord, defect: &DefectSpec, judge: &mut dyn JudgeBackend, window: u64) -> TaskResult {
    let trigger_step = run.ground_truth.iter().find(|t| t.defect_id == defect.id).map(|t| t.step_index);
    let declaration_steps: Vec<u64> = run.declarations.iter().map(|d| d.step_index).collect();
    let mut judge_failed = false;
    let verified = if defect.is_single_action() {
        verify_single_action(run, defect).unwrap_or(false)
    } else {
        match judge_multi_action(run, defect, judge) {
            Ok(v) => v.value == JudgeValue::GuiBug,
            Err(_) => {
                judge_failed = true;
                false
            }
        }
    };
    let declared = !declaration_steps.is_empty();
    let triggered = trigger_step.is_some();
    let in_window = match (trigger_step, declaration_steps.iter().max()) {
        (Some(t), Some(last)) => t <= last + window,
        _ => false,
    };
    TaskResult {
        task_id: run.task_id.clone(),
        run_index: run.run_index,
        cell: defect.cell(),
        triggered,
        declared,
        detected: declared && triggered && verified && in_window,
        declaration_steps,
        trigger_step,
        judge_failed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassK {
    Pass1,
    Pass3,
}

impl PassK {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "pass1" | "pass@1" => Ok(PassK::Pass1),
            "3" | "pass3" | "pass@3" => Ok(PassK::Pass3),
            other => Err(Error::Input(format!("unknown pass@k `{other}`; expected 1 or 3"))),
        }
    }
}

/// Per-task scores over its runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassScore<S> {
    pub task_id: String,
    pub runs: usize,
    pub pass1_detected: S,
    pub pass1_declared: S,
    pub pass3_detected: bool,
    pub pass3_declared: bool,
}

pub fn score_task<S: Scalar>(results: &[TaskResult]) -> Result<PassScore<S>> {
    let first = results.first().ok_or_else(|| Error::Input("no runs to score".into()))?;
    if results.iter().any(|r| r.task_id != first.task_id) {
        return Err(Error::Input("results span several tasks".into()));
    }
    let n = results.len() as u64;
    let count = |f: fn(&TaskResult) -> bool| results.iter().filter(|r| f(r)).count() as u64;
    Ok(PassScore {
        task_id: first.task_id.clone(),
        runs: results.len(),
        pass1_detected: S::from_count(count(|r| r.detected)) / S::from_count(n),
        pass1_declared: S::from_count(count(|r| r.declared)) / S::from_count(n),
        pass3_detected: results.iter().any(|r| r.detected),
        pass3_declared: results.iter().any(|r| r.declared),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<S> {
    pub pass_k: PassK,
    pub runs_per_task: usize,
    pub cells: BTreeMap<String, CellMetrics<S>>,
    #[serde(default)]
    pub bench_hash: String,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

/// Groups results by task, scores them and aggregates per cell and overall.
pub fn aggregate<S: Scalar>(results: &[TaskResult], pass_k: PassK) -> Result<EvalReport<S>> {
    let mut by_task: BTreeMap<&str, Vec<&TaskResult>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in results {
        if !seen.insert((r.task_id.as_str(), r.run_index)) {
            return Err(Error::Input(format!("duplicate result for task `{}` run {}", r.task_id, r.run_index)));
        }
        by_task.entry(&r.task_id).or_default().push(r);
    }
    let runs = by_task.values().map(Vec::len).max().unwrap_or(0);
    if let Some((t, v)) = by_task.iter().find(|(_, v)| v.len() != runs) {
        return Err(Error::Input(format!("task `{t}` has {} runs, expected {runs}", v.len())));
    }
    if pass_k == PassK::Pass3 && runs < 3 {
        return Err(Error::Input(format!("pass@3 needs at least 3 runs per task, found {runs}")));
    }
    // (detected, declared, total) numerators per cell
    let mut counts: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for v in by_task.values() {
        let cell = &v[0].cell;
        if v.iter().any(|r| &r.cell != cell) {
            return Err(Error::Input(format!("task `{}` spans several cells", v[0].task_id)));
        }
        let (det, dec) = match pass_k {
            PassK::Pass1 => {
                (v.iter().filter(|r| r.detected).count() as u64, v.iter().filter(|r| r.declared).count() as u64)
            }
            PassK::Pass3 => (v.iter().any(|r| r.detected) as u64, v.iter().any(|r| r.declared) as u64),
        };
        for key in [cell.as_str(), OVERALL] {
            let c = counts.entry(key.to_owned()).or_default();
            c.0 += det;
            c.1 += dec;
            c.2 += 1;
        }
    }
    let per = match pass_k {
        PassK::Pass1 => runs as u64,
        PassK::Pass3 => 1,
    };
    let cells = counts.into_iter().map(|(k, (det, dec, tot))| (k, cell_metrics(det, dec, tot, per))).collect();
    Ok(EvalReport { pass_k, runs_per_task: runs, cells, bench_hash: String::new(), seeds: Vec::new() })
}

fn opt4<S: Scalar>(v: Option<S>) -> serde_json::Value {
    v.map(|x| serde_json::json!(round4(x.to_f64_lossy()))).unwrap_or(serde_json::Value::Null)
}

impl<S: Scalar> EvalReport<S> {
    pub fn overall(&self) -> Option<&CellMetrics<S>> {
        self.cells.get(OVERALL)
    }

    /// `report_v1` document with metrics rounded to four decimals.
    pub fn to_document(&self) -> Result<serde_json::Value> {
        let mut cells = serde_json::Map::new();
        for key in CELLS {
            if let Some(m) = self.cells.get(key) {
                cells.insert(
                    key.to_owned(),
                    serde_json::json!({
                        "total": m.total,
                        "detected": round4(m.detected.to_f64_lossy()),
                        "declared": round4(m.declared.to_f64_lossy()),
                        "recall": round4(m.recall.to_f64_lossy()),
                        "precision": opt4(m.precision),
                        "f1": opt4(m.f1),
                    }),
                );
            }
        }
        to_document(
            REPORT_SCHEMA,
            &serde_json::json!({
                "pass_k": self.pass_k,
                "runs_per_task": self.runs_per_task,
                "cells": cells,
                "provenance": { "bench_hash": self.bench_hash, "seeds": self.seeds },
            }),
        )
    }

    /// Plain-text table: one column group per cell, percentages to two decimals.
    pub fn render_table(&self) -> String {
        let pct = |v: Option<S>| match v {
            Some(x) => format!("{:.2}", x.to_f64_lossy() * 100.0),
            None => "-".to_owned(),
        };
        let label = match self.pass_k {
            PassK::Pass1 => "Pass@1",
            PassK::Pass3 => "Pass@3",
        };
        let mut out = String::new();
        let _ = write!(out, "{label:<8}");
        for c in CELLS {
            let _ = write!(out, " | {c:^23}");
        }
        out.push('\n');
        let _ = write!(out, "{:<8}", "");
        for _ in CELLS {
            let _ = write!(out, " | {:>7} {:>7} {:>7}", "R", "P", "F1");
        }
        out.push('\n');
        let _ = write!(out, "{:<8}", "");
        for c in CELLS {
            let m = self.cells.get(c);
            let _ = write!(
                out,
                " | {:>7} {:>7} {:>7}",
                pct(m.map(|m| m.recall)),
                pct(m.and_then(|m| m.precision)),
                pct(m.and_then(|m| m.f1))
            );
        }
        out.push('\n');
        let _ = write!(out, "{:<8}", "tasks");
        for c in CELLS {
            let n = self.cells.get(c).map(|m| m.total).unwrap_or(0);
            let _ = write!(out, " | {n:>23}");
        }
        out.push('\n');
        out
    }
}

/// Reconstructs a report from a `report_v1` document (rounded values).
pub fn report_from_document(doc: serde_json::Value) -> Result<EvalReport<f64>> {
    let body: serde_json::Value = crate::persist::from_document(REPORT_SCHEMA, doc)?;
    let pass_k: PassK = serde_json::from_value(body["pass_k"].clone())?;
    let runs_per_task = body["runs_per_task"].as_u64().unwrap_or(0) as usize;
    let mut cells = BTreeMap::new();
    if let Some(obj) = body["cells"].as_object() {
        for (k, m) in obj {
            let f = |key: &str| m[key].as_f64();
            cells.insert(
                k.clone(),
                CellMetrics {
                    total: m["total"].as_u64().unwrap_or(0),
                    detected: f("detected").unwrap_or(0.0),
                    declared: f("declared").unwrap_or(0.0),
                    recall: f("recall").unwrap_or(0.0),
                    precision: f("precision"),
                    f1: f("f1"),
                },
            );
        }
    }
    Ok(EvalReport {
        pass_k,
        runs_per_task,
        cells,
        bench_hash: body["provenance"]["bench_hash"].as_str().unwrap_or_default().to_owned(),
        seeds: serde_json::from_value(body["provenance"]["seeds"].clone()).unwrap_or_default(),
    })
}
