use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agents::remote::RemoteAdapter;
use crate::defect::{matched_prefix, DefectSpec};
use crate::error::{Error, Result};
use crate::screen::{Effect, Observation};
use crate::trajectory::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JudgeValue {
    GuiBug,
    ExecutorError,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Checklist {
    pub precondition_ok: bool,
    pub trigger_ok: bool,
    pub result_ok: bool,
}

impl Checklist {
    pub fn all(&self) -> bool {
        self.precondition_ok && self.trigger_ok && self.result_ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub value: JudgeValue,
    pub checklist: Checklist,
    #[serde(default)]
    pub rationale: String,
}

impl JudgeVerdict {
    /// Builds a verdict whose value follows the checklist.
    pub fn from_checklist(checklist: Checklist, rationale: impl Into<String>) -> Self {
        Self {
            value: if checklist.all() { JudgeValue::GuiBug } else { JudgeValue::ExecutorError },
            checklist,
            rationale: rationale.into(),
        }
    }
}

pub trait JudgeBackend: Send {
    fn judge(&mut self, run: &RunRecord, defect: &DefectSpec) -> Result<JudgeVerdict>;
}

/// Checklist judge over the recorded trajectory.
///
/// Patterns ignore payloads, so typed values may differ from the defect card.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleJudge;

/// First observation at or after step `j`'s post that is not a loading screen.
fn settled_post(run: &RunRecord, j: usize) -> Option<&Observation> {
    run.steps[j..].iter().filter_map(|s| s.post.as_ref()).find(|o| !o.is_loading())
}

impl JudgeBackend for RuleJudge {
    fn judge(&mut self, run: &RunRecord, defect: &DefectSpec) -> Result<JudgeVerdict> {
        let patterns: Vec<_> = run.steps.iter().map(|s| s.pattern()).collect();
        let matched = |upto: usize| matched_prefix(&defect.preconditions, patterns[..upto].iter().flatten());
        let full = defect.preconditions.len();
        let precondition_ok = matched(patterns.len()) == full;
        let trigger = (0..run.steps.len()).find(|&j| {
            let s = &run.steps[j];
            patterns[j].as_ref() == Some(&defect.trigger)
                && s.pre.element(&defect.trigger.element).is_some_and(|e| e.enabled)
                && matched(j) == full
        });
        let Some(j) = trigger else {
            let why = if precondition_ok {
                "preconditions met but the trigger action is missing"
            } else {
                "preconditions not met in order"
            };
            return Ok(JudgeVerdict::from_checklist(Checklist { precondition_ok, ..Checklist::default() }, why));
        };
        let step = &run.steps[j];
        let result_ok = settled_post(run, j).is_some_and(|post| match &defect.actual_effect {
            Effect::Navigate { target } => post.screen_id == *target,
            Effect::Mutate { variable, value } => post.variables.get(variable) == Some(&value.resolve(&step.action)),
            Effect::None => post.state_digest == step.pre.state_digest,
        });
        let checklist = Checklist { precondition_ok: true, trigger_ok: true, result_ok };
        let why = if result_ok {
            format!("trigger at step {} produced the reported result", step.step_index())
        } else {
            format!("trigger at step {} did not produce the reported result", step.step_index())
        };
        Ok(JudgeVerdict::from_checklist(checklist, why))
    }
}

/// Judge hosted behind the agent wire schema.
pub struct RemoteJudge(pub RemoteAdapter);

impl JudgeBackend for RemoteJudge {
    fn judge(&mut self, run: &RunRecord, defect: &DefectSpec) -> Result<JudgeVerdict> {
        let req = json!({
            "defect": { "card": defect.description, "trigger": defect.trigger, "preconditions": defect.preconditions },
            "trajectory": run.steps,
        });
        let v = self.0.call(req)?;
        let flag = |k: &str| v[k].as_bool().ok_or_else(|| Error::Evaluation(format!("judge field `{k}` missing")));
        let checklist = Checklist {
            precondition_ok: flag("precondition_ok")?,
            trigger_ok: flag("trigger_ok")?,
            result_ok: flag("result_ok")?,
        };
        let rationale = v["rationale"].as_str().unwrap_or_default().to_owned();
        Ok(JudgeVerdict::from_checklist(checklist, rationale))
    }
}
