use std::sync::Arc;

use crate::defect::ActionPattern;
use crate::error::Result;
use crate::orchestrator::{MonitorVerdict, Subtask, Verdict};
use crate::screen::{Action, ActionKind, AppModel, Effect, Observation};

use super::MonitorBackend;

/// Whether `post` shows the declared `effect` of `action` taken on `pre`.
pub fn effect_observed(pre: &Observation, action: &Action, post: &Observation, effect: &Effect) -> bool {
    match effect {
        Effect::Navigate { target } => post.screen_id == *target,
        Effect::Mutate { variable, value } => post.variables.get(variable) == Some(&value.resolve(action)),
        Effect::None => post.state_digest == pre.state_digest,
    }
}

fn probe_hit(subtask: &Subtask, pre: &Observation, action: &Action) -> bool {
    match &subtask.probe {
        // The executor only finishes a probe subtask after performing the probe.
        Some(p) if p.required => {
            action.kind == ActionKind::Finished || ActionPattern::resolve(pre, action).as_ref() == Some(&p.pattern)
        }
        _ => true,
    }
}

/// Checks subtask progress against the declared model.
///
/// A step fails when the addressed element's declared effect is not visible
/// afterwards, or when an element action changes nothing at all.
#[derive(Debug, Clone)]
pub struct RuleMonitor {
    model: Option<Arc<AppModel>>,
}

impl RuleMonitor {
    pub fn new(model: Option<Arc<AppModel>>) -> Self {
        Self { model }
    }
}

impl MonitorBackend for RuleMonitor {
    fn check(
        &mut self,
        subtask: &Subtask,
        pre: &Observation,
        action: &Action,
        post: &Observation,
    ) -> Result<MonitorVerdict> {
        if post.is_loading() || pre.is_loading() {
            return Ok(MonitorVerdict::new(Verdict::Continue, "screen is loading"));
        }
        if !action.kind.is_element_action() {
            if subtask.goal.holds(post) && probe_hit(subtask, pre, action) {
                return Ok(MonitorVerdict::new(Verdict::Done, "subtask goal reached"));
            }
            return Ok(MonitorVerdict::new(Verdict::Continue, format!("system action {}", action.kind)));
        }
        let unchanged = pre.state_digest == post.state_digest;
        let hit = pre.resolve(action).map(|e| e.id.clone());
        let intended = action.target.clone().or_else(|| hit.clone());
        let declared = match (&self.model, &intended) {
            (Some(m), Some(id)) => m.transition(&pre.screen_id, id, action.kind),
            _ => None,
        };
        if let (Some(effect), Some(id)) = (declared, &intended) {
            if !effect_observed(pre, action, post, effect) {
                return Ok(MonitorVerdict::new(
                    Verdict::Fail,
                    format!("{} on `{id}` did not produce its expected effect", action.kind),
                ));
            }
        } else if unchanged {
            return Ok(MonitorVerdict::new(Verdict::Fail, "the action changed nothing on screen"));
        }
        if subtask.goal.holds(post) && probe_hit(subtask, pre, action) {
            return Ok(MonitorVerdict::new(Verdict::Done, "subtask goal reached"));
        }
        Ok(MonitorVerdict::new(Verdict::Continue, "in progress"))
    }
}

/// Reports completion only; never flags a failure.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassiveMonitor;

impl MonitorBackend for PassiveMonitor {
    fn check(
        &mut self,
        subtask: &Subtask,
        pre: &Observation,
        action: &Action,
        post: &Observation,
    ) -> Result<MonitorVerdict> {
        if !post.is_loading() && subtask.goal.holds(post) && probe_hit(subtask, pre, action) {
            Ok(MonitorVerdict::new(Verdict::Done, "subtask goal reached"))
        } else {
            Ok(MonitorVerdict::new(Verdict::Continue, "in progress"))
        }
    }
}
