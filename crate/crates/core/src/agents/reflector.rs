use std::sync::Arc;

use crate::defect::ActionPattern;
use crate::error::{Error, Result};
use crate::orchestrator::{Attribution, Evidence, Outcome, Subtask};
use crate::screen::{AppModel, Observation};
use crate::trajectory::Trajectory;

use super::monitor::effect_observed;
use super::ReflectorBackend;

/// Attributes failures from the interaction markers of the failed attempt.
///
/// A miss, a wrong element, a disabled element or an element without a
/// declared response is an agent error. A correctly grounded action whose
/// declared effect did not show is a GUI bug.
#[derive(Debug, Clone)]
pub struct RuleReflector {
    model: Option<Arc<AppModel>>,
}

impl RuleReflector {
    pub fn new(model: Option<Arc<AppModel>>) -> Self {
        Self { model }
    }
}

impl ReflectorBackend for RuleReflector {
    fn reflect(
        &mut self,
        _subtask: &Subtask,
        tau: &Trajectory,
        observation: &Observation,
        _history: &[Outcome],
    ) -> Result<Attribution> {
        let last = tau.last().ok_or_else(|| Error::Misuse("reflection needs at least one attempted step".into()))?;
        let evidence = Evidence {
            steps: tau.steps().iter().map(|s| s.step_index()).collect(),
            markers: tau.steps().iter().map(|s| s.marker.clone()).collect(),
        };
        let pre = &last.pre;
        let post = last.post.as_ref().unwrap_or(observation);
        let action = &last.action;
        if pre.is_loading() || !action.kind.is_element_action() {
            return Ok(Attribution::agent_error("wait for the screen to settle, then act on an element", evidence));
        }
        let intended = action.target.as_ref().and_then(|t| pre.element(t));
        let Some(hit) = last.marker.hit.as_ref().and_then(|h| pre.element(h)) else {
            let hint = match intended {
                Some(e) => format!("click inside the element bounds of `{}` at {}", e.id, e.bounds.center()),
                None => "click inside the element bounds".to_owned(),
            };
            return Ok(Attribution::agent_error(hint, evidence));
        };
        if let Some(e) = intended {
            if e.id != hit.id {
                return Ok(Attribution::agent_error(
                    format!("the action landed on `{}`; click `{}` at {} instead", hit.id, e.id, e.bounds.center()),
                    evidence,
                ));
            }
        }
        if !hit.enabled {
            return Ok(Attribution::agent_error(
                format!("`{}` is disabled; choose an enabled element", hit.id),
                evidence,
            ));
        }
        let site = ActionPattern::new(pre.screen_id.clone(), hit.id.clone(), action.kind);
        let Some(model) = &self.model else {
            return Ok(Attribution::gui_bug(Some(site), evidence));
        };
        match model.transition(&pre.screen_id, &hit.id, action.kind) {
            None => Ok(Attribution::agent_error(
                format!("`{}` does not respond to {}; choose another element", hit.id, action.kind),
                evidence,
            )),
            Some(effect) if !effect_observed(pre, action, post, effect) => {
                Ok(Attribution::gui_bug(Some(site), evidence))
            }
            Some(_) => {
                Ok(Attribution::agent_error("the action behaved as declared; re-check the subtask goal", evidence))
            }
        }
    }
}
