use std::sync::Arc;

use crate::defect::ActionPattern;
use crate::error::Result;
use crate::orchestrator::{Attribution, Checkpoint, Goal, IntentPattern, Outcome, Predicate, Probe, Subtask, Verdict};
use crate::screen::{ActionKind, AppModel, Effect, Observation, ScreenId};

use super::executor::BOUNDARY_INPUT;
use super::routing::{route, Hop};
use super::PlannerBackend;

/// Plans one navigation subtask per route hop, with at most one test intent
/// after each hop. Intent patterns rotate round-robin across the run.
#[derive(Debug, Clone)]
pub struct ScriptedPlanner {
    model: Arc<AppModel>,
}

struct Draft<'a> {
    model: &'a AppModel,
    prefix: String,
    out: Vec<Subtask>,
    avoid: Vec<ActionPattern>,
    probed: Vec<ActionPattern>,
    rotation: usize,
}

impl ScriptedPlanner {
    pub fn new(model: Arc<AppModel>) -> Self {
        Self { model }
    }
}

fn checkpoint_done(goal: &Goal, history: &[Outcome], i: usize) -> bool {
    history.iter().any(|h| {
        h.subtask.checkpoint == Some(i)
            && h.subtask.finishes_checkpoint
            && (h.verdict == Verdict::Done
                || (matches!(goal.checkpoints[i], Checkpoint::Perform { .. })
                    && h.attribution.as_ref().is_some_and(Attribution::is_gui_bug)))
    })
}

fn expected_goal(model: &AppModel, pattern: &ActionPattern, text: Option<&str>) -> Predicate {
    match model.transition(&pattern.screen, &pattern.element, pattern.action) {
        Some(Effect::Navigate { target }) => Predicate::OnScreen { screen: target.clone() },
        Some(Effect::Mutate { variable, value }) => {
            let probe = crate::screen::Action { text: text.map(str::to_owned), ..crate::screen::Action::finished() };
            Predicate::VariableEquals { variable: variable.clone(), value: value.resolve(&probe) }
        }
        _ => Predicate::Any,
    }
}

impl Draft<'_> {
    fn id(&self) -> String {
        format!("{}.{}", self.prefix, self.out.len() + 1)
    }

    fn name(&self, screen: &ScreenId) -> String {
        self.model.screen(screen).map(|s| s.name.clone()).unwrap_or_else(|| screen.to_string())
    }

    fn push(&mut self, mut s: Subtask) {
        s.avoid = self.avoid.clone();
        if let Some(p) = &s.probe {
            if p.required {
                self.probed.push(p.pattern.clone());
            }
        }
        self.out.push(s);
    }

    fn hops(&mut self, hops: Vec<Hop>, checkpoint: usize, finishes_last: bool) {
        let n = hops.len();
        for (k, hop) in hops.into_iter().enumerate() {
            let dest = hop.dest().clone();
            let (instruction, probe) = match &hop {
                Hop::Element { pattern, .. } => (
                    format!("Open {} via `{}` on {}", self.name(&dest), pattern.element, self.name(&pattern.screen)),
                    Some(Probe::hint(pattern.clone())),
                ),
                Hop::Home { .. } => (format!("Return home to {}", self.name(&dest)), None),
            };
            let mut s = Subtask::navigation(self.id(), instruction, Predicate::OnScreen { screen: dest.clone() });
            s.probe = probe;
            s.checkpoint = Some(checkpoint);
            s.finishes_checkpoint = finishes_last && k + 1 == n;
            self.push(s);
            self.intent(&dest, &hop);
        }
    }

    fn usable(&self, p: &ActionPattern) -> bool {
        !self.avoid.contains(p) && !self.probed.contains(p)
    }

    fn intent(&mut self, screen: &ScreenId, via: &Hop) {
        for j in 0..IntentPattern::ROTATION.len() {
            let pattern = IntentPattern::ROTATION[(self.rotation + j) % IntentPattern::ROTATION.len()];
            if let Some(s) = self.candidate(pattern, screen, via) {
                self.rotation += 1;
                self.push(s);
                return;
            }
        }
    }

    fn candidate(&self, pattern: IntentPattern, screen: &ScreenId, via: &Hop) -> Option<Subtask> {
        let model = self.model;
        let scr = model.screen(screen)?;
        let enabled = |p: &ActionPattern| {
            model
                .screen(&p.screen)
                .and_then(|s| s.elements.iter().find(|e| e.id == p.element))
                .is_some_and(|e| e.enabled)
        };
        match pattern {
            IntentPattern::StateValidation | IntentPattern::BoundaryConditions => {
                let typed = pattern == IntentPattern::BoundaryConditions;
                model.transitions_from(screen).find_map(|t| {
                    let kind_ok = if typed {
                        t.action == ActionKind::Type
                    } else {
                        matches!(t.action, ActionKind::Click | ActionKind::LongPress)
                    };
                    let p = ActionPattern::new(screen.clone(), t.element.clone(), t.action);
                    if !kind_ok || !matches!(t.effect, Effect::Mutate { .. }) || !enabled(&p) || !self.usable(&p) {
                        return None;
                    }
                    let text = typed.then(|| BOUNDARY_INPUT.to_owned());
                    let goal = expected_goal(model, &p, text.as_deref());
                    let instruction = if typed {
                        format!(
                            "Enter special characters into `{}` on {} and check the value is kept",
                            p.element, scr.name
                        )
                    } else {
                        format!("Toggle `{}` on {} and check the state updates", p.element, scr.name)
                    };
                    Some(
                        Subtask::test_intent(self.id(), instruction, goal, pattern)
                            .with_probe(Probe::required(p, text)),
                    )
                })
            }
            IntentPattern::AlternativePaths => {
                let used = match via {
                    Hop::Element { pattern, .. } => Some(pattern),
                    Hop::Home { .. } => None,
                };
                model.transitions.iter().find_map(|t| {
                    let p = ActionPattern::new(t.screen.clone(), t.element.clone(), t.action);
                    let into = t.effect.nav_target() == Some(screen) && t.screen != *screen;
                    let ok = into
                        && matches!(t.action, ActionKind::Click | ActionKind::LongPress)
                        && Some(&p) != used
                        && enabled(&p)
                        && self.usable(&p);
                    ok.then(|| {
                        let instruction =
                            format!("Reach {} again through `{}` on {}", scr.name, p.element, self.name(&p.screen));
                        Subtask::test_intent(self.id(), instruction, Predicate::on_screen(screen.clone()), pattern)
                            .with_probe(Probe::required(p, None))
                    })
                })
            }
        }
    }
}

impl PlannerBackend for ScriptedPlanner {
    fn plan(
        &mut self,
        goal: &Goal,
        observation: &Observation,
        history: &[Outcome],
        reflection: Option<&Attribution>,
    ) -> Result<Vec<Subtask>> {
        let model = &*self.model;
        let mut avoid: Vec<ActionPattern> = Vec::new();
        let sites = history
            .iter()
            .filter_map(|h| h.attribution.as_ref())
            .chain(reflection)
            .filter(|a| a.is_gui_bug())
            .filter_map(|a| a.site.clone());
        for s in sites {
            if !avoid.contains(&s) {
                avoid.push(s);
            }
        }
        let mut probed = Vec::new();
        let mut rotation = 0;
        for h in history {
            if h.subtask.is_test_intent() {
                rotation += 1;
            }
            if let Some(p) = h.subtask.probe.as_ref().filter(|p| p.required) {
                if !probed.contains(&p.pattern) {
                    probed.push(p.pattern.clone());
                }
            }
        }
        let mut draft =
            Draft { model, prefix: format!("s{}", history.len()), out: Vec::new(), avoid, probed, rotation };
        let mut pos = if observation.is_loading() || model.screen(&observation.screen_id).is_none() {
            model.initial_screen.clone()
        } else {
            observation.screen_id.clone()
        };
        let first = (0..goal.checkpoints.len()).find(|&i| !checkpoint_done(goal, history, i));
        let Some(first) = first else {
            return Ok(Vec::new());
        };
        for (i, cp) in goal.checkpoints.iter().enumerate().skip(first) {
            match cp {
                Checkpoint::Reach { screen } => {
                    let Some(hops) = route(model, &pos, screen, &draft.avoid) else {
                        break;
                    };
                    if hops.is_empty() {
                        let mut s = Subtask::navigation(
                            draft.id(),
                            format!("Stay on {}", draft.name(screen)),
                            Predicate::on_screen(screen.clone()),
                        );
                        s.checkpoint = Some(i);
                        s.finishes_checkpoint = true;
                        draft.push(s);
                    } else {
                        draft.hops(hops, i, true);
                    }
                    pos = screen.clone();
                }
                Checkpoint::Perform { pattern, text } => {
                    if draft.avoid.contains(pattern) {
                        continue;
                    }
                    let Some(hops) = route(model, &pos, &pattern.screen, &draft.avoid) else {
                        break;
                    };
                    draft.hops(hops, i, false);
                    let goal_pred = expected_goal(model, pattern, text.as_deref());
                    let instruction =
                        format!("{} `{}` on {}", pattern.action, pattern.element, draft.name(&pattern.screen));
                    let mut s = Subtask::navigation(draft.id(), instruction, goal_pred)
                        .with_probe(Probe::required(pattern.clone(), text.clone()));
                    s.checkpoint = Some(i);
                    s.finishes_checkpoint = true;
                    draft.push(s);
                    pos = model
                        .transition(&pattern.screen, &pattern.element, pattern.action)
                        .and_then(Effect::nav_target)
                        .cloned()
                        .unwrap_or_else(|| pattern.screen.clone());
                }
            }
        }
        Ok(draft.out)
    }
}
