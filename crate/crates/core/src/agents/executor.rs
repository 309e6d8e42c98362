use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::defect::ActionPattern;
use crate::error::Result;
use crate::orchestrator::{Checkpoint, Goal, Predicate, Probe, Subtask};
use crate::screen::{
    Action, ActionKind, AppModel, Direction, Element, Observation, Point, ScreenId, SCREEN_HEIGHT, SCREEN_WIDTH,
};
use crate::trajectory::Trajectory;

use super::routing::{route, Hop};
use super::{ExecutorBackend, ProfileKind, ScriptedProfile, Slip};

/// Text typed by boundary-condition probes.
pub const BOUNDARY_INPUT: &str = "@#$%";
const DEFAULT_INPUT: &str = "test";

/// Grounds subtasks into device actions using the declared navigation graph.
///
/// The flaky profile displaces a seeded fraction of its point actions outside
/// the intended element and logs each displacement as a [`Slip`].
#[derive(Debug, Clone)]
pub struct ScriptedExecutor {
    model: Arc<AppModel>,
    profile: ScriptedProfile,
    slips: Vec<Slip>,
}

impl ScriptedExecutor {
    pub fn new(model: Arc<AppModel>, profile: ScriptedProfile) -> Self {
        Self { model, profile, slips: Vec::new() }
    }

    pub fn profile(&self) -> ScriptedProfile {
        self.profile
    }

    fn wait() -> Action {
        Action::scroll(Direction::Down)
    }

    /// Acts on `pattern`, bringing its element on screen first.
    fn perform(
        &mut self,
        obs: &Observation,
        pattern: &ActionPattern,
        text: Option<&str>,
        avoid: &[ActionPattern],
    ) -> Action {
        if obs.screen_id != pattern.screen {
            return self.toward(obs, &pattern.screen, avoid);
        }
        match obs.element(&pattern.element) {
            Some(e) => {
                let e = e.clone();
                self.point_action(obs, &e, pattern.action, text)
            }
            None => self.reveal(obs, pattern),
        }
    }

    fn reveal(&self, obs: &Observation, pattern: &ActionPattern) -> Action {
        match self.model.screen(&pattern.screen) {
            Some(s) if s.is_scroll_only(&pattern.element) => Action::scroll(Direction::Down),
            Some(s) if s.element(&pattern.element).is_some() => Action::scroll(Direction::Up),
            _ if obs.screen_id == self.model.initial_screen => Action::press_home(),
            _ => Action::press_back(),
        }
    }

    /// First action of the shortest declared route to `dest`.
    fn toward(&mut self, obs: &Observation, dest: &ScreenId, avoid: &[ActionPattern]) -> Action {
        match route(&self.model, &obs.screen_id, dest, avoid).and_then(|r| r.into_iter().next()) {
            Some(Hop::Element { pattern, .. }) => match obs.element(&pattern.element) {
                Some(e) => {
                    let e = e.clone();
                    self.point_action(obs, &e, pattern.action, None)
                }
                None => self.reveal(obs, &pattern),
            },
            Some(Hop::Home { .. }) => Action::press_home(),
            None => Action::press_back(),
        }
    }

    fn point_action(&mut self, obs: &Observation, element: &Element, kind: ActionKind, text: Option<&str>) -> Action {
        let center = element.bounds.center();
        let action = match kind {
            ActionKind::LongPress => Action::long_press(center),
            ActionKind::Type => Action::type_text(center, text.unwrap_or(DEFAULT_INPUT)),
            ActionKind::Drag => Action::drag(Some(center), Direction::Down),
            _ => Action::click(center),
        };
        self.jitter(obs, element, action.with_target(element.id.clone()))
    }

    fn jitter(&mut self, obs: &Observation, element: &Element, mut action: Action) -> Action {
        if self.profile.kind != ProfileKind::FlakyExecutor || self.profile.jitter_probability <= 0.0 {
            return action;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed(self.profile.rng_seed, obs.step_index));
        if !rng.gen_bool(self.profile.jitter_probability) {
            return action;
        }
        let point = displaced(element, rng.gen::<f64>() * 2.0 * PI);
        self.slips.push(Slip {
            step_index: obs.step_index,
            screen: obs.screen_id.clone(),
            intended: element.id.clone(),
            point,
        });
        action.point = Some(point);
        action
    }

    /// Checkpoint the baseline navigator is working on, by replaying history.
    fn pending_checkpoint<'a>(
        &self,
        goal: &'a Goal,
        obs: &Observation,
        history: &Trajectory,
    ) -> Option<&'a Checkpoint> {
        let steps = history.steps();
        let declared = declared_sites(history);
        // observation k is the pre of step k; observation n is the current one
        let screen_at = |k: usize| if k < steps.len() { &steps[k].pre.screen_id } else { &obs.screen_id };
        let mut cursor = 0usize;
        for cp in &goal.checkpoints {
            let found = match cp {
                Checkpoint::Reach { screen } => (cursor..=steps.len()).find(|&k| screen_at(k) == screen),
                Checkpoint::Perform { pattern, .. } => (cursor..steps.len())
                    .find(|&j| {
                        steps[j].pattern().as_ref() == Some(pattern)
                            && (!steps[j].unchanged() || declared.contains(pattern))
                    })
                    .map(|j| j + 1),
            };
            match found {
                Some(k) => cursor = k,
                None => return Some(cp),
            }
        }
        None
    }
}

fn step_seed(seed: u64, step_index: u64) -> u64 {
    seed ^ step_index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// A point 1.5 half-diagonals from the element centre, rotated in 45° steps
/// until it falls outside the element once clamped to the screen.
fn displaced(element: &Element, angle: f64) -> Point {
    let c = element.bounds.center();
    let r = 1.5 * element.bounds.half_diagonal();
    for k in 0..8 {
        let a = angle + k as f64 * PI / 4.0;
        let p = Point::new(
            ((c.x as f64 + r * a.cos()).round() as i32).clamp(0, SCREEN_WIDTH - 1),
            ((c.y as f64 + r * a.sin()).round() as i32).clamp(0, SCREEN_HEIGHT - 1),
        );
        if !element.bounds.contains(p) {
            return p;
        }
    }
    [Point::new(0, 0), Point::new(SCREEN_WIDTH - 1, SCREEN_HEIGHT - 1)]
        .into_iter()
        .find(|p| !element.bounds.contains(*p))
        .unwrap_or(c)
}

/// Sites already declared in a baseline trajectory: the step before each GUI_BUG answer.
pub(crate) fn declared_sites(history: &Trajectory) -> Vec<ActionPattern> {
    let steps = history.steps();
    (1..steps.len()).filter(|&i| steps[i].action.is_declaration()).filter_map(|i| steps[i - 1].pattern()).collect()
}

impl ExecutorBackend for ScriptedExecutor {
    fn act(&mut self, subtask: &Subtask, obs: &Observation, tau: &Trajectory) -> Result<Action> {
        if obs.is_loading() {
            return Ok(Self::wait());
        }
        let avoid = &subtask.avoid;
        let attempted = |p: &Probe| tau.steps().iter().any(|s| s.pattern().as_ref() == Some(&p.pattern));
        if let Some(p) = &subtask.probe {
            let must = p.required && !attempted(p);
            let hint = !p.required && !subtask.goal.holds(obs) && obs.screen_id == p.pattern.screen && !attempted(p);
            if must || hint {
                return Ok(self.perform(obs, &p.pattern, p.text.as_deref(), avoid));
            }
        }
        if subtask.goal.holds(obs) {
            return Ok(Action::finished());
        }
        Ok(match (&subtask.goal, &subtask.probe) {
            (Predicate::OnScreen { screen }, _) => self.toward(obs, screen, avoid),
            (_, Some(p)) => self.perform(obs, &p.pattern, p.text.as_deref(), avoid),
            _ => Action::press_back(),
        })
    }

    fn navigate_task(&mut self, goal: &Goal, obs: &Observation, history: &Trajectory) -> Result<Action> {
        if obs.is_loading() {
            return Ok(Self::wait());
        }
        if self.profile.kind != ProfileKind::BlindNavigator {
            if let [.., a, b] = history.steps() {
                let site = b.pattern();
                if site.is_some()
                    && a.pattern() == site
                    && a.unchanged()
                    && b.unchanged()
                    && !declared_sites(history).contains(site.as_ref().expect("checked"))
                {
                    return Ok(Action::answer(crate::screen::GUI_BUG_ANSWER));
                }
            }
        }
        Ok(match self.pending_checkpoint(goal, obs, history) {
            None => Action::finished(),
            Some(Checkpoint::Reach { screen }) => self.toward(obs, screen, &[]),
            Some(Checkpoint::Perform { pattern, text }) => self.perform(obs, pattern, text.as_deref(), &[]),
        })
    }

    fn slips(&self) -> &[Slip] {
        &self.slips
    }
}
