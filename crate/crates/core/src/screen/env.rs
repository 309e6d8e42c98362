use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    hit_test, render_label, Action, ActionKind, Direction, Effect, Observation, ScreenId, Value, LOADING_SCREEN_ID,
};
use crate::defect::{ActionPattern, DefectLedger, InstrumentedModel};
use crate::error::{Error, Result};

/// Seeded loading-delay noise. Each transition with an observable effect is
/// held back for a uniformly drawn `0..=max_delay` further observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub max_delay: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
struct Loading {
    remaining: u32,
    effect: Effect,
}

/// Everything that feeds the state digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
struct EnvState {
    screen: ScreenId,
    stack: Vec<ScreenId>,
    variables: BTreeMap<String, String>,
    scrolled: bool,
    loading: Option<Loading>,
}

/// One task run's environment. Owned by a single worker.
#[derive(Debug, Clone)]
pub struct Environment {
    model: InstrumentedModel,
    noise: Option<NoiseConfig>,
    state: Option<EnvState>,
    step_index: u64,
    ledger: DefectLedger,
    history: Vec<ActionPattern>,
    rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(model: InstrumentedModel) -> Self {
        let ledger = DefectLedger::new(&model);
        Self {
            model,
            noise: None,
            state: None,
            step_index: 0,
            ledger,
            history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn with_noise(mut self, noise: Option<NoiseConfig>) -> Self {
        self.noise = noise.filter(|n| n.max_delay > 0);
        self
    }

    pub fn model(&self) -> &InstrumentedModel {
        &self.model
    }

    /// Ground truth for the current run.
    pub fn ledger(&self) -> &DefectLedger {
        &self.ledger
    }

    /// Puts the environment at the initial screen with the model's initial variables.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        self.model.model().validate()?;
        let m = self.model.model();
        self.state = Some(EnvState {
            screen: m.initial_screen.clone(),
            stack: Vec::new(),
            variables: m.variables.clone(),
            scrolled: false,
            loading: None,
        });
        self.step_index = 0;
        self.ledger = DefectLedger::new(&self.model);
        self.history.clear();
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        self.observe()
    }

    fn state(&self) -> Result<&EnvState> {
        self.state.as_ref().ok_or_else(|| Error::Lifecycle("environment used before reset".into()))
    }

    pub fn state_digest(&self) -> Result<String> {
        Ok(digest(self.state()?))
    }

    pub fn observe(&self) -> Result<Observation> {
        let state = self.state()?;
        let state_digest = digest(state);
        if state.loading.is_some() {
            return Ok(Observation {
                screen_id: ScreenId::new(LOADING_SCREEN_ID),
                screen_name: "Loading".into(),
                elements: Vec::new(),
                variables: state.variables.clone(),
                state_digest,
                step_index: self.step_index,
            });
        }
        let screen = self.model.model().screen_or_err(&state.screen)?;
        let elements = screen
            .visible(state.scrolled)
            .iter()
            .map(|e| {
                let mut e = e.clone();
                e.label = render_label(&e.label, &state.variables);
                e
            })
            .collect();
        Ok(Observation {
            screen_id: screen.id.clone(),
            screen_name: screen.name.clone(),
            elements,
            variables: state.variables.clone(),
            state_digest,
            step_index: self.step_index,
        })
    }

    /// Executes one action and returns the resulting observation.
    pub fn apply_action(&mut self, action: &Action) -> Result<Observation> {
        self.state()?;
        action.validate()?;
        let step = self.step_index;
        self.step_index += 1;

        if matches!(action.kind, ActionKind::Finished | ActionKind::Answer) {
            return self.observe();
        }

        let state = self.state.as_mut().expect("checked above");
        if let Some(loading) = state.loading.as_mut() {
            loading.remaining = loading.remaining.saturating_sub(1);
            if loading.remaining == 0 {
                let effect = state.loading.take().expect("present").effect;
                commit(state, effect);
            }
            return self.observe();
        }

        match action.kind {
            ActionKind::Click | ActionKind::LongPress | ActionKind::Type | ActionKind::Drag => {
                self.element_action(action, step)?;
            }
            ActionKind::Scroll => {
                let screen = self.model.model().screen_or_err(&state.screen)?;
                if screen.scrollable && !screen.scroll_elements.is_empty() {
                    match action.direction {
                        Some(Direction::Down) => state.scrolled = true,
                        Some(Direction::Up) => state.scrolled = false,
                        _ => {}
                    }
                }
            }
            ActionKind::PressBack => {
                if let Some(prev) = state.stack.pop() {
                    state.screen = prev;
                    state.scrolled = false;
                }
            }
            ActionKind::PressHome | ActionKind::OpenApp => {
                state.screen = self.model.model().initial_screen.clone();
                state.stack.clear();
                state.scrolled = false;
            }
            ActionKind::Finished | ActionKind::Answer => unreachable!("handled above"),
        }
        self.observe()
    }

    fn element_action(&mut self, action: &Action, step: u64) -> Result<()> {
        let state = self.state.as_mut().expect("reset");
        let Some(point) = action.point else {
            return Ok(());
        };
        let screen = self.model.model().screen_or_err(&state.screen)?;
        let Some(element) = hit_test(screen.visible(state.scrolled), point)? else {
            return Ok(());
        };
        let key = ActionPattern::new(state.screen.clone(), element.id.clone(), action.kind);
        let resolved = if element.enabled {
            self.model.resolve(&key, &self.history).map(|r| (r.effect.clone(), r.defect.map(str::to_owned)))
        } else {
            None
        };
        self.history.push(key);
        let Some((effect, defect)) = resolved else {
            return Ok(());
        };
        if let Some(d) = defect {
            self.ledger.record(&d, step)?;
        }
        let effect = match effect {
            Effect::Mutate { variable, value } => {
                Effect::Mutate { variable, value: Value::Literal(value.resolve(action)) }
            }
            other => other,
        };
        let delay = match (&self.noise, &effect) {
            (Some(n), e) if *e != Effect::None => self.rng.gen_range(0..=n.max_delay),
            _ => 0,
        };
        let state = self.state.as_mut().expect("reset");
        if delay > 0 {
            state.loading = Some(Loading { remaining: delay, effect });
        } else {
            commit(state, effect);
        }
        Ok(())
    }
}

fn commit(state: &mut EnvState, effect: Effect) {
    match effect {
        Effect::Navigate { target } => {
            let prev = std::mem::replace(&mut state.screen, target);
            state.stack.push(prev);
            state.scrolled = false;
        }
        Effect::Mutate { variable, value } => {
            let v = match value {
                Value::Literal(s) => s,
                Value::Input => String::new(),
            };
            state.variables.insert(variable, v);
        }
        Effect::None => {}
    }
}

fn digest(state: &EnvState) -> String {
    let bytes = serde_json::to_vec(state).expect("state serializes");
    hex::encode(Sha256::digest(&bytes))
}
