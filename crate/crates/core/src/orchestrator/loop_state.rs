use serde::{Deserialize, Serialize};

use super::{Attribution, Goal, MonitorVerdict, Outcome, Subtask, Verdict};
use crate::agents::BackendSet;
use crate::error::{Error, Result};
use crate::screen::{Action, Observation};
use crate::trajectory::{Declaration, DeclarationSource, StepRecord, Trajectory};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flags {
    pub replan: bool,
    pub next_subtask: bool,
    pub check_status: bool,
    pub reflect: bool,
    pub send_action: bool,
}

impl Flags {
    /// Number of set driver flags (everything except `send_action`).
    pub fn drivers(&self) -> usize {
        [self.replan, self.next_subtask, self.check_status, self.reflect].iter().filter(|f| **f).count()
    }

    /// The executor branch runs only when no driver flag is set.
    pub fn executor_ready(&self) -> bool {
        self.drivers() == 0
    }
}

/// Things that happened inside `step`, drained by the run driver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoopEvent {
    Planned { plan_id: u64, len: usize },
    Verdict { step_index: u64, verdict: MonitorVerdict },
    Attribution { step_index: u64, attribution: Attribution },
    Declaration(Declaration),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutput {
    Action(Action),
    Noop,
}

#[derive(Debug, Clone)]
pub struct LoopState {
    pub flags: Flags,
    pub goal: Goal,
    pub current_plan: Vec<Subtask>,
    /// Incremented every time the planner produces a new plan.
    pub plan_id: u64,
    cursor: usize,
    pub current_subtask: Option<Subtask>,
    /// Step records of the current subtask.
    pub tau: Trajectory,
    pub history: Vec<Outcome>,
    pub reflection: Option<Attribution>,
    pub max_steps: usize,
    observation: Option<Observation>,
    events: Vec<LoopEvent>,
}

impl LoopState {
    pub fn new(goal: Goal, max_steps: usize) -> Self {
        Self {
            flags: Flags { replan: true, ..Flags::default() },
            goal,
            current_plan: Vec::new(),
            plan_id: 0,
            cursor: 0,
            current_subtask: None,
            tau: Trajectory::new(),
            history: Vec::new(),
            reflection: None,
            max_steps,
            observation: None,
            events: Vec::new(),
        }
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.observation.as_ref()
    }

    /// Subtasks of the current plan not yet fetched.
    pub fn remaining_plan(&self) -> &[Subtask] {
        &self.current_plan[self.cursor.min(self.current_plan.len())..]
    }

    pub fn drain_events(&mut self) -> Vec<LoopEvent> {
        std::mem::take(&mut self.events)
    }
}

/// Shares the latest observation with every agent context and completes the
/// pending step record.
pub fn sync_state(state: &mut LoopState, observation: &Observation) {
    if let Some(last) = state.tau.last_mut() {
        if last.post.is_none() {
            last.post = Some(observation.clone());
        }
    }
    state.observation = Some(observation.clone());
}

/// One invocation of the control loop: runs until an action is ready or the plan is exhausted.
pub fn step(state: &mut LoopState, backends: &mut BackendSet) -> Result<StepOutput> {
    step_traced(state, backends, |_| {})
}

/// Like [`step`], reporting the flag configuration on entry to every block.
pub fn step_traced(
    state: &mut LoopState,
    backends: &mut BackendSet,
    mut trace: impl FnMut(&Flags),
) -> Result<StepOutput> {
    let obs = state.observation.clone().ok_or_else(|| Error::Precondition("step called before sync_state".into()))?;
    state.flags.send_action = false;
    let mut emitted = None;

    let mut guard = |flags: &Flags| {
        trace(flags);
        if flags.drivers() > 1 {
            return Err(Error::InternalInvariant(format!("several driver flags set: {flags:?}")));
        }
        Ok(())
    };

    while !state.flags.send_action {
        guard(&state.flags)?;
        if state.flags.replan {
            let plan = backends
                .planner
                .plan(&state.goal, &obs, &state.history, state.reflection.as_ref())
                .map_err(|e| Error::Orchestration(format!("planner: {e}")))?;
            state.current_plan = plan;
            state.cursor = 0;
            state.plan_id += 1;
            state.events.push(LoopEvent::Planned { plan_id: state.plan_id, len: state.current_plan.len() });
            state.flags.replan = false;
            state.flags.next_subtask = true;
        }

        guard(&state.flags)?;
        if state.flags.next_subtask {
            let Some(next) = state.current_plan.get(state.cursor).cloned() else {
                state.current_subtask = None;
                return Ok(StepOutput::Noop);
            };
            state.cursor += 1;
            state.current_subtask = Some(next);
            state.flags.next_subtask = false;
        }

        let subtask =
            state.current_subtask.clone().ok_or_else(|| Error::InternalInvariant("no current subtask".into()))?;

        guard(&state.flags)?;
        if state.flags.check_status {
            let last = state
                .tau
                .last()
                .ok_or_else(|| Error::InternalInvariant("check_status with empty trajectory".into()))?;
            let verdict = backends
                .monitor
                .check(&subtask, &last.pre, &last.action, &obs)
                .map_err(|e| Error::Orchestration(format!("monitor: {e}")))?;
            let step_index = last.step_index();
            state.tau.last_mut().expect("non-empty").verdict = Some(verdict.clone());
            state.events.push(LoopEvent::Verdict { step_index, verdict: verdict.clone() });
            match verdict.value {
                Verdict::Done => {
                    state.history.push(Outcome { subtask: subtask.clone(), verdict: Verdict::Done, attribution: None });
                    state.tau.clear();
                    state.flags.next_subtask = true;
                    state.flags.check_status = false;
                }
                Verdict::Fail => {
                    state.history.push(Outcome { subtask: subtask.clone(), verdict: Verdict::Fail, attribution: None });
                    state.flags.reflect = true;
                    state.flags.check_status = false;
                }
                Verdict::Continue => state.flags.check_status = false,
            }
        }

        guard(&state.flags)?;
        if state.flags.reflect {
            if state.tau.is_empty() {
                return Err(Error::Precondition("reflection over an empty trajectory".into()));
            }
            let r = backends
                .reflector
                .reflect(&subtask, &state.tau, &obs, &state.history)
                .map_err(|e| Error::Orchestration(format!("reflector: {e}")))?;
            let step_index = state.tau.last().expect("non-empty").step_index();
            state.tau.last_mut().expect("non-empty").attribution = Some(r.clone());
            if let Some(h) = state.history.last_mut() {
                h.attribution = Some(r.clone());
            }
            state.events.push(LoopEvent::Attribution { step_index, attribution: r.clone() });
            if r.is_gui_bug() {
                state.events.push(LoopEvent::Declaration(Declaration {
                    step_index,
                    source: DeclarationSource::Reflector,
                    subtask_id: Some(subtask.id.clone()),
                    site: r.site.clone(),
                }));
            }
            let self_correct = !r.is_gui_bug() && state.tau.len() < state.max_steps;
            state.reflection = Some(r);
            if self_correct {
                state.flags.reflect = false;
            } else if subtask.is_test_intent() {
                // failed probes never reshape the plan; move on from the current state
                state.tau.clear();
                state.flags.reflect = false;
                state.flags.next_subtask = true;
            } else {
                state.tau.clear();
                state.flags.replan = true;
                state.flags.reflect = false;
            }
        }

        guard(&state.flags)?;
        if state.flags.executor_ready() {
            let action = backends
                .executor
                .act(&subtask, &obs, &state.tau)
                .map_err(|e| Error::Orchestration(format!("executor: {e}")))?;
            let mut record = StepRecord::new(obs.clone(), action.clone());
            record.subtask_id = Some(subtask.id.clone());
            state.tau.push(record);
            state.flags.check_status = true;
            state.flags.send_action = true;
            emitted = Some(action);
        }
    }

    emitted.map(StepOutput::Action).ok_or_else(|| Error::InternalInvariant("send_action set without an action".into()))
}
