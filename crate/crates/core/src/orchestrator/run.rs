use serde::{Deserialize, Serialize};

use super::loop_state::{step, sync_state, LoopEvent, LoopState, StepOutput};
use crate::agents::BackendSet;
use crate::defect::InstrumentedModel;
use crate::error::Result;
use crate::screen::{ActionKind, Environment, NoiseConfig, Observation};
use crate::synth::TaskSpec;
use crate::trajectory::{Declaration, DeclarationSource, Mode, RunRecord, RunStatus, StepRecord, Trajectory};

/// Retry bound per subtask before the loop replans.
pub const DEFAULT_MAX_STEPS: usize = 6;
/// Environment actions allowed per run.
pub const DEFAULT_GLOBAL_BUDGET: usize = 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub max_steps: usize,
    pub global_budget: usize,
    pub noise: Option<NoiseConfig>,
    pub run_index: u32,
    pub bench_hash: String,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            global_budget: DEFAULT_GLOBAL_BUDGET,
            noise: None,
            run_index: 0,
            bench_hash: String::new(),
        }
    }
}

/// Drives one task run end to end against a fresh environment.
pub fn run_task(
    task: &TaskSpec,
    model: &InstrumentedModel,
    backends: &mut BackendSet,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunRecord> {
    let mut env = Environment::new(model.clone()).with_noise(opts.noise);
    let obs = env.reset(seed)?;
    let budget = if task.max_steps > 0 { opts.global_budget.min(task.max_steps) } else { opts.global_budget };
    let (steps, declarations, status) = match backends.mode {
        Mode::Orchestrated => drive_orchestrated(task, &mut env, obs, backends, budget, opts.max_steps)?,
        Mode::Baseline => drive_baseline(task, &mut env, obs, backends, budget)?,
    };
    Ok(RunRecord {
        task_id: task.id.clone(),
        run_index: opts.run_index,
        seed,
        mode: backends.mode,
        steps,
        declarations,
        status,
        ground_truth: env.ledger().trigger_log().to_vec(),
        bench_hash: opts.bench_hash.clone(),
    })
}

type Driven = (Vec<StepRecord>, Vec<Declaration>, RunStatus);

fn drive_orchestrated(
    task: &TaskSpec,
    env: &mut Environment,
    mut obs: Observation,
    backends: &mut BackendSet,
    budget: usize,
    max_steps: usize,
) -> Result<Driven> {
    let mut state = LoopState::new(task.goal(), max_steps);
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut declarations = Vec::new();
    let status = loop {
        sync_state(&mut state, &obs);
        if let Some(last) = steps.last_mut() {
            last.post.get_or_insert_with(|| obs.clone());
        }
        let out = step(&mut state, backends);
        for event in state.drain_events() {
            match event {
                LoopEvent::Verdict { step_index, verdict } => {
                    if let Some(s) = steps.get_mut(step_index as usize) {
                        s.verdict = Some(verdict);
                    }
                }
                LoopEvent::Attribution { step_index, attribution } => {
                    if let Some(s) = steps.get_mut(step_index as usize) {
                        s.attribution = Some(attribution);
                    }
                }
                LoopEvent::Declaration(d) => declarations.push(d),
                LoopEvent::Planned { .. } => {}
            }
        }
        match out {
            Err(e) => break RunStatus::Aborted { reason: e.to_string() },
            Ok(StepOutput::Noop) => break RunStatus::Completed,
            Ok(StepOutput::Action(action)) => {
                if steps.len() >= budget {
                    break RunStatus::BudgetExhausted;
                }
                let record = state.tau.last().cloned().expect("executor pushed a record");
                steps.push(record);
                obs = env.apply_action(&action)?;
            }
        }
    };
    Ok((steps, declarations, status))
}

fn drive_baseline(
    task: &TaskSpec,
    env: &mut Environment,
    mut obs: Observation,
    backends: &mut BackendSet,
    budget: usize,
) -> Result<Driven> {
    let goal = task.goal();
    let mut history = Trajectory::new();
    let mut declarations = Vec::new();
    let status = loop {
        if let Some(last) = history.last_mut() {
            last.post.get_or_insert_with(|| obs.clone());
        }
        let action = match backends.executor.navigate_task(&goal, &obs, &history) {
            Ok(a) => a,
            Err(e) => break RunStatus::Aborted { reason: e.to_string() },
        };
        if history.len() >= budget {
            break RunStatus::BudgetExhausted;
        }
        if action.is_declaration() {
            declarations.push(Declaration {
                step_index: obs.step_index,
                source: DeclarationSource::Answer,
                subtask_id: None,
                site: history.last().and_then(StepRecord::pattern),
            });
        }
        let finished = action.kind == ActionKind::Finished;
        history.push(StepRecord::new(obs.clone(), action.clone()));
        obs = env.apply_action(&action)?;
        if finished {
            history.last_mut().expect("pushed").post = Some(obs.clone());
            break RunStatus::Completed;
        }
    };
    Ok((history.steps().to_vec(), declarations, status))
}
