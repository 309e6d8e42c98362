//! Bench task synthesis from reproduction trajectories: step-level
//! defect-oriented tasks, and exploration-oriented candidates combined from
//! pre- and post-defect intents, then filtered by a validation run.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::agents::BackendSet;
use crate::defect::{ActionPattern, InstrumentedModel};
use crate::error::{Error, Result};
use crate::orchestrator::{run_task, Checkpoint, Goal, RunOptions};
use crate::screen::{render_label, Action, ActionKind, AppModel, Effect, Environment, ScreenId};
use crate::trajectory::RunRecord;

/// Default per-task action allowance.
pub const DEFAULT_TASK_STEPS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    DefectOriented,
    ExplorationOriented,
}

/// One bench task, aimed at exactly one defect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub app_id: String,
    pub defect_id: String,
    pub kind: TaskKind,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_intent: Option<String>,
    /// Action allowance for one run of this task; 0 means the global budget.
    pub max_steps: usize,
    /// Structured milestones mirroring the instruction.
    #[serde(default)]
    pub checkpoints: Vec<Checkpoint>,
    /// Content hash of the validation run that retained this task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_hash: Option<String>,
}

impl TaskSpec {
    pub fn goal(&self) -> Goal {
        Goal { instruction: self.instruction.clone(), checkpoints: self.checkpoints.clone() }
    }
}

/// Human-collected action sequence from the initial screen to the trigger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReproductionTrajectory {
    pub defect_id: String,
    pub actions: Vec<Action>,
}

impl ReproductionTrajectory {
    /// Replays on a fresh environment and returns the element pattern of each
    /// action. Fails unless the defect fires at the final step.
    pub fn replay(&self, model: &InstrumentedModel) -> Result<Vec<(ActionPattern, Action)>> {
        if self.actions.is_empty() {
            return Err(Error::Synthesis(format!("reproduction for `{}` is empty", self.defect_id)));
        }
        if model.defect(&self.defect_id).is_none() {
            return Err(Error::Synthesis(format!("defect `{}` is not armed", self.defect_id)));
        }
        let mut env = Environment::new(model.clone());
        let mut obs = env.reset(0)?;
        let mut out = Vec::new();
        for (i, action) in self.actions.iter().enumerate() {
            let pattern = ActionPattern::resolve(&obs, action);
            let Some(pattern) = pattern else {
                return Err(Error::Synthesis(format!(
                    "reproduction step {} of `{}` does not address an element",
                    i + 1,
                    self.defect_id
                )));
            };
            out.push((pattern, action.clone()));
            obs = env.apply_action(action)?;
        }
        let last = self.actions.len() as u64 - 1;
        let fired = env.ledger().trigger_log().iter().any(|t| t.defect_id == self.defect_id && t.step_index == last);
        if !fired {
            return Err(Error::Synthesis(format!(
                "replaying the reproduction does not trigger `{}` at its final step",
                self.defect_id
            )));
        }
        Ok(out)
    }
}

/// A navigation intent and the screen it aims at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub text: String,
    pub target: ScreenId,
}

/// Source of natural-language intents around a defect location.
pub trait IntentGenerator {
    /// Goals whose completion lands in the trigger screen's region of the graph.
    fn pre_intents(&mut self, model: &AppModel, trigger_screen: &ScreenId, n: usize) -> Result<Vec<Intent>>;
    /// Continuations after the defect-adjacent step.
    fn post_intents(&mut self, model: &AppModel, trigger: &ActionPattern, n: usize) -> Result<Vec<Intent>>;
}

/// Template intents over screen names, ordered by graph distance from the trigger.
#[derive(Debug, Clone, Default)]
pub struct TemplateGenerator;

const PRE_TEMPLATES: [&str; 3] = [
    "Open {screen} and explore each item there",
    "Go to {screen} and review what it shows",
    "Find {screen} and check its options",
];

const POST_TEMPLATES: [&str; 3] =
    ["then continue to {screen}", "afterwards move on to {screen}", "and finally visit {screen}"];

fn fill(template: &str, screen: &str) -> String {
    template.replace("{screen}", screen)
}

fn shortfall(kind: &str, want: usize, got: usize) -> Error {
    Error::Synthesis(format!("generator yields {got} distinct {kind} intents, {want} requested"))
}

/// Screens ordered by undirected hop distance from `from`, ties in declaration order.
pub fn by_distance(model: &AppModel, from: &ScreenId) -> Vec<ScreenId> {
    let mut adj: BTreeMap<&ScreenId, BTreeSet<&ScreenId>> = BTreeMap::new();
    for t in &model.transitions {
        if let Effect::Navigate { target } = &t.effect {
            adj.entry(&t.screen).or_default().insert(target);
            adj.entry(target).or_default().insert(&t.screen);
        }
    }
    let mut dist: BTreeMap<&ScreenId, usize> = BTreeMap::new();
    dist.insert(from, 0);
    let mut q = VecDeque::from([from]);
    while let Some(s) = q.pop_front() {
        let d = dist[s];
        for n in adj.get(s).into_iter().flatten() {
            if !dist.contains_key(n) {
                dist.insert(n, d + 1);
                q.push_back(n);
            }
        }
    }
    let mut out: Vec<(usize, usize, ScreenId)> =
        model.screens.iter().enumerate().filter_map(|(i, s)| dist.get(&s.id).map(|d| (*d, i, s.id.clone()))).collect();
    out.sort();
    out.into_iter().map(|(_, _, s)| s).collect()
}

impl IntentGenerator for TemplateGenerator {
    fn pre_intents(&mut self, model: &AppModel, trigger_screen: &ScreenId, n: usize) -> Result<Vec<Intent>> {
        let targets = by_distance(model, trigger_screen);
        if targets.len() < n {
            return Err(shortfall("pre-defect", n, targets.len()));
        }
        Ok(targets
            .into_iter()
            .take(n)
            .enumerate()
            .map(|(i, s)| Intent {
                text: fill(PRE_TEMPLATES[i % PRE_TEMPLATES.len()], &screen_name(model, &s)),
                target: s,
            })
            .collect())
    }

    fn post_intents(&mut self, model: &AppModel, trigger: &ActionPattern, n: usize) -> Result<Vec<Intent>> {
        let mut targets: Vec<ScreenId> = Vec::new();
        let mut add = |s: &ScreenId| {
            if !targets.contains(s) {
                targets.push(s.clone());
            }
        };
        if let Some(t) =
            model.transition(&trigger.screen, &trigger.element, trigger.action).and_then(Effect::nav_target)
        {
            add(t);
        }
        for t in model.transitions_from(&trigger.screen) {
            if let Some(dest) = t.effect.nav_target() {
                if *dest != trigger.screen {
                    add(dest);
                }
            }
        }
        add(&model.initial_screen);
        for s in by_distance(model, &trigger.screen) {
            add(&s);
        }
        targets.retain(|s| *s != trigger.screen);
        if targets.len() < n {
            return Err(shortfall("post-defect", n, targets.len()));
        }
        Ok(targets
            .into_iter()
            .take(n)
            .enumerate()
            .map(|(i, s)| Intent {
                text: fill(POST_TEMPLATES[i % POST_TEMPLATES.len()], &screen_name(model, &s)),
                target: s,
            })
            .collect())
    }
}

fn screen_name(model: &AppModel, id: &ScreenId) -> String {
    model.screen(id).map(|s| s.name.clone()).unwrap_or_else(|| id.to_string())
}

fn element_label(model: &AppModel, p: &ActionPattern) -> String {
    model
        .screen(&p.screen)
        .and_then(|s| s.element(&p.element))
        .map(|e| render_label(&e.label, &model.variables))
        .filter(|l| !l.trim().is_empty())
        .unwrap_or_else(|| p.element.to_string())
}

fn describe(model: &AppModel, p: &ActionPattern, action: &Action) -> String {
    let label = element_label(model, p);
    let screen = screen_name(model, &p.screen);
    match p.action {
        ActionKind::Type => {
            format!("type \"{}\" into \"{label}\" on {screen}", action.text.as_deref().unwrap_or_default())
        }
        ActionKind::LongPress => format!("long-press \"{label}\" on {screen}"),
        ActionKind::Drag => format!("drag \"{label}\" on {screen}"),
        _ => format!("tap \"{label}\" on {screen}"),
    }
}

/// Abstracts a validated reproduction into a step-level instruction.
pub fn synthesize_defect_oriented(repro: &ReproductionTrajectory, model: &InstrumentedModel) -> Result<TaskSpec> {
    let steps = repro.replay(model)?;
    let defect = model.defect(&repro.defect_id).expect("replay checks the defect");
    let app = model.model();
    let instruction = steps
        .iter()
        .enumerate()
        .map(|(i, (p, a))| format!("{}. {}", i + 1, capitalize(&describe(app, p, a))))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(TaskSpec {
        id: format!("{}-defect", repro.defect_id),
        app_id: defect.app_id.clone(),
        defect_id: repro.defect_id.clone(),
        kind: TaskKind::DefectOriented,
        instruction,
        pre_intent: None,
        post_intent: None,
        max_steps: DEFAULT_TASK_STEPS,
        checkpoints: steps
            .into_iter()
            .map(|(pattern, a)| Checkpoint::Perform {
                text: if pattern.action == ActionKind::Type { a.text } else { None },
                pattern,
            })
            .collect(),
        validation_hash: None,
    })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Every pairing of `n_pre` pre-defect and `n_post` post-defect intents.
pub fn synthesize_exploration_candidates(
    repro: &ReproductionTrajectory,
    model: &InstrumentedModel,
    generator: &mut dyn IntentGenerator,
    n_pre: usize,
    n_post: usize,
) -> Result<Vec<TaskSpec>> {
    if n_pre == 0 || n_post == 0 {
        return Err(Error::Input("n_pre and n_post must both be at least 1".into()));
    }
    repro.replay(model)?;
    let defect = model.defect(&repro.defect_id).expect("replay checks the defect");
    let app = model.model();
    let pre = generator.pre_intents(app, &defect.trigger.screen, n_pre)?;
    let post = generator.post_intents(app, &defect.trigger, n_post)?;
    if pre.len() < n_pre || distinct(&pre) < n_pre {
        return Err(shortfall("pre-defect", n_pre, distinct(&pre)));
    }
    if post.len() < n_post || distinct(&post) < n_post {
        return Err(shortfall("post-defect", n_post, distinct(&post)));
    }
    let mut out = Vec::with_capacity(n_pre * n_post);
    for (i, a) in pre.iter().take(n_pre).enumerate() {
        for (j, b) in post.iter().take(n_post).enumerate() {
            out.push(TaskSpec {
                id: format!("{}-explore-{}-{}", repro.defect_id, i + 1, j + 1),
                app_id: defect.app_id.clone(),
                defect_id: repro.defect_id.clone(),
                kind: TaskKind::ExplorationOriented,
                instruction: format!("{}, {}.", a.text, b.text),
                pre_intent: Some(a.text.clone()),
                post_intent: Some(b.text.clone()),
                max_steps: DEFAULT_TASK_STEPS,
                checkpoints: vec![
                    Checkpoint::Reach { screen: a.target.clone() },
                    Checkpoint::Reach { screen: b.target.clone() },
                ],
                validation_hash: None,
            });
        }
    }
    Ok(out)
}

fn distinct(intents: &[Intent]) -> usize {
    intents.iter().map(|i| &i.text).collect::<BTreeSet<_>>().len()
}

/// A candidate with its validation run.
#[derive(Debug, Clone)]
pub struct Validated {
    pub task: TaskSpec,
    pub run: RunRecord,
    pub retained: bool,
}

/// Whether the run has a step whose pre-observation is on `screen`.
pub fn visits_screen(run: &RunRecord, screen: &ScreenId) -> bool {
    run.steps.iter().any(|s| s.pre.screen_id == *screen)
}

/// Runs one candidate under `validator` and decides retention.
pub fn validate_candidate(
    task: &TaskSpec,
    model: &InstrumentedModel,
    validator: &mut BackendSet,
    seed: u64,
    opts: &RunOptions,
) -> Result<Validated> {
    let defect = model.defect(&task.defect_id).ok_or_else(|| Error::lookup("defect", task.defect_id.as_str()))?;
    let run = run_task(task, model, validator, seed, opts)?;
    let retained = visits_screen(&run, &defect.trigger.screen);
    let mut task = task.clone();
    if retained {
        task.validation_hash = Some(run.content_hash()?);
    }
    Ok(Validated { task, run, retained })
}

/// Keeps the candidates whose validation run reaches the trigger screen.
pub fn filter_candidates(
    candidates: &[TaskSpec],
    model: &InstrumentedModel,
    mut validator: impl FnMut() -> BackendSet,
    seed: u64,
    opts: &RunOptions,
) -> Result<Vec<TaskSpec>> {
    let mut kept = Vec::new();
    for c in candidates {
        let v = validate_candidate(c, model, &mut validator(), crate::derive_seed(seed, &c.id, 0), opts)?;
        if v.retained {
            kept.push(v.task);
        }
    }
    Ok(kept)
}

/// Per-defect synthesis bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthLogEntry {
    pub defect_id: String,
    pub candidates: usize,
    pub retained: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retained_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl SynthLogEntry {
    pub fn summary(&self) -> String {
        format!("{}: {} candidates, {} retained", self.defect_id, self.candidates, self.retained)
    }
}

/// Requested bench shape, e.g. 26 defects over 12 apps in 143 tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchTargets {
    pub apps: usize,
    pub defects: usize,
    pub tasks: usize,
    pub single_action_fraction: f64,
}

/// What a bench actually contains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchComposition {
    pub apps: usize,
    pub defects: usize,
    pub tasks: usize,
    pub single_action_tasks: usize,
    pub single_action_fraction: f64,
}

impl BenchComposition {
    pub fn of(tasks: &[TaskSpec], models: &[InstrumentedModel]) -> Self {
        let single = tasks
            .iter()
            .filter(|t| models.iter().find_map(|m| m.defect(&t.defect_id)).is_some_and(|d| d.is_single_action()))
            .count();
        let apps: BTreeSet<&str> = tasks.iter().map(|t| t.app_id.as_str()).collect();
        let defects: BTreeSet<&str> = tasks.iter().map(|t| t.defect_id.as_str()).collect();
        Self {
            apps: apps.len(),
            defects: defects.len(),
            tasks: tasks.len(),
            single_action_tasks: single,
            single_action_fraction: if tasks.is_empty() { 0.0 } else { single as f64 / tasks.len() as f64 },
        }
    }

    /// Human-readable comparison against requested targets. Nothing is fabricated to close gaps.
    pub fn report(&self, targets: &BenchTargets) -> String {
        format!(
            "apps {}/{}, defects {}/{}, tasks {}/{}, single-action {:.2}% (target {:.2}%)",
            self.apps,
            targets.apps,
            self.defects,
            targets.defects,
            self.tasks,
            targets.tasks,
            self.single_action_fraction * 100.0,
            targets.single_action_fraction * 100.0
        )
    }
}
