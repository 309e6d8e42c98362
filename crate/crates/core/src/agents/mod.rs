//! Pluggable backends for the four loop roles, the baseline single-agent
//! mode, and the remote wire adapter.
//!
//! Scripted backends only ever see the declared app model. The defect ledger
//! is not reachable from this module.

mod executor;
mod monitor;
mod planner;
mod reflector;
pub mod remote;
pub mod routing;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::{Attribution, Goal, MonitorVerdict, Outcome, Subtask};
use crate::screen::{Action, AppModel, ElementId, Observation, Point, ScreenId};
use crate::trajectory::{Mode, Trajectory};

pub use executor::{ScriptedExecutor, BOUNDARY_INPUT};
pub use monitor::{effect_observed, PassiveMonitor, RuleMonitor};
pub use planner::ScriptedPlanner;
pub use reflector::RuleReflector;

pub trait PlannerBackend: Send {
    fn plan(
        &mut self,
        goal: &Goal,
        observation: &Observation,
        history: &[Outcome],
        reflection: Option<&Attribution>,
    ) -> Result<Vec<Subtask>>;
}

pub trait ExecutorBackend: Send {
    fn act(&mut self, subtask: &Subtask, observation: &Observation, tau: &Trajectory) -> Result<Action>;

    /// Baseline mode: navigate the whole task and declare anomalies directly.
    fn navigate_task(&mut self, _goal: &Goal, _observation: &Observation, _history: &Trajectory) -> Result<Action> {
        Err(Error::Misuse("this executor has no baseline mode".into()))
    }

    /// Execution slips this executor injected, if it logs any.
    fn slips(&self) -> &[Slip] {
        &[]
    }
}

pub trait MonitorBackend: Send {
    fn check(
        &mut self,
        subtask: &Subtask,
        pre: &Observation,
        action: &Action,
        post: &Observation,
    ) -> Result<MonitorVerdict>;
}

pub trait ReflectorBackend: Send {
    fn reflect(
        &mut self,
        subtask: &Subtask,
        tau: &Trajectory,
        observation: &Observation,
        history: &[Outcome],
    ) -> Result<Attribution>;
}

/// Role placeholder for baseline mode, where only the executor runs.
#[derive(Debug, Default, Clone, Copy)]
pub struct Unused;

impl PlannerBackend for Unused {
    fn plan(&mut self, _: &Goal, _: &Observation, _: &[Outcome], _: Option<&Attribution>) -> Result<Vec<Subtask>> {
        Err(Error::Misuse("planner is unused in baseline mode".into()))
    }
}

impl MonitorBackend for Unused {
    fn check(&mut self, _: &Subtask, _: &Observation, _: &Action, _: &Observation) -> Result<MonitorVerdict> {
        Err(Error::Misuse("monitor is unused in baseline mode".into()))
    }
}

impl ReflectorBackend for Unused {
    fn reflect(&mut self, _: &Subtask, _: &Trajectory, _: &Observation, _: &[Outcome]) -> Result<Attribution> {
        Err(Error::Misuse("reflector is unused in baseline mode".into()))
    }
}

pub struct BackendSet {
    pub planner: Box<dyn PlannerBackend>,
    pub executor: Box<dyn ExecutorBackend>,
    pub monitor: Box<dyn MonitorBackend>,
    pub reflector: Box<dyn ReflectorBackend>,
    pub mode: Mode,
}

impl BackendSet {
    pub fn orchestrated(
        planner: impl PlannerBackend + 'static,
        executor: impl ExecutorBackend + 'static,
        monitor: impl MonitorBackend + 'static,
        reflector: impl ReflectorBackend + 'static,
    ) -> Self {
        Self {
            planner: Box::new(planner),
            executor: Box::new(executor),
            monitor: Box::new(monitor),
            reflector: Box::new(reflector),
            mode: Mode::Orchestrated,
        }
    }

    pub fn baseline(executor: impl ExecutorBackend + 'static) -> Self {
        Self {
            planner: Box::new(Unused),
            executor: Box::new(executor),
            monitor: Box::new(Unused),
            reflector: Box::new(Unused),
            mode: Mode::Baseline,
        }
    }

    /// Scripted backends for `profile`, reading only the declared app model.
    pub fn scripted(model: Arc<AppModel>, profile: ScriptedProfile, mode: Mode) -> Self {
        let executor = ScriptedExecutor::new(model.clone(), profile);
        match mode {
            Mode::Baseline => Self::baseline(executor),
            Mode::Orchestrated => {
                let planner = ScriptedPlanner::new(model.clone());
                let reflector = RuleReflector::new(Some(model.clone()));
                match profile.kind {
                    ProfileKind::BlindNavigator => Self::orchestrated(planner, executor, PassiveMonitor, reflector),
                    _ => Self::orchestrated(planner, executor, RuleMonitor::new(Some(model)), reflector),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    OraclePerfect,
    BlindNavigator,
    FlakyExecutor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedProfile {
    pub kind: ProfileKind,
    /// Per-click slip probability, used by the flaky profile only.
    pub jitter_probability: f64,
    pub rng_seed: u64,
}

impl ScriptedProfile {
    pub fn oracle() -> Self {
        Self { kind: ProfileKind::OraclePerfect, jitter_probability: 0.0, rng_seed: 0 }
    }

    pub fn blind() -> Self {
        Self { kind: ProfileKind::BlindNavigator, ..Self::oracle() }
    }

    pub fn flaky(jitter_probability: f64, rng_seed: u64) -> Self {
        Self { kind: ProfileKind::FlakyExecutor, jitter_probability: jitter_probability.clamp(0.0, 1.0), rng_seed }
    }
}

/// A click deliberately displaced outside its intended element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slip {
    pub step_index: u64,
    pub screen: ScreenId,
    pub intended: ElementId,
    pub point: Point,
}
