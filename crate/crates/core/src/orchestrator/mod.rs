//! The Planner / Executor / Monitor / Reflector control loop.

mod loop_state;
mod run;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::defect::ActionPattern;
use crate::screen::{ElementId, Marker, Observation, ScreenId};

pub use loop_state::{step, step_traced, sync_state, Flags, LoopEvent, LoopState, StepOutput};
pub use run::{run_task, RunOptions, DEFAULT_GLOBAL_BUDGET, DEFAULT_MAX_STEPS};

/// Structured condition on an observation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Predicate {
    OnScreen {
        screen: ScreenId,
    },
    ElementPresent {
        element: ElementId,
    },
    VariableEquals {
        variable: String,
        value: String,
    },
    /// Holds on any observation.
    Any,
}

impl Predicate {
    pub fn on_screen(screen: impl Into<ScreenId>) -> Self {
        Predicate::OnScreen { screen: screen.into() }
    }

    pub fn holds(&self, obs: &Observation) -> bool {
        match self {
            Predicate::OnScreen { screen } => obs.screen_id == *screen,
            Predicate::ElementPresent { element } => obs.element(element).is_some(),
            Predicate::VariableEquals { variable, value } => obs.variables.get(variable) == Some(value),
            Predicate::Any => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskKind {
    Navigation,
    TestIntent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentPattern {
    /// Reach the same functionality through a different entry point.
    AlternativePaths,
    /// Feed edge-case input such as special characters.
    BoundaryConditions,
    /// Check that an element responds and the state changes accordingly.
    StateValidation,
}

impl IntentPattern {
    /// Round-robin order used by the scripted planner.
    pub const ROTATION: [IntentPattern; 3] =
        [IntentPattern::StateValidation, IntentPattern::BoundaryConditions, IntentPattern::AlternativePaths];
}

/// A concrete element action a subtask asks the executor to perform.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Probe {
    pub pattern: ActionPattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// The executor must perform the probe even when the goal already holds.
    /// Unrequired probes are route hints.
    #[serde(default)]
    pub required: bool,
}

impl Probe {
    pub fn hint(pattern: ActionPattern) -> Self {
        Self { pattern, text: None, required: false }
    }

    pub fn required(pattern: ActionPattern, text: Option<String>) -> Self {
        Self { pattern, text, required: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Subtask {
    pub id: String,
    pub kind: SubtaskKind,
    pub instruction: String,
    pub goal: Predicate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent_pattern: Option<IntentPattern>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<Probe>,
    /// Transitions the executor must not route through.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub avoid: Vec<ActionPattern>,
    /// Index of the task checkpoint this subtask serves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<usize>,
    /// Completing this subtask completes its checkpoint.
    #[serde(default)]
    pub finishes_checkpoint: bool,
}

impl Subtask {
    pub fn navigation(id: impl Into<String>, instruction: impl Into<String>, goal: Predicate) -> Self {
        Self {
            id: id.into(),
            kind: SubtaskKind::Navigation,
            instruction: instruction.into(),
            goal,
            intent_pattern: None,
            probe: None,
            avoid: Vec::new(),
            checkpoint: None,
            finishes_checkpoint: false,
        }
    }

    pub fn test_intent(
        id: impl Into<String>,
        instruction: impl Into<String>,
        goal: Predicate,
        pattern: IntentPattern,
    ) -> Self {
        Self { kind: SubtaskKind::TestIntent, intent_pattern: Some(pattern), ..Self::navigation(id, instruction, goal) }
    }

    pub fn with_probe(mut self, probe: Probe) -> Self {
        self.probe = Some(probe);
        self
    }

    pub fn is_test_intent(&self) -> bool {
        self.kind == SubtaskKind::TestIntent
    }

    /// `kind = test_intent` exactly when an intent pattern is present.
    pub fn is_well_formed(&self) -> bool {
        self.is_test_intent() == self.intent_pattern.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Done,
    Fail,
    Continue,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Done => "DONE",
            Verdict::Fail => "FAIL",
            Verdict::Continue => "CONTINUE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    #[serde(rename = "verdict")]
    pub value: Verdict,
    #[serde(default)]
    pub note: String,
}

impl MonitorVerdict {
    pub fn new(value: Verdict, note: impl Into<String>) -> Self {
        Self { value, note: note.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttributionKind {
    AgentError,
    GuiBug,
}

impl fmt::Display for AttributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttributionKind::AgentError => "AGENT_ERROR",
            AttributionKind::GuiBug => "GUI_BUG",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub steps: Vec<u64>,
    pub markers: Vec<Marker>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    pub value: AttributionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<String>,
    #[serde(default)]
    pub evidence: Evidence,
    /// Element action blamed for a GUI_BUG.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<ActionPattern>,
}

impl Attribution {
    pub fn agent_error(suggestion: impl Into<String>, evidence: Evidence) -> Self {
        Self { value: AttributionKind::AgentError, suggestion: Some(suggestion.into()), evidence, site: None }
    }

    pub fn gui_bug(site: Option<ActionPattern>, evidence: Evidence) -> Self {
        Self { value: AttributionKind::GuiBug, suggestion: None, evidence, site }
    }

    pub fn is_gui_bug(&self) -> bool {
        self.value == AttributionKind::GuiBug
    }
}

/// History entry `(subtask, DONE | FAIL)`, with the reflector's attribution for failures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub subtask: Subtask,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<Attribution>,
}

/// Structured milestone of a task, consumed by scripted agents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Checkpoint {
    Reach {
        screen: ScreenId,
    },
    Perform {
        pattern: ActionPattern,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
    },
}

/// Navigation goal handed to the planner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub instruction: String,
    pub checkpoints: Vec<Checkpoint>,
}
