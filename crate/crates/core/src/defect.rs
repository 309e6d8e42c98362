//! Defect injection: defect cards, the instrumented transition lookup and the
//! hidden ground-truth ledger.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::screen::{Action, ActionKind, AppModel, Effect, ElementId, Observation, ScreenId};
use crate::trajectory::Trajectory;

/// An `(screen, element, action kind)` pattern. Payloads are not part of the
/// pattern, so typed values may differ from the defect card's example.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionPattern {
    pub screen: ScreenId,
    pub element: ElementId,
    pub action: ActionKind,
}

impl ActionPattern {
    pub fn new(screen: impl Into<ScreenId>, element: impl Into<ElementId>, action: ActionKind) -> Self {
        Self { screen: screen.into(), element: element.into(), action }
    }

    pub fn click(screen: impl Into<ScreenId>, element: impl Into<ElementId>) -> Self {
        Self::new(screen, element, ActionKind::Click)
    }

    /// Pattern addressed by `action` on the pre-action observation, if it hits an element.
    pub fn resolve(pre: &Observation, action: &Action) -> Option<Self> {
        if pre.is_loading() {
            return None;
        }
        pre.resolve(action).map(|e| Self::new(pre.screen_id.clone(), e.id.clone(), action.kind))
    }
}

impl fmt::Display for ActionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} `{}` on `{}`", self.action, self.element, self.screen)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefectCategory {
    UI,
    UX,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultMode {
    /// Operation no response.
    ONR,
    /// Unexpected task result.
    UTR,
    /// Navigation logic error.
    NLE,
}

impl fmt::Display for DefectCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DefectCategory::UI => "UI",
            DefectCategory::UX => "UX",
        })
    }
}

impl fmt::Display for FaultMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultMode::ONR => "ONR",
            FaultMode::UTR => "UTR",
            FaultMode::NLE => "NLE",
        })
    }
}

/// Prose fields of a defect card.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefectCard {
    pub preconditions: String,
    pub trigger_action: String,
    pub expected_result: String,
    #[serde(default)]
    pub actual_result: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub id: String,
    #[serde(default)]
    pub app_id: String,
    pub category: DefectCategory,
    pub fault_mode: FaultMode,
    pub trigger: ActionPattern,
    #[serde(default)]
    pub preconditions: Vec<ActionPattern>,
    pub expected_effect: Effect,
    pub actual_effect: Effect,
    #[serde(default)]
    pub description: DefectCard,
}

impl DefectSpec {
    pub fn is_single_action(&self) -> bool {
        self.preconditions.is_empty()
    }

    /// Table-column key such as `UI-ONR`.
    pub fn cell(&self) -> String {
        format!("{}-{}", self.category, self.fault_mode)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let id = &self.id;
        if self.category == DefectCategory::UX && self.fault_mode == FaultMode::ONR {
            out.push(format!("defect `{id}`: ONR applies only to UI defects"));
        }
        if self.expected_effect == self.actual_effect {
            out.push(format!("defect `{id}`: expected and actual effects are identical"));
        }
        match self.fault_mode {
            FaultMode::ONR => {
                if self.actual_effect != Effect::None {
                    out.push(format!("defect `{id}`: ONR must have no actual effect"));
                }
            }
            FaultMode::NLE => {
                if !matches!(self.expected_effect, Effect::Navigate { .. })
                    || !matches!(self.actual_effect, Effect::Navigate { .. })
                {
                    out.push(format!("defect `{id}`: NLE expects and yields a navigation"));
                }
            }
            FaultMode::UTR => {
                if !matches!(self.expected_effect, Effect::Mutate { .. }) {
                    out.push(format!("defect `{id}`: UTR expects a state mutation"));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Number of `preconditions` matched, in order, as a subsequence of `history`.
pub fn matched_prefix<'a>(
    preconditions: &[ActionPattern],
    history: impl IntoIterator<Item = &'a ActionPattern>,
) -> usize {
    let mut matched = 0;
    for p in history {
        if matched == preconditions.len() {
            break;
        }
        if *p == preconditions[matched] {
            matched += 1;
        }
    }
    matched
}

/// How many of the defect's preconditions the trajectory's actions satisfy, in order.
pub fn precondition_progress(trajectory: &Trajectory, defect: &DefectSpec) -> usize {
    let patterns = trajectory.patterns();
    matched_prefix(&defect.preconditions, patterns.iter())
}

/// An app model whose transition lookup consults armed defects first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentedModel {
    model: AppModel,
    defects: Vec<DefectSpec>,
}

/// Result of an instrumented transition lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved<'a> {
    pub effect: &'a Effect,
    pub defect: Option<&'a str>,
}

/// Arms `defects` on `model`.
pub fn inject(model: AppModel, defects: Vec<DefectSpec>) -> Result<InstrumentedModel> {
    let mut problems = model.violations();
    for d in &defects {
        problems.extend(d.violations());
        for p in std::iter::once(&d.trigger).chain(d.preconditions.iter()) {
            match model.screen(&p.screen) {
                None => problems.push(format!("defect `{}` references unknown screen `{}`", d.id, p.screen)),
                Some(s) if s.element(&p.element).is_none() => problems
                    .push(format!("defect `{}` references unknown element `{}` on `{}`", d.id, p.element, p.screen)),
                _ => {}
            }
        }
        match model.transition(&d.trigger.screen, &d.trigger.element, d.trigger.action) {
            None => problems.push(format!("defect `{}` trigger {} has no declared transition", d.id, d.trigger)),
            Some(declared) if *declared != d.expected_effect => {
                problems.push(format!("defect `{}` expected effect differs from the declared transition", d.id))
            }
            _ => {}
        }
        if let Effect::Navigate { target } = &d.actual_effect {
            if model.screen(target).is_none() {
                problems.push(format!("defect `{}` actual effect targets missing screen `{target}`", d.id));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    for (i, a) in defects.iter().enumerate() {
        for b in &defects[i + 1..] {
            if a.id == b.id {
                return Err(Error::Conflict(format!("duplicate defect id `{}`", a.id)));
            }
            if a.trigger == b.trigger {
                return Err(Error::Conflict(format!("defects `{}` and `{}` share trigger {}", a.id, b.id, a.trigger)));
            }
        }
    }
    Ok(InstrumentedModel { model, defects })
}

impl InstrumentedModel {
    /// The model with no armed defects.
    pub fn plain(model: AppModel) -> Self {
        Self { model, defects: Vec::new() }
    }

    pub fn model(&self) -> &AppModel {
        &self.model
    }

    pub fn defects(&self) -> &[DefectSpec] {
        &self.defects
    }

    pub fn defect(&self, id: &str) -> Option<&DefectSpec> {
        self.defects.iter().find(|d| d.id == id)
    }

    /// Effect of acting with `key` given the run's earlier element actions.
    pub fn resolve<'a>(&'a self, key: &ActionPattern, history: &[ActionPattern]) -> Option<Resolved<'a>> {
        let declared = self.model.transition(&key.screen, &key.element, key.action)?;
        for d in &self.defects {
            if d.trigger == *key && matched_prefix(&d.preconditions, history) == d.preconditions.len() {
                return Some(Resolved { effect: &d.actual_effect, defect: Some(&d.id) });
            }
        }
        Some(Resolved { effect: declared, defect: None })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub defect_id: String,
    pub step_index: u64,
}

/// Ground truth for one run. Never exposed to agents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefectLedger {
    armed: Vec<String>,
    trigger_log: Vec<TriggerEvent>,
}

impl DefectLedger {
    pub fn new(model: &InstrumentedModel) -> Self {
        Self { armed: model.defects().iter().map(|d| d.id.clone()).collect(), trigger_log: Vec::new() }
    }

    pub fn armed(&self) -> &[String] {
        &self.armed
    }

    pub fn trigger_log(&self) -> &[TriggerEvent] {
        &self.trigger_log
    }

    pub(crate) fn record(&mut self, defect_id: &str, step_index: u64) -> Result<()> {
        if !self.armed.iter().any(|a| a == defect_id) {
            return Err(Error::InternalInvariant(format!("trigger of unarmed defect `{defect_id}`")));
        }
        if let Some(last) = self.trigger_log.last() {
            if last.step_index >= step_index {
                return Err(Error::InternalInvariant(format!(
                    "trigger log step {step_index} does not follow {}",
                    last.step_index
                )));
            }
        }
        self.trigger_log.push(TriggerEvent { defect_id: defect_id.to_owned(), step_index });
        Ok(())
    }

    /// First step at which the defect fired, if it ever did.
    pub fn ground_truth_triggered(&self, defect_id: &str) -> Result<Option<u64>> {
        if !self.armed.iter().any(|a| a == defect_id) {
            return Err(Error::lookup("defect", defect_id));
        }
        Ok(self.trigger_log.iter().find(|e| e.defect_id == defect_id).map(|e| e.step_index))
    }

    /// Preconditions of an armed defect matched so far by `trajectory`.
    pub fn precondition_progress(&self, trajectory: &Trajectory, defect: &DefectSpec) -> Result<usize> {
        if !self.armed.contains(&defect.id) {
            return Err(Error::lookup("defect", defect.id.as_str()));
        }
        Ok(precondition_progress(trajectory, defect))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str, e: &str) -> ActionPattern {
        ActionPattern::click(s, e)
    }

    #[test]
    fn prefix_matching_allows_interleaving() {
        let pre = vec![p("a", "x"), p("b", "y")];
        assert_eq!(matched_prefix(&pre, [].iter()), 0);
        assert_eq!(matched_prefix(&pre, [p("a", "x"), p("z", "z"), p("b", "y")].iter()), 2);
        assert_eq!(matched_prefix(&pre, [p("b", "y"), p("a", "x")].iter()), 1);
        assert_eq!(matched_prefix(&[], [p("b", "y")].iter()), 0);
    }

    #[test]
    fn prefix_matching_equals_brute_force_over_prefixes() {
        use rand::{Rng, SeedableRng};
        let alphabet = [p("a", "x"), p("b", "y"), p("c", "z")];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let pre: Vec<_> = (0..rng.gen_range(0..4)).map(|_| alphabet[rng.gen_range(0..3)].clone()).collect();
            let hist: Vec<_> = (0..rng.gen_range(0..8)).map(|_| alphabet[rng.gen_range(0..3)].clone()).collect();
            // largest k such that pre[..k] is a subsequence of hist, by exhaustive subset search
            let mut best = 0;
            for mask in 0u32..(1 << hist.len()) {
                let chosen: Vec<_> = (0..hist.len()).filter(|i| mask & (1 << i) != 0).map(|i| &hist[i]).collect();
                let k = chosen.len();
                if k <= pre.len() && chosen.iter().zip(&pre).all(|(a, b)| *a == b) {
                    best = best.max(k);
                }
            }
            assert_eq!(matched_prefix(&pre, hist.iter()), best, "pre={pre:?} hist={hist:?}");
        }
    }

    #[test]
    fn category_rules() {
        let mut d = DefectSpec {
            id: "d".into(),
            app_id: String::new(),
            category: DefectCategory::UX,
            fault_mode: FaultMode::ONR,
            trigger: p("s", "e"),
            preconditions: vec![],
            expected_effect: Effect::navigate("t"),
            actual_effect: Effect::None,
            description: DefectCard::default(),
        };
        assert!(d.validate().is_err());
        d.category = DefectCategory::UI;
        assert!(d.validate().is_ok());
        d.actual_effect = Effect::navigate("t");
        assert!(d.validate().is_err());
    }

    #[test]
    fn ledger_lookup_and_ordering() {
        let mut ledger = DefectLedger { armed: vec!["d1".into()], trigger_log: vec![] };
        assert_eq!(ledger.ground_truth_triggered("d1").unwrap(), None);
        assert!(ledger.ground_truth_triggered("nope").is_err());
        ledger.record("d1", 4).unwrap();
        ledger.record("d1", 6).unwrap();
        assert!(ledger.record("d1", 6).is_err());
        assert!(ledger.record("d2", 9).is_err());
        assert_eq!(ledger.ground_truth_triggered("d1").unwrap(), Some(4));
    }
}
