//! Shortest routes over the declared navigation graph.

use std::collections::{BTreeMap, VecDeque};

use crate::defect::ActionPattern;
use crate::screen::{ActionKind, AppModel, Effect, ScreenId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Hop {
    /// Act on an element whose declared transition navigates to `dest`.
    Element { pattern: ActionPattern, dest: ScreenId },
    /// System home button, always leading to the initial screen.
    Home { dest: ScreenId },
}

impl Hop {
    pub fn dest(&self) -> &ScreenId {
        match self {
            Hop::Element { dest, .. } | Hop::Home { dest } => dest,
        }
    }
}

/// Outgoing hops of `screen` in declaration order, home last.
pub fn hops_from(model: &AppModel, screen: &ScreenId, avoid: &[ActionPattern]) -> Vec<Hop> {
    let mut out = Vec::new();
    let Some(s) = model.screen(screen) else {
        return out;
    };
    for t in model.transitions_from(screen) {
        if !matches!(t.action, ActionKind::Click | ActionKind::LongPress) {
            continue;
        }
        let Effect::Navigate { target } = &t.effect else {
            continue;
        };
        if !s.element(&t.element).is_some_and(|e| e.enabled) {
            continue;
        }
        let pattern = ActionPattern::new(screen.clone(), t.element.clone(), t.action);
        if avoid.contains(&pattern) {
            continue;
        }
        out.push(Hop::Element { pattern, dest: target.clone() });
    }
    if *screen != model.initial_screen {
        out.push(Hop::Home { dest: model.initial_screen.clone() });
    }
    out
}

/// Breadth-first shortest route; `Some(vec![])` when already there.
pub fn route(model: &AppModel, from: &ScreenId, to: &ScreenId, avoid: &[ActionPattern]) -> Option<Vec<Hop>> {
    model.screen(from)?;
    if from == to {
        return Some(Vec::new());
    }
    let mut prev: BTreeMap<ScreenId, (ScreenId, Hop)> = BTreeMap::new();
    let mut queue = VecDeque::from([from.clone()]);
    while let Some(cur) = queue.pop_front() {
        for hop in hops_from(model, &cur, avoid) {
            let dest = hop.dest().clone();
            if dest == *from || prev.contains_key(&dest) {
                continue;
            }
            prev.insert(dest.clone(), (cur.clone(), hop));
            if dest == *to {
                let mut path = Vec::new();
                let mut at = dest;
                while at != *from {
                    let (p, h) = prev.remove(&at).expect("linked");
                    path.push(h);
                    at = p;
                }
                path.reverse();
                return Some(path);
            }
            queue.push_back(dest);
        }
    }
    None
}

/// Screens reachable from `from` without the home shortcut.
pub fn forward_reachable(model: &AppModel, from: &ScreenId) -> Vec<ScreenId> {
    let mut seen = vec![from.clone()];
    let mut queue = VecDeque::from([from.clone()]);
    while let Some(cur) = queue.pop_front() {
        for hop in hops_from(model, &cur, &[]) {
            if let Hop::Element { dest, .. } = hop {
                if !seen.contains(&dest) {
                    seen.push(dest.clone());
                    queue.push_back(dest);
                }
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo;

    #[test]
    fn route_prefers_shortest() {
        let m = demo::tasks_app();
        let r = route(&m, &"home".into(), &"backup".into(), &[]).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].dest(), "backup");
        assert_eq!(route(&m, &"home".into(), &"home".into(), &[]).unwrap(), vec![]);
    }

    #[test]
    fn route_uses_home_shortcut_and_avoids() {
        let m = demo::tasks_app();
        let r = route(&m, &"network".into(), &"search".into(), &[]).unwrap();
        assert!(matches!(r[0], Hop::Home { .. }));
        let edge = ActionPattern::click("settings", "backup");
        assert!(route(&m, &"home".into(), &"backup".into(), &[edge]).is_none());
    }
}
