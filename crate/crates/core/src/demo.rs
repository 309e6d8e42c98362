//! Built-in demo apps, defects and seeded synthetic benches used by tests,
//! the CLI and the acceptance suite.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::routing::{route, Hop};
use crate::agents::{BackendSet, ScriptedProfile};
use crate::bundle::Bench;
use crate::defect::{inject, ActionPattern, DefectCard, DefectCategory, DefectSpec, FaultMode, InstrumentedModel};
use crate::error::Result;
use crate::orchestrator::RunOptions;
use crate::screen::{
    Action, ActionKind, AppModel, Effect, Element, ElementKind, Environment, Observation, Rect, Screen, ScreenId,
    Transition, Value,
};
use crate::synth::{
    filter_candidates, synthesize_defect_oriented, synthesize_exploration_candidates, ReproductionTrajectory, TaskSpec,
    TemplateGenerator,
};
use crate::trajectory::Mode;

const NAV_UP: Rect = Rect::new(0, 0, 200, 150);

/// Full-width list row `i`.
pub fn row(i: i32) -> Rect {
    Rect::new(40, 200 + i * 220, 1000, 180)
}

fn el(id: &str, kind: ElementKind, label: &str, i: i32) -> Element {
    Element::new(id, kind, label, row(i))
}

fn nav_up(label: &str) -> Element {
    Element::new("nav_up", ElementKind::Button, label, NAV_UP)
}

fn click(screen: &str, element: &str, effect: Effect) -> Transition {
    Transition::new(screen, element, ActionKind::Click, effect)
}

fn vars(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Home with a settings button; settings with a back button and a toggle.
pub fn two_screen_model() -> AppModel {
    AppModel {
        id: "two_screen".into(),
        screens: vec![
            Screen::new("home", "Home", vec![el("settings_btn", ElementKind::Button, "Settings", 0)]),
            Screen::new(
                "settings",
                "Settings",
                vec![
                    Element::new("back_btn", ElementKind::Button, "Navigate Up", NAV_UP),
                    el("wifi_toggle", ElementKind::Toggle, "Wi-Fi: {wifi}", 0),
                ],
            ),
        ],
        transitions: vec![
            click("home", "settings_btn", Effect::navigate("settings")),
            click("settings", "back_btn", Effect::navigate("home")),
            click("settings", "wifi_toggle", Effect::set("wifi", "on")),
        ],
        initial_screen: "home".into(),
        variables: vars(&[("wifi", "off")]),
    }
}

/// A small task manager with search, settings and a file editor.
pub fn tasks_app() -> AppModel {
    use ElementKind::*;
    let screens = vec![
        Screen::new(
            "home",
            "Home",
            vec![
                el("open_tasks_label", Label, "Open tasks: {open_tasks}", 0),
                el("search_btn", Button, "Search", 1),
                el("all_tasks", Button, "All tasks", 2),
                el("settings", Button, "Settings", 3),
                el("files", Button, "Files", 4),
            ],
        ),
        Screen::new(
            "task_list",
            "Task list",
            vec![
                nav_up("Navigate Up"),
                el("task_1", ListItem, "Buy milk", 0),
                el("task_2", ListItem, "Call the plumber", 1),
                el("clear_completed", Button, "Clear completed ({completed_tasks})", 2),
            ],
        )
        .with_scroll(vec![nav_up("Navigate Up"), el("task_3", ListItem, "Plan travel route", 0)]),
        Screen::new(
            "search",
            "Search",
            vec![nav_up("Navigate Up"), el("query", TextField, "Search tasks", 0), el("goto", Button, "Goto", 1)],
        ),
        Screen::new("results", "Results", vec![nav_up("Navigate Up"), el("result_1", ListItem, "{query}", 0)]),
        Screen::new(
            "task_detail",
            "Task detail",
            vec![nav_up("Navigate Up"), el("title", Label, "Task", 0), el("delete", Button, "Delete task", 1)],
        ),
        Screen::new(
            "settings",
            "Settings",
            vec![
                nav_up("Navigate Up"),
                el("appearance", ListItem, "Appearance", 0),
                el("backup", ListItem, "Backup", 1),
                el("network", ListItem, "Network", 2),
            ],
        ),
        Screen::new(
            "appearance",
            "Appearance",
            vec![nav_up("Navigate Up"), el("dark", Toggle, "Dark theme", 0), el("light", Toggle, "Light theme", 1)],
        ),
        Screen::new(
            "backup",
            "Backup",
            vec![
                nav_up("Navigate Up"),
                el("backup_now", Button, "Back up now", 0),
                el("backup_status", Label, "Last backup: {last_backup}", 1),
            ],
        ),
        Screen::new(
            "network",
            "Network",
            vec![nav_up("Navigate Up"), el("wifi_only", Toggle, "Wi-Fi only: {wifi_only}", 0)],
        ),
        Screen::new(
            "files",
            "Files",
            vec![
                nav_up("Navigate Up"),
                el("new_file", Button, "New file", 0),
                el("files_label", Label, "Files: {saved_files}", 1),
            ],
        ),
        Screen::new(
            "editor",
            "Editor",
            vec![
                Element::new("close", Button, "Close", NAV_UP),
                el("filename", TextField, "File name", 0),
                el("body", TextField, "Body", 1),
                el("save", Button, "Save", 2),
            ],
        ),
    ];
    let typed =
        |s: &str, e: &str, var: &str| Transition::new(s, e, ActionKind::Type, Effect::mutate(var, Value::Input));
    let transitions = vec![
        click("home", "search_btn", Effect::navigate("search")),
        click("home", "all_tasks", Effect::navigate("task_list")),
        click("home", "settings", Effect::navigate("settings")),
        click("home", "files", Effect::navigate("files")),
        click("task_list", "nav_up", Effect::navigate("home")),
        click("task_list", "task_1", Effect::navigate("task_detail")),
        click("task_list", "task_2", Effect::navigate("task_detail")),
        click("task_list", "task_3", Effect::navigate("task_detail")),
        click("task_list", "clear_completed", Effect::set("completed_tasks", "0")),
        click("search", "nav_up", Effect::navigate("home")),
        typed("search", "query", "query"),
        click("search", "goto", Effect::navigate("results")),
        click("results", "nav_up", Effect::navigate("search")),
        click("results", "result_1", Effect::navigate("task_detail")),
        click("task_detail", "nav_up", Effect::navigate("task_list")),
        click("task_detail", "delete", Effect::set("open_tasks", "2")),
        click("settings", "nav_up", Effect::navigate("home")),
        click("settings", "appearance", Effect::navigate("appearance")),
        click("settings", "backup", Effect::navigate("backup")),
        click("settings", "network", Effect::navigate("network")),
        click("appearance", "nav_up", Effect::navigate("settings")),
        click("appearance", "dark", Effect::set("theme", "dark")),
        click("appearance", "light", Effect::set("theme", "light")),
        click("backup", "nav_up", Effect::navigate("settings")),
        click("backup", "backup_now", Effect::set("last_backup", "today")),
        click("network", "nav_up", Effect::navigate("settings")),
        click("network", "wifi_only", Effect::set("wifi_only", "on")),
        click("files", "nav_up", Effect::navigate("home")),
        click("files", "new_file", Effect::navigate("editor")),
        click("editor", "close", Effect::navigate("files")),
        typed("editor", "filename", "filename"),
        typed("editor", "body", "body"),
        click("editor", "save", Effect::set("saved_files", "1")),
    ];
    AppModel {
        id: "tasks".into(),
        screens,
        transitions,
        initial_screen: "home".into(),
        variables: vars(&[
            ("open_tasks", "3"),
            ("completed_tasks", "1"),
            ("query", ""),
            ("theme", "light"),
            ("last_backup", "never"),
            ("wifi_only", "off"),
            ("saved_files", "0"),
            ("filename", ""),
            ("body", ""),
            ("draft_saved", "no"),
        ]),
    }
}

fn card(pre: &str, trigger: &str, expected: &str, actual: &str) -> DefectCard {
    DefectCard {
        preconditions: pre.into(),
        trigger_action: trigger.into(),
        expected_result: expected.into(),
        actual_result: actual.into(),
    }
}

/// One defect per report cell of the demo app.
pub fn tasks_defects() -> Vec<DefectSpec> {
    let type_in = |s: &str, e: &str| ActionPattern::new(s, e, ActionKind::Type);
    vec![
        DefectSpec {
            id: "tasks-onr-clear".into(),
            app_id: "tasks".into(),
            category: DefectCategory::UI,
            fault_mode: FaultMode::ONR,
            trigger: ActionPattern::click("task_list", "clear_completed"),
            preconditions: vec![],
            expected_effect: Effect::set("completed_tasks", "0"),
            actual_effect: Effect::None,
            description: card(
                "Task list is open",
                "Tap \"Clear completed\"",
                "Completed tasks are cleared",
                "Nothing happens",
            ),
        },
        DefectSpec {
            id: "tasks-nle-backup".into(),
            app_id: "tasks".into(),
            category: DefectCategory::UI,
            fault_mode: FaultMode::NLE,
            trigger: ActionPattern::click("settings", "backup"),
            preconditions: vec![],
            expected_effect: Effect::navigate("backup"),
            actual_effect: Effect::navigate("network"),
            description: card("Settings is open", "Tap \"Backup\"", "Backup screen opens", "Network screen opens"),
        },
        DefectSpec {
            id: "tasks-utr-backup".into(),
            app_id: "tasks".into(),
            category: DefectCategory::UI,
            fault_mode: FaultMode::UTR,
            trigger: ActionPattern::click("backup", "backup_now"),
            preconditions: vec![],
            expected_effect: Effect::set("last_backup", "today"),
            actual_effect: Effect::set("last_backup", "failed"),
            description: card(
                "Backup screen is open",
                "Tap \"Back up now\"",
                "Last backup shows today",
                "Last backup shows failed",
            ),
        },
        DefectSpec {
            id: "tasks-ux-utr-save".into(),
            app_id: "tasks".into(),
            category: DefectCategory::UX,
            fault_mode: FaultMode::UTR,
            trigger: ActionPattern::click("editor", "save"),
            preconditions: vec![ActionPattern::click("files", "new_file"), type_in("editor", "filename")],
            expected_effect: Effect::set("saved_files", "1"),
            actual_effect: Effect::set("draft_saved", "yes"),
            description: card(
                "A new file is open and named, e.g. \"report\"",
                "Tap \"Save\"",
                "The file appears in the file list",
                "Only a draft is kept",
            ),
        },
        DefectSpec {
            id: "tasks-ux-nle-results".into(),
            app_id: "tasks".into(),
            category: DefectCategory::UX,
            fault_mode: FaultMode::NLE,
            trigger: ActionPattern::click("results", "nav_up"),
            preconditions: vec![type_in("search", "query"), ActionPattern::click("search", "goto")],
            expected_effect: Effect::navigate("search"),
            actual_effect: Effect::navigate("home"),
            description: card(
                "A search for e.g. \"milk\" was submitted",
                "Tap \"Navigate Up\" on the results",
                "Returns to the search screen",
                "Jumps to the home screen",
            ),
        },
    ]
}

fn center_click(model: &AppModel, screen: &str, element: &str) -> Action {
    let e = model
        .screen(&screen.into())
        .and_then(|s| s.element(&element.into()))
        .unwrap_or_else(|| panic!("demo element {screen}/{element}"));
    Action::click(e.bounds.center()).with_target(element)
}

fn center_type(model: &AppModel, screen: &str, element: &str, text: &str) -> Action {
    let e = model
        .screen(&screen.into())
        .and_then(|s| s.element(&element.into()))
        .unwrap_or_else(|| panic!("demo element {screen}/{element}"));
    Action::type_text(e.bounds.center(), text).with_target(element)
}

/// Reproduction trajectories for [`tasks_defects`], in the same order.
pub fn tasks_repros() -> Vec<ReproductionTrajectory> {
    let m = tasks_app();
    let c = |s: &str, e: &str| center_click(&m, s, e);
    let t = |s: &str, e: &str, x: &str| center_type(&m, s, e, x);
    vec![
        ReproductionTrajectory {
            defect_id: "tasks-onr-clear".into(),
            actions: vec![c("home", "all_tasks"), c("task_list", "clear_completed")],
        },
        ReproductionTrajectory {
            defect_id: "tasks-nle-backup".into(),
            actions: vec![c("home", "settings"), c("settings", "backup")],
        },
        ReproductionTrajectory {
            defect_id: "tasks-utr-backup".into(),
            actions: vec![c("home", "settings"), c("settings", "backup"), c("backup", "backup_now")],
        },
        ReproductionTrajectory {
            defect_id: "tasks-ux-utr-save".into(),
            actions: vec![
                c("home", "files"),
                c("files", "new_file"),
                t("editor", "filename", "report"),
                c("editor", "save"),
            ],
        },
        ReproductionTrajectory {
            defect_id: "tasks-ux-nle-results".into(),
            actions: vec![
                c("home", "search_btn"),
                t("search", "query", "milk"),
                c("search", "goto"),
                c("results", "nav_up"),
            ],
        },
    ]
}

/// The demo bench: one defect-oriented task per demo defect plus one
/// retained exploration task for the ONR defect.
pub fn tasks_bench() -> Result<Bench> {
    let app = tasks_app();
    let defects = tasks_defects();
    let repros = tasks_repros();
    let mut tasks = Vec::new();
    for (d, r) in defects.iter().zip(&repros) {
        let model = inject(app.clone(), vec![d.clone()])?;
        tasks.push(synthesize_defect_oriented(r, &model)?);
    }
    let model = inject(app.clone(), vec![defects[0].clone()])?;
    let candidates = synthesize_exploration_candidates(&repros[0], &model, &mut TemplateGenerator, 2, 1)?;
    let validator = || BackendSet::scripted(Arc::new(app.clone()), ScriptedProfile::oracle(), Mode::Baseline);
    let kept = filter_candidates(&candidates, &model, validator, 0, &RunOptions::default())?;
    tasks.extend(kept.into_iter().take(1));
    Ok(Bench { apps: vec![app], defects, repros, tasks })
}

/// Click actions along the declared route from the current screen to `screen`.
pub fn route_to(env: &Environment, obs: &Observation, screen: &ScreenId) -> Vec<Action> {
    let model = env.model().model();
    route(model, &obs.screen_id, screen, &[])
        .unwrap_or_default()
        .into_iter()
        .map(|hop| match hop {
            Hop::Element { pattern, .. } => center_click(model, pattern.screen.as_str(), pattern.element.as_str()),
            Hop::Home { .. } => Action::press_home(),
        })
        .collect()
}

/// One synthetic bench entry: an app with exactly one armed defect and its task.
#[derive(Debug, Clone)]
pub struct BenchItem {
    pub model: InstrumentedModel,
    pub task: TaskSpec,
    pub repro: ReproductionTrajectory,
}

/// A random tree-shaped app: every screen but the root has a back button,
/// one link row per child, a toggle and a text field.
pub fn synthetic_app(rng: &mut ChaCha8Rng, id: &str) -> AppModel {
    let n = rng.gen_range(4..=7usize);
    let parent: Vec<usize> = (0..n).map(|i| if i == 0 { 0 } else { rng.gen_range(0..i) }).collect();
    let sid = |i: usize| format!("s{i}");
    let mut screens = Vec::new();
    let mut transitions = Vec::new();
    let mut variables = BTreeMap::new();
    for i in 0..n {
        let mut elements = Vec::new();
        if i > 0 {
            elements.push(nav_up("Navigate Up"));
            transitions.push(click(&sid(i), "nav_up", Effect::navigate(sid(parent[i]))));
        }
        let mut r = 0;
        for c in (1..n).filter(|&c| parent[c] == i) {
            let eid = format!("open_s{c}");
            elements.push(el(&eid, ElementKind::ListItem, &format!("Section {c}"), r));
            transitions.push(click(&sid(i), &eid, Effect::navigate(sid(c))));
            r += 1;
        }
        elements.push(el("toggle", ElementKind::Toggle, &format!("Option {i}: {{flag_{i}}}"), r));
        transitions.push(click(&sid(i), "toggle", Effect::set(format!("flag_{i}"), "on")));
        elements.push(el("field", ElementKind::TextField, "Name", r + 1));
        transitions.push(Transition::new(
            sid(i),
            "field",
            ActionKind::Type,
            Effect::mutate(format!("text_{i}"), Value::Input),
        ));
        variables.insert(format!("flag_{i}"), "off".to_owned());
        variables.insert(format!("text_{i}"), String::new());
        let name = if i == 0 { "Home".to_owned() } else { format!("Section {i}") };
        screens.push(Screen::new(sid(i), name, elements));
    }
    AppModel { id: id.to_owned(), screens, transitions, initial_screen: sid(0).into(), variables }
}

fn synthetic_defect(rng: &mut ChaCha8Rng, app: &AppModel, id: &str, multi_action: bool) -> DefectSpec {
    let t = rng.gen_range(0..app.screens.len());
    let screen = app.screens[t].id.clone();
    let navs: Vec<&Transition> =
        app.transitions_from(&screen).filter(|tr| matches!(tr.effect, Effect::Navigate { .. })).collect();
    let toggle = ActionPattern::click(screen.clone(), "toggle");
    let field = ActionPattern::new(screen.clone(), "field", ActionKind::Type);
    let modes: &[FaultMode] = match (multi_action, navs.is_empty()) {
        (false, false) => &[FaultMode::ONR, FaultMode::UTR, FaultMode::NLE],
        (false, true) => &[FaultMode::ONR, FaultMode::UTR],
        (true, false) => &[FaultMode::UTR, FaultMode::NLE],
        (true, true) => &[FaultMode::UTR],
    };
    let mode = *modes.choose(rng).expect("non-empty");
    let flag = format!("flag_{}", &screen.as_str()[1..]);
    let (trigger, expected, actual) = match mode {
        FaultMode::ONR => (toggle.clone(), Effect::set(flag, "on"), Effect::None),
        FaultMode::UTR => (toggle.clone(), Effect::set(flag.clone(), "on"), Effect::set(flag, "error")),
        FaultMode::NLE => {
            let tr = navs.choose(rng).expect("non-empty");
            let expected = tr.effect.clone();
            let others: Vec<&Screen> =
                app.screens.iter().filter(|s| s.id != screen && Some(&s.id) != expected.nav_target()).collect();
            let wrong = others.choose(rng).map(|s| s.id.clone()).unwrap_or_else(|| screen.clone());
            (
                ActionPattern::new(screen.clone(), tr.element.clone(), tr.action),
                expected,
                Effect::Navigate { target: wrong },
            )
        }
    };
    let preconditions = if multi_action {
        match (mode, rng.gen_bool(0.5)) {
            (FaultMode::NLE, true) => vec![field, toggle],
            (FaultMode::NLE, false) => vec![toggle],
            _ => vec![field],
        }
    } else {
        Vec::new()
    };
    DefectSpec {
        id: id.to_owned(),
        app_id: app.id.clone(),
        category: if multi_action { DefectCategory::UX } else { DefectCategory::UI },
        fault_mode: mode,
        trigger,
        preconditions,
        expected_effect: expected,
        actual_effect: actual,
        description: DefectCard::default(),
    }
}

/// Actions from the initial screen through the preconditions to the trigger.
pub fn repro_for(model: &AppModel, defect: &DefectSpec, text: &str) -> ReproductionTrajectory {
    let mut actions: Vec<Action> = route(model, &model.initial_screen, &defect.trigger.screen, &[])
        .unwrap_or_default()
        .into_iter()
        .filter_map(|hop| match hop {
            Hop::Element { pattern, .. } => {
                Some(center_click(model, pattern.screen.as_str(), pattern.element.as_str()))
            }
            Hop::Home { .. } => None,
        })
        .collect();
    for p in defect.preconditions.iter().chain(std::iter::once(&defect.trigger)) {
        actions.push(match p.action {
            ActionKind::Type => center_type(model, p.screen.as_str(), p.element.as_str(), text),
            _ => center_click(model, p.screen.as_str(), p.element.as_str()),
        });
    }
    ReproductionTrajectory { defect_id: defect.id.clone(), actions }
}

/// `n` seeded single-app tasks, each with one single-action (UI) or
/// multi-action (UX) defect and a defect-oriented instruction.
pub fn synthetic_bench(seed: u64, n: usize, multi_action: bool) -> Result<Vec<BenchItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let app = synthetic_app(&mut rng, &format!("synth{i:02}"));
        let defect = synthetic_defect(&mut rng, &app, &format!("synth{i:02}-d"), multi_action);
        let repro = repro_for(&app, &defect, "hello");
        let model = inject(app, vec![defect])?;
        let mut task = synthesize_defect_oriented(&repro, &model)?;
        task.id = format!("synth{i:02}");
        out.push(BenchItem { model, task, repro });
    }
    Ok(out)
}
