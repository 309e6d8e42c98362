use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use guitest_core::agents::remote::{
    Loopback, RemoteAdapter, RemoteExecutor, RemoteMonitor, RemotePlanner, RemoteReflector, Role, ScriptedServer,
    Server,
};
use guitest_core::agents::{BackendSet, ExecutorBackend, ScriptedExecutor, ScriptedProfile};
use guitest_core::defect::{inject, ActionPattern, InstrumentedModel};
use guitest_core::demo;
use guitest_core::orchestrator::{run_task, Predicate, RunOptions, Subtask};
use guitest_core::screen::{ActionKind, AppModel, Environment, Observation};
use guitest_core::synth::{synthesize_defect_oriented, TaskSpec};
use guitest_core::trajectory::{Mode, RunRecord, Trajectory};

fn tasks_item(defect: usize) -> (InstrumentedModel, TaskSpec) {
    let d = demo::tasks_defects().remove(defect);
    let model = inject(demo::tasks_app(), vec![d]).unwrap();
    let task = synthesize_defect_oriented(&demo::tasks_repros()[defect], &model).unwrap();
    (model, task)
}

fn home(model: &AppModel) -> Observation {
    Environment::new(InstrumentedModel::plain(model.clone())).reset(0).unwrap()
}

fn to_settings() -> Subtask {
    Subtask::navigation("s0", "open Settings", Predicate::on_screen("settings"))
}

#[test]
fn oracle_clicks_the_element_centre() {
    let m = demo::tasks_app();
    let obs = home(&m);
    let mut ex = ScriptedExecutor::new(Arc::new(m.clone()), ScriptedProfile::oracle());
    let a = ex.act(&to_settings(), &obs, &Trajectory::new()).unwrap();
    let e = obs.element(&"settings".into()).unwrap();
    assert_eq!(a.kind, ActionKind::Click);
    assert_eq!(a.point, Some(e.bounds.center()));
    assert_eq!(a.target.unwrap().as_str(), "settings");
}

#[test]
fn certain_jitter_always_lands_outside_the_element() {
    let m = demo::tasks_app();
    let mut obs = home(&m);
    let bounds = obs.element(&"settings".into()).unwrap().bounds;
    let mut ex = ScriptedExecutor::new(Arc::new(m.clone()), ScriptedProfile::flaky(1.0, 17));
    for k in 0..500 {
        obs.step_index = k;
        let p = ex.act(&to_settings(), &obs, &Trajectory::new()).unwrap().point.unwrap();
        assert!(!bounds.contains(p) && p.in_coordinate_space(), "{p}");
    }
    assert_eq!(ex.slips().len(), 500);
}

#[test]
fn slip_rate_matches_the_configured_probability() {
    let m = demo::tasks_app();
    let mut obs = home(&m);
    let bounds = obs.element(&"settings".into()).unwrap().bounds;
    let mut ex = ScriptedExecutor::new(Arc::new(m.clone()), ScriptedProfile::flaky(0.3, 5));
    let n = 1000;
    let outside = (0..n)
        .filter(|&k| {
            obs.step_index = k;
            !bounds.contains(ex.act(&to_settings(), &obs, &Trajectory::new()).unwrap().point.unwrap())
        })
        .count();
    let rate = outside as f64 / n as f64;
    assert!((rate - 0.3).abs() <= 0.05, "{rate}");
    assert_eq!(ex.slips().len(), outside);
}

#[test]
fn unreachable_goal_presses_back() {
    let m = demo::two_screen_model();
    let obs = home(&m);
    let mut ex = ScriptedExecutor::new(Arc::new(m.clone()), ScriptedProfile::oracle());
    let only_edge = ActionPattern::click("home", "settings_btn");
    let mut sub = Subtask::navigation("s", "open settings", Predicate::on_screen("settings"));
    sub.avoid = vec![only_edge];
    assert_eq!(ex.act(&sub, &obs, &Trajectory::new()).unwrap().kind, ActionKind::PressBack);
}

#[test]
fn executor_is_deterministic_per_seed() {
    let m = demo::tasks_app();
    let mut obs = home(&m);
    let mut seq = |seed| {
        let mut ex = ScriptedExecutor::new(Arc::new(m.clone()), ScriptedProfile::flaky(0.5, seed));
        (0..50)
            .map(|k| {
                obs.step_index = k;
                ex.act(&to_settings(), &obs, &Trajectory::new()).unwrap()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(seq(3), seq(3));
    assert_ne!(seq(3), seq(4));
}

fn baseline_run(model: &InstrumentedModel, task: &TaskSpec, profile: ScriptedProfile) -> RunRecord {
    let mut b = BackendSet::scripted(Arc::new(model.model().clone()), profile, Mode::Baseline);
    run_task(task, model, &mut b, 1, &RunOptions::default()).unwrap()
}

#[test]
fn baseline_declares_a_repeated_no_response() {
    let (model, task) = tasks_item(0);
    let run = baseline_run(&model, &task, ScriptedProfile::oracle());
    assert_eq!(run.declarations.len(), 1);
    let d = &run.declarations[0];
    assert_eq!(d.site.as_ref(), Some(&model.defects()[0].trigger));
    // the answer follows two identical unchanged actions on the trigger
    let s = run.steps.iter().position(|s| s.action.is_declaration()).unwrap();
    assert!(s >= 2 && run.steps[s - 1].unchanged() && run.steps[s - 2].unchanged());
    assert_eq!(run.steps[s - 1].pattern(), run.steps[s - 2].pattern());
}

#[test]
fn baseline_stays_silent_without_defects() {
    let (model, task) = tasks_item(0);
    let plain = InstrumentedModel::plain(model.model().clone());
    assert!(baseline_run(&plain, &task, ScriptedProfile::oracle()).declarations.is_empty());
    for item in demo::synthetic_bench(8, 10, true).unwrap() {
        let plain = InstrumentedModel::plain(item.model.model().clone());
        assert!(baseline_run(&plain, &item.task, ScriptedProfile::oracle()).declarations.is_empty());
    }
}

#[test]
fn blind_baseline_never_declares_and_sites_are_unique() {
    for item in demo::synthetic_bench(9, 12, false).unwrap() {
        assert!(baseline_run(&item.model, &item.task, ScriptedProfile::blind()).declarations.is_empty());
        let run = baseline_run(&item.model, &item.task, ScriptedProfile::oracle());
        let sites: Vec<_> = run.declarations.iter().map(|d| d.site.clone()).collect();
        let unique: HashSet<_> = sites.iter().cloned().collect();
        assert_eq!(sites.len(), unique.len());
    }
}

type Log = Arc<Mutex<Vec<String>>>;

/// Remote backends backed by scripted servers, recording every line sent.
fn remote_set(model: &Arc<AppModel>, profile: ScriptedProfile, log: &Log) -> BackendSet {
    let adapter = |role| {
        let mut server = ScriptedServer::new(model.clone(), profile);
        let log = log.clone();
        let t = Loopback::new(move |line| {
            log.lock().unwrap().push(line.to_owned());
            Some(server.handle_line(line))
        });
        let mut a = RemoteAdapter::new(role, t);
        a.handshake().unwrap();
        a
    };
    BackendSet::orchestrated(
        RemotePlanner(adapter(Role::Planner)),
        RemoteExecutor(adapter(Role::Executor)),
        RemoteMonitor(adapter(Role::Monitor)),
        RemoteReflector(adapter(Role::Reflector)),
    )
}

#[test]
fn remote_loopback_matches_local_run() {
    for defect in 0..5 {
        let (model, task) = tasks_item(defect);
        let m = Arc::new(model.model().clone());
        let local = {
            let mut b = BackendSet::scripted(m.clone(), ScriptedProfile::oracle(), Mode::Orchestrated);
            run_task(&task, &model, &mut b, 2, &RunOptions::default()).unwrap()
        };
        let log: Log = Arc::default();
        let remote =
            run_task(&task, &model, &mut remote_set(&m, ScriptedProfile::oracle(), &log), 2, &RunOptions::default())
                .unwrap();
        assert_eq!(local.to_jsonl().unwrap(), remote.to_jsonl().unwrap(), "{}", task.id);
    }
}

#[test]
fn agents_never_see_ground_truth() {
    let log: Log = Arc::default();
    let defects = demo::tasks_defects();
    for defect in 0..5 {
        let (model, task) = tasks_item(defect);
        let m = Arc::new(model.model().clone());
        run_task(&task, &model, &mut remote_set(&m, ScriptedProfile::oracle(), &log), 0, &RunOptions::default())
            .unwrap();
    }
    let lines = log.lock().unwrap();
    assert!(!lines.is_empty());
    for line in lines.iter() {
        for needle in ["ground_truth", "trigger_log", "armed", "fault_mode", "actual_effect", "expected_effect"] {
            assert!(!line.contains(needle), "{needle} leaked: {line}");
        }
        for d in &defects {
            assert!(!line.contains(d.id.as_str()), "defect id leaked");
        }
    }
}

#[test]
fn agent_sources_do_not_reference_the_ledger() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("src/agents");
    let mut checked = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let src = std::fs::read_to_string(&path).unwrap();
        for needle in ["DefectLedger", "InstrumentedModel", "trigger_log", "ground_truth"] {
            assert!(!src.contains(needle), "{} mentions {needle}", path.display());
        }
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn unreachable_armed_defect_changes_nothing() {
    let (clean, task) = tasks_item(0);
    let mut both = clean.defects().to_vec();
    // a multi-action defect whose preconditions this task never performs
    both.push(demo::tasks_defects().remove(4));
    let armed = inject(demo::tasks_app(), both).unwrap();
    let actions = |model: &InstrumentedModel| {
        let mut b =
            BackendSet::scripted(Arc::new(model.model().clone()), ScriptedProfile::flaky(0.2, 4), Mode::Orchestrated);
        let run = run_task(&task, model, &mut b, 4, &RunOptions::default()).unwrap();
        assert!(run.ground_truth.iter().all(|g| g.defect_id == "tasks-onr-clear"));
        run.steps.into_iter().map(|s| s.action).collect::<Vec<_>>()
    };
    assert_eq!(actions(&clean), actions(&armed));
}
