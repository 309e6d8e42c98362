use std::sync::Arc;

use guitest_core::agents::{BackendSet, ScriptedProfile};
use guitest_core::defect::{inject, ActionPattern, DefectCategory, DefectSpec, FaultMode, InstrumentedModel};
use guitest_core::demo;
use guitest_core::eval::f1;
use guitest_core::eval::{
    aggregate, evaluate_run, score_task, verify_single_action, PassK, TaskResult, DEFAULT_WINDOW,
};
use guitest_core::eval::{JudgeBackend, JudgeValue, RuleJudge};
use guitest_core::orchestrator::{run_task, RunOptions};
use guitest_core::screen::{
    Action, ActionKind, AppModel, Effect, Element, ElementKind, Environment, Point, Rect, Screen, Transition,
};
use guitest_core::synth::synthesize_defect_oriented;
use guitest_core::trajectory::{Mode, RunRecord, RunStatus, StepRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn three_screen() -> AppModel {
    let c = |s: &str, e: &str, eff| Transition::new(s, e, ActionKind::Click, eff);
    let back = || Element::new("back", ElementKind::Button, "Back", Rect::new(0, 0, 200, 150));
    AppModel {
        id: "three".into(),
        screens: vec![
            Screen::new(
                "a",
                "A",
                vec![
                    Element::new("to_b", ElementKind::Button, "B", demo::row(0)),
                    Element::new("to_c", ElementKind::Button, "C", demo::row(1)),
                    Element::new("flag", ElementKind::Toggle, "Flag", demo::row(2)),
                ],
            ),
            Screen::new("b", "B", vec![back(), Element::new("ok", ElementKind::Button, "OK", demo::row(0))]),
            Screen::new("c", "C", vec![back()]),
        ],
        transitions: vec![
            c("a", "to_b", Effect::navigate("b")),
            c("a", "to_c", Effect::navigate("c")),
            c("a", "flag", Effect::set("flag", "on")),
            c("b", "back", Effect::navigate("a")),
            c("b", "ok", Effect::set("ok", "yes")),
            c("c", "back", Effect::navigate("a")),
        ],
        initial_screen: "a".into(),
        variables: [("flag".to_owned(), "off".to_owned()), ("ok".to_owned(), "no".to_owned())].into_iter().collect(),
    }
}

fn onr(trigger: ActionPattern, expected: Effect) -> DefectSpec {
    DefectSpec {
        id: format!("onr-{}-{}", trigger.screen, trigger.element),
        app_id: "three".into(),
        category: DefectCategory::UI,
        fault_mode: FaultMode::ONR,
        trigger,
        preconditions: vec![],
        expected_effect: expected,
        actual_effect: Effect::None,
        description: Default::default(),
    }
}

/// Applies `actions` in a fresh environment and records them as a run.
fn record(model: &InstrumentedModel, actions: &[Action]) -> RunRecord {
    let mut env = Environment::new(model.clone());
    let mut obs = env.reset(0).unwrap();
    let mut steps = Vec::new();
    for a in actions {
        let mut s = StepRecord::new(obs.clone(), a.clone());
        obs = env.apply_action(a).unwrap();
        s.post = Some(obs.clone());
        steps.push(s);
    }
    RunRecord {
        task_id: "t".into(),
        run_index: 0,
        seed: 0,
        mode: Mode::Orchestrated,
        steps,
        declarations: vec![],
        status: RunStatus::Completed,
        ground_truth: env.ledger().trigger_log().to_vec(),
        bench_hash: String::new(),
    }
}

fn click(x: i32, y: i32) -> Action {
    Action::click(Point::new(x, y))
}

#[test]
fn single_action_verification_examples() {
    let m = three_screen();
    let d = onr(ActionPattern::click("a", "flag"), Effect::set("flag", "on"));
    let model = inject(m, vec![d.clone()]).unwrap();
    let flag = demo::row(2).center();
    assert!(verify_single_action(&record(&model, &[click(flag.x, flag.y)]), &d).unwrap());
    // a near miss just below the toggle
    let below = Point::new(flag.x, demo::row(2).y + demo::row(2).height + 10);
    assert!(!verify_single_action(&record(&model, &[click(below.x, below.y)]), &d).unwrap());
    // right element, wrong action kind
    assert!(!verify_single_action(&record(&model, &[Action::long_press(flag)]), &d).unwrap());
}

#[test]
fn single_action_verification_agrees_with_pairwise_oracle() {
    let m = three_screen();
    let sites: Vec<(ActionPattern, Effect)> = m
        .transitions
        .iter()
        .map(|t| (ActionPattern::new(t.screen.clone(), t.element.clone(), t.action), t.effect.clone()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut positives = 0;
    for (site, eff) in sites {
        let d = onr(site, eff);
        let model = inject(m.clone(), vec![d.clone()]).unwrap();
        for _ in 0..60 {
            let actions: Vec<Action> = (0..rng.gen_range(1..8))
                .map(|_| match rng.gen_range(0..10) {
                    0 => Action::press_back(),
                    1 => Action::long_press(Point::new(rng.gen_range(0..1080), rng.gen_range(0..1000))),
                    _ => click(rng.gen_range(0..1080), rng.gen_range(0..1000)),
                })
                .collect();
            let run = record(&model, &actions);
            // oracle: any step whose pre shows the trigger screen and whose click lands in the trigger bounds
            let oracle = run.steps.iter().any(|s| {
                s.pre.screen_id == d.trigger.screen
                    && s.action.kind == d.trigger.action
                    && s.pre.elements.iter().any(|e| {
                        e.id == d.trigger.element
                            && s.action.point.is_some_and(|p| {
                                p.x >= e.bounds.x
                                    && p.x < e.bounds.x + e.bounds.width
                                    && p.y >= e.bounds.y
                                    && p.y < e.bounds.y + e.bounds.height
                            })
                    })
            });
            assert_eq!(verify_single_action(&run, &d).unwrap(), oracle, "{actions:?}");
            positives += oracle as usize;
        }
    }
    assert!(positives > 10, "{positives}");
}

fn save_run() -> (RunRecord, DefectSpec) {
    let d = demo::tasks_defects().remove(3);
    let model = inject(demo::tasks_app(), vec![d.clone()]).unwrap();
    let task = synthesize_defect_oriented(&demo::tasks_repros()[3], &model).unwrap();
    let mut b = BackendSet::scripted(Arc::new(model.model().clone()), ScriptedProfile::oracle(), Mode::Orchestrated);
    (run_task(&task, &model, &mut b, 0, &RunOptions::default()).unwrap(), d)
}

#[test]
fn judge_ignores_typed_payloads() {
    let (mut run, d) = save_run();
    assert_eq!(RuleJudge.judge(&run, &d).unwrap().value, JudgeValue::GuiBug);
    let typed = run.steps.iter_mut().find(|s| s.action.kind == ActionKind::Type).unwrap();
    typed.action.text = Some("quarterly notes".into());
    let v = RuleJudge.judge(&run, &d).unwrap();
    assert_eq!(v.value, JudgeValue::GuiBug);
    assert!(v.checklist.all());
}

#[test]
fn judge_reports_a_missing_trigger_as_executor_error() {
    let (mut run, d) = save_run();
    let t = run.steps.iter().position(|s| s.pattern().as_ref() == Some(&d.trigger)).unwrap();
    run.steps.truncate(t);
    let v = RuleJudge.judge(&run, &d).unwrap();
    assert_eq!(v.value, JudgeValue::ExecutorError);
    assert!(v.checklist.precondition_ok && !v.checklist.trigger_ok);
}

#[test]
fn detection_requires_declaration_near_the_trigger() {
    let (mut run, d) = save_run();
    let r = evaluate_run(&run, &d, &mut RuleJudge, DEFAULT_WINDOW);
    assert!(r.detected && r.triggered && r.declared);
    let t = r.trigger_step.unwrap();
    run.declarations.truncate(1);
    run.declarations[0].step_index = t - 1;
    assert!(evaluate_run(&run, &d, &mut RuleJudge, 1).detected);
    assert!(!evaluate_run(&run, &d, &mut RuleJudge, 0).detected);
    run.declarations.clear();
    assert!(!evaluate_run(&run, &d, &mut RuleJudge, DEFAULT_WINDOW).detected);
}

fn result(task: &str, run: u32, cell: &str, declared: bool, detected: bool) -> TaskResult {
    TaskResult {
        task_id: task.into(),
        run_index: run,
        cell: cell.into(),
        triggered: detected,
        declared,
        detected,
        declaration_steps: if declared { vec![1] } else { vec![] },
        trigger_step: detected.then_some(1),
        judge_failed: false,
    }
}

#[test]
fn score_task_examples() {
    let runs = [
        result("t", 0, "UI-ONR", true, true),
        result("t", 1, "UI-ONR", true, false),
        result("t", 2, "UI-ONR", false, false),
    ];
    let s = score_task::<f64>(&runs).unwrap();
    assert_eq!(s.pass1_detected, 1.0 / 3.0);
    assert_eq!(s.pass1_declared, 2.0 / 3.0);
    assert!(s.pass3_detected && s.pass3_declared);
    assert!(score_task::<f64>(&[]).is_err());
    assert!(score_task::<f64>(&[runs[0].clone(), result("u", 1, "UI-ONR", true, true)]).is_err());
}

#[test]
fn aggregate_worked_example() {
    let rs = [
        result("a", 0, "UI-ONR", true, true),
        result("b", 0, "UI-ONR", true, true),
        result("c", 0, "UI-NLE", true, false),
        result("d", 0, "UI-NLE", false, false),
    ];
    let r = aggregate::<f64>(&rs, PassK::Pass1).unwrap();
    let o = r.overall().unwrap();
    assert_eq!(o.recall, 0.5);
    assert_eq!(o.precision, Some(2.0 / 3.0));
    assert!((o.f1.unwrap() - 4.0 / 7.0).abs() < 1e-12);
    assert_eq!(r.cells["UI-ONR"].recall, 1.0);
    assert_eq!(r.cells["UI-NLE"].precision, Some(0.0));
    assert_eq!(r.cells["UI-NLE"].f1, None);
}

#[test]
fn aggregate_without_declarations_has_no_precision() {
    let rs = [result("a", 0, "UI-ONR", false, false), result("b", 0, "UX-UTR", false, false)];
    let o = *aggregate::<f64>(&rs, PassK::Pass1).unwrap().overall().unwrap();
    assert_eq!((o.recall, o.precision, o.f1), (0.0, None, None));
}

#[test]
fn aggregate_rejects_bad_inputs() {
    let dup = [result("a", 0, "UI-ONR", true, true), result("a", 0, "UI-ONR", true, true)];
    assert!(aggregate::<f64>(&dup, PassK::Pass1).is_err());
    let two = [result("a", 0, "UI-ONR", true, true), result("a", 1, "UI-ONR", true, true)];
    assert!(aggregate::<f64>(&two, PassK::Pass3).is_err());
    let ragged = [
        result("a", 0, "UI-ONR", true, true),
        result("a", 1, "UI-ONR", true, true),
        result("b", 0, "UI-ONR", true, true),
    ];
    assert!(aggregate::<f64>(&ragged, PassK::Pass1).is_err());
}

#[test]
fn f32_and_f64_reports_agree() {
    let rs = [
        result("a", 0, "UI-ONR", true, true),
        result("b", 0, "UI-ONR", true, false),
        result("c", 0, "UX-NLE", false, false),
    ];
    let a = aggregate::<f64>(&rs, PassK::Pass1).unwrap();
    let b = aggregate::<f32>(&rs, PassK::Pass1).unwrap();
    for (k, c) in &a.cells {
        assert!((c.recall - b.cells[k].recall as f64).abs() < 1e-6);
    }
}

fn arb_results() -> impl Strategy<Value = Vec<(bool, bool, u8)>> {
    // per task: three runs of (declared, detected-if-declared) packed with a cell index
    prop::collection::vec((any::<bool>(), any::<bool>(), 0u8..5), 1..12)
}

fn expand(spec: &[(bool, bool, u8)], runs: u32, salt: u64) -> Vec<TaskResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(salt);
    let mut out = Vec::new();
    for (i, &(dec, det, cell)) in spec.iter().enumerate() {
        for k in 0..runs {
            let declared = dec || rng.gen_bool(0.5);
            let detected = declared && (det || rng.gen_bool(0.3));
            out.push(result(&format!("t{i}"), k, guitest_core::eval::CELLS[cell as usize], declared, detected));
        }
    }
    out
}

proptest! {
    #[test]
    fn f1_is_symmetric(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
        prop_assert_eq!(f1(p, r), f1(r, p));
        if let Some(v) = f1(p, r) {
            prop_assert!(v <= p.max(r) + 1e-12 && v >= 0.0);
        }
    }

    #[test]
    fn pass3_recall_dominates_pass1(spec in arb_results(), salt in any::<u64>()) {
        let rs = expand(&spec, 3, salt);
        let p1 = aggregate::<f64>(&rs, PassK::Pass1).unwrap();
        let p3 = aggregate::<f64>(&rs, PassK::Pass3).unwrap();
        for (k, c) in &p1.cells {
            prop_assert!(p3.cells[k].recall + 1e-12 >= c.recall);
        }
    }

    #[test]
    fn detecting_more_never_lowers_recall(spec in arb_results(), salt in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let mut rs = expand(&spec, 1, salt);
        let before = aggregate::<f64>(&rs, PassK::Pass1).unwrap().overall().unwrap().recall;
        let i = pick.index(rs.len());
        rs[i].declared = true;
        rs[i].detected = true;
        let after = aggregate::<f64>(&rs, PassK::Pass1).unwrap().overall().unwrap().recall;
        prop_assert!(after >= before);
    }

    #[test]
    fn counts_stay_bounded(spec in arb_results(), salt in any::<u64>()) {
        let rs = expand(&spec, 3, salt);
        let r = aggregate::<f64>(&rs, PassK::Pass1).unwrap();
        for c in r.cells.values() {
            prop_assert!(c.detected <= c.declared + 1e-12);
            prop_assert!(c.recall >= 0.0 && c.recall <= 1.0);
            if let Some(p) = c.precision { prop_assert!((0.0..=1.0).contains(&p)); }
        }
    }
}
