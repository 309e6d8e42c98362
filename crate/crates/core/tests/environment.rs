use guitest_core::agents::effect_observed;
use guitest_core::defect::{inject, DefectCategory, FaultMode, InstrumentedModel};
use guitest_core::demo;
use guitest_core::screen::{annotate_action, hit_test, Action, Effect, Environment, Point};
use guitest_core::trajectory::{StepRecord, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn click(obs: &guitest_core::screen::Observation, id: &str) -> Action {
    let e = obs.elements.iter().find(|e| e.id == id).expect("visible");
    Action::click(e.bounds.center()).with_target(id)
}

#[test]
fn settings_button_navigates() {
    let mut env = Environment::new(InstrumentedModel::plain(demo::tasks_app()));
    let home = env.reset(0).unwrap();
    let s = env.apply_action(&click(&home, "settings")).unwrap();
    assert_eq!(s.screen_id, "settings");
}

#[test]
fn navigate_up_with_nle_lands_home() {
    let defect = demo::tasks_defects().into_iter().find(|d| d.id == "tasks-ux-nle-results").unwrap();
    let model = inject(demo::tasks_app(), vec![defect.clone()]).unwrap();
    let repro = demo::tasks_repros().into_iter().find(|r| r.defect_id == defect.id).unwrap();
    let mut env = Environment::new(model);
    let mut obs = env.reset(0).unwrap();
    for a in &repro.actions {
        obs = env.apply_action(a).unwrap();
    }
    assert_eq!(obs.screen_id, "home");
    assert_eq!(defect.expected_effect, Effect::navigate("search"));
}

#[test]
fn multi_action_utr_hides_the_saved_file() {
    let defect = demo::tasks_defects()
        .into_iter()
        .find(|d| d.category == DefectCategory::UX && d.fault_mode == FaultMode::UTR)
        .unwrap();
    let model = inject(demo::tasks_app(), vec![defect.clone()]).unwrap();
    let repro = demo::tasks_repros().into_iter().find(|r| r.defect_id == defect.id).unwrap();
    let mut env = Environment::new(model);
    env.reset(0).unwrap();
    for a in &repro.actions {
        env.apply_action(a).unwrap();
    }
    let home = env.apply_action(&Action::press_home()).unwrap();
    let obs = env.apply_action(&click(&home, "files")).unwrap();
    let label = &obs.element(&"files_label".into()).unwrap().label;
    assert_eq!(label, "Files: 0");
}

#[test]
fn markers_agree_with_hit_test_on_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let app = demo::tasks_app();
    for _ in 0..2000 {
        let screen = &app.screens[rng.gen_range(0..app.screens.len())];
        let mut env = Environment::new(InstrumentedModel::plain(app.clone()));
        let mut obs = env.reset(0).unwrap();
        for a in demo::route_to(&env, &obs, &screen.id) {
            obs = env.apply_action(&a).unwrap();
        }
        let p = Point::new(rng.gen_range(0..1080), rng.gen_range(0..2400));
        let marker = annotate_action(&obs, &Action::click(p)).marker;
        let hit = hit_test(&obs.elements, p).unwrap().map(|e| e.id.clone());
        assert_eq!(marker.hit, hit);
        assert_eq!(marker.point, Some(p));
    }
}

/// The ledger's first trigger equals the first step whose observed outcome
/// departs from the declared transition of the element it hit.
#[test]
fn ground_truth_matches_effect_substitution_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut fired = 0;
    for multi in [false, true] {
        for item in demo::synthetic_bench(21, 25, multi).unwrap() {
            let defect = &item.model.defects()[0];
            let app = item.model.model();
            let mut env = Environment::new(item.model.clone());
            let mut obs = env.reset(0).unwrap();
            // a prefix of the reproduction, then a random walk
            let cut = rng.gen_range(0..=item.repro.actions.len());
            let mut substituted = None;
            for i in 0..cut + 12 {
                let a = if i < cut {
                    item.repro.actions[i].clone()
                } else {
                    let e = &obs.elements[rng.gen_range(0..obs.elements.len())];
                    Action::click(e.bounds.center())
                };
                let hit = obs.resolve(&a).filter(|e| e.enabled).map(|e| e.id.clone());
                let post = env.apply_action(&a).unwrap();
                if let Some(id) = hit {
                    if let Some(declared) = app.transition(&obs.screen_id, &id, a.kind) {
                        if substituted.is_none() && !effect_observed(&obs, &a, &post, declared) {
                            substituted = Some(i as u64);
                        }
                    }
                }
                obs = post;
            }
            assert_eq!(env.ledger().ground_truth_triggered(&defect.id).unwrap(), substituted, "{}", defect.id);
            fired += substituted.is_some() as u32;
        }
    }
    assert!((10..50).contains(&fired), "{fired}");
}

#[test]
fn precondition_progress_counts_interleaved_prefix() {
    let defect = demo::tasks_defects().into_iter().find(|d| d.id == "tasks-ux-utr-save").unwrap();
    let model = inject(demo::tasks_app(), vec![defect.clone()]).unwrap();
    let repro = demo::tasks_repros().into_iter().find(|r| r.defect_id == defect.id).unwrap();
    let mut env = Environment::new(model);
    let mut obs = env.reset(0).unwrap();
    assert_eq!(env.ledger().precondition_progress(&Trajectory::new(), &defect).unwrap(), 0);
    let mut traj = Trajectory::new();
    for (i, a) in repro.actions[..3].iter().enumerate() {
        let mut rec = StepRecord::new(obs.clone(), a.clone());
        obs = env.apply_action(a).unwrap();
        rec.post = Some(obs.clone());
        traj.push(rec);
        if i == 1 {
            let scroll = Action::scroll(guitest_core::screen::Direction::Down);
            let mut rec = StepRecord::new(obs.clone(), scroll.clone());
            obs = env.apply_action(&scroll).unwrap();
            rec.post = Some(obs.clone());
            traj.push(rec);
        }
    }
    assert_eq!(env.ledger().precondition_progress(&traj, &defect).unwrap(), 2);
}
