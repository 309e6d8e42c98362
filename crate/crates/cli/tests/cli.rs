use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::CommandFactory;
use guitest_cli::*;
use guitest_core::agents::remote::{serve_stream, ScriptedServer};
use guitest_core::agents::ScriptedProfile;
use guitest_core::bundle::Bench;
use guitest_core::demo;
use guitest_core::orchestrator::Checkpoint;
use guitest_core::screen::{ActionKind, AppModel};
use guitest_core::synth::TaskKind;

fn demo_bench() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo-bench")
}

fn run(dir: &Path, agent: &str, runs: u32, extra: &[&str]) -> i32 {
    let mut argv: Vec<String> =
        vec!["guitest".into(), "run".into(), "--bench".into(), demo_bench().display().to_string()];
    argv.extend(["--agent".into(), agent.into(), "--runs".into(), runs.to_string(), "--seed".into(), "7".into()]);
    argv.extend(["--out".into(), dir.display().to_string()]);
    argv.extend(extra.iter().map(|s| s.to_string()));
    main_with(argv)
}

fn eval(dir: &Path, pass_k: &str) -> (i32, Option<guitest_core::EvalReport>) {
    let code = main_with([
        "guitest",
        "eval",
        "--trajectories",
        dir.to_str().unwrap(),
        "--bench",
        demo_bench().to_str().unwrap(),
        "--pass-k",
        pass_k,
    ]);
    let report = fs::read_to_string(dir.join(REPORT_FILE))
        .ok()
        .map(|t| guitest_core::eval::report_from_document(serde_json::from_str(&t).unwrap()).unwrap());
    (code, report)
}

#[test]
fn committed_demo_bench_matches_the_generator() {
    let bench = demo::tasks_bench().unwrap();
    if std::env::var_os("GUITEST_REGENERATE").is_some() {
        bench.write(demo_bench()).unwrap();
    }
    let (loaded, manifest) = Bench::load(demo_bench()).unwrap();
    assert_eq!(loaded.hash().unwrap(), bench.hash().unwrap());
    assert_eq!(manifest.bench_hash, bench.hash().unwrap());
    assert_eq!(loaded.tasks.len(), 6);
}

#[test]
fn oracle_run_writes_one_file_per_task_run() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), "oracle", 3, &[]), 0);
    let files = fs::read_dir(dir.path().join(TRAJECTORY_DIR)).unwrap().count();
    assert_eq!(files, 18);
    let m = read_run_manifest(dir.path()).unwrap();
    assert_eq!(m.runs.len(), 18);
    assert!(m.runs.iter().all(|r| dir.path().join(&r.path).is_file()));
    let seeds: BTreeSet<u64> = m.runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), 18);
}

#[test]
fn identical_configs_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(a.path(), "flaky", 2, &["--noise-delay", "2", "--threads", "3"]), 0);
    assert_eq!(run(b.path(), "flaky", 2, &["--noise-delay", "2", "--threads", "1"]), 0);
    let read = |d: &Path, p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(read(a.path(), RUN_MANIFEST_FILE), read(b.path(), RUN_MANIFEST_FILE));
    for r in read_run_manifest(a.path()).unwrap().runs {
        assert_eq!(read(a.path(), &r.path), read(b.path(), &r.path), "{}", r.path);
    }
}

#[test]
fn oracle_detects_everything_and_pass3_dominates() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), "oracle", 3, &[]), 0);
    let (code, p1) = eval(dir.path(), "pass1");
    assert_eq!(code, 0);
    let p1 = p1.unwrap();
    let o = p1.overall().unwrap();
    assert_eq!((o.recall, o.precision), (1.0, Some(1.0)));
    let (code, p3) = eval(dir.path(), "pass3");
    assert_eq!(code, 0);
    let p3 = p3.unwrap();
    for (k, c) in &p1.cells {
        assert!(p3.cells[k].recall >= c.recall);
    }
    assert!(fs::read_to_string(dir.path().join(TABLE_FILE)).unwrap().contains("Pass@3"));
}

#[test]
fn blind_agent_scores_zero_without_precision() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), "blind", 1, &[]), 0);
    let (code, r) = eval(dir.path(), "pass1");
    assert_eq!(code, 0);
    let o = *r.unwrap().overall().unwrap();
    assert_eq!((o.recall, o.precision, o.f1), (0.0, None, None));
    // pass@3 over a single run is an input error
    assert_eq!(eval(dir.path(), "pass3").0, 2);
}

#[test]
fn hash_mismatch_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), "oracle", 1, &[]), 0);
    let p = dir.path().join(RUN_MANIFEST_FILE);
    let text = fs::read_to_string(&p).unwrap();
    let m = read_run_manifest(dir.path()).unwrap();
    fs::write(&p, text.replace(&m.bench_hash, &"0".repeat(64))).unwrap();
    assert_eq!(eval(dir.path(), "pass1").0, 2);
    let err = cmd_eval(&EvalArgs {
        trajectories: dir.path().into(),
        bench: demo_bench(),
        pass_k: "pass1".into(),
        window: 3,
        endpoint: None,
        out: None,
    })
    .unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains(&"0".repeat(64)) && msg.contains(&m.bench_hash), "{msg}");
}

#[test]
fn run_never_mutates_the_bundle() {
    let before = Bench::load(demo_bench()).unwrap().1;
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), "baseline", 1, &[]), 0);
    assert_eq!(Bench::load(demo_bench()).unwrap().1, before);
}

#[test]
fn invalid_bundles_are_rejected_with_two() {
    let dir = tempfile::tempdir().unwrap();
    demo::tasks_bench().unwrap().write(dir.path()).unwrap();
    let v = |d: &Path| main_with(["guitest", "validate", "--bench", d.to_str().unwrap()]);
    assert_eq!(v(dir.path()), 0);
    let task = fs::read_dir(dir.path().join("tasks")).unwrap().next().unwrap().unwrap().path();
    let text = fs::read_to_string(&task).unwrap();
    fs::write(&task, text.replace("\"max_steps\": 40", "\"max_steps\": 41")).unwrap();
    assert_eq!(v(dir.path()), 2);
    let out = tempfile::tempdir().unwrap();
    let code =
        main_with(["guitest", "run", "--bench", dir.path().to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(v(Path::new("/nonexistent/bench")), 2);
}

#[test]
fn render_prints_the_saved_table() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), "oracle", 1, &[]), 0);
    assert_eq!(eval(dir.path(), "pass1").0, 0);
    let table = cmd_render(&RenderArgs { report: dir.path().join(REPORT_FILE) }).unwrap();
    assert_eq!(table, fs::read_to_string(dir.path().join(TABLE_FILE)).unwrap());
    for cell in guitest_core::eval::CELLS {
        assert!(table.contains(cell));
    }
}

fn synth_args(out: &Path, n_pre: usize, n_post: usize) -> SynthArgs {
    let b = demo_bench();
    SynthArgs {
        app: b.join("apps/tasks.json"),
        defects: b.join("defects"),
        repro: b.join("repros"),
        n_pre,
        n_post,
        seed: 0,
        out: out.into(),
        threads: None,
    }
}

/// BFS over declared click navigations plus the home shortcut, as screen paths.
fn shortest_path(m: &AppModel, from: &str, to: &str) -> Vec<String> {
    let mut prev: Vec<(String, String)> = Vec::new();
    let mut seen = vec![from.to_owned()];
    let mut q = VecDeque::from([from.to_owned()]);
    while let Some(s) = q.pop_front() {
        if s == to {
            break;
        }
        let mut next: Vec<String> = m
            .transitions
            .iter()
            .filter(|t| t.screen == s.as_str() && matches!(t.action, ActionKind::Click | ActionKind::LongPress))
            .filter_map(|t| t.effect.nav_target().map(|d| d.to_string()))
            .collect();
        if s != m.initial_screen.as_str() {
            next.push(m.initial_screen.to_string());
        }
        for n in next {
            if !seen.contains(&n) {
                seen.push(n.clone());
                prev.push((n.clone(), s.clone()));
                q.push_back(n);
            }
        }
    }
    let mut path = vec![to.to_owned()];
    while path[0] != from {
        let p = prev.iter().find(|(n, _)| *n == path[0]).map(|(_, p)| p.clone()).unwrap();
        path.insert(0, p);
    }
    path
}

#[test]
fn synth_logs_fifteen_candidates_and_matches_reachability() {
    let out = tempfile::tempdir().unwrap();
    let log = cmd_synth(&synth_args(out.path(), 5, 3)).unwrap();
    assert_eq!(log.defects.len(), 5);
    assert!(log.defects.iter().all(|d| d.candidates == 15));
    assert!(log.defects[0].summary().ends_with(&format!("15 candidates, {} retained", log.defects[0].retained)));
    let (bench, _) = Bench::load(out.path()).unwrap();
    let app = &bench.apps[0];
    for d in &bench.defects {
        if d.expected_effect.nav_target().is_some() || d.actual_effect.nav_target().is_some() {
            continue; // navigation faults move the validator off the declared graph
        }
        let entry = log.defects.iter().find(|e| e.defect_id == d.id).unwrap();
        let candidates = guitest_core::synth::synthesize_exploration_candidates(
            bench.repros.iter().find(|r| r.defect_id == d.id).unwrap(),
            &guitest_core::defect::inject(app.clone(), vec![d.clone()]).unwrap(),
            &mut guitest_core::synth::TemplateGenerator,
            5,
            3,
        )
        .unwrap();
        let expected: Vec<String> = candidates
            .iter()
            .filter(|c| {
                let [Checkpoint::Reach { screen: x }, Checkpoint::Reach { screen: y }] = &c.checkpoints[..] else {
                    panic!("exploration checkpoints")
                };
                let mut visited = shortest_path(app, app.initial_screen.as_str(), x.as_str());
                visited.extend(shortest_path(app, x.as_str(), y.as_str()));
                visited.iter().any(|s| *s == d.trigger.screen.as_str())
            })
            .map(|c| c.id.clone())
            .collect();
        assert_eq!(entry.retained_ids, expected, "{}", d.id);
    }
    let explore = bench.tasks.iter().filter(|t| t.kind == TaskKind::ExplorationOriented).count();
    assert_eq!(explore, log.defects.iter().map(|d| d.retained).sum::<usize>());
    assert!(out.path().join(SYNTH_LOG_FILE).is_file());
}

#[test]
fn synth_rejects_empty_grids() {
    let out = tempfile::tempdir().unwrap();
    let b = demo_bench();
    let code = main_with([
        "guitest",
        "synth",
        "--app",
        b.join("apps/tasks.json").to_str().unwrap(),
        "--defects",
        b.join("defects").to_str().unwrap(),
        "--repro",
        b.join("repros").to_str().unwrap(),
        "--n-pre",
        "0",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

fn serve(listener: TcpListener, model: Arc<AppModel>) {
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { return };
            let model = model.clone();
            std::thread::spawn(move || {
                let mut server = ScriptedServer::new(model, ScriptedProfile::oracle());
                let _ = serve_stream(stream, &mut server);
            });
        }
    });
}

#[test]
fn remote_agent_over_tcp_matches_the_local_oracle() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    serve(listener, Arc::new(demo::tasks_app()));
    let remote = tempfile::tempdir().unwrap();
    let local = tempfile::tempdir().unwrap();
    assert_eq!(run(remote.path(), "remote", 1, &["--endpoint", &addr]), 0);
    assert_eq!(run(local.path(), "oracle", 1, &[]), 0);
    let a = read_run_manifest(remote.path()).unwrap();
    let b = read_run_manifest(local.path()).unwrap();
    let hashes = |m: &RunManifest| m.runs.iter().map(|r| r.content_hash.clone()).collect::<Vec<_>>();
    assert_eq!(hashes(&a), hashes(&b));
}

#[test]
fn unreachable_endpoint_fails_with_one() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), "remote", 1, &["--endpoint", &format!("127.0.0.1:{port}")]), 1);
    // no endpoint at all is a usage problem
    let cmd = Cli::command();
    let run_cmd = cmd.find_subcommand("run").unwrap();
    let ep = run_cmd.get_arguments().find(|a| a.get_id() == "endpoint").unwrap();
    assert_eq!(ep.get_env().and_then(|e| e.to_str()), Some(ENDPOINT_ENV));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(main_with(["guitest", "run"]), 2);
    assert_eq!(main_with(["guitest", "bogus"]), 2);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), "oracle", 0, &[]), 2);
}
