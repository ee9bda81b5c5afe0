use std::path::Path;

use archbuilder::agent::EpisodeOrigin;
use archbuilder::dream::replay_with_rewrite;
use archbuilder::harness::metrics::{read_events, read_metrics, EVENTS_FILE, METRICS_FILE};
use archbuilder::harness::{
    evaluate, load_report, CatalogSpec, EventKind, Experiment, ExperimentConfig, HarnessError, Mode, Phase, Precision,
};
use archbuilder::nn::{Dense, QNetwork, INPUT_DIM};
use archbuilder::{builtin_desk, BuildEnv, Grid, Lexicon, MessageId};
use ndarray::{Array1, Array2};

fn tiny(mode: Mode) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        seed: 11,
        precision: Precision::F32,
        catalog: CatalogSpec::Desk,
        pretrain_epochs: 30,
        max_epochs: 120,
        wake_phase_len: 40,
        eval_interval: 20,
        batch_size: 8,
        train_every: 2,
        dream_iterations: 5,
        score_threshold: 1.0,
        ..Default::default()
    }
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

#[test]
fn worst_mode_never_grows_the_lexicon() {
    let dir = tempfile::tempdir().unwrap();
    let mut exp = Experiment::<f32>::new(tiny(Mode::Worst)).unwrap().with_output(dir.path()).unwrap();
    let summary = exp.run().unwrap();
    assert!(summary.lexicon.is_empty());
    let rows = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(rows.iter().filter(|r| r.phase == Phase::Pretrain).count(), 30);
    assert!(rows.iter().all(|r| r.lexicon_size == 12));
    let events = read_events(&dir.path().join(EVENTS_FILE)).unwrap();
    assert!(events.iter().all(|e| e.event != EventKind::Promotion));
}

#[test]
fn best_mode_starts_with_the_preload_list() {
    let cfg = tiny(Mode::Best);
    let expected = cfg.preload_list(&builtin_desk());
    let dir = tempfile::tempdir().unwrap();
    let mut exp = Experiment::<f32>::new(cfg).unwrap().with_output(dir.path()).unwrap();
    exp.run().unwrap();
    let active: Vec<Vec<MessageId>> = exp.lexicon.abstractions().map(|(_, p)| p.to_vec()).collect();
    assert_eq!(active, expected);
    let rows = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    assert!(rows.iter().filter(|r| r.phase == Phase::Wake).all(|r| r.lexicon_size == 15));
    assert!(rows.iter().filter(|r| r.phase == Phase::Pretrain).all(|r| r.lexicon_size == 12));
    let events = read_events(&dir.path().join(EVENTS_FILE)).unwrap();
    assert!(events.iter().all(|e| e.event != EventKind::Promotion));
}

#[test]
fn identical_seeds_give_identical_logs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    Experiment::<f32>::new(tiny(Mode::Full)).unwrap().with_output(a.path()).unwrap().run().unwrap();
    Experiment::<f32>::new(tiny(Mode::Full)).unwrap().with_output(b.path()).unwrap().run().unwrap();
    for file in [METRICS_FILE, EVENTS_FILE] {
        assert_eq!(read(a.path(), file), read(b.path(), file), "{file}");
    }
}

#[test]
fn different_seeds_diverge() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    Experiment::<f32>::new(tiny(Mode::Worst)).unwrap().with_output(a.path()).unwrap().run().unwrap();
    let other = ExperimentConfig { seed: 12, ..tiny(Mode::Worst) };
    Experiment::<f32>::new(other).unwrap().with_output(b.path()).unwrap().run().unwrap();
    assert_ne!(read(a.path(), METRICS_FILE), read(b.path(), METRICS_FILE));
}

#[test]
fn resumed_run_continues_the_same_tail() {
    let straight = tempfile::tempdir().unwrap();
    Experiment::<f32>::new(tiny(Mode::Full)).unwrap().with_output(straight.path()).unwrap().run().unwrap();

    let first = tempfile::tempdir().unwrap();
    let ck = first.path().join("mid.json");
    let mut exp = Experiment::<f32>::new(tiny(Mode::Full)).unwrap().with_output(first.path()).unwrap();
    exp.run_until(50).unwrap();
    exp.save(&ck).unwrap();
    drop(exp);

    let second = tempfile::tempdir().unwrap();
    let mut resumed = Experiment::<f32>::resume(&ck).unwrap().with_output(second.path()).unwrap();
    assert_eq!(resumed.epoch(), 50);
    resumed.run().unwrap();

    let full = read(straight.path(), METRICS_FILE);
    let tail = read(second.path(), METRICS_FILE);
    let tail_rows: Vec<&str> = tail.lines().skip(1).collect();
    let full_rows: Vec<&str> = full.lines().collect();
    assert!(!tail_rows.is_empty());
    assert_eq!(full_rows[full_rows.len() - tail_rows.len()..], tail_rows[..]);
    assert!(tail_rows[0].starts_with("51,wake,"));
    let head = read(first.path(), METRICS_FILE);
    assert_eq!(head.lines().count() + tail_rows.len(), full_rows.len());
}

#[test]
fn resume_during_pretraining() {
    let straight = tempfile::tempdir().unwrap();
    Experiment::<f32>::new(tiny(Mode::Worst)).unwrap().with_output(straight.path()).unwrap().run().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck.json");
    let mut exp = Experiment::<f32>::new(tiny(Mode::Worst)).unwrap();
    exp.pretrain_until(Some(13)).unwrap();
    exp.save(&ck).unwrap();
    let mut resumed = Experiment::<f32>::resume(&ck).unwrap().with_output(dir.path()).unwrap();
    resumed.run().unwrap();
    let full = read(straight.path(), METRICS_FILE);
    let expected: Vec<&str> = full.lines().skip(1 + 13).collect();
    let got_text = read(dir.path(), METRICS_FILE);
    let got: Vec<&str> = got_text.lines().skip(1).collect();
    assert_eq!(got, expected);
}

#[test]
fn forks_match_fresh_runs() {
    let mut base = Experiment::<f32>::new(tiny(Mode::Worst)).unwrap();
    assert!(base.pretrain_until(None).unwrap());
    for mode in [Mode::Best, Mode::Full, Mode::Worst] {
        let mut forked = base.fork(mode).unwrap();
        let mut fresh = Experiment::<f32>::new(tiny(mode)).unwrap();
        let a = forked.run().unwrap();
        let b = fresh.run().unwrap();
        assert_eq!(a, b, "{mode}");
        assert_eq!(forked.agent.net, fresh.agent.net, "{mode}");
    }
}

#[test]
fn fork_rejects_started_runs() {
    let mut exp = Experiment::<f32>::new(tiny(Mode::Worst)).unwrap();
    assert!(exp.fork(Mode::Best).is_err());
    exp.run_until(1).unwrap();
    assert!(exp.fork(Mode::Best).is_err());
}

/// One hidden unit per shape scoring goal overlap minus goal spill; the
/// output for that shape's macro copies it.
fn oracle_net(lex: &Lexicon, shapes: &[(Grid, MessageId)]) -> QNetwork<f64> {
    let k = shapes.len();
    let mut w1 = Array2::zeros((INPUT_DIM, k));
    for (j, (goal, _)) in shapes.iter().enumerate() {
        for bit in 0..36 {
            w1[[bit, j]] = if goal.bits() >> bit & 1 == 1 { 1.0 } else { -1.0 };
        }
    }
    let mut w2 = Array2::zeros((k, lex.capacity()));
    for (j, (_, id)) in shapes.iter().enumerate() {
        w2[[j, id.0]] = 1.0;
    }
    QNetwork::from_layers(vec![
        Dense { weights: w1, bias: Array1::zeros(k) },
        Dense { weights: w2, bias: Array1::zeros(lex.capacity()) },
    ])
}

#[test]
fn constructed_policy_passes_evaluation() {
    let catalog = builtin_desk();
    let mut lex = Lexicon::new(20);
    let shapes: Vec<(Grid, MessageId)> =
        catalog.shapes().iter().map(|s| (s.goal, lex.push_abstraction(s.witness_ids()).unwrap())).collect();
    let net = oracle_net(&lex, &shapes);
    let outcomes = evaluate(&net, &lex, &catalog, &BuildEnv::default());
    assert!(outcomes.iter().all(|o| o.success), "{outcomes:?}");
    for (o, (_, id)) in outcomes.iter().zip(&shapes) {
        assert_eq!(o.messages, vec![*id]);
    }
}

#[test]
fn untrained_evaluation_reports_every_shape_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let mut exp = Experiment::<f32>::new(tiny(Mode::Worst)).unwrap().with_output(dir.path()).unwrap();
    exp.run_until(3).unwrap();
    let buffered = exp.agent.buffer.len();
    let rows = exp.agent.env_steps;
    let outcomes = evaluate(&exp.agent.net, &exp.lexicon, &exp.catalog, &exp.env);
    assert_eq!(outcomes.len(), 3);
    assert_eq!(exp.agent.buffer.len(), buffered);
    assert_eq!(exp.agent.env_steps, rows);
}

#[test]
fn sleep_promotes_and_dreams() {
    let dir = tempfile::tempdir().unwrap();
    let mut exp = Experiment::<f32>::new(tiny(Mode::Full)).unwrap().with_output(dir.path()).unwrap();
    let goal = builtin_desk().get("u_1").unwrap().goal;
    let seq: Vec<MessageId> = ["V1", "V2", "H1"].iter().map(|s| s.parse().unwrap()).collect();
    for _ in 0..3 {
        let trs = replay_with_rewrite::<f32>(goal, &seq, &exp.lexicon, &exp.env).unwrap();
        exp.agent.buffer.push_episode(EpisodeOrigin::Wake, trs, true);
    }
    let id = exp.sleep().unwrap().expect("promotion");
    assert_eq!(id, MessageId(12));
    assert_eq!(exp.lexicon.message(id).unwrap(), &archbuilder::Message::Abstraction(seq));
    assert_eq!(exp.epsilon.value, 1.0);
    drop(exp);
    let events = read_events(&dir.path().join(EVENTS_FILE)).unwrap();
    let kinds: Vec<EventKind> = events.iter().map(|e| e.event).collect();
    assert_eq!(kinds, vec![EventKind::Promotion, EventKind::DreamStart, EventKind::DreamEnd]);
    assert_eq!(events[0].detail, "A12=[V1,V2,H1];score=6");
    assert_eq!(events[1].detail, "A12;episodes=3;transitions=3");
    assert_eq!(events[2].field::<usize>("iterations"), Some(5));
}

#[test]
fn report_recomputes_solve_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { max_epochs: 200, eval_consecutive: 1, ..tiny(Mode::Best) };
    let summary = Experiment::<f32>::new(cfg).unwrap().with_output(dir.path()).unwrap().run().unwrap();
    let report = load_report(dir.path()).unwrap();
    assert_eq!(report.epochs_to_solve, summary.epochs_to_solve);
    let text = report.to_text();
    match summary.epochs_to_solve {
        Some(e) => assert!(text.contains(&format!("solved after {e} epochs"))),
        None => assert!(text.contains("DNF at 200")),
    }
    assert_eq!(report.lexicon, summary.lexicon);
}

#[test]
fn report_lists_promotions_and_dnf() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { max_epochs: 40, eval_interval: 1000, ..tiny(Mode::Full) };
    let mut exp = Experiment::<f32>::new(cfg).unwrap().with_output(dir.path()).unwrap();
    let u = builtin_desk().get("u_1").unwrap().goal;
    let c = builtin_desk().get("c_3").unwrap().goal;
    let ids = |v: &[&str]| -> Vec<MessageId> { v.iter().map(|s| s.parse().unwrap()).collect() };
    for (goal, seq) in [(u, ids(&["V1", "V2", "H1"])), (c, ids(&["H3", "V3", "H3"]))] {
        for _ in 0..2 {
            let trs = replay_with_rewrite::<f32>(goal, &seq, &exp.lexicon, &exp.env).unwrap();
            exp.agent.buffer.push_episode(EpisodeOrigin::Wake, trs, true);
        }
        exp.sleep().unwrap().expect("promotion");
    }
    let summary = exp.run().unwrap();
    drop(exp);
    let report = load_report(dir.path()).unwrap();
    assert_eq!(report.promotions.len(), summary.lexicon.len());
    assert!(report.promotions.len() >= 2);
    let text = report.to_text();
    assert_eq!(text.lines().filter(|l| l.contains("score=")).count(), report.promotions.len());
    assert!(text.contains("DNF at 40"));
    assert_eq!(report.lexicon, summary.lexicon);
}

#[test]
fn config_errors_surface() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "mode = full\nwibble = 3\n").unwrap();
    assert!(matches!(ExperimentConfig::load(&path), Err(HarnessError::Config(_))));
    assert!(matches!(ExperimentConfig::load(&dir.path().join("none.conf")), Err(HarnessError::Io { .. })));
    let full_catalog = ExperimentConfig { mode: Mode::Best, catalog: CatalogSpec::Builtin, ..Default::default() };
    assert!(matches!(Experiment::<f32>::new(full_catalog), Err(HarnessError::Config(_))));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        for mode in [Mode::Worst, Mode::Best, Mode::Full] {
            let cfg = ExperimentConfig { mode, ..cfg.clone() };
            cfg.check_preload(&cfg.catalog.load().unwrap()).unwrap();
        }
        seen += 1;
    }
    assert!(seen >= 2);
}
