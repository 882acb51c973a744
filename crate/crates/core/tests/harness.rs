mod common;

use common::*;
use spatial_vln::harness::log::{read_log, to_jsonl, LogRecord, Phase};
use spatial_vln::harness::{self, eval_log, run_episode, run_episode_with, run_suite, ExpertBackend, RunConfig, Termination};
use spatial_vln::metrics::SUCCESS_RADIUS;
use spatial_vln::scene::{load_episode, load_scene, Episode};

fn two_rooms() -> Episode {
    load_episode(fixture("episodes/two_rooms.episode.json")).unwrap()
}

#[test]
fn two_rooms_reaches_the_sofa_and_matches_golden_log() {
    let run = run_episode(&two_rooms(), &RunConfig::default()).unwrap();
    assert_eq!(run.termination, Termination::Stop);
    assert!(run.result.success);
    assert_eq!(run.result.semantic_success, Some(true));
    let text = to_jsonl(&run.records);
    let path = crate_path("tests/golden/two_rooms.jsonl");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &text).unwrap();
    }
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
}

#[test]
fn golden_log_reevaluates_to_stored_metrics() {
    let records = read_log(&crate_path("tests/golden/two_rooms.jsonl")).unwrap();
    let scene = load_scene(two_rooms().scene_path()).unwrap();
    let (recomputed, stored) = eval_log(&records, &scene).unwrap();
    assert_eq!(Some(recomputed), stored);
}

#[test]
fn zero_decision_budget_ends_before_moving() {
    let ep = two_rooms();
    let scene = load_scene(ep.scene_path()).unwrap();
    let mut cfg = RunConfig::default();
    cfg.budgets.max_decision_steps = Some(0);
    let experts = harness::build_experts(&cfg).unwrap();
    let run = run_episode_with(&ep, &scene, &cfg, experts.as_ref());
    assert_eq!(run.termination, Termination::DecisionBudget);
    assert!(!run.result.success);
    assert_eq!(run.result.steps.decisions, 0);
    assert_eq!(run.trajectory.poses.len(), 1);
    // the loaded config path refuses the same value
    assert!(cfg.validate().is_err());
}

#[test]
fn config_validation_rules() {
    let ok = RunConfig::default();
    assert!(ok.validate().is_ok());
    let mut c = ok.clone();
    c.expert = ExpertBackend::Cassette;
    assert!(c.validate().is_err());
    c.cassette = Some(fixture("cassettes/malformed_decompose.json"));
    assert!(c.validate().is_ok());
    let mut c = ok.clone();
    c.budgets.max_primitives = Some(0);
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.noise.p_drop = 1.5;
    assert!(c.validate().is_err());
    let mut c = ok;
    c.success_radius = 0.0;
    assert!(c.validate().is_err());
}

#[test]
fn bundled_default_config_equals_builtin_defaults() {
    let loaded = RunConfig::load(&crate_path("config/default.json")).unwrap();
    assert_eq!(loaded, RunConfig::default());
    assert_eq!(loaded.success_radius, SUCCESS_RADIUS);
}

#[test]
fn disabling_exploration_leaves_no_exploration_records() {
    let episodes = harness::load_suite(&fixture("conflict")).unwrap();
    let mut cfg = RunConfig::default();
    let (_, full) = run_suite(&episodes, &cfg).unwrap();
    assert!(full.iter().flat_map(|r| &r.records).any(|r| matches!(r, LogRecord::Decision { exploration: Some(_), .. })));
    cfg.ablations.disable_exploration = true;
    let (_, runs) = run_suite(&episodes, &cfg).unwrap();
    for r in runs.iter().flat_map(|r| &r.records) {
        match r {
            LogRecord::Decision { exploration, action, a_w, .. } => {
                assert!(exploration.is_none());
                assert_eq!(action, a_w);
            }
            LogRecord::Execution { phase, .. } | LogRecord::Candidates { phase, .. } => assert_eq!(*phase, Phase::Step),
            LogRecord::Perception(p) => assert_eq!(p.phase, Phase::Step),
            _ => {}
        }
    }
}

#[test]
fn empty_suite_gives_empty_report() {
    let (report, runs) = run_suite(&[], &RunConfig::default()).unwrap();
    assert!(report.rows.is_empty() && runs.is_empty());
    assert_eq!(report.aggregate.count, 0);
    assert_eq!(report.aggregate.sr, 0.0);
    assert_eq!(report.to_csv().lines().count(), 1);
}

#[test]
fn aggregates_recompute_from_rows() {
    let episodes = harness::load_suite(&fixture("ambiguous")).unwrap();
    let mut cfg = RunConfig::default();
    cfg.noise.p_drop = 0.3;
    cfg.noise.p_spur = 0.3;
    cfg.noise.seed = 5;
    let (report, _) = run_suite(&episodes, &cfg).unwrap();
    let n = report.rows.len() as f64;
    assert_eq!(report.rows.len(), 30);
    let sr = report.rows.iter().filter(|r| r.result.success).count() as f64 / n;
    let osr = report.rows.iter().filter(|r| r.result.oracle_success).count() as f64 / n;
    let tl = report.rows.iter().map(|r| r.result.tl).sum::<f64>() / n;
    assert!((report.aggregate.sr - sr).abs() < 1e-12);
    assert!((report.aggregate.osr - osr).abs() < 1e-12);
    assert!((report.aggregate.tl - tl).abs() < 1e-12);
    let ids: Vec<&str> = report.rows.iter().map(|r| r.episode.as_str()).collect();
    let want: Vec<&str> = episodes.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, want);
}

#[test]
fn identical_inputs_give_identical_logs_and_reports() {
    let episodes = harness::load_suite(&fixture("conflict")).unwrap();
    let mut cfg = RunConfig::default();
    cfg.noise.p_drop = 0.3;
    cfg.noise.p_spur = 0.3;
    cfg.noise.seed = 9;
    let (r1, a) = run_suite(&episodes, &cfg).unwrap();
    let (r2, b) = run_suite(&episodes, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(to_jsonl(&x.records), to_jsonl(&y.records));
    }
    cfg.noise.seed = 10;
    let (_, c) = run_suite(&episodes, &cfg).unwrap();
    assert!(a.iter().zip(&c).any(|(x, y)| to_jsonl(&x.records) != to_jsonl(&y.records)));
}

#[test]
fn toggling_spe_only_changes_perception_records() {
    let ep = two_rooms();
    let on = run_episode(&ep, &RunConfig::default()).unwrap();
    let mut cfg = RunConfig::default();
    cfg.ablations.disable_spe = true;
    let off = run_episode(&ep, &cfg).unwrap();
    assert_eq!(on.records.len(), off.records.len());
    let mut perception_diffs = 0;
    for (a, b) in on.records.iter().zip(&off.records) {
        match (a, b) {
            (LogRecord::Header { .. }, LogRecord::Header { .. }) => {}
            (LogRecord::Perception(x), LogRecord::Perception(y)) => perception_diffs += (x != y) as usize,
            _ => assert_eq!(a, b),
        }
    }
    assert!(perception_diffs > 0);
}

#[test]
fn spe_toggle_keeps_first_candidates_under_noise() {
    let episodes = harness::load_suite(&fixture("ambiguous")).unwrap();
    let mut cfg = RunConfig::default();
    cfg.noise.p_drop = 0.3;
    cfg.noise.p_spur = 0.3;
    cfg.noise.seed = 3;
    let first = |cfg: &RunConfig, ep: &Episode| {
        run_episode(ep, cfg)
            .unwrap()
            .records
            .into_iter()
            .find(|r| matches!(r, LogRecord::Candidates { .. }))
            .unwrap()
    };
    let mut off = cfg.clone();
    off.ablations.disable_spe = true;
    for ep in episodes.iter().take(6) {
        assert_eq!(first(&cfg, ep), first(&off, ep));
    }
}

#[test]
fn decision_records_are_complete() {
    let run = run_episode(&two_rooms(), &RunConfig::default()).unwrap();
    let decisions: Vec<_> = run.records.iter().filter(|r| matches!(r, LogRecord::Decision { .. })).collect();
    assert_eq!(decisions.len(), run.result.steps.decisions);
    for r in decisions {
        let LogRecord::Decision { candidates, a_w, a_r, action, .. } = r else { unreachable!() };
        assert!(!candidates.is_empty());
        assert!(!a_r.region.is_empty());
        assert!(a_w.is_stop() || a_w.waypoint.is_some_and(|id| candidates.iter().any(|c| c.id == id)));
        assert!(action.is_stop() || action.waypoint.is_some());
    }
    assert!(matches!(run.records.last(), Some(LogRecord::Result { .. })));
}

#[test]
fn malformed_cassette_falls_back_and_flags_degradation() {
    let mut cfg = RunConfig::default();
    cfg.expert = ExpertBackend::Cassette;
    cfg.cassette = Some(fixture("cassettes/malformed_decompose.json"));
    let run = run_episode(&two_rooms(), &cfg).unwrap();
    assert_eq!(run.termination, Termination::Stop);
    let events: Vec<_> = run
        .records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Degradation { event, .. } => Some(event),
            _ => None,
        })
        .collect();
    let decompose = events.iter().find(|e| e.role == "decompose").unwrap();
    assert!(decompose.fallback);
    assert_eq!(decompose.attempts, 3);
    let scripted = run_episode(&two_rooms(), &RunConfig::default()).unwrap();
    assert_eq!(scripted.trajectory, run.trajectory);
}

#[test]
fn conflict_steps_explore_and_switch_target() {
    let episodes = harness::load_suite(&fixture("conflict")).unwrap();
    let (_, runs) = run_suite(&episodes, &RunConfig::default()).unwrap();
    let mut switched = 0;
    for run in &runs {
        branch_law(&run.records).unwrap();
        for r in &run.records {
            if let LogRecord::Decision { exploration: Some(e), a_w, action, .. } = r {
                assert!(e.s_hat_pairs.len() > e.s_pairs.len());
                switched += (action != a_w) as usize;
            }
        }
    }
    assert!(switched > 0);
}

#[test]
fn written_suite_round_trips_through_eval() {
    let dir = tempfile::tempdir().unwrap();
    let episodes = harness::load_suite(&fixture("conflict")).unwrap();
    let cfg = RunConfig::default();
    let (report, runs) = run_suite(&episodes[..2], &cfg).unwrap();
    harness::write_suite(dir.path(), &report, &runs, "Spatial-VLN").unwrap();
    for name in ["report.csv", "report.txt", "report.json"] {
        assert!(dir.path().join(name).exists());
    }
    for ep in &episodes[..2] {
        let records = read_log(&dir.path().join("logs").join(format!("{}.jsonl", ep.id))).unwrap();
        let scene = load_scene(ep.scene_path()).unwrap();
        let (recomputed, stored) = eval_log(&records, &scene).unwrap();
        assert_eq!(Some(recomputed), stored);
    }
}
