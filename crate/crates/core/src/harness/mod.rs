//! Episode runner, suite runner, seeding and structured logs.

pub mod config;
pub mod log;
pub mod report;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experts::remote::{CassetteTransport, HttpTransport, RemoteExperts, Transport};
use crate::experts::{decide_step, AgentState, Decomposition, ExplorationEnv, ExpertSuite, ScriptedExperts};
use crate::geometry::Vec2;
use crate::lexicon::Lexicon;
use crate::metrics::{evaluate, EpisodeResult};
use crate::nav::{execute_on, plan_to, ExecStatus, Trajectory};
use crate::perception::{perceive_with, NoiseModel, Percept};
use crate::sampler::{build_nav_mask, frontier_point, sample_waypoints, score_map, semantic_weights, Waypoint, WaypointSource};
use crate::scene::{load_episode, load_scene, Episode, Scene, SceneError};

pub use config::{Ablations, Budgets, ExpertBackend, RunConfig};
pub use log::{LogRecord, Phase, PerceptionRecord};
pub use report::{Aggregate, SuiteReport, SuiteRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("config: {0}")]
    Config(String),
    #[error("experts: {0}")]
    Experts(String),
    #[error("log: {0}")]
    Log(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stop,
    DecisionBudget,
    PrimitiveBudget,
    /// Neither the sampler nor the frontier produced a target.
    Exhausted,
    Error(String),
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::Stop => "stop",
            Termination::DecisionBudget => "decision_budget",
            Termination::PrimitiveBudget => "primitive_budget",
            Termination::Exhausted => "exhausted",
            Termination::Error(_) => "error",
        }
    }
}

/// 64-bit FNV-1a of the episode id, keyed by the run seed.
pub fn episode_seed(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn load_lexicon(config: &RunConfig) -> Result<Lexicon, HarnessError> {
    match &config.lexicon {
        Some(p) => Lexicon::load(p).map_err(|e| HarnessError::io(p, e)),
        None => Ok(Lexicon::default()),
    }
}

pub fn build_experts(config: &RunConfig) -> Result<Box<dyn ExpertSuite>, HarnessError> {
    let scripted = ScriptedExperts {
        lexicon: load_lexicon(config)?,
    };
    let transport: Box<dyn Transport> = match config.expert {
        ExpertBackend::Scripted => return Ok(Box::new(scripted)),
        ExpertBackend::Remote => {
            Box::new(HttpTransport::from_env(&config.remote).map_err(|e| HarnessError::Experts(e.to_string()))?)
        }
        ExpertBackend::Cassette => {
            let path = config
                .cassette
                .as_ref()
                .ok_or_else(|| HarnessError::Config("cassette backend requires a cassette path".into()))?;
            Box::new(CassetteTransport::load(path).map_err(|e| HarnessError::Experts(e.to_string()))?)
        }
    };
    Ok(Box::new(RemoteExperts::new(transport, scripted, &config.remote)))
}

#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub trajectory: Trajectory,
    pub result: EpisodeResult,
    pub records: Vec<LogRecord>,
    pub termination: Termination,
}

struct Runner<'a> {
    scene: &'a Scene,
    config: &'a RunConfig,
    experts: &'a dyn ExpertSuite,
    traj: Trajectory,
    records: Vec<LogRecord>,
    seed: u64,
    calls: u64,
    step: usize,
    max_primitives: usize,
    scan: Vec<f64>,
}

impl Runner<'_> {
    fn perceive(&mut self, phase: Phase) -> Result<(Percept, Vec<Waypoint>), String> {
        let call = self.calls;
        self.calls += 1;
        let pose = self.traj.current();
        let noise = NoiseModel {
            seed: splitmix(self.seed ^ splitmix(call)),
            ..self.config.noise
        };
        let experts = self.experts;
        let percept = perceive_with(
            self.scene,
            &pose,
            &noise,
            &self.config.perception,
            !self.config.ablations.disable_spe,
            |v, p| experts.filter(v, p),
        )
        .map_err(|e| e.to_string())?;
        self.records.push(LogRecord::Perception(PerceptionRecord::new(self.step, phase, &percept)));

        let cfg = &self.config.sampler;
        let nav = build_nav_mask(&percept.scan).map_err(|e| e.to_string())?;
        let map = score_map(pose, &nav, &semantic_weights(&percept.views, cfg)).map_err(|e| e.to_string())?;
        let mut waypoints = sample_waypoints(&map, self.scene, cfg, splitmix(self.seed ^ splitmix(call) ^ 0x5A5A));
        if waypoints.is_empty() {
            if let Some(p) = frontier_point(&percept.scan, &pose, self.config.perception.lidar_range, self.scene, cfg) {
                waypoints.push(Waypoint::at(0, &pose, p, 0.0, WaypointSource::Frontier));
            }
        }
        self.records.push(LogRecord::Candidates {
            step: self.step,
            phase,
            pose,
            waypoints: waypoints.clone(),
        });
        self.scan = percept.scan.clone();
        Ok((percept, waypoints))
    }

    fn drive(&mut self, target: Vec2, phase: Phase) -> Result<ExecStatus, String> {
        let pose = self.traj.current();
        let (prims, status, error) = match plan_to(self.scene, &pose, target) {
            Ok(prims) => {
                let status = execute_on(&mut self.traj, self.scene, &prims, self.max_primitives);
                (prims, Some(status), None)
            }
            Err(e) => (Vec::new(), None, Some(e.to_string())),
        };
        self.records.push(LogRecord::Execution {
            step: self.step,
            phase,
            target,
            primitives: prims,
            status,
            pose: self.traj.current(),
            error: error.clone(),
        });
        match (status, error) {
            (Some(s), _) => Ok(s),
            (None, e) => Err(e.unwrap_or_default()),
        }
    }

    fn log_events(&mut self, step: Option<usize>) {
        let mut events = self.experts.drain_events();
        events.sort_by(|a, b| a.role.cmp(&b.role));
        self.records
            .extend(events.into_iter().map(|event| LogRecord::Degradation { step, event }));
    }

    fn budget_spent(&self) -> bool {
        self.traj.primitives.len() >= self.max_primitives
    }
}

impl ExplorationEnv for Runner<'_> {
    fn navigate(&mut self, target: Vec2) -> Result<(), String> {
        match self.drive(target, Phase::Explore)? {
            ExecStatus::Completed => Ok(()),
            ExecStatus::Replan => Err("blocked on the way to the exploration point".into()),
            ExecStatus::Budget => Err("primitive budget exhausted".into()),
        }
    }

    fn observe(&mut self) -> Result<(Percept, Vec<Waypoint>), String> {
        self.perceive(Phase::Explore)
    }

    fn frontier(&self) -> Option<Vec2> {
        frontier_point(
            &self.scan,
            &self.traj.current(),
            self.config.perception.lidar_range,
            self.scene,
            &self.config.sampler,
        )
    }
}

/// Runs one episode against an already loaded scene and expert suite.
pub fn run_episode_with(episode: &Episode, scene: &Scene, config: &RunConfig, experts: &dyn ExpertSuite) -> EpisodeRun {
    let max_steps = config.budgets.max_decision_steps.unwrap_or(episode.max_decision_steps);
    let max_primitives = config.budgets.max_primitives.unwrap_or(episode.max_primitives);
    let mut run = Runner {
        scene,
        config,
        experts,
        traj: Trajectory::new(episode.start),
        records: Vec::new(),
        seed: episode_seed(config.noise.seed, &episode.id),
        calls: 0,
        step: 0,
        max_primitives,
        scan: Vec::new(),
    };
    run.records.push(LogRecord::Header {
        episode: episode.clone(),
        backend: config.expert,
        seed: config.noise.seed,
        p_drop: config.noise.p_drop,
        p_spur: config.noise.p_spur,
        ablations: config.ablations,
        max_decision_steps: max_steps,
        max_primitives,
        success_radius: config.success_radius,
    });

    let decomposition = experts.decompose(&episode.instruction).unwrap_or_else(|e| {
        ::log::warn!("{}: decomposition failed ({e}); using a single go-to task", episode.id);
        Decomposition::fallback(&episode.instruction)
    });
    run.log_events(None);
    run.records.push(LogRecord::Decomposition {
        decomposition: decomposition.clone(),
    });
    let mut state = AgentState::new(&episode.instruction, decomposition);

    let mut termination = Termination::DecisionBudget;
    for step in 0..max_steps {
        if run.budget_spent() {
            termination = Termination::PrimitiveBudget;
            break;
        }
        run.step = step;
        run.traj.mark_decision();
        let (percept, candidates) = match run.perceive(Phase::Step) {
            Ok(x) => x,
            Err(e) => {
                termination = Termination::Error(e);
                break;
            }
        };
        if candidates.is_empty() {
            termination = Termination::Exhausted;
            break;
        }
        let decided = decide_step(
            experts,
            &state,
            &percept,
            &candidates,
            &mut run,
            !config.ablations.disable_exploration,
        );
        run.log_events(Some(step));
        let outcome = match decided {
            Ok(o) => o,
            Err(e) => {
                termination = Termination::Error(e.to_string());
                break;
            }
        };
        run.records.push(LogRecord::Decision {
            step,
            candidates: candidates.clone(),
            a_w: outcome.a_w.clone(),
            a_r: outcome.a_r.clone(),
            consistent: outcome.consistent,
            exploration: outcome.exploration.clone(),
            action: outcome.action.clone(),
            warnings: outcome.warnings.clone(),
        });
        if outcome.action.is_stop() {
            termination = Termination::Stop;
            break;
        }
        if run.budget_spent() {
            termination = Termination::PrimitiveBudget;
            break;
        }
        let target = outcome
            .action
            .waypoint
            .and_then(|id| outcome.candidates.iter().find(|c| c.id == id))
            .map(|c| c.position);
        if let Some(target) = target {
            if let Ok(ExecStatus::Budget) = run.drive(target, Phase::Step) {
                termination = Termination::PrimitiveBudget;
                break;
            }
        }
        state.update(experts, step, &outcome.percept);
        run.log_events(Some(step));
        run.records.push(LogRecord::Progress {
            step,
            g_w: state.g_w.clone(),
            g_r: state.g_r.clone(),
            summary_w: state.h_w.entries.back().map(|e| e.summary.clone()),
            summary_r: state.h_r.entries.back().map(|e| e.summary.clone()),
        });
    }

    let result = evaluate(&run.traj, episode, scene, config.success_radius);
    run.records.push(LogRecord::Termination {
        reason: termination.clone(),
        decisions: run.traj.markers.len(),
        primitives: run.traj.primitives.len(),
    });
    run.records.push(LogRecord::Trajectory {
        trajectory: run.traj.clone(),
    });
    run.records.push(LogRecord::Result { result: result.clone() });
    EpisodeRun {
        trajectory: run.traj,
        result,
        records: run.records,
        termination,
    }
}

/// Loads the episode's scene, builds the configured experts and runs it.
pub fn run_episode(episode: &Episode, config: &RunConfig) -> Result<EpisodeRun, HarnessError> {
    config.validate()?;
    let scene = load_scene(episode.scene_path())?;
    episode.validate(&scene)?;
    let experts = build_experts(config)?;
    Ok(run_episode_with(episode, &scene, config, experts.as_ref()))
}

/// Runs every episode in parallel; rows keep the input order.
pub fn run_suite(episodes: &[Episode], config: &RunConfig) -> Result<(SuiteReport, Vec<EpisodeRun>), HarnessError> {
    let runs: Vec<EpisodeRun> = episodes
        .par_iter()
        .map(|ep| run_episode(ep, config))
        .collect::<Result<_, _>>()?;
    let rows = episodes
        .iter()
        .zip(&runs)
        .map(|(ep, r)| SuiteRow {
            episode: ep.id.clone(),
            result: r.result.clone(),
            termination: r.termination.clone(),
        })
        .collect();
    Ok((SuiteReport::new(config, rows), runs))
}

/// Writes per-episode logs under `dir/logs` and the report files into `dir`.
pub fn write_suite(dir: &Path, report: &SuiteReport, runs: &[EpisodeRun], method: &str) -> Result<(), HarnessError> {
    for (row, run) in report.rows.iter().zip(runs) {
        log::write_log(&dir.join("logs").join(format!("{}.jsonl", row.episode)), &run.records)?;
    }
    report.write(dir, method)
}

/// Episodes of a suite directory (`*.episode.json`), in file-name order.
pub fn load_suite(dir: &Path) -> Result<Vec<Episode>, HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".episode.json"))
        .collect();
    paths.sort();
    paths.into_iter().map(|p| load_episode(&p).map_err(HarnessError::from)).collect()
}

/// Re-evaluates the trajectory stored in a log. Returns (recomputed, stored).
pub fn eval_log(records: &[LogRecord], scene: &Scene) -> Result<(EpisodeResult, Option<EpisodeResult>), HarnessError> {
    let (episode, radius) = records
        .iter()
        .find_map(|r| match r {
            LogRecord::Header {
                episode,
                success_radius,
                ..
            } => Some((episode, *success_radius)),
            _ => None,
        })
        .ok_or_else(|| HarnessError::Log("no header record".into()))?;
    let traj = records
        .iter()
        .find_map(|r| match r {
            LogRecord::Trajectory { trajectory } => Some(trajectory),
            _ => None,
        })
        .ok_or_else(|| HarnessError::Log("no trajectory record".into()))?;
    let stored = records.iter().find_map(|r| match r {
        LogRecord::Result { result } => Some(result.clone()),
        _ => None,
    });
    Ok((evaluate(traj, episode, scene, radius), stored))
}

/// Scene for a logged episode, resolved against `episode_dir`.
pub fn logged_episode(records: &[LogRecord]) -> Option<&Episode> {
    records.iter().find_map(|r| match r {
        LogRecord::Header { episode, .. } => Some(episode),
        _ => None,
    })
}
