//! Command-line front end. `main` returns [`run`]'s exit code.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::harness::{self, log, ExpertBackend, HarnessError, RunConfig};
use crate::metrics::{challenge_score, select_top_k, ChallengeTask};
use crate::perception::perceive;
use crate::sampler::{build_nav_mask, render_pgm, score_map, semantic_weights};
use crate::scene::{load_episode, load_scene, Episode, Pose};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "spatial-vln", version, about = "Continuous 2D vision-and-language navigation lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Default)]
struct RunOpts {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    expert: Option<ExpertBackend>,
    #[arg(long)]
    cassette: Option<PathBuf>,
    #[arg(long)]
    disable_spe: bool,
    #[arg(long)]
    disable_exploration: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_drop: Option<f64>,
    #[arg(long)]
    noise_spur: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunOpts {
    fn config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(e) = self.expert {
            cfg.expert = e;
        }
        if let Some(c) = &self.cassette {
            cfg.cassette = Some(c.clone());
        }
        cfg.ablations.disable_spe |= self.disable_spe;
        cfg.ablations.disable_exploration |= self.disable_exploration;
        if let Some(s) = self.seed {
            cfg.noise.seed = s;
        }
        if let Some(p) = self.noise_drop {
            cfg.noise.p_drop = p;
        }
        if let Some(p) = self.noise_spur {
            cfg.noise.p_spur = p;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one episode and write its log.
    Run {
        #[arg(long)]
        episode: PathBuf,
        /// Scene file overriding the episode's own.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run every episode of a suite directory and write reports.
    Suite {
        #[arg(long)]
        suite: PathBuf,
        /// Row label for the aggregate line of the text report.
        #[arg(long, default_value = "Spatial-VLN")]
        method: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Challenge scores of a suite and the top-k selection for a task.
    Score {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value = "DI")]
        task: ChallengeTask,
        #[arg(long, default_value_t = 100)]
        k: usize,
    },
    /// Recompute metrics from a logged trajectory.
    Eval {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        episode: Option<PathBuf>,
    },
    /// Write the polar value map at a pose as a PGM image.
    RenderMap {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        episode: Option<PathBuf>,
        /// "x,y,heading"; defaults to the episode start.
        #[arg(long)]
        pose: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "map.pgm")]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl From<crate::scene::SceneError> for CliError {
    fn from(e: crate::scene::SceneError) -> Self {
        CliError::Harness(e.into())
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Output goes to `out`.
pub fn run<I, T>(argv: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            EXIT_OK
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn read_episode(path: &Path, scene: Option<&PathBuf>) -> Result<Episode, CliError> {
    let mut ep = load_episode(path)?;
    if let Some(s) = scene {
        ep.scene = s.to_string_lossy().into_owned();
        ep.source_dir = None;
    }
    Ok(ep)
}

fn parse_pose(s: &str) -> Result<Pose, CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("pose '{s}' must be x,y,heading")))?;
    match parts[..] {
        [x, y, h] => Ok(Pose::new(x, y, h)),
        _ => Err(CliError::Usage(format!("pose '{s}' must be x,y,heading"))),
    }
}

fn dispatch(cmd: Command) -> Result<String, CliError> {
    let mut text = String::new();
    match cmd {
        Command::Run { episode, scene, opts } => {
            let cfg = opts.config()?;
            let ep = read_episode(&episode, scene.as_ref())?;
            let run = harness::run_episode(&ep, &cfg)?;
            let path = cfg.out_dir.join(format!("{}.jsonl", ep.id));
            log::write_log(&path, &run.records)?;
            let _ = writeln!(text, "{}", serde_json::to_string_pretty(&run.result).expect("result serializes"));
            let _ = writeln!(text, "termination: {}", run.termination.name());
            let _ = writeln!(text, "log: {}", path.display());
        }
        Command::Suite { suite, method, opts } => {
            let cfg = opts.config()?;
            let episodes = harness::load_suite(&suite)?;
            let (report, runs) = harness::run_suite(&episodes, &cfg)?;
            harness::write_suite(&cfg.out_dir, &report, &runs, &method)?;
            text.push_str(&report.to_table(&method));
            let _ = writeln!(text, "reports: {}", cfg.out_dir.display());
        }
        Command::Score { suite, task, k } => {
            let lexicon = crate::lexicon::Lexicon::default();
            let episodes = harness::load_suite(&suite)?;
            let scored: Vec<_> = episodes
                .iter()
                .map(|e| (e.id.clone(), challenge_score(&e.instruction, &lexicon)))
                .collect();
            let _ = writeln!(text, "{:<24} {:>6} {:>6} {:>8}", "episode", "door", "region", "density");
            for (id, s) in &scored {
                let _ = writeln!(text, "{id:<24} {:>6} {:>6} {:>8.4}", s.door_score, s.region_score, s.landmark_density);
            }
            let _ = writeln!(text, "top-{k} {task:?}: {}", select_top_k(&scored, task, k).join(" "));
        }
        Command::Eval { log: log_path, scene, episode } => {
            let records = log::read_log(&log_path)?;
            let scene_path = match (scene, episode) {
                (Some(s), _) => s,
                (None, Some(e)) => load_episode(&e)?.scene_path(),
                (None, None) => {
                    let ep = harness::logged_episode(&records).ok_or_else(|| HarnessError::Log("no header record".into()))?;
                    log_path.parent().unwrap_or(Path::new(".")).join(&ep.scene)
                }
            };
            let scene = load_scene(&scene_path)?;
            let (recomputed, stored) = harness::eval_log(&records, &scene)?;
            let _ = writeln!(text, "{}", serde_json::to_string_pretty(&recomputed).expect("result serializes"));
            match stored {
                Some(s) if s == recomputed => text.push_str("matches stored metrics\n"),
                Some(_) => return Err(HarnessError::Log("recomputed metrics differ from the stored ones".into()).into()),
                None => text.push_str("log has no stored metrics\n"),
            }
        }
        Command::RenderMap {
            scene,
            episode,
            pose,
            config,
            out,
        } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let ep = episode.as_deref().map(load_episode).transpose()?;
            let scene_path = scene
                .or_else(|| ep.as_ref().map(Episode::scene_path))
                .ok_or_else(|| CliError::Usage("render-map needs --scene or --episode".into()))?;
            let pose = match (pose, &ep) {
                (Some(p), _) => parse_pose(&p)?,
                (None, Some(e)) => e.start,
                (None, None) => return Err(CliError::Usage("render-map needs --pose or --episode".into())),
            };
            let scene = load_scene(&scene_path)?;
            let percept = perceive(&scene, &pose, &cfg.noise, &cfg.perception, true)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let nav = build_nav_mask(&percept.scan).map_err(|e| HarnessError::Config(e.to_string()))?;
            let map = score_map(pose, &nav, &semantic_weights(&percept.views, &cfg.sampler))
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            std::fs::write(&out, render_pgm(&map)).map_err(|e| HarnessError::io(&out, e))?;
            let _ = writeln!(text, "wrote {}", out.display());
        }
    }
    Ok(text)
}
