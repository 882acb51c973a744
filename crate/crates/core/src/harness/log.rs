use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::experts::{
    Decomposition, ExplorationRecord, ExpertEvent, Progress, RegionDecision, WaypointDecision,
};
use crate::geometry::Vec2;
use crate::metrics::EpisodeResult;
use crate::nav::{ActionPrimitive, ExecStatus, Trajectory};
use crate::perception::{
    DoorObservation, FilteredSemantics, GeometricOpening, Percept, RegionPanorama, ViewSemantics,
};
use crate::sampler::Waypoint;
use crate::scene::{Episode, Pose};

use super::config::{Ablations, ExpertBackend};
use super::{HarnessError, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Step,
    Explore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionRecord {
    pub step: usize,
    pub phase: Phase,
    pub pose: Pose,
    pub views: Vec<ViewSemantics>,
    pub panoramas: Vec<RegionPanorama>,
    pub filtered: FilteredSemantics,
    pub openings: Vec<GeometricOpening>,
    pub doors: Vec<DoorObservation>,
}

impl PerceptionRecord {
    pub fn new(step: usize, phase: Phase, p: &Percept) -> Self {
        PerceptionRecord {
            step,
            phase,
            pose: p.pose,
            views: p.views.clone(),
            panoramas: p.panoramas.clone(),
            filtered: p.filtered.clone(),
            openings: p.openings.clone(),
            doors: p.doors.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        episode: Episode,
        backend: ExpertBackend,
        seed: u64,
        p_drop: f64,
        p_spur: f64,
        ablations: Ablations,
        max_decision_steps: usize,
        max_primitives: usize,
        success_radius: f64,
    },
    Decomposition {
        decomposition: Decomposition,
    },
    Perception(PerceptionRecord),
    Candidates {
        step: usize,
        phase: Phase,
        pose: Pose,
        waypoints: Vec<Waypoint>,
    },
    Decision {
        step: usize,
        candidates: Vec<Waypoint>,
        a_w: WaypointDecision,
        a_r: RegionDecision,
        consistent: bool,
        exploration: Option<ExplorationRecord>,
        action: WaypointDecision,
        warnings: Vec<String>,
    },
    Degradation {
        step: Option<usize>,
        event: ExpertEvent,
    },
    Execution {
        step: usize,
        phase: Phase,
        target: Vec2,
        primitives: Vec<ActionPrimitive>,
        status: Option<ExecStatus>,
        pose: Pose,
        error: Option<String>,
    },
    Progress {
        step: usize,
        g_w: Progress,
        g_r: Progress,
        summary_w: Option<String>,
        summary_r: Option<String>,
    },
    Termination {
        reason: Termination,
        decisions: usize,
        primitives: usize,
    },
    Trajectory {
        trajectory: Trajectory,
    },
    Result {
        result: EpisodeResult,
    },
}

pub fn to_jsonl(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("log record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(to_jsonl(records).as_bytes()).map_err(|e| HarnessError::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, HarnessError> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Log(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
