//! Multi-expert reasoning: instruction decomposition, dual-scale history and
//! progress, waypoint and region action experts, and conflict-triggered
//! exploration.
//!
//! Waypoint-track handlers receive only per-view semantics; region-track
//! handlers receive only sector panoramas. The context types enforce this.

pub mod remote;
pub mod scripted;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_deg, wrap_signed_deg, Vec2};
use crate::perception::{
    view_of_bearing, DoorObservation, FilteredLabel, FilteredSemantics, FilteredView, Label, Percept, RegionPanorama,
    Sector, ViewSemantics,
};
use crate::sampler::{Waypoint, WaypointSource};

pub use remote::RemoteExperts;
pub use scripted::ScriptedExperts;

/// Maximum entries kept per history track.
pub const HISTORY_CAP: usize = 12;
/// Confidence a target label needs before a subtask counts as reached.
pub const PROGRESS_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum ExpertError {
    #[error("instruction yields no subtasks")]
    EmptyDecomposition,
    #[error("no candidate waypoints while the waypoint track is incomplete")]
    NoCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    Waypoint,
    Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTask {
    pub verb: String,
    pub target: String,
    pub track: Track,
}

impl SubTask {
    pub fn new(verb: impl Into<String>, target: impl Into<String>, track: Track) -> Self {
        SubTask {
            verb: verb.into(),
            target: target.into(),
            track,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub waypoint_tasks: Vec<SubTask>,
    pub region_tasks: Vec<SubTask>,
}

impl Decomposition {
    /// Single ("go", last word) waypoint task used when parsing finds nothing.
    pub fn fallback(instruction: &str) -> Decomposition {
        let last = crate::lexicon::tokenize(instruction).pop().unwrap_or_default();
        Decomposition {
            waypoint_tasks: vec![SubTask::new("go", last, Track::Waypoint)],
            region_tasks: Vec::new(),
        }
    }

    pub fn areas(&self) -> impl Iterator<Item = &str> {
        self.region_tasks.iter().map(|t| t.target.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub summary: String,
    pub dominant: Vec<String>,
    pub heading_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryState {
    pub track: Track,
    pub entries: VecDeque<HistoryEntry>,
    pub last_heading: Option<f64>,
}

impl HistoryState {
    pub fn new(track: Track) -> Self {
        HistoryState {
            track,
            entries: VecDeque::new(),
            last_heading: None,
        }
    }

    /// Appends an entry, evicting the oldest beyond the cap. Steps that do not
    /// advance past the newest entry are ignored.
    pub fn push(&self, step: usize, summary: String, dominant: Vec<String>, heading: f64) -> HistoryState {
        let mut next = self.clone();
        if next.entries.back().is_some_and(|e| e.step >= step) {
            return next;
        }
        let heading_delta = self.last_heading.map_or(0.0, |h| wrap_signed_deg(heading - h));
        next.entries.push_back(HistoryEntry {
            step,
            summary,
            dominant,
            heading_delta,
        });
        while next.entries.len() > HISTORY_CAP {
            next.entries.pop_front();
        }
        next.last_heading = Some(heading);
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgressStatus {
    InProgress,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub track: Track,
    pub index: usize,
    pub total: usize,
    pub status: ProgressStatus,
    /// Dominant region seen at the previous update (region track only).
    pub last_dominant: Option<String>,
}

impl Progress {
    pub fn new(track: Track, total: usize) -> Self {
        Progress {
            track,
            index: 0,
            total,
            status: if total == 0 {
                ProgressStatus::Complete
            } else {
                ProgressStatus::InProgress
            },
            last_dominant: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.status == ProgressStatus::Complete
    }

    /// Moves the pointer to `index`, never backwards and never past the end.
    pub fn advanced_to(&self, index: usize) -> Progress {
        let index = index.clamp(self.index, self.total);
        Progress {
            index,
            status: if index == self.total {
                ProgressStatus::Complete
            } else {
                ProgressStatus::InProgress
            },
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionKind {
    Goto,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointDecision {
    pub kind: DecisionKind,
    pub waypoint: Option<usize>,
    pub rationale: String,
}

impl WaypointDecision {
    pub fn stop(rationale: impl Into<String>) -> Self {
        WaypointDecision {
            kind: DecisionKind::Stop,
            waypoint: None,
            rationale: rationale.into(),
        }
    }

    pub fn goto(id: usize, rationale: impl Into<String>) -> Self {
        WaypointDecision {
            kind: DecisionKind::Goto,
            waypoint: Some(id),
            rationale: rationale.into(),
        }
    }

    pub fn is_stop(&self) -> bool {
        self.kind == DecisionKind::Stop
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDecision {
    pub region: String,
    pub rationale: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationTarget {
    pub sector: Sector,
}

/// Inputs visible to waypoint-track handlers.
#[derive(Debug, Clone, Copy)]
pub struct WaypointContext<'a> {
    pub instruction: &'a str,
    pub decomposition: &'a Decomposition,
    pub filtered: &'a FilteredSemantics,
    pub relations: &'a [String],
    pub history: &'a HistoryState,
    pub progress: &'a Progress,
    pub doors: &'a [DoorObservation],
    pub candidates: &'a [Waypoint],
}

/// Inputs visible to region-track handlers.
#[derive(Debug, Clone, Copy)]
pub struct RegionContext<'a> {
    pub instruction: &'a str,
    pub decomposition: &'a Decomposition,
    pub panoramas: &'a [RegionPanorama],
    pub relations: &'a [String],
    pub history: &'a HistoryState,
    pub progress: &'a Progress,
    pub doors: &'a [DoorObservation],
}

#[derive(Debug, Clone, Copy)]
pub struct ExploreContext<'a> {
    pub instruction: &'a str,
    pub filtered: &'a FilteredSemantics,
    pub panoramas: &'a [RegionPanorama],
    pub relations: &'a [String],
    pub progress_w: &'a Progress,
    pub progress_r: &'a Progress,
    pub a_w: &'a WaypointDecision,
    pub a_r: &'a RegionDecision,
    /// Sector of the waypoint chosen by a_w, if it chose one.
    pub waypoint_sector: Option<Sector>,
}

/// A degraded remote call, surfaced in the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertEvent {
    pub role: String,
    pub attempts: usize,
    pub error: String,
    pub fallback: bool,
}

/// One handler per prompt role.
pub trait ExpertSuite: Send + Sync {
    fn backend(&self) -> &'static str;
    fn filter(&self, views: &[ViewSemantics], panoramas: &[RegionPanorama]) -> FilteredSemantics;
    fn decompose(&self, instruction: &str) -> Result<Decomposition, ExpertError>;
    fn update_history_w(
        &self,
        h: &HistoryState,
        step: usize,
        heading: f64,
        filtered: &FilteredSemantics,
        relations: &[String],
    ) -> HistoryState;
    fn update_history_r(
        &self,
        h: &HistoryState,
        step: usize,
        heading: f64,
        panoramas: &[RegionPanorama],
        relations: &[String],
    ) -> HistoryState;
    fn update_progress_w(
        &self,
        p: &Progress,
        decomposition: &Decomposition,
        h: &HistoryState,
        filtered: &FilteredSemantics,
    ) -> Progress;
    fn update_progress_r(
        &self,
        p: &Progress,
        decomposition: &Decomposition,
        h: &HistoryState,
        panoramas: &[RegionPanorama],
    ) -> Progress;
    fn act_waypoint(&self, ctx: &WaypointContext<'_>) -> Result<WaypointDecision, ExpertError>;
    fn act_region(&self, ctx: &RegionContext<'_>) -> RegionDecision;
    fn explore(&self, ctx: &ExploreContext<'_>) -> ExplorationTarget;
    /// Degradation events since the last call.
    fn drain_events(&self) -> Vec<ExpertEvent> {
        Vec::new()
    }
}

/// Top-3 labels by confidence, deduplicated by name.
pub fn dominant_labels<'a>(labels: impl Iterator<Item = (&'a str, f64)>) -> Vec<String> {
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for (l, c) in labels {
        let e = best.entry(l.to_lowercase()).or_insert(c);
        *e = e.max(c);
    }
    let mut v: Vec<(String, f64)> = best.into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().take(3).map(|(l, _)| l).collect()
}

pub fn matches_label(a: &str, b: &str) -> bool {
    a.eq_ignore_ascii_case(b)
}

/// Whether the chosen waypoint lies in the region the region expert predicts,
/// judged from sector labels and door external semantics only.
pub fn consistent(
    a_w: &WaypointDecision,
    a_r: &RegionDecision,
    candidates: &[Waypoint],
    panoramas: &[RegionPanorama],
    doors: &[DoorObservation],
) -> bool {
    if a_w.is_stop() {
        return true;
    }
    let Some(w) = a_w.waypoint.and_then(|id| candidates.iter().find(|c| c.id == id)) else {
        return false;
    };
    panoramas
        .iter()
        .filter(|p| p.sector == w.sector)
        .any(|p| p.has_label(&a_r.region))
        || doors.iter().any(|d| {
            d.is_open() && d.sector() == w.sector && d.external.as_deref().is_some_and(|e| matches_label(e, &a_r.region))
        })
}

/// Re-expresses a relative azimuth taken at heading `from` in the frame of
/// heading `to`.
fn shift(azimuth_rel: f64, from: f64, to: f64) -> f64 {
    normalize_deg(azimuth_rel + from - to)
}

fn merge_labels(into: &mut Vec<FilteredLabel>, more: impl IntoIterator<Item = FilteredLabel>) {
    for l in more {
        match into.iter_mut().find(|x| matches_label(&x.label, &l.label)) {
            Some(x) => x.confidence = x.confidence.max(l.confidence),
            None => into.push(l),
        }
    }
}

/// Direction-aligned union of the original observation into the frame of
/// the exploration observation: Ŝ per view, relation phrases as a plain union.
pub fn augment(original: &Percept, explored: &Percept) -> Percept {
    let (h0, h1) = (original.pose.heading, explored.pose.heading);
    let mut out = explored.clone();
    let mapped = mapped_filtered(original, h1);
    for fv in &mapped.views {
        if let Some(target) = out.filtered.views.iter_mut().find(|v| v.view_index == fv.view_index) {
            merge_labels(&mut target.labels, fv.labels.iter().cloned());
        }
    }
    for v in &original.views {
        let idx = view_of_bearing(shift(v.azimuth_rel, h0, h1));
        if let Some(target) = out.views.iter_mut().find(|t| t.view_index == idx) {
            for l in &v.labels {
                if !target.labels.iter().any(|x| matches_label(&x.label, &l.label)) {
                    target.labels.push(Label::new(l.label.clone(), l.confidence));
                }
            }
            for r in &v.relations {
                if !target.relations.contains(r) {
                    target.relations.push(r.clone());
                }
            }
        }
    }
    for p in &original.panoramas {
        let sector = Sector::of_azimuth(shift(p.sector.center_deg(), h0, h1));
        let target = &mut out.panoramas[sector.index()];
        for l in &p.labels {
            if !target.has_label(&l.label) {
                target.labels.push(l.clone());
            }
        }
        for r in &p.relations {
            if !target.relations.contains(r) {
                target.relations.push(r.clone());
            }
        }
    }
    for d in &original.doors {
        let az = shift(d.azimuth_rel, h0, h1);
        if !out.doors.iter().any(|x| view_of_bearing(x.azimuth_rel) == view_of_bearing(az)) {
            let mut d = d.clone();
            d.azimuth_rel = crate::perception::view_azimuth(view_of_bearing(az));
            d.roi = (d.azimuth_rel - 15.0, d.azimuth_rel + 15.0);
            out.doors.push(d);
        }
    }
    out
}

/// The original filtered semantics re-indexed into the frame of heading `to`.
pub fn mapped_filtered(original: &Percept, to: f64) -> FilteredSemantics {
    let h0 = original.pose.heading;
    let mut views: Vec<FilteredView> = (1..=crate::perception::VIEW_COUNT)
        .map(|i| FilteredView {
            view_index: i,
            labels: Vec::new(),
        })
        .collect();
    for fv in &original.filtered.views {
        let idx = view_of_bearing(shift(crate::perception::view_azimuth(fv.view_index), h0, to));
        merge_labels(&mut views[idx - 1].labels, fv.labels.iter().cloned());
    }
    FilteredSemantics { views }
}

/// Navigation and sensing the exploration branch needs from the runner.
pub trait ExplorationEnv {
    /// Drives to `target`, charging primitives to the episode budget.
    fn navigate(&mut self, target: Vec2) -> Result<(), String>;
    /// Perceives and samples candidates at the current pose.
    fn observe(&mut self) -> Result<(Percept, Vec<Waypoint>), String>;
    fn frontier(&self) -> Option<Vec2>;
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub instruction: String,
    pub decomposition: Decomposition,
    pub h_w: HistoryState,
    pub h_r: HistoryState,
    pub g_w: Progress,
    pub g_r: Progress,
}

impl AgentState {
    pub fn new(instruction: &str, decomposition: Decomposition) -> Self {
        let (nw, nr) = (decomposition.waypoint_tasks.len(), decomposition.region_tasks.len());
        AgentState {
            instruction: instruction.to_string(),
            decomposition,
            h_w: HistoryState::new(Track::Waypoint),
            h_r: HistoryState::new(Track::Region),
            g_w: Progress::new(Track::Waypoint, nw),
            g_r: Progress::new(Track::Region, nr),
        }
    }

    /// Folds one step's percept into both history and progress tracks.
    pub fn update(&mut self, experts: &dyn ExpertSuite, step: usize, percept: &Percept) {
        let heading = percept.pose.heading;
        self.h_w = experts.update_history_w(&self.h_w, step, heading, &percept.filtered, &percept.view_relations());
        self.h_r = experts.update_history_r(&self.h_r, step, heading, &percept.panoramas, &percept.region_relations());
        self.g_w = experts.update_progress_w(&self.g_w, &self.decomposition, &self.h_w, &percept.filtered);
        self.g_r = experts.update_progress_r(&self.g_r, &self.decomposition, &self.h_r, &percept.panoramas);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationRecord {
    pub sector: Sector,
    pub target: Vec2,
    pub source: WaypointSource,
    pub reached: bool,
    /// Original (view, label) pairs mapped into the explored frame.
    pub s_pairs: Vec<(usize, String)>,
    pub s_hat_pairs: Vec<(usize, String)>,
    pub r_count: usize,
    pub r_hat_count: usize,
    pub strictly_augmented: bool,
    pub a_w_augmented: Option<WaypointDecision>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub a_w: WaypointDecision,
    pub a_r: RegionDecision,
    pub consistent: bool,
    pub exploration: Option<ExplorationRecord>,
    pub action: WaypointDecision,
    /// Candidate set the final action refers to.
    pub candidates: Vec<Waypoint>,
    /// Percept the histories and progress should absorb.
    pub percept: Percept,
    pub warnings: Vec<String>,
}

fn waypoint_ctx<'a>(state: &'a AgentState, percept: &'a Percept, relations: &'a [String], candidates: &'a [Waypoint]) -> WaypointContext<'a> {
    WaypointContext {
        instruction: &state.instruction,
        decomposition: &state.decomposition,
        filtered: &percept.filtered,
        relations,
        history: &state.h_w,
        progress: &state.g_w,
        doors: &percept.doors,
        candidates,
    }
}

/// One decision step: run both action experts, accept a_w when consistent,
/// otherwise explore once and re-decide on the augmented observation.
pub fn decide_step(
    experts: &dyn ExpertSuite,
    state: &AgentState,
    percept: &Percept,
    candidates: &[Waypoint],
    env: &mut dyn ExplorationEnv,
    exploration_enabled: bool,
) -> Result<StepOutcome, ExpertError> {
    let view_relations = percept.view_relations();
    let region_relations = percept.region_relations();
    let wctx = waypoint_ctx(state, percept, &view_relations, candidates);
    let rctx = RegionContext {
        instruction: &state.instruction,
        decomposition: &state.decomposition,
        panoramas: &percept.panoramas,
        relations: &region_relations,
        history: &state.h_r,
        progress: &state.g_r,
        doors: &percept.doors,
    };
    let (a_w, a_r) = rayon::join(|| experts.act_waypoint(&wctx), || experts.act_region(&rctx));
    let a_w = a_w?;
    let is_consistent = consistent(&a_w, &a_r, candidates, &percept.panoramas, &percept.doors);
    let mut outcome = StepOutcome {
        a_w: a_w.clone(),
        a_r: a_r.clone(),
        consistent: is_consistent,
        exploration: None,
        action: a_w.clone(),
        candidates: candidates.to_vec(),
        percept: percept.clone(),
        warnings: Vec::new(),
    };
    if is_consistent || !exploration_enabled {
        return Ok(outcome);
    }

    let waypoint_sector = a_w.waypoint.and_then(|id| candidates.iter().find(|c| c.id == id)).map(|c| c.sector);
    let target = experts.explore(&ExploreContext {
        instruction: &state.instruction,
        filtered: &percept.filtered,
        panoramas: &percept.panoramas,
        relations: &region_relations,
        progress_w: &state.g_w,
        progress_r: &state.g_r,
        a_w: &a_w,
        a_r: &a_r,
        waypoint_sector,
    });
    let in_sector = candidates
        .iter()
        .filter(|c| c.sector == target.sector)
        .max_by(|a, b| a.range.total_cmp(&b.range).then(b.id.cmp(&a.id)));
    let (goal, source) = match in_sector {
        Some(c) => (c.position, c.source),
        None => match env.frontier() {
            Some(p) => (p, WaypointSource::Frontier),
            None => {
                outcome
                    .warnings
                    .push(format!("no exploration point in {} sector; keeping a_w", target.sector.name()));
                return Ok(outcome);
            }
        },
    };
    let mut record = ExplorationRecord {
        sector: target.sector,
        target: goal,
        source,
        reached: false,
        s_pairs: Vec::new(),
        s_hat_pairs: Vec::new(),
        r_count: 0,
        r_hat_count: 0,
        strictly_augmented: false,
        a_w_augmented: None,
    };
    if let Err(e) = env.navigate(goal) {
        outcome.warnings.push(format!("exploration navigation failed: {e}; keeping a_w"));
        outcome.exploration = Some(record);
        return Ok(outcome);
    }
    record.reached = true;
    let (explored, new_candidates) = match env.observe() {
        Ok(x) => x,
        Err(e) => {
            outcome.warnings.push(format!("re-perception failed: {e}; keeping a_w"));
            outcome.exploration = Some(record);
            return Ok(outcome);
        }
    };
    let augmented = augment(percept, &explored);
    let s = mapped_filtered(percept, explored.pose.heading).pairs();
    let s_hat = augmented.filtered.pairs();
    let r: std::collections::BTreeSet<String> = view_relations.iter().cloned().collect();
    let r_hat: std::collections::BTreeSet<String> = augmented.view_relations().into_iter().collect();
    record.strictly_augmented = s.is_subset(&s_hat) && s_hat.len() > s.len() && r.is_subset(&r_hat);
    record.s_pairs = s.into_iter().collect();
    record.s_hat_pairs = s_hat.into_iter().collect();
    record.r_count = r.len();
    record.r_hat_count = r_hat.len();

    let aug_relations = augmented.view_relations();
    let decision = experts.act_waypoint(&waypoint_ctx(state, &augmented, &aug_relations, &new_candidates));
    match decision {
        Ok(d) => {
            record.a_w_augmented = Some(d.clone());
            outcome.action = d;
            outcome.candidates = new_candidates;
        }
        Err(e) => {
            outcome.warnings.push(format!("augmented decision failed: {e}; keeping a_w"));
        }
    }
    outcome.percept = augmented;
    outcome.exploration = Some(record);
    Ok(outcome)
}
