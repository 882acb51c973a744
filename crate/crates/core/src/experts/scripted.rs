//! Deterministic rule-based handlers for every expert role.

use std::collections::BTreeMap;

use crate::geometry::wrap_signed_deg;
use crate::lexicon::{tokenize, Category, Lexicon};
use crate::perception::{consistency_filter, FilteredSemantics, RegionPanorama, Sector, ViewSemantics};

use super::*;

/// Verbs that form a complete subtask without a target.
const TERMINAL_VERBS: [&str; 2] = ["stop", "wait"];

#[derive(Debug, Clone, Default)]
pub struct ScriptedExperts {
    pub lexicon: Lexicon,
}

fn split_clauses(instruction: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for chunk in instruction.split([',', ';', '.']) {
        let mut cur = Vec::new();
        for t in tokenize(chunk) {
            if t == "and" || t == "then" {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            } else {
                cur.push(t);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// +2 for an exact label match, +1 when one contains the other.
pub fn match_score(label: &str, target: &str) -> f64 {
    let (l, t) = (label.to_lowercase(), target.to_lowercase());
    if t.is_empty() || l.is_empty() {
        0.0
    } else if l == t {
        2.0
    } else if l.contains(&t) || t.contains(&l) {
        1.0
    } else {
        0.0
    }
}

impl ScriptedExperts {
    pub fn new(lexicon: Lexicon) -> Self {
        ScriptedExperts { lexicon }
    }

    /// Region label with the highest summed sector confidence.
    pub fn dominant_region(&self, panoramas: &[RegionPanorama]) -> Option<String> {
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for p in panoramas {
            for l in &p.labels {
                if self.lexicon.is_region(&l.label) {
                    *sums.entry(l.label.to_lowercase()).or_insert(0.0) += l.confidence;
                }
            }
        }
        sums.into_iter()
            .fold(None, |best: Option<(String, f64)>, (l, s)| match best {
                Some((bl, bs)) if bs >= s => Some((bl, bs)),
                _ => Some((l, s)),
            })
            .map(|(l, _)| l)
    }

    fn door_bonus(&self, ctx: &WaypointContext<'_>, target: &str, sector: Sector) -> f64 {
        let is_door = self.lexicon.is_door_term(target);
        let is_region = self.lexicon.is_region(target);
        if !is_door && !is_region {
            return 0.0;
        }
        let areas: Vec<&str> = ctx.decomposition.areas().collect();
        let hit = ctx.doors.iter().any(|d| {
            let ext = d.external.as_deref();
            d.is_open()
                && d.sector() == sector
                && if is_region {
                    ext.is_some_and(|e| matches_label(e, target))
                } else {
                    areas.is_empty() || ext.is_some_and(|e| areas.iter().any(|a| matches_label(a, e)))
                }
        });
        if hit {
            1.0
        } else {
            0.0
        }
    }
}

impl ExpertSuite for ScriptedExperts {
    fn backend(&self) -> &'static str {
        "scripted"
    }

    fn filter(&self, views: &[ViewSemantics], panoramas: &[RegionPanorama]) -> FilteredSemantics {
        consistency_filter(views, panoramas)
    }

    fn decompose(&self, instruction: &str) -> Result<Decomposition, ExpertError> {
        let lx = &self.lexicon;
        let mut waypoint_tasks = Vec::new();
        let mut region_tasks = Vec::new();
        for clause in split_clauses(instruction) {
            let verb = lx.first_in(&clause, Category::Verb);
            let verb_text = verb.map_or("go".to_string(), |(_, v, _)| v.to_string());
            if let Some((_, region, _)) = lx.first_in(&clause, Category::Region) {
                region_tasks.push(SubTask::new(verb_text, region, Track::Region));
                continue;
            }
            let object = [Category::Door, Category::Object]
                .into_iter()
                .filter_map(|c| lx.first_in(&clause, c))
                .min_by_key(|&(i, _, n)| (i, std::cmp::Reverse(n)));
            if let Some((_, target, _)) = object {
                waypoint_tasks.push(SubTask::new(verb_text, target, Track::Waypoint));
            } else if verb.is_some_and(|(_, v, _)| TERMINAL_VERBS.contains(&v)) {
                waypoint_tasks.push(SubTask::new(verb_text, "", Track::Waypoint));
            }
        }
        if waypoint_tasks.is_empty() && region_tasks.is_empty() {
            return Err(ExpertError::EmptyDecomposition);
        }
        if waypoint_tasks.is_empty() {
            // the waypoint expert needs a goal; head for the final area
            let last = region_tasks.last().unwrap().target.clone();
            waypoint_tasks.push(SubTask::new("go to", last, Track::Waypoint));
        }
        Ok(Decomposition {
            waypoint_tasks,
            region_tasks,
        })
    }

    fn update_history_w(
        &self,
        h: &HistoryState,
        step: usize,
        heading: f64,
        filtered: &FilteredSemantics,
        _relations: &[String],
    ) -> HistoryState {
        let dominant = dominant_labels(
            filtered
                .views
                .iter()
                .flat_map(|v| v.labels.iter().map(|l| (l.label.as_str(), l.confidence))),
        );
        let summary = format!("step {step}: saw {}", dominant.join(", "));
        h.push(step, summary, dominant, heading)
    }

    fn update_history_r(
        &self,
        h: &HistoryState,
        step: usize,
        heading: f64,
        panoramas: &[RegionPanorama],
        _relations: &[String],
    ) -> HistoryState {
        let dominant = dominant_labels(
            panoramas
                .iter()
                .flat_map(|p| p.labels.iter().map(|l| (l.label.as_str(), l.confidence))),
        );
        let summary = format!("step {step}: around {}", dominant.join(", "));
        h.push(step, summary, dominant, heading)
    }

    fn update_progress_w(
        &self,
        p: &Progress,
        decomposition: &Decomposition,
        _h: &HistoryState,
        filtered: &FilteredSemantics,
    ) -> Progress {
        if p.is_complete() {
            return p.clone();
        }
        let target = &decomposition.waypoint_tasks[p.index].target;
        let seen = !target.is_empty() && filtered.max_confidence(target).is_some_and(|c| c >= PROGRESS_CONFIDENCE);
        if seen {
            p.advanced_to(p.index + 1)
        } else {
            p.clone()
        }
    }

    fn update_progress_r(
        &self,
        p: &Progress,
        decomposition: &Decomposition,
        _h: &HistoryState,
        panoramas: &[RegionPanorama],
    ) -> Progress {
        let dominant = self.dominant_region(panoramas);
        let changed = p.last_dominant.is_some() && dominant.is_some() && p.last_dominant != dominant;
        let mut next = p.clone();
        if !p.is_complete() {
            let target = &decomposition.region_tasks[p.index].target;
            let seen = panoramas
                .iter()
                .flat_map(|s| &s.labels)
                .any(|l| matches_label(&l.label, target) && l.confidence >= PROGRESS_CONFIDENCE);
            if seen && changed {
                next = p.advanced_to(p.index + 1);
            }
        }
        if dominant.is_some() {
            next.last_dominant = dominant;
        }
        next
    }

    fn act_waypoint(&self, ctx: &WaypointContext<'_>) -> Result<WaypointDecision, ExpertError> {
        if ctx.progress.is_complete() {
            return Ok(WaypointDecision::stop("all waypoint subtasks complete"));
        }
        let task = &ctx.decomposition.waypoint_tasks[ctx.progress.index];
        if task.target.is_empty() {
            return Ok(WaypointDecision::stop(format!("subtask '{}' has no target", task.verb)));
        }
        if ctx.candidates.is_empty() {
            return Err(ExpertError::NoCandidates);
        }
        let mut by_sector = [0.0f64; 4];
        for s in Sector::ALL {
            by_sector[s.index()] = ctx
                .filtered
                .labels_in_sector(s)
                .iter()
                .map(|l| match_score(&l.label, &task.target))
                .fold(0.0, f64::max)
                + self.door_bonus(ctx, &task.target, s);
        }
        let score = |c: &Waypoint| by_sector[c.sector.index()] - wrap_signed_deg(c.azimuth_rel).abs() / 180.0;
        let best = ctx
            .candidates
            .iter()
            .min_by(|a, b| {
                score(b)
                    .total_cmp(&score(a))
                    .then(wrap_signed_deg(a.azimuth_rel).abs().total_cmp(&wrap_signed_deg(b.azimuth_rel).abs()))
                    .then(a.id.cmp(&b.id))
            })
            .expect("candidates non-empty");
        Ok(WaypointDecision::goto(
            best.id,
            format!(
                "{} {}: {} sector scores {:.3}",
                task.verb,
                task.target,
                best.sector.name(),
                score(best)
            ),
        ))
    }

    fn act_region(&self, ctx: &RegionContext<'_>) -> RegionDecision {
        if let Some(task) = ctx.decomposition.region_tasks.get(ctx.progress.index) {
            let in_view = ctx.panoramas.iter().any(|p| p.has_label(&task.target));
            let via_door = ctx
                .doors
                .iter()
                .any(|d| d.is_open() && d.external.as_deref().is_some_and(|e| matches_label(e, &task.target)));
            if in_view || via_door {
                return RegionDecision {
                    region: task.target.clone(),
                    rationale: format!("{} is observable", task.target),
                };
            }
        }
        let region = self.dominant_region(ctx.panoramas).unwrap_or_default();
        RegionDecision {
            rationale: format!("staying in {region}"),
            region,
        }
    }

    fn explore(&self, ctx: &ExploreContext<'_>) -> ExplorationTarget {
        const PRIORITY: [Sector; 4] = [Sector::Front, Sector::Left, Sector::Right, Sector::Back];
        let score = |s: Sector| {
            ctx.panoramas
                .iter()
                .filter(|p| p.sector == s)
                .flat_map(|p| &p.labels)
                .map(|l| match_score(&l.label, &ctx.a_r.region))
                .fold(0.0, f64::max)
        };
        let mut best: Option<(Sector, f64)> = None;
        for s in PRIORITY {
            if Some(s) == ctx.waypoint_sector {
                continue;
            }
            let v = score(s);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((s, v));
            }
        }
        ExplorationTarget {
            sector: best.map_or(Sector::Front, |(s, _)| s),
        }
    }
}
