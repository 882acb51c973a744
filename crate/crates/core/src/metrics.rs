//! Episode metrics and instruction difficulty scoring.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::lexicon::{tokenize, Category, Lexicon};
use crate::nav::Trajectory;
use crate::scene::{Episode, Scene};

/// Success radius (m).
pub const SUCCESS_RADIUS: f64 = 3.0;
/// Spacing of the resampled reference path (m).
pub const REFERENCE_SPACING: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCounts {
    pub decisions: usize,
    pub primitives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub tl: f64,
    pub ne: f64,
    pub success: bool,
    pub oracle_success: bool,
    pub spl: f64,
    pub ndtw: f64,
    pub semantic_success: Option<bool>,
    pub steps: StepCounts,
}

pub fn path_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Points every `spacing` along the polyline, plus its final vertex.
pub fn resample_polyline(points: &[Vec2], spacing: f64) -> Vec<Vec2> {
    let Some(&first) = points.first() else {
        return Vec::new();
    };
    let mut out = vec![first];
    let mut carried = 0.0; // arc length since the last emitted point
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let seg = a.dist(b);
        if seg <= 0.0 {
            continue;
        }
        let mut s = spacing - carried;
        while s <= seg + 1e-12 {
            out.push(a + (b - a) * (s.min(seg) / seg));
            s += spacing;
        }
        carried = seg - (s - spacing);
    }
    let last = *points.last().unwrap();
    if out.last().unwrap().dist(last) > 1e-9 {
        out.push(last);
    }
    out
}

/// Drops consecutive repeated points.
pub fn dedup_consecutive(points: &[Vec2]) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::with_capacity(points.len());
    for &p in points {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}

/// Dynamic time warping distance with Euclidean ground cost.
pub fn dtw(a: &[Vec2], b: &[Vec2]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &p in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = p.dist(b[j - 1]) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
        prev[0] = f64::INFINITY;
    }
    prev[m]
}

/// nDTW = exp(−DTW / (|reference| · d_th)).
pub fn ndtw(trajectory: &[Vec2], reference: &[Vec2], d_th: f64) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    (-dtw(trajectory, reference) / (reference.len() as f64 * d_th)).exp()
}

pub fn spl(success: bool, shortest: f64, taken: f64) -> f64 {
    if !success || !shortest.is_finite() {
        return 0.0;
    }
    let denom = taken.max(shortest);
    if denom <= 0.0 {
        1.0
    } else {
        shortest / denom
    }
}

pub fn reference_path(scene: &Scene, start: Vec2, goal: Vec2) -> Vec<Vec2> {
    let poly = scene.shortest_path(start, goal).unwrap_or_else(|| vec![start, goal]);
    resample_polyline(&poly, REFERENCE_SPACING)
}

pub fn evaluate(traj: &Trajectory, episode: &Episode, scene: &Scene, d_th: f64) -> EpisodeResult {
    let positions = traj.positions();
    let start = episode.start.position();
    let last = positions.last().copied().unwrap_or(start);
    let tl = path_length(&positions);
    let ne = last.dist(episode.goal);
    let success = ne <= d_th;
    let oracle_success = positions
        .iter()
        .chain(std::iter::once(&start))
        .any(|p| p.dist(episode.goal) <= d_th);
    let shortest = scene.shortest_path_length(start, episode.goal);
    let reference = reference_path(scene, start, episode.goal);
    let walked = dedup_consecutive(if positions.is_empty() { std::slice::from_ref(&start) } else { &positions });
    let semantic_success = episode
        .target_region
        .as_ref()
        .map(|region| success && scene.room_label_at(last).is_some_and(|l| l.eq_ignore_ascii_case(region)));
    EpisodeResult {
        tl,
        ne,
        success,
        oracle_success,
        spl: spl(success, shortest, tl),
        ndtw: ndtw(&walked, &reference, d_th),
        semantic_success,
        steps: StepCounts {
            decisions: traj.markers.len(),
            primitives: traj.primitives.len(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChallengeScores {
    pub door_score: usize,
    pub region_score: usize,
    pub landmark_density: f64,
}

/// Counts door and region mentions; multiword entries match greedily.
pub fn challenge_score(instruction: &str, lexicon: &Lexicon) -> ChallengeScores {
    let tokens = tokenize(instruction);
    let (mut door, mut region, mut covered) = (0, 0, 0);
    let mut i = 0;
    while i < tokens.len() {
        match lexicon.landmark_at(&tokens, i) {
            Some((cat, len)) => {
                match cat {
                    Category::Door => door += 1,
                    Category::Region => region += 1,
                    _ => {}
                }
                covered += len;
                i += len;
            }
            None => i += 1,
        }
    }
    ChallengeScores {
        door_score: door,
        region_score: region,
        landmark_density: if tokens.is_empty() {
            0.0
        } else {
            covered as f64 / tokens.len() as f64
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChallengeTask {
    /// Door interaction.
    DI,
    /// Multi-region traversal.
    MR,
    /// Ambiguous instructions.
    AI,
}

impl std::str::FromStr for ChallengeTask {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "DI" => Ok(ChallengeTask::DI),
            "MR" => Ok(ChallengeTask::MR),
            "AI" => Ok(ChallengeTask::AI),
            other => Err(format!("unknown task {other:?}; expected DI, MR or AI")),
        }
    }
}

pub fn select_top_k(episodes: &[(String, ChallengeScores)], task: ChallengeTask, k: usize) -> Vec<String> {
    let mut ranked: Vec<&(String, ChallengeScores)> = episodes.iter().collect();
    ranked.sort_by(|(ia, a), (ib, b)| {
        let primary = match task {
            ChallengeTask::DI => b.door_score.cmp(&a.door_score),
            ChallengeTask::MR => b.region_score.cmp(&a.region_score),
            ChallengeTask::AI => a.landmark_density.total_cmp(&b.landmark_density),
        };
        primary.then_with(|| ia.cmp(ib))
    });
    ranked.into_iter().take(k).map(|(id, _)| id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Pose;
    use std::path::Path;

    fn open_hall() -> Scene {
        Scene::from_json(
            r#"{"rooms":[{"id":"h","label":"hall","polygon":[[0,0],[10,0],[10,10],[0,10]]}],
                "doors":[],"objects":[],"bounds":[[0,0],[10,10]]}"#,
        )
        .unwrap()
    }

    fn episode(start: Pose, goal: Vec2) -> Episode {
        Episode {
            id: "e".into(),
            scene: "x".into(),
            start,
            goal,
            instruction: "go".into(),
            target_region: None,
            max_decision_steps: 20,
            max_primitives: 500,
            source_dir: None,
        }
    }

    #[test]
    fn three_four_five_error() {
        let s = open_hall();
        let ep = episode(Pose::new(1.0, 1.0, 0.0), Vec2::new(4.0, 5.0));
        let r = evaluate(&Trajectory::new(ep.start), &ep, &s, SUCCESS_RADIUS);
        assert_eq!(r.ne, 5.0);
        assert_eq!(r.tl, 0.0);
        assert!(!r.success);
        assert_eq!(r.spl, 0.0);
    }

    #[test]
    fn optimal_straight_run() {
        let s = open_hall();
        let ep = episode(Pose::new(1.0, 5.0, 0.0), Vec2::new(3.0, 5.0));
        let mut t = Trajectory::new(ep.start);
        for k in 1..=8 {
            t.poses.push(Pose::new(1.0 + 0.25 * k as f64, 5.0, 0.0));
            t.primitives.push(crate::nav::ActionPrimitive::Forward);
            t.blocked.push(false);
        }
        let r = evaluate(&t, &ep, &s, SUCCESS_RADIUS);
        assert!(r.success && r.oracle_success);
        assert_eq!(r.ne, 0.0);
        assert_eq!(r.spl, 1.0);
        assert_eq!(r.ndtw, 1.0);
    }

    #[test]
    fn spl_formula_and_single_point_ndtw() {
        assert_eq!(spl(true, 5.0, 10.0), 0.5);
        assert_eq!(spl(false, 5.0, 5.0), 0.0);
        let v = ndtw(&[Vec2::new(3.0, 0.0)], &[Vec2::new(0.0, 0.0)], 3.0);
        assert!((v - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn resampling_spacing() {
        let r = resample_polyline(&[Vec2::new(0.0, 0.0), Vec2::new(0.6, 0.0), Vec2::new(0.6, 0.4)], 0.25);
        assert_eq!(r.len(), 5);
        for w in r.windows(2).take(3) {
            // arc-length spacing; the corner chord is shorter
            assert!(w[0].dist(w[1]) <= 0.25 + 1e-12);
        }
        assert_eq!(*r.last().unwrap(), Vec2::new(0.6, 0.4));
        assert_eq!(resample_polyline(&[Vec2::new(1.0, 1.0)], 0.25), vec![Vec2::new(1.0, 1.0)]);
    }

    #[test]
    fn challenge_scores() {
        let lx = Lexicon::default();
        let c = challenge_score("go through the door and into the bedroom", &lx);
        assert_eq!((c.door_score, c.region_score), (1, 1));
        let z = challenge_score("", &lx);
        assert_eq!((z.door_score, z.region_score, z.landmark_density), (0, 0, 0.0));
        assert_eq!(challenge_score("walk forward and wait", &lx).landmark_density, 0.0);
    }

    #[test]
    fn top_k_ordering() {
        let mk = |id: &str, d: usize, dens: f64| {
            (
                id.to_string(),
                ChallengeScores {
                    door_score: d,
                    region_score: 0,
                    landmark_density: dens,
                },
            )
        };
        let eps = vec![mk("a", 2, 0.3), mk("b", 0, 0.0), mk("c", 5, 0.2)];
        assert_eq!(select_top_k(&eps, ChallengeTask::DI, 100), vec!["c", "a", "b"]);
        assert_eq!(select_top_k(&eps, ChallengeTask::AI, 1), vec!["b"]);
        assert_eq!(select_top_k(&eps, ChallengeTask::MR, 10), vec!["a", "b", "c"]);
    }

    #[test]
    fn semantic_success_uses_room_label() {
        let s = crate::scene::load_scene(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/scenes/two_rooms.scene.json"),
        )
        .unwrap();
        let mut ep = episode(Pose::new(3.0, 2.0, 0.0), Vec2::new(5.6, 2.0));
        ep.target_region = Some("living room".into());
        let r = evaluate(&Trajectory::new(ep.start), &ep, &s, SUCCESS_RADIUS);
        // within 3 m but still in the bedroom
        assert!(r.success);
        assert_eq!(r.semantic_success, Some(false));
    }
}
