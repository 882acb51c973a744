//! Primitive-action planning and execution.
//!
//! The planner is a hybrid A* over continuous poses reached by the primitive
//! set, with duplicate detection on a half-step (0.125 m) × 15° lattice.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_deg, Vec2};
use crate::scene::{Pose, Scene, DEFAULT_CLEARANCE};

/// Forward step (m) and turn increment (deg) of the low-level action set.
pub const FORWARD_STEP: f64 = 0.25;
pub const TURN_STEP_DEG: f64 = 15.0;
pub const HEADING_STATES: usize = 24;
pub const GOAL_TOLERANCE: f64 = 0.25;
pub const MAX_EXPANSIONS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionPrimitive {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

#[derive(Debug, Error, PartialEq)]
pub enum NavError {
    #[error("target ({x:.2}, {y:.2}) is unreachable")]
    Unreachable { x: f64, y: f64 },
    #[error("target ({x:.2}, {y:.2}) is not navigable")]
    TargetBlocked { x: f64, y: f64 },
}

/// Pose after one primitive, ignoring collisions. Left is counterclockwise.
pub fn apply(pose: &Pose, prim: ActionPrimitive) -> Pose {
    match prim {
        ActionPrimitive::Forward => {
            let p = pose.position() + Vec2::from_heading(pose.heading) * FORWARD_STEP;
            Pose {
                x: p.x,
                y: p.y,
                heading: pose.heading,
            }
        }
        ActionPrimitive::TurnLeft => Pose {
            heading: normalize_deg(pose.heading + TURN_STEP_DEG),
            ..*pose
        },
        ActionPrimitive::TurnRight => Pose {
            heading: normalize_deg(pose.heading - TURN_STEP_DEG),
            ..*pose
        },
        ActionPrimitive::Stop => *pose,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub primitives: Vec<ActionPrimitive>,
    pub blocked: Vec<bool>,
    /// Index into `primitives` at which each decision step began.
    pub markers: Vec<usize>,
}

impl Trajectory {
    pub fn new(start: Pose) -> Self {
        Trajectory {
            poses: vec![start],
            primitives: Vec::new(),
            blocked: Vec::new(),
            markers: Vec::new(),
        }
    }

    pub fn current(&self) -> Pose {
        *self.poses.last().expect("trajectory has a start pose")
    }

    pub fn mark_decision(&mut self) {
        self.markers.push(self.primitives.len());
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.poses.iter().map(Pose::position).collect()
    }

    pub fn length(&self) -> f64 {
        self.poses.windows(2).map(|w| w[0].position().dist(w[1].position())).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Completed,
    /// Two consecutive forwards were blocked.
    Replan,
    /// Primitive budget ran out.
    Budget,
}

/// Applies primitives to the end of `traj`, stopping early on a replan signal
/// or once the trajectory holds `budget` primitives.
pub fn execute_on(traj: &mut Trajectory, scene: &Scene, prims: &[ActionPrimitive], budget: usize) -> ExecStatus {
    let mut consecutive = 0;
    for &prim in prims {
        if traj.primitives.len() >= budget {
            return ExecStatus::Budget;
        }
        let pose = traj.current();
        let next = apply(&pose, prim);
        let blocked = prim == ActionPrimitive::Forward && !scene.is_navigable(next.position(), DEFAULT_CLEARANCE);
        traj.primitives.push(prim);
        traj.blocked.push(blocked);
        traj.poses.push(if blocked { pose } else { next });
        if blocked {
            consecutive += 1;
            if consecutive >= 2 {
                return ExecStatus::Replan;
            }
        } else if prim == ActionPrimitive::Forward {
            consecutive = 0;
        }
    }
    ExecStatus::Completed
}

pub fn execute(scene: &Scene, pose: &Pose, prims: &[ActionPrimitive]) -> (Trajectory, ExecStatus) {
    let mut t = Trajectory::new(*pose);
    let status = execute_on(&mut t, scene, prims, usize::MAX);
    (t, status)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    f: f64,
    turns: u32,
    rights: u32,
    seq: usize,
    idx: usize,
}

impl Eq for Node {}

impl Ord for Node {
    // reversed for a min-heap
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f)
            .then(o.turns.cmp(&self.turns))
            .then(o.rights.cmp(&self.rights))
            .then(o.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

struct Entry {
    pose: Pose,
    g: u32,
    parent: Option<(usize, ActionPrimitive)>,
    turn_index: i64,
}

fn search(scene: &Scene, start: &Pose, target: Vec2, key_res: f64) -> Option<Vec<ActionPrimitive>> {
    let h = |p: Vec2| ((p.dist(target) - GOAL_TOLERANCE).max(0.0) / FORWARD_STEP).ceil();
    let key = |e: &Entry| {
        (
            (e.pose.x / key_res).round() as i64,
            (e.pose.y / key_res).round() as i64,
            e.turn_index.rem_euclid(HEADING_STATES as i64),
        )
    };
    let mut nodes = vec![Entry {
        pose: *start,
        g: 0,
        parent: None,
        turn_index: 0,
    }];
    let mut best: HashMap<(i64, i64, i64), u32> = HashMap::new();
    best.insert(key(&nodes[0]), 0);
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        f: h(start.position()),
        turns: 0,
        rights: 0,
        seq: 0,
        idx: 0,
    });
    let mut seq = 1;
    let mut expansions = 0;
    while let Some(n) = heap.pop() {
        let (pose, g, ti) = {
            let e = &nodes[n.idx];
            (e.pose, e.g, e.turn_index)
        };
        if best.get(&key(&nodes[n.idx])).is_some_and(|&b| b < g) {
            continue;
        }
        if pose.position().dist(target) <= GOAL_TOLERANCE {
            let mut prims = Vec::new();
            let mut cur = n.idx;
            while let Some((p, prim)) = nodes[cur].parent {
                prims.push(prim);
                cur = p;
            }
            prims.reverse();
            return Some(prims);
        }
        expansions += 1;
        if expansions > MAX_EXPANSIONS {
            return None;
        }
        for prim in [ActionPrimitive::Forward, ActionPrimitive::TurnLeft, ActionPrimitive::TurnRight] {
            let next = apply(&pose, prim);
            if prim == ActionPrimitive::Forward && !scene.is_navigable(next.position(), DEFAULT_CLEARANCE) {
                continue;
            }
            let turn_index = match prim {
                ActionPrimitive::TurnLeft => ti + 1,
                ActionPrimitive::TurnRight => ti - 1,
                _ => ti,
            };
            let e = Entry {
                pose: next,
                g: g + 1,
                parent: Some((n.idx, prim)),
                turn_index,
            };
            let k = key(&e);
            if best.get(&k).is_some_and(|&b| b <= e.g) {
                continue;
            }
            best.insert(k, e.g);
            let is_turn = prim != ActionPrimitive::Forward;
            heap.push(Node {
                f: f64::from(e.g) + h(next.position()),
                turns: n.turns + u32::from(is_turn),
                rights: n.rights + u32::from(prim == ActionPrimitive::TurnRight),
                seq,
                idx: nodes.len(),
            });
            seq += 1;
            nodes.push(e);
        }
    }
    None
}

/// Primitive sequence that brings the agent within 0.25 m of `target`.
/// Ties prefer fewer turns, then left turns.
pub fn plan_to(scene: &Scene, pose: &Pose, target: Vec2) -> Result<Vec<ActionPrimitive>, NavError> {
    if !scene.is_navigable(target, DEFAULT_CLEARANCE) {
        return Err(NavError::TargetBlocked {
            x: target.x,
            y: target.y,
        });
    }
    if !scene.shortest_path_length(pose.position(), target).is_finite() {
        return Err(NavError::Unreachable {
            x: target.x,
            y: target.y,
        });
    }
    // a finer duplicate lattice recovers narrow passages the coarse one prunes
    [FORWARD_STEP / 2.0, FORWARD_STEP / 4.0]
        .into_iter()
        .find_map(|res| search(scene, pose, target, res))
        .ok_or(NavError::Unreachable {
            x: target.x,
            y: target.y,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::DoorState;
    use std::path::Path;

    fn two_rooms() -> Scene {
        crate::scene::load_scene(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/scenes/two_rooms.scene.json"))
            .unwrap()
    }

    #[test]
    fn axis_aligned_forward() {
        let p = apply(&Pose::new(0.0, 0.0, 90.0), ActionPrimitive::Forward);
        assert_eq!(p, Pose::new(0.0, 0.25, 90.0));
    }

    #[test]
    fn full_left_circle_is_identity() {
        let start = Pose::new(1.5, 2.0, 30.0);
        let mut p = start;
        for _ in 0..24 {
            p = apply(&p, ActionPrimitive::TurnLeft);
        }
        assert_eq!(p, start);
    }

    #[test]
    fn straight_ahead_plan() {
        let s = two_rooms();
        let plan = plan_to(&s, &Pose::new(1.5, 2.0, 0.0), Vec2::new(2.5, 2.0)).unwrap();
        assert_eq!(plan, vec![ActionPrimitive::Forward; 3]);
        // within tolerance after 3 steps; 4 reaches the point exactly
        let plan = plan_to(&s, &Pose::new(1.5, 2.0, 0.0), Vec2::new(2.75, 2.0)).unwrap();
        assert!(plan.iter().all(|&p| p == ActionPrimitive::Forward));
    }

    #[test]
    fn target_behind_turns_left() {
        let s = two_rooms();
        let plan = plan_to(&s, &Pose::new(2.5, 2.0, 0.0), Vec2::new(1.5, 2.0)).unwrap();
        let count = |k| plan.iter().filter(|&&p| p == k).count();
        assert_eq!(count(ActionPrimitive::TurnLeft), 12);
        assert_eq!(count(ActionPrimitive::TurnRight), 0);
        assert_eq!(count(ActionPrimitive::Forward), 3);
    }

    #[test]
    fn plan_through_door_executes_cleanly() {
        let s = two_rooms();
        let start = Pose::new(1.5, 2.0, 0.0);
        let goal = Vec2::new(6.0, 0.9);
        let plan = plan_to(&s, &start, goal).unwrap();
        let (t, status) = execute(&s, &start, &plan);
        assert_eq!(status, ExecStatus::Completed);
        assert!(t.blocked.iter().all(|b| !b));
        assert!(t.current().position().dist(goal) <= GOAL_TOLERANCE);
        assert_eq!(t.poses.len(), t.primitives.len() + 1);
    }

    #[test]
    fn closed_door_unreachable() {
        let s = two_rooms().with_door_state("d1", DoorState::Closed).unwrap();
        let err = plan_to(&s, &Pose::new(1.5, 2.0, 0.0), Vec2::new(7.5, 1.0)).unwrap_err();
        assert!(matches!(err, NavError::Unreachable { .. }));
    }

    #[test]
    fn blocked_forwards_signal_replan() {
        let s = two_rooms();
        // facing the left wall 0.25 m away
        let start = Pose::new(0.25, 2.0, 180.0);
        let (t, status) = execute(&s, &start, &[ActionPrimitive::Forward; 3]);
        assert_eq!(status, ExecStatus::Replan);
        assert_eq!(t.primitives.len(), 2);
        assert!(t.poses.iter().all(|p| *p == start));
        assert_eq!(t.blocked, vec![true, true]);
    }
}
