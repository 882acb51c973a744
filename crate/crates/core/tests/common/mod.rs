#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_vln::geometry::Vec2;
use spatial_vln::harness::{self, log::LogRecord, RunConfig};
use spatial_vln::scene::{load_scene, Pose, Scene};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn crate_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(rel)
}

/// Every scene file shipped under fixtures/.
pub fn all_scenes() -> Vec<Scene> {
    let mut paths = vec![fixture("scenes/two_rooms.scene.json")];
    for dir in ["doors", "ambiguous/scenes", "conflict/scenes"] {
        let mut more: Vec<PathBuf> = std::fs::read_dir(fixture(dir))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.to_string_lossy().ends_with(".scene.json"))
            .collect();
        more.sort();
        paths.extend(more);
    }
    paths.iter().map(|p| load_scene(p).unwrap()).collect()
}

pub fn random_pose(scene: &Scene, rng: &mut ChaCha8Rng) -> Pose {
    loop {
        let x = rng.gen_range(scene.bounds.min.x..scene.bounds.max.x);
        let y = rng.gen_range(scene.bounds.min.y..scene.bounds.max.y);
        if scene.is_navigable(Vec2::new(x, y), 0.2) {
            return Pose::new(x, y, rng.gen_range(0.0..360.0));
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Full (n+1)×(m+1) DTW table filled cell by cell from its definition.
pub fn brute_dtw(a: &[Vec2], b: &[Vec2]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let mut t = vec![vec![f64::INFINITY; m + 1]; n + 1];
    t[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let dx = a[i - 1].x - b[j - 1].x;
            let dy = a[i - 1].y - b[j - 1].y;
            let cost = (dx * dx + dy * dy).sqrt();
            let best = [t[i - 1][j], t[i][j - 1], t[i - 1][j - 1]]
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            t[i][j] = cost + best;
        }
    }
    t[n][m]
}

pub fn random_path(rng: &mut ChaCha8Rng, len: usize) -> Vec<Vec2> {
    (0..len)
        .map(|_| Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
        .collect()
}

/// Checks the decision records of one log against the branch law and
/// returns (consistent steps, inconsistent steps).
pub fn branch_law(records: &[LogRecord]) -> Result<(usize, usize), String> {
    let (mut cons, mut incons) = (0, 0);
    for r in records {
        let LogRecord::Decision {
            step,
            a_w,
            consistent,
            exploration,
            action,
            ..
        } = r
        else {
            continue;
        };
        if *consistent {
            cons += 1;
            if action != a_w || exploration.is_some() {
                return Err(format!("step {step}: consistent but action differs from a_w"));
            }
        } else {
            incons += 1;
            let Some(e) = exploration else {
                return Err(format!("step {step}: inconsistent without exploration"));
            };
            if !e.strictly_augmented || !e.reached {
                return Err(format!("step {step}: exploration did not strictly augment"));
            }
            let explore_runs = records
                .iter()
                .filter(|x| matches!(x, LogRecord::Execution { step: s, phase: harness::log::Phase::Explore, .. } if s == step))
                .count();
            if explore_runs != 1 {
                return Err(format!("step {step}: {explore_runs} exploration runs"));
            }
        }
    }
    Ok((cons, incons))
}

pub fn success_rate(dir: &str, config: &RunConfig) -> f64 {
    let episodes = harness::load_suite(&fixture(dir)).unwrap();
    let (report, _) = harness::run_suite(&episodes, config).unwrap();
    report.aggregate.sr
}

/// Success rate pooled over several noise seeds.
pub fn pooled_success_rate(dir: &str, config: &RunConfig, seeds: &[u64]) -> f64 {
    let total: f64 = seeds
        .iter()
        .map(|&s| {
            let mut c = config.clone();
            c.noise.seed = s;
            success_rate(dir, &c)
        })
        .sum();
    total / seeds.len() as f64
}
