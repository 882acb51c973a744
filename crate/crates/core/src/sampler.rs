//! Value-based waypoint sampling on a polar grid around the agent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff_deg, normalize_deg, wrap_signed_deg, Vec2};
use crate::perception::{view_of_bearing, Sector, ViewSemantics, SCAN_RAYS};
use crate::scene::{Pose, Scene};

/// Polar grid: 120 angular bins of 3° by 12 radial bins of 0.25 m (3 m).
pub const ANGULAR_BINS: usize = 120;
pub const RADIAL_BINS: usize = 12;
pub const ANGULAR_RES_DEG: f64 = 3.0;
pub const RADIAL_RES: f64 = 0.25;
pub const MAP_RANGE: f64 = RADIAL_RES * RADIAL_BINS as f64;

pub type Grid<T> = Vec<[T; RADIAL_BINS]>;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("range scan must have {SCAN_RAYS} rays, got {0}")]
    ScanLength(usize),
    #[error("grid must be {ANGULAR_BINS}x{RADIAL_BINS}")]
    GridShape,
}

/// Collision queries the sampler needs from the world.
pub trait FreeSpace {
    fn is_navigable(&self, p: Vec2, clearance: f64) -> bool;
    fn segment_clear(&self, a: Vec2, b: Vec2, clearance: f64) -> bool;
}

impl FreeSpace for Scene {
    fn is_navigable(&self, p: Vec2, clearance: f64) -> bool {
        Scene::is_navigable(self, p, clearance)
    }

    fn segment_clear(&self, a: Vec2, b: Vec2, clearance: f64) -> bool {
        Scene::segment_clear(self, a, b, clearance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Semantic confidence threshold δ_s.
    pub delta_s: f64,
    /// Label count threshold δ_n (strict `>`).
    pub delta_n: usize,
    /// Weight assigned to semantically rich views.
    pub rich_weight: f64,
    pub k_max: usize,
    pub merge_radius: f64,
    pub merge_angle_deg: f64,
    pub supplement_margin_deg: f64,
    pub frontier_distance: f64,
    pub frontier_min_width_deg: f64,
    pub clearance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            delta_s: 0.85,
            delta_n: 1,
            rich_weight: 2.0,
            k_max: 6,
            merge_radius: 0.5,
            merge_angle_deg: 9.0,
            supplement_margin_deg: 60.0,
            frontier_distance: 2.5,
            frontier_min_width_deg: 9.0,
            clearance: crate::scene::DEFAULT_CLEARANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarValueMap {
    pub origin: Pose,
    pub scores: Grid<f64>,
    /// Navigability mask the scores were built from.
    pub nav: Grid<u8>,
}

impl PolarValueMap {
    pub fn angular_res(&self) -> f64 {
        ANGULAR_RES_DEG
    }

    pub fn radial_res(&self) -> f64 {
        RADIAL_RES
    }

    pub fn cell_count(&self) -> usize {
        self.scores.len() * RADIAL_BINS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaypointSource {
    Value,
    Random,
    Frontier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub id: usize,
    pub position: Vec2,
    pub azimuth_rel: f64,
    pub range: f64,
    pub score: f64,
    pub sector: Sector,
    pub source: WaypointSource,
}

impl Waypoint {
    pub fn at(id: usize, origin: &Pose, position: Vec2, score: f64, source: WaypointSource) -> Waypoint {
        let azimuth_rel = origin.relative_bearing(position);
        Waypoint {
            id,
            position,
            azimuth_rel,
            range: origin.position().dist(position),
            score,
            sector: Sector::of_azimuth(azimuth_rel),
            source,
        }
    }
}

pub fn bin_center_deg(u: usize) -> f64 {
    ANGULAR_RES_DEG * u as f64 + ANGULAR_RES_DEG / 2.0
}

pub fn cell_center(origin: &Pose, u: usize, v: usize) -> Vec2 {
    let r = RADIAL_RES * v as f64 + RADIAL_RES / 2.0;
    origin.position() + Vec2::from_heading(origin.heading + bin_center_deg(u)) * r
}

/// Cell (u, v) is free when the scan along the bin's center clears the cell's
/// outer radius. The center falls between rays 3u+1 and 3u+2; the nearer of
/// the two is used.
pub fn build_nav_mask(scan: &[f64]) -> Result<Grid<u8>, SamplerError> {
    if scan.len() != SCAN_RAYS {
        return Err(SamplerError::ScanLength(scan.len()));
    }
    Ok((0..ANGULAR_BINS)
        .map(|u| {
            let r = scan[3 * u + 1].min(scan[3 * u + 2]);
            let mut row = [0u8; RADIAL_BINS];
            for (v, cell) in row.iter_mut().enumerate() {
                // outward cells are only free if every inner cell is
                if r > RADIAL_RES * (v + 1) as f64 {
                    *cell = 1;
                } else {
                    break;
                }
            }
            row
        })
        .collect())
}

/// Views with more than δ_n labels above δ_s weight their 10 angular bins.
pub fn semantic_weights(views: &[ViewSemantics], cfg: &SamplerConfig) -> Grid<f64> {
    let rich: Vec<bool> = (1..=crate::perception::VIEW_COUNT)
        .map(|i| {
            views
                .iter()
                .find(|v| v.view_index == i)
                .map(|v| v.labels.iter().filter(|l| l.confidence > cfg.delta_s).count() > cfg.delta_n)
                .unwrap_or(false)
        })
        .collect();
    (0..ANGULAR_BINS)
        .map(|u| {
            let w = if rich[view_of_bearing(bin_center_deg(u)) - 1] {
                cfg.rich_weight
            } else {
                0.0
            };
            [w; RADIAL_BINS]
        })
        .collect()
}

/// m_{u,v} = r^nav_{u,v} · ω^sem_{u,v}.
pub fn score_map(origin: Pose, nav: &Grid<u8>, weights: &Grid<f64>) -> Result<PolarValueMap, SamplerError> {
    if nav.len() != ANGULAR_BINS || weights.len() != ANGULAR_BINS {
        return Err(SamplerError::GridShape);
    }
    let scores = nav
        .iter()
        .zip(weights)
        .map(|(n, w)| std::array::from_fn(|v| f64::from(n[v]) * w[v]))
        .collect();
    Ok(PolarValueMap {
        origin,
        scores,
        nav: nav.clone(),
    })
}

fn valid<F: FreeSpace + ?Sized>(world: &F, origin: Vec2, p: Vec2, clearance: f64) -> bool {
    world.is_navigable(p, clearance) && world.segment_clear(origin, p, clearance)
}

#[derive(Debug, Clone)]
struct Raw {
    u: usize,
    pos: Vec2,
    az: f64,
    range: f64,
    score: f64,
}

/// Candidate waypoints: outermost high-value cell per bin, merged, capped at
/// k_max, then topped up with seeded random picks far from the selection.
pub fn sample_waypoints<F: FreeSpace + ?Sized>(
    map: &PolarValueMap,
    world: &F,
    cfg: &SamplerConfig,
    seed: u64,
) -> Vec<Waypoint> {
    let origin = map.origin;
    let o = origin.position();
    let mut raws: Vec<Raw> = map
        .scores
        .iter()
        .enumerate()
        .filter_map(|(u, col)| {
            let v = (0..RADIAL_BINS).rev().find(|&v| col[v] > 0.0)?;
            let pos = cell_center(&origin, u, v);
            Some(Raw {
                u,
                pos,
                az: bin_center_deg(u),
                range: o.dist(pos),
                score: col[v],
            })
        })
        .collect();
    raws.sort_by(|a, b| b.range.total_cmp(&a.range).then(a.u.cmp(&b.u)));

    let mut taken = vec![false; raws.len()];
    let mut merged: Vec<(Vec2, f64)> = Vec::new();
    for i in 0..raws.len() {
        if taken[i] {
            continue;
        }
        let seed_raw = &raws[i];
        let group: Vec<usize> = (i..raws.len())
            .filter(|&j| {
                !taken[j]
                    && (raws[j].pos.dist(seed_raw.pos) <= cfg.merge_radius
                        || angle_diff_deg(raws[j].az, seed_raw.az) <= cfg.merge_angle_deg)
            })
            .collect();
        for &j in &group {
            taken[j] = true;
        }
        let n = group.len() as f64;
        let centroid = group
            .iter()
            .fold(Vec2::default(), |acc, &j| acc + raws[j].pos * (1.0 / n));
        let score = group.iter().map(|&j| raws[j].score).fold(0.0, f64::max);
        let mut options: Vec<Vec2> = group.iter().map(|&j| raws[j].pos).collect();
        options.sort_by(|a, b| a.dist(centroid).total_cmp(&b.dist(centroid)));
        if let Some(p) = std::iter::once(centroid)
            .chain(options)
            .find(|&p| valid(world, o, p, cfg.clearance))
        {
            merged.push((p, score));
        }
    }
    merged.sort_by(|a, b| o.dist(b.0).total_cmp(&o.dist(a.0)).then(b.1.total_cmp(&a.1)));

    let mut out: Vec<Waypoint> = Vec::new();
    for (p, score) in merged {
        if out.len() >= cfg.k_max {
            break;
        }
        if out.iter().all(|w| w.position.dist(p) > cfg.merge_radius) {
            out.push(Waypoint::at(out.len(), &origin, p, score, WaypointSource::Value));
        }
    }

    if out.len() < cfg.k_max {
        // outermost valid cell per bin; deeper bins first, seeded order among equals
        let mut bins: Vec<(usize, usize, Vec2)> = (0..ANGULAR_BINS)
            .filter_map(|u| {
                let col = &map.nav[u];
                (0..RADIAL_BINS)
                    .rev()
                    .filter(|&v| col[v] == 1)
                    .map(|v| (v, cell_center(&origin, u, v)))
                    .find(|&(_, p)| valid(world, o, p, cfg.clearance))
                    .map(|(v, p)| (u, v, p))
            })
            .collect();
        bins.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        bins.sort_by(|a, b| b.1.cmp(&a.1));
        for (u, _, p) in bins {
            if out.len() >= cfg.k_max {
                break;
            }
            let az = bin_center_deg(u);
            if out
                .iter()
                .any(|w| angle_diff_deg(w.azimuth_rel, az) < cfg.supplement_margin_deg)
            {
                continue;
            }
            {
                let mut w = Waypoint::at(out.len(), &origin, p, 0.0, WaypointSource::Random);
                // keep the bin azimuth so the margin test is exact
                w.azimuth_rel = normalize_deg(az);
                out.push(w);
            }
        }
    }
    out
}

/// Midpoint of the widest run of rays at max range, projected outward and
/// pulled in until navigable. Ties go to the run nearer the heading.
pub fn frontier_point<F: FreeSpace + ?Sized>(
    scan: &[f64],
    pose: &Pose,
    max_range: f64,
    world: &F,
    cfg: &SamplerConfig,
) -> Option<Vec2> {
    let n = scan.len();
    if n == 0 {
        return None;
    }
    let step = 360.0 / n as f64;
    let open: Vec<bool> = scan.iter().map(|&r| r >= max_range - 1e-9).collect();
    let mut runs: Vec<(usize, f64)> = Vec::new(); // (ray count, mid azimuth)
    if open.iter().all(|&b| b) {
        runs.push((n, 0.0));
    } else {
        let start = open.iter().position(|&b| !b).unwrap();
        let mut k = 0;
        while k < n {
            let i = (start + k) % n;
            if open[i] {
                let mut len = 0;
                while k + len < n && open[(start + k + len) % n] {
                    len += 1;
                }
                let mid = normalize_deg(i as f64 * step + (len - 1) as f64 * step / 2.0);
                runs.push((len, mid));
                k += len;
            } else {
                k += 1;
            }
        }
    }
    runs.retain(|&(len, _)| len as f64 * step >= cfg.frontier_min_width_deg);
    runs.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(wrap_signed_deg(a.1).abs().total_cmp(&wrap_signed_deg(b.1).abs()))
            .then(a.1.total_cmp(&b.1))
    });
    let o = pose.position();
    for &(_, mid) in &runs {
        let dir = Vec2::from_heading(pose.heading + mid);
        let mut d = cfg.frontier_distance;
        while d > 0.0 {
            let p = o + dir * d;
            if valid(world, o, p, cfg.clearance) {
                return Some(p);
            }
            d -= RADIAL_RES;
        }
    }
    None
}

/// Binary greymap: one column per angular bin, outermost radius on top.
pub fn render_pgm(map: &PolarValueMap) -> Vec<u8> {
    let max = map
        .scores
        .iter()
        .flat_map(|c| c.iter().copied())
        .fold(0.0, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", map.scores.len(), RADIAL_BINS).into_bytes();
    for v in (0..RADIAL_BINS).rev() {
        for col in &map.scores {
            let px = if max > 0.0 {
                (col[v] / max * 255.0).round() as u8
            } else {
                0
            };
            out.push(px);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{view_azimuth, Label};

    struct Open;
    impl FreeSpace for Open {
        fn is_navigable(&self, _: Vec2, _: f64) -> bool {
            true
        }
        fn segment_clear(&self, _: Vec2, _: Vec2, _: f64) -> bool {
            true
        }
    }

    fn views_with(rich: &[usize]) -> Vec<ViewSemantics> {
        (1..=12)
            .map(|i| ViewSemantics {
                view_index: i,
                azimuth_rel: view_azimuth(i),
                labels: if rich.contains(&i) {
                    vec![Label::new("bed", 0.9), Label::new("chair", 0.88)]
                } else {
                    vec![]
                },
                relations: vec![],
            })
            .collect()
    }

    #[test]
    fn open_hall_mask_all_free() {
        let mask = build_nav_mask(&vec![8.0; 360]).unwrap();
        assert_eq!(mask.len() * RADIAL_BINS, 1440);
        assert!(mask.iter().all(|c| c.iter().all(|&x| x == 1)));
        assert_eq!(build_nav_mask(&[1.0; 12]), Err(SamplerError::ScanLength(12)));
    }

    #[test]
    fn wall_ahead_blocks_outer_cells() {
        // flat wall 1.0 m ahead, perpendicular to the heading
        let scan: Vec<f64> = (0..360)
            .map(|k| {
                let c = (k as f64).to_radians().cos();
                if c > 0.1 {
                    (1.0 / c).min(8.0)
                } else {
                    8.0
                }
            })
            .collect();
        let mask = build_nav_mask(&scan).unwrap();
        for u in [0usize, 1, 2, 3, 116, 117, 118, 119] {
            assert!(mask[u][4..].iter().all(|&x| x == 0), "bin {u}");
        }
        assert_eq!(mask[0][3], 1);
    }

    #[test]
    fn semantic_weight_strict_count() {
        let w = semantic_weights(&views_with(&[1]), &SamplerConfig::default());
        let rich: Vec<usize> = (0..120).filter(|&u| w[u][0] == 2.0).collect();
        assert_eq!(rich.len(), 10);
        assert!(rich.contains(&0) && rich.contains(&115) && !rich.contains(&5));
        let mut v = views_with(&[]);
        v[0].labels = vec![Label::new("bed", 0.9), Label::new("lamp", 0.7)];
        let w = semantic_weights(&v, &SamplerConfig::default());
        assert!(w.iter().all(|c| c.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn score_map_product() {
        let mut nav = build_nav_mask(&vec![8.0; 360]).unwrap();
        nav[0] = [0; RADIAL_BINS];
        let w = semantic_weights(&views_with(&[1]), &SamplerConfig::default());
        let m = score_map(Pose::new(0.0, 0.0, 0.0), &nav, &w).unwrap();
        assert_eq!(m.scores[1][5], 2.0);
        assert_eq!(m.scores[0][5], 0.0);
        assert_eq!(m.scores[40][5], 0.0);
    }

    #[test]
    fn two_rich_sectors_yield_separated_candidates() {
        let nav = build_nav_mask(&vec![8.0; 360]).unwrap();
        let w = semantic_weights(&views_with(&[1, 4]), &SamplerConfig::default());
        let m = score_map(Pose::new(0.0, 0.0, 0.0), &nav, &w).unwrap();
        let c = sample_waypoints(&m, &Open, &SamplerConfig::default(), 1);
        assert!(c.len() <= 6);
        assert!(c.iter().any(|w| w.source == WaypointSource::Value && w.sector == Sector::Front));
        assert!(c.iter().any(|w| w.source == WaypointSource::Value && w.sector == Sector::Left));
        for (i, a) in c.iter().enumerate() {
            for b in &c[i + 1..] {
                assert!(a.position.dist(b.position) > 0.5);
            }
        }
    }

    #[test]
    fn supplement_only_path() {
        let nav = build_nav_mask(&vec![8.0; 360]).unwrap();
        let w = semantic_weights(&views_with(&[]), &SamplerConfig::default());
        let m = score_map(Pose::new(0.0, 0.0, 0.0), &nav, &w).unwrap();
        let c = sample_waypoints(&m, &Open, &SamplerConfig::default(), 9);
        // greedy packing of 60° margins fits at least 3 and at most 6
        assert!((3..=6).contains(&c.len()));
        for (i, a) in c.iter().enumerate() {
            assert_eq!(a.source, WaypointSource::Random);
            for b in &c[i + 1..] {
                assert!(angle_diff_deg(a.azimuth_rel, b.azimuth_rel) >= 60.0);
            }
        }
    }

    #[test]
    fn frontier_rules() {
        let mut scan = vec![2.0; 360];
        for r in scan.iter_mut().take(21).skip(0) {
            *r = 6.0;
        }
        let p = frontier_point(&scan, &Pose::new(0.0, 0.0, 0.0), 6.0, &Open, &SamplerConfig::default()).unwrap();
        assert!((p.dist(Vec2::default()) - 2.5).abs() < 1e-9);
        assert!(frontier_point(&vec![2.0; 360], &Pose::new(0.0, 0.0, 0.0), 6.0, &Open, &SamplerConfig::default())
            .is_none());
        // two equal openings: the one nearer the heading wins
        let mut scan = vec![2.0; 360];
        for k in 20..32 {
            scan[k] = 6.0;
        }
        for k in 300..312 {
            scan[k] = 6.0;
        }
        let p = frontier_point(&scan, &Pose::new(0.0, 0.0, 0.0), 6.0, &Open, &SamplerConfig::default()).unwrap();
        assert!(p.y > 0.0);
    }

    #[test]
    fn pgm_header() {
        let nav = build_nav_mask(&vec![8.0; 360]).unwrap();
        let w = semantic_weights(&views_with(&[1]), &SamplerConfig::default());
        let m = score_map(Pose::new(0.0, 0.0, 0.0), &nav, &w).unwrap();
        let img = render_pgm(&m);
        assert!(img.starts_with(b"P5\n120 12\n255\n"));
        assert_eq!(img.len(), 14 + 1440);
    }
}
