//! Spatial perception enhancement over a simulated panoramic observation.
//!
//! Twelve views sit at `30°·(i−1)` relative to the heading (CCW), each
//! covering ±15°. Views group into four cardinal sectors (Front, Left, Back,
//! Right), each a 90° stitched panorama that serves as the consistency
//! reference for single-view labels. Doors are detected semantically per view
//! and cross-checked against depth discontinuities in the range scan.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff_deg, normalize_deg, Vec2};
use crate::scene::{DoorAttributes, DoorState, Pose, Scene, SceneError};

/// Number of panoramic views per observation.
pub const VIEW_COUNT: usize = 12;
/// Angular spacing between views: θ_i = 30°·(i−1).
pub const VIEW_SPACING_DEG: f64 = 30.0;
pub const SCAN_RAYS: usize = 360;
pub const DOOR_LABEL: &str = "door";

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("range scan must have {SCAN_RAYS} rays, got {0}")]
    ScanLength(usize),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sector {
    Front,
    Left,
    Back,
    Right,
}

impl Sector {
    pub const ALL: [Sector; 4] = [Sector::Front, Sector::Left, Sector::Back, Sector::Right];

    /// Sector containing a relative azimuth; Front covers [−45°, 45°).
    pub fn of_azimuth(rel_deg: f64) -> Sector {
        let idx = (normalize_deg(rel_deg + 45.0) / 90.0).floor() as usize;
        Sector::ALL[idx.min(3)]
    }

    pub fn of_view(view_index: usize) -> Sector {
        Sector::of_azimuth(view_azimuth(view_index))
    }

    pub fn center_deg(self) -> f64 {
        match self {
            Sector::Front => 0.0,
            Sector::Left => 90.0,
            Sector::Back => 180.0,
            Sector::Right => 270.0,
        }
    }

    pub fn member_views(self) -> [usize; 3] {
        match self {
            Sector::Front => [12, 1, 2],
            Sector::Left => [3, 4, 5],
            Sector::Back => [6, 7, 8],
            Sector::Right => [9, 10, 11],
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Sector::Front => "Front",
            Sector::Left => "Left",
            Sector::Back => "Back",
            Sector::Right => "Right",
        }
    }

    pub fn parse(s: &str) -> Option<Sector> {
        Sector::ALL
            .into_iter()
            .find(|sec| sec.name().eq_ignore_ascii_case(s.trim()))
    }
}

/// Center azimuth (relative, degrees) of view `i` ∈ 1..=12.
pub fn view_azimuth(view_index: usize) -> f64 {
    VIEW_SPACING_DEG * (view_index as f64 - 1.0)
}

/// View index (1..=12) whose ±15° interval contains the relative bearing.
pub fn view_of_bearing(rel_deg: f64) -> usize {
    let v = (normalize_deg(rel_deg + VIEW_SPACING_DEG / 2.0) / VIEW_SPACING_DEG).floor() as usize;
    v.min(VIEW_COUNT - 1) + 1
}

/// Clock position of a relative bearing: 12 ahead, 9 to the left.
pub fn clock_of(rel_deg: f64) -> u32 {
    let h = (12 - ((normalize_deg(rel_deg) / 30.0).round() as i64 % 12)).rem_euclid(12);
    if h == 0 {
        12
    } else {
        h as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub label: String,
    pub confidence: f64,
}

impl Label {
    pub fn new(label: impl Into<String>, confidence: f64) -> Self {
        Label {
            label: label.into(),
            confidence,
        }
    }
}

pub fn find_label<'a>(labels: &'a [Label], name: &str) -> Option<&'a Label> {
    labels.iter().find(|l| l.label.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSemantics {
    pub view_index: usize,
    pub azimuth_rel: f64,
    pub labels: Vec<Label>,
    pub relations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPanorama {
    pub sector: Sector,
    pub member_views: [usize; 3],
    pub labels: Vec<Label>,
    pub relations: Vec<String>,
}

impl RegionPanorama {
    pub fn has_label(&self, name: &str) -> bool {
        find_label(&self.labels, name).is_some()
    }
}

/// A per-view label that survived the consistency check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredLabel {
    pub label: String,
    pub confidence: f64,
    /// Panorama sector that justified keeping the label; `None` when the
    /// filter was bypassed.
    pub witness: Option<Sector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredView {
    pub view_index: usize,
    pub labels: Vec<FilteredLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredSemantics {
    pub views: Vec<FilteredView>,
}

impl FilteredSemantics {
    /// Pass-through used when the consistency filter is disabled.
    pub fn unfiltered(views: &[ViewSemantics]) -> Self {
        FilteredSemantics {
            views: views
                .iter()
                .map(|v| FilteredView {
                    view_index: v.view_index,
                    labels: v
                        .labels
                        .iter()
                        .map(|l| FilteredLabel {
                            label: l.label.clone(),
                            confidence: l.confidence,
                            witness: None,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn view(&self, view_index: usize) -> Option<&FilteredView> {
        self.views.iter().find(|v| v.view_index == view_index)
    }

    pub fn labels_in_sector(&self, sector: Sector) -> Vec<&FilteredLabel> {
        self.views
            .iter()
            .filter(|v| Sector::of_view(v.view_index) == sector)
            .flat_map(|v| v.labels.iter())
            .collect()
    }

    /// Highest confidence of `name` anywhere in the observation.
    pub fn max_confidence(&self, name: &str) -> Option<f64> {
        self.views
            .iter()
            .flat_map(|v| v.labels.iter())
            .filter(|l| l.label.eq_ignore_ascii_case(name))
            .map(|l| l.confidence)
            .reduce(f64::max)
    }

    /// All (view, label) pairs, the set view used for augmentation checks.
    pub fn pairs(&self) -> std::collections::BTreeSet<(usize, String)> {
        self.views
            .iter()
            .flat_map(|v| v.labels.iter().map(move |l| (v.view_index, l.label.to_lowercase())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoorObservation {
    pub azimuth_rel: f64,
    pub roi: (f64, f64),
    pub distance: f64,
    pub attributes: DoorAttributes,
    pub state: DoorState,
    pub external: Option<String>,
}

impl DoorObservation {
    pub fn sector(&self) -> Sector {
        Sector::of_azimuth(self.azimuth_rel)
    }

    pub fn is_open(&self) -> bool {
        self.state == DoorState::Open
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricOpening {
    pub azimuth: f64,
    pub chord_width: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub p_drop: f64,
    pub p_spur: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel {
            p_drop: 0.0,
            p_spur: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        NoiseModel { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    /// Semantic detection horizon (m).
    pub detection_range: f64,
    pub lidar_range: f64,
    /// Confidence multiplier reached at the detection horizon.
    pub far_attenuation: f64,
    pub room_salience: f64,
    pub door_salience: f64,
    /// Adjacent-ray range jump that counts as a depth discontinuity (m).
    pub discontinuity: f64,
    pub min_door_width: f64,
    pub max_door_width: f64,
    /// Angular tolerance for semantic/geometric door cross-verification (deg).
    pub door_tolerance_deg: f64,
    /// Minimum confidence for a door's external semantics.
    pub external_threshold: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            detection_range: 5.0,
            lidar_range: 6.0,
            far_attenuation: 0.6,
            room_salience: 0.85,
            door_salience: 0.9,
            discontinuity: 0.8,
            min_door_width: 0.6,
            max_door_width: 1.4,
            door_tolerance_deg: 15.0,
            external_threshold: 0.5,
        }
    }
}

impl PerceptionConfig {
    fn attenuate(&self, salience: f64, distance: f64) -> f64 {
        let frac = (distance / self.detection_range).clamp(0.0, 1.0);
        salience * (1.0 - (1.0 - self.far_attenuation) * frac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SightingKind {
    Object,
    Door(usize),
    Room,
}

#[derive(Debug, Clone)]
struct Sighting {
    label: String,
    bearing: f64,
    distance: f64,
    confidence: f64,
    kind: SightingKind,
}

/// Noise-free ground truth of what is visible from a pose.
fn sightings(scene: &Scene, pose: &Pose, cfg: &PerceptionConfig) -> Result<Vec<Sighting>, SceneError> {
    let origin = pose.position();
    let range = cfg.detection_range;
    // validates the origin
    scene.raycast(origin, pose.heading, range)?;
    let mut out = Vec::new();
    for o in &scene.objects {
        let d = origin.dist(o.position);
        if d > range || d <= o.radius {
            continue;
        }
        let abs = (o.position - origin).heading_deg();
        let hit = scene.raycast_unchecked(origin, abs, d + 1.0);
        if hit >= d - o.radius - 1e-6 {
            out.push(Sighting {
                label: o.label.clone(),
                bearing: normalize_deg(abs - pose.heading),
                distance: d,
                confidence: cfg.attenuate(o.salience, d),
                kind: SightingKind::Object,
            });
        }
    }
    for (k, door) in scene.doors.iter().enumerate() {
        let mid = door.segment.midpoint();
        let d = origin.dist(mid);
        if d > range || d < 1e-6 {
            continue;
        }
        let abs = (mid - origin).heading_deg();
        let hit = scene.raycast_unchecked(origin, abs, d + 1.0);
        if hit >= d - 1e-6 {
            out.push(Sighting {
                label: DOOR_LABEL.to_string(),
                bearing: normalize_deg(abs - pose.heading),
                distance: d,
                confidence: cfg.attenuate(cfg.door_salience, d),
                kind: SightingKind::Door(k),
            });
        }
    }
    // room-of-sight: rooms crossed by each 1° ray before it hits something
    const STEP: f64 = 0.25;
    for k in 0..SCAN_RAYS {
        let rel = k as f64;
        let abs = normalize_deg(pose.heading + rel);
        let hit = scene.raycast_unchecked(origin, abs, range);
        let dir = Vec2::from_heading(abs);
        let limit = hit.min(range) - 0.05;
        let mut seen: Vec<&str> = Vec::new();
        let mut s = 0.0;
        while s <= limit {
            if let Some(label) = scene.room_label_at(origin + dir * s) {
                if !seen.contains(&label) {
                    seen.push(label);
                    out.push(Sighting {
                        label: label.to_string(),
                        bearing: rel,
                        distance: s,
                        confidence: cfg.attenuate(cfg.room_salience, s),
                        kind: SightingKind::Room,
                    });
                }
            }
            s += STEP;
        }
    }
    Ok(out)
}

fn in_interval(bearing: f64, center: f64, half_width: f64) -> bool {
    let off = normalize_deg(bearing - center + half_width);
    off < 2.0 * half_width
}

struct Grouped {
    labels: Vec<Label>,
    relations: Vec<String>,
}

/// Collapses sightings to one label per name (nearest instance wins) and
/// renders relation phrases.
fn group(scene: &Scene, items: &[&Sighting]) -> Grouped {
    let mut best: Vec<&Sighting> = Vec::new();
    for s in items {
        match best.iter_mut().find(|b| b.label == s.label) {
            Some(b) => {
                if s.confidence > b.confidence {
                    *b = s;
                }
            }
            None => best.push(s),
        }
    }
    best.sort_by(|a, b| a.label.cmp(&b.label));
    let labels = best.iter().map(|s| Label::new(s.label.clone(), s.confidence)).collect();
    let mut relations: Vec<String> = best
        .iter()
        .map(|s| relation_phrase(&s.label, s.distance, s.bearing))
        .collect();
    if let Some(door) = best.iter().find_map(|s| match s.kind {
        SightingKind::Door(k) => Some(&scene.doors[k]),
        _ => None,
    }) {
        relations.push(door_attribute_phrase(&door.attributes));
    }
    Grouped { labels, relations }
}

pub fn relation_phrase(label: &str, distance: f64, rel_bearing: f64) -> String {
    format!("the {label} is {distance:.1} m at {} o'clock", clock_of(rel_bearing))
}

pub fn door_attribute_phrase(a: &DoorAttributes) -> String {
    format!("the door is {} and {}", a.material, a.color)
}

/// Fact recovered from a relation phrase.
#[derive(Debug, Clone, PartialEq)]
pub enum Relation {
    Placement { label: String, distance: f64, clock: u32 },
    DoorAttributes(DoorAttributes),
}

pub fn parse_relation(phrase: &str) -> Option<Relation> {
    let rest = phrase.strip_prefix("the ")?;
    if let Some((label, tail)) = rest.split_once(" is ") {
        if let Some((dist, clock)) = tail.split_once(" m at ") {
            let distance = dist.parse().ok()?;
            let clock = clock.strip_suffix(" o'clock")?.parse().ok()?;
            return Some(Relation::Placement {
                label: label.to_string(),
                distance,
                clock,
            });
        }
        if label == DOOR_LABEL {
            let (material, color) = tail.split_once(" and ")?;
            return Some(Relation::DoorAttributes(DoorAttributes {
                material: material.to_string(),
                color: color.to_string(),
            }));
        }
    }
    None
}

fn relation_distance(relations: &[String], label: &str) -> Option<f64> {
    relations.iter().find_map(|r| match parse_relation(r) {
        Some(Relation::Placement { label: l, distance, .. }) if l.eq_ignore_ascii_case(label) => {
            Some(distance)
        }
        _ => None,
    })
}

fn apply_noise(
    rng: &mut ChaCha8Rng,
    grouped: Grouped,
    p_drop: f64,
    p_spur: f64,
    vocabulary: &[String],
    clock_bearing: f64,
) -> Grouped {
    let Grouped { labels, relations } = grouped;
    let mut kept = Vec::with_capacity(labels.len());
    let mut dropped: Vec<String> = Vec::new();
    for l in labels {
        if rng.gen::<f64>() < p_drop {
            dropped.push(l.label);
        } else {
            kept.push(l);
        }
    }
    let mut relations: Vec<String> = relations
        .into_iter()
        .filter(|r| match parse_relation(r) {
            Some(Relation::Placement { label, .. }) => !dropped.contains(&label),
            Some(Relation::DoorAttributes(_)) => !dropped.iter().any(|d| d == DOOR_LABEL),
            None => true,
        })
        .collect();
    if !vocabulary.is_empty() && rng.gen::<f64>() < p_spur {
        let label = vocabulary[rng.gen_range(0..vocabulary.len())].clone();
        let confidence = rng.gen_range(0.5..1.0);
        let distance = rng.gen_range(0.5..5.0);
        if find_label(&kept, &label).is_none() {
            relations.push(relation_phrase(&label, distance, clock_bearing));
            kept.push(Label::new(label, confidence));
            kept.sort_by(|a, b| a.label.cmp(&b.label));
        }
    }
    Grouped {
        labels: kept,
        relations,
    }
}

const PANORAMA_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Per-view semantics (labels, confidences, relation phrases) for the 12 views.
pub fn simulate_views(
    scene: &Scene,
    pose: &Pose,
    noise: &NoiseModel,
    cfg: &PerceptionConfig,
) -> Result<Vec<ViewSemantics>, PerceptionError> {
    let sights = sightings(scene, pose, cfg)?;
    Ok(views_from_sightings(scene, &sights, noise, cfg))
}

fn views_from_sightings(
    scene: &Scene,
    sights: &[Sighting],
    noise: &NoiseModel,
    _cfg: &PerceptionConfig,
) -> Vec<ViewSemantics> {
    let vocabulary = scene.label_vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    (1..=VIEW_COUNT)
        .map(|i| {
            let az = view_azimuth(i);
            let members: Vec<&Sighting> = sights
                .iter()
                .filter(|s| in_interval(s.bearing, az, VIEW_SPACING_DEG / 2.0))
                .collect();
            let g = apply_noise(&mut rng, group(scene, &members), noise.p_drop, noise.p_spur, &vocabulary, az);
            ViewSemantics {
                view_index: i,
                azimuth_rel: az,
                labels: g.labels,
                relations: g.relations,
            }
        })
        .collect()
}

/// Sector panoramas in the fixed order Front, Left, Back, Right. Each sector
/// gets one independent noise draw at half the per-view rates.
pub fn panorama_reference(
    scene: &Scene,
    pose: &Pose,
    noise: &NoiseModel,
    cfg: &PerceptionConfig,
) -> Result<Vec<RegionPanorama>, PerceptionError> {
    let sights = sightings(scene, pose, cfg)?;
    Ok(panoramas_from_sightings(scene, &sights, noise))
}

fn panoramas_from_sightings(scene: &Scene, sights: &[Sighting], noise: &NoiseModel) -> Vec<RegionPanorama> {
    let vocabulary = scene.label_vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ PANORAMA_STREAM);
    Sector::ALL
        .into_iter()
        .map(|sector| {
            let members: Vec<&Sighting> = sights
                .iter()
                .filter(|s| in_interval(s.bearing, sector.center_deg(), 45.0))
                .collect();
            let g = apply_noise(
                &mut rng,
                group(scene, &members),
                noise.p_drop / 2.0,
                noise.p_spur / 2.0,
                &vocabulary,
                sector.center_deg(),
            );
            RegionPanorama {
                sector,
                member_views: sector.member_views(),
                labels: g.labels,
                relations: g.relations,
            }
        })
        .collect()
}

/// Keeps a per-view label only if its sector's panorama reports the same
/// label (case-insensitive); the survivor takes the higher confidence.
pub fn consistency_filter(views: &[ViewSemantics], panoramas: &[RegionPanorama]) -> FilteredSemantics {
    FilteredSemantics {
        views: views
            .iter()
            .map(|v| {
                let sector = Sector::of_view(v.view_index);
                let pano = panoramas.iter().find(|p| p.sector == sector);
                let labels = v
                    .labels
                    .iter()
                    .filter_map(|l| {
                        let witness = find_label(&pano?.labels, &l.label)?;
                        Some(FilteredLabel {
                            label: l.label.clone(),
                            confidence: l.confidence.max(witness.confidence),
                            witness: Some(sector),
                        })
                    })
                    .collect();
                FilteredView {
                    view_index: v.view_index,
                    labels,
                }
            })
            .collect(),
    }
}

/// Door-like gaps in a 360-ray scan: runs of rays that sit at least
/// `discontinuity` beyond the near side, entered by a sharp rise and left by
/// a sharp fall.
pub fn detect_geometric_openings(
    ranges: &[f64],
    cfg: &PerceptionConfig,
) -> Result<Vec<GeometricOpening>, PerceptionError> {
    if ranges.len() != SCAN_RAYS {
        return Err(PerceptionError::ScanLength(ranges.len()));
    }
    let n = SCAN_RAYS;
    let jump = cfg.discontinuity;
    let mut out = Vec::new();
    for k in 0..n {
        let near_l = ranges[k];
        if ranges[(k + 1) % n] - near_l <= jump {
            continue;
        }
        let mut j = k + 1;
        let mut far_min = f64::INFINITY;
        while j < k + n && ranges[j % n] >= near_l + jump {
            far_min = far_min.min(ranges[j % n]);
            j += 1;
        }
        if j >= k + n {
            continue;
        }
        let near_r = ranges[j % n];
        if ranges[(j - 1) % n] - near_r <= jump || far_min < near_l.max(near_r) + jump {
            continue;
        }
        let span = (j - k - 1) as f64;
        let theta = span.to_radians();
        let chord = (near_l * near_l + near_r * near_r - 2.0 * near_l * near_r * theta.cos()).sqrt();
        let distance = 0.5 * (near_l + near_r);
        if chord < cfg.min_door_width || chord > cfg.max_door_width || distance > cfg.detection_range {
            continue;
        }
        out.push(GeometricOpening {
            azimuth: normalize_deg((k + j) as f64 / 2.0),
            chord_width: chord,
            distance,
        });
    }
    Ok(out)
}

/// Builds the door set D_t. With `cross_verify` a semantic door is open only
/// when a geometric opening lies within the tolerance; without it every
/// semantic door is reported open.
pub fn detect_doors(
    filtered: &FilteredSemantics,
    views: &[ViewSemantics],
    openings: &[GeometricOpening],
    scan: &[f64],
    cfg: &PerceptionConfig,
    cross_verify: bool,
) -> Vec<DoorObservation> {
    let mut out = Vec::new();
    for fv in &filtered.views {
        if !fv.labels.iter().any(|l| l.label.eq_ignore_ascii_case(DOOR_LABEL)) {
            continue;
        }
        let theta = view_azimuth(fv.view_index);
        let relations: &[String] = views
            .iter()
            .find(|v| v.view_index == fv.view_index)
            .map(|v| v.relations.as_slice())
            .unwrap_or(&[]);
        let distance = relation_distance(relations, DOOR_LABEL)
            .filter(|d| *d > 0.0)
            .or_else(|| scan.get(theta.round() as usize % SCAN_RAYS.max(1)).copied())
            .unwrap_or(cfg.detection_range);
        let attributes = relations
            .iter()
            .find_map(|r| match parse_relation(r) {
                Some(Relation::DoorAttributes(a)) => Some(a),
                _ => None,
            })
            .unwrap_or_else(DoorAttributes::unknown);
        let open = !cross_verify
            || openings
                .iter()
                .any(|o| angle_diff_deg(o.azimuth, theta) <= cfg.door_tolerance_deg);
        let external = if open {
            fv.labels
                .iter()
                .filter(|l| !l.label.eq_ignore_ascii_case(DOOR_LABEL))
                .filter(|l| l.confidence >= cfg.external_threshold)
                // phrases round to 0.1 m, so the room just past the frame can tie the door
                .filter(|l| relation_distance(relations, &l.label).is_some_and(|d| d >= distance))
                .max_by(|a, b| a.confidence.total_cmp(&b.confidence).then_with(|| b.label.cmp(&a.label)))
                .map(|l| l.label.clone())
        } else {
            None
        };
        out.push(DoorObservation {
            azimuth_rel: theta,
            roi: (theta - VIEW_SPACING_DEG / 2.0, theta + VIEW_SPACING_DEG / 2.0),
            distance: distance.max(1e-3),
            attributes,
            state: if open { DoorState::Open } else { DoorState::Closed },
            external,
        });
    }
    out
}

/// Everything perceived at one pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Percept {
    pub pose: Pose,
    #[serde(skip)]
    pub scan: Vec<f64>,
    pub views: Vec<ViewSemantics>,
    pub panoramas: Vec<RegionPanorama>,
    pub filtered: FilteredSemantics,
    pub openings: Vec<GeometricOpening>,
    pub doors: Vec<DoorObservation>,
}

impl Percept {
    pub fn panorama(&self, sector: Sector) -> &RegionPanorama {
        &self.panoramas[sector.index()]
    }

    /// Relation phrases of all views, in view order.
    pub fn view_relations(&self) -> Vec<String> {
        self.views.iter().flat_map(|v| v.relations.iter().cloned()).collect()
    }

    pub fn region_relations(&self) -> Vec<String> {
        self.panoramas.iter().flat_map(|p| p.relations.iter().cloned()).collect()
    }
}

/// Full perception pass. With `spe` off the consistency filter and door
/// cross-verification are skipped.
pub fn perceive(
    scene: &Scene,
    pose: &Pose,
    noise: &NoiseModel,
    cfg: &PerceptionConfig,
    spe: bool,
) -> Result<Percept, PerceptionError> {
    perceive_with(scene, pose, noise, cfg, spe, consistency_filter)
}

/// As [`perceive`], with a caller-supplied consistency filter.
pub fn perceive_with<F>(
    scene: &Scene,
    pose: &Pose,
    noise: &NoiseModel,
    cfg: &PerceptionConfig,
    spe: bool,
    filter: F,
) -> Result<Percept, PerceptionError>
where
    F: FnOnce(&[ViewSemantics], &[RegionPanorama]) -> FilteredSemantics,
{
    let sights = sightings(scene, pose, cfg)?;
    let views = views_from_sightings(scene, &sights, noise, cfg);
    let panoramas = panoramas_from_sightings(scene, &sights, noise);
    let scan = scene.lidar_scan(pose, SCAN_RAYS, cfg.lidar_range)?;
    let openings = detect_geometric_openings(&scan, cfg)?;
    let filtered = if spe {
        filter(&views, &panoramas)
    } else {
        FilteredSemantics::unfiltered(&views)
    };
    let doors = detect_doors(&filtered, &views, &openings, &scan, cfg, spe);
    Ok(Percept {
        pose: *pose,
        scan,
        views,
        panoramas,
        filtered,
        openings,
        doors,
    })
}
