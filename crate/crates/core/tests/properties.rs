mod common;

use std::sync::OnceLock;

use common::*;
use proptest::prelude::*;
use spatial_vln::geometry::{normalize_deg, Vec2};
use spatial_vln::metrics::{evaluate, ndtw};
use spatial_vln::nav::{apply, execute, ActionPrimitive};
use spatial_vln::perception::{
    consistency_filter, find_label, perceive, view_azimuth, Label, NoiseModel, PerceptionConfig, RegionPanorama, Sector,
    ViewSemantics, VIEW_COUNT,
};
use spatial_vln::sampler::{build_nav_mask, score_map, semantic_weights, SamplerConfig, ANGULAR_BINS, RADIAL_BINS};
use spatial_vln::scene::{DoorState, Episode, Pose, Scene};

fn scenes() -> &'static [Scene] {
    static S: OnceLock<Vec<Scene>> = OnceLock::new();
    S.get_or_init(all_scenes)
}

const VOCAB: [&str; 6] = ["door", "sofa", "bed", "kitchen", "lamp", "table"];

fn label_set() -> impl Strategy<Value = Vec<Label>> {
    prop::collection::btree_set(0..VOCAB.len(), 0..4).prop_flat_map(|ids| {
        let n = ids.len();
        (Just(ids), prop::collection::vec(0.0..1.0f64, n))
            .prop_map(|(ids, cs)| ids.into_iter().zip(cs).map(|(i, c)| Label::new(VOCAB[i], c)).collect())
    })
}

fn primitive() -> impl Strategy<Value = ActionPrimitive> {
    prop_oneof![
        3 => Just(ActionPrimitive::Forward),
        1 => Just(ActionPrimitive::TurnLeft),
        1 => Just(ActionPrimitive::TurnRight),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn headings_normalize_into_range(h in -1e4..1e4f64, x in -50.0..50.0f64, y in -50.0..50.0f64) {
        let n = normalize_deg(h);
        prop_assert!((0.0..360.0).contains(&n));
        let p = Pose::new(x, y, h);
        prop_assert!((0.0..360.0).contains(&p.heading));
        prop_assert!(p.x.is_finite() && p.y.is_finite());
    }

    #[test]
    fn every_azimuth_falls_in_exactly_one_sector(az in -720.0..720.0f64) {
        let s = Sector::of_azimuth(az);
        let hits = Sector::ALL.iter().filter(|&&o| o == s).count();
        prop_assert_eq!(hits, 1);
    }

    #[test]
    fn filter_survivors_are_witnessed(views in prop::collection::vec(label_set(), VIEW_COUNT),
                                      panos in prop::collection::vec(label_set(), 4)) {
        let views: Vec<ViewSemantics> = views.into_iter().enumerate().map(|(i, labels)| ViewSemantics {
            view_index: i + 1,
            azimuth_rel: view_azimuth(i + 1),
            labels,
            relations: vec![],
        }).collect();
        let panoramas: Vec<RegionPanorama> = Sector::ALL.into_iter().zip(panos).map(|(sector, labels)| RegionPanorama {
            sector,
            member_views: sector.member_views(),
            labels,
            relations: vec![],
        }).collect();
        let f = consistency_filter(&views, &panoramas);
        prop_assert_eq!(f.views.len(), VIEW_COUNT);
        for v in &f.views {
            let sector = Sector::of_view(v.view_index);
            let pano = panoramas.iter().find(|p| p.sector == sector).unwrap();
            let raw = views.iter().find(|r| r.view_index == v.view_index).unwrap();
            for l in &v.labels {
                prop_assert!(pano.has_label(&l.label));
                prop_assert!(find_label(&raw.labels, &l.label).is_some());
                prop_assert!((0.0..=1.0).contains(&l.confidence));
            }
        }
    }

    #[test]
    fn percepts_respect_their_invariants(scene_ix in 0usize..64, seed in any::<u64>(), noisy in any::<bool>()) {
        let all = scenes();
        let scene = &all[scene_ix % all.len()];
        let pose = random_pose(scene, &mut rng(seed));
        let noise = if noisy { NoiseModel { p_drop: 0.3, p_spur: 0.3, seed } } else { NoiseModel::none() };
        let cfg = PerceptionConfig::default();
        let p = perceive(scene, &pose, &noise, &cfg, true).unwrap();
        prop_assert_eq!(p.views.len(), VIEW_COUNT);
        let mut az: Vec<u64> = p.views.iter().map(|v| v.azimuth_rel.to_bits()).collect();
        az.sort();
        az.dedup();
        prop_assert_eq!(az.len(), VIEW_COUNT);
        for v in &p.views {
            for l in &v.labels {
                prop_assert!((0.0..=1.0).contains(&l.confidence));
            }
        }
        for d in &p.doors {
            prop_assert!(d.distance > 0.0);
            if d.state == DoorState::Closed {
                prop_assert!(d.external.is_none());
            }
            let (lo, hi) = d.roi;
            prop_assert!(normalize_deg(d.azimuth_rel - lo) <= normalize_deg(hi - lo) + 1e-9);
        }
        for o in &p.openings {
            prop_assert!((cfg.min_door_width..=cfg.max_door_width).contains(&o.chord_width));
            prop_assert!(o.distance <= cfg.detection_range);
        }
        let again = perceive(scene, &pose, &noise, &cfg, true).unwrap();
        prop_assert_eq!(p, again);
    }

    #[test]
    fn value_map_is_binary_under_default_weights(scene_ix in 0usize..64, seed in any::<u64>()) {
        let all = scenes();
        let scene = &all[scene_ix % all.len()];
        let pose = random_pose(scene, &mut rng(seed));
        let p = perceive(scene, &pose, &NoiseModel::none(), &PerceptionConfig::default(), true).unwrap();
        let cfg = SamplerConfig::default();
        let map = score_map(pose, &build_nav_mask(&p.scan).unwrap(), &semantic_weights(&p.views, &cfg)).unwrap();
        prop_assert_eq!(map.scores.len(), ANGULAR_BINS);
        for col in &map.scores {
            prop_assert_eq!(col.len(), RADIAL_BINS);
            for &s in col {
                prop_assert!(s == 0.0 || s == 2.0);
            }
        }
    }

    #[test]
    fn trajectories_step_one_primitive_at_a_time(scene_ix in 0usize..64, seed in any::<u64>(),
                                                 prims in prop::collection::vec(primitive(), 0..80)) {
        let all = scenes();
        let scene = &all[scene_ix % all.len()];
        let start = random_pose(scene, &mut rng(seed));
        let (traj, _) = execute(scene, &start, &prims);
        prop_assert_eq!(traj.poses.len(), traj.primitives.len() + 1);
        for (k, prim) in traj.primitives.iter().enumerate() {
            let (a, b) = (traj.poses[k], traj.poses[k + 1]);
            if traj.blocked[k] {
                prop_assert_eq!(a, b);
            } else {
                prop_assert_eq!(apply(&a, *prim), b);
            }
        }
    }

    #[test]
    fn metric_invariants_hold(scene_ix in 0usize..64, seed in any::<u64>(),
                              prims in prop::collection::vec(primitive(), 0..60)) {
        let all = scenes();
        let scene = &all[scene_ix % all.len()];
        let mut r = rng(seed);
        let start = random_pose(scene, &mut r);
        let goal = random_pose(scene, &mut r).position();
        let episode = Episode {
            id: "prop".into(),
            scene: String::new(),
            start,
            goal,
            instruction: "go".into(),
            target_region: None,
            max_decision_steps: 10,
            max_primitives: 100,
            source_dir: None,
        };
        let (traj, _) = execute(scene, &start, &prims);
        let res = evaluate(&traj, &episode, scene, 3.0);
        let cap = if res.success { 1.0 } else { 0.0 };
        prop_assert!(res.spl <= cap);
        prop_assert!(res.oracle_success || !res.success);
        prop_assert!(res.ndtw > 0.0 && res.ndtw <= 1.0);
        prop_assert!(res.ne >= 0.0 && res.tl >= 0.0);
    }

    #[test]
    fn ndtw_is_one_only_on_the_reference(n in 1usize..40, seed in any::<u64>()) {
        let a = random_path(&mut rng(seed), n);
        prop_assert_eq!(ndtw(&a, &a, 3.0), 1.0);
        let moved: Vec<Vec2> = a.iter().map(|p| Vec2::new(p.x + 0.1, p.y)).collect();
        prop_assert!(ndtw(&moved, &a, 3.0) < 1.0);
    }
}
