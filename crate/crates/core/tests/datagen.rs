use lookout_core::datagen::{
    build_dataset, perturb, sample_training_sequence, sample_trajectory, Dataset, TrajectoryParams, ViewingZone,
};
use lookout_core::scene::{Bounds, CameraModel, Pose, Role, Scene, SceneObject, Shape};
use lookout_core::Error;

fn open_scene() -> Scene {
    Scene::new(
        Bounds::new([0.0, 0.0], [4.0, 4.0]),
        0.08,
        vec![SceneObject::new(
            "banana",
            3,
            Shape::disc([3.0, 2.0], 0.1),
            Role::TargetCandidate,
        )],
    )
    .unwrap()
}

fn fixture(name: &str) -> Scene {
    let path = format!("{}/../../scenes/{name}.json", env!("CARGO_MANIFEST_DIR"));
    Scene::load(path).unwrap()
}

#[test]
fn straight_path_in_open_scene() {
    let scene = open_scene();
    let cam = CameraModel::default();
    let params = TrajectoryParams::default();
    let start = Pose::new(1.0, 2.0, 1.0);
    let path = sample_trajectory(&scene, &cam, &start, "banana", 3, &params).unwrap();
    let zone = ViewingZone::compute(&scene, &cam, "banana", params.zone_resolution).unwrap();
    let (_, d_zone) = zone.nearest(start.position()).unwrap();
    let lower = (d_zone / params.step_hi).floor() as usize;
    assert!(path.len() >= lower, "{} poses, expected at least {lower}", path.len());
    let d: Vec<f64> = path.iter().map(|p| p.distance_to([3.0, 2.0])).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]));
    for w in path.windows(2) {
        let s = w[0].distance_to(w[1].position());
        assert!(
            s >= params.step_lo - 1e-12 && s <= params.step_hi + 1e-12,
            "spacing {s}"
        );
    }
    // headings follow the direction of travel
    assert!(path[..path.len() - 1].iter().all(|p| p.theta.abs() < 1e-9));
}

#[test]
fn start_in_zone_is_single_pose() {
    let scene = open_scene();
    let start = Pose::new(2.5, 2.0, 0.0);
    let path = sample_trajectory(
        &scene,
        &CameraModel::default(),
        &start,
        "banana",
        0,
        &TrajectoryParams::default(),
    )
    .unwrap();
    assert_eq!(path, vec![start]);
}

#[test]
fn enclosed_start_fails() {
    let mut objs = vec![SceneObject::new(
        "banana",
        3,
        Shape::disc([3.3, 3.3], 0.1),
        Role::TargetCandidate,
    )];
    for (i, (a, b)) in [
        ([0.5, 0.5], [1.5, 0.6]),
        ([0.5, 1.4], [1.5, 1.5]),
        ([0.5, 0.6], [0.6, 1.4]),
        ([1.4, 0.6], [1.5, 1.4]),
    ]
    .into_iter()
    .enumerate()
    {
        objs.push(SceneObject::new(format!("w{i}"), 0, Shape::rect(a, b), Role::Wall));
    }
    let scene = Scene::new(Bounds::new([0.0, 0.0], [4.0, 4.0]), 0.08, objs).unwrap();
    let params = TrajectoryParams {
        rrt_iterations: 300,
        ..Default::default()
    };
    let r = sample_trajectory(
        &scene,
        &CameraModel::default(),
        &Pose::new(1.0, 1.0, 0.0),
        "banana",
        1,
        &params,
    );
    assert!(matches!(r, Err(Error::PlanningFailed { .. })));
}

#[test]
fn rrt_detours_around_walls() {
    let scene = fixture("office");
    let cam = CameraModel::default();
    let params = TrajectoryParams::default();
    for seed in 0..5 {
        let start = Pose::new(0.3, 2.2, 0.0);
        let path = sample_trajectory(&scene, &cam, &start, "scissors", seed, &params).unwrap();
        assert!(path.iter().all(|p| scene.is_collision_free(p)));
        for w in path.windows(2) {
            let s = w[0].distance_to(w[1].position());
            assert!(s >= params.step_lo - 1e-9 && s <= params.step_hi + 1e-9, "spacing {s}");
        }
        let zone = ViewingZone::compute(&scene, &cam, "scissors", params.zone_resolution).unwrap();
        let (_, d) = zone.nearest(path.last().unwrap().position()).unwrap();
        assert!(d <= params.goal_radius + 1e-9);
    }
}

#[test]
fn zero_sigma_perturb_is_identity() {
    let scene = open_scene();
    let traj: Vec<Pose> = (0..10).map(|i| Pose::new(1.0 + 0.03 * i as f64, 1.0, 0.3)).collect();
    let params = TrajectoryParams {
        perturb_lin_sigma: 0.0,
        perturb_ang_sigma: 0.0,
        ..Default::default()
    };
    assert_eq!(perturb(&scene, &traj, 5, &params).unwrap(), traj);
}

#[test]
fn perturb_displacement_statistic() {
    let scene = open_scene();
    let traj = vec![Pose::new(1.0, 1.0, 0.0); 10_000];
    let params = TrajectoryParams::default();
    let out = perturb(&scene, &traj, 11, &params).unwrap();
    let mean: f64 = out.iter().map(|p| p.distance_to([1.0, 1.0])).sum::<f64>() / out.len() as f64;
    let expected = 0.02 * (std::f64::consts::PI / 2.0).sqrt();
    assert!((mean - expected).abs() < 0.05 * expected, "{mean} vs {expected}");
}

#[test]
fn perturb_never_collides() {
    let scene = open_scene();
    // 1 mm outside the footprint margin of the target disc
    let p = Pose::new(3.0 - 0.1 - 0.08 - 0.001, 2.0, 0.0);
    assert!(scene.is_collision_free(&p));
    let params = TrajectoryParams {
        perturb_lin_sigma: 0.3,
        ..Default::default()
    };
    let out = perturb(&scene, &vec![p; 500], 2, &params).unwrap();
    assert!(out.iter().all(|q| scene.is_collision_free(q)));
}

fn small_dataset(seed: u64) -> Dataset {
    build_dataset(
        &fixture("kitchen"),
        4,
        &CameraModel::default(),
        &TrajectoryParams::default(),
        seed,
        "vocab",
    )
    .unwrap()
}

#[test]
fn dataset_contents() {
    let scene = fixture("kitchen");
    let ds = small_dataset(9);
    assert_eq!(ds.len(), 4 * 20);
    let targets = scene.target_ids();
    for r in &ds.records {
        assert!(scene.is_collision_free(&r.pose));
        let mut keys: Vec<&String> = r.rewards.keys().collect();
        keys.sort();
        let mut want: Vec<&String> = targets.iter().collect();
        want.sort();
        assert_eq!(keys, want);
        assert!(r.rewards.values().all(|v| (0.0..=1.0).contains(v)));
    }
    for w in ds.records.windows(2) {
        if w[0].trajectory_id == w[1].trajectory_id {
            let a = w[0].pose.relative_action(&w[1].pose);
            let q = w[0].pose.compose(&a);
            assert!((q.x - w[1].pose.x).abs() < 1e-10);
            assert!((q.y - w[1].pose.y).abs() < 1e-10);
            assert!(lookout_core::scene::angle_diff(q.theta, w[1].pose.theta).abs() < 1e-10);
        }
    }
    assert!(ds.records.iter().any(|r| r.rewards.values().any(|&v| v > 0.3)));
}

#[test]
fn dataset_is_deterministic_and_roundtrips() {
    let a = small_dataset(21).to_jsonl();
    let b = small_dataset(21).to_jsonl();
    assert_eq!(a, b);
    assert_ne!(a, small_dataset(22).to_jsonl());
    let back = Dataset::read_jsonl(a.as_bytes()).unwrap();
    assert_eq!(back.to_jsonl(), a);
}

#[test]
fn empty_dataset() {
    let scene = fixture("kitchen");
    let ds = build_dataset(&scene, 0, &CameraModel::default(), &TrajectoryParams::default(), 1, "v").unwrap();
    assert!(ds.is_empty());
    assert_eq!(ds.header.scene_ref.len(), 64);
    let back = Dataset::read_jsonl(ds.to_jsonl().as_bytes()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn training_sequences() {
    let ds = small_dataset(3);
    let s1 = sample_training_sequence(&ds, 1, 0).unwrap();
    assert_eq!(s1.actions.len(), 1);
    assert_eq!(s1.actions[0], s1.poses[0].relative_action(&s1.poses[1]));
    for seed in 0..20 {
        let s = sample_training_sequence(&ds, 4, seed).unwrap();
        assert_eq!(s.actions.len(), 4);
        assert_eq!(s.observations.len(), 5);
        let mut p = s.poses[0];
        for a in &s.actions {
            p = p.compose(a);
        }
        let last = s.poses[4];
        assert!((p.x - last.x).abs() <= 1e-10 && (p.y - last.y).abs() <= 1e-10);
        assert!(lookout_core::scene::angle_diff(p.theta, last.theta).abs() <= 1e-10);
    }
    assert!(matches!(
        sample_training_sequence(&ds, 20, 0),
        Err(Error::InsufficientLength { needed: 21 })
    ));
}
