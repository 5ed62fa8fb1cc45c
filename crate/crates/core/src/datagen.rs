//! Offline dataset of observation, reward and pose tuples collected along
//! collision-free trajectories that approach sampled targets.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::reward::{ground_truth_reward, is_success_at, RewardParams, SuccessThresholds};
use crate::scene::{Action, Bounds, CameraModel, Observation, Pose, Scene};

/// Hex SHA-256 of a byte string.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the canonical JSON form of a scene.
pub fn scene_digest(scene: &Scene) -> String {
    digest(serde_json::to_string(scene).expect("scene serializes").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryParams {
    /// Poses kept from the end of each trajectory.
    pub n_waypoints: usize,
    pub step_lo: f64,
    pub step_hi: f64,
    pub perturb_lin_sigma: f64,
    pub perturb_ang_sigma: f64,
    pub rrt_iterations: usize,
    pub goal_radius: f64,
    /// Longest tree edge added per iteration.
    pub rrt_edge: f64,
    pub goal_bias: f64,
    /// Length of the closing leg driven straight toward the target.
    pub approach_len: f64,
    /// Grid spacing used to enumerate the viewing zone.
    pub zone_resolution: f64,
    /// Restricts random starts to this rectangle (narrow-coverage data).
    pub start_region: Option<Bounds>,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            n_waypoints: 20,
            step_lo: 0.01,
            step_hi: 0.05,
            perturb_lin_sigma: 0.02,
            perturb_ang_sigma: 0.2,
            rrt_iterations: 2000,
            goal_radius: 0.05,
            rrt_edge: 0.3,
            goal_bias: 0.2,
            approach_len: 0.25,
            zone_resolution: 0.05,
            start_region: None,
        }
    }
}

impl TrajectoryParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.n_waypoints < 2 {
            return bad("n_waypoints must be at least 2");
        }
        if !(self.step_lo > 0.0 && self.step_lo <= self.step_hi) {
            return bad("need 0 < step_lo <= step_hi");
        }
        if !(self.perturb_lin_sigma >= 0.0 && self.perturb_ang_sigma >= 0.0) {
            return bad("perturbation sigmas must be non-negative");
        }
        if !(self.goal_radius >= 0.0 && self.rrt_edge > 0.0 && self.zone_resolution > 0.0) {
            return bad("goal_radius, rrt_edge and zone_resolution must be positive");
        }
        if !(self.approach_len >= 0.0) {
            return bad("approach_len must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return bad("goal_bias must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub trajectory_id: usize,
    pub step_index: usize,
    pub pose: Pose,
    pub observation: Observation,
    pub rewards: BTreeMap<String, f64>,
}

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub scene_ref: String,
    pub vocab_ref: String,
    pub params: TrajectoryParams,
    pub seed: u64,
    pub camera: CameraModel,
    /// Target id to natural-language label.
    pub targets: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    /// Ordered by trajectory then step.
    pub records: Vec<DatasetRecord>,
}

/// Positions from which facing the target satisfies the success test.
#[derive(Debug, Clone)]
pub struct ViewingZone {
    pub target_id: String,
    pub centroid: [f64; 2],
    pub points: Vec<[f64; 2]>,
}

impl ViewingZone {
    pub fn compute(scene: &Scene, cam: &CameraModel, target_id: &str, resolution: f64) -> Result<Self> {
        scene.require_targets()?;
        let centroid = scene.objects()[scene.target_index(target_id)?].shape.centroid();
        let b = scene.bounds();
        let nx = (b.width() / resolution).floor() as usize;
        let ny = (b.height() / resolution).floor() as usize;
        let mut points = Vec::new();
        for i in 0..=nx {
            for j in 0..=ny {
                let p = [b.min[0] + i as f64 * resolution, b.min[1] + j as f64 * resolution];
                if scene.is_position_free(p) && in_zone(scene, cam, target_id, centroid, p)? {
                    points.push(p);
                }
            }
        }
        Ok(Self {
            target_id: target_id.to_string(),
            centroid,
            points,
        })
    }

    pub fn nearest(&self, p: [f64; 2]) -> Option<([f64; 2], f64)> {
        self.points
            .iter()
            .map(|&z| (z, dist(z, p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn in_zone(scene: &Scene, cam: &CameraModel, target_id: &str, centroid: [f64; 2], p: [f64; 2]) -> Result<bool> {
    let theta = (centroid[1] - p[1]).atan2(centroid[0] - p[0]);
    is_success_at(
        scene,
        &Pose::new(p[0], p[1], theta),
        cam,
        target_id,
        &RewardParams::default(),
        &SuccessThresholds::default(),
    )
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

const SEGMENT_CHECK: f64 = 0.01;

/// Collision-free path from `start` into the target's viewing zone, resampled
/// to the configured spacing with headings along the direction of travel.
pub fn sample_trajectory(
    scene: &Scene,
    cam: &CameraModel,
    start: &Pose,
    target_id: &str,
    seed: u64,
    params: &TrajectoryParams,
) -> Result<Vec<Pose>> {
    params.validate()?;
    let zone = ViewingZone::compute(scene, cam, target_id, params.zone_resolution)?;
    sample_trajectory_in_zone(scene, cam, &zone, start, seed, params)
}

pub fn sample_trajectory_in_zone(
    scene: &Scene,
    cam: &CameraModel,
    zone: &ViewingZone,
    start: &Pose,
    seed: u64,
    params: &TrajectoryParams,
) -> Result<Vec<Pose>> {
    if !scene.is_collision_free(start) {
        return Err(Error::InvalidParams("start pose is in collision".into()));
    }
    let failed = Error::PlanningFailed {
        iterations: params.rrt_iterations,
    };
    let s = start.position();
    let Some((nearest, d0)) = zone.nearest(s) else {
        return Err(failed);
    };
    if d0 <= params.goal_radius {
        return Ok(vec![*start]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut polyline = if scene.is_segment_free(s, nearest, SEGMENT_CHECK) {
        vec![s, nearest]
    } else {
        let raw = rrt(scene, zone, s, params, &mut rng).ok_or(failed)?;
        shortcut(scene, raw, &mut rng)
    };
    if let Some(end) = approach_point(scene, cam, zone, *polyline.last().unwrap(), params)? {
        polyline.push(end);
    }
    let points = resample(&polyline, params, &mut rng);
    Ok(with_headings(&points, start.theta))
}

/// End of a straight leg from `from` toward the target that stays free and
/// inside the viewing zone, halving the leg until it fits.
fn approach_point(
    scene: &Scene,
    cam: &CameraModel,
    zone: &ViewingZone,
    from: [f64; 2],
    params: &TrajectoryParams,
) -> Result<Option<[f64; 2]>> {
    let c = zone.centroid;
    let d = dist(from, c);
    if d < 1e-9 {
        return Ok(None);
    }
    let u = [(c[0] - from[0]) / d, (c[1] - from[1]) / d];
    let mut len = params.approach_len;
    while len >= params.step_lo {
        let end = [from[0] + len * u[0], from[1] + len * u[1]];
        if scene.is_segment_free(from, end, SEGMENT_CHECK) && in_zone(scene, cam, &zone.target_id, c, end)? {
            return Ok(Some(end));
        }
        len /= 2.0;
    }
    Ok(None)
}

fn rrt(
    scene: &Scene,
    zone: &ViewingZone,
    start: [f64; 2],
    params: &TrajectoryParams,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<[f64; 2]>> {
    let b = scene.bounds();
    let mut nodes = vec![start];
    let mut parent = vec![usize::MAX];
    for _ in 0..params.rrt_iterations {
        let sample = if rng.gen::<f64>() < params.goal_bias {
            *zone.points.choose(rng)?
        } else {
            [rng.gen_range(b.min[0]..b.max[0]), rng.gen_range(b.min[1]..b.max[1])]
        };
        let (near_idx, near_d) = nodes
            .iter()
            .enumerate()
            .map(|(i, &n)| (i, dist(n, sample)))
            .min_by(|a, c| a.1.total_cmp(&c.1))?;
        if near_d < 1e-9 {
            continue;
        }
        let near = nodes[near_idx];
        let t = (params.rrt_edge / near_d).min(1.0);
        let new = [near[0] + t * (sample[0] - near[0]), near[1] + t * (sample[1] - near[1])];
        if !scene.is_segment_free(near, new, SEGMENT_CHECK) {
            continue;
        }
        nodes.push(new);
        parent.push(near_idx);
        if let Some((z, dz)) = zone.nearest(new) {
            if dz <= params.rrt_edge && scene.is_segment_free(new, z, SEGMENT_CHECK) {
                let mut path = vec![z];
                let mut i = nodes.len() - 1;
                while i != usize::MAX {
                    path.push(nodes[i]);
                    i = parent[i];
                }
                path.reverse();
                return Some(path);
            }
        }
    }
    None
}

fn shortcut(scene: &Scene, mut path: Vec<[f64; 2]>, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    for _ in 0..50 {
        if path.len() < 3 {
            break;
        }
        let i = rng.gen_range(0..path.len() - 2);
        let j = rng.gen_range(i + 2..path.len());
        if scene.is_segment_free(path[i], path[j], SEGMENT_CHECK) {
            path.drain(i + 1..j);
        }
    }
    path
}

/// Walks the polyline placing points whose straight-line spacing is drawn
/// uniformly from `[step_lo, step_hi]`.
fn resample(polyline: &[[f64; 2]], params: &TrajectoryParams, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    const DENSE: f64 = 5e-4;
    let mut dense = vec![polyline[0]];
    for w in polyline.windows(2) {
        let n = (dist(w[0], w[1]) / DENSE).ceil().max(1.0) as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            dense.push([w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])]);
        }
    }
    let end = *dense.last().unwrap();
    let (lo, hi) = (params.step_lo, params.step_hi);
    let mut out = vec![dense[0]];
    let mut cursor = 0;
    loop {
        let cur = *out.last().unwrap();
        let remaining = dist(cur, end);
        if remaining <= hi {
            if remaining >= lo {
                out.push(end);
            }
            // otherwise the last point already lies within step_lo of the goal
            break;
        }
        let upper = if remaining < hi + lo { remaining - lo } else { hi }.min(hi - DENSE);
        let s = if upper > lo { rng.gen_range(lo..upper) } else { lo };
        match (cursor..dense.len()).find(|&k| dist(cur, dense[k]) >= s) {
            Some(k) => {
                out.push(dense[k]);
                cursor = k;
            }
            None => break,
        }
    }
    out
}

fn with_headings(points: &[[f64; 2]], start_theta: f64) -> Vec<Pose> {
    let n = points.len();
    if n == 1 {
        return vec![Pose::new(points[0][0], points[0][1], start_theta)];
    }
    let heading = |a: [f64; 2], b: [f64; 2]| (b[1] - a[1]).atan2(b[0] - a[0]);
    (0..n)
        .map(|k| {
            let th = if k + 1 < n {
                heading(points[k], points[k + 1])
            } else {
                heading(points[k - 1], points[k])
            };
            Pose::new(points[k][0], points[k][1], th)
        })
        .collect()
}

/// Gaussian jitter on every pose; poses that would collide are redrawn up
/// to ten times and otherwise kept as they were.
pub fn perturb(scene: &Scene, traj: &[Pose], seed: u64, params: &TrajectoryParams) -> Result<Vec<Pose>> {
    if !(params.perturb_lin_sigma >= 0.0 && params.perturb_ang_sigma >= 0.0) {
        return Err(Error::InvalidParams("perturbation sigmas must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lin = Normal::new(0.0, params.perturb_lin_sigma).expect("non-negative sigma");
    let ang = Normal::new(0.0, params.perturb_ang_sigma).expect("non-negative sigma");
    Ok(traj
        .iter()
        .map(|p| {
            for _ in 0..10 {
                let q = Pose::new(
                    p.x + lin.sample(&mut rng),
                    p.y + lin.sample(&mut rng),
                    p.theta + ang.sample(&mut rng),
                );
                if scene.is_collision_free(&q) {
                    return q;
                }
            }
            *p
        })
        .collect())
}

/// Uniform collision-free pose inside `region` (or the scene bounds).
pub fn random_free_pose(scene: &Scene, region: Option<Bounds>, rng: &mut ChaCha8Rng) -> Result<Pose> {
    let b = region.unwrap_or_else(|| scene.bounds());
    for _ in 0..10_000 {
        let p = Pose::new(
            rng.gen_range(b.min[0]..b.max[0]),
            rng.gen_range(b.min[1]..b.max[1]),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        if scene.is_collision_free(&p) {
            return Ok(p);
        }
    }
    Err(Error::InvalidScene("no free start position found".into()))
}

/// Label every target at a pose.
pub fn label_rewards(scene: &Scene, pose: &Pose, cam: &CameraModel) -> Result<BTreeMap<String, f64>> {
    let base = RewardParams::default();
    scene
        .targets()
        .map(|t| Ok((t.id.clone(), ground_truth_reward(scene, pose, cam, &t.id, &base)?)))
        .collect()
}

const MAX_ATTEMPTS: usize = 100;

/// Generate `n_trajectories` labeled trajectories. Trajectory `i` draws from
/// its own generator seeded with `seed + i`.
pub fn build_dataset(
    scene: &Scene,
    n_trajectories: usize,
    cam: &CameraModel,
    params: &TrajectoryParams,
    seed: u64,
    vocab_ref: &str,
) -> Result<Dataset> {
    params.validate()?;
    scene.require_targets()?;
    let targets = scene.target_ids();
    let mut zones: BTreeMap<&str, ViewingZone> = BTreeMap::new();
    for t in &targets {
        zones.insert(t, ViewingZone::compute(scene, cam, t, params.zone_resolution)?);
    }
    let mut records = Vec::with_capacity(n_trajectories * params.n_waypoints);
    for id in 0..n_trajectories {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(id as u64));
        let mut poses = None;
        for _ in 0..MAX_ATTEMPTS {
            let target = targets.choose(&mut rng).expect("targets checked");
            let start = random_free_pose(scene, params.start_region, &mut rng)?;
            match sample_trajectory_in_zone(scene, cam, &zones[target.as_str()], &start, rng.gen(), params) {
                Ok(path) if path.len() >= params.n_waypoints => {
                    poses = Some(path);
                    break;
                }
                Ok(_) | Err(Error::PlanningFailed { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        let path = poses.ok_or(Error::PlanningFailed {
            iterations: params.rrt_iterations,
        })?;
        let tail = &path[path.len() - params.n_waypoints..];
        let tail = perturb(scene, tail, rng.gen(), params)?;
        for (step, pose) in tail.into_iter().enumerate() {
            records.push(DatasetRecord {
                trajectory_id: id,
                step_index: step,
                pose,
                observation: scene.render_scan(&pose, cam)?,
                rewards: label_rewards(scene, &pose, cam)?,
            });
        }
    }
    Ok(Dataset {
        header: DatasetHeader {
            scene_ref: scene_digest(scene),
            vocab_ref: vocab_ref.to_string(),
            params: params.clone(),
            seed,
            camera: *cam,
            targets: scene.targets().map(|t| (t.id.clone(), t.label().to_string())).collect(),
        },
        records,
    })
}

/// `H + 1` consecutive records of one trajectory with the `H` actions that
/// link them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub observations: Vec<Observation>,
    pub poses: Vec<Pose>,
    pub actions: Vec<Action>,
    pub rewards: Vec<BTreeMap<String, f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Start indices of every run of `h + 1` records within one trajectory.
    pub fn windows(&self, h: usize) -> Vec<usize> {
        let r = &self.records;
        let mut out = Vec::new();
        let mut run_start = 0;
        for i in 0..r.len() {
            if i > 0 && r[i].trajectory_id != r[i - 1].trajectory_id {
                run_start = i;
            }
            if i + 1 >= run_start + h + 1 {
                out.push(i - h);
            }
        }
        out
    }

    pub fn sequence_at(&self, start: usize, h: usize) -> TrainingSequence {
        let recs = &self.records[start..=start + h];
        TrainingSequence {
            observations: recs.iter().map(|r| r.observation.clone()).collect(),
            poses: recs.iter().map(|r| r.pose).collect(),
            actions: recs.windows(2).map(|w| w[0].pose.relative_action(&w[1].pose)).collect(),
            rewards: recs.iter().map(|r| r.rewards.clone()).collect(),
        }
    }

    pub fn trajectory_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.records.iter().map(|r| r.trajectory_id).collect();
        ids.dedup();
        ids
    }

    /// Records whose trajectory id satisfies `keep`, preserving order.
    pub fn filter_trajectories(&self, keep: impl Fn(usize) -> bool) -> Dataset {
        Dataset {
            header: self.header.clone(),
            records: self.records.iter().filter(|r| keep(r.trajectory_id)).cloned().collect(),
        }
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header: DatasetHeader = match lines.next() {
            Some(l) => serde_json::from_str(&l?)?,
            None => return Err(Error::Format("empty dataset file".into())),
        };
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DatasetRecord = serde_json::from_str(&line)?;
            if !rec.rewards.keys().eq(header.targets.keys()) || rec.rewards.values().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Format(format!("record {} has an invalid reward map", n + 1)));
            }
            if rec.observation.depths.len() != header.camera.n_rays {
                return Err(Error::Format(format!("record {} has a scan of the wrong width", n + 1)));
            }
            records.push(rec);
        }
        Ok(Self { header, records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}

/// Uniformly chosen window of `h + 1` records from one trajectory.
pub fn sample_training_sequence(ds: &Dataset, h: usize, seed: u64) -> Result<TrainingSequence> {
    if h == 0 {
        return Err(Error::InvalidParams("sequence length must be at least 1".into()));
    }
    let windows = ds.windows(h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let &start = windows
        .choose(&mut rng)
        .ok_or(Error::InsufficientLength { needed: h + 1 })?;
    Ok(ds.sequence_at(start, h))
}
