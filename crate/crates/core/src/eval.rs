//! Experiment runner: difficulty tiers, optimal-distance estimates,
//! efficiency scoring and seeded trial batteries with CSV/JSON reports.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{random_free_pose, ViewingZone};
use crate::error::{Error, Result};
use crate::model::WorldModel;
use crate::planning::{
    execute_episode, EpisodePlanner, LearnedPlanner, PlannerConfig, PlannerKind, PrimitiveProposer, RandomPlanner,
};
use crate::reward::{detection_confidence, is_success_at, visibility, RewardParams, SuccessThresholds};
use crate::scene::{CameraModel, Pose, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Easy,
    Medium,
    Hard,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Easy, Tier::Medium, Tier::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Easy => "easy",
            Tier::Medium => "medium",
            Tier::Hard => "hard",
        }
    }
}

/// Bands on initial confidence, distance and occlusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DifficultyThresholds {
    pub easy_conf: f64,
    pub easy_distance: f64,
    pub easy_occlusion: f64,
    pub hard_conf: f64,
    pub hard_occlusion: f64,
    pub hard_distance: f64,
}

impl Default for DifficultyThresholds {
    fn default() -> Self {
        Self {
            easy_conf: 0.5,
            easy_distance: 1.0,
            easy_occlusion: 0.25,
            hard_conf: 0.1,
            hard_occlusion: 0.75,
            hard_distance: 2.5,
        }
    }
}

/// Tier from confidence, distance and occlusion (1 − visible fraction).
pub fn classify_by_measures(conf: f64, distance: f64, occlusion: f64, th: &DifficultyThresholds) -> Tier {
    if conf >= th.easy_conf && distance <= th.easy_distance && occlusion <= th.easy_occlusion {
        Tier::Easy
    } else if conf < th.hard_conf || occlusion >= th.hard_occlusion || distance > th.hard_distance {
        Tier::Hard
    } else {
        Tier::Medium
    }
}

pub fn classify_initial_difficulty(
    scene: &Scene,
    start: &Pose,
    cam: &CameraModel,
    target_id: &str,
    th: &DifficultyThresholds,
) -> Result<Tier> {
    let rep = visibility(scene, start, cam, target_id)?;
    let conf = detection_confidence(&rep, cam, &RewardParams::default());
    Ok(classify_by_measures(conf, rep.distance, 1.0 - rep.visible_fraction, th))
}

/// `exp(−d / d*)` on success, 0 otherwise. A zero `d_star` scores 1 only
/// when nothing was traveled.
pub fn efficiency_score(success: bool, d: f64, d_star: f64) -> f64 {
    if !success {
        return 0.0;
    }
    if d_star <= 0.0 {
        return if d <= 0.0 { 1.0 } else { 0.0 };
    }
    (-d / d_star).exp()
}

#[derive(PartialEq)]
struct Open(f64, usize);

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const LOS_STEP: f64 = 0.01;

/// Shortest any-angle collision-free path length from `start` to a viewing
/// zone, searched on the zone's grid.
pub fn distance_to_zone(scene: &Scene, start: [f64; 2], zone: &ViewingZone, resolution: f64) -> Result<f64> {
    let b = scene.bounds();
    let nx = (b.width() / resolution).floor() as usize + 1;
    let ny = (b.height() / resolution).floor() as usize + 1;
    let n = nx * ny;
    let pos = |k: usize| -> [f64; 2] {
        if k == n {
            start
        } else {
            [
                b.min[0] + (k / ny) as f64 * resolution,
                b.min[1] + (k % ny) as f64 * resolution,
            ]
        }
    };
    let free: Vec<bool> = (0..n).map(|k| scene.is_position_free(pos(k))).collect();
    let mut goal = vec![false; n];
    for p in &zone.points {
        let i = ((p[0] - b.min[0]) / resolution).round() as usize;
        let j = ((p[1] - b.min[1]) / resolution).round() as usize;
        if i < nx && j < ny {
            goal[i * ny + j] = true;
        }
    }
    let d = |a: [f64; 2], c: [f64; 2]| (a[0] - c[0]).hypot(a[1] - c[1]);
    let los = |a: usize, c: usize| scene.is_segment_free(pos(a), pos(c), LOS_STEP);
    let mut g = vec![f64::INFINITY; n + 1];
    let mut parent = vec![usize::MAX; n + 1];
    let mut closed = vec![false; n + 1];
    let mut heap = BinaryHeap::new();
    g[n] = 0.0;
    parent[n] = n;
    heap.push(Open(0.0, n));
    let si = ((start[0] - b.min[0]) / resolution).floor() as i64;
    let sj = ((start[1] - b.min[1]) / resolution).floor() as i64;
    while let Some(Open(gc, c)) = heap.pop() {
        if closed[c] {
            continue;
        }
        closed[c] = true;
        if c < n && goal[c] {
            return Ok(gc);
        }
        let neighbours: Vec<usize> = if c == n {
            let mut v = Vec::new();
            for i in si - 1..=si + 2 {
                for j in sj - 1..=sj + 2 {
                    if i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny {
                        v.push(i as usize * ny + j as usize);
                    }
                }
            }
            v
        } else {
            let (ci, cj) = ((c / ny) as i64, (c % ny) as i64);
            let mut v = Vec::with_capacity(8);
            for di in -1..=1 {
                for dj in -1..=1 {
                    let (i, j) = (ci + di, cj + dj);
                    if (di, dj) != (0, 0) && i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny {
                        v.push(i as usize * ny + j as usize);
                    }
                }
            }
            v
        };
        for m in neighbours {
            if !free[m] || closed[m] {
                continue;
            }
            let p = parent[c];
            let (cand, par) = if p != c && los(p, m) {
                (g[p] + d(pos(p), pos(m)), p)
            } else if los(c, m) {
                (gc + d(pos(c), pos(m)), c)
            } else {
                continue;
            };
            if cand < g[m] {
                g[m] = cand;
                parent[m] = par;
                heap.push(Open(cand, m));
            }
        }
    }
    Err(Error::Unreachable)
}

/// d*: zero when turning in place suffices, otherwise the grid path length
/// to the nearest viewing-zone point.
pub fn estimate_optimal_distance(
    scene: &Scene,
    cam: &CameraModel,
    start: &Pose,
    target_id: &str,
    resolution: f64,
) -> Result<f64> {
    let zone = ViewingZone::compute(scene, cam, target_id, resolution)?;
    optimal_distance_with_zone(scene, cam, start, &zone, resolution)
}

pub fn optimal_distance_with_zone(
    scene: &Scene,
    cam: &CameraModel,
    start: &Pose,
    zone: &ViewingZone,
    resolution: f64,
) -> Result<f64> {
    let c = zone.centroid;
    let facing = Pose::new(start.x, start.y, (c[1] - start.y).atan2(c[0] - start.x));
    let params = RewardParams::default();
    let th = SuccessThresholds::default();
    for p in [start, &facing] {
        if is_success_at(scene, p, cam, &zone.target_id, &params, &th)? {
            return Ok(0.0);
        }
    }
    distance_to_zone(scene, start.position(), zone, resolution)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub scene: String,
    pub target_id: String,
    pub query: String,
    pub start: Pose,
    pub max_steps: usize,
    pub tier: Tier,
    pub d_star: f64,
}

/// Mixes a master seed with indices.
pub fn derive_seed(master: u64, indices: &[u64]) -> u64 {
    let mut h = master ^ 0x243f_6a88_85a3_08d3;
    for &i in indices {
        h ^= i
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

const TASK_ATTEMPTS: usize = 20_000;

/// Rejection-samples a start and target in the requested tier whose start is
/// not already a success and whose viewing zone is reachable.
#[allow(clippy::too_many_arguments)]
pub fn sample_task(
    scene: &Scene,
    scene_name: &str,
    zones: &BTreeMap<String, ViewingZone>,
    cam: &CameraModel,
    tier: Tier,
    seed: u64,
    th: &DifficultyThresholds,
    max_steps: usize,
    resolution: f64,
) -> Result<TaskSpec> {
    scene.require_targets()?;
    let targets = scene.target_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = RewardParams::default();
    let success = SuccessThresholds::default();
    for _ in 0..TASK_ATTEMPTS {
        let target = targets.choose(&mut rng).expect("targets checked").clone();
        let start = random_free_pose(scene, None, &mut rng)?;
        if classify_initial_difficulty(scene, &start, cam, &target, th)? != tier
            || is_success_at(scene, &start, cam, &target, &params, &success)?
        {
            continue;
        }
        let zone = zones.get(&target).ok_or_else(|| Error::UnknownTarget(target.clone()))?;
        let d_star = match optimal_distance_with_zone(scene, cam, &start, zone, resolution) {
            Ok(d) => d,
            Err(Error::Unreachable) => continue,
            Err(e) => return Err(e),
        };
        let query = scene.objects()[scene.target_index(&target)?].label().to_string();
        return Ok(TaskSpec {
            scene: scene_name.to_string(),
            target_id: target,
            query,
            start,
            max_steps,
            tier,
            d_star,
        });
    }
    Err(Error::PlanningFailed {
        iterations: TASK_ATTEMPTS,
    })
}

fn default_tiers() -> Vec<Tier> {
    Tier::ALL.to_vec()
}

fn default_narrow_planners() -> Vec<PlannerKind> {
    vec![PlannerKind::Womap]
}

fn default_narrow_tiers() -> Vec<Tier> {
    vec![Tier::Easy]
}

fn default_max_steps() -> usize {
    40
}

fn default_resolution() -> f64 {
    0.05
}

/// Battery description. Paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub scenes: Vec<String>,
    pub planners: Vec<PlannerKind>,
    pub n_trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub thresholds: SuccessThresholds,
    pub ckpt: String,
    /// A second model trained on narrow-coverage data.
    #[serde(default)]
    pub narrow_ckpt: Option<String>,
    #[serde(default = "default_narrow_planners")]
    pub narrow_planners: Vec<PlannerKind>,
    #[serde(default = "default_narrow_tiers")]
    pub narrow_tiers: Vec<Tier>,
    #[serde(default = "default_tiers")]
    pub tiers: Vec<Tier>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub difficulty: DifficultyThresholds,
    #[serde(default = "default_resolution")]
    pub grid_resolution: f64,
}

impl EvalConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.planner.validate()?;
        if c.scenes.is_empty() {
            return Err(Error::InvalidParams("no scenes listed".into()));
        }
        if !(c.grid_resolution > 0.0) {
            return Err(Error::InvalidParams("grid_resolution must be positive".into()));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub scene: String,
    pub model: String,
    pub planner: PlannerKind,
    pub tier: Tier,
    pub trial: usize,
    pub seed: u64,
    pub target: String,
    pub query: String,
    pub success: bool,
    pub steps: usize,
    pub distance: f64,
    pub d_star: f64,
    pub efficiency: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scene: String,
    pub model: String,
    pub planner: PlannerKind,
    pub tier: Tier,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_efficiency: f64,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub master_seed: u64,
    pub n_trials: usize,
    pub cells: Vec<CellSummary>,
    #[serde(skip)]
    pub trials: Vec<TrialResult>,
}

impl EvalReport {
    pub fn cell(&self, scene: &str, model: &str, planner: PlannerKind, tier: Tier) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.scene == scene && c.model == model && c.planner == planner && c.tier == tier)
    }
}

/// Runs one episode with a fresh planner.
pub fn run_task(
    scene: &Scene,
    cam: &CameraModel,
    model: &WorldModel,
    kind: PlannerKind,
    cfg: &PlannerConfig,
    task: &TaskSpec,
    thresholds: &SuccessThresholds,
    seed: u64,
) -> Result<crate::planning::EpisodeTrace> {
    let mut planner: Box<dyn EpisodePlanner + '_> = match kind {
        PlannerKind::Random => Box::new(RandomPlanner::new(*cfg, seed)),
        _ => Box::new(LearnedPlanner::new(
            model,
            kind,
            *cfg,
            Box::new(PrimitiveProposer::new(model.vocab.clone(), cfg.primitive_scale)),
            seed,
        )),
    };
    execute_episode(
        scene,
        cam,
        planner.as_mut(),
        &task.target_id,
        &task.query,
        task.start,
        task.max_steps,
        thresholds,
    )
}

/// Every (scene, model, planner, tier, trial) episode in that order. Tasks
/// depend only on (scene, tier, trial), so planners face the same starts.
/// Per-trial errors are recorded, not raised.
pub fn run_trials(
    cfg: &EvalConfig,
    scenes: &[(String, Scene)],
    models: &[(String, &WorldModel)],
    on_trial: &mut dyn FnMut(&TrialResult),
) -> Result<EvalReport> {
    cfg.planner.validate()?;
    let mut trials = Vec::new();
    for (si, (scene_name, scene)) in scenes.iter().enumerate() {
        scene.require_targets()?;
        let Some((_, first)) = models.first() else {
            return Err(Error::InvalidParams("no model supplied".into()));
        };
        let cam = first.camera;
        let mut zones = BTreeMap::new();
        for t in scene.target_ids() {
            zones.insert(t.clone(), ViewingZone::compute(scene, &cam, &t, cfg.grid_resolution)?);
        }
        let mut tasks: BTreeMap<(Tier, usize), std::result::Result<TaskSpec, String>> = BTreeMap::new();
        for (mi, (model_name, model)) in models.iter().enumerate() {
            let (planners, tiers) = if mi == 0 {
                (&cfg.planners, &cfg.tiers)
            } else {
                (&cfg.narrow_planners, &cfg.narrow_tiers)
            };
            for &kind in planners {
                for &tier in tiers {
                    for trial in 0..cfg.n_trials {
                        let ti = Tier::ALL.iter().position(|&t| t == tier).expect("tier listed") as u64;
                        let seed = derive_seed(cfg.master_seed, &[si as u64, ti, trial as u64]);
                        let task = tasks
                            .entry((tier, trial))
                            .or_insert_with(|| {
                                sample_task(
                                    scene,
                                    scene_name,
                                    &zones,
                                    &cam,
                                    tier,
                                    seed,
                                    &cfg.difficulty,
                                    cfg.max_steps,
                                    cfg.grid_resolution,
                                )
                                .map_err(|e| e.to_string())
                            })
                            .clone();
                        let mut row = TrialResult {
                            scene: scene_name.clone(),
                            model: model_name.clone(),
                            planner: kind,
                            tier,
                            trial,
                            seed,
                            target: String::new(),
                            query: String::new(),
                            success: false,
                            steps: 0,
                            distance: 0.0,
                            d_star: 0.0,
                            efficiency: 0.0,
                            error: None,
                        };
                        match task {
                            Err(e) => row.error = Some(e),
                            Ok(task) => {
                                row.target = task.target_id.clone();
                                row.query = task.query.clone();
                                row.d_star = task.d_star;
                                match run_task(scene, &cam, model, kind, &cfg.planner, &task, &cfg.thresholds, seed) {
                                    Ok(tr) => {
                                        row.success = tr.success;
                                        row.steps = tr.steps();
                                        row.distance = tr.distance;
                                        row.efficiency = efficiency_score(tr.success, tr.distance, task.d_star);
                                    }
                                    Err(e) => row.error = Some(e.to_string()),
                                }
                            }
                        }
                        on_trial(&row);
                        trials.push(row);
                    }
                }
            }
        }
    }
    Ok(EvalReport {
        master_seed: cfg.master_seed,
        n_trials: cfg.n_trials,
        cells: summarize(&trials),
        trials,
    })
}

/// Per-cell aggregates in first-seen order.
pub fn summarize(trials: &[TrialResult]) -> Vec<CellSummary> {
    let mut cells: Vec<CellSummary> = Vec::new();
    for t in trials {
        let pos = cells
            .iter()
            .position(|c| c.scene == t.scene && c.model == t.model && c.planner == t.planner && c.tier == t.tier);
        let c = match pos {
            Some(i) => &mut cells[i],
            None => {
                cells.push(CellSummary {
                    scene: t.scene.clone(),
                    model: t.model.clone(),
                    planner: t.planner,
                    tier: t.tier,
                    trials: 0,
                    successes: 0,
                    success_rate: 0.0,
                    mean_efficiency: 0.0,
                    errors: 0,
                });
                cells.last_mut().expect("just pushed")
            }
        };
        c.trials += 1;
        c.successes += usize::from(t.success);
        c.errors += usize::from(t.error.is_some());
        c.mean_efficiency += t.efficiency;
    }
    for c in &mut cells {
        c.success_rate = c.successes as f64 / c.trials as f64;
        c.mean_efficiency /= c.trials as f64;
    }
    cells
}

const TRIAL_HEADER: [&str; 14] = [
    "scene",
    "model",
    "planner",
    "tier",
    "trial",
    "seed",
    "target",
    "query",
    "success",
    "steps",
    "distance",
    "d_star",
    "efficiency",
    "error",
];

/// One row per trial; the header is written even with no rows.
pub fn write_trials_csv<W: Write>(trials: &[TrialResult], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    out.write_record(TRIAL_HEADER).map_err(csv_err)?;
    for t in trials {
        out.serialize(t).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TierRow<'a> {
    model: &'a str,
    planner: PlannerKind,
    tier: Tier,
    trials: usize,
    success_rate: f64,
    mean_efficiency: f64,
}

/// Success and efficiency per (model, planner, tier), pooled over scenes.
pub fn write_tier_csv<W: Write>(cells: &[CellSummary], w: W) -> Result<()> {
    let mut pooled: BTreeMap<(&str, PlannerKind, Tier), (usize, f64, f64)> = BTreeMap::new();
    for c in cells {
        let e = pooled.entry((&c.model, c.planner, c.tier)).or_default();
        e.0 += c.trials;
        e.1 += c.successes as f64;
        e.2 += c.mean_efficiency * c.trials as f64;
    }
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    for ((model, planner, tier), (n, s, eff)) in pooled {
        let denom = n.max(1) as f64;
        out.serialize(TierRow {
            model,
            planner,
            tier,
            trials: n,
            success_rate: s / denom,
            mean_efficiency: eff / denom,
        })
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-cell summary rows.
pub fn write_cells_csv<W: Write>(cells: &[CellSummary], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    for c in cells {
        out.serialize(c).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
