//! Browser demo: drive a camera through a bundled scene, watch its semantic
//! scan and true reward, and let the planners search for a target using the
//! simulator as their model.

use std::collections::BTreeMap;

use lookout_core::datagen::{random_free_pose, ViewingZone};
use lookout_core::eval::{efficiency_score, sample_task, DifficultyThresholds, Tier};
use lookout_core::planning::{
    execute_action, EpisodePlanner, OracleModel, OraclePlanner, OracleProposer, PlanContext, PlannerConfig,
    PlannerKind, RandomPlanner,
};
use lookout_core::reward::{
    bbox_proportion, detection_confidence, is_success, resolve_params, reward_from_report, visibility, RewardParams,
    SuccessThresholds,
};
use lookout_core::scene::{Action, CameraModel, ClassId, Pose, Scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const SCENES: [(&str, &str); 5] = [
    ("kitchen", include_str!("../../../scenes/kitchen.json")),
    ("lounge", include_str!("../../../scenes/lounge.json")),
    ("office", include_str!("../../../scenes/office.json")),
    ("pantry", include_str!("../../../scenes/pantry.json")),
    ("study", include_str!("../../../scenes/study.json")),
];

const GRID: f64 = 0.05;

type Result<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct Ray {
    bearing: f64,
    depth: f64,
    class: Option<ClassId>,
}

#[derive(Serialize)]
struct Frame<'a> {
    pose: Pose,
    trail: &'a [Pose],
    plan: &'a [Pose],
    rays: Vec<Ray>,
    target: &'a str,
    confidence: f64,
    bbox: f64,
    reward: f64,
    success: bool,
    steps: usize,
    distance: f64,
    tier: Option<Tier>,
    d_star: Option<f64>,
    efficiency: Option<f64>,
}

#[wasm_bindgen]
pub fn scene_names() -> Vec<String> {
    SCENES.iter().map(|(n, _)| n.to_string()).collect()
}

#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
    cam: CameraModel,
    cfg: PlannerConfig,
    pose: Pose,
    target: String,
    trail: Vec<Pose>,
    plan: Vec<Pose>,
    a_prev: Action,
    seed: u64,
    zones: Option<BTreeMap<String, ViewingZone>>,
    task: Option<(Tier, f64)>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(name: &str, seed: u64) -> Result<Demo> {
        let (_, json) = SCENES
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| format!("unknown scene `{name}`"))?;
        let scene = Scene::from_json(json).map_err(err)?;
        let target = scene.target_ids().into_iter().next().ok_or("scene has no targets")?;
        let mut demo = Demo {
            scene,
            cam: CameraModel::default(),
            cfg: PlannerConfig::default(),
            pose: Pose::new(0.0, 0.0, 0.0),
            target,
            trail: Vec::new(),
            plan: Vec::new(),
            a_prev: Action::ZERO,
            seed,
            zones: None,
            task: None,
        };
        demo.reset(seed, "easy")?;
        Ok(demo)
    }

    pub fn scene_json(&self) -> String {
        self.scene.to_json()
    }

    pub fn targets(&self) -> Vec<String> {
        self.scene.target_ids()
    }

    pub fn target(&self) -> String {
        self.target.clone()
    }

    pub fn set_target(&mut self, id: &str) -> Result<()> {
        self.scene.target_index(id).map_err(err)?;
        self.target = id.to_string();
        self.plan.clear();
        self.task = None;
        Ok(())
    }

    /// Starts over from a seeded pose. `tier` is `easy`, `medium` or `hard`
    /// to sample a task of that difficulty (target included), or `any` for a
    /// uniform free pose with the current target.
    pub fn reset(&mut self, seed: u64, tier: &str) -> Result<()> {
        self.seed = seed;
        if tier == "any" {
            self.pose = random_free_pose(&self.scene, None, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)?;
            self.task = None;
        } else {
            let tier = Tier::ALL
                .into_iter()
                .find(|t| t.name() == tier)
                .ok_or_else(|| format!("unknown tier `{tier}`"))?;
            self.fill_zones()?;
            let task = sample_task(
                &self.scene,
                "demo",
                self.zones.as_ref().expect("filled"),
                &self.cam,
                tier,
                seed,
                &DifficultyThresholds::default(),
                40,
                GRID,
            )
            .map_err(err)?;
            self.pose = task.start;
            self.target = task.target_id;
            self.task = Some((tier, task.d_star));
        }
        self.trail = vec![self.pose];
        self.plan.clear();
        self.a_prev = Action::ZERO;
        Ok(())
    }

    /// Current pose, scan, reward terms, trail and last plan as JSON.
    pub fn frame(&self) -> Result<String> {
        let obs = self.scene.render_scan(&self.pose, &self.cam).map_err(err)?;
        let rays = (0..obs.len())
            .map(|i| Ray {
                bearing: self.cam.ray_bearing(self.pose.theta, i),
                depth: obs.depths[i],
                class: obs.classes[i],
            })
            .collect();
        let (params, th) = self.params()?;
        let rep = visibility(&self.scene, &self.pose, &self.cam, &self.target).map_err(err)?;
        let success = is_success(&rep, &self.cam, &th, &params);
        let distance: f64 = self.trail.windows(2).map(|w| w[0].distance_to(w[1].position())).sum();
        let frame = Frame {
            pose: self.pose,
            trail: &self.trail,
            plan: &self.plan,
            rays,
            target: &self.target,
            confidence: detection_confidence(&rep, &self.cam, &params),
            bbox: bbox_proportion(&rep, &self.cam),
            reward: reward_from_report(&rep, &self.cam, &params),
            success,
            steps: self.trail.len() - 1,
            distance,
            tier: self.task.map(|t| t.0),
            d_star: self.task.map(|t| t.1),
            efficiency: self.task.map(|(_, d)| efficiency_score(success, distance, d)),
        };
        serde_json::to_string(&frame).map_err(err)
    }

    /// One step in the body frame; arguments are fractions of the action
    /// limits. Blocked motion is cut short.
    pub fn drive(&mut self, forward: f64, left: f64, turn: f64) {
        let l = self.cfg.limits;
        let a = Action::new(forward * l.lin, left * l.lin, turn * l.ang);
        self.apply(&a);
        self.plan.clear();
    }

    /// Plans against the simulator with `planner` and takes the first action.
    /// Returns whether the target is now successfully in view.
    pub fn plan_step(&mut self, planner: &str) -> Result<bool> {
        let kind: PlannerKind = planner.parse().map_err(err)?;
        let obs = self.scene.render_scan(&self.pose, &self.cam).map_err(err)?;
        let label = self.scene.objects()[self.scene.target_index(&self.target).map_err(err)?]
            .label()
            .to_string();
        let step = self.trail.len() - 1;
        let seed = self.seed.wrapping_mul(1_000_003).wrapping_add(step as u64);
        let ctx = PlanContext {
            scene: &self.scene,
            camera: &self.cam,
            pose: &self.pose,
            observation: &obs,
            query: &label,
            target_id: &self.target,
            step,
            a_prev: self.a_prev,
        };
        let result = match kind {
            PlannerKind::Random => RandomPlanner::new(self.cfg, seed).plan(&ctx),
            _ => OraclePlanner::new(
                OracleModel::new(&self.scene, self.cam, &self.cfg.limits),
                kind,
                self.cfg,
                Box::new(OracleProposer {
                    scale: self.cfg.primitive_scale,
                    horizon: self.cfg.horizon,
                }),
                seed,
            )
            .plan(&ctx),
        }
        .map_err(err)?;
        let mut p = self.pose;
        let preview: Vec<Pose> = result
            .sequence
            .iter()
            .map(|a| {
                p = p.compose(a);
                p
            })
            .collect();
        self.apply(result.sequence.first().unwrap_or(&Action::ZERO));
        self.plan = preview;
        let (params, th) = self.params()?;
        let rep = visibility(&self.scene, &self.pose, &self.cam, &self.target).map_err(err)?;
        Ok(is_success(&rep, &self.cam, &th, &params))
    }
}

impl Demo {
    fn fill_zones(&mut self) -> Result<()> {
        if self.zones.is_none() {
            let mut zones = BTreeMap::new();
            for t in self.scene.target_ids() {
                let z = ViewingZone::compute(&self.scene, &self.cam, &t, GRID).map_err(err)?;
                zones.insert(t, z);
            }
            self.zones = Some(zones);
        }
        Ok(())
    }

    fn params(&self) -> Result<(RewardParams, SuccessThresholds)> {
        resolve_params(
            &self.scene,
            &self.target,
            RewardParams::default(),
            SuccessThresholds::default(),
        )
        .map_err(err)
    }

    fn apply(&mut self, a: &Action) {
        let (next, taken) = execute_action(&self.scene, &self.pose, a, &self.cfg.limits);
        self.pose = next;
        self.a_prev = taken;
        self.trail.push(next);
    }
}
