//! Receding-horizon execution: plan, take the first action, replan.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::latent::LatentModel;
use super::oracle::OracleModel;
use super::proposals::ProposalSource;
use super::{
    cem_plan, grad_plan, heuristic_plan, womap_plan, ActionSequence, PlanResult, PlannerConfig, PlanningModel,
};
use crate::error::{Error, Result};
use crate::model::WorldModel;
use crate::reward::{ground_truth_reward, is_success_at, RewardParams, SuccessThresholds};
use crate::scene::{Action, CameraModel, Observation, Pose, Scene};

/// What a planner may consult at one step. Learned planners read only the
/// observation and query; the scene is there for oracle adapters.
pub struct PlanContext<'a> {
    pub scene: &'a Scene,
    pub camera: &'a CameraModel,
    pub pose: &'a Pose,
    pub observation: &'a Observation,
    pub query: &'a str,
    pub target_id: &'a str,
    pub step: usize,
    pub a_prev: Action,
}

pub trait EpisodePlanner {
    fn plan(&mut self, ctx: &PlanContext) -> Result<PlanResult>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Grad,
    Cem,
    Hr,
    Womap,
    Random,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 5] = [
        PlannerKind::Womap,
        PlannerKind::Hr,
        PlannerKind::Cem,
        PlannerKind::Grad,
        PlannerKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Grad => "grad",
            PlannerKind::Cem => "cem",
            PlannerKind::Hr => "hr",
            PlannerKind::Womap => "womap",
            PlannerKind::Random => "random",
        }
    }
}

impl FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown planner `{s}`")))
    }
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(step as u64)
}

/// Shifts the previous plan by one step and pads with a zero action.
fn warm_start(prev: &Option<ActionSequence>, t: usize) -> ActionSequence {
    match prev {
        Some(p) => (0..t).map(|i| p.get(i + 1).copied().unwrap_or(Action::ZERO)).collect(),
        None => vec![Action::ZERO; t],
    }
}

#[allow(clippy::too_many_arguments)]
fn plan_with<M: PlanningModel>(
    model: &M,
    state: &M::State,
    goal: &M::Goal,
    kind: PlannerKind,
    cfg: &PlannerConfig,
    proposer: &mut dyn ProposalSource,
    ctx: &PlanContext,
    seed: u64,
    warm: &Option<ActionSequence>,
) -> Result<PlanResult> {
    match kind {
        PlannerKind::Grad => grad_plan(model, state, goal, &warm_start(warm, cfg.horizon), cfg, &ctx.a_prev),
        PlannerKind::Cem => cem_plan(model, state, goal, cfg, step_seed(seed, ctx.step), &ctx.a_prev),
        PlannerKind::Hr => heuristic_plan(model, state, goal, cfg, &ctx.a_prev),
        PlannerKind::Womap => {
            let proposals = proposer.propose(ctx, cfg.k, &cfg.limits)?;
            womap_plan(model, state, goal, &proposals, cfg, &ctx.a_prev)
        }
        PlannerKind::Random => Err(Error::InvalidParams("use RandomPlanner for random actions".into())),
    }
}

/// Plans in the latent space of a trained world model.
pub struct LearnedPlanner<'m> {
    pub model: &'m WorldModel,
    pub kind: PlannerKind,
    pub cfg: PlannerConfig,
    pub proposer: Box<dyn ProposalSource + 'm>,
    pub seed: u64,
    last: Option<ActionSequence>,
}

impl<'m> LearnedPlanner<'m> {
    pub fn new(
        model: &'m WorldModel,
        kind: PlannerKind,
        cfg: PlannerConfig,
        proposer: Box<dyn ProposalSource + 'm>,
        seed: u64,
    ) -> Self {
        Self {
            model,
            kind,
            cfg,
            proposer,
            seed,
            last: None,
        }
    }
}

impl EpisodePlanner for LearnedPlanner<'_> {
    fn plan(&mut self, ctx: &PlanContext) -> Result<PlanResult> {
        let z0 = self.model.encode(ctx.observation)?;
        let e = self.model.embed_language(ctx.query)?;
        let lm = LatentModel { model: self.model };
        let r = plan_with(
            &lm,
            &z0,
            &e,
            self.kind,
            &self.cfg,
            self.proposer.as_mut(),
            ctx,
            self.seed,
            &self.last,
        )?;
        self.last = Some(r.sequence.clone());
        Ok(r)
    }
}

/// Plans against the true scene and reward.
pub struct OraclePlanner<'s> {
    pub model: OracleModel<'s>,
    pub kind: PlannerKind,
    pub cfg: PlannerConfig,
    pub proposer: Box<dyn ProposalSource + 's>,
    pub seed: u64,
    last: Option<ActionSequence>,
}

impl<'s> OraclePlanner<'s> {
    pub fn new(
        model: OracleModel<'s>,
        kind: PlannerKind,
        cfg: PlannerConfig,
        proposer: Box<dyn ProposalSource + 's>,
        seed: u64,
    ) -> Self {
        Self {
            model,
            kind,
            cfg,
            proposer,
            seed,
            last: None,
        }
    }
}

impl EpisodePlanner for OraclePlanner<'_> {
    fn plan(&mut self, ctx: &PlanContext) -> Result<PlanResult> {
        let goal = ctx.target_id.to_string();
        let r = plan_with(
            &self.model,
            ctx.pose,
            &goal,
            self.kind,
            &self.cfg,
            self.proposer.as_mut(),
            ctx,
            self.seed,
            &self.last,
        )?;
        self.last = Some(r.sequence.clone());
        Ok(r)
    }
}

/// Uniform random actions within the limits.
pub struct RandomPlanner {
    pub cfg: PlannerConfig,
    rng: ChaCha8Rng,
}

impl RandomPlanner {
    pub fn new(cfg: PlannerConfig, seed: u64) -> Self {
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl EpisodePlanner for RandomPlanner {
    fn plan(&mut self, _ctx: &PlanContext) -> Result<PlanResult> {
        let l = self.cfg.limits.as_array();
        let sequence: ActionSequence = (0..self.cfg.horizon)
            .map(|_| {
                Action::new(
                    self.rng.gen_range(-l[0]..=l[0]),
                    self.rng.gen_range(-l[1]..=l[1]),
                    self.rng.gen_range(-l[2]..=l[2]),
                )
            })
            .collect();
        Ok(PlanResult {
            per_step_rewards: vec![0.0; sequence.len()],
            sequence,
            predicted_return: 0.0,
            candidate_scores: Vec::new(),
        })
    }
}

/// Always plans to stand still.
pub struct ZeroPlanner {
    pub horizon: usize,
}

impl EpisodePlanner for ZeroPlanner {
    fn plan(&mut self, _ctx: &PlanContext) -> Result<PlanResult> {
        Ok(PlanResult {
            sequence: vec![Action::ZERO; self.horizon],
            predicted_return: 0.0,
            per_step_rewards: vec![0.0; self.horizon],
            candidate_scores: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub target_id: String,
    pub query: String,
    /// Visited poses, starting pose first.
    pub poses: Vec<Pose>,
    /// Executed (possibly truncated) actions.
    pub actions: Vec<Action>,
    /// Ground-truth reward at each visited pose.
    pub oracle_rewards: Vec<f64>,
    /// Planner objective at each step.
    pub predicted_returns: Vec<f64>,
    pub distance: f64,
    pub success: bool,
}

impl EpisodeTrace {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }
}

/// Clamps `a` to `limits`, then keeps the largest fraction of it that ends
/// collision-free along a free path. Returns the new pose and the action
/// actually taken.
pub fn execute_action(scene: &Scene, p: &Pose, a: &Action, limits: &crate::scene::ActionLimits) -> (Pose, Action) {
    let a = truncate_to_free(scene, p, &limits.clamp(a));
    (p.compose(&a), a)
}

/// The largest fraction of `a` from `p` that ends collision-free along a
/// free path, found by bisection.
fn truncate_to_free(scene: &Scene, p: &Pose, a: &Action) -> Action {
    let ok = |s: f64| {
        let q = p.compose(&a.scaled(s));
        scene.is_collision_free(&q) && scene.is_segment_free(p.position(), q.position(), 0.005)
    };
    if ok(1.0) {
        return *a;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    a.scaled(lo)
}

#[allow(clippy::too_many_arguments)]
pub fn execute_episode(
    scene: &Scene,
    cam: &CameraModel,
    planner: &mut dyn EpisodePlanner,
    target_id: &str,
    query: &str,
    start: Pose,
    max_steps: usize,
    thresholds: &SuccessThresholds,
) -> Result<EpisodeTrace> {
    scene.target_index(target_id)?;
    if !scene.is_collision_free(&start) {
        return Err(Error::InvalidParams("episode start is not collision-free".into()));
    }
    let params = RewardParams::default();
    let limits = crate::scene::ActionLimits::default();
    let mut trace = EpisodeTrace {
        target_id: target_id.to_string(),
        query: query.to_string(),
        poses: vec![start],
        actions: Vec::new(),
        oracle_rewards: vec![ground_truth_reward(scene, &start, cam, target_id, &params)?],
        predicted_returns: Vec::new(),
        distance: 0.0,
        success: false,
    };
    let mut pose = start;
    let mut a_prev = Action::ZERO;
    for step in 0..=max_steps {
        if is_success_at(scene, &pose, cam, target_id, &params, thresholds)? {
            trace.success = true;
            break;
        }
        if step == max_steps {
            break;
        }
        let obs = scene.render_scan(&pose, cam)?;
        let ctx = PlanContext {
            scene,
            camera: cam,
            pose: &pose,
            observation: &obs,
            query,
            target_id,
            step,
            a_prev,
        };
        let plan = planner.plan(&ctx)?;
        let first = plan.sequence.first().copied().unwrap_or(Action::ZERO);
        let (next, a) = execute_action(scene, &pose, &first, &limits);
        pose = next;
        trace.distance += a.translation_norm();
        trace.actions.push(a);
        trace.poses.push(pose);
        trace
            .oracle_rewards
            .push(ground_truth_reward(scene, &pose, cam, target_id, &params)?);
        trace.predicted_returns.push(plan.predicted_return);
        a_prev = a;
    }
    Ok(trace)
}
