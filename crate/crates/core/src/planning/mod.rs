//! Action-sequence planners over a generic predictive model: gradient ascent,
//! cross-entropy method, primitive refinement and proposal refinement, plus
//! the receding-horizon episode loop.

mod episode;
mod latent;
mod oracle;
mod proposals;

use std::f64::consts::FRAC_PI_4;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Action, ActionLimits};

pub use episode::{
    execute_action, execute_episode, EpisodePlanner, EpisodeTrace, LearnedPlanner, OraclePlanner, PlanContext,
    PlannerKind, RandomPlanner, ZeroPlanner,
};
pub use latent::{rollout_latent, LatentModel, RolloutMode};
pub use oracle::OracleModel;
pub use proposals::{FileProposal, FileProposer, OracleProposer, PrimitiveProposer, ProposalSource};

pub type ActionSequence = Vec<Action>;

/// Objective value and per-step predicted rewards of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub objective: f64,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub sequence: ActionSequence,
    pub predicted_return: f64,
    pub per_step_rewards: Vec<f64>,
    /// Objective of each refined candidate, in input order.
    pub candidate_scores: Vec<f64>,
}

impl PlanResult {
    fn from_scored(sequence: ActionSequence, s: Scored) -> Self {
        Self {
            sequence,
            predicted_return: s.objective,
            per_step_rewards: s.rewards,
            candidate_scores: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    /// Initial standard deviation as a fraction of each action limit.
    pub init_sigma: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 12,
            elites: 3,
            iterations: 10,
            init_sigma: 0.5,
        }
    }
}

/// Update rule for gradient refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMethod {
    /// Plain projected ascent; step length follows gradient magnitude.
    Ascent,
    /// Per-coordinate adaptive moments; steps of roughly `grad_lr` limits.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub horizon: usize,
    /// Weight of the L1 smoothness penalty.
    pub gamma: f64,
    pub grad_steps: usize,
    pub grad_method: GradMethod,
    /// Step size in limit-normalized action coordinates.
    pub grad_lr: f64,
    pub cem: CemConfig,
    /// Proposals kept from a proposal source.
    pub k: usize,
    /// Scale applied to the primitive set (1 = 15 cm moves, 45 degree turns).
    pub primitive_scale: f64,
    pub limits: ActionLimits,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 4,
            gamma: 0.05,
            grad_steps: 25,
            grad_method: GradMethod::Ascent,
            grad_lr: 1.0,
            cem: CemConfig::default(),
            k: 3,
            primitive_scale: 1.0 / 3.0,
            limits: ActionLimits::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParams("horizon must be at least 1".into()));
        }
        if !(self.gamma >= 0.0 && self.grad_lr > 0.0 && self.primitive_scale > 0.0) {
            return Err(Error::InvalidParams(
                "gamma, grad_lr and primitive_scale must be positive".into(),
            ));
        }
        let c = &self.cem;
        // population may equal elites
        if c.elites == 0 || c.population < c.elites || c.iterations == 0 || !(c.init_sigma >= 0.0) {
            return Err(Error::InvalidParams(
                "cem needs population >= elites >= 1 and iterations >= 1".into(),
            ));
        }
        if self.k == 0 {
            return Err(Error::InvalidParams("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// `Σ rewards − γ Σ ‖a_τ − a_{τ−1}‖₁`, with the first action differenced
/// against `a_prev`.
pub fn mpc_objective(rewards: &[f64], seq: &[Action], gamma: f64, a_prev: &Action) -> f64 {
    rewards.iter().sum::<f64>() - gamma * smoothness(seq, a_prev)
}

/// `Σ ‖a_τ − a_{τ−1}‖₁` starting from `a_prev`.
pub fn smoothness(seq: &[Action], a_prev: &Action) -> f64 {
    let mut prev = a_prev.to_array();
    let mut total = 0.0;
    for a in seq {
        let cur = a.to_array();
        total += (0..3).map(|i| (cur[i] - prev[i]).abs()).sum::<f64>();
        prev = cur;
    }
    total
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// A model that can score action sequences from a state toward a goal.
pub trait PlanningModel {
    type State;
    type Goal;

    /// Predicted reward after each action of each sequence.
    fn rollout_rewards(&self, state: &Self::State, goal: &Self::Goal, seqs: &[ActionSequence])
        -> Result<Vec<Vec<f64>>>;

    /// Per-step rewards plus the gradient of their sum with respect to every
    /// action of every sequence.
    fn reward_gradients(
        &self,
        state: &Self::State,
        goal: &Self::Goal,
        seqs: &[ActionSequence],
    ) -> Result<Vec<(Vec<f64>, Vec<[f64; 3]>)>>;

    fn objective_batch(
        &self,
        state: &Self::State,
        goal: &Self::Goal,
        seqs: &[ActionSequence],
        gamma: f64,
        a_prev: &Action,
    ) -> Result<Vec<Scored>> {
        Ok(self
            .rollout_rewards(state, goal, seqs)?
            .into_iter()
            .zip(seqs)
            .map(|(rewards, seq)| Scored {
                objective: mpc_objective(&rewards, seq, gamma, a_prev),
                rewards,
            })
            .collect())
    }

    /// Objective and its (sub)gradient for each sequence.
    fn objective_grad_batch(
        &self,
        state: &Self::State,
        goal: &Self::Goal,
        seqs: &[ActionSequence],
        gamma: f64,
        a_prev: &Action,
    ) -> Result<Vec<(Scored, Vec<[f64; 3]>)>> {
        let rg = self.reward_gradients(state, goal, seqs)?;
        Ok(rg
            .into_iter()
            .zip(seqs)
            .map(|((rewards, mut grad), seq)| {
                let mut prev = a_prev.to_array();
                for (t, a) in seq.iter().enumerate() {
                    let cur = a.to_array();
                    for i in 0..3 {
                        let s = sign(cur[i] - prev[i]);
                        grad[t][i] -= gamma * s;
                        if t > 0 {
                            grad[t - 1][i] += gamma * s;
                        }
                    }
                    prev = cur;
                }
                let objective = mpc_objective(&rewards, seq, gamma, a_prev);
                (Scored { objective, rewards }, grad)
            })
            .collect())
    }
}

/// The nine primitive options; `scale` 1 gives 15 cm moves and 45 degree turns.
/// Left and counter-clockwise are positive.
pub fn primitive_set(scale: f64) -> Vec<ActionSequence> {
    let m = 0.15 * scale;
    let d = m * std::f64::consts::FRAC_1_SQRT_2;
    let r = FRAC_PI_4 * scale;
    vec![
        vec![Action::new(m, 0.0, 0.0)],
        vec![Action::new(0.0, m, 0.0)],
        vec![Action::new(0.0, -m, 0.0)],
        vec![Action::new(0.0, 0.0, r)],
        vec![Action::new(0.0, 0.0, -r)],
        vec![Action::new(d, d, 0.0)],
        vec![Action::new(d, -d, 0.0)],
        vec![Action::new(d, d, 0.0), Action::new(0.0, 0.0, -r)],
        vec![Action::new(d, -d, 0.0), Action::new(0.0, 0.0, r)],
    ]
}

/// Option letters in [`primitive_set`] order.
pub const PRIMITIVE_NAMES: [char; 9] = ['A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I'];

/// Truncates or pads with zero actions to length `t`, clamping to limits.
pub fn fit_to_horizon(seq: &[Action], t: usize, limits: &ActionLimits) -> ActionSequence {
    (0..t)
        .map(|i| seq.get(i).map_or(Action::ZERO, |a| limits.clamp(a)))
        .collect()
}

fn argmax_first(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Projected adaptive-moment ascent on the objective, run for every
/// initialization at once. Each result is the best iterate seen.
pub fn grad_plan_batch<M: PlanningModel>(
    model: &M,
    state: &M::State,
    goal: &M::Goal,
    inits: &[ActionSequence],
    cfg: &PlannerConfig,
    a_prev: &Action,
) -> Result<Vec<PlanResult>> {
    if inits.is_empty() {
        return Ok(Vec::new());
    }
    let lim = cfg.limits.as_array();
    let mut cur: Vec<ActionSequence> = inits
        .iter()
        .map(|s| s.iter().map(|a| cfg.limits.clamp(a)).collect())
        .collect();
    let mut best: Vec<Option<(ActionSequence, Scored)>> = vec![None; cur.len()];
    let record = |best: &mut Vec<Option<(ActionSequence, Scored)>>, seqs: &[ActionSequence], scored: Vec<Scored>| {
        for ((slot, seq), s) in best.iter_mut().zip(seqs).zip(scored) {
            if slot.as_ref().map_or(true, |(_, b)| s.objective > b.objective) {
                *slot = Some((seq.clone(), s));
            }
        }
    };
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m: Vec<Vec<[f64; 3]>> = cur.iter().map(|s| vec![[0.0; 3]; s.len()]).collect();
    let mut v = m.clone();
    for step in 1..=cfg.grad_steps {
        let out = model.objective_grad_batch(state, goal, &cur, cfg.gamma, a_prev)?;
        let (scored, grads): (Vec<Scored>, Vec<Vec<[f64; 3]>>) = out.into_iter().unzip();
        record(&mut best, &cur, scored);
        let bc1 = 1.0 - b1.powi(step as i32);
        let bc2 = 1.0 - b2.powi(step as i32);
        for (k, seq) in cur.iter_mut().enumerate() {
            for (t, a) in seq.iter_mut().enumerate() {
                let mut arr = a.to_array();
                for i in 0..3 {
                    let g = grads[k][t][i];
                    m[k][t][i] = b1 * m[k][t][i] + (1.0 - b1) * g;
                    v[k][t][i] = b2 * v[k][t][i] + (1.0 - b2) * g * g;
                    // steps are taken in limit-normalized coordinates
                    arr[i] += match cfg.grad_method {
                        GradMethod::Ascent => cfg.grad_lr * lim[i] * lim[i] * g,
                        GradMethod::Adam => {
                            let mhat = m[k][t][i] / bc1;
                            let vhat = v[k][t][i] / bc2;
                            cfg.grad_lr * lim[i] * mhat / (vhat.sqrt() + eps)
                        }
                    };
                }
                *a = cfg.limits.clamp(&Action::from_array(arr));
            }
        }
    }
    let last = model.objective_batch(state, goal, &cur, cfg.gamma, a_prev)?;
    record(&mut best, &cur, last);
    Ok(best
        .into_iter()
        .map(|b| {
            let (seq, s) = b.expect("every slot scored");
            PlanResult::from_scored(seq, s)
        })
        .collect())
}

pub fn grad_plan<M: PlanningModel>(
    model: &M,
    state: &M::State,
    goal: &M::Goal,
    init: &[Action],
    cfg: &PlannerConfig,
    a_prev: &Action,
) -> Result<PlanResult> {
    let mut r = grad_plan_batch(model, state, goal, &[init.to_vec()], cfg, a_prev)?;
    Ok(r.remove(0))
}

/// Cross-entropy method over sequences of `cfg.horizon` actions. Returns the
/// best sample ever drawn.
pub fn cem_plan<M: PlanningModel>(
    model: &M,
    state: &M::State,
    goal: &M::Goal,
    cfg: &PlannerConfig,
    seed: u64,
    a_prev: &Action,
) -> Result<PlanResult> {
    cem_plan_traced(model, state, goal, cfg, seed, a_prev).map(|(r, _)| r)
}

/// [`cem_plan`] that also reports the mean sampling deviation after each refit.
pub fn cem_plan_traced<M: PlanningModel>(
    model: &M,
    state: &M::State,
    goal: &M::Goal,
    cfg: &PlannerConfig,
    seed: u64,
    a_prev: &Action,
) -> Result<(PlanResult, Vec<f64>)> {
    cfg.validate()?;
    let t = cfg.horizon;
    let c = cfg.cem;
    let lim = cfg.limits.as_array();
    let dim = 3 * t;
    let mut mean = vec![0.0; dim];
    let mut std: Vec<f64> = (0..dim).map(|j| c.init_sigma * lim[j % 3]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(ActionSequence, Scored)> = None;
    let mut sigma_trace = Vec::with_capacity(c.iterations);
    for _ in 0..c.iterations {
        let samples: Vec<ActionSequence> = (0..c.population)
            .map(|_| {
                (0..t)
                    .map(|s| {
                        let mut a = [0.0; 3];
                        for i in 0..3 {
                            let j = 3 * s + i;
                            let n: f64 = StandardNormal.sample(&mut rng);
                            a[i] = mean[j] + std[j] * n;
                        }
                        cfg.limits.clamp(&Action::from_array(a))
                    })
                    .collect()
            })
            .collect();
        let scored = model.objective_batch(state, goal, &samples, cfg.gamma, a_prev)?;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| scored[b].objective.total_cmp(&scored[a].objective).then(a.cmp(&b)));
        let top = order[0];
        if best.as_ref().map_or(true, |(_, b)| scored[top].objective > b.objective) {
            best = Some((samples[top].clone(), scored[top].clone()));
        }
        let elites = &order[..c.elites];
        for j in 0..dim {
            let vals: Vec<f64> = elites.iter().map(|&e| samples[e][j / 3].to_array()[j % 3]).collect();
            let mu = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / vals.len() as f64;
            mean[j] = mu;
            std[j] = var.sqrt().max(1e-6 * lim[j % 3]);
        }
        sigma_trace.push(std.iter().zip(0..).map(|(s, j)| s / lim[j % 3]).sum::<f64>() / dim as f64);
    }
    let (seq, s) = best.expect("at least one iteration");
    Ok((PlanResult::from_scored(seq, s), sigma_trace))
}

/// Refines every primitive (padded to the horizon) and keeps the best.
pub fn heuristic_plan<M: PlanningModel>(
    model: &M,
    state: &M::State,
    goal: &M::Goal,
    cfg: &PlannerConfig,
    a_prev: &Action,
) -> Result<PlanResult> {
    let inits: Vec<ActionSequence> = primitive_set(cfg.primitive_scale)
        .iter()
        .map(|p| fit_to_horizon(p, cfg.horizon, &cfg.limits))
        .collect();
    refine_and_select(model, state, goal, &inits, cfg, a_prev)
}

/// Refines each proposal and keeps the best; scores are kept per proposal.
pub fn womap_plan<M: PlanningModel>(
    model: &M,
    state: &M::State,
    goal: &M::Goal,
    proposals: &[ActionSequence],
    cfg: &PlannerConfig,
    a_prev: &Action,
) -> Result<PlanResult> {
    if proposals.is_empty() {
        return Err(Error::NoProposals);
    }
    let inits: Vec<ActionSequence> = proposals
        .iter()
        .map(|p| fit_to_horizon(p, cfg.horizon, &cfg.limits))
        .collect();
    refine_and_select(model, state, goal, &inits, cfg, a_prev)
}

fn refine_and_select<M: PlanningModel>(
    model: &M,
    state: &M::State,
    goal: &M::Goal,
    inits: &[ActionSequence],
    cfg: &PlannerConfig,
    a_prev: &Action,
) -> Result<PlanResult> {
    let results = grad_plan_batch(model, state, goal, inits, cfg, a_prev)?;
    let scores: Vec<f64> = results.iter().map(|r| r.predicted_return).collect();
    let i = argmax_first(scores.iter().copied()).ok_or(Error::NoProposals)?;
    let mut best = results.into_iter().nth(i).expect("index in range");
    best.candidate_scores = scores;
    Ok(best)
}
