//! Planning in the learned latent space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{mpc_objective, ActionSequence, PlanningModel, Scored};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::model::WorldModel;
use crate::scene::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// Propagate the predicted mean.
    Mean,
    /// Draw each next latent from the predicted Gaussian.
    Sample(u64),
}

/// Latents after each action and the predicted reward of each.
pub fn rollout_latent(
    model: &WorldModel,
    z0: &[f64],
    actions: &[Action],
    e: &[f64],
    mode: RolloutMode,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rng = match mode {
        RolloutMode::Sample(s) => Some(ChaCha8Rng::seed_from_u64(s)),
        RolloutMode::Mean => None,
    };
    let mut z = z0.to_vec();
    let mut latents = Vec::with_capacity(actions.len());
    let mut rewards = Vec::with_capacity(actions.len());
    for a in actions {
        let (mu, ls) = model.predict_dynamics(&z, a)?;
        z = match rng.as_mut() {
            Some(r) => mu
                .iter()
                .zip(&ls)
                .map(|(m, s)| {
                    let n: f64 = StandardNormal.sample(r);
                    m + s.exp() * n
                })
                .collect(),
            None => mu,
        };
        rewards.push(model.predict_reward(&z, e)?);
        latents.push(z.clone());
    }
    Ok((latents, rewards))
}

/// A trained world model viewed as a planning model over latent states and
/// query embeddings.
pub struct LatentModel<'a> {
    pub model: &'a WorldModel,
}

struct Rolled {
    g: Graph,
    actions: Vec<NodeId>,
    rewards: Vec<NodeId>,
    total: NodeId,
}

impl LatentModel<'_> {
    fn check(&self, z0: &[f64], e: &[f64], seqs: &[ActionSequence]) -> Result<usize> {
        let h = &self.model.hyper;
        if z0.len() != h.d_z {
            return Err(Error::DimMismatch {
                expected: h.d_z,
                got: z0.len(),
            });
        }
        if e.len() != h.d_e {
            return Err(Error::DimMismatch {
                expected: h.d_e,
                got: e.len(),
            });
        }
        let t = seqs.first().map_or(0, Vec::len);
        if seqs.iter().any(|s| s.len() != t) {
            return Err(Error::InvalidParams("sequences in a batch must share a length".into()));
        }
        Ok(t)
    }

    /// Builds the batched rollout. With `penalty`, the L1 smoothness term
    /// enters the scalar total and the actions are tracked.
    fn build(&self, z0: &[f64], e: &[f64], seqs: &[ActionSequence], penalty: Option<(f64, &Action)>) -> Result<Rolled> {
        let t = self.check(z0, e, seqs)?;
        let k = seqs.len();
        let mut g = Graph::new();
        let m = self.model.bind(&mut g, false)?;
        let tile = |v: &[f64]| Tensor::matrix(k, v.len(), v.repeat(k));
        let mut z = g.constant(tile(z0)?)?;
        let e = g.constant(tile(e)?)?;
        let mut prev = match penalty {
            Some((_, ap)) => Some(g.constant(tile(&ap.to_array())?)?),
            None => None,
        };
        let mut actions = Vec::with_capacity(t);
        let mut rewards = Vec::with_capacity(t);
        let mut terms = Vec::new();
        for step in 0..t {
            let data: Vec<f64> = seqs.iter().flat_map(|s| s[step].to_array()).collect();
            let a = Tensor::matrix(k, 3, data)?;
            let a = if penalty.is_some() { g.param(a)? } else { g.constant(a)? };
            let (mu, _) = m.dynamics(&mut g, z, a)?;
            let r = m.reward(&mut g, mu, e)?;
            terms.push(g.sum(r)?);
            if let (Some((gamma, _)), Some(p)) = (penalty, prev) {
                let d = g.sub(a, p)?;
                let l1 = g.l1_norm(d)?;
                terms.push(g.scale(l1, -gamma)?);
                prev = Some(a);
            }
            actions.push(a);
            rewards.push(r);
            z = mu;
        }
        let mut total = match terms.first() {
            Some(&t0) => t0,
            None => g.constant(Tensor::scalar(0.0))?,
        };
        for &term in terms.iter().skip(1) {
            total = g.add(total, term)?;
        }
        Ok(Rolled {
            g,
            actions,
            rewards,
            total,
        })
    }

    fn per_sequence_rewards(r: &Rolled, k: usize) -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| r.rewards.iter().map(|&n| r.g.value(n).data()[i]).collect())
            .collect()
    }
}

impl PlanningModel for LatentModel<'_> {
    type State = Vec<f64>;
    type Goal = Vec<f64>;

    fn rollout_rewards(&self, z0: &Vec<f64>, e: &Vec<f64>, seqs: &[ActionSequence]) -> Result<Vec<Vec<f64>>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let r = self.build(z0, e, seqs, None)?;
        Ok(Self::per_sequence_rewards(&r, seqs.len()))
    }

    fn reward_gradients(
        &self,
        z0: &Vec<f64>,
        e: &Vec<f64>,
        seqs: &[ActionSequence],
    ) -> Result<Vec<(Vec<f64>, Vec<[f64; 3]>)>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.objective_grad_batch(z0, e, seqs, 0.0, &Action::ZERO)?;
        Ok(out.into_iter().map(|(s, g)| (s.rewards, g)).collect())
    }

    fn objective_grad_batch(
        &self,
        z0: &Vec<f64>,
        e: &Vec<f64>,
        seqs: &[ActionSequence],
        gamma: f64,
        a_prev: &Action,
    ) -> Result<Vec<(Scored, Vec<[f64; 3]>)>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let k = seqs.len();
        let r = self.build(z0, e, seqs, Some((gamma, a_prev)))?;
        let grads = r.g.backward(r.total)?;
        let per_action: Vec<Tensor> = r.actions.iter().map(|&a| grads.wrt(a)).collect();
        let rewards = Self::per_sequence_rewards(&r, k);
        Ok(rewards
            .into_iter()
            .zip(seqs)
            .enumerate()
            .map(|(i, (rw, seq))| {
                let grad = per_action
                    .iter()
                    .map(|t| {
                        let row = t.row_slice(i);
                        [row[0], row[1], row[2]]
                    })
                    .collect();
                let objective = mpc_objective(&rw, seq, gamma, a_prev);
                (Scored { objective, rewards: rw }, grad)
            })
            .collect())
    }
}
