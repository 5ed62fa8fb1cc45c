//! Planning against the true scene and ground-truth reward.

use super::{ActionSequence, PlanningModel};
use crate::error::Result;
use crate::reward::{ground_truth_reward, RewardParams};
use crate::scene::{Action, ActionLimits, CameraModel, Pose, Scene};

/// Exact pose composition with the ground-truth reward; colliding poses
/// score zero. Gradients are central differences.
pub struct OracleModel<'a> {
    pub scene: &'a Scene,
    pub camera: CameraModel,
    pub params: RewardParams,
    /// Difference step for each action component.
    pub fd_step: [f64; 3],
}

impl<'a> OracleModel<'a> {
    /// Difference steps are a tenth of each action limit, wide enough to
    /// bridge the sampling steps in the visibility estimate.
    pub fn new(scene: &'a Scene, camera: CameraModel, limits: &ActionLimits) -> Self {
        let l = limits.as_array();
        Self {
            scene,
            camera,
            params: RewardParams::default(),
            fd_step: [0.1 * l[0], 0.1 * l[1], 0.1 * l[2]],
        }
    }

    fn rewards(&self, start: &Pose, target: &str, seq: &[Action]) -> Result<Vec<f64>> {
        let mut p = *start;
        let mut out = Vec::with_capacity(seq.len());
        for a in seq {
            p = p.compose(a);
            let r = if self.scene.is_collision_free(&p) {
                ground_truth_reward(self.scene, &p, &self.camera, target, &self.params)?
            } else {
                0.0
            };
            out.push(r);
        }
        Ok(out)
    }
}

impl PlanningModel for OracleModel<'_> {
    type State = Pose;
    type Goal = String;

    fn rollout_rewards(&self, start: &Pose, target: &String, seqs: &[ActionSequence]) -> Result<Vec<Vec<f64>>> {
        seqs.iter().map(|s| self.rewards(start, target, s)).collect()
    }

    fn reward_gradients(
        &self,
        start: &Pose,
        target: &String,
        seqs: &[ActionSequence],
    ) -> Result<Vec<(Vec<f64>, Vec<[f64; 3]>)>> {
        seqs.iter()
            .map(|seq| {
                let rewards = self.rewards(start, target, seq)?;
                let mut grad = vec![[0.0; 3]; seq.len()];
                let mut work = seq.clone();
                for t in 0..seq.len() {
                    for i in 0..3 {
                        let h = self.fd_step[i];
                        let base = seq[t].to_array();
                        let mut hi = base;
                        hi[i] += h;
                        let mut lo = base;
                        lo[i] -= h;
                        work[t] = Action::from_array(hi);
                        let up: f64 = self.rewards(start, target, &work)?.iter().sum();
                        work[t] = Action::from_array(lo);
                        let down: f64 = self.rewards(start, target, &work)?.iter().sum();
                        work[t] = seq[t];
                        grad[t][i] = (up - down) / (2.0 * h);
                    }
                }
                Ok((rewards, grad))
            })
            .collect()
    }
}
