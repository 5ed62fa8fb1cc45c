//! Sources of coarse action proposals.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fit_to_horizon, primitive_set, ActionSequence, PlanContext};
use crate::error::{Error, Result};
use crate::model::{cosine_similarity, Vocabulary};
use crate::reward::{ground_truth_reward, RewardParams};
use crate::scene::{Action, ActionLimits, ClassId};

/// Ranked coarse action sequences for the current query and observation.
pub trait ProposalSource {
    /// At most `k` proposals, best first, each within `limits`.
    fn propose(&mut self, ctx: &PlanContext, k: usize, limits: &ActionLimits) -> Result<Vec<ActionSequence>>;
}

/// Class names by class id.
pub const CLASS_NAMES: [&str; 8] = ["wall", "box", "shelf", "banana", "mug", "scissors", "bowl", "apple"];

/// Scripted multiple-choice answers over the primitive options, read off the
/// semantic scan.
pub struct PrimitiveProposer {
    pub vocab: Vocabulary,
    pub scale: f64,
    /// Occluders nearer than this, straight ahead, trigger a look-around.
    pub occluder_range: f64,
}

impl PrimitiveProposer {
    pub fn new(vocab: Vocabulary, scale: f64) -> Self {
        Self {
            vocab,
            scale,
            occluder_range: 0.8,
        }
    }

    /// The target class the query most resembles.
    pub fn query_class(&self, query: &str) -> Result<ClassId> {
        let q = self.vocab.embed(query)?;
        let mut best: Option<(ClassId, f64)> = None;
        for (c, name) in CLASS_NAMES.iter().enumerate().skip(3) {
            let s = cosine_similarity(&q, &self.vocab.embed(name)?)?;
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((c as ClassId, s));
            }
        }
        Ok(best.expect("class list is not empty").0)
    }

    /// Option letters in rank order.
    pub fn choose(&self, ctx: &PlanContext) -> Result<[usize; 3]> {
        const A: usize = 0;
        const D: usize = 3;
        const E: usize = 4;
        const F: usize = 5;
        const G: usize = 6;
        const H: usize = 7;
        const I: usize = 8;
        let class = self.query_class(ctx.query)?;
        let obs = ctx.observation;
        let n = obs.len();
        let hits: Vec<usize> = (0..n).filter(|&i| obs.classes[i] == Some(class)).collect();
        let centre = (n as f64 - 1.0) / 2.0;
        let band = n as f64 / 8.0;
        if !hits.is_empty() {
            // ray indices grow counter-clockwise, so larger means further left
            let mean = hits.iter().sum::<usize>() as f64 / hits.len() as f64;
            return Ok(if mean > centre + band {
                [F, A, D]
            } else if mean < centre - band {
                [G, A, E]
            } else {
                [A, F, G]
            });
        }
        let blocked = (0..n)
            .filter(|&i| (i as f64 - centre).abs() <= band)
            .any(|i| matches!(obs.classes[i], Some(c) if c != 0) && obs.depths[i] < self.occluder_range);
        Ok(if blocked { [H, I, D] } else { [D, E, A] })
    }
}

impl ProposalSource for PrimitiveProposer {
    fn propose(&mut self, ctx: &PlanContext, k: usize, limits: &ActionLimits) -> Result<Vec<ActionSequence>> {
        let prims = primitive_set(self.scale);
        Ok(self
            .choose(ctx)?
            .iter()
            .take(k)
            .map(|&i| prims[i].iter().map(|a| limits.clamp(a)).collect())
            .collect())
    }
}

/// One entry of an externally produced proposal list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileProposal {
    pub rank: usize,
    pub actions: Vec<[f64; 3]>,
    #[serde(default)]
    pub confidence: Option<f64>,
}

/// Replays a ranked list read from JSON at every step.
pub struct FileProposer {
    pub proposals: Vec<FileProposal>,
}

impl FileProposer {
    pub fn from_json(s: &str) -> Result<Self> {
        let mut proposals: Vec<FileProposal> = serde_json::from_str(s)?;
        if proposals.is_empty() {
            return Err(Error::NoProposals);
        }
        if proposals.iter().any(|p| p.actions.is_empty()) {
            return Err(Error::Format("proposal with no actions".into()));
        }
        proposals.sort_by_key(|p| p.rank);
        Ok(Self { proposals })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl ProposalSource for FileProposer {
    fn propose(&mut self, _ctx: &PlanContext, k: usize, limits: &ActionLimits) -> Result<Vec<ActionSequence>> {
        Ok(self
            .proposals
            .iter()
            .take(k)
            .map(|p| {
                p.actions
                    .iter()
                    .map(|a| limits.clamp(&Action::from_array(*a)))
                    .collect()
            })
            .collect())
    }
}

/// Ranks the primitives by the true reward at the end of each, for tests.
pub struct OracleProposer {
    pub scale: f64,
    pub horizon: usize,
}

impl ProposalSource for OracleProposer {
    fn propose(&mut self, ctx: &PlanContext, k: usize, limits: &ActionLimits) -> Result<Vec<ActionSequence>> {
        let mut scored = Vec::new();
        for (i, p) in primitive_set(self.scale).into_iter().enumerate() {
            let seq = fit_to_horizon(&p, self.horizon, limits);
            let mut pose = *ctx.pose;
            let mut free = true;
            for a in &seq {
                pose = pose.compose(a);
                free &= ctx.scene.is_collision_free(&pose);
            }
            let r = if free {
                ground_truth_reward(ctx.scene, &pose, ctx.camera, ctx.target_id, &RewardParams::default())?
            } else {
                -1.0
            };
            scored.push((i, r, seq));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored.into_iter().take(k).map(|(_, _, s)| s).collect())
    }
}
