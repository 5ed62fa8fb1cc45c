//! Latent world model: observation encoder, Gaussian dynamics predictor and
//! language-conditioned reward predictor.

mod train;
mod vocab;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamHyper, Bound, Checkpoint, Graph, NodeId, OptimState, ParamStore, Tensor, LOG_SIGMA_MIN};
use crate::datagen::TrainingSequence;
use crate::error::{Error, Result};
use crate::scene::{Action, ActionLimits, CameraModel, Observation};

pub use train::{evaluate, train, EpochLog, ModelMetrics};
pub use vocab::{cosine_similarity, Vocabulary};

/// Span of the squashed log standard deviation.
const LOG_SIGMA_SPAN: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    /// Seeded Gaussian random projection, never updated.
    Frozen,
    /// Two-layer perceptron trained jointly.
    Trainable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub encoder: EncoderMode,
    pub d_z: usize,
    pub d_e: usize,
    pub n_classes: usize,
    pub enc_hidden: usize,
    pub dyn_hidden: usize,
    pub rew_hidden: usize,
    /// Adds the elementwise product of the two reward-head embeddings to
    /// the concatenated input.
    pub reward_product: bool,
    pub lr: f64,
    pub start_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub horizon: usize,
    pub w_dyn: f64,
    pub w_rew: f64,
    /// Weight of the reward loss evaluated on rolled-out latents.
    pub w_rew_rollout: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            encoder: EncoderMode::Frozen,
            d_z: 64,
            d_e: 32,
            n_classes: 8,
            enc_hidden: 128,
            dyn_hidden: 128,
            rew_hidden: 64,
            reward_product: true,
            lr: 5e-4,
            start_lr: 1e-3,
            warmup_epochs: 2,
            weight_decay: 4e-2,
            batch_size: 25,
            epochs: 100,
            horizon: 4,
            w_dyn: 1.0,
            w_rew: 1.0,
            w_rew_rollout: 1.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.d_z,
            self.d_e,
            self.n_classes,
            self.enc_hidden,
            self.dyn_hidden,
            self.rew_hidden,
            self.batch_size,
            self.horizon,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidParams(
                "model sizes, batch size and horizon must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.start_lr > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::InvalidParams("learning rates must be positive".into()));
        }
        if !(self.w_dyn >= 0.0 && self.w_rew >= 0.0 && self.w_rew_rollout >= 0.0) {
            return Err(Error::InvalidParams("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamHyper::default()
        }
    }
}

/// Flattened scan: normalized depths followed by a one-hot class block per ray.
pub fn scan_features(obs: &Observation, cam: &CameraModel, n_classes: usize) -> Result<Vec<f64>> {
    if obs.depths.len() != cam.n_rays || obs.classes.len() != cam.n_rays {
        return Err(Error::DimMismatch {
            expected: cam.n_rays,
            got: obs.depths.len(),
        });
    }
    let mut f = vec![0.0; cam.n_rays * (1 + n_classes)];
    for (i, d) in obs.depths.iter().enumerate() {
        f[i] = d / cam.max_range;
    }
    for (i, c) in obs.classes.iter().enumerate() {
        if let Some(c) = c {
            let c = *c as usize;
            if c >= n_classes {
                return Err(Error::DimMismatch {
                    expected: n_classes,
                    got: c + 1,
                });
            }
            f[cam.n_rays + i * n_classes + c] = 1.0;
        }
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub hyper: HyperParams,
    pub camera: CameraModel,
    pub limits: ActionLimits,
    pub vocab: Vocabulary,
    /// Queries whose rewards appeared in training, by target label.
    pub trained_queries: Vec<String>,
    pub params: ParamStore,
}

/// Graph handles for one forward pass of the model.
pub struct ModelGraph<'m> {
    model: &'m WorldModel,
    bound: Bound,
    log_sigma_floor: NodeId,
    inv_limits: NodeId,
}

impl WorldModel {
    pub fn new(
        hyper: HyperParams,
        camera: CameraModel,
        limits: ActionLimits,
        vocab: Vocabulary,
        seed: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        if vocab.dim() != hyper.d_e {
            return Err(Error::DimMismatch {
                expected: hyper.d_e,
                got: vocab.dim(),
            });
        }
        let h = &hyper;
        let f = camera.n_rays * (1 + h.n_classes);
        let mut shapes: Vec<(&str, usize, usize, f64)> = Vec::new();
        match h.encoder {
            EncoderMode::Frozen => shapes.push(("enc.w", f, h.d_z, 1.0)),
            EncoderMode::Trainable => {
                shapes.push(("enc.w1", f, h.enc_hidden, 1.0));
                shapes.push(("enc.b1", 1, h.enc_hidden, 0.0));
                shapes.push(("enc.w2", h.enc_hidden, h.d_z, 1.0));
                shapes.push(("enc.b2", 1, h.d_z, 0.0));
            }
        }
        let rew_in = if h.reward_product { 3 } else { 2 } * h.rew_hidden;
        shapes.extend([
            ("dyn.ez.w", h.d_z, h.d_z, 1.0),
            ("dyn.ez.b", 1, h.d_z, 0.0),
            ("dyn.ea.w", 3, h.d_z, 1.0),
            ("dyn.ea.b", 1, h.d_z, 0.0),
            ("dyn.h1.w", 2 * h.d_z, h.dyn_hidden, 1.0),
            ("dyn.h1.b", 1, h.dyn_hidden, 0.0),
            ("dyn.h2.w", h.dyn_hidden, h.dyn_hidden, 1.0),
            ("dyn.h2.b", 1, h.dyn_hidden, 0.0),
            ("dyn.out.w", h.dyn_hidden, 2 * h.d_z, 0.1),
            ("dyn.out.b", 1, 2 * h.d_z, 0.0),
            ("rew.ez.w", h.d_z, h.rew_hidden, 1.0),
            ("rew.ez.b", 1, h.rew_hidden, 0.0),
            ("rew.ee.w", h.d_e, h.rew_hidden, 1.0),
            ("rew.ee.b", 1, h.rew_hidden, 0.0),
            ("rew.h1.w", rew_in, h.rew_hidden, 1.0),
            ("rew.h1.b", 1, h.rew_hidden, 0.0),
            ("rew.h2.w", h.rew_hidden, h.rew_hidden, 1.0),
            ("rew.h2.b", 1, h.rew_hidden, 0.0),
            ("rew.out.w", h.rew_hidden, 1, 1.0),
            ("rew.out.b", 1, 1, 0.0),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, rows, cols, gain) in shapes {
            let std = gain / (rows as f64).sqrt();
            let data: Vec<f64> = if gain == 0.0 {
                vec![0.0; rows * cols]
            } else {
                (0..rows * cols)
                    .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect()
            };
            params.insert(name.to_string(), Tensor::matrix(rows, cols, data)?);
        }
        // start the log standard deviation near -1
        let d_z = h.d_z;
        let b = params.get_mut("dyn.out.b").expect("inserted above");
        for v in &mut b.data_mut()[d_z..] {
            *v = (4.0f64 / 3.0).ln();
        }
        Ok(Self {
            hyper,
            camera,
            limits,
            vocab,
            trained_queries: Vec::new(),
            params,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.camera.n_rays * (1 + self.hyper.n_classes)
    }

    pub fn d_z(&self) -> usize {
        self.hyper.d_z
    }

    /// Parameter names excluded from training.
    pub fn frozen(&self) -> &'static [&'static str] {
        match self.hyper.encoder {
            EncoderMode::Frozen => &["enc.w"],
            EncoderMode::Trainable => &[],
        }
    }

    /// Digest of the encoder parameters.
    pub fn encoder_checksum(&self) -> String {
        let mut bytes = Vec::new();
        for (name, t) in self.params.range("enc.".to_string().."enc/".to_string()) {
            bytes.extend_from_slice(name.as_bytes());
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        crate::datagen::digest(&bytes)
    }

    /// Binds parameters into `g`; tracked unless frozen or `constant`.
    pub fn bind<'m>(&'m self, g: &mut Graph, trainable: bool) -> Result<ModelGraph<'m>> {
        let bound = if trainable {
            Bound::bind(g, &self.params, self.frozen())?
        } else {
            let names: Vec<&str> = self.params.keys().map(String::as_str).collect();
            Bound::bind(g, &self.params, &names)?
        };
        let log_sigma_floor = g.constant(Tensor::row(vec![LOG_SIGMA_MIN; self.hyper.d_z]))?;
        let l = self.limits.as_array();
        let inv_limits = g.constant(Tensor::row(vec![1.0 / l[0], 1.0 / l[1], 1.0 / l[2]]))?;
        Ok(ModelGraph {
            model: self,
            bound,
            log_sigma_floor,
            inv_limits,
        })
    }

    pub fn features(&self, obs: &Observation) -> Result<Vec<f64>> {
        scan_features(obs, &self.camera, self.hyper.n_classes)
    }

    pub fn feature_matrix(&self, obs: &[&Observation]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(obs.len() * self.feature_dim());
        for o in obs {
            data.extend(self.features(o)?);
        }
        Tensor::matrix(obs.len(), self.feature_dim(), data)
    }

    pub fn encode(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.encode_batch(&[obs])?.into_data())
    }

    /// Latents for a batch of observations, one row each.
    pub fn encode_batch(&self, obs: &[&Observation]) -> Result<Tensor> {
        let x = self.feature_matrix(obs)?;
        let mut g = Graph::new();
        let m = self.bind(&mut g, false)?;
        let xi = g.constant(x)?;
        let z = m.encode(&mut g, xi)?;
        Ok(g.value(z).clone())
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.hyper.d_z {
            return Err(Error::DimMismatch {
                expected: self.hyper.d_z,
                got: z.len(),
            });
        }
        Ok(())
    }

    /// Mean and log standard deviation of the next latent.
    pub fn predict_dynamics(&self, z: &[f64], a: &Action) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_latent(z)?;
        let mut g = Graph::new();
        let m = self.bind(&mut g, false)?;
        let zi = g.constant(Tensor::row(z.to_vec()))?;
        let ai = g.constant(Tensor::row(a.to_array().to_vec()))?;
        let (mu, ls) = m.dynamics(&mut g, zi, ai)?;
        Ok((g.value(mu).data().to_vec(), g.value(ls).data().to_vec()))
    }

    pub fn embed_language(&self, query: &str) -> Result<Vec<f64>> {
        self.vocab.embed(query)
    }

    pub fn predict_reward(&self, z: &[f64], e: &[f64]) -> Result<f64> {
        self.check_latent(z)?;
        if e.len() != self.hyper.d_e {
            return Err(Error::DimMismatch {
                expected: self.hyper.d_e,
                got: e.len(),
            });
        }
        let mut g = Graph::new();
        let m = self.bind(&mut g, false)?;
        let zi = g.constant(Tensor::row(z.to_vec()))?;
        let ei = g.constant(Tensor::row(e.to_vec()))?;
        let r = m.reward(&mut g, zi, ei)?;
        Ok(g.value(r).item())
    }

    /// Recurrent negative log-likelihood of one sequence, averaged over steps.
    pub fn dynamics_loss(&self, seq: &TrainingSequence) -> Result<f64> {
        let h = seq.actions.len();
        if h == 0 || seq.observations.len() != h + 1 {
            return Err(Error::InsufficientLength { needed: h.max(1) + 1 });
        }
        let obs: Vec<&Observation> = seq.observations.iter().collect();
        let z = self.encode_batch(&obs)?;
        let mut g = Graph::new();
        let m = self.bind(&mut g, false)?;
        let mut zt = g.constant(Tensor::row(z.row_slice(0).to_vec()))?;
        let mut total = 0.0;
        for (tau, a) in seq.actions.iter().enumerate() {
            let ai = g.constant(Tensor::row(a.to_array().to_vec()))?;
            let (mu, ls) = m.dynamics(&mut g, zt, ai)?;
            let target = g.constant(Tensor::row(z.row_slice(tau + 1).to_vec()))?;
            let nll = g.gaussian_nll(target, mu, ls)?;
            total += g.value(nll).item();
            zt = mu;
        }
        Ok(total / h as f64)
    }

    /// Mean binary cross-entropy of predicted rewards against labels.
    pub fn reward_loss(&self, batch: &[(&Observation, &str, f64)]) -> Result<f64> {
        if let Some(&(_, _, r)) = batch.iter().find(|b| !(0.0..=1.0).contains(&b.2)) {
            return Err(Error::LabelOutOfRange(r));
        }
        let obs: Vec<&Observation> = batch.iter().map(|b| b.0).collect();
        let x = self.feature_matrix(&obs)?;
        let mut e = Vec::with_capacity(batch.len() * self.hyper.d_e);
        for b in batch {
            e.extend(self.embed_language(b.1)?);
        }
        let mut g = Graph::new();
        let m = self.bind(&mut g, false)?;
        let xi = g.constant(x)?;
        let z = m.encode(&mut g, xi)?;
        let ei = g.constant(Tensor::matrix(batch.len(), self.hyper.d_e, e)?)?;
        let r = m.reward(&mut g, z, ei)?;
        let y = g.constant(Tensor::matrix(batch.len(), 1, batch.iter().map(|b| b.2).collect())?)?;
        let l = g.bce(r, y)?;
        Ok(g.value(l).item())
    }

    pub fn save(&self, path: &Path, optimizer: Option<OptimState>, log: &[EpochLog]) -> Result<()> {
        let file = ModelFileRef {
            hyper: &self.hyper,
            camera: &self.camera,
            limits: &self.limits,
            vocab: &self.vocab,
            trained_queries: &self.trained_queries,
            loss_log: log,
            checkpoint: Checkpoint {
                step: optimizer.as_ref().map_or(0, |o| o.step),
                params: self.params.clone(),
                optimizer,
            },
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, ModelFile)> {
        let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let model = Self::from_file(&file)?;
        Ok((model, file))
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let reference = Self::new(file.hyper.clone(), file.camera, file.limits, file.vocab.clone(), 0)?;
        for (name, t) in &reference.params {
            let got = file
                .checkpoint
                .params
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
            if got.shape() != t.shape() || !got.is_finite() {
                return Err(Error::Format(format!("parameter {name} has the wrong shape")));
            }
        }
        Ok(Self {
            params: file.checkpoint.params.clone(),
            trained_queries: file.trained_queries.clone(),
            ..reference
        })
    }
}

/// On-disk model: configuration, vocabulary and parameter checkpoint.
#[derive(Debug, Clone, Deserialize)]
pub struct ModelFile {
    pub hyper: HyperParams,
    pub camera: CameraModel,
    pub limits: ActionLimits,
    pub vocab: Vocabulary,
    pub trained_queries: Vec<String>,
    pub loss_log: Vec<EpochLog>,
    pub checkpoint: Checkpoint,
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    hyper: &'a HyperParams,
    camera: &'a CameraModel,
    limits: &'a ActionLimits,
    vocab: &'a Vocabulary,
    trained_queries: &'a [String],
    loss_log: &'a [EpochLog],
    checkpoint: Checkpoint,
}

impl ModelGraph<'_> {
    fn p(&self, name: &str) -> NodeId {
        self.bound.id(name)
    }

    pub fn model(&self) -> &WorldModel {
        self.model
    }

    /// Rows of features to rows of latents.
    pub fn encode(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        match self.model.hyper.encoder {
            EncoderMode::Frozen => g.matmul(x, self.p("enc.w")),
            EncoderMode::Trainable => {
                let h = g.affine(x, self.p("enc.w1"), self.p("enc.b1"))?;
                let h = g.tanh(h)?;
                g.affine(h, self.p("enc.w2"), self.p("enc.b2"))
            }
        }
    }

    /// Residual Gaussian transition. `a` holds raw actions, one per row.
    pub fn dynamics(&self, g: &mut Graph, z: NodeId, a: NodeId) -> Result<(NodeId, NodeId)> {
        let d_z = self.model.hyper.d_z;
        let rows = g.value(a).dims2().0;
        let inv = if rows == 1 {
            self.inv_limits
        } else {
            g.gather_rows(self.inv_limits, &vec![0; rows])?
        };
        let an = g.mul(a, inv)?;
        let ez = g.affine(z, self.p("dyn.ez.w"), self.p("dyn.ez.b"))?;
        let ea = g.affine(an, self.p("dyn.ea.w"), self.p("dyn.ea.b"))?;
        let h = g.concat(&[ez, ea])?;
        let h = g.affine(h, self.p("dyn.h1.w"), self.p("dyn.h1.b"))?;
        let h = g.tanh(h)?;
        let h = g.affine(h, self.p("dyn.h2.w"), self.p("dyn.h2.b"))?;
        let h = g.tanh(h)?;
        let out = g.affine(h, self.p("dyn.out.w"), self.p("dyn.out.b"))?;
        let delta = g.slice_cols(out, 0, d_z)?;
        let raw = g.slice_cols(out, d_z, 2 * d_z)?;
        let mu = g.add(z, delta)?;
        let s = g.sigmoid(raw)?;
        let s = g.scale(s, LOG_SIGMA_SPAN)?;
        let log_sigma = g.add_bias(s, self.log_sigma_floor)?;
        Ok((mu, log_sigma))
    }

    /// Rows of `(latent, language embedding)` to rows of rewards in (0, 1).
    pub fn reward(&self, g: &mut Graph, z: NodeId, e: NodeId) -> Result<NodeId> {
        let ez = g.affine(z, self.p("rew.ez.w"), self.p("rew.ez.b"))?;
        let ee = g.affine(e, self.p("rew.ee.w"), self.p("rew.ee.b"))?;
        let h = if self.model.hyper.reward_product {
            let prod = g.mul(ez, ee)?;
            g.concat(&[ez, ee, prod])?
        } else {
            g.concat(&[ez, ee])?
        };
        let h = g.affine(h, self.p("rew.h1.w"), self.p("rew.h1.b"))?;
        let h = g.tanh(h)?;
        let h = g.affine(h, self.p("rew.h2.w"), self.p("rew.h2.b"))?;
        let h = g.tanh(h)?;
        let r = g.affine(h, self.p("rew.out.w"), self.p("rew.out.b"))?;
        g.sigmoid(r)
    }

    pub fn gradients(&self, grads: &crate::autodiff::Gradients) -> ParamStore {
        self.bound.gradients(grads, self.model.frozen())
    }
}

/// Query embeddings for each target label, keyed by target id.
pub fn target_embeddings(model: &WorldModel, targets: &BTreeMap<String, String>) -> Result<BTreeMap<String, Vec<f64>>> {
    targets
        .iter()
        .map(|(id, label)| Ok((id.clone(), model.embed_language(label)?)))
        .collect()
}
