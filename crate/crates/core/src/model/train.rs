use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{target_embeddings, EncoderMode, ModelGraph, WorldModel};
use crate::autodiff::{warmup_lr, Graph, NodeId, OptimState, Tensor, LOG_SIGMA_MIN};
use crate::datagen::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub dyn_loss: f64,
    pub rew_loss: f64,
    pub rew_rollout_loss: f64,
    pub total: f64,
}

/// Held-out quality of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub windows: usize,
    pub dyn_nll: f64,
    /// Identity rollout scored with the log-sigma floor.
    pub identity_nll_floor: f64,
    /// Identity rollout scored with per-dimension fitted sigma.
    pub identity_nll_fitted: f64,
    pub reward_bce: f64,
    pub reward_mae: f64,
    pub rollout_mse: Vec<f64>,
    pub identity_mse: Vec<f64>,
}

/// Per-dataset tensors reused across batches.
struct Prepared {
    features: Vec<Vec<f64>>,
    actions: Vec<[f64; 3]>,
    /// (embedding, label) per target, per record.
    labels: Vec<Vec<(usize, f64)>>,
}

struct Corpus {
    sets: Vec<Prepared>,
    embeddings: Vec<Vec<f64>>,
    windows: Vec<(usize, usize)>,
    records: usize,
}

fn prepare(model: &WorldModel, datasets: &[Dataset]) -> Result<Corpus> {
    let h = model.hyper.horizon;
    let mut embeddings: Vec<Vec<f64>> = Vec::new();
    let mut emb_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut sets = Vec::new();
    let mut windows = Vec::new();
    let mut records = 0;
    for (di, ds) in datasets.iter().enumerate() {
        if ds.header.camera != model.camera {
            return Err(Error::InvalidParams(
                "dataset camera differs from the model camera".into(),
            ));
        }
        let emb = target_embeddings(model, &ds.header.targets)?;
        let mut by_id = BTreeMap::new();
        for (id, label) in &ds.header.targets {
            let idx = *emb_index.entry(label.clone()).or_insert_with(|| {
                embeddings.push(emb[id].clone());
                embeddings.len() - 1
            });
            by_id.insert(id.clone(), idx);
        }
        let mut features = Vec::with_capacity(ds.len());
        let mut labels = Vec::with_capacity(ds.len());
        let mut actions = Vec::with_capacity(ds.len());
        for (i, r) in ds.records.iter().enumerate() {
            features.push(model.features(&r.observation)?);
            labels.push(r.rewards.iter().map(|(id, &v)| (by_id[id], v)).collect());
            let next = ds.records.get(i + 1).filter(|n| n.trajectory_id == r.trajectory_id);
            actions.push(next.map_or([0.0; 3], |n| r.pose.relative_action(&n.pose).to_array()));
        }
        windows.extend(ds.windows(h).into_iter().map(|s| (di, s)));
        records += ds.len();
        sets.push(Prepared {
            features,
            actions,
            labels,
        });
    }
    Ok(Corpus {
        sets,
        embeddings,
        windows,
        records,
    })
}

struct BatchOut {
    dyn_loss: NodeId,
    rew_loss: NodeId,
    rew_rollout: NodeId,
    z_all: NodeId,
    mus: Vec<NodeId>,
}

fn build_batch(g: &mut Graph, m: &ModelGraph, corpus: &Corpus, batch: &[(usize, usize)]) -> Result<BatchOut> {
    let model = m.model();
    let hy = &model.hyper;
    let h = hy.horizon;
    let b = batch.len();
    let fdim = model.feature_dim();
    let mut x = Vec::with_capacity(b * (h + 1) * fdim);
    for tau in 0..=h {
        for &(d, s) in batch {
            x.extend_from_slice(&corpus.sets[d].features[s + tau]);
        }
    }
    let xi = g.constant(Tensor::matrix(b * (h + 1), fdim, x)?)?;
    let z_all = m.encode(g, xi)?;
    let targets = if model.hyper.encoder == EncoderMode::Trainable {
        let v = g.value(z_all).clone();
        g.constant(v)?
    } else {
        z_all
    };

    let rows = |tau: usize| (tau * b..(tau + 1) * b).collect::<Vec<_>>();
    let mut zt = g.gather_rows(z_all, &rows(0))?;
    let mut nll_sum: Option<NodeId> = None;
    let mut mus = Vec::with_capacity(h);
    for tau in 0..h {
        let a: Vec<f64> = batch
            .iter()
            .flat_map(|&(d, s)| corpus.sets[d].actions[s + tau])
            .collect();
        let ai = g.constant(Tensor::matrix(b, 3, a)?)?;
        let (mu, ls) = m.dynamics(g, zt, ai)?;
        let tgt = g.gather_rows(targets, &rows(tau + 1))?;
        let nll = g.gaussian_nll(tgt, mu, ls)?;
        nll_sum = Some(match nll_sum {
            None => nll,
            Some(p) => g.add(p, nll)?,
        });
        mus.push(mu);
        zt = mu;
    }
    let dyn_loss = g.scale(nll_sum.expect("horizon >= 1"), 1.0 / h as f64)?;

    // reward head on encoded latents of every observation
    let mut zrows = Vec::new();
    let mut emb = Vec::new();
    let mut lab = Vec::new();
    for tau in 0..=h {
        for (bi, &(d, s)) in batch.iter().enumerate() {
            for &(e, v) in &corpus.sets[d].labels[s + tau] {
                zrows.push(tau * b + bi);
                emb.extend_from_slice(&corpus.embeddings[e]);
                lab.push(v);
            }
        }
    }
    let n = zrows.len();
    let zr = g.gather_rows(z_all, &zrows)?;
    let ei = g.constant(Tensor::matrix(n, hy.d_e, emb)?)?;
    let pred = m.reward(g, zr, ei)?;
    let label = g.constant(Tensor::matrix(n, 1, lab)?)?;
    let rew_loss = g.bce(pred, label)?;

    // reward head on rolled-out latents
    let mut roll_sum: Option<NodeId> = None;
    for (tau, &mu) in mus.iter().enumerate() {
        let mut idx = Vec::new();
        let mut emb = Vec::new();
        let mut lab = Vec::new();
        for (bi, &(d, s)) in batch.iter().enumerate() {
            for &(e, v) in &corpus.sets[d].labels[s + tau + 1] {
                idx.push(bi);
                emb.extend_from_slice(&corpus.embeddings[e]);
                lab.push(v);
            }
        }
        let zr = g.gather_rows(mu, &idx)?;
        let ei = g.constant(Tensor::matrix(idx.len(), hy.d_e, emb)?)?;
        let r = m.reward(g, zr, ei)?;
        let y = g.constant(Tensor::matrix(idx.len(), 1, lab)?)?;
        let l = g.bce(r, y)?;
        roll_sum = Some(match roll_sum {
            None => l,
            Some(p) => g.add(p, l)?,
        });
    }
    let rew_rollout = g.scale(roll_sum.expect("horizon >= 1"), 1.0 / h as f64)?;
    Ok(BatchOut {
        dyn_loss,
        rew_loss,
        rew_rollout,
        z_all,
        mus,
    })
}

/// Minimizes the weighted dynamics and reward losses with warmup AdamW.
/// Returns the per-epoch log and the final optimizer state.
pub fn train(model: &mut WorldModel, datasets: &[Dataset], seed: u64) -> Result<(Vec<EpochLog>, OptimState)> {
    let hy = model.hyper.clone();
    hy.validate()?;
    let corpus = prepare(model, datasets)?;
    if corpus.windows.is_empty() {
        return Err(Error::InsufficientLength { needed: hy.horizon + 1 });
    }
    let mut queries: Vec<String> = datasets
        .iter()
        .flat_map(|d| d.header.targets.values().cloned())
        .collect();
    queries.sort();
    queries.dedup();
    model.trained_queries = queries;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut optim = OptimState::new(hy.adam());
    let per_epoch = (corpus.records / (hy.horizon + 1)).clamp(1, corpus.windows.len());
    let mut log = Vec::with_capacity(hy.epochs);
    let mut order = corpus.windows.clone();
    for epoch in 0..hy.epochs {
        let lr = warmup_lr(epoch, hy.warmup_epochs, hy.start_lr, hy.lr);
        order.shuffle(&mut rng);
        let (mut sd, mut sr, mut srr, mut st, mut nb) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for batch in order[..per_epoch].chunks(hy.batch_size) {
            let mut g = Graph::new();
            let m = model.bind(&mut g, true)?;
            let out = build_batch(&mut g, &m, &corpus, batch)?;
            let d = g.scale(out.dyn_loss, hy.w_dyn)?;
            let r = g.scale(out.rew_loss, hy.w_rew)?;
            let rr = g.scale(out.rew_rollout, hy.w_rew_rollout)?;
            let t = g.add(d, r)?;
            let total = g.add(t, rr)?;
            let named = m.gradients(&g.backward(total)?);
            drop(m);
            let frozen: Vec<_> = model
                .frozen()
                .iter()
                .filter_map(|n| model.params.remove_entry(*n))
                .collect();
            optim.step_with_lr(&mut model.params, &named, lr)?;
            model.params.extend(frozen);
            sd += g.value(out.dyn_loss).item();
            sr += g.value(out.rew_loss).item();
            srr += g.value(out.rew_rollout).item();
            st += g.value(total).item();
            nb += 1;
        }
        let nb = nb as f64;
        log.push(EpochLog {
            epoch,
            lr,
            dyn_loss: sd / nb,
            rew_loss: sr / nb,
            rew_rollout_loss: srr / nb,
            total: st / nb,
        });
    }
    Ok((log, optim))
}

/// Scores a model on every window of the given datasets.
pub fn evaluate(model: &WorldModel, datasets: &[Dataset]) -> Result<ModelMetrics> {
    let h = model.hyper.horizon;
    let corpus = prepare(model, datasets)?;
    if corpus.windows.is_empty() {
        return Err(Error::InsufficientLength { needed: h + 1 });
    }
    let d_z = model.hyper.d_z;
    let mut dyn_sum = 0.0;
    let mut rollout_mse = vec![0.0; h];
    let mut identity_mse = vec![0.0; h];
    let mut id_sq = vec![0.0; d_z];
    let mut deltas: Vec<Vec<f64>> = Vec::new();
    let n_win = corpus.windows.len();
    for batch in corpus.windows.chunks(200) {
        let mut g = Graph::new();
        let m = model.bind(&mut g, false)?;
        let out = build_batch(&mut g, &m, &corpus, batch)?;
        let b = batch.len();
        dyn_sum += g.value(out.dyn_loss).item() * b as f64;
        let z = g.value(out.z_all);
        for (tau, &mu) in out.mus.iter().enumerate() {
            let mu = g.value(mu);
            for bi in 0..b {
                let target = z.row_slice((tau + 1) * b + bi);
                let start = z.row_slice(bi);
                let m = mu.row_slice(bi);
                rollout_mse[tau] += target.iter().zip(m).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / d_z as f64;
                let delta: Vec<f64> = target.iter().zip(start).map(|(t, s)| t - s).collect();
                identity_mse[tau] += delta.iter().map(|v| v * v).sum::<f64>() / d_z as f64;
                for (acc, v) in id_sq.iter_mut().zip(&delta) {
                    *acc += v * v;
                }
                deltas.push(delta);
            }
        }
    }
    let n_delta = deltas.len() as f64;
    let fitted_log_sigma: Vec<f64> = id_sq
        .iter()
        .map(|s| (0.5 * (s / n_delta).max(1e-300).ln()).clamp(LOG_SIGMA_MIN, super::LOG_SIGMA_SPAN + LOG_SIGMA_MIN))
        .collect();
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let nll = |delta: &[f64], ls: &dyn Fn(usize) -> f64| -> f64 {
        delta
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let s = ls(i);
                s + half_ln_2pi + d * d / (2.0 * (2.0 * s).exp())
            })
            .sum()
    };
    let floor: f64 = deltas.iter().map(|d| nll(d, &|_| LOG_SIGMA_MIN)).sum::<f64>() / n_delta;
    let fitted: f64 = deltas.iter().map(|d| nll(d, &|i| fitted_log_sigma[i])).sum::<f64>() / n_delta;

    // reward quality over every record and target
    let (mut bce, mut mae, mut n) = (0.0, 0.0, 0usize);
    for (di, set) in corpus.sets.iter().enumerate() {
        let idx: Vec<usize> = (0..set.features.len()).collect();
        for chunk in idx.chunks(500) {
            let obs: Vec<&crate::scene::Observation> =
                chunk.iter().map(|&i| &datasets[di].records[i].observation).collect();
            let z = model.encode_batch(&obs)?;
            let mut zrows = Vec::new();
            let mut emb = Vec::new();
            let mut lab = Vec::new();
            for (k, &i) in chunk.iter().enumerate() {
                for &(e, v) in &set.labels[i] {
                    zrows.extend_from_slice(z.row_slice(k));
                    emb.extend_from_slice(&corpus.embeddings[e]);
                    lab.push(v);
                }
            }
            let rows = lab.len();
            let mut g = Graph::new();
            let m = model.bind(&mut g, false)?;
            let zi = g.constant(Tensor::matrix(rows, d_z, zrows)?)?;
            let ei = g.constant(Tensor::matrix(rows, model.hyper.d_e, emb)?)?;
            let r = m.reward(&mut g, zi, ei)?;
            let y = g.constant(Tensor::matrix(rows, 1, lab.clone())?)?;
            let l = g.bce(r, y)?;
            bce += g.value(l).item() * rows as f64;
            mae += g
                .value(r)
                .data()
                .iter()
                .zip(&lab)
                .map(|(p, y)| (p - y).abs())
                .sum::<f64>();
            n += rows;
        }
    }
    let per_tau = n_win as f64;
    Ok(ModelMetrics {
        windows: n_win,
        dyn_nll: dyn_sum / n_win as f64,
        identity_nll_floor: floor,
        identity_nll_fitted: fitted,
        reward_bce: bce / n as f64,
        reward_mae: mae / n as f64,
        rollout_mse: rollout_mse.iter().map(|v| v / per_tau).collect(),
        identity_mse: identity_mse.iter().map(|v| v / per_tau).collect(),
    })
}
