//! Flow-matching training with plain minibatch SGD.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::flowmodel::model::{LatentField, ToyFlowModel};
use crate::flowmodel::ops::interpolate_values;
use crate::lattice::{DenseLatentGrid, SparseLatent};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
pub enum TrainLatent {
    Dense(DenseLatentGrid),
    Sparse(SparseLatent),
}

impl TrainLatent {
    pub fn channels(&self) -> usize {
        match self {
            TrainLatent::Dense(g) => g.dims().c,
            TrainLatent::Sparse(s) => s.dims().c,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TrainLatent::Dense(g) => g.dims().voxels(),
            TrainLatent::Sparse(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub latent: TrainLatent,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Voxels per (sample, t, noise) draw; the whole sample is used when it
    /// has fewer.
    pub batch: usize,
    /// Independent draws averaged into each update. Mixing several flow
    /// times in one step keeps the small-t draws from dominating a step.
    pub draws: usize,
}

/// Sorted indices of every point that the patches around `batch` read.
fn neighbourhood<L: LatentField>(s: &L, radius: usize, batch: &[usize]) -> Vec<usize> {
    let r = radius as i64;
    let mut out = Vec::with_capacity(batch.len() * (2 * radius + 1).pow(3));
    for &i in batch {
        let p = s.point(i);
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if let Some(j) = s.point_index([p[0] + dz, p[1] + dy, p[2] + dx]) {
                        out.push(j);
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Loss and gradient with noise known only on `support` (sorted point
/// indices covering every patch the batch reads).
fn loss_on_support<L: LatentField>(
    model: &ToyFlowModel,
    s: &L,
    label: usize,
    t: f64,
    support: &[usize],
    eps: &[f64],
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let c = model.config().channels;
    if s.channels() != c {
        return Err(Error::ShapeMismatch(format!(
            "latent has {} channels, model expects {c}",
            s.channels()
        )));
    }
    let cond = model.condition(label)?;
    let sv = s.values();
    let mut st = vec![0.0; support.len() * c];
    for (k, &j) in support.iter().enumerate() {
        interpolate_values(
            &sv[j * c..(j + 1) * c],
            &eps[k * c..(k + 1) * c],
            t,
            &mut st[k * c..(k + 1) * c],
        );
    }
    let keys = support.iter().map(|&j| s.key(j)).collect();
    let s_t = SparseLatent::from_sorted(s.grid(), keys, st);
    let frame = s.frame();
    let ctx = model.context(t, &cond);
    let mut sc = model.scratch();
    let mut grad = vec![0.0; model.params().len()];
    let mut v = vec![0.0; c];
    let mut g = vec![0.0; c];
    let norm = 1.0 / (batch.len() * c) as f64;
    let mut loss = 0.0;
    for &i in batch {
        let k = support
            .binary_search(&i)
            .map_err(|_| Error::ShapeMismatch("batch point outside support".into()))?;
        model.gather(&s_t, s.point(i), &frame, &mut sc);
        model.forward(&ctx, &mut sc, &mut v);
        for ch in 0..c {
            let target = eps[k * c + ch] - sv[i * c + ch];
            let err = v[ch] - target;
            loss += err * err * norm;
            g[ch] = 2.0 * err * norm;
        }
        model.backward(&ctx, &mut sc, &g, Some(&mut grad), None);
    }
    Ok((loss, grad))
}

/// Loss and parameter gradient of `mean ||v(s_t) - (eps - s)||^2` over the
/// voxels `batch` (indices into the latent's point list), with `eps` given
/// for every point.
pub fn batch_loss_and_grad<L: LatentField>(
    model: &ToyFlowModel,
    s: &L,
    label: usize,
    t: f64,
    eps: &[f64],
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let c = model.config().channels;
    if eps.len() != s.values().len() {
        return Err(Error::ShapeMismatch(
            "noise and latent lengths differ".into(),
        ));
    }
    let support = neighbourhood(s, model.config().patch_radius, batch);
    let local: Vec<f64> = support
        .iter()
        .flat_map(|&j| eps[j * c..(j + 1) * c].iter().copied())
        .collect();
    loss_on_support(model, s, label, t, &support, &local, batch)
}

/// One training draw: noise is drawn only where the batch's patches read.
fn draw_step<L: LatentField>(
    model: &ToyFlowModel,
    s: &L,
    label: usize,
    rng: &mut Rng,
    batch_size: usize,
) -> Result<(f64, Vec<f64>)> {
    let t: f64 = rng.random();
    let batch = draw_batch(rng, s.point_count(), batch_size);
    let support = neighbourhood(s, model.config().patch_radius, &batch);
    let eps = rng::normal_vec(rng, support.len() * s.channels());
    loss_on_support(model, s, label, t, &support, &eps, &batch)
}

fn draw_batch(rng: &mut Rng, n: usize, batch: usize) -> Vec<usize> {
    if n <= batch {
        (0..n).collect()
    } else {
        (0..batch).map(|_| rng.random_range(0..n)).collect()
    }
}

fn sample_step(
    model: &ToyFlowModel,
    sample: &TrainSample,
    t: f64,
    eps: &[f64],
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    match &sample.latent {
        TrainLatent::Dense(g) => batch_loss_and_grad(model, g, sample.label, t, eps, batch),
        TrainLatent::Sparse(s) => batch_loss_and_grad(model, s, sample.label, t, eps, batch),
    }
}

fn values(sample: &TrainSample) -> usize {
    sample.latent.len() * sample.latent.channels()
}

/// Trains a copy of `model`; returns it with the per-step minibatch loss
/// (measured before each update).
pub fn train_flow_matching(
    model: &ToyFlowModel,
    data: &[TrainSample],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(ToyFlowModel, Vec<f64>)> {
    if data.is_empty() || data.iter().all(|s| s.latent.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch == 0 || cfg.draws == 0 {
        return Err(Error::InvalidArgument(
            "batch and draws must be >= 1".into(),
        ));
    }
    if !(cfg.lr >= 0.0) || !cfg.lr.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be >= 0, got {}",
            cfg.lr
        )));
    }
    let mut model = model.clone();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut loss = 0.0;
        let mut grad = vec![0.0; model.params().len()];
        for _ in 0..cfg.draws {
            let sample = loop {
                let s = &data[rng.random_range(0..data.len())];
                if !s.latent.is_empty() {
                    break s;
                }
            };
            let (l, g) = match &sample.latent {
                TrainLatent::Dense(d) => draw_step(&model, d, sample.label, rng, cfg.batch)?,
                TrainLatent::Sparse(sp) => draw_step(&model, sp, sample.label, rng, cfg.batch)?,
            };
            loss += l / cfg.draws as f64;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b / cfg.draws as f64;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "training loss became non-finite at step {step}"
            )));
        }
        losses.push(loss);
        if cfg.lr > 0.0 {
            for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                *p -= cfg.lr * g;
            }
        }
        if step % 500 == 0 {
            log::debug!("train step {step} loss {loss:.5}");
        }
    }
    Ok((model, losses))
}

/// Mean flow-matching loss over `draws` fixed (sample, t, noise) draws, each
/// evaluated on every voxel of the sample.
pub fn validation_loss(
    model: &ToyFlowModel,
    data: &[TrainSample],
    draws: usize,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut r = rng::stream_rng(seed, rng::stream::VALIDATION);
    let mut total = 0.0;
    let mut count = 0usize;
    for d in 0..draws {
        let sample = &data[d % data.len()];
        if sample.latent.is_empty() {
            continue;
        }
        let t: f64 = r.random();
        let eps = rng::normal_vec(&mut r, values(sample));
        let all: Vec<usize> = (0..sample.latent.len()).collect();
        let (loss, _) = sample_step(model, sample, t, &eps, &all)?;
        total += loss;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(total / count as f64)
}
