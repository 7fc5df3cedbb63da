//! Small per-voxel velocity network.
//!
//! Each output voxel sees a cube of `(2r + 1)^3` neighbouring latent vectors,
//! its position normalized to the evaluation frame, the flow time and a label
//! embedding. One softsign hidden layer predicts a clean latent `x0`, and the
//! velocity is `(skip * s_center - x0) / max(t, time_floor)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flowmodel::ops::Latent;
use crate::lattice::{DenseLatentGrid, FeatureLookup, GridDims, Pos, SparseLatent};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub hidden: usize,
    pub patch_radius: usize,
    pub embed_dim: usize,
    pub num_labels: usize,
    pub time_floor: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 || self.num_labels == 0 {
            return Err(Error::InvalidArgument(
                "channels, hidden and num_labels must be >= 1".into(),
            ));
        }
        if self.patch_radius > 4 {
            return Err(Error::InvalidArgument(format!(
                "patch radius {} is larger than supported (4)",
                self.patch_radius
            )));
        }
        if !(self.time_floor > 0.0 && self.time_floor <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "time_floor must be in (0, 1], got {}",
                self.time_floor
            )));
        }
        Ok(())
    }

    pub fn patch_side(&self) -> usize {
        2 * self.patch_radius + 1
    }

    pub fn patch_len(&self) -> usize {
        self.patch_side().pow(3) * self.channels
    }

    pub fn input_len(&self) -> usize {
        self.patch_len() + 3 + 1 + self.embed_dim
    }

    pub fn param_count(&self) -> usize {
        let l = Layout::new(self);
        l.end
    }
}

/// Offsets of each parameter block inside the flat parameter vector, in
/// declaration order: embedding, w1, b1, w2, b2, skip.
#[derive(Debug, Clone, Copy)]
struct Layout {
    emb: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    skip: usize,
    end: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let emb = 0;
        let w1 = emb + c.num_labels * c.embed_dim;
        let b1 = w1 + c.hidden * c.input_len();
        let w2 = b1 + c.hidden;
        let b2 = w2 + c.channels * c.hidden;
        let skip = b2 + c.channels;
        let end = skip + c.channels;
        Self {
            emb,
            w1,
            b1,
            w2,
            b2,
            skip,
            end,
        }
    }
}

/// A label and its embedding row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    pub label: usize,
    pub vector: Vec<f64>,
}

/// The box a batch of points is evaluated in. Positions are fed to the
/// network relative to this box, so a window sees the same coordinates the
/// network saw on a training crop of the same size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub origin: Pos,
    pub extent: [usize; 3],
}

impl Frame {
    pub fn whole(extent: [usize; 3]) -> Self {
        Self {
            origin: [0, 0, 0],
            extent,
        }
    }

    #[inline]
    pub fn normalized(&self, p: Pos) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = 2.0 * ((p[a] - self.origin[a]) as f64 + 0.5) / self.extent[a] as f64 - 1.0;
        }
        out
    }
}

/// A latent that can be fed to the network in its own frame.
pub trait LatentField: Latent + FeatureLookup + Sync {
    fn grid(&self) -> GridDims;
    fn point_count(&self) -> usize;
    fn point(&self, i: usize) -> Pos;
    fn point_index(&self, p: Pos) -> Option<usize>;
    /// Row-major voxel index of point `i`; increasing in `i`.
    fn key(&self, i: usize) -> u64;

    fn points(&self) -> Vec<Pos> {
        (0..self.point_count()).map(|i| self.point(i)).collect()
    }

    fn frame(&self) -> Frame {
        Frame::whole(self.grid().spatial())
    }
}

fn to_pos(p: [usize; 3]) -> Pos {
    [p[0] as i64, p[1] as i64, p[2] as i64]
}

impl LatentField for DenseLatentGrid {
    fn grid(&self) -> GridDims {
        self.dims()
    }

    fn point_count(&self) -> usize {
        self.dims().voxels()
    }

    fn point(&self, i: usize) -> Pos {
        to_pos(self.dims().position(i))
    }

    fn point_index(&self, p: Pos) -> Option<usize> {
        let dims = self.dims();
        dims.contains(p)
            .then(|| dims.voxel_index([p[0] as usize, p[1] as usize, p[2] as usize]))
    }

    fn key(&self, i: usize) -> u64 {
        i as u64
    }
}

impl LatentField for SparseLatent {
    fn grid(&self) -> GridDims {
        self.dims()
    }

    fn point_count(&self) -> usize {
        self.len()
    }

    fn point(&self, i: usize) -> Pos {
        to_pos(self.position(i))
    }

    fn point_index(&self, p: Pos) -> Option<usize> {
        if !self.dims().contains(p) {
            return None;
        }
        self.index_of([p[0] as usize, p[1] as usize, p[2] as usize])
    }

    fn key(&self, i: usize) -> u64 {
        self.keys()[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyFlowModel {
    config: ModelConfig,
    params: Vec<f64>,
}

/// Per-call constants: the hidden pre-activation contributed by time and
/// label, and the time divisor.
pub(crate) struct CallContext {
    base: Vec<f64>,
    inv_tc: f64,
    t: f64,
    emb: Vec<f64>,
    label: usize,
}

/// Per-point buffers reused across points.
pub(crate) struct Scratch {
    pub(crate) patch: Vec<f64>,
    pos: [f64; 3],
    hidden: Vec<f64>,
    grad_a: Vec<f64>,
}

impl ToyFlowModel {
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            params: vec![0.0; config.param_count()],
        })
    }

    /// Small random initialization. The skip gain starts at zero.
    pub fn random(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeroed(config)?;
        let l = Layout::new(&config);
        let in_scale = 1.0 / (config.input_len() as f64).sqrt();
        let out_scale = 0.1 / (config.hidden as f64).sqrt();
        for v in &mut m.params[l.emb..l.w1] {
            *v = rng::normal(rng);
        }
        for v in &mut m.params[l.w1..l.b1] {
            *v = in_scale * rng::normal(rng);
        }
        for v in &mut m.params[l.w2..l.b2] {
            *v = out_scale * rng::normal(rng);
        }
        Ok(m)
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                config.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite model parameter".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn condition(&self, label: usize) -> Result<ConditionEmbedding> {
        if label >= self.config.num_labels {
            return Err(Error::InvalidArgument(format!(
                "label {label} outside the model's {} labels",
                self.config.num_labels
            )));
        }
        let l = Layout::new(&self.config);
        let e = self.config.embed_dim;
        let start = l.emb + label * e;
        Ok(ConditionEmbedding {
            label,
            vector: self.params[start..start + e].to_vec(),
        })
    }

    fn check_condition(&self, cond: &ConditionEmbedding) -> Result<()> {
        if cond.vector.len() != self.config.embed_dim {
            return Err(Error::ShapeMismatch(format!(
                "condition embedding has {} entries, model expects {}",
                cond.vector.len(),
                self.config.embed_dim
            )));
        }
        if cond.label >= self.config.num_labels {
            return Err(Error::InvalidArgument(format!(
                "unknown label {}",
                cond.label
            )));
        }
        Ok(())
    }

    pub(crate) fn context(&self, t: f64, cond: &ConditionEmbedding) -> CallContext {
        let cfg = &self.config;
        let l = Layout::new(cfg);
        let n_in = cfg.input_len();
        let t_col = cfg.patch_len() + 3;
        let mut base = self.params[l.b1..l.w2].to_vec();
        for (h, b) in base.iter_mut().enumerate() {
            let row = &self.params[l.w1 + h * n_in..l.w1 + (h + 1) * n_in];
            *b += row[t_col] * t;
            for (k, e) in cond.vector.iter().enumerate() {
                *b += row[t_col + 1 + k] * e;
            }
        }
        CallContext {
            base,
            inv_tc: 1.0 / t.max(cfg.time_floor),
            t,
            emb: cond.vector.clone(),
            label: cond.label,
        }
    }

    pub(crate) fn scratch(&self) -> Scratch {
        Scratch {
            patch: vec![0.0; self.config.patch_len()],
            pos: [0.0; 3],
            hidden: vec![0.0; self.config.hidden],
            grad_a: vec![0.0; self.config.hidden],
        }
    }

    /// Fills the patch buffer around `p`; absent neighbours read as zero.
    #[inline]
    pub(crate) fn gather<F: FeatureLookup + ?Sized>(
        &self,
        field: &F,
        p: Pos,
        frame: &Frame,
        sc: &mut Scratch,
    ) {
        let r = self.config.patch_radius as i64;
        let c = self.config.channels;
        let mut k = 0;
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let dst = &mut sc.patch[k..k + c];
                    match field.lookup([p[0] + dz, p[1] + dy, p[2] + dx]) {
                        Some(f) => dst.copy_from_slice(f),
                        None => dst.iter_mut().for_each(|v| *v = 0.0),
                    }
                    k += c;
                }
            }
        }
        sc.pos = frame.normalized(p);
    }

    fn center_offset(&self) -> usize {
        let side = self.config.patch_side();
        let r = self.config.patch_radius;
        ((r * side + r) * side + r) * self.config.channels
    }

    /// Forward pass on the gathered patch; writes `channels` velocity values.
    #[inline]
    pub(crate) fn forward(&self, ctx: &CallContext, sc: &mut Scratch, out: &mut [f64]) {
        let cfg = &self.config;
        let l = Layout::new(cfg);
        let n_in = cfg.input_len();
        let pl = cfg.patch_len();
        for h in 0..cfg.hidden {
            let row = &self.params[l.w1 + h * n_in..l.w1 + (h + 1) * n_in];
            let mut a = ctx.base[h];
            for (w, x) in row[..pl].iter().zip(&sc.patch) {
                a += w * x;
            }
            a += row[pl] * sc.pos[0] + row[pl + 1] * sc.pos[1] + row[pl + 2] * sc.pos[2];
            sc.hidden[h] = a / (1.0 + a.abs());
        }
        let center = self.center_offset();
        for ch in 0..cfg.channels {
            let row = &self.params[l.w2 + ch * cfg.hidden..l.w2 + (ch + 1) * cfg.hidden];
            let mut x0 = self.params[l.b2 + ch];
            for (w, h) in row.iter().zip(&sc.hidden) {
                x0 += w * h;
            }
            out[ch] = (self.params[l.skip + ch] * sc.patch[center + ch] - x0) * ctx.inv_tc;
        }
    }

    /// Backward pass for the point last run through `forward` with the same
    /// scratch. Accumulates into `param_grad` and/or the patch gradient.
    pub(crate) fn backward(
        &self,
        ctx: &CallContext,
        sc: &mut Scratch,
        grad_out: &[f64],
        mut param_grad: Option<&mut [f64]>,
        mut patch_grad: Option<&mut [f64]>,
    ) {
        let cfg = &self.config;
        let l = Layout::new(cfg);
        let n_in = cfg.input_len();
        let pl = cfg.patch_len();
        let center = self.center_offset();
        sc.grad_a.iter_mut().for_each(|g| *g = 0.0);
        for ch in 0..cfg.channels {
            let gv = grad_out[ch] * ctx.inv_tc;
            let g_x0 = -gv;
            let skip = self.params[l.skip + ch];
            if let Some(pg) = param_grad.as_deref_mut() {
                pg[l.skip + ch] += gv * sc.patch[center + ch];
                pg[l.b2 + ch] += g_x0;
                let row = &mut pg[l.w2 + ch * cfg.hidden..l.w2 + (ch + 1) * cfg.hidden];
                for (g, h) in row.iter_mut().zip(&sc.hidden) {
                    *g += g_x0 * h;
                }
            }
            if let Some(xg) = patch_grad.as_deref_mut() {
                xg[center + ch] += gv * skip;
            }
            let w2 = &self.params[l.w2 + ch * cfg.hidden..l.w2 + (ch + 1) * cfg.hidden];
            for (ga, w) in sc.grad_a.iter_mut().zip(w2) {
                *ga += w * g_x0;
            }
        }
        for (ga, h) in sc.grad_a.iter_mut().zip(&sc.hidden) {
            let d = 1.0 - h.abs();
            *ga *= d * d;
        }
        if let Some(pg) = param_grad {
            let e = cfg.embed_dim;
            for h in 0..cfg.hidden {
                let ga = sc.grad_a[h];
                if ga == 0.0 {
                    continue;
                }
                pg[l.b1 + h] += ga;
                let row = &mut pg[l.w1 + h * n_in..l.w1 + (h + 1) * n_in];
                for (g, x) in row[..pl].iter_mut().zip(&sc.patch) {
                    *g += ga * x;
                }
                for k in 0..3 {
                    row[pl + k] += ga * sc.pos[k];
                }
                row[pl + 3] += ga * ctx.t;
                for k in 0..e {
                    row[pl + 4 + k] += ga * ctx.emb[k];
                }
                let wrow = &self.params[l.w1 + h * n_in..l.w1 + (h + 1) * n_in];
                let emb_g = &mut pg[l.emb + ctx.label * e..l.emb + (ctx.label + 1) * e];
                for k in 0..e {
                    emb_g[k] += ga * wrow[pl + 4 + k];
                }
            }
        }
        if let Some(xg) = patch_grad {
            for h in 0..cfg.hidden {
                let ga = sc.grad_a[h];
                if ga == 0.0 {
                    continue;
                }
                let row = &self.params[l.w1 + h * n_in..l.w1 + h * n_in + pl];
                for (g, w) in xg.iter_mut().zip(row) {
                    *g += ga * w;
                }
            }
        }
    }

    /// Velocity at each of `points`, reading latent values from `field`.
    /// Output is `points.len() * channels`, in point order.
    pub fn velocity_at<F: FeatureLookup + Sync + ?Sized>(
        &self,
        field: &F,
        points: &[Pos],
        frame: &Frame,
        t: f64,
        cond: &ConditionEmbedding,
    ) -> Result<Vec<f64>> {
        self.check_condition(cond)?;
        if field.channels() != self.config.channels {
            return Err(Error::ShapeMismatch(format!(
                "latent has {} channels, model expects {}",
                field.channels(),
                self.config.channels
            )));
        }
        let c = self.config.channels;
        let ctx = self.context(t, cond);
        let mut out = vec![0.0; points.len() * c];
        const CHUNK: usize = 512;
        out.par_chunks_mut(CHUNK * c)
            .zip(points.par_chunks(CHUNK))
            .for_each(|(o, pts)| {
                let mut sc = self.scratch();
                for (p, dst) in pts.iter().zip(o.chunks_mut(c)) {
                    self.gather(field, *p, frame, &mut sc);
                    self.forward(&ctx, &mut sc, dst);
                }
            });
        Ok(out)
    }

    /// Velocity over the whole latent, evaluated in the latent's own frame.
    pub fn velocity<L: LatentField>(
        &self,
        s_t: &L,
        t: f64,
        cond: &ConditionEmbedding,
    ) -> Result<L> {
        let v = self.velocity_at(s_t, &s_t.points(), &s_t.frame(), t, cond)?;
        Ok(s_t.with_values(v))
    }
}
