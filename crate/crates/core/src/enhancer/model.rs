//! Conditioned velocity of one octant and fine-tuning of the mixing layer.
//!
//! Target positions live in the octant's own frame `[0, n)^3`. Adjacent
//! octants sit one extent away along their axis, so the working field spans
//! `[-n, 2n)^3` and is stored shifted by `n`.

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::flowmodel::{ConditionEmbedding, Frame, FusionLayer, ToyFlowModel};
use crate::lattice::interp::trilinear_sample_into;
use crate::lattice::{gather_adjacent, Direction, GridDims, OctantIndex, Pos, SparseLatent};
use crate::rng::{self, stream, Rng};

use super::pairs::EnhancerPair;

/// Frozen base model plus the trainable mixing layer `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancerModel {
    base: ToyFlowModel,
    layer: FusionLayer,
}

impl EnhancerModel {
    /// Wraps `base` with an identity-initialized layer, so the enhancer
    /// starts out equal to the base model.
    pub fn new(base: ToyFlowModel) -> Result<Self> {
        let c = base.config().channels;
        Ok(Self {
            base,
            layer: FusionLayer::identity(c, c)?,
        })
    }

    pub fn with_layer(base: ToyFlowModel, layer: FusionLayer) -> Result<Self> {
        let c = base.config().channels;
        if layer.channels() != c || layer.cond_channels() != c {
            return Err(Error::ShapeMismatch(format!(
                "fusion layer is {}+{} channels, base model has {c}",
                layer.channels(),
                layer.cond_channels()
            )));
        }
        Ok(Self { base, layer })
    }

    pub fn base(&self) -> &ToyFlowModel {
        &self.base
    }

    pub fn layer(&self) -> &FusionLayer {
        &self.layer
    }

    pub fn channels(&self) -> usize {
        self.base.config().channels
    }

    /// Copy with the condition columns of `F` set to zero: the condition is
    /// ignored, everything else is kept.
    pub fn without_condition(&self) -> Self {
        let mut layer = self.layer.clone();
        let (c, cols) = (layer.channels(), layer.cols());
        let mut p = layer.params();
        for i in 0..c {
            for k in c..cols {
                p[i * cols + k] = 0.0;
            }
        }
        layer.set_params(&p).expect("same parameter count");
        Self {
            base: self.base.clone(),
            layer,
        }
    }
}

/// What octant `j` is conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancerCondition {
    /// The parent cube restricted to octant `j`, at half the octant's
    /// lattice extent.
    pub parent: SparseLatent,
    /// Neighbouring octants at the target's lattice resolution, at most one
    /// per axis.
    pub adjacents: Vec<(Direction, SparseLatent)>,
    pub octant: OctantIndex,
}

impl EnhancerCondition {
    fn check(&self, target: GridDims) -> Result<()> {
        let pd = self.parent.dims();
        let ts = target.spatial();
        if pd.c != target.c {
            return Err(Error::ShapeMismatch(
                "parent and target channels differ".into(),
            ));
        }
        if pd.spatial().iter().zip(&ts).any(|(&p, &t)| p * 2 != t) {
            return Err(Error::ShapeMismatch(format!(
                "truncated parent {:?} is not half of the target {:?}",
                pd.spatial(),
                ts
            )));
        }
        if self.adjacents.len() > 3 {
            return Err(Error::InvalidArgument(
                "more than three adjacent octants".into(),
            ));
        }
        let mut seen = [false; 3];
        for (dir, adj) in &self.adjacents {
            if adj.dims() != target {
                return Err(Error::ShapeMismatch(
                    "adjacent octant dims differ from the target".into(),
                ));
            }
            let a = dir.axis.index();
            if seen[a] || dir.sign.abs() != 1 {
                return Err(Error::InvalidArgument(
                    "adjacents must be unit steps on distinct axes".into(),
                ));
            }
            seen[a] = true;
        }
        Ok(())
    }
}

/// Parent coordinate sampled for target position `p` of an octant whose
/// truncated parent has extent `half`.
pub fn parent_query(p: [usize; 3], half: [usize; 3]) -> [f64; 3] {
    std::array::from_fn(|a| ((p[a] as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (half[a] - 1) as f64))
}

/// Fresh noise for the positions of each adjacent octant, in order.
pub fn draw_adjacent_noise(cond: &EnhancerCondition, rng: &mut Rng) -> Vec<Vec<f64>> {
    cond.adjacents
        .iter()
        .map(|(_, a)| rng::normal_vec(rng, a.features().len()))
        .collect()
}

/// The mixed feature set fed to the base model.
#[derive(Debug, Clone)]
pub struct AssembledInput {
    /// Mixed features over targets and adjacents, shifted by the extent.
    pub field: SparseLatent,
    /// Target positions in the shifted frame, in target order.
    pub targets: Vec<Pos>,
    pub frame: Frame,
    /// Per field entry: the noise and condition vectors that went into `F`.
    noise_in: Vec<f64>,
    cond_in: Vec<f64>,
}

/// Mixes target noise with the interpolated parent and expanded noise with
/// each adjacent octant through the shared layer.
pub fn assemble_condition(
    noise: &SparseLatent,
    cond: &EnhancerCondition,
    layer: &FusionLayer,
    adjacent_noise: &[Vec<f64>],
) -> Result<AssembledInput> {
    let dims = noise.dims();
    cond.check(dims)?;
    let c = dims.c;
    if layer.channels() != c || layer.cond_channels() != c {
        return Err(Error::ShapeMismatch(
            "fusion layer does not match the latent channels".into(),
        ));
    }
    if adjacent_noise.len() != cond.adjacents.len()
        || adjacent_noise
            .iter()
            .zip(&cond.adjacents)
            .any(|(n, (_, a))| n.len() != a.features().len())
    {
        return Err(Error::ShapeMismatch(
            "expanded noise does not match the adjacent octants".into(),
        ));
    }
    let ext = dims.spatial();
    let big = GridDims::new(3 * ext[0], 3 * ext[1], 3 * ext[2], c)?;
    let shift = |p: [usize; 3], off: [i64; 3]| -> [usize; 3] {
        std::array::from_fn(|a| (p[a] as i64 + off[a] + ext[a] as i64) as usize)
    };
    let half = cond.parent.dims().spatial();

    // (key, noise, condition) per entry
    let total = noise.len() + cond.adjacents.iter().map(|(_, a)| a.len()).sum::<usize>();
    let mut entries: Vec<(u64, usize)> = Vec::with_capacity(total);
    let mut noise_in = Vec::with_capacity(total * c);
    let mut cond_in = Vec::with_capacity(total * c);
    let mut targets = Vec::with_capacity(noise.len());
    let mut buf = vec![0.0; c];
    for i in 0..noise.len() {
        let p = noise.position(i);
        let q = shift(p, [0, 0, 0]);
        trilinear_sample_into(&cond.parent, parent_query(p, half), &mut buf)?;
        entries.push((big.voxel_index(q) as u64, entries.len()));
        noise_in.extend_from_slice(noise.feature(i));
        cond_in.extend_from_slice(&buf);
        targets.push([q[0] as i64, q[1] as i64, q[2] as i64]);
    }
    for ((dir, adj), extra) in cond.adjacents.iter().zip(adjacent_noise) {
        let off = dir.offset(ext);
        for i in 0..adj.len() {
            let q = shift(adj.position(i), off);
            entries.push((big.voxel_index(q) as u64, entries.len()));
            noise_in.extend_from_slice(&extra[i * c..(i + 1) * c]);
            cond_in.extend_from_slice(adj.feature(i));
        }
    }
    entries.sort_unstable_by_key(|e| e.0);
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        let p = big.position(w[0].0 as usize);
        return Err(Error::PositionCollision(std::array::from_fn(|a| {
            p[a] as i64 - ext[a] as i64
        })));
    }
    let mut keys = Vec::with_capacity(total);
    let mut feats = vec![0.0; total * c];
    let mut sorted_noise = Vec::with_capacity(total * c);
    let mut sorted_cond = Vec::with_capacity(total * c);
    for (k, &(key, src)) in entries.iter().enumerate() {
        keys.push(key);
        let n = &noise_in[src * c..(src + 1) * c];
        let cd = &cond_in[src * c..(src + 1) * c];
        layer.apply_into(n, cd, &mut feats[k * c..(k + 1) * c]);
        sorted_noise.extend_from_slice(n);
        sorted_cond.extend_from_slice(cd);
    }
    let origin = [ext[0] as i64, ext[1] as i64, ext[2] as i64];
    Ok(AssembledInput {
        field: SparseLatent::from_sorted(big, keys, feats),
        targets,
        frame: Frame {
            origin,
            extent: ext,
        },
        noise_in: sorted_noise,
        cond_in: sorted_cond,
    })
}

/// Velocity at the target positions only, same order as `s_t`.
pub fn enhancer_velocity(
    model: &EnhancerModel,
    s_t: &SparseLatent,
    t: f64,
    label: &ConditionEmbedding,
    cond: &EnhancerCondition,
    adjacent_noise: &[Vec<f64>],
) -> Result<SparseLatent> {
    let input = assemble_condition(s_t, cond, &model.layer, adjacent_noise)?;
    let v = model
        .base
        .velocity_at(&input.field, &input.targets, &input.frame, t, label)?;
    s_t.with_features(v)
}

/// One fine-tuning example: octant `j` of a pair with its adjacents.
fn condition_for(
    pair: &EnhancerPair,
    j: OctantIndex,
    adjacent_count: usize,
    rng: &mut Rng,
) -> Result<EnhancerCondition> {
    let parent = crate::lattice::truncate_latent(&pair.parent, j)?;
    let siblings = pair
        .children
        .iter()
        .enumerate()
        .map(|(k, s)| (OctantIndex::new(k as u8).unwrap(), s.clone()))
        .collect();
    let all = gather_adjacent(&siblings, j, 3)?;
    let chosen = sample_indices(rng, all.len(), adjacent_count.min(all.len())).into_vec();
    let mut chosen = chosen;
    chosen.sort_unstable();
    let adjacents = chosen.into_iter().map(|k| all[k].clone()).collect();
    Ok(EnhancerCondition {
        parent,
        adjacents,
        octant: j,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhancerTrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Target positions per step (all of them when the octant is smaller).
    pub batch: usize,
}

impl Default for EnhancerTrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            lr: 0.005,
            batch: 256,
        }
    }
}

/// Masked loss over `batch` target entries and its gradient in `F`'s
/// parameters (weights then biases).
#[allow(clippy::too_many_arguments)]
fn loss_and_layer_grad(
    model: &EnhancerModel,
    s: &SparseLatent,
    eps: &[f64],
    t: f64,
    label: &ConditionEmbedding,
    cond: &EnhancerCondition,
    adjacent_noise: &[Vec<f64>],
    batch: &[usize],
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let c = s.dims().c;
    let s_t = s.with_features(
        s.features()
            .iter()
            .zip(eps)
            .map(|(x, e)| (1.0 - t) * x + t * e)
            .collect(),
    )?;
    let input = assemble_condition(&s_t, cond, &model.layer, adjacent_noise)?;
    let base = &model.base;
    let ctx = base.context(t, label);
    let mut sc = base.scratch();
    let mut v = vec![0.0; c];
    let mut g = vec![0.0; c];
    let mut feat_grad = vec![0.0; input.field.features().len()];
    let mut patch_grad = vec![0.0; base.config().patch_len()];
    let r = base.config().patch_radius as i64;
    let norm = 1.0 / (batch.len() * c) as f64;
    let mut loss = 0.0;
    for &i in batch {
        let p = input.targets[i];
        base.gather(&input.field, p, &input.frame, &mut sc);
        base.forward(&ctx, &mut sc, &mut v);
        for ch in 0..c {
            let err = v[ch] - (eps[i * c + ch] - s.features()[i * c + ch]);
            loss += err * err * norm;
            g[ch] = 2.0 * err * norm;
        }
        if !want_grad {
            continue;
        }
        patch_grad.iter_mut().for_each(|x| *x = 0.0);
        base.backward(&ctx, &mut sc, &g, None, Some(&mut patch_grad));
        let mut k = 0;
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let q = [p[0] + dz, p[1] + dy, p[2] + dx];
                    if input.field.dims().contains(q) {
                        if let Some(idx) =
                            input
                                .field
                                .index_of([q[0] as usize, q[1] as usize, q[2] as usize])
                        {
                            for ch in 0..c {
                                feat_grad[idx * c + ch] += patch_grad[k + ch];
                            }
                        }
                    }
                    k += c;
                }
            }
        }
    }
    let mut grad = vec![0.0; model.layer.param_count()];
    if want_grad {
        for idx in 0..input.field.len() {
            let go = &feat_grad[idx * c..(idx + 1) * c];
            if go.iter().all(|&x| x == 0.0) {
                continue;
            }
            model.layer.backward_params(
                &input.noise_in[idx * c..(idx + 1) * c],
                &input.cond_in[idx * c..(idx + 1) * c],
                go,
                &mut grad,
            );
        }
    }
    Ok((loss, grad))
}

/// Masked flow-matching loss of octant `j` given explicit noise, over all
/// target positions (or `batch` of them). Exposed for gradient checks.
pub fn enhancer_loss(
    model: &EnhancerModel,
    child: &SparseLatent,
    eps: &[f64],
    t: f64,
    label: &ConditionEmbedding,
    cond: &EnhancerCondition,
    adjacent_noise: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    if eps.len() != child.features().len() {
        return Err(Error::ShapeMismatch(
            "noise and child feature lengths differ".into(),
        ));
    }
    let all: Vec<usize> = (0..child.len()).collect();
    if all.is_empty() {
        return Ok((0.0, vec![0.0; model.layer.param_count()]));
    }
    loss_and_layer_grad(
        model,
        child,
        eps,
        t,
        label,
        cond,
        adjacent_noise,
        &all,
        true,
    )
}

struct Draw {
    pair: usize,
    octant: OctantIndex,
    t: f64,
    cond: EnhancerCondition,
    eps: Vec<f64>,
    adjacent_noise: Vec<Vec<f64>>,
}

fn draw(pairs: &[EnhancerPair], rng: &mut Rng) -> Result<Draw> {
    let pair = rng.random_range(0..pairs.len());
    let octant = OctantIndex::new(rng.random_range(0..8u8))?;
    let t: f64 = rng.random();
    let count = rng.random_range(0..=3usize);
    let cond = condition_for(&pairs[pair], octant, count, rng)?;
    let child = &pairs[pair].children[octant.get() as usize];
    let eps = rng::normal_vec(rng, child.features().len());
    let adjacent_noise = draw_adjacent_noise(&cond, rng);
    Ok(Draw {
        pair,
        octant,
        t,
        cond,
        eps,
        adjacent_noise,
    })
}

fn check_pairs(model: &EnhancerModel, pairs: &[EnhancerPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if pairs.iter().any(|p| p.parent.dims().c != model.channels()) {
        return Err(Error::ShapeMismatch(
            "pair channels differ from the base model".into(),
        ));
    }
    Ok(())
}

/// Trains `F` with the masked flow-matching loss. The base model is carried
/// through untouched.
pub fn finetune_enhancer(
    model: &EnhancerModel,
    pairs: &[EnhancerPair],
    cfg: &EnhancerTrainConfig,
    rng: &mut Rng,
) -> Result<(EnhancerModel, Vec<f64>)> {
    check_pairs(model, pairs)?;
    if cfg.batch == 0 || !(cfg.lr >= 0.0) {
        return Err(Error::InvalidArgument(
            "batch must be >= 1 and lr >= 0".into(),
        ));
    }
    let mut out = model.clone();
    let mut params = out.layer.params();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let d = draw(pairs, rng)?;
        let pair = &pairs[d.pair];
        let child = &pair.children[d.octant.get() as usize];
        if child.is_empty() {
            losses.push(0.0);
            continue;
        }
        let batch = if child.len() <= cfg.batch {
            (0..child.len()).collect()
        } else {
            let mut b = sample_indices(rng, child.len(), cfg.batch).into_vec();
            b.sort_unstable();
            b
        };
        let label = out.base.condition(pair.label)?;
        let (loss, grad) = loss_and_layer_grad(
            &out,
            child,
            &d.eps,
            d.t,
            &label,
            &d.cond,
            &d.adjacent_noise,
            &batch,
            true,
        )?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "enhancer loss is not finite at step {step}"
            )));
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= cfg.lr * g;
        }
        out.layer.set_params(&params)?;
        losses.push(loss);
    }
    Ok((out, losses))
}

/// Mean masked loss over `draws` deterministic examples per pair.
pub fn enhancer_validation_loss(
    model: &EnhancerModel,
    pairs: &[EnhancerPair],
    draws: usize,
    seed: u64,
) -> Result<f64> {
    check_pairs(model, pairs)?;
    let mut rng = rng::stream_rng(seed, stream::VALIDATION);
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..draws * pairs.len() {
        let d = draw(pairs, &mut rng)?;
        let pair = &pairs[d.pair];
        let child = &pair.children[d.octant.get() as usize];
        if child.is_empty() {
            continue;
        }
        let all: Vec<usize> = (0..child.len()).collect();
        let label = model.base.condition(pair.label)?;
        let (loss, _) = loss_and_layer_grad(
            model,
            child,
            &d.eps,
            d.t,
            &label,
            &d.cond,
            &d.adjacent_noise,
            &all,
            false,
        )?;
        total += loss * child.len() as f64;
        count += child.len();
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Axis;
    use crate::flowmodel::ModelConfig;
    use crate::lattice::truncate_latent;

    pub(crate) fn base(seed: u64) -> ToyFlowModel {
        let cfg = ModelConfig {
            channels: 2,
            hidden: 6,
            patch_radius: 1,
            embed_dim: 2,
            num_labels: 2,
            time_floor: 0.1,
        };
        let mut m = ToyFlowModel::random(cfg, &mut rng::seeded(seed)).unwrap();
        let n = m.params().len();
        m.params_mut()[n - 2..].copy_from_slice(&[0.9, 1.1]);
        m
    }

    fn random_sparse(seed: u64, n: usize, c: usize, density: f64) -> SparseLatent {
        let mut r = rng::seeded(seed);
        let dims = GridDims::cube(n, c).unwrap();
        let mut pos = Vec::new();
        let mut feats = Vec::new();
        for i in 0..dims.voxels() {
            if r.random::<f64>() < density {
                pos.push(dims.position(i));
                feats.extend(rng::normal_vec(&mut r, c));
            }
        }
        SparseLatent::new(dims, &pos, &feats).unwrap()
    }

    fn condition(seed: u64, adj: usize) -> EnhancerCondition {
        let parent = random_sparse(seed, 8, 2, 0.5);
        let j = OctantIndex::new(7).unwrap();
        let dirs = [Axis::X, Axis::Y, Axis::Z];
        let adjacents = (0..adj)
            .map(|k| {
                (
                    Direction {
                        axis: dirs[k],
                        sign: -1,
                    },
                    random_sparse(seed + 10 + k as u64, 8, 2, 0.4),
                )
            })
            .collect();
        EnhancerCondition {
            parent: truncate_latent(&parent, j).unwrap(),
            adjacents,
            octant: j,
        }
    }

    fn random_layer(seed: u64) -> FusionLayer {
        let mut l = FusionLayer::identity(2, 2).unwrap();
        let p: Vec<f64> = rng::normal_vec(&mut rng::seeded(seed), l.param_count())
            .iter()
            .map(|v| 0.3 * v)
            .collect();
        l.set_params(&p).unwrap();
        l
    }

    #[test]
    fn identity_layer_matches_base_without_adjacents() {
        let m = EnhancerModel::new(base(1)).unwrap();
        let label = m.base().condition(1).unwrap();
        for seed in 0..10 {
            let noise = random_sparse(100 + seed, 8, 2, 0.4);
            let cond = condition(seed, 0);
            let t = 0.05 + 0.09 * seed as f64;
            let v = enhancer_velocity(&m, &noise, t, &label, &cond, &[]).unwrap();
            let reference = m.base().velocity(&noise, t, &label).unwrap();
            assert_eq!(v.keys(), reference.keys());
            for (a, b) in v.features().iter().zip(reference.features()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn identity_layer_ignores_condition_values() {
        let m = EnhancerModel::new(base(2)).unwrap();
        let label = m.base().condition(0).unwrap();
        let noise = random_sparse(5, 8, 2, 0.5);
        let a = enhancer_velocity(&m, &noise, 0.4, &label, &condition(1, 0), &[]).unwrap();
        let b = enhancer_velocity(&m, &noise, 0.4, &label, &condition(2, 0), &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_adjacents_keep_the_target_set() {
        let noise = random_sparse(6, 8, 2, 0.3);
        let inp = assemble_condition(&noise, &condition(3, 0), &random_layer(1), &[]).unwrap();
        assert_eq!(inp.field.len(), noise.len());
        assert_eq!(inp.targets.len(), noise.len());
        for (i, p) in inp.targets.iter().enumerate() {
            let q = noise.position(i);
            assert_eq!(*p, [q[0] as i64 + 8, q[1] as i64 + 8, q[2] as i64 + 8]);
        }
    }

    #[test]
    fn parent_path_uses_trilinear_samples() {
        let noise = random_sparse(7, 8, 2, 0.5);
        let cond = condition(4, 0);
        // condition columns only: output equals the interpolated parent
        let mut layer = FusionLayer::zeros(2, 2).unwrap();
        let mut p = layer.params();
        p[2] = 1.0;
        p[4 + 3] = 1.0;
        layer.set_params(&p).unwrap();
        let inp = assemble_condition(&noise, &cond, &layer, &[]).unwrap();
        for i in 0..noise.len() {
            let q = parent_query(noise.position(i), [4, 4, 4]);
            let oracle = crate::lattice::trilinear_sample_sparse(&cond.parent, q).unwrap();
            let got = inp.field.feature(i);
            for (a, b) in got.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjacents_are_placed_without_interpolation() {
        let noise = random_sparse(8, 8, 2, 0.3);
        let cond = condition(5, 2);
        let extra = draw_adjacent_noise(&cond, &mut rng::seeded(3));
        let layer = random_layer(2);
        let inp = assemble_condition(&noise, &cond, &layer, &extra).unwrap();
        let expected = noise.len() + cond.adjacents.iter().map(|(_, a)| a.len()).sum::<usize>();
        assert_eq!(inp.field.len(), expected);
        let (dir, adj) = &cond.adjacents[0];
        assert_eq!(dir.axis, Axis::X);
        for i in 0..adj.len() {
            let p = adj.position(i);
            let q = [p[0] + 8, p[1] + 8, p[2]];
            let f = inp.field.get(q).unwrap();
            let want = layer
                .apply_fusion(&extra[0][i * 2..i * 2 + 2], adj.feature(i))
                .unwrap();
            assert_eq!(f, &want[..]);
        }
    }

    #[test]
    fn adjacents_only_touch_the_shared_face() {
        let m = EnhancerModel::new(base(3)).unwrap();
        let label = m.base().condition(0).unwrap();
        let noise = random_sparse(9, 8, 2, 0.5);
        let bare = enhancer_velocity(&m, &noise, 0.5, &label, &condition(6, 0), &[]).unwrap();
        let cond = condition(6, 1);
        let extra = draw_adjacent_noise(&cond, &mut rng::seeded(4));
        let with = enhancer_velocity(&m, &noise, 0.5, &label, &cond, &extra).unwrap();
        for i in 0..noise.len() {
            let p = noise.position(i);
            if bare.feature(i) != with.feature(i) {
                assert!(
                    p[2] < 1,
                    "change at {p:?} is beyond the patch radius of the x face"
                );
            }
        }
        assert_ne!(bare, with);
    }

    #[test]
    fn colliding_adjacent_is_rejected() {
        let noise = random_sparse(10, 8, 2, 0.3);
        let mut cond = condition(7, 1);
        cond.adjacents[0].0.sign = 0;
        let extra = draw_adjacent_noise(&cond, &mut rng::seeded(5));
        assert!(assemble_condition(&noise, &cond, &random_layer(3), &extra).is_err());
    }

    #[test]
    fn layer_gradient_matches_finite_differences() {
        let base = base(4);
        let m = EnhancerModel::with_layer(base, random_layer(5)).unwrap();
        let label = m.base().condition(1).unwrap();
        let child = random_sparse(11, 8, 2, 0.4);
        let eps = rng::normal_vec(&mut rng::seeded(6), child.features().len());
        let cond = condition(8, 2);
        let extra = draw_adjacent_noise(&cond, &mut rng::seeded(7));
        let (_, grad) = enhancer_loss(&m, &child, &eps, 0.6, &label, &cond, &extra).unwrap();
        let h = 1e-6;
        for k in 0..m.layer().param_count() {
            let mut p = m.layer().params();
            p[k] += h;
            let mut lp = m.layer().clone();
            lp.set_params(&p).unwrap();
            p[k] -= 2.0 * h;
            let mut lm = m.layer().clone();
            lm.set_params(&p).unwrap();
            let f = |l: FusionLayer| {
                let mm = EnhancerModel::with_layer(m.base().clone(), l).unwrap();
                enhancer_loss(&mm, &child, &eps, 0.6, &label, &cond, &extra)
                    .unwrap()
                    .0
            };
            let fd = (f(lp) - f(lm)) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {k}: fd {fd} analytic {}", grad[k]);
        }
    }

    #[test]
    fn without_condition_zeroes_only_condition_columns() {
        let m = EnhancerModel::with_layer(base(5), random_layer(6)).unwrap();
        let z = m.without_condition();
        let (a, b) = (m.layer().weight(), z.layer().weight());
        for i in 0..2 {
            for k in 0..4 {
                let idx = i * 4 + k;
                if k < 2 {
                    assert_eq!(a[idx], b[idx]);
                } else {
                    assert_eq!(b[idx], 0.0);
                }
            }
        }
        assert_eq!(m.layer().bias(), z.layer().bias());
    }
}
