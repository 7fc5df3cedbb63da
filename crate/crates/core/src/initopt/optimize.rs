//! Initial-latent optimization through a linearized trajectory.
//!
//! The trajectory from `S_T` is approximated by a straight line towards the
//! sampler's endpoint, with the offset `G(S_T) - S_T` held constant for
//! differentiation. The loss gradient is therefore the masked residual
//! itself, optionally pulled back into Fourier coefficients.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::flowmodel::{decode_occupancy, ConditionEmbedding, ToyDecoders, ToyFlowModel};
use crate::fusion::denoise;
use crate::initopt::spectral::{fft3_adjoint, fft3_inverse, SpectralLatent};
use crate::lattice::{DenseLatentGrid, GridDims, MaskVolume, OccupancyField};

fn overlap(
    a: &OccupancyField,
    b: &OccupancyField,
    mask: Option<&MaskVolume>,
) -> Result<(usize, usize, usize)> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "occupancy dims differ: {:?} vs {:?}",
            a.dims().spatial(),
            b.dims().spatial()
        )));
    }
    if let Some(m) = mask {
        if !m.dims().same_spatial(&a.dims()) {
            return Err(Error::ShapeMismatch(
                "mask and occupancy dims differ".into(),
            ));
        }
    }
    let (mut na, mut nb, mut both) = (0, 0, 0);
    for i in 0..a.values().len() {
        if mask.is_some_and(|m| m.weights()[i] == 0.0) {
            continue;
        }
        let (x, y) = (a.is_active_index(i), b.is_active_index(i));
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    Ok((na, nb, both))
}

fn iou_of(na: usize, nb: usize, both: usize) -> f64 {
    let union = na + nb - both;
    if union == 0 {
        1.0
    } else {
        both as f64 / union as f64
    }
}

fn dice_of(na: usize, nb: usize, both: usize) -> f64 {
    if na + nb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (na + nb) as f64
    }
}

/// `|A n B| / |A u B|`, 1 when both sets are empty.
pub fn iou(a: &OccupancyField, b: &OccupancyField) -> Result<f64> {
    let (na, nb, both) = overlap(a, b, None)?;
    Ok(iou_of(na, nb, both))
}

/// `2 |A n B| / (|A| + |B|)`, 1 when both sets are empty.
pub fn dice(a: &OccupancyField, b: &OccupancyField) -> Result<f64> {
    let (na, nb, both) = overlap(a, b, None)?;
    Ok(dice_of(na, nb, both))
}

/// IoU and Dice counted only where `mask` is nonzero.
pub fn masked_iou_dice(
    a: &OccupancyField,
    b: &OccupancyField,
    mask: &MaskVolume,
) -> Result<(f64, f64)> {
    let (na, nb, both) = overlap(a, b, Some(mask))?;
    Ok((iou_of(na, nb, both), dice_of(na, nb, both)))
}

/// Half-open voxel box `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoxelBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl VoxelBox {
    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] < self.hi[a])
    }
}

/// Where the endpoint is constrained and what it should be there.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetConstraint {
    mask: MaskVolume,
    target: DenseLatentGrid,
}

impl TargetConstraint {
    pub fn new(mask: MaskVolume, target: DenseLatentGrid) -> Result<Self> {
        if !mask.is_binary() {
            return Err(Error::InvalidArgument(
                "constraint mask must be binary".into(),
            ));
        }
        if !mask.dims().same_spatial(&target.dims()) {
            return Err(Error::ShapeMismatch(
                "constraint mask and target dims differ".into(),
            ));
        }
        Ok(Self { mask, target })
    }

    /// Ground slab `z < ground_height` pulled to `ground_value`, and every
    /// excluded box pulled to `-excluded_value`. Boxes win where they
    /// overlap the slab.
    pub fn ground_and_exclusions(
        dims: GridDims,
        ground_height: usize,
        excluded: &[VoxelBox],
        ground_value: f64,
        excluded_value: f64,
    ) -> Result<Self> {
        if ground_height > dims.d {
            return Err(Error::InvalidArgument(format!(
                "ground height {ground_height} exceeds grid depth {}",
                dims.d
            )));
        }
        let in_box = |p: [usize; 3]| excluded.iter().any(|b| b.contains(p));
        let mask = MaskVolume::from_fn(dims, |p| {
            if p[0] < ground_height || in_box(p) {
                1.0
            } else {
                0.0
            }
        })?;
        let target = DenseLatentGrid::from_fn(dims, |p, _| {
            if in_box(p) {
                -excluded_value
            } else if p[0] < ground_height {
                ground_value
            } else {
                0.0
            }
        });
        Self::new(mask, target)
    }

    pub fn mask(&self) -> &MaskVolume {
        &self.mask
    }

    pub fn target(&self) -> &DenseLatentGrid {
        &self.target
    }
}

/// `S(t) = S_T + (1 - t) [G(S_T) - S_T]_sg`: flow time 1 is the start, 0
/// the sampler endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTrajectory {
    start: DenseLatentGrid,
    offset: DenseLatentGrid,
}

impl LinearTrajectory {
    /// Runs the full sampler from `start` to get the frozen offset.
    pub fn new(
        model: &ToyFlowModel,
        cond: &ConditionEmbedding,
        start: DenseLatentGrid,
        steps: usize,
    ) -> Result<Self> {
        let end = denoise(model, cond, start.clone(), steps)?;
        let offset = start
            .data()
            .iter()
            .zip(end.data())
            .map(|(s, g)| g - s)
            .collect();
        let offset = DenseLatentGrid::from_vec(start.dims(), offset)?;
        Ok(Self { start, offset })
    }

    pub fn from_parts(start: DenseLatentGrid, offset: DenseLatentGrid) -> Result<Self> {
        if start.dims() != offset.dims() {
            return Err(Error::ShapeMismatch(
                "trajectory start and offset dims differ".into(),
            ));
        }
        Ok(Self { start, offset })
    }

    pub fn start(&self) -> &DenseLatentGrid {
        &self.start
    }

    pub fn offset(&self) -> &DenseLatentGrid {
        &self.offset
    }

    /// Same frozen offset from a different start.
    pub fn with_start(&self, start: DenseLatentGrid) -> Result<Self> {
        Self::from_parts(start, self.offset.clone())
    }

    pub fn at(&self, t: f64) -> DenseLatentGrid {
        if t == 1.0 {
            return self.start.clone();
        }
        let a = 1.0 - t;
        let data = self
            .start
            .data()
            .iter()
            .zip(self.offset.data())
            .map(|(s, o)| s + a * o)
            .collect();
        DenseLatentGrid::from_vec_unchecked(self.start.dims(), data)
    }

    pub fn endpoint(&self) -> DenseLatentGrid {
        self.at(0.0)
    }

    /// Vector-Jacobian product of the endpoint with respect to the start.
    /// The offset is a constant, so this is the identity.
    pub fn endpoint_vjp(&self, g: &DenseLatentGrid) -> DenseLatentGrid {
        g.clone()
    }
}

/// Endpoint of the linearized trajectory started at `s_t`.
pub fn linear_traj_endpoint(
    model: &ToyFlowModel,
    cond: &ConditionEmbedding,
    s_t: &DenseLatentGrid,
    steps: usize,
) -> Result<DenseLatentGrid> {
    Ok(LinearTrajectory::new(model, cond, s_t.clone(), steps)?.endpoint())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    /// Optimize the Fourier coefficients of `S_T`.
    Spectral,
    /// Optimize voxel values directly.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LatentGradient {
    Direct(DenseLatentGrid),
    Spectral(SpectralLatent),
}

/// `sum_M (y - endpoint)^2` and its gradient in the chosen parameterization.
pub fn linear_loss(
    traj: &LinearTrajectory,
    constraint: &TargetConstraint,
    param: Parameterization,
) -> Result<(f64, LatentGradient)> {
    let dims = traj.start.dims();
    if constraint.target.dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "constraint target {:?} does not match latent {:?}",
            constraint.target.dims(),
            dims
        )));
    }
    if constraint.mask.count_nonzero() == 0 {
        return Err(Error::EmptyMask);
    }
    let end = traj.endpoint();
    let c = dims.c;
    let mask = constraint.mask.weights();
    let y = constraint.target.data();
    let mut loss = 0.0;
    let mut grad = vec![0.0; end.data().len()];
    for (i, (e, g)) in end.data().iter().zip(grad.iter_mut()).enumerate() {
        if mask[i / c] == 0.0 {
            continue;
        }
        let r = e - y[i];
        loss += r * r;
        *g = 2.0 * r;
    }
    let grad = traj.endpoint_vjp(&DenseLatentGrid::from_vec_unchecked(dims, grad));
    let grad = match param {
        Parameterization::Direct => LatentGradient::Direct(grad),
        Parameterization::Spectral => LatentGradient::Spectral(fft3_adjoint(&grad)),
    };
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptConfig {
    pub lr: f64,
    pub max_steps: usize,
    pub parameterization: Parameterization,
    pub optimizer: Optimizer,
    /// Stop once masked Dice reaches this.
    pub dice_threshold: f64,
    /// Euler steps of each endpoint evaluation.
    pub sampler_steps: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            lr: 9.0,
            max_steps: 10,
            parameterization: Parameterization::Spectral,
            optimizer: Optimizer::Adam,
            dice_threshold: 0.9,
            sampler_steps: 25,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if self.max_steps == 0 || self.sampler_steps == 0 {
            return Err(Error::InvalidArgument(
                "max_steps and sampler_steps must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn delta(&mut self, grad: &[f64]) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        grad.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(&g, (m, v))| {
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                -self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS)
            })
            .collect()
    }
}

enum Stepper {
    Adam(Adam),
    Plain(f64),
}

impl Stepper {
    fn delta(&mut self, grad: &[f64]) -> Vec<f64> {
        match self {
            Stepper::Adam(a) => a.delta(grad),
            Stepper::Plain(lr) => grad.iter().map(|g| -*lr * g).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub iou: f64,
    pub dice: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptStatus {
    /// Dice reached the threshold at this step.
    Converged(usize),
    MaxSteps,
    /// The loss or latent stopped being finite at this step.
    Diverged(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptOutcome {
    /// The latent evaluated in the last trace row.
    pub latent: DenseLatentGrid,
    pub trace: Vec<TraceRow>,
    pub status: OptStatus,
}

impl OptOutcome {
    /// Steps whose loss exceeds `factor` times the previous step's loss.
    pub fn spikes(&self, factor: f64) -> Vec<usize> {
        self.trace
            .windows(2)
            .filter(|w| !(w[1].loss <= factor * w[0].loss))
            .map(|w| w[1].step)
            .collect()
    }

    /// True when the run diverged or jumped by more than 10x in one step.
    pub fn is_unstable(&self) -> bool {
        matches!(self.status, OptStatus::Diverged(_)) || !self.spikes(10.0).is_empty()
    }
}

/// Runs up to `max_steps` evaluations of the linear loss, updating `S_T`
/// between them. The endpoint offset is recomputed at every step.
pub fn optimize_initial_latent(
    model: &ToyFlowModel,
    cond: &ConditionEmbedding,
    decoders: &ToyDecoders,
    s_t0: &DenseLatentGrid,
    constraint: &TargetConstraint,
    cfg: &OptConfig,
) -> Result<OptOutcome> {
    cfg.validate()?;
    let dims = s_t0.dims();
    if constraint.target.dims() != dims {
        return Err(Error::ShapeMismatch(
            "constraint does not match the initial latent".into(),
        ));
    }
    let target_occ = decode_occupancy(decoders, &constraint.target)?;
    let n = dims.voxels() * dims.c;
    let mut stepper = match cfg.optimizer {
        Optimizer::Adam => {
            let len = if cfg.parameterization == Parameterization::Spectral {
                2 * n
            } else {
                n
            };
            Stepper::Adam(Adam::new(cfg.lr, len))
        }
        Optimizer::GradientDescent => Stepper::Plain(cfg.lr),
    };
    let mut latent = s_t0.clone();
    let mut trace = Vec::new();
    let mut status = OptStatus::MaxSteps;
    for step in 0..cfg.max_steps {
        let traj = match LinearTrajectory::new(model, cond, latent.clone(), cfg.sampler_steps) {
            Ok(t) => t,
            Err(Error::Numerical(msg)) => {
                log::warn!("init optimization diverged at step {step}: {msg}");
                trace.push(TraceRow {
                    step,
                    loss: f64::NAN,
                    iou: 0.0,
                    dice: 0.0,
                });
                status = OptStatus::Diverged(step);
                break;
            }
            Err(e) => return Err(e),
        };
        let (loss, grad) = linear_loss(&traj, constraint, cfg.parameterization)?;
        let occ = decode_occupancy(decoders, &traj.endpoint())?;
        let (iou, dice) = masked_iou_dice(&occ, &target_occ, &constraint.mask)?;
        trace.push(TraceRow {
            step,
            loss,
            iou,
            dice,
        });
        log::debug!("init step {step}: loss {loss:.6} iou {iou:.4} dice {dice:.4}");
        if !loss.is_finite() {
            status = OptStatus::Diverged(step);
            break;
        }
        if dice >= cfg.dice_threshold {
            status = OptStatus::Converged(step);
            break;
        }
        if step + 1 == cfg.max_steps {
            break;
        }
        let delta = match grad {
            LatentGradient::Direct(g) => stepper.delta(g.data()),
            LatentGradient::Spectral(g) => {
                let flat: Vec<f64> = g.coeffs().iter().flat_map(|z| [z.re, z.im]).collect();
                let d = stepper.delta(&flat);
                let coeffs = d.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
                // the transform is linear, so the voxel update is the inverse
                // of the coefficient update
                let spec = SpectralLatent::new(dims, coeffs)?;
                fft3_inverse(&spec)?.into_data()
            }
        };
        let next: Vec<f64> = latent
            .data()
            .iter()
            .zip(&delta)
            .map(|(s, d)| s + d)
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            trace.push(TraceRow {
                step: step + 1,
                loss: f64::NAN,
                iou: 0.0,
                dice: 0.0,
            });
            status = OptStatus::Diverged(step + 1);
            break;
        }
        latent = DenseLatentGrid::from_vec(dims, next)?;
    }
    Ok(OptOutcome {
        latent,
        trace,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmodel::ModelConfig;
    use crate::initopt::spectral::fft3_forward;
    use crate::rng;

    fn occ(dims: GridDims, active: &[[usize; 3]]) -> OccupancyField {
        OccupancyField::from_active(dims, |p| active.contains(&p)).unwrap()
    }

    #[test]
    fn overlap_counts() {
        let dims = GridDims::cube(3, 1).unwrap();
        let a = occ(dims, &[[0, 0, 0], [0, 0, 1], [0, 0, 2], [0, 1, 0]]);
        let b = occ(dims, &[[0, 0, 0], [0, 0, 1], [1, 1, 1], [2, 2, 2]]);
        assert!((iou(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-12);
        assert!((dice(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let c = occ(dims, &[[2, 0, 0]]);
        assert_eq!(iou(&a, &c).unwrap(), 0.0);
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        let e = occ(dims, &[]);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
    }

    fn model(seed: u64) -> ToyFlowModel {
        let cfg = ModelConfig {
            channels: 1,
            hidden: 6,
            patch_radius: 1,
            embed_dim: 2,
            num_labels: 2,
            time_floor: 0.1,
        };
        ToyFlowModel::random(cfg, &mut rng::seeded(seed)).unwrap()
    }

    fn noise(dims: GridDims, seed: u64) -> DenseLatentGrid {
        DenseLatentGrid::from_vec(
            dims,
            rng::normal_vec(&mut rng::seeded(seed), dims.voxels() * dims.c),
        )
        .unwrap()
    }

    fn constraint(dims: GridDims) -> TargetConstraint {
        let b = VoxelBox {
            lo: [3, 0, 0],
            hi: [6, 4, 8],
        };
        TargetConstraint::ground_and_exclusions(dims, 2, &[b], 1.0, 1.0).unwrap()
    }

    #[test]
    fn zero_model_endpoint_is_start() {
        let dims = GridDims::cube(4, 1).unwrap();
        let m = ToyFlowModel::zeroed(*model(0).config()).unwrap();
        let s = noise(dims, 1);
        let cond = m.condition(0).unwrap();
        assert_eq!(linear_traj_endpoint(&m, &cond, &s, 5).unwrap(), s);
        let traj = LinearTrajectory::new(&model(1), &cond, s.clone(), 5).unwrap();
        assert_eq!(traj.at(1.0), s);
    }

    #[test]
    fn endpoint_gradient_is_identity_with_frozen_offset() {
        let dims = GridDims::cube(4, 1).unwrap();
        let m = model(2);
        let traj = LinearTrajectory::new(&m, &m.condition(1).unwrap(), noise(dims, 3), 4).unwrap();
        let h = 1e-4;
        for i in [0, 17, 40, 63] {
            let mut plus = traj.start().clone();
            plus.data_mut()[i] += h;
            let mut minus = traj.start().clone();
            minus.data_mut()[i] -= h;
            let ep = traj.with_start(plus).unwrap().endpoint();
            let em = traj.with_start(minus).unwrap().endpoint();
            for j in 0..dims.voxels() {
                let fd = (ep.data()[j] - em.data()[j]) / (2.0 * h);
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((fd - expected).abs() <= 1e-5, "d e_{j} / d s_{i} = {fd}");
            }
        }
    }

    #[test]
    fn satisfied_constraint_has_zero_loss_and_gradient() {
        let dims = GridDims::cube(4, 1).unwrap();
        let m = model(3);
        let traj = LinearTrajectory::new(&m, &m.condition(0).unwrap(), noise(dims, 4), 4).unwrap();
        let c = TargetConstraint::new(MaskVolume::ones(dims), traj.endpoint()).unwrap();
        let (loss, grad) = linear_loss(&traj, &c, Parameterization::Direct).unwrap();
        assert_eq!(loss, 0.0);
        let LatentGradient::Direct(g) = grad else {
            panic!()
        };
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unmasked_target_values_are_ignored() {
        let dims = GridDims::cube(6, 1).unwrap();
        let m = model(4);
        let traj = LinearTrajectory::new(&m, &m.condition(0).unwrap(), noise(dims, 5), 3).unwrap();
        let c = constraint(dims);
        let (l0, _) = linear_loss(&traj, &c, Parameterization::Direct).unwrap();
        let mut y = c.target().clone();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            if c.mask().weights()[i] == 0.0 {
                *v += 5.0;
            }
        }
        let c2 = TargetConstraint::new(c.mask().clone(), y).unwrap();
        assert_eq!(
            linear_loss(&traj, &c2, Parameterization::Direct).unwrap().0,
            l0
        );
    }

    #[test]
    fn empty_mask_rejected() {
        let dims = GridDims::cube(3, 1).unwrap();
        let m = model(5);
        let traj = LinearTrajectory::new(&m, &m.condition(0).unwrap(), noise(dims, 6), 2).unwrap();
        let mask = MaskVolume::new(dims, vec![0.0; 27]).unwrap();
        let c = TargetConstraint::new(mask, DenseLatentGrid::zeros(dims)).unwrap();
        assert!(matches!(
            linear_loss(&traj, &c, Parameterization::Spectral),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn spectral_gradient_matches_finite_differences() {
        let dims = GridDims::new(6, 4, 8, 1).unwrap();
        let m = model(6);
        let traj = LinearTrajectory::new(&m, &m.condition(1).unwrap(), noise(dims, 7), 3).unwrap();
        let c = constraint(dims);
        let spec = fft3_forward(traj.start());
        let (_, grad) = linear_loss(&traj, &c, Parameterization::Spectral).unwrap();
        let LatentGradient::Spectral(g) = grad else {
            panic!()
        };
        let loss_at = |x: &SpectralLatent| {
            let t = traj.with_start(fft3_inverse(x).unwrap()).unwrap();
            linear_loss(&t, &c, Parameterization::Direct).unwrap().0
        };
        let mut r = rng::seeded(8);
        let h = 1e-3;
        for _ in 0..20 {
            let i = rand::Rng::random_range(&mut r, 0..spec.coeffs().len());
            for (part, analytic) in [
                (Complex64::new(h, 0.0), g.coeffs()[i].re),
                (Complex64::new(0.0, h), g.coeffs()[i].im),
            ] {
                let mut p = spec.clone();
                p.coeffs_mut()[i] += part;
                let mut q = spec.clone();
                q.coeffs_mut()[i] -= part;
                let fd = (loss_at(&p) - loss_at(&q)) / (2.0 * h);
                let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    rel <= 1e-4 || (fd - analytic).abs() < 1e-9,
                    "coefficient {i}: fd {fd} analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn parameterizations_share_the_loss_value() {
        let dims = GridDims::cube(4, 1).unwrap();
        let m = model(7);
        let traj = LinearTrajectory::new(&m, &m.condition(0).unwrap(), noise(dims, 8), 3).unwrap();
        let c = constraint(GridDims::cube(4, 1).unwrap());
        let a = linear_loss(&traj, &c, Parameterization::Direct).unwrap().0;
        let b = linear_loss(&traj, &c, Parameterization::Spectral)
            .unwrap()
            .0;
        assert_eq!(a, b);
    }

    #[test]
    fn zero_lr_leaves_latent_unchanged() {
        let dims = GridDims::cube(6, 1).unwrap();
        let m = model(8);
        let s = noise(dims, 9);
        for param in [Parameterization::Spectral, Parameterization::Direct] {
            let cfg = OptConfig {
                lr: 0.0,
                max_steps: 4,
                parameterization: param,
                sampler_steps: 3,
                ..OptConfig::default()
            };
            let out = optimize_initial_latent(
                &m,
                &m.condition(0).unwrap(),
                &ToyDecoders::default(),
                &s,
                &constraint(dims),
                &cfg,
            )
            .unwrap();
            assert_eq!(out.latent, s);
            assert!(out.trace.len() <= 4);
            assert!(out
                .trace
                .windows(2)
                .all(|w| w[0].loss == w[1].loss && w[0].dice == w[1].dice));
        }
    }

    #[test]
    fn satisfied_constraint_converges_at_step_zero() {
        let dims = GridDims::cube(5, 1).unwrap();
        let m = model(9);
        let cond = m.condition(1).unwrap();
        let s = noise(dims, 10);
        let end = linear_traj_endpoint(&m, &cond, &s, 3).unwrap();
        let c = TargetConstraint::new(MaskVolume::ones(dims), end).unwrap();
        let cfg = OptConfig {
            sampler_steps: 3,
            ..OptConfig::default()
        };
        let out =
            optimize_initial_latent(&m, &cond, &ToyDecoders::default(), &s, &c, &cfg).unwrap();
        assert_eq!(out.status, OptStatus::Converged(0));
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.trace[0].loss, 0.0);
    }

    #[test]
    fn optimization_reduces_loss_at_moderate_lr() {
        let dims = GridDims::cube(6, 1).unwrap();
        let m = model(10);
        let cfg = OptConfig {
            lr: 0.05,
            max_steps: 15,
            dice_threshold: 1.1,
            sampler_steps: 3,
            parameterization: Parameterization::Direct,
            ..OptConfig::default()
        };
        let out = optimize_initial_latent(
            &m,
            &m.condition(0).unwrap(),
            &ToyDecoders::default(),
            &noise(dims, 11),
            &constraint(dims),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.status, OptStatus::MaxSteps);
        assert_eq!(out.trace.len(), 15);
        assert!(out.trace.last().unwrap().loss < out.trace[0].loss);
    }

    #[test]
    fn spikes_are_detected() {
        let dims = GridDims::cube(2, 1).unwrap();
        let row = |step, loss| TraceRow {
            step,
            loss,
            iou: 0.0,
            dice: 0.0,
        };
        let out = OptOutcome {
            latent: DenseLatentGrid::zeros(dims),
            trace: vec![row(0, 1.0), row(1, 0.5), row(2, 6.0), row(3, f64::NAN)],
            status: OptStatus::MaxSteps,
        };
        assert_eq!(out.spikes(10.0), vec![2, 3]);
        assert!(out.is_unstable());
    }
}
