//! Elementwise rectified-flow arithmetic shared by training and sampling.

use crate::error::{Error, Result};
use crate::lattice::{DenseLatentGrid, SparseLatent};

/// Flow time: `t = 1` is pure noise, `t = 0` is data.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FlowTime(f64);

impl FlowTime {
    pub fn new(t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!(
                "flow time {t} outside [0, 1]"
            )));
        }
        Ok(Self(t))
    }

    pub const NOISE: FlowTime = FlowTime(1.0);
    pub const DATA: FlowTime = FlowTime(0.0);

    pub fn get(self) -> f64 {
        self.0
    }
}

/// A latent whose values can be combined elementwise with another latent of
/// the same support.
pub trait Latent: Sized {
    fn values(&self) -> &[f64];
    fn same_support(&self, other: &Self) -> bool;
    fn with_values(&self, values: Vec<f64>) -> Self;
}

impl Latent for DenseLatentGrid {
    fn values(&self) -> &[f64] {
        self.data()
    }

    fn same_support(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        DenseLatentGrid::from_vec_unchecked(self.dims(), values)
    }
}

impl Latent for SparseLatent {
    fn values(&self) -> &[f64] {
        self.features()
    }

    fn same_support(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.keys() == other.keys()
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        SparseLatent::from_sorted(self.dims(), self.keys().to_vec(), values)
    }
}

fn check_support<L: Latent>(a: &L, b: &L, what: &str) -> Result<()> {
    if a.same_support(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{what}: operands have different supports"
        )))
    }
}

pub(crate) fn interpolate_values(s: &[f64], eps: &[f64], t: f64, out: &mut [f64]) {
    for ((o, &a), &e) in out.iter_mut().zip(s).zip(eps) {
        *o = (1.0 - t) * a + t * e;
    }
}

/// `(1 - t) * s + t * eps`.
pub fn interpolate_noisy<L: Latent>(s: &L, eps: &L, t: FlowTime) -> Result<L> {
    check_support(s, eps, "interpolate_noisy")?;
    let mut out = vec![0.0; s.values().len()];
    interpolate_values(s.values(), eps.values(), t.get(), &mut out);
    Ok(s.with_values(out))
}

/// Regression target of the flow-matching loss: `eps - s`.
pub fn flow_matching_target<L: Latent>(s: &L, eps: &L) -> Result<L> {
    check_support(s, eps, "flow_matching_target")?;
    Ok(s.with_values(
        eps.values()
            .iter()
            .zip(s.values())
            .map(|(e, a)| e - a)
            .collect(),
    ))
}

pub(crate) fn euler_values(s: &mut [f64], v: &[f64], dt: f64) {
    for (a, &b) in s.iter_mut().zip(v) {
        *a -= dt * b;
    }
}

/// One Euler step toward data: `s_t - dt * v`.
pub fn euler_step<L: Latent>(s_t: &L, v: &L, dt: f64) -> Result<L> {
    check_support(s_t, v, "euler_step")?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let mut out = s_t.values().to_vec();
    euler_values(&mut out, v.values(), dt);
    Ok(s_t.with_values(out))
}
