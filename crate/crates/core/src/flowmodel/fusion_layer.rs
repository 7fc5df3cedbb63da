//! Affine mixing of a noisy latent with condition channels.

use crate::error::{Error, Result};

/// `out = W [noise; cond] + b`, with `W` of shape `c x (c + cond_channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionLayer {
    channels: usize,
    cond_channels: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl FusionLayer {
    pub fn zeros(channels: usize, cond_channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument(
                "fusion layer needs >= 1 channel".into(),
            ));
        }
        Ok(Self {
            channels,
            cond_channels,
            weight: vec![0.0; channels * (channels + cond_channels)],
            bias: vec![0.0; channels],
        })
    }

    /// Identity on the noise channels, zero on the condition channels.
    pub fn identity(channels: usize, cond_channels: usize) -> Result<Self> {
        Ok(Self::zeros(channels, cond_channels)?.init_identity())
    }

    pub fn init_identity(mut self) -> Self {
        let cols = self.cols();
        self.weight.iter_mut().for_each(|w| *w = 0.0);
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        for i in 0..self.channels {
            self.weight[i * cols + i] = 1.0;
        }
        self
    }

    pub fn from_parts(
        channels: usize,
        cond_channels: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let layer = Self::zeros(channels, cond_channels)?;
        if weight.len() != layer.weight.len() || bias.len() != channels {
            return Err(Error::ShapeMismatch(format!(
                "fusion layer {channels}x{} needs {} weights and {channels} biases",
                channels + cond_channels,
                layer.weight.len()
            )));
        }
        Ok(Self {
            weight,
            bias,
            ..layer
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn cond_channels(&self) -> usize {
        self.cond_channels
    }

    pub fn cols(&self) -> usize {
        self.channels + self.cond_channels
    }

    /// Row-major `c x (c + cond_channels)`.
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Weights followed by biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weight.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "fusion layer has {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let n = self.weight.len();
        self.weight.copy_from_slice(&params[..n]);
        self.bias.copy_from_slice(&params[n..]);
        Ok(())
    }

    pub fn apply_fusion(&self, noise: &[f64], cond: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != self.channels || cond.len() != self.cond_channels {
            return Err(Error::ShapeMismatch(format!(
                "fusion layer expects {}+{} channels, got {}+{}",
                self.channels,
                self.cond_channels,
                noise.len(),
                cond.len()
            )));
        }
        let mut out = vec![0.0; self.channels];
        self.apply_into(noise, cond, &mut out);
        Ok(out)
    }

    #[inline]
    pub(crate) fn apply_into(&self, noise: &[f64], cond: &[f64], out: &mut [f64]) {
        let cols = self.cols();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weight[i * cols..(i + 1) * cols];
            let mut acc = self.bias[i];
            for (w, x) in row[..self.channels].iter().zip(noise) {
                acc += w * x;
            }
            for (w, x) in row[self.channels..].iter().zip(cond) {
                acc += w * x;
            }
            *o = acc;
        }
    }

    /// Accumulates the parameter gradient (weights then biases) for one
    /// application given `grad_out`.
    #[inline]
    pub(crate) fn backward_params(
        &self,
        noise: &[f64],
        cond: &[f64],
        grad_out: &[f64],
        grad: &mut [f64],
    ) {
        let cols = self.cols();
        let nw = self.weight.len();
        for (i, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut grad[i * cols..(i + 1) * cols];
            for (r, x) in row[..self.channels].iter_mut().zip(noise) {
                *r += g * x;
            }
            for (r, x) in row[self.channels..].iter_mut().zip(cond) {
                *r += g * x;
            }
            grad[nw + i] += g;
        }
    }
}
