//! Three-dimensional discrete Fourier transform of dense latents.
//!
//! Forward is unnormalized, inverse carries the `1/N` factor, and each
//! channel is transformed independently.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{DenseLatentGrid, GridDims};

/// Fourier coefficients of a real dense latent, laid out like the grid
/// (row-major positions, channels innermost).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLatent {
    dims: GridDims,
    coeffs: Vec<Complex64>,
}

impl SpectralLatent {
    pub fn new(dims: GridDims, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != dims.voxels() * dims.c {
            return Err(Error::ShapeMismatch(format!(
                "spectrum {:?} needs {} coefficients, got {}",
                dims,
                dims.voxels() * dims.c,
                coeffs.len()
            )));
        }
        Ok(Self { dims, coeffs })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Index of the coefficient at frequency `-k` for the one at `i`.
    pub fn conjugate_index(&self, i: usize) -> usize {
        let c = self.dims.c;
        let [z, y, x] = self.dims.position(i / c);
        let neg = |k: usize, n: usize| (n - k) % n;
        self.dims.voxel_index([
            neg(z, self.dims.d),
            neg(y, self.dims.h),
            neg(x, self.dims.w),
        ]) * c
            + i % c
    }

    /// Largest `|X[k] - conj(X[-k])|`; zero for the spectrum of a real field.
    pub fn hermitian_residual(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|i| (self.coeffs[i] - self.coeffs[self.conjugate_index(i)].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Replaces each coefficient by the mean of itself and its conjugate
    /// partner, making the inverse exactly real.
    pub fn symmetrize(&mut self) {
        let sym: Vec<Complex64> = (0..self.coeffs.len())
            .map(|i| 0.5 * (self.coeffs[i] + self.coeffs[self.conjugate_index(i)].conj()))
            .collect();
        self.coeffs = sym;
    }

    pub fn squared_norm(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `Re sum conj(a) b`, the real inner product of the coefficient vectors.
    pub fn inner(&self, other: &SpectralLatent) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }
}

fn transform(dims: GridDims, data: &mut [Complex64], inverse: bool) {
    let shape = [dims.d, dims.h, dims.w];
    let c = dims.c;
    let mut planner = FftPlanner::<f64>::new();
    // strides in units of complex entries for axes z, y, x
    let strides = [dims.h * dims.w * c, dims.w * c, c];
    for axis in 0..3 {
        let n = shape[axis];
        if n == 1 {
            continue;
        }
        let fft: Arc<dyn Fft<f64>> = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let stride = strides[axis];
        let lines: Vec<usize> = (0..data.len()).filter(|&i| (i / stride).is_multiple_of(n)).collect();
        let mut buf = vec![Complex64::new(0.0, 0.0); lines.len() * n];
        for (l, &start) in lines.iter().enumerate() {
            for k in 0..n {
                buf[l * n + k] = data[start + k * stride];
            }
        }
        fft.process(&mut buf);
        for (l, &start) in lines.iter().enumerate() {
            for k in 0..n {
                data[start + k * stride] = buf[l * n + k];
            }
        }
    }
}

/// Unnormalized forward transform: `X[k] = sum_n x[n] exp(-2 pi i k.n / N)`.
pub fn fft3_forward(x: &DenseLatentGrid) -> SpectralLatent {
    let dims = x.dims();
    let mut data: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(dims, &mut data, false);
    SpectralLatent { dims, coeffs: data }
}

fn inverse_complex(spec: &SpectralLatent) -> Vec<Complex64> {
    let mut data = spec.coeffs.clone();
    transform(spec.dims, &mut data, true);
    let scale = 1.0 / spec.dims.voxels() as f64;
    data.iter_mut().for_each(|z| *z *= scale);
    data
}

/// Inverse transform, keeping the real part.
pub fn fft3_inverse(spec: &SpectralLatent) -> Result<DenseLatentGrid> {
    let data = inverse_complex(spec);
    DenseLatentGrid::from_vec(spec.dims, data.iter().map(|z| z.re).collect())
}

/// Largest imaginary part left by the inverse transform.
pub fn inverse_imag_residual(spec: &SpectralLatent) -> f64 {
    inverse_complex(spec)
        .iter()
        .map(|z| z.im.abs())
        .fold(0.0, f64::max)
}

/// Adjoint of [`fft3_inverse`] under the real inner products on both sides:
/// `<fft3_inverse(X), g> == <X, fft3_adjoint(g)>`. It is `fft3_forward(g) / N`.
pub fn fft3_adjoint(g: &DenseLatentGrid) -> SpectralLatent {
    let mut out = fft3_forward(g);
    let scale = 1.0 / g.dims().voxels() as f64;
    out.coeffs.iter_mut().for_each(|z| *z *= scale);
    out
}
