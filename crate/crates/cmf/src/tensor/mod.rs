//! Dense tensor container and the forward kernels used by the rest of the
//! crate: 3D convolution, 3D transposed convolution, pointwise 2D
//! convolution, sigmoid, and elementwise products.
//!
//! Everything is 32-bit floats in row-major order with the last dimension
//! contiguous. Reduction loops accumulate in 64-bit with a fixed term order
//! (kw fastest, then kh, kd, c_in), and parallelism only ever splits work
//! across independent output elements, so results are bit-identical across
//! runs and thread counts.

mod conv;
mod io;

pub use conv::{conv3d, conv3d_output_dims, pointwise_conv2d, transposed_conv3d, Conv3dSpec};
pub use io::{decode_cmft, encode_cmft, read_cmft, write_cmft, CMFT_MAGIC, CMFT_VERSION};

use rand::Rng;

use crate::error::{CmfError, Result};

/// Maximum tensor rank. Pipeline data is rank 1-4; rank 5 exists solely for
/// 3D convolution weights laid out as `[c_out, c_in, kd, kh, kw]`.
pub const MAX_RANK: usize = 5;

/// Dense row-major f32 tensor with an explicit dimension list.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

pub(crate) fn dims_str(dims: &[usize]) -> String {
    let parts: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    parts.join("x")
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(CmfError::invalid(
                "tensor",
                format!("rank must be 1..={MAX_RANK}, got {}", dims.len()),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(CmfError::invalid(
                "tensor",
                format!("all dimensions must be positive, got {}", dims_str(&dims)),
            ));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(CmfError::invalid(
                "tensor",
                format!(
                    "dims {} describe {expected} elements but {} were supplied",
                    dims_str(&dims),
                    data.len()
                ),
            ));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        Tensor::new(dims.to_vec(), vec![0.0; n])
    }

    pub fn filled(dims: &[usize], value: f32) -> Result<Self> {
        let n: usize = dims.iter().product();
        Tensor::new(dims.to_vec(), vec![value; n])
    }

    /// Deterministic uniform fill in `[lo, hi)` from the caller's RNG.
    pub fn random_uniform<R: Rng>(dims: &[usize], lo: f32, hi: f32, rng: &mut R) -> Result<Self> {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new(dims.to_vec(), data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Element lookup by multi-index; intended for tests and small tensors.
    pub fn at(&self, idx: &[usize]) -> f32 {
        assert_eq!(idx.len(), self.dims.len(), "index rank mismatch");
        let mut flat = 0usize;
        for (i, (&ix, &d)) in idx.iter().zip(&self.dims).enumerate() {
            assert!(ix < d, "index {ix} out of range for axis {i} (dim {d})");
            flat = flat * d + ix;
        }
        self.data[flat]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        self.map(|x| x * factor)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(CmfError::shape(
                "add",
                format!("{} vs {}", dims_str(&self.dims), dims_str(&other.dims)),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            dims: self.dims.clone(),
            data,
        })
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Swap the first two axes of a rank-4 tensor. Used to move plane-sweep
    /// volumes between the `D x C x H x W` storage layout and the
    /// channels-first `C x D x H x W` layout the 3D kernels expect.
    pub fn swap_axes01(&self) -> Result<Tensor> {
        if self.rank() != 4 {
            return Err(CmfError::shape(
                "swap_axes01",
                format!("expected rank 4, got {}", dims_str(&self.dims)),
            ));
        }
        let (a, b, h, w) = (self.dims[0], self.dims[1], self.dims[2], self.dims[3]);
        let plane = h * w;
        let mut out = vec![0.0f32; self.data.len()];
        for i in 0..a {
            for j in 0..b {
                let src = &self.data[(i * b + j) * plane..][..plane];
                out[(j * a + i) * plane..][..plane].copy_from_slice(src);
            }
        }
        Tensor::new(vec![b, a, h, w], out)
    }

    /// Concatenate two rank-4 tensors along axis 0 (the channel axis).
    pub fn concat_axis0(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 4 || other.rank() != 4 || self.dims[1..] != other.dims[1..] {
            return Err(CmfError::shape(
                "concat_axis0",
                format!("{} vs {}", dims_str(&self.dims), dims_str(&other.dims)),
            ));
        }
        let mut dims = self.dims.clone();
        dims[0] += other.dims[0];
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor::new(dims, data)
    }
}

/// Elementwise logistic sigmoid, `1 / (1 + exp(-x))`.
pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(|x| 1.0 / (1.0 + (-x).exp()))
}

/// Elementwise leaky rectifier.
pub fn leaky_relu(input: &Tensor, negative_slope: f32) -> Tensor {
    input.map(|x| if x >= 0.0 { x } else { negative_slope * x })
}

/// Hadamard (elementwise) product.
///
/// Accepts identical shapes, or a rank-4 `a` of `C x D x H x W` with a rank-3
/// `b` of `C x H x W`, in which case `b` is broadcast across the depth axis.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims == b.dims {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect();
        return Tensor::new(a.dims.clone(), data);
    }
    if a.rank() == 4
        && b.rank() == 3
        && a.dims[0] == b.dims[0]
        && a.dims[2] == b.dims[1]
        && a.dims[3] == b.dims[2]
    {
        let (c, d, h, w) = (a.dims[0], a.dims[1], a.dims[2], a.dims[3]);
        let plane = h * w;
        let mut out = Vec::with_capacity(a.data.len());
        for ci in 0..c {
            let weights = &b.data[ci * plane..][..plane];
            for di in 0..d {
                let src = &a.data[(ci * d + di) * plane..][..plane];
                out.extend(src.iter().zip(weights).map(|(&x, &y)| x * y));
            }
        }
        return Tensor::new(a.dims.clone(), out);
    }
    Err(CmfError::shape(
        "hadamard",
        format!(
            "{} not compatible with {}",
            dims_str(&a.dims),
            dims_str(&b.dims)
        ),
    ))
}
