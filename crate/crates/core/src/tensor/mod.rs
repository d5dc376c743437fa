//! Dense NCHW tensors and the differentiable operators the network is built from.
//!
//! Every operator is a pure function with a matching `*_backward` that maps the
//! upstream gradient to gradients of each input. Backward passes are chained by
//! hand in the model; there is no tape.

mod activation;
pub(crate) mod batchnorm;
mod concat;
mod conv;
mod linear;
mod loss;
mod pool;
mod resize;
mod scale;

pub use activation::{activation, activation_backward, Activation};
pub use batchnorm::{
    batchnorm, batchnorm_backward, BatchNormCache, BatchNormGrads, BatchNormState, Mode,
    BN_EPSILON, BN_MOMENTUM,
};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_backward, conv_output_dim, ConvGrads, ConvSpec};
pub use linear::{linear, linear_backward, LinearGrads};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_backward};
pub use pool::{global_avg_pool, global_avg_pool_backward};
pub use resize::{bilinear_resize, bilinear_resize_backward};
pub use scale::{channel_scale, channel_scale_backward};

use crate::error::{Error, Result};

/// `(n, c, h, w)`.
pub type Shape = [usize; 4];

/// A dense 4-D array of `f32` in row-major NCHW order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor dims must be positive, got {shape:?}"
        );
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(
                "tensor",
                "dims",
                format!("{shape:?} has a zero dim"),
            ));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(
                "tensor",
                "data length",
                format!(
                    "{} values for shape {shape:?} ({expected} expected)",
                    data.len()
                ),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
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

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    /// Contiguous `h * w` plane of one (sample, channel).
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    /// Same data, new shape with equal element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    /// Stacks single-sample tensors along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero tensors".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut n = 0;
        for t in items {
            if t.shape[1..] != [c, h, w] {
                return Err(Error::shape(
                    "stack",
                    "c/h/w",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec([n, c, h, w], data)
    }

    /// Returns the `i`-th sample as a batch of one.
    pub fn sample(&self, i: usize) -> Tensor {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        Tensor {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[i * per..(i + 1) * per].to_vec(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled(&self, factor: f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// NaN if any pair differs by NaN.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, |m: f32, d| {
                if m.is_nan() || d <= m {
                    m
                } else if d > m {
                    d
                } else {
                    f32::NAN
                }
            })
    }
}

/// Per-pixel class indices, shape `(n, h, w)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    shape: [usize; 3],
    data: Vec<u32>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u32>) -> Result<Self> {
        if n * h * w == 0 || data.len() != n * h * w {
            return Err(Error::shape(
                "label map",
                "data length",
                format!("{} labels for ({n}, {h}, {w})", data.len()),
            ));
        }
        Ok(LabelMap {
            shape: [n, h, w],
            data,
        })
    }

    pub fn filled(n: usize, h: usize, w: usize, class: u32) -> Self {
        LabelMap {
            shape: [n, h, w],
            data: vec![class; n * h * w],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    pub fn sample(&self, i: usize) -> LabelMap {
        let per = self.shape[1] * self.shape[2];
        LabelMap {
            shape: [1, self.shape[1], self.shape[2]],
            data: self.data[i * per..(i + 1) * per].to_vec(),
        }
    }

    pub fn stack(items: &[&LabelMap]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero label maps".into()))?;
        let [_, h, w] = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for m in items {
            if m.shape[1..] != [h, w] {
                return Err(Error::shape(
                    "stack",
                    "h/w",
                    format!("{:?} vs {:?}", m.shape, first.shape),
                ));
            }
            n += m.shape[0];
            data.extend_from_slice(&m.data);
        }
        LabelMap::new(n, h, w, data)
    }

    /// Per-pixel argmax over the class axis of `logits`. Ties resolve to the lower class.
    pub fn argmax(logits: &Tensor) -> LabelMap {
        let [n, c, h, w] = logits.shape();
        let hw = h * w;
        let mut data = vec![0u32; n * hw];
        for b in 0..n {
            for p in 0..hw {
                let mut best = 0;
                let mut best_v = logits.data()[(b * c) * hw + p];
                for k in 1..c {
                    let v = logits.data()[(b * c + k) * hw + p];
                    if v > best_v {
                        best = k;
                        best_v = v;
                    }
                }
                data[b * hw + p] = best as u32;
            }
        }
        LabelMap {
            shape: [n, h, w],
            data,
        }
    }
}
