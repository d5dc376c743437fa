use super::Tensor;
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution. Weights live in a `(out, in, k, k)` tensor
/// passed alongside.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Size-preserving padding at stride 1: `dilation` for 3x3 kernels, 0 for 1x1.
    pub fn same(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    /// Output `(h, w)` for an input of `(h, w)`, or `None` when either is empty.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_output_dim(h, self.kernel, self.stride, self.dilation, self.padding)?,
            conv_output_dim(w, self.kernel, self.stride, self.dilation, self.padding)?,
        ))
    }

    fn validate(
        &self,
        input: &Tensor,
        weight: &Tensor,
        bias: Option<&[f32]>,
    ) -> Result<(usize, usize)> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::shape(
                "conv2d",
                "spec",
                format!("kernel/stride/dilation must be positive: {self:?}"),
            ));
        }
        if input.c() != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                "input channels",
                format!(
                    "input has {} channels, spec expects {}",
                    input.c(),
                    self.in_channels
                ),
            ));
        }
        if weight.shape() != self.weight_shape() {
            return Err(Error::shape(
                "conv2d",
                "weight",
                format!(
                    "weight {:?}, spec expects {:?}",
                    weight.shape(),
                    self.weight_shape()
                ),
            ));
        }
        if let Some(b) = bias {
            if b.len() != self.out_channels {
                return Err(Error::shape(
                    "conv2d",
                    "bias",
                    format!(
                        "{} bias values for {} output channels",
                        b.len(),
                        self.out_channels
                    ),
                ));
            }
        }
        let oh = conv_output_dim(
            input.h(),
            self.kernel,
            self.stride,
            self.dilation,
            self.padding,
        )
        .ok_or_else(|| {
            Error::shape(
                "conv2d",
                "height",
                format!("input height {} too small for {self:?}", input.h()),
            )
        })?;
        let ow = conv_output_dim(
            input.w(),
            self.kernel,
            self.stride,
            self.dilation,
            self.padding,
        )
        .ok_or_else(|| {
            Error::shape(
                "conv2d",
                "width",
                format!("input width {} too small for {self:?}", input.w()),
            )
        })?;
        Ok((oh, ow))
    }
}

/// `floor((size + 2p - d(k-1) - 1) / s) + 1`, or `None` if that is below 1.
pub fn conv_output_dim(
    size: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Option<usize> {
    let extent = dilation * (kernel - 1) + 1;
    let padded = size + 2 * padding;
    if padded < extent || stride == 0 {
        return None;
    }
    Some((padded - extent) / stride + 1)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
}

// Output columns processed per tile; keeps the active im2col slab in cache.
const TILE: usize = 128;

struct Geometry {
    spec: ConvSpec,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.spec.in_channels * self.spec.kernel * self.spec.kernel
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one sample into a `(in*k*k, oh*ow)` matrix; padding taps are zero.
    fn im2col(&self, x: &[f32], col: &mut [f32]) {
        let ConvSpec {
            kernel: k,
            stride,
            dilation,
            padding,
            ..
        } = self.spec;
        let p = self.cols();
        for ci in 0..self.spec.in_channels {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..self.oh {
                        let iy = (oy * stride + ky * dilation) as isize - padding as isize;
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx * dilation) as isize - padding as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a `(in*k*k, oh*ow)` column gradient back onto one sample.
    fn col2im(&self, col: &[f32], dx: &mut [f32]) {
        let ConvSpec {
            kernel: k,
            stride,
            dilation,
            padding,
            ..
        } = self.spec;
        let p = self.cols();
        for ci in 0..self.spec.in_channels {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..self.oh {
                        let iy = (oy * stride + ky * dilation) as isize - padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, g) in row[oy * self.ow..(oy + 1) * self.ow].iter().enumerate() {
                            let ix = (ox * stride + kx * dilation) as isize - padding as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation of an NCHW batch.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let (oh, ow) = spec.validate(input, weight, bias)?;
    let geo = Geometry {
        spec: *spec,
        h: input.h(),
        w: input.w(),
        oh,
        ow,
    };
    let (n, rows, cols) = (input.n(), geo.rows(), geo.cols());
    let co_n = spec.out_channels;
    let in_len = spec.in_channels * geo.h * geo.w;
    let wdata = weight.data();

    let mut out = Tensor::zeros([n, co_n, oh, ow]);
    let mut col = vec![0.0f32; rows * cols];
    let mut acc = [0.0f32; TILE];
    for b in 0..n {
        geo.im2col(&input.data()[b * in_len..(b + 1) * in_len], &mut col);
        let out_b = &mut out.data_mut()[b * co_n * cols..(b + 1) * co_n * cols];
        for p0 in (0..cols).step_by(TILE) {
            let t = TILE.min(cols - p0);
            for co in 0..co_n {
                let acc = &mut acc[..t];
                acc.fill(bias.map_or(0.0, |bv| bv[co]));
                let wrow = &wdata[co * rows..(co + 1) * rows];
                for (r, &wv) in wrow.iter().enumerate() {
                    let src = &col[r * cols + p0..r * cols + p0 + t];
                    for (a, &s) in acc.iter_mut().zip(src) {
                        *a += wv * s;
                    }
                }
                out_b[co * cols + p0..co * cols + p0 + t].copy_from_slice(acc);
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv2d` w.r.t. input, weight, and (when `with_bias`) bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    with_bias: bool,
) -> Result<ConvGrads> {
    let (oh, ow) = spec.validate(input, weight, None)?;
    if grad_out.shape() != [input.n(), spec.out_channels, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            "grad_out",
            format!(
                "{:?}, expected {:?}",
                grad_out.shape(),
                [input.n(), spec.out_channels, oh, ow]
            ),
        ));
    }
    let geo = Geometry {
        spec: *spec,
        h: input.h(),
        w: input.w(),
        oh,
        ow,
    };
    let (n, rows, cols) = (input.n(), geo.rows(), geo.cols());
    let co_n = spec.out_channels;
    let in_len = spec.in_channels * geo.h * geo.w;
    let wdata = weight.data();
    let gdata = grad_out.data();

    let mut dx = Tensor::zeros(input.shape());
    let mut dw = vec![0.0f32; weight.len()];
    let mut db = with_bias.then(|| vec![0.0f32; co_n]);
    let mut col = vec![0.0f32; rows * cols];
    let mut dcol = vec![0.0f32; rows * cols];
    let mut acc = [0.0f32; TILE];

    for b in 0..n {
        let g_b = &gdata[b * co_n * cols..(b + 1) * co_n * cols];
        geo.im2col(&input.data()[b * in_len..(b + 1) * in_len], &mut col);

        for co in 0..co_n {
            let g_row = &g_b[co * cols..(co + 1) * cols];
            if let Some(db) = db.as_mut() {
                db[co] += g_row.iter().sum::<f32>();
            }
            for r in 0..rows {
                let c_row = &col[r * cols..(r + 1) * cols];
                let dot: f32 = g_row.iter().zip(c_row).map(|(g, c)| g * c).sum();
                dw[co * rows + r] += dot;
            }
        }

        for p0 in (0..cols).step_by(TILE) {
            let t = TILE.min(cols - p0);
            for r in 0..rows {
                let acc = &mut acc[..t];
                acc.fill(0.0);
                for co in 0..co_n {
                    let wv = wdata[co * rows + r];
                    let src = &g_b[co * cols + p0..co * cols + p0 + t];
                    for (a, &g) in acc.iter_mut().zip(src) {
                        *a += wv * g;
                    }
                }
                dcol[r * cols + p0..r * cols + p0 + t].copy_from_slice(acc);
            }
        }
        geo.col2im(&dcol, &mut dx.data_mut()[b * in_len..(b + 1) * in_len]);
    }

    Ok(ConvGrads {
        input: dx,
        weight: Tensor::from_vec(weight.shape(), dw)?,
        bias: db,
    })
}
