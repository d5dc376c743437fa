use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

/// Half-pixel-center source taps: `src = (dst + 0.5) * in / out - 0.5`,
/// clamped to `[0, in - 1]`.
fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: (src - lo as f64) as f32,
            }
        })
        .collect()
}

/// Bilinear resampling of every `(h, w)` plane to `(out_h, out_w)`.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "bilinear_resize target {out_h}x{out_w} is empty"
        )));
    }
    let [n, c, h, w] = input.shape();
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for (oy, y) in ty.iter().enumerate() {
                let r0 = &src[y.lo * w..(y.lo + 1) * w];
                let r1 = &src[y.hi * w..(y.hi + 1) * w];
                for (ox, x) in tx.iter().enumerate() {
                    // lerp form keeps constant planes exactly constant
                    let top = r0[x.lo] + x.frac * (r0[x.hi] - r0[x.lo]);
                    let bot = r1[x.lo] + x.frac * (r1[x.hi] - r1[x.lo]);
                    dst[oy * out_w + ox] = top + y.frac * (bot - top);
                }
            }
        }
    }
    Ok(out)
}

/// Scatters `grad_out` back through the same four bilinear weights.
pub fn bilinear_resize_backward(input_shape: [usize; 4], grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input_shape;
    let [gn, gc, out_h, out_w] = grad_out.shape();
    if (gn, gc) != (n, c) {
        return Err(Error::shape(
            "bilinear_resize_backward",
            "n/c",
            format!("{:?} vs input {:?}", grad_out.shape(), input_shape),
        ));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(grad_out.clone());
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut dx = Tensor::zeros(input_shape);
    for b in 0..n {
        for ch in 0..c {
            let g = grad_out.plane(b, ch);
            let dst = dx.plane_mut(b, ch);
            for (oy, y) in ty.iter().enumerate() {
                for (ox, x) in tx.iter().enumerate() {
                    let gv = g[oy * out_w + ox];
                    let top = gv * (1.0 - y.frac);
                    let bot = gv * y.frac;
                    dst[y.lo * w + x.lo] += top * (1.0 - x.frac);
                    dst[y.lo * w + x.hi] += top * x.frac;
                    dst[y.hi * w + x.lo] += bot * (1.0 - x.frac);
                    dst[y.hi * w + x.hi] += bot * x.frac;
                }
            }
        }
    }
    Ok(dx)
}
