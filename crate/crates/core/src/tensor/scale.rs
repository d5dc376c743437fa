use super::Tensor;
use crate::error::{Error, Result};

fn check(input: &Tensor, weights: &Tensor) -> Result<()> {
    if weights.shape() != [input.n(), input.c(), 1, 1] {
        return Err(Error::shape(
            "channel_scale",
            "channels",
            format!(
                "weights {:?}, expected {:?}",
                weights.shape(),
                [input.n(), input.c(), 1, 1]
            ),
        ));
    }
    Ok(())
}

/// Multiplies every `(h, w)` plane of `input` by its per-(sample, channel) weight.
pub fn channel_scale(input: &Tensor, weights: &Tensor) -> Result<Tensor> {
    check(input, weights)?;
    let mut out = input.clone();
    let c = input.c();
    for b in 0..input.n() {
        for ch in 0..c {
            let s = weights.data()[b * c + ch];
            out.plane_mut(b, ch).iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(out)
}

/// Returns `(d input, d weights)`.
pub fn channel_scale_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    check(input, weights)?;
    if grad_out.shape() != input.shape() {
        return Err(Error::shape(
            "channel_scale_backward",
            "grad_out",
            format!("{:?} vs {:?}", grad_out.shape(), input.shape()),
        ));
    }
    let c = input.c();
    let mut dx = grad_out.clone();
    let mut dw = Tensor::zeros(weights.shape());
    for b in 0..input.n() {
        for ch in 0..c {
            let s = weights.data()[b * c + ch];
            dx.plane_mut(b, ch).iter_mut().for_each(|v| *v *= s);
            let dot: f64 = grad_out
                .plane(b, ch)
                .iter()
                .zip(input.plane(b, ch))
                .map(|(&g, &x)| (g * x) as f64)
                .sum();
            dw.data_mut()[b * c + ch] = dot as f32;
        }
    }
    Ok((dx, dw))
}
