use super::Tensor;
use crate::error::{Error, Result};

/// Concatenates along the channel axis, in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        if p.n() != n || p.h() != h || p.w() != w {
            return Err(Error::shape(
                "concat_channels",
                "n/h/w",
                format!("{:?} vs {:?}", p.shape(), first.shape()),
            ));
        }
    }
    let c_total: usize = parts.iter().map(|p| p.c()).sum();
    let mut data = Vec::with_capacity(n * c_total * h * w);
    for b in 0..n {
        for p in parts {
            let per = p.c() * h * w;
            data.extend_from_slice(&p.data()[b * per..(b + 1) * per]);
        }
    }
    Tensor::from_vec([n, c_total, h, w], data)
}

/// Inverse of [`concat_channels`]: splits `grad` into pieces of the given widths.
pub fn split_channels(grad: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let [n, c, h, w] = grad.shape();
    if widths.iter().sum::<usize>() != c {
        return Err(Error::shape(
            "split_channels",
            "channels",
            format!("widths {widths:?} do not sum to {c}"),
        ));
    }
    let hw = h * w;
    let mut out: Vec<Vec<f32>> = widths
        .iter()
        .map(|&k| Vec::with_capacity(n * k * hw))
        .collect();
    for b in 0..n {
        let mut offset = b * c * hw;
        for (piece, &k) in out.iter_mut().zip(widths) {
            piece.extend_from_slice(&grad.data()[offset..offset + k * hw]);
            offset += k * hw;
        }
    }
    out.into_iter()
        .zip(widths)
        .map(|(d, &k)| Tensor::from_vec([n, k, h, w], d))
        .collect()
}
