use super::Tensor;
use crate::error::{Error, Result};

/// Fully-connected map on a pooled `(n, in, 1, 1)` tensor with a row-major
/// `(out, in)` weight matrix; returns `(n, out, 1, 1)`.
pub fn linear(input: &Tensor, weight: &[f32], bias: &[f32], out_features: usize) -> Result<Tensor> {
    let [n, in_features, h, w] = input.shape();
    if (h, w) != (1, 1) {
        return Err(Error::shape(
            "linear",
            "spatial",
            format!("expects a 1x1 map, got {h}x{w}"),
        ));
    }
    if weight.len() != out_features * in_features {
        return Err(Error::shape(
            "linear",
            "weight",
            format!("{} weights for {out_features}x{in_features}", weight.len()),
        ));
    }
    if bias.len() != out_features {
        return Err(Error::shape(
            "linear",
            "bias",
            format!("{} biases for {out_features} outputs", bias.len()),
        ));
    }
    let mut out = Vec::with_capacity(n * out_features);
    for b in 0..n {
        let x = &input.data()[b * in_features..(b + 1) * in_features];
        for (o, &bv) in bias.iter().enumerate() {
            let row = &weight[o * in_features..(o + 1) * in_features];
            out.push(row.iter().zip(x).fold(bv, |acc, (wv, xv)| acc + wv * xv));
        }
    }
    Tensor::from_vec([n, out_features, 1, 1], out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

pub fn linear_backward(input: &Tensor, weight: &[f32], grad_out: &Tensor) -> Result<LinearGrads> {
    let [n, in_features, _, _] = input.shape();
    let out_features = grad_out.c();
    if grad_out.shape() != [n, out_features, 1, 1] || weight.len() != out_features * in_features {
        return Err(Error::shape(
            "linear_backward",
            "grad_out",
            format!(
                "{:?} incompatible with input {:?}",
                grad_out.shape(),
                input.shape()
            ),
        ));
    }
    let mut dx = vec![0.0f32; n * in_features];
    let mut dw = vec![0.0f32; weight.len()];
    let mut db = vec![0.0f32; out_features];
    for b in 0..n {
        let x = &input.data()[b * in_features..(b + 1) * in_features];
        let g = &grad_out.data()[b * out_features..(b + 1) * out_features];
        for (o, &gv) in g.iter().enumerate() {
            db[o] += gv;
            for i in 0..in_features {
                dw[o * in_features + i] += gv * x[i];
                dx[b * in_features + i] += gv * weight[o * in_features + i];
            }
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(input.shape(), dx)?,
        weight: dw,
        bias: db,
    })
}
