use super::{LabelMap, Tensor};
use crate::error::{Error, Result};

fn check(logits: &Tensor, target: &LabelMap, op: &'static str) -> Result<()> {
    let [n, c, h, w] = logits.shape();
    if target.shape() != [n, h, w] {
        return Err(Error::shape(
            op,
            "target",
            format!("target {:?} vs logits {:?}", target.shape(), logits.shape()),
        ));
    }
    if let Some(&bad) = target.data().iter().find(|&&t| t as usize >= c) {
        return Err(Error::ClassOutOfRange {
            op,
            index: bad,
            num_classes: c,
        });
    }
    Ok(())
}

/// Per-pixel softmax over the class axis, returned in logits layout.
fn softmax(logits: &Tensor) -> Tensor {
    let [n, c, h, w] = logits.shape();
    let hw = h * w;
    let mut p = Tensor::zeros(logits.shape());
    let src = logits.data();
    let dst = p.data_mut();
    for b in 0..n {
        for px in 0..hw {
            let at = |k: usize| (b * c + k) * hw + px;
            let max = (0..c).map(|k| src[at(k)]).fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0f32;
            for k in 0..c {
                let e = (src[at(k)] - max).exp();
                dst[at(k)] = e;
                z += e;
            }
            for k in 0..c {
                dst[at(k)] /= z;
            }
        }
    }
    p
}

/// Mean negative log-likelihood of `target` under the per-pixel softmax of `logits`.
pub fn softmax_cross_entropy(logits: &Tensor, target: &LabelMap) -> Result<f32> {
    check(logits, target, "softmax_cross_entropy")?;
    let [n, c, h, w] = logits.shape();
    let hw = h * w;
    let src = logits.data();
    let mut total = 0.0f64;
    for b in 0..n {
        for px in 0..hw {
            let at = |k: usize| (b * c + k) * hw + px;
            let max = (0..c).map(|k| src[at(k)]).fold(f32::NEG_INFINITY, f32::max);
            let z: f64 = (0..c).map(|k| ((src[at(k)] - max) as f64).exp()).sum();
            let t = target.data()[b * hw + px] as usize;
            // log-sum-exp minus the true logit; never negative
            total += z.ln() - (src[at(t)] - max) as f64;
        }
    }
    Ok((total / (n * hw) as f64) as f32)
}

/// Gradient of [`softmax_cross_entropy`]: `(softmax - onehot) / (n h w)`.
pub fn softmax_cross_entropy_backward(logits: &Tensor, target: &LabelMap) -> Result<Tensor> {
    check(logits, target, "softmax_cross_entropy_backward")?;
    let [n, c, h, w] = logits.shape();
    let hw = h * w;
    let inv = 1.0 / (n * hw) as f32;
    let mut g = softmax(logits);
    let d = g.data_mut();
    for b in 0..n {
        for px in 0..hw {
            let t = target.data()[b * hw + px] as usize;
            d[(b * c + t) * hw + px] -= 1.0;
            for k in 0..c {
                d[(b * c + k) * hw + px] *= inv;
            }
        }
    }
    Ok(g)
}
