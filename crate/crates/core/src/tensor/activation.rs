use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => {
                if x < 0.0 {
                    0.0
                } else {
                    x
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    // split on sign so exp never overflows
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    let data = input.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::from_vec(input.shape(), data).expect("shape preserved")
}

/// Backward of [`activation`] given the forward *output*; both derivatives
/// are expressible from it (relu: y > 0, sigmoid: y(1 - y)).
pub fn activation_backward(output: &Tensor, grad_out: &Tensor, kind: Activation) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape(
            "activation_backward",
            "grad_out",
            format!("{:?} vs {:?}", grad_out.shape(), output.shape()),
        ));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| match kind {
            Activation::Relu => {
                if y > 0.0 {
                    g
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => g * y * (1.0 - y),
        })
        .collect();
    Tensor::from_vec(output.shape(), data)
}
