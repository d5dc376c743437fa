use super::Tensor;
use crate::error::{Error, Result};

/// Mean over each `(h, w)` plane; output shape `(n, c, 1, 1)`.
pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let [n, c, h, w] = input.shape();
    let inv = 1.0 / (h * w) as f64;
    let mut data = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            let s: f64 = input.plane(b, ch).iter().map(|&v| v as f64).sum();
            data.push((s * inv) as f32);
        }
    }
    Tensor::from_vec([n, c, 1, 1], data).expect("pooled shape")
}

/// Spreads each pooled gradient uniformly, `1 / (h * w)` per position.
pub fn global_avg_pool_backward(input_shape: [usize; 4], grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input_shape;
    if grad_out.shape() != [n, c, 1, 1] {
        return Err(Error::shape(
            "global_avg_pool_backward",
            "grad_out",
            format!("{:?}, expected {:?}", grad_out.shape(), [n, c, 1, 1]),
        ));
    }
    let inv = 1.0 / (h * w) as f32;
    let mut dx = Tensor::zeros(input_shape);
    for b in 0..n {
        for ch in 0..c {
            let g = grad_out.data()[b * c + ch] * inv;
            dx.plane_mut(b, ch).fill(g);
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_one_to_four() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).data(), &[2.5]);
    }

    #[test]
    fn constant_input_and_shape() {
        let y = global_avg_pool(&Tensor::full([2, 3, 5, 7], -1.5));
        assert_eq!(y.shape(), [2, 3, 1, 1]);
        assert!(y.data().iter().all(|&v| v == -1.5));
    }

    #[test]
    fn backward_is_uniform() {
        let g = Tensor::from_vec([1, 2, 1, 1], vec![4.0, 8.0]).unwrap();
        let dx = global_avg_pool_backward([1, 2, 2, 2], &g).unwrap();
        assert_eq!(dx.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }
}
