use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// A learnable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    /// Logical dims as serialized: 4 for conv weights, 2 for dense weights, 1 for vectors.
    pub dims: Vec<usize>,
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        let shape = storage_shape(&dims);
        let value = Tensor::from_vec(shape, data).expect("parameter data matches dims");
        Parameter {
            name: name.into(),
            dims,
            grad: Tensor::zeros(shape),
            adam_m: Tensor::zeros(shape),
            adam_v: Tensor::zeros(shape),
            value,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Non-learnable per-channel state (batchnorm running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub value: Vec<f32>,
}

/// Maps logical dims onto the 4-D tensor used for storage.
pub(crate) fn storage_shape(dims: &[usize]) -> [usize; 4] {
    match *dims {
        [a, b, c, d] => [a, b, c, d],
        [a, b] => [a, b, 1, 1],
        [a] => [a, 1, 1, 1],
        _ => panic!("unsupported parameter rank {}", dims.len()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferId(usize);

/// Flat, ordered storage for every parameter and buffer of a model. Layers
/// hold ids into it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    buffers: Vec<Buffer>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, param: Parameter) -> ParamId {
        debug_assert!(
            self.params.iter().all(|p| p.name != param.name),
            "duplicate parameter {}",
            param.name
        );
        self.params.push(param);
        ParamId(self.params.len() - 1)
    }

    /// Fan-in scaled Gaussian, `N(0, 2 / fan_in)`.
    pub(crate) fn add_he(
        &mut self,
        name: String,
        dims: Vec<usize>,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let len = dims.iter().product();
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
        let data = (0..len).map(|_| normal.sample(rng)).collect();
        self.add(Parameter::new(name, dims, data))
    }

    pub(crate) fn add_const(&mut self, name: String, len: usize, value: f32) -> ParamId {
        self.add(Parameter::new(name, vec![len], vec![value; len]))
    }

    pub(crate) fn add_buffer(&mut self, name: String, len: usize, value: f32) -> BufferId {
        self.buffers.push(Buffer {
            name,
            value: vec![value; len],
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn buffer(&self, id: BufferId) -> &[f32] {
        &self.buffers[id.0].value
    }

    /// Running mean and variance of one batchnorm, borrowed together.
    pub(crate) fn buffer_pair_mut(&mut self, a: BufferId, b: BufferId) -> (&mut [f32], &mut [f32]) {
        assert!(a.0 < b.0, "buffer pair must be ordered");
        let (lo, hi) = self.buffers.split_at_mut(b.0);
        (&mut lo[a.0].value, &mut hi[0].value)
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[f32]) {
        let g = self.params[id.0].grad.data_mut();
        assert_eq!(g.len(), grad.len(), "gradient length mismatch");
        for (a, b) in g.iter_mut().zip(grad) {
            *a += b;
        }
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer] {
        &mut self.buffers
    }

    pub fn find_param(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn find_param_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }
}
