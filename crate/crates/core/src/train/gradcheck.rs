//! Central finite differences against every analytic backward.
//!
//! Each operator check draws seeded random inputs and a random projection `r`,
//! differentiates the scalar `sum(op(x) * r)`, and compares sampled coordinates.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::tensor::{
    activation, activation_backward, batchnorm, batchnorm_backward, bilinear_resize,
    bilinear_resize_backward, channel_scale, channel_scale_backward, concat_channels, conv2d,
    conv2d_backward, global_avg_pool, global_avg_pool_backward, linear, linear_backward,
    softmax_cross_entropy, softmax_cross_entropy_backward, split_channels, Activation,
    BatchNormState, ConvGrads, ConvSpec, LabelMap, Tensor,
};

pub const GRADCHECK_STEP: f32 = 1e-2;
pub const GRADCHECK_REL_TOL: f64 = 1e-2;
pub const GRADCHECK_ABS_TOL: f64 = 1e-3;
const MIN_COORDINATES: usize = 20;

/// Result for one operator.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub coordinates: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// Coordinates outside both tolerances.
    pub failures: usize,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.coordinates >= MIN_COORDINATES
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<OpCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(OpCheck::passed)
    }

    pub fn get(&self, name: &str) -> Option<&OpCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("operator\tcoords\tmax_abs_err\tmax_rel_err\tstatus\n");
        for c in &self.checks {
            writeln!(
                out,
                "{}\t{}\t{:.3e}\t{:.3e}\t{}",
                c.name,
                c.coordinates,
                c.max_abs_error,
                c.max_rel_error,
                if c.passed() { "PASS" } else { "FAIL" }
            )
            .unwrap();
        }
        out
    }
}

/// Settings for [`gradcheck`]. `conv_backward_hook` lets tests corrupt the
/// analytic conv gradients seen by the conv2d check.
#[derive(Debug, Clone)]
pub struct Gradcheck {
    pub model: ModelConfig,
    pub seed: u64,
    pub coordinates: usize,
    pub conv_backward_hook: Option<fn(&mut ConvGrads)>,
}

impl Gradcheck {
    /// Reduced model: widths (4, 8, 8), r = 4, one 3x16x16 input.
    pub fn new(seed: u64) -> Self {
        Gradcheck {
            model: ModelConfig::default()
                .with_widths([4, 8, 8])
                .with_reduction(4),
            seed,
            coordinates: 24,
            conv_backward_hook: None,
        }
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..len).map(|_| StandardNormal.sample(rng)).collect(),
    )
    .unwrap()
}

fn dot(a: &Tensor, r: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(r.data())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum()
}

/// Compares `analytic[i]` against central differences of `loss` at sampled
/// coordinates of `inputs`. `skip(input, index, value)` excludes coordinates
/// up front; `loss` returning `None` excludes the coordinate being probed.
fn compare(
    name: &'static str,
    rng: &mut ChaCha8Rng,
    coordinates: usize,
    inputs: &[Tensor],
    analytic: &[Tensor],
    loss: impl Fn(&[Tensor]) -> Result<Option<f64>>,
    skip: impl Fn(usize, usize, f32) -> bool,
) -> Result<OpCheck> {
    let mut check = OpCheck {
        name,
        coordinates: 0,
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        failures: 0,
    };
    let mut work = inputs.to_vec();
    let mut attempts = 0;
    while check.coordinates < coordinates && attempts < coordinates * 50 {
        attempts += 1;
        // Cycle through inputs so every one is covered.
        let t = attempts % inputs.len();
        let i = rng.gen_range(0..inputs[t].len());
        let x0 = inputs[t].data()[i];
        if skip(t, i, x0) {
            continue;
        }
        work[t].data_mut()[i] = x0 + GRADCHECK_STEP;
        let plus = loss(&work)?;
        work[t].data_mut()[i] = x0 - GRADCHECK_STEP;
        let minus = loss(&work)?;
        work[t].data_mut()[i] = x0;
        let (Some(plus), Some(minus)) = (plus, minus) else {
            continue;
        };
        let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP as f64);
        let a = analytic[t].data()[i] as f64;
        let abs = (a - numeric).abs();
        let scale = a.abs().max(numeric.abs());
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        check.coordinates += 1;
        check.max_abs_error = check.max_abs_error.max(abs);
        check.max_rel_error = check.max_rel_error.max(rel);
        if !(rel <= GRADCHECK_REL_TOL || abs <= GRADCHECK_ABS_TOL) {
            check.failures += 1;
        }
    }
    Ok(check)
}

fn no_skip(_: usize, _: usize, _: f32) -> bool {
    false
}

fn vector(t: &Tensor) -> Tensor {
    Tensor::from_vec([t.len(), 1, 1, 1], t.data().to_vec()).unwrap()
}

fn check_conv(rng: &mut ChaCha8Rng, n: usize, hook: Option<fn(&mut ConvGrads)>) -> Result<OpCheck> {
    let spec = ConvSpec {
        in_channels: 3,
        out_channels: 4,
        kernel: 3,
        stride: 2,
        dilation: 2,
        padding: 2,
    };
    let x = randn(rng, [2, 3, 7, 7]);
    let w = randn(rng, spec.weight_shape());
    let b = randn(rng, [4, 1, 1, 1]);
    let (oh, ow) = spec.output_hw(7, 7).unwrap();
    let r = randn(rng, [2, 4, oh, ow]);
    let mut g = conv2d_backward(&x, &w, &spec, &r, true)?;
    if let Some(hook) = hook {
        hook(&mut g);
    }
    let analytic = [
        g.input,
        g.weight,
        Tensor::from_vec([4, 1, 1, 1], g.bias.unwrap())?,
    ];
    compare(
        "conv2d",
        rng,
        n,
        &[x, w, b],
        &analytic,
        |t| {
            Ok(Some(dot(
                &conv2d(&t[0], &t[1], Some(t[2].data()), &spec)?,
                &r,
            )))
        },
        no_skip,
    )
}

fn check_batchnorm(rng: &mut ChaCha8Rng, n: usize) -> Result<OpCheck> {
    let x = randn(rng, [2, 3, 4, 4]);
    let gamma = randn(rng, [3, 1, 1, 1]);
    let beta = randn(rng, [3, 1, 1, 1]);
    let r = randn(rng, x.shape());
    let run = |x: &Tensor, gamma: &Tensor, beta: &Tensor| {
        let mut st = BatchNormState::new(3);
        st.gamma = gamma.data().to_vec();
        st.beta = beta.data().to_vec();
        batchnorm(x, &mut st)
    };
    let (_, cache) = run(&x, &gamma, &beta)?;
    let g = batchnorm_backward(&cache, gamma.data(), &r)?;
    let analytic = [
        g.input,
        Tensor::from_vec([3, 1, 1, 1], g.gamma)?,
        Tensor::from_vec([3, 1, 1, 1], g.beta)?,
    ];
    compare(
        "batchnorm",
        rng,
        n,
        &[x, gamma, beta],
        &analytic,
        |t| Ok(Some(dot(&run(&t[0], &t[1], &t[2])?.0, &r))),
        no_skip,
    )
}

fn check_activation(
    rng: &mut ChaCha8Rng,
    n: usize,
    kind: Activation,
    name: &'static str,
) -> Result<OpCheck> {
    let x = randn(rng, [2, 4, 8, 8]);
    let r = randn(rng, x.shape());
    let y = activation(&x, kind);
    let dx = activation_backward(&y, &r, kind)?;
    // A central difference straddling the ReLU kink is meaningless.
    let near_kink =
        |_: usize, _: usize, v: f32| kind == Activation::Relu && v.abs() < 2.0 * GRADCHECK_STEP;
    compare(
        name,
        rng,
        n,
        &[x],
        &[dx],
        |t| Ok(Some(dot(&activation(&t[0], kind), &r))),
        near_kink,
    )
}

fn check_pool(rng: &mut ChaCha8Rng, n: usize) -> Result<OpCheck> {
    let x = randn(rng, [2, 4, 5, 3]);
    let r = randn(rng, [2, 4, 1, 1]);
    let dx = global_avg_pool_backward(x.shape(), &r)?;
    compare(
        "global_avg_pool",
        rng,
        n,
        &[x],
        &[dx],
        |t| Ok(Some(dot(&global_avg_pool(&t[0]), &r))),
        no_skip,
    )
}

fn check_resize(rng: &mut ChaCha8Rng, n: usize) -> Result<OpCheck> {
    let x = randn(rng, [1, 2, 4, 5]);
    let r = randn(rng, [1, 2, 8, 7]);
    let dx = bilinear_resize_backward(x.shape(), &r)?;
    compare(
        "bilinear_resize",
        rng,
        n,
        &[x],
        &[dx],
        |t| Ok(Some(dot(&bilinear_resize(&t[0], 8, 7)?, &r))),
        no_skip,
    )
}

fn check_concat(rng: &mut ChaCha8Rng, n: usize) -> Result<OpCheck> {
    let a = randn(rng, [2, 2, 3, 3]);
    let b = randn(rng, [2, 3, 3, 3]);
    let r = randn(rng, [2, 5, 3, 3]);
    let grads = split_channels(&r, &[2, 3])?;
    compare(
        "concat_channels",
        rng,
        n,
        &[a, b],
        &grads,
        |t| Ok(Some(dot(&concat_channels(&[&t[0], &t[1]])?, &r))),
        no_skip,
    )
}

fn check_scale(rng: &mut ChaCha8Rng, n: usize) -> Result<OpCheck> {
    let x = randn(rng, [2, 4, 5, 5]);
    let w = randn(rng, [2, 4, 1, 1]);
    let r = randn(rng, x.shape());
    let (dx, dw) = channel_scale_backward(&x, &w, &r)?;
    compare(
        "channel_scale",
        rng,
        n,
        &[x, w],
        &[dx, dw],
        |t| Ok(Some(dot(&channel_scale(&t[0], &t[1])?, &r))),
        no_skip,
    )
}

fn check_linear(rng: &mut ChaCha8Rng, n: usize) -> Result<OpCheck> {
    let x = randn(rng, [2, 6, 1, 1]);
    let w = randn(rng, [3, 6, 1, 1]);
    let b = randn(rng, [3, 1, 1, 1]);
    let r = randn(rng, [2, 3, 1, 1]);
    let g = linear_backward(&x, w.data(), &r)?;
    let analytic = [
        g.input,
        Tensor::from_vec([3, 6, 1, 1], g.weight)?,
        Tensor::from_vec([3, 1, 1, 1], g.bias)?,
    ];
    compare(
        "linear",
        rng,
        n,
        &[x, w, b],
        &analytic,
        |t| Ok(Some(dot(&linear(&t[0], t[1].data(), t[2].data(), 3)?, &r))),
        no_skip,
    )
}

fn check_loss(rng: &mut ChaCha8Rng, n: usize) -> Result<OpCheck> {
    let logits = randn(rng, [2, 3, 4, 4]);
    let labels = LabelMap::new(2, 4, 4, (0..32).map(|_| rng.gen_range(0..3)).collect())?;
    let dx = softmax_cross_entropy_backward(&logits, &labels)?;
    compare(
        "softmax_cross_entropy",
        rng,
        n,
        &[logits],
        &[dx],
        |t| Ok(Some(softmax_cross_entropy(&t[0], &labels)? as f64)),
        no_skip,
    )
}

/// Train-mode passes on one input until every running statistic equals that
/// input's batch statistic, so eval mode reproduces the train-mode output there.
fn calibrate(model: &mut Model, x: &Tensor) -> Result<()> {
    for _ in 0..CALIBRATION_PASSES {
        model.forward_train(x)?;
    }
    Ok(())
}

// 0.9^200 leaves ~7e-10 of the initial statistics.
const CALIBRATION_PASSES: usize = 200;

/// Parameter gradients of `softmax_cross_entropy(npnet_forward(x))` for a whole
/// reduced model in eval mode. Coordinates whose perturbation flips any ReLU
/// are excluded, the network-level analogue of skipping inputs near the kink.
fn check_model(rng: &mut ChaCha8Rng, cfg: &Gradcheck) -> Result<OpCheck> {
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let x = Tensor::from_vec(
        [1, cfg.model.in_channels, 16, 16],
        (0..cfg.model.in_channels * 256)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect(),
    )?;
    let labels = LabelMap::new(
        1,
        16,
        16,
        (0..256)
            .map(|_| rng.gen_range(0..cfg.model.num_classes as u32))
            .collect(),
    )?;
    calibrate(&mut model, &x)?;
    let (logits, cache) = model.forward_eval_cached(&x)?;
    let mask = cache.relu_mask();
    model.backward(&cache, &softmax_cross_entropy_backward(&logits, &labels)?)?;

    let params = model.store().params();
    let values: Vec<Tensor> = params.iter().map(|p| vector(&p.value)).collect();
    let analytic: Vec<Tensor> = params.iter().map(|p| vector(&p.grad)).collect();
    let probe = std::cell::RefCell::new(model.clone());
    let loss = |t: &[Tensor]| {
        let mut m = probe.borrow_mut();
        for (p, v) in m.store_mut().params_mut().iter_mut().zip(t) {
            p.value.data_mut().copy_from_slice(v.data());
        }
        let (logits, cache) = m.forward_eval_cached(&x)?;
        if cache.relu_mask() != mask {
            return Ok(None);
        }
        Ok(Some(softmax_cross_entropy(&logits, &labels)? as f64))
    };
    compare(
        "npnet_end_to_end",
        rng,
        cfg.coordinates,
        &values,
        &analytic,
        loss,
        no_skip,
    )
}

/// Runs every operator check and the end-to-end model check.
pub fn gradcheck(cfg: &Gradcheck) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.coordinates.max(MIN_COORDINATES);
    let checks = vec![
        check_conv(&mut rng, n, cfg.conv_backward_hook)?,
        check_batchnorm(&mut rng, n)?,
        check_activation(&mut rng, n, Activation::Relu, "relu")?,
        check_activation(&mut rng, n, Activation::Sigmoid, "sigmoid")?,
        check_pool(&mut rng, n)?,
        check_resize(&mut rng, n)?,
        check_concat(&mut rng, n)?,
        check_scale(&mut rng, n)?,
        check_linear(&mut rng, n)?,
        check_loss(&mut rng, n)?,
        check_model(
            &mut rng,
            &Gradcheck {
                coordinates: n,
                ..cfg.clone()
            },
        )?,
    ];
    Ok(GradcheckReport { checks })
}
