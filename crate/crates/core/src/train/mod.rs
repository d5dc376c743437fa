//! Cross-entropy training with Adam, plus the finite-difference gradient check.

mod gradcheck;

pub use gradcheck::{
    gradcheck, Gradcheck, GradcheckReport, OpCheck, GRADCHECK_ABS_TOL, GRADCHECK_REL_TOL,
    GRADCHECK_STEP,
};

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Model, ParamStore};
use crate::tensor::{softmax_cross_entropy, softmax_cross_entropy_backward, LabelMap, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_epsilon: f32,
    /// Written after the last epoch when set.
    pub checkpoint_path: Option<PathBuf>,
    /// Also write the checkpoint every this many epochs.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 2,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            checkpoint_path: None,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad(format!(
                "Adam betas must lie in [0, 1), got {} and {}",
                self.adam_beta1, self.adam_beta2
            ));
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return bad(format!(
                "Adam epsilon must be positive, got {}",
                self.adam_epsilon
            ));
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint interval must be at least 1".into());
        }
        Ok(())
    }
}

/// One Adam update with bias correction at step `t` (1-based), then zeroes
/// every gradient.
pub fn adam_step(store: &mut ParamStore, t: u64, cfg: &TrainConfig) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidArgument("Adam step index starts at 1".into()));
    }
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = (1.0 - (b1 as f64).powf(t as f64)) as f32;
    let c2 = (1.0 - (b2 as f64).powf(t as f64)) as f32;
    for p in store.params_mut() {
        let g = p.grad.data();
        let m = p.adam_m.data_mut();
        for (m, &g) in m.iter_mut().zip(g) {
            *m = b1 * *m + (1.0 - b1) * g;
        }
        let v = p.adam_v.data_mut();
        for (v, &g) in v.iter_mut().zip(g) {
            *v = b2 * *v + (1.0 - b2) * g * g;
        }
        let (m, v) = (p.adam_m.data(), p.adam_v.data());
        for ((w, &m), &v) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            *w -= cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.adam_epsilon);
        }
        p.zero_grad();
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// Sample-weighted mean loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Batch order for `epoch`: a permutation drawn from its own stream of `seed`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn stack_batch(samples: &[Sample], idx: &[usize]) -> Result<(Tensor, LabelMap)> {
    for &i in idx {
        let s = &samples[i];
        if [s.image.h(), s.image.w()] != [s.mask.shape()[1], s.mask.shape()[2]] {
            return Err(Error::Data(format!(
                "sample {}: image is {}x{} but mask is {}x{}",
                s.name,
                s.image.w(),
                s.image.h(),
                s.mask.shape()[2],
                s.mask.shape()[1]
            )));
        }
    }
    let images: Vec<&Tensor> = idx.iter().map(|&i| &samples[i].image).collect();
    let masks: Vec<&LabelMap> = idx.iter().map(|&i| &samples[i].mask).collect();
    let images = Tensor::stack(&images)
        .map_err(|e| Error::Data(format!("batch images differ in size: {e}")))?;
    Ok((images, LabelMap::stack(&masks)?))
}

/// Trains `model` in place. Writes `epoch<TAB>mean_loss<TAB>seconds` per epoch
/// to `log` when given, and checkpoints as configured.
pub fn train(
    model: &mut Model,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut summary = TrainSummary {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let order = epoch_order(samples.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0f64;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (images, masks) = stack_batch(samples, idx)?;
            let (logits, cache) = model.forward_train(&images)?;
            let loss = softmax_cross_entropy(&logits, &masks)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch + 1,
                    samples: idx.to_vec(),
                    loss,
                });
            }
            let grad = softmax_cross_entropy_backward(&logits, &masks)?;
            model.backward(&cache, &grad)?;
            summary.steps += 1;
            adam_step(model.store_mut(), summary.steps, cfg)?;
            loss_sum += loss as f64 * idx.len() as f64;
        }
        let mean = loss_sum / samples.len() as f64;
        summary.epoch_losses.push(mean);
        if let Some(w) = log.as_deref_mut() {
            writeln!(
                w,
                "{epoch}\t{mean:.6}\t{:.3}",
                start.elapsed().as_secs_f64()
            )
            .and_then(|_| w.flush())
            .map_err(|e| Error::io("training log", e))?;
        }
        if let (Some(path), Some(k)) = (&cfg.checkpoint_path, cfg.checkpoint_every) {
            if epoch % k == 0 && epoch != cfg.epochs {
                save_checkpoint(model, path)?;
            }
        }
    }
    if let Some(path) = &cfg.checkpoint_path {
        save_checkpoint(model, path)?;
    }
    Ok(summary)
}
