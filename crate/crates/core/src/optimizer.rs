//! Plain stochastic gradient descent with optional gradient filtering.
//!
//! The L2 term lives in the loss, not here; `sgd_step` is the bare
//! `p <- p - alpha * g` update for every weight and bias tensor.

use crate::error::{Error, Result};
use crate::mnist::Dataset;
use crate::nn::{backward, forward, loss_f, Batch, Gradients, LossConfig, Network};
use crate::pruner::PruneMask;
use crate::tensor::{Element, Rng};

/// Learning-rate schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant,
    /// Multiply the rate by `factor` once every `every_epochs` epochs.
    StepDecay { factor: f64, every_epochs: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub alpha: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub epochs: usize,
}

impl SgdConfig {
    pub fn new(alpha: f64, schedule: Schedule, batch_size: usize, epochs: usize) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".to_string()));
        }
        Ok(SgdConfig {
            alpha,
            schedule,
            batch_size,
            epochs,
        })
    }

    /// Effective learning rate for a zero-based epoch index.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.alpha,
            Schedule::StepDecay {
                factor,
                every_epochs,
            } => self.alpha * factor.powi((epoch / every_epochs.max(1)) as i32),
        }
    }
}

/// `p <- p - alpha * g` across every weight and bias tensor.
pub fn sgd_step<T: Element>(
    net: &mut Network<T>,
    grads: &Gradients<T>,
    alpha: f64,
) -> Result<()> {
    if grads.weights.len() != net.weights().len() || grads.biases.len() != net.biases().len() {
        return Err(Error::ShapeMismatch {
            context: "sgd_step gradient count",
            expected: vec![net.weights().len()],
            actual: vec![grads.weights.len(), grads.biases.len()],
        });
    }
    let neg_alpha = T::from_f64(-alpha);
    for (w, g) in net.weights_mut().iter_mut().zip(&grads.weights) {
        w.add_scaled_in_place(g, neg_alpha)?;
    }
    for (b, g) in net.biases_mut().iter_mut().zip(&grads.biases) {
        b.add_scaled_in_place(g, neg_alpha)?;
    }
    Ok(())
}

/// Zero the weight-gradient entries at pruned positions; bias gradients are
/// untouched.
pub fn mask_grads<T: Element>(grads: &mut Gradients<T>, mask: &PruneMask) -> Result<()> {
    if grads.weights.len() != mask.layer_count() {
        return Err(Error::ShapeMismatch {
            context: "mask_grads layer count",
            expected: vec![mask.layer_count()],
            actual: vec![grads.weights.len()],
        });
    }
    for (g, kept) in grads.weights.iter_mut().zip(mask.layers()) {
        if g.numel() != kept.len() {
            return Err(Error::ShapeMismatch {
                context: "mask_grads layer size",
                expected: vec![kept.len()],
                actual: vec![g.numel()],
            });
        }
        for (v, &keep) in g.data_mut().iter_mut().zip(kept) {
            if !keep {
                *v = T::zero();
            }
        }
    }
    Ok(())
}

/// One pass over the dataset in seeded-shuffle order. `grad_hook` runs after
/// backprop and before the step (proximal terms, mask filtering). Returns the
/// mean minibatch loss.
pub fn run_epoch<T: Element, F>(
    net: &mut Network<T>,
    data: &Dataset<T>,
    batch_size: usize,
    alpha: f64,
    loss_cfg: &LossConfig,
    rng: &mut Rng,
    mut grad_hook: F,
) -> Result<f64>
where
    F: FnMut(&Network<T>, &mut Gradients<T>) -> Result<()>,
{
    let mut total = 0.0f64;
    let mut batches = 0usize;
    for batch in data.batches(batch_size, rng) {
        let loss = train_step(net, &batch, alpha, loss_cfg, &mut grad_hook)?;
        total += loss;
        batches += 1;
    }
    if batches == 0 {
        return Err(Error::InvalidInput("empty dataset".to_string()));
    }
    Ok(total / batches as f64)
}

/// Forward + loss + backward + hook + step on one batch; returns the loss.
pub fn train_step<T: Element, F>(
    net: &mut Network<T>,
    batch: &Batch<T>,
    alpha: f64,
    loss_cfg: &LossConfig,
    grad_hook: &mut F,
) -> Result<f64>
where
    F: FnMut(&Network<T>, &mut Gradients<T>) -> Result<()>,
{
    let (scores, cache) = forward(net, batch)?;
    let loss = loss_f(net, &scores, batch, loss_cfg)?;
    if !loss.is_finite() {
        return Err(Error::Numeric {
            context: "train_step".to_string(),
            detail: format!("loss is {loss}"),
        });
    }
    let mut grads = backward(net, &cache, batch, loss_cfg)?;
    grad_hook(net, &mut grads)?;
    sgd_step(net, &grads, alpha)?;
    Ok(loss)
}

use crate::nn::loss_f;
