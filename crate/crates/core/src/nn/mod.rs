//! Network definition, forward pass, loss, and backpropagated gradients.
//!
//! Activation layout: fully-connected layers operate on `(features, batch)`
//! matrices with one column per example; convolutional and pooling layers on
//! `(batch, channels, height, width)` tensors. `Flatten` bridges the two.

mod conv;

use crate::error::{Error, Result};
use crate::tensor::{Element, Rng, Tensor};
use conv::{col2im, conv_geometry, fold_conv_output, im2col, max_pool, unfold_conv_grad};

/// One layer of the network; weighted kinds are `FullyConnected` and `Conv2d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    FullyConnected {
        input: usize,
        output: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
    },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn is_weighted(&self) -> bool {
        matches!(
            self,
            LayerSpec::FullyConnected { .. } | LayerSpec::Conv2d { .. }
        )
    }

    /// Shape of the weight tensor, if the layer has one. Convolution weights
    /// are stored `(out_channels, in_channels, kernel_h, kernel_w)`.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::FullyConnected { input, output } => Some(vec![output, input]),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some(vec![out_channels, in_channels, kernel_h, kernel_w]),
            _ => None,
        }
    }

    pub fn bias_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::FullyConnected { output, .. } => Some(vec![output]),
            LayerSpec::Conv2d { out_channels, .. } => Some(vec![out_channels]),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::FullyConnected { input, .. } => input,
            LayerSpec::Conv2d {
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => in_channels * kernel_h * kernel_w,
            _ => 0,
        }
    }
}

/// Ordered layers plus the weight and bias tensors of the weighted layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    layers: Vec<LayerSpec>,
    weights: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
}

impl<T: Element> Network<T> {
    /// Freshly initialized network: He-scaled normal weights, zero biases.
    pub fn init(layers: Vec<LayerSpec>, rng: &mut Rng) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for layer in &layers {
            if let (Some(w_shape), Some(b_shape)) = (layer.weight_shape(), layer.bias_shape()) {
                let std = (2.0 / layer.fan_in() as f64).sqrt();
                weights.push(rng.normal_tensor(&w_shape, std));
                biases.push(Tensor::zeros(&b_shape));
            }
        }
        Self::from_parts(layers, weights, biases)
    }

    /// Assemble from existing tensors, validating shapes against the specs.
    pub fn from_parts(
        layers: Vec<LayerSpec>,
        weights: Vec<Tensor<T>>,
        biases: Vec<Tensor<T>>,
    ) -> Result<Self> {
        let weighted: Vec<&LayerSpec> = layers.iter().filter(|l| l.is_weighted()).collect();
        if weighted.len() != weights.len() || weighted.len() != biases.len() {
            return Err(Error::ShapeMismatch {
                context: "network weight tensor count",
                expected: vec![weighted.len()],
                actual: vec![weights.len(), biases.len()],
            });
        }
        for ((layer, w), b) in weighted.iter().zip(&weights).zip(&biases) {
            let w_shape = layer.weight_shape().unwrap();
            let b_shape = layer.bias_shape().unwrap();
            if w.shape() != w_shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    context: "layer weight shape",
                    expected: w_shape,
                    actual: w.shape().to_vec(),
                });
            }
            if b.shape() != b_shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    context: "layer bias shape",
                    expected: b_shape,
                    actual: b.shape().to_vec(),
                });
            }
        }
        Ok(Network {
            layers,
            weights,
            biases,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[Tensor<T>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Tensor<T>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.biases
    }

    /// Number of weighted layers (the paper-facing N).
    pub fn weighted_layer_count(&self) -> usize {
        self.weights.len()
    }

    /// Display names for weighted layers: conv1, conv2, ..., fc1, fc2, ...
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut fc = 0;
        let mut cv = 0;
        for layer in &self.layers {
            match layer {
                LayerSpec::FullyConnected { .. } => {
                    fc += 1;
                    names.push(format!("fc{fc}"));
                }
                LayerSpec::Conv2d { .. } => {
                    cv += 1;
                    names.push(format!("conv{cv}"));
                }
                _ => {}
            }
        }
        names
    }

    pub fn total_weight_count(&self) -> usize {
        self.weights.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> Network<U> {
        Network {
            layers: self.layers.clone(),
            weights: self.weights.iter().map(Tensor::cast).collect(),
            biases: self.biases.iter().map(Tensor::cast).collect(),
        }
    }
}

/// A minibatch: inputs plus one class index per example.
#[derive(Debug, Clone)]
pub struct Batch<T = f32> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Element> Batch<T> {
    pub fn new(inputs: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        let examples = match inputs.shape().len() {
            2 => inputs.cols(),
            4 => inputs.shape()[0],
            _ => {
                return Err(Error::InvalidInput(format!(
                    "batch inputs must be 2-D (features, t) or 4-D (t, c, h, w), got {:?}",
                    inputs.shape()
                )))
            }
        };
        if labels.len() != examples {
            return Err(Error::Consistency(format!(
                "batch has {examples} examples but {} labels",
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Loss hyperparameters: L2 coefficient and class count.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub lambda: f64,
    pub num_classes: usize,
}

impl LossConfig {
    pub fn new(lambda: f64, num_classes: usize) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(LossConfig {
            lambda,
            num_classes,
        })
    }
}

/// Per-parameter gradients, shapes matching the network's weights and biases.
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    pub weights: Vec<Tensor<T>>,
    pub biases: Vec<Tensor<T>>,
}

/// Activation record from `forward`, consumed by `backward`.
#[derive(Debug)]
pub struct ForwardCache<T = f32> {
    batch: usize,
    layer_inputs: Vec<Tensor<T>>,
    scores: Tensor<T>,
    pool_argmax: Vec<Option<Vec<usize>>>,
    conv_patches: Vec<Option<Tensor<T>>>,
    weight_shapes: Vec<Vec<usize>>,
}

impl<T: Element> ForwardCache<T> {
    pub fn scores(&self) -> &Tensor<T> {
        &self.scores
    }
}

/// Run the network on a batch; returns class scores `(k, t)` and the
/// activation record needed by `backward`.
pub fn forward<T: Element>(net: &Network<T>, batch: &Batch<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
    let mut x = batch.inputs.clone();
    let mut layer_inputs = Vec::with_capacity(net.layers.len());
    let mut pool_argmax = vec![None; net.layers.len()];
    let mut conv_patches = vec![None; net.layers.len()];
    let mut weighted = 0usize;

    for (li, layer) in net.layers.iter().enumerate() {
        layer_inputs.push(x.clone());
        x = match *layer {
            LayerSpec::FullyConnected { input, .. } => {
                if x.shape().len() != 2 || x.rows() != input {
                    return Err(Error::ShapeMismatch {
                        context: "fully-connected input",
                        expected: vec![input, batch.len()],
                        actual: x.shape().to_vec(),
                    });
                }
                let w = &net.weights[weighted];
                let b = &net.biases[weighted];
                weighted += 1;
                let mut out = w.matmul(&x)?;
                add_bias_columns(&mut out, b);
                out
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                pad,
            } => {
                let g = conv_geometry(x.shape(), in_channels, kernel_h, kernel_w, stride, pad)?;
                let patches = im2col(&x, &g);
                let w = &net.weights[weighted];
                let b = &net.biases[weighted];
                weighted += 1;
                let w_mat = w.reshape(&[out_channels, in_channels * kernel_h * kernel_w])?;
                let mut out_mat = w_mat.matmul(&patches)?;
                add_bias_columns(&mut out_mat, b);
                let out = fold_conv_output(&out_mat, &g, out_channels);
                conv_patches[li] = Some(patches);
                out
            }
            LayerSpec::MaxPool {
                kernel_h,
                kernel_w,
                stride,
            } => {
                let (out, argmax) = max_pool(&x, kernel_h, kernel_w, stride)?;
                pool_argmax[li] = Some(argmax);
                out
            }
            LayerSpec::Relu => x.relu(),
            LayerSpec::Flatten => flatten(&x)?,
        };
    }

    if x.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            context: "network output must be a score matrix",
            expected: vec![0, batch.len()],
            actual: x.shape().to_vec(),
        });
    }
    let cache = ForwardCache {
        batch: batch.len(),
        layer_inputs,
        scores: x.clone(),
        pool_argmax,
        conv_patches,
        weight_shapes: net.weights.iter().map(|w| w.shape().to_vec()).collect(),
    };
    Ok((x, cache))
}

/// Cross-entropy over softmax scores plus L2 weight regularization:
/// `-(1/t) sum_j log softmax(s)[y_j, j] + lambda * sum_i ||W_i||_F^2`.
pub fn loss_f<T: Element>(
    net: &Network<T>,
    scores: &Tensor<T>,
    batch: &Batch<T>,
    cfg: &LossConfig,
) -> Result<f64> {
    let t = batch.len();
    if scores.shape() != [cfg.num_classes, t] {
        return Err(Error::ShapeMismatch {
            context: "scores",
            expected: vec![cfg.num_classes, t],
            actual: scores.shape().to_vec(),
        });
    }
    let k = cfg.num_classes;
    let mut ce = 0.0f64;
    for (j, &label) in batch.labels.iter().enumerate() {
        if label >= k {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range for {k} classes (example {j})"
            )));
        }
        // stable log-softmax with per-column max subtraction
        let mut max = f64::NEG_INFINITY;
        for i in 0..k {
            max = max.max(scores.data()[i * t + j].to_f64());
        }
        let mut sum_exp = 0.0f64;
        for i in 0..k {
            sum_exp += (scores.data()[i * t + j].to_f64() - max).exp();
        }
        let log_prob = scores.data()[label * t + j].to_f64() - max - sum_exp.ln();
        ce -= log_prob;
    }
    ce /= t as f64;
    let reg: f64 = net
        .weights
        .iter()
        .map(|w| w.frobenius_norm_sq().to_f64())
        .sum();
    Ok(ce + cfg.lambda * reg)
}

/// Gradients of `loss_f` with respect to every weight and bias tensor.
pub fn backward<T: Element>(
    net: &Network<T>,
    cache: &ForwardCache<T>,
    batch: &Batch<T>,
    cfg: &LossConfig,
) -> Result<Gradients<T>> {
    if cache.batch != batch.len() {
        return Err(Error::State(format!(
            "cache built for a batch of {} examples, got {}",
            cache.batch,
            batch.len()
        )));
    }
    if cache.layer_inputs.len() != net.layers.len() {
        return Err(Error::State(format!(
            "cache covers {} layers, network has {}",
            cache.layer_inputs.len(),
            net.layers.len()
        )));
    }
    for (cached, w) in cache.weight_shapes.iter().zip(&net.weights) {
        if cached.as_slice() != w.shape() {
            return Err(Error::State(format!(
                "cache is stale: weight shape changed from {:?} to {:?}",
                cached,
                w.shape()
            )));
        }
    }

    let mut d_weights: Vec<Tensor<T>> = net.weights.iter().map(|w| Tensor::zeros(w.shape())).collect();
    let mut d_biases: Vec<Tensor<T>> = net.biases.iter().map(|b| Tensor::zeros(b.shape())).collect();

    // dL/ds = (softmax(s) - onehot(y)) / t
    let t = batch.len();
    let k = cfg.num_classes;
    let scores = &cache.scores;
    let mut delta = Tensor::<T>::zeros(&[k, t]);
    for (j, &label) in batch.labels.iter().enumerate() {
        if label >= k {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range for {k} classes (example {j})"
            )));
        }
        let mut max = f64::NEG_INFINITY;
        for i in 0..k {
            max = max.max(scores.data()[i * t + j].to_f64());
        }
        let mut sum_exp = 0.0f64;
        for i in 0..k {
            sum_exp += (scores.data()[i * t + j].to_f64() - max).exp();
        }
        for i in 0..k {
            let p = (scores.data()[i * t + j].to_f64() - max).exp() / sum_exp;
            let onehot = if i == label { 1.0 } else { 0.0 };
            delta.data_mut()[i * t + j] = T::from_f64((p - onehot) / t as f64);
        }
    }

    let two_lambda = T::from_f64(2.0 * cfg.lambda);
    let mut weighted = net.weights.len();
    for (li, layer) in net.layers.iter().enumerate().rev() {
        let input = &cache.layer_inputs[li];
        delta = match *layer {
            LayerSpec::FullyConnected { .. } => {
                weighted -= 1;
                let w = &net.weights[weighted];
                // dW = delta . x^T + 2 lambda W
                let mut dw = delta.matmul_transpose_b(input)?;
                dw.add_scaled_in_place(w, two_lambda)?;
                d_weights[weighted] = dw;
                d_biases[weighted] = row_sums(&delta);
                w.matmul_transpose_a(&delta)?
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                pad,
            } => {
                weighted -= 1;
                let w = &net.weights[weighted];
                let g = conv_geometry(input.shape(), in_channels, kernel_h, kernel_w, stride, pad)?;
                let patches = cache.conv_patches[li].as_ref().ok_or_else(|| {
                    Error::State("cache missing conv patches for this layer".to_string())
                })?;
                let dout_mat = unfold_conv_grad(&delta, &g, out_channels);
                let mut dw_mat = dout_mat.matmul_transpose_b(patches)?;
                let w_mat = w.reshape(&[out_channels, in_channels * kernel_h * kernel_w])?;
                dw_mat.add_scaled_in_place(&w_mat, two_lambda)?;
                d_weights[weighted] = dw_mat.reshape(w.shape())?;
                d_biases[weighted] = row_sums(&dout_mat);
                let dpatches = w_mat.matmul_transpose_a(&dout_mat)?;
                col2im(&dpatches, &g)
            }
            LayerSpec::MaxPool { .. } => {
                let argmax = cache.pool_argmax[li].as_ref().ok_or_else(|| {
                    Error::State("cache missing pool indices for this layer".to_string())
                })?;
                let mut dinput = Tensor::zeros(input.shape());
                for (out_idx, &in_idx) in argmax.iter().enumerate() {
                    dinput.data_mut()[in_idx] += delta.data()[out_idx];
                }
                dinput
            }
            LayerSpec::Relu => {
                let mut dinput = delta.clone();
                for (d, &x) in dinput.data_mut().iter_mut().zip(input.data()) {
                    if x <= T::zero() {
                        *d = T::zero();
                    }
                }
                dinput
            }
            LayerSpec::Flatten => delta.reshape(input.shape())?,
        };
    }

    Ok(Gradients {
        weights: d_weights,
        biases: d_biases,
    })
}

/// (t, c, h, w) -> (c*h*w, t): column j holds example j's features.
fn flatten<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch {
            context: "flatten input",
            expected: vec![0, 0, 0, 0],
            actual: shape.to_vec(),
        });
    }
    let t = shape[0];
    let features = shape[1] * shape[2] * shape[3];
    let mut out = vec![T::zero(); features * t];
    for img in 0..t {
        let src = &x.data()[img * features..(img + 1) * features];
        for (f, &v) in src.iter().enumerate() {
            out[f * t + img] = v;
        }
    }
    Tensor::from_vec(&[features, t], out)
}

fn add_bias_columns<T: Element>(out: &mut Tensor<T>, bias: &Tensor<T>) {
    let cols = out.cols();
    for (i, &b) in bias.data().iter().enumerate() {
        for v in &mut out.data_mut()[i * cols..(i + 1) * cols] {
            *v += b;
        }
    }
}

fn row_sums<T: Element>(m: &Tensor<T>) -> Tensor<T> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = Tensor::zeros(&[rows]);
    for i in 0..rows {
        let mut acc = T::zero();
        for &v in &m.data()[i * cols..(i + 1) * cols] {
            acc = acc + v;
        }
        out.data_mut()[i] = acc;
    }
    out
}

/// The 784-300-100-10 fully-connected MNIST classifier.
pub fn lenet300_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Flatten,
        LayerSpec::FullyConnected {
            input: 784,
            output: 300,
        },
        LayerSpec::Relu,
        LayerSpec::FullyConnected {
            input: 300,
            output: 100,
        },
        LayerSpec::Relu,
        LayerSpec::FullyConnected {
            input: 100,
            output: 10,
        },
    ]
}

/// The 20/50-filter LeNet variant: conv layers of 0.5K and 25K weights and
/// fully-connected layers of 400K and 5K weights.
pub fn lenet5_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 20,
            kernel_h: 5,
            kernel_w: 5,
            stride: 1,
            pad: 0,
        },
        LayerSpec::MaxPool {
            kernel_h: 2,
            kernel_w: 2,
            stride: 2,
        },
        LayerSpec::Conv2d {
            in_channels: 20,
            out_channels: 50,
            kernel_h: 5,
            kernel_w: 5,
            stride: 1,
            pad: 0,
        },
        LayerSpec::MaxPool {
            kernel_h: 2,
            kernel_w: 2,
            stride: 2,
        },
        LayerSpec::Flatten,
        LayerSpec::FullyConnected {
            input: 800,
            output: 500,
        },
        LayerSpec::Relu,
        LayerSpec::FullyConnected {
            input: 500,
            output: 10,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::naive_matmul;

    fn identity_fc_net(n: usize) -> Network<f64> {
        let mut w = Tensor::zeros(&[n, n]);
        for i in 0..n {
            w.data_mut()[i * n + i] = 1.0;
        }
        Network::from_parts(
            vec![LayerSpec::FullyConnected { input: n, output: n }],
            vec![w],
            vec![Tensor::zeros(&[n])],
        )
        .unwrap()
    }

    #[test]
    fn forward_identity_network() {
        let net = identity_fc_net(2);
        let batch = Batch::new(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap(), vec![0]).unwrap();
        let (scores, _) = forward(&net, &batch).unwrap();
        assert_eq!(scores.data(), &[1.0, 2.0]);
    }

    #[test]
    fn forward_zero_network_gives_zero_scores() {
        let net = Network::from_parts(
            vec![LayerSpec::FullyConnected { input: 3, output: 4 }],
            vec![Tensor::zeros(&[4, 3])],
            vec![Tensor::zeros(&[4])],
        )
        .unwrap();
        let batch = Batch::new(
            Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            vec![0, 1],
        )
        .unwrap();
        let (scores, _) = forward(&net, &batch).unwrap();
        assert!(scores.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_hand_rolled_matmul_chain() {
        // lenet300 scores against an independent chain of naive products
        let mut rng = Rng::new(2024);
        let net: Network<f32> = Network::init(lenet300_layers(), &mut rng).unwrap();
        let image: Tensor<f32> = rng.normal_tensor(&[1, 1, 28, 28], 0.5);
        let batch = Batch::new(image.clone(), vec![3]).unwrap();
        let (scores, _) = forward(&net, &batch).unwrap();

        let x = image.reshape(&[1, 784]).unwrap().transpose();
        let mut h = x;
        for i in 0..3 {
            let mut z = naive_matmul(&net.weights()[i], &h);
            for (r, &b) in net.biases()[i].data().iter().enumerate() {
                z.data_mut()[r] += b;
            }
            h = if i < 2 { z.relu() } else { z };
        }
        for (a, b) in scores.data().iter().zip(h.data()) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = Rng::new(9);
        let net: Network<f32> = Network::init(lenet300_layers(), &mut rng).unwrap();
        let image: Tensor<f32> = rng.normal_tensor(&[2, 1, 28, 28], 0.5);
        let batch = Batch::new(image, vec![1, 2]).unwrap();
        let (a, _) = forward(&net, &batch).unwrap();
        let (b, _) = forward(&net, &batch).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn forward_rejects_mismatched_input() {
        let net = identity_fc_net(3);
        let batch = Batch::new(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap(), vec![0]).unwrap();
        assert!(matches!(
            forward(&net, &batch),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn loss_uniform_softmax_is_ln_k() {
        let net = identity_fc_net(2);
        let cfg = LossConfig::new(0.0, 2).unwrap();
        let scores = Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap();
        let batch = Batch::new(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap(), vec![0]).unwrap();
        let loss = loss_f(&net, &scores, &batch, &cfg).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_analytic_softmax() {
        // s = [ln 3, 0], correct class first: loss = ln(4/3)
        let net = identity_fc_net(2);
        let cfg = LossConfig::new(0.0, 2).unwrap();
        let scores = Tensor::matrix(2, 1, vec![3.0f64.ln(), 0.0]).unwrap();
        let batch = Batch::new(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap(), vec![0]).unwrap();
        let loss = loss_f(&net, &scores, &batch, &cfg).unwrap();
        assert!((loss - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_regularizer_adds_weight_norm() {
        // zero scores, lambda = 1, one 2x2 all-ones weight matrix: ln k + 4
        let net = Network::from_parts(
            vec![LayerSpec::FullyConnected { input: 2, output: 2 }],
            vec![Tensor::filled(&[2, 2], 1.0f64)],
            vec![Tensor::zeros(&[2])],
        )
        .unwrap();
        let cfg = LossConfig::new(1.0, 2).unwrap();
        let scores = Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap();
        let batch = Batch::new(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap(), vec![1]).unwrap();
        let loss = loss_f(&net, &scores, &batch, &cfg).unwrap();
        assert!((loss - (2.0f64.ln() + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_out_of_range_label() {
        let net = identity_fc_net(2);
        let cfg = LossConfig::new(0.0, 2).unwrap();
        let scores = Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap();
        let batch = Batch::new(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap(), vec![2]).unwrap();
        assert!(matches!(
            loss_f(&net, &scores, &batch, &cfg),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn loss_shift_invariance_per_column() {
        let mut rng = Rng::new(31);
        let net = identity_fc_net(4);
        let cfg = LossConfig::new(0.0, 4).unwrap();
        let scores: Tensor<f64> = rng.normal_tensor(&[4, 3], 2.0);
        let batch = Batch::new(Tensor::zeros(&[4, 3]), vec![0, 2, 3]).unwrap();
        let base = loss_f(&net, &scores, &batch, &cfg).unwrap();
        let mut shifted = scores.clone();
        for i in 0..4 {
            shifted.data_mut()[i * 3 + 1] += 7.5; // shift column 1 only
        }
        let after = loss_f(&net, &shifted, &batch, &cfg).unwrap();
        assert!((base - after).abs() < 1e-9, "{base} vs {after}");
    }

    #[test]
    fn loss_nonnegative_and_saturated_case() {
        let mut rng = Rng::new(17);
        let net = identity_fc_net(3);
        let cfg = LossConfig::new(0.5, 3).unwrap();
        for _ in 0..20 {
            let scores: Tensor<f64> = rng.normal_tensor(&[3, 2], 3.0);
            let batch = Batch::new(Tensor::zeros(&[3, 2]), vec![0, 1]).unwrap();
            assert!(loss_f(&net, &scores, &batch, &cfg).unwrap() >= 0.0);
        }
        // saturated scores: correct-class probability ~= 1 so loss ~= reg
        let mut scores = Tensor::<f64>::zeros(&[3, 1]);
        scores.data_mut()[0] = 60.0;
        let batch = Batch::new(Tensor::zeros(&[3, 1]), vec![0]).unwrap();
        let loss = loss_f(&net, &scores, &batch, &cfg).unwrap();
        let reg = 0.5 * net.weights()[0].frobenius_norm_sq();
        assert!((loss - reg).abs() < 1e-12, "{loss} vs {reg}");
    }

    #[test]
    fn backward_regularizer_gradient_dominates_when_saturated() {
        // correct-class probability ~1 by construction: dW ~= 2 lambda W
        let mut rng = Rng::new(5);
        let mut w: Tensor<f64> = rng.normal_tensor(&[2, 2], 0.5);
        // make class 0 dominate for the single example x = [10, 10]
        w.data_mut()[0] = 5.0;
        w.data_mut()[1] = 5.0;
        w.data_mut()[2] = -5.0;
        w.data_mut()[3] = -5.0;
        let net = Network::from_parts(
            vec![LayerSpec::FullyConnected { input: 2, output: 2 }],
            vec![w.clone()],
            vec![Tensor::zeros(&[2])],
        )
        .unwrap();
        let lambda = 0.01;
        let cfg = LossConfig::new(lambda, 2).unwrap();
        let batch = Batch::new(Tensor::matrix(2, 1, vec![10.0, 10.0]).unwrap(), vec![0]).unwrap();
        let (_, cache) = forward(&net, &batch).unwrap();
        let grads = backward(&net, &cache, &batch, &cfg).unwrap();
        for (g, &wv) in grads.weights[0].data().iter().zip(w.data()) {
            assert!(
                (g - 2.0 * lambda * wv).abs() < 1e-10,
                "grad {g} vs 2*lambda*w {}",
                2.0 * lambda * wv
            );
        }
    }

    #[test]
    fn backward_matches_analytic_softmax_gradient() {
        // single FC, lambda = 0: dW = (softmax(s) - onehot(y)) . x^T / t
        let mut rng = Rng::new(13);
        let w: Tensor<f64> = rng.normal_tensor(&[3, 4], 0.7);
        let net = Network::from_parts(
            vec![LayerSpec::FullyConnected { input: 4, output: 3 }],
            vec![w.clone()],
            vec![Tensor::zeros(&[3])],
        )
        .unwrap();
        let cfg = LossConfig::new(0.0, 3).unwrap();
        let x: Tensor<f64> = rng.normal_tensor(&[4, 2], 1.0);
        let batch = Batch::new(x.clone(), vec![2, 0]).unwrap();
        let (scores, cache) = forward(&net, &batch).unwrap();
        let grads = backward(&net, &cache, &batch, &cfg).unwrap();

        let t = 2usize;
        let mut dscores = Tensor::<f64>::zeros(&[3, t]);
        for (j, &y) in batch.labels.iter().enumerate() {
            let col: Vec<f64> = (0..3).map(|i| scores.data()[i * t + j]).collect();
            let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = col.iter().map(|v| (v - m).exp()).sum();
            for i in 0..3 {
                let p = (col[i] - m).exp() / z;
                dscores.data_mut()[i * t + j] =
                    (p - if i == y { 1.0 } else { 0.0 }) / t as f64;
            }
        }
        let expected = naive_matmul(&dscores, &x.transpose());
        for (g, e) in grads.weights[0].data().iter().zip(expected.data()) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let mut rng = Rng::new(3);
        let mut net: Network<f64> = Network::init(
            vec![LayerSpec::FullyConnected { input: 2, output: 2 }],
            &mut rng,
        )
        .unwrap();
        let cfg = LossConfig::new(0.0, 2).unwrap();
        let batch = Batch::new(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap(), vec![0]).unwrap();
        let (_, cache) = forward(&net, &batch).unwrap();

        // mismatched batch
        let other = Batch::new(
            Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![0, 1],
        )
        .unwrap();
        assert!(matches!(
            backward(&net, &cache, &other, &cfg),
            Err(Error::State(_))
        ));

        // network reshaped out from under the cache
        net = Network::init(
            vec![LayerSpec::FullyConnected { input: 3, output: 2 }],
            &mut rng,
        )
        .unwrap();
        assert!(matches!(
            backward(&net, &cache, &batch, &cfg),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn lenet_architectures_have_table_weight_counts() {
        let mut rng = Rng::new(1);
        let l300: Network<f32> = Network::init(lenet300_layers(), &mut rng).unwrap();
        assert_eq!(
            l300.weights().iter().map(Tensor::numel).collect::<Vec<_>>(),
            vec![235_200, 30_000, 1_000]
        );
        assert_eq!(l300.total_weight_count(), 266_200);
        assert_eq!(l300.layer_names(), vec!["fc1", "fc2", "fc3"]);

        let l5: Network<f32> = Network::init(lenet5_layers(), &mut rng).unwrap();
        assert_eq!(
            l5.weights().iter().map(Tensor::numel).collect::<Vec<_>>(),
            vec![500, 25_000, 400_000, 5_000]
        );
        assert_eq!(l5.total_weight_count(), 430_500);
        assert_eq!(l5.layer_names(), vec!["conv1", "conv2", "fc1", "fc2"]);
    }

    #[test]
    fn lenet5_forward_shape() {
        let mut rng = Rng::new(8);
        let net: Network<f32> = Network::init(lenet5_layers(), &mut rng).unwrap();
        let images: Tensor<f32> = rng.normal_tensor(&[3, 1, 28, 28], 0.3);
        let batch = Batch::new(images, vec![0, 1, 2]).unwrap();
        let (scores, _) = forward(&net, &batch).unwrap();
        assert_eq!(scores.shape(), &[10, 3]);
    }
}
