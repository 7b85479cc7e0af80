//! A small convolutional classifier with hand-written backpropagation.
//!
//! Tensors are stored channel-major (`[C, H, W]`) per sample. Convolutions use
//! zero padding of `kernel_size / 2`; max pooling is non-overlapping.

mod adam;
mod train;

pub use adam::{adam_step, AdamState};
pub use train::{train, train_with, Checkpoint, EpochRecord, Objective, TrainConfig, TrainResult};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::{LayerWeights, TensorF, WeightSet};

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2D { out_channels: usize, kernel_size: usize, stride: usize },
    ReLU,
    MaxPool2D { size: usize },
    GlobalAvgPool,
    Dense { out_dim: usize },
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[channels, height, width]` of one input sample.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// 16x16 single-channel input, two Conv-ReLU-MaxPool blocks, GAP, Dense(2), Softmax.
    pub fn desk_default() -> Self {
        Self {
            input_shape: [1, 16, 16],
            layers: vec![
                LayerSpec::Conv2D { out_channels: 4, kernel_size: 3, stride: 1 },
                LayerSpec::ReLU,
                LayerSpec::MaxPool2D { size: 2 },
                LayerSpec::Conv2D { out_channels: 8, kernel_size: 3, stride: 1 },
                LayerSpec::ReLU,
                LayerSpec::MaxPool2D { size: 2 },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out_dim: 2 },
                LayerSpec::Softmax,
            ],
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Activation shapes: element 0 is the input, element `i + 1` the output of layer `i`.
    pub fn activation_shapes(&self) -> Result<Vec<[usize; 3]>> {
        if self.input_shape.contains(&0) {
            return invalid("input shape has a zero dimension");
        }
        let n = self.layers.len();
        if n < 3
            || self.layers[n - 3] != LayerSpec::GlobalAvgPool
            || self.layers[n - 2] != (LayerSpec::Dense { out_dim: 2 })
            || self.layers[n - 1] != LayerSpec::Softmax
        {
            return invalid("network must end with GlobalAvgPool, Dense(2), Softmax");
        }
        let mut shapes = vec![self.input_shape];
        for (i, layer) in self.layers.iter().enumerate() {
            let [c, h, w] = *shapes.last().unwrap();
            let next = match *layer {
                LayerSpec::Conv2D { out_channels, kernel_size, stride } => {
                    if out_channels == 0 || kernel_size == 0 || stride == 0 {
                        return invalid(format!("layer {i}: conv parameters must be positive"));
                    }
                    let pad = kernel_size / 2;
                    if h + 2 * pad < kernel_size || w + 2 * pad < kernel_size {
                        return shape_err(format!("layer {i}: kernel larger than padded input"));
                    }
                    [
                        out_channels,
                        (h + 2 * pad - kernel_size) / stride + 1,
                        (w + 2 * pad - kernel_size) / stride + 1,
                    ]
                }
                LayerSpec::ReLU => [c, h, w],
                LayerSpec::MaxPool2D { size } => {
                    if size == 0 || h < size || w < size {
                        return shape_err(format!("layer {i}: pool size {size} too large for {h}x{w}"));
                    }
                    [c, h / size, w / size]
                }
                LayerSpec::GlobalAvgPool => [c, 1, 1],
                LayerSpec::Dense { out_dim } => {
                    if out_dim == 0 {
                        return invalid(format!("layer {i}: dense output must be positive"));
                    }
                    [out_dim, 1, 1]
                }
                LayerSpec::Softmax => {
                    if i != n - 1 {
                        return invalid("softmax is only allowed as the final layer");
                    }
                    [c, h, w]
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// `(layer_index, kernel_shape, bias_shape)` for every parameterized layer.
    pub fn param_shapes(&self) -> Result<Vec<(usize, Vec<usize>, Vec<usize>)>> {
        let shapes = self.activation_shapes()?;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let [c, h, w] = shapes[i];
            match *layer {
                LayerSpec::Conv2D { out_channels, kernel_size, .. } => out.push((
                    i,
                    vec![out_channels, c, kernel_size, kernel_size],
                    vec![out_channels],
                )),
                LayerSpec::Dense { out_dim } => out.push((i, vec![out_dim, c * h * w], vec![out_dim])),
                _ => {}
            }
        }
        Ok(out)
    }

    pub fn check_weights(&self, weights: &WeightSet) -> Result<()> {
        let expected = self.param_shapes()?;
        if expected.len() != weights.entries.len() {
            return shape_err(format!(
                "spec has {} parameterized layers, weights have {}",
                expected.len(),
                weights.entries.len()
            ));
        }
        for ((idx, k, b), e) in expected.iter().zip(&weights.entries) {
            if *idx != e.layer_index || *k != e.kernel.shape || *b != e.bias.shape {
                return shape_err(format!(
                    "layer {idx}: expected kernel {k:?} bias {b:?}, got layer {} kernel {:?} bias {:?}",
                    e.layer_index, e.kernel.shape, e.bias.shape
                ));
            }
        }
        Ok(())
    }

    pub fn zero_weights(&self) -> Result<WeightSet> {
        Ok(WeightSet::new(
            self.param_shapes()?
                .into_iter()
                .map(|(layer_index, k, b)| LayerWeights {
                    layer_index,
                    kernel: TensorF::zeros(k),
                    bias: TensorF::zeros(b),
                })
                .collect(),
        ))
    }

    /// Index of the global-average-pooling layer; everything before it is the backbone.
    pub fn gap_index(&self) -> usize {
        self.layers.len() - 3
    }

    /// Hex SHA-256 of the canonical JSON form of the spec.
    pub fn spec_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A validated spec with cached activation shapes.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<[usize; 3]>,
    /// Position in the weight set for each parameterized layer.
    slots: Vec<Option<usize>>,
}

impl Network {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        let shapes = spec.activation_shapes()?;
        let mut slots = Vec::with_capacity(spec.layers.len());
        let mut next = 0;
        for layer in &spec.layers {
            match layer {
                LayerSpec::Conv2D { .. } | LayerSpec::Dense { .. } => {
                    slots.push(Some(next));
                    next += 1;
                }
                _ => slots.push(None),
            }
        }
        Ok(Self { spec: spec.clone(), shapes, slots })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Length of the pooled feature vector feeding the final dense layer.
    pub fn feature_len(&self) -> usize {
        self.shapes[self.spec.gap_index() + 1][0]
    }

    fn run_layers(
        &self,
        weights: &WeightSet,
        x: &[f64],
        upto: usize,
        acts: &mut Vec<Vec<f64>>,
    ) {
        acts.clear();
        acts.push(x.to_vec());
        for i in 0..upto {
            let input = acts.last().unwrap();
            let [c, h, w] = self.shapes[i];
            let out_shape = self.shapes[i + 1];
            let out = match self.spec.layers[i] {
                LayerSpec::Conv2D { kernel_size, stride, .. } => {
                    let lw = &weights.entries[self.slots[i].unwrap()];
                    conv_forward(input, [c, h, w], &lw.kernel.values, &lw.bias.values, kernel_size, stride, out_shape)
                }
                LayerSpec::ReLU => input.iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::MaxPool2D { size } => maxpool_forward(input, [c, h, w], size, out_shape),
                LayerSpec::GlobalAvgPool => {
                    let area = (h * w) as f64;
                    input.chunks(h * w).map(|ch| ch.iter().sum::<f64>() / area).collect()
                }
                LayerSpec::Dense { out_dim } => {
                    let lw = &weights.entries[self.slots[i].unwrap()];
                    dense_forward(input, &lw.kernel.values, &lw.bias.values, out_dim)
                }
                LayerSpec::Softmax => softmax(input),
            };
            acts.push(out);
        }
    }

    /// Class probabilities for one sample.
    pub fn predict_sample(&self, weights: &WeightSet, x: &[f64]) -> [f64; 2] {
        let mut acts = Vec::with_capacity(self.shapes.len());
        self.run_layers(weights, x, self.spec.layers.len(), &mut acts);
        let p = acts.last().unwrap();
        [p[0], p[1]]
    }

    /// Pooled backbone features (output of the GAP layer) for one sample.
    pub fn features(&self, weights: &WeightSet, x: &[f64]) -> Vec<f64> {
        let mut acts = Vec::with_capacity(self.shapes.len());
        self.run_layers(weights, x, self.spec.gap_index() + 1, &mut acts);
        acts.pop().unwrap()
    }

    pub fn positive_scores(&self, weights: &WeightSet, data: &Dataset) -> Vec<f64> {
        let mut acts = Vec::with_capacity(self.shapes.len());
        (0..data.len())
            .map(|i| {
                self.run_layers(weights, data.sample(i), self.spec.layers.len(), &mut acts);
                acts.last().unwrap()[1]
            })
            .collect()
    }

    pub fn mean_loss(&self, weights: &WeightSet, data: &Dataset) -> f64 {
        let mut acts = Vec::with_capacity(self.shapes.len());
        let mut total = 0.0;
        for i in 0..data.len() {
            self.run_layers(weights, data.sample(i), self.spec.layers.len(), &mut acts);
            total += cross_entropy(acts.last().unwrap(), data.labels[i] as usize);
        }
        total / data.len() as f64
    }

    /// Mean cross-entropy over `idx`; gradients are accumulated into `grads`
    /// (which must start zeroed).
    pub fn batch_loss_grad(
        &self,
        weights: &WeightSet,
        data: &Dataset,
        idx: &[usize],
        grads: &mut WeightSet,
    ) -> f64 {
        let n = self.spec.layers.len();
        let scale = 1.0 / idx.len() as f64;
        let mut acts = Vec::with_capacity(self.shapes.len());
        let mut total = 0.0;
        for &s in idx {
            self.run_layers(weights, data.sample(s), n, &mut acts);
            let label = data.labels[s] as usize;
            let probs = &acts[n];
            total += cross_entropy(probs, label);
            // softmax + cross-entropy: d/dlogits = p - y
            let mut delta: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            delta[label] -= scale;
            for i in (0..n - 1).rev() {
                let input = &acts[i];
                let [c, h, w] = self.shapes[i];
                let need_dx = i > 0;
                delta = match self.spec.layers[i] {
                    LayerSpec::Conv2D { kernel_size, stride, .. } => {
                        let slot = self.slots[i].unwrap();
                        let kernel = &weights.entries[slot].kernel.values;
                        let g = &mut grads.entries[slot];
                        conv_backward(
                            input,
                            [c, h, w],
                            kernel,
                            kernel_size,
                            stride,
                            self.shapes[i + 1],
                            &delta,
                            &mut g.kernel.values,
                            &mut g.bias.values,
                            need_dx,
                        )
                    }
                    LayerSpec::ReLU => delta
                        .iter()
                        .zip(input)
                        .map(|(d, &x)| if x > 0.0 { *d } else { 0.0 })
                        .collect(),
                    LayerSpec::MaxPool2D { size } => {
                        maxpool_backward(input, [c, h, w], size, self.shapes[i + 1], &delta)
                    }
                    LayerSpec::GlobalAvgPool => {
                        let area = h * w;
                        let mut dx = vec![0.0; c * area];
                        for (ch, d) in delta.iter().enumerate() {
                            let v = d / area as f64;
                            dx[ch * area..(ch + 1) * area].iter_mut().for_each(|x| *x = v);
                        }
                        dx
                    }
                    LayerSpec::Dense { out_dim } => {
                        let slot = self.slots[i].unwrap();
                        let kernel = &weights.entries[slot].kernel.values;
                        let g = &mut grads.entries[slot];
                        dense_backward(input, kernel, out_dim, &delta, &mut g.kernel.values, &mut g.bias.values)
                    }
                    LayerSpec::Softmax => unreachable!("softmax is always last"),
                };
            }
        }
        total * scale
    }
}

fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Output columns `ox` whose input column `ox * stride + kx - pad` lies in `[0, w)`.
fn valid_cols(ow: usize, w: usize, stride: usize, kx: usize, pad: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    let hi = if w + pad > kx { ((w + pad - kx - 1) / stride + 1).min(ow) } else { 0 };
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    [c, h, w]: [usize; 3],
    kernel: &[f64],
    bias: &[f64],
    k: usize,
    stride: usize,
    [oc, oh, ow]: [usize; 3],
) -> Vec<f64> {
    let pad = k / 2;
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for ci in 0..c {
            let xin = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = kernel[((o * c + ci) * k + ky) * k + kx];
                    let (lo, hi) = valid_cols(ow, w, stride, kx, pad);
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &xin[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut plane[oy * ow + lo..oy * ow + hi];
                        if stride == 1 {
                            let start = lo + kx - pad;
                            for (ov, xv) in orow.iter_mut().zip(&row[start..start + (hi - lo)]) {
                                *ov += wv * xv;
                            }
                        } else {
                            for (j, ov) in orow.iter_mut().enumerate() {
                                *ov += wv * row[(lo + j) * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    [c, h, w]: [usize; 3],
    kernel: &[f64],
    k: usize,
    stride: usize,
    [oc, oh, ow]: [usize; 3],
    dout: &[f64],
    dkernel: &mut [f64],
    dbias: &mut [f64],
    need_dx: bool,
) -> Vec<f64> {
    let pad = k / 2;
    let mut dx = if need_dx { vec![0.0; c * h * w] } else { Vec::new() };
    for o in 0..oc {
        let dplane = &dout[o * oh * ow..(o + 1) * oh * ow];
        dbias[o] += dplane.iter().sum::<f64>();
        for ci in 0..c {
            let xin = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((o * c + ci) * k + ky) * k + kx;
                    let wv = kernel[widx];
                    let (lo, hi) = valid_cols(ow, w, stride, kx, pad);
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let drow = &dplane[oy * ow + lo..oy * ow + hi];
                        let xoff = ci * h * w + iy * w;
                        if stride == 1 {
                            let start = lo + kx - pad;
                            let xrow = &xin[iy * w + start..iy * w + start + (hi - lo)];
                            acc += drow.iter().zip(xrow).map(|(d, xv)| d * xv).sum::<f64>();
                            if need_dx {
                                let dxrow = &mut dx[xoff + start..xoff + start + (hi - lo)];
                                for (dv, d) in dxrow.iter_mut().zip(drow) {
                                    *dv += wv * d;
                                }
                            }
                        } else {
                            for (j, d) in drow.iter().enumerate() {
                                let ix = (lo + j) * stride + kx - pad;
                                acc += d * xin[iy * w + ix];
                                if need_dx {
                                    dx[xoff + ix] += wv * d;
                                }
                            }
                        }
                    }
                    dkernel[widx] += acc;
                }
            }
        }
    }
    dx
}

fn maxpool_argmax(x: &[f64], [_, h, w]: [usize; 3], size: usize, ch: usize, oy: usize, ox: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_v = f64::NEG_INFINITY;
    for dy in 0..size {
        for dx in 0..size {
            let idx = ch * h * w + (oy * size + dy) * w + ox * size + dx;
            if x[idx] > best_v || best == usize::MAX {
                best_v = x[idx];
                best = idx;
            }
        }
    }
    best
}

fn maxpool_forward(x: &[f64], shape: [usize; 3], size: usize, [oc, oh, ow]: [usize; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(oc * oh * ow);
    for ch in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                out.push(x[maxpool_argmax(x, shape, size, ch, oy, ox)]);
            }
        }
    }
    out
}

fn maxpool_backward(x: &[f64], shape: [usize; 3], size: usize, [oc, oh, ow]: [usize; 3], dout: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    for ch in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                dx[maxpool_argmax(x, shape, size, ch, oy, ox)] += dout[(ch * oh + oy) * ow + ox];
            }
        }
    }
    dx
}

fn dense_forward(x: &[f64], kernel: &[f64], bias: &[f64], out_dim: usize) -> Vec<f64> {
    let n = x.len();
    (0..out_dim)
        .map(|o| bias[o] + kernel[o * n..(o + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

fn dense_backward(
    x: &[f64],
    kernel: &[f64],
    out_dim: usize,
    dout: &[f64],
    dkernel: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let n = x.len();
    let mut dx = vec![0.0; n];
    for o in 0..out_dim {
        let d = dout[o];
        dbias[o] += d;
        let row = &kernel[o * n..(o + 1) * n];
        let grow = &mut dkernel[o * n..(o + 1) * n];
        for j in 0..n {
            grow[j] += d * x[j];
            dx[j] += row[j] * d;
        }
    }
    dx
}

fn batch_len(spec: &NetworkSpec, batch: &TensorF) -> Result<usize> {
    let geom = &spec.input_shape;
    if batch.shape.len() != 4 || batch.shape[1..] != geom[..] {
        return shape_err(format!(
            "batch shape {:?} does not match [batch, {}, {}, {}]",
            batch.shape, geom[0], geom[1], geom[2]
        ));
    }
    Ok(batch.shape[0])
}

/// Per-sample class probabilities, shape `(batch, 2)`.
pub fn forward(spec: &NetworkSpec, weights: &WeightSet, batch: &TensorF) -> Result<TensorF> {
    let n = batch_len(spec, batch)?;
    spec.check_weights(weights)?;
    let net = Network::new(spec)?;
    let len = spec.input_len();
    let mut values = Vec::with_capacity(2 * n);
    for i in 0..n {
        values.extend(net.predict_sample(weights, &batch.values[i * len..(i + 1) * len]));
    }
    Ok(TensorF { shape: vec![n, 2], values })
}

/// Converts a one-hot `(batch, 2)` tensor to class indices.
pub fn one_hot_to_labels(labels: &TensorF) -> Result<Vec<u8>> {
    if labels.shape.len() != 2 || labels.shape[1] != 2 {
        return shape_err(format!("labels must have shape (batch, 2), got {:?}", labels.shape));
    }
    labels
        .values
        .chunks(2)
        .map(|row| match (row[0], row[1]) {
            (a, b) if a == 1.0 && b == 0.0 => Ok(0),
            (a, b) if a == 0.0 && b == 1.0 => Ok(1),
            _ => invalid(format!("label row {row:?} is not one-hot")),
        })
        .collect()
}

/// Mean categorical cross-entropy and its gradient with respect to every parameter.
pub fn loss_and_gradients(
    spec: &NetworkSpec,
    weights: &WeightSet,
    batch: &TensorF,
    labels: &TensorF,
) -> Result<(f64, WeightSet)> {
    let n = batch_len(spec, batch)?;
    let classes = one_hot_to_labels(labels)?;
    if classes.len() != n {
        return shape_err(format!("{n} samples but {} label rows", classes.len()));
    }
    if n == 0 {
        return invalid("empty batch");
    }
    spec.check_weights(weights)?;
    let net = Network::new(spec)?;
    let data = Dataset::new(spec.input_len(), batch.values.clone(), classes)?;
    let idx: Vec<usize> = (0..n).collect();
    let mut grads = weights.zeros_like();
    let loss = net.batch_loss_grad(weights, &data, &idx, &mut grads);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_batch(n: usize) -> TensorF {
        let values = (0..n * 256).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        TensorF::new(vec![n, 1, 16, 16], values).unwrap()
    }

    #[test]
    fn default_spec_is_valid_and_small() {
        let spec = NetworkSpec::desk_default();
        let shapes = spec.activation_shapes().unwrap();
        assert_eq!(shapes.last(), Some(&[2, 1, 1]));
        assert!(spec.zero_weights().unwrap().num_params() <= 500);
    }

    #[test]
    fn rejects_missing_head() {
        let mut spec = NetworkSpec::desk_default();
        spec.layers.pop();
        assert!(spec.activation_shapes().is_err());
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let spec = NetworkSpec::desk_default();
        let w = spec.zero_weights().unwrap();
        let out = forward(&spec, &w, &tiny_batch(3)).unwrap();
        assert_eq!(out.shape, vec![3, 2]);
        assert!(out.values.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn uniform_prediction_loss_is_ln2() {
        let spec = NetworkSpec::desk_default();
        let w = spec.zero_weights().unwrap();
        let labels = TensorF::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let (loss, _) = loss_and_gradients(&spec, &w, &tiny_batch(3), &labels).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn non_one_hot_labels_rejected() {
        let spec = NetworkSpec::desk_default();
        let w = spec.zero_weights().unwrap();
        let labels = TensorF::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            loss_and_gradients(&spec, &w, &tiny_batch(1), &labels),
            Err(crate::Error::Validation(_))
        ));
    }

    #[test]
    fn wrong_batch_geometry_is_a_shape_error() {
        let spec = NetworkSpec::desk_default();
        let w = spec.zero_weights().unwrap();
        let batch = TensorF::new(vec![1, 1, 8, 32], vec![0.0; 256]).unwrap();
        assert!(matches!(forward(&spec, &w, &batch), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn spec_hash_is_stable() {
        let a = NetworkSpec::desk_default();
        assert_eq!(a.spec_hash(), NetworkSpec::desk_default().spec_hash());
        let mut b = a.clone();
        b.layers[0] = LayerSpec::Conv2D { out_channels: 5, kernel_size: 3, stride: 1 };
        assert_ne!(a.spec_hash(), b.spec_hash());
    }
}
