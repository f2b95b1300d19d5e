//! Layer and network definitions plus forward inference.
//!
//! The engine is deliberately small: convolution is valid-padding stride-1,
//! pooling is 2x2 stride-2, softmax may appear only once, as the final
//! layer. Shapes are checked once at construction so the hot paths can
//! index without re-validation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Discriminates layer kinds; also the tag byte in the weight file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d = 1,
    MaxPool2d = 2,
    Dense = 3,
    Relu = 4,
    Sigmoid = 5,
    Softmax = 6,
    Flatten = 7,
}

#[derive(Debug, Clone)]
pub enum Layer {
    /// Valid padding, stride 1. Weight shape (out_c, in_c, kh, kw).
    Conv2d { weight: Tensor, bias: Vec<f64> },
    /// Window 2, stride 2 only.
    MaxPool2d { window: usize, stride: usize },
    /// Weight shape (out, in).
    Dense { weight: Tensor, bias: Vec<f64> },
    Relu,
    Sigmoid,
    Softmax,
    Flatten,
}

impl Layer {
    pub fn conv2d(weight: Tensor, bias: Vec<f64>) -> Result<Layer> {
        if weight.shape().len() != 4 {
            return Err(Error::InvalidLayer(format!(
                "conv weight must be 4-d (out_c, in_c, kh, kw), got {:?}",
                weight.shape()
            )));
        }
        if bias.len() != weight.shape()[0] {
            return Err(Error::InvalidLayer(format!(
                "conv bias length {} does not match {} output channels",
                bias.len(),
                weight.shape()[0]
            )));
        }
        Ok(Layer::Conv2d { weight, bias })
    }

    pub fn dense(weight: Tensor, bias: Vec<f64>) -> Result<Layer> {
        if weight.shape().len() != 2 {
            return Err(Error::InvalidLayer(format!(
                "dense weight must be 2-d (out, in), got {:?}",
                weight.shape()
            )));
        }
        if bias.len() != weight.shape()[0] {
            return Err(Error::InvalidLayer(format!(
                "dense bias length {} does not match {} outputs",
                bias.len(),
                weight.shape()[0]
            )));
        }
        Ok(Layer::Dense { weight, bias })
    }

    pub fn max_pool2d(window: usize, stride: usize) -> Result<Layer> {
        if window != 2 || stride != 2 {
            return Err(Error::InvalidLayer(format!(
                "max pool supports window 2 stride 2 only, got window {window} stride {stride}"
            )));
        }
        Ok(Layer::MaxPool2d { window, stride })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d { .. } => LayerKind::Conv2d,
            Layer::MaxPool2d { .. } => LayerKind::MaxPool2d,
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Relu => LayerKind::Relu,
            Layer::Sigmoid => LayerKind::Sigmoid,
            Layer::Softmax => LayerKind::Softmax,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    /// Weights and biases for trainable layers.
    pub fn params(&self) -> Option<(&Tensor, &[f64])> {
        match self {
            Layer::Conv2d { weight, bias } | Layer::Dense { weight, bias } => {
                Some((weight, bias.as_slice()))
            }
            _ => None,
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Vec<f64>)> {
        match self {
            Layer::Conv2d { weight, bias } | Layer::Dense { weight, bias } => Some((weight, bias)),
            _ => None,
        }
    }
}

/// Shape state threaded through the layer stack during validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dims {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Dims {
    pub fn volume(&self) -> usize {
        match *self {
            Dims::Spatial { c, h, w } => c * h * w,
            Dims::Flat(n) => n,
        }
    }
}

fn layer_output_dims(layer: &Layer, input: Dims, index: usize) -> Result<Dims> {
    let fail = |msg: String| Err(Error::ShapeMismatch(format!("layer {index}: {msg}")));
    match layer {
        Layer::Conv2d { weight, .. } => match input {
            Dims::Spatial { c, h, w } => {
                let (oc, ic, kh, kw) = (
                    weight.shape()[0],
                    weight.shape()[1],
                    weight.shape()[2],
                    weight.shape()[3],
                );
                if ic != c {
                    return fail(format!("conv expects {ic} input channels, got {c}"));
                }
                if kh > h || kw > w {
                    return fail(format!("conv kernel {kh}x{kw} larger than input {h}x{w}"));
                }
                Ok(Dims::Spatial {
                    c: oc,
                    h: h - kh + 1,
                    w: w - kw + 1,
                })
            }
            Dims::Flat(_) => fail("conv requires spatial input".into()),
        },
        Layer::MaxPool2d { window, stride } => match input {
            Dims::Spatial { c, h, w } => {
                if h % stride != 0 || w % stride != 0 {
                    return fail(format!("pool input {h}x{w} not divisible by stride {stride}"));
                }
                let _ = window;
                Ok(Dims::Spatial {
                    c,
                    h: h / stride,
                    w: w / stride,
                })
            }
            Dims::Flat(_) => fail("pool requires spatial input".into()),
        },
        Layer::Dense { weight, .. } => match input {
            Dims::Flat(n) => {
                let (out, inp) = (weight.shape()[0], weight.shape()[1]);
                if inp != n {
                    return fail(format!("dense expects {inp} inputs, got {n}"));
                }
                Ok(Dims::Flat(out))
            }
            Dims::Spatial { .. } => fail("dense requires flattened input".into()),
        },
        Layer::Relu | Layer::Sigmoid => Ok(input),
        Layer::Softmax => match input {
            Dims::Flat(n) => Ok(Dims::Flat(n)),
            Dims::Spatial { .. } => fail("softmax requires flattened input".into()),
        },
        Layer::Flatten => match input {
            Dims::Spatial { c, h, w } => Ok(Dims::Flat(c * h * w)),
            Dims::Flat(_) => fail("flatten requires spatial input".into()),
        },
    }
}

/// An ordered layer stack with a fixed input shape and class count.
///
/// Weights are immutable once the network is built; forward passes and
/// gradients are read-only and safe to run from many threads.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: (usize, usize, usize),
    class_count: usize,
    /// Output dims after each layer, precomputed at construction.
    dims: Vec<Dims>,
}

impl Network {
    pub fn new(
        input_shape: (usize, usize, usize),
        layers: Vec<Layer>,
        class_count: usize,
    ) -> Result<Network> {
        if layers.is_empty() {
            return Err(Error::InvalidLayer("network needs at least one layer".into()));
        }
        if class_count == 0 {
            return Err(Error::InvalidLayer("class count must be positive".into()));
        }
        let mut dims = Vec::with_capacity(layers.len());
        let mut cur = Dims::Spatial {
            c: input_shape.0,
            h: input_shape.1,
            w: input_shape.2,
        };
        for (i, layer) in layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) && i + 1 != layers.len() {
                return Err(Error::InvalidLayer(
                    "softmax may appear only as the final layer".into(),
                ));
            }
            cur = layer_output_dims(layer, cur, i)?;
            dims.push(cur);
        }
        if cur.volume() != class_count {
            return Err(Error::ShapeMismatch(format!(
                "final layer produces {} values, expected {class_count} classes",
                cur.volume()
            )));
        }
        Ok(Network {
            layers,
            input_shape,
            class_count,
            dims,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Output dims of layer `i` (as computed at construction).
    pub fn dims_after(&self, i: usize) -> Dims {
        self.dims[i]
    }

    pub fn has_final_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::Softmax))
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let s = batch.shape();
        let (c, h, w) = self.input_shape;
        if s.len() != 4 || s[1] != c || s[2] != h || s[3] != w {
            return Err(Error::ShapeMismatch(format!(
                "batch shape {s:?} does not match network input ({c}, {h}, {w})"
            )));
        }
        batch.check_finite("forward input")?;
        Ok(s[0])
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let s = image.shape();
        let (c, h, w) = self.input_shape;
        if s != [c, h, w] {
            return Err(Error::ShapeMismatch(format!(
                "image shape {s:?} does not match network input ({c}, {h}, {w})"
            )));
        }
        image.check_finite("forward input")
    }

    /// Runs the full stack on a batch of shape (m, c, h, w); returns
    /// (m, class_count). Rows are probability distributions when the final
    /// layer is softmax. Each image is evaluated independently, so batched
    /// and per-image results are bitwise identical.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward_upto(batch, self.layers.len())
    }

    /// Pre-softmax activations z of the last layer before softmax.
    /// When the network has no softmax this equals `forward`.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let upto = if self.has_final_softmax() {
            self.layers.len() - 1
        } else {
            self.layers.len()
        };
        self.forward_upto(batch, upto)
    }

    fn forward_upto(&self, batch: &Tensor, upto: usize) -> Result<Tensor> {
        let m = self.check_batch(batch)?;
        let per = batch.len() / m;
        let mut out = Vec::with_capacity(m * self.class_count);
        for i in 0..m {
            let image = &batch.data()[i * per..(i + 1) * per];
            let mut cur = image.to_vec();
            let mut cur_dims = Dims::Spatial {
                c: self.input_shape.0,
                h: self.input_shape.1,
                w: self.input_shape.2,
            };
            for (li, layer) in self.layers.iter().take(upto).enumerate() {
                cur = apply_layer(layer, &cur, cur_dims);
                cur_dims = self.dims[li];
            }
            out.extend_from_slice(&cur);
        }
        let width = out.len() / m;
        let result = Tensor::from_vec(vec![m, width], out)?;
        result.check_finite("forward output")?;
        Ok(result)
    }

    /// Runs one image through the stack, recording the output of every
    /// layer. Index 0 is the input itself; index i+1 is the output of
    /// layer i. Used by the gradient passes and the activation probes.
    pub fn forward_trace(&self, image: &Tensor) -> Result<Vec<Vec<f64>>> {
        self.check_image(image)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(image.data().to_vec());
        let mut cur_dims = Dims::Spatial {
            c: self.input_shape.0,
            h: self.input_shape.1,
            w: self.input_shape.2,
        };
        for (li, layer) in self.layers.iter().enumerate() {
            let next = apply_layer(layer, acts.last().unwrap(), cur_dims);
            cur_dims = self.dims[li];
            acts.push(next);
        }
        if let Some(bad) = acts.last().unwrap().iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("forward output: {bad}")));
        }
        Ok(acts)
    }

    /// Probability of `class` for a single image.
    pub fn class_probability(&self, image: &Tensor, class: usize) -> Result<f64> {
        if class >= self.class_count {
            return Err(Error::InvalidClass {
                index: class,
                classes: self.class_count,
            });
        }
        let (c, h, w) = self.input_shape;
        let batch = Tensor::from_vec(vec![1, c, h, w], image.data().to_vec())?;
        let probs = self.forward(&batch)?;
        Ok(probs.data()[class])
    }
}

pub(crate) fn apply_layer(layer: &Layer, input: &[f64], dims: Dims) -> Vec<f64> {
    match layer {
        Layer::Conv2d { weight, bias } => {
            let Dims::Spatial { c, h, w } = dims else {
                unreachable!("validated at construction")
            };
            conv2d_forward(input, c, h, w, weight, bias)
        }
        Layer::MaxPool2d { .. } => {
            let Dims::Spatial { c, h, w } = dims else {
                unreachable!("validated at construction")
            };
            maxpool_forward(input, c, h, w)
        }
        Layer::Dense { weight, bias } => dense_forward(input, weight, bias),
        Layer::Relu => input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        Layer::Sigmoid => input.iter().map(|&v| sigmoid(v)).collect(),
        Layer::Softmax => softmax(input),
        Layer::Flatten => input.to_vec(),
    }
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Numerically stable softmax with per-row max subtraction.
pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn conv2d_forward(
    input: &[f64],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    weight: &Tensor,
    bias: &[f64],
) -> Vec<f64> {
    let (oc, ic, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    debug_assert_eq!(ic, in_c);
    let oh = in_h - kh + 1;
    let ow = in_w - kw + 1;
    let wdata = weight.data();
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let out_plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        out_plane.fill(bias[o]);
        for i in 0..ic {
            let in_plane = &input[i * in_h * in_w..(i + 1) * in_h * in_w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wdata[((o * ic + i) * kh + ky) * kw + kx];
                    for oy in 0..oh {
                        let in_row = &in_plane[(oy + ky) * in_w + kx..(oy + ky) * in_w + kx + ow];
                        let out_row = &mut out_plane[oy * ow..oy * ow + ow];
                        for x in 0..ow {
                            out_row[x] += wv * in_row[x];
                        }
                    }
                }
            }
        }
    }
    out
}

fn maxpool_forward(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let oh = h / 2;
    let ow = w / 2;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        let out_plane = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let y = oy * 2;
                let x = ox * 2;
                let m = plane[y * w + x]
                    .max(plane[y * w + x + 1])
                    .max(plane[(y + 1) * w + x])
                    .max(plane[(y + 1) * w + x + 1]);
                out_plane[oy * ow + ox] = m;
            }
        }
    }
    out
}

fn dense_forward(input: &[f64], weight: &Tensor, bias: &[f64]) -> Vec<f64> {
    let (out_n, in_n) = (weight.shape()[0], weight.shape()[1]);
    debug_assert_eq!(input.len(), in_n);
    let wdata = weight.data();
    let mut out = Vec::with_capacity(out_n);
    for o in 0..out_n {
        let row = &wdata[o * in_n..(o + 1) * in_n];
        let mut acc = bias[o];
        for i in 0..in_n {
            acc += row[i] * input[i];
        }
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_dense_softmax() -> Network {
        let w = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        Network::new(
            (1, 1, 2),
            vec![
                Layer::Flatten,
                Layer::dense(w, vec![0.0, 0.0]).unwrap(),
                Layer::Softmax,
            ],
            2,
        )
        .unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let net = identity_dense_softmax();
        let batch = Tensor::from_vec(vec![1, 1, 1, 2], vec![0.0, 0.0]).unwrap();
        let p = net.forward(&batch).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_of_ln2_zero_logits() {
        let net = identity_dense_softmax();
        let batch = Tensor::from_vec(vec![1, 1, 1, 2], vec![2.0_f64.ln(), 0.0]).unwrap();
        let p = net.forward(&batch).unwrap();
        assert!((p.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn one_by_one_conv_scales() {
        let w = Tensor::from_vec(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let net = Network::new(
            (1, 2, 2),
            vec![Layer::conv2d(w, vec![0.0]).unwrap(), Layer::Flatten],
            4,
        )
        .unwrap();
        let batch = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let out = net.forward(&batch).unwrap();
        assert_eq!(out.data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn logits_of_softmax_only_net_is_identity() {
        let net = Network::new((1, 1, 3), vec![Layer::Flatten, Layer::Softmax], 3).unwrap();
        let batch = Tensor::from_vec(vec![1, 1, 1, 3], vec![0.3, -1.0, 2.0]).unwrap();
        let z = net.logits(&batch).unwrap();
        assert_eq!(z.data(), &[0.3, -1.0, 2.0]);
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let net = identity_dense_softmax();
        let batch = Tensor::from_vec(vec![3, 1, 1, 2], vec![5.0, -3.0, 0.1, 0.2, -9.0, 4.0]).unwrap();
        let p = net.forward(&batch).unwrap();
        for row in p.data().chunks(2) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn softmax_only_final() {
        let w = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let err = Network::new(
            (1, 1, 2),
            vec![
                Layer::Flatten,
                Layer::Softmax,
                Layer::dense(w, vec![0.0, 0.0]).unwrap(),
            ],
            2,
        );
        assert!(err.is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = identity_dense_softmax();
        let batch = Tensor::from_vec(vec![1, 1, 1, 3], vec![0.0; 3]).unwrap();
        assert!(net.forward(&batch).is_err());
        let nan = Tensor::from_vec(vec![1, 1, 1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(net.forward(&nan).is_err());
    }

    #[test]
    fn maxpool_matches_bruteforce() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (c, h, w) = (2, 6, 4);
            let data: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let out = maxpool_forward(&data, c, h, w);
            for ch in 0..c {
                for oy in 0..h / 2 {
                    for ox in 0..w / 2 {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(data[ch * h * w + (oy * 2 + dy) * w + ox * 2 + dx]);
                            }
                        }
                        assert_eq!(out[ch * (h / 2) * (w / 2) + oy * (w / 2) + ox], m);
                    }
                }
            }
        }
    }
}
