//! Exact reverse-mode gradients through the layer stack.
//!
//! Two entry points: [`input_gradient`] differentiates a class probability
//! with respect to every input element, [`param_gradient`] differentiates
//! the cross-entropy loss with respect to weights and biases. Both share
//! one backward sweep seeded at the network output.

use crate::error::{Error, Result};
use crate::network::{Dims, Layer, Network};
use crate::tensor::Tensor;

/// Per-layer weight and bias gradients, parallel to `Network::layers()`.
/// Entries are `None` for parameterless layers.
pub type LayerGrads = Vec<Option<(Tensor, Vec<f64>)>>;

/// Gradient of cross-entropy loss plus the forward quantities it reused.
#[derive(Debug, Clone)]
pub struct ParamGradients {
    pub grads: LayerGrads,
    /// -ln P(target | x)
    pub loss: f64,
    /// Output probabilities of the forward pass.
    pub probs: Vec<f64>,
}

/// d P(class | x) / d x, exact, same shape as `image`.
pub fn input_gradient(net: &Network, image: &Tensor, class: usize) -> Result<Tensor> {
    if class >= net.class_count() {
        return Err(Error::InvalidClass {
            index: class,
            classes: net.class_count(),
        });
    }
    let acts = net.forward_trace(image)?;
    let mut seed = vec![0.0; net.class_count()];
    seed[class] = 1.0;
    let (dx, _) = backward(net, &acts, seed, false);
    Tensor::from_vec(image.shape().to_vec(), dx)
}

/// Gradients of -ln P(target | x) for every trainable layer.
/// Requires a final softmax layer.
pub fn param_gradient(net: &Network, image: &Tensor, target: usize) -> Result<ParamGradients> {
    if target >= net.class_count() {
        return Err(Error::InvalidClass {
            index: target,
            classes: net.class_count(),
        });
    }
    if !net.has_final_softmax() {
        return Err(Error::InvalidLayer(
            "cross-entropy gradients require a final softmax layer".into(),
        ));
    }
    let acts = net.forward_trace(image)?;
    let probs = acts.last().unwrap().clone();
    let loss = -probs[target].max(f64::MIN_POSITIVE).ln();
    // d(-ln p_t)/d p_j
    let mut seed = vec![0.0; probs.len()];
    seed[target] = -1.0 / probs[target].max(f64::MIN_POSITIVE);
    let (_, grads) = backward(net, &acts, seed, true);
    Ok(ParamGradients { grads, loss, probs })
}

/// One backward sweep. `seed` is the gradient with respect to the final
/// layer output (`acts.last()`). Returns the input gradient and, when
/// requested, per-layer parameter gradients.
fn backward(net: &Network, acts: &[Vec<f64>], seed: Vec<f64>, want_params: bool) -> (Vec<f64>, LayerGrads) {
    let layers = net.layers();
    let mut grads: LayerGrads = if want_params {
        layers.iter().map(|_| None).collect()
    } else {
        Vec::new()
    };
    let mut g = seed;
    for li in (0..layers.len()).rev() {
        let input = &acts[li];
        let output = &acts[li + 1];
        let in_dims = if li == 0 {
            let (c, h, w) = net.input_shape();
            Dims::Spatial { c, h, w }
        } else {
            net.dims_after(li - 1)
        };
        match &layers[li] {
            Layer::Dense { weight, bias: _ } => {
                let (out_n, in_n) = (weight.shape()[0], weight.shape()[1]);
                let wdata = weight.data();
                if want_params {
                    let mut dw = vec![0.0; out_n * in_n];
                    for o in 0..out_n {
                        let go = g[o];
                        let row = &mut dw[o * in_n..(o + 1) * in_n];
                        for i in 0..in_n {
                            row[i] = go * input[i];
                        }
                    }
                    let db = g.clone();
                    grads[li] = Some((Tensor::from_vec(vec![out_n, in_n], dw).unwrap(), db));
                }
                let mut dx = vec![0.0; in_n];
                for o in 0..out_n {
                    let go = g[o];
                    let row = &wdata[o * in_n..(o + 1) * in_n];
                    for i in 0..in_n {
                        dx[i] += go * row[i];
                    }
                }
                g = dx;
            }
            Layer::Conv2d { weight, bias: _ } => {
                let Dims::Spatial { c, h, w } = in_dims else {
                    unreachable!()
                };
                let (dx, dw, db) = conv2d_backward(input, c, h, w, weight, &g, want_params);
                if want_params {
                    grads[li] = Some((
                        Tensor::from_vec(weight.shape().to_vec(), dw).unwrap(),
                        db,
                    ));
                }
                g = dx;
            }
            Layer::MaxPool2d { .. } => {
                let Dims::Spatial { c, h, w } = in_dims else {
                    unreachable!()
                };
                g = maxpool_backward(input, c, h, w, &g);
            }
            Layer::Relu => {
                g = input
                    .iter()
                    .zip(g.iter())
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
            }
            Layer::Sigmoid => {
                g = output
                    .iter()
                    .zip(g.iter())
                    .map(|(&y, &gv)| gv * y * (1.0 - y))
                    .collect();
            }
            Layer::Softmax => {
                // dz_i = y_i (g_i - sum_j g_j y_j)
                let dot: f64 = g.iter().zip(output.iter()).map(|(gv, y)| gv * y).sum();
                g = output
                    .iter()
                    .zip(g.iter())
                    .map(|(&y, &gv)| y * (gv - dot))
                    .collect();
            }
            Layer::Flatten => {}
        }
    }
    (g, grads)
}

fn conv2d_backward(
    input: &[f64],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    weight: &Tensor,
    g: &[f64],
    want_params: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
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
    let mut dx = vec![0.0; in_c * in_h * in_w];
    let mut dw = if want_params { vec![0.0; wdata.len()] } else { Vec::new() };
    let mut db = if want_params { vec![0.0; oc] } else { Vec::new() };
    for o in 0..oc {
        let g_plane = &g[o * oh * ow..(o + 1) * oh * ow];
        if want_params {
            db[o] = g_plane.iter().sum();
        }
        for i in 0..ic {
            let in_plane = &input[i * in_h * in_w..(i + 1) * in_h * in_w];
            let dx_plane = &mut dx[i * in_h * in_w..(i + 1) * in_h * in_w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wdata[((o * ic + i) * kh + ky) * kw + kx];
                    let mut dwv = 0.0;
                    for oy in 0..oh {
                        let base = (oy + ky) * in_w + kx;
                        let g_row = &g_plane[oy * ow..oy * ow + ow];
                        if want_params {
                            let in_row = &in_plane[base..base + ow];
                            for x in 0..ow {
                                dwv += g_row[x] * in_row[x];
                            }
                        }
                        let dx_row = &mut dx_plane[base..base + ow];
                        for x in 0..ow {
                            dx_row[x] += wv * g_row[x];
                        }
                    }
                    if want_params {
                        dw[((o * ic + i) * kh + ky) * kw + kx] = dwv;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Routes each pooled gradient to the first (row-major) maximal element
/// of its 2x2 window.
fn maxpool_backward(input: &[f64], c: usize, h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let oh = h / 2;
    let ow = w / 2;
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        let dx_plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        let g_plane = &g[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let y = oy * 2;
                let x = ox * 2;
                let idx = [y * w + x, y * w + x + 1, (y + 1) * w + x, (y + 1) * w + x + 1];
                let mut best = idx[0];
                for &i in &idx[1..] {
                    if plane[i] > plane[best] {
                        best = i;
                    }
                }
                dx_plane[best] += g_plane[oy * ow + ox];
            }
        }
    }
    dx
}
