//! Verification utilities: finite-difference oracles and random network
//! generation. Everything here goes through the forward pass only, so it
//! stays independent of the analytic gradient code it is used to check.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::network::{Layer, Network};
use crate::tensor::Tensor;

/// Number of architecture variants produced by [`random_network`].
pub const ARCH_COUNT: usize = 6;

/// Builds a small random network together with a matching random input.
/// `variant` selects the architecture; weights and inputs come from `rng`.
pub fn random_network(rng: &mut ChaCha8Rng, variant: usize) -> (Network, Tensor) {
    let scale = 0.8;
    let dense = |rng: &mut ChaCha8Rng, out: usize, inp: usize| {
        let w: Vec<f64> = (0..out * inp)
            .map(|_| rng.gen_range(-scale..scale) / (inp as f64).sqrt())
            .collect();
        let b: Vec<f64> = (0..out).map(|_| rng.gen_range(-0.2..0.2)).collect();
        Layer::dense(Tensor::from_vec(vec![out, inp], w).unwrap(), b).unwrap()
    };
    let conv = |rng: &mut ChaCha8Rng, oc: usize, ic: usize, k: usize| {
        let fan = (ic * k * k) as f64;
        let w: Vec<f64> = (0..oc * ic * k * k)
            .map(|_| rng.gen_range(-scale..scale) / fan.sqrt())
            .collect();
        let b: Vec<f64> = (0..oc).map(|_| rng.gen_range(-0.2..0.2)).collect();
        Layer::conv2d(Tensor::from_vec(vec![oc, ic, k, k], w).unwrap(), b).unwrap()
    };
    let (input_shape, layers): ((usize, usize, usize), Vec<Layer>) = match variant % ARCH_COUNT {
        0 => (
            (1, 2, 3),
            vec![Layer::Flatten, dense(rng, 2, 6), Layer::Softmax],
        ),
        1 => (
            (1, 2, 3),
            vec![
                Layer::Flatten,
                dense(rng, 5, 6),
                Layer::Relu,
                dense(rng, 3, 5),
                Layer::Softmax,
            ],
        ),
        2 => {
            let mut l = vec![conv(rng, 2, 1, 2), Layer::Relu, Layer::Flatten];
            l.push(dense(rng, 2, 2 * 3 * 3));
            l.push(Layer::Softmax);
            ((1, 4, 4), l)
        }
        3 => {
            // conv 3x3 on 6x6 -> 4x4, pool -> 2x2
            let mut l = vec![conv(rng, 2, 1, 3), Layer::max_pool2d(2, 2).unwrap(), Layer::Flatten];
            l.push(dense(rng, 3, 2 * 2 * 2));
            l.push(Layer::Softmax);
            ((1, 6, 6), l)
        }
        4 => {
            let mut l = vec![conv(rng, 2, 2, 2), Layer::Sigmoid, Layer::Flatten];
            l.push(dense(rng, 2, 2 * 2 * 2));
            l.push(Layer::Softmax);
            ((2, 3, 3), l)
        }
        _ => {
            let mut l = vec![conv(rng, 2, 1, 2), Layer::Relu, conv(rng, 3, 2, 2), Layer::Flatten];
            l.push(dense(rng, 2, 3 * 2 * 2));
            l.push(Layer::Softmax);
            ((1, 4, 4), l)
        }
    };
    let class_count = match layers.iter().rev().find_map(|l| l.params()) {
        Some((w, _)) => w.shape()[0],
        None => unreachable!(),
    };
    let net = Network::new(input_shape, layers, class_count).unwrap();
    let (c, h, w) = input_shape;
    let data: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::from_vec(vec![c, h, w], data).unwrap();
    (net, x)
}

/// Central finite differences of P(class | x) with respect to the input.
pub fn fd_input_gradient(net: &Network, image: &Tensor, class: usize, step: f64) -> Tensor {
    let mut grad = vec![0.0; image.len()];
    for i in 0..image.len() {
        let mut plus = image.clone();
        plus.data_mut()[i] += step;
        let mut minus = image.clone();
        minus.data_mut()[i] -= step;
        let p_plus = net.class_probability(&plus, class).unwrap();
        let p_minus = net.class_probability(&minus, class).unwrap();
        grad[i] = (p_plus - p_minus) / (2.0 * step);
    }
    Tensor::from_vec(image.shape().to_vec(), grad).unwrap()
}

fn ce_loss(net: &Network, image: &Tensor, target: usize) -> f64 {
    -net.class_probability(image, target).unwrap().ln()
}

/// Central finite differences of -ln P(target | x) with respect to every
/// weight and bias. Returns per-layer (weight grad, bias grad) like
/// `param_gradient` does.
pub fn fd_param_gradients(
    net: &Network,
    image: &Tensor,
    target: usize,
    step: f64,
) -> Vec<Option<(Tensor, Vec<f64>)>> {
    let mut result = Vec::with_capacity(net.layers().len());
    for li in 0..net.layers().len() {
        let Some((w, b)) = net.layers()[li].params() else {
            result.push(None);
            continue;
        };
        let mut dw = vec![0.0; w.len()];
        for wi in 0..w.len() {
            let mut plus = net.clone();
            plus.layers_mut()[li].params_mut().unwrap().0.data_mut()[wi] += step;
            let mut minus = net.clone();
            minus.layers_mut()[li].params_mut().unwrap().0.data_mut()[wi] -= step;
            dw[wi] = (ce_loss(&plus, image, target) - ce_loss(&minus, image, target)) / (2.0 * step);
        }
        let mut db = vec![0.0; b.len()];
        for bi in 0..b.len() {
            let mut plus = net.clone();
            plus.layers_mut()[li].params_mut().unwrap().1[bi] += step;
            let mut minus = net.clone();
            minus.layers_mut()[li].params_mut().unwrap().1[bi] -= step;
            db[bi] = (ce_loss(&plus, image, target) - ce_loss(&minus, image, target)) / (2.0 * step);
        }
        result.push(Some((Tensor::from_vec(w.shape().to_vec(), dw).unwrap(), db)));
    }
    result
}

/// Relative error with a small absolute floor so near-zero gradients do
/// not blow the ratio up on finite-difference noise.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Worst relative disagreement between analytic and finite-difference
/// input gradients.
pub fn max_input_grad_error(net: &Network, image: &Tensor, class: usize, step: f64) -> f64 {
    let analytic = crate::grad::input_gradient(net, image, class).unwrap();
    let fd = fd_input_gradient(net, image, class, step);
    analytic
        .data()
        .iter()
        .zip(fd.data())
        .map(|(&a, &f)| relative_error(a, f))
        .fold(0.0, f64::max)
}

/// Worst relative disagreement between analytic and finite-difference
/// parameter gradients.
pub fn max_param_grad_error(net: &Network, image: &Tensor, target: usize, step: f64) -> f64 {
    let analytic = crate::grad::param_gradient(net, image, target).unwrap();
    let fd = fd_param_gradients(net, image, target, step);
    let mut worst = 0.0_f64;
    for (a, f) in analytic.grads.iter().zip(fd.iter()) {
        match (a, f) {
            (Some((aw, ab)), Some((fw, fb))) => {
                for (&x, &y) in aw.data().iter().zip(fw.data()) {
                    worst = worst.max(relative_error(x, y));
                }
                for (&x, &y) in ab.iter().zip(fb.iter()) {
                    worst = worst.max(relative_error(x, y));
                }
            }
            (None, None) => {}
            _ => panic!("param grad layout mismatch"),
        }
    }
    worst
}
