//! Minibatch SGD on the cross-entropy loss.
//!
//! Training is single-threaded and fully determined by the seed: the same
//! seed gives the same shuffles, the same updates and bit-identical
//! weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grad::param_gradient;
use crate::idx::Dataset;
use crate::network::{Layer, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub test_accuracy: Option<f64>,
}

/// Fraction of examples whose argmax probability matches the label.
pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for i in 0..ds.len() {
        let image = ds.image(i);
        let (c, h, w) = net.input_shape();
        let batch = Tensor::from_vec(vec![1, c, h, w], image.into_data())?;
        let probs = net.forward(&batch)?;
        let row = probs.data();
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if pred == ds.label(i) as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Trains `net` with plain SGD and returns the trained network together
/// with per-epoch statistics. When `test_set` is given, test accuracy is
/// evaluated after every epoch.
pub fn train(
    mut net: Network,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<EpochStats>)> {
    if train_set.is_empty() {
        return Err(Error::InvalidData("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            loss_sum += sgd_step(&mut net, train_set, batch, cfg.learning_rate)?;
        }
        let test_accuracy = match test_set {
            Some(ts) => Some(accuracy(&net, ts)?),
            None => None,
        };
        log.push(EpochStats {
            epoch,
            mean_loss: loss_sum / train_set.len() as f64,
            test_accuracy,
        });
    }
    Ok((net, log))
}

/// One minibatch update; returns the summed loss over the batch.
fn sgd_step(net: &mut Network, ds: &Dataset, batch: &[usize], lr: f64) -> Result<f64> {
    let mut acc: Option<Vec<Option<(Tensor, Vec<f64>)>>> = None;
    let mut loss_sum = 0.0;
    for &i in batch {
        let image = ds.image(i);
        let pg = param_gradient(net, &image, ds.label(i) as usize)?;
        loss_sum += pg.loss;
        match &mut acc {
            None => acc = Some(pg.grads),
            Some(total) => {
                for (t, g) in total.iter_mut().zip(pg.grads) {
                    if let (Some((tw, tb)), Some((gw, gb))) = (t.as_mut(), g) {
                        for (a, b) in tw.data_mut().iter_mut().zip(gw.data()) {
                            *a += b;
                        }
                        for (a, b) in tb.iter_mut().zip(gb) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }
    let grads = acc.unwrap();
    let scale = lr / batch.len() as f64;
    for (layer, grad) in net.layers_mut().iter_mut().zip(grads) {
        if let (Some((w, b)), Some((gw, gb))) = (layer.params_mut(), grad) {
            for (wv, gv) in w.data_mut().iter_mut().zip(gw.data()) {
                *wv -= scale * gv;
            }
            for (bv, gv) in b.iter_mut().zip(gb) {
                *bv -= scale * gv;
            }
        }
    }
    Ok(loss_sum)
}

fn he_normal(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

/// The six-layer MNIST classifier: two conv/pool stages and two dense
/// layers, ReLU activations, softmax output. Filter counts are 8 and 16
/// with a 128-wide hidden dense layer.
pub fn mnist_network(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv1_w = he_normal(&mut rng, 8 * 1 * 5 * 5, 25);
    let conv2_w = he_normal(&mut rng, 16 * 8 * 5 * 5, 8 * 25);
    let dense1_w = he_normal(&mut rng, 128 * 256, 256);
    let dense2_w = he_normal(&mut rng, 10 * 128, 128);
    let layers = vec![
        Layer::conv2d(
            Tensor::from_vec(vec![8, 1, 5, 5], conv1_w).unwrap(),
            vec![0.0; 8],
        )
        .unwrap(),
        Layer::Relu,
        Layer::max_pool2d(2, 2).unwrap(),
        Layer::conv2d(
            Tensor::from_vec(vec![16, 8, 5, 5], conv2_w).unwrap(),
            vec![0.0; 16],
        )
        .unwrap(),
        Layer::Relu,
        Layer::max_pool2d(2, 2).unwrap(),
        Layer::Flatten,
        Layer::dense(
            Tensor::from_vec(vec![128, 256], dense1_w).unwrap(),
            vec![0.0; 128],
        )
        .unwrap(),
        Layer::Relu,
        Layer::dense(
            Tensor::from_vec(vec![10, 128], dense2_w).unwrap(),
            vec![0.0; 10],
        )
        .unwrap(),
        Layer::Softmax,
    ];
    Network::new((1, 28, 28), layers, 10).unwrap()
}
