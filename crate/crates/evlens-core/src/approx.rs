//! Numerical checks for the mean-propagation approximation.
//!
//! The efficient algorithm swaps the arithmetic mean of predictions for
//! the softmax of expected logits (a normalized geometric mean). This
//! module measures how far apart the two are on real inputs, verifies the
//! ReLU and maxout expectation bounds by Monte Carlo, probes activation
//! spread under window resampling, and traces estimator fluctuation
//! against sample count. Every result carries its Monte-Carlo standard
//! error so assertions can use explicit sigma tolerances.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evidence::{
    window_posterior_mean, window_posterior_samples, Window, WindowModel,
};
use crate::network::{Layer, Network};
use crate::rng_for;
use crate::tensor::Tensor;

/// Arithmetic-vs-normalized-geometric-mean comparison for one case.
#[derive(Debug, Clone)]
pub struct MeanComparison {
    pub case: String,
    /// Monte-Carlo estimate of the arithmetic mean of P(c | x').
    pub arithmetic_mean: f64,
    /// Conditional-mean evaluation: softmax of expected logits.
    pub geometric_mean: f64,
    pub abs_error: f64,
    /// Standard error of the arithmetic-mean estimate.
    pub std_error: f64,
    /// Class whose probability was compared (argmax of the prediction).
    pub class_index: usize,
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// For each image: the sampled arithmetic mean (S_ref samples) vs the
/// mean-replacement evaluation at a fixed window, for the predicted
/// class. Per-case seeds derive from `base_seed` + case index, so the
/// case list can be evaluated in parallel without changing any number.
pub fn am_vs_ngm(
    net: &Network,
    images: &[Tensor],
    model: &dyn WindowModel,
    win: Window,
    s_ref: usize,
    batch: usize,
    base_seed: u64,
) -> Result<Vec<MeanComparison>> {
    if images.is_empty() {
        return Err(Error::InvalidData("empty case list".into()));
    }
    if s_ref == 0 {
        return Err(Error::InvalidArgument("s_ref must be >= 1".into()));
    }
    images
        .par_iter()
        .enumerate()
        .map(|(i, image)| -> Result<MeanComparison> {
            let s = image.shape();
            let batch_t = Tensor::from_vec(vec![1, s[0], s[1], s[2]], image.data().to_vec())?;
            let probs = net.forward(&batch_t)?;
            let class = probs
                .data()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(c, _)| c)
                .unwrap();
            let mut rng = rng_for(base_seed, i as u64);
            let samples =
                window_posterior_samples(net, image, class, model, win, s_ref, batch, &mut rng)?;
            let am = samples.iter().sum::<f64>() / s_ref as f64;
            let se = sample_std(&samples, am) / (s_ref as f64).sqrt();
            let ngm = window_posterior_mean(net, image, class, model, win)?;
            Ok(MeanComparison {
                case: format!("image{i}"),
                arithmetic_mean: am,
                geometric_mean: ngm,
                abs_error: (am - ngm).abs(),
                std_error: se,
                class_index: class,
            })
        })
        .collect()
}

/// Monte-Carlo verification record for an expectation bound.
#[derive(Debug, Clone)]
pub struct BoundCheck {
    /// Per-branch means of the affine pre-activations.
    pub branch_means: Vec<f64>,
    /// Per-branch standard deviations.
    pub branch_stds: Vec<f64>,
    /// Monte-Carlo estimate of E[h(x)].
    pub mc_estimate: f64,
    /// h(E[x]) evaluated analytically.
    pub analytic_at_mean: f64,
    /// Jensen lower bound max(mu_i).
    pub lower_bound: f64,
    /// log k + max(mu_i + sigma_i^2 / 2).
    pub upper_bound: f64,
    pub samples: usize,
    pub std_error: f64,
}

impl BoundCheck {
    /// |E_hat[h(x)] - h(E[x])|, the quantity the bounds budget.
    pub fn gap(&self) -> f64 {
        (self.mc_estimate - self.analytic_at_mean).abs()
    }

    /// log k + max(sigma_i^2) / 2, the approximation-error budget.
    pub fn error_budget(&self) -> f64 {
        let k = self.branch_means.len() as f64;
        let max_var = self
            .branch_stds
            .iter()
            .map(|&s| s * s)
            .fold(0.0_f64, f64::max);
        k.ln() + 0.5 * max_var
    }
}

/// E[ReLU(x)] for x ~ N(mu, sigma^2), estimated from `n` samples, against
/// ReLU(mu). For mu = 0 the exact gap is sigma / sqrt(2 pi); for large
/// |mu| / sigma the gap vanishes.
pub fn relu_bound_check(mu: f64, sigma: f64, n: usize, seed: u64) -> Result<BoundCheck> {
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if n < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "need at least 1e4 samples, got {n}"
        )));
    }
    let mut rng = rng_for(seed, 0);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let v = (mu + sigma * z).max(0.0);
        sum += v;
        sumsq += v * v;
    }
    let est = sum / n as f64;
    let var = ((sumsq - n as f64 * est * est) / (n as f64 - 1.0)).max(0.0);
    let se = (var / n as f64).sqrt();
    // ReLU(x) = max(x, 0) is a two-branch maxout
    Ok(BoundCheck {
        branch_means: vec![mu, 0.0],
        branch_stds: vec![sigma, 0.0],
        mc_estimate: est,
        analytic_at_mean: mu.max(0.0),
        lower_bound: mu.max(0.0),
        upper_bound: 2.0_f64.ln() + (mu + 0.5 * sigma * sigma).max(0.0),
        samples: n,
        std_error: se,
    })
}

/// One affine piece of a maxout unit.
#[derive(Debug, Clone)]
pub struct MaxoutBranch {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// A randomized maxout test case: `branches` affine pieces over a
/// `dim`-dimensional independent Gaussian input with per-coordinate std
/// below `max_sigma`.
pub fn random_maxout_case(
    branches: usize,
    dim: usize,
    max_sigma: f64,
    seed: u64,
) -> (Vec<MaxoutBranch>, Vec<f64>, Vec<f64>) {
    use rand::Rng as _;
    let mut rng = rng_for(seed, 0);
    let list = (0..branches)
        .map(|_| MaxoutBranch {
            weights: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            bias: rng.gen_range(-0.5..0.5),
        })
        .collect();
    let input_mean = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let input_std = (0..dim).map(|_| rng.gen_range(0.0..max_sigma)).collect();
    (list, input_mean, input_std)
}

/// E[max_i(w_i . x + b_i)] for x with independent Gaussian coordinates,
/// against the Jensen bounds and the error budget log k + max var / 2.
pub fn maxout_bound_check(
    branches: &[MaxoutBranch],
    input_mean: &[f64],
    input_std: &[f64],
    n: usize,
    seed: u64,
) -> Result<BoundCheck> {
    if branches.is_empty() {
        return Err(Error::InvalidArgument(
            "maxout needs at least one branch".into(),
        ));
    }
    if input_mean.len() != input_std.len() {
        return Err(Error::ShapeMismatch(
            "input mean and std lengths differ".into(),
        ));
    }
    if input_std.iter().any(|&s| s < 0.0) {
        return Err(Error::InvalidArgument("negative input std".into()));
    }
    let dim = input_mean.len();
    for (bi, b) in branches.iter().enumerate() {
        if b.weights.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "branch {bi} has {} weights for {dim} inputs",
                b.weights.len()
            )));
        }
    }
    let branch_means: Vec<f64> = branches
        .iter()
        .map(|b| {
            b.bias
                + b.weights
                    .iter()
                    .zip(input_mean)
                    .map(|(&w, &m)| w * m)
                    .sum::<f64>()
        })
        .collect();
    let branch_stds: Vec<f64> = branches
        .iter()
        .map(|b| {
            b.weights
                .iter()
                .zip(input_std)
                .map(|(&w, &s)| w * w * s * s)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut rng = rng_for(seed, 0);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut x = vec![0.0; dim];
    for _ in 0..n {
        for (xi, (&m, &s)) in x.iter_mut().zip(input_mean.iter().zip(input_std)) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *xi = m + s * z;
        }
        let h = branches
            .iter()
            .map(|b| {
                b.bias
                    + b.weights
                        .iter()
                        .zip(&x)
                        .map(|(&w, &v)| w * v)
                        .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        sum += h;
        sumsq += h * h;
    }
    let est = sum / n as f64;
    let var = ((sumsq - n as f64 * est * est) / (n as f64 - 1.0)).max(0.0);
    let se = (var / n as f64).sqrt();
    let lower = branch_means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let upper = (branches.len() as f64).ln()
        + branch_means
            .iter()
            .zip(&branch_stds)
            .map(|(&m, &s)| m + 0.5 * s * s)
            .fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundCheck {
        branch_means,
        branch_stds,
        mc_estimate: est,
        analytic_at_mean: lower,
        lower_bound: lower,
        upper_bound: upper,
        samples: n,
        std_error: se,
    })
}

/// Per-neuron spread of a dense layer's pre-activation outputs over a
/// batch of window-resampled inputs.
#[derive(Debug, Clone)]
pub struct DenseLayerStats {
    /// Index of the dense layer in the network's layer list.
    pub layer_index: usize,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Fills the window with `samples` draws, runs each through the network
/// and reports mean and standard deviation of every dense-layer output
/// neuron across the batch.
pub fn activation_stats(
    net: &Network,
    image: &Tensor,
    model: &dyn WindowModel,
    win: Window,
    samples: usize,
    seed: u64,
) -> Result<Vec<DenseLayerStats>> {
    if samples < 2 {
        return Err(Error::InvalidArgument(
            "activation statistics need at least 2 samples".into(),
        ));
    }
    let dense_layers: Vec<usize> = net
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::Dense { .. }))
        .map(|(i, _)| i)
        .collect();
    if dense_layers.is_empty() {
        return Err(Error::InvalidLayer(
            "network has no dense layers to probe".into(),
        ));
    }
    let mut rng = rng_for(seed, 0);
    let mut per_layer: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(samples); dense_layers.len()];
    for _ in 0..samples {
        let fill = model.sample_fill(image, win, &mut rng)?;
        let filled = crate::evidence::apply_fill(image, win, &fill);
        let trace = net.forward_trace(&filled)?;
        for (slot, &li) in per_layer.iter_mut().zip(&dense_layers) {
            slot.push(trace[li + 1].clone());
        }
    }
    let mut out = Vec::with_capacity(dense_layers.len());
    for (slot, &li) in per_layer.iter().zip(&dense_layers) {
        let neurons = slot[0].len();
        let mut means = Vec::with_capacity(neurons);
        let mut stds = Vec::with_capacity(neurons);
        for n in 0..neurons {
            let (m, s) = mean_std_anchored(slot.iter().map(|row| row[n]), samples);
            means.push(m);
            stds.push(s);
        }
        out.push(DenseLayerStats {
            layer_index: li,
            means,
            stds,
        });
    }
    Ok(out)
}

/// Two-pass mean/std anchored at the first value, so a run of identical
/// values reports exactly zero spread.
fn mean_std_anchored(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let anchor = values.clone().next().unwrap();
    let mean_d = values.clone().map(|v| v - anchor).sum::<f64>() / n as f64;
    let ss: f64 = values
        .map(|v| {
            let d = (v - anchor) - mean_d;
            d * d
        })
        .sum();
    (anchor + mean_d, (ss / (n as f64 - 1.0)).sqrt())
}

/// Estimator behavior at one sample count.
#[derive(Debug, Clone)]
pub struct FluctuationPoint {
    pub samples: usize,
    /// Per-repeat arithmetic-mean estimates of P(c | x \ x_w).
    pub estimates: Vec<f64>,
    /// Mean |AM - NGM| over the repeats.
    pub mean_abs_diff: f64,
    /// Spread of the estimates across repeats (sample std).
    pub std_across_seeds: f64,
    /// The mean-replacement evaluation; identical for every S.
    pub ngm: f64,
}

/// |AM_S - NGM| as a function of S, repeated over independent seeds.
pub fn sample_fluctuation(
    net: &Network,
    image: &Tensor,
    class: usize,
    model: &dyn WindowModel,
    win: Window,
    s_list: &[usize],
    repeats: usize,
    batch: usize,
    base_seed: u64,
) -> Result<Vec<FluctuationPoint>> {
    if s_list.is_empty() || repeats == 0 {
        return Err(Error::InvalidArgument(
            "need at least one sample count and one repeat".into(),
        ));
    }
    if s_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "sample counts must be strictly ascending".into(),
        ));
    }
    let ngm = window_posterior_mean(net, image, class, model, win)?;
    let mut out = Vec::with_capacity(s_list.len());
    for (si, &s) in s_list.iter().enumerate() {
        let estimates: Vec<f64> = (0..repeats)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let mut rng = rng_for(base_seed, (si * repeats + r) as u64);
                let probs =
                    window_posterior_samples(net, image, class, model, win, s, batch, &mut rng)?;
                Ok(probs.iter().sum::<f64>() / s as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean_abs_diff =
            estimates.iter().map(|&e| (e - ngm).abs()).sum::<f64>() / repeats as f64;
        let mean = estimates.iter().sum::<f64>() / repeats as f64;
        let std_across_seeds = sample_std(&estimates, mean);
        out.push(FluctuationPoint {
            samples: s,
            estimates,
            mean_abs_diff,
            std_across_seeds,
            ngm,
        });
    }
    Ok(out)
}

/// Equal-width histogram; `range` defaults to the observed min/max.
/// Values at the top edge land in the last bin.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if values.is_empty() || bins == 0 {
        return Err(Error::InvalidData("histogram needs data and bins".into()));
    }
    let (lo, hi) = match range {
        Some(r) => r,
        None => {
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    };
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::InvalidData(format!("bad histogram range [{lo}, {hi}]")));
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = if width == 0.0 || v >= hi {
            bins - 1
        } else {
            (((v - lo) / width) as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::Window;
    use crate::Rng;
    use rand::Rng as _;
    use rand::SeedableRng;

    /// One-pixel binary prior: 0 or 1 with equal probability, mean 0.5.
    struct TwoPointPrior;

    impl WindowModel for TwoPointPrior {
        fn window_side(&self) -> usize {
            1
        }

        fn outer_side(&self) -> Option<usize> {
            None
        }

        fn mean_fill(&self, _image: &Tensor, _win: Window) -> crate::Result<Vec<f64>> {
            Ok(vec![0.5])
        }

        fn sample_fill(
            &self,
            _image: &Tensor,
            _win: Window,
            rng: &mut Rng,
        ) -> crate::Result<Vec<f64>> {
            Ok(vec![if rng.gen_bool(0.5) { 1.0 } else { 0.0 }])
        }
    }

    #[test]
    fn symmetric_sigmoid_case_has_zero_error() {
        // sigmoid(2a x - a) maps the two prior points to sigma(+-a);
        // the mean input maps to sigma(0) = 0.5 exactly
        let a = 2.0;
        let net = Network::new(
            (1, 1, 1),
            vec![
                Layer::Flatten,
                Layer::dense(
                    Tensor::from_vec(vec![1, 1], vec![2.0 * a]).unwrap(),
                    vec![-a],
                )
                .unwrap(),
                Layer::Sigmoid,
            ],
            1,
        )
        .unwrap();
        let image = Tensor::filled(vec![1, 1, 1], 1.0);
        let win = Window { y: 0, x: 0, k: 1 };
        let cases = am_vs_ngm(&net, &[image], &TwoPointPrior, win, 4000, 64, 9).unwrap();
        let c = &cases[0];
        assert_eq!(c.geometric_mean, 0.5);
        assert!(
            (c.arithmetic_mean - 0.5).abs() < 4.0 * c.std_error,
            "am {} se {}",
            c.arithmetic_mean,
            c.std_error
        );
    }

    #[test]
    fn linear_network_makes_am_equal_ngm() {
        // no softmax: expectation commutes with the whole network
        let net = Network::new(
            (1, 2, 2),
            vec![
                Layer::Flatten,
                Layer::dense(
                    Tensor::from_vec(vec![1, 4], vec![0.1, 0.2, 0.3, 0.2]).unwrap(),
                    vec![0.1],
                )
                .unwrap(),
            ],
            1,
        )
        .unwrap();
        let image = Tensor::from_vec(vec![1, 2, 2], vec![0.2, 0.8, 0.5, 0.1]).unwrap();
        let model = crate::patch::MarginalModel::new(1, 1, vec![0.4], vec![0.04]).unwrap();
        let win = Window { y: 1, x: 0, k: 1 };
        let cases = am_vs_ngm(&net, &[image], &model, win, 5000, 128, 3).unwrap();
        let c = &cases[0];
        assert!(
            (c.arithmetic_mean - c.geometric_mean).abs() < 3.0 * c.std_error,
            "am {} ngm {} se {}",
            c.arithmetic_mean,
            c.geometric_mean,
            c.std_error
        );
    }

    #[test]
    fn empty_case_list_is_rejected() {
        let net = Network::new((1, 1, 1), vec![Layer::Flatten, Layer::Softmax], 1).unwrap();
        let err = am_vs_ngm(
            &net,
            &[],
            &TwoPointPrior,
            Window { y: 0, x: 0, k: 1 },
            10,
            8,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("empty case list"));
    }

    #[test]
    fn relu_gap_at_zero_mean_is_sigma_over_sqrt_2pi() {
        for &sigma in &[0.5, 1.0, 2.0] {
            let check = relu_bound_check(0.0, sigma, 200_000, 77).unwrap();
            let expected = sigma / (2.0 * std::f64::consts::PI).sqrt();
            assert!(
                (check.gap() - expected).abs() < 4.0 * check.std_error,
                "sigma {sigma}: gap {} expected {expected} se {}",
                check.gap(),
                check.std_error
            );
        }
    }

    #[test]
    fn relu_gap_vanishes_for_large_mean_over_sigma() {
        let tiny = relu_bound_check(1.0, 1e-6, 10_000, 5).unwrap();
        assert!(tiny.gap() < 1e-5);
        let far = relu_bound_check(10.0, 1.0, 200_000, 6).unwrap();
        assert!(far.gap() < 1e-3, "gap {}", far.gap());
    }

    #[test]
    fn relu_rejects_bad_arguments() {
        assert!(relu_bound_check(0.0, 0.0, 10_000, 0).is_err());
        assert!(relu_bound_check(0.0, -1.0, 10_000, 0).is_err());
        assert!(relu_bound_check(0.0, 1.0, 100, 0).is_err());
    }

    #[test]
    fn single_branch_maxout_is_exactly_linear() {
        let branches = vec![MaxoutBranch {
            weights: vec![0.5, -0.25],
            bias: 0.3,
        }];
        let check =
            maxout_bound_check(&branches, &[0.2, 0.4], &[0.3, 0.2], 100_000, 11).unwrap();
        // mu_1 = 0.3 + 0.1 - 0.1 = 0.3
        assert!((check.lower_bound - 0.3).abs() < 1e-12);
        assert!(check.gap() < 4.0 * check.std_error);
        // k = 1: error budget is just max var / 2
        assert!((check.error_budget() - 0.5 * check.branch_stds[0].powi(2)).abs() < 1e-12);
    }

    #[test]
    fn two_branch_maxout_reduces_to_relu() {
        let branches = vec![
            MaxoutBranch {
                weights: vec![1.0],
                bias: 0.0,
            },
            MaxoutBranch {
                weights: vec![0.0],
                bias: 0.0,
            },
        ];
        let check = maxout_bound_check(&branches, &[0.0], &[1.0], 200_000, 13).unwrap();
        let expected = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((check.mc_estimate - expected).abs() < 4.0 * check.std_error);
        assert!(check.mc_estimate <= check.upper_bound + 4.0 * check.std_error);
        assert!(check.mc_estimate >= check.lower_bound - 4.0 * check.std_error);
        assert!((check.upper_bound - (2.0_f64.ln() + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn maxout_rejects_empty_branches() {
        let err = maxout_bound_check(&[], &[0.0], &[1.0], 10_000, 0).unwrap_err();
        assert!(err.to_string().contains("branch"));
    }

    #[test]
    fn zero_variance_fills_give_zero_activation_spread() {
        let mut rng = Rng::seed_from_u64(4);
        let w: Vec<f64> = (0..3 * 9).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let net = Network::new(
            (1, 3, 3),
            vec![
                Layer::Flatten,
                Layer::dense(Tensor::from_vec(vec![3, 9], w).unwrap(), vec![0.0; 3]).unwrap(),
                Layer::Softmax,
            ],
            3,
        )
        .unwrap();
        let model = crate::patch::MarginalModel::new(
            2,
            1,
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.0; 4],
        )
        .unwrap();
        let image = Tensor::filled(vec![1, 3, 3], 0.9);
        let stats = activation_stats(
            &net,
            &image,
            &model,
            Window { y: 0, x: 0, k: 2 },
            16,
            3,
        )
        .unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].means.len(), 3);
        assert!(stats[0].stds.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn activation_stats_require_dense_layers() {
        let net = Network::new((1, 2, 2), vec![Layer::Flatten, Layer::Softmax], 4).unwrap();
        let image = Tensor::filled(vec![1, 2, 2], 0.1);
        let model = crate::patch::MarginalModel::new(1, 1, vec![0.0], vec![1.0]).unwrap();
        let err = activation_stats(&net, &image, &model, Window { y: 0, x: 0, k: 1 }, 8, 0)
            .unwrap_err();
        assert!(err.to_string().contains("dense"));
    }

    #[test]
    fn fluctuation_ngm_is_constant_and_spread_shrinks() {
        let mut rng = Rng::seed_from_u64(6);
        let w: Vec<f64> = (0..2 * 9).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let net = Network::new(
            (1, 3, 3),
            vec![
                Layer::Flatten,
                Layer::dense(Tensor::from_vec(vec![2, 9], w).unwrap(), vec![0.0; 2]).unwrap(),
                Layer::Softmax,
            ],
            2,
        )
        .unwrap();
        let model =
            crate::patch::MarginalModel::new(1, 1, vec![0.5], vec![0.09]).unwrap();
        let image = Tensor::filled(vec![1, 3, 3], 0.4);
        let points = sample_fluctuation(
            &net,
            &image,
            0,
            &model,
            Window { y: 1, x: 1, k: 1 },
            &[1, 16, 256],
            12,
            64,
            21,
        )
        .unwrap();
        assert!(points.windows(2).all(|p| p[0].ngm == p[1].ngm));
        assert!(
            points[0].std_across_seeds > points[2].std_across_seeds,
            "S=1 spread {} should exceed S=256 spread {}",
            points[0].std_across_seeds,
            points[2].std_across_seeds
        );
        let err = sample_fluctuation(
            &net,
            &image,
            0,
            &model,
            Window { y: 0, x: 0, k: 1 },
            &[16, 4],
            3,
            64,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("ascending"));
    }

    #[test]
    fn histogram_bins_and_edges() {
        let values = vec![0.0, 0.1, 0.1, 0.25, 0.9, 1.0];
        let h = histogram(&values, 10, Some((0.0, 1.0))).unwrap();
        assert_eq!(h.edges.len(), 11);
        assert_eq!(h.counts.iter().sum::<usize>(), values.len());
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[1], 2);
        assert_eq!(h.counts[2], 1);
        assert_eq!(h.counts[9], 2); // 0.9 and the top edge 1.0
        let constant = histogram(&[0.5; 4], 3, None).unwrap();
        assert_eq!(constant.counts, vec![0, 0, 4]);
    }
}
