//! Command implementations behind the `evlens` binary.
//!
//! Each `cmd_*` function does the work and returns a structured report;
//! the binary layer only parses flags and prints. Artifacts (weight
//! files, model files, evidence grids, heatmaps, CSVs) are byte-stable
//! for a fixed seed, so golden tests can diff them directly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use evlens_core::approx::{
    activation_stats, am_vs_ngm, histogram, maxout_bound_check, random_maxout_case,
    relu_bound_check, sample_fluctuation,
};
use evlens_core::evidence::{
    count_forward_passes, pda_efficient, pda_gradient, pda_original, saliency_map, write_evidence,
    EvidenceMap, ExplainConfig, Method, PassCounts, Sampling, Window, WindowModel,
};
use evlens_core::idx::load_dataset;
use evlens_core::network::Network;
use evlens_core::patch::{fit_marginal, fit_patch_model, load_model, StoredModel};
use evlens_core::render::{overlay, read_image_tensor, render_heatmap, write_ppm};
use evlens_core::train::{mnist_network, train, EpochStats, TrainConfig};
use evlens_core::weights::{load_weights, save_weights};
use evlens_core::{Error, Result, Tensor};

pub const DEFAULT_SEED: u64 = 42;

/// Seed resolution: explicit flag, then the EVLENS_SEED environment
/// variable, then the built-in default.
pub fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("EVLENS_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(DEFAULT_SEED)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a CSV with a `# seed=` line, a header row, then data rows.
fn write_csv(path: &Path, seed: u64, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = format!("# seed={seed}\n{}\n", header.join(","));
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Use only the first N training examples.
    pub limit: Option<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub final_test_accuracy: Option<f64>,
    pub out: PathBuf,
}

/// Trains the six-layer MNIST network and writes the weight file.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainReport> {
    let train_set = load_dataset(&args.images, &args.labels, args.limit)?;
    let test_set = match (&args.test_images, &args.test_labels) {
        (Some(i), Some(l)) => Some(load_dataset(i, l, None)?),
        (None, None) => None,
        _ => {
            return Err(Error::InvalidArgument(
                "need both test images and test labels, or neither".into(),
            ))
        }
    };
    let cfg = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        seed: args.seed,
    };
    let net = mnist_network(args.seed);
    if (train_set.height, train_set.width) != (28, 28) {
        return Err(Error::InvalidData(format!(
            "MNIST trainer expects 28x28 images, got {}x{}",
            train_set.height, train_set.width
        )));
    }
    let (net, log) = train(net, &train_set, test_set.as_ref(), &cfg)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    save_weights(&net, &args.out)?;
    let final_test_accuracy = log.last().and_then(|e| e.test_accuracy);
    Ok(TrainReport {
        epochs: log,
        final_test_accuracy,
        out: args.out.clone(),
    })
}

// ------------------------------------------------------------------ fit

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Conditional,
    Marginal,
}

#[derive(Debug, Clone)]
pub struct FitArgs {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub limit: Option<usize>,
    pub kind: ModelKind,
    pub window: usize,
    pub outer: usize,
    /// None picks the default ridge (1e-4 x mean covariance diagonal).
    pub ridge: Option<f64>,
    pub out: PathBuf,
}

#[derive(Debug)]
pub struct FitReport {
    pub kind: ModelKind,
    pub window: usize,
    pub outer: usize,
    pub ridge: Option<f64>,
    /// Smallest and largest covariance eigenvalue (conditional models).
    pub eigenvalue_range: Option<(f64, f64)>,
    /// Smallest and largest per-pixel variance (marginal models).
    pub variance_range: Option<(f64, f64)>,
    pub out: PathBuf,
}

/// Fits a patch distribution from a dataset and writes the model file.
pub fn cmd_fit(args: &FitArgs) -> Result<FitReport> {
    if args.kind == ModelKind::Conditional && args.window >= args.outer {
        return Err(Error::InvalidArgument(format!(
            "conditional models need window < outer patch, got k={} l={}",
            args.window, args.outer
        )));
    }
    let ds = load_dataset(&args.images, &args.labels, args.limit)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    let images = (0..ds.len()).map(|i| ds.image(i));
    match args.kind {
        ModelKind::Conditional => {
            let model = fit_patch_model(images, args.window, args.outer, args.ridge)?;
            model.save(&args.out)?;
            let (lo, hi) = model.covariance_eigenvalue_range();
            Ok(FitReport {
                kind: args.kind,
                window: model.k(),
                outer: model.l(),
                ridge: Some(model.ridge()),
                eigenvalue_range: Some((lo, hi)),
                variance_range: None,
                out: args.out.clone(),
            })
        }
        ModelKind::Marginal => {
            let model = fit_marginal(images, args.window)?;
            model.save(&args.out)?;
            let lo = model.variance().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = model
                .variance()
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(FitReport {
                kind: args.kind,
                window: model.k(),
                outer: model.k(),
                ridge: None,
                eigenvalue_range: None,
                variance_range: Some((lo, hi)),
                out: args.out.clone(),
            })
        }
    }
}

// -------------------------------------------------------------- explain

/// Where the input image comes from.
#[derive(Debug, Clone)]
pub enum ImageSource {
    /// Binary PPM (P6) or PGM (P5) file.
    File(PathBuf),
    /// Index into an IDX image file.
    Dataset { images: PathBuf, index: usize },
}

/// Geometric input transforms (the invariance-experiment plumbing).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    None,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    Crop { x: usize, y: usize, w: usize, h: usize },
}

impl Transform {
    pub fn parse(s: &str) -> Result<Transform> {
        match s {
            "none" => Ok(Transform::None),
            "rot90" => Ok(Transform::Rot90),
            "rot180" => Ok(Transform::Rot180),
            "rot270" => Ok(Transform::Rot270),
            "fliph" => Ok(Transform::FlipH),
            other => {
                if let Some(rest) = other.strip_prefix("crop:") {
                    let parts: Vec<&str> = rest.split(',').collect();
                    if parts.len() != 4 {
                        return Err(Error::InvalidArgument(
                            "crop transform needs crop:x,y,w,h".into(),
                        ));
                    }
                    let nums: Vec<usize> = parts
                        .iter()
                        .map(|p| {
                            p.parse().map_err(|_| {
                                Error::InvalidArgument(format!("bad crop coordinate {p}"))
                            })
                        })
                        .collect::<Result<_>>()?;
                    Ok(Transform::Crop {
                        x: nums[0],
                        y: nums[1],
                        w: nums[2],
                        h: nums[3],
                    })
                } else {
                    Err(Error::InvalidArgument(format!("unknown transform {other}")))
                }
            }
        }
    }
}

/// Applies a transform. Rotations by 90/270 degrees require square
/// images (the network input shape is fixed). Crop keeps the selected
/// region in place and fills everything else with `pad`, the dataset
/// mean pixel.
pub fn apply_transform(image: &Tensor, t: Transform, pad: f64) -> Result<Tensor> {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    match t {
        Transform::None => Ok(image.clone()),
        Transform::Rot90 | Transform::Rot270 => {
            if h != w {
                return Err(Error::InvalidArgument(
                    "quarter rotations need square images".into(),
                ));
            }
            let mut out = Tensor::zeros(vec![c, h, w]);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let v = image.get_chw(ch, y, x);
                        // rot90: clockwise
                        match t {
                            Transform::Rot90 => out.set_chw(ch, x, h - 1 - y, v),
                            _ => out.set_chw(ch, w - 1 - x, y, v),
                        }
                    }
                }
            }
            Ok(out)
        }
        Transform::Rot180 => {
            let mut out = Tensor::zeros(vec![c, h, w]);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out.set_chw(ch, h - 1 - y, w - 1 - x, image.get_chw(ch, y, x));
                    }
                }
            }
            Ok(out)
        }
        Transform::FlipH => {
            let mut out = Tensor::zeros(vec![c, h, w]);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out.set_chw(ch, y, w - 1 - x, image.get_chw(ch, y, x));
                    }
                }
            }
            Ok(out)
        }
        Transform::Crop {
            x,
            y,
            w: cw,
            h: ch_,
        } => {
            if x + cw > w || y + ch_ > h || cw == 0 || ch_ == 0 {
                return Err(Error::InvalidArgument(format!(
                    "crop {cw}x{ch_}+{x}+{y} outside {h}x{w} image"
                )));
            }
            let mut out = Tensor::filled(vec![c, h, w], pad);
            for chn in 0..c {
                for yy in y..y + ch_ {
                    for xx in x..x + cw {
                        out.set_chw(chn, yy, xx, image.get_chw(chn, yy, xx));
                    }
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExplainArgs {
    pub weights: PathBuf,
    pub model: PathBuf,
    pub image: ImageSource,
    pub out_dir: PathBuf,
    pub method: Method,
    /// Window side; defaults to the model's.
    pub window: Option<usize>,
    /// Outer patch side; defaults to the model's.
    pub outer: Option<usize>,
    pub samples: usize,
    pub batch: usize,
    pub seed: u64,
    pub eps: f64,
    /// Class to explain; defaults to the predicted class.
    pub class: Option<usize>,
    pub transform: Transform,
    /// Overlay blend weight.
    pub alpha: f64,
}

impl ExplainArgs {
    pub fn new(
        weights: impl Into<PathBuf>,
        model: impl Into<PathBuf>,
        image: ImageSource,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        ExplainArgs {
            weights: weights.into(),
            model: model.into(),
            image: image.into(),
            out_dir: out_dir.into(),
            method: Method::Efficient,
            window: None,
            outer: None,
            samples: 10,
            batch: 160,
            seed: DEFAULT_SEED,
            eps: 1e-6,
            class: None,
            transform: Transform::None,
            alpha: 0.5,
        }
    }
}

#[derive(Debug)]
pub struct ExplainReport {
    pub predicted_class: usize,
    pub explained_class: usize,
    pub probability: f64,
    pub passes: PassCounts,
    pub wall_ms: f64,
    pub evidence_path: PathBuf,
    pub heatmap_path: PathBuf,
    pub overlay_path: PathBuf,
}

fn load_input_image(source: &ImageSource, net: &Network) -> Result<Tensor> {
    let raw = match source {
        ImageSource::File(path) => read_image_tensor(path)?,
        ImageSource::Dataset { images, index } => {
            let (n, h, w, pixels) = evlens_core::idx::load_idx_images(images)?;
            if *index >= n {
                return Err(Error::InvalidArgument(format!(
                    "index {index} outside dataset of {n} images"
                )));
            }
            let per = h * w;
            let data: Vec<f64> = pixels[index * per..(index + 1) * per]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect();
            Tensor::from_vec(vec![1, h, w], data)?
        }
    };
    let (want_c, want_h, want_w) = net.input_shape();
    let s = raw.shape().to_vec();
    if (s[1], s[2]) != (want_h, want_w) {
        return Err(Error::ShapeMismatch(format!(
            "image is {}x{}, network expects {want_h}x{want_w}",
            s[1], s[2]
        )));
    }
    if s[0] == want_c {
        return Ok(raw);
    }
    if s[0] == 3 && want_c == 1 {
        // average to gray
        let mut data = Vec::with_capacity(want_h * want_w);
        for y in 0..want_h {
            for x in 0..want_w {
                let v = (raw.get_chw(0, y, x) + raw.get_chw(1, y, x) + raw.get_chw(2, y, x)) / 3.0;
                data.push(v);
            }
        }
        return Tensor::from_vec(vec![1, want_h, want_w], data);
    }
    Err(Error::ShapeMismatch(format!(
        "image has {} channels, network expects {want_c}",
        s[0]
    )))
}

fn model_mean_pixel(model: &StoredModel) -> f64 {
    let mean = match model {
        StoredModel::Conditional(m) => m.mean(),
        StoredModel::Marginal(m) => m.mean(),
    };
    mean.iter().sum::<f64>() / mean.len() as f64
}

fn predicted_class(net: &Network, image: &Tensor) -> Result<(usize, Vec<f64>)> {
    let s = image.shape();
    let batch = Tensor::from_vec(vec![1, s[0], s[1], s[2]], image.data().to_vec())?;
    let probs = net.forward(&batch)?.into_data();
    let class = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    Ok((class, probs))
}

fn explain_config(
    model: &StoredModel,
    window: Option<usize>,
    outer: Option<usize>,
    samples: usize,
    batch: usize,
    seed: u64,
    eps: f64,
    method: Method,
) -> Result<ExplainConfig> {
    let k = window.unwrap_or_else(|| model.window_side());
    let l = match (outer, model.outer_side()) {
        (Some(l), _) => l,
        (None, Some(l)) => l,
        (None, None) => k,
    };
    let sampling = match model {
        StoredModel::Conditional(_) => Sampling::Conditional,
        StoredModel::Marginal(_) => Sampling::Marginal,
    };
    let config = ExplainConfig {
        window: k,
        outer: l,
        samples,
        batch,
        seed,
        eps,
        method,
        sampling,
    };
    config.validate()?;
    Ok(config)
}

/// Runs the selected attribution method and writes the evidence grid, the
/// heatmap and the overlay into the output directory.
pub fn cmd_explain(args: &ExplainArgs) -> Result<ExplainReport> {
    let net = load_weights(&args.weights)?;
    let model = load_model(&args.model)?;
    let image = load_input_image(&args.image, &net)?;
    let image = apply_transform(&image, args.transform, model_mean_pixel(&model))?;
    let config = explain_config(
        &model,
        args.window,
        args.outer,
        args.samples,
        args.batch,
        args.seed,
        args.eps,
        args.method,
    )?;
    let (predicted, probs) = predicted_class(&net, &image)?;
    let class = args.class.unwrap_or(predicted);
    if class >= net.class_count() {
        return Err(Error::InvalidClass {
            index: class,
            classes: net.class_count(),
        });
    }
    ensure_dir(&args.out_dir)?;
    let start = Instant::now();
    let map = match args.method {
        Method::Original => pda_original(&net, &image, class, &model, &config)?,
        Method::Efficient => pda_efficient(&net, &image, class, &model, &config)?,
        Method::Gradient => pda_gradient(&net, &image, class, &model, &config)?,
        Method::Saliency => saliency_map(&net, &image, class)?,
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1000.0;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let passes = count_forward_passes(args.method, &config, (h, w));
    let evidence_path = args.out_dir.join("evidence.txt");
    let heatmap_path = args.out_dir.join("heatmap.ppm");
    let overlay_path = args.out_dir.join("overlay.ppm");
    write_evidence(&map, &evidence_path)?;
    write_ppm(&render_heatmap(&map)?, &heatmap_path)?;
    write_ppm(&overlay(&map, &image, args.alpha)?, &overlay_path)?;
    Ok(ExplainReport {
        predicted_class: predicted,
        explained_class: class,
        probability: probs[class],
        passes,
        wall_ms,
        evidence_path,
        heatmap_path,
        overlay_path,
    })
}

/// In-process variant used by benchmarks: computes the map only.
pub fn explain_map(
    net: &Network,
    model: &StoredModel,
    image: &Tensor,
    class: usize,
    config: &ExplainConfig,
    method: Method,
) -> Result<EvidenceMap> {
    match method {
        Method::Original => pda_original(net, image, class, model, config),
        Method::Efficient => pda_efficient(net, image, class, model, config),
        Method::Gradient => pda_gradient(net, image, class, model, config),
        Method::Saliency => saliency_map(net, image, class),
    }
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub weights: PathBuf,
    pub model: PathBuf,
    pub image: ImageSource,
    pub window: Option<usize>,
    pub outer: Option<usize>,
    pub samples: usize,
    pub batch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: Method,
    pub wall_ms: f64,
    pub passes: PassCounts,
    /// Original wall-clock divided by this method's wall-clock.
    pub speedup_vs_original: f64,
}

#[derive(Debug)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

/// Times the original, efficient and gradient algorithms on one input.
/// The wall clock covers only the explain call itself.
pub fn cmd_bench(args: &BenchArgs) -> Result<BenchReport> {
    let net = load_weights(&args.weights)?;
    let model = load_model(&args.model)?;
    let image = load_input_image(&args.image, &net)?;
    let (class, _) = predicted_class(&net, &image)?;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut rows = Vec::new();
    let mut original_ms = None;
    for method in [Method::Original, Method::Efficient, Method::Gradient] {
        let config = explain_config(
            &model,
            args.window,
            args.outer,
            args.samples,
            args.batch,
            args.seed,
            1e-6,
            method,
        )?;
        let start = Instant::now();
        let map = explain_map(&net, &model, &image, class, &config, method)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1000.0;
        drop(map);
        let passes = count_forward_passes(method, &config, (h, w));
        if method == Method::Original {
            original_ms = Some(wall_ms);
        }
        rows.push(BenchRow {
            method,
            wall_ms,
            passes,
            speedup_vs_original: original_ms.unwrap() / wall_ms,
        });
    }
    Ok(BenchReport { rows })
}

// ------------------------------------------------------------------ lab

#[derive(Debug, Clone)]
pub enum LabExperiment {
    AmVsNgm {
        weights: PathBuf,
        model: PathBuf,
        images: PathBuf,
        labels: PathBuf,
        cases: usize,
        s_ref: usize,
        batch: usize,
        window_y: usize,
        window_x: usize,
    },
    ReluBound {
        mu: f64,
        sigma: f64,
        n: usize,
    },
    MaxoutBound {
        branches: usize,
        dim: usize,
        n: usize,
        max_sigma: f64,
    },
    ActivationStats {
        weights: PathBuf,
        model: PathBuf,
        image: ImageSource,
        samples: usize,
        window_y: usize,
        window_x: usize,
    },
    SampleFluctuation {
        weights: PathBuf,
        model: PathBuf,
        image: ImageSource,
        class: Option<usize>,
        s_list: Vec<usize>,
        repeats: usize,
        batch: usize,
        window_y: usize,
        window_x: usize,
    },
}

#[derive(Debug)]
pub struct LabReport {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Runs one lab experiment and writes its CSV artifacts (seed recorded in
/// every file header).
pub fn cmd_lab(experiment: &LabExperiment, out_dir: &Path, seed: u64) -> Result<LabReport> {
    ensure_dir(out_dir)?;
    match experiment {
        LabExperiment::AmVsNgm {
            weights,
            model,
            images,
            labels,
            cases,
            s_ref,
            batch,
            window_y,
            window_x,
        } => {
            let net = load_weights(weights)?;
            let model = load_model(model)?;
            let ds = load_dataset(images, labels, Some(*cases))?;
            if ds.len() < *cases {
                return Err(Error::InvalidData(format!(
                    "dataset holds {} images, need {cases}",
                    ds.len()
                )));
            }
            let tensors: Vec<Tensor> = (0..ds.len()).map(|i| ds.image(i)).collect();
            let win = Window {
                y: *window_y,
                x: *window_x,
                k: model.window_side(),
            };
            let comparisons = am_vs_ngm(&net, &tensors, &model, win, *s_ref, *batch, seed)?;
            let rows: Vec<Vec<String>> = comparisons
                .iter()
                .map(|c| {
                    vec![
                        c.case.clone(),
                        c.class_index.to_string(),
                        fmt_f(c.arithmetic_mean),
                        fmt_f(c.geometric_mean),
                        fmt_f(c.abs_error),
                        fmt_f(c.std_error),
                    ]
                })
                .collect();
            let main = out_dir.join("am_vs_ngm.csv");
            write_csv(
                &main,
                seed,
                &["case", "class", "am", "ngm", "abs_error", "std_error"],
                &rows,
            )?;
            let errors: Vec<f64> = comparisons.iter().map(|c| c.abs_error).collect();
            let max_err = errors.iter().cloned().fold(0.0_f64, f64::max);
            let hist = histogram(&errors, 10, Some((0.0, max_err)))?;
            let hist_rows: Vec<Vec<String>> = (0..hist.counts.len())
                .map(|i| {
                    vec![
                        fmt_f(hist.edges[i]),
                        fmt_f(hist.edges[i + 1]),
                        hist.counts[i].to_string(),
                    ]
                })
                .collect();
            let hist_path = out_dir.join("am_vs_ngm_hist.csv");
            write_csv(&hist_path, seed, &["bin_lo", "bin_hi", "count"], &hist_rows)?;
            let low_bin = hist.counts[0];
            let max_other = hist.counts[1..].iter().cloned().max().unwrap_or(0);
            Ok(LabReport {
                files: vec![main, hist_path],
                summary: format!(
                    "{} cases, max |AM-NGM| {:.3e}, lowest bin {low_bin} vs max other {max_other}",
                    comparisons.len(),
                    max_err
                ),
            })
        }
        LabExperiment::ReluBound { mu, sigma, n } => {
            let check = relu_bound_check(*mu, *sigma, *n, seed)?;
            let path = out_dir.join("relu_bound.csv");
            write_csv(
                &path,
                seed,
                &[
                    "mu",
                    "sigma",
                    "n",
                    "mc_estimate",
                    "relu_at_mean",
                    "gap",
                    "std_error",
                    "sigma_over_sqrt_2pi",
                ],
                &[vec![
                    fmt_f(*mu),
                    fmt_f(*sigma),
                    n.to_string(),
                    fmt_f(check.mc_estimate),
                    fmt_f(check.analytic_at_mean),
                    fmt_f(check.gap()),
                    fmt_f(check.std_error),
                    fmt_f(sigma / (2.0 * std::f64::consts::PI).sqrt()),
                ]],
            )?;
            Ok(LabReport {
                files: vec![path],
                summary: format!(
                    "gap {:.5} (expected {:.5} at mu=0), se {:.2e}",
                    check.gap(),
                    sigma / (2.0 * std::f64::consts::PI).sqrt(),
                    check.std_error
                ),
            })
        }
        LabExperiment::MaxoutBound {
            branches,
            dim,
            n,
            max_sigma,
        } => {
            let (branch_list, input_mean, input_std) =
                random_maxout_case(*branches, *dim, *max_sigma, seed);
            let check = maxout_bound_check(&branch_list, &input_mean, &input_std, *n, seed)?;
            let path = out_dir.join("maxout_bound.csv");
            let mut rows = Vec::new();
            for (i, (m, s)) in check
                .branch_means
                .iter()
                .zip(&check.branch_stds)
                .enumerate()
            {
                rows.push(vec![
                    format!("branch{i}"),
                    fmt_f(*m),
                    fmt_f(*s),
                    String::new(),
                    String::new(),
                ]);
            }
            rows.push(vec![
                "summary".into(),
                fmt_f(check.mc_estimate),
                fmt_f(check.std_error),
                fmt_f(check.lower_bound),
                fmt_f(check.upper_bound),
            ]);
            write_csv(
                &path,
                seed,
                &["row", "value_or_mean", "se_or_std", "lower", "upper"],
                &rows,
            )?;
            Ok(LabReport {
                files: vec![path],
                summary: format!(
                    "E[h] {:.5} in [{:.5}, {:.5}], budget {:.5}",
                    check.mc_estimate,
                    check.lower_bound,
                    check.upper_bound,
                    check.error_budget()
                ),
            })
        }
        LabExperiment::ActivationStats {
            weights,
            model,
            image,
            samples,
            window_y,
            window_x,
        } => {
            let net = load_weights(weights)?;
            let model = load_model(model)?;
            let image = load_input_image(image, &net)?;
            let win = Window {
                y: *window_y,
                x: *window_x,
                k: model.window_side(),
            };
            let stats = activation_stats(&net, &image, &model, win, *samples, seed)?;
            let mut rows = Vec::new();
            for layer in &stats {
                for (n, (m, s)) in layer.means.iter().zip(&layer.stds).enumerate() {
                    rows.push(vec![
                        layer.layer_index.to_string(),
                        n.to_string(),
                        fmt_f(*m),
                        fmt_f(*s),
                    ]);
                }
            }
            let path = out_dir.join("activation_stats.csv");
            write_csv(&path, seed, &["layer", "neuron", "mean", "std"], &rows)?;
            Ok(LabReport {
                files: vec![path],
                summary: format!(
                    "{} dense layers, {} neurons total",
                    stats.len(),
                    rows.len()
                ),
            })
        }
        LabExperiment::SampleFluctuation {
            weights,
            model,
            image,
            class,
            s_list,
            repeats,
            batch,
            window_y,
            window_x,
        } => {
            let net = load_weights(weights)?;
            let model = load_model(model)?;
            let image = load_input_image(image, &net)?;
            let (predicted, _) = predicted_class(&net, &image)?;
            let class = class.unwrap_or(predicted);
            let win = Window {
                y: *window_y,
                x: *window_x,
                k: model.window_side(),
            };
            let points = sample_fluctuation(
                &net, &image, class, &model, win, s_list, *repeats, *batch, seed,
            )?;
            let rows: Vec<Vec<String>> = points
                .iter()
                .map(|p| {
                    vec![
                        p.samples.to_string(),
                        fmt_f(p.mean_abs_diff),
                        fmt_f(p.std_across_seeds),
                        fmt_f(p.ngm),
                    ]
                })
                .collect();
            let path = out_dir.join("sample_fluctuation.csv");
            write_csv(
                &path,
                seed,
                &["samples", "mean_abs_diff", "std_across_seeds", "ngm"],
                &rows,
            )?;
            Ok(LabReport {
                files: vec![path],
                summary: format!("class {class}, {} sample counts", points.len()),
            })
        }
    }
}

// -------------------------------------------------------------- display

pub fn format_train_report(r: &TrainReport) -> String {
    let mut out = String::new();
    for e in &r.epochs {
        let _ = write!(out, "epoch {}: loss {:.4}", e.epoch, e.mean_loss);
        if let Some(acc) = e.test_accuracy {
            let _ = write!(out, ", test accuracy {:.4}", acc);
        }
        out.push('\n');
    }
    let _ = write!(out, "weights written to {}", r.out.display());
    if let Some(acc) = r.final_test_accuracy {
        let _ = write!(out, "\nfinal test accuracy {acc:.4}");
    }
    out
}

pub fn format_fit_report(r: &FitReport) -> String {
    let mut out = format!(
        "fitted {} model: k={} l={}",
        match r.kind {
            ModelKind::Conditional => "conditional",
            ModelKind::Marginal => "marginal",
        },
        r.window,
        r.outer
    );
    if let Some(ridge) = r.ridge {
        let _ = write!(out, " ridge={ridge:.3e}");
    }
    if let Some((lo, hi)) = r.eigenvalue_range {
        let _ = write!(out, "\ncovariance eigenvalues in [{lo:.3e}, {hi:.3e}], cholesky ok");
    }
    if let Some((lo, hi)) = r.variance_range {
        let _ = write!(out, "\npixel variance in [{lo:.3e}, {hi:.3e}]");
    }
    let _ = write!(out, "\nmodel written to {}", r.out.display());
    out
}

pub fn format_explain_report(r: &ExplainReport) -> String {
    format!(
        "predicted class {} (P = {:.6}), explained class {}\n\
         forward passes: {} ({} batches), backward passes: {}\n\
         wall clock: {:.1} ms\n\
         wrote {}\nwrote {}\nwrote {}",
        r.predicted_class,
        r.probability,
        r.explained_class,
        r.passes.forward,
        r.passes.batches,
        r.passes.backward,
        r.wall_ms,
        r.evidence_path.display(),
        r.heatmap_path.display(),
        r.overlay_path.display()
    )
}

pub fn format_bench_report(r: &BenchReport) -> String {
    let mut out = String::from("method     wall_ms      forwards  batches  backwards  speedup\n");
    for row in &r.rows {
        let _ = writeln!(
            out,
            "{:<9} {:>10.2} {:>12} {:>8} {:>10} {:>8.2}x",
            row.method.name(),
            row.wall_ms,
            row.passes.forward,
            row.passes.batches,
            row.passes.backward,
            row.speedup_vs_original
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_parsing() {
        assert_eq!(Transform::parse("none").unwrap(), Transform::None);
        assert_eq!(Transform::parse("rot180").unwrap(), Transform::Rot180);
        assert_eq!(
            Transform::parse("crop:2,3,10,12").unwrap(),
            Transform::Crop {
                x: 2,
                y: 3,
                w: 10,
                h: 12
            }
        );
        assert!(Transform::parse("rot45").is_err());
        assert!(Transform::parse("crop:1,2").is_err());
    }

    #[test]
    fn transforms_move_pixels_correctly() {
        let image = Tensor::from_vec(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r90 = apply_transform(&image, Transform::Rot90, 0.0).unwrap();
        // clockwise: top-left goes to top-right
        assert_eq!(r90.data(), &[3.0, 1.0, 4.0, 2.0]);
        let r180 = apply_transform(&image, Transform::Rot180, 0.0).unwrap();
        assert_eq!(r180.data(), &[4.0, 3.0, 2.0, 1.0]);
        let r270 = apply_transform(&image, Transform::Rot270, 0.0).unwrap();
        assert_eq!(r270.data(), &[2.0, 4.0, 1.0, 3.0]);
        let flip = apply_transform(&image, Transform::FlipH, 0.0).unwrap();
        assert_eq!(flip.data(), &[2.0, 1.0, 4.0, 3.0]);
        let crop = apply_transform(
            &image,
            Transform::Crop {
                x: 0,
                y: 0,
                w: 1,
                h: 1,
            },
            0.5,
        )
        .unwrap();
        assert_eq!(crop.data(), &[1.0, 0.5, 0.5, 0.5]);
        // rotations compose back to the identity
        let back = apply_transform(&r90, Transform::Rot270, 0.0).unwrap();
        assert_eq!(back.data(), image.data());
    }

    #[test]
    fn seed_resolution_order() {
        std::env::remove_var("EVLENS_SEED");
        assert_eq!(resolve_seed(Some(7)), 7);
        assert_eq!(resolve_seed(None), DEFAULT_SEED);
        std::env::set_var("EVLENS_SEED", "123");
        assert_eq!(resolve_seed(None), 123);
        assert_eq!(resolve_seed(Some(9)), 9);
        std::env::remove_var("EVLENS_SEED");
    }
}
