//! `evlens`: train, fit, explain, bench and lab subcommands.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evlens_cli::*;
use evlens_core::evidence::Method;

#[derive(Parser)]
#[command(
    name = "evlens",
    version,
    about = "Evidence analysis for CNN classifiers: prediction-difference heatmaps, \
             approximation labs and benchmarks"
)]
struct Cli {
    /// Worker threads for window-parallel methods (results are identical
    /// for every thread count)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InputImage {
    /// Input image as binary PPM (P6) or PGM (P5)
    #[arg(long)]
    image: Option<PathBuf>,

    /// IDX image file to pick the input from
    #[arg(long)]
    dataset: Option<PathBuf>,

    /// Image index within --dataset
    #[arg(long, default_value_t = 0)]
    index: usize,
}

impl InputImage {
    fn source(&self) -> Result<ImageSource, String> {
        match (&self.image, &self.dataset) {
            (Some(p), None) => Ok(ImageSource::File(p.clone())),
            (None, Some(d)) => Ok(ImageSource::Dataset {
                images: d.clone(),
                index: self.index,
            }),
            (Some(_), Some(_)) => Err("use either --image or --dataset, not both".into()),
            (None, None) => Err("need an input: --image FILE or --dataset FILE --index N".into()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the six-layer MNIST classifier and write a weight file
    Train {
        /// IDX training images
        #[arg(long)]
        images: PathBuf,
        /// IDX training labels
        #[arg(long)]
        labels: PathBuf,
        /// IDX test images (for per-epoch accuracy)
        #[arg(long)]
        test_images: Option<PathBuf>,
        /// IDX test labels
        #[arg(long)]
        test_labels: Option<PathBuf>,
        /// Only use the first N training examples
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        /// RNG seed (falls back to EVLENS_SEED, then 42)
        #[arg(long)]
        seed: Option<u64>,
        /// Output weight file
        #[arg(long)]
        out: PathBuf,
    },

    /// Fit a Gaussian patch model (conditional) or per-pixel marginals
    Fit {
        /// IDX images to fit on
        #[arg(long)]
        images: PathBuf,
        /// IDX labels (presence validates the pairing; labels unused)
        #[arg(long)]
        labels: PathBuf,
        /// Only use the first N images
        #[arg(long)]
        limit: Option<usize>,
        /// Model kind: conditional | marginal
        #[arg(long, default_value = "marginal")]
        kind: String,
        /// Window side k
        #[arg(long, default_value_t = 4)]
        window: usize,
        /// Outer patch side l (conditional only)
        #[arg(long, default_value_t = 8)]
        outer: usize,
        /// Ridge added to the covariance diagonal (default: 1e-4 x mean
        /// diagonal)
        #[arg(long)]
        ridge: Option<f64>,
        /// Output model file
        #[arg(long)]
        out: PathBuf,
    },

    /// Explain one image: evidence grid, heatmap and overlay
    Explain {
        /// Weight file from `train`
        #[arg(long)]
        weights: PathBuf,
        /// Model file from `fit`
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputImage,
        /// Output directory
        #[arg(long)]
        out_dir: PathBuf,
        /// original | efficient | gradient | saliency
        #[arg(long, default_value = "efficient")]
        method: String,
        /// Window side k (default: the model's)
        #[arg(long)]
        window: Option<usize>,
        /// Outer patch side l (default: the model's)
        #[arg(long)]
        outer: Option<usize>,
        /// Samples per window S (original method)
        #[arg(long, default_value_t = 10)]
        samples: usize,
        /// Forward batch size m
        #[arg(long, default_value_t = 160)]
        batch: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Probability clamp for the log odds
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        /// Class to explain (default: the predicted class)
        #[arg(long)]
        class: Option<usize>,
        /// none | rot90 | rot180 | rot270 | fliph | crop:x,y,w,h
        #[arg(long, default_value = "none")]
        transform: String,
        /// Overlay blend weight
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },

    /// Time the original, efficient and gradient algorithms on one input
    Bench {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputImage,
        /// Window side k (default: the model's; paper-style runs use 10)
        #[arg(long)]
        window: Option<usize>,
        /// Outer patch side l (default: the model's; paper-style runs use 18)
        #[arg(long)]
        outer: Option<usize>,
        /// Samples per window for the original algorithm
        #[arg(long, default_value_t = 10)]
        samples: usize,
        /// Forward batch size
        #[arg(long, default_value_t = 160)]
        batch: usize,
        #[arg(long)]
        seed: Option<u64>,
    },

    /// Numerical experiments; CSVs carry their seed in the header
    Lab {
        #[command(subcommand)]
        experiment: LabCommand,
    },
}

#[derive(Subcommand)]
enum LabCommand {
    /// Arithmetic vs normalized geometric mean over a test set
    AmVsNgm {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Number of test images
        #[arg(long, default_value_t = 200)]
        cases: usize,
        /// Reference sample count for the arithmetic mean
        #[arg(long, default_value_t = 500)]
        s_ref: usize,
        #[arg(long, default_value_t = 160)]
        batch: usize,
        /// Fixed window location
        #[arg(long, default_value_t = 10)]
        window_y: usize,
        #[arg(long, default_value_t = 10)]
        window_x: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },

    /// Monte-Carlo check of the ReLU expectation gap
    ReluBound {
        #[arg(long, default_value_t = 0.0)]
        mu: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },

    /// Monte-Carlo check of the maxout expectation bounds
    MaxoutBound {
        /// Number of affine branches k
        #[arg(long, default_value_t = 4)]
        branches: usize,
        /// Input dimension
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// Upper limit for the random per-coordinate input std
        #[arg(long, default_value_t = 0.1)]
        max_sigma: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },

    /// Mean/std of dense-layer outputs under window resampling
    ActivationStats {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputImage,
        /// Window fills forming the probe batch
        #[arg(long, default_value_t = 160)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        window_y: usize,
        #[arg(long, default_value_t = 0)]
        window_x: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },

    /// |AM_S - NGM| as the per-window sample count grows
    SampleFluctuation {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputImage,
        /// Class to track (default: predicted)
        #[arg(long)]
        class: Option<usize>,
        /// Comma-separated ascending sample counts
        #[arg(long, default_value = "1,10,100,1000")]
        s_list: String,
        /// Independent repeats per sample count
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 160)]
        batch: usize,
        #[arg(long, default_value_t = 10)]
        window_y: usize,
        #[arg(long, default_value_t = 10)]
        window_x: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<String, String> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| format!("thread pool: {e}"))?;
    }
    match cli.command {
        Command::Train {
            images,
            labels,
            test_images,
            test_labels,
            limit,
            epochs,
            lr,
            batch,
            seed,
            out,
        } => {
            let report = cmd_train(&TrainArgs {
                images,
                labels,
                test_images,
                test_labels,
                limit,
                epochs,
                learning_rate: lr,
                batch_size: batch,
                seed: resolve_seed(seed),
                out,
            })
            .map_err(|e| e.to_string())?;
            Ok(format_train_report(&report))
        }
        Command::Fit {
            images,
            labels,
            limit,
            kind,
            window,
            outer,
            ridge,
            out,
        } => {
            let kind = match kind.as_str() {
                "conditional" => ModelKind::Conditional,
                "marginal" => ModelKind::Marginal,
                other => return Err(format!("unknown model kind {other}")),
            };
            let report = cmd_fit(&FitArgs {
                images,
                labels,
                limit,
                kind,
                window,
                outer,
                ridge,
                out,
            })
            .map_err(|e| e.to_string())?;
            Ok(format_fit_report(&report))
        }
        Command::Explain {
            weights,
            model,
            input,
            out_dir,
            method,
            window,
            outer,
            samples,
            batch,
            seed,
            eps,
            class,
            transform,
            alpha,
        } => {
            let args = ExplainArgs {
                weights,
                model,
                image: input.source()?,
                out_dir,
                method: Method::parse(&method).map_err(|e| e.to_string())?,
                window,
                outer,
                samples,
                batch,
                seed: resolve_seed(seed),
                eps,
                class,
                transform: Transform::parse(&transform).map_err(|e| e.to_string())?,
                alpha,
            };
            let report = cmd_explain(&args).map_err(|e| e.to_string())?;
            Ok(format_explain_report(&report))
        }
        Command::Bench {
            weights,
            model,
            input,
            window,
            outer,
            samples,
            batch,
            seed,
        } => {
            let report = cmd_bench(&BenchArgs {
                weights,
                model,
                image: input.source()?,
                window,
                outer,
                samples,
                batch,
                seed: resolve_seed(seed),
            })
            .map_err(|e| e.to_string())?;
            Ok(format_bench_report(&report))
        }
        Command::Lab { experiment } => {
            let (exp, out_dir, seed) = match experiment {
                LabCommand::AmVsNgm {
                    weights,
                    model,
                    images,
                    labels,
                    cases,
                    s_ref,
                    batch,
                    window_y,
                    window_x,
                    seed,
                    out_dir,
                } => (
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
                    },
                    out_dir,
                    resolve_seed(seed),
                ),
                LabCommand::ReluBound {
                    mu,
                    sigma,
                    n,
                    seed,
                    out_dir,
                } => (
                    LabExperiment::ReluBound { mu, sigma, n },
                    out_dir,
                    resolve_seed(seed),
                ),
                LabCommand::MaxoutBound {
                    branches,
                    dim,
                    n,
                    max_sigma,
                    seed,
                    out_dir,
                } => (
                    LabExperiment::MaxoutBound {
                        branches,
                        dim,
                        n,
                        max_sigma,
                    },
                    out_dir,
                    resolve_seed(seed),
                ),
                LabCommand::ActivationStats {
                    weights,
                    model,
                    input,
                    samples,
                    window_y,
                    window_x,
                    seed,
                    out_dir,
                } => (
                    LabExperiment::ActivationStats {
                        weights,
                        model,
                        image: input.source()?,
                        samples,
                        window_y,
                        window_x,
                    },
                    out_dir,
                    resolve_seed(seed),
                ),
                LabCommand::SampleFluctuation {
                    weights,
                    model,
                    input,
                    class,
                    s_list,
                    repeats,
                    batch,
                    window_y,
                    window_x,
                    seed,
                    out_dir,
                } => {
                    let counts: Vec<usize> = s_list
                        .split(',')
                        .map(|p| {
                            p.trim()
                                .parse()
                                .map_err(|_| format!("bad sample count {p}"))
                        })
                        .collect::<Result<_, String>>()?;
                    (
                        LabExperiment::SampleFluctuation {
                            weights,
                            model,
                            image: input.source()?,
                            class,
                            s_list: counts,
                            repeats,
                            batch,
                            window_y,
                            window_x,
                        },
                        out_dir,
                        resolve_seed(seed),
                    )
                }
            };
            let report = cmd_lab(&exp, &out_dir, seed).map_err(|e| e.to_string())?;
            let mut out = report.summary;
            for f in &report.files {
                out.push_str(&format!("\nwrote {}", f.display()));
            }
            Ok(out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err(message) => {
            eprintln!("error: {}", message.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
