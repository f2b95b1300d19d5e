//! Window-marginalization attribution.
//!
//! Three algorithms plus a baseline, all emitting an [`EvidenceMap`]:
//!
//! * [`pda_original`]: for every stride-1 k x k window, the class
//!   probability with the window marginalized out is estimated as the
//!   arithmetic mean of S sampled replacements, and the log2 odds
//!   difference is accumulated over the covered pixels.
//! * [`pda_efficient`]: the window is replaced by its conditional (or
//!   marginal) mean instead, one forward pass per window; the softmax of
//!   expected logits is the normalized geometric mean of the per-sample
//!   predictions, a first-order stand-in for the arithmetic mean.
//! * [`pda_gradient`]: first-order Taylor shortcut; a single input
//!   gradient weighs x - x' per window, one forward and one backward pass
//!   in total.
//! * [`saliency_map`]: per-pixel |dP(c|x)/dx|, the equal-weighting
//!   baseline.
//!
//! Window evaluations are independent; they run on the current rayon pool
//! and are folded into the map in row-major window order, so results are
//! identical for every thread count. Per-window sampling seeds derive from
//! the base seed plus the window index.

use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grad::input_gradient;
use crate::network::Network;
use crate::patch::{MarginalModel, PatchModel, StoredModel};
use crate::tensor::Tensor;
use crate::{rng_for, Rng};

/// Attribution method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Original,
    Efficient,
    Gradient,
    Saliency,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Original => "original",
            Method::Efficient => "efficient",
            Method::Gradient => "gradient",
            Method::Saliency => "saliency",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "original" => Ok(Method::Original),
            "efficient" => Ok(Method::Efficient),
            "gradient" => Ok(Method::Gradient),
            "saliency" => Ok(Method::Saliency),
            other => Err(Error::InvalidArgument(format!("unknown method {other}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which distribution fills windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Conditional,
    Marginal,
}

impl Sampling {
    pub fn name(&self) -> &'static str {
        match self {
            Sampling::Conditional => "conditional",
            Sampling::Marginal => "marginal",
        }
    }
}

/// Knobs shared by the attribution algorithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplainConfig {
    /// Window side k.
    pub window: usize,
    /// Outer patch side l (conditional sampling only).
    pub outer: usize,
    /// Samples per window S.
    pub samples: usize,
    /// Forward batch size m.
    pub batch: usize,
    pub seed: u64,
    /// Probability clamp for the odds.
    pub eps: f64,
    pub method: Method,
    pub sampling: Sampling,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            window: 4,
            outer: 8,
            samples: 10,
            batch: 160,
            seed: 42,
            eps: 1e-6,
            method: Method::Efficient,
            sampling: Sampling::Marginal,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window > self.outer {
            return Err(Error::InvalidArgument(format!(
                "window {} must satisfy 0 < k <= l (outer {})",
                self.window, self.outer
            )));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "eps {} must lie in (0, 0.5)",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Weight-of-evidence accumulator. `we[p]` sums the per-window log-odds
/// contributions of every window containing pixel p; `counts[p]` is the
/// number of such windows. The reported map is `we / counts`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceMap {
    height: usize,
    width: usize,
    pub we: Vec<f64>,
    pub counts: Vec<u32>,
    pub class_index: usize,
    pub method: Method,
    pub config: ExplainConfig,
}

impl EvidenceMap {
    fn new(height: usize, width: usize, class_index: usize, method: Method, config: ExplainConfig) -> Self {
        EvidenceMap {
            height,
            width,
            we: vec![0.0; height * width],
            counts: vec![0; height * width],
            class_index,
            method,
            config,
        }
    }

    /// Assembles a map from raw parts (testing and tooling).
    pub fn from_parts(
        height: usize,
        width: usize,
        we: Vec<f64>,
        counts: Vec<u32>,
        class_index: usize,
        method: Method,
        config: ExplainConfig,
    ) -> Result<Self> {
        if we.len() != height * width || counts.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "map buffers sized {}/{} do not match {height}x{width}",
                we.len(),
                counts.len()
            )));
        }
        Ok(EvidenceMap {
            height,
            width,
            we,
            counts,
            class_index,
            method,
            config,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// we / counts at a pixel; pixels no window touched report 0.
    pub fn value(&self, y: usize, x: usize) -> f64 {
        let i = y * self.width + x;
        if self.counts[i] == 0 {
            0.0
        } else {
            self.we[i] / self.counts[i] as f64
        }
    }

    /// The full normalized map, row-major.
    pub fn values(&self) -> Vec<f64> {
        (0..self.height * self.width)
            .map(|i| {
                if self.counts[i] == 0 {
                    0.0
                } else {
                    self.we[i] / self.counts[i] as f64
                }
            })
            .collect()
    }
}

/// log2 odds with total clamping: p is pulled into [eps, 1 - eps] first,
/// so p = 0 and p = 1 stay finite.
pub fn log_odds(p: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    (p / (1.0 - p)).log2()
}

/// A k x k window anchored at (y, x).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub y: usize,
    pub x: usize,
    pub k: usize,
}

/// The distribution a window is marginalized against. Implemented by the
/// conditional [`PatchModel`], the independent [`MarginalModel`], and by
/// test doubles with exactly enumerable priors.
pub trait WindowModel: Sync {
    /// Window side k the model was fitted for.
    fn window_side(&self) -> usize;

    /// Outer patch side, when the model conditions on a ring.
    fn outer_side(&self) -> Option<usize>;

    /// Expected window content (channel-major, row-major fill order).
    fn mean_fill(&self, image: &Tensor, win: Window) -> Result<Vec<f64>>;

    /// One sampled window content.
    fn sample_fill(&self, image: &Tensor, win: Window, rng: &mut Rng) -> Result<Vec<f64>>;
}

/// Anchor of the outer patch: centered on the window, shifted inward at
/// the borders so the patch stays inside the image.
fn patch_anchor(win: Window, l: usize, h: usize, w: usize) -> (usize, usize) {
    let shift = (l - win.k) / 2;
    let py = win.y.saturating_sub(shift).min(h - l);
    let px = win.x.saturating_sub(shift).min(w - l);
    (py, px)
}

impl PatchModel {
    fn ring_values(&self, image: &Tensor, win: Window) -> Result<((usize, usize), Vec<f64>)> {
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let l = self.l();
        if h < l || w < l {
            return Err(Error::ShapeMismatch(format!(
                "image {h}x{w} smaller than outer patch {l}x{l}"
            )));
        }
        let (py, px) = patch_anchor(win, l, h, w);
        let offset = (win.y - py, win.x - px);
        let coords = self.ring_coords(offset)?;
        let ring = coords
            .iter()
            .map(|&(c, y, x)| image.get_chw(c, py + y, px + x))
            .collect();
        Ok((offset, ring))
    }
}

impl WindowModel for PatchModel {
    fn window_side(&self) -> usize {
        self.k()
    }

    fn outer_side(&self) -> Option<usize> {
        Some(self.l())
    }

    fn mean_fill(&self, image: &Tensor, win: Window) -> Result<Vec<f64>> {
        let (offset, ring) = self.ring_values(image, win)?;
        Ok(self.conditional_params(offset, &ring)?.0)
    }

    fn sample_fill(&self, image: &Tensor, win: Window, rng: &mut Rng) -> Result<Vec<f64>> {
        let (offset, ring) = self.ring_values(image, win)?;
        self.sample_conditional(offset, &ring, rng)
    }
}

impl WindowModel for MarginalModel {
    fn window_side(&self) -> usize {
        self.k()
    }

    fn outer_side(&self) -> Option<usize> {
        None
    }

    fn mean_fill(&self, _image: &Tensor, _win: Window) -> Result<Vec<f64>> {
        Ok(self.mean().to_vec())
    }

    fn sample_fill(&self, _image: &Tensor, _win: Window, rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(self.sample(rng))
    }
}

impl WindowModel for StoredModel {
    fn window_side(&self) -> usize {
        match self {
            StoredModel::Conditional(m) => m.window_side(),
            StoredModel::Marginal(m) => m.window_side(),
        }
    }

    fn outer_side(&self) -> Option<usize> {
        match self {
            StoredModel::Conditional(m) => m.outer_side(),
            StoredModel::Marginal(m) => m.outer_side(),
        }
    }

    fn mean_fill(&self, image: &Tensor, win: Window) -> Result<Vec<f64>> {
        match self {
            StoredModel::Conditional(m) => m.mean_fill(image, win),
            StoredModel::Marginal(m) => m.mean_fill(image, win),
        }
    }

    fn sample_fill(&self, image: &Tensor, win: Window, rng: &mut Rng) -> Result<Vec<f64>> {
        match self {
            StoredModel::Conditional(m) => m.sample_fill(image, win, rng),
            StoredModel::Marginal(m) => m.sample_fill(image, win, rng),
        }
    }
}

/// Copies the image and writes `fill` over the window (channel-major,
/// row-major order).
pub fn apply_fill(image: &Tensor, win: Window, fill: &[f64]) -> Tensor {
    let mut out = image.clone();
    let channels = image.shape()[0];
    debug_assert_eq!(fill.len(), channels * win.k * win.k);
    let mut t = 0;
    for c in 0..channels {
        for y in 0..win.k {
            for x in 0..win.k {
                out.set_chw(c, win.y + y, win.x + x, fill[t]);
                t += 1;
            }
        }
    }
    out
}

fn single_batch(image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    Tensor::from_vec(vec![1, s[0], s[1], s[2]], image.data().to_vec())
}

/// P(class | image with the window replaced by `fill`).
pub fn posterior_with_fill(
    net: &Network,
    image: &Tensor,
    class: usize,
    win: Window,
    fill: &[f64],
) -> Result<f64> {
    let filled = apply_fill(image, win, fill);
    let probs = net.forward(&single_batch(&filled)?)?;
    Ok(probs.data()[class])
}

/// P(class | window replaced by the model mean), the normalized
/// geometric mean route of the efficient algorithm.
pub fn window_posterior_mean(
    net: &Network,
    image: &Tensor,
    class: usize,
    model: &dyn WindowModel,
    win: Window,
) -> Result<f64> {
    let fill = model.mean_fill(image, win)?;
    posterior_with_fill(net, image, class, win, &fill)
}

/// Per-sample P(class | window resampled), in draw order. Forward passes
/// run in chunks of `batch`; the chunking never changes the values.
pub fn window_posterior_samples(
    net: &Network,
    image: &Tensor,
    class: usize,
    model: &dyn WindowModel,
    win: Window,
    samples: usize,
    batch: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut fills = Vec::with_capacity(samples);
    for _ in 0..samples {
        fills.push(model.sample_fill(image, win, rng)?);
    }
    let mut probs = Vec::with_capacity(samples);
    for chunk in fills.chunks(batch.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * c * h * w);
        for fill in chunk {
            data.extend_from_slice(apply_fill(image, win, fill).data());
        }
        let out = net.forward(&Tensor::from_vec(vec![chunk.len(), c, h, w], data)?)?;
        let classes = net.class_count();
        for row in 0..chunk.len() {
            probs.push(out.data()[row * classes + class]);
        }
    }
    Ok(probs)
}

/// Arithmetic mean of [`window_posterior_samples`], the sampled estimate
/// of P(class | x \ window).
pub fn window_posterior_sampled_mean(
    net: &Network,
    image: &Tensor,
    class: usize,
    model: &dyn WindowModel,
    win: Window,
    samples: usize,
    batch: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let probs = window_posterior_samples(net, image, class, model, win, samples, batch, rng)?;
    Ok(probs.iter().sum::<f64>() / samples as f64)
}

/// How P(class | x \ window) is estimated inside [`run_pda`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fill {
    /// Conditional/marginal mean replacement: one forward pass, no RNG.
    Mean,
    /// Arithmetic mean over sampled replacements.
    Sampled { samples: usize },
}

fn validate_against_model(
    net: &Network,
    image: &Tensor,
    class: usize,
    model: &dyn WindowModel,
    config: &ExplainConfig,
) -> Result<(usize, usize)> {
    config.validate()?;
    if class >= net.class_count() {
        return Err(Error::InvalidClass {
            index: class,
            classes: net.class_count(),
        });
    }
    let s = image.shape();
    let (c, h, w) = net.input_shape();
    if s != [c, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "image shape {s:?} does not match network input ({c}, {h}, {w})"
        )));
    }
    if model.window_side() != config.window {
        return Err(Error::InvalidArgument(format!(
            "config window {} does not match model window {}",
            config.window,
            model.window_side()
        )));
    }
    if let Some(l) = model.outer_side() {
        if l != config.outer {
            return Err(Error::InvalidArgument(format!(
                "config outer {} does not match model outer {}",
                config.outer, l
            )));
        }
        if l > h || l > w {
            return Err(Error::ShapeMismatch(format!(
                "outer patch {l} exceeds image {h}x{w}"
            )));
        }
    }
    if config.window > h || config.window > w {
        return Err(Error::ShapeMismatch(format!(
            "window {} exceeds image {h}x{w}",
            config.window
        )));
    }
    Ok((h, w))
}

fn window_grid(h: usize, w: usize, k: usize) -> Vec<Window> {
    let mut wins = Vec::with_capacity((h - k + 1) * (w - k + 1));
    for y in 0..=(h - k) {
        for x in 0..=(w - k) {
            wins.push(Window { y, x, k });
        }
    }
    wins
}

/// Shared engine behind the original and efficient algorithms. Windows
/// are evaluated in parallel; their contributions are folded in row-major
/// window order, so maps are bitwise reproducible for any thread count.
pub fn run_pda(
    net: &Network,
    image: &Tensor,
    class: usize,
    model: &dyn WindowModel,
    config: &ExplainConfig,
    fill: Fill,
) -> Result<EvidenceMap> {
    let (h, w) = validate_against_model(net, image, class, model, config)?;
    let p_x = net.forward(&single_batch(image)?)?.data()[class];
    let lo_x = log_odds(p_x, config.eps);
    let wins = window_grid(h, w, config.window);
    let deltas: Vec<f64> = wins
        .par_iter()
        .enumerate()
        .map(|(i, &win)| -> Result<f64> {
            let p_marg = match fill {
                Fill::Mean => window_posterior_mean(net, image, class, model, win)?,
                Fill::Sampled { samples } => {
                    let mut rng = rng_for(config.seed, i as u64);
                    window_posterior_sampled_mean(
                        net,
                        image,
                        class,
                        model,
                        win,
                        samples,
                        config.batch,
                        &mut rng,
                    )?
                }
            };
            Ok(lo_x - log_odds(p_marg, config.eps))
        })
        .collect::<Result<Vec<f64>>>()?;
    let method = match fill {
        Fill::Mean => Method::Efficient,
        Fill::Sampled { .. } => Method::Original,
    };
    let mut map = EvidenceMap::new(h, w, class, method, *config);
    for (win, delta) in wins.iter().zip(deltas) {
        accumulate(&mut map, win, delta);
    }
    Ok(map)
}

fn accumulate(map: &mut EvidenceMap, win: &Window, delta: f64) {
    for y in win.y..win.y + win.k {
        let row = y * map.width;
        for x in win.x..win.x + win.k {
            map.we[row + x] += delta;
            map.counts[row + x] += 1;
        }
    }
}

/// Algorithm: sampling-based prediction difference analysis. S window
/// samples per location estimate the marginalized class probability.
pub fn pda_original(
    net: &Network,
    image: &Tensor,
    class: usize,
    model: &dyn WindowModel,
    config: &ExplainConfig,
) -> Result<EvidenceMap> {
    run_pda(
        net,
        image,
        class,
        model,
        config,
        Fill::Sampled {
            samples: config.samples,
        },
    )
}

/// Algorithm: conditional-mean replacement, one forward pass per window.
pub fn pda_efficient(
    net: &Network,
    image: &Tensor,
    class: usize,
    model: &dyn WindowModel,
    config: &ExplainConfig,
) -> Result<EvidenceMap> {
    run_pda(net, image, class, model, config, Fill::Mean)
}

/// Algorithm: first-order Taylor shortcut. One gradient, then
/// grad . (x - x') per window, accumulated on the probability scale
/// (the log-odds of the other two algorithms are intentionally not
/// mixed in here).
pub fn pda_gradient(
    net: &Network,
    image: &Tensor,
    class: usize,
    model: &dyn WindowModel,
    config: &ExplainConfig,
) -> Result<EvidenceMap> {
    let (h, w) = validate_against_model(net, image, class, model, config)?;
    let grad = input_gradient(net, image, class)?;
    let wins = window_grid(h, w, config.window);
    let channels = image.shape()[0];
    let deltas: Vec<f64> = wins
        .par_iter()
        .map(|&win| -> Result<f64> {
            let fill = model.mean_fill(image, win)?;
            let mut acc = 0.0;
            let mut t = 0;
            for c in 0..channels {
                for y in 0..win.k {
                    for x in 0..win.k {
                        let g = grad.get_chw(c, win.y + y, win.x + x);
                        let xv = image.get_chw(c, win.y + y, win.x + x);
                        acc += g * (xv - fill[t]);
                        t += 1;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut map = EvidenceMap::new(h, w, class, Method::Gradient, *config);
    for (win, delta) in wins.iter().zip(deltas) {
        accumulate(&mut map, win, delta);
    }
    Ok(map)
}

/// |dP(class|x)/dx| summed over channels; counts are all one.
pub fn saliency_map(net: &Network, image: &Tensor, class: usize) -> Result<EvidenceMap> {
    let grad = input_gradient(net, image, class)?;
    let (c, h, w) = net.input_shape();
    let config = ExplainConfig {
        method: Method::Saliency,
        window: 1,
        outer: 1,
        samples: 1,
        ..ExplainConfig::default()
    };
    let mut map = EvidenceMap::new(h, w, class, Method::Saliency, config);
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.0;
            for ch in 0..c {
                v += grad.get_chw(ch, y, x).abs();
            }
            map.we[y * w + x] = v;
            map.counts[y * w + x] = 1;
        }
    }
    Ok(map)
}

/// Forward/backward work a method performs on an (h, w) image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassCounts {
    /// Single-image forward passes.
    pub forward: u64,
    /// Backward passes.
    pub backward: u64,
    /// Batched forward invocations at batch size m: ceil(forward / m).
    pub batches: u64,
}

/// Pass-count formulas: S (n-k+1)^2 forwards for the original algorithm,
/// (n-k+1)^2 for the efficient one, one forward plus one backward for the
/// gradient shortcut and the saliency baseline.
pub fn count_forward_passes(
    method: Method,
    config: &ExplainConfig,
    image_size: (usize, usize),
) -> PassCounts {
    let (h, w) = image_size;
    let k = config.window;
    let windows = if k <= h && k <= w {
        ((h - k + 1) * (w - k + 1)) as u64
    } else {
        0
    };
    let m = config.batch.max(1) as u64;
    match method {
        Method::Original => {
            let forward = windows * config.samples as u64;
            PassCounts {
                forward,
                backward: 0,
                batches: forward.div_ceil(m),
            }
        }
        Method::Efficient => PassCounts {
            forward: windows,
            backward: 0,
            batches: windows.div_ceil(m),
        },
        Method::Gradient | Method::Saliency => PassCounts {
            forward: 1,
            backward: 1,
            batches: 1,
        },
    }
}

// 16 fractional digits = 17 significant digits, lossless for f64
fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parsed form of the plain-text evidence artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceGrid {
    pub method: String,
    pub class_index: usize,
    pub k: usize,
    pub l: usize,
    pub samples: usize,
    pub seed: u64,
    pub values: Vec<Vec<f64>>,
}

impl EvidenceGrid {
    fn render(&self) -> String {
        let mut out = format!(
            "# method={} class={} k={} l={} S={} seed={}\n",
            self.method, self.class_index, self.k, self.l, self.samples, self.seed
        );
        for row in &self.values {
            let line: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

impl EvidenceMap {
    /// Text-artifact form: header plus the we/counts grid.
    pub fn to_grid(&self) -> EvidenceGrid {
        let values = (0..self.height)
            .map(|y| (0..self.width).map(|x| self.value(y, x)).collect())
            .collect();
        EvidenceGrid {
            method: self.method.name().to_string(),
            class_index: self.class_index,
            k: self.config.window,
            l: self.config.outer,
            samples: self.config.samples,
            seed: self.config.seed,
            values,
        }
    }
}

/// Writes the diff-friendly text grid: one `#` header line, then one line
/// per row with 17-significant-digit floats (lossless for f64).
pub fn write_evidence(map: &EvidenceMap, path: impl AsRef<Path>) -> Result<()> {
    write_evidence_grid(&map.to_grid(), path)
}

pub fn write_evidence_grid(grid: &EvidenceGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, grid.render()).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_evidence(path: impl AsRef<Path>) -> Result<EvidenceGrid> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(&name, 0, "empty file"))?;
    let header = header
        .strip_prefix("# ")
        .ok_or_else(|| Error::format(&name, 0, "missing `# ` header"))?;
    let mut fields = std::collections::HashMap::new();
    for part in header.split_whitespace() {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::format(&name, 0, format!("bad header field {part}")))?;
        fields.insert(key.to_string(), value.to_string());
    }
    let get = |key: &str| -> Result<String> {
        fields
            .get(key)
            .cloned()
            .ok_or_else(|| Error::format(&name, 0, format!("header missing {key}")))
    };
    let parse_num = |key: &str| -> Result<u64> {
        get(key)?
            .parse()
            .map_err(|_| Error::format(&name, 0, format!("bad numeric header field {key}")))
    };
    let mut values = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::format(&name, lineno as u64, format!("bad float {tok}")))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = values.first() {
            let prev: &Vec<f64> = first;
            if prev.len() != row.len() {
                return Err(Error::format(
                    &name,
                    lineno as u64,
                    "ragged grid rows".to_string(),
                ));
            }
        }
        values.push(row);
    }
    Ok(EvidenceGrid {
        method: get("method")?,
        class_index: parse_num("class")? as usize,
        k: parse_num("k")? as usize,
        l: parse_num("l")? as usize,
        samples: parse_num("S")? as usize,
        seed: parse_num("seed")?,
        values,
    })
}
