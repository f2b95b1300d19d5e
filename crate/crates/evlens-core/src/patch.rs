//! Translation-invariant Gaussian patch models.
//!
//! [`PatchModel`] holds the pooled mean and covariance of all l x l
//! patches in a dataset and, for every placement of the inner k x k
//! window inside the patch, the precomputed conditional regression
//! A = sigma_wo * sigma_oo^-1, the conditional covariance
//! sigma_c = sigma_ww - A * sigma_ow and its Cholesky factor. Sampling
//! transforms standard normals by y = L eta + mu.
//!
//! [`MarginalModel`] is the per-pixel independent variant used for MNIST,
//! where pixels have weak enough interdependencies that the ring can be
//! ignored.
//!
//! Patch coordinates are ordered channel-major, then row-major, so index
//! c*l*l + y*l + x addresses channel c, row y, column x. Window fills use
//! the same ordering restricted to the window.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Rng;

const MAGIC: &[u8; 4] = b"EVGM";
const VERSION: u16 = 1;
const KIND_CONDITIONAL: u8 = 0;
const KIND_MARGINAL: u8 = 1;

/// Default ridge: 1e-4 times the mean covariance diagonal. Natural-image
/// patch covariance is near singular; this keeps Cholesky viable.
pub const DEFAULT_RIDGE_FACTOR: f64 = 1e-4;

/// Conditional parameters for one placement of the window in the patch.
#[derive(Debug, Clone)]
struct OffsetParams {
    /// Patch indices covered by the window, in fill order.
    window_idx: Vec<usize>,
    /// Patch indices of the conditioning ring, ascending.
    ring_idx: Vec<usize>,
    /// Regression matrix A, window_dim x ring_dim, row-major.
    regression: Vec<f64>,
    /// Lower Cholesky factor of the conditional covariance, row-major.
    chol: Vec<f64>,
    /// Conditional covariance itself (kept for diagnostics/tests).
    cond_cov: Vec<f64>,
}

/// Pooled Gaussian over l x l patches with cached window conditionals.
#[derive(Debug, Clone)]
pub struct PatchModel {
    k: usize,
    l: usize,
    channels: usize,
    mean: Vec<f64>,
    /// Sample covariance (no ridge), (l*l*channels)^2 row-major.
    covariance: Vec<f64>,
    ridge: f64,
    offsets: Vec<OffsetParams>,
}

/// Per-coordinate independent Gaussian over the k x k window.
#[derive(Debug, Clone)]
pub struct MarginalModel {
    k: usize,
    channels: usize,
    mean: Vec<f64>,
    variance: Vec<f64>,
}

/// Accumulates mean and covariance from an image stream, then derives the
/// per-offset conditionals. `ridge` of `None` selects the default factor;
/// an explicit 0.0 disables regularization (and fails on degenerate data).
pub fn fit_patch_model(
    images: impl IntoIterator<Item = Tensor>,
    k: usize,
    l: usize,
    ridge: Option<f64>,
) -> Result<PatchModel> {
    if k == 0 || l == 0 || k > l {
        return Err(Error::InvalidArgument(format!(
            "window k={k} must satisfy 0 < k <= l (outer patch l={l})"
        )));
    }
    let mut channels = 0usize;
    let mut dim = 0usize;
    let mut count = 0u64;
    let mut sum: Vec<f64> = Vec::new();
    let mut outer: Vec<f64> = Vec::new(); // upper triangle of sum x x^T
    let mut patch: Vec<f64> = Vec::new();
    let mut n_images = 0usize;
    for image in images {
        let s = image.shape().to_vec();
        if s.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected (c, h, w) images, got {s:?}"
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        if h < l || w < l {
            return Err(Error::InvalidData(format!(
                "image {h}x{w} smaller than outer patch {l}x{l}"
            )));
        }
        if n_images == 0 {
            channels = c;
            dim = l * l * c;
            sum = vec![0.0; dim];
            outer = vec![0.0; dim * (dim + 1) / 2];
            patch = vec![0.0; dim];
        } else if c != channels {
            return Err(Error::ShapeMismatch(
                "images disagree on channel count".into(),
            ));
        }
        n_images += 1;
        for py in 0..=(h - l) {
            for px in 0..=(w - l) {
                let mut t = 0;
                for ch in 0..c {
                    for y in 0..l {
                        let row = image.chw_index(ch, py + y, px);
                        patch[t..t + l].copy_from_slice(&image.data()[row..row + l]);
                        t += l;
                    }
                }
                count += 1;
                let mut tri = 0;
                for i in 0..dim {
                    let pi = patch[i];
                    sum[i] += pi;
                    let row = &mut outer[tri..tri + (dim - i)];
                    let rest = &patch[i..];
                    for (o, &pj) in row.iter_mut().zip(rest) {
                        *o += pi * pj;
                    }
                    tri += dim - i;
                }
            }
        }
    }
    if n_images < 2 {
        return Err(Error::InvalidData(format!(
            "patch fitting needs at least 2 images, got {n_images}"
        )));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|&s| s / n).collect();
    let mut covariance = vec![0.0; dim * dim];
    let mut tri = 0;
    for i in 0..dim {
        for j in i..dim {
            let c = (outer[tri] - n * mean[i] * mean[j]) / (n - 1.0);
            covariance[i * dim + j] = c;
            covariance[j * dim + i] = c;
            tri += 1;
        }
    }
    let ridge = match ridge {
        Some(r) => r,
        None => {
            let diag_mean =
                (0..dim).map(|i| covariance[i * dim + i]).sum::<f64>() / dim as f64;
            // floor keeps constant datasets (zero diagonal) factorizable
            (DEFAULT_RIDGE_FACTOR * diag_mean).max(1e-8)
        }
    };
    PatchModel::from_moments(k, l, channels, mean, covariance, ridge)
}

/// Derives the conditional distribution of the `window` coordinates given
/// the `ring` coordinates of a joint Gaussian. Returns the regression
/// matrix A (window x ring, row-major), the conditional covariance and
/// its lower Cholesky factor.
fn derive_conditional(
    mean_dim: usize,
    cov: &[f64],
    ridge: f64,
    window: &[usize],
    ring: &[usize],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let dim = mean_dim;
    let wl = window.len();
    let rl = ring.len();
    let at = |i: usize, j: usize| {
        let base = cov[i * dim + j];
        if i == j {
            base + ridge
        } else {
            base
        }
    };
    let regression: Vec<f64>;
    let mut cond_cov: Vec<f64>;
    if rl == 0 {
        regression = Vec::new();
        cond_cov = vec![0.0; wl * wl];
        for (a, &i) in window.iter().enumerate() {
            for (b, &j) in window.iter().enumerate() {
                cond_cov[a * wl + b] = at(i, j);
            }
        }
    } else {
        let sigma_oo = DMatrix::from_fn(rl, rl, |a, b| at(ring[a], ring[b]));
        let sigma_ow = DMatrix::from_fn(rl, wl, |a, b| at(ring[a], window[b]));
        let chol_oo = nalgebra::Cholesky::new(sigma_oo).ok_or_else(|| {
            Error::NotPositiveDefinite(
                "ring covariance is degenerate; refit with a larger ridge".into(),
            )
        })?;
        // A^T = sigma_oo^-1 sigma_ow
        let a_t = chol_oo.solve(&sigma_ow);
        let mut reg = Vec::with_capacity(wl * rl);
        for w in 0..wl {
            for r in 0..rl {
                reg.push(a_t[(r, w)]);
            }
        }
        regression = reg;
        cond_cov = vec![0.0; wl * wl];
        for a in 0..wl {
            for b in 0..wl {
                let mut v = at(window[a], window[b]);
                for r in 0..rl {
                    v -= regression[a * rl + r] * sigma_ow[(r, b)];
                }
                cond_cov[a * wl + b] = v;
            }
        }
        // enforce exact symmetry before factorization
        for a in 0..wl {
            for b in (a + 1)..wl {
                let s = 0.5 * (cond_cov[a * wl + b] + cond_cov[b * wl + a]);
                cond_cov[a * wl + b] = s;
                cond_cov[b * wl + a] = s;
            }
        }
    }
    let scale = (0..wl)
        .map(|a| cond_cov[a * wl + a].abs())
        .fold(0.0_f64, f64::max);
    let chol = if scale == 0.0 {
        // exactly deterministic window: sampling collapses to the mean
        vec![0.0; wl * wl]
    } else {
        let m = DMatrix::from_row_slice(wl, wl, &cond_cov);
        let fallback = ridge.max(1e-12 * scale);
        let factor = match nalgebra::Cholesky::new(m.clone()) {
            Some(f) => f,
            None => nalgebra::Cholesky::new(m + DMatrix::identity(wl, wl) * fallback)
                .ok_or_else(|| {
                    Error::NotPositiveDefinite(
                        "conditional covariance cannot be factorized; refit with a larger ridge"
                            .into(),
                    )
                })?,
        };
        let lmat = factor.l();
        let mut lower = Vec::with_capacity(wl * wl);
        for a in 0..wl {
            for b in 0..wl {
                lower.push(lmat[(a, b)]);
            }
        }
        lower
    };
    Ok((regression, cond_cov, chol))
}

impl PatchModel {
    /// Builds a model from explicit moments, deriving every window-offset
    /// conditional (ridge enters the diagonal before any inversion).
    pub fn from_moments(
        k: usize,
        l: usize,
        channels: usize,
        mean: Vec<f64>,
        covariance: Vec<f64>,
        ridge: f64,
    ) -> Result<PatchModel> {
        if k == 0 || k > l {
            return Err(Error::InvalidArgument(format!(
                "window k={k} must satisfy 0 < k <= l (outer patch l={l})"
            )));
        }
        let dim = l * l * channels;
        if mean.len() != dim || covariance.len() != dim * dim {
            return Err(Error::ShapeMismatch(format!(
                "moments sized {} / {} do not match patch dimension {dim}",
                mean.len(),
                covariance.len()
            )));
        }
        let mut offsets = Vec::with_capacity((l - k + 1) * (l - k + 1));
        for dy in 0..=(l - k) {
            for dx in 0..=(l - k) {
                let mut window_idx = Vec::with_capacity(k * k * channels);
                for c in 0..channels {
                    for y in 0..k {
                        for x in 0..k {
                            window_idx.push(c * l * l + (dy + y) * l + (dx + x));
                        }
                    }
                }
                let in_window: Vec<bool> = {
                    let mut m = vec![false; dim];
                    for &i in &window_idx {
                        m[i] = true;
                    }
                    m
                };
                let ring_idx: Vec<usize> = (0..dim).filter(|&i| !in_window[i]).collect();
                let (regression, cond_cov, chol) =
                    derive_conditional(dim, &covariance, ridge, &window_idx, &ring_idx)?;
                offsets.push(OffsetParams {
                    window_idx,
                    ring_idx,
                    regression,
                    chol,
                    cond_cov,
                });
            }
        }
        Ok(PatchModel {
            k,
            l,
            channels,
            mean,
            covariance,
            ridge,
            offsets,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    /// Window dimension k*k*channels.
    pub fn window_dim(&self) -> usize {
        self.k * self.k * self.channels
    }

    /// Ring dimension (l*l - k*k) * channels.
    pub fn ring_dim(&self) -> usize {
        (self.l * self.l - self.k * self.k) * self.channels
    }

    fn offset_params(&self, offset: (usize, usize)) -> Result<&OffsetParams> {
        let span = self.l - self.k;
        let (dy, dx) = offset;
        if dy > span || dx > span {
            return Err(Error::InvalidArgument(format!(
                "window offset ({dy}, {dx}) outside patch (max {span})"
            )));
        }
        Ok(&self.offsets[dy * (span + 1) + dx])
    }

    /// Patch-local (channel, y, x) coordinates of the ring for `offset`,
    /// in the canonical ascending order expected by `conditional_params`.
    pub fn ring_coords(&self, offset: (usize, usize)) -> Result<Vec<(usize, usize, usize)>> {
        let p = self.offset_params(offset)?;
        Ok(p.ring_idx.iter().map(|&i| self.unflatten(i)).collect())
    }

    fn unflatten(&self, i: usize) -> (usize, usize, usize) {
        let per = self.l * self.l;
        (i / per, (i % per) / self.l, i % self.l)
    }

    /// Conditional mean of the window given the ring, plus the cached
    /// lower Cholesky factor of the conditional covariance:
    /// mean_w = mu_w + A (ring - mu_o).
    pub fn conditional_params(
        &self,
        offset: (usize, usize),
        ring_values: &[f64],
    ) -> Result<(Vec<f64>, &[f64])> {
        let p = self.offset_params(offset)?;
        if ring_values.len() != p.ring_idx.len() {
            return Err(Error::InvalidArgument(format!(
                "ring has {} values, expected {}",
                ring_values.len(),
                p.ring_idx.len()
            )));
        }
        let wl = p.window_idx.len();
        let rl = p.ring_idx.len();
        let mut mean_w = Vec::with_capacity(wl);
        for a in 0..wl {
            let mut v = self.mean[p.window_idx[a]];
            let row = &p.regression[a * rl..(a + 1) * rl];
            for r in 0..rl {
                v += row[r] * (ring_values[r] - self.mean[p.ring_idx[r]]);
            }
            mean_w.push(v);
        }
        Ok((mean_w, &p.chol))
    }

    /// Draws one window sample: conditional mean + L eta with eta standard
    /// normal from `rng`. Deterministic given the generator state.
    pub fn sample_conditional(
        &self,
        offset: (usize, usize),
        ring_values: &[f64],
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        let (mean_w, chol) = self.conditional_params(offset, ring_values)?;
        let wl = mean_w.len();
        let eta: Vec<f64> = (0..wl).map(|_| StandardNormal.sample(rng)).collect();
        let mut out = mean_w;
        for a in 0..wl {
            let row = &chol[a * wl..a * wl + a + 1];
            let mut v = 0.0;
            for (b, &lv) in row.iter().enumerate() {
                v += lv * eta[b];
            }
            out[a] += v;
        }
        Ok(out)
    }

    /// Conditional covariance for one offset (diagnostics and tests).
    pub fn conditional_covariance(&self, offset: (usize, usize)) -> Result<&[f64]> {
        Ok(&self.offset_params(offset)?.cond_cov)
    }

    /// Smallest and largest eigenvalue of the (unridged) sample
    /// covariance.
    pub fn covariance_eigenvalue_range(&self) -> (f64, f64) {
        let dim = self.l * self.l * self.channels;
        let m = DMatrix::from_row_slice(dim, dim, &self.covariance);
        let eigen = m.symmetric_eigenvalues();
        let lo = eigen.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eigen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Marginal view of the window at `offset`: patch means and diagonal
    /// covariance entries restricted to the window coordinates.
    pub fn window_marginal(&self, offset: (usize, usize)) -> Result<MarginalModel> {
        let p = self.offset_params(offset)?;
        let dim = self.l * self.l * self.channels;
        let mean = p.window_idx.iter().map(|&i| self.mean[i]).collect();
        let variance = p
            .window_idx
            .iter()
            .map(|&i| self.covariance[i * dim + i])
            .collect();
        Ok(MarginalModel {
            k: self.k,
            channels: self.channels,
            mean,
            variance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(KIND_CONDITIONAL);
        for v in [self.k, self.l, self.channels] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &v in self.mean.iter().chain(self.covariance.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.ridge.to_le_bytes());
        fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Fits per-coordinate window marginals pooled over every window position
/// in every image.
pub fn fit_marginal(images: impl IntoIterator<Item = Tensor>, k: usize) -> Result<MarginalModel> {
    if k == 0 {
        return Err(Error::InvalidArgument("window k must be positive".into()));
    }
    let mut channels = 0usize;
    let mut count = 0u64;
    let mut sum: Vec<f64> = Vec::new();
    let mut sumsq: Vec<f64> = Vec::new();
    let mut n_images = 0usize;
    for image in images {
        let s = image.shape().to_vec();
        if s.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected (c, h, w) images, got {s:?}"
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        if h < k || w < k {
            return Err(Error::InvalidData(format!(
                "image {h}x{w} smaller than window {k}x{k}"
            )));
        }
        if n_images == 0 {
            channels = c;
            sum = vec![0.0; k * k * c];
            sumsq = vec![0.0; k * k * c];
        } else if c != channels {
            return Err(Error::ShapeMismatch(
                "images disagree on channel count".into(),
            ));
        }
        n_images += 1;
        for wy in 0..=(h - k) {
            for wx in 0..=(w - k) {
                count += 1;
                let mut t = 0;
                for ch in 0..c {
                    for y in 0..k {
                        for x in 0..k {
                            let v = image.get_chw(ch, wy + y, wx + x);
                            sum[t] += v;
                            sumsq[t] += v * v;
                            t += 1;
                        }
                    }
                }
            }
        }
    }
    if n_images < 2 {
        return Err(Error::InvalidData(format!(
            "marginal fitting needs at least 2 images, got {n_images}"
        )));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|&s| s / n).collect();
    let variance: Vec<f64> = sumsq
        .iter()
        .zip(&mean)
        .map(|(&sq, &m)| ((sq - n * m * m) / (n - 1.0)).max(0.0))
        .collect();
    Ok(MarginalModel {
        k,
        channels,
        mean,
        variance,
    })
}

impl MarginalModel {
    pub fn new(k: usize, channels: usize, mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        let dim = k * k * channels;
        if mean.len() != dim || variance.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "marginal moments sized {} / {} do not match window dimension {dim}",
                mean.len(),
                variance.len()
            )));
        }
        if variance.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("negative variance".into()));
        }
        Ok(MarginalModel {
            k,
            channels,
            mean,
            variance,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Per-coordinate window mean in fill order.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    /// Draws one window: mean + sqrt(var) eta per coordinate.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(&m, &v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(KIND_MARGINAL);
        for v in [self.k, self.channels] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &v in self.mean.iter().chain(self.variance.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Either flavor of fitted model, as stored in an EVGM file.
#[derive(Debug, Clone)]
pub enum StoredModel {
    Conditional(PatchModel),
    Marginal(MarginalModel),
}

/// Reads an EVGM model file. Conditional caches are re-derived on load,
/// so save/load round-trips are bit-exact on the stored moments.
pub fn load_model(path: impl AsRef<Path>) -> Result<StoredModel> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&name, e))?;
    let need = |off: usize, n: usize, what: &str| -> Result<()> {
        if off + n > bytes.len() {
            Err(Error::format(
                &name,
                bytes.len() as u64,
                format!("truncated while reading {what}"),
            ))
        } else {
            Ok(())
        }
    };
    need(0, 7, "header")?;
    if &bytes[..4] != MAGIC {
        return Err(Error::format(&name, 0, "bad magic, expected EVGM"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::format(
            &name,
            4,
            format!("unsupported version {version}"),
        ));
    }
    let kind = bytes[6];
    let mut off = 7;
    let read_u32 = |off: &mut usize, what: &str| -> Result<usize> {
        need(*off, 4, what)?;
        let mut b = [0u8; 4];
        b.copy_from_slice(&bytes[*off..*off + 4]);
        *off += 4;
        Ok(u32::from_le_bytes(b) as usize)
    };
    match kind {
        KIND_CONDITIONAL => {
            let k = read_u32(&mut off, "k")?;
            let l = read_u32(&mut off, "l")?;
            let channels = read_u32(&mut off, "channels")?;
            let dim = l * l * channels;
            let total = dim + dim * dim + 1;
            need(off, total * 8, "model coefficients")?;
            let mut vals = Vec::with_capacity(total);
            for i in 0..total {
                let mut b = [0u8; 8];
                b.copy_from_slice(&bytes[off + i * 8..off + i * 8 + 8]);
                vals.push(f64::from_le_bytes(b));
            }
            off += total * 8;
            if off != bytes.len() {
                return Err(Error::format(
                    &name,
                    off as u64,
                    format!("{} trailing bytes", bytes.len() - off),
                ));
            }
            let ridge = vals[total - 1];
            let covariance = vals[dim..dim + dim * dim].to_vec();
            let mean = vals[..dim].to_vec();
            PatchModel::from_moments(k, l, channels, mean, covariance, ridge)
                .map(StoredModel::Conditional)
        }
        KIND_MARGINAL => {
            let k = read_u32(&mut off, "k")?;
            let channels = read_u32(&mut off, "channels")?;
            let dim = k * k * channels;
            need(off, dim * 16, "marginal coefficients")?;
            let mut vals = Vec::with_capacity(dim * 2);
            for i in 0..dim * 2 {
                let mut b = [0u8; 8];
                b.copy_from_slice(&bytes[off + i * 8..off + i * 8 + 8]);
                vals.push(f64::from_le_bytes(b));
            }
            off += dim * 16;
            if off != bytes.len() {
                return Err(Error::format(
                    &name,
                    off as u64,
                    format!("{} trailing bytes", bytes.len() - off),
                ));
            }
            MarginalModel::new(k, channels, vals[..dim].to_vec(), vals[dim..].to_vec())
                .map(StoredModel::Marginal)
        }
        other => Err(Error::format(
            &name,
            6,
            format!("unknown model kind {other}"),
        )),
    }
}
