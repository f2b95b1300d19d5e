//! Red/blue evidence heatmaps and binary PPM output.
//!
//! The colormap is sign-symmetric around white: the map is normalized by
//! its maximum absolute value to v in [-1, 1], positive v interpolates
//! white to red, negative v white to blue, zero stays white. Red marks
//! evidence for the class, blue evidence against it.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evidence::EvidenceMap;
use crate::tensor::Tensor;

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapImage {
    pub width: usize,
    pub height: usize,
    /// RGB triples, row-major, length 3 * width * height.
    pub pixels: Vec<u8>,
}

fn colormap(v: f64) -> [u8; 3] {
    // v in [-1, 1]
    if v >= 0.0 {
        let c = (255.0 * (1.0 - v)).round() as u8;
        [255, c, c]
    } else {
        let c = (255.0 * (1.0 + v)).round() as u8;
        [c, c, 255]
    }
}

/// Renders we/counts normalized by max |.|; an all-zero map comes out
/// all white. Scaling the map by any positive constant does not change
/// the image.
pub fn render_heatmap(map: &EvidenceMap) -> Result<HeatmapImage> {
    let values = map.values();
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("evidence map value {bad}")));
    }
    let max_abs = values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let pixels: Vec<u8> = values
        .iter()
        .flat_map(|&v| {
            let norm = if max_abs == 0.0 { 0.0 } else { v / max_abs };
            colormap(norm)
        })
        .collect();
    Ok(HeatmapImage {
        width: map.width(),
        height: map.height(),
        pixels,
    })
}

/// Convex blend of the rendered heatmap over the grayscale input:
/// round(alpha * heat + (1 - alpha) * gray) per channel. Multi-channel
/// inputs are averaged to gray first.
pub fn overlay(map: &EvidenceMap, image: &Tensor, alpha: f64) -> Result<HeatmapImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    let s = image.shape();
    if s.len() != 3 || s[1] != map.height() || s[2] != map.width() {
        return Err(Error::ShapeMismatch(format!(
            "image shape {s:?} does not match {}x{} map",
            map.height(),
            map.width()
        )));
    }
    let heat = render_heatmap(map)?;
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut pixels = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            let mut g = 0.0;
            for ch in 0..c {
                g += image.get_chw(ch, y, x);
            }
            let gray = (255.0 * (g / c as f64).clamp(0.0, 1.0)).round();
            for ch in 0..3 {
                let hv = heat.pixels[(y * w + x) * 3 + ch] as f64;
                pixels.push((alpha * hv + (1.0 - alpha) * gray).round() as u8);
            }
        }
    }
    Ok(HeatmapImage {
        width: w,
        height: h,
        pixels,
    })
}

/// Binary PPM (P6, maxval 255): `P6\n<w> <h>\n255\n` then raw RGB bytes.
pub fn write_ppm(img: &HeatmapImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    buf.extend_from_slice(&img.pixels);
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_header_token(bytes: &[u8], pos: &mut usize, path: &str, what: &str) -> Result<usize> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(
            path,
            start as u64,
            format!("expected numeric {what}"),
        ));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .unwrap()
        .parse()
        .map_err(|_| Error::format(path, start as u64, format!("bad {what}")))
}

/// Reads a binary P6 (RGB) or P5 (grayscale) file. P5 pixels are expanded
/// to gray RGB triples.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<HeatmapImage> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&name, e))?;
    if bytes.len() < 2 || bytes[0] != b'P' || (bytes[1] != b'6' && bytes[1] != b'5') {
        return Err(Error::format(&name, 0, "expected P6 or P5 magic"));
    }
    let rgb = bytes[1] == b'6';
    let mut pos = 2;
    let w = parse_header_token(&bytes, &mut pos, &name, "width")?;
    let h = parse_header_token(&bytes, &mut pos, &name, "height")?;
    let maxval = parse_header_token(&bytes, &mut pos, &name, "maxval")?;
    if maxval != 255 {
        return Err(Error::format(&name, pos as u64, "only maxval 255 supported"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(&name, pos as u64, "missing header separator"));
    }
    pos += 1;
    let per = if rgb { 3 } else { 1 };
    let expected = w * h * per;
    if bytes.len() - pos != expected {
        return Err(Error::format(
            &name,
            pos as u64,
            format!(
                "payload is {} bytes, expected {expected}",
                bytes.len() - pos
            ),
        ));
    }
    let pixels = if rgb {
        bytes[pos..].to_vec()
    } else {
        bytes[pos..].iter().flat_map(|&g| [g, g, g]).collect()
    };
    Ok(HeatmapImage {
        width: w,
        height: h,
        pixels,
    })
}

/// Loads a P5/P6 file as a (channels, h, w) tensor in [0, 1]; P5 gives
/// one channel, P6 three.
pub fn read_image_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&name, e))?;
    if bytes.len() < 2 || bytes[0] != b'P' || (bytes[1] != b'6' && bytes[1] != b'5') {
        return Err(Error::format(&name, 0, "expected P6 or P5 magic"));
    }
    let img = read_ppm(path)?;
    let gray = bytes[1] == b'5';
    let (h, w) = (img.height, img.width);
    if gray {
        let data: Vec<f64> = (0..h * w)
            .map(|i| img.pixels[i * 3] as f64 / 255.0)
            .collect();
        Tensor::from_vec(vec![1, h, w], data)
    } else {
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for i in 0..h * w {
                data.push(img.pixels[i * 3 + c] as f64 / 255.0);
            }
        }
        Tensor::from_vec(vec![3, h, w], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{ExplainConfig, Method};

    fn map_from(values: Vec<f64>, h: usize, w: usize) -> EvidenceMap {
        EvidenceMap::from_parts(
            h,
            w,
            values,
            vec![1; h * w],
            0,
            Method::Efficient,
            ExplainConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn all_zero_map_renders_white() {
        let img = render_heatmap(&map_from(vec![0.0; 6], 2, 3)).unwrap();
        assert!(img.pixels.iter().all(|&p| p == 255));
    }

    #[test]
    fn colormap_formula_values() {
        let img = render_heatmap(&map_from(vec![1.0, 0.5, 0.0, -1.0], 2, 2)).unwrap();
        assert_eq!(&img.pixels[0..3], &[255, 0, 0]); // max positive: pure red
        assert_eq!(&img.pixels[3..6], &[255, 128, 128]); // v = +0.5
        assert_eq!(&img.pixels[6..9], &[255, 255, 255]); // zero: white
        assert_eq!(&img.pixels[9..12], &[0, 0, 255]); // max negative: pure blue
    }

    #[test]
    fn colormap_is_sign_symmetric() {
        let values = vec![0.75, -0.3, 0.1, -1.0, 0.0, 0.6];
        let pos = render_heatmap(&map_from(values.clone(), 2, 3)).unwrap();
        let neg = render_heatmap(&map_from(values.iter().map(|v| -v).collect(), 2, 3)).unwrap();
        for (p, n) in pos.pixels.chunks(3).zip(neg.pixels.chunks(3)) {
            assert_eq!(p[0], n[2]);
            assert_eq!(p[1], n[1]);
            assert_eq!(p[2], n[0]);
        }
    }

    #[test]
    fn rendering_is_scale_invariant() {
        let values = vec![0.5, -1.0, 0.25, 0.0, -0.125, 1.0];
        let base = render_heatmap(&map_from(values.clone(), 2, 3)).unwrap();
        for scale in [2.0, 0.25, 3.0, 1024.0] {
            let scaled =
                render_heatmap(&map_from(values.iter().map(|v| v * scale).collect(), 2, 3))
                    .unwrap();
            assert_eq!(base, scaled, "scale {scale}");
        }
    }

    #[test]
    fn non_finite_map_is_rejected() {
        let err = render_heatmap(&map_from(vec![0.0, f64::NAN], 1, 2)).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn overlay_alpha_extremes() {
        let map = map_from(vec![1.0, -1.0, 0.0, 0.5], 2, 2);
        let image =
            Tensor::from_vec(vec![1, 2, 2], vec![0.0, 1.0, 0.2, 55.0 / 255.0]).unwrap();
        let gray_only = overlay(&map, &image, 0.0).unwrap();
        assert_eq!(&gray_only.pixels[0..3], &[0, 0, 0]);
        assert_eq!(&gray_only.pixels[3..6], &[255, 255, 255]);
        assert_eq!(&gray_only.pixels[6..9], &[51, 51, 51]);
        assert_eq!(&gray_only.pixels[9..12], &[55, 55, 55]);
        let heat_only = overlay(&map, &image, 1.0).unwrap();
        assert_eq!(heat_only, render_heatmap(&map).unwrap());
        // alpha 0.5: arithmetic mean, rounded half away from zero
        let mixed = overlay(&map, &image, 0.5).unwrap();
        // pixel 0: heat (255,0,0), gray 0 -> (128, 0, 0)
        assert_eq!(&mixed.pixels[0..3], &[128, 0, 0]);
        assert!(overlay(&map, &image, 1.5).is_err());
        let small = Tensor::zeros(vec![1, 1, 2]);
        assert!(overlay(&map, &small, 0.5).is_err());
    }

    #[test]
    fn one_by_one_white_ppm_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("white.ppm");
        let img = HeatmapImage {
            width: 1,
            height: 1,
            pixels: vec![255, 255, 255],
        };
        write_ppm(&img, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes, b"P6\n1 1\n255\n\xff\xff\xff");
    }

    #[test]
    fn ppm_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.ppm");
        let img = HeatmapImage {
            width: 3,
            height: 2,
            pixels: (0..18).map(|i| (i * 13) as u8).collect(),
        };
        write_ppm(&img, &p).unwrap();
        let back = read_ppm(&p).unwrap();
        assert_eq!(img, back);
        let t = read_image_tensor(&p).unwrap();
        assert_eq!(t.shape(), &[3, 2, 3]);
        assert!((t.get_chw(1, 0, 0) - 13.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_path_errors() {
        let img = HeatmapImage {
            width: 1,
            height: 1,
            pixels: vec![0, 0, 0],
        };
        assert!(write_ppm(&img, "/nonexistent-dir/x.ppm").is_err());
        assert!(read_ppm("/nonexistent-dir/x.ppm").is_err());
    }
}
