//! Anomaly maps and image-level scores from reconstruction residuals.
//!
//! Per level, the per-token cosine distance between encoder and decoder
//! features is laid out on the token grid, bilinearly upsampled to the output
//! resolution and averaged across levels, then Gaussian-smoothed. The image
//! score condenses the map with a configurable statistic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardPass, ImageInput, ModelBundle};
use crate::tensor::{Scalar, Tensor};

const COSINE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageScoreStatistic {
    /// Mean of the top fraction of pixel scores (minimum one pixel).
    TopkMean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    /// Gaussian smoothing radius in pixels (0 disables smoothing).
    pub smooth_sigma: f64,
    pub image_score: ImageScoreStatistic,
    /// Fraction of pixels the top-k mean averages over.
    pub topk_fraction: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            smooth_sigma: 4.0,
            image_score: ImageScoreStatistic::TopkMean,
            topk_fraction: 0.001,
        }
    }
}

/// Per-image scoring output.
#[derive(Debug, Clone)]
pub struct AnomalyResult {
    pub width: usize,
    pub height: usize,
    /// Nonnegative pixel scores, row-major.
    pub map: Vec<f32>,
    pub image_score: f64,
    pub category: String,
    pub sample_id: String,
}

/// Builds the anomaly map from aligned feature levels.
///
/// `tokens` must be a perfect square (the encoder's patch grid). Map values
/// before smoothing lie in the cosine-distance range `[0, 2]`.
pub fn anomaly_map_from_levels(
    f_e: &[&[f64]],
    f_d: &[&[f64]],
    tokens: usize,
    dim: usize,
    out_w: usize,
    out_h: usize,
    sigma: f64,
) -> Vec<f32> {
    assert_eq!(f_e.len(), f_d.len(), "anomaly map: level lists misaligned");
    assert!(!f_e.is_empty(), "anomaly map: no feature levels");
    let side = (tokens as f64).sqrt().round() as usize;
    assert_eq!(side * side, tokens, "token count must form a square grid");

    let mut acc = vec![0.0f64; out_w * out_h];
    for (e, d) in f_e.iter().zip(f_d) {
        assert_eq!(e.len(), tokens * dim, "anomaly map: level size mismatch");
        assert_eq!(d.len(), tokens * dim, "anomaly map: level size mismatch");
        let mut grid = vec![0.0f64; tokens];
        for t in 0..tokens {
            let er = &e[t * dim..(t + 1) * dim];
            let dr = &d[t * dim..(t + 1) * dim];
            let mut dot = 0.0;
            let mut ne = 0.0;
            let mut nd = 0.0;
            for j in 0..dim {
                dot += er[j] * dr[j];
                ne += er[j] * er[j];
                nd += dr[j] * dr[j];
            }
            let denom = (ne * nd).sqrt().max(COSINE_EPS);
            grid[t] = 1.0 - dot / denom;
        }
        let up = bilinear_upsample(&grid, side, side, out_w, out_h);
        for (a, v) in acc.iter_mut().zip(&up) {
            *a += v;
        }
    }
    let inv = 1.0 / f_e.len() as f64;
    for a in acc.iter_mut() {
        *a *= inv;
    }
    let smoothed = gaussian_smooth(&acc, out_w, out_h, sigma);
    smoothed.into_iter().map(|v| v as f32).collect()
}

/// Scores one forward pass into a full-resolution map.
pub fn anomaly_map_from_pass<E: Scalar>(
    pass: &ForwardPass<E>,
    tokens: usize,
    dim: usize,
    out_w: usize,
    out_h: usize,
    sigma: f64,
) -> Vec<f32> {
    let to64 = |t: &Tensor<E>| t.data().iter().map(|v| v.to_f64()).collect::<Vec<f64>>();
    let e64: Vec<Vec<f64>> = pass.f_e.iter().map(to64).collect();
    let d64: Vec<Vec<f64>> = pass.f_d.iter().map(to64).collect();
    let e_refs: Vec<&[f64]> = e64.iter().map(Vec::as_slice).collect();
    let d_refs: Vec<&[f64]> = d64.iter().map(Vec::as_slice).collect();
    anomaly_map_from_levels(&e_refs, &d_refs, tokens, dim, out_w, out_h, sigma)
}

/// Condenses a map into the image score.
pub fn image_score(map: &[f32], cfg: &ScoringConfig) -> f64 {
    assert!(!map.is_empty(), "image score of an empty map");
    match cfg.image_score {
        ImageScoreStatistic::Max => map.iter().fold(f64::MIN, |m, &v| m.max(f64::from(v))),
        ImageScoreStatistic::TopkMean => {
            let k = ((map.len() as f64 * cfg.topk_fraction).floor() as usize).max(1);
            let mut sorted: Vec<f32> = map.to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).expect("scores are finite"));
            sorted[..k].iter().map(|&v| f64::from(v)).sum::<f64>() / k as f64
        }
    }
}

/// Runs the model on one image and scores it.
pub fn score_image<E: Scalar>(
    model: &ModelBundle<E>,
    image: &ImageInput,
    cfg: &ScoringConfig,
) -> Result<(Vec<f32>, f64)> {
    let pass = model.forward(image, false, None)?;
    let enc_cfg = &model.cfg.encoder;
    if pass.f_e.is_empty() {
        return Err(Error::Contract(
            "forward pass carries no feature levels".into(),
        ));
    }
    let map = anomaly_map_from_pass(
        &pass,
        enc_cfg.num_tokens(),
        enc_cfg.dim,
        image.width,
        image.height,
        cfg.smooth_sigma,
    );
    let score = image_score(&map, cfg);
    Ok((map, score))
}

/// Bilinear upsampling with half-pixel centers.
pub fn bilinear_upsample(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    assert_eq!(src.len(), sw * sh);
    let mut out = vec![0.0; dw * dh];
    let sx = sw as f64 / dw as f64;
    let sy = sh as f64 / dh as f64;
    for y in 0..dh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, sh as f64 - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f64;
        for x in 0..dw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, sw as f64 - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f64;
            let top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
            let bottom = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
            out[y * dw + x] = top * (1.0 - wy) + bottom * wy;
        }
    }
    out
}

/// Separable Gaussian blur; the kernel is renormalized at the borders.
pub fn gaussian_smooth(map: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(map.len(), w * h);
    if sigma <= 0.0 {
        return map.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();

    let mut horizontal = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut weight = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sxi = x as isize + ki as isize - radius;
                if sxi < 0 || sxi >= w as isize {
                    continue;
                }
                sum += kv * map[y * w + sxi as usize];
                weight += kv;
            }
            horizontal[y * w + x] = sum / weight;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut weight = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let syi = y as isize + ki as isize - radius;
                if syi < 0 || syi >= h as isize {
                    continue;
                }
                sum += kv * horizontal[syi as usize * w + x];
                weight += kv;
            }
            out[y * w + x] = sum / weight;
        }
    }
    out
}
