//! Frozen patch encoder.
//!
//! A seeded, randomly initialized ViT-style stack: patch embedding, learned
//! position embeddings and a [CLS] token, pre-norm attention/FFN blocks, and
//! a final layer norm. Deterministic given its seed; never trained. Real
//! pretrained weights can be substituted through the checkpoint import hook
//! as long as the topology matches.

use super::blocks::{self, LN_EPS};
use super::{Binder, ImageInput, ModelBundle};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Encoder outputs for one image, as plain (gradient-free) buffers.
#[derive(Debug, Clone)]
pub struct EncodedImage<E: Scalar> {
    /// Fused feature levels, each `tokens * dim`, shallow to deep.
    pub levels: Vec<Vec<E>>,
    /// Mean of all tapped layers; the bottleneck input.
    pub fused: Vec<E>,
    /// Final-layer [CLS] token after the closing layer norm, length `dim`.
    pub z_cls: Vec<E>,
    pub tokens: usize,
    pub dim: usize,
}

pub(super) fn encode<E: Scalar>(
    model: &ModelBundle<E>,
    image: &ImageInput,
) -> Result<EncodedImage<E>> {
    let cfg = &model.cfg.encoder;
    if image.width != cfg.image_size || image.height != cfg.image_size {
        return Err(Error::Dimension(format!(
            "image is {}x{}, encoder expects {}x{}",
            image.width, image.height, cfg.image_size, cfg.image_size
        )));
    }
    if image.rgb.len() != image.width * image.height * 3 {
        return Err(Error::Dimension(format!(
            "pixel buffer holds {} values, expected {}",
            image.rgb.len(),
            image.width * image.height * 3
        )));
    }

    let d = cfg.dim;
    let p = cfg.patch_size;
    let side = cfg.tokens_per_side();
    let n = cfg.num_tokens();
    let patch_dim = 3 * p * p;

    // patchify with per-channel normalization
    let mut patches = vec![E::ZERO; n * patch_dim];
    for py in 0..side {
        for px in 0..side {
            let row = py * side + px;
            let mut o = row * patch_dim;
            for y in 0..p {
                for x in 0..p {
                    let pix = ((py * p + y) * cfg.image_size + (px * p + x)) * 3;
                    for c in 0..3 {
                        let v = f64::from(image.rgb[pix + c]);
                        patches[o] = E::from_f64((v - cfg.pixel_mean[c]) / cfg.pixel_std[c]);
                        o += 1;
                    }
                }
            }
        }
    }

    let mut binder = Binder::frozen();
    let enc = &model.encoder;
    let patch_proj = blocks::bind_linear(&enc.patch, "encoder.patch", &mut binder);
    let x = Tensor::from_vec(vec![n, patch_dim], patches)
        .matmul(&patch_proj.w)
        .add_bias(&patch_proj.b);

    let cls = Tensor::from_vec(vec![1, d], enc.cls.clone());
    let pos = Tensor::from_vec(vec![n + 1, d], enc.pos.clone());
    let mut tokens = Tensor::concat(0, &[&cls, &x]).add(&pos);

    let taps = cfg.resolved_feature_layers();
    let mut tapped: Vec<Tensor<E>> = Vec::with_capacity(taps.len());
    for (i, block) in enc.blocks.iter().enumerate() {
        let ln1 = blocks::bind_layer_norm(&block.ln1, d, "ln1", &mut binder);
        let attn = blocks::bind_attention(&block.attn, "attn", &mut binder);
        let normed = tokens.layer_norm(&ln1.gain, &ln1.bias, LN_EPS);
        tokens = tokens.add(&blocks::attention(&normed, &attn, cfg.heads));

        let ln2 = blocks::bind_layer_norm(&block.ln2, d, "ln2", &mut binder);
        let fc1 = blocks::bind_linear(&block.fc1, "fc1", &mut binder);
        let fc2 = blocks::bind_linear(&block.fc2, "fc2", &mut binder);
        let normed = tokens.layer_norm(&ln2.gain, &ln2.bias, LN_EPS);
        let ffn = normed
            .matmul(&fc1.w)
            .add_bias(&fc1.b)
            .gelu()
            .matmul(&fc2.w)
            .add_bias(&fc2.b);
        tokens = tokens.add(&ffn);

        if taps.contains(&(i + 1)) {
            tapped.push(tokens.narrow(0, 1, n));
        }
    }

    let final_ln = blocks::bind_layer_norm(&enc.final_ln, d, "final_ln", &mut binder);
    let closed = tokens.layer_norm(&final_ln.gain, &final_ln.bias, LN_EPS);
    let z_cls = closed.narrow(0, 0, 1).reshape(vec![d]);

    // groupwise fusion: contiguous chunks of the tapped layers, averaged
    let groups = if cfg.feature_groups == 0 {
        tapped.len()
    } else {
        cfg.feature_groups.min(tapped.len())
    };
    let mut levels = Vec::with_capacity(groups);
    let base = tapped.len() / groups;
    let extra = tapped.len() % groups;
    let mut idx = 0;
    for gi in 0..groups {
        let size = base + usize::from(gi < extra);
        let mut acc = tapped[idx].clone();
        for t in &tapped[idx + 1..idx + size] {
            acc = acc.add(t);
        }
        levels.push(acc.scale(1.0 / size as f64).data().to_vec());
        idx += size;
    }

    let mut fused_acc = tapped[0].clone();
    for t in &tapped[1..] {
        fused_acc = fused_acc.add(t);
    }
    let fused = fused_acc.scale(1.0 / tapped.len() as f64).data().to_vec();

    Ok(EncodedImage {
        levels,
        fused,
        z_cls: z_cls.data().to_vec(),
        tokens: n,
        dim: d,
    })
}
