//! The context-routed mixture-of-experts reconstruction network.
//!
//! A frozen ViT-style patch encoder turns an image into layer-wise feature
//! maps `f_E` and a global context token `z_cls`. A trainable bottleneck
//! projects the fused encoder features, a gating network maps `z_cls` to soft
//! routing weights over `K` experts (computed once per image), and a
//! transformer decoder whose feed-forward layers are expert mixtures
//! reconstructs the encoder features layer by layer.
//!
//! Expert weight matrices are mixed first and a single feed-forward network is
//! applied, so per-image matmul cost does not depend on the expert count.

mod blocks;
mod encoder;
mod moe;
#[cfg(test)]
mod tests;

pub use blocks::{attention, bottleneck_forward, decoder_block_forward};
pub use encoder::EncodedImage;
pub use moe::{assert_simplex, cgmoe_forward, mix_experts, route};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::RgbBuffer;
use crate::rng::rng_from_str;
use crate::tensor::{Scalar, Tensor};

/// Which context token drives expert routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingSource {
    /// The frozen encoder's final [CLS] token (default).
    EncoderCls,
    /// A trainable token prepended to the decoder input; its value after the
    /// first decoder block routes the remaining blocks.
    DecoderCls,
}

/// Frozen encoder geometry and initialization seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    /// Embedding width `d`.
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// 1-based indices of blocks whose outputs are tapped as features.
    /// Empty means "middle half of the blocks".
    pub feature_layers: Vec<usize>,
    /// Number of fused feature levels the taps are averaged into
    /// (0 keeps one level per tapped layer).
    pub feature_groups: usize,
    pub pixel_mean: [f64; 3],
    pub pixel_std: [f64; 3],
    /// All frozen parameters derive deterministically from this seed.
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_size: 64,
            patch_size: 8,
            dim: 32,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            feature_layers: Vec::new(),
            feature_groups: 2,
            pixel_mean: [0.5, 0.5, 0.5],
            pixel_std: [0.5, 0.5, 0.5],
            seed: 0x5EED,
        }
    }
}

impl EncoderConfig {
    /// Paper-scale geometry (kept for the weight-import hook; the desk
    /// default is what tests and the synthetic benchmark use).
    pub fn paper_scale() -> Self {
        EncoderConfig {
            image_size: 280,
            patch_size: 14,
            dim: 768,
            depth: 12,
            ..Self::default()
        }
    }

    pub fn tokens_per_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens_per_side() * self.tokens_per_side()
    }

    /// Tapped blocks: configured list, or the middle half of the stack.
    pub fn resolved_feature_layers(&self) -> Vec<usize> {
        if !self.feature_layers.is_empty() {
            return self.feature_layers.clone();
        }
        let count = (self.depth / 2).max(1);
        let start = self.depth / 4 + 1;
        (start..start + count).collect()
    }
}

/// Full network configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Expert count `K`.
    pub experts: usize,
    /// Expert hidden width `h`.
    pub expert_hidden: usize,
    pub decoder_depth: usize,
    pub decoder_heads: usize,
    pub bottleneck_hidden: usize,
    /// Dropout rate applied to the bottleneck input during training.
    pub bottleneck_drop_rate: f64,
    pub routing_source: RoutingSource,
    /// Seed for trainable-parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            experts: 8,
            expert_hidden: 64,
            decoder_depth: 2,
            decoder_heads: 4,
            bottleneck_hidden: 64,
            bottleneck_drop_rate: 0.2,
            routing_source: RoutingSource::EncoderCls,
            init_seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.image_size == 0 || e.patch_size == 0 || e.image_size % e.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                e.image_size, e.patch_size
            )));
        }
        if e.dim == 0 || e.dim % e.heads != 0 {
            return Err(Error::Config(format!(
                "encoder dim {} must be divisible by heads {}",
                e.dim, e.heads
            )));
        }
        if e.dim % self.decoder_heads != 0 {
            return Err(Error::Config(format!(
                "dim {} must be divisible by decoder_heads {}",
                e.dim, self.decoder_heads
            )));
        }
        let layers = e.resolved_feature_layers();
        if layers.iter().any(|&l| l == 0 || l > e.depth) {
            return Err(Error::Config(format!(
                "feature_layers {layers:?} must lie in [1, {}]",
                e.depth
            )));
        }
        if self.experts == 0 {
            return Err(Error::Config("experts must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.bottleneck_drop_rate) {
            return Err(Error::Config(format!(
                "bottleneck_drop_rate {} must lie in [0, 1)",
                self.bottleneck_drop_rate
            )));
        }
        let levels = self.num_levels();
        if self.decoder_depth < levels {
            return Err(Error::Config(format!(
                "decoder_depth {} cannot emit {} feature levels",
                self.decoder_depth, levels
            )));
        }
        Ok(())
    }

    /// Number of fused feature levels the decoder must reconstruct.
    pub fn num_levels(&self) -> usize {
        let taps = self.encoder.resolved_feature_layers().len();
        if self.encoder.feature_groups == 0 {
            taps
        } else {
            taps.min(self.encoder.feature_groups)
        }
    }

    /// 1-based decoder block indices after which a feature level is emitted,
    /// spaced evenly through the stack.
    pub fn emit_blocks(&self) -> Vec<usize> {
        let levels = self.num_levels();
        let depth = self.decoder_depth;
        (1..=levels).map(|i| (i * depth).div_ceil(levels)).collect()
    }
}

// ── parameter containers ────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Linear<E: Scalar> {
    pub w: Vec<E>,
    pub b: Vec<E>,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormParams<E: Scalar> {
    pub gain: Vec<E>,
    pub bias: Vec<E>,
}

#[derive(Debug, Clone)]
pub struct AttentionParams<E: Scalar> {
    pub query: Linear<E>,
    pub key: Linear<E>,
    pub value: Linear<E>,
    pub output: Linear<E>,
}

#[derive(Debug, Clone)]
pub struct EncoderBlockParams<E: Scalar> {
    pub ln1: LayerNormParams<E>,
    pub attn: AttentionParams<E>,
    pub ln2: LayerNormParams<E>,
    pub fc1: Linear<E>,
    pub fc2: Linear<E>,
}

#[derive(Debug, Clone)]
pub struct Encoder<E: Scalar> {
    pub patch: Linear<E>,
    pub cls: Vec<E>,
    pub pos: Vec<E>,
    pub blocks: Vec<EncoderBlockParams<E>>,
    pub final_ln: LayerNormParams<E>,
}

/// Trainable gating matrix `W_g` of shape `[K, d]`.
#[derive(Debug, Clone)]
pub struct GatingNetwork<E: Scalar> {
    pub weight: Vec<E>,
    pub experts: usize,
    pub dim: usize,
}

/// `K` two-layer feed-forward experts sharing `(d, h)`; no biases.
#[derive(Debug, Clone)]
pub struct ExpertBank<E: Scalar> {
    /// Per expert `[d, h]`, row-major.
    pub w1: Vec<Vec<E>>,
    /// Per expert `[h, d]`, row-major.
    pub w2: Vec<Vec<E>>,
    pub dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct DecoderBlockParams<E: Scalar> {
    pub ln1: LayerNormParams<E>,
    pub attn: AttentionParams<E>,
    pub ln2: LayerNormParams<E>,
    pub experts: ExpertBank<E>,
}

#[derive(Debug, Clone)]
pub struct Bottleneck<E: Scalar> {
    pub fc1: Linear<E>,
    pub fc2: Linear<E>,
}

/// Frozen encoder plus all trainable parts.
///
/// Read-only during inference and shareable across threads; training mutates
/// parameters from a single writer between forwards. Encoder parameters never
/// receive gradients.
#[derive(Debug, Clone)]
pub struct ModelBundle<E: Scalar> {
    pub cfg: ModelConfig,
    pub encoder: Encoder<E>,
    pub bottleneck: Bottleneck<E>,
    pub gating: GatingNetwork<E>,
    pub decoder: Vec<DecoderBlockParams<E>>,
    /// Present only for [`RoutingSource::DecoderCls`].
    pub decoder_ctx: Option<Vec<E>>,
}

/// Model input image, pixel values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ImageInput {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB.
    pub rgb: Vec<f32>,
}

impl ImageInput {
    pub fn from_rgb(buf: &RgbBuffer) -> Self {
        ImageInput {
            width: buf.width,
            height: buf.height,
            rgb: buf.to_unit(),
        }
    }
}

/// Leaf tensors bound to trainable parameters for one forward pass,
/// in a fixed traversal order.
#[derive(Default)]
pub struct Trace<E: Scalar> {
    pub bound: Vec<(String, Tensor<E>)>,
}

impl<E: Scalar> Trace<E> {
    pub fn new() -> Self {
        Trace { bound: Vec::new() }
    }
}

/// Binds raw parameter storage to tensors; with a trace, parameters become
/// tracked leaves, without one they become constants (frozen path).
pub(crate) struct Binder<'a, E: Scalar> {
    trace: Option<&'a mut Trace<E>>,
}

impl<'a, E: Scalar> Binder<'a, E> {
    pub fn frozen() -> Binder<'static, E> {
        Binder { trace: None }
    }

    pub fn trainable(trace: &'a mut Trace<E>) -> Self {
        Binder { trace: Some(trace) }
    }

    pub fn bind(&mut self, name: String, shape: Vec<usize>, values: &[E]) -> Tensor<E> {
        match self.trace.as_deref_mut() {
            Some(trace) => {
                let t = Tensor::param(shape, values.to_vec());
                trace.bound.push((name, t.clone()));
                t
            }
            None => Tensor::from_vec(shape, values.to_vec()),
        }
    }
}

/// One complete forward pass: encoder features (constants), decoder
/// reconstructions, context token and routing weights, plus the parameter
/// trace needed to apply gradients.
pub struct ForwardPass<E: Scalar> {
    pub f_e: Vec<Tensor<E>>,
    pub f_d: Vec<Tensor<E>>,
    pub z_cls: Tensor<E>,
    pub routing: Tensor<E>,
    pub trace: Trace<E>,
}

fn gaussian<E: Scalar>(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<E> {
    // Box-Muller keeps the stream identical for f32 and f64 models.
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(E::from_f64(r * theta.cos() * std));
        if out.len() < n {
            out.push(E::from_f64(r * theta.sin() * std));
        }
    }
    out
}

const INIT_STD: f64 = 0.02;

fn init_linear<E: Scalar>(seed: u64, name: &str, d_in: usize, d_out: usize) -> Linear<E> {
    let mut rng = rng_from_str(seed, name);
    Linear {
        w: gaussian(&mut rng, d_in * d_out, INIT_STD),
        b: vec![E::ZERO; d_out],
        d_in,
        d_out,
    }
}

fn init_layer_norm<E: Scalar>(d: usize) -> LayerNormParams<E> {
    LayerNormParams {
        gain: vec![E::ONE; d],
        bias: vec![E::ZERO; d],
    }
}

fn init_attention<E: Scalar>(seed: u64, prefix: &str, d: usize) -> AttentionParams<E> {
    AttentionParams {
        query: init_linear(seed, &format!("{prefix}.q"), d, d),
        key: init_linear(seed, &format!("{prefix}.k"), d, d),
        value: init_linear(seed, &format!("{prefix}.v"), d, d),
        output: init_linear(seed, &format!("{prefix}.o"), d, d),
    }
}

impl<E: Scalar> ModelBundle<E> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let e = &cfg.encoder;
        let d = e.dim;
        let patch_dim = 3 * e.patch_size * e.patch_size;
        let tokens = e.num_tokens();

        let mut enc_rng = rng_from_str(e.seed, "encoder.tokens");
        let encoder = Encoder {
            patch: init_linear(e.seed, "encoder.patch", patch_dim, d),
            cls: gaussian(&mut enc_rng, d, INIT_STD),
            pos: gaussian(&mut enc_rng, (tokens + 1) * d, INIT_STD),
            blocks: (0..e.depth)
                .map(|i| EncoderBlockParams {
                    ln1: init_layer_norm(d),
                    attn: init_attention(e.seed, &format!("encoder.blocks.{i}.attn"), d),
                    ln2: init_layer_norm(d),
                    fc1: init_linear(
                        e.seed,
                        &format!("encoder.blocks.{i}.fc1"),
                        d,
                        d * e.mlp_ratio,
                    ),
                    fc2: init_linear(
                        e.seed,
                        &format!("encoder.blocks.{i}.fc2"),
                        d * e.mlp_ratio,
                        d,
                    ),
                })
                .collect(),
            final_ln: init_layer_norm(d),
        };

        let s = cfg.init_seed;
        let bottleneck = Bottleneck {
            fc1: init_linear(s, "bottleneck.fc1", d, cfg.bottleneck_hidden),
            fc2: init_linear(s, "bottleneck.fc2", cfg.bottleneck_hidden, d),
        };
        let gating = GatingNetwork {
            weight: gaussian(
                &mut rng_from_str(s, "gating.w_g"),
                cfg.experts * d,
                INIT_STD,
            ),
            experts: cfg.experts,
            dim: d,
        };
        let decoder = (0..cfg.decoder_depth)
            .map(|i| DecoderBlockParams {
                ln1: init_layer_norm(d),
                attn: init_attention(s, &format!("decoder.{i}.attn"), d),
                ln2: init_layer_norm(d),
                experts: ExpertBank {
                    w1: (0..cfg.experts)
                        .map(|k| {
                            gaussian(
                                &mut rng_from_str(s, &format!("decoder.{i}.experts.{k}.w1")),
                                d * cfg.expert_hidden,
                                INIT_STD,
                            )
                        })
                        .collect(),
                    w2: (0..cfg.experts)
                        .map(|k| {
                            gaussian(
                                &mut rng_from_str(s, &format!("decoder.{i}.experts.{k}.w2")),
                                cfg.expert_hidden * d,
                                INIT_STD,
                            )
                        })
                        .collect(),
                    dim: d,
                    hidden: cfg.expert_hidden,
                },
            })
            .collect();
        let decoder_ctx = match cfg.routing_source {
            RoutingSource::EncoderCls => None,
            RoutingSource::DecoderCls => {
                Some(gaussian(&mut rng_from_str(s, "decoder_ctx"), d, INIT_STD))
            }
        };

        Ok(ModelBundle {
            cfg,
            encoder,
            bottleneck,
            gating,
            decoder,
            decoder_ctx,
        })
    }

    /// Runs the frozen encoder. No gradients flow into any encoder parameter.
    pub fn encode(&self, image: &ImageInput) -> Result<EncodedImage<E>> {
        encoder::encode(self, image)
    }

    /// Full pass: encode, bottleneck, route, decode.
    pub fn forward(
        &self,
        image: &ImageInput,
        training: bool,
        noise_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardPass<E>> {
        let enc = self.encode(image)?;
        self.forward_from_encoded(&enc, training, noise_rng)
    }

    /// Decoder-side pass from cached encoder outputs. Training caches
    /// [`EncodedImage`]s because the frozen encoder is deterministic.
    pub fn forward_from_encoded(
        &self,
        enc: &EncodedImage<E>,
        training: bool,
        mut noise_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardPass<E>> {
        let cfg = &self.cfg;
        let d = cfg.encoder.dim;
        let n = enc.tokens;
        let levels = cfg.num_levels();
        if enc.levels.len() != levels {
            return Err(Error::Config(format!(
                "encoded image carries {} levels, model expects {levels}",
                enc.levels.len()
            )));
        }

        let mut trace = Trace::new();
        let mut binder = Binder::trainable(&mut trace);

        // bottleneck
        let fused = Tensor::from_vec(vec![n, d], enc.fused.clone());
        let drop = if training {
            cfg.bottleneck_drop_rate
        } else {
            0.0
        };
        let noise_mask = if drop > 0.0 {
            let rng = noise_rng
                .as_deref_mut()
                .expect("training with dropout requires a noise rng");
            let keep_scale = E::from_f64(1.0 / (1.0 - drop));
            Some(Tensor::from_vec(
                vec![n, d],
                (0..n * d)
                    .map(|_| {
                        if rng.random::<f64>() < drop {
                            E::ZERO
                        } else {
                            keep_scale
                        }
                    })
                    .collect(),
            ))
        } else {
            None
        };
        let bn = blocks::bind_bottleneck(&self.bottleneck, &mut binder);
        let x0 = bottleneck_forward(&fused, &bn, noise_mask.as_ref());

        // gating
        let w_g = binder.bind(
            "gating.w_g".into(),
            vec![cfg.experts, d],
            &self.gating.weight,
        );

        // decoder
        let bound_blocks: Vec<_> = self
            .decoder
            .iter()
            .enumerate()
            .map(|(i, b)| blocks::bind_decoder_block(b, i, &mut binder))
            .collect();

        let z_cls = Tensor::from_vec(vec![d], enc.z_cls.clone());
        let emit_at = cfg.emit_blocks();
        let uniform = Tensor::from_vec(
            vec![cfg.experts],
            vec![E::from_f64(1.0 / cfg.experts as f64); cfg.experts],
        );

        let (mut x, has_ctx, mut g) = match cfg.routing_source {
            RoutingSource::EncoderCls => (x0, false, route(&z_cls, &w_g)),
            RoutingSource::DecoderCls => {
                let ctx = binder.bind(
                    "decoder_ctx".into(),
                    vec![1, d],
                    self.decoder_ctx
                        .as_ref()
                        .expect("decoder_cls routing requires the context token"),
                );
                // block 1 runs with uniform routing; the context token's value
                // after it drives routing for the rest of the stack
                (Tensor::concat(0, &[&ctx, &x0]), true, uniform)
            }
        };

        let mut f_d = Vec::with_capacity(levels);
        for (bi, block) in bound_blocks.iter().enumerate() {
            x = decoder_block_forward(&x, block, cfg.decoder_heads, &g);
            if cfg.routing_source == RoutingSource::DecoderCls && bi == 0 {
                let ctx_now = x.narrow(0, 0, 1).reshape(vec![d]);
                g = route(&ctx_now, &w_g);
            }
            if emit_at.contains(&(bi + 1)) {
                let out = if has_ctx {
                    x.narrow(0, 1, n)
                } else {
                    x.clone()
                };
                f_d.push(out);
            }
        }

        let f_e = enc
            .levels
            .iter()
            .map(|l| Tensor::from_vec(vec![n, d], l.clone()))
            .collect();

        Ok(ForwardPass {
            f_e,
            f_d,
            z_cls,
            routing: g,
            trace,
        })
    }

    /// Visits every parameter as `(name, shape, values, trainable)`.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[E], bool)) {
        let mut this = self.clone();
        this.visit_params_mut(&mut |name, shape, values, trainable| {
            f(name, shape, values, trainable);
        });
    }

    /// Mutable parameter visitation; the single source of truth for
    /// checkpoint layout, optimizer updates and gradient checks.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut Vec<E>, bool)) {
        let d = self.cfg.encoder.dim;
        let e = &self.cfg.encoder;
        let patch_dim = 3 * e.patch_size * e.patch_size;
        let tokens = e.num_tokens();
        let mlp = d * e.mlp_ratio;
        let h = self.cfg.expert_hidden;
        let bh = self.cfg.bottleneck_hidden;
        let k = self.cfg.experts;

        let lin = |f: &mut dyn FnMut(&str, &[usize], &mut Vec<E>, bool),
                   name: &str,
                   l: &mut Linear<E>,
                   din: usize,
                   dout: usize,
                   trainable: bool| {
            f(&format!("{name}.w"), &[din, dout], &mut l.w, trainable);
            f(&format!("{name}.b"), &[dout], &mut l.b, trainable);
        };
        let ln = |f: &mut dyn FnMut(&str, &[usize], &mut Vec<E>, bool),
                  name: &str,
                  l: &mut LayerNormParams<E>,
                  dim: usize,
                  trainable: bool| {
            f(&format!("{name}.gain"), &[dim], &mut l.gain, trainable);
            f(&format!("{name}.bias"), &[dim], &mut l.bias, trainable);
        };

        // frozen encoder
        lin(
            f,
            "encoder.patch",
            &mut self.encoder.patch,
            patch_dim,
            d,
            false,
        );
        f("encoder.cls", &[d], &mut self.encoder.cls, false);
        f(
            "encoder.pos",
            &[tokens + 1, d],
            &mut self.encoder.pos,
            false,
        );
        for (i, b) in self.encoder.blocks.iter_mut().enumerate() {
            ln(f, &format!("encoder.blocks.{i}.ln1"), &mut b.ln1, d, false);
            lin(
                f,
                &format!("encoder.blocks.{i}.attn.q"),
                &mut b.attn.query,
                d,
                d,
                false,
            );
            lin(
                f,
                &format!("encoder.blocks.{i}.attn.k"),
                &mut b.attn.key,
                d,
                d,
                false,
            );
            lin(
                f,
                &format!("encoder.blocks.{i}.attn.v"),
                &mut b.attn.value,
                d,
                d,
                false,
            );
            lin(
                f,
                &format!("encoder.blocks.{i}.attn.o"),
                &mut b.attn.output,
                d,
                d,
                false,
            );
            ln(f, &format!("encoder.blocks.{i}.ln2"), &mut b.ln2, d, false);
            lin(
                f,
                &format!("encoder.blocks.{i}.fc1"),
                &mut b.fc1,
                d,
                mlp,
                false,
            );
            lin(
                f,
                &format!("encoder.blocks.{i}.fc2"),
                &mut b.fc2,
                mlp,
                d,
                false,
            );
        }
        ln(f, "encoder.final_ln", &mut self.encoder.final_ln, d, false);

        // trainables
        lin(f, "bottleneck.fc1", &mut self.bottleneck.fc1, d, bh, true);
        lin(f, "bottleneck.fc2", &mut self.bottleneck.fc2, bh, d, true);
        f("gating.w_g", &[k, d], &mut self.gating.weight, true);
        for (i, b) in self.decoder.iter_mut().enumerate() {
            ln(f, &format!("decoder.{i}.ln1"), &mut b.ln1, d, true);
            lin(
                f,
                &format!("decoder.{i}.attn.q"),
                &mut b.attn.query,
                d,
                d,
                true,
            );
            lin(
                f,
                &format!("decoder.{i}.attn.k"),
                &mut b.attn.key,
                d,
                d,
                true,
            );
            lin(
                f,
                &format!("decoder.{i}.attn.v"),
                &mut b.attn.value,
                d,
                d,
                true,
            );
            lin(
                f,
                &format!("decoder.{i}.attn.o"),
                &mut b.attn.output,
                d,
                d,
                true,
            );
            ln(f, &format!("decoder.{i}.ln2"), &mut b.ln2, d, true);
            for (ki, w1) in b.experts.w1.iter_mut().enumerate() {
                f(&format!("decoder.{i}.experts.{ki}.w1"), &[d, h], w1, true);
            }
            for (ki, w2) in b.experts.w2.iter_mut().enumerate() {
                f(&format!("decoder.{i}.experts.{ki}.w2"), &[h, d], w2, true);
            }
        }
        if let Some(ctx) = self.decoder_ctx.as_mut() {
            f("decoder_ctx", &[1, d], ctx, true);
        }
    }

    /// Flat copy of all trainable parameter values, in visitation order.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut this = self.clone();
        this.visit_params_mut(&mut |name, _, _, trainable| {
            if trainable {
                names.push(name.to_string());
            }
        });
        names
    }

    /// FNV digest over every frozen parameter's bits; the frozen-encoder
    /// invariant asserts this never changes across training.
    pub fn frozen_bits_digest(&self) -> u64 {
        let mut bytes: Vec<u8> = Vec::new();
        self.visit_params(&mut |_, _, values, trainable| {
            if !trainable {
                for v in values {
                    bytes.extend_from_slice(&v.to_f64().to_bits().to_le_bytes());
                }
            }
        });
        crate::rng::fnv1a(&bytes)
    }
}
