//! Transformer building blocks shared by encoder and decoder.

use super::moe::cgmoe_forward;
use super::{AttentionParams, Binder, Bottleneck, DecoderBlockParams, LayerNormParams, Linear};
use crate::tensor::{Scalar, Tensor};

pub(crate) const LN_EPS: f64 = 1e-6;

pub(crate) struct BoundLinear<E: Scalar> {
    pub w: Tensor<E>,
    pub b: Tensor<E>,
}

pub(crate) struct BoundLayerNorm<E: Scalar> {
    pub gain: Tensor<E>,
    pub bias: Tensor<E>,
}

pub struct BoundAttention<E: Scalar> {
    pub(crate) query: BoundLinear<E>,
    pub(crate) key: BoundLinear<E>,
    pub(crate) value: BoundLinear<E>,
    pub(crate) output: BoundLinear<E>,
}

pub struct BoundDecoderBlock<E: Scalar> {
    pub(crate) ln1: BoundLayerNorm<E>,
    pub(crate) attn: BoundAttention<E>,
    pub(crate) ln2: BoundLayerNorm<E>,
    pub(crate) w1: Vec<Tensor<E>>,
    pub(crate) w2: Vec<Tensor<E>>,
}

pub struct BoundBottleneck<E: Scalar> {
    pub(crate) fc1: BoundLinear<E>,
    pub(crate) fc2: BoundLinear<E>,
}

pub(crate) fn bind_linear<E: Scalar>(
    l: &Linear<E>,
    name: &str,
    binder: &mut Binder<'_, E>,
) -> BoundLinear<E> {
    BoundLinear {
        w: binder.bind(format!("{name}.w"), vec![l.d_in, l.d_out], &l.w),
        b: binder.bind(format!("{name}.b"), vec![l.d_out], &l.b),
    }
}

pub(crate) fn bind_layer_norm<E: Scalar>(
    l: &LayerNormParams<E>,
    dim: usize,
    name: &str,
    binder: &mut Binder<'_, E>,
) -> BoundLayerNorm<E> {
    BoundLayerNorm {
        gain: binder.bind(format!("{name}.gain"), vec![dim], &l.gain),
        bias: binder.bind(format!("{name}.bias"), vec![dim], &l.bias),
    }
}

pub(crate) fn bind_attention<E: Scalar>(
    a: &AttentionParams<E>,
    name: &str,
    binder: &mut Binder<'_, E>,
) -> BoundAttention<E> {
    BoundAttention {
        query: bind_linear(&a.query, &format!("{name}.q"), binder),
        key: bind_linear(&a.key, &format!("{name}.k"), binder),
        value: bind_linear(&a.value, &format!("{name}.v"), binder),
        output: bind_linear(&a.output, &format!("{name}.o"), binder),
    }
}

pub(crate) fn bind_decoder_block<E: Scalar>(
    b: &DecoderBlockParams<E>,
    index: usize,
    binder: &mut Binder<'_, E>,
) -> BoundDecoderBlock<E> {
    let d = b.experts.dim;
    let h = b.experts.hidden;
    BoundDecoderBlock {
        ln1: bind_layer_norm(&b.ln1, d, &format!("decoder.{index}.ln1"), binder),
        attn: bind_attention(&b.attn, &format!("decoder.{index}.attn"), binder),
        ln2: bind_layer_norm(&b.ln2, d, &format!("decoder.{index}.ln2"), binder),
        w1: b
            .experts
            .w1
            .iter()
            .enumerate()
            .map(|(k, w)| binder.bind(format!("decoder.{index}.experts.{k}.w1"), vec![d, h], w))
            .collect(),
        w2: b
            .experts
            .w2
            .iter()
            .enumerate()
            .map(|(k, w)| binder.bind(format!("decoder.{index}.experts.{k}.w2"), vec![h, d], w))
            .collect(),
    }
}

pub(crate) fn bind_bottleneck<E: Scalar>(
    b: &Bottleneck<E>,
    binder: &mut Binder<'_, E>,
) -> BoundBottleneck<E> {
    BoundBottleneck {
        fc1: bind_linear(&b.fc1, "bottleneck.fc1", binder),
        fc2: bind_linear(&b.fc2, "bottleneck.fc2", binder),
    }
}

fn linear<E: Scalar>(x: &Tensor<E>, l: &BoundLinear<E>) -> Tensor<E> {
    x.matmul(&l.w).add_bias(&l.b)
}

/// Standard multi-head softmax attention over a `[tokens, d]` sequence.
pub fn attention<E: Scalar>(x: &Tensor<E>, p: &BoundAttention<E>, heads: usize) -> Tensor<E> {
    let d = x.shape()[1];
    assert_eq!(
        d % heads,
        0,
        "attention: dim {d} not divisible by {heads} heads"
    );
    let dh = d / heads;
    let q = linear(x, &p.query);
    let k = linear(x, &p.key);
    let v = linear(x, &p.value);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut contexts = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.narrow(1, h * dh, dh);
        let kh = k.narrow(1, h * dh, dh);
        let vh = v.narrow(1, h * dh, dh);
        let weights = qh.matmul(&kh.transpose()).scale(scale).softmax(1);
        contexts.push(weights.matmul(&vh));
    }
    let refs: Vec<&Tensor<E>> = contexts.iter().collect();
    linear(&Tensor::concat(1, &refs), &p.output)
}

/// Pre-norm decoder block: attention and expert mixture on residual paths.
pub fn decoder_block_forward<E: Scalar>(
    x: &Tensor<E>,
    block: &BoundDecoderBlock<E>,
    heads: usize,
    g: &Tensor<E>,
) -> Tensor<E> {
    let normed = x.layer_norm(&block.ln1.gain, &block.ln1.bias, LN_EPS);
    let x = x.add(&attention(&normed, &block.attn, heads));
    let normed = x.layer_norm(&block.ln2.gain, &block.ln2.bias, LN_EPS);
    x.add(&cgmoe_forward(&normed, g, &block.w1, &block.w2))
}

/// Trainable linear-GELU-linear projection between encoder and decoder.
/// `noise_mask`, present only in training, is an inverted-dropout mask
/// applied to the input.
pub fn bottleneck_forward<E: Scalar>(
    f: &Tensor<E>,
    b: &BoundBottleneck<E>,
    noise_mask: Option<&Tensor<E>>,
) -> Tensor<E> {
    let x = match noise_mask {
        Some(mask) => f.mul(mask),
        None => f.clone(),
    };
    linear(&linear(&x, &b.fc1).gelu(), &b.fc2)
}
