//! Context-guided expert routing and mixing.

use crate::tensor::{Scalar, Tensor};

/// Tolerance for the simplex contract on routing weights.
const SIMPLEX_TOL: f64 = 1e-6;

/// Panics unless `g` is a probability vector within `1e-6`.
pub fn assert_simplex<E: Scalar>(g: &[E]) {
    let mut sum = 0.0;
    for &v in g {
        let v = v.to_f64();
        assert!(
            v >= -SIMPLEX_TOL,
            "routing weights violate the simplex contract: negative entry {v}"
        );
        sum += v;
    }
    assert!(
        (sum - 1.0).abs() <= SIMPLEX_TOL,
        "routing weights violate the simplex contract: sum {sum}"
    );
}

/// Soft routing weights from a context token: `softmax(W_g z_cls)`.
///
/// `z_cls` has shape `[d]`, `w_g` has shape `[K, d]`; the result lies on the
/// `K`-simplex. Computed once per image and reused by every decoder block.
pub fn route<E: Scalar>(z_cls: &Tensor<E>, w_g: &Tensor<E>) -> Tensor<E> {
    let k = w_g.shape()[0];
    let d = w_g.shape()[1];
    assert_eq!(z_cls.len(), d, "route: context token width mismatch");
    let z = z_cls.reshape(vec![d, 1]);
    w_g.matmul(&z).reshape(vec![k]).softmax(0)
}

/// Routing-weighted sum of equally shaped matrices.
pub fn mix_experts<E: Scalar>(g: &Tensor<E>, mats: &[Tensor<E>]) -> Tensor<E> {
    assert_eq!(
        g.len(),
        mats.len(),
        "mix_experts: weight/expert count mismatch"
    );
    let mut mixed = mats[0].scale_by(&g.narrow(0, 0, 1));
    for (k, m) in mats.iter().enumerate().skip(1) {
        mixed = mixed.add(&m.scale_by(&g.narrow(0, k, 1)));
    }
    mixed
}

/// Applies the expert mixture to per-token features.
///
/// Mixes the expert weight matrices first (`W1 = sum_k g_k W1_k`, likewise
/// `W2`), then applies one feed-forward pass `gelu(x W1) W2` — so the matmul
/// cost per image is independent of the expert count.
pub fn cgmoe_forward<E: Scalar>(
    x: &Tensor<E>,
    g: &Tensor<E>,
    w1: &[Tensor<E>],
    w2: &[Tensor<E>],
) -> Tensor<E> {
    assert_simplex(g.data());
    assert_eq!(w1.len(), w2.len(), "cgmoe: expert bank halves disagree");
    let mixed1 = mix_experts(g, w1);
    let mixed2 = mix_experts(g, w2);
    x.matmul(&mixed1).gelu().matmul(&mixed2)
}
