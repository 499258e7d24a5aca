//! Context-token routing and expert-weight mixing.
//!
//! Shows the two core properties of the mixture: routing weights live on the
//! simplex for any context, and mixing the weight matrices first means the
//! per-token cost never grows with the expert count.
//!
//! ```bash
//! cargo run --release -p cgmoe-ad --example context_routing
//! ```

use cgmoe_ad::model::{cgmoe_forward, route};
use cgmoe_ad::tensor::{matmul_macs, reset_matmul_macs, Tensor};
use rand::Rng;

fn main() {
    let mut rng = cgmoe_ad::rng::rng_from(42, &[0]);
    let (d, h, n) = (16usize, 32usize, 9usize);

    // two different context tokens route differently
    let w_g = Tensor::from_vec(
        vec![4, d],
        (0..4 * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    for name in ["context A", "context B"] {
        let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = route(&Tensor::from_vec(vec![d], z), &w_g);
        let sum: f64 = g.data().iter().sum();
        println!(
            "{name}: g = {:?} (sum {:.12})",
            g.data()
                .iter()
                .map(|v| (v * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            sum
        );
    }

    // identical experts collapse to a single feed-forward network
    let shared_w1 = Tensor::from_vec(
        vec![d, h],
        (0..d * h).map(|_| rng.random_range(-0.2..0.2)).collect(),
    );
    let shared_w2 = Tensor::from_vec(
        vec![h, d],
        (0..h * d).map(|_| rng.random_range(-0.2..0.2)).collect(),
    );
    let x = Tensor::from_vec(
        vec![n, d],
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let g = Tensor::from_vec(vec![4], vec![0.4, 0.3, 0.2, 0.1]);
    let bank1: Vec<Tensor<f64>> = (0..4).map(|_| shared_w1.clone()).collect();
    let bank2: Vec<Tensor<f64>> = (0..4).map(|_| shared_w2.clone()).collect();
    let mixed = cgmoe_forward(&x, &g, &bank1, &bank2);
    let single = x.matmul(&shared_w1).gelu().matmul(&shared_w2);
    let max_diff = mixed
        .data()
        .iter()
        .zip(single.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("identical experts vs single FFN: max |diff| = {max_diff:.2e}");

    // matmul work through the mixture is independent of K
    for k in [2usize, 8, 32] {
        let w1: Vec<Tensor<f64>> = (0..k).map(|_| shared_w1.clone()).collect();
        let w2: Vec<Tensor<f64>> = (0..k).map(|_| shared_w2.clone()).collect();
        let g = Tensor::from_vec(vec![k], vec![1.0 / k as f64; k]);
        reset_matmul_macs();
        let _ = cgmoe_forward(&x, &g, &w1, &w2);
        println!("K = {k:>2}: {} multiply-accumulates", matmul_macs());
    }
}
