//! Reverse-mode differentiation on a small tensor graph, checked against
//! central finite differences.
//!
//! ```bash
//! cargo run --release -p cgmoe-ad --example tensor_gradients
//! ```

use cgmoe_ad::tensor::Tensor;
use rand::Rng;

fn main() {
    let mut rng = cgmoe_ad::rng::rng_from(7, &[0]);
    let a_data: Vec<f64> = (0..4 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b_data: Vec<f64> = (0..5 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();

    // loss = mean(softmax_rows(gelu(A x B)))
    let eval = |a: &[f64], b: &[f64]| -> f64 {
        let a = Tensor::from_vec(vec![4, 5], a.to_vec());
        let b = Tensor::from_vec(vec![5, 3], b.to_vec());
        a.matmul(&b).gelu().softmax(1).mean().item()
    };

    let a = Tensor::param(vec![4, 5], a_data.clone());
    let b = Tensor::param(vec![5, 3], b_data.clone());
    let loss = a.matmul(&b).gelu().softmax(1).mean();
    println!("loss = {:.6}", loss.item());

    let grads = loss.backward();
    let ga = grads.get(&a).unwrap();

    // spot-check five entries of dL/dA against finite differences
    let h = 1e-6;
    println!(
        "{:>6} {:>14} {:>14} {:>10}",
        "index", "analytic", "numeric", "rel err"
    );
    for idx in [0usize, 3, 7, 12, 19] {
        let mut plus = a_data.clone();
        plus[idx] += h;
        let mut minus = a_data.clone();
        minus[idx] -= h;
        let fd = (eval(&plus, &b_data) - eval(&minus, &b_data)) / (2.0 * h);
        let an = ga[idx];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
        println!("{idx:>6} {an:>14.6e} {fd:>14.6e} {rel:>10.2e}");
        assert!(rel < 1e-4 || (fd - an).abs() < 1e-10);
    }
    println!("analytic gradients agree with finite differences");
}
