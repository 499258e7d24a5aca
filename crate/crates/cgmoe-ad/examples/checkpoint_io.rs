//! Checkpoint container and the weight-import hook.
//!
//! Checkpoints store a config digest plus named parameter records (name,
//! shape, raw f32 little-endian). `load` rebuilds a model and enforces the
//! digest; `import` overwrites matching parameters in an existing model and
//! is the hook for externally produced weights (for instance a pretrained
//! encoder exported with matching record names).
//!
//! ```bash
//! cargo run --release -p cgmoe-ad --example checkpoint_io
//! ```

use cgmoe_ad::checkpoint::{config_digest, import, load, recorded_expert_count, save};
use cgmoe_ad::model::{ModelBundle, ModelConfig};

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("model.ckpt");

    let cfg = ModelConfig::default();
    let model = ModelBundle::<f32>::new(cfg.clone()).unwrap();
    save(&path, &model).unwrap();
    println!(
        "saved checkpoint ({} bytes, digest {:#018x})",
        std::fs::metadata(&path).unwrap().len(),
        config_digest(&cfg)
    );
    println!(
        "expert count recorded in header region: {}",
        recorded_expert_count(&path).unwrap()
    );

    // restoring under the same config succeeds
    let restored: ModelBundle<f32> = load(&path, &cfg).unwrap();
    let mut identical = true;
    let mut lhs = Vec::new();
    model.visit_params(&mut |_, _, v, _| lhs.push(v.to_vec()));
    let mut rhs = Vec::new();
    restored.visit_params(&mut |_, _, v, _| rhs.push(v.to_vec()));
    for (a, b) in lhs.iter().zip(&rhs) {
        identical &= a == b;
    }
    println!("round-trip restores every parameter: {identical}");

    // a different topology is rejected outright
    let mut other = cfg.clone();
    other.experts = 2;
    match load::<f32>(&path, &other) {
        Err(e) => println!("mismatched config rejected: {e}"),
        Ok(_) => unreachable!(),
    }

    // the import hook overwrites matching parameters in-place
    let mut target = ModelBundle::<f32>::new(ModelConfig {
        init_seed: 999, // different starting weights, same topology
        ..cfg
    })
    .unwrap();
    import(&path, &mut target).unwrap();
    let mut imported = Vec::new();
    target.visit_params(&mut |_, _, v, _| imported.push(v.to_vec()));
    println!("import hook transplanted the weights: {}", imported == lhs);
}
