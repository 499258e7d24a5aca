//! End-to-end walkthrough: generate a small benchmark, train the
//! expert-mixture reconstruction model, and evaluate it.
//!
//! Uses a reduced iteration budget so it finishes in well under a minute;
//! the `train` and `eval` CLI subcommands run the full configuration.
//!
//! ```bash
//! cargo run --release -p cgmoe-ad --example train_and_evaluate
//! ```

use cgmoe_ad::dataset::{DatasetManifest, Split};
use cgmoe_ad::imgio;
use cgmoe_ad::metrics::evaluate_model;
use cgmoe_ad::model::{ImageInput, ModelBundle, ModelConfig};
use cgmoe_ad::scoring::ScoringConfig;
use cgmoe_ad::synth::{generate, SynthSpec};
use cgmoe_ad::train::{encode_training_set, train, TrainConfig};

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let data = work.path().join("benchmark");

    let mut spec = SynthSpec::desk_default(1);
    spec.train_normals = 20; // keep the walkthrough quick
    let manifest = generate(&spec, &data).unwrap();
    println!(
        "benchmark: {} categories under {}",
        manifest.categories.len(),
        data.display()
    );

    // load the train split
    let mut images = Vec::new();
    for cat in &manifest.categories {
        for s in cat.samples.iter().filter(|s| s.split == Split::Train) {
            let buf = imgio::load_rgb(&data.join(&s.image)).unwrap();
            images.push(ImageInput::from_rgb(&buf));
        }
    }

    let model_cfg = ModelConfig::default(); // 8 experts, encoder-token routing
    let mut model = ModelBundle::<f32>::new(model_cfg).unwrap();
    let encoded = encode_training_set(&model, &images).unwrap();

    let train_cfg = TrainConfig {
        iterations: 600,
        seed: 1,
        log_every: 100,
        ..TrainConfig::default()
    };
    println!(
        "training {} iterations on {} images ...",
        train_cfg.iterations,
        images.len()
    );
    let outcome = train(&mut model, &encoded, &train_cfg, None).unwrap();
    for r in &outcome.records {
        println!(
            "  iter {:>4}  loss {:.4}  masked {:.2}  lr {:.2e}",
            r.iteration, r.loss, r.masked_fraction, r.lr
        );
    }

    let out = evaluate_model(&model, &ScoringConfig::default(), &manifest, &data, None).unwrap();
    print!("{}", out.report.to_text());

    let reloaded = DatasetManifest::load(&data).unwrap();
    assert_eq!(reloaded, manifest);
}
