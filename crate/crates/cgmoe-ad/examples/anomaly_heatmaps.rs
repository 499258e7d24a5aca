//! Scores a defective image with an untrained model and exports the anomaly
//! map as a 16-bit grayscale PNG.
//!
//! Even before training, a defect that perturbs the frozen encoder features
//! shows up in the reconstruction residual; training sharpens the contrast.
//!
//! ```bash
//! cargo run --release -p cgmoe-ad --example anomaly_heatmaps -- /tmp/heatmap.png
//! ```

use std::path::PathBuf;

use cgmoe_ad::imgio::save_gray16_png;
use cgmoe_ad::model::{ImageInput, ModelBundle, ModelConfig};
use cgmoe_ad::rng::rng_from;
use cgmoe_ad::scoring::{image_score, score_image, ScoringConfig};
use cgmoe_ad::synth::{inject_defect, render_normal, DefectRecipe, SynthSpec};

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "/tmp/heatmap.png".into())
        .into();

    let spec = SynthSpec::desk_default(3);
    let category = &spec.categories[0];
    let mut rng = rng_from(3, &[10]);
    let clean = render_normal(&spec, category, &mut rng.clone());
    let injected = inject_defect(
        &clean,
        &DefectRecipe::MissingPatch {
            min_frac: 0.2,
            max_frac: 0.25,
            fill: [10, 10, 10],
        },
        &mut rng,
    )
    .unwrap();

    let model = ModelBundle::<f32>::new(ModelConfig::default()).unwrap();
    let scoring = ScoringConfig::default();
    let (clean_map, clean_score) =
        score_image(&model, &ImageInput::from_rgb(&clean), &scoring).unwrap();
    let (defect_map, defect_score) =
        score_image(&model, &ImageInput::from_rgb(&injected.image), &scoring).unwrap();

    println!("clean image score:     {clean_score:.4}");
    println!("defective image score: {defect_score:.4}");
    println!(
        "max statistic instead:  {:.4}",
        image_score(
            &defect_map,
            &ScoringConfig {
                image_score: cgmoe_ad::scoring::ImageScoreStatistic::Max,
                ..scoring.clone()
            }
        )
    );
    let _ = clean_map;

    save_gray16_png(
        &out,
        injected.image.width,
        injected.image.height,
        &defect_map,
        2.0,
    )
    .unwrap();
    println!("heatmap written to {}", out.display());
}
