//! The standardization pipeline end to end on a toy flat-folder source:
//! convert into the MVTec-style layout, re-split normals 9:1, apply the
//! balancing caps, and print statistics.
//!
//! ```bash
//! cargo run --release -p cgmoe-ad --example dataset_pipeline
//! ```

use cgmoe_ad::dataset::{
    apply_split_balance, convert, stats, BalanceCaps, ConvertOptions, DatasetManifest, SourceLayout,
};
use cgmoe_ad::imgio::{save_mask_png, save_rgb_png, MaskBuffer, RgbBuffer};

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let source = work.path().join("source");
    let dataset = work.path().join("dataset");
    std::fs::create_dir_all(source.join("imgs")).unwrap();

    // a flat folder with a sidecar label CSV: 30 normals, 4 anomalies
    let mut csv = String::from("image,category,label,defect_type,mask\n");
    for i in 0..30 {
        let name = format!("imgs/normal_{i:02}.png");
        let mut img = RgbBuffer::new(32, 32);
        for (pi, px) in img.pixels.iter_mut().enumerate() {
            *px = ((pi + i * 7) % 200) as u8;
        }
        save_rgb_png(&source.join(&name), &img).unwrap();
        csv.push_str(&format!("{name},gizmo,normal,,\n"));
    }
    for i in 0..4 {
        let name = format!("imgs/broken_{i}.png");
        let mask_name = format!("imgs/broken_{i}_mask.png");
        let mut img = RgbBuffer::new(32, 32);
        let mut mask = MaskBuffer::new(32, 32);
        for y in 10..14 {
            for x in (8 + i)..(16 + i) {
                img.set(x, y, [250, 40, 40]);
                mask.set(x, y, true);
            }
        }
        save_rgb_png(&source.join(&name), &img).unwrap();
        save_mask_png(&source.join(&mask_name), &mask).unwrap();
        csv.push_str(&format!("{name},gizmo,anomalous,crack,{mask_name}\n"));
    }
    std::fs::write(source.join("labels.csv"), &csv).unwrap();

    let layout = SourceLayout::FlatCsv {
        csv: source.join("labels.csv"),
    };
    let opts = ConvertOptions {
        source_name: "toy".into(),
        ..ConvertOptions::default()
    };
    let (manifest, summary) = convert(&source, &layout, &dataset, &opts).unwrap();
    println!(
        "converted {} images ({} failures)",
        summary.images_converted,
        summary.failures.len()
    );
    println!("before split-balance:\n{}", stats(&manifest).to_text());

    let mut manifest = DatasetManifest::load(&dataset).unwrap();
    let caps = BalanceCaps {
        train: 20, // tiny cap so the effect is visible
        normal_test: 100,
        per_defect: 100,
    };
    let sb = apply_split_balance(&dataset, &mut manifest, &caps, 7).unwrap();
    println!(
        "split-balance moved {} files, deleted {}",
        sb.moved, sb.deleted
    );
    println!("after split-balance:\n{}", stats(&manifest).to_text());
}
