//! 3x3 grid localization and six-attribute annotation validation.
//!
//! ```bash
//! cargo run --release -p cgmoe-ad --example annotate_masks
//! ```

use cgmoe_ad::dataset::grid::{connected_components, grid_location};
use cgmoe_ad::dataset::{validate_annotation, AnnotationRecord, LocationField};
use cgmoe_ad::imgio::MaskBuffer;

fn main() {
    // two defects: a large blob bottom-right, a small one top-left
    let mut mask = MaskBuffer::new(96, 96);
    for y in 70..88 {
        for x in 66..90 {
            mask.set(x, y, true);
        }
    }
    for y in 8..13 {
        for x in 6..11 {
            mask.set(x, y, true);
        }
    }

    let components = connected_components(&mask);
    println!("{} defect instances:", components.len());
    for c in &components {
        println!(
            "  {} px, centroid ({:.1}, {:.1})",
            c.size, c.centroid.0, c.centroid.1
        );
    }
    let locations = grid_location(&mask).unwrap();
    println!("grid locations (largest first): {locations:?}");

    // a complete record that agrees with the mask
    let good = AnnotationRecord {
        location: Some(LocationField::from_tokens(locations.clone())),
        color: Some("dark residue".into()),
        shape: Some("irregular blobs".into()),
        area_size: Some(format!("{} px", mask.count_positive())),
        quantity: Some(components.len() as u64),
        reason: Some("contamination".into()),
    };
    println!(
        "valid record -> {} violations",
        validate_annotation(&good, Some(&mask)).len()
    );

    // a sloppy record: missing reason, bad vocabulary, wrong location
    let bad = AnnotationRecord {
        location: Some(LocationField::One("centre-left".into())),
        color: Some("dark".into()),
        shape: Some("blob".into()),
        area_size: Some("big".into()),
        quantity: Some(2),
        reason: None,
    };
    println!("sloppy record:");
    for v in validate_annotation(&bad, Some(&mask)) {
        println!("  [{:?}] {}", v.severity, v.message);
    }
}
