//! Dataset standardization pipeline.
//!
//! Converts heterogeneous sources into the MVTec-style directory layout
//!
//! ```text
//! <root>/<category>/train/good/*
//! <root>/<category>/test/good/*
//! <root>/<category>/test/<defect_type>/*
//! <root>/<category>/ground_truth/<defect_type>/<stem>_mask.png
//! ```
//!
//! splits and balances samples with fixed caps, computes 3x3 grid location
//! descriptors from masks, and validates annotation records. The manifest
//! (JSON, schema-versioned) describes every emitted file with paths relative
//! to the dataset root.

pub mod annotate;
pub mod grid;
pub mod tile;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio;
use crate::rng::{derive_seed_str, rng_from};

pub use annotate::{
    annotate_locations, validate_annotation, AnnotationRecord, LocationField, Severity, Violation,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;

/// The five application domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    Electronics,
    Industry,
    Agrifood,
    Infrastructure,
    Medical,
}

impl Domain {
    pub const ALL: [Domain; 5] = [
        Domain::Electronics,
        Domain::Industry,
        Domain::Agrifood,
        Domain::Infrastructure,
        Domain::Medical,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "electronics" => Ok(Domain::Electronics),
            "industry" => Ok(Domain::Industry),
            "agrifood" => Ok(Domain::Agrifood),
            "infrastructure" => Ok(Domain::Infrastructure),
            "medical" => Ok(Domain::Medical),
            other => Err(Error::Config(format!("unknown domain {other:?}"))),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Domain::Electronics => "Electronics",
            Domain::Industry => "Industry",
            Domain::Agrifood => "Agrifood",
            Domain::Infrastructure => "Infrastructure",
            Domain::Medical => "Medical",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomalous,
}

pub const GOOD: &str = "good";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Image path relative to the dataset root.
    pub image: String,
    pub split: Split,
    pub label: Label,
    /// `"good"` for normal samples.
    pub defect_type: String,
    /// Mask path relative to the dataset root; anomalous samples only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub annotation: Option<AnnotationRecord>,
}

impl SampleRecord {
    pub fn stem(&self) -> String {
        Path::new(&self.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub name: String,
    pub domain: Domain,
    pub samples: Vec<SampleRecord>,
}

impl CategoryRecord {
    pub fn count(&self, split: Split, label: Label) -> usize {
        self.samples
            .iter()
            .filter(|s| s.split == split && s.label == label)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    /// Source dataset name.
    pub provenance: String,
    pub categories: Vec<CategoryRecord>,
}

impl DatasetManifest {
    pub fn new(provenance: impl Into<String>) -> Self {
        DatasetManifest {
            schema_version: SCHEMA_VERSION,
            provenance: provenance.into(),
            categories: Vec::new(),
        }
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let json = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&json)?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "manifest schema version {} is not supported (expected {SCHEMA_VERSION})",
                manifest.schema_version
            )));
        }
        Ok(manifest)
    }

    /// Structural invariant violations: duplicate category names, anomalous
    /// samples without masks, anomalous samples in the train split.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = HashSet::new();
        for cat in &self.categories {
            if !seen.insert(cat.name.clone()) {
                problems.push(format!("duplicate category name {:?}", cat.name));
            }
            for s in &cat.samples {
                if s.label == Label::Anomalous && s.mask.is_none() {
                    problems.push(format!(
                        "{}: anomalous sample {} has no mask",
                        cat.name, s.image
                    ));
                }
                if s.split == Split::Train && s.label == Label::Anomalous {
                    problems.push(format!(
                        "{}: anomalous sample {} sits in the train split",
                        cat.name, s.image
                    ));
                }
            }
        }
        problems
    }

    pub fn category(&self, name: &str) -> Option<&CategoryRecord> {
        self.categories.iter().find(|c| c.name == name)
    }
}

// ── layout helpers ──────────────────────────────────────────────────

/// Relative image path within the MVTec-style tree.
pub fn image_rel_path(category: &str, split: Split, defect_type: &str, file: &str) -> String {
    let split_dir = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    format!("{category}/{split_dir}/{defect_type}/{file}")
}

/// Relative mask path within the MVTec-style tree.
pub fn mask_rel_path(category: &str, defect_type: &str, stem: &str) -> String {
    format!("{category}/ground_truth/{defect_type}/{stem}_mask.png")
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

/// Writes an image under the layout and returns its manifest-relative path.
pub fn write_image(
    root: &Path,
    category: &str,
    split: Split,
    defect_type: &str,
    file: &str,
    image: &imgio::RgbBuffer,
) -> Result<String> {
    let rel = image_rel_path(category, split, defect_type, file);
    let path = root.join(&rel);
    ensure_parent(&path)?;
    imgio::save_rgb_png(&path, image)?;
    Ok(rel)
}

/// Writes a mask under the layout and returns its manifest-relative path.
pub fn write_mask(
    root: &Path,
    category: &str,
    defect_type: &str,
    stem: &str,
    mask: &imgio::MaskBuffer,
) -> Result<String> {
    let rel = mask_rel_path(category, defect_type, stem);
    let path = root.join(&rel);
    ensure_parent(&path)?;
    imgio::save_mask_png(&path, mask)?;
    Ok(rel)
}

// ── source scanning and conversion ──────────────────────────────────

/// How the converter should read a source directory.
#[derive(Debug, Clone)]
pub enum SourceLayout {
    /// Already MVTec-shaped: relayout is a byte-identical copy.
    MvtecTree,
    /// Flat folder with a sidecar CSV
    /// (`image,category,label,defect_type,mask[,split]`), paths relative to
    /// the source root.
    FlatCsv { csv: PathBuf },
}

#[derive(Debug, Clone)]
pub struct ConvertOptions {
    /// Recorded as manifest provenance and used to disambiguate duplicate
    /// category names (`<source>_<category>`) when `prefix_source` is set.
    pub source_name: String,
    pub default_domain: Domain,
    pub prefix_source: bool,
    /// Tile images larger than `tile_size` in both dimensions.
    pub tile_large: bool,
    pub tile_size: usize,
    pub min_defect_px: usize,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        ConvertOptions {
            source_name: "source".into(),
            default_domain: Domain::Industry,
            prefix_source: false,
            tile_large: false,
            tile_size: 256,
            min_defect_px: 10,
        }
    }
}

#[derive(Debug, Default)]
pub struct ConversionSummary {
    pub images_converted: usize,
    pub failures: Vec<(PathBuf, String)>,
}

struct SourceSample {
    image: PathBuf,
    category: String,
    split: Split,
    label: Label,
    defect_type: String,
    mask: Option<PathBuf>,
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    Ok(entries)
}

fn scan_mvtec(root: &Path) -> Result<Vec<SourceSample>> {
    let mut samples = Vec::new();
    for cat_dir in sorted_dir(root)? {
        if !cat_dir.is_dir() {
            continue;
        }
        let train = cat_dir.join("train");
        let test = cat_dir.join("test");
        if !train.is_dir() || !test.is_dir() {
            continue;
        }
        let category = cat_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let good_train = train.join(GOOD);
        if good_train.is_dir() {
            for img in sorted_dir(&good_train)? {
                if img.is_file() {
                    samples.push(SourceSample {
                        image: img,
                        category: category.clone(),
                        split: Split::Train,
                        label: Label::Normal,
                        defect_type: GOOD.into(),
                        mask: None,
                    });
                }
            }
        }
        for defect_dir in sorted_dir(&test)? {
            if !defect_dir.is_dir() {
                continue;
            }
            let defect = defect_dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            for img in sorted_dir(&defect_dir)? {
                if !img.is_file() {
                    continue;
                }
                if defect == GOOD {
                    samples.push(SourceSample {
                        image: img,
                        category: category.clone(),
                        split: Split::Test,
                        label: Label::Normal,
                        defect_type: GOOD.into(),
                        mask: None,
                    });
                } else {
                    let stem = img
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    let mask = cat_dir
                        .join("ground_truth")
                        .join(&defect)
                        .join(format!("{stem}_mask.png"));
                    samples.push(SourceSample {
                        image: img,
                        category: category.clone(),
                        split: Split::Test,
                        label: Label::Anomalous,
                        defect_type: defect.clone(),
                        mask: Some(mask),
                    });
                }
            }
        }
    }
    Ok(samples)
}

fn scan_flat_csv(root: &Path, csv: &Path) -> Result<Vec<SourceSample>> {
    let text = std::fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty CSV", csv.display())))?
        .split(',')
        .map(|s| s.trim().to_ascii_lowercase())
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (ci_image, ci_cat, ci_label) = match (col("image"), col("category"), col("label")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::Format(format!(
                "{}: CSV header must contain image, category, label",
                csv.display()
            )))
        }
    };
    let ci_defect = col("defect_type");
    let ci_mask = col("mask");
    let ci_split = col("split");

    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |i: usize| fields.get(i).copied().unwrap_or("");
        let label = match get(ci_label).to_ascii_lowercase().as_str() {
            "normal" | "good" => Label::Normal,
            "anomalous" | "anomaly" | "defect" => Label::Anomalous,
            other => {
                return Err(Error::Format(format!(
                    "{}:{}: unknown label {other:?}",
                    csv.display(),
                    lineno + 2
                )))
            }
        };
        let split = match ci_split.map(get).filter(|s| !s.is_empty()) {
            Some("train") => Split::Train,
            Some("test") => Split::Test,
            Some(other) => {
                return Err(Error::Format(format!(
                    "{}:{}: unknown split {other:?}",
                    csv.display(),
                    lineno + 2
                )))
            }
            // unsupervised contract: unlabeled normals train, anomalies test
            None => match label {
                Label::Normal => Split::Train,
                Label::Anomalous => Split::Test,
            },
        };
        let defect_type = match label {
            Label::Normal => GOOD.into(),
            Label::Anomalous => {
                let d = ci_defect.map(get).unwrap_or("");
                if d.is_empty() {
                    "defect".into()
                } else {
                    d.to_string()
                }
            }
        };
        let mask = ci_mask
            .map(get)
            .filter(|m| !m.is_empty())
            .map(|m| root.join(m));
        samples.push(SourceSample {
            image: root.join(get(ci_image)),
            category: get(ci_cat).to_string(),
            split,
            label,
            defect_type,
            mask,
        });
    }
    Ok(samples)
}

/// Converts a source dataset into the MVTec-style layout under `out_root`,
/// returning the manifest (also written to `<out_root>/manifest.json`) and a
/// per-file failure summary. Anomalous samples with missing or empty masks
/// are skipped and reported; conversion continues.
pub fn convert(
    source_root: &Path,
    layout: &SourceLayout,
    out_root: &Path,
    opts: &ConvertOptions,
) -> Result<(DatasetManifest, ConversionSummary)> {
    if !source_root.is_dir() {
        return Err(Error::Config(format!(
            "source root {} does not exist",
            source_root.display()
        )));
    }
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;

    let sources = match layout {
        SourceLayout::MvtecTree => scan_mvtec(source_root)?,
        SourceLayout::FlatCsv { csv } => scan_flat_csv(source_root, csv)?,
    };

    let mut summary = ConversionSummary::default();
    let mut categories: BTreeMap<String, CategoryRecord> = BTreeMap::new();

    for src in sources {
        let category = if opts.prefix_source {
            format!("{}_{}", opts.source_name, src.category)
        } else {
            src.category.clone()
        };
        let cat = categories
            .entry(category.clone())
            .or_insert_with(|| CategoryRecord {
                name: category.clone(),
                domain: opts.default_domain,
                samples: Vec::new(),
            });

        match convert_one(&src, &category, out_root, opts) {
            Ok(mut records) => {
                summary.images_converted += records.len();
                cat.samples.append(&mut records);
            }
            Err(reason) => summary.failures.push((src.image.clone(), reason)),
        }
    }

    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        provenance: opts.source_name.clone(),
        categories: categories
            .into_values()
            .filter(|c| !c.samples.is_empty())
            .collect(),
    };
    manifest.save(out_root)?;
    Ok((manifest, summary))
}

/// Converts one source sample; may fan out into several tile records.
fn convert_one(
    src: &SourceSample,
    category: &str,
    out_root: &Path,
    opts: &ConvertOptions,
) -> std::result::Result<Vec<SampleRecord>, String> {
    let file_name = src
        .image
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| "image path has no file name".to_string())?;
    let stem = src
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    // anomalous samples must carry a usable, nonempty mask
    let mask = match (src.label, &src.mask) {
        (Label::Anomalous, None) => return Err("anomalous sample has no mask".into()),
        (Label::Anomalous, Some(path)) => {
            let mask = imgio::load_mask(path).map_err(|e| e.to_string())?;
            if mask.is_empty_mask() {
                return Err("mask contains no anomalous pixels".into());
            }
            Some(mask)
        }
        (Label::Normal, _) => None,
    };

    let needs_tiling =
        |w: usize, h: usize| opts.tile_large && w > opts.tile_size && h > opts.tile_size;

    // fast path: copy bytes verbatim when no re-encoding is needed
    let (w, h) = image_dims(&src.image).map_err(|e| e.to_string())?;
    if !needs_tiling(w, h) {
        if let Some(mask) = &mask {
            if (mask.width, mask.height) != (w, h) {
                return Err(format!(
                    "mask is {}x{}, image is {w}x{h}",
                    mask.width, mask.height
                ));
            }
        }
        let rel = image_rel_path(category, src.split, &src.defect_type, &file_name);
        let dst = out_root.join(&rel);
        ensure_parent(&dst).map_err(|e| e.to_string())?;
        std::fs::copy(&src.image, &dst).map_err(|e| e.to_string())?;

        let mask_rel = if mask.is_some() {
            let rel = mask_rel_path(category, &src.defect_type, &stem);
            let dst = out_root.join(&rel);
            ensure_parent(&dst).map_err(|e| e.to_string())?;
            // masks are copied verbatim too; they were validated above
            std::fs::copy(src.mask.as_ref().unwrap(), &dst).map_err(|e| e.to_string())?;
            Some(rel)
        } else {
            None
        };
        return Ok(vec![SampleRecord {
            image: rel,
            split: src.split,
            label: src.label,
            defect_type: src.defect_type.clone(),
            mask: mask_rel,
            annotation: None,
        }]);
    }

    // tiling path: decode, cut, re-encode
    let image = imgio::load_rgb(&src.image).map_err(|e| e.to_string())?;
    let mask_ref = mask.as_ref();
    if let Some(m) = mask_ref {
        if (m.width, m.height) != (image.width, image.height) {
            return Err(format!(
                "mask is {}x{}, image is {}x{}",
                m.width, m.height, image.width, image.height
            ));
        }
    }
    let tiles = tile::tile(&image, mask_ref, opts.tile_size, opts.min_defect_px);
    let mut records = Vec::new();
    for t in tiles {
        let tile_name = format!("{stem}_r{}c{}.png", t.row, t.col);
        let tile_stem = format!("{stem}_r{}c{}", t.row, t.col);
        let (split, label, defect_type) = match t.label {
            tile::TileLabel::Normal => match src.label {
                // normal regions of an anomalous test image stay in test/good
                Label::Anomalous => (Split::Test, Label::Normal, GOOD.to_string()),
                Label::Normal => (src.split, Label::Normal, GOOD.to_string()),
            },
            tile::TileLabel::Anomalous => (Split::Test, Label::Anomalous, src.defect_type.clone()),
            tile::TileLabel::Discarded => continue,
        };
        let rel = write_image(
            out_root,
            category,
            split,
            &defect_type,
            &tile_name,
            &t.image,
        )
        .map_err(|e| e.to_string())?;
        let mask_rel = if label == Label::Anomalous {
            Some(
                write_mask(out_root, category, &defect_type, &tile_stem, &t.mask)
                    .map_err(|e| e.to_string())?,
            )
        } else {
            None
        };
        records.push(SampleRecord {
            image: rel,
            split,
            label,
            defect_type,
            mask: mask_rel,
            annotation: None,
        });
    }
    Ok(records)
}

/// Image dimensions without a full decode.
fn image_dims(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    Ok((w as usize, h as usize))
}

// ── splitting and balancing ─────────────────────────────────────────

fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = rng_from(seed, &[0x5471_1F]);
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Deterministic 9:1 split of normal-sample indices: `floor(0.9 n)` to train
/// with at least one sample on each side. Disjoint and exhaustive.
pub fn split_normals(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Contract(format!(
            "need at least 2 normal samples to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    seeded_shuffle(&mut order, seed);
    let train_count = ((0.9 * n as f64).floor() as usize).clamp(1, n - 1);
    let mut train: Vec<usize> = order[..train_count].to_vec();
    let mut test: Vec<usize> = order[train_count..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceCaps {
    pub train: usize,
    pub normal_test: usize,
    pub per_defect: usize,
}

impl Default for BalanceCaps {
    fn default() -> Self {
        BalanceCaps {
            train: 500,
            normal_test: 100,
            per_defect: 100,
        }
    }
}

/// Uniformly keeps at most `k` of `n` indices (seeded); under-cap sets pass
/// through unchanged. The kept set preserves original order.
fn subsample(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if n <= k {
        return order;
    }
    seeded_shuffle(&mut order, seed);
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    kept
}

/// Applies the per-category caps: train normals, normal test samples, and
/// each defect type are independently subsampled. Never increases a count;
/// idempotent for a fixed seed.
pub fn balance(category: &mut CategoryRecord, caps: &BalanceCaps, seed: u64) {
    let cat_seed = derive_seed_str(seed, &category.name);
    let mut keep: Vec<bool> = vec![true; category.samples.len()];

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in category.samples.iter().enumerate() {
        let key = match (s.split, s.label) {
            (Split::Train, _) => "train".to_string(),
            (Split::Test, Label::Normal) => "test_normal".to_string(),
            (Split::Test, Label::Anomalous) => format!("defect:{}", s.defect_type),
        };
        groups.entry(key).or_default().push(i);
    }
    for (key, members) in &groups {
        let cap = if key == "train" {
            caps.train
        } else if key == "test_normal" {
            caps.normal_test
        } else {
            caps.per_defect
        };
        let kept = subsample(members.len(), cap, derive_seed_str(cat_seed, key));
        let kept_set: HashSet<usize> = kept.into_iter().collect();
        for (pos, &i) in members.iter().enumerate() {
            if !kept_set.contains(&pos) {
                keep[i] = false;
            }
        }
    }
    let mut keep_iter = keep.into_iter();
    category.samples.retain(|_| keep_iter.next().unwrap());
}

/// Builds a manifest by scanning an existing MVTec-style tree in place (no
/// files are copied or validated beyond mask-path presence). Lets `stats`
/// run directly against trees that were not produced by `convert`.
pub fn manifest_from_tree(
    root: &Path,
    default_domain: Domain,
    provenance: &str,
) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Config(format!(
            "dataset root {} does not exist",
            root.display()
        )));
    }
    let sources = scan_mvtec(root)?;
    let mut categories: BTreeMap<String, CategoryRecord> = BTreeMap::new();
    for src in sources {
        let cat = categories
            .entry(src.category.clone())
            .or_insert_with(|| CategoryRecord {
                name: src.category.clone(),
                domain: default_domain,
                samples: Vec::new(),
            });
        let rel = |p: &Path| {
            p.strip_prefix(root)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        cat.samples.push(SampleRecord {
            image: rel(&src.image),
            split: src.split,
            label: src.label,
            defect_type: src.defect_type.clone(),
            mask: src.mask.as_deref().filter(|m| m.is_file()).map(rel),
            annotation: None,
        });
    }
    Ok(DatasetManifest {
        schema_version: SCHEMA_VERSION,
        provenance: provenance.to_string(),
        categories: categories
            .into_values()
            .filter(|c| !c.samples.is_empty())
            .collect(),
    })
}

/// Protocol filter over a manifest: restricts which domains contribute
/// training data (cross-domain transfer), which domains are evaluated, and
/// how many training images each category keeps (few-shot). Categories left
/// without samples disappear.
pub fn filter_manifest(
    manifest: &DatasetManifest,
    train_domains: Option<&[Domain]>,
    eval_domains: Option<&[Domain]>,
    shots: Option<usize>,
    seed: u64,
) -> DatasetManifest {
    let mut out = manifest.clone();
    for cat in &mut out.categories {
        if let Some(domains) = train_domains {
            if !domains.contains(&cat.domain) {
                cat.samples.retain(|s| s.split != Split::Train);
            }
        }
        if let Some(domains) = eval_domains {
            if !domains.contains(&cat.domain) {
                cat.samples.retain(|s| s.split != Split::Test);
            }
        }
        if let Some(k) = shots {
            if k > 0 {
                let train_positions: Vec<usize> = cat
                    .samples
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.split == Split::Train)
                    .map(|(i, _)| i)
                    .collect();
                let kept = subsample(
                    train_positions.len(),
                    k,
                    derive_seed_str(seed, &format!("shots:{}", cat.name)),
                );
                let kept_set: HashSet<usize> =
                    kept.into_iter().map(|pos| train_positions[pos]).collect();
                let mut idx = 0;
                cat.samples.retain(|s| {
                    let keep = s.split != Split::Train || kept_set.contains(&idx);
                    idx += 1;
                    keep
                });
            }
        }
    }
    out.categories.retain(|c| !c.samples.is_empty());
    out
}

#[derive(Debug, Default, Serialize)]
pub struct SplitBalanceSummary {
    pub moved: usize,
    pub deleted: usize,
    pub warnings: Vec<String>,
}

/// Re-splits each category's normal samples 9:1 and applies the balancing
/// caps, materializing the result on disk: normals are renumbered into their
/// destination folders and samples dropped by the caps are deleted from the
/// tree. Operates on a converted dataset root (a derived artifact), never on
/// source data. The manifest is rewritten to match.
pub fn apply_split_balance(
    root: &Path,
    manifest: &mut DatasetManifest,
    caps: &BalanceCaps,
    seed: u64,
) -> Result<SplitBalanceSummary> {
    let mut summary = SplitBalanceSummary::default();
    let staging = root.join(".split_staging");
    std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;

    for cat in &mut manifest.categories {
        // pair every record with its planned replacement
        let mut working: Vec<(SampleRecord, SampleRecord)> =
            cat.samples.iter().map(|s| (s.clone(), s.clone())).collect();

        // deterministic ordering of the normals, then a 9:1 split
        let mut normal_positions: Vec<usize> = working
            .iter()
            .enumerate()
            .filter(|(_, (old, _))| old.label == Label::Normal)
            .map(|(i, _)| i)
            .collect();
        normal_positions.sort_by(|&a, &b| working[a].0.image.cmp(&working[b].0.image));
        if normal_positions.len() < 2 {
            summary.warnings.push(format!(
                "{}: fewer than 2 normal samples, split skipped",
                cat.name
            ));
        } else {
            let (train_idx, test_idx) =
                split_normals(normal_positions.len(), derive_seed_str(seed, &cat.name))?;
            for (counter, &pos) in train_idx.iter().enumerate() {
                let record = &mut working[normal_positions[pos]].1;
                record.split = Split::Train;
                record.image =
                    image_rel_path(&cat.name, Split::Train, GOOD, &format!("{counter:04}.png"));
            }
            for (counter, &pos) in test_idx.iter().enumerate() {
                let record = &mut working[normal_positions[pos]].1;
                record.split = Split::Test;
                record.image =
                    image_rel_path(&cat.name, Split::Test, GOOD, &format!("{counter:04}.png"));
            }
        }

        // balance on the planned records, then map survivors back
        let mut planned = CategoryRecord {
            name: cat.name.clone(),
            domain: cat.domain,
            samples: working.iter().map(|(_, new)| new.clone()).collect(),
        };
        balance(&mut planned, caps, seed);
        let survivor_images: HashSet<String> =
            planned.samples.iter().map(|s| s.image.clone()).collect();

        // move surviving files through staging; delete the rest
        let mut moves: Vec<(PathBuf, PathBuf)> = Vec::new();
        for (old, new) in &working {
            if survivor_images.contains(&new.image) {
                if old.image != new.image {
                    moves.push((root.join(&old.image), root.join(&new.image)));
                }
            } else {
                for rel in std::iter::once(&old.image).chain(old.mask.iter()) {
                    let path = root.join(rel);
                    if path.exists() {
                        std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                        summary.deleted += 1;
                    }
                }
            }
        }
        for (i, (from, _)) in moves.iter().enumerate() {
            let stage = staging.join(format!("{}_{i}", cat.name));
            std::fs::rename(from, &stage).map_err(|e| Error::io(from, e))?;
        }
        for (i, (_, to)) in moves.iter().enumerate() {
            let stage = staging.join(format!("{}_{i}", cat.name));
            ensure_parent(to)?;
            std::fs::rename(&stage, to).map_err(|e| Error::io(to, e))?;
            summary.moved += 1;
        }
        cat.samples = planned.samples;
    }

    let _ = std::fs::remove_dir(&staging);
    manifest.save(root)?;
    Ok(summary)
}

// ── statistics ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Default, Serialize)]
pub struct CountBlock {
    pub images: usize,
    pub train: usize,
    pub test: usize,
    pub test_normal: usize,
    pub test_anomalous: usize,
}

impl CountBlock {
    fn add(&mut self, s: &SampleRecord) {
        self.images += 1;
        match s.split {
            Split::Train => self.train += 1,
            Split::Test => {
                self.test += 1;
                match s.label {
                    Label::Normal => self.test_normal += 1,
                    Label::Anomalous => self.test_anomalous += 1,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CategoryStats {
    pub name: String,
    pub domain: String,
    #[serde(flatten)]
    pub counts: CountBlock,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub totals: CountBlock,
    pub categories_total: usize,
    pub per_domain: BTreeMap<String, CountBlock>,
    pub per_domain_categories: BTreeMap<String, usize>,
    pub per_category: Vec<CategoryStats>,
    /// Histogram over fine-grained defect types (normal samples excluded).
    pub defect_types: BTreeMap<String, usize>,
}

/// Counts the quantities the manifest can answer for itself: totals,
/// per-domain and per-category breakdowns, and the defect-type histogram.
pub fn stats(manifest: &DatasetManifest) -> StatsReport {
    let mut totals = CountBlock::default();
    let mut per_domain: BTreeMap<String, CountBlock> = BTreeMap::new();
    let mut per_domain_categories: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_category = Vec::new();
    let mut defect_types: BTreeMap<String, usize> = BTreeMap::new();

    for cat in &manifest.categories {
        let mut block = CountBlock::default();
        for s in &cat.samples {
            totals.add(s);
            block.add(s);
            per_domain.entry(cat.domain.to_string()).or_default().add(s);
            if s.label == Label::Anomalous {
                *defect_types.entry(s.defect_type.clone()).or_default() += 1;
            }
        }
        *per_domain_categories
            .entry(cat.domain.to_string())
            .or_default() += 1;
        per_category.push(CategoryStats {
            name: cat.name.clone(),
            domain: cat.domain.to_string(),
            counts: block,
        });
    }

    StatsReport {
        totals,
        categories_total: manifest.categories.len(),
        per_domain,
        per_domain_categories,
        per_category,
        defect_types,
    }
}

impl StatsReport {
    /// Aligned text rendering of the stats.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let line = |o: &mut String, name: &str, c: &CountBlock| {
            o.push_str(&format!(
                "{name:<28} {:>8} {:>8} {:>8} {:>8} {:>10}\n",
                c.images, c.train, c.test, c.test_normal, c.test_anomalous
            ));
        };
        out.push_str(&format!(
            "{:<28} {:>8} {:>8} {:>8} {:>8} {:>10}\n",
            "", "images", "train", "test", "test-ok", "anomalous"
        ));
        for cat in &self.per_category {
            line(&mut out, &cat.name, &cat.counts);
        }
        for (domain, counts) in &self.per_domain {
            line(&mut out, &format!("[{domain}]"), counts);
        }
        line(&mut out, "TOTAL", &self.totals);
        out.push_str(&format!(
            "categories: {}   defect types: {}\n",
            self.categories_total,
            self.defect_types.len()
        ));
        out
    }
}
