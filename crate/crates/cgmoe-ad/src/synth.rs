//! Deterministic synthetic anomaly benchmarks.
//!
//! Generates a multi-category MVTec-style dataset from procedural textures
//! (stripes, checker, noise field, gradient) with three defect families:
//! scratch polylines, spot blobs and missing patches. Masks mark exactly the
//! pixels a defect changed. One category pair shares a spot pattern with
//! swapped roles — spots are part of normality in one category and a defect
//! in the other — so context-dependent anomaly handling is exercisable at
//! desk scale.
//!
//! Everything derives from the configured seed through per-sample streams,
//! so a given [`SynthSpec`] always produces a bit-identical tree.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    self, AnnotationRecord, CategoryRecord, DatasetManifest, Domain, Label, LocationField,
    SampleRecord, Split, GOOD,
};
use crate::error::{Error, Result};
use crate::imgio::{MaskBuffer, RgbBuffer};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternRecipe {
    Stripes { period: usize, vertical: bool },
    Checker { cell: usize },
    NoiseField { scale: usize },
    Gradient { vertical: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub primary: [u8; 3],
    pub secondary: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotParams {
    pub count_min: usize,
    pub count_max: usize,
    pub radius_min: usize,
    pub radius_max: usize,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectRecipe {
    Scratch {
        width: usize,
        segments: usize,
        color: [u8; 3],
    },
    Spots(SpotParams),
    MissingPatch {
        min_frac: f64,
        max_frac: f64,
        fill: [u8; 3],
    },
}

impl DefectRecipe {
    pub fn dir_name(&self) -> &'static str {
        match self {
            DefectRecipe::Scratch { .. } => "scratch",
            DefectRecipe::Spots(_) => "spots",
            DefectRecipe::MissingPatch { .. } => "missing",
        }
    }

    fn shape_text(&self) -> &'static str {
        match self {
            DefectRecipe::Scratch { .. } => "thin linear streak",
            DefectRecipe::Spots(_) => "round blobs",
            DefectRecipe::MissingPatch { .. } => "rectangular patch",
        }
    }

    fn reason_text(&self) -> &'static str {
        match self {
            DefectRecipe::Scratch { .. } => "surface scratch",
            DefectRecipe::Spots(_) => "contamination",
            DefectRecipe::MissingPatch { .. } => "missing material",
        }
    }

    fn color_text(&self) -> String {
        let c = match self {
            DefectRecipe::Scratch { color, .. } => color,
            DefectRecipe::Spots(p) => &p.color,
            DefectRecipe::MissingPatch { fill, .. } => fill,
        };
        format!("rgb({},{},{})", c[0], c[1], c[2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    pub domain: Domain,
    pub pattern: PatternRecipe,
    pub palette: Palette,
    /// Spot pattern drawn as part of every normal image (the context-pair
    /// mechanism).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub normal_overlay: Option<SpotParams>,
    pub defects: Vec<DefectRecipe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub image_size: usize,
    pub train_normals: usize,
    pub test_normals: usize,
    pub test_anomalies_per_defect: usize,
    pub seed: u64,
    /// Names of the two categories sharing one pattern with swapped
    /// normal/defect roles.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub context_pair: Option<(String, String)>,
    pub categories: Vec<CategorySpec>,
}

impl SynthSpec {
    /// The desk-scale eight-category benchmark, including the
    /// mint-tablet/plain-pill context pair: identical spots are normal on the
    /// tablet and contamination on the pill.
    pub fn desk_default(seed: u64) -> Self {
        let spots = SpotParams {
            count_min: 4,
            count_max: 7,
            radius_min: 2,
            radius_max: 4,
            color: [52, 94, 60],
        };
        let scratch = |color: [u8; 3]| DefectRecipe::Scratch {
            width: 2,
            segments: 3,
            color,
        };
        let missing = DefectRecipe::MissingPatch {
            min_frac: 0.15,
            max_frac: 0.3,
            fill: [12, 12, 12],
        };
        SynthSpec {
            image_size: 64,
            train_normals: 50,
            test_normals: 10,
            test_anomalies_per_defect: 10,
            seed,
            context_pair: Some(("mint_tablet".into(), "plain_pill".into())),
            categories: vec![
                CategorySpec {
                    name: "steel_stripes".into(),
                    domain: Domain::Industry,
                    pattern: PatternRecipe::Stripes {
                        period: 12,
                        vertical: false,
                    },
                    palette: Palette {
                        primary: [96, 112, 136],
                        secondary: [140, 156, 176],
                    },
                    normal_overlay: None,
                    defects: vec![scratch([230, 230, 240]), missing.clone()],
                },
                CategorySpec {
                    name: "fabric_checker".into(),
                    domain: Domain::Industry,
                    pattern: PatternRecipe::Checker { cell: 8 },
                    palette: Palette {
                        primary: [188, 120, 52],
                        secondary: [224, 176, 120],
                    },
                    normal_overlay: None,
                    defects: vec![
                        scratch([40, 24, 16]),
                        DefectRecipe::Spots(SpotParams {
                            count_min: 3,
                            count_max: 6,
                            radius_min: 2,
                            radius_max: 4,
                            color: [30, 40, 120],
                        }),
                    ],
                },
                CategorySpec {
                    name: "leather_noise".into(),
                    domain: Domain::Industry,
                    pattern: PatternRecipe::NoiseField { scale: 8 },
                    palette: Palette {
                        primary: [92, 60, 40],
                        secondary: [136, 96, 64],
                    },
                    normal_overlay: None,
                    defects: vec![scratch([220, 200, 180]), missing.clone()],
                },
                CategorySpec {
                    name: "panel_gradient".into(),
                    domain: Domain::Electronics,
                    pattern: PatternRecipe::Gradient { vertical: true },
                    palette: Palette {
                        primary: [24, 96, 108],
                        secondary: [96, 192, 200],
                    },
                    normal_overlay: None,
                    defects: vec![
                        scratch([240, 240, 240]),
                        DefectRecipe::Spots(SpotParams {
                            count_min: 3,
                            count_max: 6,
                            radius_min: 2,
                            radius_max: 3,
                            color: [200, 60, 40],
                        }),
                    ],
                },
                CategorySpec {
                    name: "pcb_checker".into(),
                    domain: Domain::Electronics,
                    pattern: PatternRecipe::Checker { cell: 4 },
                    palette: Palette {
                        primary: [20, 92, 44],
                        secondary: [44, 136, 72],
                    },
                    normal_overlay: None,
                    defects: vec![
                        missing.clone(),
                        DefectRecipe::Spots(SpotParams {
                            count_min: 3,
                            count_max: 5,
                            radius_min: 2,
                            radius_max: 4,
                            color: [184, 116, 52],
                        }),
                    ],
                },
                CategorySpec {
                    name: "road_noise".into(),
                    domain: Domain::Infrastructure,
                    pattern: PatternRecipe::NoiseField { scale: 16 },
                    palette: Palette {
                        primary: [84, 84, 88],
                        secondary: [120, 120, 124],
                    },
                    normal_overlay: None,
                    defects: vec![scratch([24, 24, 28]), missing.clone()],
                },
                CategorySpec {
                    name: "mint_tablet".into(),
                    domain: Domain::Agrifood,
                    pattern: PatternRecipe::NoiseField { scale: 32 },
                    palette: Palette {
                        primary: [196, 228, 200],
                        secondary: [216, 240, 216],
                    },
                    normal_overlay: Some(spots.clone()),
                    defects: vec![scratch([96, 40, 40])],
                },
                CategorySpec {
                    name: "plain_pill".into(),
                    domain: Domain::Medical,
                    pattern: PatternRecipe::NoiseField { scale: 32 },
                    palette: Palette {
                        primary: [232, 214, 220],
                        secondary: [244, 232, 236],
                    },
                    normal_overlay: None,
                    // the context defect: the tablet's normal spots
                    defects: vec![DefectRecipe::Spots(spots), missing],
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Config("image_size must be at least 16".into()));
        }
        if self.categories.is_empty() {
            return Err(Error::Config("spec needs at least one category".into()));
        }
        if self.train_normals == 0 || self.test_normals == 0 {
            return Err(Error::Config(
                "normal sample counts must be positive".into(),
            ));
        }
        for cat in &self.categories {
            for defect in &cat.defects {
                match defect {
                    DefectRecipe::Scratch {
                        width, segments, ..
                    } => {
                        if *width == 0 || *segments == 0 {
                            return Err(Error::Config(format!(
                                "{}: zero-strength scratch recipe (defect must alter pixels)",
                                cat.name
                            )));
                        }
                    }
                    DefectRecipe::Spots(p) => {
                        if p.count_max == 0 || p.radius_max == 0 || p.count_min > p.count_max {
                            return Err(Error::Config(format!(
                                "{}: zero-strength spot recipe (defect must alter pixels)",
                                cat.name
                            )));
                        }
                    }
                    DefectRecipe::MissingPatch {
                        min_frac, max_frac, ..
                    } => {
                        if *min_frac <= 0.0 || max_frac < min_frac || *max_frac > 0.9 {
                            return Err(Error::Config(format!(
                                "{}: missing-patch fractions out of range",
                                cat.name
                            )));
                        }
                    }
                }
            }
        }
        if let Some((a, b)) = &self.context_pair {
            for name in [a, b] {
                if !self.categories.iter().any(|c| &c.name == name) {
                    return Err(Error::Config(format!(
                        "context pair references unknown category {name:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&json)?)
    }
}

// ── texture rendering ───────────────────────────────────────────────

fn blend(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (f64::from(a[c]) + (f64::from(b[c]) - f64::from(a[c])) * t).round() as u8;
    }
    out
}

/// Renders one normal image for a category (base pattern, per-pixel jitter,
/// optional normal spot overlay).
pub fn render_normal(spec: &SynthSpec, cat: &CategorySpec, rng: &mut ChaCha8Rng) -> RgbBuffer {
    let s = spec.image_size;
    let mut img = RgbBuffer::new(s, s);
    let pal = cat.palette;
    match &cat.pattern {
        PatternRecipe::Stripes { period, vertical } => {
            let period = (*period).max(2);
            let phase = rng.random_range(0..period);
            for y in 0..s {
                for x in 0..s {
                    let coord = if *vertical { x } else { y };
                    let on = ((coord + phase) / (period / 2).max(1)) % 2 == 0;
                    img.set(x, y, if on { pal.primary } else { pal.secondary });
                }
            }
        }
        PatternRecipe::Checker { cell } => {
            let cell = (*cell).max(2);
            let px = rng.random_range(0..cell);
            let py = rng.random_range(0..cell);
            for y in 0..s {
                for x in 0..s {
                    let on = (((x + px) / cell) + ((y + py) / cell)) % 2 == 0;
                    img.set(x, y, if on { pal.primary } else { pal.secondary });
                }
            }
        }
        PatternRecipe::NoiseField { scale } => {
            let scale = (*scale).max(2).min(s);
            let gw = s.div_ceil(scale) + 1;
            let field: Vec<f64> = (0..gw * gw).map(|_| rng.random::<f64>()).collect();
            for y in 0..s {
                for x in 0..s {
                    let fx = x as f64 / scale as f64;
                    let fy = y as f64 / scale as f64;
                    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
                    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
                    let v00 = field[y0 * gw + x0];
                    let v01 = field[y0 * gw + x0 + 1];
                    let v10 = field[(y0 + 1) * gw + x0];
                    let v11 = field[(y0 + 1) * gw + x0 + 1];
                    let v = v00 * (1.0 - tx) * (1.0 - ty)
                        + v01 * tx * (1.0 - ty)
                        + v10 * (1.0 - tx) * ty
                        + v11 * tx * ty;
                    img.set(x, y, blend(pal.primary, pal.secondary, v));
                }
            }
        }
        PatternRecipe::Gradient { vertical } => {
            let flip = rng.random::<bool>();
            for y in 0..s {
                for x in 0..s {
                    let coord = if *vertical { y } else { x };
                    let mut t = coord as f64 / (s - 1) as f64;
                    if flip {
                        t = 1.0 - t;
                    }
                    img.set(x, y, blend(pal.primary, pal.secondary, t));
                }
            }
        }
    }
    // subtle per-pixel jitter so images within a category vary
    for px in img.pixels.iter_mut() {
        let j: i16 = rng.random_range(-4..=4);
        *px = (i16::from(*px) + j).clamp(0, 255) as u8;
    }
    if let Some(overlay) = &cat.normal_overlay {
        draw_spots(&mut img, None, overlay, rng);
    }
    img
}

/// Paints a pixel, nudging the color when it would not change the image
/// (defect pixels must differ from the clean base).
fn paint(img: &mut RgbBuffer, x: usize, y: usize, color: [u8; 3]) {
    let current = img.get(x, y);
    let mut c = color;
    if current == c {
        c[0] ^= 0x10;
    }
    img.set(x, y, c);
}

/// Shared spot painter: identical code path whether spots are part of
/// normality (overlay) or injected as a defect, so the pattern's pixel
/// statistics cannot differ between the two roles.
fn draw_spots(
    img: &mut RgbBuffer,
    mut mask: Option<&mut MaskBuffer>,
    params: &SpotParams,
    rng: &mut ChaCha8Rng,
) -> usize {
    let s = img.width;
    let count = rng.random_range(params.count_min..=params.count_max).max(1);
    for _ in 0..count {
        let r = rng
            .random_range(params.radius_min..=params.radius_max)
            .max(1);
        let cx = rng.random_range(r..s - r);
        let cy = rng.random_range(r..s - r);
        for y in cy.saturating_sub(r)..=(cy + r).min(s - 1) {
            for x in cx.saturating_sub(r)..=(cx + r).min(s - 1) {
                let dx = x as isize - cx as isize;
                let dy = y as isize - cy as isize;
                if dx * dx + dy * dy <= (r * r) as isize {
                    paint(img, x, y, params.color);
                    if let Some(m) = mask.as_deref_mut() {
                        m.set(x, y, true);
                    }
                }
            }
        }
    }
    count
}

/// Bresenham line pixels.
fn line_pixels(x0: isize, y0: isize, x1: isize, y1: isize) -> Vec<(isize, isize)> {
    let mut out = Vec::new();
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        out.push((x, y));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Scratch path as pixel steps: a jittered polyline marching in one overall
/// direction (no backtracking, so stamped width-2 strokes cover between 2 and
/// 4 pixels per step). Returns the step pixels.
pub(crate) fn scratch_path(
    size: usize,
    segments: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(isize, isize)> {
    let s = size as f64;
    let margin = 4.0;
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let mut x = rng.random_range(s * 0.25..s * 0.75);
    let mut y = rng.random_range(s * 0.25..s * 0.75);
    let mut path: Vec<(isize, isize)> = Vec::new();
    for _ in 0..segments.max(1) {
        let jitter = rng.random_range(-0.5..0.5);
        let angle = heading + jitter;
        let len = rng.random_range(s * 0.12..s * 0.22);
        let nx = (x + angle.cos() * len).clamp(margin, s - margin);
        let ny = (y + angle.sin() * len).clamp(margin, s - margin);
        let seg = line_pixels(x as isize, y as isize, nx as isize, ny as isize);
        let skip = usize::from(!path.is_empty()); // shared joint pixel
        path.extend(seg.into_iter().skip(skip));
        x = nx;
        y = ny;
    }
    path
}

/// One injected defect with its exact change mask.
#[derive(Debug, Clone)]
pub struct InjectedDefect {
    pub image: RgbBuffer,
    pub mask: MaskBuffer,
    /// Defect marks drawn (spot count, or 1).
    pub instances: usize,
    /// Scratch path length in steps (0 for other recipes).
    pub trace_len: usize,
}

/// Applies a defect recipe. The returned mask marks exactly the pixels that
/// differ from the input image; a recipe that changes nothing is rejected.
pub fn inject_defect(
    image: &RgbBuffer,
    recipe: &DefectRecipe,
    rng: &mut ChaCha8Rng,
) -> Result<InjectedDefect> {
    let clean = image.clone();
    let mut img = image.clone();
    let (instances, trace_len) = match recipe {
        DefectRecipe::Scratch {
            width,
            segments,
            color,
        } => {
            if *width == 0 || *segments == 0 {
                return Err(Error::Contract(
                    "zero-strength scratch recipe rejected: defect must alter pixels".into(),
                ));
            }
            let path = scratch_path(img.width, *segments, rng);
            let trace_len = path.len();
            for &(px, py) in &path {
                for oy in 0..*width {
                    for ox in 0..*width {
                        let x = px + ox as isize;
                        let y = py + oy as isize;
                        if x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height
                        {
                            paint(&mut img, x as usize, y as usize, *color);
                        }
                    }
                }
            }
            (1, trace_len)
        }
        DefectRecipe::Spots(params) => {
            if params.count_max == 0 || params.radius_max == 0 {
                return Err(Error::Contract(
                    "zero-strength spot recipe rejected: defect must alter pixels".into(),
                ));
            }
            let count = draw_spots(&mut img, None, params, rng);
            (count, 0)
        }
        DefectRecipe::MissingPatch {
            min_frac,
            max_frac,
            fill,
        } => {
            if *max_frac <= 0.0 || max_frac < min_frac {
                return Err(Error::Contract(
                    "zero-strength patch recipe rejected: defect must alter pixels".into(),
                ));
            }
            let s = img.width;
            let wf = rng.random_range(*min_frac..=*max_frac);
            let hf = rng.random_range(*min_frac..=*max_frac);
            let pw = ((s as f64 * wf) as usize).max(2);
            let ph = ((s as f64 * hf) as usize).max(2);
            let x0 = rng.random_range(0..s - pw);
            let y0 = rng.random_range(0..s - ph);
            for y in y0..y0 + ph {
                for x in x0..x0 + pw {
                    paint(&mut img, x, y, *fill);
                }
            }
            (1, 0)
        }
    };

    // the mask is the exact pixel diff by construction
    let mut mask = MaskBuffer::new(img.width, img.height);
    for i in 0..mask.pixels.len() {
        mask.pixels[i] = img.pixels[i * 3..i * 3 + 3] != clean.pixels[i * 3..i * 3 + 3];
    }
    if mask.is_empty_mask() {
        return Err(Error::Contract(
            "defect recipe altered no pixels; rejected".into(),
        ));
    }
    Ok(InjectedDefect {
        image: img,
        mask,
        instances,
        trace_len,
    })
}

// ── generation ──────────────────────────────────────────────────────

fn sample_rng(
    spec: &SynthSpec,
    cat_idx: usize,
    role: u64,
    defect_idx: usize,
    i: usize,
) -> ChaCha8Rng {
    rng_from(
        spec.seed,
        &[cat_idx as u64, role, defect_idx as u64, i as u64],
    )
}

const ROLE_TRAIN: u64 = 1;
const ROLE_TEST_NORMAL: u64 = 2;
const ROLE_ANOMALY_BASE: u64 = 3;
const ROLE_ANOMALY_DEFECT: u64 = 4;

/// Generates the full benchmark tree under `out_root` and writes the
/// manifest plus the serialized spec alongside it.
pub fn generate(spec: &SynthSpec, out_root: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;

    let mut manifest = DatasetManifest::new("synthetic");
    for (ci, cat) in spec.categories.iter().enumerate() {
        let mut samples = Vec::new();
        for i in 0..spec.train_normals {
            let mut rng = sample_rng(spec, ci, ROLE_TRAIN, 0, i);
            let img = render_normal(spec, cat, &mut rng);
            let rel = dataset::write_image(
                out_root,
                &cat.name,
                Split::Train,
                GOOD,
                &format!("{i:03}.png"),
                &img,
            )?;
            samples.push(SampleRecord {
                image: rel,
                split: Split::Train,
                label: Label::Normal,
                defect_type: GOOD.into(),
                mask: None,
                annotation: None,
            });
        }
        for i in 0..spec.test_normals {
            let mut rng = sample_rng(spec, ci, ROLE_TEST_NORMAL, 0, i);
            let img = render_normal(spec, cat, &mut rng);
            let rel = dataset::write_image(
                out_root,
                &cat.name,
                Split::Test,
                GOOD,
                &format!("{i:03}.png"),
                &img,
            )?;
            samples.push(SampleRecord {
                image: rel,
                split: Split::Test,
                label: Label::Normal,
                defect_type: GOOD.into(),
                mask: None,
                annotation: None,
            });
        }
        for (di, defect) in cat.defects.iter().enumerate() {
            for i in 0..spec.test_anomalies_per_defect {
                let mut base_rng = sample_rng(spec, ci, ROLE_ANOMALY_BASE, di, i);
                let base = render_normal(spec, cat, &mut base_rng);
                let mut defect_rng = sample_rng(spec, ci, ROLE_ANOMALY_DEFECT, di, i);
                let injected = inject_defect(&base, defect, &mut defect_rng)?;

                let file = format!("{i:03}.png");
                let stem = format!("{i:03}");
                let rel = dataset::write_image(
                    out_root,
                    &cat.name,
                    Split::Test,
                    defect.dir_name(),
                    &file,
                    &injected.image,
                )?;
                let mask_rel = dataset::write_mask(
                    out_root,
                    &cat.name,
                    defect.dir_name(),
                    &stem,
                    &injected.mask,
                )?;

                let location = crate::dataset::grid::grid_location(&injected.mask)
                    .map(LocationField::from_tokens)
                    .ok();
                samples.push(SampleRecord {
                    image: rel,
                    split: Split::Test,
                    label: Label::Anomalous,
                    defect_type: defect.dir_name().into(),
                    mask: Some(mask_rel),
                    annotation: Some(AnnotationRecord {
                        location,
                        color: Some(defect.color_text()),
                        shape: Some(defect.shape_text().into()),
                        area_size: Some(format!("{} px", injected.mask.count_positive())),
                        quantity: Some(injected.instances as u64),
                        reason: Some(defect.reason_text().into()),
                    }),
                });
            }
        }
        manifest.categories.push(CategoryRecord {
            name: cat.name.clone(),
            domain: cat.domain,
            samples,
        });
    }

    manifest.save(out_root)?;
    spec.save(&out_root.join("synth_spec.json"))?;
    Ok(manifest)
}
