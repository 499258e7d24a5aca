//! Exact ranking metrics and dataset-wide evaluation.
//!
//! AUROC is the Mann-Whitney statistic `P(score+ > score-) + P(tie)/2`,
//! computed through average ranks in one sort. Average precision sweeps the
//! descending scores with ties processed as one block. Both are exact — no
//! curve interpolation — and invariant under strictly increasing score
//! transforms.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dataset::{DatasetManifest, Label};
use crate::error::{Error, Result};
use crate::imgio::{self, RgbBuffer};
use crate::model::{ImageInput, ModelBundle};
use crate::scoring::{score_image, ScoringConfig};
use crate::tensor::Scalar;

/// Area under the ROC curve with exact tie handling.
///
/// Requires both classes; a single-class input is an undefined metric and is
/// reported as an error rather than silently mapped to 0.5.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len(), "auroc: length mismatch");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes (got {n_pos} positive, {n_neg} negative)"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // average ranks over tie blocks, 1-based
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Average precision over the descending-score sweep, ties as one block:
/// `AP = sum_i (R_i - R_{i-1}) P_i`.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "average_precision: length mismatch"
    );
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut ap = 0.0f64;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut recall_prev = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let block_pos = order[i..=j].iter().filter(|&&idx| labels[idx]).count();
        tp += block_pos;
        seen += j - i + 1;
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - recall_prev) * precision;
        recall_prev = recall;
        i = j + 1;
    }
    Ok(ap)
}

// ── dataset-wide evaluation ─────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct MetricTriple {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i_auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_ap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CategoryMetrics {
    pub name: String,
    pub domain: String,
    pub test_images: usize,
    pub anomalous_images: usize,
    #[serde(flatten)]
    pub metrics: MetricTriple,
}

#[derive(Debug, Clone, Serialize)]
pub struct DomainMetrics {
    pub categories: usize,
    #[serde(flatten)]
    pub metrics: MetricTriple,
}

/// Evaluation results shaped like the per-domain results table: one row per
/// category, unweighted per-domain means, and two overall rows (mean over
/// all categories, and mean of the domain means — labeled distinctly).
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub per_category: Vec<CategoryMetrics>,
    pub domains: BTreeMap<String, DomainMetrics>,
    /// Unweighted mean over all evaluated categories.
    pub overall: MetricTriple,
    /// Mean of the per-domain means.
    pub overall_domain_mean: MetricTriple,
    pub warnings: Vec<String>,
}

/// Per-image record for the optional CSV dump.
#[derive(Debug, Clone)]
pub struct ImageScoreRow {
    pub category: String,
    pub sample_id: String,
    pub label: bool,
    pub score: f64,
}

pub struct EvalOutput {
    pub report: MetricReport,
    pub image_scores: Vec<ImageScoreRow>,
}

/// Scores every test image of the manifest with `scorer` and aggregates the
/// metrics: per category, image-level AUROC over image scores and pixel-level
/// AUROC / AP over the pooled pixels of that category's test images (normal
/// images contribute all-negative pixels). Categories without anomalous test
/// samples are skipped with a warning.
///
/// `scorer(image) -> (pixel map, image score)`; the map must match the image
/// resolution. `map_sink`, when given, receives every scored map.
pub fn evaluate_with_scorer<F>(
    manifest: &DatasetManifest,
    root: &Path,
    scorer: F,
    mut map_sink: Option<&mut dyn FnMut(&str, &str, usize, usize, &[f32])>,
) -> Result<EvalOutput>
where
    F: Fn(&RgbBuffer) -> Result<(Vec<f32>, f64)>,
{
    let mut per_category = Vec::new();
    let mut warnings = Vec::new();
    let mut image_scores = Vec::new();

    for cat in &manifest.categories {
        let test_samples: Vec<_> = cat
            .samples
            .iter()
            .filter(|s| s.split == crate::dataset::Split::Test)
            .collect();
        let anomalous = test_samples
            .iter()
            .filter(|s| s.label == Label::Anomalous)
            .count();
        if anomalous == 0 {
            warnings.push(format!(
                "category {}: no anomalous test samples, skipped",
                cat.name
            ));
            continue;
        }

        let mut img_scores = Vec::with_capacity(test_samples.len());
        let mut img_labels = Vec::with_capacity(test_samples.len());
        let mut pixel_scores: Vec<f64> = Vec::new();
        let mut pixel_labels: Vec<bool> = Vec::new();

        for sample in &test_samples {
            let image_path = root.join(&sample.image);
            let image = imgio::load_rgb(&image_path)?;
            let (map, score) = scorer(&image)?;
            if map.len() != image.width * image.height {
                return Err(Error::Dimension(format!(
                    "{}: map holds {} scores for a {}x{} image",
                    sample.image,
                    map.len(),
                    image.width,
                    image.height
                )));
            }
            let is_anomalous = sample.label == Label::Anomalous;
            img_scores.push(score);
            img_labels.push(is_anomalous);
            image_scores.push(ImageScoreRow {
                category: cat.name.clone(),
                sample_id: sample.image.clone(),
                label: is_anomalous,
                score,
            });
            if let Some(sink) = map_sink.as_deref_mut() {
                sink(&cat.name, &sample.image, image.width, image.height, &map);
            }

            match (&sample.mask, is_anomalous) {
                (Some(mask_rel), true) => {
                    let mask = imgio::load_mask(&root.join(mask_rel))?;
                    if (mask.width, mask.height) != (image.width, image.height) {
                        return Err(Error::Dimension(format!(
                            "{mask_rel}: mask {}x{} does not match image {}x{}",
                            mask.width, mask.height, image.width, image.height
                        )));
                    }
                    pixel_scores.extend(map.iter().map(|&v| f64::from(v)));
                    pixel_labels.extend(mask.pixels.iter().copied());
                }
                (None, true) => {
                    return Err(Error::Contract(format!(
                        "{}: anomalous sample without a mask",
                        sample.image
                    )))
                }
                (_, false) => {
                    pixel_scores.extend(map.iter().map(|&v| f64::from(v)));
                    pixel_labels.extend(std::iter::repeat(false).take(map.len()));
                }
            }
        }

        let i_auroc = match auroc(&img_scores, &img_labels) {
            Ok(v) => Some(v),
            Err(e) => {
                warnings.push(format!("category {}: I-AUROC undefined ({e})", cat.name));
                None
            }
        };
        let p_auroc = match auroc(&pixel_scores, &pixel_labels) {
            Ok(v) => Some(v),
            Err(e) => {
                warnings.push(format!("category {}: P-AUROC undefined ({e})", cat.name));
                None
            }
        };
        let p_ap = match average_precision(&pixel_scores, &pixel_labels) {
            Ok(v) => Some(v),
            Err(e) => {
                warnings.push(format!("category {}: P-AP undefined ({e})", cat.name));
                None
            }
        };
        per_category.push(CategoryMetrics {
            name: cat.name.clone(),
            domain: cat.domain.to_string(),
            test_images: test_samples.len(),
            anomalous_images: anomalous,
            metrics: MetricTriple {
                i_auroc,
                p_auroc,
                p_ap,
            },
        });
    }

    let report = aggregate(per_category, warnings);
    Ok(EvalOutput {
        report,
        image_scores,
    })
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

fn triple_mean<'a>(rows: impl Iterator<Item = &'a MetricTriple> + Clone) -> MetricTriple {
    MetricTriple {
        i_auroc: mean_of(rows.clone().map(|m| m.i_auroc)),
        p_auroc: mean_of(rows.clone().map(|m| m.p_auroc)),
        p_ap: mean_of(rows.map(|m| m.p_ap)),
    }
}

fn aggregate(per_category: Vec<CategoryMetrics>, warnings: Vec<String>) -> MetricReport {
    let mut by_domain: BTreeMap<String, Vec<&CategoryMetrics>> = BTreeMap::new();
    for cat in &per_category {
        by_domain.entry(cat.domain.clone()).or_default().push(cat);
    }
    let domains: BTreeMap<String, DomainMetrics> = by_domain
        .iter()
        .map(|(domain, cats)| {
            (
                domain.clone(),
                DomainMetrics {
                    categories: cats.len(),
                    metrics: triple_mean(cats.iter().map(|c| &c.metrics)),
                },
            )
        })
        .collect();
    let overall = triple_mean(per_category.iter().map(|c| &c.metrics));
    let overall_domain_mean = triple_mean(domains.values().map(|d| &d.metrics));
    MetricReport {
        per_category,
        domains,
        overall,
        overall_domain_mean,
        warnings,
    }
}

/// Model-backed evaluation over a manifest.
pub fn evaluate_model<E: Scalar>(
    model: &ModelBundle<E>,
    scoring: &ScoringConfig,
    manifest: &DatasetManifest,
    root: &Path,
    map_export_dir: Option<&Path>,
) -> Result<EvalOutput> {
    let export_err = std::cell::RefCell::new(None);
    let mut sink_fn;
    let sink: Option<&mut dyn FnMut(&str, &str, usize, usize, &[f32])> = match map_export_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let dir: PathBuf = dir.to_path_buf();
            let err_slot = &export_err;
            sink_fn = move |_cat: &str, sample: &str, w: usize, h: usize, map: &[f32]| {
                let rel = sample.replace(['/', '\\'], "_");
                let path = dir.join(format!("{rel}.map.png"));
                // maps live in the cosine range [0, 2]
                if let Err(e) = imgio::save_gray16_png(&path, w, h, map, 2.0) {
                    *err_slot.borrow_mut() = Some(e);
                }
            };
            Some(&mut sink_fn)
        }
        None => None,
    };
    let out = evaluate_with_scorer(
        manifest,
        root,
        |image| score_image(model, &ImageInput::from_rgb(image), scoring),
        sink,
    )?;
    if let Some(e) = export_err.into_inner() {
        return Err(e);
    }
    Ok(out)
}

/// Renders the per-image scores as CSV (`category,sample_id,label,score`).
pub fn image_scores_csv(rows: &[ImageScoreRow]) -> String {
    let mut out = String::from("category,sample_id,label,score\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.category,
            r.sample_id,
            if r.label { 1 } else { 0 },
            r.score
        ));
    }
    out
}

impl MetricReport {
    /// Aligned text table, one category per row plus domain and overall rows.
    pub fn to_text(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map(|x| format!("{:.4}", x)).unwrap_or_else(|| "-".into())
        }
        let mut out = String::new();
        out.push_str(&format!(
            "{:<28} {:>8} {:>8} {:>8}\n",
            "", "I-AUROC", "P-AUROC", "P-AP"
        ));
        for c in &self.per_category {
            out.push_str(&format!(
                "{:<28} {:>8} {:>8} {:>8}\n",
                c.name,
                cell(c.metrics.i_auroc),
                cell(c.metrics.p_auroc),
                cell(c.metrics.p_ap)
            ));
        }
        for (name, d) in &self.domains {
            out.push_str(&format!(
                "{:<28} {:>8} {:>8} {:>8}\n",
                format!("[{name}]"),
                cell(d.metrics.i_auroc),
                cell(d.metrics.p_auroc),
                cell(d.metrics.p_ap)
            ));
        }
        out.push_str(&format!(
            "{:<28} {:>8} {:>8} {:>8}\n",
            "OVERALL (categories)",
            cell(self.overall.i_auroc),
            cell(self.overall.p_auroc),
            cell(self.overall.p_ap)
        ));
        out.push_str(&format!(
            "{:<28} {:>8} {:>8} {:>8}\n",
            "OVERALL (domain mean)",
            cell(self.overall_domain_mean.i_auroc),
            cell(self.overall_domain_mean.p_auroc),
            cell(self.overall_domain_mean.p_ap)
        ));
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{CategoryRecord, DatasetManifest, Domain, SampleRecord, Split, GOOD};
    use crate::imgio::{MaskBuffer, RgbBuffer};
    use rand::Rng;

    // ── brute-force oracles ─────────────────────────────────────────

    /// O(n^2) pairwise counting: P(score+ > score-) + P(tie)/2.
    fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    /// Exhaustive threshold sweep recomputed from scratch at every distinct
    /// score, descending.
    fn ap_exhaustive(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let total_pos = labels.iter().filter(|&&l| l).count() as f64;
        let mut ap = 0.0;
        let mut recall_prev = 0.0;
        for &t in &thresholds {
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (i, &l) in labels.iter().enumerate() {
                if scores[i] >= t {
                    if l {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            let recall = tp / total_pos;
            let precision = tp / (tp + fp);
            ap += (recall - recall_prev) * precision;
            recall_prev = recall;
        }
        ap
    }

    fn random_instance(rng: &mut impl Rng, n: usize, with_ties: bool) -> (Vec<f64>, Vec<bool>) {
        loop {
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    if with_ties {
                        // coarse grid injects plenty of exact ties
                        (rng.random_range(0..12) as f64) / 4.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
            let pos = labels.iter().filter(|&&l| l).count();
            if pos > 0 && pos < n {
                return (scores, labels);
            }
        }
    }

    #[test]
    fn auroc_separated_and_tied_cases() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(auroc(&scores, &labels).unwrap(), 1.0);

        let flat = [0.5; 6];
        let labels = [true, false, true, false, false, true];
        assert_eq!(auroc(&flat, &labels).unwrap(), 0.5);
    }

    #[test]
    fn auroc_rejects_single_class() {
        assert!(matches!(
            auroc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn auroc_matches_pairwise_oracle_on_200_instances() {
        let mut rng = crate::rng::rng_from(31, &[0]);
        for trial in 0..200 {
            let n = rng.random_range(2..500);
            let (scores, labels) = random_instance(&mut rng, n, trial % 2 == 0);
            let fast = auroc(&scores, &labels).unwrap();
            let brute = auroc_pairwise(&scores, &labels);
            assert!(
                (fast - brute).abs() <= 1e-12,
                "trial {trial}: {fast} vs {brute}"
            );
        }
    }

    #[test]
    fn ap_closed_forms() {
        // all positives ranked first
        let scores = [0.9, 0.8, 0.3, 0.2, 0.1];
        let labels = [true, true, false, false, false];
        assert_eq!(average_precision(&scores, &labels).unwrap(), 1.0);

        // one positive ranked last among n
        let scores = [0.9, 0.8, 0.7, 0.1];
        let labels = [false, false, false, true];
        assert!((average_precision(&scores, &labels).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ap_rejects_no_positives() {
        assert!(matches!(
            average_precision(&[0.3, 0.4], &[false, false]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn ap_matches_exhaustive_oracle_on_200_instances() {
        let mut rng = crate::rng::rng_from(37, &[0]);
        for trial in 0..200 {
            let n = rng.random_range(1..500);
            let (scores, labels) = random_instance(&mut rng, n, trial % 2 == 1);
            let fast = average_precision(&scores, &labels).unwrap();
            let brute = ap_exhaustive(&scores, &labels);
            assert!(
                (fast - brute).abs() <= 1e-12,
                "trial {trial}: {fast} vs {brute}"
            );
        }
    }

    #[test]
    fn metrics_are_invariant_under_monotone_transforms() {
        let mut rng = crate::rng::rng_from(41, &[0]);
        let (scores, labels) = random_instance(&mut rng, 120, true);
        let base_auroc = auroc(&scores, &labels).unwrap();
        let base_ap = average_precision(&scores, &labels).unwrap();
        let affine: Vec<f64> = scores.iter().map(|&s| 2.0 * s + 1.0).collect();
        let exp: Vec<f64> = scores.iter().map(|&s| s.exp()).collect();
        for transformed in [affine, exp] {
            assert_eq!(auroc(&transformed, &labels).unwrap(), base_auroc);
            assert_eq!(average_precision(&transformed, &labels).unwrap(), base_ap);
        }
    }

    #[test]
    fn auroc_complement_identity_for_tie_free_scores() {
        let mut rng = crate::rng::rng_from(43, &[0]);
        let (scores, labels) = random_instance(&mut rng, 80, false);
        let flipped: Vec<bool> = labels.iter().map(|&l| !l).collect();
        let a = auroc(&scores, &labels).unwrap();
        let b = auroc(&scores, &flipped).unwrap();
        assert!((a + b - 1.0).abs() <= 1e-12);
    }

    // ── evaluation fixtures ─────────────────────────────────────────

    /// Images encode their own ground truth: the red channel is 255 exactly
    /// on anomalous pixels. The oracle scorer reads it back, so maps equal
    /// masks and pixel metrics must be perfect.
    fn write_eval_fixture(
        root: &std::path::Path,
        categories: &[(&str, Domain)],
    ) -> DatasetManifest {
        let mut manifest = DatasetManifest::new("fixture");
        let (w, h) = (12usize, 10usize);
        for (ci, (name, domain)) in categories.iter().enumerate() {
            let mut samples = Vec::new();
            for i in 0..2 {
                let rel = format!("{name}/train/good/{i:03}.png");
                let path = root.join(&rel);
                std::fs::create_dir_all(path.parent().unwrap()).unwrap();
                imgio::save_rgb_png(&path, &RgbBuffer::new(w, h)).unwrap();
                samples.push(SampleRecord {
                    image: rel,
                    split: Split::Train,
                    label: Label::Normal,
                    defect_type: GOOD.into(),
                    mask: None,
                    annotation: None,
                });
            }
            for i in 0..2 {
                let rel = format!("{name}/test/good/{i:03}.png");
                let path = root.join(&rel);
                std::fs::create_dir_all(path.parent().unwrap()).unwrap();
                let mut img = RgbBuffer::new(w, h);
                // benign green texture, zero red
                for y in 0..h {
                    for x in 0..w {
                        img.set(x, y, [0, (x * 17 + y) as u8, 30]);
                    }
                }
                imgio::save_rgb_png(&path, &img).unwrap();
                samples.push(SampleRecord {
                    image: rel,
                    split: Split::Test,
                    label: Label::Normal,
                    defect_type: GOOD.into(),
                    mask: None,
                    annotation: None,
                });
            }
            for i in 0..2 {
                let rel = format!("{name}/test/spot/{i:03}.png");
                let mask_rel = format!("{name}/ground_truth/spot/{i:03}_mask.png");
                let mut img = RgbBuffer::new(w, h);
                let mut mask = MaskBuffer::new(w, h);
                let cx = 2 + ci + i;
                for y in 3..6 {
                    for x in cx..cx + 3 {
                        img.set(x, y, [255, 0, 0]);
                        mask.set(x, y, true);
                    }
                }
                let ipath = root.join(&rel);
                std::fs::create_dir_all(ipath.parent().unwrap()).unwrap();
                imgio::save_rgb_png(&ipath, &img).unwrap();
                let mpath = root.join(&mask_rel);
                std::fs::create_dir_all(mpath.parent().unwrap()).unwrap();
                imgio::save_mask_png(&mpath, &mask).unwrap();
                samples.push(SampleRecord {
                    image: rel,
                    split: Split::Test,
                    label: Label::Anomalous,
                    defect_type: "spot".into(),
                    mask: Some(mask_rel),
                    annotation: None,
                });
            }
            manifest.categories.push(CategoryRecord {
                name: name.to_string(),
                domain: *domain,
                samples,
            });
        }
        manifest.save(root).unwrap();
        manifest
    }

    fn oracle_scorer(image: &RgbBuffer) -> Result<(Vec<f32>, f64)> {
        let map: Vec<f32> = image
            .pixels
            .chunks(3)
            .map(|px| f32::from(px[0]) / 255.0)
            .collect();
        let score = map.iter().fold(0.0f32, |m, &v| m.max(v));
        Ok((map, f64::from(score)))
    }

    #[test]
    fn oracle_scorer_achieves_perfect_pixel_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_eval_fixture(
            dir.path(),
            &[("alpha", Domain::Industry), ("beta", Domain::Medical)],
        );
        let out = evaluate_with_scorer(&manifest, dir.path(), oracle_scorer, None).unwrap();
        assert!(out.report.warnings.is_empty());
        for cat in &out.report.per_category {
            assert_eq!(cat.metrics.p_auroc, Some(1.0), "{}", cat.name);
            assert_eq!(cat.metrics.p_ap, Some(1.0), "{}", cat.name);
            assert_eq!(cat.metrics.i_auroc, Some(1.0), "{}", cat.name);
        }
        assert_eq!(out.report.overall.p_auroc, Some(1.0));
        assert_eq!(out.image_scores.len(), 8);
    }

    #[test]
    fn constant_scorer_gives_chance_level_image_auroc() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_eval_fixture(dir.path(), &[("alpha", Domain::Industry)]);
        let constant = |image: &RgbBuffer| -> Result<(Vec<f32>, f64)> {
            Ok((vec![0.5; image.width * image.height], 0.5))
        };
        let out = evaluate_with_scorer(&manifest, dir.path(), constant, None).unwrap();
        assert_eq!(out.report.per_category[0].metrics.i_auroc, Some(0.5));
        assert_eq!(out.report.per_category[0].metrics.p_auroc, Some(0.5));
    }

    #[test]
    fn aggregation_matches_hand_computed_means() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_eval_fixture(
            dir.path(),
            &[
                ("a", Domain::Industry),
                ("b", Domain::Industry),
                ("c", Domain::Medical),
            ],
        );
        // seeded pseudo-random scorer keyed on image content
        let scorer = |image: &RgbBuffer| -> Result<(Vec<f32>, f64)> {
            let seed = crate::rng::fnv1a(&image.pixels);
            let mut rng = crate::rng::rng_from(seed, &[1]);
            let map: Vec<f32> = (0..image.width * image.height)
                .map(|_| rng.random::<f32>())
                .collect();
            let score = rng.random::<f64>();
            Ok((map, score))
        };
        let out = evaluate_with_scorer(&manifest, dir.path(), scorer, None).unwrap();
        let r = &out.report;
        assert_eq!(r.per_category.len(), 3);

        let vals: Vec<f64> = r
            .per_category
            .iter()
            .map(|c| c.metrics.i_auroc.unwrap())
            .collect();
        let overall = vals.iter().sum::<f64>() / 3.0;
        assert!((r.overall.i_auroc.unwrap() - overall).abs() <= 1e-12);

        let industry = (vals[0] + vals[1]) / 2.0;
        assert!((r.domains["Industry"].metrics.i_auroc.unwrap() - industry).abs() <= 1e-12);
        assert!((r.domains["Medical"].metrics.i_auroc.unwrap() - vals[2]).abs() <= 1e-12);

        // overall-over-categories and mean-of-domain-means are distinct
        let domain_mean = (industry + vals[2]) / 2.0;
        assert!((r.overall_domain_mean.i_auroc.unwrap() - domain_mean).abs() <= 1e-12);
        assert!(
            (overall - domain_mean).abs() > 1e-15,
            "fixture should separate the two"
        );
    }

    #[test]
    fn image_order_does_not_change_pixel_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = write_eval_fixture(dir.path(), &[("alpha", Domain::Agrifood)]);
        let scorer = |image: &RgbBuffer| -> Result<(Vec<f32>, f64)> {
            let seed = crate::rng::fnv1a(&image.pixels);
            let mut rng = crate::rng::rng_from(seed, &[2]);
            let map: Vec<f32> = (0..image.width * image.height)
                .map(|_| rng.random::<f32>())
                .collect();
            Ok((map, 0.1))
        };
        let before = evaluate_with_scorer(&manifest, dir.path(), scorer, None).unwrap();
        manifest.categories[0].samples.reverse();
        let after = evaluate_with_scorer(&manifest, dir.path(), scorer, None).unwrap();
        assert_eq!(
            before.report.per_category[0].metrics.p_auroc,
            after.report.per_category[0].metrics.p_auroc
        );
        assert_eq!(
            before.report.per_category[0].metrics.p_ap,
            after.report.per_category[0].metrics.p_ap
        );
    }

    #[test]
    fn categories_without_anomalies_are_skipped_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = write_eval_fixture(dir.path(), &[("alpha", Domain::Industry)]);
        // strip the anomalous samples from a copy of the category
        let mut only_normals = manifest.categories[0].clone();
        only_normals.name = "empty".into();
        only_normals.samples.retain(|s| s.label == Label::Normal);
        manifest.categories.push(only_normals);

        let out = evaluate_with_scorer(&manifest, dir.path(), oracle_scorer, None).unwrap();
        assert_eq!(out.report.per_category.len(), 1);
        assert!(out.report.warnings.iter().any(|w| w.contains("empty")));
    }

    #[test]
    fn map_export_writes_16bit_pngs() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_eval_fixture(dir.path(), &[("alpha", Domain::Electronics)]);
        let model = crate::model::ModelBundle::<f32>::new(crate::model::ModelConfig {
            encoder: crate::model::EncoderConfig {
                image_size: 12,
                patch_size: 4,
                dim: 8,
                depth: 2,
                heads: 2,
                mlp_ratio: 2,
                ..crate::model::EncoderConfig::default()
            },
            experts: 2,
            expert_hidden: 12,
            decoder_depth: 2,
            decoder_heads: 2,
            bottleneck_hidden: 12,
            ..crate::model::ModelConfig::default()
        })
        .unwrap();
        // the fixture is 12x10; regenerate it square so the encoder accepts it
        let dir = tempfile::tempdir().unwrap();
        let mut manifest2 = manifest.clone();
        for cat in &mut manifest2.categories {
            for s in &mut cat.samples {
                let path = dir.path().join(&s.image);
                std::fs::create_dir_all(path.parent().unwrap()).unwrap();
                imgio::save_rgb_png(&path, &RgbBuffer::new(12, 12)).unwrap();
                if let Some(m) = &s.mask {
                    let mpath = dir.path().join(m);
                    std::fs::create_dir_all(mpath.parent().unwrap()).unwrap();
                    let mut mask = MaskBuffer::new(12, 12);
                    mask.set(3, 3, true);
                    imgio::save_mask_png(&mpath, &mask).unwrap();
                }
            }
        }
        let maps = dir.path().join("maps");
        let out = evaluate_model(
            &model,
            &crate::scoring::ScoringConfig::default(),
            &manifest2,
            dir.path(),
            Some(&maps),
        )
        .unwrap();
        assert!(!out.image_scores.is_empty());
        let exported: Vec<_> = std::fs::read_dir(&maps).unwrap().collect();
        assert_eq!(exported.len(), 4, "one map per test image");
    }

    #[test]
    fn report_serializes_with_table_layout() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_eval_fixture(dir.path(), &[("alpha", Domain::Infrastructure)]);
        let out = evaluate_with_scorer(&manifest, dir.path(), oracle_scorer, None).unwrap();
        let json = serde_json::to_value(&out.report).unwrap();
        assert!(json["domains"]["Infrastructure"]["i_auroc"].is_number());
        assert!(json["overall"]["p_ap"].is_number());
        let text = out.report.to_text();
        assert!(text.contains("OVERALL (categories)"));
        assert!(text.contains("OVERALL (domain mean)"));
        let csv = image_scores_csv(&out.image_scores);
        assert!(csv.starts_with("category,sample_id,label,score\n"));
        assert_eq!(csv.lines().count(), 1 + out.image_scores.len());
    }
}
