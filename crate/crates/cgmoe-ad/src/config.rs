//! Run configuration: defaults, JSON config file, dotted-path flag overrides.
//!
//! One parser covers everything: the config file and every `--key value` flag
//! land in the same JSON tree, which then deserializes strictly — unknown
//! keys are rejected, and the resolved configuration is serialized alongside
//! every run output as its provenance record.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{BalanceCaps, Domain};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::scoring::ScoringConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub caps: BalanceCaps,
    pub tile_size: usize,
    pub min_defect_px: usize,
    pub tile_large: bool,
    pub source_name: String,
    pub default_domain: String,
    pub prefix_source: bool,
    /// Sidecar CSV for flat-folder sources; empty means MVTec-shaped input.
    pub source_csv: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            caps: BalanceCaps::default(),
            tile_size: 256,
            min_defect_px: 10,
            tile_large: false,
            source_name: "source".into(),
            default_domain: "Industry".into(),
            prefix_source: false,
            source_csv: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Comma-separated domain filter for evaluated categories.
    pub eval_domains: String,
    /// Comma-separated domain filter for training data (cross-domain
    /// protocol; applies to `train` and to manifest filtering in `eval`).
    pub train_domains: String,
    /// Per-category training-image budget (few-shot protocol); 0 = all.
    pub shots: usize,
    pub dump_scores: bool,
    pub export_maps: bool,
}

fn parse_domains(spec: &str) -> Result<Option<Vec<Domain>>> {
    if spec.trim().is_empty() {
        return Ok(None);
    }
    spec.split(',')
        .map(|d| Domain::parse(d.trim()))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

impl EvalConfig {
    pub fn eval_domain_list(&self) -> Result<Option<Vec<Domain>>> {
        parse_domains(&self.eval_domains)
    }

    pub fn train_domain_list(&self) -> Result<Option<Vec<Domain>>> {
        parse_domains(&self.train_domains)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    /// Expert counts to sweep.
    pub experts: Vec<usize>,
    /// Also run the decoder-routed variant at the largest expert count.
    pub decoder_routing: bool,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            experts: vec![1, 2, 4, 8],
            decoder_routing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scoring: ScoringConfig,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
    /// Seed for dataset-side randomness (splitting, balancing, generation).
    pub seed: u64,
    pub data_root: String,
    pub out_dir: String,
    /// Synthetic-benchmark spec file; empty uses the built-in desk spec.
    pub synth_spec: String,
    /// Checkpoint path for `eval`.
    pub checkpoint: String,
    pub threads: usize,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            scoring: ScoringConfig::default(),
            pipeline: PipelineConfig::default(),
            eval: EvalConfig::default(),
            ablate: AblateConfig::default(),
            seed: 0,
            data_root: String::new(),
            out_dir: String::new(),
            synth_spec: String::new(),
            checkpoint: String::new(),
            threads: 0,
            deterministic: false,
        }
    }
}

impl RunConfig {
    /// Writes the fully resolved configuration next to a run's outputs.
    pub fn save_snapshot(&self, dir: &Path) -> Result<()> {
        let path = dir.join("run_config.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

fn deep_merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(base_map), serde_json::Value::Object(overlay_map)) => {
            for (k, v) in overlay_map {
                match base_map.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        base_map.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a flag value: JSON scalars (numbers, booleans, null, arrays) pass
/// through, everything else is a string.
fn parse_override_value(raw: &str) -> serde_json::Value {
    match serde_json::from_str::<serde_json::Value>(raw) {
        Ok(v) if !v.is_string() => v,
        _ => serde_json::Value::String(raw.to_string()),
    }
}

fn set_dotted(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let map = cursor.as_object_mut().ok_or_else(|| {
            Error::Config(format!("config path {path:?}: {seg:?} is not an object"))
        })?;
        if i + 1 == segments.len() {
            map.insert((*seg).to_string(), value);
            return Ok(());
        }
        cursor = map
            .entry((*seg).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

/// Builds the effective configuration: defaults, then the config file, then
/// the environment (`CGMOE_AD_THREADS`), then `--key value` overrides with
/// dotted paths. Unknown keys anywhere are a config error.
pub fn load_config(
    config_file: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig> {
    let mut tree = serde_json::to_value(RunConfig::default())?;
    if let Some(path) = config_file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file_tree: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        deep_merge(&mut tree, file_tree);
    }
    if let Ok(threads) = std::env::var("CGMOE_AD_THREADS") {
        let n: usize = threads.parse().map_err(|_| {
            Error::Config(format!(
                "CGMOE_AD_THREADS={threads:?} is not a thread count"
            ))
        })?;
        set_dotted(&mut tree, "threads", serde_json::json!(n))?;
    }
    for (key, raw) in overrides {
        set_dotted(&mut tree, key, parse_override_value(raw))?;
    }
    let cfg: RunConfig = serde_json::from_value(tree)
        .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_and_validate() {
        let cfg = load_config(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let overrides = vec![
            ("model.experts".to_string(), "4".to_string()),
            ("train.iterations".to_string(), "123".to_string()),
            (
                "eval.eval_domains".to_string(),
                "Medical,Industry".to_string(),
            ),
            ("deterministic".to_string(), "true".to_string()),
        ];
        let cfg = load_config(None, &overrides).unwrap();
        assert_eq!(cfg.model.experts, 4);
        assert_eq!(cfg.train.iterations, 123);
        assert!(cfg.deterministic);
        assert_eq!(
            cfg.eval.eval_domain_list().unwrap().unwrap(),
            vec![Domain::Medical, Domain::Industry]
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let overrides = vec![("model.expertz".to_string(), "4".to_string())];
        let err = load_config(None, &overrides).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err}");
    }

    #[test]
    fn config_file_merges_under_flag_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"model": {"experts": 2}, "train": {"iterations": 50}}"#,
        )
        .unwrap();
        let overrides = vec![("train.iterations".to_string(), "75".to_string())];
        let cfg = load_config(Some(&path), &overrides).unwrap();
        assert_eq!(cfg.model.experts, 2, "file value survives");
        assert_eq!(cfg.train.iterations, 75, "flag wins over file");
    }

    #[test]
    fn invalid_model_configs_fail_fast() {
        let overrides = vec![("model.encoder.patch_size".to_string(), "7".to_string())];
        assert!(load_config(None, &overrides).is_err());
    }

    #[test]
    fn snapshot_is_written() {
        let dir = tempfile::tempdir().unwrap();
        RunConfig::default().save_snapshot(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("run_config.json")).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, RunConfig::default());
    }
}
