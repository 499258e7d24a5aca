//! Reconstruction-loss training.
//!
//! The loss flattens each feature level to token rows, takes the per-row
//! cosine distance between encoder targets and decoder reconstructions, drops
//! the gradient of well-restored rows (hard mining at a scheduled quantile),
//! and averages the kept rows across levels. Only the bottleneck, gating and
//! decoder parameters are updated; the encoder stays frozen bit for bit.
//!
//! Everything is seeded: batch sampling, dropout noise and the optimizer are
//! deterministic functions of the config seed, so identically configured runs
//! produce bit-identical checkpoints.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncodedImage, ImageInput, ModelBundle};
use crate::rng::{fnv1a, rng_from};
use crate::tensor::{Scalar, Tensor};

const COSINE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Linear learning-rate warmup steps.
    pub warmup: usize,
    /// Hard-mining keep-quantile schedule, linear from start to end.
    pub q_start: f64,
    pub q_end: f64,
    pub seed: u64,
    /// Extra checkpoint every N iterations (0 = final checkpoint only).
    pub checkpoint_every: usize,
    pub log_every: usize,
    /// Worker threads for batch items (0 = number of CPUs).
    pub threads: usize,
    /// Forces single-threaded batch processing.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 5000,
            batch_size: 8,
            learning_rate: 2e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            warmup: 100,
            q_start: 0.0,
            q_end: 0.9,
            seed: 0,
            checkpoint_every: 0,
            log_every: 50,
            threads: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.q_start)
            || !(0.0..1.0).contains(&self.q_end)
            || self.q_start > self.q_end
        {
            return Err(Error::Config(format!(
                "hard-mining schedule needs 0 <= q_start <= q_end < 1, got {} -> {}",
                self.q_start, self.q_end
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "batch_size and iterations must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Keep-quantile at iteration `t` (0-based).
    pub fn quantile_at(&self, t: usize) -> f64 {
        self.q_start + (self.q_end - self.q_start) * t as f64 / self.iterations as f64
    }

    /// Learning rate at optimizer step `t` (1-based), with linear warmup.
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.warmup == 0 {
            return self.learning_rate;
        }
        self.learning_rate * (t as f64 / self.warmup as f64).min(1.0)
    }
}

/// One loss evaluation: scalar total, per-level unmasked mean distance, and
/// the fraction of feature points whose gradient was suppressed.
#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub per_level_mean_distance: Vec<f64>,
    pub masked_fraction: f64,
}

/// Empirical quantile by linear interpolation on the sorted sample
/// (inclusive endpoints).
fn quantile_threshold(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Keep-mask for hard mining: true exactly where the distance reaches the
/// empirical `q`-quantile. Well-restored points (small distance) are dropped;
/// ties at the threshold are kept, so a constant vector keeps everything.
pub fn hard_mining_mask<E: Scalar>(dist: &[E], q: f64) -> Vec<bool> {
    assert!(!dist.is_empty(), "hard_mining_mask: empty distance vector");
    assert!(
        (0.0..1.0).contains(&q),
        "hard_mining_mask: q must lie in [0, 1)"
    );
    let values: Vec<f64> = dist.iter().map(|v| v.to_f64()).collect();
    let threshold = quantile_threshold(&values, q);
    values.iter().map(|&v| v >= threshold).collect()
}

/// Hard-mined cosine reconstruction loss over aligned feature levels.
///
/// Targets are treated as constants; gradient reaches the reconstruction only
/// through rows the mining mask keeps, and the loss value is the mean over
/// those kept rows, averaged across levels.
pub fn reconstruction_loss<E: Scalar>(
    f_e: &[Tensor<E>],
    f_d: &[Tensor<E>],
    q: f64,
) -> (Tensor<E>, LossReport) {
    let masks: Vec<Vec<bool>> = f_e
        .iter()
        .zip(f_d)
        .map(|(e, d)| {
            let dist = Tensor::cosine_distance(&e.detach(), d, COSINE_EPS);
            if dist.all_finite() {
                hard_mining_mask(dist.data(), q)
            } else {
                // keep everything so the non-finite value reaches the loss,
                // where the training loop reports it
                vec![true; dist.len()]
            }
        })
        .collect();
    reconstruction_loss_with_masks(f_e, f_d, &masks)
}

/// Same loss with externally fixed keep-masks (also the differentiable core
/// the gradient oracle checks, since a frozen mask has no quantile kinks).
pub fn reconstruction_loss_with_masks<E: Scalar>(
    f_e: &[Tensor<E>],
    f_d: &[Tensor<E>],
    masks: &[Vec<bool>],
) -> (Tensor<E>, LossReport) {
    assert!(!f_e.is_empty(), "reconstruction_loss: no feature levels");
    assert_eq!(
        f_e.len(),
        f_d.len(),
        "reconstruction_loss: encoder and decoder level counts disagree"
    );
    assert_eq!(
        f_e.len(),
        masks.len(),
        "reconstruction_loss: mask count mismatch"
    );

    let mut total: Option<Tensor<E>> = None;
    let mut per_level = Vec::with_capacity(f_e.len());
    let mut dropped = 0usize;
    let mut points = 0usize;
    for ((e, d), keep) in f_e.iter().zip(f_d).zip(masks) {
        assert_eq!(
            e.shape(),
            d.shape(),
            "reconstruction_loss: feature level shapes disagree"
        );
        let dist = Tensor::cosine_distance(&e.detach(), d, COSINE_EPS);
        let n = dist.len();
        assert_eq!(keep.len(), n, "reconstruction_loss: mask length mismatch");
        let kept = keep.iter().filter(|&&k| k).count();
        assert!(kept > 0, "reconstruction_loss: mask drops every row");
        dropped += n - kept;
        points += n;
        per_level.push(dist.data().iter().map(|v| v.to_f64()).sum::<f64>() / n as f64);

        let indicator = Tensor::from_vec(
            vec![n],
            keep.iter()
                .map(|&k| if k { E::ONE } else { E::ZERO })
                .collect(),
        );
        let level_loss = dist
            .detach_mask(keep)
            .mul(&indicator)
            .sum()
            .scale(1.0 / kept as f64);
        total = Some(match total {
            Some(acc) => acc.add(&level_loss),
            None => level_loss,
        });
    }
    let levels = f_e.len();
    let total = total
        .expect("at least one level")
        .scale(1.0 / levels as f64);
    let report = LossReport {
        total: total.item().to_f64(),
        per_level_mean_distance: per_level,
        masked_fraction: dropped as f64 / points as f64,
    };
    (total, report)
}

// ── optimizer ───────────────────────────────────────────────────────

/// Adaptive moment estimation with decoupled weight decay and linear warmup.
/// Moment state is kept in f64 regardless of the model precision.
pub struct AdamW {
    cfg: TrainConfig,
    step: usize,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
    eps: f64,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig) -> Self {
        AdamW {
            cfg: cfg.clone(),
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
            eps: 1e-8,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.cfg.lr_at(self.step.max(1))
    }

    /// Applies one update from name-keyed gradients. Only trainable
    /// parameters whose name appears in `grads` move.
    pub fn apply<E: Scalar>(
        &mut self,
        model: &mut ModelBundle<E>,
        grads: &HashMap<String, Vec<E>>,
    ) {
        self.step += 1;
        let t = self.step;
        let lr = self.cfg.lr_at(t);
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let wd = self.cfg.weight_decay;
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let eps = self.eps;
        let (m_state, v_state) = (&mut self.m, &mut self.v);

        model.visit_params_mut(&mut |name, _, values, trainable| {
            if !trainable {
                return;
            }
            let Some(grad) = grads.get(name) else { return };
            let m = m_state
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; values.len()]);
            let v = v_state
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; values.len()]);
            for i in 0..values.len() {
                let g = grad[i].to_f64();
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let p = values[i].to_f64();
                values[i] = E::from_f64(p - lr * (m_hat / (v_hat.sqrt() + eps) + wd * p));
            }
        });
    }
}

// ── training loop ───────────────────────────────────────────────────

/// Cached encoder outputs for the whole training set; valid because the
/// frozen encoder is a pure function of its seed.
pub struct TrainSet<E: Scalar> {
    pub encoded: Vec<EncodedImage<E>>,
}

pub fn encode_training_set<E: Scalar>(
    model: &ModelBundle<E>,
    images: &[ImageInput],
) -> Result<TrainSet<E>> {
    let encoded = images
        .iter()
        .map(|img| model.encode(img))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainSet { encoded })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub masked_fraction: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub records: Vec<LossRecord>,
    /// FNV hash of the full batch-index sequence; identical seeds and data
    /// sizes yield identical hashes (the ablation audit).
    pub batch_hash: u64,
    pub final_loss: f64,
}

struct SampleResult<E: Scalar> {
    loss: f64,
    report: LossReport,
    grads: Vec<(String, Vec<E>)>,
}

fn forward_sample<E: Scalar>(
    model: &ModelBundle<E>,
    enc: &EncodedImage<E>,
    q: f64,
    seed: u64,
    iteration: usize,
    slot: usize,
) -> Result<SampleResult<E>> {
    let mut noise = rng_from(seed, &[0x4E01_5E, iteration as u64, slot as u64]);
    let pass = model.forward_from_encoded(enc, true, Some(&mut noise))?;
    let (loss, report) = reconstruction_loss(&pass.f_e, &pass.f_d, q);
    let mut grads = pass
        .trace
        .bound
        .iter()
        .map(|(n, t)| (n.clone(), t))
        .collect::<Vec<_>>();
    grads.sort_by(|a, b| a.0.cmp(&b.0));
    let mut grad_map = loss.backward();
    let grads = grads
        .into_iter()
        .map(|(name, tensor)| {
            let g = grad_map
                .take(tensor)
                .unwrap_or_else(|| vec![E::ZERO; tensor.len()]);
            (name, g)
        })
        .collect();
    Ok(SampleResult {
        loss: report.total,
        report,
        grads,
    })
}

fn resolve_threads(cfg: &TrainConfig, batch: usize) -> usize {
    if cfg.deterministic {
        return 1;
    }
    let n = if cfg.threads == 0 {
        std::thread::available_parallelism()
            .map(usize::from)
            .unwrap_or(1)
    } else {
        cfg.threads
    };
    n.clamp(1, batch)
}

/// One optimizer step on a batch of cached encoder outputs.
///
/// Batch items run on separate threads (each builds its own graph); losses
/// and gradients are reduced in batch order, so the result is bit-identical
/// for any thread count.
pub fn train_step<E: Scalar>(
    model: &mut ModelBundle<E>,
    optimizer: &mut AdamW,
    batch: &[&EncodedImage<E>],
    q: f64,
    iteration: usize,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    assert!(!batch.is_empty(), "train_step: empty batch");
    let threads = resolve_threads(cfg, batch.len());

    let results: Vec<Result<SampleResult<E>>> = if threads == 1 {
        batch
            .iter()
            .enumerate()
            .map(|(slot, enc)| forward_sample(model, enc, q, cfg.seed, iteration, slot))
            .collect()
    } else {
        let shared: &ModelBundle<E> = model;
        let mut slots: Vec<Option<Result<SampleResult<E>>>> =
            (0..batch.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let chunks: Vec<Vec<usize>> = (0..threads)
                .map(|t| (t..batch.len()).step_by(threads).collect())
                .collect();
            let mut handles = Vec::new();
            for chunk in chunks {
                let batch_ref = &batch;
                handles.push(scope.spawn(move || {
                    chunk
                        .into_iter()
                        .map(|slot| {
                            (
                                slot,
                                forward_sample(
                                    shared,
                                    batch_ref[slot],
                                    q,
                                    cfg.seed,
                                    iteration,
                                    slot,
                                ),
                            )
                        })
                        .collect::<Vec<_>>()
                }));
            }
            for handle in handles {
                for (slot, result) in handle.join().expect("worker thread panicked") {
                    slots[slot] = Some(result);
                }
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("all slots filled"))
            .collect()
    };

    // ordered reduction
    let mut mean_grads: HashMap<String, Vec<E>> = HashMap::new();
    let mut loss_sum = 0.0;
    let mut masked_sum = 0.0;
    let mut level_sums: Vec<f64> = Vec::new();
    let inv_b = E::from_f64(1.0 / batch.len() as f64);
    for result in results {
        let sample = result?;
        loss_sum += sample.loss;
        masked_sum += sample.report.masked_fraction;
        if level_sums.is_empty() {
            level_sums = vec![0.0; sample.report.per_level_mean_distance.len()];
        }
        for (acc, v) in level_sums
            .iter_mut()
            .zip(&sample.report.per_level_mean_distance)
        {
            *acc += v;
        }
        for (name, grad) in sample.grads {
            match mean_grads.entry(name) {
                std::collections::hash_map::Entry::Occupied(mut e) => {
                    for (acc, g) in e.get_mut().iter_mut().zip(&grad) {
                        *acc += *g * inv_b;
                    }
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(grad.into_iter().map(|g| g * inv_b).collect());
                }
            }
        }
    }
    let b = batch.len() as f64;
    let report = LossReport {
        total: loss_sum / b,
        per_level_mean_distance: level_sums.iter().map(|s| s / b).collect(),
        masked_fraction: masked_sum / b,
    };

    if !report.total.is_finite() {
        let max_grad = mean_grads
            .values()
            .flat_map(|g| g.iter().map(|v| v.to_f64().abs()))
            .fold(0.0f64, f64::max);
        return Err(Error::Training(format!(
            "non-finite loss at iteration {iteration} (lr {:.3e}, max |grad| {:.3e})",
            cfg.lr_at(optimizer.steps_taken() + 1),
            max_grad
        )));
    }

    optimizer.apply(model, &mean_grads);
    Ok(report)
}

/// Uniformly sampled batch indices for one iteration; pure in `(seed, iter)`.
pub fn batch_indices(seed: u64, iteration: usize, batch_size: usize, n: usize) -> Vec<usize> {
    let mut rng = rng_from(seed, &[0xBA7C4, iteration as u64]);
    (0..batch_size).map(|_| rng.random_range(0..n)).collect()
}

/// Full training run: iterates `train_step` under the quantile schedule,
/// writes periodic checkpoints and a newline-delimited loss log when an
/// output directory is given.
pub fn train<E: Scalar>(
    model: &mut ModelBundle<E>,
    data: &TrainSet<E>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.encoded.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let mut optimizer = AdamW::new(cfg);
    let mut records = Vec::new();
    let mut batch_hash_bytes: Vec<u8> = Vec::new();
    let mut last_loss = f64::NAN;

    for iter in 0..cfg.iterations {
        let indices = batch_indices(cfg.seed, iter, cfg.batch_size, data.encoded.len());
        for &i in &indices {
            batch_hash_bytes.extend_from_slice(&(i as u64).to_le_bytes());
        }
        let batch: Vec<&EncodedImage<E>> = indices.iter().map(|&i| &data.encoded[i]).collect();
        let q = cfg.quantile_at(iter);
        let report = train_step(model, &mut optimizer, &batch, q, iter, cfg)?;
        last_loss = report.total;

        if iter % cfg.log_every.max(1) == 0 || iter + 1 == cfg.iterations {
            records.push(LossRecord {
                iteration: iter,
                loss: report.total,
                masked_fraction: report.masked_fraction,
                lr: optimizer.current_lr(),
            });
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0
                && iter + 1 != cfg.iterations
                && (iter + 1) % cfg.checkpoint_every == 0
            {
                crate::checkpoint::save(&dir.join(format!("model_{:06}.ckpt", iter + 1)), model)?;
            }
        }
    }

    if let Some(dir) = out_dir {
        crate::checkpoint::save(&dir.join("model.ckpt"), model)?;
        write_loss_log(&dir.join("loss_log.ndjson"), &records)?;
    }

    Ok(TrainOutcome {
        records,
        batch_hash: fnv1a(&batch_hash_bytes),
        final_loss: last_loss,
    })
}

/// Newline-delimited JSON records: iteration, loss, masked_fraction, lr.
pub fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
