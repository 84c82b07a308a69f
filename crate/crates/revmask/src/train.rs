//! Adversarial training: alternating critic/generator optimization with
//! weight clipping, deterministic resumability, and checkpointing.
//!
//! Each cycle runs `n_critic` critic updates followed by one generator
//! update. The critic ascends the Wasserstein objective on (real,
//! composite) pairs and is clipped into `[-clip_c, clip_c]` after every
//! step. The generator descends the combined feature loss plus a small
//! adversarial term on the composited output.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    read_manifest_validated, read_tensor_blobs, sha256_bytes, write_manifest_with_hash,
    write_tensor_blobs, TensorEntry,
};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureExtractorSpec};
use crate::image::Image;
use crate::losses::{generator_loss_grad_batch, wasserstein_loss, GeneratorLossParts, LossWeights};
use crate::model::{images_to_batch, masks_to_batch, Critic, CriticSpec, Generator, GeneratorSpec, NamedTensor, ParameterSet};
use crate::nn::adam::Adam;
use crate::nn::Batch;
use crate::rng::{child_seed, rng_from};
use crate::synth::{MaskSource, MaskSourceConfig};

/// Training hyperparameters. The critic learning rate default preserves
/// the published setting of 1e-12, which effectively freezes the critic;
/// practical runs override it (the smoke suite uses 1e-4).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_generator: f64,
    pub lr_critic: f64,
    pub adam_beta1: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Critic updates per generator update.
    pub n_critic: usize,
    pub clip_c: f64,
    pub lambda: f64,
    /// Weight of the adversarial term in the generator objective.
    pub adv_weight: f64,
    pub seed: u64,
    pub image_size: usize,
    /// Periodic checkpoint interval in generator steps; 0 = final only.
    pub checkpoint_every: usize,
    /// Sample one mask per dataset image up front instead of resampling
    /// every step.
    pub fixed_masks: bool,
    pub generator: GeneratorSpec,
    pub critic: CriticSpec,
    pub extractor: FeatureExtractorSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_generator: 1e-4,
            lr_critic: 1e-12,
            adam_beta1: 0.9,
            batch_size: 5,
            epochs: 1,
            n_critic: 5,
            clip_c: 0.01,
            lambda: 0.4,
            adv_weight: 1e-3,
            seed: 0,
            image_size: 256,
            checkpoint_every: 0,
            fixed_masks: false,
            generator: GeneratorSpec::default(),
            critic: CriticSpec::default(),
            extractor: FeatureExtractorSpec::seeded_standard(0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_generator <= 0.0 || self.lr_critic <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.n_critic < 1 {
            return Err(Error::Config("n_critic must be >= 1".into()));
        }
        if self.clip_c <= 0.0 {
            return Err(Error::Config("clip constant must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0,1]", self.lambda)));
        }
        if self.adv_weight < 0.0 {
            return Err(Error::Config("adversarial weight must be >= 0".into()));
        }
        let div = self.generator.spatial_divisor();
        if self.image_size == 0 || self.image_size % div != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by the generator's 2^depth = {div}",
                self.image_size
            )));
        }
        self.generator.validate()?;
        self.critic.validate()?;
        if self.lr_critic < 1e-9 {
            log::warn!(
                "critic learning rate {:e} effectively freezes the critic; override for practical runs",
                self.lr_critic
            );
        }
        Ok(())
    }
}

/// Per-generator-step loss record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub l_p: f64,
    pub l_rm: f64,
    pub l_g: f64,
    pub l_w: f64,
    pub wall_secs: f64,
}

/// Mutable training state: networks, optimizer moments, rng stream,
/// step counters, and the append-only loss history.
pub struct TrainState {
    pub generator: Generator,
    pub critic: Critic,
    pub opt_g: Adam,
    pub opt_c: Adam,
    pub rng: ChaCha8Rng,
    pub gen_steps: u64,
    pub critic_steps: u64,
    pub epoch: u64,
    pub history: Vec<StepRecord>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(TrainState {
            generator: Generator::new(cfg.generator.clone(), child_seed(cfg.seed, "generator-init"))?,
            critic: Critic::new(cfg.critic.clone(), child_seed(cfg.seed, "critic-init"))?,
            opt_g: Adam::new(cfg.lr_generator as f32, cfg.adam_beta1 as f32),
            opt_c: Adam::new(cfg.lr_critic as f32, cfg.adam_beta1 as f32),
            rng: rng_from(child_seed(cfg.seed, "train-stream")),
            gen_steps: 0,
            critic_steps: 0,
            epoch: 0,
            history: Vec::new(),
        })
    }

    fn ensure_finite(&self, what: &str) -> Result<()> {
        if !self.generator.params().all_finite() || !self.critic.params().all_finite() {
            return Err(Error::NonFinite(format!(
                "parameters after {what} (gen step {}, critic step {})",
                self.gen_steps, self.critic_steps
            )));
        }
        Ok(())
    }
}

fn apply_mask_batch(x: &Batch, masks: &Batch) -> Batch {
    let (n, c, _, _) = x.dim();
    let mut out = x.clone();
    for ni in 0..n {
        let m = masks.index_axis(Axis(0), ni);
        let m = m.index_axis(Axis(0), 0);
        for ci in 0..c {
            let mut plane = out.index_axis_mut(Axis(0), ni);
            let mut plane = plane.index_axis_mut(Axis(0), ci);
            plane.zip_mut_with(&m, |v, &mv| {
                if mv == 0.0 {
                    *v = 0.0;
                }
            });
        }
    }
    out
}

fn composite_batch(real: &Batch, pred: &Batch, masks: &Batch) -> Batch {
    let (n, c, _, _) = real.dim();
    let mut out = pred.clone();
    for ni in 0..n {
        let m = masks.index_axis(Axis(0), ni);
        let m = m.index_axis(Axis(0), 0);
        for ci in 0..c {
            let src = real.index_axis(Axis(0), ni);
            let src = src.index_axis(Axis(0), ci);
            let mut plane = out.index_axis_mut(Axis(0), ni);
            let mut plane = plane.index_axis_mut(Axis(0), ci);
            ndarray::Zip::from(&mut plane).and(&src).and(&m).for_each(|o, &r, &mv| {
                if mv == 1.0 {
                    *o = r;
                }
            });
        }
    }
    out
}

/// Zero gradients where the mask is visible (chain rule through
/// `pred ⊙ M_r`).
fn holes_only_grad(grad: &mut Batch, masks: &Batch) {
    let (n, c, _, _) = grad.dim();
    for ni in 0..n {
        let m = masks.index_axis(Axis(0), ni);
        let m = m.index_axis(Axis(0), 0);
        for ci in 0..c {
            let mut plane = grad.index_axis_mut(Axis(0), ni);
            let mut plane = plane.index_axis_mut(Axis(0), ci);
            plane.zip_mut_with(&m, |v, &mv| {
                if mv != 0.0 {
                    *v = 0.0;
                }
            });
        }
    }
}

/// One critic update on an aligned (real, masked, masks) batch. Ascends
/// the Wasserstein objective, then clips. The generator is untouched.
pub fn critic_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    real: &Batch,
    masked: &Batch,
    masks: &Batch,
) -> Result<f64> {
    let n = real.dim().0;
    let pred = state.generator.forward(masked, masks)?;
    let fake = composite_batch(real, &pred, masks);

    let (real_scores, real_cache) = state.critic.forward_with_cache(real)?;
    let (fake_scores, fake_cache) = state.critic.forward_with_cache(&fake)?;
    let l_w = wasserstein_loss(real_scores.as_slice().unwrap(), fake_scores.as_slice().unwrap())?;
    if !l_w.is_finite() {
        return Err(Error::NonFinite(format!(
            "wasserstein loss at critic step {} (gen step {})",
            state.critic_steps, state.gen_steps
        )));
    }

    // ascend l_w == descend -l_w
    let g_real = Array1::from_elem(n, -1.0f32 / n as f32);
    let g_fake = Array1::from_elem(n, 1.0f32 / n as f32);
    let (mut grads, _) = state.critic.backward(&real_cache, &g_real);
    let (grads_fake, _) = state.critic.backward(&fake_cache, &g_fake);
    grads.add(&grads_fake);
    if !grads.all_finite() {
        return Err(Error::NonFinite(format!("critic gradients at step {}", state.critic_steps)));
    }

    state.opt_c.begin_step();
    let mut idx = 0;
    let opt = &mut state.opt_c;
    state.critic.visit_tensors_mut(|name, data| {
        opt.update(name, data, &grads.tensors[idx].1);
        idx += 1;
    });
    state.critic.clip(cfg.clip_c as f32);
    state.critic_steps += 1;
    state.ensure_finite("critic step")?;
    Ok(l_w)
}

/// One generator update; the critic is untouched. Returns the combined
/// loss parts.
pub fn generator_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    fx: &FeatureExtractor,
    real: &Batch,
    masked: &Batch,
    masks: &Batch,
) -> Result<GeneratorLossParts> {
    let n = real.dim().0;
    let cache = state.generator.forward_with_cache(masked, masks)?;
    let pred = cache.output().clone();

    let weights = LossWeights::new(cfg.lambda)?;
    let (parts, mut grad_pred) = generator_loss_grad_batch(fx, real, &pred, masks, weights)?;
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!("generator loss at step {}", state.gen_steps)));
    }

    if cfg.adv_weight > 0.0 {
        // generator minimizes -mean(critic(composite))
        let comp = composite_batch(real, &pred, masks);
        let (_, critic_cache) = state.critic.forward_with_cache(&comp)?;
        let g_scores = Array1::from_elem(n, -(cfg.adv_weight as f32) / n as f32);
        let (_, mut g_comp) = state.critic.backward(&critic_cache, &g_scores);
        holes_only_grad(&mut g_comp, masks);
        grad_pred.zip_mut_with(&g_comp, |a, &b| *a += b);
    }

    let (grads, _) = state.generator.backward(&cache, &grad_pred);
    if !grads.all_finite() {
        return Err(Error::NonFinite(format!("generator gradients at step {}", state.gen_steps)));
    }

    state.opt_g.begin_step();
    let mut idx = 0;
    let opt = &mut state.opt_g;
    state.generator.visit_tensors_mut(|name, data| {
        opt.update(name, data, &grads.tensors[idx].1);
        idx += 1;
    });
    state.gen_steps += 1;
    state.ensure_finite("generator step")?;
    Ok(parts)
}

/// Full training run: builds fresh state and loops `cfg.epochs` epochs.
/// Checkpoints land under `out_dir` when given (periodic per
/// `checkpoint_every` plus a final one).
pub fn train(
    cfg: &TrainConfig,
    images: &[Image],
    mask_cfg: &MaskSourceConfig,
    out_dir: Option<&Path>,
) -> Result<TrainState> {
    let mut state = TrainState::new(cfg)?;
    train_loop(cfg, &mut state, images, mask_cfg, out_dir)?;
    Ok(state)
}

/// Continue an existing state to `cfg.epochs` epochs.
pub fn train_loop(
    cfg: &TrainConfig,
    state: &mut TrainState,
    images: &[Image],
    mask_cfg: &MaskSourceConfig,
    out_dir: Option<&Path>,
) -> Result<()> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    for img in images {
        if img.height() != cfg.image_size || img.width() != cfg.image_size {
            return Err(Error::shape(
                "training image",
                format!("{0}x{0}", cfg.image_size),
                format!("{}x{}", img.height(), img.width()),
            ));
        }
    }
    if (mask_cfg.target_height, mask_cfg.target_width) != (cfg.image_size, cfg.image_size) {
        return Err(Error::Config(format!(
            "mask target {}x{} does not match image size {}",
            mask_cfg.target_height, mask_cfg.target_width, cfg.image_size
        )));
    }

    let fx = FeatureExtractor::new(&cfg.extractor)?;
    let source = MaskSource::new(mask_cfg.clone())?;

    // masks fixed per image for the whole run, or resampled per batch
    let fixed: Option<Vec<crate::mask::BinaryMask>> = if cfg.fixed_masks {
        let mut v = Vec::with_capacity(images.len());
        for i in 0..images.len() {
            v.push(source.sample(crate::rng::child_seed_indexed(cfg.seed, "fixed-mask", i as u64))?);
        }
        Some(v)
    } else {
        None
    };

    // cycle position persists across epoch boundaries so short epochs
    // still alternate correctly
    let mut cycle_lw: Vec<f64> = Vec::new();
    let mut in_cycle = 0usize; // 0..n_critic are critic slots, n_critic is the generator slot
    let mut cycle_start = Instant::now();
    while state.epoch < cfg.epochs as u64 {
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut state.rng);

        let mut cursor = 0usize;
        while cursor < order.len() {
            let end = (cursor + cfg.batch_size).min(order.len());
            let idxs = &order[cursor..end];
            cursor = end;

            let batch_imgs: Vec<Image> = idxs.iter().map(|&i| images[i].clone()).collect();
            let real = images_to_batch(&batch_imgs)?;
            let masks = match &fixed {
                Some(per_image) => {
                    let ms: Vec<crate::mask::BinaryMask> = idxs.iter().map(|&i| per_image[i].clone()).collect();
                    masks_to_batch(&ms)
                }
                None => {
                    let seeds: Vec<u64> = idxs.iter().map(|_| state.rng.gen()).collect();
                    let ms: Vec<crate::mask::BinaryMask> =
                        seeds.into_iter().map(|s| source.sample(s)).collect::<Result<_>>()?;
                    masks_to_batch(&ms)
                }
            };
            let masked = apply_mask_batch(&real, &masks);

            if in_cycle < cfg.n_critic {
                let l_w = critic_step(state, cfg, &real, &masked, &masks)?;
                cycle_lw.push(l_w);
                in_cycle += 1;
            } else {
                let parts = generator_step(state, cfg, &fx, &real, &masked, &masks)?;
                let l_w = if cycle_lw.is_empty() {
                    0.0
                } else {
                    cycle_lw.iter().sum::<f64>() / cycle_lw.len() as f64
                };
                state.history.push(StepRecord {
                    step: state.gen_steps,
                    l_p: parts.perceptual,
                    l_rm: parts.reverse_mask,
                    l_g: parts.total,
                    l_w,
                    wall_secs: cycle_start.elapsed().as_secs_f64(),
                });
                cycle_lw.clear();
                in_cycle = 0;
                cycle_start = Instant::now();

                if let Some(dir) = out_dir {
                    if cfg.checkpoint_every > 0 && state.gen_steps % cfg.checkpoint_every as u64 == 0 {
                        let ckpt = dir.join(format!("checkpoints/step_{:06}", state.gen_steps));
                        save_checkpoint(&ckpt, cfg, state, fx.identity())?;
                    }
                }
            }
        }
        state.epoch += 1;
    }

    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("checkpoints/final"), cfg, state, fx.identity())?;
        write_step_log(&dir.join("steps.csv"), &state.history)?;
    }
    Ok(())
}

/// Append-only CSV step log.
pub fn write_step_log(path: &Path, history: &[StepRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = String::from("step,l_p,l_rm,l_g,l_w,wall_secs\n");
    for r in history {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.l_p, r.l_rm, r.l_g, r.l_w, r.wall_secs
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn parse_step_log(text: &str) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::CorruptCheckpoint(format!("history row {i} malformed")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::CorruptCheckpoint(format!("history row {i} malformed")))
        };
        out.push(StepRecord {
            step: fields[0]
                .parse()
                .map_err(|_| Error::CorruptCheckpoint(format!("history row {i} malformed")))?,
            l_p: parse(fields[1])?,
            l_rm: parse(fields[2])?,
            l_g: parse(fields[3])?,
            l_w: parse(fields[4])?,
            wall_secs: parse(fields[5])?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TrainManifest {
    format: String,
    kind: String,
    gen_steps: u64,
    critic_steps: u64,
    epoch: u64,
    extractor_identity: String,
    rng_seed_hex: String,
    rng_word_pos: String,
    adam_g_steps: u64,
    adam_c_steps: u64,
    history_file: String,
    history_sha256: String,
    config: TrainConfig,
    tensors: Vec<TensorEntry>,
}

fn moment_tensors(prefix: &str, model_params: &ParameterSet, opt: &Adam) -> Vec<NamedTensor> {
    let (_, state) = opt.export_state();
    let mut out = Vec::new();
    for (name, m, v) in state {
        let shape = model_params
            .get(&name)
            .map(|t| t.shape.clone())
            .unwrap_or_else(|| vec![m.len()]);
        out.push(NamedTensor { name: format!("{prefix}.{name}.m"), shape: shape.clone(), data: m });
        out.push(NamedTensor { name: format!("{prefix}.{name}.v"), shape, data: v });
    }
    out
}

/// Write a lossless snapshot of the training run.
pub fn save_checkpoint(dir: &Path, cfg: &TrainConfig, state: &TrainState, fx_identity: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut tensors: Vec<NamedTensor> = Vec::new();
    let g_params = state.generator.params();
    let c_params = state.critic.params();
    for t in &g_params.tensors {
        tensors.push(NamedTensor { name: format!("g.{}", t.name), shape: t.shape.clone(), data: t.data.clone() });
    }
    for t in &c_params.tensors {
        tensors.push(NamedTensor { name: format!("c.{}", t.name), shape: t.shape.clone(), data: t.data.clone() });
    }
    tensors.extend(moment_tensors("opt_g", &g_params, &state.opt_g));
    tensors.extend(moment_tensors("opt_c", &c_params, &state.opt_c));

    let entries = write_tensor_blobs(dir, &tensors)?;

    let mut history_text = String::from("step,l_p,l_rm,l_g,l_w,wall_secs\n");
    for r in &state.history {
        history_text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.l_p, r.l_rm, r.l_g, r.l_w, r.wall_secs
        ));
    }
    std::fs::write(dir.join("history.csv"), history_text.as_bytes())?;

    let seed_hex: String = state.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    let manifest = TrainManifest {
        format: "revmask-checkpoint-v1".into(),
        kind: "train-state".into(),
        gen_steps: state.gen_steps,
        critic_steps: state.critic_steps,
        epoch: state.epoch,
        extractor_identity: fx_identity.to_string(),
        rng_seed_hex: seed_hex,
        rng_word_pos: state.rng.get_word_pos().to_string(),
        adam_g_steps: state.opt_g.step_count(),
        adam_c_steps: state.opt_c.step_count(),
        history_file: "history.csv".into(),
        history_sha256: sha256_bytes(history_text.as_bytes()),
        config: cfg.clone(),
        tensors: entries,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    write_manifest_with_hash(dir, &text)
}

/// Load a checkpoint: config, rebuilt state, and the recorded extractor
/// identity. Every hash is validated before anything is trusted.
pub fn load_checkpoint(dir: &Path) -> Result<(TrainConfig, TrainState, String)> {
    let text = read_manifest_validated(dir)?;
    let manifest: TrainManifest = toml::from_str(&text)
        .map_err(|e| Error::CorruptCheckpoint(format!("manifest parse: {e}")))?;
    if manifest.kind != "train-state" {
        return Err(Error::CorruptCheckpoint(format!(
            "expected a train-state checkpoint, found kind {}",
            manifest.kind
        )));
    }
    let cfg = manifest.config.clone();
    cfg.validate()?;

    let tensors = read_tensor_blobs(dir, &manifest.tensors)?;
    let find = |name: &str| -> Result<&NamedTensor> {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))
    };

    let mut state = TrainState::new(&cfg)?;

    let mut g_params = state.generator.params();
    for t in &mut g_params.tensors {
        t.data = find(&format!("g.{}", t.name))?.data.clone();
    }
    state.generator.set_params(&g_params)?;
    let mut c_params = state.critic.params();
    for t in &mut c_params.tensors {
        t.data = find(&format!("c.{}", t.name))?.data.clone();
    }
    state.critic.set_params(&c_params)?;

    let restore_opt = |prefix: &str, params: &ParameterSet, steps: u64| -> Result<Vec<(String, Vec<f32>, Vec<f32>)>> {
        let mut out = Vec::new();
        for t in &params.tensors {
            let m = find(&format!("{prefix}.{}.m", t.name));
            let v = find(&format!("{prefix}.{}.v", t.name));
            match (m, v) {
                (Ok(m), Ok(v)) => out.push((t.name.clone(), m.data.clone(), v.data.clone())),
                // a fresh optimizer has no moments yet
                _ if steps == 0 => {}
                (m, v) => {
                    m?;
                    v?;
                }
            }
        }
        Ok(out)
    };
    let g_moments = restore_opt("opt_g", &g_params, manifest.adam_g_steps)?;
    state.opt_g.restore_state(manifest.adam_g_steps, g_moments);
    let c_moments = restore_opt("opt_c", &c_params, manifest.adam_c_steps)?;
    state.opt_c.restore_state(manifest.adam_c_steps, c_moments);

    // rng stream: seed bytes + word position
    if manifest.rng_seed_hex.len() != 64 {
        return Err(Error::CorruptCheckpoint("rng seed malformed".into()));
    }
    let mut seed = [0u8; 32];
    for i in 0..32 {
        seed[i] = u8::from_str_radix(&manifest.rng_seed_hex[2 * i..2 * i + 2], 16)
            .map_err(|_| Error::CorruptCheckpoint("rng seed malformed".into()))?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    let word_pos: u128 = manifest
        .rng_word_pos
        .parse()
        .map_err(|_| Error::CorruptCheckpoint("rng position malformed".into()))?;
    rng.set_word_pos(word_pos);
    state.rng = rng;

    state.gen_steps = manifest.gen_steps;
    state.critic_steps = manifest.critic_steps;
    state.epoch = manifest.epoch;

    let history_text = std::fs::read_to_string(dir.join(&manifest.history_file))
        .map_err(|e| Error::CorruptCheckpoint(format!("history missing: {e}")))?;
    if sha256_bytes(history_text.as_bytes()) != manifest.history_sha256 {
        return Err(Error::CorruptCheckpoint("history hash mismatch".into()));
    }
    state.history = parse_step_log(&history_text)?;

    Ok((cfg, state, manifest.extractor_identity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ValueRange;
    use crate::synth::StrokeSpec;
    use ndarray::Array3;
    use tempfile::tempdir;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            lr_critic: 1e-4,
            batch_size: 2,
            epochs: 1,
            n_critic: 2,
            image_size: 16,
            generator: GeneratorSpec { base_filters: 4, encoder_depth: 2, ..GeneratorSpec::default() },
            critic: CriticSpec { depth: 2, base_filters: 4, ..CriticSpec::default() },
            extractor: FeatureExtractorSpec::seeded_small(0),
            ..TrainConfig::default()
        }
    }

    fn tiny_masks() -> MaskSourceConfig {
        MaskSourceConfig::synthesize(
            StrokeSpec { canvas_height: 16, canvas_width: 16, thickness_min: 2, thickness_max: 4, ..Default::default() },
            0,
        )
    }

    fn tiny_images(n: usize) -> Vec<Image> {
        (0..n)
            .map(|i| {
                let mut rng = crate::rng::rng_from(900 + i as u64);
                use rand::Rng;
                Image::new(
                    Array3::from_shape_simple_fn((3, 16, 16), || rng.gen_range(-1.0f32..=1.0)),
                    ValueRange::Model,
                )
                .unwrap()
            })
            .collect()
    }

    fn batch_of(images: &[Image], masks_cfg: &MaskSourceConfig, seed: u64) -> (Batch, Batch, Batch) {
        let source = MaskSource::new(masks_cfg.clone()).unwrap();
        let real = images_to_batch(images).unwrap();
        let ms: Vec<crate::mask::BinaryMask> =
            (0..images.len()).map(|i| source.sample(seed + i as u64).unwrap()).collect();
        let masks = masks_to_batch(&ms);
        let masked = apply_mask_batch(&real, &masks);
        (real, masked, masks)
    }

    #[test]
    fn zeroed_critic_gives_zero_wasserstein_loss() {
        let cfg = tiny_config();
        let mut state = TrainState::new(&cfg).unwrap();
        let mut params = state.critic.params();
        for t in &mut params.tensors {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        state.critic.set_params(&params).unwrap();
        let imgs = tiny_images(2);
        let (real, masked, masks) = batch_of(&imgs, &tiny_masks(), 1);
        let l_w = critic_step(&mut state, &cfg, &real, &masked, &masks).unwrap();
        assert_eq!(l_w, 0.0);
    }

    #[test]
    fn critic_step_clips_and_leaves_generator_untouched() {
        let cfg = tiny_config();
        let mut state = TrainState::new(&cfg).unwrap();
        let gen_hash = state.generator.params().sha256_hex();
        let imgs = tiny_images(2);
        let (real, masked, masks) = batch_of(&imgs, &tiny_masks(), 2);
        critic_step(&mut state, &cfg, &real, &masked, &masks).unwrap();
        assert!(state.critic.params().max_abs() <= cfg.clip_c as f32);
        assert_eq!(state.generator.params().sha256_hex(), gen_hash);
        assert_eq!(state.critic_steps, 1);
    }

    #[test]
    fn generator_step_leaves_critic_untouched_and_logs_components() {
        let mut cfg = tiny_config();
        cfg.lambda = 0.0;
        let mut state = TrainState::new(&cfg).unwrap();
        let fx = FeatureExtractor::new(&cfg.extractor).unwrap();
        let critic_hash = state.critic.params().sha256_hex();
        let imgs = tiny_images(2);
        let (real, masked, masks) = batch_of(&imgs, &tiny_masks(), 3);
        let parts = generator_step(&mut state, &cfg, &fx, &real, &masked, &masks).unwrap();
        assert_eq!(state.critic.params().sha256_hex(), critic_hash);
        // λ=0: combined loss equals the perceptual component exactly
        assert_eq!(parts.total, parts.perceptual);
        assert_eq!(state.gen_steps, 1);
    }

    #[test]
    fn zero_epochs_returns_initial_state_with_empty_history() {
        let mut cfg = tiny_config();
        cfg.epochs = 0;
        let state = train(&cfg, &tiny_images(4), &tiny_masks(), None).unwrap();
        assert!(state.history.is_empty());
        assert_eq!(state.gen_steps, 0);
        assert_eq!(state.epoch, 0);
    }

    #[test]
    fn alternation_bookkeeping_holds() {
        let mut cfg = tiny_config();
        cfg.epochs = 2;
        // 8 images, batch 2 -> 4 batches/epoch; cycle = 2 critic + 1 gen
        let state = train(&cfg, &tiny_images(8), &tiny_masks(), None).unwrap();
        let full_cycles = state.gen_steps;
        assert!(full_cycles >= 1);
        // critic steps == n_critic * gen_steps, modulo the final partial cycle
        let expected = cfg.n_critic as u64 * full_cycles;
        assert!(
            state.critic_steps >= expected && state.critic_steps <= expected + cfg.n_critic as u64,
            "critic {} vs gen {}",
            state.critic_steps,
            state.gen_steps
        );
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let mut cfg = tiny_config();
        cfg.epochs = 1;
        let imgs = tiny_images(4);
        let a = train(&cfg, &imgs, &tiny_masks(), None).unwrap();
        let b = train(&cfg, &imgs, &tiny_masks(), None).unwrap();
        assert_eq!(a.generator.params().sha256_hex(), b.generator.params().sha256_hex());
        assert_eq!(a.critic.params().sha256_hex(), b.critic.params().sha256_hex());
        let la: Vec<f64> = a.history.iter().map(|r| r.l_g).collect();
        let lb: Vec<f64> = b.history.iter().map(|r| r.l_g).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn fixed_masks_reuse_the_same_mask_per_image() {
        let mut cfg = tiny_config();
        cfg.fixed_masks = true;
        cfg.epochs = 1;
        // smoke: just verify the run completes and is deterministic
        let imgs = tiny_images(4);
        let a = train(&cfg, &imgs, &tiny_masks(), None).unwrap();
        let b = train(&cfg, &imgs, &tiny_masks(), None).unwrap();
        assert_eq!(a.generator.params().sha256_hex(), b.generator.params().sha256_hex());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let mut cfg = tiny_config();
        cfg.epochs = 1;
        let imgs = tiny_images(4);
        let state = train(&cfg, &imgs, &tiny_masks(), None).unwrap();
        let dir = tempdir().unwrap();
        save_checkpoint(dir.path(), &cfg, &state, "fx-id").unwrap();
        let (cfg2, state2, fx_id) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(fx_id, "fx-id");
        assert_eq!(state2.generator.params(), state.generator.params());
        assert_eq!(state2.critic.params(), state.critic.params());
        assert_eq!(state2.gen_steps, state.gen_steps);
        assert_eq!(state2.history, state.history);

        // save -> load -> save produces identical bytes
        let dir2 = tempdir().unwrap();
        save_checkpoint(dir2.path(), &cfg2, &state2, &fx_id).unwrap();
        let m1 = std::fs::read(dir.path().join("manifest.toml")).unwrap();
        let m2 = std::fs::read(dir2.path().join("manifest.toml")).unwrap();
        assert_eq!(m1, m2);
        let h1 = std::fs::read(dir.path().join("history.csv")).unwrap();
        let h2 = std::fs::read(dir2.path().join("history.csv")).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let imgs = tiny_images(4);
        let masks = tiny_masks();

        // uninterrupted: 2 epochs
        let mut cfg2 = tiny_config();
        cfg2.epochs = 2;
        let full = train(&cfg2, &imgs, &masks, None).unwrap();

        // interrupted: 1 epoch, checkpoint, resume to 2
        let mut cfg1 = tiny_config();
        cfg1.epochs = 1;
        let state1 = train(&cfg1, &imgs, &masks, None).unwrap();
        let dir = tempdir().unwrap();
        save_checkpoint(dir.path(), &cfg1, &state1, "fx").unwrap();
        let (_, mut resumed, _) = load_checkpoint(dir.path()).unwrap();
        train_loop(&cfg2, &mut resumed, &imgs, &masks, None).unwrap();

        assert_eq!(
            resumed.generator.params().sha256_hex(),
            full.generator.params().sha256_hex()
        );
        assert_eq!(resumed.critic.params().sha256_hex(), full.critic.params().sha256_hex());
        assert_eq!(resumed.gen_steps, full.gen_steps);
    }

    #[test]
    fn truncated_checkpoint_blob_errors_cleanly() {
        let cfg = tiny_config();
        let state = TrainState::new(&cfg).unwrap();
        let dir = tempdir().unwrap();
        save_checkpoint(dir.path(), &cfg, &state, "fx").unwrap();
        // truncate one tensor blob
        let blob = dir.path().join("tensors/g.enc0.weight.bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_checkpoint(dir.path()).err().expect("load should fail");
        assert!(matches!(err, Error::CorruptCheckpoint(_)), "{err}");
    }

    #[test]
    fn edited_manifest_errors_with_hash_mismatch() {
        let cfg = tiny_config();
        let state = TrainState::new(&cfg).unwrap();
        let dir = tempdir().unwrap();
        save_checkpoint(dir.path(), &cfg, &state, "fx").unwrap();
        let path = dir.path().join("manifest.toml");
        let text = std::fs::read_to_string(&path).unwrap().replace("gen_steps = 0", "gen_steps = 5");
        std::fs::write(&path, text).unwrap();
        let err = load_checkpoint(dir.path()).err().expect("load should fail");
        assert!(err.to_string().contains("manifest hash mismatch"), "{err}");
    }
}
