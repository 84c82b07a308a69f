//! Command implementations behind the `revmask` binary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::RunConfig;
use crate::data;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{apply_mask, composite, HoleRatioBucket};
use crate::metrics::{evaluate_with, EmbeddingExtractor, EvalOptions, MetricReport};
use crate::synth::{binarize_and_resize, load_mask_plane, MaskSource};
use crate::train::{load_checkpoint, train, TrainState};

/// Shared CLI overrides: `--seed` and `--out` replace the config values.
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn apply_overrides(cfg: &mut RunConfig, overrides: &Overrides) {
    if let Some(seed) = overrides.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.run.out_dir = out.clone();
    }
}

fn load_config(config_path: &Path, overrides: &Overrides) -> Result<(RunConfig, String)> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", config_path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    apply_overrides(&mut cfg, overrides);
    cfg.validate()?;
    Ok((cfg, text))
}

/// Copy the config into the output directory so every run is reproducible
/// from its artifacts.
fn stamp_out_dir(cfg: &RunConfig, original_text: &str) -> Result<()> {
    std::fs::create_dir_all(&cfg.run.out_dir)?;
    std::fs::write(cfg.run.out_dir.join("config.toml"), original_text)?;
    let effective = toml::to_string_pretty(cfg).map_err(|e| Error::Config(format!("{e}")))?;
    std::fs::write(cfg.run.out_dir.join("config.effective.toml"), effective)?;
    Ok(())
}

fn load_model_images(files: &[PathBuf], size: usize) -> Result<Vec<Image>> {
    files.iter().map(|p| data::preprocess(p, size, size)).collect()
}

fn split_spec(cfg: &RunConfig) -> data::SplitSpec {
    match (&cfg.data.train_manifest, &cfg.data.test_manifest) {
        (Some(train), Some(test)) => data::SplitSpec::Manifests { train: train.clone(), test: test.clone() },
        _ => data::SplitSpec::Fraction {
            train_fraction: cfg.data.train_fraction,
            seed: crate::rng::child_seed(cfg.run.seed, "split"),
        },
    }
}

/// `train`: run the full training loop from a config file.
pub fn cmd_train(config_path: &Path, overrides: &Overrides) -> Result<()> {
    // validation happens before any output-directory work
    let (cfg, text) = load_config(config_path, overrides)?;
    let split = data::load_split(&cfg.data.root, &split_spec(&cfg))?;
    if split.train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    stamp_out_dir(&cfg, &text)?;
    split.write_manifests(&cfg.run.out_dir.join("split"), &cfg.data.root)?;

    log::info!("loading {} training images at {}px", split.train.len(), cfg.run.image_size);
    let images = load_model_images(&split.train, cfg.run.image_size)?;
    let tc = cfg.train_config();
    let state = train(&tc, &images, &cfg.mask_source_config(), Some(&cfg.run.out_dir))?;
    log::info!(
        "training done: {} generator steps, {} critic steps, final L_G {:.6}",
        state.gen_steps,
        state.critic_steps,
        state.history.last().map(|r| r.l_g).unwrap_or(f64::NAN)
    );
    println!(
        "trained {} generator steps; checkpoint at {}",
        state.gen_steps,
        cfg.run.out_dir.join("checkpoints/final").display()
    );
    Ok(())
}

fn report_summary(report: &MetricReport) -> String {
    format!(
        "n={} fid={:.4} mae={:.4} psnr={:.2}dB ssim={:.4}{}",
        report.overall.count,
        report.overall.fid,
        report.overall.mae,
        report.overall.psnr_db,
        report.overall.ssim,
        if report.failures.is_empty() {
            String::new()
        } else {
            format!(" ({} failures)", report.failures.len())
        }
    )
}

fn run_eval(cfg: &RunConfig, state: &TrainState, out_dir: &Path) -> Result<MetricReport> {
    let split = data::load_split(&cfg.data.root, &split_spec(cfg))?;
    if split.test.is_empty() {
        return Err(Error::Dataset("test split is empty".into()));
    }
    let size = cfg.run.image_size;
    let test_images: Result<Vec<Image>> = split
        .test
        .iter()
        .map(|p| Ok(data::preprocess(p, size, size)?.to_unit8()))
        .collect();
    let test_images = test_images?;

    let embedder = EmbeddingExtractor::new(&cfg.embedder_spec())?;
    let opts = EvalOptions {
        buckets: cfg.eval_buckets(),
        max_mask_tries: cfg.eval.max_mask_tries,
        seed: crate::rng::child_seed(cfg.run.seed, "eval"),
    };
    let gen = &state.generator;
    let report = evaluate_with(
        |masked, mask| gen.infer(masked, mask),
        &test_images,
        &cfg.mask_source_config(),
        &opts,
        &embedder,
    )?;
    report.write_csv(&out_dir.join("metrics.csv"))?;

    if cfg.eval.grid_rows > 0 {
        let rows = grid_rows(gen, &test_images, cfg, cfg.eval.grid_rows)?;
        crate::metrics::write_comparison_grid(&out_dir.join("comparison.png"), &rows)?;
    }
    Ok(report)
}

fn grid_rows(
    gen: &crate::model::Generator,
    test_images: &[Image],
    cfg: &RunConfig,
    count: usize,
) -> Result<Vec<(Image, Image, Image)>> {
    let source = MaskSource::new(cfg.mask_source_config())?;
    let mut rows = Vec::new();
    for (i, img) in test_images.iter().take(count).enumerate() {
        let mask = source.sample(crate::rng::child_seed_indexed(cfg.run.seed, "grid", i as u64))?;
        let gt8 = img.to_unit8();
        let masked = apply_mask(&img.to_model(), &mask)?;
        let pred = gen.infer(&masked, &mask)?;
        let comp = composite(&gt8, &pred.to_unit8(), &mask)?;
        rows.push((masked.to_unit8(), comp, gt8));
    }
    Ok(rows)
}

/// `eval`: score a checkpoint over the test split.
pub fn cmd_eval(config_path: &Path, checkpoint: &Path, overrides: &Overrides) -> Result<()> {
    let (cfg, _) = load_config(config_path, overrides)?;
    let (_, state, fx_id) = load_checkpoint(checkpoint)?;
    log::info!("evaluating checkpoint trained with extractor {fx_id}");
    std::fs::create_dir_all(&cfg.run.out_dir)?;
    let report = run_eval(&cfg, &state, &cfg.run.out_dir)?;
    println!("eval: {}", report_summary(&report));
    for (i, err) in &report.failures {
        log::warn!("image {i} failed: {err}");
    }
    Ok(())
}

/// `inpaint`: fill one image's holes with a checkpointed generator.
/// Visible pixels are preserved bit-exactly through the 8-bit round trip.
pub fn cmd_inpaint(checkpoint: &Path, image_path: &Path, mask_path: &Path, out_path: &Path) -> Result<()> {
    let (cfg, state, _) = load_checkpoint(checkpoint)?;
    let img = data::load_image(image_path)?;
    let raw_mask = load_mask_plane(mask_path)?;
    let mask_cfg = crate::synth::MaskSourceConfig::load_directory(
        mask_path.parent().unwrap_or(Path::new(".")),
        (img.height(), img.width()),
        0,
    );
    let mask = binarize_and_resize(&raw_mask, &mask_cfg)?;

    let div = cfg.generator.spatial_divisor();
    if img.height() % div != 0 || img.width() % div != 0 {
        return Err(Error::shape(
            "inpaint input",
            format!("dims divisible by {div}"),
            format!("{}x{}", img.height(), img.width()),
        ));
    }

    let masked = apply_mask(&img.to_model(), &mask)?;
    let start = Instant::now();
    let pred = state.generator.infer(&masked, &mask)?;
    let latency = start.elapsed().as_secs_f64();
    let comp = composite(&img, &pred.to_unit8(), &mask)?;
    data::save_image_png(out_path, &comp)?;
    println!(
        "inpainted {} ({}x{}, hole ratio {:.3}) in {:.3}s -> {}",
        image_path.display(),
        img.width(),
        img.height(),
        mask.hole_ratio(),
        latency,
        out_path.display()
    );
    Ok(())
}

/// `make-masks`: write synthesized masks plus a CSV manifest
/// (filename, hole_ratio, seed).
pub fn cmd_make_masks(
    config_path: &Path,
    count: usize,
    bucket: Option<(f64, f64)>,
    overrides: &Overrides,
) -> Result<()> {
    let (cfg, _) = load_config(config_path, overrides)?;
    let out_dir = cfg.run.out_dir.join("masks");
    std::fs::create_dir_all(&out_dir)?;
    let source = MaskSource::new(cfg.mask_source_config())?;
    let bucket = bucket.map(|(lo, hi)| HoleRatioBucket::new(lo, hi)).transpose()?;

    let mut manifest = String::from("filename,hole_ratio,seed\n");
    for i in 0..count {
        let seed = crate::rng::child_seed_indexed(cfg.run.seed, "make-masks", i as u64);
        let mask = match bucket {
            Some(b) => source.sample_in_bucket_from(b, seed, cfg.eval.max_mask_tries)?,
            None => source.sample(seed)?,
        };
        let name = format!("mask_{i:05}.png");
        data::save_mask_png(&out_dir.join(&name), &mask)?;
        manifest.push_str(&format!("{name},{},{seed}\n", mask.hole_ratio()));
    }
    std::fs::write(out_dir.join("manifest.csv"), manifest)?;
    println!("wrote {count} masks to {}", out_dir.display());
    Ok(())
}

/// `ablate`: one training + evaluation per mixing weight, emitting a CSV
/// of (lambda, fid, mae, psnr, ssim). Per-run failures are isolated.
pub fn cmd_ablate(config_path: &Path, lambdas: &[f64], overrides: &Overrides) -> Result<()> {
    let (base_cfg, text) = load_config(config_path, overrides)?;
    stamp_out_dir(&base_cfg, &text)?;

    let mut rows = Vec::new();
    let mut completed = Vec::new();
    let mut failed = Vec::new();
    for &lambda in lambdas {
        let mut cfg = base_cfg.clone();
        cfg.train.lambda = lambda;
        cfg.run.out_dir = base_cfg.run.out_dir.join(format!("lambda_{lambda}"));
        let result = (|| -> Result<MetricReport> {
            cfg.validate()?;
            let split = data::load_split(&cfg.data.root, &split_spec(&cfg))?;
            std::fs::create_dir_all(&cfg.run.out_dir)?;
            let images = load_model_images(&split.train, cfg.run.image_size)?;
            let state = train(&cfg.train_config(), &images, &cfg.mask_source_config(), Some(&cfg.run.out_dir))?;
            run_eval(&cfg, &state, &cfg.run.out_dir)
        })();
        match result {
            Ok(report) => {
                println!("lambda {lambda}: {}", report_summary(&report));
                rows.push((lambda, report));
                completed.push(lambda);
            }
            Err(e) => {
                log::error!("lambda {lambda} failed: {e}");
                failed.push((lambda, e.to_string()));
            }
        }
    }

    let mut csv = String::from("lambda,fid,mae,psnr_db,ssim,n\n");
    for (lambda, report) in &rows {
        csv.push_str(&format!(
            "{lambda},{},{},{},{},{}\n",
            report.overall.fid,
            report.overall.mae,
            report.overall.psnr_db,
            report.overall.ssim,
            report.overall.count
        ));
    }
    std::fs::write(base_cfg.run.out_dir.join("ablation.csv"), csv)?;
    println!(
        "ablation done: {} completed {:?}, {} failed",
        completed.len(),
        completed,
        failed.len()
    );
    if rows.is_empty() {
        return Err(Error::Config(format!(
            "every ablation run failed; first: {}",
            failed.first().map(|(_, e)| e.as_str()).unwrap_or("none")
        )));
    }
    Ok(())
}

/// Published ablation grid.
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.0, 0.1, 0.3, 0.4, 0.5];

/// Parse `--lambdas 0,0.1,0.4` style lists.
pub fn parse_lambda_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad lambda value {s:?}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("lambda {v} outside [0,1]")));
            }
            Ok(v)
        })
        .collect()
}
