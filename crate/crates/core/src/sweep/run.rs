use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::toy::make_toy_dataset;
use crate::cnn::{train_cnn, TrainConfig};
use crate::data::{
    blend, load_dataset_root, manifest_hash, manifest_text, read_dataset, split_dataset,
    train_val_split, write_dataset, BlendSpec, ImageRecord, Label, SplitSpec, Splits,
};
use crate::dcgan::{generate_synthetic, save_image_grid, train_dcgan, GanTrainConfig, Generator};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::parallel;

/// First eight bytes of `SHA-256(master || tag)`, little-endian.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn fingerprint<S: Serialize>(value: &S) -> Result<String> {
    Ok(manifest_hash(&serde_json::to_string(value)?))
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the configured images (or builds the toy set) and splits them.
pub fn prepare_data(config: &ExperimentConfig) -> Result<Splits> {
    let records = if config.toy {
        make_toy_dataset(config.toy_per_class, config.toy_image_size, config.seed)?
    } else {
        let root = config
            .data_root
            .as_ref()
            .ok_or_else(|| Error::Config("missing `data_root` (or enable `toy`)".into()))?;
        load_dataset_root(root)?
    };
    let spec = SplitSpec {
        seed: config.seed,
        ..config.split.clone()
    };
    split_dataset(&records, &spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanArtifacts {
    pub label: Label,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub sample_grids: Vec<PathBuf>,
}

/// GAN settings for one class, seeded from the master seed.
pub fn class_gan_config(config: &ExperimentConfig, label: Label) -> GanTrainConfig {
    GanTrainConfig {
        seed: derive_seed(config.seed, &format!("gan:{}", label.as_str())),
        ..config.gan.clone()
    }
}

/// Trains the generator for one class and writes its checkpoint, loss curve
/// and sample grids under `dir`.
pub fn train_class_gan(
    images: &[ImageRecord],
    label: Label,
    gan: &GanTrainConfig,
    dir: &Path,
) -> Result<(Generator<f32>, GanArtifacts)> {
    let class: Vec<ImageRecord> = images
        .iter()
        .filter(|r| r.label == label)
        .cloned()
        .collect();
    if class.is_empty() {
        return Err(Error::Config(format!(
            "no {} images left for GAN training",
            label.as_str()
        )));
    }
    log::info!("training {} GAN on {} images", label.as_str(), class.len());
    let trained = train_dcgan(&class, gan)?;
    mkdir(dir)?;
    let loss_csv = dir.join("loss.csv");
    trained.report.write_loss_csv(&loss_csv)?;
    let mut sample_grids = Vec::new();
    for grid in &trained.report.samples {
        let path = dir.join(format!("samples_epoch{:04}.png", grid.epoch));
        save_image_grid(&grid.images, 4, &path)?;
        sample_grids.push(path);
    }
    let checkpoint = dir.join("generator.ckpt");
    trained
        .generator
        .to_checkpoint(gan.seed, Some(label.as_str()))
        .write(&checkpoint)?;
    Ok((
        trained.generator,
        GanArtifacts {
            label,
            checkpoint,
            loss_csv,
            sample_grids,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub message: String,
    pub exit_code: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowArtifacts {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub history_csv: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub metrics_json: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: BlendSpec,
    pub label: String,
    pub distribution: String,
    pub seed: u64,
    /// Tallied from the written blend manifest.
    pub real_count: usize,
    pub synthetic_count: usize,
    pub test_manifest_hash: String,
    pub epochs_trained: usize,
    pub metrics: Option<MetricsReport>,
    pub failure: Option<RowFailure>,
    pub artifacts: RowArtifacts,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub out: PathBuf,
    pub test_manifest: PathBuf,
    pub test_manifest_hash: String,
    pub synthetic_manifest_hash: String,
    pub gans: Vec<GanArtifacts>,
    /// One entry per configured ratio, in configuration order.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn failures(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.failure.is_some())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_text(path, &serde_json::to_string_pretty(self)?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Counts `(real, synthetic)` lines in a manifest file.
pub fn manifest_source_counts(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut real, mut synth) = (0, 0);
    for line in text.lines().skip(1) {
        match line.split('\t').nth(2) {
            Some("real") => real += 1,
            Some("synthetic") => synth += 1,
            _ => {
                return Err(Error::Data(format!(
                    "{}: malformed manifest line `{line}`",
                    path.display()
                )))
            }
        }
    }
    Ok((real, synth))
}

/// Everything that decides the synthetic pool; a changed key invalidates it.
#[derive(Serialize)]
struct PoolKey<'a> {
    data_root: &'a Option<PathBuf>,
    toy: (bool, usize, usize),
    seed: u64,
    split: &'a SplitSpec,
    gan: &'a GanTrainConfig,
    synthetic_per_class: usize,
}

#[derive(Serialize)]
struct RowKey<'a> {
    pool: &'a str,
    test: &'a str,
    ratio: BlendSpec,
    seed: u64,
    cnn: &'a TrainConfig,
    threshold: f32,
    ties: crate::metrics::TieRule,
}

struct Shared<'a> {
    config: &'a ExperimentConfig,
    real_pool: &'a [ImageRecord],
    synthetic_pool: &'a [ImageRecord],
    test: &'a [ImageRecord],
    test_hash: &'a str,
    pool_hash: &'a str,
}

fn row_dir_name(ratio: BlendSpec) -> String {
    format!("row_{:04}_{:04}", ratio.real_count, ratio.gan_count)
}

fn run_row(shared: &Shared, ratio: BlendSpec) -> SweepRow {
    let config = shared.config;
    let label = ratio.label();
    let seed = derive_seed(config.seed, &label);
    let dir = config.out.join("rows").join(row_dir_name(ratio));
    let fingerprint = fingerprint(&RowKey {
        pool: shared.pool_hash,
        test: shared.test_hash,
        ratio,
        seed,
        cnn: &config.cnn,
        threshold: config.threshold,
        ties: config.auc_ties,
    })
    .unwrap_or_default();
    let row_json = dir.join("row.json");
    if let Ok(text) = fs::read_to_string(&row_json) {
        if let Ok(prev) = serde_json::from_str::<SweepRow>(&text) {
            if prev.fingerprint == fingerprint && prev.failure.is_none() {
                log::info!("row {label}: already complete, skipping");
                return prev;
            }
        }
    }
    let mut row = SweepRow {
        ratio,
        label: label.clone(),
        distribution: ratio.distribution(),
        seed,
        real_count: 0,
        synthetic_count: 0,
        test_manifest_hash: manifest_hash(&manifest_text(shared.test, "test")),
        epochs_trained: 0,
        metrics: None,
        failure: None,
        artifacts: RowArtifacts {
            manifest: dir.join("blend.manifest.tsv"),
            dir: dir.clone(),
            history_csv: None,
            checkpoint: None,
            metrics_json: None,
        },
        fingerprint,
    };
    if let Err(e) = fill_row(shared, &mut row) {
        let e = e.in_row(&label);
        log::error!("{e}");
        row.failure = Some(RowFailure {
            message: e.to_string(),
            exit_code: e.exit_code(),
        });
    }
    if let Ok(text) = serde_json::to_string_pretty(&row) {
        if let Err(e) = write_text(&row_json, &text) {
            log::warn!("{e}");
        }
    }
    row
}

fn fill_row(shared: &Shared, row: &mut SweepRow) -> Result<()> {
    let config = shared.config;
    mkdir(&row.artifacts.dir)?;
    log::info!("row {}: blending {}", row.label, row.distribution);
    let blended = blend(
        shared.real_pool,
        shared.synthetic_pool,
        row.ratio,
        derive_seed(row.seed, "blend"),
    )?;
    let tv = train_val_split(&blended, derive_seed(row.seed, "split"))?;
    let mut manifest = manifest_text(&tv.train, "train");
    manifest.extend(
        manifest_text(&tv.val, "val")
            .lines()
            .skip(1)
            .map(|l| format!("{l}\n")),
    );
    write_text(&row.artifacts.manifest, &manifest)?;
    (row.real_count, row.synthetic_count) = manifest_source_counts(&row.artifacts.manifest)?;

    let cnn = TrainConfig {
        seed: derive_seed(row.seed, "cnn"),
        ..config.cnn.clone()
    };
    let (net, history) = train_cnn(&tv.train, &tv.val, &cnn)?;
    row.epochs_trained = history.epochs.len();
    let history_csv = row.artifacts.dir.join("history.csv");
    history.write_csv(&history_csv)?;
    row.artifacts.history_csv = Some(history_csv);
    let checkpoint = row.artifacts.dir.join("cnn.ckpt");
    net.to_checkpoint(cnn.seed).write(&checkpoint)?;
    row.artifacts.checkpoint = Some(checkpoint);

    let report = evaluate(&net, shared.test, config.threshold, config.auc_ties)?;
    let metrics_json = row.artifacts.dir.join("metrics.json");
    report.write_json(&metrics_json)?;
    row.artifacts.metrics_json = Some(metrics_json);
    log::info!("row {}: accuracy {:.4}", row.label, report.accuracy);
    row.metrics = Some(report);
    Ok(())
}

/// Builds or reloads the shared synthetic pool.
fn synthetic_stage(
    config: &ExperimentConfig,
    gan_train: &[ImageRecord],
) -> Result<(Vec<ImageRecord>, Vec<GanArtifacts>)> {
    let dir = config.out.join("synthetic");
    let key = fingerprint(&PoolKey {
        data_root: &config.data_root,
        toy: (config.toy, config.toy_per_class, config.toy_image_size),
        seed: config.seed,
        split: &config.split,
        gan: &config.gan,
        synthetic_per_class: config.synthetic_per_class,
    })?;
    let key_path = dir.join("pool.fingerprint");
    let gans_path = dir.join("gans.json");
    if fs::read_to_string(&key_path).is_ok_and(|k| k.trim() == key) {
        if let (Ok((pool, _)), Ok(text)) =
            (read_dataset(&dir, "pool"), fs::read_to_string(&gans_path))
        {
            if let Ok(gans) = serde_json::from_str(&text) {
                log::info!("reusing synthetic pool in {}", dir.display());
                return Ok((pool, gans));
            }
        }
    }
    let run = |label: Label| -> Result<(Vec<ImageRecord>, GanArtifacts)> {
        let gan = class_gan_config(config, label);
        let (mut generator, artifacts) = train_class_gan(
            gan_train,
            label,
            &gan,
            &config.out.join("gan").join(label.as_str()),
        )?;
        let images = generate_synthetic(
            &mut generator,
            config.synthetic_per_class,
            label,
            derive_seed(config.seed, &format!("generate:{}", label.as_str())),
        )?;
        Ok((images, artifacts))
    };
    let (tumor, healthy) = parallel::join(|| run(Label::Tumor), || run(Label::Healthy));
    let (mut pool, ta) = tumor?;
    let (more, ha) = healthy?;
    pool.extend(more);
    let gans = vec![ta, ha];
    write_dataset(&dir, "pool", &pool, "synthetic")?;
    write_text(&gans_path, &serde_json::to_string_pretty(&gans)?)?;
    write_text(&key_path, &key)?;
    Ok((pool, gans))
}

/// Trains the two class generators once, then trains and evaluates one
/// classifier per configured ratio on the shared real test set.
///
/// A failing row is recorded in its [`SweepRow::failure`] and the remaining
/// rows still run. Rows whose `row.json` matches the current configuration
/// are reloaded instead of retrained.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    mkdir(&config.out)?;
    write_text(
        &config.out.join("config.json"),
        &serde_json::to_string_pretty(config)?,
    )?;
    let splits = prepare_data(config)?;
    let test_manifest = config.out.join("test.manifest.tsv");
    let test_text = manifest_text(&splits.test, "test");
    write_text(&test_manifest, &test_text)?;
    let test_hash = manifest_hash(&test_text);
    log::info!(
        "split: {} cnn pool, {} gan train, {} test ({test_hash})",
        splits.cnn_pool.len(),
        splits.gan_train.len(),
        splits.test.len()
    );

    let (synthetic_pool, gans) = synthetic_stage(config, &splits.gan_train)?;
    let pool_hash = manifest_hash(&manifest_text(&synthetic_pool, "synthetic"));
    let shared = Shared {
        config,
        real_pool: &splits.cnn_pool,
        synthetic_pool: &synthetic_pool,
        test: &splits.test,
        test_hash: &test_hash,
        pool_hash: &pool_hash,
    };
    let rows = parallel::map_indices(config.ratios.len(), |i| run_row(&shared, config.ratios[i]));
    let result = SweepResult {
        out: config.out.clone(),
        test_manifest,
        test_manifest_hash: test_hash,
        synthetic_manifest_hash: pool_hash,
        gans,
        rows,
    };
    result.write_json(config.out.join("sweep.json"))?;
    Ok(result)
}
