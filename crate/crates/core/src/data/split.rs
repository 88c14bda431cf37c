use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ImageRecord, Label, Source};
use crate::error::{Error, Result};

/// Every blended training set holds exactly this many images.
pub const BLEND_TOTAL: usize = 1000;

/// Real/synthetic image counts for one blended dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlendSpec {
    pub real_count: usize,
    pub gan_count: usize,
}

impl BlendSpec {
    pub fn new(real_count: usize, gan_count: usize) -> Result<Self> {
        if real_count + gan_count != BLEND_TOTAL {
            return Err(Error::Config(format!(
                "blend {real_count}:{gan_count} sums to {}, expected {BLEND_TOTAL}",
                real_count + gan_count
            )));
        }
        Ok(Self {
            real_count,
            gan_count,
        })
    }

    /// The eleven rows from all-real to all-synthetic in steps of 100.
    pub fn standard_rows() -> Vec<BlendSpec> {
        (0..=10)
            .map(|i| BlendSpec {
                real_count: BLEND_TOTAL - 100 * i,
                gan_count: 100 * i,
            })
            .collect()
    }

    /// Percent ratio label such as `90:10`.
    pub fn label(&self) -> String {
        format!(
            "{}:{}",
            self.real_count * 100 / BLEND_TOTAL,
            self.gan_count * 100 / BLEND_TOTAL
        )
    }

    /// Report label such as `10% GAN, 90% Real`.
    pub fn distribution(&self) -> String {
        format!(
            "{}% GAN, {}% Real",
            self.gan_count * 100 / BLEND_TOTAL,
            self.real_count * 100 / BLEND_TOTAL
        )
    }

    /// Parses `real:gan` image counts, e.g. `900:100`.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("ratio `{s}` is not of the form real:gan")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("ratio `{s}` has a non-integer count")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

/// Sizes of the three disjoint real subsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub cnn_pool_size: usize,
    /// `None` takes everything left after the test set and CNN pool.
    pub gan_train_size: Option<usize>,
    pub test_size: usize,
    pub seed: u64,
    /// Lets the GAN training set draw from the CNN pool (never from the test set).
    pub allow_overlap: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            cnn_pool_size: 1000,
            gan_train_size: None,
            test_size: 500,
            seed: 0,
            allow_overlap: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub cnn_pool: Vec<ImageRecord>,
    pub gan_train: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
}

/// Per-class share of `n`: the tumor class takes the odd one out.
pub(crate) fn class_share(n: usize, label: Label) -> usize {
    match label {
        Label::Tumor => n.div_ceil(2),
        Label::Healthy => n / 2,
    }
}

fn indices_of(records: &[ImageRecord], label: Label) -> Vec<usize> {
    (0..records.len())
        .filter(|&i| records[i].label == label)
        .collect()
}

fn pick(records: &[ImageRecord], idx: &[usize]) -> Vec<ImageRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

/// Class-balanced split into CNN pool, GAN training set and test set.
pub fn split_dataset(records: &[ImageRecord], spec: &SplitSpec) -> Result<Splits> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cnn = Vec::new();
    let mut gan = Vec::new();
    let mut test = Vec::new();
    for label in Label::BOTH {
        let mut idx = indices_of(records, label);
        idx.shuffle(&mut rng);
        let t = class_share(spec.test_size, label);
        let p = class_share(spec.cnn_pool_size, label);
        let available_for_gan = if spec.allow_overlap {
            idx.len().saturating_sub(t)
        } else {
            idx.len().saturating_sub(t + p)
        };
        let g = match spec.gan_train_size {
            Some(n) => class_share(n, label),
            None => available_for_gan,
        };
        let needed = if spec.allow_overlap {
            t + p.max(g)
        } else {
            t + p + g
        };
        if needed > idx.len() {
            return Err(Error::Config(format!(
                "class {} needs {needed} records (test {t}, cnn pool {p}, gan {g}) but only {} are available",
                label.as_str(),
                idx.len()
            )));
        }
        test.extend(pick(records, &idx[..t]));
        cnn.extend(pick(records, &idx[t..t + p]));
        let gan_start = if spec.allow_overlap { t } else { t + p };
        gan.extend(pick(records, &idx[gan_start..gan_start + g]));
    }
    Ok(Splits {
        cnn_pool: cnn,
        gan_train: gan,
        test,
    })
}

fn draw(
    pool: &[ImageRecord],
    count: usize,
    source: Source,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ImageRecord>> {
    if let Some(r) = pool.iter().find(|r| r.source != source) {
        return Err(Error::Contract(format!(
            "{} record `{}` in the {} pool",
            r.source.as_str(),
            r.origin,
            source.as_str()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for label in Label::BOTH {
        let want = class_share(count, label);
        let mut idx = indices_of(pool, label);
        if want > idx.len() {
            return Err(Error::Config(format!(
                "{} pool has {} {} images, blend needs {want}",
                source.as_str(),
                idx.len(),
                label.as_str()
            )));
        }
        idx.shuffle(rng);
        out.extend(pick(pool, &idx[..want]));
    }
    Ok(out)
}

/// Draws `spec.real_count` real and `spec.gan_count` synthetic records, each
/// split evenly by class, and shuffles them together.
pub fn blend(
    real_pool: &[ImageRecord],
    synthetic_pool: &[ImageRecord],
    spec: BlendSpec,
    seed: u64,
) -> Result<Vec<ImageRecord>> {
    let spec = BlendSpec::new(spec.real_count, spec.gan_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = draw(real_pool, spec.real_count, Source::Real, &mut rng)?;
    out.extend(draw(
        synthetic_pool,
        spec.gan_count,
        Source::Synthetic,
        &mut rng,
    )?);
    out.shuffle(&mut rng);
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainVal {
    pub train: Vec<ImageRecord>,
    pub val: Vec<ImageRecord>,
}

/// Class-stratified 800/200 split of a 1000-image blend.
pub fn train_val_split(dataset: &[ImageRecord], seed: u64) -> Result<TrainVal> {
    const VAL: usize = 200;
    if dataset.len() != BLEND_TOTAL {
        return Err(Error::Contract(format!(
            "train/validation split expects {BLEND_TOTAL} records, got {}",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tumor = indices_of(dataset, Label::Tumor);
    let val_tumor = (tumor.len() * VAL + BLEND_TOTAL / 2) / BLEND_TOTAL;
    let mut train = Vec::with_capacity(BLEND_TOTAL - VAL);
    let mut val = Vec::with_capacity(VAL);
    for (label, n_val) in [(Label::Tumor, val_tumor), (Label::Healthy, VAL - val_tumor)] {
        let mut idx = indices_of(dataset, label);
        idx.shuffle(&mut rng);
        val.extend(pick(dataset, &idx[..n_val]));
        train.extend(pick(dataset, &idx[n_val..]));
    }
    train.shuffle(&mut rng);
    val.shuffle(&mut rng);
    Ok(TrainVal { train, val })
}
