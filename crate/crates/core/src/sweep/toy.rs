use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{preprocess, ImageRecord, Label, RawImage, Source};
use crate::error::{Error, Result};
use crate::parallel;

const BACKGROUND_MEAN: f64 = 0.3;
const NOISE_STD: f64 = 0.1;
const BLOB_AMPLITUDE: f64 = 0.6;
/// Blob standard deviation as a fraction of the image side.
const BLOB_SIGMA: f64 = 0.125;

fn toy_image(label: Label, size: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let noise = Normal::new(BACKGROUND_MEAN, NOISE_STD).expect("valid normal");
    let mut px: Vec<f64> = (0..size * size).map(|_| noise.sample(rng)).collect();
    if label == Label::Tumor {
        let s = size as f64;
        let cx = rng.random_range(0.2 * s..0.8 * s);
        let cy = rng.random_range(0.2 * s..0.8 * s);
        let two_var = 2.0 * (BLOB_SIGMA * s).powi(2);
        for y in 0..size {
            for x in 0..size {
                let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                px[y * size + x] += BLOB_AMPLITUDE * (-d2 / two_var).exp();
            }
        }
    }
    px.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect()
}

/// Separable two-class stand-in for a scan collection: tumor images carry a
/// bright Gaussian blob at a random position, healthy images are noise only.
///
/// Records come tumor-first and are preprocessed like loaded files.
pub fn make_toy_dataset(
    n_per_class: usize,
    image_size: usize,
    seed: u64,
) -> Result<Vec<ImageRecord>> {
    if n_per_class == 0 || image_size == 0 {
        return Err(Error::Config(
            "toy dataset needs at least one image per class and a non-zero size".into(),
        ));
    }
    let records = parallel::map_indices(2 * n_per_class, |i| {
        let label = Label::BOTH[i / n_per_class];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let raw = RawImage {
            width: image_size,
            height: image_size,
            grayscale: true,
            planes: toy_image(label, image_size, &mut rng),
            origin: format!("toy:{}:{seed}:{}", label.as_str(), i % n_per_class),
        };
        preprocess(&raw, label, Source::Real)
    });
    records.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let a = make_toy_dataset(10, 32, 4).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a.iter().filter(|r| r.label == Label::Tumor).count(), 10);
        assert_eq!(a, make_toy_dataset(10, 32, 4).unwrap());
        assert_ne!(a, make_toy_dataset(10, 32, 5).unwrap());
        assert!(make_toy_dataset(0, 32, 4).is_err());
    }
}
