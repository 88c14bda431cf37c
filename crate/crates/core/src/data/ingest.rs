use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};

use super::{preprocess, ImageRecord, Label, Source};
use crate::error::{Error, Result};
use crate::parallel;

/// A decoded image with planar `[0, 1]` intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    /// One plane when true, three (R, G, B) otherwise.
    pub grayscale: bool,
    pub planes: Vec<f32>,
    pub origin: String,
}

impl RawImage {
    pub fn from_dynamic(img: &DynamicImage, origin: impl Into<String>) -> Self {
        let (width, height) = (img.width() as usize, img.height() as usize);
        let grayscale = !img.color().has_color();
        let planes = if grayscale {
            img.to_luma8()
                .into_raw()
                .into_iter()
                .map(|v| v as f32 / 255.0)
                .collect()
        } else {
            let rgb = img.to_rgb8();
            let mut planes = vec![0.0; 3 * width * height];
            for (i, px) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    planes[c * width * height + i] = px[c] as f32 / 255.0;
                }
            }
            planes
        };
        Self {
            width,
            height,
            grayscale,
            planes,
            origin: origin.into(),
        }
    }
}

#[derive(Debug)]
pub struct LoadedImages {
    pub label: Label,
    pub images: Vec<RawImage>,
    /// Files that could not be decoded, with the decoder's complaint.
    pub skipped: Vec<(PathBuf, String)>,
}

fn decode(path: &Path) -> std::result::Result<DynamicImage, String> {
    ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .decode()
        .map_err(|e| e.to_string())
}

/// Decodes every regular file in `dir` (sorted by name). Undecodable files are
/// skipped with a warning; an empty directory or one where nothing decodes is
/// an error.
pub fn load_image_dir(dir: impl AsRef<Path>, label: Label) -> Result<LoadedImages> {
    let dir = dir.as_ref();
    let entries =
        std::fs::read_dir(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry
            .file_type()
            .map_err(|e| Error::io(entry.path(), e))?
            .is_file()
        {
            files.push(entry.path());
        }
    }
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no image files", dir.display())));
    }
    files.sort();
    let decoded = parallel::map_indices(files.len(), |i| decode(&files[i]));
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for (path, res) in files.into_iter().zip(decoded) {
        match res {
            Ok(img) => images.push(RawImage::from_dynamic(&img, path.display().to_string())),
            Err(msg) => {
                log::warn!("skipping {}: {msg}", path.display());
                skipped.push((path, msg));
            }
        }
    }
    if images.is_empty() {
        return Err(Error::Data(format!(
            "{}: none of {} files could be decoded",
            dir.display(),
            skipped.len()
        )));
    }
    Ok(LoadedImages {
        label,
        images,
        skipped,
    })
}

/// Loads `root/yes` as tumor and `root/no` as healthy, preprocessed.
pub fn load_dataset_root(root: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let root = root.as_ref();
    let mut records = Vec::new();
    for (sub, label) in [("yes", Label::Tumor), ("no", Label::Healthy)] {
        let loaded = load_image_dir(root.join(sub), label)?;
        let processed = parallel::map_indices(loaded.images.len(), |i| {
            preprocess(&loaded.images[i], label, Source::Real)
        });
        for r in processed {
            records.push(r?);
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma};

    fn write_png(path: &Path, v: u8) {
        GrayImage::from_pixel(12, 10, Luma([v])).save(path).unwrap();
    }

    #[test]
    fn loads_valid_files_with_label() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            write_png(&dir.path().join(format!("{i}.png")), 40 * i as u8);
        }
        let loaded = load_image_dir(dir.path(), Label::Tumor).unwrap();
        assert_eq!(loaded.images.len(), 3);
        assert_eq!(loaded.label, Label::Tumor);
        assert!(loaded.skipped.is_empty());
        assert!(loaded.images[0].grayscale);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image_dir(dir.path(), Label::Healthy),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn corrupt_file_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("a.png"), 10);
        write_png(&dir.path().join("b.png"), 200);
        std::fs::write(dir.path().join("c.png"), b"\x89PNG not really").unwrap();
        let loaded = load_image_dir(dir.path(), Label::Tumor).unwrap();
        assert_eq!(loaded.images.len(), 2);
        assert_eq!(loaded.skipped.len(), 1);
        assert!(loaded.skipped[0].0.ends_with("c.png"));
    }

    #[test]
    fn all_corrupt_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.jpg"), b"nope").unwrap();
        assert!(load_image_dir(dir.path(), Label::Tumor).is_err());
    }
}
