//! Flat binary pixel files with a tab-separated manifest alongside.
//!
//! `<name>.bin`: magic `SMXTENS1`, then little-endian u32 `n, c, h, w`, then
//! `n*c*h*w` little-endian f32 values.
//! `<name>.manifest.tsv`: a header line, then `path\tlabel\tsource\tsplit` per record
//! in the same order.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{ImageRecord, Label, Source, IMAGE_SIZE, PIXELS};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SMXTENS1";
const HEADER: &str = "path\tlabel\tsource\tsplit";

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{name}.bin")),
        dir.join(format!("{name}.manifest.tsv")),
    )
}

pub fn manifest_text(records: &[ImageRecord], split: &str) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{}\t{}\t{}\t{split}\n",
            r.origin.replace(['\t', '\n'], " "),
            r.label.as_str(),
            r.source.as_str()
        ));
    }
    s
}

/// Hex SHA-256 of a manifest's text.
pub fn manifest_hash(manifest: &str) -> String {
    let digest = Sha256::digest(manifest.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `<dir>/<name>.bin` and `<dir>/<name>.manifest.tsv`; returns the manifest hash.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    name: &str,
    records: &[ImageRecord],
    split: &str,
) -> Result<String> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (bin, man) = paths(dir, name);
    let mut bytes = Vec::with_capacity(24 + records.len() * PIXELS * 4);
    bytes.extend_from_slice(MAGIC);
    for d in [records.len(), 3, IMAGE_SIZE, IMAGE_SIZE] {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for r in records {
        if r.pixels.len() != PIXELS {
            return Err(Error::Shape(format!(
                "record `{}` is not 3x64x64",
                r.origin
            )));
        }
        for v in &r.pixels {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let text = manifest_text(records, split);
    fs::write(&man, &text).map_err(|e| Error::io(&man, e))?;
    Ok(manifest_hash(&text))
}

/// Reads a dataset written by [`write_dataset`]; returns the records and the split column.
pub fn read_dataset(dir: impl AsRef<Path>, name: &str) -> Result<(Vec<ImageRecord>, Vec<String>)> {
    let (bin, man) = paths(dir.as_ref(), name);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let text = fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
    let bad = |msg: &str| Error::Data(format!("{}: {msg}", bin.display()));
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(bad("not a dataset tensor file"));
    }
    let dim =
        |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (n, c, h, w) = (dim(0), dim(1), dim(2), dim(3));
    if (c, h, w) != (3, IMAGE_SIZE, IMAGE_SIZE) || bytes.len() != 24 + n * PIXELS * 4 {
        return Err(bad("unexpected tensor extents"));
    }
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Data(format!(
            "{}: missing manifest header",
            man.display()
        )));
    }
    let mut records = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        let (label, source) = match cols.as_slice() {
            [_, l, s, _] => (Label::parse(l), Source::parse(s)),
            _ => (None, None),
        };
        let (Some(label), Some(source)) = (label, source) else {
            return Err(Error::Data(format!(
                "{}: bad manifest line {}",
                man.display(),
                i + 2
            )));
        };
        if i >= n {
            return Err(bad("manifest lists more records than the tensor file"));
        }
        let off = 24 + i * PIXELS * 4;
        let pixels = bytes[off..off + PIXELS * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push(ImageRecord {
            pixels,
            label,
            source,
            origin: cols[0].to_string(),
        });
        splits.push(cols[3].to_string());
    }
    if records.len() != n {
        return Err(bad("manifest lists fewer records than the tensor file"));
    }
    Ok((records, splits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<ImageRecord> = (0..3)
            .map(|i| ImageRecord {
                pixels: (0..PIXELS)
                    .map(|j| ((i * 31 + j) % 17) as f32 / 8.0 - 1.0)
                    .collect(),
                label: if i % 2 == 0 {
                    Label::Tumor
                } else {
                    Label::Healthy
                },
                source: Source::Synthetic,
                origin: format!("gan:{i}"),
            })
            .collect();
        let hash = write_dataset(dir.path(), "pool", &recs, "train").unwrap();
        assert_eq!(hash.len(), 64);
        let (back, splits) = read_dataset(dir.path(), "pool").unwrap();
        assert_eq!(back, recs);
        assert!(splits.iter().all(|s| s == "train"));
        assert_eq!(hash, manifest_hash(&manifest_text(&recs, "train")));
    }
}
