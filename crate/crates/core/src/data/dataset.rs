//! On-disk dataset layout:
//!
//! ```text
//! <root>/images/<id>.pgm
//! <root>/masks/<id>.pgm
//! <root>/manifest.tsv     id  split  augmentation  seed
//! ```
//!
//! `split` is `original` for source samples and `augmented` for derived ones.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::augment::{AugTag, Sample};
use crate::data::image::{load_image, load_mask, save_image, save_mask};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.tsv";
const HEADER: &str = "id\tsplit\taugmentation\tseed";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub split: String,
    pub tag: AugTag,
    pub seed: u64,
}

pub fn image_path(root: &Path, id: &str) -> PathBuf {
    root.join("images").join(format!("{id}.pgm"))
}

pub fn mask_path(root: &Path, id: &str) -> PathBuf {
    root.join("masks").join(format!("{id}.pgm"))
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || "_-+.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("sample id `{id}` is not a safe file name")))
    }
}

/// Writes samples and their manifest. `seeds[i]` is recorded for sample `i`.
pub fn write_dataset(root: impl AsRef<Path>, samples: &[Sample], seeds: &[u64]) -> Result<()> {
    let root = root.as_ref();
    if samples.len() != seeds.len() {
        return Err(Error::Config(format!("{} samples but {} seeds", samples.len(), seeds.len())));
    }
    std::fs::create_dir_all(root.join("images"))?;
    std::fs::create_dir_all(root.join("masks"))?;
    let mut manifest = format!("{HEADER}\n");
    for (s, seed) in samples.iter().zip(seeds) {
        check_id(&s.id)?;
        save_image(&s.image, image_path(root, &s.id))?;
        save_mask(&s.mask, mask_path(root, &s.id))?;
        let split = if s.tag == AugTag::None { "original" } else { "augmented" };
        writeln!(manifest, "{}\t{split}\t{}\t{seed}", s.id, s.tag).unwrap();
    }
    std::fs::write(root.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn read_manifest(root: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = root.as_ref().join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Config(format!("{}: missing header `{HEADER}`", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Config(format!("{}: malformed line {}: `{line}`", path.display(), i + 2));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            check_id(f[0])?;
            Ok(ManifestRow {
                id: f[0].to_string(),
                split: f[1].to_string(),
                tag: f[2].parse()?,
                seed: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Loads every sample listed in the manifest, in manifest order.
pub fn read_dataset(root: impl AsRef<Path>) -> Result<Vec<(ManifestRow, Sample)>> {
    let root = root.as_ref();
    read_manifest(root)?
        .into_iter()
        .map(|row| {
            let mut s = Sample::new(
                row.id.clone(),
                load_image(image_path(root, &row.id))?,
                load_mask(mask_path(root, &row.id))?,
            )?;
            s.tag = row.tag;
            Ok((row, s))
        })
        .collect()
}
