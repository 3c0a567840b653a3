//! Directory listing and pairing of image files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use n2n_core::imaging::{load_image_any, FLOAT_EXTENSION};
use n2n_core::noise::apply_noise;
use n2n_core::training::ValidationPair;
use n2n_core::{substream, Image, NoiseModel};

use crate::{CliError, CliResult};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "pgm", "ppm"];

/// The files sharing one stem: an 8-bit image and/or a float sidecar.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Entry {
    pub image: Option<PathBuf>,
    pub float: Option<PathBuf>,
}

impl Entry {
    pub fn pick(&self, prefer_float: bool) -> &Path {
        let (first, second) = if prefer_float {
            (&self.float, &self.image)
        } else {
            (&self.image, &self.float)
        };
        first.as_deref().or(second.as_deref()).expect("entry holds at least one file")
    }
}

/// Image files in `dir` keyed by stem, sorted.
pub fn list_images(dir: &Path) -> CliResult<BTreeMap<String, Entry>> {
    let read = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out: BTreeMap<String, Entry> = BTreeMap::new();
    for item in read {
        let path = item.map_err(|e| CliError::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let (Some(stem), Some(ext)) = (path.file_stem(), path.extension()) else {
            continue;
        };
        let ext = ext.to_string_lossy().to_ascii_lowercase();
        let entry = out.entry(stem.to_string_lossy().into_owned()).or_default();
        if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            if entry.image.is_some() {
                return Err(CliError::Data(format!(
                    "two images named {:?} in {}",
                    stem.to_string_lossy(),
                    dir.display()
                )));
            }
            entry.image = Some(path);
        } else if ext == FLOAT_EXTENSION {
            entry.float = Some(path);
        }
    }
    out.retain(|_, e| e.image.is_some() || e.float.is_some());
    Ok(out)
}

/// Loads every image in `dir` in stem order.
pub fn load_dir(dir: &Path, prefer_float: bool) -> CliResult<Vec<(String, Image)>> {
    let entries = list_images(dir)?;
    if entries.is_empty() {
        return Err(CliError::Data(format!("no images in {}", dir.display())));
    }
    entries
        .into_iter()
        .map(|(stem, e)| Ok((stem, load_image_any(e.pick(prefer_float))?)))
        .collect()
}

/// Loads images that must all share one channel count.
pub fn load_uniform(dir: &Path) -> CliResult<(Vec<Image>, usize)> {
    let images: Vec<Image> = load_dir(dir, true)?.into_iter().map(|(_, img)| img).collect();
    let channels = images[0].channels();
    if images.iter().any(|i| i.channels() != channels) {
        return Err(CliError::Data(format!("images in {} mix gray and color", dir.display())));
    }
    Ok((images, channels))
}

/// Matches files in two directories by stem; any unmatched stem is an error.
pub fn pair_dirs(a: &Path, b: &Path) -> CliResult<Vec<(String, Entry, Entry)>> {
    let left = list_images(a)?;
    let mut right = list_images(b)?;
    let mut pairs = Vec::new();
    let mut missing = Vec::new();
    for (stem, entry) in left {
        match right.remove(&stem) {
            Some(other) => pairs.push((stem, entry, other)),
            None => missing.push(format!("{stem} (only in {})", a.display())),
        }
    }
    missing.extend(right.keys().map(|s| format!("{s} (only in {})", b.display())));
    if !missing.is_empty() {
        return Err(CliError::Data(format!("unpaired files: {}", missing.join(", "))));
    }
    if pairs.is_empty() {
        return Err(CliError::Data(format!("no images in {}", a.display())));
    }
    Ok(pairs)
}

/// Seed offset separating validation noise from training streams.
const VALIDATION_SALT: u64 = 0x7a11_da7e_5eed_0001;

/// Noisy validation copies, drawn from a stream that depends only on the
/// run seed and the image index.
pub fn validation_pairs(clean: Vec<Image>, noise: &NoiseModel, seed: u64) -> CliResult<Vec<ValidationPair>> {
    clean
        .into_iter()
        .enumerate()
        .map(|(i, clean)| {
            let noisy = apply_noise(&clean, noise, &mut substream(seed ^ VALIDATION_SALT, i as u64))?;
            Ok(ValidationPair { clean, noisy })
        })
        .collect()
}
