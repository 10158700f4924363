//! CIFAR-10 binary batches.
//!
//! Each record is 3073 bytes: one label byte, then 1024 red, 1024 green and
//! 1024 blue bytes in row-major order. Labels are discarded.

use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use super::{ImageSet, ImageSource};
use crate::engine::Tensor;
use crate::error::{Error, Result};

pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const CIFAR_SIDE: usize = 32;
pub const TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const TEST_FILE: &str = "test_batch.bin";
pub const RECORDS_PER_FILE: usize = 10_000;

/// Accepts either the directory holding the `.bin` files or its parent
/// (the official archive unpacks to `cifar-10-batches-bin/`).
pub fn resolve_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join(TEST_FILE).exists() && nested.join(TEST_FILE).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn record_count(path: &Path) -> Result<usize> {
    let len = fs::metadata(path)
        .map_err(|e| Error::Dataset { path: path.to_path_buf(), detail: format!("missing batch file ({e})") })?
        .len() as usize;
    if len == 0 || !len.is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            detail: format!("size {len} is not a positive multiple of {CIFAR_RECORD_BYTES}"),
        });
    }
    Ok(len / CIFAR_RECORD_BYTES)
}

/// Decodes one record's pixel bytes (label already stripped) to `(1,3,32,32)`.
pub fn decode_record(pixels: &[u8]) -> Tensor {
    debug_assert_eq!(pixels.len(), CIFAR_RECORD_BYTES - 1);
    let data = pixels.iter().map(|&b| f32::from(b) / 255.0).collect();
    Tensor::new([1, 3, CIFAR_SIDE, CIFAR_SIDE], data).expect("record size is fixed")
}

fn read_file(path: &Path, limit: usize, names: &mut Vec<String>, images: &mut Vec<Tensor>) -> Result<()> {
    let count = record_count(path)?.min(limit);
    let file = File::open(path).map_err(|e| Error::Dataset { path: path.to_path_buf(), detail: e.to_string() })?;
    let mut reader = BufReader::new(file);
    let mut record = [0u8; CIFAR_RECORD_BYTES];
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("batch");
    for i in 0..count {
        reader.read_exact(&mut record)?;
        images.push(decode_record(&record[1..]));
        names.push(format!("{stem}/{i:05}"));
    }
    Ok(())
}

fn load(dir: &Path, files: &[&str], limit: usize, source: ImageSource, strict: bool) -> Result<ImageSet> {
    let dir = resolve_dir(dir);
    let mut images = Vec::new();
    let mut names = Vec::new();
    for f in files {
        let path = dir.join(f);
        let n = record_count(&path)?;
        if strict && n != RECORDS_PER_FILE {
            return Err(Error::Dataset {
                path,
                detail: format!("expected {RECORDS_PER_FILE} records, found {n}"),
            });
        }
        if images.len() >= limit {
            continue;
        }
        read_file(&path, limit - images.len(), &mut names, &mut images)?;
    }
    ImageSet::new(images, names, source)
}

/// Loads the full 50 000 / 10 000 split, in file order.
pub fn load_cifar10(dir: &Path) -> Result<(ImageSet, ImageSet)> {
    let train = load(dir, &TRAIN_FILES, usize::MAX, ImageSource::Cifar10Train, true)?;
    let test = load(dir, &[TEST_FILE], usize::MAX, ImageSource::Cifar10Test, true)?;
    Ok((train, test))
}

/// Loads at most `max_train` / `max_test` images. File sizes are still
/// validated, but files need not hold a full 10 000 records.
pub fn load_cifar10_partial(dir: &Path, max_train: usize, max_test: usize) -> Result<(ImageSet, ImageSet)> {
    let train = load(dir, &TRAIN_FILES, max_train, ImageSource::Cifar10Train, false)?;
    let test = load(dir, &[TEST_FILE], max_test, ImageSource::Cifar10Test, false)?;
    Ok((train, test))
}

/// Serialises `(1,3,32,32)` images in `[0,1]` to CIFAR records (label 0),
/// quantising like [`super::image_io::quantize`].
pub fn encode_records(images: &[Tensor]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(images.len() * CIFAR_RECORD_BYTES);
    for img in images {
        if img.shape() != [1, 3, CIFAR_SIDE, CIFAR_SIDE] {
            return Err(Error::shape("encode_records", format!("{:?}", img.shape())));
        }
        out.push(0);
        out.extend(img.data().iter().map(|&v| super::image_io::quantize(v)));
    }
    Ok(out)
}
