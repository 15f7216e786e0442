//! CIFAR-10 binary batches: records of one label byte followed by 3072
//! channel-major pixel bytes.

use super::{ImageDataset, PixelCoding};
use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

const RECORD: usize = 3073;

fn read_records(path: &Path, labels: &mut Vec<usize>, pixels: &mut Vec<u8>) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("length {} is not a positive multiple of {RECORD}", bytes.len()),
        });
    }
    for (r, rec) in bytes.chunks_exact(RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("record {r} has label byte {}", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(())
}

/// Concatenates the given batch files in order; every record lands in the
/// training split.
pub fn load_cifar10_binary<P: AsRef<Path>>(paths: &[P]) -> Result<ImageDataset> {
    load_cifar10(paths, &[] as &[PathBuf])
}

/// Training batches followed by test batches.
pub fn load_cifar10<P: AsRef<Path>, Q: AsRef<Path>>(train: &[P], test: &[Q]) -> Result<ImageDataset> {
    if train.is_empty() && test.is_empty() {
        return Err(Error::EmptyDataset("cifar10: no input files".into()));
    }
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for p in train {
        read_records(p.as_ref(), &mut labels, &mut pixels)?;
    }
    let n_train = labels.len();
    for p in test {
        read_records(p.as_ref(), &mut labels, &mut pixels)?;
    }
    let is_test: Vec<bool> = (0..labels.len()).map(|i| i >= n_train).collect();
    ImageDataset::new("cifar10", 0, 10, 3, 32, PixelCoding::Unit, pixels, labels, &is_test)
}
