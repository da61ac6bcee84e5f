//! Datasets: MNIST IDX files, synthetic Gaussian blobs, and seeded batching.
//!
//! Shuffling uses ChaCha8 (`rand_chacha`) seeded with the plan's seed, with
//! the epoch number selecting the ChaCha stream, followed by a Fisher–Yates
//! pass. Both the generator and the shuffle are pinned here so batch order
//! only depends on `(seed, epoch)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

/// Inputs in `[0, 1]` with one-hot targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub class_count: usize,
}

impl Dataset {
    pub fn from_labels(inputs: Matrix, labels: &[usize], class_count: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Contract(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self {
            inputs,
            targets: one_hot(labels, class_count)?,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn features(&self) -> usize {
        self.inputs.cols()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.targets.argmax_rows()
    }
}

pub fn one_hot(labels: &[usize], class_count: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), class_count);
    for (i, &label) in labels.iter().enumerate() {
        if label >= class_count {
            return Err(Error::Contract(format!(
                "label {label} at row {i} is not below class count {class_count}"
            )));
        }
        m.set(i, label, 1.0);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize, source_name: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_error(source_name, bytes.len(), "truncated header"))
}

fn parse_error(source_name: &str, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source_name.to_string(),
        offset,
        message: message.into(),
    }
}

fn check_magic(bytes: &[u8], expected: u32, source_name: &str) -> Result<()> {
    let magic = read_u32(bytes, 0, source_name)?;
    if magic != expected {
        return Err(parse_error(
            source_name,
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        ));
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, expected: usize, source_name: &str) -> Result<()> {
    let available = bytes.len() - header;
    if available < expected {
        return Err(parse_error(
            source_name,
            bytes.len(),
            format!("truncated: expected {expected} data bytes after the header, found {available}"),
        ));
    }
    if available > expected {
        return Err(parse_error(
            source_name,
            header + expected,
            format!("{} unexpected trailing bytes", available - expected),
        ));
    }
    Ok(())
}

/// Parses an IDX3 image file (big-endian header, then `count*rows*cols` bytes).
pub fn parse_idx_images(bytes: &[u8], source_name: &str) -> Result<IdxImages> {
    check_magic(bytes, IDX_IMAGES_MAGIC, source_name)?;
    let count = read_u32(bytes, 4, source_name)? as usize;
    let rows = read_u32(bytes, 8, source_name)? as usize;
    let cols = read_u32(bytes, 12, source_name)? as usize;
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| parse_error(source_name, 4, "dimensions overflow"))?;
    check_payload(bytes, 16, expected, source_name)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8], source_name: &str) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC, source_name)?;
    let count = read_u32(bytes, 4, source_name)? as usize;
    check_payload(bytes, 8, count, source_name)?;
    Ok(bytes[8..].to_vec())
}

/// Builds a dataset from parsed IDX images and labels (pixels scaled by 1/255).
pub fn dataset_from_idx(images: &IdxImages, labels: &[u8], labels_name: &str) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(parse_error(
            labels_name,
            4,
            format!(
                "label count {} does not match image count {}",
                labels.len(),
                images.count
            ),
        ));
    }
    if let Some(i) = labels.iter().position(|&l| l as usize >= MNIST_CLASSES) {
        return Err(parse_error(
            labels_name,
            8 + i,
            format!("label {} is not a digit", labels[i]),
        ));
    }
    let features = images.rows * images.cols;
    let data = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let inputs = Matrix::from_vec(images.count, features, data)?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    Dataset::from_labels(inputs, &labels, MNIST_CLASSES)
}

pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let label_bytes = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let images_name = images_path.display().to_string();
    let labels_name = labels_path.display().to_string();
    let images = parse_idx_images(&image_bytes, &images_name)?;
    let labels = parse_idx_labels(&label_bytes, &labels_name)?;
    dataset_from_idx(&images, &labels, &labels_name)
}

/// Center coordinate `dim` of class `class`: points on a circle of radius 0.3
/// around 0.5, one angle per class, with the phase advancing by a quarter turn
/// per dimension.
fn blob_center(class: usize, classes: usize, dim: usize) -> f64 {
    let angle = std::f64::consts::TAU * class as f64 / classes as f64
        + dim as f64 * std::f64::consts::FRAC_PI_2;
    0.5 + 0.3 * angle.cos()
}

/// Gaussian clusters (std `0.1 / separation`) at fixed centers, clipped to
/// `[0, 1]`. Samples are laid out class by class.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    dims: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || per_class == 0 || dims == 0 {
        return Err(Error::Contract(
            "synthetic blobs need at least one class, sample and dimension".into(),
        ));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(Error::Contract(format!(
            "separation {separation} must be positive"
        )));
    }
    let noise = Normal::new(0.0, 0.1 / separation)
        .map_err(|e| Error::Contract(format!("blob noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(classes * per_class * dims);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        for _ in 0..per_class {
            for dim in 0..dims {
                let v = blob_center(class, classes, dim) + noise.sample(&mut rng);
                data.push(v.clamp(0.0, 1.0));
            }
            labels.push(class);
        }
    }
    let inputs = Matrix::from_vec(classes * per_class, dims, data)?;
    Dataset::from_labels(inputs, &labels, classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchPlan {
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub drop_last: bool,
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Matrix,
}

/// Lazily materialized batches for one epoch.
pub struct Batches<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    drop_last: bool,
    next: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let remaining = self.order.len() - self.next;
        if remaining == 0 || (self.drop_last && remaining < self.batch_size) {
            return None;
        }
        let end = self.next + remaining.min(self.batch_size);
        let idx = &self.order[self.next..end];
        self.next = end;
        Some(Batch {
            inputs: self.data.inputs.select_rows(idx),
            targets: self.data.targets.select_rows(idx),
        })
    }
}

pub fn batches<'a>(data: &'a Dataset, plan: &BatchPlan, epoch: u64) -> Result<Batches<'a>> {
    if plan.batch_size == 0 {
        return Err(Error::Contract("batch size must be at least 1".into()));
    }
    Ok(Batches {
        data,
        order: epoch_permutation(data.len(), plan.seed, epoch),
        batch_size: plan.batch_size,
        drop_last: plan.drop_last,
        next: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_rows() {
        let m = one_hot(&[2, 0], 3).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(one_hot(&[3], 3).is_err());
    }

    #[test]
    fn blobs_are_seeded_and_bounded() {
        let a = synth_blobs(3, 20, 4, 1.0, 9).unwrap();
        assert_eq!(a, synth_blobs(3, 20, 4, 1.0, 9).unwrap());
        assert_ne!(a, synth_blobs(3, 20, 4, 1.0, 10).unwrap());
        assert_eq!(a.class_count, 3);
        assert!(a.inputs.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(synth_blobs(0, 1, 1, 1.0, 0).is_err());
        assert!(synth_blobs(1, 1, 1, 0.0, 0).is_err());
    }

    #[test]
    fn permutation_depends_on_seed_and_epoch() {
        let a = epoch_permutation(50, 7, 0);
        assert_eq!(a, epoch_permutation(50, 7, 0));
        assert_ne!(a, epoch_permutation(50, 7, 1));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn full_batch_is_permuted_dataset() {
        let ds = synth_blobs(2, 5, 2, 1.0, 1).unwrap();
        let plan = BatchPlan {
            batch_size: ds.len(),
            seed: 3,
            drop_last: false,
        };
        let all: Vec<_> = batches(&ds, &plan, 0).unwrap().collect();
        assert_eq!(all.len(), 1);
        let order = epoch_permutation(ds.len(), 3, 0);
        assert_eq!(all[0].inputs, ds.inputs.select_rows(&order));
    }

    #[test]
    fn drop_last_discards_short_tail() {
        let ds = synth_blobs(1, 10, 1, 1.0, 1).unwrap();
        let mut plan = BatchPlan {
            batch_size: 4,
            seed: 0,
            drop_last: true,
        };
        let sizes: Vec<_> = batches(&ds, &plan, 0).unwrap().map(|b| b.inputs.rows()).collect();
        assert_eq!(sizes, vec![4, 4]);
        plan.drop_last = false;
        let sizes: Vec<_> = batches(&ds, &plan, 0).unwrap().map(|b| b.inputs.rows()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        plan.batch_size = 0;
        assert!(batches(&ds, &plan, 0).is_err());
    }

    #[test]
    fn label_count_mismatch_names_offset() {
        let images = IdxImages {
            count: 2,
            rows: 1,
            cols: 1,
            pixels: vec![0, 255],
        };
        let err = dataset_from_idx(&images, &[1], "labels").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 4, .. }), "{err}");
    }
}
