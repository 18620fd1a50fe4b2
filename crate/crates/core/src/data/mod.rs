//! Labeled patch datasets: loaders, the synthetic analog, splitting,
//! batching and flip augmentation.
//!
//! Pixels are stored as bytes in channel-first order and widened to `f64`
//! in `[0, 1]` (value / 255) only when a batch tensor is materialized, so a
//! dataset costs one byte per pixel regardless of where it came from.

mod augment;
mod image_dir;
#[cfg(feature = "pcam-h5")]
mod pcam;
mod synth;

pub use augment::{augment_batch, flip_horizontal, flip_vertical, Flips};
pub use image_dir::{load_image_dir, write_image_dir, CACHE_ENV};
#[cfg(feature = "pcam-h5")]
pub use pcam::{load_pcam_h5, load_pcam_h5_with_budget, DEFAULT_CACHE_BUDGET};
pub use synth::{synth_center_blob, CENTER_END, CENTER_START};

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Random-access image storage, channel-first bytes.
pub trait ImageSource: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[channels, height, width]`.
    fn image_shape(&self) -> [usize; 3];

    /// Copy image `index` into `out` (length `c*h*w`).
    fn read_into(&self, index: usize, out: &mut [u8]) -> Result<()>;

    fn describe(&self) -> String;
}

/// Images held fully in memory.
#[derive(Clone, Debug)]
pub struct InMemory {
    shape: [usize; 3],
    bytes: Vec<u8>,
    description: String,
}

impl InMemory {
    pub fn new(shape: [usize; 3], bytes: Vec<u8>, description: impl Into<String>) -> Result<Self> {
        let per = shape.iter().product::<usize>();
        if per == 0 || bytes.len() % per != 0 {
            return Err(Error::dim(format!(
                "{} bytes do not divide into {shape:?} images",
                bytes.len()
            )));
        }
        Ok(InMemory {
            shape,
            bytes,
            description: description.into(),
        })
    }
}

impl ImageSource for InMemory {
    fn len(&self) -> usize {
        self.bytes.len() / self.shape.iter().product::<usize>()
    }

    fn image_shape(&self) -> [usize; 3] {
        self.shape
    }

    fn read_into(&self, index: usize, out: &mut [u8]) -> Result<()> {
        let per = out.len();
        let src = self
            .bytes
            .get(index * per..(index + 1) * per)
            .ok_or_else(|| Error::param(format!("image index {index} out of range")))?;
        out.copy_from_slice(src);
        Ok(())
    }

    fn describe(&self) -> String {
        self.description.clone()
    }
}

/// Positive/negative counts of a split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub positives: usize,
    pub negatives: usize,
    pub total: usize,
}

/// A view of labeled images: a shared source plus the source indices in view order.
#[derive(Clone)]
pub struct LabeledDataset {
    source: Arc<dyn ImageSource>,
    indices: Vec<usize>,
    labels: Vec<u8>,
}

impl std::fmt::Debug for LabeledDataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LabeledDataset")
            .field("source", &self.source.describe())
            .field("len", &self.len())
            .finish()
    }
}

impl LabeledDataset {
    /// Every image of `source`, in source order.
    pub fn new(source: Arc<dyn ImageSource>, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != source.len() {
            return Err(Error::dim(format!(
                "{} labels for {} images",
                labels.len(),
                source.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Format(format!("label {bad} is not binary")));
        }
        Ok(LabeledDataset {
            indices: (0..source.len()).collect(),
            source,
            labels,
        })
    }

    /// In-memory dataset from channel-first bytes.
    pub fn from_bytes(shape: [usize; 3], bytes: Vec<u8>, labels: Vec<u8>, description: &str) -> Result<Self> {
        Self::new(Arc::new(InMemory::new(shape, bytes, description)?), labels)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.source.image_shape()
    }

    pub fn describe(&self) -> String {
        self.source.describe()
    }

    /// Indices into the underlying source, in view order.
    pub fn source_indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn stats(&self) -> SplitStats {
        let positives = self.labels.iter().filter(|&&l| l == 1).count();
        SplitStats {
            positives,
            negatives: self.len() - positives,
            total: self.len(),
        }
    }

    /// Raw channel-first bytes of the image at `position`.
    pub fn image_bytes(&self, position: usize) -> Result<Vec<u8>> {
        let mut out = vec![0; self.image_shape().iter().product()];
        let index = *self
            .indices
            .get(position)
            .ok_or_else(|| Error::param(format!("position {position} out of range")))?;
        self.source.read_into(index, &mut out)?;
        Ok(out)
    }

    /// Rescaled `[n, c, h, w]` tensor for the given view positions.
    pub fn batch_tensor(&self, positions: &[usize]) -> Result<Tensor> {
        let [c, h, w] = self.image_shape();
        let per = c * h * w;
        let mut bytes = vec![0u8; per];
        let mut data = Vec::with_capacity(per * positions.len());
        for &p in positions {
            let index = *self
                .indices
                .get(p)
                .ok_or_else(|| Error::param(format!("position {p} out of range")))?;
            self.source.read_into(index, &mut bytes)?;
            data.extend(bytes.iter().map(|&b| rescale(b)));
        }
        Tensor::new([positions.len(), c, h, w], data)
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        self.batch_tensor(&(0..self.len()).collect::<Vec<_>>())
    }

    /// View restricted to `positions` (in that order).
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        if let Some(&bad) = positions.iter().find(|&&p| p >= self.len()) {
            return Err(Error::param(format!("position {bad} out of range")));
        }
        Ok(LabeledDataset {
            source: Arc::clone(&self.source),
            indices: positions.iter().map(|&p| self.indices[p]).collect(),
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
        })
    }
}

/// Byte → `[0, 1]`.
pub fn rescale(byte: u8) -> f64 {
    f64::from(byte) / 255.0
}

/// Seeded permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng(seed));
    order
}

/// Split into `(part_a, part_b)` with `part_b` holding `fraction` of the samples.
///
/// `part_b` gets `ceil(fraction · n)` samples. In stratified mode each class
/// contributes its proportional share, rounded down, and the samples left
/// over go to the classes with the largest rounding remainders. Both parts
/// keep the dataset's relative order.
pub fn split(
    dataset: &LabeledDataset,
    fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (a, b) = split_indices(dataset.labels(), fraction, seed, stratified)?;
    Ok((dataset.subset(&a)?, dataset.subset(&b)?))
}

/// Positions of the two parts of [`split`] for a label vector.
pub fn split_indices(labels: &[u8], fraction: f64, seed: u64, stratified: bool) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    let n = labels.len();
    // The guard keeps e.g. 0.1 · 10 from rounding up to 2.
    let n_b = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let groups: Vec<Vec<usize>> = if stratified {
        (0..=1u8)
            .map(|c| (0..n).filter(|&i| labels[i] == c).collect())
            .filter(|g: &Vec<usize>| !g.is_empty())
            .collect()
    } else {
        vec![(0..n).collect()]
    };
    let exact: Vec<f64> = groups.iter().map(|g| n_b as f64 * g.len() as f64 / n.max(1) as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..groups.len()).collect();
    by_remainder.sort_by(|&x, &y| (exact[y] - exact[y].floor()).total_cmp(&(exact[x] - exact[x].floor())));
    for &g in by_remainder.iter().cycle().take(n_b - quota.iter().sum::<usize>()) {
        quota[g] += 1;
    }
    let mut rng = crate::rng(seed);
    let mut in_b = vec![false; n];
    for (mut group, take) in groups.into_iter().zip(quota) {
        group.shuffle(&mut rng);
        for &i in &group[..take] {
            in_b[i] = true;
        }
    }
    let (b, a): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_b[i]);
    if a.is_empty() || b.is_empty() {
        return Err(Error::param(format!("fraction {fraction} of {n} samples leaves an empty part")));
    }
    Ok((a, b))
}

/// One mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// View positions in the dataset.
    pub positions: Vec<usize>,
    pub images: Tensor,
    pub labels: Vec<u8>,
}

/// Iterator over `ceil(n / batch_size)` batches; the last may be short.
pub struct Batches<'a> {
    dataset: &'a LabeledDataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let positions = self.order[self.next..end].to_vec();
        self.next = end;
        let labels = positions.iter().map(|&p| self.dataset.labels[p]).collect();
        Some(self.dataset.batch_tensor(&positions).map(|images| Batch {
            positions,
            images,
            labels,
        }))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.next).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

/// Batches in dataset order, or in a seeded shuffled order.
pub fn batches(dataset: &LabeledDataset, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::param("batch size must be at least 1"));
    }
    let order = match shuffle_seed {
        Some(seed) => permutation(dataset.len(), seed),
        None => (0..dataset.len()).collect(),
    };
    Ok(Batches {
        dataset,
        order,
        batch_size,
        next: 0,
    })
}
