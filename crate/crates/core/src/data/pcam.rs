//! Lazy PatchCamelyon HDF5 reader.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use crate::data::{ImageSource, LabeledDataset};
use crate::error::{Error, Result};

const SIDE: usize = 96;
const CHUNK: usize = 256;
/// Decoded-image cache budget used by [`load_pcam_h5`].
pub const DEFAULT_CACHE_BUDGET: usize = 512 << 20;

struct ChunkCache {
    chunks: HashMap<usize, (Arc<Vec<u8>>, u64)>,
    bytes: usize,
    budget: usize,
    clock: u64,
}

impl ChunkCache {
    fn get(&mut self, key: usize) -> Option<Arc<Vec<u8>>> {
        self.clock += 1;
        let clock = self.clock;
        self.chunks.get_mut(&key).map(|(chunk, used)| {
            *used = clock;
            Arc::clone(chunk)
        })
    }

    fn insert(&mut self, key: usize, chunk: Arc<Vec<u8>>) {
        self.bytes += chunk.len();
        self.clock += 1;
        self.chunks.insert(key, (chunk, self.clock));
        while self.bytes > self.budget && self.chunks.len() > 1 {
            let (&oldest, _) = self
                .chunks
                .iter()
                .filter(|(&k, _)| k != key)
                .min_by_key(|(_, (_, used))| *used)
                .expect("more than one chunk cached");
            let (gone, _) = self.chunks.remove(&oldest).expect("key present");
            self.bytes -= gone.len();
        }
    }
}

struct PcamSource {
    path: String,
    n: usize,
    images: Mutex<(hdf5::Dataset, ChunkCache)>,
}

impl ImageSource for PcamSource {
    fn len(&self) -> usize {
        self.n
    }

    fn image_shape(&self) -> [usize; 3] {
        [3, SIDE, SIDE]
    }

    fn read_into(&self, index: usize, out: &mut [u8]) -> Result<()> {
        if index >= self.n {
            return Err(Error::param(format!("image index {index} out of range")));
        }
        let key = index / CHUNK;
        let per = 3 * SIDE * SIDE;
        let mut guard = self.images.lock().unwrap_or_else(|p| p.into_inner());
        let (dataset, cache) = &mut *guard;
        let chunk = match cache.get(key) {
            Some(c) => c,
            None => {
                let start = key * CHUNK;
                let end = (start + CHUNK).min(self.n);
                let hwc = dataset
                    .read_slice::<u8, _, ndarray::Ix4>(ndarray::s![start..end, .., .., ..])
                    .map_err(|e| Error::Load(format!("{}: {e}", self.path)))?;
                let hwc = hwc.as_standard_layout();
                let hwc = hwc.as_slice().expect("standard layout");
                let plane = SIDE * SIDE;
                let mut chw = vec![0u8; hwc.len()];
                for (img_in, img_out) in hwc.chunks_exact(per).zip(chw.chunks_exact_mut(per)) {
                    for (p, px) in img_in.chunks_exact(3).enumerate() {
                        for c in 0..3 {
                            img_out[c * plane + p] = px[c];
                        }
                    }
                }
                let chunk = Arc::new(chw);
                cache.insert(key, Arc::clone(&chunk));
                chunk
            }
        };
        let offset = (index % CHUNK) * per;
        out.copy_from_slice(&chunk[offset..offset + per]);
        Ok(())
    }

    fn describe(&self) -> String {
        format!("pcam-h5 {}", self.path)
    }
}

fn open_key(path: &Path, key: &str) -> Result<hdf5::Dataset> {
    hdf5::silence_errors(true);
    let file = hdf5::File::open(path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    file.dataset(key)
        .map_err(|_| Error::Format(format!("{}: missing dataset key \"{key}\"", path.display())))
}

/// [`load_pcam_h5_with_budget`] with [`DEFAULT_CACHE_BUDGET`].
pub fn load_pcam_h5(x_path: &Path, y_path: &Path) -> Result<LabeledDataset> {
    load_pcam_h5_with_budget(x_path, y_path, DEFAULT_CACHE_BUDGET)
}

/// Open `x` (n×96×96×3 bytes) and `y` (n labels, any singleton trailing axes).
///
/// Labels are read eagerly; images are decoded on demand in blocks of 256
/// and kept in an LRU cache of at most `cache_budget` bytes.
pub fn load_pcam_h5_with_budget(x_path: &Path, y_path: &Path, cache_budget: usize) -> Result<LabeledDataset> {
    let x = open_key(x_path, "x")?;
    let shape = x.shape();
    if shape.len() != 4 || shape[1..] != [SIDE, SIDE, 3] {
        return Err(Error::Format(format!(
            "{}: key \"x\" has shape {shape:?}, expected (n, 96, 96, 3)",
            x_path.display()
        )));
    }
    let n = shape[0];
    let y = open_key(y_path, "y")?;
    let y_shape = y.shape();
    if y_shape.first() != Some(&n) || y_shape.iter().product::<usize>() != n {
        return Err(Error::Format(format!(
            "{}: key \"y\" has shape {y_shape:?}, expected ({n},) or ({n}, 1, 1, 1)",
            y_path.display()
        )));
    }
    let labels: Vec<u8> = y
        .read_raw::<u8>()
        .map_err(|e| Error::Load(format!("{}: {e}", y_path.display())))?;
    let source = PcamSource {
        path: x_path.display().to_string(),
        n,
        images: Mutex::new((
            x,
            ChunkCache {
                chunks: HashMap::new(),
                bytes: 0,
                budget: cache_budget,
                clock: 0,
            },
        )),
    };
    LabeledDataset::new(Arc::new(source), labels)
}
