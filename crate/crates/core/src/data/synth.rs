//! Synthetic stand-in for the patch task: a bright disk either touches the
//! central 32×32 window (positive) or stays out of it (negative).

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::Rng;

const SIDE: usize = 96;
/// First row/column of the central window.
pub const CENTER_START: usize = 32;
/// One past the last row/column of the central window.
pub const CENTER_END: usize = 64;

const BACKGROUND: f64 = 0.25;
const BLOB_GAIN: f64 = 0.5;
const NOISE_CLAMP: f64 = 0.2;
const RADIUS: (f64, f64) = (6.0, 14.0);

#[derive(Clone, Copy, Debug)]
struct Disk {
    cx: f64,
    cy: f64,
    r: f64,
}

impl Disk {
    fn covers(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        dx * dx + dy * dy <= self.r * self.r
    }

    fn touches_center(&self) -> bool {
        (CENTER_START..CENTER_END).any(|y| (CENTER_START..CENTER_END).any(|x| self.covers(x, y)))
    }

    fn sample(rng: &mut Rng) -> Disk {
        let r = rng.random_range(RADIUS.0..=RADIUS.1);
        Disk {
            cx: rng.random_range(r..=SIDE as f64 - r),
            cy: rng.random_range(r..=SIDE as f64 - r),
            r,
        }
    }

    fn sample_where(rng: &mut Rng, touching: bool) -> Disk {
        loop {
            let d = Disk::sample(rng);
            if d.touches_center() == touching {
                return d;
            }
        }
    }
}

/// `n` balanced 3×96×96 patches.
///
/// Background is 0.25 plus Gaussian noise of standard deviation `noise_level`
/// clamped to ±0.2; disk pixels get +0.5. Half the negatives carry a disk
/// outside the central window, the other half none.
pub fn synth_center_blob(n: usize, noise_level: f64, seed: u64) -> Result<LabeledDataset> {
    if n < 2 {
        return Err(Error::param(format!("synthetic dataset needs n >= 2, got {n}")));
    }
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(Error::param(format!("noise level {noise_level} must be finite and >= 0")));
    }
    let mut rng = crate::rng(seed);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n / 2)).collect();
    labels.shuffle(&mut rng);
    let noise = Normal::new(0.0, noise_level).map_err(|e| Error::param(e.to_string()))?;

    let plane = SIDE * SIDE;
    let mut bytes = Vec::with_capacity(n * 3 * plane);
    let mut image = vec![0.0; 3 * plane];
    for &label in &labels {
        let disk = if label == 1 {
            Some(Disk::sample_where(&mut rng, true))
        } else if rng.random_bool(0.5) {
            Some(Disk::sample_where(&mut rng, false))
        } else {
            None
        };
        for v in image.iter_mut() {
            *v = BACKGROUND + noise.sample(&mut rng).clamp(-NOISE_CLAMP, NOISE_CLAMP);
        }
        if let Some(d) = disk {
            let lo = |c: f64| (c - d.r).floor().max(0.0) as usize;
            let hi = |c: f64| ((c + d.r).ceil() as usize).min(SIDE);
            for y in lo(d.cy)..hi(d.cy) {
                for x in lo(d.cx)..hi(d.cx) {
                    if d.covers(x, y) {
                        for c in 0..3 {
                            image[c * plane + y * SIDE + x] += BLOB_GAIN;
                        }
                    }
                }
            }
        }
        bytes.extend(image.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    let description = format!("synth_center_blob(n={n}, noise={noise_level}, seed={seed})");
    LabeledDataset::from_bytes([3, SIDE, SIDE], bytes, labels, &description)
}
