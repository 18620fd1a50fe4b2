use rand::Rng as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Rng;

/// Flips applied to one image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flips {
    pub horizontal: bool,
    pub vertical: bool,
}

/// Mirror every image of an `[n, c, h, w]` tensor left to right.
pub fn flip_horizontal(images: &Tensor) -> Result<Tensor> {
    let mut out = images.clone();
    let [n, c, h, w] = images.dims4()?;
    for plane in 0..n * c {
        for row in out.data_mut()[plane * h * w..(plane + 1) * h * w].chunks_mut(w) {
            row.reverse();
        }
    }
    Ok(out)
}

/// Mirror every image of an `[n, c, h, w]` tensor top to bottom.
pub fn flip_vertical(images: &Tensor) -> Result<Tensor> {
    let mut out = images.clone();
    let [n, c, h, w] = images.dims4()?;
    for plane in 0..n * c {
        let p = &mut out.data_mut()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h / 2 {
            let (top, bottom) = p.split_at_mut((h - 1 - y) * w);
            top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }
    Ok(out)
}

/// Independently flip each image horizontally and vertically with probability 0.5 each.
pub fn augment_batch(images: &mut Tensor, rng: &mut Rng) -> Result<Vec<Flips>> {
    let [n, c, h, w] = images.dims4()?;
    if h == 0 || w == 0 {
        return Err(Error::dim("cannot augment empty images"));
    }
    let per = c * h * w;
    let mut applied = Vec::with_capacity(n);
    for i in 0..n {
        let flips = Flips {
            horizontal: rng.random_bool(0.5),
            vertical: rng.random_bool(0.5),
        };
        let img = &mut images.data_mut()[i * per..(i + 1) * per];
        for plane in img.chunks_mut(h * w) {
            if flips.horizontal {
                plane.chunks_mut(w).for_each(<[f64]>::reverse);
            }
            if flips.vertical {
                for y in 0..h / 2 {
                    let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
                    top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
                }
            }
        }
        applied.push(flips);
    }
    Ok(applied)
}
