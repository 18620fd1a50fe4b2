//! Histopathologic patch classification toolkit.
//!
//! Everything is built from scratch on a small dense [`Tensor`] type with
//! hand-derived gradients: the baseline MLP and convolution models, residual
//! and inception backbones with a pooled concatenation head, Adam training
//! with early stopping, the five-metric evaluation suite and the two
//! ensembles (hard majority vote and a jointly trained concatenation
//! network).

pub mod cli;
pub mod data;
pub mod ensemble;
pub mod error;
mod gemm;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod seeds;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Random generator used everywhere a seed is consumed.
///
/// ChaCha8 is stream-stable across platforms and crate versions, which the
/// determinism guarantees (seeded shuffles, dropout masks, synthetic data)
/// depend on.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Seeded generator.
pub fn rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Keep freed heap memory mapped instead of handing it back to the OS.
///
/// Training allocates and frees activation buffers of tens of megabytes on
/// every step. Under glibc's defaults each of those is a fresh `mmap`, so
/// every step pays the page faults again; this roughly halves step time for
/// the 96×96 models. Call once at program start. No-op off glibc.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables.
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        libc::mallopt(libc::M_TOP_PAD, 64 << 20);
    }
}
