//! Sub-seeding scheme.
//!
//! A run is driven by one seed. Each consumer of randomness derives its own
//! stream by adding a fixed offset, so changing e.g. the augmentation policy
//! never perturbs weight initialization.

pub const INIT: u64 = 1;
pub const SHUFFLE: u64 = 2;
pub const DROPOUT: u64 = 3;
pub const AUGMENT: u64 = 4;
pub const VALIDATION_SPLIT: u64 = 5;
pub const TEST_SPLIT: u64 = 6;

pub fn derive(seed: u64, offset: u64) -> u64 {
    seed.wrapping_add(offset)
}

/// Per-epoch stream for consumers that reseed every epoch.
pub fn per_epoch(seed: u64, offset: u64, epoch: usize) -> u64 {
    derive(seed, offset)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(epoch as u64)
}
