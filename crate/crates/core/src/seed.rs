//! Derivation of independent sub-seeds from one global seed.

/// Independent random streams drawn from the global seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedStream {
    Clustering = 1,
    Regions = 2,
    Mining = 3,
    Evaluation = 4,
    Synthetic = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `stream` at the position given by `path` (e.g. stage, round,
/// candidate). Equal inputs give equal seeds on every platform.
pub fn derive_seed(base: u64, stream: SeedStream, path: &[u64]) -> u64 {
    let mut s = splitmix64(base ^ splitmix64(stream as u64));
    for &p in path {
        s = splitmix64(s ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    s
}
