use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random stream keyed by a global seed and a path of indices
/// (e.g. `[tag, epoch, iteration]`). The same key always yields the same stream,
/// whichever thread asks for it.
pub fn stream_rng(seed: u64, stream: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(stream.len() as u64);
    for &s in stream {
        h = splitmix(h ^ s);
    }
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&h.to_le_bytes());
    key[16..24].copy_from_slice(&splitmix(h ^ seed).to_le_bytes());
    key[24..].copy_from_slice(&splitmix(!h).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Stream tags, kept distinct so unrelated consumers never share randomness.
pub mod tags {
    pub const TOY: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const PAIR: u64 = 3;
    pub const CONSISTENCY: u64 = 4;
    pub const REGRESSION: u64 = 5;
    pub const EXTRACTOR: u64 = 6;
    pub const CLIP: u64 = 7;
    pub const INIT: u64 = 8;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream_rng(1, &[2, 3]).random();
        let b: u64 = stream_rng(1, &[2, 3]).random();
        let c: u64 = stream_rng(1, &[3, 2]).random();
        let d: u64 = stream_rng(2, &[2, 3]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
