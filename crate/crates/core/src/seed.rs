//! Content-derived seeding.
//!
//! Every random choice made while building a taxonomy (weight initialization,
//! validation split, resampling) is drawn from a stream seeded by a hash of the
//! *sorted* multiset of examples. Permuting the input therefore cannot change
//! any result.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental 64-bit FNV-1a hasher with a stable output across platforms and
/// compiler versions.
#[derive(Clone, Debug)]
pub struct ContentHasher(u64);

impl Default for ContentHasher {
    fn default() -> Self {
        ContentHasher(FNV_OFFSET)
    }
}

impl ContentHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write_bytes(&v.to_le_bytes());
    }

    pub fn write_f64(&mut self, v: f64) {
        // -0.0 and 0.0 compare equal, so they must hash equal.
        let v = if v == 0.0 { 0.0 } else { v };
        self.write_u64(v.to_bits());
    }

    pub fn finish(&self) -> u64 {
        // splitmix64 finalizer so nearby inputs give unrelated seeds
        let mut z = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// Total order on (features, label) rows used to canonicalize multisets.
pub fn cmp_rows(a: (&[f64], u8), b: (&[f64], u8)) -> Ordering {
    for (x, y) in a.0.iter().zip(b.0) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.0.len().cmp(&b.0.len()).then(a.1.cmp(&b.1))
}

/// Hash of a row multiset that is already in canonical order.
pub fn hash_sorted_rows<'a, I>(rows: I, salt: u64) -> u64
where
    I: IntoIterator<Item = (&'a [f64], u8)>,
{
    let mut h = ContentHasher::new();
    h.write_u64(salt);
    let mut count = 0u64;
    for (x, y) in rows {
        h.write_u64(x.len() as u64);
        for v in x {
            h.write_f64(*v);
        }
        h.write_bytes(&[y]);
        count += 1;
    }
    h.write_u64(count);
    h.finish()
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream index.
pub fn derive(seed: u64, stream: u64) -> u64 {
    let mut h = ContentHasher::new();
    h.write_u64(seed);
    h.write_u64(stream);
    h.finish()
}
