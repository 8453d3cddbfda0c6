//! Deterministic offline embedder: signed feature hashing of character 3-grams.

use crate::text::nfc;

/// Smallest dimension `hash_embed` accepts.
pub const MIN_DIM: usize = 8;
pub const DEFAULT_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SEED: u64 = 0x5d2a_6f1c_93b4_e087;

// Boundary markers so that texts shorter than three characters still yield grams.
const BEGIN: char = '\u{2}';
const END: char = '\u{3}';

fn gram_hash(gram: &[char]) -> u64 {
    let mut h = FNV_OFFSET ^ SEED;
    let mut buf = [0u8; 4];
    for c in gram {
        for b in c.encode_utf8(&mut buf).bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Embeds `text` into a unit vector of length `dim`.
///
/// The NFC-normalized, lowercased text is framed by boundary markers and every
/// character 3-gram adds ±1 to one bucket, with bucket and sign taken from a
/// fixed-seed hash. Output is identical across runs and platforms.
///
/// Panics if `dim < MIN_DIM`.
pub fn hash_embed(text: &str, dim: usize) -> Vec<f32> {
    assert!(dim >= MIN_DIM, "hash_embed needs dim >= {MIN_DIM}, got {dim}");
    let mut chars = vec![BEGIN];
    chars.extend(nfc(text).chars().flat_map(char::to_lowercase));
    chars.push(END);

    let mut acc = vec![0f64; dim];
    for gram in chars.windows(3) {
        let h = gram_hash(gram);
        let bucket = (h % dim as u64) as usize;
        acc[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Every gram cancelled out; fall back to a fixed basis vector.
        let mut v = vec![0f32; dim];
        v[0] = 1.0;
        return v;
    }
    acc.iter().map(|x| (x / norm) as f32).collect()
}
