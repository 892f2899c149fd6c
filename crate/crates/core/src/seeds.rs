//! Seed derivation for randomized suites.
//!
//! Trial `i` of a suite with master seed `s` uses `splitmix64(s ^ splitmix64(i))`,
//! so any trial can be rerun on its own.

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn trial_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Folds a sequence of words into one hash.
pub fn hash_words(words: impl IntoIterator<Item = u64>) -> u64 {
    words
        .into_iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, w| splitmix64(acc ^ w))
}
