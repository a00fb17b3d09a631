//! Preamble-seeded sparse interleaver.
//!
//! The permutation is a Fisher-Yates shuffle driven by SplitMix64, seeded
//! with the preamble bits read as a big-endian unsigned integer. For
//! `i = n-1, ..., 1` it draws `j` uniformly in `0..=i` (Lemire's
//! multiply-shift with rejection) and swaps entries `i` and `j`. Symbol `k`
//! of the zero-padded block is sent in slot `permutation[k]`.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// SplitMix64 (Steele, Lea, Flood).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix64(self.state)
    }

    /// Uniform in `0..bound`.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(bound);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }
}

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Big-endian integer value of a bit vector (at most 64 bits).
pub fn bits_to_u64(bits: &[u8]) -> u64 {
    bits.iter().fold(0u64, |acc, &b| (acc << 1) | u64::from(b & 1))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    permutation: Vec<usize>,
    seed: u64,
}

impl Interleaver {
    pub fn from_seed(seed: u64, n_c: usize) -> Self {
        let mut permutation: Vec<usize> = (0..n_c).collect();
        let mut rng = SplitMix64::new(seed);
        for i in (1..n_c).rev() {
            let j = rng.below(i as u64 + 1) as usize;
            permutation.swap(i, j);
        }
        Self { permutation, seed }
    }

    pub fn identity(n_c: usize) -> Self {
        Self {
            permutation: (0..n_c).collect(),
            seed: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Slots carrying the first `count` symbols, in symbol order.
    pub fn occupied(&self, count: usize) -> &[usize] {
        &self.permutation[..count]
    }
}

pub fn build_interleaver(seed_bits: &[u8], n_c: usize) -> Result<Interleaver> {
    if seed_bits.len() > 64 {
        return Err(Error::Config(format!(
            "interleaver seed of {} bits exceeds 64",
            seed_bits.len()
        )));
    }
    Ok(Interleaver::from_seed(bits_to_u64(seed_bits), n_c))
}

/// Zero-pads `symbols` to `n_c` entries and permutes them.
pub fn pad_and_interleave(
    symbols: &[Complex64],
    n_c: usize,
    interleaver: &Interleaver,
) -> Result<Vec<Complex64>> {
    if symbols.len() > n_c {
        return Err(Error::Padding {
            symbols: symbols.len(),
            slots: n_c,
        });
    }
    if interleaver.len() != n_c {
        return Err(Error::Dimension {
            expected: n_c,
            actual: interleaver.len(),
        });
    }
    let mut out = vec![Complex64::new(0.0, 0.0); n_c];
    for (&slot, &s) in interleaver.permutation.iter().zip(symbols) {
        out[slot] = s;
    }
    Ok(out)
}

/// Inverse of [`pad_and_interleave`]: gathers the first `count` symbols.
pub fn deinterleave_and_strip(
    slots: &[Complex64],
    count: usize,
    interleaver: &Interleaver,
) -> Result<Vec<Complex64>> {
    if slots.len() != interleaver.len() || count > slots.len() {
        return Err(Error::Dimension {
            expected: interleaver.len(),
            actual: slots.len(),
        });
    }
    Ok(interleaver.occupied(count).iter().map(|&i| slots[i]).collect())
}
