//! Bit-level chain of the data phase: CRC, polar code, QPSK, and the
//! preamble-seeded interleaver.

pub mod crc;
mod nr_sequence;
pub mod interleaver;
pub mod polar;
pub mod qpsk;

pub use crc::Crc;
pub use interleaver::{
    bits_to_u64, build_interleaver, deinterleave_and_strip, pad_and_interleave, Interleaver,
    SplitMix64,
};
pub use nr_sequence::RELIABILITY_SEQUENCE;
pub use polar::{polar_encode, scl_decode, DecodedBlock, PolarCodeSpec, LLR_CLIP};
pub use qpsk::{qpsk_hard, qpsk_llr, qpsk_map};

use serde::{Deserialize, Serialize};

/// One user's message, split into the preamble index and the data payload.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MessageBits {
    pub preamble_bits: Vec<u8>,
    pub data_bits: Vec<u8>,
}

impl MessageBits {
    pub fn preamble_index(&self) -> usize {
        bits_to_u64(&self.preamble_bits) as usize
    }
}

/// Big-endian `len`-bit representation of `value`.
pub fn u64_to_bits(value: u64, len: usize) -> Vec<u8> {
    (0..len).rev().map(|i| ((value >> i) & 1) as u8).collect()
}

/// CRC, polar-encode and QPSK-map a payload.
pub fn encode_payload(data_bits: &[u8], spec: &PolarCodeSpec) -> crate::Result<Vec<num_complex::Complex64>> {
    let info = spec.crc().attach(data_bits);
    let codeword = polar_encode(&info, spec)?;
    qpsk_map(&codeword)
}
