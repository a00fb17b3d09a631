//! Generator-polynomial CRCs of TS 38.212 (section 5.1).
//!
//! Bits are processed MSB first with a zero initial register and no output
//! reflection; the parity bits are appended MSB first.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crc {
    len: usize,
    poly: u32,
}

impl Crc {
    /// gCRC6(D) = D^6 + D^5 + 1
    pub const CRC6: Crc = Crc { len: 6, poly: 0x21 };
    /// gCRC11(D) = D^11 + D^10 + D^9 + D^5 + 1
    pub const CRC11: Crc = Crc { len: 11, poly: 0x621 };
    /// gCRC16(D) = D^16 + D^12 + D^5 + 1
    pub const CRC16: Crc = Crc { len: 16, poly: 0x1021 };
    /// gCRC24C(D)
    pub const CRC24C: Crc = Crc { len: 24, poly: 0xB2_B117 };

    /// The NR polynomial of the given length.
    pub fn nr(len: usize) -> Result<Crc> {
        match len {
            6 => Ok(Self::CRC6),
            11 => Ok(Self::CRC11),
            16 => Ok(Self::CRC16),
            24 => Ok(Self::CRC24C),
            other => Err(Error::Config(format!(
                "unsupported CRC length {other} (expected 6, 11, 16 or 24)"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn remainder(&self, bits: &[u8]) -> u32 {
        let mask = (1u32 << self.len) - 1;
        let top = self.len - 1;
        let mut reg = 0u32;
        for &b in bits {
            let feedback = ((reg >> top) & 1) ^ u32::from(b & 1);
            reg = (reg << 1) & mask;
            if feedback == 1 {
                reg ^= self.poly;
            }
        }
        reg
    }

    /// Returns `bits` followed by their parity bits.
    pub fn attach(&self, bits: &[u8]) -> Vec<u8> {
        let rem = self.remainder(bits);
        let mut out = Vec::with_capacity(bits.len() + self.len);
        out.extend_from_slice(bits);
        out.extend((0..self.len).rev().map(|i| ((rem >> i) & 1) as u8));
        out
    }

    /// True iff the whole block (payload and parity) leaves a zero remainder.
    pub fn check(&self, bits: &[u8]) -> bool {
        bits.len() >= self.len && self.remainder(bits) == 0
    }
}
