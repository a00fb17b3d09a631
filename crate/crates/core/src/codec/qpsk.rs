//! Gray-mapped QPSK.
//!
//! Bit pair `(b0, b1)` maps to `((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)`, so
//! `(0, 0)` is `(1 + j)/sqrt(2)`. The first bit rides on the in-phase part.

use num_complex::Complex64;
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};

pub fn qpsk_map(bits: &[u8]) -> Result<Vec<Complex64>> {
    if bits.len() % 2 != 0 {
        return Err(Error::Dimension {
            expected: bits.len() + 1,
            actual: bits.len(),
        });
    }
    Ok(bits
        .chunks_exact(2)
        .map(|pair| {
            Complex64::new(
                (1.0 - 2.0 * f64::from(pair[0] & 1)) * FRAC_1_SQRT_2,
                (1.0 - 2.0 * f64::from(pair[1] & 1)) * FRAC_1_SQRT_2,
            )
        })
        .collect())
}

/// Per-component LLRs of a unit-gain symbol estimate with residual noise of
/// variance `1/sinr`: `2 sqrt(2) sinr Re(z)` and `2 sqrt(2) sinr Im(z)`.
pub fn qpsk_llr(symbol_est: Complex64, sinr: f64) -> (f64, f64) {
    let k = 2.0 * std::f64::consts::SQRT_2 * sinr;
    (k * symbol_est.re, k * symbol_est.im)
}

/// Hard decisions, the inverse of [`qpsk_map`] on clean symbols.
pub fn qpsk_hard(symbols: &[Complex64]) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|s| [u8::from(s.re < 0.0), u8::from(s.im < 0.0)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping_convention() {
        let s = qpsk_map(&[0, 0, 1, 0, 0, 1, 1, 1]).unwrap();
        let h = FRAC_1_SQRT_2;
        assert_eq!(
            s,
            vec![
                Complex64::new(h, h),
                Complex64::new(-h, h),
                Complex64::new(h, -h),
                Complex64::new(-h, -h)
            ]
        );
        assert!(s.iter().all(|v| (v.norm_sqr() - 1.0).abs() < 1e-15));
        assert!(qpsk_map(&[0, 1, 1]).is_err());
    }

    #[test]
    fn llr_signs_recover_bits() {
        for pair in [[0u8, 0], [0, 1], [1, 0], [1, 1]] {
            let s = qpsk_map(&pair).unwrap()[0];
            for sinr in [1.0, 1e9] {
                let (li, lq) = qpsk_llr(s, sinr);
                assert_eq!(u8::from(li < 0.0), pair[0]);
                assert_eq!(u8::from(lq < 0.0), pair[1]);
            }
            assert_eq!(qpsk_hard(&[s]), pair.to_vec());
        }
        let (li, _) = qpsk_llr(Complex64::new(FRAC_1_SQRT_2, 0.0), 1.0);
        assert!((li - 2.0).abs() < 1e-12);
    }
}
