//! Binary codes over {-1, +1} and their packed byte form.
//!
//! Bit `k` lives in byte `k / 8` at position `k % 8`; `+1` is stored as a set bit.

use crate::error::{Error, Result};
use crate::numerics::hard_sign;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    bits: Vec<i8>,
}

impl BinaryCode {
    /// Binarises real values with `sign(0) = +1`.
    pub fn from_reals(values: &[f64]) -> Self {
        Self {
            bits: values.iter().map(|&v| hard_sign(v) as i8).collect(),
        }
    }

    pub fn from_bits(bits: Vec<i8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b != 1 && b != -1) {
            return Err(Error::Domain(format!("code entry {b} is not ±1")));
        }
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[i8] {
        &self.bits
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }

    pub fn negated(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| -b).collect(),
        }
    }

    pub fn packed_len(k: usize) -> usize {
        k.div_ceil(8)
    }

    pub fn pack(&self) -> Vec<u8> {
        let mut out = vec![0u8; Self::packed_len(self.bits.len())];
        for (k, &b) in self.bits.iter().enumerate() {
            if b > 0 {
                out[k / 8] |= 1 << (k % 8);
            }
        }
        out
    }

    pub fn unpack(bytes: &[u8], k: usize) -> Result<Self> {
        if bytes.len() != Self::packed_len(k) {
            return Err(Error::shape(
                "unpack",
                format!("{} bytes for {k} bits", bytes.len()),
            ));
        }
        let bits = (0..k)
            .map(|i| if bytes[i / 8] >> (i % 8) & 1 == 1 { 1 } else { -1 })
            .collect();
        Ok(Self { bits })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_maps_to_plus_one() {
        assert_eq!(BinaryCode::from_reals(&[0.0, -0.5, 2.0]).bits(), &[1, -1, 1]);
    }

    #[test]
    fn layout_is_lsb_first() {
        let c = BinaryCode::from_bits(vec![1, -1, -1, -1, -1, -1, -1, -1, 1]).unwrap();
        assert_eq!(c.pack(), vec![0b0000_0001, 0b0000_0001]);
    }

    #[test]
    fn rejects_non_binary() {
        assert!(BinaryCode::from_bits(vec![1, 0]).is_err());
        assert!(BinaryCode::unpack(&[0], 9).is_err());
    }

    proptest! {
        #[test]
        fn pack_round_trip(bits in proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], 0..100)) {
            let c = BinaryCode::from_bits(bits).unwrap();
            prop_assert_eq!(BinaryCode::unpack(&c.pack(), c.len()).unwrap(), c);
        }
    }
}
