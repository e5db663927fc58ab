use crate::error::{Error, Result};
use crate::hashopt::SignCode;

/// Bit-packed ±1 code: bit `j` (LSB-first within each byte) is set iff
/// component `j` is +1. Padding bits past `h` are zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedCode {
    bytes: Vec<u8>,
    h: usize,
}

impl PackedCode {
    pub fn from_bytes(bytes: Vec<u8>, h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::InvalidArgument("code length must be positive".into()));
        }
        if bytes.len() != h.div_ceil(8) {
            return Err(Error::DimensionMismatch {
                expected: h.div_ceil(8),
                got: bytes.len(),
            });
        }
        if !h.is_multiple_of(8) && bytes[bytes.len() - 1] >> (h % 8) != 0 {
            return Err(Error::InvalidArgument("padding bits must be zero".into()));
        }
        Ok(PackedCode { bytes, h })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit(&self, j: usize) -> bool {
        self.bytes[j / 8] >> (j % 8) & 1 == 1
    }
}

pub fn pack(code: &SignCode) -> PackedCode {
    let h = code.len();
    let mut bytes = vec![0u8; h.div_ceil(8)];
    for (j, &c) in code.as_slice().iter().enumerate() {
        if c > 0 {
            bytes[j / 8] |= 1 << (j % 8);
        }
    }
    PackedCode { bytes, h }
}

pub fn unpack(packed: &PackedCode) -> SignCode {
    SignCode((0..packed.h).map(|j| if packed.bit(j) { 1 } else { -1 }).collect())
}

/// `popcount(a XOR b)`, processed eight bytes at a time.
pub fn hamming_distance(a: &PackedCode, b: &PackedCode) -> Result<u32> {
    if a.h != b.h {
        return Err(Error::DimensionMismatch {
            expected: a.h,
            got: b.h,
        });
    }
    Ok(xor_popcount(&a.bytes, &b.bytes))
}

#[inline]
pub(crate) fn xor_popcount(a: &[u8], b: &[u8]) -> u32 {
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: u32 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum();
    ca.zip(cb)
        .map(|(x, y)| {
            (u64::from_le_bytes(x.try_into().unwrap()) ^ u64::from_le_bytes(y.try_into().unwrap())).count_ones()
        })
        .sum::<u32>()
        + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn alternating_code_packs_to_0x55() {
        let c = SignCode(vec![1, -1, 1, -1, 1, -1, 1, -1]);
        assert_eq!(pack(&c).as_bytes(), &[0x55]);
        assert_eq!(pack(&SignCode(vec![1; 8])).as_bytes(), &[0xFF]);
        assert_eq!(pack(&SignCode(vec![1; 9])).as_bytes(), &[0xFF, 0x01]);
    }

    #[test]
    fn identical_and_complement() {
        let a = PackedCode::from_bytes(vec![0b1011_0010], 8).unwrap();
        let b = PackedCode::from_bytes(vec![!0b1011_0010u8], 8).unwrap();
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
        assert_eq!(hamming_distance(&a, &b).unwrap(), 8);
    }

    #[test]
    fn mismatched_lengths() {
        let a = pack(&SignCode(vec![1; 8]));
        let b = pack(&SignCode(vec![1; 16]));
        assert!(hamming_distance(&a, &b).is_err());
    }

    #[test]
    fn from_bytes_validation() {
        assert!(PackedCode::from_bytes(vec![0x10], 4).is_err());
        assert!(PackedCode::from_bytes(vec![0x0F], 4).is_ok());
        assert!(PackedCode::from_bytes(vec![0, 0], 8).is_err());
        assert!(PackedCode::from_bytes(vec![], 0).is_err());
    }

    fn code_strategy() -> impl Strategy<Value = SignCode> {
        (1usize..200)
            .prop_flat_map(|h| proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], h).prop_map(SignCode))
    }

    proptest! {
        #[test]
        fn unpack_pack_identity(c in code_strategy()) {
            prop_assert_eq!(unpack(&pack(&c)), c);
        }

        #[test]
        fn hamming_equals_half_gap(seed in any::<u64>(), h in 1usize..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut gen = || SignCode((0..h).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect());
            let (a, b, c) = (gen(), gen(), gen());
            let (pa, pb, pc) = (pack(&a), pack(&b), pack(&c));
            let dab = hamming_distance(&pa, &pb).unwrap() as i64;
            prop_assert_eq!(2 * dab, h as i64 - a.dot(&b));
            // metric axioms
            prop_assert_eq!(dab, hamming_distance(&pb, &pa).unwrap() as i64);
            let dac = hamming_distance(&pa, &pc).unwrap() as i64;
            let dbc = hamming_distance(&pb, &pc).unwrap() as i64;
            prop_assert!(dac <= dab + dbc);
            prop_assert_eq!(dab == 0, a == b);
        }
    }
}
