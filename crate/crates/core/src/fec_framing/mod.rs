//! Channel coding and transport framing: block FEC codes, a row/column
//! interleaver, CRC-32 and the `FSO1` frame format.

mod code;
mod crc;
mod frame;
mod interleaver;

pub use code::{fec_decode, fec_encode, FecError, FecScheme};
pub use crc::crc32;
pub use frame::{
    frame_pack, frame_unpack, Frame, IntegrityError, FLAG_RAW_FRAMES, FRAME_OVERHEAD, HEADER_LEN,
    MAGIC, MAX_PAYLOAD, VERSION,
};
pub use interleaver::Interleaver;

/// MSB-first bit expansion.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    let mut bits = Vec::with_capacity(bytes.len() * 8);
    for &b in bytes {
        bits.extend((0..8).rev().map(|i| (b >> i) & 1));
    }
    bits
}

/// Inverse of [`bytes_to_bits`]; a trailing partial byte is zero-filled.
pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bit_order_is_msb_first() {
        assert_eq!(bytes_to_bits(&[0xA1]), vec![1, 0, 1, 0, 0, 0, 0, 1]);
        assert_eq!(bits_to_bytes(&[1, 1]), vec![0xC0]);
    }

    proptest! {
        #[test]
        fn byte_bit_round_trip(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            prop_assert_eq!(bits_to_bytes(&bytes_to_bits(&bytes)), bytes);
        }
    }
}
