use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FecError {
    #[error("input length {len} is not a multiple of {block}")]
    Length { len: usize, block: usize },
    #[error("repetition factor must be odd and >= 3, got {0}")]
    BadRepetition(u32),
}

/// Hard-decision block code applied to the transmitted bitstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FecScheme {
    None,
    Repetition { r: u32 },
    Hamming74,
}

impl FecScheme {
    pub fn validate(&self) -> Result<(), FecError> {
        match *self {
            Self::Repetition { r } if r < 3 || r % 2 == 0 => Err(FecError::BadRepetition(r)),
            _ => Ok(()),
        }
    }

    /// `(data bits, coded bits)` per codeword.
    pub fn block(&self) -> (usize, usize) {
        match *self {
            Self::None => (1, 1),
            Self::Repetition { r } => (1, r as usize),
            Self::Hamming74 => (4, 7),
        }
    }

    /// Coded length for `data_len` input bits (which must satisfy the block
    /// precondition).
    pub fn coded_len(&self, data_len: usize) -> usize {
        let (k, n) = self.block();
        data_len / k * n
    }
}

fn hamming_parity(d: [u8; 4]) -> [u8; 3] {
    [d[0] ^ d[1] ^ d[3], d[0] ^ d[2] ^ d[3], d[1] ^ d[2] ^ d[3]]
}

/// Position (0-based within the codeword) flagged by each nonzero syndrome
/// `s1 | s2 << 1 | s3 << 2`, for the layout `[d1 d2 d3 d4 p1 p2 p3]`.
const SYNDROME_POSITION: [usize; 8] = [usize::MAX, 4, 5, 0, 6, 1, 2, 3];

pub fn fec_encode(scheme: FecScheme, bits: &[u8]) -> Result<Vec<u8>, FecError> {
    scheme.validate()?;
    match scheme {
        FecScheme::None => Ok(bits.to_vec()),
        FecScheme::Repetition { r } => {
            Ok(bits.iter().flat_map(|&b| std::iter::repeat_n(b, r as usize)).collect())
        }
        FecScheme::Hamming74 => {
            if !bits.len().is_multiple_of(4) {
                return Err(FecError::Length { len: bits.len(), block: 4 });
            }
            let mut out = Vec::with_capacity(bits.len() / 4 * 7);
            for chunk in bits.chunks_exact(4) {
                let d = [chunk[0], chunk[1], chunk[2], chunk[3]];
                out.extend_from_slice(&d);
                out.extend_from_slice(&hamming_parity(d));
            }
            Ok(out)
        }
    }
}

/// Returns the decoded bits and the number of codewords in which the
/// decoder saw (and acted on) an inconsistency.
pub fn fec_decode(scheme: FecScheme, coded: &[u8]) -> Result<(Vec<u8>, usize), FecError> {
    scheme.validate()?;
    match scheme {
        FecScheme::None => Ok((coded.to_vec(), 0)),
        FecScheme::Repetition { r } => {
            let r = r as usize;
            if !coded.len().is_multiple_of(r) {
                return Err(FecError::Length { len: coded.len(), block: r });
            }
            let mut corrected = 0;
            let bits = coded
                .chunks_exact(r)
                .map(|group| {
                    let ones = group.iter().filter(|&&b| b != 0).count();
                    if ones != 0 && ones != r {
                        corrected += 1;
                    }
                    u8::from(ones * 2 > r)
                })
                .collect();
            Ok((bits, corrected))
        }
        FecScheme::Hamming74 => {
            if !coded.len().is_multiple_of(7) {
                return Err(FecError::Length { len: coded.len(), block: 7 });
            }
            let mut corrected = 0;
            let mut out = Vec::with_capacity(coded.len() / 7 * 4);
            for cw in coded.chunks_exact(7) {
                let mut cw = [cw[0], cw[1], cw[2], cw[3], cw[4], cw[5], cw[6]];
                let p = hamming_parity([cw[0], cw[1], cw[2], cw[3]]);
                let syndrome = (p[0] ^ cw[4]) | (p[1] ^ cw[5]) << 1 | (p[2] ^ cw[6]) << 2;
                if syndrome != 0 {
                    cw[SYNDROME_POSITION[syndrome as usize]] ^= 1;
                    corrected += 1;
                }
                out.extend_from_slice(&cw[..4]);
            }
            Ok((out, corrected))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nibble(v: u8) -> Vec<u8> {
        (0..4).rev().map(|i| (v >> i) & 1).collect()
    }

    fn codebook() -> Vec<Vec<u8>> {
        (0..16).map(|v| fec_encode(FecScheme::Hamming74, &nibble(v)).unwrap()).collect()
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(fec_encode(FecScheme::Hamming74, &[0, 0, 0, 0]).unwrap(), vec![0; 7]);
        assert_eq!(fec_encode(FecScheme::Hamming74, &[1, 0, 1, 1]).unwrap(), vec![1, 0, 1, 1, 0, 1, 0]);
        assert_eq!(
            fec_encode(FecScheme::Hamming74, &[1, 0, 1]),
            Err(FecError::Length { len: 3, block: 4 })
        );
        assert!(fec_decode(FecScheme::Hamming74, &[0; 8]).is_err());
    }

    #[test]
    fn hamming_corrects_every_single_error() {
        for (v, cw) in codebook().into_iter().enumerate() {
            for pos in 0..7 {
                let mut rx = cw.clone();
                rx[pos] ^= 1;
                let (bits, corrected) = fec_decode(FecScheme::Hamming74, &rx).unwrap();
                assert_eq!(bits, nibble(v as u8), "codeword {v} flip {pos}");
                assert_eq!(corrected, 1);
            }
        }
    }

    #[test]
    fn hamming_minimum_distance() {
        let book = codebook();
        let min = (0..16)
            .flat_map(|i| (i + 1..16).map(move |j| (i, j)))
            .map(|(i, j)| book[i].iter().zip(&book[j]).filter(|(a, b)| a != b).count())
            .min()
            .unwrap();
        assert_eq!(min, 3);
    }

    #[test]
    fn repetition_examples() {
        let s = FecScheme::Repetition { r: 3 };
        assert_eq!(fec_encode(s, &[1, 0]).unwrap(), vec![1, 1, 1, 0, 0, 0]);
        assert_eq!(fec_decode(s, &[1, 0, 1]).unwrap(), (vec![1], 1));
        assert_eq!(fec_decode(s, &[0, 0, 0, 1, 1, 1]).unwrap(), (vec![0, 1], 0));
        assert!(fec_decode(s, &[1, 0]).is_err());
        assert_eq!(FecScheme::Repetition { r: 4 }.validate(), Err(FecError::BadRepetition(4)));
        assert!(fec_encode(FecScheme::Repetition { r: 1 }, &[1]).is_err());
    }

    fn schemes() -> impl Strategy<Value = FecScheme> {
        prop_oneof![
            Just(FecScheme::None),
            Just(FecScheme::Hamming74),
            (1u32..6).prop_map(|k| FecScheme::Repetition { r: 2 * k + 1 }),
        ]
    }

    proptest! {
        #[test]
        fn clean_round_trip_and_rate(scheme in schemes(), nibbles in prop::collection::vec(0u8..16, 0..64)) {
            let bits: Vec<u8> = nibbles.iter().flat_map(|&v| nibble(v)).collect();
            let coded = fec_encode(scheme, &bits).unwrap();
            let (k, n) = scheme.block();
            prop_assert_eq!(coded.len() * k, bits.len() * n);
            prop_assert_eq!(coded.len(), scheme.coded_len(bits.len()));
            prop_assert_eq!(fec_decode(scheme, &coded).unwrap(), (bits, 0));
        }
    }
}
