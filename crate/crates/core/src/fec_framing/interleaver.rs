use serde::{Deserialize, Serialize};

use super::FecError;

/// Block interleaver: each block of `rows * cols` bits is written row by
/// row and read column by column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interleaver {
    pub rows: usize,
    pub cols: usize,
}

impl Default for Interleaver {
    fn default() -> Self {
        Self { rows: 64, cols: 7 }
    }
}

impl Interleaver {
    pub fn new(rows: usize, cols: usize) -> Option<Self> {
        (rows > 0 && cols > 0).then_some(Self { rows, cols })
    }

    pub fn block_len(&self) -> usize {
        self.rows * self.cols
    }

    /// Input index that lands at output position `out` within a block.
    fn source_index(&self, out: usize) -> usize {
        let (col, row) = (out / self.rows, out % self.rows);
        row * self.cols + col
    }

    fn check(&self, len: usize) -> Result<(), FecError> {
        let block = self.block_len();
        if block == 0 || !len.is_multiple_of(block) {
            return Err(FecError::Length { len, block });
        }
        Ok(())
    }

    pub fn interleave(&self, bits: &[u8]) -> Result<Vec<u8>, FecError> {
        self.check(bits.len())?;
        let mut out = Vec::with_capacity(bits.len());
        for block in bits.chunks_exact(self.block_len()) {
            out.extend((0..block.len()).map(|o| block[self.source_index(o)]));
        }
        Ok(out)
    }

    pub fn deinterleave(&self, bits: &[u8]) -> Result<Vec<u8>, FecError> {
        self.check(bits.len())?;
        let mut out = vec![0u8; bits.len()];
        let n = self.block_len();
        for (b, block) in bits.chunks_exact(n).enumerate() {
            for (o, &bit) in block.iter().enumerate() {
                out[b * n + self.source_index(o)] = bit;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn small_permutations() {
        let one_row = Interleaver::new(1, 5).unwrap();
        let x = [1, 2, 3, 4, 5];
        assert_eq!(one_row.interleave(&x).unwrap(), x);
        let il = Interleaver::new(2, 2).unwrap();
        // [a b c d] -> [a c b d]
        assert_eq!(il.interleave(&[10, 11, 12, 13]).unwrap(), vec![10, 12, 11, 13]);
        assert!(il.interleave(&[1, 2, 3]).is_err());
        assert!(Interleaver::new(0, 3).is_none());
    }

    #[test]
    fn random_blocks_round_trip() {
        let mut rng = crate::rng::SimRng::seed_from_u64(1);
        for _ in 0..1000 {
            let il = Interleaver::new(rng.random_range(1..20), rng.random_range(1..20)).unwrap();
            let blocks = rng.random_range(1..4);
            let x: Vec<u8> = (0..il.block_len() * blocks).map(|_| rng.random()).collect();
            assert_eq!(il.deinterleave(&il.interleave(&x).unwrap()).unwrap(), x);
        }
    }

    #[test]
    fn burst_spreads_across_codewords() {
        let il = Interleaver::default();
        let n = il.block_len();
        for start in 0..=(n - il.rows) {
            let mut channel = vec![0u8; n];
            channel[start..start + il.rows].fill(1);
            let rx = il.deinterleave(&channel).unwrap();
            // each row of `cols` bits is one Hamming(7,4) codeword
            assert!(rx.chunks(il.cols).all(|cw| cw.iter().sum::<u8>() <= 1), "burst at {start}");
        }
    }
}
