//! Intensity-modulation / direct-detection physical layer.
//!
//! On-off keying: bit 1 is sent at `amplitude`, bit 0 as darkness. The
//! channel scales each symbol by its gain and adds signal-independent
//! Gaussian receiver noise. Detection compares against the midpoint
//! `h * amplitude / 2`, using either the true per-symbol gain (genie CSI)
//! or a fixed `amplitude / 2` threshold.
//!
//! Bits are `u8` values restricted to 0 and 1.

use std::f64::consts::SQRT_2;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("length mismatch: {symbols} symbols but {gains} gains")]
    LengthMismatch { symbols: usize, gains: usize },
    #[error("invalid phy parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    /// Threshold tracks the instantaneous channel gain.
    #[default]
    Csi,
    /// Threshold fixed at `amplitude / 2`, blind to fading.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhyParams {
    /// Received intensity of a 1 bit at unit gain (photodetector
    /// responsivity folded in).
    pub amplitude: f64,
    pub noise_sigma: f64,
    /// Bits per second.
    pub bit_rate: f64,
    #[serde(default)]
    pub detection: Detection,
}

impl Default for PhyParams {
    fn default() -> Self {
        Self { amplitude: 1.0, noise_sigma: 0.005, bit_rate: 248_000.0, detection: Detection::Csi }
    }
}

impl PhyParams {
    pub fn validate(&self) -> Result<(), PhyError> {
        let err = |field, reason: String| Err(PhyError::InvalidParam { field, reason });
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return err("amplitude", format!("must be > 0, got {}", self.amplitude));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return err("noise_sigma", format!("must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.bit_rate > 0.0 && self.bit_rate.is_finite()) {
            return err("bit_rate", format!("must be > 0, got {}", self.bit_rate));
        }
        Ok(())
    }
}

pub fn modulate_ook(bits: &[u8], amplitude: f64) -> Vec<f64> {
    bits.iter().map(|&b| if b != 0 { amplitude } else { 0.0 }).collect()
}

/// `y_i = h_i x_i + n_i` with `n_i ~ N(0, noise_sigma^2)`.
pub fn apply_channel<R: Rng + ?Sized>(
    symbols: &[f64],
    gains: &[f64],
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>, PhyError> {
    check_len(symbols.len(), gains.len())?;
    let faded = symbols.iter().zip(gains).map(|(x, h)| h * x);
    if noise_sigma == 0.0 {
        return Ok(faded.collect());
    }
    Ok(faded
        .map(|y| {
            let n: f64 = rng.sample(StandardNormal);
            y + noise_sigma * n
        })
        .collect())
}

/// CSI-assisted detection: 1 iff `y > h * amplitude / 2`.
pub fn demodulate_ook(samples: &[f64], gains: &[f64], amplitude: f64) -> Result<Vec<u8>, PhyError> {
    check_len(samples.len(), gains.len())?;
    Ok(samples
        .iter()
        .zip(gains)
        .map(|(y, h)| u8::from(*y > h * amplitude / 2.0))
        .collect())
}

/// Fixed-threshold detection ignoring the channel gain.
pub fn demodulate_ook_fixed(samples: &[f64], amplitude: f64) -> Vec<u8> {
    samples.iter().map(|y| u8::from(*y > amplitude / 2.0)).collect()
}

fn check_len(symbols: usize, gains: usize) -> Result<(), PhyError> {
    if symbols == gains {
        Ok(())
    } else {
        Err(PhyError::LengthMismatch { symbols, gains })
    }
}

/// Gaussian tail probability `Q(x) = erfc(x / sqrt 2) / 2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Bit error probability of CSI-assisted OOK at a fixed gain.
pub fn theoretical_ber_ook(h: f64, amplitude: f64, noise_sigma: f64) -> f64 {
    if noise_sigma == 0.0 {
        return 0.0;
    }
    q_function(h * amplitude / (2.0 * noise_sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn modulate_examples() {
        assert!(modulate_ook(&[], 1.0).is_empty());
        assert_eq!(modulate_ook(&[1, 0, 1], 2.0), vec![2.0, 0.0, 2.0]);
        let ones = modulate_ook(&[1; 17], 1.5);
        assert_eq!(ones.iter().sum::<f64>(), 17.0 * 1.5);
    }

    #[test]
    fn channel_examples() {
        let mut rng = SimRng::seed_from_u64(0);
        let x = [2.0, 0.0, 2.0, 2.0];
        assert_eq!(apply_channel(&x, &[1.0; 4], 0.0, &mut rng).unwrap(), x.to_vec());
        assert_eq!(apply_channel(&[2.0, 0.0], &[0.5, 0.5], 0.0, &mut rng).unwrap(), vec![1.0, 0.0]);
        assert_eq!(
            apply_channel(&x, &[1.0; 3], 0.0, &mut rng),
            Err(PhyError::LengthMismatch { symbols: 4, gains: 3 })
        );
    }

    #[test]
    fn noise_standard_deviation() {
        let mut rng = SimRng::seed_from_u64(5);
        let n = 1_000_000;
        let y = apply_channel(&vec![0.0; n], &vec![1.0; n], 0.1, &mut rng).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(((sd - 0.1) / 0.1).abs() < 0.01, "{sd}");
    }

    #[test]
    fn tie_decides_zero() {
        assert_eq!(demodulate_ook(&[0.5, 0.500001], &[1.0, 1.0], 1.0).unwrap(), vec![0, 1]);
        assert_eq!(demodulate_ook_fixed(&[0.5, 0.6], 1.0), vec![0, 1]);
        assert!(demodulate_ook(&[0.5], &[], 1.0).is_err());
    }

    #[test]
    fn simulated_ber_matches_q() {
        let mut rng = SimRng::seed_from_u64(77);
        let n = 1_000_000;
        let bits: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let gains = vec![1.0; n];
        let y = apply_channel(&modulate_ook(&bits, 1.0), &gains, 0.25, &mut rng).unwrap();
        let rx = demodulate_ook(&y, &gains, 1.0).unwrap();
        let errors = bits.iter().zip(&rx).filter(|(a, b)| a != b).count();
        let ber = errors as f64 / n as f64;
        assert!(((ber - 0.022_750_131_948_179_2) / 0.022_750_131_948_179_2).abs() < 0.05, "{ber}");
    }

    #[test]
    fn q_examples() {
        assert_eq!(q_function(0.0), 0.5);
        assert!((q_function(1.0) - 0.158_655_253_931_457_05).abs() < 1e-12);
        assert!((q_function(2.0) - 0.022_750_131_948_179_2).abs() < 1e-12);
        for x in [0.1, 0.7, 1.3, 2.9, 5.0] {
            assert!((q_function(-x) - (1.0 - q_function(x))).abs() < 1e-7);
        }
    }

    #[test]
    fn theoretical_ber_examples() {
        assert_eq!(theoretical_ber_ook(1.0, 1.0, 0.0), 0.0);
        assert!((theoretical_ber_ook(1.0, 1.0, 0.25) - 0.022_75).abs() < 1e-5);
        let mut prev = 1.0;
        for i in 1..100 {
            let b = theoretical_ber_ook(i as f64 * 0.05, 1.0, 0.3);
            assert!(b <= prev);
            prev = b;
        }
    }

    #[test]
    fn iid_fading_ber_is_average_of_conditional_bers() {
        // Law of total probability: BER under i.i.d. block gains equals the
        // mean of the per-block conditional BERs.
        let mut rng = SimRng::seed_from_u64(99);
        let (blocks, per_block, sigma) = (4000, 250, 0.3);
        let mut errors = 0usize;
        let mut expected = 0.0;
        for _ in 0..blocks {
            let h: f64 = 0.4 + 0.8 * rng.random::<f64>();
            let bits: Vec<u8> = (0..per_block).map(|_| rng.random_range(0..2u8)).collect();
            let gains = vec![h; per_block];
            let y = apply_channel(&modulate_ook(&bits, 1.0), &gains, sigma, &mut rng).unwrap();
            let rx = demodulate_ook(&y, &gains, 1.0).unwrap();
            errors += bits.iter().zip(&rx).filter(|(a, b)| a != b).count();
            expected += theoretical_ber_ook(h, 1.0, sigma);
        }
        let ber = errors as f64 / (blocks * per_block) as f64;
        let expected = expected / blocks as f64;
        assert!(((ber - expected) / expected).abs() < 0.10, "{ber} vs {expected}");
    }

    proptest! {
        #[test]
        fn noiseless_round_trip(pattern in prop::collection::vec((0u8..2, 1e-6f64..10.0), 0..512), amp in 1e-3f64..100.0) {
            let (bits, gains): (Vec<u8>, Vec<f64>) = pattern.into_iter().unzip();
            let mut rng = SimRng::seed_from_u64(0);
            let y = apply_channel(&modulate_ook(&bits, amp), &gains, 0.0, &mut rng).unwrap();
            prop_assert_eq!(demodulate_ook(&y, &gains, amp).unwrap(), bits);
        }

        #[test]
        fn decisions_scale_invariant(y in prop::collection::vec(-2.0f64..2.0, 1..64), h in 0.01f64..2.0, amp in 0.1f64..3.0, c in 0.01f64..100.0) {
            let gains = vec![h; y.len()];
            let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
            let scaled_gains = vec![h * c; y.len()];
            let base = demodulate_ook(&y, &gains, amp).unwrap();
            // the threshold h*A/2 scales with either factor of the received level
            prop_assert_eq!(&base, &demodulate_ook(&scaled, &scaled_gains, amp).unwrap());
            prop_assert_eq!(&base, &demodulate_ook(&scaled, &gains, amp * c).unwrap());
        }
    }
}
