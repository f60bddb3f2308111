//! Statistical atmospheric channel.
//!
//! The instantaneous channel gain is the product `h = h_l * h_a * h_p` of
//! deterministic path loss, turbulence-induced fading and pointing loss.
//!
//! Turbulence strength is expressed through the Rytov variance. Weak
//! turbulence (`sigma_R^2 < 1`) uses a mean-one log-normal marginal;
//! moderate and strong turbulence uses Gamma-Gamma. Temporal correlation
//! comes from a Gaussian copula: a standard-normal AR(1) latent is mapped
//! through the marginal's quantile function. Wind speed only enters via the
//! AR(1) coefficient, through the frozen-flow coherence time
//! `sqrt(lambda * L) / v`.

use std::f64::consts::{PI, SQRT_2};
use std::io::{self, Read, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

/// Upper bound on the Gamma-Gamma shape parameters.
pub const SHAPE_CAP: f64 = 1e6;
/// Gains are clamped to at least this value before reaching the PHY.
pub const MIN_GAIN: f64 = 1e-12;
pub const DEFAULT_TABLE_RESOLUTION: usize = 65_536;
pub const DEFAULT_TABLE_SAMPLES: usize = 1 << 20;
const MIN_TABLE_RESOLUTION: usize = 1024;
const MIN_TABLE_SAMPLES: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ChannelError {
    ChannelError::InvalidParam { field, reason: reason.into() }
}

/// Which turbulence marginal to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelOverride {
    /// Choose from the Rytov variance.
    #[default]
    Auto,
    LogNormal,
    GammaGamma,
    /// No turbulence fading.
    None,
}

/// Full atmospheric and link geometry description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    /// Refractive-index structure parameter, m^(-2/3).
    pub cn2: f64,
    /// Meters.
    pub wavelength: f64,
    /// Link length in meters.
    pub distance: f64,
    pub attenuation_db_per_km: f64,
    /// m/s
    pub wind_speed: f64,
    /// Standard deviation of the radial beam displacement, meters.
    pub pointing_jitter_sigma: f64,
    /// Beam radius at the receiver plane, meters.
    pub beam_waist: f64,
    pub aperture_radius: f64,
    /// Seconds per simulation tick.
    pub tick_interval: f64,
    #[serde(default)]
    pub model: ModelOverride,
}

impl ChannelParams {
    /// Clear-air 1 km link at 1550 nm with "low turbulence, 1 m/s wind".
    pub fn low_turbulence() -> Self {
        Self {
            cn2: 1e-15,
            wavelength: 1550e-9,
            distance: 1000.0,
            attenuation_db_per_km: 0.43,
            wind_speed: 1.0,
            pointing_jitter_sigma: 0.01,
            beam_waist: 0.1,
            aperture_radius: 0.05,
            tick_interval: 1e-3,
            model: ModelOverride::Auto,
        }
    }

    /// Same link with "high turbulence, 6 m/s wind".
    pub fn high_turbulence() -> Self {
        Self { cn2: 5e-14, wind_speed: 6.0, ..Self::low_turbulence() }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        fn finite(field: &'static str, v: f64) -> Result<(), ChannelError> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, "must be finite"))
            }
        }
        fn positive(field: &'static str, v: f64) -> Result<(), ChannelError> {
            finite(field, v)?;
            if v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be > 0, got {v}")))
            }
        }
        fn non_negative(field: &'static str, v: f64) -> Result<(), ChannelError> {
            finite(field, v)?;
            if v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be >= 0, got {v}")))
            }
        }

        non_negative("cn2", self.cn2)?;
        positive("wavelength", self.wavelength)?;
        if !(self.wavelength > 100e-9 && self.wavelength < 20e-6) {
            return Err(invalid(
                "wavelength",
                format!("must lie in (100 nm, 20 um), got {} m", self.wavelength),
            ));
        }
        positive("distance", self.distance)?;
        non_negative("attenuation_db_per_km", self.attenuation_db_per_km)?;
        positive("wind_speed", self.wind_speed)?;
        non_negative("pointing_jitter_sigma", self.pointing_jitter_sigma)?;
        positive("beam_waist", self.beam_waist)?;
        positive("aperture_radius", self.aperture_radius)?;
        positive("tick_interval", self.tick_interval)?;
        Ok(())
    }

    pub fn rytov_variance(&self) -> Result<f64, ChannelError> {
        rytov_variance(self.cn2, self.wavelength, self.distance)
    }

    /// AR(1) coefficient of the fading latent per tick.
    pub fn latent_rho(&self) -> Result<f64, ChannelError> {
        let tau = coherence_time(self.wind_speed, self.wavelength, self.distance)?;
        Ok((-self.tick_interval / tau).exp())
    }
}

/// Rytov variance `1.23 Cn^2 k^(7/6) L^(11/6)` with `k = 2 pi / lambda`.
pub fn rytov_variance(cn2: f64, wavelength: f64, distance: f64) -> Result<f64, ChannelError> {
    if !(wavelength > 0.0) {
        return Err(ChannelError::Domain(format!("wavelength must be > 0, got {wavelength}")));
    }
    if !(distance > 0.0) {
        return Err(ChannelError::Domain(format!("distance must be > 0, got {distance}")));
    }
    if !(cn2 >= 0.0) {
        return Err(ChannelError::Domain(format!("cn2 must be >= 0, got {cn2}")));
    }
    let k = 2.0 * PI / wavelength;
    Ok(1.23 * cn2 * k.powf(7.0 / 6.0) * distance.powf(11.0 / 6.0))
}

/// Plane-wave Gamma-Gamma shape parameters `(alpha, beta)` for a Rytov
/// variance. Both are capped at [`SHAPE_CAP`].
pub fn gamma_gamma_params(sigma_r_sq: f64) -> Result<(f64, f64), ChannelError> {
    if !(sigma_r_sq > 0.0) || !sigma_r_sq.is_finite() {
        return Err(ChannelError::Domain(format!(
            "Gamma-Gamma needs a positive Rytov variance, got {sigma_r_sq}"
        )));
    }
    // sigma^(12/5) with sigma = sqrt(sigma_R^2)
    let s125 = sigma_r_sq.powf(6.0 / 5.0);
    let large = 0.49 * sigma_r_sq / (1.0 + 1.11 * s125).powf(7.0 / 6.0);
    let small = 0.51 * sigma_r_sq / (1.0 + 0.69 * s125).powf(5.0 / 6.0);
    let alpha = (1.0 / large.exp_m1()).min(SHAPE_CAP);
    let beta = (1.0 / small.exp_m1()).min(SHAPE_CAP);
    Ok((alpha, beta))
}

/// Empirical quantile function of a unit-mean Gamma-Gamma variate.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    values: Vec<f64>,
}

impl QuantileTable {
    /// Wraps precomputed quantiles evaluated at `(i + 0.5) / n`.
    pub fn from_values(values: Vec<f64>) -> Result<Self, ChannelError> {
        if values.is_empty() {
            return Err(ChannelError::Domain("empty quantile table".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ChannelError::Domain("non-finite quantile table entry".into()));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(ChannelError::Domain("quantile table is not nondecreasing".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn resolution(&self) -> usize {
        self.values.len()
    }

    /// Linear interpolation between the entries bracketing probability `u`;
    /// clamps to the first/last entry outside the tabulated range.
    pub fn quantile(&self, u: f64) -> f64 {
        let n = self.values.len();
        let pos = u * n as f64 - 0.5;
        if !(pos > 0.0) {
            return self.values[0];
        }
        let lo = pos.floor() as usize;
        if lo >= n - 1 {
            return self.values[n - 1];
        }
        let frac = pos - lo as f64;
        let (a, b) = (self.values[lo], self.values[lo + 1]);
        a + (b - a) * frac
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64
    }

    /// Little-endian `u64` length followed by `f64` entries.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> io::Result<Self> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let len = u64::from_le_bytes(word) as usize;
        if len == 0 || len > (1 << 28) {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad quantile table length"));
        }
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut word)?;
            values.push(f64::from_le_bytes(word));
        }
        Self::from_values(values).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }

    /// Cache file name for a table key.
    pub fn cache_file_name(alpha: f64, beta: f64, resolution: usize, seed: u64) -> String {
        format!(
            "gg_{:016x}_{:016x}_{resolution}_{seed:016x}.bin",
            alpha.to_bits(),
            beta.to_bits()
        )
    }
}

/// Builds the quantile table from [`DEFAULT_TABLE_SAMPLES`] seeded draws.
pub fn gg_quantile_table(
    alpha: f64,
    beta: f64,
    resolution: usize,
    seed: u64,
) -> Result<QuantileTable, ChannelError> {
    gg_quantile_table_with_samples(alpha, beta, resolution, DEFAULT_TABLE_SAMPLES, seed)
}

pub fn gg_quantile_table_with_samples(
    alpha: f64,
    beta: f64,
    resolution: usize,
    samples: usize,
    seed: u64,
) -> Result<QuantileTable, ChannelError> {
    use rand::SeedableRng;

    if !(alpha > 0.0 && beta > 0.0) {
        return Err(ChannelError::Domain(format!(
            "Gamma-Gamma shapes must be positive, got alpha={alpha}, beta={beta}"
        )));
    }
    if resolution < MIN_TABLE_RESOLUTION {
        return Err(ChannelError::Domain(format!(
            "table resolution must be >= {MIN_TABLE_RESOLUTION}, got {resolution}"
        )));
    }
    if samples < MIN_TABLE_SAMPLES {
        return Err(ChannelError::Domain(format!(
            "table needs >= {MIN_TABLE_SAMPLES} samples, got {samples}"
        )));
    }
    let large = Gamma::new(alpha, 1.0 / alpha).map_err(|e| ChannelError::Domain(e.to_string()))?;
    let small = Gamma::new(beta, 1.0 / beta).map_err(|e| ChannelError::Domain(e.to_string()))?;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut draws: Vec<f64> =
        (0..samples).map(|_| large.sample(&mut rng) * small.sample(&mut rng)).collect();
    draws.sort_unstable_by(f64::total_cmp);

    let values = (0..resolution)
        .map(|i| {
            let p = (i as f64 + 0.5) / resolution as f64;
            let idx = ((p * samples as f64) as usize).min(samples - 1);
            draws[idx]
        })
        .collect();
    QuantileTable::from_values(values)
}

/// Marginal distribution of the turbulence fading `h_a`.
#[derive(Debug, Clone, PartialEq)]
pub enum TurbulenceMarginal {
    /// `ln h_a ~ Normal(-sigma_ln_sq / 2, sigma_ln_sq)`.
    LogNormal { sigma_ln_sq: f64 },
    GammaGamma { alpha: f64, beta: f64, table: Option<Arc<QuantileTable>> },
    Unity,
}

impl TurbulenceMarginal {
    pub fn gamma_gamma(alpha: f64, beta: f64, table: QuantileTable) -> Self {
        Self::GammaGamma { alpha, beta, table: Some(Arc::new(table)) }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        match self {
            Self::LogNormal { sigma_ln_sq } if !(*sigma_ln_sq >= 0.0 && sigma_ln_sq.is_finite()) => {
                Err(ChannelError::Domain(format!("sigma_ln_sq must be >= 0, got {sigma_ln_sq}")))
            }
            Self::GammaGamma { alpha, beta, .. } if !(*alpha > 0.0 && *beta > 0.0) => Err(
                ChannelError::Domain(format!("alpha, beta must be > 0, got {alpha}, {beta}")),
            ),
            _ => Ok(()),
        }
    }

    /// Maps a standard-normal latent value to a fading gain. Returns `None`
    /// for a Gamma-Gamma marginal without a quantile table.
    pub fn gain_at(&self, latent: f64) -> Option<f64> {
        match self {
            Self::Unity => Some(1.0),
            Self::LogNormal { sigma_ln_sq } => {
                Some((-sigma_ln_sq / 2.0 + sigma_ln_sq.sqrt() * latent).exp())
            }
            Self::GammaGamma { table, .. } => {
                table.as_ref().map(|t| t.quantile(standard_normal_cdf(latent)))
            }
        }
    }
}

/// Scintillation index `Var[I] / E[I]^2` of a marginal.
pub fn scintillation_index(marginal: &TurbulenceMarginal) -> f64 {
    match *marginal {
        TurbulenceMarginal::Unity => 0.0,
        TurbulenceMarginal::LogNormal { sigma_ln_sq } => sigma_ln_sq.exp_m1(),
        TurbulenceMarginal::GammaGamma { alpha, beta, .. } => {
            1.0 / alpha + 1.0 / beta + 1.0 / (alpha * beta)
        }
    }
}

/// Selects and constructs the turbulence marginal for `params`.
/// `table_seed` seeds the Gamma-Gamma quantile table when one is needed.
pub fn build_marginal(params: &ChannelParams, table_seed: u64) -> Result<TurbulenceMarginal, ChannelError> {
    build_marginal_with(params, |alpha, beta| {
        gg_quantile_table(alpha, beta, DEFAULT_TABLE_RESOLUTION, table_seed).map(Arc::new)
    })
}

/// Like [`build_marginal`] but obtains Gamma-Gamma tables from `table_for`,
/// which lets callers cache them.
pub fn build_marginal_with<F>(params: &ChannelParams, table_for: F) -> Result<TurbulenceMarginal, ChannelError>
where
    F: FnOnce(f64, f64) -> Result<Arc<QuantileTable>, ChannelError>,
{
    let sigma_r_sq = params.rytov_variance()?;
    let log_normal = || TurbulenceMarginal::LogNormal { sigma_ln_sq: sigma_r_sq.ln_1p() };
    let gamma_gamma = |table_for: F| -> Result<TurbulenceMarginal, ChannelError> {
        let (alpha, beta) = gamma_gamma_params(sigma_r_sq)?;
        Ok(TurbulenceMarginal::GammaGamma { alpha, beta, table: Some(table_for(alpha, beta)?) })
    };
    match params.model {
        ModelOverride::None => Ok(TurbulenceMarginal::Unity),
        ModelOverride::LogNormal => Ok(log_normal()),
        ModelOverride::GammaGamma => gamma_gamma(table_for),
        ModelOverride::Auto if sigma_r_sq == 0.0 => Ok(TurbulenceMarginal::Unity),
        ModelOverride::Auto if sigma_r_sq < 1.0 => Ok(log_normal()),
        ModelOverride::Auto => gamma_gamma(table_for),
    }
}

/// Frozen-flow coherence time `sqrt(lambda L) / v` in seconds.
pub fn coherence_time(wind_speed: f64, wavelength: f64, distance: f64) -> Result<f64, ChannelError> {
    if !(wind_speed > 0.0) {
        return Err(ChannelError::Domain(format!("wind speed must be > 0, got {wind_speed}")));
    }
    if !(wavelength > 0.0 && distance > 0.0) {
        return Err(ChannelError::Domain("wavelength and distance must be > 0".into()));
    }
    Ok((wavelength * distance).sqrt() / wind_speed)
}

/// Standard normal CDF.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Correlated turbulence fading generator.
#[derive(Debug, Clone)]
pub struct FadingProcess {
    latent: f64,
    rho: f64,
    marginal: TurbulenceMarginal,
    rng: SimRng,
}

impl FadingProcess {
    /// The latent starts in its stationary N(0, 1) distribution.
    pub fn new(marginal: TurbulenceMarginal, rho: f64, mut rng: SimRng) -> Result<Self, ChannelError> {
        marginal.validate()?;
        check_rho(rho)?;
        if marginal.gain_at(0.0).is_none() {
            return Err(ChannelError::Domain("Gamma-Gamma marginal requires a quantile table".into()));
        }
        let latent = rng.sample(StandardNormal);
        Ok(Self { latent, rho, marginal, rng })
    }

    pub fn latent(&self) -> f64 {
        self.latent
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn marginal(&self) -> &TurbulenceMarginal {
        &self.marginal
    }

    /// Replaces the marginal, keeping the latent state.
    pub fn set_marginal(&mut self, marginal: TurbulenceMarginal) -> Result<(), ChannelError> {
        marginal.validate()?;
        if marginal.gain_at(0.0).is_none() {
            return Err(ChannelError::Domain("Gamma-Gamma marginal requires a quantile table".into()));
        }
        self.marginal = marginal;
        Ok(())
    }

    pub fn set_rho(&mut self, rho: f64) -> Result<(), ChannelError> {
        check_rho(rho)?;
        self.rho = rho;
        Ok(())
    }

    /// Advances the latent one tick and returns the new fading gain.
    pub fn next_gain(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        self.latent = self.rho * self.latent + (1.0 - self.rho * self.rho).sqrt() * z;
        self.marginal
            .gain_at(self.latent)
            .expect("marginal checked on construction")
            .max(MIN_GAIN)
    }
}

fn check_rho(rho: f64) -> Result<(), ChannelError> {
    if (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(ChannelError::Domain(format!("AR(1) coefficient must be in [0, 1), got {rho}")))
    }
}

/// Beer-Lambert loss `10^(-a d / 10000)`.
pub fn path_loss(attenuation_db_per_km: f64, distance: f64) -> f64 {
    10f64.powf(-attenuation_db_per_km * (distance / 1000.0) / 10.0)
}

/// Gaussian-beam / circular-aperture pointing geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointingGeometry {
    /// Fraction of power collected with zero displacement.
    pub a0: f64,
    /// Equivalent beam width squared, m^2.
    pub w_eq_sq: f64,
}

impl PointingGeometry {
    pub fn new(beam_waist: f64, aperture_radius: f64) -> Self {
        let nu = PI.sqrt() * aperture_radius / (SQRT_2 * beam_waist);
        let erf_nu = libm::erf(nu);
        let w_eq_sq = beam_waist * beam_waist * PI.sqrt() * erf_nu / (2.0 * nu * (-nu * nu).exp());
        Self { a0: erf_nu * erf_nu, w_eq_sq }
    }

    pub fn from_params(params: &ChannelParams) -> Self {
        Self::new(params.beam_waist, params.aperture_radius)
    }

    /// Collected fraction for a radial displacement `r`.
    pub fn gain_at(&self, r: f64) -> f64 {
        self.a0 * (-2.0 * r * r / self.w_eq_sq).exp()
    }

    /// Closed-form `E[h_p]` under Rayleigh jitter with scale `sigma`.
    pub fn mean_gain(&self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return self.a0;
        }
        let gamma_sq = self.w_eq_sq / (4.0 * sigma * sigma);
        self.a0 * gamma_sq / (gamma_sq + 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, jitter_sigma: f64, rng: &mut R) -> f64 {
        if jitter_sigma == 0.0 {
            return self.a0;
        }
        let u: f64 = rng.random();
        let r = jitter_sigma * (-2.0 * (1.0 - u).ln()).sqrt();
        self.gain_at(r).max(MIN_GAIN)
    }
}

/// Draws one pointing loss `h_p` for the beam geometry in `params`.
pub fn pointing_loss_sample<R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> f64 {
    PointingGeometry::from_params(params).sample(params.pointing_jitter_sigma, rng)
}

pub fn composite_gain(h_l: f64, h_a: f64, h_p: f64) -> f64 {
    h_l * h_a * h_p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn rytov_examples() {
        assert_eq!(rytov_variance(0.0, 1550e-9, 1000.0).unwrap(), 0.0);
        let s = rytov_variance(1e-15, 1550e-9, 1000.0).unwrap();
        assert!(rel(s, 0.019_909_543_851_127_03) < 1e-12, "{s}");
        let s2 = rytov_variance(1e-15, 1550e-9, 2000.0).unwrap();
        assert!(rel(s2 / s, 2f64.powf(11.0 / 6.0)) < 1e-12);
        assert!(rel(2f64.powf(11.0 / 6.0), 3.563) < 1e-3);
        assert!(rytov_variance(1e-15, 0.0, 1000.0).is_err());
        assert!(rytov_variance(1e-15, 1550e-9, -1.0).is_err());
    }

    #[test]
    fn rytov_monotone() {
        let base = rytov_variance(1e-14, 1550e-9, 1000.0).unwrap();
        assert!(rytov_variance(2e-14, 1550e-9, 1000.0).unwrap() > base);
        assert!(rytov_variance(1e-14, 1550e-9, 1500.0).unwrap() > base);
        // k = 2 pi / lambda: longer wavelength means weaker scintillation
        assert!(rytov_variance(1e-14, 1600e-9, 1000.0).unwrap() < base);
    }

    #[test]
    fn gamma_gamma_examples() {
        let (a, b) = gamma_gamma_params(1.0).unwrap();
        assert!(rel(a, 4.393_859_025_392_147) < 1e-12, "{a}");
        assert!(rel(b, 2.563_631_979_503_695) < 1e-12, "{b}");
        assert_eq!(gamma_gamma_params(1e-9).unwrap(), (SHAPE_CAP, SHAPE_CAP));
        let (a, b) = gamma_gamma_params(4.0).unwrap();
        assert!(rel(a, 4.340_662_543_326_942) < 1e-12);
        assert!(rel(b, 1.308_802_679_283_382) < 1e-12);
        assert!(a >= b);
        let si = scintillation_index(&TurbulenceMarginal::GammaGamma { alpha: a, beta: b, table: None });
        assert!(si > 1.0);
        assert!(gamma_gamma_params(0.0).is_err());
        assert!(gamma_gamma_params(-1.0).is_err());
    }

    #[test]
    fn scintillation_examples() {
        assert_eq!(scintillation_index(&TurbulenceMarginal::Unity), 0.0);
        let gg = TurbulenceMarginal::GammaGamma { alpha: 4.39, beta: 2.56, table: None };
        assert!((scintillation_index(&gg) - 0.707_396_070_615_034).abs() < 1e-12);
        let ln = TurbulenceMarginal::LogNormal { sigma_ln_sq: 2f64.ln() };
        assert!((scintillation_index(&ln) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn marginal_selection() {
        let mut p = ChannelParams::low_turbulence();
        p.cn2 = 0.0;
        assert_eq!(build_marginal(&p, 1).unwrap(), TurbulenceMarginal::Unity);

        p.cn2 = 1e-15;
        match build_marginal(&p, 1).unwrap() {
            TurbulenceMarginal::LogNormal { sigma_ln_sq } => {
                assert!(rel(sigma_ln_sq, 0.019_713_940_864_759_34) < 1e-12)
            }
            other => panic!("{other:?}"),
        }

        // sigma_R^2 = 0.99548 lies just below the regime boundary.
        p.cn2 = 5e-14;
        let s = p.rytov_variance().unwrap();
        assert!(s < 1.0 && s > 0.995);
        assert!(matches!(build_marginal(&p, 1).unwrap(), TurbulenceMarginal::LogNormal { .. }));

        p.cn2 = 5.1e-14;
        assert!(p.rytov_variance().unwrap() >= 1.0);
        let m = build_marginal_with(&p, |_, _| Ok(Arc::new(QuantileTable::from_values(vec![1.0; 1024]).unwrap())))
            .unwrap();
        assert!(matches!(m, TurbulenceMarginal::GammaGamma { .. }));

        p.model = ModelOverride::None;
        assert_eq!(build_marginal(&p, 1).unwrap(), TurbulenceMarginal::Unity);
        p.model = ModelOverride::GammaGamma;
        p.cn2 = 0.0;
        assert!(build_marginal(&p, 1).is_err());
    }

    #[test]
    fn quantile_table_at_cap_is_flat() {
        let t = gg_quantile_table(SHAPE_CAP, SHAPE_CAP, 1024, 9).unwrap();
        assert!(t.values().iter().all(|v| (v - 1.0).abs() < 0.01));
    }

    #[test]
    fn quantile_table_moments() {
        let t = gg_quantile_table(4.39, 2.56, DEFAULT_TABLE_RESOLUTION, 7).unwrap();
        assert!(t.values().windows(2).all(|w| w[0] <= w[1]));
        assert!((t.mean() - 1.0).abs() < 0.01, "mean {}", t.mean());
        assert!((t.variance() - 0.707).abs() < 0.03, "var {}", t.variance());
    }

    #[test]
    fn quantile_table_argument_checks() {
        assert!(gg_quantile_table(0.0, 1.0, 2048, 0).is_err());
        assert!(gg_quantile_table(1.0, 1.0, 512, 0).is_err());
        assert!(gg_quantile_table_with_samples(1.0, 1.0, 2048, 1000, 0).is_err());
        assert!(QuantileTable::from_values(vec![1.0, 0.5]).is_err());
    }

    #[test]
    fn quantile_interpolation() {
        let t = QuantileTable::from_values(vec![1.0, 2.0, 4.0, 8.0]).unwrap();
        // entries sit at u = 0.125, 0.375, 0.625, 0.875
        assert_eq!(t.quantile(0.0), 1.0);
        assert_eq!(t.quantile(0.125), 1.0);
        assert_eq!(t.quantile(0.25), 1.5);
        assert_eq!(t.quantile(0.5), 3.0);
        assert_eq!(t.quantile(0.999), 8.0);
    }

    #[test]
    fn quantile_table_binary_cache_round_trip() {
        let t = QuantileTable::from_values(vec![0.25, 0.5, 1.0, 3.5]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], &4u64.to_le_bytes());
        assert_eq!(&buf[8..16], &0.25f64.to_le_bytes());
        assert_eq!(buf.len(), 8 + 4 * 8);
        assert_eq!(QuantileTable::read_from(&buf[..]).unwrap(), t);
        assert!(QuantileTable::read_from(&buf[..20]).is_err());
        assert_eq!(
            QuantileTable::cache_file_name(1.0, 2.0, 1024, 5),
            "gg_3ff0000000000000_4000000000000000_1024_0000000000000005.bin"
        );
    }

    #[test]
    fn coherence_time_examples() {
        let t1 = coherence_time(1.0, 1550e-9, 1000.0).unwrap();
        assert!(rel(t1, 0.039_370_039_370_059_06) < 1e-12);
        let t6 = coherence_time(6.0, 1550e-9, 1000.0).unwrap();
        assert!(rel(t6, 0.006_561_673_228_343_176) < 1e-12);
        assert!(rel(t6 * 6.0, t1) < 1e-15);
        let fast = coherence_time(1e12, 1550e-9, 1000.0).unwrap();
        assert!((-1e-3 / fast).exp() < 1e-100);
        assert!(coherence_time(0.0, 1550e-9, 1000.0).is_err());
    }

    #[test]
    fn unity_process_is_constant() {
        let mut f = FadingProcess::new(TurbulenceMarginal::Unity, 0.9, SimRng::seed_from_u64(1)).unwrap();
        assert!((0..1000).all(|_| f.next_gain() == 1.0));
    }

    #[test]
    fn log_normal_median() {
        let m = TurbulenceMarginal::LogNormal { sigma_ln_sq: 0.25 };
        assert_eq!(m.gain_at(0.0).unwrap(), (-0.125f64).exp());
    }

    #[test]
    fn ar1_statistics() {
        let mut f = FadingProcess::new(
            TurbulenceMarginal::LogNormal { sigma_ln_sq: 0.25 },
            0.9,
            SimRng::seed_from_u64(2024),
        )
        .unwrap();
        let n = 1_000_000;
        let mut latent = Vec::with_capacity(n);
        let mut sum = 0.0;
        for _ in 0..n {
            sum += f.next_gain();
            latent.push(f.latent());
        }
        assert!((sum / n as f64 - 1.0).abs() < 0.01);
        let mean = latent.iter().sum::<f64>() / n as f64;
        let var = latent.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        for k in 1..=5 {
            let cov = (0..n - k).map(|i| (latent[i] - mean) * (latent[i + k] - mean)).sum::<f64>()
                / (n - k) as f64;
            let r = cov / var;
            assert!((r - 0.9f64.powi(k as i32)).abs() < 0.02, "lag {k}: {r}");
        }
    }

    #[test]
    fn process_rejects_bad_inputs() {
        let rng = || SimRng::seed_from_u64(0);
        assert!(FadingProcess::new(TurbulenceMarginal::Unity, 1.0, rng()).is_err());
        assert!(FadingProcess::new(TurbulenceMarginal::Unity, -0.1, rng()).is_err());
        let no_table = TurbulenceMarginal::GammaGamma { alpha: 2.0, beta: 2.0, table: None };
        assert!(FadingProcess::new(no_table, 0.5, rng()).is_err());
    }

    #[test]
    fn path_loss_examples() {
        assert_eq!(path_loss(0.0, 1000.0), 1.0);
        assert!((path_loss(3.0, 1000.0) - 0.501_187_233_627_272_3).abs() < 1e-15);
        assert!((path_loss(10.0, 2000.0) - 0.01).abs() < 1e-17);
        assert_eq!(path_loss(5.0, 0.0), 1.0);
    }

    #[test]
    fn pointing_examples() {
        let mut p = ChannelParams::low_turbulence();
        p.pointing_jitter_sigma = 0.0;
        let g = PointingGeometry::from_params(&p);
        let mut rng = SimRng::seed_from_u64(3);
        assert_eq!(pointing_loss_sample(&p, &mut rng), g.a0);
        assert!(g.a0 > 0.0 && g.a0 < 1.0);

        let wide = PointingGeometry::new(0.01, 1.0);
        assert!((wide.a0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pointing_mean_matches_closed_form() {
        let p = ChannelParams { pointing_jitter_sigma: 0.03, ..ChannelParams::low_turbulence() };
        let g = PointingGeometry::from_params(&p);
        let mut rng = SimRng::seed_from_u64(11);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let h = pointing_loss_sample(&p, &mut rng);
            assert!(h > 0.0 && h <= g.a0);
            sum += h;
        }
        let expected = g.mean_gain(p.pointing_jitter_sigma);
        assert!(rel(sum / n as f64, expected) < 0.02, "{} vs {expected}", sum / n as f64);
    }

    #[test]
    fn composite_examples() {
        assert_eq!(composite_gain(1.0, 1.0, 1.0), 1.0);
        let a0 = PointingGeometry::from_params(&ChannelParams::low_turbulence()).a0;
        assert_eq!(composite_gain(0.5012, 1.0, a0), 0.5012 * a0);
    }

    #[test]
    fn params_validation() {
        assert!(ChannelParams::low_turbulence().validate().is_ok());
        assert!(ChannelParams::high_turbulence().validate().is_ok());
        let bad = |f: fn(&mut ChannelParams)| {
            let mut p = ChannelParams::low_turbulence();
            f(&mut p);
            p.validate().is_err()
        };
        assert!(bad(|p| p.cn2 = -1.0));
        assert!(bad(|p| p.wavelength = 50e-9));
        assert!(bad(|p| p.wavelength = 25e-6));
        assert!(bad(|p| p.distance = 0.0));
        assert!(bad(|p| p.wind_speed = 0.0));
        assert!(bad(|p| p.attenuation_db_per_km = -0.1));
        assert!(bad(|p| p.pointing_jitter_sigma = f64::NAN));
        assert!(bad(|p| p.tick_interval = 0.0));
        assert!(!bad(|p| p.pointing_jitter_sigma = 0.0));
    }
}
