//! The four summary statistics used alongside the raw response: path loss,
//! RMS delay spread, path count, and a moment-based Rician K-factor.

use num_complex::Complex64;
use std::f64::consts::TAU;

use crate::error::{Error, Result};

use super::ChannelSample;

/// Detected taps must exceed the strongest tap's power by this ratio.
const PATH_THRESHOLD: f64 = 1e-2; // -20 dB
const K_DB_MIN: f64 = -30.0;
const K_DB_MAX: f64 = 40.0;

/// The four channel statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StatFeatures {
    /// `-10 log10(mean_f |h_f|^2)`.
    pub path_loss_db: f64,
    /// Power-weighted std of delay over detected taps, in samples.
    pub rms_delay_spread: f64,
    /// Delay-domain taps above the -20 dB threshold.
    pub num_paths: usize,
    /// Moment-based Rician K estimate on |h_f|, clamped to [-30, 40] dB.
    pub k_factor_db: f64,
}

impl StatFeatures {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.path_loss_db,
            self.rms_delay_spread,
            self.num_paths as f64,
            self.k_factor_db,
        ]
    }
}

/// Train-set mean/std per feature, frozen at split time and applied to every
/// model input afterwards.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl FeatureStats {
    pub fn from_features<'a>(feats: impl Iterator<Item = &'a StatFeatures>) -> Result<Self> {
        let rows: Vec<[f64; 4]> = feats.map(|f| f.as_array()).collect();
        if rows.is_empty() {
            return Err(Error::Contract("feature statistics need at least one sample".into()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; 4];
        for r in &rows {
            for k in 0..4 {
                mean[k] += r[k];
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = [0.0; 4];
        for r in &rows {
            for k in 0..4 {
                let d = r[k] - mean[k];
                var[k] += d * d;
            }
        }
        let mut std = [0.0; 4];
        for k in 0..4 {
            // Constant features standardize to 0 rather than dividing by 0.
            std[k] = (var[k] / n).sqrt().max(1e-12);
        }
        Ok(Self { mean, std })
    }

    pub fn standardize(&self, f: &StatFeatures) -> [f64; 4] {
        let raw = f.as_array();
        let mut z = [0.0; 4];
        for k in 0..4 {
            z[k] = (raw[k] - self.mean[k]) / self.std[k];
        }
        z
    }
}

/// Inverse DFT of the frequency response back to the delay domain:
/// `g_tau = (1/F) sum_f h_f exp(+j 2 pi f tau / F)`.
fn delay_profile(sample: &ChannelSample) -> Vec<f64> {
    let f_bins = sample.num_bins();
    let mut powers = Vec::with_capacity(f_bins);
    for tau in 0..f_bins {
        let mut acc = Complex64::new(0.0, 0.0);
        for f in 0..f_bins {
            let phase = TAU * (f as f64) * (tau as f64) / (f_bins as f64);
            acc += sample.bin(f) * Complex64::new(phase.cos(), phase.sin());
        }
        acc /= f_bins as f64;
        powers.push(acc.norm_sqr());
    }
    powers
}

/// Extract the four statistics from one sample.
pub fn extract_features(sample: &ChannelSample) -> Result<StatFeatures> {
    let mean_power = sample.mean_power();
    if mean_power <= 0.0 {
        return Err(Error::Feature("all-zero channel".into()));
    }
    let path_loss_db = -10.0 * mean_power.log10();

    let pdp = delay_profile(sample);
    let peak = pdp.iter().cloned().fold(0.0, f64::max);
    let threshold = peak * PATH_THRESHOLD;
    let mut num_paths = 0usize;
    let (mut p_sum, mut d_sum, mut d2_sum) = (0.0, 0.0, 0.0);
    for (tau, &p) in pdp.iter().enumerate() {
        if p >= threshold {
            num_paths += 1;
            p_sum += p;
            d_sum += p * tau as f64;
            d2_sum += p * (tau as f64) * (tau as f64);
        }
    }
    let mean_delay = d_sum / p_sum;
    let rms_delay_spread = (d2_sum / p_sum - mean_delay * mean_delay).max(0.0).sqrt();

    Ok(StatFeatures {
        path_loss_db,
        rms_delay_spread,
        num_paths,
        k_factor_db: moment_k_factor_db(sample),
    })
}

/// Second/fourth-moment Rician K estimator on |h_f|:
/// with `mu2 = E|h|^2` and `mu4 = E|h|^4`, the LoS power is
/// `A^2 = sqrt(2 mu2^2 - mu4)` and `K = A^2 / (mu2 - A^2)`.
fn moment_k_factor_db(sample: &ChannelSample) -> f64 {
    let f = sample.num_bins();
    let (mut mu2, mut mu4) = (0.0, 0.0);
    for i in 0..f {
        let p = sample.bin(i).norm_sqr();
        mu2 += p;
        mu4 += p * p;
    }
    mu2 /= f as f64;
    mu4 /= f as f64;
    let det = 2.0 * mu2 * mu2 - mu4;
    if det <= 0.0 {
        return K_DB_MIN;
    }
    let los_power = det.sqrt();
    let diffuse = mu2 - los_power;
    if diffuse <= 0.0 {
        return K_DB_MAX;
    }
    (10.0 * (los_power / diffuse).log10()).clamp(K_DB_MIN, K_DB_MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channelgen::{generate, ChannelSample, ScenarioProfile, TapSpec};

    fn profile(k_db: f64, taps: Vec<TapSpec>) -> ScenarioProfile {
        ScenarioProfile { label: 0, name: "t".into(), los_k_db: k_db, taps }
    }

    fn single_tap() -> ScenarioProfile {
        profile(
            f64::INFINITY,
            vec![TapSpec { mean_delay: 0.0, mean_power: 1.0, power_jitter_db: 0.0, delay_jitter: 0.0 }],
        )
    }

    #[test]
    fn flat_channel_features() {
        let s = generate(&single_tap(), 32, 1, 1).unwrap().remove(0);
        let f = extract_features(&s).unwrap();
        assert_eq!(f.num_paths, 1);
        assert!(f.rms_delay_spread.abs() < 1e-9);
        assert!(f.path_loss_db.abs() < 1e-9);
        assert!((f.k_factor_db - 40.0).abs() < 1e-9, "pure LoS clamps high");
    }

    #[test]
    fn gain_shifts_path_loss_exactly_and_leaves_shape_features() {
        let s = generate(&crate::channelgen::default_profiles()[2], 32, 1, 5)
            .unwrap()
            .remove(0);
        let base = extract_features(&s).unwrap();
        let g = 3.7;
        let scaled = extract_features(&s.scaled(g)).unwrap();
        assert!((scaled.path_loss_db - (base.path_loss_db - 20.0 * g.log10())).abs() < 1e-9);
        assert!((scaled.rms_delay_spread - base.rms_delay_spread).abs() < 1e-12);
        assert_eq!(scaled.num_paths, base.num_paths);
    }

    /// Rich-scattering Rayleigh: many equal-power taps so |h_f| across bins
    /// is genuinely Rayleigh distributed.
    fn rayleigh_rich() -> ScenarioProfile {
        let taps = (0..320)
            .map(|i| TapSpec {
                mean_delay: (i * 2) as f64,
                mean_power: 1.0,
                power_jitter_db: 0.0,
                delay_jitter: 0.0,
            })
            .collect();
        profile(f64::NEG_INFINITY, taps)
    }

    /// A deterministic LoS tap over a rich diffuse floor with total power
    /// 1/100 of the LoS power: ground-truth K of 20 dB.
    fn los_rich_20db() -> ScenarioProfile {
        let mut taps = vec![TapSpec {
            mean_delay: 0.0,
            mean_power: 1.0,
            power_jitter_db: 0.0,
            delay_jitter: 0.0,
        }];
        let n_diffuse = 240;
        taps.extend((0..n_diffuse).map(|i| TapSpec {
            mean_delay: (1 + i * 2) as f64,
            mean_power: 0.01 / n_diffuse as f64,
            power_jitter_db: 0.0,
            delay_jitter: 0.0,
        }));
        profile(f64::INFINITY, taps)
    }

    #[test]
    fn k_factor_separates_rayleigh_from_strong_los() {
        let s_ray = generate(&rayleigh_rich(), 2000, 1, 31).unwrap().remove(0);
        let s_los = generate(&los_rich_20db(), 2000, 1, 32).unwrap().remove(0);
        let k_ray = extract_features(&s_ray).unwrap().k_factor_db;
        let k_los = extract_features(&s_los).unwrap().k_factor_db;
        assert!(k_ray <= -10.0, "Rayleigh estimate {k_ray}");
        assert!(k_los >= 10.0, "LoS estimate {k_los}");
        assert!(k_los - k_ray >= 20.0);
    }

    #[test]
    fn zero_channel_is_feature_error() {
        let s = ChannelSample::from_split_data(0, f64::INFINITY, vec![0.0; 16]).unwrap();
        assert!(matches!(extract_features(&s), Err(Error::Feature(_))));
    }
}
