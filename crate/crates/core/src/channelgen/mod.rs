//! Synthetic labeled channel frequency responses.
//!
//! Each scenario is a tapped-delay-line profile: a handful of delay-domain
//! taps with per-sample jitter on delays and powers, a Rician first tap
//! (pure LoS at K = +inf, Rayleigh at K = -inf), and Rayleigh later taps.
//! Samples are unit-power normalized so classes differ in shape, not level,
//! and can be corrupted with LS-estimation noise at a target SNR.

pub mod features;
pub mod io;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng::{rng_from_seed, standard_normal, SeededRng};

pub use features::{extract_features, FeatureStats, StatFeatures};

/// One delay-domain tap of a scenario profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TapSpec {
    /// Mean delay in samples; must stay inside [0, F).
    pub mean_delay: f64,
    /// Mean linear power of the tap.
    pub mean_power: f64,
    /// Log-normal power jitter, std in dB.
    pub power_jitter_db: f64,
    /// Gaussian delay jitter, std in samples.
    pub delay_jitter: f64,
}

/// A propagation scenario: the label, its taps, and the Rician K of the
/// first tap in dB (`-inf` means Rayleigh, `+inf` means pure LoS).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioProfile {
    pub label: usize,
    pub name: String,
    pub los_k_db: f64,
    pub taps: Vec<TapSpec>,
}

impl ScenarioProfile {
    fn validate(&self, freq_bins: usize) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::Profile(format!("scenario '{}' has no taps", self.name)));
        }
        for tap in &self.taps {
            if tap.mean_power <= 0.0 {
                return Err(Error::Profile(format!(
                    "scenario '{}': tap power {} must be positive",
                    self.name, tap.mean_power
                )));
            }
            if tap.mean_delay < 0.0 || tap.mean_delay >= freq_bins as f64 {
                return Err(Error::Profile(format!(
                    "scenario '{}': tap delay {} outside [0, {freq_bins})",
                    self.name, tap.mean_delay
                )));
            }
        }
        Ok(())
    }
}

/// Three office-like default profiles. The four summary statistics overlap by
/// construction: weak taps sit near the path-detection threshold, jitters
/// smear the delay-spread distributions, and each office has a different bulk
/// propagation delay, which shifts every tap equally. A bulk shift changes
/// the phase progression across frequency (plainly visible in the raw
/// response) while leaving path loss, centered delay spread, path count, and
/// K-factor untouched.
pub fn default_profiles() -> Vec<ScenarioProfile> {
    vec![
        ScenarioProfile {
            label: 0,
            name: "office_a".into(),
            los_k_db: 12.0,
            taps: vec![
                TapSpec { mean_delay: 0.0, mean_power: 1.0, power_jitter_db: 0.5, delay_jitter: 0.4 },
                TapSpec { mean_delay: 6.0, mean_power: 0.08, power_jitter_db: 2.5, delay_jitter: 1.5 },
                TapSpec { mean_delay: 13.0, mean_power: 0.03, power_jitter_db: 3.0, delay_jitter: 2.0 },
            ],
        },
        ScenarioProfile {
            label: 1,
            name: "office_b".into(),
            los_k_db: f64::NEG_INFINITY,
            taps: vec![
                TapSpec { mean_delay: 2.0, mean_power: 1.0, power_jitter_db: 1.5, delay_jitter: 0.6 },
                TapSpec { mean_delay: 6.0, mean_power: 0.449, power_jitter_db: 1.5, delay_jitter: 1.0 },
                TapSpec { mean_delay: 10.0, mean_power: 0.202, power_jitter_db: 1.5, delay_jitter: 1.0 },
                TapSpec { mean_delay: 15.0, mean_power: 0.091, power_jitter_db: 1.5, delay_jitter: 1.2 },
                TapSpec { mean_delay: 21.0, mean_power: 0.041, power_jitter_db: 2.0, delay_jitter: 1.2 },
                TapSpec { mean_delay: 28.0, mean_power: 0.018, power_jitter_db: 2.0, delay_jitter: 1.5 },
            ],
        },
        ScenarioProfile {
            label: 2,
            name: "office_c".into(),
            los_k_db: 3.0,
            taps: vec![
                TapSpec { mean_delay: 8.0, mean_power: 1.0, power_jitter_db: 1.5, delay_jitter: 1.8 },
                TapSpec { mean_delay: 11.0, mean_power: 0.35, power_jitter_db: 2.0, delay_jitter: 2.5 },
                TapSpec { mean_delay: 15.0, mean_power: 0.12, power_jitter_db: 2.5, delay_jitter: 2.5 },
                TapSpec { mean_delay: 19.0, mean_power: 0.05, power_jitter_db: 2.5, delay_jitter: 3.0 },
            ],
        },
    ]
}

/// A channel frequency response of length F, stored as split real blocks
/// (all real parts, then all imaginary parts), with its scenario label and
/// the estimation SNR (`+inf` for a clean sample).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub label: usize,
    pub snr_db: f64,
    data: Vec<f64>, // length 2F: [Re_0..Re_{F-1}, Im_0..Im_{F-1}]
}

impl ChannelSample {
    pub fn from_bins(label: usize, snr_db: f64, bins: &[Complex64]) -> Self {
        let f = bins.len();
        let mut data = vec![0.0; 2 * f];
        for (i, b) in bins.iter().enumerate() {
            data[i] = b.re;
            data[f + i] = b.im;
        }
        Self { label, snr_db, data }
    }

    pub fn from_split_data(label: usize, snr_db: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() % 2 != 0 || data.is_empty() {
            return Err(Error::Dimension(format!(
                "channel sample needs 2F values, got {}",
                data.len()
            )));
        }
        Ok(Self { label, snr_db, data })
    }

    pub fn num_bins(&self) -> usize {
        self.data.len() / 2
    }

    pub fn bin(&self, f: usize) -> Complex64 {
        Complex64::new(self.data[f], self.data[self.num_bins() + f])
    }

    /// Split real storage: all Re, then all Im.
    pub fn split_data(&self) -> &[f64] {
        &self.data
    }

    /// Mean per-bin power, `mean_f |h_f|^2`.
    pub fn mean_power(&self) -> f64 {
        let f = self.num_bins();
        (0..f).map(|i| self.bin(i).norm_sqr()).sum::<f64>() / f as f64
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            label: self.label,
            snr_db: self.snr_db,
            data: self.data.iter().map(|v| gain * v).collect(),
        }
    }
}

/// Frequency response of a set of integer-delay taps:
/// `h_f = sum_i a_i * exp(-j 2 pi f d_i / F)`.
pub fn freq_response_from_taps(taps: &[(usize, Complex64)], freq_bins: usize) -> Vec<Complex64> {
    let mut h = vec![Complex64::new(0.0, 0.0); freq_bins];
    for &(delay, amp) in taps {
        for (f, hf) in h.iter_mut().enumerate() {
            let phase = -TAU * (f as f64) * (delay as f64) / (freq_bins as f64);
            *hf += amp * Complex64::new(phase.cos(), phase.sin());
        }
    }
    h
}

fn circular_gaussian(rng: &mut SeededRng) -> Complex64 {
    // E|w|^2 = 1: real and imaginary parts are N(0, 1/2).
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(s * standard_normal(rng), s * standard_normal(rng))
}

/// Draw `count` channel realizations of one scenario profile.
///
/// Per sample: jitter tap delays and powers, draw the first tap as Rician
/// with the profile's K and the rest as Rayleigh, evaluate the length-F DFT
/// of the resulting impulse, and normalize to exactly unit mean bin power.
pub fn generate(
    profile: &ScenarioProfile,
    freq_bins: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<ChannelSample>> {
    if count == 0 {
        return Err(Error::Contract("generate: count must be >= 1".into()));
    }
    profile.validate(freq_bins)?;
    let mut rng = rng_from_seed(seed);
    let k_linear = 10f64.powf(profile.los_k_db / 10.0); // +inf and 0 fall out naturally
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let mut taps: Vec<(usize, Complex64)> = Vec::with_capacity(profile.taps.len());
        for (i, spec) in profile.taps.iter().enumerate() {
            let delay = (spec.mean_delay + spec.delay_jitter * standard_normal(&mut rng))
                .round()
                .clamp(0.0, (freq_bins - 1) as f64) as usize;
            let power = spec.mean_power
                * 10f64.powf(spec.power_jitter_db * standard_normal(&mut rng) / 10.0);
            let amp = if i == 0 {
                let phase = TAU * rng.gen::<f64>();
                let los = Complex64::new(phase.cos(), phase.sin());
                if k_linear.is_infinite() {
                    power.sqrt() * los
                } else {
                    let los_part = (k_linear / (k_linear + 1.0)).sqrt() * los;
                    let diffuse = (1.0 / (k_linear + 1.0)).sqrt() * circular_gaussian(&mut rng);
                    power.sqrt() * (los_part + diffuse)
                }
            } else {
                power.sqrt() * circular_gaussian(&mut rng)
            };
            taps.push((delay, amp));
        }
        let mut bins = freq_response_from_taps(&taps, freq_bins);
        let mean_pow = bins.iter().map(|b| b.norm_sqr()).sum::<f64>() / freq_bins as f64;
        let norm = 1.0 / mean_pow.sqrt();
        for b in bins.iter_mut() {
            *b *= norm;
        }
        samples.push(ChannelSample::from_bins(profile.label, f64::INFINITY, &bins));
    }
    Ok(samples)
}

/// LS-estimation noise: `h + sigma * n` with `n` circular complex standard
/// Gaussian per bin and `sigma^2 = mean|h|^2 * 10^(-snr_db/10)`.
pub fn apply_ls_noise(sample: &ChannelSample, snr_db: f64, seed: u64) -> Result<ChannelSample> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Contract(format!("apply_ls_noise: invalid SNR {snr_db}")));
    }
    let f = sample.num_bins();
    let sigma = (sample.mean_power() * 10f64.powf(-snr_db / 10.0)).sqrt();
    let mut rng = rng_from_seed(seed);
    let mut bins = Vec::with_capacity(f);
    for i in 0..f {
        bins.push(sample.bin(i) + sigma * circular_gaussian(&mut rng));
    }
    let mut noisy = ChannelSample::from_bins(sample.label, snr_db, &bins);
    noisy.label = sample.label;
    Ok(noisy)
}

/// Train/test split assignment over a dataset, stratified per scenario.
#[derive(Debug, Clone)]
pub struct SplitAssign {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub sampling_rate: f64,
    pub seed: u64,
}

/// A labeled collection of channel samples plus everything derived from the
/// training split: assignments, per-sample features, and the feature
/// standardization statistics used to build model inputs.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub freq_bins: usize,
    pub num_scenarios: usize,
    pub samples: Vec<ChannelSample>,
    pub split: Option<SplitAssign>,
    pub features: Option<Vec<StatFeatures>>,
    pub feature_stats: Option<FeatureStats>,
}

impl Dataset {
    pub fn new(freq_bins: usize, num_scenarios: usize, samples: Vec<ChannelSample>) -> Result<Self> {
        for s in &samples {
            if s.num_bins() != freq_bins {
                return Err(Error::Dimension(format!(
                    "sample has {} bins, dataset expects {freq_bins}",
                    s.num_bins()
                )));
            }
            if s.label >= num_scenarios {
                return Err(Error::Contract(format!(
                    "label {} outside 0..{num_scenarios}",
                    s.label
                )));
            }
        }
        Ok(Self { freq_bins, num_scenarios, samples, split: None, features: None, feature_stats: None })
    }

    /// Generate `per_scenario` samples for every profile. Each profile gets
    /// its own derived seed so scenario sets are independent streams.
    pub fn generate(
        profiles: &[ScenarioProfile],
        freq_bins: usize,
        per_scenario: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(profiles.len() * per_scenario);
        for (k, profile) in profiles.iter().enumerate() {
            let s = generate(profile, freq_bins, per_scenario, crate::rng::derive_seed(seed, k as u64))?;
            samples.extend(s);
        }
        Dataset::new(freq_bins, profiles.len(), samples)
    }

    pub fn counts_per_scenario(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_scenarios];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Stratified train/test split, deterministic under `seed`. Also extracts
    /// per-sample features and freezes train-set standardization statistics.
    pub fn split(&mut self, sampling_rate: f64, seed: u64) -> Result<()> {
        if !(sampling_rate > 0.0 && sampling_rate < 1.0) {
            return Err(Error::Split(format!("sampling rate {sampling_rate} outside (0, 1)")));
        }
        let counts = self.counts_per_scenario();
        for (c, &n) in counts.iter().enumerate() {
            if n < 2 {
                return Err(Error::Split(format!("scenario {c} has {n} samples, need at least 2")));
            }
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut rng = rng_from_seed(seed);
        for c in 0..self.num_scenarios {
            let mut idx: Vec<usize> = (0..self.samples.len())
                .filter(|&i| self.samples[i].label == c)
                .collect();
            // Fisher-Yates with the shared stream; scenario order is fixed.
            for i in (1..idx.len()).rev() {
                let j = rng.gen_range(0..=i);
                idx.swap(i, j);
            }
            let n_train = ((idx.len() as f64) * sampling_rate).round() as usize;
            let n_train = n_train.clamp(1, idx.len() - 1);
            train.extend_from_slice(&idx[..n_train]);
            test.extend_from_slice(&idx[n_train..]);
        }
        train.sort_unstable();
        test.sort_unstable();

        let feats: Result<Vec<StatFeatures>> = self.samples.iter().map(extract_features).collect();
        let feats = feats?;
        let stats = FeatureStats::from_features(train.iter().map(|&i| &feats[i]))?;
        self.split = Some(SplitAssign { train, test, sampling_rate, seed });
        self.features = Some(feats);
        self.feature_stats = Some(stats);
        Ok(())
    }

    pub fn train_indices(&self) -> Result<&[usize]> {
        self.split
            .as_ref()
            .map(|s| s.train.as_slice())
            .ok_or_else(|| Error::Contract("dataset has no split".into()))
    }

    pub fn test_indices(&self) -> Result<&[usize]> {
        self.split
            .as_ref()
            .map(|s| s.test.as_slice())
            .ok_or_else(|| Error::Contract("dataset has no split".into()))
    }

    /// Model input for sample `i` using the dataset's standardization stats.
    pub fn build_input_for(&self, i: usize) -> Result<Tensor> {
        let feats = self
            .features
            .as_ref()
            .ok_or_else(|| Error::Contract("build_input: features not extracted".into()))?;
        build_input(&self.samples[i], &feats[i], self.feature_stats.as_ref())
    }

    /// Input vector length for this dataset's samples.
    pub fn input_dim(&self) -> usize {
        2 * self.freq_bins + 4
    }
}

/// Concatenated model input `[Re h; Im h; four standardized features]`,
/// length 2F+4. The features are standardized with train-set statistics.
pub fn build_input(
    sample: &ChannelSample,
    feats: &StatFeatures,
    stats: Option<&FeatureStats>,
) -> Result<Tensor> {
    let stats = stats.ok_or_else(|| {
        Error::Contract("build_input: missing feature standardization statistics".into())
    })?;
    let f = sample.num_bins();
    let mut data = Vec::with_capacity(2 * f + 4);
    data.extend_from_slice(sample.split_data());
    data.extend_from_slice(&stats.standardize(feats));
    Ok(Tensor::vector(data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_profile() -> ScenarioProfile {
        ScenarioProfile {
            label: 0,
            name: "flat".into(),
            los_k_db: f64::INFINITY,
            taps: vec![TapSpec { mean_delay: 0.0, mean_power: 1.0, power_jitter_db: 0.0, delay_jitter: 0.0 }],
        }
    }

    #[test]
    fn single_tap_at_zero_delay_is_flat() {
        let samples = generate(&flat_profile(), 16, 3, 9).unwrap();
        for s in &samples {
            let first = s.bin(0);
            assert!((first.norm() - 1.0).abs() < 1e-12);
            for f in 1..16 {
                let b = s.bin(f);
                assert!((b - first).norm() < 1e-12, "bin {f} differs from bin 0");
            }
        }
    }

    #[test]
    fn two_equal_taps_make_a_comb() {
        // Taps a at delay 0 and F/2: h_f = a (1 + (-1)^f), so |h| alternates 2a, 0.
        let f = 8;
        let a = Complex64::new(0.7, -0.2);
        let h = freq_response_from_taps(&[(0, a), (f / 2, a)], f);
        for (i, hf) in h.iter().enumerate() {
            let expect = if i % 2 == 0 { 2.0 * a.norm() } else { 0.0 };
            assert!((hf.norm() - expect).abs() < 1e-12, "bin {i}");
        }
    }

    #[test]
    fn generated_samples_have_unit_mean_power() {
        for profile in default_profiles() {
            let samples = generate(&profile, 32, 1000, 11).unwrap();
            let mut acc = 0.0;
            for s in &samples {
                let p = s.mean_power();
                assert!((p - 1.0).abs() < 1e-9, "per-sample power {p}");
                acc += p;
            }
            let mean = acc / samples.len() as f64;
            assert!((mean - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn tap_delay_out_of_band_is_profile_error() {
        let profile = ScenarioProfile {
            label: 0,
            name: "bad".into(),
            los_k_db: 0.0,
            taps: vec![TapSpec { mean_delay: 16.0, mean_power: 1.0, power_jitter_db: 0.0, delay_jitter: 0.0 }],
        };
        assert!(matches!(generate(&profile, 16, 1, 0), Err(Error::Profile(_))));
    }

    #[test]
    fn huge_snr_leaves_sample_unchanged() {
        let s = generate(&flat_profile(), 16, 1, 3).unwrap().remove(0);
        let noisy = apply_ls_noise(&s, 200.0, 5).unwrap();
        for (a, b) in s.split_data().iter().zip(noisy.split_data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let clean = apply_ls_noise(&s, f64::INFINITY, 5).unwrap();
        assert_eq!(s.split_data(), clean.split_data());
    }

    #[test]
    fn zero_db_noise_power_matches_signal_power() {
        let s = generate(&flat_profile(), 64, 1, 3).unwrap().remove(0);
        let mut acc = 0.0;
        let draws = 1000;
        for k in 0..draws {
            let noisy = apply_ls_noise(&s, 0.0, 1000 + k).unwrap();
            let mut err = 0.0;
            for f in 0..s.num_bins() {
                err += (noisy.bin(f) - s.bin(f)).norm_sqr();
            }
            acc += err / s.num_bins() as f64;
        }
        let mean = acc / draws as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean added noise power {mean}");
    }

    #[test]
    fn realized_snr_tracks_requested_snr() {
        let s = generate(&default_profiles()[1], 64, 1, 4).unwrap().remove(0);
        let mut sig = 0.0;
        let mut noise = 0.0;
        for k in 0..1000u64 {
            let noisy = apply_ls_noise(&s, 10.0, 2000 + k).unwrap();
            for f in 0..s.num_bins() {
                sig += s.bin(f).norm_sqr();
                noise += (noisy.bin(f) - s.bin(f)).norm_sqr();
            }
        }
        let snr_db = 10.0 * (sig / noise).log10();
        assert!((snr_db - 10.0).abs() < 0.5, "realized SNR {snr_db}");
    }

    #[test]
    fn split_is_a_deterministic_stratified_partition() {
        let mut ds = Dataset::generate(&default_profiles(), 32, 300, 21).unwrap();
        ds.split(0.3, 77).unwrap();
        let split = ds.split.clone().unwrap();
        // 300 per scenario at rate 0.3 -> 90 train each.
        for c in 0..3 {
            let n = split.train.iter().filter(|&&i| ds.samples[i].label == c).count();
            assert_eq!(n, 90);
        }
        // Partition: disjoint, covering.
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.samples.len()).collect::<Vec<_>>());

        let mut ds2 = Dataset::generate(&default_profiles(), 32, 300, 21).unwrap();
        ds2.split(0.3, 77).unwrap();
        let s2 = ds2.split.unwrap();
        assert_eq!(split.train, s2.train);
        assert_eq!(split.test, s2.test);
    }

    #[test]
    fn split_rejects_tiny_scenarios() {
        let profile = flat_profile();
        let samples = generate(&profile, 8, 1, 0).unwrap();
        let mut ds = Dataset::new(8, 1, samples).unwrap();
        assert!(matches!(ds.split(0.5, 0), Err(Error::Split(_))));
    }

    #[test]
    fn build_input_layout_and_errors() {
        let tiny = vec![
            ScenarioProfile {
                label: 0,
                name: "t0".into(),
                los_k_db: 6.0,
                taps: vec![
                    TapSpec { mean_delay: 0.0, mean_power: 1.0, power_jitter_db: 0.5, delay_jitter: 0.2 },
                    TapSpec { mean_delay: 2.0, mean_power: 0.3, power_jitter_db: 0.5, delay_jitter: 0.2 },
                ],
            },
            ScenarioProfile {
                label: 1,
                name: "t1".into(),
                los_k_db: f64::NEG_INFINITY,
                taps: vec![
                    TapSpec { mean_delay: 0.0, mean_power: 1.0, power_jitter_db: 0.5, delay_jitter: 0.2 },
                    TapSpec { mean_delay: 3.0, mean_power: 0.5, power_jitter_db: 0.5, delay_jitter: 0.2 },
                ],
            },
        ];
        let mut ds = Dataset::generate(&tiny, 4, 8, 2).unwrap();
        let err = ds.build_input_for(0);
        assert!(err.is_err(), "missing stats must be a contract error");
        ds.split(0.5, 1).unwrap();
        let x = ds.build_input_for(0).unwrap();
        assert_eq!(x.numel(), 12); // 2*4 + 4
        // Copy contract: first 2F entries are the split Re/Im blocks.
        assert_eq!(&x.data()[..8], ds.samples[0].split_data());
    }

    #[test]
    fn standardized_feature_at_train_mean_is_zero() {
        let feats = vec![
            StatFeatures { path_loss_db: 1.0, rms_delay_spread: 2.0, num_paths: 3, k_factor_db: -4.0 },
            StatFeatures { path_loss_db: 3.0, rms_delay_spread: 6.0, num_paths: 5, k_factor_db: 4.0 },
        ];
        let stats = FeatureStats::from_features(feats.iter()).unwrap();
        let at_mean = StatFeatures { path_loss_db: 2.0, rms_delay_spread: 4.0, num_paths: 4, k_factor_db: 0.0 };
        for z in stats.standardize(&at_mean) {
            assert!(z.abs() < 1e-12);
        }
    }
}
