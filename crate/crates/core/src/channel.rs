//! Tapped-delay-line channels.
//!
//! Profile tables (TDL-A through TDL-E, normalized delays and tap powers) ship
//! as CSV under `data/`. A realization draws one static complex gain per tap;
//! delays are applied in the frequency domain so fractional-sample delays are
//! exact under the cyclic-prefix assumption.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dft;
use crate::error::{Error, Result};
use crate::rng::{mix, Stream};
use crate::waveform::{strip_cp, OfdmConfig};

/// Tolerance on the power-weighted RMS of normalized delays.
///
/// The published TDL-D table normalizes to 0.9937, so the loader accepts 1%;
/// [`scale_delays`] divides the residual out.
pub const RMS_NORMALIZATION_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProfileName {
    A,
    B,
    C,
    D,
    E,
}

impl ProfileName {
    pub const ALL: [ProfileName; 5] = [ProfileName::A, ProfileName::B, ProfileName::C, ProfileName::D, ProfileName::E];

    /// D and E model line-of-sight propagation.
    pub fn is_los(self) -> bool {
        matches!(self, ProfileName::D | ProfileName::E)
    }
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            ProfileName::A => 'A',
            ProfileName::B => 'B',
            ProfileName::C => 'C',
            ProfileName::D => 'D',
            ProfileName::E => 'E',
        };
        write!(f, "TDL-{c}")
    }
}

impl FromStr for ProfileName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase();
        let t = t.strip_prefix("TDL-").or_else(|| t.strip_prefix("TDL")).unwrap_or(&t);
        match t {
            "A" => Ok(ProfileName::A),
            "B" => Ok(ProfileName::B),
            "C" => Ok(ProfileName::C),
            "D" => Ok(ProfileName::D),
            "E" => Ok(ProfileName::E),
            _ => Err(Error::config(
                "profile",
                format!("unknown TDL profile `{s}` (valid: A, B, C, D, E)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fading {
    Rayleigh,
    Rician,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdlTap {
    pub normalized_delay: f64,
    pub power_db: f64,
    pub fading: Fading,
}

impl TdlTap {
    pub fn power_linear(&self) -> f64 {
        10f64.powf(self.power_db / 10.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdlProfile {
    pub name: ProfileName,
    /// Sorted by normalized delay.
    pub taps: Vec<TdlTap>,
    pub rician_k_db: Option<f64>,
}

const TDL_A: &str = include_str!("../data/tdl_a.csv");
const TDL_B: &str = include_str!("../data/tdl_b.csv");
const TDL_C: &str = include_str!("../data/tdl_c.csv");
const TDL_D: &str = include_str!("../data/tdl_d.csv");
const TDL_E: &str = include_str!("../data/tdl_e.csv");

impl TdlProfile {
    pub fn builtin(name: ProfileName) -> TdlProfile {
        let text = match name {
            ProfileName::A => TDL_A,
            ProfileName::B => TDL_B,
            ProfileName::C => TDL_C,
            ProfileName::D => TDL_D,
            ProfileName::E => TDL_E,
        };
        TdlProfile::parse(text).expect("shipped TDL table is valid")
    }

    /// Parse a profile table: `# profile:` and `# rician_k_db:` header lines,
    /// then CSV records `normalized_delay,power_db,fading`.
    pub fn parse(text: &str) -> Result<TdlProfile> {
        let mut name = None;
        let mut k_db = None;
        let mut body = String::new();
        for line in text.lines() {
            if let Some(h) = line.trim().strip_prefix('#') {
                let Some((key, val)) = h.split_once(':') else { continue };
                match key.trim() {
                    "profile" => name = Some(val.trim().parse::<ProfileName>()?),
                    "rician_k_db" => {
                        let v = val.trim();
                        if v != "none" {
                            k_db = Some(v.parse::<f64>().map_err(|e| Error::config("rician_k_db", e.to_string()))?);
                        }
                    }
                    _ => {}
                }
            } else if !line.trim().is_empty() {
                body.push_str(line);
                body.push('\n');
            }
        }
        let name = name.ok_or_else(|| Error::config("profile", "missing `# profile:` header"))?;

        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
        let mut taps = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::config(format!("taps[{i}]"), "expected 3 columns"));
            }
            let field = |j: usize, what: &str| -> Result<f64> {
                rec[j]
                    .parse::<f64>()
                    .map_err(|e| Error::config(format!("taps[{i}].{what}"), e.to_string()))
            };
            let fading = match &rec[2] {
                "rayleigh" => Fading::Rayleigh,
                "rician" => Fading::Rician,
                other => return Err(Error::config(format!("taps[{i}].fading"), format!("unknown fading `{other}`"))),
            };
            taps.push(TdlTap {
                normalized_delay: field(0, "normalized_delay")?,
                power_db: field(1, "power_db")?,
                fading,
            });
        }
        // the 3GPP tables list a few taps out of delay order
        taps.sort_by(|a, b| a.normalized_delay.total_cmp(&b.normalized_delay));
        let profile = TdlProfile {
            name,
            taps,
            rician_k_db: k_db,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::config("taps", "profile has no taps"));
        }
        if self.taps[0].normalized_delay != 0.0 {
            return Err(Error::config("taps[0].normalized_delay", "first tap must be at delay 0"));
        }
        if self.taps.windows(2).any(|w| w[1].normalized_delay < w[0].normalized_delay) {
            return Err(Error::config("taps", "delays must be non-decreasing"));
        }
        for (i, t) in self.taps.iter().enumerate() {
            if t.fading == Fading::Rician && (i != 0 || !self.name.is_los()) {
                return Err(Error::config(
                    format!("taps[{i}].fading"),
                    "only the first tap of a LoS profile may be Rician",
                ));
            }
        }
        if self.name.is_los() != (self.taps[0].fading == Fading::Rician) {
            return Err(Error::config("taps[0].fading", "LoS profiles need a Rician first tap"));
        }
        if self.name.is_los() && self.rician_k_db.is_none() {
            return Err(Error::config("rician_k_db", "LoS profile without K-factor"));
        }
        let rms = self.normalized_rms_delay();
        if (rms - 1.0).abs() > RMS_NORMALIZATION_TOL {
            return Err(Error::config("taps", format!("normalized RMS delay spread {rms} is not 1")));
        }
        Ok(())
    }

    /// Power-weighted RMS of the normalized delays.
    pub fn normalized_rms_delay(&self) -> f64 {
        let delays: Vec<f64> = self.taps.iter().map(|t| t.normalized_delay).collect();
        let powers: Vec<f64> = self.taps.iter().map(|t| t.power_linear()).collect();
        rms_delay_spread(&delays, &powers)
    }

    pub fn total_power(&self) -> f64 {
        self.taps.iter().map(|t| t.power_linear()).sum()
    }

    pub fn max_normalized_delay(&self) -> f64 {
        self.taps.last().map(|t| t.normalized_delay).unwrap_or(0.0)
    }
}

/// Power-weighted standard deviation of `delays`.
pub fn rms_delay_spread(delays: &[f64], powers: &[f64]) -> f64 {
    let total: f64 = powers.iter().sum();
    let mean: f64 = delays.iter().zip(powers).map(|(d, p)| d * p).sum::<f64>() / total;
    let var: f64 = delays.iter().zip(powers).map(|(d, p)| (d - mean).powi(2) * p).sum::<f64>() / total;
    var.sqrt()
}

/// Actual tap delays for a target RMS delay spread.
///
/// Normalized delays are multiplied by `ds_desired_s` and divided by the
/// table's own RMS, so the result hits the target even for tables that are
/// not exactly unit-normalized (TDL-D is off by 0.6%).
pub fn scale_delays(profile: &TdlProfile, ds_desired_s: f64) -> Result<Vec<f64>> {
    let k = delay_scale(profile, ds_desired_s)?;
    Ok(profile.taps.iter().map(|t| t.normalized_delay * k).collect())
}

/// Seconds per unit of normalized delay for a target RMS delay spread.
pub fn delay_scale(profile: &TdlProfile, ds_desired_s: f64) -> Result<f64> {
    if !(ds_desired_s.is_finite() && ds_desired_s > 0.0) {
        return Err(Error::config("channel.ds_ns", "delay spread must be positive"));
    }
    Ok(ds_desired_s / profile.normalized_rms_delay())
}

/// One static draw of the channel impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub tap_delays_s: Vec<f64>,
    pub tap_gains: Vec<Complex64>,
    pub delay_spread_s: f64,
    pub los: bool,
    /// Deterministic part of the first tap, for Rician profiles.
    pub los_component: Option<Complex64>,
}

impl ChannelRealization {
    /// Deterministic taps, e.g. a hand-specified multipath channel.
    pub fn fixed(tap_delays_s: Vec<f64>, tap_gains: Vec<Complex64>, los: bool) -> Result<Self> {
        if tap_delays_s.len() != tap_gains.len() {
            return Err(Error::Dimension {
                expected: tap_delays_s.len(),
                got: tap_gains.len(),
            });
        }
        if tap_delays_s.is_empty() {
            return Err(Error::config("channel.taps", "no taps"));
        }
        Ok(ChannelRealization {
            delay_spread_s: rms_delay_spread(
                &tap_delays_s,
                &tap_gains.iter().map(|g| g.norm_sqr()).collect::<Vec<_>>(),
            ),
            tap_delays_s,
            tap_gains,
            los,
            los_component: None,
        })
    }

    /// Round every tap delay to a multiple of `1/sample_rate_hz` and merge
    /// taps that land on the same sample.
    pub fn snapped(&self, sample_rate_hz: f64) -> ChannelRealization {
        let mut delays: Vec<f64> = Vec::new();
        let mut gains: Vec<Complex64> = Vec::new();
        let mut bins: Vec<i64> = Vec::new();
        for (&tau, &g) in self.tap_delays_s.iter().zip(&self.tap_gains) {
            let bin = (tau * sample_rate_hz).round() as i64;
            match bins.iter().position(|&b| b == bin) {
                Some(i) => gains[i] += g,
                None => {
                    bins.push(bin);
                    delays.push(bin as f64 / sample_rate_hz);
                    gains.push(g);
                }
            }
        }
        ChannelRealization {
            delay_spread_s: self.delay_spread_s,
            tap_delays_s: delays,
            tap_gains: gains,
            los: self.los,
            los_component: self.los_component,
        }
    }

    pub fn max_excess_delay_s(&self) -> f64 {
        self.tap_delays_s.iter().copied().fold(0.0, f64::max)
    }

    pub fn total_power(&self) -> f64 {
        self.tap_gains.iter().map(|g| g.norm_sqr()).sum()
    }

    /// Frequency response `Σ_l h_l e^{-j2πkΔf(τ_l + extra)}` on all subcarriers.
    pub fn frequency_response(&self, cfg: &OfdmConfig, extra_delay_s: f64) -> Vec<Complex64> {
        let n = cfg.n_subcarriers;
        let mut h = vec![Complex64::new(0.0, 0.0); n];
        for (&tau, &g) in self.tap_delays_s.iter().zip(&self.tap_gains) {
            let cycles_per_bin = (tau + extra_delay_s) * cfg.scs_hz;
            accumulate_ramp(&mut h, g, -cycles_per_bin);
        }
        h
    }
}

/// `out[k] += gain · e^{j2π·k·cycles_per_bin}`, re-anchored every 64 bins.
pub(crate) fn accumulate_ramp(out: &mut [Complex64], gain: Complex64, cycles_per_bin: f64) {
    const BLOCK: usize = 64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let step = Complex64::from_polar(1.0, two_pi * cycles_per_bin);
    for (b, chunk) in out.chunks_mut(BLOCK).enumerate() {
        let k0 = (b * BLOCK) as f64;
        let mut w = gain * Complex64::from_polar(1.0, two_pi * (k0 * cycles_per_bin).fract());
        for v in chunk.iter_mut() {
            *v += w;
            w *= step;
        }
    }
}

fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Draw tap gains for `profile` scaled to `ds_desired_s`.
///
/// Rayleigh taps are zero-mean circular Gaussian with the tabulated power. The
/// Rician first tap splits its power into a fixed LoS phasor (phase 0) and a
/// diffuse Gaussian part according to the K-factor.
pub fn realize_channel(profile: &TdlProfile, ds_desired_s: f64, seed: u64) -> Result<ChannelRealization> {
    profile.validate()?;
    let delays = scale_delays(profile, ds_desired_s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, Stream::Channel as u64]));
    let mut gains = Vec::with_capacity(profile.taps.len());
    let mut los_component = None;
    for tap in &profile.taps {
        let p = tap.power_linear();
        match tap.fading {
            Fading::Rayleigh => gains.push(complex_gaussian(&mut rng, p)),
            Fading::Rician => {
                let k = 10f64.powf(profile.rician_k_db.unwrap_or(f64::INFINITY) / 10.0);
                let los = Complex64::new((p * k / (k + 1.0)).sqrt(), 0.0);
                let diffuse = complex_gaussian(&mut rng, p / (k + 1.0));
                los_component = Some(los);
                gains.push(los + diffuse);
            }
        }
    }
    Ok(ChannelRealization {
        tap_delays_s: delays,
        tap_gains: gains,
        delay_spread_s: ds_desired_s,
        los: profile.name.is_los(),
        los_component,
    })
}

/// CP-free complex baseband samples from one BS.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    pub bs_id: u32,
    pub samples: Vec<Complex64>,
    /// Per-sample variance of the added noise; 0 when noiseless.
    pub noise_var: f64,
}

impl ReceivedSignal {
    pub fn power(&self) -> f64 {
        dft::energy(&self.samples) / self.samples.len() as f64
    }

    /// Rescale so the noise has unit variance. Noiseless signals are left alone.
    pub fn whitened(mut self) -> Self {
        if self.noise_var > 0.0 {
            dft::scale(&mut self.samples, 1.0 / self.noise_var.sqrt());
            self.noise_var = 1.0;
        }
        self
    }
}

/// Pass one CP-prefixed symbol through `chan`.
///
/// Tap `l` is delayed by `geometric_delay_s + clock_bias_s + τ_l`. Every total
/// delay must lie in `[0, T_CP]` so the CP-stripped window sees a circular
/// shift of the symbol.
pub fn apply_channel(
    bs_id: u32,
    waveform: &[Complex64],
    chan: &ChannelRealization,
    cfg: &OfdmConfig,
    geometric_delay_s: f64,
    clock_bias_s: f64,
) -> Result<ReceivedSignal> {
    let fs = cfg.sample_rate_hz();
    let common = geometric_delay_s + clock_bias_s;
    let max_samples = cfg.cp_samples as f64;
    for &tau in &chan.tap_delays_s {
        let d = (common + tau) * fs;
        if !(-1e-9..=max_samples + 1e-9).contains(&d) {
            return Err(Error::ExcessDelay {
                delay_samples: d,
                min: 0.0,
                max: max_samples,
            });
        }
    }
    let mut buf = strip_cp(waveform, cfg)?;
    dft::forward(&mut buf);
    let h = chan.frequency_response(cfg, common);
    for (x, hk) in buf.iter_mut().zip(&h) {
        *x *= hk;
    }
    dft::inverse(&mut buf);
    dft::scale(&mut buf, 1.0 / cfg.n_subcarriers as f64);
    Ok(ReceivedSignal {
        bs_id,
        samples: buf,
        noise_var: 0.0,
    })
}

/// Add circular white Gaussian noise at `snr_db` relative to the measured
/// signal power. `+∞` returns the signal unchanged.
pub fn add_awgn(signal: &ReceivedSignal, snr_db: f64, seed: u64) -> Result<ReceivedSignal> {
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::Domain("SNR is NaN".into()));
    }
    let p = signal.power();
    if !(p > 0.0) {
        return Err(Error::Domain("cannot set SNR on a zero-power signal".into()));
    }
    let var = p / 10f64.powf(snr_db / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, Stream::Noise as u64]));
    let samples = signal
        .samples
        .iter()
        .map(|s| s + complex_gaussian(&mut rng, var))
        .collect();
    Ok(ReceivedSignal {
        bs_id: signal.bs_id,
        samples,
        noise_var: signal.noise_var + var,
    })
}

/// Tap delays with powers normalized so the strongest tap is 0 dB.
pub fn power_delay_profile(profile: &TdlProfile, ds_desired_s: f64) -> Result<Vec<(f64, f64)>> {
    let delays = scale_delays(profile, ds_desired_s)?;
    let peak = profile.taps.iter().map(|t| t.power_db).fold(f64::NEG_INFINITY, f64::max);
    Ok(delays
        .into_iter()
        .zip(&profile.taps)
        .map(|(d, t)| (d, t.power_db - peak))
        .collect())
}
