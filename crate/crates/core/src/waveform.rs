//! PRS pilot generation and CP-OFDM modulation.
//!
//! Conventions: the time-domain symbol is the unitary inverse DFT of the
//! subcarrier values, `x[n] = N^{-1/2} Σ_k d_k e^{+j2πkn/N}`, and demodulation
//! is the unitary forward DFT. A circular delay of `τ` samples therefore shows
//! up on subcarrier `k` as the phase ramp `e^{-j2πkτ/N}`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dft;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// OFDM numerology of the positioning symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub n_subcarriers: usize,
    pub scs_hz: f64,
    pub cp_samples: usize,
    pub center_freq_hz: f64,
}

impl Default for OfdmConfig {
    /// 4096 subcarriers at 30 kHz (122.88 MHz sampling), normal CP, 3 GHz carrier.
    fn default() -> Self {
        OfdmConfig {
            n_subcarriers: 4096,
            scs_hz: 30e3,
            cp_samples: 288,
            center_freq_hz: 3e9,
        }
    }
}

impl OfdmConfig {
    pub fn new(n_subcarriers: usize, scs_hz: f64, cp_samples: usize, center_freq_hz: f64) -> Result<Self> {
        let cfg = OfdmConfig {
            n_subcarriers,
            scs_hz,
            cp_samples,
            center_freq_hz,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_subcarriers;
        if n < 64 || !n.is_power_of_two() {
            return Err(Error::config(
                "numerology.n",
                format!("subcarrier count must be a power of two >= 64, got {n}"),
            ));
        }
        if !(self.scs_hz.is_finite() && self.scs_hz > 0.0) {
            return Err(Error::config("numerology.scs_khz", "subcarrier spacing must be positive"));
        }
        if self.cp_samples >= n {
            return Err(Error::config(
                "numerology.cp_samples",
                format!("cyclic prefix ({}) must be shorter than the symbol ({n})", self.cp_samples),
            ));
        }
        if !(self.center_freq_hz.is_finite() && self.center_freq_hz > 0.0) {
            return Err(Error::config("numerology.center_freq_ghz", "carrier must be positive"));
        }
        Ok(())
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.n_subcarriers as f64 * self.scs_hz
    }

    pub fn sample_period_s(&self) -> f64 {
        1.0 / self.sample_rate_hz()
    }

    /// Distance light travels in one sample.
    pub fn range_bin_m(&self) -> f64 {
        crate::SPEED_OF_LIGHT / self.sample_rate_hz()
    }
}

/// One BS's pilot symbol and its useful-part time-domain samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PrsWaveform {
    pub bs_id: u32,
    pub pilots: Vec<Complex64>,
    pub time_domain: Vec<Complex64>,
}

/// Full-band QPSK pilots, drawn from the `(seed, Pilots, bs_id)` stream.
pub fn generate_prs(bs_id: u32, cfg: &OfdmConfig, seed: u64) -> Result<PrsWaveform> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, Stream::Pilots, bs_id as u64);
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let pilots: Vec<Complex64> = (0..cfg.n_subcarriers)
        .map(|_| {
            let bits: u8 = rng.random();
            let re = if bits & 1 == 0 { a } else { -a };
            let im = if bits & 2 == 0 { a } else { -a };
            Complex64::new(re, im)
        })
        .collect();
    let mut time_domain = pilots.clone();
    dft::inverse_unitary(&mut time_domain);
    Ok(PrsWaveform {
        bs_id,
        pilots,
        time_domain,
    })
}

/// IDFT of `pilots` with the last `cp_samples` copied to the front.
pub fn ofdm_modulate(pilots: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    let n = cfg.n_subcarriers;
    if pilots.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: pilots.len(),
        });
    }
    let mut useful = pilots.to_vec();
    dft::inverse_unitary(&mut useful);
    let mut out = Vec::with_capacity(n + cfg.cp_samples);
    out.extend_from_slice(&useful[n - cfg.cp_samples..]);
    out.extend_from_slice(&useful);
    Ok(out)
}

/// Strip the cyclic prefix from one modulated symbol.
pub fn strip_cp(samples: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    let total = cfg.n_subcarriers + cfg.cp_samples;
    if samples.len() != total {
        return Err(Error::Dimension {
            expected: total,
            got: samples.len(),
        });
    }
    Ok(samples[cfg.cp_samples..].to_vec())
}

/// Unitary forward DFT of a CP-free symbol.
pub fn ofdm_demodulate(samples: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    let n = cfg.n_subcarriers;
    if samples.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: samples.len(),
        });
    }
    let mut out = samples.to_vec();
    dft::forward_unitary(&mut out);
    Ok(out)
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    /// `selfᴴ · other`.
    pub fn adjoint_mul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension {
                expected: self.rows,
                got: other.rows,
            });
        }
        let mut out = ComplexMatrix::zeros(self.cols, other.cols);
        for i in 0..self.cols {
            for j in 0..other.cols {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..self.rows {
                    acc += self.get(k, i).conj() * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }
}

/// First `n_taps` columns of the unitary DFT matrix, `[F_L]_{k,l} = N^{-1/2} e^{-j2πkl/N}`.
///
/// Column `l` is the subcarrier response of a unit tap at delay `l` samples.
pub fn partial_dft_basis(cfg: &OfdmConfig, n_taps: usize) -> Result<ComplexMatrix> {
    let n = cfg.n_subcarriers;
    if n_taps == 0 || n_taps > n {
        return Err(Error::Dimension {
            expected: n,
            got: n_taps,
        });
    }
    let norm = 1.0 / (n as f64).sqrt();
    let mut m = ComplexMatrix::zeros(n, n_taps);
    for k in 0..n {
        for l in 0..n_taps {
            let idx = (k * l) % n;
            let phase = -2.0 * std::f64::consts::PI * idx as f64 / n as f64;
            m.set(k, l, Complex64::from_polar(norm, phase));
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(n: usize) -> OfdmConfig {
        OfdmConfig::new(n, 30e3, n / 16, 3e9).unwrap()
    }

    #[test]
    fn rejects_bad_numerology() {
        assert!(OfdmConfig::new(1000, 30e3, 10, 3e9).is_err());
        assert!(OfdmConfig::new(32, 30e3, 4, 3e9).is_err());
        assert!(OfdmConfig::new(64, 30e3, 64, 3e9).is_err());
        let bad = OfdmConfig {
            n_subcarriers: 100,
            ..OfdmConfig::default()
        };
        assert!(matches!(generate_prs(0, &bad, 1), Err(Error::Config { .. })));
    }

    #[test]
    fn default_numerology_matches_nr_100mhz() {
        let cfg = OfdmConfig::default();
        assert_eq!(cfg.sample_rate_hz(), 122.88e6);
        assert!((cfg.range_bin_m() - 2.44).abs() < 0.005);
    }

    #[test]
    fn pilots_are_unit_modulus_and_deterministic() {
        let cfg = OfdmConfig::default();
        let a = generate_prs(3, &cfg, 42).unwrap();
        let b = generate_prs(3, &cfg, 42).unwrap();
        let c = generate_prs(4, &cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pilots, c.pilots);
        for d in &a.pilots {
            assert!((d.norm() - 1.0).abs() < 1e-15);
        }
        let back = ofdm_demodulate(&a.time_domain, &cfg).unwrap();
        for (x, y) in back.iter().zip(&a.pilots) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn all_ones_is_an_impulse() {
        let cfg = small_cfg(256);
        let tx = ofdm_modulate(&vec![Complex64::new(1.0, 0.0); 256], &cfg).unwrap();
        let useful = strip_cp(&tx, &cfg).unwrap();
        assert!((useful[0] - Complex64::new(16.0, 0.0)).norm() < 1e-12);
        for v in &useful[1..] {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn cp_is_copy_of_tail() {
        let cfg = small_cfg(128);
        let prs = generate_prs(0, &cfg, 7).unwrap();
        let tx = ofdm_modulate(&prs.pilots, &cfg).unwrap();
        assert_eq!(tx.len(), 128 + cfg.cp_samples);
        assert_eq!(&tx[..cfg.cp_samples], &tx[128..]);
    }

    #[test]
    fn round_trip_and_parseval() {
        let cfg = OfdmConfig::default();
        let prs = generate_prs(9, &cfg, 1).unwrap();
        let tx = ofdm_modulate(&prs.pilots, &cfg).unwrap();
        let useful = strip_cp(&tx, &cfg).unwrap();
        let rx = ofdm_demodulate(&useful, &cfg).unwrap();
        let max_err = rx
            .iter()
            .zip(&prs.pilots)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-12, "{max_err}");
        let e_time = dft::energy(&useful);
        let e_freq = dft::energy(&prs.pilots);
        assert!((e_time - e_freq).abs() / e_freq < 1e-10);
    }

    #[test]
    fn zero_in_zero_out() {
        let cfg = small_cfg(64);
        let z = vec![Complex64::new(0.0, 0.0); 64];
        assert!(ofdm_demodulate(&z, &cfg).unwrap().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn length_mismatch() {
        let cfg = small_cfg(64);
        let short = vec![Complex64::new(0.0, 0.0); 63];
        assert!(matches!(ofdm_modulate(&short, &cfg), Err(Error::Dimension { .. })));
        assert!(matches!(ofdm_demodulate(&short, &cfg), Err(Error::Dimension { .. })));
        assert!(matches!(partial_dft_basis(&cfg, 0), Err(Error::Dimension { .. })));
        assert!(matches!(partial_dft_basis(&cfg, 65), Err(Error::Dimension { .. })));
    }

    /// Circular delay vs. a directly evaluated DFT of the shifted sequence.
    #[test]
    fn circular_delay_is_a_phase_ramp() {
        let cfg = small_cfg(256);
        let n = 256;
        let prs = generate_prs(1, &cfg, 5).unwrap();
        for tau in [1usize, 7, 100] {
            let shifted: Vec<Complex64> = (0..n).map(|i| prs.time_domain[(i + n - tau) % n]).collect();
            let got = ofdm_demodulate(&shifted, &cfg).unwrap();
            for k in 0..n {
                // direct DFT, no FFT involved
                let mut direct = Complex64::new(0.0, 0.0);
                for (m, s) in shifted.iter().enumerate() {
                    let ph = -2.0 * std::f64::consts::PI * ((k * m) % n) as f64 / n as f64;
                    direct += s * Complex64::from_polar(1.0, ph);
                }
                direct /= (n as f64).sqrt();
                assert!((got[k] - direct).norm() < 1e-10);
                let ramp = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * ((k * tau) % n) as f64 / n as f64);
                assert!((got[k] - prs.pilots[k] * ramp).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn partial_basis_is_orthonormal() {
        let cfg = OfdmConfig::default();
        let fl = partial_dft_basis(&cfg, 24).unwrap();
        let g = fl.adjoint_mul(&fl).unwrap();
        let mut dev: f64 = 0.0;
        for i in 0..24 {
            for j in 0..24 {
                let want = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((g.get(i, j) - Complex64::new(want, 0.0)).norm());
            }
        }
        assert!(dev < 1e-12, "{dev}");

        let one = partial_dft_basis(&cfg, 1).unwrap();
        let m = 1.0 / 64.0;
        assert!(one.data.iter().all(|v| (v.norm() - m).abs() < 1e-15));
    }

    #[test]
    fn full_basis_is_the_dft_matrix() {
        let cfg = small_cfg(64);
        let f = partial_dft_basis(&cfg, 64).unwrap();
        let prs = generate_prs(2, &cfg, 3).unwrap();
        // F applied to time samples gives the pilots
        for k in 0..64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for n in 0..64 {
                acc += f.get(k, n) * prs.time_domain[n];
            }
            assert!((acc - prs.pilots[k]).norm() < 1e-12);
        }
    }
}
