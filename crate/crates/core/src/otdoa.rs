//! Two-step OTDoA baseline: per-BS ToA by matched filtering, then a
//! hyperbolic least-squares fix.

use num_complex::Complex64;

use crate::channel::ReceivedSignal;
use crate::config::ToaModeKind;
use crate::dft;
use crate::dpe::despread;
use crate::error::{Error, Result};
use crate::scenario::BaseStation;
use crate::waveform::{ofdm_demodulate, OfdmConfig};
use crate::SPEED_OF_LIGHT;

const MAX_ITERATIONS: usize = 50;
const STEP_TOLERANCE_M: f64 = 1e-4;
/// Smallest-to-largest eigenvalue ratio of the BS layout below which it is
/// treated as collinear.
const COLLINEAR_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToaMode {
    /// Strongest correlation peak with parabolic refinement.
    GlobalMax,
    /// First sample reaching `fraction` of the strongest peak.
    LeadingEdge { fraction: f64 },
}

impl ToaMode {
    pub fn from_config(kind: ToaModeKind, fraction: f64) -> Result<Self> {
        match kind {
            ToaModeKind::GlobalMax => Ok(ToaMode::GlobalMax),
            ToaModeKind::LeadingEdge => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(Error::config("otdoa.leading_edge_fraction", "must lie in (0, 1]"));
                }
                Ok(ToaMode::LeadingEdge { fraction })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToaMeasurement {
    pub bs_id: u32,
    /// Refined delay in samples, negative lags unwrapped.
    pub toa_samples: f64,
    pub toa_s: f64,
    /// Integer lag of the strongest correlation sample.
    pub peak_lag_samples: i64,
    /// `|g|²` at the strongest sample.
    pub peak_metric: f64,
}

fn signed_lag(i: usize, n: usize) -> i64 {
    if i >= n / 2 {
        i as i64 - n as i64
    } else {
        i as i64
    }
}

/// Correlation magnitude `|IDFT(conj(d) ⊙ Y)|` on the sample grid.
pub fn correlation_magnitude(y_freq: &[Complex64], pilots: &[Complex64]) -> Result<Vec<f64>> {
    let mut g = despread(y_freq, pilots)?;
    dft::inverse_unitary(&mut g);
    Ok(g.iter().map(|v| v.norm()).collect())
}

/// Time of arrival of `signal` relative to the receiver clock.
pub fn estimate_toa(
    signal: &ReceivedSignal,
    pilots: &[Complex64],
    cfg: &OfdmConfig,
    mode: ToaMode,
) -> Result<ToaMeasurement> {
    let y = ofdm_demodulate(&signal.samples, cfg)?;
    let mag = correlation_magnitude(&y, pilots)?;
    let n = mag.len();
    let (peak, &peak_mag) = mag
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |b, x| if *x.1 > *b.1 { x } else { b });
    if !(peak_mag > 0.0 && peak_mag.is_finite()) {
        return Err(Error::NoPeak);
    }
    let at = |i: isize| mag[i.rem_euclid(n as isize) as usize];
    let p = peak as isize;
    let refined = match mode {
        ToaMode::GlobalMax => {
            let (a, b, c) = (at(p - 1), at(p), at(p + 1));
            let denom = a - 2.0 * b + c;
            let delta = if denom.abs() > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            signed_lag(peak, n) as f64 + delta.clamp(-0.5, 0.5)
        }
        ToaMode::LeadingEdge { fraction } => {
            // walk back from the peak over at most one CP worth of samples
            let thr = fraction * peak_mag;
            let mut first = p;
            for back in 1..=cfg.cp_samples as isize {
                if at(p - back) >= thr {
                    first = p - back;
                }
            }
            let (lo, hi) = (at(first - 1), at(first));
            let frac = if hi > lo { ((thr - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 1.0 };
            let first_lag = signed_lag(first.rem_euclid(n as isize) as usize, n) as f64;
            first_lag - 1.0 + frac
        }
    };
    Ok(ToaMeasurement {
        bs_id: signal.bs_id,
        toa_samples: refined,
        toa_s: refined * cfg.sample_period_s(),
        peak_lag_samples: signed_lag(peak, n),
        peak_metric: peak_mag * peak_mag,
    })
}

/// BS with the strongest correlation peak (ties to the lowest id).
pub fn select_reference(toas: &[ToaMeasurement]) -> Result<u32> {
    toas.iter()
        .max_by(|a, b| a.peak_metric.total_cmp(&b.peak_metric).then(b.bs_id.cmp(&a.bs_id)))
        .map(|t| t.bs_id)
        .ok_or(Error::EmptyStatistics)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tdoa {
    pub bs_id: u32,
    pub reference_id: u32,
    /// `t_bs − t_ref` in seconds.
    pub tdoa_s: f64,
}

/// Arrival-time differences of every non-reference BS against `reference_id`.
pub fn form_tdoa(toas: &[ToaMeasurement], reference_id: u32) -> Result<Vec<Tdoa>> {
    let r = toas
        .iter()
        .find(|t| t.bs_id == reference_id)
        .ok_or_else(|| Error::Domain(format!("reference BS {reference_id} has no measurement")))?;
    Ok(toas
        .iter()
        .filter(|t| t.bs_id != reference_id)
        .map(|t| Tdoa {
            bs_id: t.bs_id,
            reference_id,
            tdoa_s: t.toa_s - r.toa_s,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtdoaFix {
    pub x: f64,
    pub y: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check_layout(bss: &[&BaseStation]) -> Result<()> {
    if bss.len() < 3 {
        return Err(Error::DegenerateGeometry(format!("{} BSs cannot fix a 2D position", bss.len())));
    }
    let m = bss.len() as f64;
    let cx = bss.iter().map(|b| b.position[0]).sum::<f64>() / m;
    let cy = bss.iter().map(|b| b.position[1]).sum::<f64>() / m;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for b in bss {
        let (dx, dy) = (b.position[0] - cx, b.position[1] - cy);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let tr = sxx + syy;
    let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    let (hi, lo) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
    if !(hi > 0.0) || lo / hi < COLLINEAR_RATIO {
        return Err(Error::DegenerateGeometry("base stations are collinear".into()));
    }
    Ok(())
}

/// Gauss-Newton fix of `(x, y)` from TDoAs at known UE height.
///
/// Residuals are weighted by `W = I − 11ᵀ/M`, the inverse covariance (up to
/// scale) of differences of i.i.d. arrival times, so the fix does not depend
/// on which BS is the reference. Starts at the BS centroid.
pub fn solve_tdoa(bss: &[BaseStation], tdoas: &[Tdoa], ue_height_m: f64) -> Result<OtdoaFix> {
    let first = tdoas.first().ok_or(Error::EmptyStatistics)?;
    let ref_id = first.reference_id;
    let find = |id: u32| {
        bss.iter()
            .find(|b| b.id == id)
            .ok_or_else(|| Error::Domain(format!("no BS with id {id}")))
    };
    let reference = find(ref_id)?;
    let mut others = Vec::with_capacity(tdoas.len());
    for t in tdoas {
        if t.reference_id != ref_id {
            return Err(Error::Domain("TDoAs use more than one reference".into()));
        }
        others.push((find(t.bs_id)?, t.tdoa_s * SPEED_OF_LIGHT));
    }
    let mut all: Vec<&BaseStation> = others.iter().map(|o| o.0).collect();
    all.push(reference);
    check_layout(&all)?;

    let k = others.len();
    let m = (k + 1) as f64;
    let range = |bs: &BaseStation, x: f64, y: f64| {
        let [bx, by, bz] = bs.position;
        let (dx, dy, dz) = (x - bx, y - by, ue_height_m - bz);
        let r = (dx * dx + dy * dy + dz * dz).sqrt();
        (r, dx / r, dy / r)
    };
    let mut x = all.iter().map(|b| b.position[0]).sum::<f64>() / m;
    let mut y = all.iter().map(|b| b.position[1]).sum::<f64>() / m;
    let mut e = vec![0.0; k];
    let mut j = vec![[0.0; 2]; k];
    for it in 1..=MAX_ITERATIONS {
        let (r0, ux0, uy0) = range(reference, x, y);
        for (i, (bs, meas)) in others.iter().enumerate() {
            let (r, ux, uy) = range(bs, x, y);
            e[i] = meas - (r - r0);
            j[i] = [ux - ux0, uy - uy0];
        }
        // W = I − 11ᵀ/M applied through the column sums
        let sum_e: f64 = e.iter().sum();
        let sum_j = [j.iter().map(|r| r[0]).sum::<f64>(), j.iter().map(|r| r[1]).sum::<f64>()];
        let mut a = [[0.0; 2]; 2];
        let mut g = [0.0; 2];
        for p in 0..2 {
            for q in 0..2 {
                a[p][q] = j.iter().map(|r| r[p] * r[q]).sum::<f64>() - sum_j[p] * sum_j[q] / m;
            }
            g[p] = j.iter().zip(&e).map(|(r, ei)| r[p] * ei).sum::<f64>() - sum_j[p] * sum_e / m;
        }
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let scale = a[0][0].abs() + a[1][1].abs();
        if !(det.abs() > 1e-12 * scale * scale) {
            return Err(Error::DegenerateGeometry("singular normal matrix".into()));
        }
        let dx = (a[1][1] * g[0] - a[0][1] * g[1]) / det;
        let dy = (a[0][0] * g[1] - a[1][0] * g[0]) / det;
        x += dx;
        y += dy;
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::DegenerateGeometry("iteration diverged".into()));
        }
        if dx.hypot(dy) < STEP_TOLERANCE_M {
            return Ok(OtdoaFix { x, y, iterations: it, converged: true });
        }
    }
    Ok(OtdoaFix {
        x,
        y,
        iterations: MAX_ITERATIONS,
        converged: false,
    })
}

/// ToA per link, strongest-peak reference, TDoA fix.
pub fn locate(
    bss: &[BaseStation],
    signals: &[(&ReceivedSignal, &[Complex64])],
    cfg: &OfdmConfig,
    mode: ToaMode,
    ue_height_m: f64,
) -> Result<(OtdoaFix, Vec<ToaMeasurement>)> {
    let toas = signals
        .iter()
        .map(|(s, p)| estimate_toa(s, p, cfg, mode))
        .collect::<Result<Vec<_>>>()?;
    let r = select_reference(&toas)?;
    let fix = solve_tdoa(bss, &form_tdoa(&toas, r)?, ue_height_m)?;
    Ok((fix, toas))
}
