//! Shared FFT plans and unitary transforms.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

type PlanCache = Mutex<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)>;

fn cache() -> &'static PlanCache {
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())))
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    let key = (len, direction == FftDirection::Forward);
    let mut guard = cache().lock().expect("fft plan cache poisoned");
    let (planner, plans) = &mut *guard;
    plans
        .entry(key)
        .or_insert_with(|| planner.plan_fft(len, direction))
        .clone()
}

/// Forward transform, kernel `e^{-j2πkn/N}`, unscaled.
pub fn forward(buf: &mut [Complex64]) {
    plan(buf.len(), FftDirection::Forward).process(buf);
}

/// Inverse transform, kernel `e^{+j2πkn/N}`, unscaled.
pub fn inverse(buf: &mut [Complex64]) {
    plan(buf.len(), FftDirection::Inverse).process(buf);
}

pub fn forward_unitary(buf: &mut [Complex64]) {
    forward(buf);
    scale(buf, 1.0 / (buf.len() as f64).sqrt());
}

pub fn inverse_unitary(buf: &mut [Complex64]) {
    inverse(buf);
    scale(buf, 1.0 / (buf.len() as f64).sqrt());
}

pub fn scale(buf: &mut [Complex64], s: f64) {
    for v in buf.iter_mut() {
        *v *= s;
    }
}

pub fn energy(buf: &[Complex64]) -> f64 {
    buf.iter().map(|v| v.norm_sqr()).sum()
}
