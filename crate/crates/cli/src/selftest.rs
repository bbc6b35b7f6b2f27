//! Fast end-to-end invariant checks for CI.

use std::time::Instant;

use nrpos_core::channel::{rms_delay_spread, scale_delays, ProfileName, TdlProfile};
use nrpos_core::config::ScenarioConfig;
use nrpos_core::dpe::SearchSettings;
use nrpos_core::montecarlo::{dpe_errors, empirical_cdf, percentile, run_experiment, ErrorStats};
use nrpos_core::otdoa::{solve_tdoa, Tdoa};
use nrpos_core::report;
use nrpos_core::scenario::{BaseStation, PositionHypothesis};
use nrpos_core::waveform::{generate_prs, ofdm_demodulate, ofdm_modulate, partial_dft_basis, strip_cp, OfdmConfig};
use nrpos_core::SPEED_OF_LIGHT;
use num_complex::Complex64;

use crate::{CliError, GlobalOpts};

const SQUARE: &str = r#"
[[bs]]
id = 0
x = 0.0
y = 0.0
[[bs]]
id = 1
x = 200.0
y = 0.0
[[bs]]
id = 2
x = 200.0
y = 200.0
[[bs]]
id = 3
x = 0.0
y = 200.0

[numerology]
n = 1024
cp_samples = 256

[experiment]
n_bs = 4
n_trials = 4
snr_db = 10.0
run_otdoa = true

[dpe]
stages = 2
extent_m = 40.0
search_offset_m = 5.0
oversample = 8
"#;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, pass, detail }
}

type Outcome = Result<Check, String>;

fn ofdm_round_trip() -> Outcome {
    let cfg = OfdmConfig::default();
    let prs = generate_prs(7, &cfg, 11).map_err(|e| e.to_string())?;
    let tx = ofdm_modulate(&prs.pilots, &cfg).map_err(|e| e.to_string())?;
    let body = strip_cp(&tx, &cfg).map_err(|e| e.to_string())?;
    let back = ofdm_demodulate(&body, &cfg).map_err(|e| e.to_string())?;
    let err = back.iter().zip(&prs.pilots).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    Ok(check("ofdm_round_trip", err < 1e-12, format!("max error {err:.3e}")))
}

fn normalizer_identity() -> Outcome {
    let cfg = OfdmConfig::new(64, 30e3, 4, 3e9).map_err(|e| e.to_string())?;
    let prs = generate_prs(1, &cfg, 5).map_err(|e| e.to_string())?;
    let mut df = partial_dft_basis(&cfg, 16).map_err(|e| e.to_string())?;
    for k in 0..df.rows {
        for l in 0..df.cols {
            df.set(k, l, prs.pilots[k] * df.get(k, l));
        }
    }
    let g = df.adjoint_mul(&df).map_err(|e| e.to_string())?;
    let mut dev: f64 = 0.0;
    for i in 0..g.rows {
        for j in 0..g.cols {
            let want = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((g.get(i, j) - Complex64::new(want, 0.0)).norm());
        }
    }
    Ok(check("normalizer_identity", dev < 1e-10, format!("max deviation {dev:.3e}")))
}

fn delay_spread_scaling() -> Outcome {
    let mut worst: f64 = 0.0;
    for name in ProfileName::ALL {
        let p = TdlProfile::builtin(name);
        let d = scale_delays(&p, 65e-9).map_err(|e| e.to_string())?;
        let w: Vec<f64> = p.taps.iter().map(|t| t.power_linear()).collect();
        worst = worst.max((rms_delay_spread(&d, &w) / 65e-9 - 1.0).abs());
    }
    Ok(check("delay_spread_scaling", worst < 1e-3, format!("worst relative error {worst:.3e}")))
}

fn perfect_tdoa_fix() -> Outcome {
    let bss: Vec<BaseStation> = [(0.0, 0.0), (300.0, 20.0), (280.0, 310.0), (-10.0, 290.0), (150.0, -40.0)]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| BaseStation {
            id: i as u32,
            position: [x, y, 10.0],
        })
        .collect();
    let ue = PositionHypothesis::new(123.4, 87.6, 2.0, 0.0);
    let t = |b: &BaseStation| ue.range_to(b) / SPEED_OF_LIGHT;
    let tdoas: Vec<Tdoa> = bss[1..]
        .iter()
        .map(|b| Tdoa {
            bs_id: b.id,
            reference_id: 0,
            tdoa_s: t(b) - t(&bss[0]),
        })
        .collect();
    let fix = solve_tdoa(&bss, &tdoas, 2.0).map_err(|e| e.to_string())?;
    let err = (fix.x - ue.x).hypot(fix.y - ue.y);
    Ok(check("perfect_tdoa_fix", err < 1e-6, format!("error {err:.3e} m")))
}

fn square() -> Result<ScenarioConfig, String> {
    ScenarioConfig::parse(SQUARE, None).map_err(|e| e.to_string())
}

fn determinism(out: &mut Vec<Check>) -> Result<(), String> {
    let cfg = square()?;
    let a = run_experiment(&cfg, 1).map_err(|e| e.to_string())?;
    let b = run_experiment(&cfg, 2).map_err(|e| e.to_string())?;
    out.push(check("worker_count_independence", a == b, format!("{} trials", a.len())));

    let mut longer = cfg.clone();
    longer.experiment.n_trials += 1;
    let c = run_experiment(&longer, 1).map_err(|e| e.to_string())?;
    out.push(check("seed_isolation", c[..a.len()] == a[..], format!("{} vs {} trials", a.len(), c.len())));

    let (rounded, summary) = report::finalize(&cfg, &a);
    let mut trials = Vec::new();
    let mut sum = Vec::new();
    report::write_trials(&mut trials, &a).map_err(|e| e.to_string())?;
    report::write_summary(&mut sum, &summary).map_err(|e| e.to_string())?;
    let parsed = report::read_trials(trials.as_slice()).map_err(|e| e.to_string())?;
    let parsed_summary = report::read_summary(sum.as_slice()).map_err(|e| e.to_string())?;
    out.push(check(
        "report_round_trip",
        parsed == rounded && parsed_summary == summary && report::resummarize(&cfg, &parsed) == summary,
        format!("{} records", parsed.len()),
    ));

    let errs = dpe_errors(&a);
    let cdf = empirical_cdf(&errs);
    let mut sorted = errs.clone();
    sorted.sort_by(f64::total_cmp);
    let pct: Vec<f64> = (0..=20).map(|i| percentile(&sorted, i as f64 * 5.0)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let valid = cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1)
        && cdf.last().map(|l| l.1) == Some(1.0)
        && pct.windows(2).all(|w| w[0] <= w[1]);
    out.push(check("cdf_and_percentiles_monotone", valid, format!("{} points", cdf.len())));
    Ok(())
}

fn noiseless_los() -> Outcome {
    // full numerology and default search: coarser settings let the window
    // slack aliases win over a quantized truth
    let mut cfg = square()?;
    cfg.numerology = Default::default();
    cfg.dpe = Default::default();
    cfg.experiment.snr_db = f64::INFINITY;
    cfg.experiment.force_los_pattern = Some(vec![true; 4]);
    cfg.experiment.n_trials = 2;
    cfg.experiment.run_otdoa = false;
    let recs = run_experiment(&cfg, 0).map_err(|e| e.to_string())?;
    let stats = ErrorStats::from_errors(&dpe_errors(&recs)).map_err(|e| e.to_string())?;
    let bound = SearchSettings::from_config(&cfg.dpe).map_err(|e| e.to_string())?.final_resolution_m() * 2f64.sqrt();
    Ok(check(
        "noiseless_los_quantization",
        stats.rmse_m <= bound,
        format!("rmse {:.4} m, bound {bound:.4} m", stats.rmse_m),
    ))
}

pub fn run(_g: &GlobalOpts) -> Result<(), CliError> {
    let start = Instant::now();
    let mut checks = Vec::new();
    for f in [ofdm_round_trip, normalizer_identity, delay_spread_scaling, perfect_tdoa_fix, noiseless_los] {
        checks.push(f().map_err(CliError::Runtime)?);
    }
    determinism(&mut checks).map_err(CliError::Runtime)?;
    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.pass);
    }
    println!("{} checks in {:.1} s", checks.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        return Err(CliError::Selftest(failed));
    }
    Ok(())
}
