//! Output files and their readers.
//!
//! Every float is rounded to nine significant digits before it is written.
//! Statistics in a summary are computed from the rounded records, so a
//! summary rebuilt from a parsed trial CSV matches the written one exactly.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{power_delay_profile, ChannelRealization, TdlProfile};
use crate::config::ScenarioConfig;
use crate::dpe::Correlogram;
use crate::error::{Error, Result};
use crate::montecarlo::{empirical_cdf, summarize, ErrorStats, ExperimentSummary, SweepPoint, TrialRecord};
use crate::scenario::PositionHypothesis;

pub const SIG_DIGITS: usize = 9;

/// Round to [`SIG_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().expect("formatted float parses")
}

/// Shortest text that parses back to `round_sig(x)`.
pub fn fmt_sig(x: f64) -> String {
    let r = round_sig(x);
    let a = r.abs();
    if r == 0.0 || !r.is_finite() || (1e-4..1e12).contains(&a) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

fn round_opt(x: Option<f64>) -> Option<f64> {
    x.map(round_sig)
}

pub fn round_record(r: &TrialRecord) -> TrialRecord {
    TrialRecord {
        ue_x: round_sig(r.ue_x),
        ue_y: round_sig(r.ue_y),
        clock_bias_ns: round_sig(r.clock_bias_ns),
        snr_min_db: round_sig(r.snr_min_db),
        snr_mean_db: round_sig(r.snr_mean_db),
        snr_max_db: round_sig(r.snr_max_db),
        dpe_x: round_opt(r.dpe_x),
        dpe_y: round_opt(r.dpe_y),
        dpe_bias_ns: round_opt(r.dpe_bias_ns),
        dpe_error_m: round_opt(r.dpe_error_m),
        otdoa_x: round_opt(r.otdoa_x),
        otdoa_y: round_opt(r.otdoa_y),
        otdoa_error_m: round_opt(r.otdoa_error_m),
        ..r.clone()
    }
}

fn round_stats(s: &ErrorStats) -> ErrorStats {
    ErrorStats {
        count: s.count,
        rmse_m: round_sig(s.rmse_m),
        mean_m: round_sig(s.mean_m),
        p50_m: round_sig(s.p50_m),
        p90_m: round_sig(s.p90_m),
        p95_m: round_sig(s.p95_m),
        p99_m: round_sig(s.p99_m),
        max_m: round_sig(s.max_m),
    }
}

pub fn round_summary(s: &ExperimentSummary) -> ExperimentSummary {
    ExperimentSummary {
        los_fraction: round_sig(s.los_fraction),
        dpe: s.dpe.as_ref().map(round_stats),
        otdoa: s.otdoa.as_ref().map(round_stats),
        improvement_ratio: round_opt(s.improvement_ratio),
        ..s.clone()
    }
}

/// Rounded records and the summary computed from them.
pub fn finalize(cfg: &ScenarioConfig, records: &[TrialRecord]) -> (Vec<TrialRecord>, ExperimentSummary) {
    let rounded: Vec<TrialRecord> = records.iter().map(round_record).collect();
    let summary = round_summary(&summarize(cfg, &rounded));
    (rounded, summary)
}

/// Summary statistics rebuilt from parsed records.
pub fn resummarize(cfg: &ScenarioConfig, records: &[TrialRecord]) -> ExperimentSummary {
    round_summary(&summarize(cfg, records))
}

pub fn write_trials<W: Write>(w: W, records: &[TrialRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(round_record(r))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trials<R: Read>(r: R) -> Result<Vec<TrialRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_summary<W: Write>(mut w: W, summary: &ExperimentSummary) -> Result<()> {
    let text = toml::to_string(&round_summary(summary)).map_err(|e| Error::Parse(e.to_string()))?;
    w.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_summary<R: Read>(mut r: R) -> Result<ExperimentSummary> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub error_m: f64,
    pub probability: f64,
}

/// Empirical CDF of `errors` as `(error_m, probability)` rows.
pub fn write_cdf<W: Write>(w: W, errors: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (e, p) in empirical_cdf(errors) {
        out.serialize(CdfRow {
            error_m: round_sig(e),
            probability: round_sig(p),
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cdf<R: Read>(r: R) -> Result<Vec<CdfRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// One row of a sweep curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub value: f64,
    pub n_trials: usize,
    pub n_failed: usize,
    pub los_fraction: f64,
    pub dpe_rmse_m: Option<f64>,
    pub dpe_p50_m: Option<f64>,
    pub dpe_p90_m: Option<f64>,
    pub dpe_p95_m: Option<f64>,
    pub dpe_p99_m: Option<f64>,
    pub otdoa_rmse_m: Option<f64>,
    pub otdoa_p90_m: Option<f64>,
}

impl CurveRow {
    pub fn new(value: f64, s: &ExperimentSummary) -> Self {
        let s = round_summary(s);
        CurveRow {
            value: round_sig(value),
            n_trials: s.n_trials,
            n_failed: s.n_failed,
            los_fraction: s.los_fraction,
            dpe_rmse_m: s.dpe.as_ref().map(|d| d.rmse_m),
            dpe_p50_m: s.dpe.as_ref().map(|d| d.p50_m),
            dpe_p90_m: s.dpe.as_ref().map(|d| d.p90_m),
            dpe_p95_m: s.dpe.as_ref().map(|d| d.p95_m),
            dpe_p99_m: s.dpe.as_ref().map(|d| d.p99_m),
            otdoa_rmse_m: s.otdoa.as_ref().map(|d| d.rmse_m),
            otdoa_p90_m: s.otdoa.as_ref().map(|d| d.p90_m),
        }
    }
}

pub fn write_curve<W: Write>(w: W, points: &[SweepPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(CurveRow::new(p.value, &p.summary))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_curve<R: Read>(r: R) -> Result<Vec<CurveRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Header block of a correlogram file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelogramMeta {
    pub stage: usize,
    pub truth_x: f64,
    pub truth_y: f64,
    pub truth_z: f64,
    pub truth_bias_ns: f64,
    pub truth_value: f64,
    pub argmax_x: f64,
    pub argmax_y: f64,
    pub argmax_z: f64,
    pub argmax_bias_ns: f64,
    pub argmax_value: f64,
    pub rows: usize,
}

impl CorrelogramMeta {
    pub fn new(stage: usize, truth: &PositionHypothesis, truth_value: f64, c: &Correlogram) -> Self {
        let (best, value) = c.best();
        CorrelogramMeta {
            stage,
            truth_x: round_sig(truth.x),
            truth_y: round_sig(truth.y),
            truth_z: round_sig(truth.z),
            truth_bias_ns: round_sig(truth.clock_bias_s * 1e9),
            truth_value: round_sig(truth_value),
            argmax_x: round_sig(best.x),
            argmax_y: round_sig(best.y),
            argmax_z: round_sig(best.z),
            argmax_bias_ns: round_sig(best.clock_bias_s * 1e9),
            argmax_value: round_sig(value),
            rows: c.values.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelogramRow {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub bias_ns: f64,
    pub value: f64,
}

/// Correlogram as `# key = value` header lines followed by CSV rows in grid order.
pub fn write_correlogram<W: Write>(mut w: W, meta: &CorrelogramMeta, c: &Correlogram) -> Result<()> {
    let header = toml::to_string(meta).map_err(|e| Error::Parse(e.to_string()))?;
    for line in header.lines() {
        writeln!(w, "# {line}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    for (i, &v) in c.values.iter().enumerate() {
        let p = c.grid.node(i);
        out.serialize(CorrelogramRow {
            x: round_sig(p.x),
            y: round_sig(p.y),
            z: round_sig(p.z),
            bias_ns: round_sig(p.clock_bias_s * 1e9),
            value: round_sig(v),
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_correlogram<R: Read>(r: R) -> Result<(CorrelogramMeta, Vec<CorrelogramRow>)> {
    let mut header = String::new();
    let mut body = String::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        match line.strip_prefix('#') {
            Some(h) => {
                header.push_str(h.trim_start());
                header.push('\n');
            }
            None => {
                body.push_str(&line);
                body.push('\n');
            }
        }
    }
    let meta: CorrelogramMeta = toml::from_str(&header).map_err(|e| Error::Parse(e.to_string()))?;
    let rows: Vec<CorrelogramRow> = csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    if rows.len() != meta.rows {
        return Err(Error::Parse(format!("header announces {} rows, found {}", meta.rows, rows.len())));
    }
    Ok((meta, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirRow {
    pub delay_ns: f64,
    pub magnitude: f64,
    pub phase_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdpRow {
    pub delay_ns: f64,
    pub power_db: f64,
}

/// Tap delays, magnitudes and phases of one channel draw.
pub fn write_cir<W: Write>(w: W, chan: &ChannelRealization) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (d, g) in chan.tap_delays_s.iter().zip(&chan.tap_gains) {
        out.serialize(CirRow {
            delay_ns: round_sig(d * 1e9),
            magnitude: round_sig(g.norm()),
            phase_deg: round_sig(g.arg().to_degrees()),
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cir<R: Read>(r: R) -> Result<Vec<CirRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Scaled power delay profile, strongest tap at 0 dB.
pub fn write_pdp<W: Write>(w: W, profile: &TdlProfile, ds_s: f64) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (d, p) in power_delay_profile(profile, ds_s)? {
        out.serialize(PdpRow {
            delay_ns: round_sig(d * 1e9),
            power_db: round_sig(p),
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_pdp<R: Read>(r: R) -> Result<Vec<PdpRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}
