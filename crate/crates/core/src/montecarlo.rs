//! Trial loop, sweeps and error statistics.

use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{add_awgn, apply_channel, realize_channel, ChannelRealization, ProfileName, ReceivedSignal, TdlProfile};
use crate::config::{ScenarioConfig, SweepAxis};
use crate::dpe::{estimate_position, taps_for_excess_delay, DpeEstimate, DpeLink, SearchSettings};
use crate::error::{Error, Result};
use crate::otdoa::{locate, OtdoaFix, ToaMeasurement, ToaMode};
use crate::rng::{mix, stream_rng, trial_seed, Stream};
use crate::scenario::{
    draw_clock_bias, draw_link_conditions, nearest, BaseStation, Deployment, DropRegion, LinkBudget, LinkCondition,
    LinkPolicy, PositionHypothesis,
};
use crate::waveform::{generate_prs, ofdm_modulate, OfdmConfig};

/// Everything a trial needs, resolved from a configuration once.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub deployment: Deployment,
    pub ofdm: OfdmConfig,
    pub los_profile: TdlProfile,
    pub nlos_profile: TdlProfile,
    /// Hand-specified channel used on every link instead of TDL draws.
    pub fixed_channel: Option<ChannelRealization>,
    pub search: SearchSettings,
    pub toa_mode: ToaMode,
    policy: LinkPolicy,
    region: DropRegion,
}

/// Synthesized observations of one trial.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub trial_id: u64,
    pub seed: u64,
    pub truth: PositionHypothesis,
    pub base_stations: Vec<BaseStation>,
    pub links: Vec<LinkCondition>,
    pub pilots: Vec<Vec<Complex64>>,
    /// Whitened received symbols, CP removed.
    pub signals: Vec<ReceivedSignal>,
    pub channels: Vec<ChannelRealization>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub seed: u64,
    pub ue_x: f64,
    pub ue_y: f64,
    pub clock_bias_ns: f64,
    pub n_bs: usize,
    pub n_los: usize,
    pub snr_min_db: f64,
    pub snr_mean_db: f64,
    pub snr_max_db: f64,
    pub dpe_x: Option<f64>,
    pub dpe_y: Option<f64>,
    pub dpe_bias_ns: Option<f64>,
    pub dpe_error_m: Option<f64>,
    pub dpe_bias_at_edge: bool,
    pub otdoa_x: Option<f64>,
    pub otdoa_y: Option<f64>,
    pub otdoa_error_m: Option<f64>,
    /// Matched-filter ToA per BS as `id:ns` pairs joined by `;`.
    pub toa_ns: String,
    /// Reason the trial could not be completed.
    pub failure: Option<String>,
}

impl TrialRecord {
    fn new(trial_id: u64, seed: u64) -> Self {
        TrialRecord {
            trial_id,
            seed,
            ue_x: f64::NAN,
            ue_y: f64::NAN,
            clock_bias_ns: f64::NAN,
            n_bs: 0,
            n_los: 0,
            snr_min_db: f64::NAN,
            snr_mean_db: f64::NAN,
            snr_max_db: f64::NAN,
            dpe_x: None,
            dpe_y: None,
            dpe_bias_ns: None,
            dpe_error_m: None,
            dpe_bias_at_edge: false,
            otdoa_x: None,
            otdoa_y: None,
            otdoa_error_m: None,
            toa_ns: String::new(),
            failure: None,
        }
    }
}

fn profile(name: &str, path: &str) -> Result<TdlProfile> {
    let p = ProfileName::from_str(name).map_err(|e| Error::config(path, e.to_string()))?;
    Ok(TdlProfile::builtin(p))
}

impl Experiment {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let deployment = Deployment::from_config(cfg.clone())?;
        let num = &cfg.numerology;
        let ofdm = OfdmConfig::new(num.n, num.scs_khz * 1e3, num.cp_samples, num.center_freq_ghz * 1e9)?;
        let exp = &cfg.experiment;
        if exp.n_bs == 0 || exp.n_bs > deployment.base_stations.len() {
            return Err(Error::config(
                "experiment.n_bs",
                format!("need 1..={} base stations, got {}", deployment.base_stations.len(), exp.n_bs),
            ));
        }
        if let Some(p) = &exp.force_los_pattern {
            if p.len() != exp.n_bs {
                return Err(Error::config(
                    "experiment.force_los_pattern",
                    format!("{} entries for {} base stations", p.len(), exp.n_bs),
                ));
            }
        }
        if !(exp.clock_bias_sigma_ns >= 0.0) {
            return Err(Error::config("experiment.clock_bias_sigma_ns", "must be non-negative"));
        }
        if !(cfg.channel.ds_ns > 0.0) {
            return Err(Error::config("channel.ds_ns", "delay spread must be positive"));
        }
        if !(cfg.ue.height_m > 0.0) {
            return Err(Error::config("ue.height_m", "must be positive"));
        }
        let fixed_channel = match &cfg.channel.taps {
            None => None,
            Some(taps) => {
                let fs = ofdm.sample_rate_hz();
                for (i, t) in taps.iter().enumerate() {
                    if !(t.delay_samples >= 0.0 && t.delay_samples.is_finite()) {
                        return Err(Error::config(format!("channel.taps[{i}].delay_samples"), "must be non-negative"));
                    }
                }
                Some(ChannelRealization::fixed(
                    taps.iter().map(|t| t.delay_samples / fs).collect(),
                    taps.iter()
                        .map(|t| Complex64::from_polar(t.amplitude, t.phase_deg.to_radians()))
                        .collect(),
                    true,
                )?)
            }
        };
        let bs_height = deployment.base_stations.iter().map(|b| b.position[2]).sum::<f64>()
            / deployment.base_stations.len() as f64;
        let policy = LinkPolicy {
            snr_mode: exp.snr_mode,
            common_snr_db: exp.snr_db,
            budget: LinkBudget::from_config(&cfg.link_budget, ofdm.center_freq_hz, bs_height, cfg.ue.height_m),
            force_los_pattern: exp.force_los_pattern.clone(),
        };
        let region = match cfg.ue.truth {
            Some([x, y]) => DropRegion { min: [x, y], max: [x, y] },
            None => DropRegion::inset(&deployment.base_stations, cfg.ue.margin_m)?,
        };
        Ok(Experiment {
            ofdm,
            los_profile: profile(&cfg.channel.los_profile, "channel.los_profile")?,
            nlos_profile: profile(&cfg.channel.nlos_profile, "channel.nlos_profile")?,
            fixed_channel,
            search: SearchSettings::from_config(&cfg.dpe)?,
            toa_mode: ToaMode::from_config(cfg.otdoa.toa_mode, cfg.otdoa.leading_edge_fraction)?,
            policy,
            region,
            deployment,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.deployment.config
    }

    /// Window length used for a link in the given state.
    pub fn n_taps(&self, los: bool) -> usize {
        let dpe = &self.config().dpe;
        if let Some(n) = dpe.n_taps {
            return n;
        }
        let excess = match &self.fixed_channel {
            Some(c) => c.max_excess_delay_s(),
            None => {
                let p = if los { &self.los_profile } else { &self.nlos_profile };
                let ds = self.config().channel.ds_ns * 1e-9;
                let excess = p.max_normalized_delay() / p.normalized_rms_delay() * ds;
                if self.config().channel.sample_spaced {
                    let fs = self.ofdm.sample_rate_hz();
                    (excess * fs).round() / fs
                } else {
                    excess
                }
            }
        };
        taps_for_excess_delay(excess, self.ofdm.sample_rate_hz(), dpe.tap_margin)
    }

    /// Draw geometry, channels and noise for `trial_id`.
    pub fn setup(&self, trial_id: u64) -> Result<TrialSetup> {
        let cfg = self.config();
        let exp = &cfg.experiment;
        let seed = trial_seed(exp.base_seed, trial_id);
        let [x, y] = self.region.sample(seed);
        let bias = draw_clock_bias(
            exp.clock_bias_sigma_ns * 1e-9,
            exp.clock_bias_truncation_sigmas,
            seed,
        );
        let truth = PositionHypothesis::new(x, y, cfg.ue.height_m, bias);
        let bss = nearest(&self.deployment.base_stations, &truth, exp.n_bs)?;
        let links = draw_link_conditions(&bss, &truth, seed, &self.policy)?;
        let mut pilots = Vec::with_capacity(bss.len());
        let mut signals = Vec::with_capacity(bss.len());
        let mut channels = Vec::with_capacity(bss.len());
        for (bs, link) in bss.iter().zip(&links) {
            let link_seed = mix(&[seed, bs.id as u64]);
            let prs = generate_prs(bs.id, &self.ofdm, seed)?;
            let chan = match &self.fixed_channel {
                Some(c) => c.clone(),
                None => {
                    let p = if link.los { &self.los_profile } else { &self.nlos_profile };
                    let c = realize_channel(p, cfg.channel.ds_ns * 1e-9, link_seed)?;
                    if cfg.channel.sample_spaced {
                        c.snapped(self.ofdm.sample_rate_hz())
                    } else {
                        c
                    }
                }
            };
            let tx = ofdm_modulate(&prs.pilots, &self.ofdm)?;
            let rx = apply_channel(bs.id, &tx, &chan, &self.ofdm, link.geometric_delay_s, bias)?;
            let rx = add_awgn(&rx, link.snr_db, link_seed)?.whitened();
            pilots.push(prs.pilots);
            signals.push(rx);
            channels.push(chan);
        }
        Ok(TrialSetup {
            trial_id,
            seed,
            truth,
            base_stations: bss,
            links,
            pilots,
            signals,
            channels,
        })
    }

    pub fn dpe_links(&self, setup: &TrialSetup) -> Result<Vec<DpeLink>> {
        let oversample = self.config().dpe.oversample;
        setup
            .base_stations
            .iter()
            .zip(&setup.links)
            .zip(setup.pilots.iter().zip(&setup.signals))
            .map(|((bs, link), (p, s))| DpeLink::new(*bs, p, s, &self.ofdm, self.n_taps(link.los), oversample))
            .collect()
    }

    /// Center of the first search grid: truth plus a uniform offset per axis.
    pub fn search_center(&self, setup: &TrialSetup) -> PositionHypothesis {
        let off = self.config().dpe.search_offset_m;
        let mut rng = stream_rng(setup.seed, Stream::Search, 0);
        let mut draw = || if off > 0.0 { rng.random_range(-off..=off) } else { 0.0 };
        let (dx, dy) = (draw(), draw());
        PositionHypothesis::new(setup.truth.x + dx, setup.truth.y + dy, setup.truth.z, 0.0)
    }

    pub fn run_dpe(&self, setup: &TrialSetup) -> Result<DpeEstimate> {
        let links = self.dpe_links(setup)?;
        estimate_position(&links, &self.search, &self.search_center(setup))
    }

    pub fn run_otdoa(&self, setup: &TrialSetup) -> Result<(OtdoaFix, Vec<ToaMeasurement>)> {
        let sig: Vec<_> = setup
            .signals
            .iter()
            .zip(&setup.pilots)
            .map(|(s, p)| (s, p.as_slice()))
            .collect();
        locate(&setup.base_stations, &sig, &self.ofdm, self.toa_mode, setup.truth.z)
    }

    /// One trial; failures are recorded, not propagated.
    pub fn run_trial(&self, trial_id: u64) -> TrialRecord {
        let seed = trial_seed(self.config().experiment.base_seed, trial_id);
        let mut rec = TrialRecord::new(trial_id, seed);
        let setup = match self.setup(trial_id) {
            Ok(s) => s,
            Err(e) => {
                rec.failure = Some(e.to_string());
                return rec;
            }
        };
        rec.ue_x = setup.truth.x;
        rec.ue_y = setup.truth.y;
        rec.clock_bias_ns = setup.truth.clock_bias_s * 1e9;
        rec.n_bs = setup.base_stations.len();
        rec.n_los = setup.links.iter().filter(|l| l.los).count();
        let snrs: Vec<f64> = setup.links.iter().map(|l| l.snr_db).collect();
        rec.snr_min_db = snrs.iter().copied().fold(f64::INFINITY, f64::min);
        rec.snr_max_db = snrs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rec.snr_mean_db = snrs.iter().sum::<f64>() / snrs.len() as f64;
        let mut failures = Vec::new();
        match self.run_dpe(&setup) {
            Ok(est) => {
                rec.dpe_x = Some(est.position.x);
                rec.dpe_y = Some(est.position.y);
                rec.dpe_bias_ns = Some(est.position.clock_bias_s * 1e9);
                rec.dpe_error_m = Some(est.position.horizontal_error(&setup.truth));
                rec.dpe_bias_at_edge = est.bias_at_edge;
            }
            Err(e) => failures.push(format!("dpe: {e}")),
        }
        if self.config().experiment.run_otdoa {
            match self.run_otdoa(&setup) {
                Ok((fix, toas)) => {
                    rec.toa_ns = toas
                        .iter()
                        .map(|t| format!("{}:{}", t.bs_id, crate::report::fmt_sig(t.toa_s * 1e9)))
                        .collect::<Vec<_>>()
                        .join(";");
                    rec.otdoa_x = Some(fix.x);
                    rec.otdoa_y = Some(fix.y);
                    rec.otdoa_error_m = Some((fix.x - setup.truth.x).hypot(fix.y - setup.truth.y));
                }
                Err(e) => failures.push(format!("otdoa: {e}")),
            }
        }
        if !failures.is_empty() {
            rec.failure = Some(failures.join("; "));
        }
        rec
    }
}

/// Run every trial of `cfg` on a pool of `workers` threads (0 = all cores).
///
/// Trials draw from their own seeded streams, so results do not depend on
/// the worker count.
pub fn run_experiment(cfg: &ScenarioConfig, workers: usize) -> Result<Vec<TrialRecord>> {
    let exp = Experiment::new(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    let n = cfg.experiment.n_trials as u64;
    Ok(pool.install(|| (0..n).into_par_iter().map(|t| exp.run_trial(t)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub rmse_m: f64,
    pub mean_m: f64,
    pub p50_m: f64,
    pub p90_m: f64,
    pub p95_m: f64,
    pub p99_m: f64,
    pub max_m: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyStatistics);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Domain(format!("percentile {p} outside [0, 100]")));
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Empirical CDF: the `i`-th smallest error carries probability `i/n`.
pub fn empirical_cdf(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.into_iter()
        .enumerate()
        .map(|(i, e)| (e, (i + 1) as f64 / n))
        .collect()
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::EmptyStatistics);
        }
        let mut s = errors.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        Ok(ErrorStats {
            count: s.len(),
            rmse_m: (s.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
            mean_m: s.iter().sum::<f64>() / n,
            p50_m: percentile(&s, 50.0)?,
            p90_m: percentile(&s, 90.0)?,
            p95_m: percentile(&s, 95.0)?,
            p99_m: percentile(&s, 99.0)?,
            max_m: *s.last().expect("non-empty"),
        })
    }
}

/// Aggregate results of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config_digest: String,
    pub n_trials: usize,
    pub n_failed: usize,
    /// Errors are horizontal (2D) distances.
    pub error_metric: String,
    /// Whether the clock-bias axis was searched.
    pub bias_axis: bool,
    pub los_fraction: f64,
    pub bias_edge_hits: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dpe: Option<ErrorStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub otdoa: Option<ErrorStats>,
    /// `1 − p90(DPE)/p90(OTDoA)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub improvement_ratio: Option<f64>,
}

pub fn dpe_errors(records: &[TrialRecord]) -> Vec<f64> {
    records.iter().filter_map(|r| r.dpe_error_m).collect()
}

pub fn otdoa_errors(records: &[TrialRecord]) -> Vec<f64> {
    records.iter().filter_map(|r| r.otdoa_error_m).collect()
}

pub fn summarize(cfg: &ScenarioConfig, records: &[TrialRecord]) -> ExperimentSummary {
    let dpe = ErrorStats::from_errors(&dpe_errors(records)).ok();
    let otdoa = ErrorStats::from_errors(&otdoa_errors(records)).ok();
    let improvement_ratio = match (&dpe, &otdoa) {
        (Some(d), Some(o)) if o.p90_m > 0.0 => Some(1.0 - d.p90_m / o.p90_m),
        _ => None,
    };
    let links: usize = records.iter().map(|r| r.n_bs).sum();
    let los: usize = records.iter().map(|r| r.n_los).sum();
    ExperimentSummary {
        config_digest: cfg.digest(),
        n_trials: records.len(),
        n_failed: records.iter().filter(|r| r.failure.is_some()).count(),
        error_metric: "horizontal_2d".into(),
        bias_axis: cfg.dpe.bias_axis,
        los_fraction: if links > 0 { los as f64 / links as f64 } else { 0.0 },
        bias_edge_hits: records.iter().filter(|r| r.dpe_bias_at_edge).count(),
        dpe,
        otdoa,
        improvement_ratio,
    }
}

/// Results at one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub summary: ExperimentSummary,
    pub records: Vec<TrialRecord>,
}

/// Apply one sweep value to a copy of `cfg`.
pub fn sweep_config(cfg: &ScenarioConfig, axis: SweepAxis, value: f64) -> Result<ScenarioConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::SnrDb => c.experiment.snr_db = value,
        SweepAxis::NBs => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(Error::config("sweep.values", format!("{value} is not a BS count")));
            }
            c.experiment.n_bs = value as usize;
            if let Some(p) = &c.experiment.force_los_pattern {
                if p.len() != c.experiment.n_bs {
                    c.experiment.force_los_pattern = None;
                }
            }
        }
    }
    c.sweep = None;
    Ok(c)
}

/// Run the experiment at every sweep value, reusing the trial seeds.
pub fn sweep(cfg: &ScenarioConfig, workers: usize) -> Result<Vec<SweepPoint>> {
    let s = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "no [sweep] block in configuration"))?;
    if s.values.is_empty() {
        return Err(Error::config("sweep.values", "empty"));
    }
    s.values
        .iter()
        .map(|&v| {
            let c = sweep_config(cfg, s.axis, v)?;
            let records = run_experiment(&c, workers)?;
            Ok(SweepPoint {
                value: v,
                summary: summarize(&c, &records),
                records,
            })
        })
        .collect()
}
