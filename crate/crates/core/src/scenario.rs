//! Deployment geometry, LoS/NLoS state and link budgets.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{BsEntry, LinkBudgetConfig, PathLossKind, ScenarioConfig, SnrMode};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::SPEED_OF_LIGHT;

/// Default BS height when a document omits `z`.
pub const DEFAULT_BS_HEIGHT_M: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: u32,
    /// `[x, y, z]`, z is height above ground.
    pub position: [f64; 3],
}

/// UE state searched by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PositionHypothesis {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub clock_bias_s: f64,
}

impl PositionHypothesis {
    pub fn new(x: f64, y: f64, z: f64, clock_bias_s: f64) -> Self {
        PositionHypothesis { x, y, z, clock_bias_s }
    }

    pub fn range_to(&self, bs: &BaseStation) -> f64 {
        let [bx, by, bz] = bs.position;
        ((self.x - bx).powi(2) + (self.y - by).powi(2) + (self.z - bz).powi(2)).sqrt()
    }

    pub fn distance_2d_to(&self, bs: &BaseStation) -> f64 {
        let [bx, by, _] = bs.position;
        (self.x - bx).hypot(self.y - by)
    }

    pub fn horizontal_error(&self, other: &PositionHypothesis) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Propagation delay plus clock bias toward `bs`.
    pub fn delay_to(&self, bs: &BaseStation) -> f64 {
        self.range_to(bs) / SPEED_OF_LIGHT + self.clock_bias_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkCondition {
    pub bs_id: u32,
    pub los: bool,
    pub distance_2d_m: f64,
    pub geometric_delay_s: f64,
    pub snr_db: f64,
}

/// Distance-dependent LoS probability of the UMi street-canyon scenario.
pub fn los_probability(distance_2d_m: f64) -> Result<f64> {
    if !(distance_2d_m >= 0.0) {
        return Err(Error::Domain(format!("negative distance {distance_2d_m}")));
    }
    if distance_2d_m <= 18.0 {
        return Ok(1.0);
    }
    let r = 18.0 / distance_2d_m;
    Ok(r + (1.0 - r) * (-distance_2d_m / 36.0).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub bandwidth_hz: f64,
    pub model: PathLossKind,
    pub exponent: f64,
    pub nlos_excess_db: f64,
    pub center_freq_hz: f64,
    pub bs_height_m: f64,
    pub ue_height_m: f64,
}

impl LinkBudget {
    pub fn from_config(cfg: &LinkBudgetConfig, center_freq_hz: f64, bs_height_m: f64, ue_height_m: f64) -> Self {
        LinkBudget {
            tx_power_dbm: cfg.tx_power_dbm,
            noise_figure_db: cfg.noise_figure_db,
            bandwidth_hz: cfg.bandwidth_mhz * 1e6,
            model: cfg.pathloss_model,
            exponent: cfg.exponent,
            nlos_excess_db: cfg.nlos_excess_db,
            center_freq_hz,
            bs_height_m,
            ue_height_m,
        }
    }

    pub fn noise_floor_dbm(&self) -> f64 {
        -174.0 + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }

    /// Path loss in dB, shadow fading excluded.
    pub fn pathloss_db(&self, distance_3d_m: f64, los: bool) -> f64 {
        let fc_ghz = self.center_freq_hz / 1e9;
        let d3 = distance_3d_m;
        match self.model {
            PathLossKind::LogDistance => {
                let pl = 32.4 + 20.0 * fc_ghz.log10() + 10.0 * self.exponent * d3.log10();
                if los {
                    pl
                } else {
                    pl + self.nlos_excess_db
                }
            }
            PathLossKind::UmiStreetCanyon => {
                let dh = self.bs_height_m - self.ue_height_m;
                let d2 = (d3 * d3 - dh * dh).max(0.0).sqrt();
                let h_bs = self.bs_height_m - 1.0;
                let h_ut = self.ue_height_m - 1.0;
                let d_bp = 4.0 * h_bs * h_ut * self.center_freq_hz / SPEED_OF_LIGHT;
                let pl_los = if d2 <= d_bp {
                    32.4 + 21.0 * d3.log10() + 20.0 * fc_ghz.log10()
                } else {
                    32.4 + 40.0 * d3.log10() + 20.0 * fc_ghz.log10() - 9.5 * (d_bp * d_bp + dh * dh).log10()
                };
                if los {
                    pl_los
                } else {
                    let pl_nlos =
                        35.3 * d3.log10() + 22.4 + 21.3 * fc_ghz.log10() - 0.3 * (self.ue_height_m - 1.5);
                    pl_los.max(pl_nlos)
                }
            }
        }
    }
}

/// Per-sample SNR of a link under `budget`.
pub fn link_snr(distance_3d_m: f64, los: bool, budget: &LinkBudget) -> Result<f64> {
    if !(distance_3d_m > 0.0) {
        return Err(Error::Domain(format!("link distance must be positive, got {distance_3d_m}")));
    }
    Ok(budget.tx_power_dbm - budget.pathloss_db(distance_3d_m, los) - budget.noise_floor_dbm())
}

/// How link SNRs and LoS states are produced.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPolicy {
    pub snr_mode: SnrMode,
    pub common_snr_db: f64,
    pub budget: LinkBudget,
    /// Forced LoS states, aligned with the BS list passed to `draw_link_conditions`.
    pub force_los_pattern: Option<Vec<bool>>,
}

/// LoS draw and link parameters for each BS, in input order.
///
/// Each BS draws its LoS state from its own `(seed, LinkState, id)` stream, so
/// a BS gets the same state no matter which other BSs are in the list.
pub fn draw_link_conditions(
    bss: &[BaseStation],
    ue: &PositionHypothesis,
    seed: u64,
    policy: &LinkPolicy,
) -> Result<Vec<LinkCondition>> {
    if bss.is_empty() {
        return Err(Error::config("bs", "no base stations"));
    }
    if let Some(p) = &policy.force_los_pattern {
        if p.len() != bss.len() {
            return Err(Error::config(
                "experiment.force_los_pattern",
                format!("pattern has {} entries for {} BSs", p.len(), bss.len()),
            ));
        }
    }
    bss.iter()
        .enumerate()
        .map(|(i, bs)| {
            let d2 = ue.distance_2d_to(bs);
            let d3 = ue.range_to(bs);
            let los = match &policy.force_los_pattern {
                Some(p) => p[i],
                None => {
                    let mut rng = stream_rng(seed, Stream::LinkState, bs.id as u64);
                    rng.random::<f64>() < los_probability(d2)?
                }
            };
            let snr_db = match policy.snr_mode {
                SnrMode::Common => policy.common_snr_db,
                SnrMode::LinkBudget => link_snr(d3, los, &policy.budget)?,
            };
            Ok(LinkCondition {
                bs_id: bs.id,
                los,
                distance_2d_m: d2,
                geometric_delay_s: d3 / SPEED_OF_LIGHT,
                snr_db,
            })
        })
        .collect()
}

/// Zero-mean Gaussian clock offset truncated at `±truncation·σ`.
pub fn draw_clock_bias(sigma_s: f64, truncation_sigmas: f64, seed: u64) -> f64 {
    if !(sigma_s > 0.0) {
        return 0.0;
    }
    let mut rng = stream_rng(seed, Stream::ClockBias, 0);
    let normal = Normal::new(0.0, sigma_s).expect("positive sigma");
    loop {
        let b: f64 = normal.sample(&mut rng);
        if b.abs() <= truncation_sigmas * sigma_s {
            return b;
        }
    }
}

/// The `m` BSs closest to `ue` in 2D, nearest first (ties by id).
pub fn nearest(bss: &[BaseStation], ue: &PositionHypothesis, m: usize) -> Result<Vec<BaseStation>> {
    if m == 0 || m > bss.len() {
        return Err(Error::config(
            "experiment.n_bs",
            format!("cannot select {m} of {} base stations", bss.len()),
        ));
    }
    let mut sorted = bss.to_vec();
    sorted.sort_by(|a, b| {
        ue.distance_2d_to(a)
            .total_cmp(&ue.distance_2d_to(b))
            .then(a.id.cmp(&b.id))
    });
    sorted.truncate(m);
    Ok(sorted)
}

/// Axis-aligned region in which UEs are dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropRegion {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl DropRegion {
    /// Bounding box of `bss` shrunk by `margin_m` on every side.
    pub fn inset(bss: &[BaseStation], margin_m: f64) -> Result<Self> {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for bs in bss {
            for a in 0..2 {
                min[a] = min[a].min(bs.position[a]);
                max[a] = max[a].max(bs.position[a]);
            }
        }
        let region = DropRegion {
            min: [min[0] + margin_m, min[1] + margin_m],
            max: [max[0] - margin_m, max[1] - margin_m],
        };
        if !(region.max[0] >= region.min[0] && region.max[1] >= region.min[1]) {
            return Err(Error::config("ue.margin_m", "margin leaves no room to place the UE"));
        }
        Ok(region)
    }

    pub fn sample(&self, seed: u64) -> [f64; 2] {
        let mut rng = stream_rng(seed, Stream::Geometry, 0);
        let x = self.min[0] + (self.max[0] - self.min[0]) * rng.random::<f64>();
        let y = self.min[1] + (self.max[1] - self.min[1]) * rng.random::<f64>();
        [x, y]
    }
}

/// Validated BS list plus the document it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub base_stations: Vec<BaseStation>,
    pub config: ScenarioConfig,
}

impl Deployment {
    pub fn from_config(config: ScenarioConfig) -> Result<Self> {
        let base_stations = validate_bs_list(&config.bs)?;
        Ok(Deployment { base_stations, config })
    }

    pub fn by_id(&self, id: u32) -> Option<&BaseStation> {
        self.base_stations.iter().find(|b| b.id == id)
    }
}

/// Parse and validate a deployment document.
pub fn load_deployment(source: &str) -> Result<Deployment> {
    Deployment::from_config(ScenarioConfig::parse(source, None)?)
}

fn validate_bs_list(entries: &[BsEntry]) -> Result<Vec<BaseStation>> {
    if entries.is_empty() {
        return Err(Error::config("bs", "deployment has no base stations"));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let id = e.id.ok_or_else(|| Error::config(format!("bs[{i}].id"), "missing"))?;
        let x = e.x.ok_or_else(|| Error::config(format!("bs[{i}].x"), "missing coordinate"))?;
        let y = e.y.ok_or_else(|| Error::config(format!("bs[{i}].y"), "missing coordinate"))?;
        let z = e.z.unwrap_or(DEFAULT_BS_HEIGHT_M);
        if !seen.insert(id) {
            return Err(Error::config(format!("bs[{i}].id"), format!("duplicate id {id}")));
        }
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::config(format!("bs[{i}]"), "non-finite coordinate"));
        }
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::config(format!("bs[{i}].z"), "height must be positive"));
        }
        out.push(BaseStation { id, position: [x, y, z] });
    }
    Ok(out)
}

/// `n` BSs on a stratified grid over a square of `area_m2`, each moved by up
/// to `jitter` of a cell from its cell center. Rows are filled as evenly as possible.
pub fn jittered_grid(n: usize, area_m2: f64, jitter: f64, seed: u64) -> Vec<BaseStation> {
    let side = area_m2.sqrt();
    let rows = (n as f64).sqrt().floor().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut id = 0u32;
    for r in 0..rows {
        let in_row = n / rows + usize::from(r < n % rows);
        let cell_w = side / in_row as f64;
        let cell_h = side / rows as f64;
        for c in 0..in_row {
            let jx = (rng.random::<f64>() * 2.0 - 1.0) * jitter * cell_w;
            let jy = (rng.random::<f64>() * 2.0 - 1.0) * jitter * cell_h;
            let x = (c as f64 + 0.5) * cell_w + jx;
            let y = (r as f64 + 0.5) * cell_h + jy;
            out.push(BaseStation {
                id,
                position: [(x * 100.0).round() / 100.0, (y * 100.0).round() / 100.0, DEFAULT_BS_HEIGHT_M],
            });
            id += 1;
        }
    }
    out
}
