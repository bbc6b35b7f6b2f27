//! Scenario / experiment document (TOML).
//!
//! Every block has defaults, so a document holding only a `[[bs]]` list is a
//! complete configuration. Overrides address fields by dotted path
//! (`experiment.snr_db=20`) and must name a key that exists in the resolved
//! document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsEntry {
    pub id: Option<u32>,
    pub x: Option<f64>,
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UePolicy {
    pub height_m: f64,
    /// Inset of the UE drop region from the BS bounding box.
    pub margin_m: f64,
    /// Fixed `[x, y]` truth instead of a random drop.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<[f64; 2]>,
}

impl Default for UePolicy {
    fn default() -> Self {
        UePolicy {
            height_m: 2.0,
            margin_m: 50.0,
            truth: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathLossKind {
    UmiStreetCanyon,
    LogDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudgetConfig {
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub bandwidth_mhz: f64,
    pub pathloss_model: PathLossKind,
    /// Log-distance exponent.
    pub exponent: f64,
    /// Extra NLoS attenuation of the log-distance model.
    pub nlos_excess_db: f64,
}

impl Default for LinkBudgetConfig {
    fn default() -> Self {
        LinkBudgetConfig {
            tx_power_dbm: 24.0,
            noise_figure_db: 9.0,
            bandwidth_mhz: 100.0,
            pathloss_model: PathLossKind::UmiStreetCanyon,
            exponent: 3.0,
            nlos_excess_db: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedTapConfig {
    pub delay_samples: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub ds_ns: f64,
    pub los_profile: String,
    pub nlos_profile: String,
    /// Snap TDL tap delays to the sample grid relative to the first tap.
    pub sample_spaced: bool,
    /// Deterministic taps applied to every link; replaces the TDL profiles.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taps: Option<Vec<FixedTapConfig>>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            ds_ns: 65.0,
            los_profile: "D".into(),
            nlos_profile: "C".into(),
            sample_spaced: true,
            taps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumerologyConfig {
    pub n: usize,
    pub scs_khz: f64,
    pub cp_samples: usize,
    pub center_freq_ghz: f64,
}

impl Default for NumerologyConfig {
    fn default() -> Self {
        NumerologyConfig {
            n: 4096,
            scs_khz: 30.0,
            cp_samples: 288,
            center_freq_ghz: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrMode {
    /// Same SNR on every link.
    Common,
    /// Per-link SNR from the path-loss budget.
    LinkBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentParams {
    /// Number of nearest BSs used per trial.
    pub n_bs: usize,
    pub snr_mode: SnrMode,
    pub snr_db: f64,
    pub clock_bias_sigma_ns: f64,
    pub clock_bias_truncation_sigmas: f64,
    /// LoS flags for the selected BSs in order of proximity.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub force_los_pattern: Option<Vec<bool>>,
    pub n_trials: usize,
    pub base_seed: u64,
    pub run_otdoa: bool,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            n_bs: 6,
            snr_mode: SnrMode::Common,
            snr_db: 10.0,
            clock_bias_sigma_ns: 5.0,
            clock_bias_truncation_sigmas: 3.0,
            force_los_pattern: None,
            n_trials: 500,
            base_seed: 1,
            run_otdoa: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpeConfig {
    /// Total number of search stages (1 = no refinement).
    pub stages: usize,
    pub shrink: f64,
    /// Full width of the first-stage grid along x and y.
    pub extent_m: f64,
    pub resolution_m: f64,
    pub z_axis: bool,
    pub z_extent_m: f64,
    pub bias_axis: bool,
    /// Half-width of the first-stage clock-bias search.
    pub bias_range_ns: f64,
    /// First-stage bias step; defaults to `resolution_m / c`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_step_ns: Option<f64>,
    /// The first-stage grid is centered at truth plus a uniform offset of up to this much per axis.
    pub search_offset_m: f64,
    /// Channel taps `L` of the estimator; derived from the link profile when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_taps: Option<usize>,
    pub tap_margin: usize,
    /// Lattice points per sample of the tabulated delay objective.
    pub oversample: usize,
    /// Branch and bound on the per-cell upper envelope of the objective
    /// instead of one argmax per stage.
    pub coarse_pooling: bool,
}

impl Default for DpeConfig {
    fn default() -> Self {
        DpeConfig {
            stages: 4,
            shrink: 5.0,
            extent_m: 100.0,
            resolution_m: 2.0,
            z_axis: false,
            z_extent_m: 10.0,
            bias_axis: true,
            bias_range_ns: 20.0,
            bias_step_ns: None,
            search_offset_m: 20.0,
            n_taps: None,
            tap_margin: 2,
            oversample: 32,
            coarse_pooling: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToaModeKind {
    GlobalMax,
    LeadingEdge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtdoaConfig {
    pub toa_mode: ToaModeKind,
    pub leading_edge_fraction: f64,
}

impl Default for OtdoaConfig {
    fn default() -> Self {
        OtdoaConfig {
            toa_mode: ToaModeKind::GlobalMax,
            leading_edge_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SnrDb,
    NBs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// BS list in a separate document, relative to this one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bs_file: Option<String>,
    #[serde(default)]
    pub bs: Vec<BsEntry>,
    #[serde(default)]
    pub ue: UePolicy,
    #[serde(default)]
    pub link_budget: LinkBudgetConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub numerology: NumerologyConfig,
    #[serde(default)]
    pub experiment: ExperimentParams,
    #[serde(default)]
    pub dpe: DpeConfig,
    #[serde(default)]
    pub otdoa: OtdoaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl ScenarioConfig {
    /// Parse a document; `bs_file` is resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        if let Some(file) = cfg.bs_file.clone() {
            if !cfg.bs.is_empty() {
                return Err(Error::config("bs_file", "give either `bs_file` or an inline `[[bs]]` list"));
            }
            let path = base_dir.map(|d| d.join(&file)).unwrap_or_else(|| file.clone().into());
            let inner = std::fs::read_to_string(&path)
                .map_err(|e| Error::config("bs_file", format!("{}: {e}", path.display())))?;
            #[derive(Deserialize)]
            struct BsOnly {
                #[serde(default)]
                bs: Vec<BsEntry>,
            }
            let doc: BsOnly = toml::from_str(&inner).map_err(|e| Error::config("bs_file", e.to_string()))?;
            cfg.bs = doc.bs;
            cfg.bs_file = None;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("<document>", format!("{}: {e}", path.display())))?;
        ScenarioConfig::parse(&text, path.parent())
    }

    /// Apply `key=value` overrides. Values are parsed as TOML, falling back to strings.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::config("<document>", e.to_string()))?;
        for (key, raw) in overrides {
            let value = parse_value(raw);
            let mut parts = key.split('.').peekable();
            let mut node = &mut doc;
            while let Some(part) = parts.next() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| Error::config(key.clone(), "path does not name a table"))?;
                if parts.peek().is_none() {
                    // unset optional fields are absent from the document
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                node = table
                    .get_mut(part)
                    .ok_or_else(|| Error::config(key.clone(), "no such configuration key"))?;
            }
            let _: ScenarioConfig = doc
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| Error::config(key.clone(), e.to_string().trim().to_string()))?;
        }
        doc.try_into().map_err(|e: toml::de::Error| Error::config("<override>", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, hex, first 16 chars.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_toml().as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Split `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(s, "override must look like key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
