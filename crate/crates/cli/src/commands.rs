use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nrpos_core::channel::{realize_channel, ProfileName, TdlProfile};
use nrpos_core::config::{parse_override, ScenarioConfig};
use nrpos_core::dpe::{build_correlogram, objective};
use nrpos_core::montecarlo::{dpe_errors, otdoa_errors, run_experiment, sweep as run_sweep, Experiment};
use nrpos_core::report::{self, fmt_sig, CorrelogramMeta};

use crate::{CliError, GlobalOpts};

type Result<T> = std::result::Result<T, CliError>;

/// Load `--config`, then apply `--set` overrides and `--seed`.
pub fn load_config(g: &GlobalOpts) -> Result<ScenarioConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs --config <FILE>".into()))?;
    let cfg = ScenarioConfig::load(path)?;
    let overrides = g
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<nrpos_core::Result<Vec<_>>>()?;
    let mut cfg = cfg.with_overrides(&overrides)?;
    if let Some(seed) = g.seed {
        cfg.experiment.base_seed = seed;
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok((path, BufWriter::new(f)))
}

fn write_with(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> nrpos_core::Result<()>,
) -> Result<PathBuf> {
    let (path, mut w) = create(dir, name)?;
    f(&mut w)?;
    w.flush()?;
    Ok(path)
}

fn write_config(dir: &Path, cfg: &ScenarioConfig) -> Result<PathBuf> {
    write_with(dir, "config.toml", |w| Ok(w.write_all(cfg.to_toml().as_bytes())?))
}

pub fn channel_dump(g: &GlobalOpts, profile: &str, ds_ns: f64) -> Result<()> {
    let name = ProfileName::from_str(profile)?;
    if !(ds_ns > 0.0 && ds_ns.is_finite()) {
        return Err(CliError::Config(format!("--ds-ns must be positive, got {ds_ns}")));
    }
    let p = TdlProfile::builtin(name);
    let chan = realize_channel(&p, ds_ns * 1e-9, g.seed.unwrap_or(0))?;
    let tag = name.to_string().to_ascii_lowercase().replace('-', "_");
    let cir = write_with(&g.out, &format!("cir_{tag}.csv"), |w| report::write_cir(w, &chan))?;
    let pdp = write_with(&g.out, &format!("pdp_{tag}.csv"), |w| report::write_pdp(w, &p, ds_ns * 1e-9))?;
    println!("{}\n{}", cir.display(), pdp.display());
    Ok(())
}

fn parse_truth(s: &str) -> Result<[f64; 2]> {
    let bad = || CliError::Config(format!("--truth expects X,Y in meters, got `{s}`"));
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    let x: f64 = x.trim().parse().map_err(|_| bad())?;
    let y: f64 = y.trim().parse().map_err(|_| bad())?;
    Ok([x, y])
}

pub fn correlogram(g: &GlobalOpts, trial: u64, stage: usize, truth: Option<&str>) -> Result<()> {
    let mut cfg = load_config(g)?;
    if let Some(t) = truth {
        cfg.ue.truth = Some(parse_truth(t)?);
    }
    let exp = Experiment::new(&cfg)?;
    let setup = exp.setup(trial)?;
    let est = exp.run_dpe(&setup)?;
    let st = est.stages.get(stage).ok_or_else(|| {
        CliError::Config(format!("--stage {stage} out of range: the search ran {} stage(s)", est.stages.len()))
    })?;
    let links = exp.dpe_links(&setup)?;
    let c = build_correlogram(&links, &st.grid)?;
    let meta = CorrelogramMeta::new(stage, &setup.truth, objective(&links, &setup.truth), &c);
    let path = write_with(&g.out, &format!("correlogram_stage{stage}.csv"), |w| {
        report::write_correlogram(w, &meta, &c)
    })?;
    println!(
        "{}\ntruth  ({}, {}) objective {}\nargmax ({}, {}) objective {}\nestimate ({}, {})",
        path.display(),
        fmt_sig(meta.truth_x),
        fmt_sig(meta.truth_y),
        fmt_sig(meta.truth_value),
        fmt_sig(meta.argmax_x),
        fmt_sig(meta.argmax_y),
        fmt_sig(meta.argmax_value),
        fmt_sig(est.position.x),
        fmt_sig(est.position.y),
    );
    Ok(())
}

fn print_summary(s: &nrpos_core::montecarlo::ExperimentSummary) -> Result<()> {
    let mut out = std::io::stdout().lock();
    report::write_summary(&mut out, s)?;
    Ok(())
}

pub fn run(g: &GlobalOpts) -> Result<()> {
    let cfg = load_config(g)?;
    let records = run_experiment(&cfg, g.workers)?;
    let (records, summary) = report::finalize(&cfg, &records);
    write_with(&g.out, "trials.csv", |w| report::write_trials(w, &records))?;
    write_with(&g.out, "summary.toml", |w| report::write_summary(w, &summary))?;
    write_config(&g.out, &cfg)?;
    print_summary(&summary)
}

pub fn sweep(g: &GlobalOpts) -> Result<()> {
    let cfg = load_config(g)?;
    let mut points = run_sweep(&cfg, g.workers)?;
    for (i, p) in points.iter_mut().enumerate() {
        let point_cfg = nrpos_core::montecarlo::sweep_config(&cfg, cfg.sweep.as_ref().expect("swept").axis, p.value)?;
        let (records, summary) = report::finalize(&point_cfg, &p.records);
        write_with(&g.out, &format!("sweep_{i:02}_trials.csv"), |w| report::write_trials(w, &records))?;
        write_with(&g.out, &format!("sweep_{i:02}_summary.toml"), |w| report::write_summary(w, &summary))?;
        p.records = records;
        p.summary = summary;
    }
    let path = write_with(&g.out, "curve.csv", |w| report::write_curve(w, &points))?;
    write_config(&g.out, &cfg)?;
    print!("{}", std::fs::read_to_string(path)?);
    Ok(())
}

pub fn compare(g: &GlobalOpts) -> Result<()> {
    let mut cfg = load_config(g)?;
    cfg.experiment.run_otdoa = true;
    let records = run_experiment(&cfg, g.workers)?;
    let (records, summary) = report::finalize(&cfg, &records);
    write_with(&g.out, "trials.csv", |w| report::write_trials(w, &records))?;
    write_with(&g.out, "summary.toml", |w| report::write_summary(w, &summary))?;
    write_with(&g.out, "cdf_dpe.csv", |w| report::write_cdf(w, &dpe_errors(&records)))?;
    write_with(&g.out, "cdf_otdoa.csv", |w| report::write_cdf(w, &otdoa_errors(&records)))?;
    write_config(&g.out, &cfg)?;
    print_summary(&summary)
}
