use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nrpos_core::channel::rms_delay_spread;
use nrpos_core::config::ScenarioConfig;
use nrpos_core::report;

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
n_trials = 5
snr_db = 10.0

[dpe]
stages = 2
extent_m = 40.0
search_offset_m = 5.0
oversample = 8
"#;

fn nrpos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nrpos")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn selftest_passes() {
    let o = nrpos(&["selftest"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{out}{}", stderr(&o));
    assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 8);
    assert!(!out.contains("FAIL"));
}

#[test]
fn channel_dump_profiles() {
    let dir = tempfile::tempdir().unwrap();
    for p in ["D", "C"] {
        let o = nrpos(&["channel-dump", "--profile", p, "--ds-ns", "65", "--seed", "3", "--out", s(dir.path())]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let pdp = |name: &str| report::read_pdp(std::fs::File::open(dir.path().join(name)).unwrap()).unwrap();
    let d = pdp("pdp_tdl_d.csv");
    let c = pdp("pdp_tdl_c.csv");
    // LoS profile: the first arrival dominates
    assert_eq!(d[0].power_db, 0.0);
    assert!(d[1..].iter().all(|r| r.power_db < 0.0));
    // NLoS profile: the first arrival is weaker than the strongest tap
    assert!(c[0].power_db < 0.0);
    for rows in [&d, &c] {
        let delays: Vec<f64> = rows.iter().map(|r| r.delay_ns).collect();
        let w: Vec<f64> = rows.iter().map(|r| 10f64.powf(r.power_db / 10.0)).collect();
        let rms = rms_delay_spread(&delays, &w);
        assert!((rms / 65.0 - 1.0).abs() < 1e-3, "{rms}");
    }
    let cir = report::read_cir(std::fs::File::open(dir.path().join("cir_tdl_c.csv")).unwrap()).unwrap();
    assert_eq!(cir.len(), c.len());
    assert!(cir.iter().all(|r| r.magnitude >= 0.0 && r.phase_deg.abs() <= 180.0));
}

#[test]
fn unknown_profile_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nrpos(&["channel-dump", "--profile", "Q", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("A, B, C, D, E"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SQUARE);
    let out = dir.path().join("o");
    assert_eq!(nrpos(&["run", "--out", s(&out)]).status.code(), Some(2));
    let o = nrpos(&["run", "--config", s(&cfg), "--set", "experiment.bogus=1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("experiment.bogus"));
    let o = nrpos(&["run", "--config", s(&cfg), "--set", "experiment.n_bs=9", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(nrpos(&["run", "--config", s(&missing)]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    // the CP cannot hold the propagation delay
    let cfg = write_config(dir.path(), &SQUARE.replace("cp_samples = 256", "cp_samples = 4"));
    let o = nrpos(&["correlogram", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn run_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), SQUARE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = nrpos(&["run", "--config", s(&cfg_path), "--seed", "42", "--workers", "2", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let trials_a = std::fs::read(a.join("trials.csv")).unwrap();
    assert_eq!(trials_a, std::fs::read(b.join("trials.csv")).unwrap());
    assert_eq!(
        std::fs::read(a.join("summary.toml")).unwrap(),
        std::fs::read(b.join("summary.toml")).unwrap()
    );

    let records = report::read_trials(trials_a.as_slice()).unwrap();
    assert_eq!(records.len(), 5);
    let summary = report::read_summary(std::fs::File::open(a.join("summary.toml")).unwrap()).unwrap();
    let resolved = ScenarioConfig::load(&a.join("config.toml")).unwrap();
    assert_eq!(resolved.experiment.base_seed, 42);
    assert_eq!(report::resummarize(&resolved, &records), summary);

    // a different seed gives different trials
    let c = dir.path().join("c");
    assert!(nrpos(&["run", "--config", s(&cfg_path), "--seed", "43", "--out", s(&c)]).status.success());
    assert_ne!(trials_a, std::fs::read(c.join("trials.csv")).unwrap());
}

#[test]
fn single_value_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SQUARE}\n[sweep]\naxis = \"snr_db\"\nvalues = [10.0]\n");
    let cfg = write_config(dir.path(), &text);
    let o = nrpos(&["sweep", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = report::read_curve(std::fs::File::open(dir.path().join("curve.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    let point = report::read_summary(std::fs::File::open(dir.path().join("sweep_00_summary.toml")).unwrap()).unwrap();

    // `run` ignores the sweep block
    let run_dir = dir.path().join("run");
    assert!(nrpos(&["run", "--config", s(&cfg), "--out", s(&run_dir)]).status.success());
    let run = report::read_summary(std::fs::File::open(run_dir.join("summary.toml")).unwrap()).unwrap();
    assert_eq!(point.dpe, run.dpe);
    assert_eq!(rows[0].dpe_rmse_m, Some(run.dpe.unwrap().rmse_m));
}

#[test]
fn compare_writes_both_cdfs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SQUARE);
    let o = nrpos(&["compare", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = report::read_summary(std::fs::File::open(dir.path().join("summary.toml")).unwrap()).unwrap();
    assert!(summary.improvement_ratio.is_some());
    for name in ["cdf_dpe.csv", "cdf_otdoa.csv"] {
        let cdf = report::read_cdf(std::fs::File::open(dir.path().join(name)).unwrap()).unwrap();
        assert_eq!(cdf.len(), 5);
        assert!(cdf.windows(2).all(|w| w[0].error_m <= w[1].error_m && w[0].probability <= w[1].probability));
        assert_eq!(cdf.last().unwrap().probability, 1.0);
    }
    let dpe = report::read_cdf(std::fs::File::open(dir.path().join("cdf_dpe.csv")).unwrap()).unwrap();
    let d = summary.dpe.unwrap();
    assert_eq!(dpe.last().unwrap().error_m, d.max_m);
}

#[test]
fn correlogram_grid_and_argmax() {
    let dir = tempfile::tempdir().unwrap();
    // noiseless LoS links, no clock bias, full numerology, grid centered on truth
    let text = r#"
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

[ue]
truth = [103.3, 91.7]

[experiment]
n_bs = 4
snr_db = inf
clock_bias_sigma_ns = 0.0
force_los_pattern = [true, true, true, true]

[dpe]
bias_axis = false
extent_m = 20.0
search_offset_m = 0.0
"#;
    let cfg = write_config(dir.path(), text);
    let o = nrpos(&["correlogram", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (meta, rows) =
        report::read_correlogram(std::fs::File::open(dir.path().join("correlogram_stage0.csv")).unwrap()).unwrap();
    // 20 m wide at 2 m steps
    assert_eq!(rows.len(), 11 * 11);
    assert_eq!(meta.rows, rows.len());
    let nearest = rows
        .iter()
        .min_by(|a, b| {
            let da = (a.x - 103.3).hypot(a.y - 91.7);
            let db = (b.x - 103.3).hypot(b.y - 91.7);
            da.total_cmp(&db)
        })
        .unwrap();
    assert_eq!((meta.argmax_x, meta.argmax_y), (nearest.x, nearest.y));
    assert!(meta.truth_value >= meta.argmax_value);

    let o = nrpos(&["correlogram", "--config", s(&cfg), "--stage", "9", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}
