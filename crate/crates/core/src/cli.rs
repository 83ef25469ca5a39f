//! Command implementations behind the `hbf` binary.
//!
//! Every command loads a scenario, applies overrides, writes its CSV output and a
//! `manifest.json` describing the effective configuration into the output directory.

use std::fmt::Display;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::{self, Scenario, ScenarioConfig};
use crate::error::{HbfError, Result};
use crate::filter::HybridBernoulliFilter;
use crate::oracle::{compare_along, GridOptions, OracleRow};
use crate::sim::{run_monte_carlo, run_trial, simulate_truth, trial_rng, FilterTrace, MCStats, TruthTrace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_ORACLE_MISMATCH: i32 = 3;

/// Default acceptance bound on the largest relative mixture-versus-grid discrepancy.
pub const ORACLE_TOLERANCE: f64 = 1e-4;

/// Options shared by all commands.
#[derive(Debug, Clone)]
pub struct CommonArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    /// `key.path=value` assignments applied in order.
    pub overrides: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: String,
    pub config_hash: String,
    pub out_dir: String,
    pub timestamp_unix: u64,
    pub seed: u64,
    pub overrides: Vec<String>,
    pub version: String,
    pub config: ScenarioConfig,
}

pub fn exit_code(err: &HbfError) -> i32 {
    if err.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_NUMERICAL
    }
}

struct Loaded {
    cfg: ScenarioConfig,
    scenario: Scenario,
    overrides: Vec<String>,
}

fn load(args: &CommonArgs, extra: &[String]) -> Result<Loaded> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    overrides.extend_from_slice(extra);
    let cfg = config::load(&args.config, &overrides)?;
    let scenario = cfg.build()?;
    Ok(Loaded { cfg, scenario, overrides })
}

fn write_manifest(args: &CommonArgs, subcommand: &str, loaded: &Loaded) -> Result<()> {
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        config_path: args.config.display().to_string(),
        config_hash: loaded.cfg.hash()?,
        out_dir: args.out.display().to_string(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        seed: loaded.cfg.seed,
        overrides: loaded.overrides.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: loaded.cfg.clone(),
    };
    let file = fs::File::create(args.out.join("manifest.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
    Ok(())
}

fn csv_writer(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

fn write_row<W: Write, T: Display>(w: &mut W, cells: impl IntoIterator<Item = T>) -> Result<()> {
    let line: Vec<String> = cells.into_iter().map(|c| c.to_string()).collect();
    writeln!(w, "{}", line.join(","))?;
    Ok(())
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}_{i}"))
}

/// Writes one trial's truth and filter output, one row per step.
pub fn write_trace(path: &Path, truth: &TruthTrace, trace: &FilterTrace, n: usize, m: usize) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("trace.csv");
    let mut w = csv_writer(dir, name)?;
    let header: Vec<String> = std::iter::once("k".to_string())
        .chain(numbered("x", n))
        .chain(std::iter::once("attack_active".to_string()))
        .chain(numbered("a", m))
        .chain(std::iter::once("r".to_string()))
        .chain(numbered("x_hat", n))
        .chain(numbered("a_hat", m))
        .chain(["num_meas", "j0", "j1", "delivered", "num_fake"].map(String::from))
        .collect();
    write_row(&mut w, header)?;
    let nan_row = |v: Option<&nalgebra::DVector<f64>>| -> Vec<String> {
        match v {
            Some(v) => v.iter().map(|x| x.to_string()).collect(),
            None => vec![f64::NAN.to_string(); m],
        }
    };
    for k in 0..truth.x.len() {
        let est = &trace.estimates[k];
        let mut row = vec![k.to_string()];
        row.extend(truth.x[k].iter().map(|v| v.to_string()));
        row.push(u8::from(truth.attack[k].is_some()).to_string());
        row.extend(nan_row(truth.attack[k].as_ref()));
        row.push(est.r.to_string());
        row.extend(est.state_estimate.iter().map(|v| v.to_string()));
        row.extend(nan_row(est.attack_estimate.as_ref()));
        row.push(truth.z[k].len().to_string());
        row.push(trace.j0[k].to_string());
        row.push(trace.j1[k].to_string());
        row.push(u8::from(truth.delivered[k]).to_string());
        row.push(truth.num_fake[k].to_string());
        write_row(&mut w, row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mc_stats(path: &Path, stats: &MCStats) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("mcstats.csv");
    let mut w = csv_writer(dir, name)?;
    let n = stats.rmse_x.first().map_or(0, |v| v.len());
    let m = stats.rmse_a.first().map_or(0, |v| v.len());
    let header: Vec<String> = ["k", "mean_r", "detection_rate"]
        .map(String::from)
        .into_iter()
        .chain(numbered("rmse_x", n))
        .chain(numbered("rmse_a", m))
        .chain(std::iter::once("true_attack_rate".to_string()))
        .collect();
    write_row(&mut w, header)?;
    for k in 0..stats.mean_r.len() {
        let mut row = vec![k.to_string(), stats.mean_r[k].to_string(), stats.detection_rate[k].to_string()];
        row.extend(stats.rmse_x[k].iter().map(|v| v.to_string()));
        row.extend(stats.rmse_a[k].iter().map(|v| v.to_string()));
        row.push(stats.true_attack_rate[k].to_string());
        write_row(&mut w, row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_oracle_rows(path: &Path, rows: &[OracleRow]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("oracle_compare.csv");
    let mut w = csv_writer(dir, name)?;
    write_row(
        &mut w,
        [
            "k", "r_gm", "r_grid", "d_r", "d_p0_mean", "d_p0_var", "d_p1_x_mean", "d_p1_x_var", "d_p1_a_mean",
            "d_p1_a_var", "max_delta",
        ],
    )?;
    for r in rows {
        write_row(
            &mut w,
            [
                r.k as f64,
                r.r_gm,
                r.r_grid,
                r.d_r,
                r.d_p0_mean,
                r.d_p0_var,
                r.d_p1_x_mean,
                r.d_p1_x_var,
                r.d_p1_a_mean,
                r.d_p1_a_var,
                r.max_delta(),
            ],
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Simulates and filters trial 0 of the scenario, writing `trace.csv`.
pub fn cmd_run(args: &CommonArgs) -> Result<(TruthTrace, FilterTrace)> {
    let loaded = load(args, &[])?;
    let sc = &loaded.scenario;
    let (truth, trace) = run_trial(sc, 0)?;
    write_trace(&args.out.join("trace.csv"), &truth, &trace, sc.sys.n(), sc.sys.m())?;
    write_manifest(args, "run", &loaded)?;
    Ok((truth, trace))
}

/// Runs the Monte-Carlo study, writing `mcstats.csv`.
pub fn cmd_montecarlo(args: &CommonArgs, trials: Option<usize>) -> Result<MCStats> {
    let extra: Vec<String> = trials.map(|t| format!("trials={t}")).into_iter().collect();
    let loaded = load(args, &extra)?;
    let sc = &loaded.scenario;
    let stats = run_monte_carlo(sc, sc.trials)?;
    write_mc_stats(&args.out.join("mcstats.csv"), &stats)?;
    write_manifest(args, "montecarlo", &loaded)?;
    Ok(stats)
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub rows: Vec<OracleRow>,
    pub max_delta: f64,
    pub tolerance: f64,
}

impl OracleOutcome {
    pub fn passed(&self) -> bool {
        self.max_delta <= self.tolerance
    }
}

/// Compares the mixture filter with the grid recursion along trial 0's
/// measurements, writing `oracle_compare.csv`.
pub fn cmd_oracle(args: &CommonArgs, grid: &GridOptions, tolerance: f64) -> Result<OracleOutcome> {
    let loaded = load(args, &[])?;
    let sc = &loaded.scenario;
    if !sc.sys.is_scalar() {
        return Err(HbfError::OracleRequiresScalar {
            n: sc.sys.n(),
            m: sc.sys.m(),
            p: sc.sys.p(),
        });
    }
    let rows = oracle_rows(sc, grid)?;
    write_oracle_rows(&args.out.join("oracle_compare.csv"), &rows)?;
    write_manifest(args, "oracle", &loaded)?;
    let max_delta = rows.iter().map(OracleRow::max_delta).fold(0.0, f64::max);
    Ok(OracleOutcome {
        rows,
        max_delta,
        tolerance,
    })
}

/// Mixture-versus-grid comparison rows for trial 0 of a scalar scenario.
pub fn oracle_rows(sc: &Scenario, grid: &GridOptions) -> Result<Vec<OracleRow>> {
    let truth = simulate_truth(sc, &mut trial_rng(sc.seed, 0))?;
    let mut filter = HybridBernoulliFilter::new(
        sc.sys.clone(),
        sc.attack.clone(),
        sc.channel.clone(),
        sc.options,
        sc.initial.clone(),
    )?;
    compare_along(&mut filter, &truth.z, grid)
}
