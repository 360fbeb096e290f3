use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rotor_lockin::modulation::modulation_series;
use rotor_lockin::reference::{detect_period, fit_trapezoid_cosine, reference_waveform, TransitionFit};
use rotor_lockin::sim::{report, run_simulation, write_signal_csv};
use rotor_lockin::TimeGrid;
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub subcommand: &'a str,
    pub version: &'a str,
    pub out_dir: String,
    pub config: Value,
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    write_text(path, &(text + "\n"))
}

fn prepare(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })
}

fn write_manifest(subcommand: &str, cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let manifest = RunManifest {
        subcommand,
        version: env!("CARGO_PKG_VERSION"),
        out_dir: out.display().to_string(),
        config: cfg.to_value(),
    };
    let path = out.join(MANIFEST);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Two modulation periods (720 degrees of alpha) on the configured `dt`,
/// endpoint included, plus the harmonic series.
pub fn modwave(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    prepare(out)?;
    let sim = &cfg.sim;
    let series = modulation_series(&sim.modulation, sim.f_m)?;
    let per = TimeGrid::from_duration(sim.dt, 1.0 / sim.f_m)?.samples_per_period(sim.f_m)?;
    let grid = TimeGrid::new(sim.dt, 2 * per + 1, 0.0)?;

    let mut csv = String::from("t,alpha_deg,value\n");
    for t in grid.times() {
        let alpha = 360.0 * sim.f_m * t;
        writeln!(csv, "{t:.16e},{alpha:.16e},{:.16e}", series.eval(t)).expect("string write");
    }
    let wave = out.join("modwave.csv");
    write_text(&wave, &csv)?;
    let json = out.join("modulation_series.json");
    write_json(&json, &series)?;
    let manifest = write_manifest("modwave", cfg, out)?;
    Ok(vec![wave, json, manifest])
}

#[derive(Debug, Serialize)]
struct RefSummary {
    transition: TransitionFit,
    period_detected: f64,
    period_nominal: f64,
    theta_max_deg: f64,
    /// Fraction of one revolution spent fully blocked.
    zero_plateau_duty: f64,
    unit_plateau_duty: f64,
}

pub fn refsignal(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    prepare(out)?;
    let sw = &cfg.switch;
    let geom = sw.geometry.to_geometry();
    let n_rev = sw.samples_per_rev;
    let grid = TimeGrid::new(1.0 / (sw.f_rot * n_rev as f64), n_rev * sw.revolutions, 0.0)?;
    let wave = reference_waveform(&geom, &grid, sw.f_rot)?;

    let mut csv = String::from("t,theta_deg,value\n");
    for (t, v) in grid.times().zip(wave.values()) {
        let theta = (360.0 * sw.f_rot * t).rem_euclid(360.0);
        writeln!(csv, "{t:.16e},{theta:.16e},{v:.16e}").expect("string write");
    }
    let wave_path = out.join("reference.csv");
    write_text(&wave_path, &csv)?;

    let first_rev = &wave.values()[..n_rev];
    let duty = |pred: fn(f64) -> bool| first_rev.iter().filter(|&&v| pred(v)).count() as f64 / n_rev as f64;
    let summary = RefSummary {
        transition: fit_trapezoid_cosine(&wave, sw.f_rot)?,
        period_detected: detect_period(&wave, sw.threshold)?,
        period_nominal: 1.0 / sw.f_rot,
        theta_max_deg: geom.theta_max().to_degrees(),
        zero_plateau_duty: duty(|v| v <= 1e-12),
        unit_plateau_duty: duty(|v| v >= 1.0 - 1e-12),
    };
    let json = out.join("trapezoid.json");
    write_json(&json, &summary)?;
    let manifest = write_manifest("refsignal", cfg, out)?;
    log::info!(
        "reference period {:.6e} s (nominal {:.6e} s)",
        summary.period_detected,
        summary.period_nominal
    );
    Ok(vec![wave_path, json, manifest])
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    prepare(out)?;
    let result = run_simulation(&cfg.sim)?;
    let summary = report(&result, out)?;
    let mut files = summary.files;
    let down = out.join("restored_downsampled.csv");
    write_signal_csv(&down, &result.restored_downsampled)?;
    files.push(down);
    files.push(write_manifest("simulate", cfg, out)?);
    let m = &summary.metrics;
    log::info!(
        "down-sampled rms error {:.3e} (relative {:.3e}), {} spike windows",
        m.rms_error_downsampled,
        m.relative_rms_error_downsampled,
        m.spike_windows.len()
    );
    Ok(files)
}
