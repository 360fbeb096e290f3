//! End-to-end scenario: a slow signal is multiplied by the rotating-electrode
//! modulation, disturbed by low-frequency noise, demodulated against a
//! delayed digital reference and down-sampled once per modulation period.

use std::f64::consts::{PI, TAU};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lockin::{calibrate_gain, demod_gain, demodulate, modulate, split_even_odd, Channel};
use crate::modulation::{modulation_series, ModulationFit};
use crate::reference::{synth_demod_reference, RefKind};
use crate::signals::{phase_indices, rms, synth, SampledSignal, TimeGrid, WindowedSignal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Step,
    Sine,
    None,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(NoiseKind::Step),
            "sine" => Ok(NoiseKind::Sine),
            "none" => Ok(NoiseKind::None),
            other => Err(Error::Config(format!("unknown noise kind {other:?}"))),
        }
    }
}

/// Additive disturbance. `rate_or_freq` is the mean switching rate of step
/// noise or the frequency of sine noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub amplitude: f64,
    pub rate_or_freq: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Step,
            amplitude: 10.0,
            rate_or_freq: 500.0,
            seed: 1,
        }
    }
}

impl NoiseSpec {
    pub fn sine_birefringence() -> Self {
        Self {
            kind: NoiseKind::Sine,
            amplitude: 10.0,
            rate_or_freq: 10.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::Config(format!(
                "noise amplitude must be non-negative, got {}",
                self.amplitude
            )));
        }
        if !(self.rate_or_freq.is_finite() && self.rate_or_freq >= 0.0) {
            return Err(Error::Config(format!(
                "noise rate/frequency must be non-negative, got {}",
                self.rate_or_freq
            )));
        }
        Ok(())
    }
}

/// A noise realization and the sample indices at which step noise changes
/// level (the level at `steps[k]` differs from the one before it).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrace {
    pub signal: SampledSignal,
    pub steps: Vec<usize>,
}

pub fn generate_noise(spec: &NoiseSpec, grid: &TimeGrid) -> Result<NoiseTrace> {
    spec.validate()?;
    let amp = spec.amplitude;
    match spec.kind {
        NoiseKind::None => Ok(NoiseTrace {
            signal: SampledSignal::constant(*grid, 0.0)?,
            steps: Vec::new(),
        }),
        NoiseKind::Sine => Ok(NoiseTrace {
            signal: SampledSignal::from_fn(*grid, |t| amp * (TAU * spec.rate_or_freq * t).sin())?,
            steps: Vec::new(),
        }),
        NoiseKind::Step => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let level = |rng: &mut ChaCha8Rng| {
                if amp > 0.0 {
                    rng.random_range(-amp..=amp)
                } else {
                    0.0
                }
            };
            let interval = (spec.rate_or_freq > 0.0)
                .then(|| Exp::new(spec.rate_or_freq).expect("positive rate"));
            let mut current = level(&mut rng);
            let mut next_switch = match &interval {
                Some(exp) => grid.t0() + exp.sample(&mut rng),
                None => f64::INFINITY,
            };
            let mut values = Vec::with_capacity(grid.len());
            let mut steps = Vec::new();
            for (i, t) in grid.times().enumerate() {
                if t >= next_switch {
                    let exp = interval.as_ref().expect("finite switch time needs a rate");
                    while t >= next_switch {
                        next_switch += exp.sample(&mut rng);
                    }
                    current = level(&mut rng);
                    steps.push(i);
                }
                values.push(current);
            }
            Ok(NoiseTrace {
                signal: SampledSignal::new(*grid, values)?,
                steps,
            })
        }
    }
}

pub fn gen_noise(spec: &NoiseSpec, grid: &TimeGrid) -> Result<SampledSignal> {
    Ok(generate_noise(spec, grid)?.signal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub f_m: f64,
    pub signal_freq: f64,
    pub signal_amp: f64,
    pub ref_kind: RefKind,
    /// Delay of the reference behind the modulation, radians of the
    /// fundamental.
    pub ref_phase_delay: f64,
    pub noise: NoiseSpec,
    pub downsample_phase: f64,
    pub modulation: ModulationFit,
    /// Harmonics kept in the square reference.
    pub ref_harmonics: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 2e-6,
            duration: 0.03,
            f_m: 2500.0,
            signal_freq: 50.0,
            signal_amp: 1.0,
            ref_kind: RefKind::Square,
            ref_phase_delay: PI / 6.0,
            noise: NoiseSpec::default(),
            downsample_phase: 0.0,
            modulation: ModulationFit::default(),
            ref_harmonics: 7,
        }
    }
}

impl SimConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_duration(self.dt, self.duration)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        if !(self.f_m.is_finite() && self.f_m > 0.0) {
            return Err(Error::Config(format!("f_m must be positive, got {}", self.f_m)));
        }
        grid.samples_per_period(self.f_m)?;
        let finite = [
            self.signal_freq,
            self.signal_amp,
            self.ref_phase_delay,
            self.downsample_phase,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("signal and phase parameters must be finite".into()));
        }
        if self.ref_harmonics == 0 {
            return Err(Error::Config("ref_harmonics must be at least 1".into()));
        }
        self.noise.validate()?;
        self.modulation.validate()
    }

    pub fn signal_at(&self, t: f64) -> f64 {
        self.signal_amp * (TAU * self.signal_freq * t).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    /// RMS of restored minus signal over valid full-rate samples whose
    /// integration window holds no noise step.
    pub rms_error_full: f64,
    /// RMS of restored minus signal over down-sampled windows, excluding
    /// warm-up and spike windows.
    pub rms_error_downsampled: f64,
    /// `rms_error_downsampled` over the RMS of the signal at the same points.
    pub relative_rms_error_downsampled: f64,
    /// Largest per-window RMS deviation of the full-rate restored signal,
    /// relative to the signal amplitude, over windows without a step.
    pub max_clean_window_deviation: f64,
    pub noise_to_signal_rms: f64,
    /// Nyquist limit of the down-sampled channel, `f_m / 2`.
    pub bandwidth_hz: f64,
    pub downsampled_len: usize,
    pub spike_windows: Vec<usize>,
    pub warmup_windows: Vec<usize>,
    pub calibrated_gain: f64,
    /// Gain assumed by a demodulator that ignores the reference delay; a
    /// negative ratio to `calibrated_gain` means that uncalibrated output is
    /// inverted (180 degrees out of phase).
    pub nominal_gain: f64,
    pub channel: Channel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub original: SampledSignal,
    pub noise: SampledSignal,
    pub modulated: SampledSignal,
    pub modulated_noisy: SampledSignal,
    pub restored_full: WindowedSignal,
    pub restored_downsampled: SampledSignal,
    /// Index into `restored_full` of each down-sampled point.
    pub downsample_indices: Vec<usize>,
    pub step_indices: Vec<usize>,
    pub samples_per_period: usize,
    pub metrics: SimMetrics,
}

impl SimResult {
    /// Whether the integration window of restored sample `i` spans a noise
    /// step, i.e. a step lands in `(i - window, i]`.
    pub fn window_has_step(&self, i: usize) -> bool {
        let lo = i.saturating_sub(self.samples_per_period);
        let first = self.step_indices.partition_point(|&s| s <= lo);
        self.step_indices.get(first).is_some_and(|&s| s <= i)
    }

    /// Full-rate samples attributed to down-sampled window `k`: those whose
    /// window centre falls in the same modulation period.
    pub fn window_block(&self, k: usize) -> std::ops::Range<usize> {
        let centre = self.downsample_indices[k];
        let half = self.samples_per_period / 2;
        let lo = centre.saturating_sub(half).max(self.restored_full.warmup);
        let hi = (centre + self.samples_per_period - half).min(self.restored_full.signal.len());
        lo..hi.max(lo)
    }

    pub fn block_has_step(&self, k: usize) -> bool {
        self.window_block(k).any(|i| self.window_has_step(i))
    }
}

/// Truth for the restored signal at its own time stamps.
pub fn signal_on(cfg: &SimConfig, grid: &TimeGrid) -> Result<SampledSignal> {
    SampledSignal::from_fn(*grid, |t| cfg.signal_at(t))
}

pub fn run_simulation(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let per = grid.samples_per_period(cfg.f_m)?;

    let original = signal_on(cfg, &grid)?;
    let m_series = modulation_series(&cfg.modulation, cfg.f_m)?;
    let m_signal = synth(&m_series, &grid);
    let ref_series = synth_demod_reference(
        1.0 / cfg.f_m,
        cfg.ref_kind,
        cfg.ref_harmonics,
        cfg.ref_phase_delay,
    )?;
    let reference = split_even_odd(&ref_series);
    let noise = generate_noise(&cfg.noise, &grid)?;

    let modulated = modulate(&original, &m_signal)?;
    let modulated_noisy = modulated.zip_with(&noise.signal, |a, b| a + b)?;

    let gain = calibrate_gain(&m_signal, &reference)?;
    let channel = gain.preferred();
    let restored_full = demodulate(&modulated_noisy, &reference, &gain, channel)?;

    let aligned = synth_demod_reference(1.0 / cfg.f_m, cfg.ref_kind, cfg.ref_harmonics, 0.0)?;
    let nominal = demod_gain(&m_series, &split_even_odd(&aligned))
        .map(|g| g.get(channel))
        .unwrap_or(0.0);

    let restored_grid = *restored_full.signal.grid();
    let downsample_indices = phase_indices(&restored_grid, cfg.f_m, cfg.downsample_phase)?;
    let restored_downsampled = SampledSignal::new(
        TimeGrid::new(
            per as f64 * grid.dt(),
            downsample_indices.len(),
            restored_grid.time(downsample_indices[0]),
        )?,
        downsample_indices
            .iter()
            .map(|&i| restored_full.signal.values()[i])
            .collect(),
    )?;

    let mut result = SimResult {
        original,
        noise: noise.signal,
        modulated,
        modulated_noisy,
        restored_full,
        restored_downsampled,
        downsample_indices,
        step_indices: noise.steps,
        samples_per_period: per,
        metrics: SimMetrics {
            rms_error_full: 0.0,
            rms_error_downsampled: 0.0,
            relative_rms_error_downsampled: 0.0,
            max_clean_window_deviation: 0.0,
            noise_to_signal_rms: 0.0,
            bandwidth_hz: cfg.f_m / 2.0,
            downsampled_len: 0,
            spike_windows: Vec::new(),
            warmup_windows: Vec::new(),
            calibrated_gain: gain.get(channel),
            nominal_gain: nominal,
            channel,
        },
    };
    result.metrics = compute_metrics(cfg, &result)?;
    Ok(result)
}

fn compute_metrics(cfg: &SimConfig, r: &SimResult) -> Result<SimMetrics> {
    let restored = &r.restored_full;
    let truth = signal_on(cfg, restored.signal.grid())?;
    let err = |i: usize| restored.signal.values()[i] - truth.values()[i];

    let clean_full: Vec<f64> = (restored.warmup..restored.signal.len())
        .filter(|&i| !r.window_has_step(i))
        .map(err)
        .collect();

    let mut spike_windows = Vec::new();
    let mut warmup_windows = Vec::new();
    let (mut ds_err, mut ds_truth) = (Vec::new(), Vec::new());
    for (k, &i) in r.downsample_indices.iter().enumerate() {
        if !restored.is_valid(i) {
            warmup_windows.push(k);
        } else if r.window_has_step(i) {
            spike_windows.push(k);
        } else {
            ds_err.push(err(i));
            ds_truth.push(truth.values()[i]);
        }
    }

    let amp = cfg.signal_amp.abs().max(f64::MIN_POSITIVE);
    let max_clean_window_deviation = (0..r.downsample_indices.len())
        .filter(|&k| !r.block_has_step(k))
        .map(|k| {
            let block: Vec<f64> = r.window_block(k).map(err).collect();
            rms(&block) / amp
        })
        .fold(0.0, f64::max);

    let rms_ds = rms(&ds_err);
    let truth_rms = rms(&ds_truth);
    Ok(SimMetrics {
        rms_error_full: rms(&clean_full),
        rms_error_downsampled: rms_ds,
        relative_rms_error_downsampled: if truth_rms > 0.0 { rms_ds / truth_rms } else { rms_ds },
        max_clean_window_deviation,
        noise_to_signal_rms: {
            let s = r.modulated.rms();
            if s > 0.0 {
                r.noise.rms() / s
            } else {
                f64::INFINITY
            }
        },
        bandwidth_hz: cfg.f_m / 2.0,
        downsampled_len: r.restored_downsampled.len(),
        spike_windows,
        warmup_windows,
        ..r.metrics.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    pub metrics: SimMetrics,
}

pub const REPORT_FILES: [&str; 5] = [
    "noise.csv",
    "modulated.csv",
    "modulated_noisy.csv",
    "restored.csv",
    "metrics.json",
];

pub(crate) fn write_csv_file(path: &Path, signal: &SampledSignal) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    signal.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

/// Writes the noise, modulated, noisy modulated and restored traces as CSV
/// plus `metrics.json` into `out_dir`.
pub fn report(result: &SimResult, out_dir: &Path) -> Result<ReportSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let traces = [
        &result.noise,
        &result.modulated,
        &result.modulated_noisy,
        &result.restored_full.signal,
    ];
    let mut files = Vec::new();
    for (name, signal) in REPORT_FILES.iter().zip(traces) {
        let path = out_dir.join(name);
        write_csv_file(&path, signal)?;
        files.push(path);
    }
    let path = out_dir.join(REPORT_FILES[4]);
    let json = serde_json::to_string_pretty(&result.metrics)
        .map_err(|e| Error::Config(format!("cannot encode metrics: {e}")))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(ReportSummary {
        files,
        metrics: result.metrics.clone(),
    })
}

/// Writes one signal as `t,value` CSV.
pub fn write_signal_csv(path: &Path, signal: &SampledSignal) -> Result<()> {
    write_csv_file(path, signal)
}
