//! Uniformly sampled signals and the harmonic machinery shared by the rest of
//! the crate: synthesis from a truncated Fourier series, least-squares
//! harmonic fitting, the delayed-integrator moving integral and phase-locked
//! down-sampling.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed when a ratio of two floats must be an integer.
const INTEGER_RATIO_TOL: f64 = 1e-9;

/// Returns `x` rounded to an integer when it is one up to [`INTEGER_RATIO_TOL`].
pub(crate) fn integer_ratio(x: f64, what: &'static str) -> Result<usize> {
    let k = x.round();
    if !x.is_finite() || k < 1.0 || (x - k).abs() > INTEGER_RATIO_TOL * k.max(1.0) {
        return Err(Error::NonIntegerRatio { what, ratio: x });
    }
    Ok(k as usize)
}

/// Sample times `t0 + i * dt` for `i in 0..n`. Times are always recomputed
/// from the triple, never accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    dt: f64,
    n: usize,
    t0: f64,
}

impl TimeGrid {
    pub fn new(dt: f64, n: usize, t0: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if n == 0 {
            return Err(Error::InvalidGrid("sample count must be at least 1".into()));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidGrid(format!("t0 must be finite, got {t0}")));
        }
        Ok(Self { dt, n, t0 })
    }

    /// Grid starting at `t0 = 0` covering `duration` seconds; `duration / dt`
    /// must be an integer.
    pub fn from_duration(dt: f64, duration: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        let n = integer_ratio(duration / dt, "duration/dt")?;
        Self::new(dt, n, 0.0)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.time(i))
    }

    /// `n * dt`.
    pub fn span(&self) -> f64 {
        self.n as f64 * self.dt
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    /// Same spacing and length, start moved by `offset` seconds.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            t0: self.t0 + offset,
            ..*self
        }
    }

    /// Number of samples per period of `freq`; errors unless it is an integer.
    pub fn samples_per_period(&self, freq: f64) -> Result<usize> {
        integer_ratio(1.0 / (freq * self.dt), "sample-rate/frequency")
    }

    fn same_as(&self, other: &TimeGrid) -> bool {
        self.n == other.n && self.dt == other.dt && self.t0 == other.t0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl SampledSignal {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                values: values.len(),
                samples: grid.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.times().map(f).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same values re-stamped on `grid.shifted(offset)`.
    pub fn shifted(self, offset: f64) -> Self {
        Self {
            grid: self.grid.shifted(offset),
            values: self.values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two signals on identical grids.
    pub fn zip_with(&self, other: &SampledSignal, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.grid, values)
    }

    pub fn ensure_same_grid(&self, other: &SampledSignal) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )))
        }
    }

    /// Root mean square of the values.
    pub fn rms(&self) -> f64 {
        rms(&self.values)
    }

    /// Writes `t,value` CSV with 17 significant digits per field.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{:.16e},{:.16e}", self.grid.time(i), v)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    /// Parses `t,value` CSV. The grid is reconstructed from the first two
    /// timestamps and checked against every subsequent row.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io("<csv>", e))?
            .unwrap_or_default();
        if header.trim() != "t,value" {
            return Err(Error::Config(format!("bad csv header {header:?}")));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<csv>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|s| s.trim().parse().ok()).ok_or_else(|| {
                    Error::Config(format!("csv line {}: cannot parse {line:?}", lineno + 2))
                })
            };
            let mut fields = line.split(',');
            times.push(parse(fields.next())?);
            values.push(parse(fields.next())?);
        }
        if times.is_empty() {
            return Err(Error::Config("csv has no samples".into()));
        }
        let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        let grid = TimeGrid::new(dt, times.len(), times[0])?;
        for (i, &t) in times.iter().enumerate() {
            if (t - grid.time(i)).abs() > 1e-9 * dt.max(t.abs()) {
                return Err(Error::InvalidGrid(format!("csv row {i} is not uniformly spaced")));
            }
        }
        Self::new(grid, values)
    }
}

pub(crate) fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Truncated Fourier series
/// `dc + sum_j cos_coeffs[j-1] cos(2 pi j f t) + sin_coeffs[j-1] sin(2 pi j f t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicSeries {
    f_fund: f64,
    dc: f64,
    cos_coeffs: Vec<f64>,
    sin_coeffs: Vec<f64>,
}

impl HarmonicSeries {
    pub fn new(f_fund: f64, dc: f64, cos_coeffs: Vec<f64>, sin_coeffs: Vec<f64>) -> Result<Self> {
        if !(f_fund.is_finite() && f_fund > 0.0) {
            return Err(Error::InvalidSeries(format!(
                "fundamental must be positive, got {f_fund}"
            )));
        }
        if cos_coeffs.len() != sin_coeffs.len() {
            return Err(Error::InvalidSeries(format!(
                "{} cosine vs {} sine coefficients",
                cos_coeffs.len(),
                sin_coeffs.len()
            )));
        }
        if cos_coeffs.is_empty() {
            return Err(Error::InvalidSeries("at least one harmonic required".into()));
        }
        let all_finite = dc.is_finite()
            && cos_coeffs.iter().chain(&sin_coeffs).all(|c| c.is_finite());
        if !all_finite {
            return Err(Error::InvalidSeries("coefficients must be finite".into()));
        }
        Ok(Self {
            f_fund,
            dc,
            cos_coeffs,
            sin_coeffs,
        })
    }

    pub fn f_fund(&self) -> f64 {
        self.f_fund
    }

    pub fn period(&self) -> f64 {
        1.0 / self.f_fund
    }

    pub fn dc(&self) -> f64 {
        self.dc
    }

    pub fn cos_coeffs(&self) -> &[f64] {
        &self.cos_coeffs
    }

    pub fn sin_coeffs(&self) -> &[f64] {
        &self.sin_coeffs
    }

    /// Number of harmonics `l`.
    pub fn harmonics(&self) -> usize {
        self.cos_coeffs.len()
    }

    /// Evaluates at time `t`. The argument is reduced modulo one period
    /// before scaling so that `eval(t)` and `eval(t + period)` agree.
    pub fn eval(&self, t: f64) -> f64 {
        let cycles = (t * self.f_fund).rem_euclid(1.0);
        self.eval_phase(2.0 * PI * cycles)
    }

    /// Evaluates at fundamental phase `theta` (radians).
    pub fn eval_phase(&self, theta: f64) -> f64 {
        let mut acc = self.dc;
        for (j, (c, s)) in self.cos_coeffs.iter().zip(&self.sin_coeffs).enumerate() {
            let arg = (j + 1) as f64 * theta;
            acc += c * arg.cos() + s * arg.sin();
        }
        acc
    }

    /// Same waveform delayed by `tau` seconds: `x(t - tau)`.
    pub fn delayed(&self, tau: f64) -> Self {
        let base = 2.0 * PI * self.f_fund * tau;
        let (cos_coeffs, sin_coeffs) = self
            .cos_coeffs
            .iter()
            .zip(&self.sin_coeffs)
            .enumerate()
            .map(|(j, (&c, &s))| {
                let (sn, cs) = ((j + 1) as f64 * base).sin_cos();
                (c * cs - s * sn, c * sn + s * cs)
            })
            .unzip();
        Self {
            cos_coeffs,
            sin_coeffs,
            ..self.clone()
        }
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            f_fund: self.f_fund,
            dc: self.dc * gain,
            cos_coeffs: self.cos_coeffs.iter().map(|c| c * gain).collect(),
            sin_coeffs: self.sin_coeffs.iter().map(|c| c * gain).collect(),
        }
    }
}

pub fn synth(series: &HarmonicSeries, grid: &TimeGrid) -> SampledSignal {
    let values = grid.times().map(|t| series.eval(t)).collect();
    SampledSignal::new(*grid, values).expect("a valid series evaluates to finite samples")
}

/// Result of [`fit_harmonics`].
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicFit {
    pub series: HarmonicSeries,
    pub residual_rms: f64,
    /// Samples used: the largest whole number of periods in the signal.
    pub samples_used: usize,
}

/// Least-squares fit of an `l`-harmonic series at `f_fund` over the largest
/// whole number of periods contained in `signal`.
pub fn fit_harmonics(signal: &SampledSignal, f_fund: f64, l: usize) -> Result<HarmonicFit> {
    if !(f_fund.is_finite() && f_fund > 0.0) {
        return Err(Error::InvalidSeries(format!(
            "fundamental must be positive, got {f_fund}"
        )));
    }
    if l == 0 {
        return Err(Error::InvalidSeries("at least one harmonic required".into()));
    }
    let grid = signal.grid();
    let unknowns = 2 * l + 1;
    let per_period = 1.0 / (f_fund * grid.dt());
    if per_period < unknowns as f64 {
        return Err(Error::SpanTooShort {
            needed: unknowns,
            available: per_period.floor() as usize,
        });
    }
    let periods = (grid.span() * f_fund * (1.0 + INTEGER_RATIO_TOL)).floor();
    if periods < 1.0 {
        return Err(Error::SpanTooShort {
            needed: per_period.ceil() as usize,
            available: grid.len(),
        });
    }
    let m = ((periods * per_period).round() as usize).min(grid.len());

    let omega = 2.0 * PI * f_fund;
    let design = DMatrix::from_fn(m, unknowns, |i, col| {
        if col == 0 {
            return 1.0;
        }
        let j = col.div_ceil(2);
        let arg = j as f64 * omega * grid.time(i);
        if col % 2 == 1 {
            arg.cos()
        } else {
            arg.sin()
        }
    });
    let rhs = DVector::from_column_slice(&signal.values()[..m]);
    let solution = design
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::InvalidSeries(format!("least squares failed: {e}")))?;
    let residual = &design * &solution - &rhs;
    let residual_rms = (residual.norm_squared() / m as f64).sqrt();

    let cos_coeffs = (0..l).map(|j| solution[2 * j + 1]).collect();
    let sin_coeffs = (0..l).map(|j| solution[2 * j + 2]).collect();
    Ok(HarmonicFit {
        series: HarmonicSeries::new(f_fund, solution[0], cos_coeffs, sin_coeffs)?,
        residual_rms,
        samples_used: m,
    })
}

/// Output of a windowed operation whose first `warmup` samples are undefined:
/// their window reaches before the start of the input. Warm-up values hold
/// the partial integral from the first sample and must not be treated as data.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSignal {
    pub signal: SampledSignal,
    pub warmup: usize,
}

impl WindowedSignal {
    pub fn is_valid(&self, i: usize) -> bool {
        i >= self.warmup && i < self.signal.len()
    }

    /// Valid (post warm-up) values.
    pub fn valid_values(&self) -> &[f64] {
        &self.signal.values()[self.warmup.min(self.signal.len())..]
    }
}

/// Running integral over the trailing `window` seconds,
/// `out[i] = C[i] - C[i - w]` with `C` the cumulative trapezoid sum and
/// `w = window / dt`.
pub fn moving_integral(signal: &SampledSignal, window: f64) -> Result<WindowedSignal> {
    let grid = *signal.grid();
    let w = integer_ratio(window / grid.dt(), "window/dt")?;
    if w > grid.len() {
        return Err(Error::SpanTooShort {
            needed: w,
            available: grid.len(),
        });
    }
    let values = signal.values();
    let half_dt = 0.5 * grid.dt();
    let mut cumulative = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for pair in values.windows(2) {
        acc += (pair[0] + pair[1]) * half_dt;
        cumulative.push(acc);
    }
    let out = cumulative
        .iter()
        .enumerate()
        .map(|(i, &c)| if i >= w { c - cumulative[i - w] } else { c })
        .collect();
    Ok(WindowedSignal {
        signal: SampledSignal::new(grid, out)?,
        warmup: w,
    })
}

/// Indices of the samples nearest modulation phase `phase` (radians,
/// referenced to `t = 0`), one per modulation period.
pub fn phase_indices(grid: &TimeGrid, f_m: f64, phase: f64) -> Result<Vec<usize>> {
    let per = grid.samples_per_period(f_m)? as i64;
    let target = phase / (2.0 * PI * f_m);
    let offset = ((target - grid.t0()) / grid.dt()).round() as i64;
    let first = offset.rem_euclid(per) as usize;
    if first >= grid.len() {
        return Err(Error::SpanTooShort {
            needed: first + 1,
            available: grid.len(),
        });
    }
    Ok((first..grid.len()).step_by(per as usize).collect())
}

/// Keeps one sample per modulation period, the one nearest `phase`.
pub fn downsample_at_phase(signal: &SampledSignal, f_m: f64, phase: f64) -> Result<SampledSignal> {
    let grid = signal.grid();
    let idx = phase_indices(grid, f_m, phase)?;
    let per = grid.samples_per_period(f_m)?;
    let out_grid = TimeGrid::new(per as f64 * grid.dt(), idx.len(), grid.time(idx[0]))?;
    SampledSignal::new(out_grid, idx.iter().map(|&i| signal.values()[i]).collect())
}

pub fn rms_error(a: &SampledSignal, b: &SampledSignal) -> Result<f64> {
    a.ensure_same_grid(b)?;
    let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    Ok(rms(&diff))
}
