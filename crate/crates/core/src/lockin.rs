//! Lock-in demodulation for non-sinusoidal modulation and reference
//! waveforms.
//!
//! The reference is split into its cosine ("even") and sine ("odd") parts.
//! Multiplying the modulated signal by one part and integrating over a
//! modulation period `T_m` leaves `S (T_m / 2) sum_j m^j r^j`, the cross
//! products of unequal harmonics vanishing by orthogonality. Dividing by
//! `(T_m / 2)` and the coefficient dot product (the gain) recovers `S`.
//!
//! Restored samples are stamped at the centre of their integration window,
//! which is where the window average of a slowly varying `S` is taken.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::signals::{
    moving_integral, synth, HarmonicSeries, SampledSignal, TimeGrid, WindowedSignal,
};

/// Gains at or below this magnitude make a channel unusable.
pub const DEFAULT_GAIN_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Even,
    Odd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemodReference {
    even: HarmonicSeries,
    odd: HarmonicSeries,
}

impl DemodReference {
    pub fn even(&self) -> &HarmonicSeries {
        &self.even
    }

    pub fn odd(&self) -> &HarmonicSeries {
        &self.odd
    }

    pub fn channel(&self, channel: Channel) -> &HarmonicSeries {
        match channel {
            Channel::Even => &self.even,
            Channel::Odd => &self.odd,
        }
    }

    pub fn f_m(&self) -> f64 {
        self.even.f_fund()
    }
}

/// Splits a reference into cosine-only and sine-only parts. The DC term is
/// dropped.
pub fn split_even_odd(r: &HarmonicSeries) -> DemodReference {
    let zeros = vec![0.0; r.harmonics()];
    let even = HarmonicSeries::new(r.f_fund(), 0.0, r.cos_coeffs().to_vec(), zeros.clone())
        .expect("coefficients of a valid series");
    let odd = HarmonicSeries::new(r.f_fund(), 0.0, zeros, r.sin_coeffs().to_vec())
        .expect("coefficients of a valid series");
    DemodReference { even, odd }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemodGain {
    pub g_even: f64,
    pub g_odd: f64,
    pub floor: f64,
}

impl DemodGain {
    pub fn new(g_even: f64, g_odd: f64) -> Result<Self> {
        Self::with_floor(g_even, g_odd, DEFAULT_GAIN_FLOOR)
    }

    pub fn with_floor(g_even: f64, g_odd: f64, floor: f64) -> Result<Self> {
        let gain = Self {
            g_even,
            g_odd,
            floor,
        };
        if !gain.usable(Channel::Even) && !gain.usable(Channel::Odd) {
            return Err(Error::UnusableReference(format!(
                "both channel gains ({g_even:e}, {g_odd:e}) are below the floor {floor:e}"
            )));
        }
        Ok(gain)
    }

    pub fn get(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Even => self.g_even,
            Channel::Odd => self.g_odd,
        }
    }

    pub fn usable(&self, channel: Channel) -> bool {
        self.get(channel).abs() > self.floor
    }

    /// The even channel when usable, otherwise the odd one.
    pub fn preferred(&self) -> Channel {
        if self.usable(Channel::Even) {
            Channel::Even
        } else {
            Channel::Odd
        }
    }
}

/// `S_m = M S`.
pub fn modulate(s: &SampledSignal, m: &SampledSignal) -> Result<SampledSignal> {
    s.zip_with(m, |a, b| a * b)
}

fn check_same_fundamental(m: &HarmonicSeries, r: &DemodReference) -> Result<()> {
    let (a, b) = (m.f_fund(), r.f_m());
    if (a - b).abs() > 1e-12 * a.max(b) {
        return Err(Error::UnusableReference(format!(
            "modulation at {a} Hz but reference at {b} Hz"
        )));
    }
    Ok(())
}

/// `(2 / T) sum_i x(t_i) y(t_i) dt` over one period, with enough samples
/// that products of the given series are integrated exactly.
fn period_projection(x: &HarmonicSeries, y: &HarmonicSeries) -> f64 {
    let n = 4 * (x.harmonics() + y.harmonics()) + 8;
    let dt = x.period() / n as f64;
    let grid = TimeGrid::new(dt, n, 0.0).expect("positive period");
    let (a, b) = (synth(x, &grid), synth(y, &grid));
    let sum: f64 = a.values().iter().zip(b.values()).map(|(p, q)| p * q).sum();
    2.0 * sum / n as f64
}

/// Coefficient dot products `sum_j m_x^j r_x^j` and `sum_j m_y^j r_y^j`,
/// checked against the numeric projection of `synth(m)` onto each
/// reference part over one period.
pub fn demod_gain(m: &HarmonicSeries, r: &DemodReference) -> Result<DemodGain> {
    check_same_fundamental(m, r)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let g_even = dot(m.cos_coeffs(), r.even.cos_coeffs());
    let g_odd = dot(m.sin_coeffs(), r.odd.sin_coeffs());
    for (symbolic, part) in [(g_even, &r.even), (g_odd, &r.odd)] {
        let numeric = period_projection(m, part);
        let scale = 1.0 + m.dc().abs() + symbolic.abs();
        if (numeric - symbolic).abs() > 1e-9 * scale {
            return Err(Error::GainMismatch { symbolic, numeric });
        }
    }
    DemodGain::new(g_even, g_odd)
}

/// Self-calibrated gain from one period of a sampled modulation waveform,
/// `(2 / T_m) * integral(M R_part)`. Valid whatever time offset separates
/// the modulation from the reference.
pub fn calibrate_gain(m: &SampledSignal, r: &DemodReference) -> Result<DemodGain> {
    let grid = m.grid();
    let per = grid.samples_per_period(r.f_m())?;
    if grid.len() < per {
        return Err(Error::SpanTooShort {
            needed: per,
            available: grid.len(),
        });
    }
    let project = |part: &HarmonicSeries| {
        let sum: f64 = (0..per)
            .map(|i| m.values()[i] * part.eval(grid.time(i)))
            .sum();
        2.0 * sum / per as f64
    };
    DemodGain::new(project(&r.even), project(&r.odd))
}

/// Restores `S` from `S_m` on one channel:
/// `(2 / T_m) * moving_integral(S_m * R_part, T_m) / gain`, stamped at the
/// window centre. The first period is warm-up.
pub fn demodulate(
    s_m: &SampledSignal,
    r: &DemodReference,
    gain: &DemodGain,
    channel: Channel,
) -> Result<WindowedSignal> {
    if !gain.usable(channel) {
        return Err(Error::UnusableReference(format!(
            "{channel:?} gain {:e} is below the floor {:e}",
            gain.get(channel),
            gain.floor
        )));
    }
    let grid = *s_m.grid();
    let per = grid.samples_per_period(r.f_m())?;
    let window = per as f64 * grid.dt();
    let part = synth(r.channel(channel), &grid);
    let mixed = modulate(s_m, &part)?;
    let integrated = moving_integral(&mixed, window)?;
    let scale = 2.0 / (window * gain.get(channel));
    let restored = integrated.signal.map(|v| v * scale)?.shifted(-0.5 * window);
    Ok(WindowedSignal {
        signal: restored,
        warmup: integrated.warmup,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicOutput {
    pub i: usize,
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "Y")]
    pub y: f64,
    pub magnitude: f64,
    /// `atan2(Y, X)`, radians.
    pub phase: f64,
}

impl HarmonicOutput {
    fn new(i: usize, x: f64, y: f64) -> Self {
        Self {
            i,
            x,
            y,
            magnitude: x.hypot(y),
            phase: y.atan2(x),
        }
    }
}

/// Per-harmonic quadrature outputs `X^i = m_x^i S_even`, `Y^i = m_y^i S_odd`
/// from the most recent complete window of `s_m`. A channel whose gain is
/// below the floor is replaced by the other channel's recovery.
pub fn harmonic_outputs(
    s_m: &SampledSignal,
    m: &HarmonicSeries,
    r: &DemodReference,
    gain: &DemodGain,
    i: usize,
) -> Result<HarmonicOutput> {
    all_harmonic_outputs(s_m, m, r, gain)?
        .into_iter()
        .nth(i.checked_sub(1).ok_or_else(|| bad_index(i, m))?)
        .ok_or_else(|| bad_index(i, m))
}

fn bad_index(i: usize, m: &HarmonicSeries) -> Error {
    Error::InvalidSeries(format!(
        "harmonic index {i} outside 1..={}",
        m.harmonics()
    ))
}

/// [`harmonic_outputs`] for every harmonic of `m`.
pub fn all_harmonic_outputs(
    s_m: &SampledSignal,
    m: &HarmonicSeries,
    r: &DemodReference,
    gain: &DemodGain,
) -> Result<Vec<HarmonicOutput>> {
    check_same_fundamental(m, r)?;
    let latest = |channel: Channel| -> Result<f64> {
        let restored = demodulate(s_m, r, gain, channel)?;
        if restored.warmup >= restored.signal.len() {
            return Err(Error::SpanTooShort {
                needed: restored.warmup + 1,
                available: restored.signal.len(),
            });
        }
        Ok(*restored.signal.values().last().expect("non-empty signal"))
    };
    let s_even = gain.usable(Channel::Even).then(|| latest(Channel::Even)).transpose()?;
    let s_odd = gain.usable(Channel::Odd).then(|| latest(Channel::Odd)).transpose()?;
    let s_x = s_even.or(s_odd).expect("at least one usable channel");
    let s_y = s_odd.unwrap_or(s_x);
    Ok(m
        .cos_coeffs()
        .iter()
        .zip(m.sin_coeffs())
        .enumerate()
        .map(|(k, (&mx, &my))| HarmonicOutput::new(k + 1, mx * s_x, my * s_y))
        .collect())
}

/// Writes `i,X,Y,magnitude,phase` rows.
pub fn write_harmonics_csv<W: std::io::Write>(mut w: W, rows: &[HarmonicOutput]) -> std::io::Result<()> {
    writeln!(w, "i,X,Y,magnitude,phase")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.i, r.x, r.y, r.magnitude, r.phase
        )?;
    }
    Ok(())
}

/// Unit cosine at `f`, handy for tests and calibration.
pub fn unit_cosine(f: f64) -> HarmonicSeries {
    HarmonicSeries::new(f, 0.0, vec![1.0], vec![0.0]).expect("positive frequency")
}
