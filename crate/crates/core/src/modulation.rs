//! Modulated light intensity as a function of electrode angle, and its
//! time-domain form at a given rotation frequency.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::HarmonicSeries;

/// Fitted amplitudes of the rotating-electrode intensity waveform.
pub const DEFAULT_AMPLITUDES: [f64; 7] = [0.366, 0.118, 0.032, 0.018, 5.4e-3, -6.2e-3, -4.3e-3];
/// Common phase of every harmonic, radians.
pub const DEFAULT_PHASE: f64 = -2.4e-5;
pub const DEFAULT_OFFSET: f64 = 0.471;

/// `f(alpha) = offset + sum_i amplitudes[i-1] cos(i alpha + phase)`.
///
/// One mechanical revolution of a single-blade electrode is one modulation
/// period; multi-blade electrodes are modeled by scaling the modulation
/// frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationFit {
    pub amplitudes: Vec<f64>,
    pub phase: f64,
    pub offset: f64,
}

impl Default for ModulationFit {
    fn default() -> Self {
        Self {
            amplitudes: DEFAULT_AMPLITUDES.to_vec(),
            phase: DEFAULT_PHASE,
            offset: DEFAULT_OFFSET,
        }
    }
}

impl ModulationFit {
    pub fn validate(&self) -> Result<()> {
        if self.amplitudes.is_empty() {
            return Err(Error::InvalidSeries("modulation needs at least one amplitude".into()));
        }
        let finite = self.phase.is_finite()
            && self.offset.is_finite()
            && self.amplitudes.iter().all(|a| a.is_finite());
        if !finite {
            return Err(Error::InvalidSeries("modulation parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn n_harmonics(&self) -> usize {
        self.amplitudes.len()
    }

    /// Recovers the common-phase form from an arbitrary series whose
    /// harmonics share one phase up to sign. The phase is taken from the
    /// doubled-angle average so negative amplitudes do not flip it, and is
    /// returned in `(-pi/2, pi/2]`.
    pub fn from_series(series: &HarmonicSeries) -> Self {
        let (mut num, mut den) = (0.0, 0.0);
        for (&a, &b) in series.cos_coeffs().iter().zip(series.sin_coeffs()) {
            // a = A cos(phi), b = -A sin(phi)
            num += -2.0 * a * b;
            den += a * a - b * b;
        }
        let mut phase = 0.5 * num.atan2(den);
        if phase <= -PI / 2.0 {
            phase += PI;
        }
        let (sn, cs) = phase.sin_cos();
        let amplitudes = series
            .cos_coeffs()
            .iter()
            .zip(series.sin_coeffs())
            .map(|(&a, &b)| a * cs - b * sn)
            .collect();
        Self {
            amplitudes,
            phase,
            offset: series.dc(),
        }
    }
}

/// Intensity at electrode angle `alpha` (radians).
pub fn eval_modulation(fit: &ModulationFit, alpha: f64) -> f64 {
    let alpha = alpha.rem_euclid(TAU);
    fit.offset
        + fit
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| a * ((i + 1) as f64 * alpha + fit.phase).cos())
            .sum::<f64>()
}

/// Time-domain series at rotation frequency `f_m`, so that
/// `synth(t) == eval_modulation(2 pi f_m t)`.
pub fn modulation_series(fit: &ModulationFit, f_m: f64) -> Result<HarmonicSeries> {
    fit.validate()?;
    let (sn, cs) = fit.phase.sin_cos();
    HarmonicSeries::new(
        f_m,
        fit.offset,
        fit.amplitudes.iter().map(|a| a * cs).collect(),
        fit.amplitudes.iter().map(|a| -a * sn).collect(),
    )
}
