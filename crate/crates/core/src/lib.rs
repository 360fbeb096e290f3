//! Simulation and demodulation toolkit for a rotating-electrode optical
//! voltage sensor: modulated intensity, optical-switch reference, and a
//! lock-in demodulator that tolerates non-sinusoidal modulation and
//! reference waveforms.

pub mod error;
pub mod lockin;
pub mod modulation;
pub mod quadrature;
pub mod reference;
pub mod signals;
pub mod sim;

pub use error::{Error, Result};
pub use signals::{HarmonicSeries, SampledSignal, TimeGrid, WindowedSignal};
