use std::f64::consts::{PI, TAU};

use proptest::prelude::*;

use rotor_lockin::lockin::{demod_gain, demodulate, split_even_odd, Channel};
use rotor_lockin::modulation::{modulation_series, ModulationFit};
use rotor_lockin::reference::{
    detect_period, fit_trapezoid_cosine, reference_waveform, synth_demod_reference, transmitted_fraction, RefKind,
    SpotGeometry, TrapezoidFit,
};
use rotor_lockin::signals::{downsample_at_phase, fit_harmonics, moving_integral, synth, SampledSignal, TimeGrid};
use rotor_lockin::sim::{run_simulation, NoiseSpec, SimConfig};
use rotor_lockin::HarmonicSeries;

const F_M: f64 = 2500.0;
const DT: f64 = 2e-6;

fn coeffs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn synth_then_fit_recovers_coefficients(dc in -2.0..2.0f64, c in coeffs(5), s in coeffs(5)) {
        let series = HarmonicSeries::new(F_M, dc, c.clone(), s.clone()).unwrap();
        let grid = TimeGrid::new(DT, 400, 0.0).unwrap();
        let fit = fit_harmonics(&synth(&series, &grid), F_M, 5).unwrap();
        prop_assert!((fit.series.dc() - dc).abs() < 1e-9);
        for (got, want) in fit.series.cos_coeffs().iter().zip(&c) {
            prop_assert!((got - want).abs() < 1e-9);
        }
        for (got, want) in fit.series.sin_coeffs().iter().zip(&s) {
            prop_assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn moving_integral_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, seed in any::<u64>()) {
        let grid = TimeGrid::new(DT, 600, 0.0).unwrap();
        let x = SampledSignal::from_fn(grid, |t| (t * 1e4 + seed as f64 % 7.0).sin()).unwrap();
        let y = SampledSignal::from_fn(grid, |t| (t * 3e3).cos() + t * 100.0).unwrap();
        let combo = x.zip_with(&y, |p, q| a * p + b * q).unwrap();
        let w = 200.0 * DT;
        let (mx, my, mc) = (
            moving_integral(&x, w).unwrap(),
            moving_integral(&y, w).unwrap(),
            moving_integral(&combo, w).unwrap(),
        );
        for i in 0..grid.len() {
            let want = a * mx.signal.values()[i] + b * my.signal.values()[i];
            prop_assert!((mc.signal.values()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn downsampled_periodic_signal_is_constant(c in coeffs(3), s in coeffs(3), phase in 0.0..TAU) {
        let series = HarmonicSeries::new(F_M, 0.3, c, s).unwrap();
        let grid = TimeGrid::new(DT, 2000, 0.0).unwrap();
        let d = downsample_at_phase(&synth(&series, &grid), F_M, phase).unwrap();
        let first = d.values()[0];
        prop_assert!(d.values().iter().all(|v| (v - first).abs() < 1e-9));
    }

    #[test]
    fn transmitted_fraction_bounded_and_periodic(theta in -10.0..10.0f64) {
        let geom = SpotGeometry::default();
        let f = transmitted_fraction(&geom, theta).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let g = transmitted_fraction(&geom, theta + TAU).unwrap();
        prop_assert!((f - g).abs() < 1e-9);
    }

    #[test]
    fn demodulation_is_linear(a in -5.0..5.0f64, b in -5.0..5.0f64) {
        let grid = TimeGrid::new(DT, 1200, 0.0).unwrap();
        let m = modulation_series(&ModulationFit::default(), F_M).unwrap();
        let r = split_even_odd(&synth_demod_reference(1.0 / F_M, RefKind::Square, 7, PI / 6.0).unwrap());
        let gain = demod_gain(&m, &r).unwrap();
        let mw = synth(&m, &grid);
        let s1 = SampledSignal::from_fn(grid, |t| (TAU * 50.0 * t).sin()).unwrap();
        let s2 = SampledSignal::from_fn(grid, |t| 0.4 + (TAU * 120.0 * t).cos()).unwrap();
        let restore = |s: &SampledSignal| {
            let sm = s.zip_with(&mw, |x, y| x * y).unwrap();
            demodulate(&sm, &r, &gain, Channel::Even).unwrap().signal.into_values()
        };
        let combo = s1.zip_with(&s2, |x, y| a * x + b * y).unwrap();
        let (r1, r2, rc) = (restore(&s1), restore(&s2), restore(&combo));
        for i in 0..rc.len() {
            let want = a * r1[i] + b * r2[i];
            prop_assert!((rc[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn noise_seed_only_matters_in_spike_windows() {
    let base = SimConfig::default();
    let other = SimConfig {
        noise: NoiseSpec { seed: 99, ..base.noise },
        ..base.clone()
    };
    let (a, b) = (run_simulation(&base).unwrap(), run_simulation(&other).unwrap());
    assert_eq!(a.restored_downsampled.len(), b.restored_downsampled.len());
    let grid = *a.restored_downsampled.grid();
    for k in 0..a.restored_downsampled.len() {
        if a.metrics.warmup_windows.contains(&k) || a.block_has_step(k) || b.block_has_step(k) {
            continue;
        }
        let truth = base.signal_at(grid.time(k));
        for v in [a.restored_downsampled.values()[k], b.restored_downsampled.values()[k]] {
            // a constant noise level is rejected, so only the signal remains
            assert!((v - truth).abs() < 0.05, "window {k}: {v} vs {truth}");
        }
    }
}

#[test]
fn default_transition_is_close_to_cosine() {
    let geom = SpotGeometry::default();
    let f_rot = 50.0;
    // two revolutions at 7200 samples each
    let grid = TimeGrid::new(1.0 / (f_rot * 7200.0), 14400, 0.0).unwrap();
    let wave = reference_waveform(&geom, &grid, f_rot).unwrap();
    let fit = fit_trapezoid_cosine(&wave, f_rot).unwrap();
    assert!(fit.samples >= 5);
    assert!(fit.residual_rms < 0.02, "residual {}", fit.residual_rms);
    // the fitted half period spans the transition width
    let half_period = PI / fit.fit.u;
    let width = 2.0 * geom.theta_max();
    assert!((half_period / width - 1.0).abs() < 0.3, "{half_period} vs {width}");
}

#[test]
fn published_curve_spans_the_whole_dip() {
    let published = TrapezoidFit {
        b: 2.653,
        u: -4.8316,
        phi: 4.4065,
        c2: 4.1773,
    }
    .canonical();
    let half_period = PI / published.u;
    let geom = SpotGeometry::default();
    let dip = geom.theta_gnd + 2.0 * geom.theta_max();
    assert!((half_period / dip - 1.0).abs() < 0.1, "{half_period} vs {dip}");
    // swing from c2 - B to c2 + B stays positive, like a raw intensity
    assert!(published.c2 - published.b > 0.0);
}

#[test]
fn default_reference_period_is_detected() {
    let geom = SpotGeometry::default();
    let f_rot = 2500.0;
    let grid = TimeGrid::from_duration(DT, 0.004).unwrap();
    let wave = reference_waveform(&geom, &grid, f_rot).unwrap();
    let period = detect_period(&wave, 0.5).unwrap();
    assert!((period * f_rot - 1.0).abs() < 1e-6, "period {period}");
}
