//! Exit criteria for the toolkit. Each test prints one `PASS`/`FAIL` line;
//! run with `cargo test -p rotor-lockin --test acceptance -- --nocapture`.

use std::f64::consts::{PI, TAU};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rotor_lockin::lockin::{all_harmonic_outputs, calibrate_gain, split_even_odd};
use rotor_lockin::modulation::{eval_modulation, modulation_series, ModulationFit, DEFAULT_AMPLITUDES};
use rotor_lockin::reference::{synth_demod_reference, transmitted_fraction, RefKind, SpotGeometry};
use rotor_lockin::signals::{fit_harmonics, synth, TimeGrid};
use rotor_lockin::sim::{report, run_simulation, NoiseKind, NoiseSpec, SimConfig};

const F_M: f64 = 2500.0;
const DT: f64 = 2e-6;

fn verdict(id: u32, name: &str, ok: bool, detail: String) {
    println!("criterion {id} [{name}]: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} failed: {detail}");
}

#[test]
fn c1_table_round_trip() {
    let start = Instant::now();
    let fit = ModulationFit::default();
    let grid = TimeGrid::new(DT, 200, 0.0).unwrap();
    let one_period = synth(&modulation_series(&fit, F_M).unwrap(), &grid);
    let refit = fit_harmonics(&one_period, F_M, 7).unwrap();
    let back = ModulationFit::from_series(&refit.series);
    let mut worst: f64 = (back.offset - 0.471).abs();
    for (got, want) in back.amplitudes.iter().zip(DEFAULT_AMPLITUDES) {
        worst = worst.max((got - want).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "table round-trip",
        worst <= 1e-6 && elapsed < Duration::from_secs(1),
        format!("max coefficient error {worst:.2e}, phase {:.3e}, {elapsed:?}", back.phase),
    );
}

#[test]
fn c2_modulation_shape() {
    let fit = ModulationFit::default();
    let ratio = fit.amplitudes[1].abs() / fit.amplitudes[0].abs();
    let n = 7200;
    let alphas: Vec<f64> = (0..n).map(|k| TAU * k as f64 / n as f64).collect();
    let periodic = alphas
        .iter()
        .all(|&a| (eval_modulation(&fit, a) - eval_modulation(&fit, a + TAU)).abs() < 1e-12);
    // no shorter period: shifting by 360/k degrees changes the waveform
    let no_shorter_period = (2..=7).all(|k| {
        alphas
            .iter()
            .any(|&a| (eval_modulation(&fit, a) - eval_modulation(&fit, a + TAU / k as f64)).abs() > 1e-3)
    });
    let peak = eval_modulation(&fit, 0.0);
    let max_at_zero = alphas[1..].iter().all(|&a| eval_modulation(&fit, a) < peak);
    let ok = ratio > 0.25 && (ratio - 0.322).abs() < 1e-3 && periodic && no_shorter_period && max_at_zero;
    verdict(
        2,
        "modulation shape",
        ok,
        format!(
            "|A2|/|A1| = {ratio:.4}, 360 deg periodic: {periodic}, no shorter period: {no_shorter_period}, \
             max at 0: {max_at_zero} (f(0) = {peak:.5})"
        ),
    );
}

/// Weighted-area Monte Carlo estimate of the unblocked fraction: uniform
/// points in the spot, blade membership by polar angle about the rotation
/// centre. Returns (estimate, standard error).
fn monte_carlo_fraction(geom: &SpotGeometry, theta: f64, samples: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let em = &geom.emission;
    let (cx, cy) = (geom.big_r0 * theta.cos(), geom.big_r0 * theta.sin());
    let (mut sw, mut sy, mut sww, mut syy, mut swy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut taken = 0;
    while taken < samples {
        let x = rng.random_range(-geom.r0..geom.r0);
        let y = rng.random_range(-geom.r0..geom.r0);
        let r2 = x * x + y * y;
        if r2 > geom.r0 * geom.r0 {
            continue;
        }
        taken += 1;
        let w = em.a * (em.k * (r2.sqrt() / geom.d).atan()).cos() + em.c;
        let angle = (cy + y).atan2(cx + x);
        let blocked = (0.0..=geom.theta_gnd).contains(&angle);
        let v = if blocked { 0.0 } else { w };
        sw += w;
        sy += v;
        sww += w * w;
        syy += v * v;
        swy += w * v;
    }
    let n = samples as f64;
    let ratio = sy / sw;
    // delta-method variance of a ratio of means
    let (mw, my) = (sw / n, sy / n);
    let var_w = sww / n - mw * mw;
    let var_y = syy / n - my * my;
    let cov = swy / n - mw * my;
    let var = (var_y - 2.0 * ratio * cov + ratio * ratio * var_w) / (n * mw * mw);
    (ratio, var.max(0.0).sqrt())
}

#[test]
fn c3_reference_geometry() {
    let start = Instant::now();
    let geom = SpotGeometry::default();
    let theta_max_deg = geom.theta_max().to_degrees();
    let far = transmitted_fraction(&geom, -PI / 2.0).unwrap();
    let blocked = transmitted_fraction(&geom, 10f64.to_radians()).unwrap();
    let half = transmitted_fraction(&geom, 0.0).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let tm = geom.theta_max();
    let mut worst_sigma: f64 = 0.0;
    for k in 0..20 {
        let offset = rng.random_range(-tm..tm);
        // alternate between the leading and trailing edge
        let theta = if k % 2 == 0 { offset } else { geom.theta_gnd + offset };
        let quad = transmitted_fraction(&geom, theta).unwrap();
        let (mc, se) = monte_carlo_fraction(&geom, theta, 1_000_000, &mut rng);
        worst_sigma = worst_sigma.max((quad - mc).abs() / se);
    }
    let elapsed = start.elapsed();
    let ok = (theta_max_deg - 4.78).abs() <= 0.01
        && far == 1.0
        && blocked == 0.0
        && (half - 0.5).abs() <= 0.01
        && worst_sigma <= 3.0
        && elapsed < Duration::from_secs(30);
    verdict(
        3,
        "reference geometry",
        ok,
        format!(
            "theta_max = {theta_max_deg:.4} deg, far = {far}, blocked = {blocked}, edge = {half:.6}, \
             worst |quad - mc| = {worst_sigma:.2} sigma, {elapsed:?}"
        ),
    );
}

#[test]
fn c4_orthogonality() {
    let n = 200;
    let t_m = n as f64 * DT;
    let grid = TimeGrid::new(DT, n, 0.0).unwrap();
    let basis = |j: usize, sine: bool| -> Vec<f64> {
        grid.times()
            .map(|t| {
                let arg = TAU * j as f64 * F_M * t;
                if sine {
                    arg.sin()
                } else {
                    arg.cos()
                }
            })
            .collect()
    };
    let inner = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * DT;
    let mut worst: f64 = 0.0;
    for j in 1..=7 {
        for k in 1..=7 {
            let delta = if j == k { t_m / 2.0 } else { 0.0 };
            worst = worst.max((inner(&basis(j, false), &basis(k, false)) - delta).abs());
            worst = worst.max((inner(&basis(j, true), &basis(k, true)) - delta).abs());
            worst = worst.max(inner(&basis(j, true), &basis(k, false)).abs());
        }
    }
    verdict(4, "orthogonality", worst <= 1e-9, format!("max deviation {worst:.2e}"));
}

#[test]
fn c5_step_noise_scenario() {
    let start = Instant::now();
    let cfg = SimConfig::default();
    assert_eq!(cfg.noise.kind, NoiseKind::Step);
    assert_eq!(cfg.noise.amplitude, 10.0);
    let r = run_simulation(&cfg).unwrap();
    let elapsed = start.elapsed();
    let m = &r.metrics;

    let a = m.noise_to_signal_rms > 5.0;

    // (b) every window of the full-rate output that strays more than 5% (RMS
    // over the window, relative to the signal amplitude) holds a step
    let grid = *r.restored_full.signal.grid();
    let mut offending = Vec::new();
    let mut flagged = 0;
    for k in 0..r.downsample_indices.len() {
        let block: Vec<f64> = r
            .window_block(k)
            .map(|i| r.restored_full.signal.values()[i] - cfg.signal_at(grid.time(i)))
            .collect();
        if block.is_empty() {
            continue;
        }
        let dev = (block.iter().map(|e| e * e).sum::<f64>() / block.len() as f64).sqrt() / cfg.signal_amp;
        if dev > 0.05 {
            flagged += 1;
            if !r.block_has_step(k) {
                offending.push(k);
            }
        }
    }
    let b = offending.is_empty();
    let c = m.relative_rms_error_downsampled <= 0.01;
    let d = r.restored_downsampled.len() == 75 && m.bandwidth_hz == 1250.0;
    verdict(
        5,
        "step-noise scenario",
        a && b && c && d && elapsed < Duration::from_secs(10),
        format!(
            "(a) noise/signal rms = {:.2}; (b) {flagged} windows above 5%, {} without a step; \
             (c) relative rms = {:.2e} over {} clean windows ({} spike windows excluded); \
             (d) {} samples, {} Hz; {elapsed:?}",
            m.noise_to_signal_rms,
            offending.len(),
            m.relative_rms_error_downsampled,
            75 - m.spike_windows.len() - m.warmup_windows.len(),
            m.spike_windows.len(),
            r.restored_downsampled.len(),
            m.bandwidth_hz
        ),
    );
}

/// Down-sampled restoration with 10 Hz sine noise computed by direct
/// integration of the continuous-time waveforms (composite Simpson, 4000
/// panels per window), independent of the cumulative-sum demodulator.
/// Returns the RMS of (restored - S) over the post-warm-up windows.
fn brute_force_sine_leakage() -> f64 {
    let amps = DEFAULT_AMPLITUDES;
    let phase = -2.4e-5;
    let w = TAU * F_M;
    let delay = PI / 6.0;
    let modulation =
        |t: f64| 0.471 + amps.iter().enumerate().map(|(i, a)| a * ((i + 1) as f64 * w * t + phase).cos()).sum::<f64>();
    // cosine part of the delayed square reference: b_j cos(j delay) cos(j w t)
    let square_coeff = |j: usize| {
        if j.is_multiple_of(2) {
            0.0
        } else {
            let sign = if (j / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
            sign * 4.0 / (PI * j as f64) * (j as f64 * delay).cos()
        }
    };
    let even_ref = |t: f64| (1..=7).map(|j| square_coeff(j) * (j as f64 * w * t).cos()).sum::<f64>();
    let gain: f64 = (1..=7).map(|j| amps[j - 1] * phase.cos() * square_coeff(j)).sum();
    let s = |t: f64| (TAU * 50.0 * t).sin();
    let noise = |t: f64| 10.0 * (TAU * 10.0 * t).sin();
    let integrand = |t: f64| (s(t) * modulation(t) + noise(t)) * even_ref(t);

    let t_m = 1.0 / F_M;
    let panels = 4000;
    let h = t_m / panels as f64;
    let mut err2 = 0.0;
    let mut count = 0;
    // window centres at k T_m; the first complete window is centred at T_m
    for k in 1..75 {
        let centre = k as f64 * t_m;
        let a = centre - t_m / 2.0;
        let mut acc = integrand(a) + integrand(a + t_m);
        for p in 1..panels {
            acc += integrand(a + p as f64 * h) * if p % 2 == 1 { 4.0 } else { 2.0 };
        }
        let restored = 2.0 / (t_m * gain) * acc * h / 3.0;
        err2 += (restored - s(centre)).powi(2);
        count += 1;
    }
    (err2 / count as f64).sqrt()
}

/// Frozen output of `brute_force_sine_leakage`.
const SINE_LEAKAGE_BOUND: f64 = 7.7563288868e-4;

#[test]
fn c6_sine_noise_leakage() {
    let oracle = brute_force_sine_leakage();
    let cfg = SimConfig {
        noise: NoiseSpec::sine_birefringence(),
        ..SimConfig::default()
    };
    let r = run_simulation(&cfg).unwrap();
    let grid = *r.restored_downsampled.grid();
    let valid: Vec<f64> = (0..r.restored_downsampled.len())
        .filter(|k| !r.metrics.warmup_windows.contains(k))
        .map(|k| r.restored_downsampled.values()[k] - cfg.signal_at(grid.time(k)))
        .collect();
    let measured = (valid.iter().map(|e| e * e).sum::<f64>() / valid.len() as f64).sqrt();
    let pinned = (oracle - SINE_LEAKAGE_BOUND).abs() <= 1e-6 * SINE_LEAKAGE_BOUND;
    let bound = SINE_LEAKAGE_BOUND * (1.0 + 1e-3);
    verdict(
        6,
        "sine-noise leakage",
        pinned && measured <= bound && bound < 0.01 * cfg.signal_amp,
        format!("measured rms residual {measured:.6e}, oracle {oracle:.10e}, pinned bound {bound:.6e}"),
    );
}

#[test]
fn c7_harmonic_outputs() {
    let grid = TimeGrid::new(DT, 1000, 0.0).unwrap();
    let m = modulation_series(&ModulationFit::default(), F_M).unwrap();
    let s_m = synth(&m, &grid);
    let outputs = |phase: f64| {
        let r = split_even_odd(&synth_demod_reference(1.0 / F_M, RefKind::Square, 7, phase).unwrap());
        let gain = calibrate_gain(&s_m, &r).unwrap();
        all_harmonic_outputs(&s_m, &m, &r, &gain).unwrap()
    };
    let aligned = outputs(0.0);
    let mut worst_ratio: f64 = 0.0;
    for row in &aligned {
        let want = DEFAULT_AMPLITUDES[row.i - 1] / DEFAULT_AMPLITUDES[0];
        worst_ratio = worst_ratio.max(((row.x / aligned[0].x) - want).abs() / want.abs());
    }
    // T_m / 12 of the fundamental is pi / 6
    let shifted = outputs(PI / 6.0);
    let worst_mag = aligned
        .iter()
        .zip(&shifted)
        .map(|(a, b)| (a.magnitude - b.magnitude).abs() / a.magnitude)
        .fold(0.0, f64::max);
    verdict(
        7,
        "per-harmonic outputs",
        worst_ratio <= 0.01 && worst_mag <= 1e-6,
        format!("worst ratio error {worst_ratio:.2e}, worst magnitude change {worst_mag:.2e}"),
    );
}

#[test]
fn c8_determinism() {
    let cfg = SimConfig::default();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = report(&run_simulation(&cfg).unwrap(), a.path()).unwrap();
    report(&run_simulation(&cfg).unwrap(), b.path()).unwrap();
    let mut identical = true;
    for f in &first.files {
        let name = f.file_name().unwrap();
        identical &= std::fs::read(f).unwrap() == std::fs::read(b.path().join(name)).unwrap();
    }
    verdict(
        8,
        "determinism",
        identical,
        format!("{} files compared byte for byte", first.files.len()),
    );
}
