//! Reference channel: the LED/photodiode optical switch watched by the
//! rotating blade, the cosine fit of its transitions, period detection, and
//! the clean digital references synthesized from the detected period.
//!
//! Geometry, in the blade frame: the rotation centre is the origin, the blade
//! is the wedge between the rays at angle `0` (leading edge) and `theta_gnd`
//! (trailing edge), and the LED spot is a disc of radius `r0` centred at
//! `R0 (cos theta, sin theta)`. Points of the spot are weighted by the LED
//! emission at `beta = atan(r / d)`, `r` being the distance from the spot
//! centre.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::signals::{HarmonicSeries, SampledSignal, TimeGrid};

/// Absolute tolerance on the normalized occlusion integrals.
pub const QUADRATURE_TOL: f64 = 1e-10;
const MAX_SEGMENTS: usize = 400;

/// LED emission law `I(beta) = a cos(k beta) + c`, `k` per radian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionFit {
    #[serde(rename = "A")]
    pub a: f64,
    pub k: f64,
    pub c: f64,
}

impl Default for EmissionFit {
    fn default() -> Self {
        Self {
            a: 4.113,
            // 0.0789 per degree
            k: 0.0789 * 180.0 / PI,
            c: 4.227,
        }
    }
}

impl EmissionFit {
    pub fn in_lobe(&self, beta: f64) -> bool {
        (self.k * beta).abs() <= PI
    }
}

/// Emission intensity at angle `beta` (radians). Angles outside the fitted
/// lobe are extrapolated with a warning.
pub fn emission_intensity(em: &EmissionFit, beta: f64) -> f64 {
    if !em.in_lobe(beta) {
        log::warn!("emission angle {beta} rad is outside the fitted lobe; extrapolating");
    }
    em.a * (em.k * beta).cos() + em.c
}

/// Lengths in millimetres, angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotGeometry {
    pub r0: f64,
    pub d: f64,
    #[serde(rename = "R0")]
    pub big_r0: f64,
    pub theta_gnd: f64,
    pub emission: EmissionFit,
}

impl Default for SpotGeometry {
    fn default() -> Self {
        Self {
            r0: 0.5,
            d: 2.0,
            big_r0: 6.0,
            theta_gnd: 30f64.to_radians(),
            emission: EmissionFit::default(),
        }
    }
}

impl SpotGeometry {
    pub fn validate(&self) -> Result<()> {
        let lengths = [("r0", self.r0), ("d", self.d), ("R0", self.big_r0)];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Geometry(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.theta_gnd > 0.0 && self.theta_gnd < PI) {
            return Err(Error::Geometry(format!(
                "blade angle must lie in (0, pi), got {}",
                self.theta_gnd
            )));
        }
        if self.r0 >= self.big_r0 {
            return Err(Error::Geometry(format!(
                "spot radius {} must be smaller than its orbit radius {}",
                self.r0, self.big_r0
            )));
        }
        if self.r0 >= self.big_r0 * (self.theta_gnd / 2.0).sin() {
            return Err(Error::Geometry(format!(
                "large-spot regime unsupported: r0 = {} is not below R0 sin(theta_gnd / 2) = {}, \
                 so the blade never covers the whole spot",
                self.r0,
                self.big_r0 * (self.theta_gnd / 2.0).sin()
            )));
        }
        let em = &self.emission;
        if !(em.a.is_finite() && em.k.is_finite() && em.c.is_finite()) {
            return Err(Error::Geometry("emission parameters must be finite".into()));
        }
        Ok(())
    }

    /// Half-angle swept while one blade edge crosses the spot.
    pub fn theta_max(&self) -> f64 {
        (self.r0 / self.big_r0).asin()
    }

    fn weight(&self, rho: f64) -> f64 {
        let em = &self.emission;
        em.a * (em.k * (rho / self.d).atan()).cos() + em.c
    }
}

/// Maps any angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(TAU) - PI
}

/// Angular measure of `{phi : cos(phi - centre) >= threshold}` as
/// `(centre, half_width)`; `None` when empty.
fn arc(centre: f64, threshold: f64) -> Option<(f64, f64)> {
    if threshold <= -1.0 {
        Some((centre, PI))
    } else if threshold >= 1.0 {
        None
    } else {
        Some((centre, threshold.acos()))
    }
}

/// Length of the intersection of two arcs on the unit circle.
fn arc_overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    if a.1 >= PI {
        return 2.0 * b.1;
    }
    if b.1 >= PI {
        return 2.0 * a.1;
    }
    let (lo_a, hi_a) = (a.0 - a.1, a.0 + a.1);
    (-2..=2)
        .map(|k| {
            let shift = k as f64 * TAU;
            let lo = lo_a.max(b.0 - b.1 + shift);
            let hi = hi_a.min(b.0 + b.1 + shift);
            (hi - lo).max(0.0)
        })
        .sum()
}

/// Blade half-planes as (inward normal angle, signed distance of the spot
/// centre from the edge line). The blade is the intersection of both.
fn blade_half_planes(geom: &SpotGeometry, theta: f64) -> [(f64, f64); 2] {
    let (px, py) = (geom.big_r0 * theta.cos(), geom.big_r0 * theta.sin());
    let (s, c) = geom.theta_gnd.sin_cos();
    [
        // leading edge along +x, blade on the y >= 0 side
        (FRAC_PI_2, py),
        // trailing edge at theta_gnd, blade on its clockwise side
        (geom.theta_gnd - FRAC_PI_2, px * s - py * c),
    ]
}

/// Angle covered by the blade on the circle of radius `rho` about the spot
/// centre.
fn blocked_arc(planes: &[(f64, f64); 2], rho: f64) -> f64 {
    if rho <= 0.0 {
        let inside = planes.iter().all(|&(_, dist)| dist >= 0.0);
        return if inside { TAU } else { 0.0 };
    }
    let first = arc(planes[0].0, -planes[0].1 / rho);
    let second = arc(planes[1].0, -planes[1].1 / rho);
    match (first, second) {
        (Some(a), Some(b)) => arc_overlap(a, b),
        _ => 0.0,
    }
}

fn transmitted_unchecked(geom: &SpotGeometry, theta: f64) -> f64 {
    let theta = wrap_angle(theta);
    let planes = blade_half_planes(geom, theta);
    let r0 = geom.r0;
    if planes.iter().any(|&(_, dist)| dist <= -r0) {
        return 1.0;
    }
    if planes.iter().all(|&(_, dist)| dist >= r0) {
        return 0.0;
    }
    let breaks: Vec<f64> = planes.iter().map(|&(_, dist)| dist.abs()).collect();
    let total = quadrature::integrate(
        |rho| geom.weight(rho) * rho,
        0.0,
        r0,
        &[],
        QUADRATURE_TOL,
        MAX_SEGMENTS,
    )
    .value
        * TAU;
    let blocked = quadrature::integrate(
        |rho| geom.weight(rho) * rho * blocked_arc(&planes, rho),
        0.0,
        r0,
        &breaks,
        QUADRATURE_TOL * total,
        MAX_SEGMENTS,
    )
    .value;
    (1.0 - blocked / total).clamp(0.0, 1.0)
}

/// Emission-weighted fraction of the spot not covered by the blade, for
/// the spot centre at angle `theta` from the leading edge.
pub fn transmitted_fraction(geom: &SpotGeometry, theta: f64) -> Result<f64> {
    geom.validate()?;
    Ok(transmitted_unchecked(geom, theta))
}

/// Samples the optical-switch output for a blade turning at `f_rot`.
pub fn reference_waveform(geom: &SpotGeometry, grid: &TimeGrid, f_rot: f64) -> Result<SampledSignal> {
    geom.validate()?;
    if !(f_rot.is_finite() && f_rot > 0.0) {
        return Err(Error::Config(format!("rotation frequency must be positive, got {f_rot}")));
    }
    let values = grid
        .times()
        .map(|t| transmitted_unchecked(geom, TAU * (t * f_rot).rem_euclid(1.0)))
        .collect();
    SampledSignal::new(*grid, values)
}

/// `b cos(u theta + phi) + c2`, canonicalised to `b >= 0`, `u > 0` and
/// `phi` in `[0, 2 pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapezoidFit {
    #[serde(rename = "B")]
    pub b: f64,
    pub u: f64,
    pub phi: f64,
    pub c2: f64,
}

impl TrapezoidFit {
    pub fn eval(&self, theta: f64) -> f64 {
        self.b * (self.u * theta + self.phi).cos() + self.c2
    }

    pub fn canonical(self) -> Self {
        let (mut b, mut u, mut phi) = (self.b, self.u, self.phi);
        if u < 0.0 {
            u = -u;
            phi = -phi;
        }
        if b < 0.0 {
            b = -b;
            phi += PI;
        }
        Self {
            b,
            u,
            phi: phi.rem_euclid(TAU),
            c2: self.c2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionFit {
    pub fit: TrapezoidFit,
    pub residual_rms: f64,
    /// Rotation angles (radians, continuous across the transition) of the
    /// samples used.
    pub theta_start: f64,
    pub theta_end: f64,
    pub samples: usize,
}

/// Linear least squares of `[cos(u t), sin(u t), 1]`; returns
/// `(a, b, c, sum of squared residuals)`.
fn solve_at(u: f64, thetas: &[f64], ys: &[f64]) -> (f64, f64, f64, f64) {
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (&t, &y) in thetas.iter().zip(ys) {
        let (s, c) = (u * t).sin_cos();
        let row = [c, s, 1.0];
        for i in 0..3 {
            aty[i] += row[i] * y;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let Some(x) = solve3(ata, aty) else {
        return (0.0, 0.0, 0.0, f64::INFINITY);
    };
    let sse = thetas
        .iter()
        .zip(ys)
        .map(|(&t, &y)| {
            let (s, c) = (u * t).sin_cos();
            let r = x[0] * c + x[1] * s + x[2] - y;
            r * r
        })
        .sum();
    (x[0], x[1], x[2], sse)
}

fn solve3(m: [[f64; 3]; 3], v: [f64; 3]) -> Option<[f64; 3]> {
    let a = nalgebra::Matrix3::from_fn(|i, j| m[i][j]);
    let b = nalgebra::Vector3::from_column_slice(&v);
    a.lu().solve(&b).map(|x| [x[0], x[1], x[2]])
}

/// Fits `b cos(u theta + phi) + c2` to the first falling transition of a
/// trapezoid-like reference. Only samples strictly between the two plateaus
/// enter the fit.
pub fn fit_trapezoid_cosine(signal: &SampledSignal, f_rot: f64) -> Result<TransitionFit> {
    let values = signal.values();
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    if hi <= lo {
        return Err(Error::FitDomain("signal is constant".into()));
    }
    let eps = 1e-9 * (hi - lo);
    let is_high = |v: f64| v >= hi - eps;
    let is_low = |v: f64| v <= lo + eps;

    let mut i = 0;
    let (start, end) = loop {
        // skip to a high plateau sample followed by a transition sample
        while i + 1 < values.len() && !(is_high(values[i]) && !is_high(values[i + 1])) {
            i += 1;
        }
        if i + 1 >= values.len() {
            return Err(Error::FitDomain("no falling transition in signal".into()));
        }
        let start = i + 1;
        let mut j = start;
        while j < values.len() && !is_high(values[j]) && !is_low(values[j]) {
            j += 1;
        }
        if j < values.len() && is_low(values[j]) && j > start {
            break (start, j);
        }
        i = j.max(i + 1);
    };
    if end - start < 5 {
        return Err(Error::FitDomain(format!(
            "transition has {} samples, need at least 5",
            end - start
        )));
    }

    let grid = signal.grid();
    let theta0 = wrap_angle(TAU * f_rot * grid.time(start));
    let thetas: Vec<f64> = (start..end)
        .map(|k| theta0 + TAU * f_rot * (grid.time(k) - grid.time(start)))
        .collect();
    let ys = &values[start..end];
    let width = thetas[thetas.len() - 1] - thetas[0];

    let sse = |u: f64| solve_at(u, &thetas, ys).3;
    let (u_lo, u_hi) = (0.25 * PI / width, 4.0 * PI / width);
    let steps = 600;
    let grid_u = |k: usize| u_lo + (u_hi - u_lo) * k as f64 / steps as f64;
    let best = (0..=steps)
        .min_by(|&a, &b| sse(grid_u(a)).total_cmp(&sse(grid_u(b))))
        .expect("non-empty scan");
    let (mut a, mut b) = (grid_u(best.saturating_sub(1)), grid_u((best + 1).min(steps)));
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - golden * (b - a);
    let mut x2 = a + golden * (b - a);
    let (mut f1, mut f2) = (sse(x1), sse(x2));
    for _ in 0..200 {
        if b - a <= 1e-15 * b {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - golden * (b - a);
            f1 = sse(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + golden * (b - a);
            f2 = sse(x2);
        }
    }
    let u = 0.5 * (a + b);
    let (ca, sb, c2, sse_min) = solve_at(u, &thetas, ys);
    // ca cos(u t) + sb sin(u t) = B cos(u t + phi) with B cos phi = ca, -B sin phi = sb
    let fit = TrapezoidFit {
        b: ca.hypot(sb),
        u,
        phi: (-sb).atan2(ca),
        c2,
    }
    .canonical();
    Ok(TransitionFit {
        fit,
        residual_rms: (sse_min / ys.len() as f64).sqrt(),
        theta_start: thetas[0],
        theta_end: thetas[thetas.len() - 1],
        samples: ys.len(),
    })
}

/// Mean spacing of falling threshold crossings, each located by linear
/// interpolation between the bracketing samples.
pub fn detect_period(signal: &SampledSignal, threshold: f64) -> Result<f64> {
    let grid = signal.grid();
    let crossings: Vec<f64> = signal
        .values()
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] > threshold && w[1] <= threshold)
        .map(|(i, w)| grid.time(i) + grid.dt() * (w[0] - threshold) / (w[0] - w[1]))
        .collect();
    if crossings.len() < 2 {
        return Err(Error::Detection {
            crossings: crossings.len(),
        });
    }
    Ok((crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefKind {
    Square,
    Sine,
}

impl std::str::FromStr for RefKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(RefKind::Square),
            "sine" => Ok(RefKind::Sine),
            other => Err(Error::Config(format!("unknown reference kind {other:?}"))),
        }
    }
}

/// Zero-DC demodulation reference at `1 / period`, delayed by `phase`
/// radians of the fundamental. The square wave is the even unit square
/// wave (`+1` for `|omega t| < pi / 2`) truncated to `l` harmonics; the sine
/// kind is a single unit cosine and ignores `l`.
pub fn synth_demod_reference(period: f64, kind: RefKind, l: usize, phase: f64) -> Result<HarmonicSeries> {
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::InvalidSeries(format!("period must be positive, got {period}")));
    }
    let amplitudes: Vec<f64> = match kind {
        RefKind::Sine => vec![1.0],
        RefKind::Square => {
            if l == 0 {
                return Err(Error::InvalidSeries("at least one harmonic required".into()));
            }
            (1..=l)
                .map(|j| {
                    if j % 2 == 0 {
                        0.0
                    } else {
                        let sign = if (j / 2) % 2 == 0 { 1.0 } else { -1.0 };
                        sign * 4.0 / (PI * j as f64)
                    }
                })
                .collect()
        }
    };
    let (cos_coeffs, sin_coeffs) = amplitudes
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let (s, c) = ((i + 1) as f64 * phase).sin_cos();
            (a * c, a * s)
        })
        .unzip();
    HarmonicSeries::new(1.0 / period, 0.0, cos_coeffs, sin_coeffs)
}
