//! Emission (`f`) and scattering (`lambda`) wavefunction coefficients and the
//! photon-mode overlaps built from them.
//!
//! Label convention: `SpinLabelPair { zeta, mu }` is the amplitude for an
//! emitter starting in spin `zeta` and ending in spin `mu`. Times are in units
//! of `1/gamma`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::{MagneticSample, Polarization, Spin, GAMMA};
use crate::quadrature::{integrate, QuadOptions};
use crate::C64;

/// Long-time cutoff standing in for `t -> infinity`.
pub const T_INFINITY: f64 = 40.0;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpinLabelPair {
    pub zeta: Spin,
    pub mu: Spin,
}

impl SpinLabelPair {
    pub const fn new(zeta: Spin, mu: Spin) -> Self {
        SpinLabelPair { zeta, mu }
    }

    /// `(up,up), (up,down), (down,up), (down,down)`.
    pub const ALL: [SpinLabelPair; 4] = [
        SpinLabelPair::new(Spin::Up, Spin::Up),
        SpinLabelPair::new(Spin::Up, Spin::Down),
        SpinLabelPair::new(Spin::Down, Spin::Up),
        SpinLabelPair::new(Spin::Down, Spin::Down),
    ];

    /// Position in [`SpinLabelPair::ALL`].
    pub fn index(self) -> usize {
        2 * self.zeta.index() + self.mu.index()
    }
}

/// Normalized single-photon temporal mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Wavepacket {
    /// `sqrt(G) exp(-G t / 2)` on `[0, inf)`.
    Exponential { big_gamma: f64 },
    /// `sqrt(r) exp(-r t / 2)` on `[0, cutoff]`, renormalized.
    TruncatedExponential { rate: f64, cutoff: f64 },
    /// Piecewise-linear interpolation of samples, zero outside the grid.
    Sampled { times: Vec<f64>, values: Vec<C64> },
}

impl Wavepacket {
    pub fn exponential(big_gamma: f64) -> Result<Self> {
        if !(big_gamma > 0.0) || !big_gamma.is_finite() {
            return Err(Error::param("big_gamma", format!("must be > 0, got {big_gamma}")));
        }
        Ok(Wavepacket::Exponential { big_gamma })
    }

    pub fn truncated_exponential(rate: f64, cutoff: f64) -> Result<Self> {
        if !(rate > 0.0) || !(cutoff > 0.0) {
            return Err(Error::param("wavepacket", "rate and cutoff must be > 0"));
        }
        Ok(Wavepacket::TruncatedExponential { rate, cutoff })
    }

    /// Sampled mode; `points` must be sorted in time and normalized to 1e-10.
    pub fn sampled(points: &[(f64, C64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::param("wavepacket", "need at least two samples"));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) || points[0].0 < 0.0 {
            return Err(Error::param("wavepacket", "sample times must be >= 0 and increasing"));
        }
        let wp = Wavepacket::Sampled {
            times: points.iter().map(|p| p.0).collect(),
            values: points.iter().map(|p| p.1).collect(),
        };
        let norm = wp.norm_sqr();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::Unnormalized { norm });
        }
        Ok(wp)
    }

    pub fn eval(&self, t: f64) -> C64 {
        match self {
            Wavepacket::Exponential { big_gamma } => {
                if t < 0.0 {
                    ZERO
                } else {
                    C64::new(big_gamma.sqrt() * (-0.5 * big_gamma * t).exp(), 0.0)
                }
            }
            Wavepacket::TruncatedExponential { rate, cutoff } => {
                if t < 0.0 || t > *cutoff {
                    ZERO
                } else {
                    let norm = (-(rate * cutoff)).exp_m1().abs().sqrt();
                    C64::new(rate.sqrt() * (-0.5 * rate * t).exp() / norm, 0.0)
                }
            }
            Wavepacket::Sampled { times, values } => {
                if t < times[0] || t > times[times.len() - 1] {
                    return ZERO;
                }
                let k = times.partition_point(|&x| x <= t).clamp(1, times.len() - 1);
                let (t0, t1) = (times[k - 1], times[k]);
                let s = (t - t0) / (t1 - t0);
                values[k - 1] * (1.0 - s) + values[k] * s
            }
        }
    }

    /// `integral |xi|^2`, exact for every kind.
    pub fn norm_sqr(&self) -> f64 {
        match self {
            Wavepacket::Exponential { .. } | Wavepacket::TruncatedExponential { .. } => 1.0,
            Wavepacket::Sampled { times, values } => times
                .windows(2)
                .zip(values.windows(2))
                .map(|(t, v)| {
                    let h = t[1] - t[0];
                    h * (v[0].norm_sqr() + (v[0] * v[1].conj()).re + v[1].norm_sqr()) / 3.0
                })
                .sum(),
        }
    }

    pub fn support_end(&self) -> f64 {
        match self {
            Wavepacket::Exponential { .. } => f64::INFINITY,
            Wavepacket::TruncatedExponential { cutoff, .. } => *cutoff,
            Wavepacket::Sampled { times, .. } => times[times.len() - 1],
        }
    }

    /// Decay rate of `|xi|^2` for exponential kinds.
    fn exponential_rate(&self) -> Option<(f64, f64, f64)> {
        match self {
            Wavepacket::Exponential { big_gamma } => Some((*big_gamma, big_gamma.sqrt(), f64::INFINITY)),
            Wavepacket::TruncatedExponential { rate, cutoff } => {
                let norm = (-(rate * cutoff)).exp_m1().abs().sqrt();
                Some((*rate, rate.sqrt() / norm, *cutoff))
            }
            Wavepacket::Sampled { .. } => None,
        }
    }

    /// Characteristic decay time used to place quadrature breakpoints.
    fn time_scale(&self) -> f64 {
        match self {
            Wavepacket::Exponential { big_gamma } => 2.0 / big_gamma,
            Wavepacket::TruncatedExponential { rate, cutoff } => (2.0 / rate).min(*cutoff),
            Wavepacket::Sampled { times, .. } => times[times.len() - 1] - times[0],
        }
    }

    fn interior_points(&self, end: f64) -> Vec<f64> {
        match self {
            Wavepacket::Sampled { times, .. } => times.iter().copied().filter(|&t| t > 0.0 && t < end).collect(),
            Wavepacket::TruncatedExponential { cutoff, .. } if *cutoff < end => {
                scale_points(self.time_scale(), end).into_iter().chain([*cutoff]).collect()
            }
            _ => scale_points(self.time_scale(), end),
        }
    }
}

fn scale_points(scale: f64, end: f64) -> Vec<f64> {
    [1.0, 3.0, 10.0, 30.0]
        .iter()
        .map(|m| m * scale)
        .filter(|&p| p > 0.0 && p < end)
        .collect()
}

fn check_order(t: f64, t_prime: f64) -> Result<()> {
    if !(t_prime >= 0.0) || !(t_prime <= t) {
        return Err(Error::TimeOrder { t, t_prime });
    }
    Ok(())
}

/// `(cos(omega x / 2), sin(omega x / 2))`
fn half_angle(omega: f64, x: f64) -> (f64, f64) {
    let (s, c) = (0.5 * omega * x).sin_cos();
    (c, s)
}

/// `cos - i n_z sin` of the ground half-angle.
fn g_upup(sample: &MagneticSample, x: f64) -> C64 {
    let (c, s) = half_angle(sample.omega_g, x);
    C64::new(c, -sample.n.z * s)
}

/// `cos + i n_z sin` of the ground half-angle.
fn g_downdown(sample: &MagneticSample, x: f64) -> C64 {
    let (c, s) = half_angle(sample.omega_g, x);
    C64::new(c, sample.n.z * s)
}

/// Emission amplitude density for a photon of polarization `pol` at `t_prime`,
/// observed at `t`.
pub fn f_coefficient(
    pol: Polarization,
    labels: SpinLabelPair,
    t: f64,
    t_prime: f64,
    sample: &MagneticSample,
) -> Result<C64> {
    check_order(t, t_prime)?;
    use Polarization::{L, R};
    use Spin::{Down, Up};
    let sg = GAMMA.sqrt();
    let decay = (-0.5 * GAMMA * t_prime).exp();
    let (ce, se) = half_angle(sample.omega_e, t_prime);
    let (_, sg_rel) = half_angle(sample.omega_g, t - t_prime);
    let written = |pol: Polarization, mu: Spin| -> C64 {
        match (pol, mu) {
            (R, Up) => g_upup(sample, t - t_prime) * (sg * decay * ce),
            (R, Down) => -I * sample.n_plus() * (sg * decay * ce * sg_rel),
            (L, Up) => I * C64::new(sample.n.y, sample.n.x) * (sg * decay * se * sg_rel),
            (L, Down) => -I * g_downdown(sample, t - t_prime) * (sg * decay * se),
        }
    };
    Ok(match (labels.zeta, pol, labels.mu) {
        (Up, p, mu) => written(p, mu),
        (Down, L, Down) => written(R, Up).conj(),
        (Down, L, Up) => -written(R, Down).conj(),
        (Down, R, Down) => written(L, Up).conj(),
        (Down, R, Up) => -written(L, Down).conj(),
    })
}

/// Amplitude of remaining in the trion manifold at `t` (no photon yet).
pub fn f0_coefficient(labels: SpinLabelPair, t: f64, sample: &MagneticSample) -> Result<C64> {
    if !(t >= 0.0) {
        return Err(Error::param("t", format!("must be >= 0, got {t}")));
    }
    let decay = (-0.5 * GAMMA * t).exp();
    let (c, s) = half_angle(sample.omega_e, t);
    Ok(if labels.zeta == labels.mu {
        C64::new(decay * c, 0.0)
    } else {
        C64::new(0.0, -decay * s)
    })
}

/// How the inner absorption-to-emission integral of `lambda` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InnerIntegral {
    /// Adaptive quadrature; valid for every wavepacket kind.
    #[default]
    Quadrature,
    /// Closed-form antiderivative; exponential kinds only.
    Exact,
}

/// The four inner integrals over the absorption time `u` in `[0, t']`, with
/// `tau = t' - u`:
///
/// - `cc`: `xi(u) e^{-gamma tau/2} cos(omega_e tau/2) (cos - i n_z sin)(omega_g u/2)`
/// - `cs`: `xi(u) e^{-gamma tau/2} cos(omega_e tau/2) sin(omega_g u/2)`
/// - `sc`: `xi(u) e^{-gamma tau/2} sin(omega_e tau/2) (cos - i n_z sin)(omega_g u/2)`
/// - `ss`: `xi(u) e^{-gamma tau/2} sin(omega_e tau/2) sin(omega_g u/2)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringKernels {
    pub cc: C64,
    pub cs: C64,
    pub sc: C64,
    pub ss: C64,
}

const KERNEL_TOL: f64 = 1e-12;

impl ScatteringKernels {
    pub fn compute(
        t_prime: f64,
        sample: &MagneticSample,
        input: &Wavepacket,
        method: InnerIntegral,
    ) -> Result<Self> {
        match method {
            InnerIntegral::Quadrature => Self::by_quadrature(t_prime, sample, input),
            InnerIntegral::Exact => Self::exact(t_prime, sample, input),
        }
    }

    pub fn by_quadrature(t_prime: f64, sample: &MagneticSample, input: &Wavepacket) -> Result<Self> {
        let end = t_prime.min(input.support_end());
        if !(end > 0.0) {
            return Ok(ScatteringKernels { cc: ZERO, cs: ZERO, sc: ZERO, ss: ZERO });
        }
        let mut points = input.interior_points(end);
        points.extend(scale_points(2.0 / GAMMA, t_prime).into_iter().map(|p| t_prime - p).filter(|&p| p > 0.0 && p < end));
        let opts = QuadOptions {
            abs_tol: KERNEL_TOL,
            max_intervals: 20_000,
            ..Default::default()
        }
        .with_breakpoints(points)
        .with_oscillation(0.5 * (sample.omega_e + sample.omega_g));
        let r = integrate(
            |u| {
                let tau = t_prime - u;
                let xi = input.eval(u);
                let decay = (-0.5 * GAMMA * tau).exp();
                let (ce, se) = half_angle(sample.omega_e, tau);
                let (_, sgu) = half_angle(sample.omega_g, u);
                let guu = g_upup(sample, u);
                let c = xi * (decay * ce);
                let s = xi * (decay * se);
                [c * guu, c * sgu, s * guu, s * sgu]
            },
            0.0,
            end,
            &opts,
        )?;
        let [cc, cs, sc, ss] = r.value;
        Ok(ScatteringKernels { cc, cs, sc, ss })
    }

    /// Closed form for exponential wavepackets as sums of
    /// `integral_0^m e^{a u} e^{b (m - u)} du` terms.
    pub fn exact(t_prime: f64, sample: &MagneticSample, input: &Wavepacket) -> Result<Self> {
        let (rate, amp, cutoff) = input
            .exponential_rate()
            .ok_or_else(|| Error::param("input", "exact inner integral needs an exponential wavepacket"))?;
        let m = t_prime.min(cutoff);
        if !(m > 0.0) {
            return Ok(ScatteringKernels { cc: ZERO, cs: ZERO, sc: ZERO, ss: ZERO });
        }
        let half = C64::new(0.5, 0.0);
        let nz = sample.n.z;
        // e^{-gamma tau/2} (cos, sin)(omega_e tau / 2) = sum_sigma coef e^{b_sigma tau}
        let b = [
            C64::new(-0.5 * GAMMA, 0.5 * sample.omega_e),
            C64::new(-0.5 * GAMMA, -0.5 * sample.omega_e),
        ];
        let cos_e = [half, half];
        let sin_e = [-I * 0.5, I * 0.5];
        // xi(u) (G_upup, sin)(omega_g u / 2) = amp * sum_rho coef e^{a_rho u}
        let a = [
            C64::new(-0.5 * rate, 0.5 * sample.omega_g),
            C64::new(-0.5 * rate, -0.5 * sample.omega_g),
        ];
        let g_uu = [C64::new(0.5 * (1.0 - nz), 0.0), C64::new(0.5 * (1.0 + nz), 0.0)];
        let sin_g = [-I * 0.5, I * 0.5];
        let mut phi = [[ZERO; 2]; 2];
        for (s, bs) in b.iter().enumerate() {
            let tail = (bs * (t_prime - m)).exp() * amp;
            for (r, ar) in a.iter().enumerate() {
                phi[s][r] = tail * exp_convolution(*ar, *bs, m);
            }
        }
        let combine = |e: &[C64; 2], g: &[C64; 2]| {
            let mut acc = ZERO;
            for s in 0..2 {
                for r in 0..2 {
                    acc += e[s] * g[r] * phi[s][r];
                }
            }
            acc
        };
        Ok(ScatteringKernels {
            cc: combine(&cos_e, &g_uu),
            cs: combine(&cos_e, &sin_g),
            sc: combine(&sin_e, &g_uu),
            ss: combine(&sin_e, &sin_g),
        })
    }
}

/// `(e^z - 1) / z`, accurate near zero.
fn exprel(z: C64) -> C64 {
    if z.norm() < 0.1 {
        let mut term = C64::new(1.0, 0.0);
        let mut sum = term;
        for k in 2..=14 {
            term = term * z / k as f64;
            sum += term;
        }
        sum
    } else {
        (z.exp() - 1.0) / z
    }
}

/// `integral_0^m e^{a u} e^{b (m - u)} du`, factored around the larger exponent
/// so no intermediate overflows.
fn exp_convolution(a: C64, b: C64, m: f64) -> C64 {
    if a.re >= b.re {
        (a * m).exp() * m * exprel((b - a) * m)
    } else {
        (b * m).exp() * m * exprel((a - b) * m)
    }
}

/// Scattering amplitude density for output polarization `pol` at `t_prime`,
/// observed at `t`, for an `R`-polarized input photon.
pub fn lambda_coefficient(
    pol: Polarization,
    labels: SpinLabelPair,
    t: f64,
    t_prime: f64,
    sample: &MagneticSample,
    input: &Wavepacket,
) -> Result<C64> {
    lambda_coefficient_with(InnerIntegral::Quadrature, pol, labels, t, t_prime, sample, input)
}

pub fn lambda_coefficient_with(
    method: InnerIntegral,
    pol: Polarization,
    labels: SpinLabelPair,
    t: f64,
    t_prime: f64,
    sample: &MagneticSample,
    input: &Wavepacket,
) -> Result<C64> {
    check_order(t, t_prime)?;
    let k = ScatteringKernels::compute(t_prime, sample, input, method)?;
    Ok(lambda_from_kernels(pol, labels, t, t_prime, sample, input.eval(t_prime), &k))
}

/// All eight scattering coefficients at `(t, t_prime)`, indexed `[pol][labels]`.
pub fn lambda_all(
    method: InnerIntegral,
    t: f64,
    t_prime: f64,
    sample: &MagneticSample,
    input: &Wavepacket,
) -> Result<[[C64; 4]; 2]> {
    check_order(t, t_prime)?;
    let k = ScatteringKernels::compute(t_prime, sample, input, method)?;
    let xi = input.eval(t_prime);
    let mut out = [[ZERO; 4]; 2];
    for pol in Polarization::ALL {
        for labels in SpinLabelPair::ALL {
            out[pol.index()][labels.index()] = lambda_from_kernels(pol, labels, t, t_prime, sample, xi, &k);
        }
    }
    Ok(out)
}

fn lambda_from_kernels(
    pol: Polarization,
    labels: SpinLabelPair,
    t: f64,
    t_prime: f64,
    sample: &MagneticSample,
    xi: C64,
    k: &ScatteringKernels,
) -> C64 {
    use Polarization::{L, R};
    use Spin::{Down, Up};
    let gamma = C64::new(GAMMA, 0.0);
    let nm = sample.n_minus();
    let np = sample.n_plus();
    let n_perp2 = sample.n.x * sample.n.x + sample.n.y * sample.n.y;
    let rel = t - t_prime;
    let (_, sg_t) = half_angle(sample.omega_g, t);
    let (_, sg_rel) = half_angle(sample.omega_g, rel);
    match (pol, labels.zeta, labels.mu) {
        (R, Up, Up) => xi * g_upup(sample, t) - gamma * g_upup(sample, rel) * k.cc,
        (R, Down, Up) => -I * xi * nm * sg_t + I * gamma * g_upup(sample, rel) * nm * k.cs,
        (R, Up, Down) => -I * xi * np * sg_t + I * gamma * np * sg_rel * k.cc,
        (R, Down, Down) => xi * g_downdown(sample, t) + gamma * n_perp2 * sg_rel * k.cs,
        (L, Up, Up) => gamma * nm * sg_rel * k.sc,
        (L, Down, Up) => -I * gamma * nm * nm * sg_rel * k.ss,
        (L, Up, Down) => I * gamma * g_downdown(sample, rel) * k.sc,
        (L, Down, Down) => gamma * nm * g_downdown(sample, rel) * k.ss,
    }
}

const O_TOL: f64 = 1e-10;

/// Overlap of the emitted mode with the ideal exponential mode,
/// `integral_0^T1 sqrt(gamma) e^{-gamma t/2} f(T1, t) dt`.
pub fn o_overlap(pol: Polarization, labels: SpinLabelPair, t1: f64, sample: &MagneticSample) -> Result<C64> {
    Ok(o_overlaps(t1, sample)?[pol.index()][labels.index()])
}

/// All eight emission overlaps, indexed `[pol][labels]`.
pub fn o_overlaps(t1: f64, sample: &MagneticSample) -> Result<[[C64; 4]; 2]> {
    if !(t1 > 0.0) || !t1.is_finite() {
        return Err(Error::param("T1", format!("must be > 0, got {t1}")));
    }
    let opts = QuadOptions::abs(O_TOL)
        .with_breakpoints(scale_points(2.0 / GAMMA, t1))
        .with_oscillation(0.5 * (sample.omega_e + sample.omega_g));
    let r = integrate(
        |t| {
            let w = GAMMA.sqrt() * (-0.5 * GAMMA * t).exp();
            let mut out = [ZERO; 8];
            for pol in Polarization::ALL {
                for labels in SpinLabelPair::ALL {
                    let f = f_coefficient(pol, labels, t1, t, sample).unwrap_or(ZERO);
                    out[4 * pol.index() + labels.index()] = f * w;
                }
            }
            out
        },
        0.0,
        t1,
        &opts,
    )?;
    let mut out = [[ZERO; 4]; 2];
    for (i, v) in r.value.iter().enumerate() {
        out[i / 4][i % 4] = *v;
    }
    Ok(out)
}

const LAMBDA_OVERLAP_TOL: f64 = 1e-8;

/// True when both the input mode and the trion have decayed by `T_g`
/// (`e^{-G T_g/2}` and `e^{-gamma T_g/2}` below 1e-6).
pub fn scattering_window_ok(t_g: f64, input: &Wavepacket) -> bool {
    let rate = 2.0 / input.time_scale();
    (-0.5 * GAMMA * t_g).exp() < 1e-6 && ((-0.5 * rate * t_g).exp() < 1e-6 || input.support_end() <= t_g)
}

/// Overlap of the input mode with the co-polarized scattered mode,
/// `integral_0^Tg xi*(s) lambda_R(T_g, s) ds`.
pub fn lambda_overlap(labels: SpinLabelPair, t_g: f64, sample: &MagneticSample, input: &Wavepacket) -> Result<C64> {
    Ok(lambda_overlaps(t_g, sample, input, InnerIntegral::Quadrature)?[labels.index()])
}

/// All four `R`-channel overlaps, indexed by [`SpinLabelPair::index`].
pub fn lambda_overlaps(
    t_g: f64,
    sample: &MagneticSample,
    input: &Wavepacket,
    method: InnerIntegral,
) -> Result<[C64; 4]> {
    if !(t_g > 0.0) || !t_g.is_finite() {
        return Err(Error::param("T_g", format!("must be > 0, got {t_g}")));
    }
    if !scattering_window_ok(t_g, input) {
        log::warn!("scattering window T_g = {t_g} is short compared with the photon or trion lifetime");
    }
    let end = t_g.min(input.support_end());
    let mut points = input.interior_points(end);
    points.extend(scale_points(2.0 / GAMMA, end));
    let opts = QuadOptions {
        abs_tol: LAMBDA_OVERLAP_TOL * 0.1,
        max_intervals: 20_000,
        ..Default::default()
    }
    .with_breakpoints(points)
    .with_oscillation(0.5 * (sample.omega_e + sample.omega_g));
    let mut failure = None;
    let r = integrate(
        |s| {
            let xi = input.eval(s);
            let k = match ScatteringKernels::compute(s, sample, input, method) {
                Ok(k) => k,
                Err(e) => {
                    failure.get_or_insert(e);
                    return [ZERO; 4];
                }
            };
            let mut out = [ZERO; 4];
            for labels in SpinLabelPair::ALL {
                out[labels.index()] =
                    xi.conj() * lambda_from_kernels(Polarization::R, labels, t_g, s, sample, xi, &k);
            }
            out
        },
        0.0,
        end,
        &opts,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(r.value)
}

/// Protocol window `pi / (2 omega)` of a quarter precession period.
pub fn quarter_period(omega_g_bar: f64) -> Result<f64> {
    if !(omega_g_bar > 0.0) {
        return Err(Error::param("omega_g_bar", "protocol timing needs a nonzero external field"));
    }
    Ok(PI / (2.0 * omega_g_bar))
}
