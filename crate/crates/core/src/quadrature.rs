//! Globally adaptive Gauss–Kronrod (7/15) quadrature for vector-valued
//! complex integrands.
//!
//! Several amplitudes usually share an integration window, so the integrand
//! returns a fixed-size array and all components are refined together: the
//! interval with the largest error estimate (max over components) is bisected
//! until the summed estimate meets the tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::C64;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Upper bound on the number of initial panels created by oscillation splitting.
const MAX_INITIAL_PANELS: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
    /// Interior points where the integrand has kinks or changes scale.
    pub breakpoints: Vec<f64>,
    /// Largest angular frequency present; panels are cut at its half-periods.
    pub oscillation: Option<f64>,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 1e-10,
            rel_tol: 0.0,
            max_intervals: 4000,
            breakpoints: Vec::new(),
            oscillation: None,
        }
    }
}

impl QuadOptions {
    pub fn abs(abs_tol: f64) -> Self {
        QuadOptions {
            abs_tol,
            ..Default::default()
        }
    }

    pub fn with_breakpoints(mut self, points: impl IntoIterator<Item = f64>) -> Self {
        self.breakpoints.extend(points);
        self
    }

    pub fn with_oscillation(mut self, omega: f64) -> Self {
        if omega > 0.0 && omega.is_finite() {
            self.oscillation = Some(self.oscillation.map_or(omega, |w| w.max(omega)));
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult<const N: usize> {
    pub value: [C64; N],
    pub error: f64,
    pub evaluations: usize,
}

struct Panel<const N: usize> {
    a: f64,
    b: f64,
    value: [C64; N],
    error: f64,
}

impl<const N: usize> PartialEq for Panel<N> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<const N: usize> Eq for Panel<N> {}
impl<const N: usize> PartialOrd for Panel<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for Panel<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<const N: usize, F>(f: &mut F, a: f64, b: f64) -> Panel<N>
where
    F: FnMut(f64) -> [C64; N],
{
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let zero = [C64::new(0.0, 0.0); N];
    let fc = f(centre);
    let mut k = zero;
    let mut g = zero;
    for i in 0..N {
        k[i] = fc[i] * WGK[7];
        g[i] = fc[i] * WG[3];
    }
    for (j, &x) in XGK.iter().take(7).enumerate() {
        let dx = half * x;
        let f1 = f(centre - dx);
        let f2 = f(centre + dx);
        for i in 0..N {
            let s = f1[i] + f2[i];
            k[i] += s * WGK[j];
            if j % 2 == 1 {
                g[i] += s * WG[j / 2];
            }
        }
    }
    let mut error = 0.0f64;
    for i in 0..N {
        k[i] *= half;
        g[i] *= half;
        error = error.max((k[i] - g[i]).norm());
    }
    Panel {
        a,
        b,
        value: k,
        error,
    }
}

fn initial_cuts(a: f64, b: f64, opts: &QuadOptions) -> Vec<f64> {
    let mut cuts = vec![a, b];
    cuts.extend(opts.breakpoints.iter().copied().filter(|&p| p > a && p < b));
    if let Some(omega) = opts.oscillation {
        let half_period = PI / omega;
        let count = ((b - a) / half_period).floor() as usize;
        if count > 0 {
            let step = if count > MAX_INITIAL_PANELS {
                (b - a) / MAX_INITIAL_PANELS as f64
            } else {
                half_period
            };
            let mut x = a + step;
            while x < b {
                cuts.push(x);
                x += step;
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (1.0 + y.abs()));
    cuts
}

fn accept(total_error: f64, value: &[C64], opts: &QuadOptions) -> bool {
    let scale = value.iter().map(|v| v.norm()).fold(0.0, f64::max);
    total_error <= opts.abs_tol.max(opts.rel_tol * scale)
}

/// Integrates `f` over `[a, b]` (requires `a <= b`).
pub fn integrate<const N: usize, F>(mut f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<QuadResult<N>>
where
    F: FnMut(f64) -> [C64; N],
{
    let zero = [C64::new(0.0, 0.0); N];
    if !(a <= b) {
        return Err(Error::param("interval", format!("[{a}, {b}] is not ordered")));
    }
    if a == b {
        return Ok(QuadResult {
            value: zero,
            error: 0.0,
            evaluations: 0,
        });
    }
    let cuts = initial_cuts(a, b, opts);
    let mut heap = BinaryHeap::with_capacity(cuts.len() * 2);
    let mut evaluations = 0;
    for w in cuts.windows(2) {
        heap.push(kronrod(&mut f, w[0], w[1]));
        evaluations += 15;
    }
    let budget = opts.max_intervals.max(heap.len() + 1);
    let totals = |heap: &BinaryHeap<Panel<N>>| {
        let mut value = zero;
        let mut error = 0.0;
        for p in heap.iter() {
            for (v, pv) in value.iter_mut().zip(&p.value) {
                *v += pv;
            }
            error += p.error;
        }
        (value, error)
    };
    loop {
        let (value, error) = totals(&heap);
        if value.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::QuadratureNonConvergence {
                achieved: f64::NAN,
                requested: opts.abs_tol,
            });
        }
        if accept(error, &value, opts) {
            return Ok(QuadResult {
                value,
                error,
                evaluations,
            });
        }
        let worst = heap.pop().expect("at least one panel");
        let mid = 0.5 * (worst.a + worst.b);
        if heap.len() + 2 > budget || mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            let (_, achieved) = totals(&heap);
            return Err(Error::QuadratureNonConvergence {
                achieved,
                requested: opts.abs_tol,
            });
        }
        heap.push(kronrod(&mut f, worst.a, mid));
        heap.push(kronrod(&mut f, mid, worst.b));
        evaluations += 30;
    }
}

/// Scalar complex convenience wrapper around [`integrate`].
pub fn integrate_complex<F>(mut f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<C64>
where
    F: FnMut(f64) -> C64,
{
    integrate(|x| [f(x)], a, b, opts).map(|r| r.value[0])
}

/// Real convenience wrapper around [`integrate`].
pub fn integrate_real<F>(mut f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    integrate(|x| [C64::new(f(x), 0.0)], a, b, opts).map(|r| r.value[0].re)
}
