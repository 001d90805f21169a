//! Averages over the frozen Overhauser field and the dephasing reference curve.
//!
//! The canonical scheme is a Cartesian tensor-product Gauss–Hermite rule on
//! the shifted Gaussian of the electron precession vector. A seeded Monte
//! Carlo estimator exists for validation and error bars. Evaluations run on
//! the rayon pool; reductions use pairwise summation over index order so the
//! result does not depend on the worker count.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{MagneticSample, OverhauserDistribution};
use crate::quadrature::{integrate_real, QuadOptions};

pub const DEFAULT_GH_NODES: usize = 15;
pub const MIN_MC_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AverageMode {
    GaussHermite { nodes: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl AverageMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AverageMode::GaussHermite { nodes } => {
                if !(5..=51).contains(&nodes) || nodes % 2 == 0 {
                    return Err(Error::param("nodes", format!("must be odd in [5, 51], got {nodes}")));
                }
            }
            AverageMode::MonteCarlo { samples, .. } => {
                if samples < MIN_MC_SAMPLES {
                    return Err(Error::param("samples", format!("must be >= {MIN_MC_SAMPLES}, got {samples}")));
                }
            }
        }
        Ok(())
    }
}

impl Default for AverageMode {
    fn default() -> Self {
        AverageMode::GaussHermite {
            nodes: DEFAULT_GH_NODES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageSpec {
    pub mode: AverageMode,
    pub distribution: OverhauserDistribution,
    /// Trion precession copied into every sample.
    pub omega_e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageResult {
    pub mean: f64,
    /// Node-refinement difference (quadrature) or standard error (Monte Carlo).
    pub error: f64,
    pub evaluations: usize,
}

/// Physicists' Gauss–Hermite rule for weight `exp(-x^2)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, p_prev) = hermite_orthonormal(n, *x);
            let dp = (2.0 * n as f64).sqrt() * p_prev;
            *x -= p / dp;
        }
        let sum: f64 = (0..n).map(|k| hermite_orthonormal(k, *x).0.powi(2)).sum();
        weights.push(1.0 / sum);
    }
    // Symmetrize to remove residual eigensolver asymmetry.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// `(p_n(x), p_{n-1}(x))` for Hermite polynomials orthonormal under `exp(-x^2)`.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 0.0;
    let mut p = PI.powf(-0.25);
    for k in 0..n {
        let next = ((2.0f64).sqrt() * x * p - (k as f64).sqrt() * p_prev) / ((k + 1) as f64).sqrt();
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

/// Sum with `O(log n)` error growth and a fixed association order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

fn evaluate_all<F>(samples: &[MagneticSample], f: &F) -> Result<Vec<f64>>
where
    F: Fn(&MagneticSample) -> Result<f64> + Sync,
{
    let values: Vec<Result<f64>> = samples.par_iter().map(f).collect();
    let mut out = Vec::with_capacity(values.len());
    for (index, (v, s)) in values.into_iter().zip(samples).enumerate() {
        let v = v?;
        if !v.is_finite() {
            return Err(Error::NonFiniteSample {
                index,
                omega_g: s.omega_g,
                n: [s.n.x, s.n.y, s.n.z],
            });
        }
        out.push(v);
    }
    Ok(out)
}

fn gh_mean<F>(nodes: usize, spec: &AverageSpec, f: &F) -> Result<f64>
where
    F: Fn(&MagneticSample) -> Result<f64> + Sync,
{
    let (x, w) = gauss_hermite(nodes);
    let dist = &spec.distribution;
    let scale = std::f64::consts::SQRT_2 * dist.w;
    let norm = PI.powf(-1.5);
    let mut samples = Vec::with_capacity(nodes.pow(3));
    let mut weights = Vec::with_capacity(nodes.pow(3));
    for i in 0..nodes {
        for j in 0..nodes {
            for k in 0..nodes {
                let draw = Vector3::new(x[i], x[j], x[k]) * scale;
                samples.push(dist.sample_from_draw(spec.omega_e, draw));
                weights.push(w[i] * w[j] * w[k] * norm);
            }
        }
    }
    let values = evaluate_all(&samples, f)?;
    let weighted: Vec<f64> = values.iter().zip(&weights).map(|(v, w)| v * w).collect();
    Ok(pairwise_sum(&weighted))
}

/// Gaussian average of a fallible per-sample quantity.
pub fn try_gaussian_average<F>(f: F, spec: &AverageSpec) -> Result<AverageResult>
where
    F: Fn(&MagneticSample) -> Result<f64> + Sync,
{
    spec.mode.validate()?;
    let dist = &spec.distribution;
    if dist.w == 0.0 {
        let sample = dist.sample_from_draw(spec.omega_e, Vector3::zeros());
        let values = evaluate_all(&[sample], &f)?;
        return Ok(AverageResult {
            mean: values[0],
            error: 0.0,
            evaluations: 1,
        });
    }
    match spec.mode {
        AverageMode::GaussHermite { nodes } => {
            let mean = gh_mean(nodes, spec, &f)?;
            let coarse = gh_mean(nodes - 2, spec, &f)?;
            Ok(AverageResult {
                mean,
                error: (mean - coarse).abs(),
                evaluations: nodes.pow(3) + (nodes - 2).pow(3),
            })
        }
        AverageMode::MonteCarlo { samples, seed } => {
            let draws: Vec<MagneticSample> = (0..samples as u64)
                .map(|i| dist.sample_seeded(spec.omega_e, seed, i))
                .collect();
            let values = evaluate_all(&draws, &f)?;
            let n = values.len() as f64;
            let mean = pairwise_sum(&values) / n;
            let sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
            let variance = pairwise_sum(&sq) / (n - 1.0);
            Ok(AverageResult {
                mean,
                error: (variance / n).sqrt(),
                evaluations: samples,
            })
        }
    }
}

pub fn gaussian_average<F>(f: F, spec: &AverageSpec) -> Result<AverageResult>
where
    F: Fn(&MagneticSample) -> f64 + Sync,
{
    try_gaussian_average(|s| Ok(f(s)), spec)
}

/// Frozen-field dephasing of an initially `up` electron spin, averaged over an
/// isotropic zero-mean field of width `w`.
pub fn merkulov_sz(t: f64, w: f64) -> Result<f64> {
    if !(t >= 0.0) || !(w >= 0.0) {
        return Err(Error::param("t, w", "must be >= 0"));
    }
    let x2 = (w * t).powi(2);
    Ok((1.0 + 2.0 * (-0.5 * x2).exp() * (1.0 - x2)) / 3.0)
}

/// `<s_z>(t)` for one frozen field: precession at `omega_g` about an axis at polar angle `theta`.
pub fn sz_single(t: f64, sample: &MagneticSample) -> f64 {
    let (s, c) = (0.5 * sample.omega_g * t).sin_cos();
    let cos_2theta = 2.0 * sample.n.z * sample.n.z - 1.0;
    c * c + s * s * cos_2theta
}

/// Average of `f(magnitude, theta, phi)` over an isotropic zero-mean Gaussian
/// of per-component width `w`, in spherical coordinates.
pub fn radial_average<F>(f: F, w: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64, f64, f64) -> f64,
{
    if !(w > 0.0) {
        return Err(Error::param("w", "radial average needs w > 0"));
    }
    let norm = (2.0 * PI * w * w).powf(-1.5);
    let opts = QuadOptions {
        abs_tol: tol,
        rel_tol: 0.0,
        max_intervals: 2000,
        ..Default::default()
    };
    let inner_opts = QuadOptions { abs_tol: tol * 1e-2, ..opts.clone() };
    let upper = 12.0 * w;
    let mut err = None;
    let value = integrate_real(
        |omega| {
            let shell = integrate_real(
                |theta| {
                    integrate_real(|phi| f(omega, theta, phi), 0.0, 2.0 * PI, &inner_opts)
                        .unwrap_or_else(|e| {
                            err.get_or_insert(e.clone());
                            0.0
                        })
                        * theta.sin()
                },
                0.0,
                PI,
                &inner_opts,
            );
            match shell {
                Ok(v) => v * omega * omega * (-0.5 * omega * omega / (w * w)).exp() * norm,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        upper,
        &opts.clone().with_breakpoints([w, 2.0 * w, 4.0 * w]),
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(value),
    }
}
