//! Protocol fidelities.
//!
//! - PNS: photon-number superposition source.
//! - CZ: scattering-based controlled-Z gate.
//! - LR: Lindner–Rudolph cluster-state generation.

use std::f64::consts::{PI, SQRT_2};

use crate::amplitudes::{
    lambda_overlaps, o_overlaps, quarter_period, InnerIntegral, SpinLabelPair, Wavepacket,
};
use crate::averaging::{try_gaussian_average, AverageMode, AverageResult, AverageSpec};
use crate::error::{Error, Result};
use crate::params::{BlochQubit, MagneticSample, PhysicalConfig, Polarization, Spin};
use crate::special::erfcx;
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

fn check_rate(name: &'static str, v: f64) -> Result<()> {
    if !(v >= 0.0) || v.is_nan() {
        return Err(Error::param(name, format!("must be >= 0, got {v}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// PNS

/// Fidelity of the emitted `alpha |1> + beta |0>` photon for a frozen field of
/// magnitude `omega_o`.
pub fn pns_fidelity(qubit: &BlochQubit, omega_o: f64) -> Result<f64> {
    check_rate("omega_o", omega_o)?;
    let (pa, pb) = (qubit.p_alpha(), qubit.p_beta());
    Ok((pa * pa + 2.0 * pa * pb) / (1.0 + (0.5 * omega_o).powi(2)) + pb * pb)
}

/// Same fidelity assembled from the photon-mode brackets at a finite
/// observation time `b = gamma t_inf`, for a field along `(theta, phi)`.
pub fn pns_fidelity_from_brackets(qubit: &BlochQubit, omega_o: f64, theta: f64, phi: f64, b: f64) -> f64 {
    let x = 0.5 * omega_o;
    let (sxb, cxb) = (x * b).sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let d = 1.0 + x * x;
    let up = (C64::new(1.0, x * ct) * cxb + C64::new(x, -ct) * sxb) / d;
    let down = C64::new(-st * sp, st * cp) * ((x * cxb - sxb) / d);
    let a = up.norm_sqr() + down.norm_sqr();
    let half = C64::new(cxb, ct * sxb) * up + C64::new(sp * st, cp * st) * sxb * down;
    let bb = 2.0 * half.re;
    let (pa, pb) = (qubit.p_alpha(), qubit.p_beta());
    pa * pa * a + pa * pb * bb + pb * pb
}

/// Bloch-sphere average of [`pns_fidelity`].
pub fn pns_fidelity_bloch(omega_o: f64) -> Result<f64> {
    check_rate("omega_o", omega_o)?;
    let x2 = (0.5 * omega_o).powi(2);
    Ok((1.0 + x2 / 3.0) / (1.0 + x2))
}

/// Bloch- and Overhauser-averaged PNS fidelity at `w / gamma`.
pub fn pns_fidelity_averaged(w_over_gamma: f64) -> Result<f64> {
    check_rate("w_over_gamma", w_over_gamma)?;
    let x = w_over_gamma;
    if x < 0.02 {
        let x2 = x * x;
        return Ok(1.0 - x2 / 2.0 + 5.0 / 8.0 * x2 * x2 - 35.0 / 32.0 * x2 * x2 * x2);
    }
    let tail = 8.0 * (2.0 * PI).sqrt() * erfcx(SQRT_2 / x);
    Ok((8.0 * x + x.powi(3) - tail) / (3.0 * x.powi(3)))
}

// ---------------------------------------------------------------------------
// CZ

/// Amplitudes of the four logical branches after two scatterings and a spin
/// measurement projecting on `up`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CzCoefficients {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

impl CzCoefficients {
    pub fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        CzCoefficients { a, b, c, d }
    }

    pub fn as_array(&self) -> [C64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn scaled(&self, phase: C64) -> Self {
        CzCoefficients::new(self.a * phase, self.b * phase, self.c * phase, self.d * phase)
    }
}

/// Assembles `A..D` from the four co-polarized overlaps (indexed by
/// [`SpinLabelPair::index`]) and the field direction.
pub fn cz_coefficients_from_overlaps(sample: &MagneticSample, lambda: &[C64; 4]) -> CzCoefficients {
    let l = |zeta: Spin, mu: Spin| lambda[SpinLabelPair::new(zeta, mu).index()];
    let (uu, ud, du, dd) = (
        l(Spin::Up, Spin::Up),
        l(Spin::Up, Spin::Down),
        l(Spin::Down, Spin::Up),
        l(Spin::Down, Spin::Down),
    );
    let theta = sample.theta();
    let phi = sample.phi();
    let (st, ct) = theta.sin_cos();
    let c_minus = C64::from_polar(st, -phi) + I * ct;
    let c_plus = C64::from_polar(st, phi) + I * ct;
    let r2 = 1.0 / SQRT_2;
    let a = c_minus;
    let b = ((-uu + I * du) * (ONE - I * ct) + (dd + I * ud) * C64::from_polar(st, -phi)) * r2;
    let c = ((c_minus - ONE) * uu + I * (ONE + c_plus) * du) * r2;
    let d = ud * du + uu * uu - I * dd * du - I * du * uu;
    CzCoefficients { a, b, c, d }
}

/// Coefficients for one frozen field, scattering window `t_g`.
///
/// Exponential inputs use the closed-form inner integral; other kinds fall
/// back to nested quadrature.
pub fn cz_coefficients(sample: &MagneticSample, input: &Wavepacket, t_g: f64) -> Result<CzCoefficients> {
    let method = match input {
        Wavepacket::Sampled { .. } => InnerIntegral::Quadrature,
        _ => InnerIntegral::Exact,
    };
    cz_coefficients_with(method, sample, input, t_g)
}

pub fn cz_coefficients_with(
    method: InnerIntegral,
    sample: &MagneticSample,
    input: &Wavepacket,
    t_g: f64,
) -> Result<CzCoefficients> {
    let lambda = lambda_overlaps(t_g, sample, input, method)?;
    Ok(cz_coefficients_from_overlaps(sample, &lambda))
}

/// Gate fidelity for control `c1` and target `c2`.
pub fn cz_fidelity(c1: &BlochQubit, c2: &BlochQubit, k: &CzCoefficients) -> f64 {
    let (a1, b1, a2, b2) = (c1.p_alpha(), c1.p_beta(), c2.p_alpha(), c2.p_beta());
    (k.a * (a1 * a2) + k.b * (a2 * b1) + k.c * (a1 * b2) + k.d * (b1 * b2)).norm_sqr()
}

/// Average of [`cz_fidelity`] over independent uniform Bloch spheres.
pub fn cz_fidelity_bloch(k: &CzCoefficients) -> f64 {
    let [a, b, c, d] = k.as_array();
    let diag = a.norm_sqr() + b.norm_sqr() + c.norm_sqr() + d.norm_sqr();
    let near = (a * b.conj() + a * c.conj() + b * d.conj() + c * d.conj()).re;
    let far = (a * d.conj() + b * c.conj()).re;
    diag / 9.0 + 2.0 * near / 18.0 + 2.0 * far / 36.0
}

/// Bloch-averaged CZ fidelity further averaged over the Overhauser field.
///
/// Timing uses the nominal field: `T_g = pi / (2 omega_g_bar)`.
pub fn cz_fidelity_averaged(config: &PhysicalConfig, mode: AverageMode) -> Result<AverageResult> {
    config.validate()?;
    if (config.omega_e - config.omega_g_bar).abs() > 1e-12 * config.omega_e.max(1.0) {
        return Err(Error::param("omega_e", "the gate assumes omega_e = omega_g_bar"));
    }
    let t_g = quarter_period(config.omega_g_bar)?;
    let input = Wavepacket::exponential(config.big_gamma)?;
    let spec = AverageSpec {
        mode,
        distribution: config.overhauser(),
        omega_e: config.omega_e,
    };
    try_gaussian_average(
        |s| cz_coefficients(s, &input, t_g).map(|k| cz_fidelity_bloch(&k)),
        &spec,
    )
}

// ---------------------------------------------------------------------------
// LR

/// Probability that an `R`-driven trion emits into `L` (and vice versa).
pub fn lr_error_probability(omega_e_over_gamma: f64) -> Result<f64> {
    check_rate("omega_e_over_gamma", omega_e_over_gamma)?;
    let x2 = omega_e_over_gamma.powi(2);
    Ok(x2 / (2.0 * (1.0 + x2)))
}

/// Single-step closed form at `omega_g = k omega_e`, no Overhauser field.
pub fn lr_fidelity_1_ideal(k: f64, omega_e_over_gamma: f64) -> Result<f64> {
    let p = lr_error_probability(omega_e_over_gamma)?;
    Ok((1.0 - 0.5 * (1.0 + k * k) * p).powi(2))
}

/// Per-step attenuation factor beyond the first photon.
pub fn lr_step_factor(k: f64, omega_e_over_gamma: f64) -> Result<f64> {
    let p = lr_error_probability(omega_e_over_gamma)?;
    Ok((1.0 - 0.5 * (1.0 - k + k * k) * p).powi(2))
}

pub fn lr_fidelity_ideal_n(n_steps: usize, k: f64, omega_e_over_gamma: f64) -> Result<f64> {
    if n_steps == 0 {
        return Err(Error::param("n_steps", "must be >= 1"));
    }
    if !(k > 0.0) {
        return Err(Error::param("k", "must be > 0"));
    }
    let f1 = lr_fidelity_1_ideal(k, omega_e_over_gamma)?;
    let f = lr_step_factor(k, omega_e_over_gamma)?;
    Ok(f1 * f.powi(n_steps as i32 - 1))
}

/// The eight emission overlaps, `O[pol][labels]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrOverlapSet {
    pub o: [[C64; 4]; 2],
}

impl LrOverlapSet {
    pub fn compute(sample: &MagneticSample, t1: f64) -> Result<Self> {
        Ok(LrOverlapSet { o: o_overlaps(t1, sample)? })
    }

    pub fn get(&self, pol: Polarization, zeta: Spin, mu: Spin) -> C64 {
        self.o[pol.index()][SpinLabelPair::new(zeta, mu).index()]
    }

    /// Overlaps of the noiseless, instantaneous-emission limit.
    pub fn ideal() -> Self {
        let r = 1.0 / SQRT_2;
        let w = [[C64::new(r, 0.0), C64::new(0.0, -r)], [C64::new(0.0, -r), C64::new(r, 0.0)]];
        let mut o = [[ZERO; 4]; 2];
        for pol in Polarization::ALL {
            let zeta = pol.spin();
            for mu in Spin::ALL {
                o[pol.index()][SpinLabelPair::new(zeta, mu).index()] = w[mu.index()][zeta.index()];
            }
        }
        LrOverlapSet { o }
    }

    /// Exchange `R <-> L` together with `up <-> down`.
    pub fn mirrored(&self) -> Self {
        let mut o = [[ZERO; 4]; 2];
        for pol in Polarization::ALL {
            for labels in SpinLabelPair::ALL {
                let m = SpinLabelPair::new(labels.zeta.flipped(), labels.mu.flipped());
                o[pol.flipped().index()][m.index()] = self.o[pol.index()][labels.index()];
            }
        }
        LrOverlapSet { o }
    }
}

/// One-photon LR fidelity.
pub fn lr_fidelity_1(s: &LrOverlapSet) -> f64 {
    use Polarization::{L, R};
    use Spin::{Down as D, Up as U};
    let o = |p, z, m| s.get(p, z, m);
    let sum = o(R, U, U) + o(L, U, U) + I * o(R, U, D) - I * o(L, U, D) + I * o(R, D, U) + I * o(L, D, U)
        - o(R, D, D)
        + o(L, D, D);
    (sum / (2.0 * SQRT_2)).norm_sqr()
}

/// Two-photon LR fidelity.
pub fn lr_fidelity_2(s: &LrOverlapSet) -> f64 {
    use Polarization::{L, R};
    use Spin::{Down as D, Up as U};
    let o = |p, z, m| s.get(p, z, m);
    let mut sum = ZERO;
    for mu in Spin::ALL {
        let first_r = o(R, U, mu) + I * o(R, D, mu);
        let first_l = o(L, U, mu) + I * o(L, D, mu);
        let second_r = o(R, mu, U) - o(L, mu, U) + I * o(R, mu, D) + I * o(L, mu, D);
        let second_l = o(R, mu, U) + o(L, mu, U) + I * o(R, mu, D) - I * o(L, mu, D);
        sum += first_r * second_r + first_l * second_l;
    }
    (sum / 4.0).norm_sqr()
}

/// Overlap with the ideal `n`-photon cluster state by contracting the
/// one-step transfer matrix over (ideal spin, realistic spin) pairs.
pub fn lr_overlap_n(s: &LrOverlapSet, n_steps: usize) -> C64 {
    let r = 1.0 / SQRT_2;
    // conj of the ideal step amplitude w[mu'][zeta'].
    let w_conj = [[C64::new(r, 0.0), C64::new(0.0, r)], [C64::new(0.0, r), C64::new(r, 0.0)]];
    let c = [C64::new(r, 0.0), C64::new(0.0, r)];
    let mut v = [[ZERO; 2]; 2];
    for zi in 0..2 {
        for zr in 0..2 {
            v[zi][zr] = c[zi].conj() * c[zr];
        }
    }
    for _ in 0..n_steps {
        let mut next = [[ZERO; 2]; 2];
        for zi in Spin::ALL {
            let pol = if zi == Spin::Up { Polarization::R } else { Polarization::L };
            for zr in Spin::ALL {
                let amp = v[zi.index()][zr.index()];
                if amp == ZERO {
                    continue;
                }
                for mi in Spin::ALL {
                    for mr in Spin::ALL {
                        next[mi.index()][mr.index()] +=
                            amp * w_conj[mi.index()][zi.index()] * s.get(pol, zr, mr);
                    }
                }
            }
        }
        v = next;
    }
    v[0][0] + v[1][1]
}

pub fn lr_fidelity_n(s: &LrOverlapSet, n_steps: usize) -> f64 {
    lr_overlap_n(s, n_steps).norm_sqr()
}

/// LR fidelity for `n_steps` in `{1, 2}` averaged over the Overhauser field.
///
/// Timing uses the nominal field: `T1 = pi / (2 omega_g_bar)`.
pub fn lr_fidelity_averaged(config: &PhysicalConfig, n_steps: usize, mode: AverageMode) -> Result<AverageResult> {
    config.validate()?;
    if !(1..=2).contains(&n_steps) {
        return Err(Error::param("n_steps", format!("must be 1 or 2, got {n_steps}")));
    }
    let t1 = quarter_period(config.omega_g_bar)?;
    if (-t1).exp() > 1e-2 {
        log::warn!("LR window gamma T1 = {t1} is not long compared with the trion lifetime");
    }
    let spec = AverageSpec {
        mode,
        distribution: config.overhauser(),
        omega_e: config.omega_e,
    };
    try_gaussian_average(
        |s| {
            let set = LrOverlapSet::compute(s, t1)?;
            Ok(if n_steps == 1 { lr_fidelity_1(&set) } else { lr_fidelity_2(&set) })
        },
        &spec,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn pns_examples() {
        let q = BlochQubit::from_bloch(1.0, 0.4);
        assert!((pns_fidelity(&q, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let ground = BlochQubit::new(ZERO, ONE).unwrap();
        assert_eq!(pns_fidelity(&ground, 7.0).unwrap(), 1.0);
        let excited = BlochQubit::new(ONE, ZERO).unwrap();
        assert!((pns_fidelity(&excited, 2.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pns_brackets_are_observation_time_independent() {
        for &(theta, phi, omega, b) in &[(0.3, 1.0, 0.7, 40.0), (2.0, -0.4, 3.0, 55.5), (1.1, 2.5, 0.05, 80.0)] {
            for q in [BlochQubit::from_bloch(0.9, 0.2), BlochQubit::from_bloch(2.4, -1.0)] {
                let direct = pns_fidelity(&q, omega).unwrap();
                let brackets = pns_fidelity_from_brackets(&q, omega, theta, phi, b);
                assert!((direct - brackets).abs() < 1e-12, "{direct} vs {brackets}");
            }
        }
    }

    #[test]
    fn pns_bloch_limits() {
        assert_eq!(pns_fidelity_bloch(0.0).unwrap(), 1.0);
        assert!((pns_fidelity_bloch(1e8).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pns_averaged_branches_meet() {
        let x = 0.02;
        let series = {
            let x2 = x * x;
            1.0 - x2 / 2.0 + 5.0 / 8.0 * x2 * x2 - 35.0 / 32.0 * x2 * x2 * x2
        };
        let tail = 8.0 * (2.0 * PI).sqrt() * erfcx(SQRT_2 / x);
        let closed = (8.0 * x + x.powi(3) - tail) / (3.0 * x.powi(3));
        assert!((series - closed).abs() < 1e-11);
        assert_eq!(pns_fidelity_averaged(0.0).unwrap(), 1.0);
    }

    #[test]
    fn pns_averaged_is_decreasing() {
        let mut prev = pns_fidelity_averaged(1e-3).unwrap();
        let mut x = 1e-3;
        while x < 1e3 {
            x *= 1.05;
            let v = pns_fidelity_averaged(x).unwrap();
            assert!(v < prev, "not decreasing at {x}");
            prev = v;
        }
    }

    #[test]
    fn cz_fidelity_examples() {
        let ones = CzCoefficients::new(ONE, ONE, ONE, ONE);
        let q1 = BlochQubit::from_bloch(0.7, 0.1);
        let q2 = BlochQubit::from_bloch(2.1, 1.3);
        assert!((cz_fidelity(&q1, &q2, &ones) - 1.0).abs() < 1e-14);
        let k = CzCoefficients::new(C64::new(0.3, 0.4), ONE, ONE, ONE);
        let zero_state = BlochQubit::new(ONE, ZERO).unwrap();
        assert!((cz_fidelity(&zero_state, &zero_state, &k) - 0.25).abs() < 1e-15);
        let plus = BlochQubit::from_bloch(PI / 2.0, 0.0);
        let cz = CzCoefficients::new(ONE, ONE, ONE, -ONE);
        assert!((cz_fidelity(&plus, &plus, &cz) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn cz_bloch_examples() {
        assert!((cz_fidelity_bloch(&CzCoefficients::new(ONE, ONE, ONE, ONE)) - 1.0).abs() < 1e-15);
        assert!((cz_fidelity_bloch(&CzCoefficients::new(ONE, ZERO, ZERO, ZERO)) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn cz_bloch_global_phase_invariance() {
        let k = CzCoefficients::new(C64::new(0.3, 0.1), C64::new(-0.2, 0.7), C64::new(0.5, 0.5), C64::new(0.0, -0.9));
        let base = cz_fidelity_bloch(&k);
        for delta in [0.3, 1.7, -2.9] {
            assert!((cz_fidelity_bloch(&k.scaled(C64::from_polar(1.0, delta))) - base).abs() < 1e-15);
        }
    }

    #[test]
    fn along_x_gives_unit_a() {
        let s = MagneticSample::along_x(1e-3, 1e-3);
        let k = cz_coefficients_from_overlaps(&s, &[ONE; 4]);
        assert!((k.a - ONE).norm() < 1e-15);
    }

    #[test]
    fn lr_closed_forms() {
        assert_eq!(lr_error_probability(0.0).unwrap(), 0.0);
        assert!((lr_error_probability(1.0).unwrap() - 0.25).abs() < 1e-16);
        assert!(lr_fidelity_ideal_n(15, 2.0, 0.1).unwrap() > 0.75);
        assert_eq!(lr_fidelity_ideal_n(1, 2.0, 0.1).unwrap(), lr_fidelity_1_ideal(2.0, 0.1).unwrap());
        assert!(lr_fidelity_ideal_n(0, 2.0, 0.1).is_err());
    }

    #[test]
    fn lr_ideal_overlaps_give_unit_fidelity() {
        let ideal = LrOverlapSet::ideal();
        assert!((lr_fidelity_1(&ideal) - 1.0).abs() < 1e-14);
        assert!((lr_fidelity_2(&ideal) - 1.0).abs() < 1e-14);
        for n in 1..6 {
            assert!((lr_fidelity_n(&ideal, n) - 1.0).abs() < 1e-13);
        }
    }

    fn arbitrary_set(seed: u64) -> LrOverlapSet {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut o = [[ZERO; 4]; 2];
        for row in o.iter_mut() {
            for v in row.iter_mut() {
                *v = C64::new(next(), next());
            }
        }
        LrOverlapSet { o }
    }

    #[test]
    fn transfer_matrix_reproduces_printed_fidelities() {
        for seed in 0..20 {
            let s = arbitrary_set(seed);
            assert!((lr_fidelity_n(&s, 1) - lr_fidelity_1(&s)).abs() < 1e-14);
            assert!((lr_fidelity_n(&s, 2) - lr_fidelity_2(&s)).abs() < 1e-14);
        }
    }

    #[test]
    fn lr_fidelity_1_mirror_symmetric_without_noise() {
        let k = 2.0;
        let x = 0.1;
        let s = MagneticSample::along_x(k * x, x);
        let set = LrOverlapSet::compute(&s, quarter_period(k * x).unwrap()).unwrap();
        assert!((lr_fidelity_1(&set) - lr_fidelity_1(&set.mirrored())).abs() < 1e-12);
    }

    #[test]
    fn lr_overlaps_vanish_without_trion_precession() {
        let s = MagneticSample::new(0.3, 0.0, Vector3::new(0.2, 0.5, 0.4).normalize()).unwrap();
        let set = LrOverlapSet::compute(&s, 5.0).unwrap();
        for mu in Spin::ALL {
            assert!(set.get(Polarization::L, Spin::Up, mu).norm() < 1e-12);
            assert!(set.get(Polarization::R, Spin::Down, mu).norm() < 1e-12);
        }
    }

    #[test]
    fn averaged_with_zero_width_equals_single_sample() {
        let config = PhysicalConfig::with_k_ratio(2.0, 0.1, 0.0, 0.0).unwrap();
        let avg = lr_fidelity_averaged(&config, 1, AverageMode::default()).unwrap();
        let set = LrOverlapSet::compute(&config.nominal_sample(), quarter_period(0.2).unwrap()).unwrap();
        assert_eq!(avg.mean, lr_fidelity_1(&set));
        assert_eq!(avg.error, 0.0);
    }
}
