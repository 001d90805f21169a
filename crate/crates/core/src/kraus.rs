//! Emitter Kraus operators and the single-bin collision unitary.
//!
//! Basis order on the emitter is `(up g, down g, up e, down e)`. The collision
//! space is `emitter ⊗ bin_R ⊗ bin_L` with each bin truncated to occupation
//! 0 or 1, flattened as `emitter * 4 + r * 2 + l`.

use std::ops::{Add, Mul};

use nalgebra::{DMatrix, Matrix2, Matrix4, SMatrix};

use crate::error::{Error, Result};
use crate::params::{MagneticSample, Polarization, Spin, GAMMA};
use crate::C64;

pub const UP_G: usize = 0;
pub const DOWN_G: usize = 1;
pub const UP_E: usize = 2;
pub const DOWN_E: usize = 3;

/// Largest `gamma * delta_t` for which single-occupation bins are trusted.
pub const MAX_GAMMA_DT: f64 = 1e-2;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn ground_index(spin: Spin) -> usize {
    spin.index()
}

pub fn excited_index(spin: Spin) -> usize {
    2 + spin.index()
}

/// `n · sigma` in the `(up, down)` basis.
pub fn n_dot_sigma(sample: &MagneticSample) -> Matrix2<C64> {
    let n = sample.n;
    Matrix2::new(
        C64::new(n.z, 0.0),
        C64::new(n.x, -n.y),
        C64::new(n.x, n.y),
        C64::new(-n.z, 0.0),
    )
}

/// Ground-manifold propagator `exp(-i omega_g t/2 n·sigma)`.
pub fn ground_propagator(sample: &MagneticSample, t: f64) -> Matrix2<C64> {
    let (s, c) = (0.5 * sample.omega_g * t).sin_cos();
    Matrix2::identity() * C64::new(c, 0.0) - n_dot_sigma(sample) * C64::new(0.0, s)
}

/// Trion-manifold propagator including radiative decay.
pub fn excited_propagator(sample: &MagneticSample, t: f64) -> Matrix2<C64> {
    let (s, c) = (0.5 * sample.omega_e * t).sin_cos();
    let decay = (-0.5 * GAMMA * t).exp();
    Matrix2::new(
        C64::new(c, 0.0),
        C64::new(0.0, -s),
        C64::new(0.0, -s),
        C64::new(c, 0.0),
    ) * C64::new(decay, 0.0)
}

/// 4×4 operator on the emitter in the decoupled basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmitterOperator(pub Matrix4<C64>);

impl EmitterOperator {
    pub fn zeros() -> Self {
        EmitterOperator(Matrix4::zeros())
    }

    pub fn identity() -> Self {
        EmitterOperator(Matrix4::identity())
    }

    pub fn from_blocks(ground: Matrix2<C64>, excited: Matrix2<C64>) -> Self {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(&ground);
        m.fixed_view_mut::<2, 2>(2, 2).copy_from(&excited);
        EmitterOperator(m)
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.0
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn ground_block(&self) -> Matrix2<C64> {
        self.0.fixed_view::<2, 2>(0, 0).into_owned()
    }

    pub fn excited_block(&self) -> Matrix2<C64> {
        self.0.fixed_view::<2, 2>(2, 2).into_owned()
    }

    pub fn adjoint(&self) -> Self {
        EmitterOperator(self.0.adjoint())
    }

    pub fn apply(&self, state: &[C64; 4]) -> [C64; 4] {
        let mut out = [ZERO; 4];
        for (r, o) in out.iter_mut().enumerate() {
            for (c, s) in state.iter().enumerate() {
                *o += self.0[(r, c)] * s;
            }
        }
        out
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        self.0.singular_values().max()
    }
}

impl Mul for EmitterOperator {
    type Output = EmitterOperator;
    fn mul(self, rhs: EmitterOperator) -> EmitterOperator {
        EmitterOperator(self.0 * rhs.0)
    }
}

impl Add for EmitterOperator {
    type Output = EmitterOperator;
    fn add(self, rhs: EmitterOperator) -> EmitterOperator {
        EmitterOperator(self.0 + rhs.0)
    }
}

/// `H_s = (omega_g/2) n·sigma` on the ground pair plus `(omega_e/2) sigma_x` on the trion pair.
pub fn magnetic_hamiltonian(sample: &MagneticSample) -> EmitterOperator {
    let ground = n_dot_sigma(sample) * C64::new(0.5 * sample.omega_g, 0.0);
    let h = C64::new(0.5 * sample.omega_e, 0.0);
    let excited = Matrix2::new(ZERO, h, h, ZERO);
    EmitterOperator::from_blocks(ground, excited)
}

/// Conditional evolution with no photon emitted during `t`.
pub fn no_jump(t: f64, sample: &MagneticSample) -> Result<EmitterOperator> {
    if !(t >= 0.0) {
        return Err(Error::param("t", format!("must be >= 0, got {t}")));
    }
    Ok(EmitterOperator::from_blocks(
        ground_propagator(sample, t),
        excited_propagator(sample, t),
    ))
}

/// Emission of one photon of polarization `pol`.
pub fn jump_minus(pol: Polarization) -> EmitterOperator {
    let s = pol.spin();
    let mut m = Matrix4::zeros();
    m[(ground_index(s), excited_index(s))] = C64::new(GAMMA.sqrt(), 0.0);
    EmitterOperator(m)
}

/// Absorption of one photon of polarization `pol`.
pub fn jump_plus(pol: Polarization) -> EmitterOperator {
    let s = pol.spin();
    let mut m = Matrix4::zeros();
    m[(excited_index(s), ground_index(s))] = C64::new(-GAMMA.sqrt(), 0.0);
    EmitterOperator(m)
}

pub type Matrix16 = SMatrix<C64, 16, 16>;

/// Flattened index into the 16-dimensional collision space.
pub const fn collision_index(emitter: usize, r: usize, l: usize) -> usize {
    emitter * 4 + r * 2 + l
}

/// Exact `exp(-i dt (H_s + V))` for one emitter-bin collision.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionUnitary {
    pub delta_t: f64,
    matrix: Matrix16,
}

impl CollisionUnitary {
    pub fn new(delta_t: f64, sample: &MagneticSample) -> Result<Self> {
        if !(delta_t > 0.0) || GAMMA * delta_t > MAX_GAMMA_DT {
            return Err(Error::TruncationValidity {
                delta_t: GAMMA * delta_t,
            });
        }
        let generator = collision_generator(delta_t, sample);
        let mut matrix = Matrix16::zeros();
        for block in excitation_blocks() {
            let dim = block.len();
            let sub = DMatrix::from_fn(dim, dim, |r, c| generator[(block[r], block[c])]);
            let eig = sub.symmetric_eigen();
            let phases = eig
                .eigenvalues
                .map(|lambda| C64::from_polar(1.0, -delta_t * lambda));
            let v = &eig.eigenvectors;
            let exp = v * DMatrix::from_diagonal(&phases) * v.adjoint();
            for r in 0..dim {
                for c in 0..dim {
                    matrix[(block[r], block[c])] = exp[(r, c)];
                }
            }
        }
        Ok(CollisionUnitary { delta_t, matrix })
    }

    pub fn matrix(&self) -> &Matrix16 {
        &self.matrix
    }

    pub fn element(&self, out: (usize, usize, usize), inp: (usize, usize, usize)) -> C64 {
        self.matrix[(
            collision_index(out.0, out.1, out.2),
            collision_index(inp.0, inp.1, inp.2),
        )]
    }

    /// Emitter operator taking bin occupation `(r_in, l_in)` to `(r_out, l_out)`.
    pub fn emitter_block(&self, out: (usize, usize), inp: (usize, usize)) -> EmitterOperator {
        let mut m = Matrix4::zeros();
        for e_out in 0..4 {
            for e_in in 0..4 {
                m[(e_out, e_in)] = self.element((e_out, out.0, out.1), (e_in, inp.0, inp.1));
            }
        }
        EmitterOperator(m)
    }

    pub fn unitarity_defect(&self) -> f64 {
        (self.matrix.adjoint() * self.matrix - Matrix16::identity())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

pub fn collision_unitary(delta_t: f64, sample: &MagneticSample) -> Result<CollisionUnitary> {
    CollisionUnitary::new(delta_t, sample)
}

fn collision_generator(delta_t: f64, sample: &MagneticSample) -> Matrix16 {
    let hs = magnetic_hamiltonian(sample);
    let mut h = Matrix16::zeros();
    for r in 0..2 {
        for l in 0..2 {
            for a in 0..4 {
                for b in 0..4 {
                    h[(collision_index(a, r, l), collision_index(b, r, l))] = hs.entry(a, b);
                }
            }
        }
    }
    let g = I * (GAMMA / delta_t).sqrt();
    // Emission |e, 0> -> |g, 1> with coupling i sqrt(gamma/dt); absorption is its adjoint.
    for other in 0..2 {
        let (from, to) = (
            collision_index(UP_E, 0, other),
            collision_index(UP_G, 1, other),
        );
        h[(to, from)] += g;
        h[(from, to)] += g.conj();
        let (from, to) = (
            collision_index(DOWN_E, other, 0),
            collision_index(DOWN_G, other, 1),
        );
        h[(to, from)] += g;
        h[(from, to)] += g.conj();
    }
    h
}

/// Index sets of constant excitation number (trion population plus photons).
fn excitation_blocks() -> Vec<Vec<usize>> {
    let mut blocks = vec![Vec::new(); 4];
    for e in 0..4 {
        for r in 0..2 {
            for l in 0..2 {
                let n = usize::from(e >= 2) + r + l;
                blocks[n].push(collision_index(e, r, l));
            }
        }
    }
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    const ONE: C64 = C64 { re: 1.0, im: 0.0 };

    fn noisy() -> MagneticSample {
        MagneticSample::new(0.37, 0.21, Vector3::new(0.3, -0.5, 0.2).normalize()).unwrap()
    }

    fn max_abs(m: &Matrix4<C64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_field_hamiltonian_vanishes() {
        let s = MagneticSample::along_x(0.0, 0.0);
        assert_eq!(max_abs(magnetic_hamiltonian(&s).matrix()), 0.0);
    }

    #[test]
    fn hamiltonian_along_z() {
        let s = MagneticSample::new(2.0, 0.6, Vector3::z()).unwrap();
        let h = magnetic_hamiltonian(&s);
        assert_eq!(h.entry(0, 0), ONE);
        assert_eq!(h.entry(1, 1), -ONE);
        assert_eq!(h.entry(2, 3), C64::new(0.3, 0.0));
        assert_eq!(h.entry(3, 2), C64::new(0.3, 0.0));
        assert_eq!(h.entry(2, 2), ZERO);
    }

    #[test]
    fn ground_block_eigenvalues() {
        let s = noisy();
        let eig = magnetic_hamiltonian(&s).ground_block().symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] + 0.185).abs() < 1e-14 && (ev[1] - 0.185).abs() < 1e-14);
    }

    #[test]
    fn no_jump_limits() {
        let s = noisy();
        assert!(max_abs(&(no_jump(0.0, &s).unwrap().0 - Matrix4::identity())) < 1e-15);
        let decay = no_jump(2.0, &MagneticSample::along_x(0.0, 0.0)).unwrap();
        let e1 = (-1.0f64).exp();
        let expected = Matrix4::from_diagonal(&nalgebra::Vector4::new(ONE, ONE, e1.into(), e1.into()));
        assert!(max_abs(&(decay.0 - expected)) < 1e-15);
        assert!(no_jump(-1.0, &s).is_err());
    }

    #[test]
    fn no_jump_spectral_norm_is_one() {
        let s = noisy();
        for k in 0..20 {
            let t = 0.5 * k as f64;
            assert!((no_jump(t, &s).unwrap().spectral_norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jump_selection_rules() {
        let up_e = [ZERO, ZERO, ONE, ZERO];
        assert_eq!(jump_minus(Polarization::R).apply(&up_e), [ONE * GAMMA.sqrt(), ZERO, ZERO, ZERO]);
        assert_eq!(jump_minus(Polarization::L).apply(&up_e), [ZERO; 4]);
        let up_g = [ONE, ZERO, ZERO, ZERO];
        assert_eq!(jump_plus(Polarization::R).apply(&up_g), [ZERO, ZERO, -ONE * GAMMA.sqrt(), ZERO]);
        for pol in Polarization::ALL {
            assert_eq!(jump_plus(pol), EmitterOperator(-jump_minus(pol).0.adjoint()));
        }
    }

    #[test]
    fn jump_operators_sum_to_excited_projector() {
        let sum = jump_minus(Polarization::R).adjoint() * jump_minus(Polarization::R)
            + jump_minus(Polarization::L).adjoint() * jump_minus(Polarization::L);
        let mut p = Matrix4::zeros();
        p[(2, 2)] = ONE * GAMMA;
        p[(3, 3)] = ONE * GAMMA;
        assert!(max_abs(&(sum.0 - p)) < 1e-15);
    }

    #[test]
    fn spin_polarization_mirror_maps_jumps() {
        let mut swap = Matrix4::zeros();
        for (a, b) in [(0, 1), (1, 0), (2, 3), (3, 2)] {
            swap[(a, b)] = ONE;
        }
        for pol in Polarization::ALL {
            let mirrored = swap * jump_minus(pol).0 * swap;
            assert_eq!(mirrored, jump_minus(pol.flipped()).0);
            let mirrored = swap * jump_plus(pol).0 * swap;
            assert_eq!(mirrored, jump_plus(pol.flipped()).0);
        }
    }

    #[test]
    fn collision_unitary_is_unitary() {
        for dt in [1e-2, 1e-3, 1e-5] {
            let u = CollisionUnitary::new(dt, &noisy()).unwrap();
            assert!(u.unitarity_defect() < 1e-12);
        }
        assert!(matches!(
            CollisionUnitary::new(0.02, &noisy()),
            Err(Error::TruncationValidity { .. })
        ));
        assert!(CollisionUnitary::new(0.0, &noisy()).is_err());
    }

    #[test]
    fn collision_unitary_tends_to_identity() {
        let u = CollisionUnitary::new(1e-9, &noisy()).unwrap();
        let defect = (u.matrix() - Matrix16::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        // Off-diagonal couplings scale as sqrt(gamma dt).
        assert!(defect < 1e-4);
    }

    #[test]
    fn vacuum_block_matches_no_jump_to_second_order() {
        let s = noisy();
        let residual = |dt: f64| {
            let u = CollisionUnitary::new(dt, &s).unwrap();
            max_abs(&(u.emitter_block((0, 0), (0, 0)).0 - no_jump(dt, &s).unwrap().0))
        };
        let (r1, r2, r3) = (residual(8e-3), residual(4e-3), residual(2e-3));
        let order = (r1 / r2).log2();
        let order2 = (r2 / r3).log2();
        assert!(order > 1.9 && order2 > 1.9, "orders {order} {order2}");
    }

    #[test]
    fn absorption_limit_matches_jump_plus() {
        let s = noisy();
        let err = |dt: f64| {
            let u = CollisionUnitary::new(dt, &s).unwrap();
            let block = u.emitter_block((0, 0), (1, 0)).0 / C64::new(dt.sqrt(), 0.0);
            max_abs(&(block - jump_plus(Polarization::R).0))
        };
        let (e1, e2) = (err(4e-3), err(2e-3));
        assert!(e2 < e1 && e2 < 5e-3, "{e1} {e2}");
    }

    #[test]
    fn kraus_completeness_second_order() {
        let s = noisy();
        let residual = |dt: f64| {
            let k = no_jump(dt, &s).unwrap();
            let mut sum = k.adjoint().0 * k.0;
            for pol in Polarization::ALL {
                let j = jump_minus(pol);
                sum += j.adjoint().0 * j.0 * C64::new(dt, 0.0);
            }
            max_abs(&(sum - Matrix4::identity()))
        };
        let (r1, r2) = (residual(4e-3), residual(2e-3));
        assert!(((r1 / r2).log2() - 2.0).abs() < 0.1);
    }
}
