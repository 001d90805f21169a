//! Physical parameters, frozen magnetic configurations and logical qubits.
//!
//! All rates are dimensionless ratios to the spontaneous-emission rate, which
//! is fixed to [`GAMMA`]` = 1`. Durations are in units of `1/gamma`.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::C64;

/// Spontaneous-emission rate of the trion; the unit of every other rate.
pub const GAMMA: f64 = 1.0;

/// Electron (ground) or trion (excited) spin projection along the growth axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub const ALL: [Spin; 2] = [Spin::Up, Spin::Down];

    pub fn index(self) -> usize {
        match self {
            Spin::Up => 0,
            Spin::Down => 1,
        }
    }

    pub fn flipped(self) -> Spin {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }
}

/// Circular polarization of a waveguide photon.
///
/// `R` couples the `up` ground state to the `up` trion, `L` the `down` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarization {
    R,
    L,
}

impl Polarization {
    pub const ALL: [Polarization; 2] = [Polarization::R, Polarization::L];

    pub fn index(self) -> usize {
        match self {
            Polarization::R => 0,
            Polarization::L => 1,
        }
    }

    /// Spin projection whose optical transition this polarization drives.
    pub fn spin(self) -> Spin {
        match self {
            Polarization::R => Spin::Up,
            Polarization::L => Spin::Down,
        }
    }

    pub fn flipped(self) -> Polarization {
        match self {
            Polarization::R => Polarization::L,
            Polarization::L => Polarization::R,
        }
    }
}

/// Device and protocol parameters, in units of `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConfig {
    pub gamma: f64,
    /// Trion precession frequency set by the external field.
    pub omega_e: f64,
    /// Nominal electron precession frequency from the external field alone.
    pub omega_g_bar: f64,
    /// Landé ratio `g_el / g_tr`, when the config was built from it.
    pub k_ratio: Option<f64>,
    /// Per-component standard deviation of the Overhauser precession vector.
    pub w: f64,
    /// Bandwidth of the incoming photons (controlled-Z only).
    pub big_gamma: f64,
}

impl PhysicalConfig {
    pub fn new(omega_e: f64, omega_g_bar: f64, w: f64, big_gamma: f64) -> Result<Self> {
        let config = PhysicalConfig {
            gamma: GAMMA,
            omega_e,
            omega_g_bar,
            k_ratio: None,
            w,
            big_gamma,
        };
        config.validate()?;
        Ok(config)
    }

    /// Configuration with `omega_g_bar = k * omega_e`.
    pub fn with_k_ratio(k: f64, omega_e: f64, w: f64, big_gamma: f64) -> Result<Self> {
        let config = PhysicalConfig {
            gamma: GAMMA,
            omega_e,
            omega_g_bar: k * omega_e,
            k_ratio: Some(k),
            w,
            big_gamma,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || (self.gamma - GAMMA).abs() > 0.0 {
            return Err(Error::param("gamma", "rates are expressed in units of gamma = 1"));
        }
        for (name, value) in [
            ("omega_e", self.omega_e),
            ("omega_g_bar", self.omega_g_bar),
            ("w", self.w),
            ("big_gamma", self.big_gamma),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::param(name, format!("must be finite and >= 0, got {value}")));
            }
        }
        if let Some(k) = self.k_ratio {
            if !(k > 0.0) || !k.is_finite() {
                return Err(Error::param("k_ratio", format!("must be > 0, got {k}")));
            }
            let expected = k * self.omega_e;
            if (self.omega_g_bar - expected).abs() > 1e-12 * expected.abs().max(1.0) {
                return Err(Error::param(
                    "omega_g_bar",
                    format!("inconsistent with k * omega_e = {expected}"),
                ));
            }
        }
        Ok(())
    }

    /// Overhauser distribution centred on the external field along `x`.
    pub fn overhauser(&self) -> OverhauserDistribution {
        OverhauserDistribution {
            w: self.w,
            external: Vector3::new(self.omega_g_bar, 0.0, 0.0),
        }
    }

    /// The noiseless sample: external field only, `n = x`.
    pub fn nominal_sample(&self) -> MagneticSample {
        MagneticSample::along_x(self.omega_g_bar, self.omega_e)
    }
}

/// One frozen magnetic configuration: electron precession `omega_g` about the
/// unit axis `n`, and trion precession `omega_e` about `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagneticSample {
    pub omega_g: f64,
    pub omega_e: f64,
    pub n: Vector3<f64>,
    /// Set when the total electron field vanished and `n` defaulted to `x`.
    pub degenerate: bool,
}

impl MagneticSample {
    pub fn new(omega_g: f64, omega_e: f64, n: Vector3<f64>) -> Result<Self> {
        if !(omega_g >= 0.0) || !(omega_e >= 0.0) {
            return Err(Error::param("omega", "precession frequencies must be >= 0"));
        }
        if (n.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::param("n", format!("not a unit vector (norm {})", n.norm())));
        }
        Ok(MagneticSample {
            omega_g,
            omega_e,
            n,
            degenerate: false,
        })
    }

    pub fn along_x(omega_g: f64, omega_e: f64) -> Self {
        MagneticSample {
            omega_g,
            omega_e,
            n: Vector3::x(),
            degenerate: false,
        }
    }

    /// Sample from spherical angles of `n`.
    pub fn from_angles(omega_g: f64, omega_e: f64, theta: f64, phi: f64) -> Self {
        let n = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
        MagneticSample {
            omega_g,
            omega_e,
            n: n.normalize(),
            degenerate: false,
        }
    }

    /// Sample whose electron precession vector is `field` (magnitude and axis).
    pub fn from_field(field: Vector3<f64>, omega_e: f64) -> Self {
        let omega_g = field.norm();
        if omega_g == 0.0 {
            MagneticSample {
                omega_g: 0.0,
                omega_e,
                n: Vector3::x(),
                degenerate: true,
            }
        } else {
            MagneticSample {
                omega_g,
                omega_e,
                n: field / omega_g,
                degenerate: false,
            }
        }
    }

    pub fn theta(&self) -> f64 {
        self.n.z.clamp(-1.0, 1.0).acos()
    }

    pub fn phi(&self) -> f64 {
        self.n.y.atan2(self.n.x)
    }

    /// `n_x + i n_y`
    pub fn n_plus(&self) -> C64 {
        C64::new(self.n.x, self.n.y)
    }

    /// `n_x - i n_y`
    pub fn n_minus(&self) -> C64 {
        C64::new(self.n.x, -self.n.y)
    }
}

/// Isotropic Gaussian distribution of the Overhauser precession vector,
/// offset by the external-field contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverhauserDistribution {
    pub w: f64,
    pub external: Vector3<f64>,
}

impl OverhauserDistribution {
    pub fn new(w: f64, external: Vector3<f64>) -> Result<Self> {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::param("w", format!("must be finite and >= 0, got {w}")));
        }
        Ok(OverhauserDistribution { w, external })
    }

    /// Sample for an explicit Overhauser vector `draw`.
    pub fn sample_from_draw(&self, omega_e: f64, draw: Vector3<f64>) -> MagneticSample {
        MagneticSample::from_field(self.external + draw, omega_e)
    }

    /// Standard-normal triple for `(seed, index)`.
    ///
    /// Each index owns its own ChaCha stream, so the draw depends only on the
    /// pair and not on how many samples were taken before it.
    pub fn standard_draw(seed: u64, index: u64) -> Vector3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let x: f64 = StandardNormal.sample(&mut rng);
        let y: f64 = StandardNormal.sample(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        Vector3::new(x, y, z)
    }

    pub fn sample_seeded(&self, omega_e: f64, seed: u64, index: u64) -> MagneticSample {
        let draw = Self::standard_draw(seed, index) * self.w;
        self.sample_from_draw(omega_e, draw)
    }
}

/// Normalized logical qubit `alpha |0-like> + beta |1-like>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochQubit {
    pub alpha: C64,
    pub beta: C64,
}

impl BlochQubit {
    pub fn new(alpha: C64, beta: C64) -> Result<Self> {
        let norm = alpha.norm_sqr() + beta.norm_sqr();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::param("qubit", format!("|alpha|^2 + |beta|^2 = {norm}")));
        }
        Ok(BlochQubit { alpha, beta })
    }

    /// Point on the Bloch sphere: `cos(theta/2)`, `e^{i phi} sin(theta/2)`.
    pub fn from_bloch(theta: f64, phi: f64) -> Self {
        BlochQubit {
            alpha: C64::new((theta / 2.0).cos(), 0.0),
            beta: C64::from_polar((theta / 2.0).sin(), phi),
        }
    }

    pub fn p_alpha(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    pub fn p_beta(&self) -> f64 {
        self.beta.norm_sqr()
    }
}
