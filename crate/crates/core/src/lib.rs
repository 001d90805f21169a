//! Realistic fidelities of quantum-dot spin-photon interface protocols.
//!
//! The emitter is a charged quantum dot modelled as a four-level system
//! (electron spin ground states, trion excited states) coupled to a half-1D
//! waveguide with circular-polarization selection rules. Everything is
//! expressed in units of the spontaneous-emission rate `gamma = 1`.
//!
//! The crate is layered:
//!
//! - [`params`]: physical configuration, frozen magnetic samples, Bloch qubits.
//! - [`kraus`]: emitter Kraus operators and the discrete collision unitary.
//! - [`amplitudes`]: closed-form emission (`f`) and scattering (`lambda`)
//!   wavefunction coefficients and their photon overlaps.
//! - [`protocols`]: photon-number superposition, controlled-Z gate and
//!   Lindner–Rudolph cluster-state fidelities.
//! - [`averaging`]: Gaussian averaging over the frozen Overhauser field.
//! - [`oracle`]: brute-force time-bin collision-model simulator used to
//!   cross-check the analytic layer.
//!
//! Numerical plumbing lives in [`quadrature`] and [`special`].

// Negated comparisons are how inputs reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amplitudes;
pub mod averaging;
pub mod error;
pub mod kraus;
pub mod oracle;
pub mod params;
pub mod protocols;
pub mod quadrature;
pub mod special;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
pub use params::{
    BlochQubit, MagneticSample, OverhauserDistribution, PhysicalConfig, Polarization, Spin,
    GAMMA,
};
