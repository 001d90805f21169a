use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time arguments out of order: t' = {t_prime} exceeds t = {t}")]
    TimeOrder { t: f64, t_prime: f64 },

    #[error("time step gamma*dt = {delta_t} outside the single-occupation regime (0, 0.01]")]
    TruncationValidity { delta_t: f64 },

    #[error("quadrature did not converge: achieved {achieved:e}, requested {requested:e}")]
    QuadratureNonConvergence { achieved: f64, requested: f64 },

    #[error("non-finite integrand value at Overhauser sample {index} (omega_g = {omega_g}, n = {n:?})")]
    NonFiniteSample {
        index: usize,
        omega_g: f64,
        n: [f64; 3],
    },

    #[error("norm drift {drift:e} exceeds the allowed {allowed:e}")]
    NormDrift { drift: f64, allowed: f64 },

    #[error("excitation pulse requires the emitter in its ground manifold (excited population {population:e})")]
    EmitterNotInGround { population: f64 },

    #[error("wavepacket is not normalized: integral of |xi|^2 = {norm}")]
    Unnormalized { norm: f64 },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
