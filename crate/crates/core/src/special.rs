//! Special functions not covered by `libm`.

use libm::erfc;

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Scaled complementary error function `exp(x^2) erfc(x)`, finite for all `x >= -26`.
///
/// Large arguments use the Laplace continued fraction so the product never
/// forms `exp(x^2)` explicitly.
pub fn erfcx(x: f64) -> f64 {
    if x < 4.0 {
        (x * x).exp() * erfc(x)
    } else {
        // erfc(x) e^{x^2} sqrt(pi) = 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let mut tail = x;
        for k in (1..=120).rev() {
            tail = x + (k as f64 / 2.0) / tail;
        }
        FRAC_1_SQRT_PI / tail
    }
}
