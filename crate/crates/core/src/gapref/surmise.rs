//! Wigner surmise densities and their CDFs in closed form.

use std::f64::consts::PI;

/// `(p, F)` of the beta = 2 surmise.
pub fn surmise2(s: f64) -> (f64, f64) {
    if s <= 0.0 {
        return (0.0, 0.0);
    }
    let a = 4.0 / PI;
    let c = 32.0 / (PI * PI);
    let g = (-a * s * s).exp();
    let p = c * s * s * g;
    // int_0^s u^2 e^{-a u^2} du
    let m2 = -s * g / (2.0 * a) + PI.sqrt() / (4.0 * a.powf(1.5)) * libm::erf(a.sqrt() * s);
    (p, (c * m2).min(1.0))
}

/// `(p, F)` of the beta = 1 surmise.
pub fn surmise1(s: f64) -> (f64, f64) {
    if s <= 0.0 {
        return (0.0, 0.0);
    }
    let g = (-PI * s * s / 4.0).exp();
    (0.5 * PI * s * g, 1.0 - g)
}
