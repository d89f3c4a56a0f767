//! Sine-kernel gap probability `E(s) = det(I - K_s)` on `[0, s]` by Nyström
//! discretisation, used as an independent oracle for the beta = 2 density.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    for i in 0..q.div_ceil(2) {
        let mut r = (PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, r);
            for k in 2..=q {
                let p2 = ((2 * k - 1) as f64 * r * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if q == 0 {
                1.0
            } else if q == 1 {
                r
            } else {
                p1
            };
            let pm1 = if q == 1 { 1.0 } else { p0 };
            dp = q as f64 * (r * p - pm1) / (r * r - 1.0);
            let step = p / dp;
            r -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -r;
        x[q - 1 - i] = r;
        w[i] = 2.0 / ((1.0 - r * r) * dp * dp);
        w[q - 1 - i] = w[i];
    }
    (x, w)
}

fn sine_kernel(d: f64) -> f64 {
    let a = PI * d;
    if a.abs() < 1e-6 {
        1.0 - a * a / 6.0
    } else {
        a.sin() / a
    }
}

/// `log |det(I - K_s)|` and its sign, with `K_s` discretised on `q` nodes.
///
/// The discretised operator `delta_ij - w_j K(x_i, x_j)` stays well defined
/// for negative `s`, which the finite differences near zero rely on.
pub fn log_gap_probability(s: f64, q: usize) -> (f64, f64) {
    let (xi, wi) = gauss_legendre(q);
    let x: Vec<f64> = xi.iter().map(|v| 0.5 * s * (1.0 + v)).collect();
    let w: Vec<f64> = wi.iter().map(|v| 0.5 * s * v).collect();
    let mut a = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..q {
            a[i * q + j] = f64::from(u8::from(i == j)) - w[j] * sine_kernel(x[i] - x[j]);
        }
    }
    let mut log_det = 0.0;
    let mut sign = 1.0;
    for col in 0..q {
        let piv = (col..q)
            .max_by(|&r1, &r2| a[r1 * q + col].abs().total_cmp(&a[r2 * q + col].abs()))
            .unwrap_or(col);
        let pv = a[piv * q + col];
        if pv == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        if piv != col {
            for k in 0..q {
                a.swap(piv * q + k, col * q + k);
            }
            sign = -sign;
        }
        log_det += pv.abs().ln();
        if pv < 0.0 {
            sign = -sign;
        }
        for r in col + 1..q {
            let factor = a[r * q + col] / pv;
            if factor != 0.0 {
                for k in col..q {
                    a[r * q + k] -= factor * a[col * q + k];
                }
            }
        }
    }
    (log_det, sign)
}

/// `E(s)`; `E(0) = 1`.
pub fn gap_probability(s: f64, q: usize) -> f64 {
    if s == 0.0 {
        return 1.0;
    }
    let (l, sign) = log_gap_probability(s, q);
    sign * l.exp()
}

/// Central-difference step for the oracle derivatives.
pub const FD_STEP: f64 = 1e-3;

/// `(p_2, F_2)` at `s` from finite differences of `E`.
pub fn p2_fd(s: f64, q: usize) -> Result<(f64, f64)> {
    if q < 20 {
        return Err(Error::InvalidInput(format!("quadrature order {q} below 20")));
    }
    let h = FD_STEP;
    let e: Vec<f64> = (-2..=2).map(|k| gap_probability(s + k as f64 * h, q)).collect();
    let p = (-e[4] + 16.0 * e[3] - 30.0 * e[2] + 16.0 * e[1] - e[0]) / (12.0 * h * h);
    let de = (-e[4] + 8.0 * e[3] - 8.0 * e[1] + e[0]) / (12.0 * h);
    // E'(0) = -1, so F_2(s) = E'(s) + 1.
    Ok((p, 1.0 + de))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(10);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let m18: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((m18 - 2.0 / 19.0).abs() < 1e-13);
        let (x, _) = gauss_legendre(7);
        assert!(x[3].abs() < 1e-15);
    }

    #[test]
    fn gap_probability_basic_properties() {
        assert_eq!(gap_probability(0.0, 40), 1.0);
        let mut prev = 1.0;
        for k in 1..=40 {
            let e = gap_probability(0.1 * k as f64, 40);
            assert!(e > 0.0 && e < prev);
            prev = e;
        }
        let small = gap_probability(1e-3, 40);
        assert!((small - (1.0 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn quadrature_convergence() {
        let a = gap_probability(2.0, 40);
        let b = gap_probability(2.0, 80);
        assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn small_order_rejected() {
        assert!(p2_fd(1.0, 10).is_err());
    }
}
