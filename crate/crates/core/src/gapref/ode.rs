//! Adaptive Dormand-Prince 5(4) integrator for small fixed-size systems.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Tolerances and step limits.
#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl OdeOptions {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            h_init: 1e-6,
            h_min: 1e-14,
            h_max: 0.05,
        }
    }
}

/// Right-hand side `f(t, y)`.
pub type Rhs<'a, const D: usize> = dyn Fn(f64, &[f64; D]) -> Result<[f64; D]> + 'a;

/// Integrates `y' = f(t, y)` from `t0` to `t1 > t0`, calling `on_step` after
/// every accepted step. Returns the state at `t1`.
pub fn integrate<const D: usize>(
    f: &Rhs<'_, D>,
    t0: f64,
    y0: [f64; D],
    t1: f64,
    opts: &OdeOptions,
    on_step: &mut dyn FnMut(f64, &[f64; D]),
) -> Result<[f64; D]> {
    let mut t = t0;
    let mut y = y0;
    let mut h = opts.h_init.min(t1 - t0);
    let mut k0 = f(t, &y)?;
    while t < t1 {
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        let mut k = [[0.0; D]; 7];
        k[0] = k0;
        for s in 1..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    for d in 0..D {
                        ys[d] += h * a * kj[d];
                    }
                }
            }
            k[s] = f(t + C[s] * h, &ys)?;
        }
        let mut y5 = y;
        let mut err: f64 = 0.0;
        for d in 0..D {
            let mut hi = 0.0;
            let mut lo = 0.0;
            for s in 0..7 {
                hi += B5[s] * k[s][d];
                lo += B4[s] * k[s][d];
            }
            y5[d] += h * hi;
            let scale = opts.atol + opts.rtol * y[d].abs().max(y5[d].abs());
            err = err.max((h * (hi - lo)).abs() / scale);
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            y = y5;
            // First-same-as-last: the seventh stage is f at the new point.
            k0 = k[6];
            on_step(t, &y);
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = (h * factor).min(opts.h_max);
        if h < opts.h_min && t < t1 {
            return Err(Error::StepUnderflow { t });
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_and_oscillator() {
        let opts = OdeOptions::with_tolerance(1e-12);
        let y = integrate(&|_, y: &[f64; 1]| Ok([y[0]]), 0.0, [1.0], 2.0, &opts, &mut |_, _| {}).unwrap();
        assert!((y[0] - 2f64.exp()).abs() < 1e-10);
        let y = integrate(
            &|_, y: &[f64; 2]| Ok([y[1], -y[0]]),
            0.0,
            [0.0, 1.0],
            10.0,
            &opts,
            &mut |_, _| {},
        )
        .unwrap();
        assert!((y[0] - 10f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn errors_propagate() {
        let opts = OdeOptions::with_tolerance(1e-8);
        let r = integrate(
            &|t, _: &[f64; 1]| {
                if t > 0.5 {
                    Err(Error::BranchLoss { t, radicand: -1.0 })
                } else {
                    Ok([1.0])
                }
            },
            0.0,
            [0.0],
            1.0,
            &opts,
            &mut |_, _| {},
        );
        assert!(matches!(r, Err(Error::BranchLoss { .. })));
    }
}
