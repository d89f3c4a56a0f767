//! Sigma form of Painlevé V and the gap densities derived from it.
//!
//! The ODE `(t s'')^2 + 4 (t s' - s)(t s' - s + s'^2) = 0` is integrated in the
//! variables `g = s / t` and `R = -g'`, which are O(1) at the origin. With
//! `v = (g - t R)^2 - t^2 R` the negative root reads `s'' = -2 sqrt(R v)` and
//! `R' = -(s'' + 2R) / t`. Two quadratures ride along:
//! `I2 = int g dt` and `J = int sqrt(R) dt`.

use std::f64::consts::PI;

use super::ode::{integrate, OdeOptions};
use crate::error::{Error, Result};

/// Radicands below `-RADICAND_TOL` are a branch loss; above it they clamp to 0.
pub const RADICAND_TOL: f64 = 1e-12;
/// Series start. The two-term data leaves an O(t0^2) error in the slow mode
/// that the flow amplifies about a hundredfold by t = 5.
pub const DEFAULT_T0: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-10;

const G: usize = 0;
const R: usize = 1;
const I2: usize = 2;
const J: usize = 3;

fn rhs(t: f64, y: &[f64; 4]) -> Result<[f64; 4]> {
    let (g, r) = (y[G], y[R]);
    let v = (g - t * r).powi(2) - t * t * r;
    if r < -RADICAND_TOL || v < -RADICAND_TOL {
        return Err(Error::BranchLoss { t, radicand: r.min(v) });
    }
    let (sr, sv) = (r.max(0.0).sqrt(), v.max(0.0).sqrt());
    // -(s'' + 2R)/t = 2 sqrt(R) (sqrt(v) - sqrt(R)) / t, written without the cancellation.
    let dr = if sv + sr > 0.0 {
        2.0 * sr * (v.max(0.0) - r.max(0.0)) / (t * (sv + sr))
    } else {
        0.0
    };
    Ok([-r, dr, g, sr])
}

/// State `[g, R, I2, J]` from the two-term small-t series.
fn series_state(t: f64) -> [f64; 4] {
    let pi2 = PI * PI;
    [-1.0 / PI - t / pi2, 1.0 / pi2, -t / PI - t * t / (2.0 * pi2), t / PI]
}

/// Sigma function values at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaPoint {
    pub t: f64,
    pub sigma: f64,
    pub dsigma: f64,
    pub d2sigma: f64,
    /// `-d/dt (sigma / t)`, the radicand of the GOE exponent.
    pub radicand: f64,
    pub d_radicand: f64,
    /// `int_0^t sigma / t`
    pub int_g: f64,
    /// `int_0^t sqrt(radicand)`
    pub int_sqrt: f64,
}

impl SigmaPoint {
    fn from_state(t: f64, y: &[f64; 4]) -> Result<Self> {
        let d = rhs(t, y)?;
        let (g, r) = (y[G], y[R]);
        let v = ((g - t * r).powi(2) - t * t * r).max(0.0);
        Ok(Self {
            t,
            sigma: t * g,
            dsigma: g - t * r,
            d2sigma: -2.0 * (r.max(0.0) * v).sqrt(),
            radicand: r,
            d_radicand: d[R],
            int_g: y[I2],
            int_sqrt: y[J],
        })
    }
}

/// Numerical solution of the sigma ODE on `[t0, T]`.
#[derive(Clone, Debug)]
pub struct SigmaSolution {
    t0: f64,
    t_max: f64,
    tol: f64,
    nodes: Vec<(f64, [f64; 4])>,
    /// Smallest radicand seen over accepted steps.
    min_radicand: f64,
}

/// Integrates from the series start `t0` to `t_max`.
pub fn solve_sigma(t_max: f64, t0: f64) -> Result<SigmaSolution> {
    solve_sigma_with_tolerance(t_max, t0, DEFAULT_TOL)
}

pub fn solve_sigma_with_tolerance(t_max: f64, t0: f64, tol: f64) -> Result<SigmaSolution> {
    if !(t0 > 0.0 && t0 <= 1e-2) {
        return Err(Error::InvalidInput(format!(
            "series start t0 = {t0} must lie in (0, 1e-2)"
        )));
    }
    if !(t_max > t0 && t_max <= 40.0) {
        return Err(Error::InvalidInput(format!(
            "endpoint T = {t_max} must lie in (t0, 40]"
        )));
    }
    let y0 = series_state(t0);
    let mut nodes = vec![(t0, y0)];
    let mut min_radicand = y0[R];
    let opts = OdeOptions {
        h_init: t0 * 0.1,
        ..OdeOptions::with_tolerance(tol)
    };
    integrate(&rhs, t0, y0, t_max, &opts, &mut |t, y| {
        min_radicand = min_radicand.min(y[R]);
        nodes.push((t, *y));
    })?;
    Ok(SigmaSolution {
        t0,
        t_max,
        tol,
        nodes,
        min_radicand,
    })
}

impl SigmaSolution {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Branch diagnostic: the smallest radicand met on the accepted steps.
    pub fn min_radicand(&self) -> f64 {
        self.min_radicand
    }

    /// Values at `t`, by the series below `t0` and by re-integrating from the
    /// nearest stored node above it.
    pub fn at(&self, t: f64) -> Result<SigmaPoint> {
        if !(t >= 0.0 && t <= self.t_max) {
            return Err(Error::OutsideRange {
                point: t,
                lo: 0.0,
                hi: self.t_max,
            });
        }
        if t <= self.t0 {
            let pi2 = PI * PI;
            return Ok(SigmaPoint {
                t,
                sigma: -t / PI - t * t / pi2,
                dsigma: -1.0 / PI - 2.0 * t / pi2,
                d2sigma: -2.0 / pi2,
                radicand: 1.0 / pi2,
                // From the O(t) term of the radicand, -d/dt(sigma/t) = 1/pi^2 + 2t/pi^3.
                d_radicand: 2.0 / (pi2 * PI),
                int_g: -t / PI - t * t / (2.0 * pi2),
                int_sqrt: t / PI,
            });
        }
        let k = self.nodes.partition_point(|(tn, _)| *tn <= t) - 1;
        let (tk, yk) = self.nodes[k];
        if tk == t {
            return SigmaPoint::from_state(t, &yk);
        }
        let opts = OdeOptions {
            h_init: (t - tk).min(1e-3),
            ..OdeOptions::with_tolerance(self.tol)
        };
        let y = integrate(&rhs, tk, yk, t, &opts, &mut |_, _| {})?;
        SigmaPoint::from_state(t, &y)
    }

    /// Values at many ascending points, integrating once through them.
    pub fn at_many(&self, ts: &[f64]) -> Result<Vec<SigmaPoint>> {
        if ts.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("evaluation points must be ascending".into()));
        }
        let mut out = Vec::with_capacity(ts.len());
        let mut state: Option<(f64, [f64; 4])> = None;
        let opts = OdeOptions::with_tolerance(self.tol);
        for &t in ts {
            if t <= self.t0 || t > self.t_max {
                out.push(self.at(t)?);
                continue;
            }
            let (ts0, ys0) = match state {
                Some(s) => s,
                None => (self.t0, self.nodes[0].1),
            };
            let y = if t == ts0 {
                ys0
            } else {
                let o = OdeOptions {
                    h_init: (t - ts0).min(1e-3).max(self.t0 * 0.1),
                    ..opts
                };
                integrate(&rhs, ts0, ys0, t, &o, &mut |_, _| {})?
            };
            state = Some((t, y));
            out.push(SigmaPoint::from_state(t, &y)?);
        }
        Ok(out)
    }
}

/// `(p, F)` for beta = 2 at spacing `s`.
pub fn p2_point(sp: &SigmaPoint, s: f64) -> (f64, f64) {
    if s == 0.0 {
        return (0.0, 0.0);
    }
    let e = sp.int_g.exp();
    let d1 = sp.sigma / s;
    let d2 = -PI * PI * sp.radicand;
    (e * (d2 + d1 * d1), 1.0 + e * d1)
}

/// `(p, F)` for beta = 1 at spacing `s`.
pub fn p1_point(sp: &SigmaPoint, s: f64) -> Result<(f64, f64)> {
    if s == 0.0 {
        return Ok((0.0, 0.0));
    }
    if sp.radicand < -RADICAND_TOL {
        return Err(Error::BranchLoss {
            t: sp.t,
            radicand: sp.radicand,
        });
    }
    let root = sp.radicand.max(0.0).sqrt();
    if root == 0.0 {
        return Err(Error::BranchLoss { t: sp.t, radicand: 0.0 });
    }
    let e = (0.5 * (sp.int_g - sp.int_sqrt)).exp();
    let d1 = 0.5 * PI * (sp.sigma / sp.t - root);
    let d2 = 0.5 * PI * PI * (-sp.radicand - sp.d_radicand / (2.0 * root));
    Ok((e * (d2 + d1 * d1), 1.0 + e * d1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_series_near_origin() {
        let sol = solve_sigma(5.0, DEFAULT_T0).unwrap();
        let t = 1e-3;
        let p = sol.at(t).unwrap();
        let series = -t / PI - t * t / (PI * PI);
        assert!((p.sigma - series).abs() <= 1e-9, "{} vs {series}", p.sigma);
        let small = sol.at(2e-4).unwrap();
        assert!((small.sigma / small.t + 1.0 / PI).abs() < 1e-3);
        assert!((p.radicand - 1.0 / (PI * PI)).abs() < 1e-3);
    }

    #[test]
    fn series_start_convergence() {
        let a = solve_sigma(6.0, DEFAULT_T0).unwrap().at(5.0).unwrap().sigma;
        let b = solve_sigma(6.0, DEFAULT_T0 / 2.0).unwrap().at(5.0).unwrap().sigma;
        assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
    }

    #[test]
    fn dense_and_pointwise_agree() {
        let sol = solve_sigma(10.0, DEFAULT_T0).unwrap();
        let ts = [0.5, 1.0, 3.3, 9.0];
        let many = sol.at_many(&ts).unwrap();
        for (t, p) in ts.iter().zip(many) {
            let q = sol.at(*t).unwrap();
            assert!((p.sigma - q.sigma).abs() < 1e-8 * (1.0 + q.sigma.abs()));
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(solve_sigma(50.0, 1e-4).is_err());
        assert!(solve_sigma(5.0, 0.0).is_err());
        let sol = solve_sigma(2.0, 1e-4).unwrap();
        assert!(matches!(sol.at(3.0), Err(Error::OutsideRange { .. })));
    }

    #[test]
    fn branch_loss_is_reported() {
        let y = [0.0, -1.0, 0.0, 0.0];
        assert!(matches!(rhs(1.0, &y), Err(Error::BranchLoss { .. })));
    }

    #[test]
    fn radicand_stays_positive() {
        let sol = solve_sigma(5.0 * PI, DEFAULT_T0).unwrap();
        assert!(sol.min_radicand() > 0.0);
        // Far out the forward flow is unstable and must stop with an error.
        assert!(solve_sigma(40.0, DEFAULT_T0).is_err());
    }
}
