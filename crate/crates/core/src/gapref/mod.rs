//! Reference nearest-neighbour gap distributions `p_1`, `p_2`.
//!
//! The primary route is the sigma form of Painlevé V ([`painleve`]); the
//! sine-kernel determinant ([`fredholm`]) gives an independent `p_2`, and the
//! Wigner surmises ([`surmise`]) give the 2x2 approximations.

pub mod fredholm;
pub mod ks;
pub mod ode;
pub mod painleve;
pub mod surmise;

use std::fmt;
use std::io::Write;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::sig12;
pub use ks::{ks_distance, ks_two_sample, Cdf, EmpiricalCdf};
pub use painleve::{solve_sigma, SigmaPoint, SigmaSolution};

pub const DEFAULT_S_MAX: f64 = 5.0;
pub const DEFAULT_POINTS: usize = 5001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Painleve,
    Fredholm,
    Surmise,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Painleve => "painleve",
            Provenance::Fredholm => "fredholm",
            Provenance::Surmise => "surmise",
        })
    }
}

/// Tabulated gap density with its CDF.
#[derive(Clone, Debug)]
pub struct GapReference {
    beta: u8,
    grid: Vec<f64>,
    p: Vec<f64>,
    cdf: Vec<f64>,
    provenance: Provenance,
}

/// `points` equally spaced values on `[0, s_max]`.
pub fn uniform_grid(s_max: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points).map(|k| s_max * k as f64 / (points - 1) as f64).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid[0] < 0.0 || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput(
            "gap grid must be nonnegative and strictly increasing".into(),
        ));
    }
    Ok(())
}

fn check_beta(beta: u8) -> Result<()> {
    if beta == 1 || beta == 2 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("beta must be 1 or 2, got {beta}")))
    }
}

fn sigma_points(sig: &SigmaSolution, grid: &[f64]) -> Result<Vec<SigmaPoint>> {
    check_grid(grid)?;
    let t_end = std::f64::consts::PI * grid[grid.len() - 1];
    if t_end > sig.t_max() {
        return Err(Error::OutsideRange {
            point: t_end,
            lo: 0.0,
            hi: sig.t_max(),
        });
    }
    let ts: Vec<f64> = grid.iter().map(|s| std::f64::consts::PI * s).collect();
    sig.at_many(&ts)
}

/// `p_2` from the sigma function, differentiated analytically.
pub fn p2_from_sigma(sig: &SigmaSolution, grid: &[f64]) -> Result<GapReference> {
    let pts = sigma_points(sig, grid)?;
    let (p, cdf) = grid.iter().zip(&pts).map(|(&s, sp)| painleve::p2_point(sp, s)).unzip();
    Ok(GapReference {
        beta: 2,
        grid: grid.to_vec(),
        p,
        cdf,
        provenance: Provenance::Painleve,
    })
}

/// `p_1` from the sigma function; errors if the radicand turns negative.
pub fn p1_from_sigma(sig: &SigmaSolution, grid: &[f64]) -> Result<GapReference> {
    let pts = sigma_points(sig, grid)?;
    let mut p = Vec::with_capacity(grid.len());
    let mut cdf = Vec::with_capacity(grid.len());
    for (&s, sp) in grid.iter().zip(&pts) {
        let (a, b) = painleve::p1_point(sp, s)?;
        p.push(a);
        cdf.push(b);
    }
    Ok(GapReference {
        beta: 1,
        grid: grid.to_vec(),
        p,
        cdf,
        provenance: Provenance::Painleve,
    })
}

/// `p_2` from finite differences of the sine-kernel determinant.
pub fn fredholm_p2_oracle(grid: &[f64], q: usize) -> Result<GapReference> {
    check_grid(grid)?;
    let mut p = Vec::with_capacity(grid.len());
    let mut cdf = Vec::with_capacity(grid.len());
    for &s in grid {
        let (a, b) = fredholm::p2_fd(s, q)?;
        p.push(a);
        cdf.push(b);
    }
    Ok(GapReference {
        beta: 2,
        grid: grid.to_vec(),
        p,
        cdf,
        provenance: Provenance::Fredholm,
    })
}

pub fn wigner_surmise(beta: u8, grid: &[f64]) -> Result<GapReference> {
    check_beta(beta)?;
    check_grid(grid)?;
    let f = if beta == 1 {
        surmise::surmise1
    } else {
        surmise::surmise2
    };
    let (p, cdf) = grid.iter().map(|&s| f(s)).unzip();
    Ok(GapReference {
        beta,
        grid: grid.to_vec(),
        p,
        cdf,
        provenance: Provenance::Surmise,
    })
}

/// Painlevé reference on `[0, s_max]`.
pub fn painleve_reference(beta: u8, s_max: f64, points: usize) -> Result<GapReference> {
    check_beta(beta)?;
    let sig = solve_sigma(std::f64::consts::PI * s_max, painleve::DEFAULT_T0)?;
    let grid = uniform_grid(s_max, points);
    if beta == 1 {
        p1_from_sigma(&sig, &grid)
    } else {
        p2_from_sigma(&sig, &grid)
    }
}

/// Shared default Gaudin-Mehta table for `beta`, built on first use.
pub fn gaudin_mehta(beta: u8) -> Result<&'static GapReference> {
    static P1: OnceLock<std::result::Result<GapReference, String>> = OnceLock::new();
    static P2: OnceLock<std::result::Result<GapReference, String>> = OnceLock::new();
    check_beta(beta)?;
    let cell = if beta == 1 { &P1 } else { &P2 };
    cell.get_or_init(|| painleve_reference(beta, DEFAULT_S_MAX, DEFAULT_POINTS).map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|e| Error::InvalidInput(format!("reference table failed: {e}")))
}

impl GapReference {
    pub fn beta(&self) -> u8 {
        self.beta
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.p
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn s_max(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    fn locate(&self, s: f64) -> usize {
        (self.grid.partition_point(|&g| g <= s).max(1) - 1).min(self.grid.len() - 2)
    }

    /// CDF by cubic Hermite interpolation with the density as slope.
    pub fn cdf_at(&self, s: f64) -> f64 {
        if s <= self.grid[0] {
            return if s < self.grid[0] { 0.0 } else { self.cdf[0] };
        }
        if s >= self.s_max() {
            return 1.0;
        }
        let k = self.locate(s);
        let (a, b) = (self.grid[k], self.grid[k + 1]);
        let h = b - a;
        let u = (s - a) / h;
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        (h00 * self.cdf[k] + h10 * h * self.p[k] + h01 * self.cdf[k + 1] + h11 * h * self.p[k + 1]).clamp(0.0, 1.0)
    }

    /// Density by four-point Lagrange interpolation; 0 outside the grid.
    pub fn density_at(&self, s: f64) -> f64 {
        if s < self.grid[0] || s > self.s_max() {
            return 0.0;
        }
        let n = self.grid.len();
        if n < 4 {
            let k = self.locate(s);
            let u = (s - self.grid[k]) / (self.grid[k + 1] - self.grid[k]);
            return (1.0 - u) * self.p[k] + u * self.p[k + 1];
        }
        let k = self.locate(s).saturating_sub(1).min(n - 4);
        let mut acc = 0.0;
        for i in k..k + 4 {
            let mut l = 1.0;
            for j in k..k + 4 {
                if i != j {
                    l *= (s - self.grid[j]) / (self.grid[i] - self.grid[j]);
                }
            }
            acc += l * self.p[i];
        }
        acc.max(0.0)
    }

    fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let g = &self.grid;
        let n = g.len();
        let h = g[1] - g[0];
        let uniform = g.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h);
        if uniform && n % 2 == 1 && n >= 3 {
            let mut acc = f(g[0], self.p[0]) + f(g[n - 1], self.p[n - 1]);
            for k in 1..n - 1 {
                acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(g[k], self.p[k]);
            }
            acc * h / 3.0
        } else {
            (0..n - 1)
                .map(|k| 0.5 * (g[k + 1] - g[k]) * (f(g[k], self.p[k]) + f(g[k + 1], self.p[k + 1])))
                .sum()
        }
    }

    /// `int p ds` over the grid.
    pub fn mass(&self) -> f64 {
        self.integrate(|_, p| p)
    }

    /// `int s p ds` over the grid.
    pub fn mean(&self) -> f64 {
        self.integrate(|s, p| s * p)
    }

    /// `sup |p - q|` over the grid points of `self` (other interpolated).
    pub fn sup_density_distance(&self, other: &GapReference) -> f64 {
        self.grid
            .iter()
            .zip(&self.p)
            .map(|(&s, &p)| (p - other.density_at(s)).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `s,p,cdf,provenance`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "s,p,cdf,provenance")?;
        for ((s, p), c) in self.grid.iter().zip(&self.p).zip(&self.cdf) {
            writeln!(w, "{},{},{},{}", sig12(*s), sig12(*p), sig12(*c), self.provenance)?;
        }
        Ok(())
    }
}

impl Cdf for GapReference {
    fn cdf(&self, x: f64) -> f64 {
        self.cdf_at(x)
    }
}
