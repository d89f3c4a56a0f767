//! Fast oracle suite behind `rmtq check`.

use std::fmt;

use crate::error::Result;
use crate::gapref::{self, fredholm};
use crate::harness::seed::{derive_substream, StreamPath};
use crate::mde::{self, DeformationSpectrum, DensityEvaluator};
use crate::spectral;
use crate::C64;

/// Nodes of the Nyström rule used by the determinant cross-check.
pub const FREDHOLM_NODES: usize = 60;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    /// Human-readable acceptance band.
    pub bound: String,
    pub passed: bool,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<34} {:>12.4e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.bound
        )
    }
}

fn within(name: &'static str, value: f64, lo: f64, hi: f64) -> CheckResult {
    CheckResult {
        name,
        value,
        bound: format!("in [{lo}, {hi}]"),
        passed: value >= lo && value <= hi,
    }
}

fn at_most(name: &'static str, value: f64, hi: f64) -> CheckResult {
    CheckResult {
        name,
        value,
        bound: format!("<= {hi:e}"),
        passed: value <= hi,
    }
}

/// `sup_s |p_beta - p_beta^W|` on the reference grid.
pub fn surmise_distance(beta: u8) -> Result<f64> {
    let gm = gapref::gaudin_mehta(beta)?;
    let w = gapref::wigner_surmise(beta, gm.grid())?;
    Ok(gm.sup_density_distance(&w))
}

/// `sup_{s in [0.1, 3]} |p_2^painleve - p_2^fredholm|` on a 0.01 grid.
pub fn painleve_fredholm_distance() -> Result<f64> {
    let gm = gapref::gaudin_mehta(2)?;
    let mut worst = 0.0f64;
    for k in 0..=290 {
        let s = 0.1 + 0.01 * k as f64;
        let (p, _) = fredholm::p2_fd(s, FREDHOLM_NODES)?;
        worst = worst.max((gm.density_at(s) - p).abs());
    }
    Ok(worst)
}

/// Closed-form semicircle Stieltjes transform, `Im z > 0`.
pub fn semicircle_m(z: C64) -> C64 {
    let r = (z * z - 4.0).sqrt();
    // Pick the branch with Im m > 0.
    let m = (-z + r) * 0.5;
    if m.im > 0.0 {
        m
    } else {
        (-z - r) * 0.5
    }
}

/// `(max grid error, max residual, max quantile inversion error)` of the
/// MDE against the semicircle law.
pub fn mde_semicircle_errors() -> Result<(f64, f64, f64)> {
    let spec = DeformationSpectrum::zero(8);
    let mut grid_err = 0.0f64;
    let mut residual = 0.0f64;
    for k in 0..=400 {
        let e = -2.4 + 4.8 * k as f64 / 400.0;
        for eta in [1e-3, 0.1, 1.0] {
            let z = C64::new(e, eta);
            let sol = mde::solve_mde(&spec, z)?;
            grid_err = grid_err.max((sol.m() - semicircle_m(z)).norm());
            residual = residual.max(sol.residual());
        }
    }
    let dos = mde::scdos(&spec, &mde::default_grid(&spec, 801))?;
    for (&e, &rho) in dos.grid().iter().zip(dos.rho()) {
        grid_err = grid_err.max((rho - mde::semicircle_density(e, 2.0)).abs());
    }
    let ev = DensityEvaluator::new(spec);
    let n = 200;
    let mut inv = 0.0f64;
    for i in 1..n {
        let g = ev.quantile(i, n)?;
        inv = inv.max((mde::semicircle_cdf(g, 2.0) - i as f64 / n as f64).abs());
    }
    Ok((grid_err, residual, inv))
}

/// `|<G(z) G(conj z)> - <Im G(z)> / eta|` for one GUE draw.
pub fn ward_identity_error(n: usize, seed: u64) -> Result<f64> {
    let mut rng = derive_substream(seed, &StreamPath::new("check").push("ward"));
    let h = crate::ensembles::sample_gue(n, &mut rng);
    let sd = spectral::eigh(&h, true)?;
    let z = C64::new(0.1, (n as f64).powf(-0.4));
    let id = crate::ensembles::HermitianMatrix::identity(n, h.symmetry());
    let gg = spectral::resolvent_trace_product_spectral(&sd, &sd, z, z.conj(), &id)?;
    let g = spectral::resolvent_trace(&sd, z)?;
    Ok((gg - C64::new(g.im / z.im, 0.0)).norm())
}

pub fn run_checks() -> Result<Vec<CheckResult>> {
    let mut out = vec![
        within("surmise_distance_beta2", surmise_distance(2)?, 0.003, 0.007),
        within("surmise_distance_beta1", surmise_distance(1)?, 0.012, 0.020),
        at_most("painleve_vs_fredholm", painleve_fredholm_distance()?, 1e-6),
    ];
    for beta in [1u8, 2] {
        let r = gapref::gaudin_mehta(beta)?;
        let (mass, mean) = if beta == 1 {
            ("mass_beta1", "mean_beta1")
        } else {
            ("mass_beta2", "mean_beta2")
        };
        out.push(at_most(mass, (r.mass() - 1.0).abs(), 1e-4));
        out.push(at_most(mean, (r.mean() - 1.0).abs(), 1e-3));
    }
    let (grid, residual, inv) = mde_semicircle_errors()?;
    out.push(at_most("mde_semicircle_grid", grid, 1e-10));
    out.push(at_most("mde_residual", residual, 1e-12));
    out.push(at_most("mde_quantile_inversion", inv, 1e-8));
    out.push(at_most("ward_identity", ward_identity_error(100, 1)?, 1e-10));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn semicircle_branch() {
        let m = semicircle_m(C64::new(0.0, 1.0));
        // m(i) = i (sqrt(5) - 1) / 2
        assert!((m - C64::new(0.0, (5f64.sqrt() - 1.0) / 2.0)).norm() < 1e-15);
        let z = C64::new(3.0, 1e-9);
        let m = semicircle_m(z);
        assert!(m.im > 0.0 && (m * m + z * m + 1.0).norm() < 1e-12);
    }

    #[test]
    fn display_marks_failures() {
        let c = at_most("x", 2.0, 1.0);
        assert!(!c.passed);
        assert!(c.to_string().starts_with("FAIL"));
    }
}
