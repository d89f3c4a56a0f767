//! Matrix Dyson Equation for deformed Wigner matrices.
//!
//! For Wigner covariance the self-energy is the scalar `<M>`, so
//! `-M^{-1} = z - D + <M>` is diagonal in the eigenbasis of `D = B + x A` and
//! collapses to the scalar equation `m = <(D - z - m)^{-1}>`. Everything in
//! this module works on the spectrum of `D` plus, where two deformations have
//! to be compared, their eigenbases.
//!
//! Counting function: with `Phi(z) = <log(D - z - m)> + m^2 / 2` one has
//! `Phi' = -m`, so `pi * CDF(E) = -<arg(D - E - m)> - Im(m^2) / 2` where
//! `m = m(E + i0)`. This gives the CDF pointwise without quadrature; the
//! tabulated [`ScDos`] still integrates the density by adaptive Simpson and
//! the two routes are checked against each other in the tests.

use std::io::Write;
use std::sync::Arc;

use faer::Mat;

use crate::ensembles::HermitianMatrix;
use crate::error::{Error, Result};
use crate::numfmt::sig12;
use crate::spectral::eigh;
use crate::C64;

const PI: f64 = std::f64::consts::PI;

/// Spectrum of the deformation `D`, ascending, optionally with the basis that
/// diagonalises it.
///
/// `modes[k]` names the basis column carrying `values[k]`. Two spectra built
/// from the same [`MonoparametricFamily`] with `B = 0` share one basis even
/// though the sort order of `x * a_k` flips with the sign of `x`.
#[derive(Clone, Debug)]
pub struct DeformationSpectrum {
    inner: Arc<SpectrumInner>,
}

#[derive(Debug)]
struct SpectrumInner {
    values: Vec<f64>,
    modes: Vec<usize>,
    /// Distinct values with their weight `multiplicity / N`.
    levels: Vec<(f64, f64)>,
    /// Columns indexed by mode; `None` is the standard basis.
    basis: Option<Arc<Mat<C64>>>,
}

impl DeformationSpectrum {
    /// `D = diag(values)` in the standard basis.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::with_basis(values.to_vec(), None)
    }

    /// `D = 0` (pure Wigner, semicircle law).
    pub fn zero(n: usize) -> Self {
        Self::from_values(&vec![0.0; n.max(1)]).expect("zeros are finite")
    }

    /// Diagonalises a Hermitian deformation.
    pub fn from_matrix(d: &HermitianMatrix) -> Result<Self> {
        let sd = eigh(d, true)?;
        let basis = sd.eigenvectors().cloned().map(Arc::new);
        Self::with_basis(sd.eigenvalues().to_vec(), basis)
    }

    fn with_basis(mode_values: Vec<f64>, basis: Option<Arc<Mat<C64>>>) -> Result<Self> {
        if mode_values.is_empty() {
            return Err(Error::InvalidInput("deformation spectrum is empty".into()));
        }
        if let Some(bad) = mode_values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: bad, col: bad });
        }
        let n = mode_values.len();
        let mut modes: Vec<usize> = (0..n).collect();
        modes.sort_by(|&a, &b| mode_values[a].total_cmp(&mode_values[b]).then(a.cmp(&b)));
        let values: Vec<f64> = modes.iter().map(|&k| mode_values[k]).collect();
        let w = 1.0 / n as f64;
        let mut levels: Vec<(f64, f64)> = Vec::new();
        for &v in &values {
            match levels.last_mut() {
                Some((last, weight)) if *last == v => *weight += w,
                _ => levels.push((v, w)),
            }
        }
        Ok(Self {
            inner: Arc::new(SpectrumInner {
                values,
                modes,
                levels,
                basis,
            }),
        })
    }

    pub fn n(&self) -> usize {
        self.inner.values.len()
    }

    /// Ascending eigenvalues of `D`.
    pub fn values(&self) -> &[f64] {
        &self.inner.values
    }

    pub fn modes(&self) -> &[usize] {
        &self.inner.modes
    }

    pub fn basis(&self) -> Option<&Mat<C64>> {
        self.inner.basis.as_deref()
    }

    /// True when both spectra are diagonal in one basis with matching modes.
    pub fn shares_basis(&self, other: &DeformationSpectrum) -> bool {
        if self.n() != other.n() {
            return false;
        }
        match (&self.inner.basis, &other.inner.basis) {
            (None, None) => true,
            (Some(a), Some(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }

    fn sums(&self, z: C64, m: C64) -> (C64, C64) {
        let mut s0 = C64::new(0.0, 0.0);
        let mut s1 = C64::new(0.0, 0.0);
        for &(d, w) in &self.inner.levels {
            let g = 1.0 / (d - z - m);
            s0 += g * w;
            s1 += g * g * w;
        }
        (s0, s1)
    }

    fn mean_arg(&self, z: C64, m: C64) -> f64 {
        self.inner.levels.iter().map(|&(d, w)| w * (d - z - m).arg()).sum()
    }

    /// Outermost edges of the support of the self-consistent density.
    ///
    /// At an edge the real solution `m` of the scalar equation meets the
    /// instability `<(d - w)^{-2}> = 1` with `w = E + m` outside the spectrum
    /// of `D`, so each edge is a one-dimensional monotone root.
    pub fn support_edges(&self) -> (f64, f64) {
        let values = self.values();
        let (dmin, dmax) = (values[0], values[values.len() - 1]);
        let f = |w: f64| -> f64 {
            self.inner
                .levels
                .iter()
                .map(|&(d, wt)| wt / ((d - w) * (d - w)))
                .sum::<f64>()
                - 1.0
        };
        let hi = {
            let (mut a, mut b) = (dmax, dmax + 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if mid == a || mid == b {
                    break;
                }
                if f(mid) > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            b
        };
        let lo = {
            let (mut a, mut b) = (dmin - 1.0, dmin);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if mid == a || mid == b {
                    break;
                }
                if f(mid) > 0.0 {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            a
        };
        let stieltjes = |w: f64| -> f64 { self.inner.levels.iter().map(|&(d, wt)| wt / (d - w)).sum() };
        (lo - stieltjes(lo), hi - stieltjes(hi))
    }

    /// Values of the solution for each mode, in mode order.
    fn by_mode(&self, sorted: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); sorted.len()];
        for (k, &mode) in self.modes().iter().enumerate() {
            out[mode] = sorted[k];
        }
        out
    }
}

/// Deformations `B + x A` for a fixed pair `(B, A)`.
#[derive(Clone, Debug)]
pub struct MonoparametricFamily {
    b: HermitianMatrix,
    a: HermitianMatrix,
    /// Eigen-decomposition of `A`, reused for every `x` when `B = 0`.
    a_spectrum: Option<(Vec<f64>, Arc<Mat<C64>>)>,
}

impl MonoparametricFamily {
    pub fn new(b: HermitianMatrix, a: HermitianMatrix) -> Result<Self> {
        b.check_compatible(&a)?;
        let a_spectrum = if b.is_zero() {
            let sd = eigh(&a, true)?;
            let basis = Arc::new(sd.eigenvectors().cloned().ok_or(Error::MissingEigenvectors)?);
            Some((sd.eigenvalues().to_vec(), basis))
        } else {
            None
        };
        Ok(Self { b, a, a_spectrum })
    }

    pub fn a(&self) -> &HermitianMatrix {
        &self.a
    }

    pub fn b(&self) -> &HermitianMatrix {
        &self.b
    }

    pub fn spectrum(&self, x: f64) -> Result<DeformationSpectrum> {
        match &self.a_spectrum {
            Some((values, basis)) => {
                DeformationSpectrum::with_basis(values.iter().map(|v| x * v).collect(), Some(Arc::clone(basis)))
            }
            None => DeformationSpectrum::from_matrix(&self.b.add_scaled(&self.a, x)?),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub damping: f64,
    pub newton_switch: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            newton_switch: 1e-3,
            max_iterations: 10_000,
            tolerance: 1e-12,
        }
    }
}

/// Solution of the scalar MDE at one spectral parameter.
#[derive(Clone, Debug)]
pub struct MdeSolution {
    z: C64,
    real_axis: bool,
    m: C64,
    mdiag: Vec<C64>,
    residual: f64,
    iterations: usize,
    spectrum: DeformationSpectrum,
}

impl MdeSolution {
    fn build(
        spectrum: &DeformationSpectrum,
        z: C64,
        m: C64,
        residual: f64,
        iterations: usize,
        real_axis: bool,
    ) -> Self {
        let mdiag = spectrum.values().iter().map(|&d| 1.0 / (d - z - m)).collect();
        Self {
            z,
            real_axis,
            m,
            mdiag,
            residual,
            iterations,
            spectrum: spectrum.clone(),
        }
    }

    pub fn z(&self) -> C64 {
        self.z
    }

    /// True for a boundary value `M(E + i0)`.
    pub fn is_real_axis(&self) -> bool {
        self.real_axis
    }

    /// `m = <M>`.
    pub fn m(&self) -> C64 {
        self.m
    }

    /// Eigenvalues `1 / (d_k - z - m)` of `M`, aligned with the ascending `d_k`.
    pub fn mdiag(&self) -> &[C64] {
        &self.mdiag
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn spectrum(&self) -> &DeformationSpectrum {
        &self.spectrum
    }

    /// `<Im M> / pi`.
    pub fn density(&self) -> f64 {
        self.m.im / PI
    }
}

/// Solves `m = <(D - z - m)^{-1}>` with `Im m > 0` for `Im z > 0`. Below
/// the real axis the solution is `m(conj z) = conj m(z)`.
pub fn solve_mde(spectrum: &DeformationSpectrum, z: C64) -> Result<MdeSolution> {
    solve_mde_with(spectrum, z, None, &SolverOptions::default())
}

pub fn solve_mde_with(
    spectrum: &DeformationSpectrum,
    z: C64,
    guess: Option<C64>,
    opts: &SolverOptions,
) -> Result<MdeSolution> {
    if z.im == 0.0 || !z.im.is_finite() || !z.re.is_finite() {
        return Err(Error::InvalidInput(format!("MDE needs Im z != 0, got {z}")));
    }
    if z.im < 0.0 {
        let (m, residual, iterations) = iterate(spectrum, z.conj(), guess.map(|g| g.conj()), opts)?;
        return Ok(MdeSolution::build(spectrum, z, m.conj(), residual, iterations, false));
    }
    let (m, residual, iterations) = iterate(spectrum, z, guess, opts)?;
    Ok(MdeSolution::build(spectrum, z, m, residual, iterations, false))
}

fn iterate(
    spectrum: &DeformationSpectrum,
    z: C64,
    guess: Option<C64>,
    opts: &SolverOptions,
) -> Result<(C64, f64, usize)> {
    let mut m = match guess {
        Some(g) if g.im > 0.0 && g.re.is_finite() => g,
        _ => C64::new(0.0, 1.0),
    };
    let mut residual = f64::INFINITY;
    for it in 0..opts.max_iterations {
        let (s0, s1) = spectrum.sums(z, m);
        let f = m - s0;
        residual = f.norm();
        if residual <= opts.tolerance {
            return Ok((m, residual, it));
        }
        if residual < opts.newton_switch {
            let mut step = f / (1.0 - s1);
            let mut next = m - step;
            let mut tries = 0;
            while !(next.im > 0.0) && tries < 60 {
                step *= 0.5;
                next = m - step;
                tries += 1;
            }
            if next.im > 0.0 {
                m = next;
                continue;
            }
        }
        m = (1.0 - opts.damping) * m + opts.damping * s0;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        residual,
    })
}

/// Newton refinement directly on the real axis, valid in the bulk where the
/// boundary value is regular. Returns `None` if it leaves the upper half plane
/// or drifts away from the starting point.
fn polish_on_axis(spectrum: &DeformationSpectrum, e: f64, start: C64, tol: f64) -> Option<(C64, f64)> {
    let z = C64::new(e, 0.0);
    let mut m = start;
    for _ in 0..60 {
        let (s0, s1) = spectrum.sums(z, m);
        let f = m - s0;
        if f.norm() <= tol && m.im > 0.0 {
            return Some((m, f.norm()));
        }
        m -= f / (1.0 - s1);
        if !(m.im > 0.0) || (m - start).norm() > 1e-3 {
            return None;
        }
    }
    None
}

/// Newton at eta = 0 near an edge or outside the support. A real root is
/// kept only on the stable branch `<(D - E - m)^{-2}> < 1`; it is returned
/// with `Im m = 0`.
fn polish_near_edge(spectrum: &DeformationSpectrum, e: f64, start: C64, tol: f64) -> Option<(C64, f64)> {
    let z = C64::new(e, 0.0);
    let mut m = start;
    for _ in 0..80 {
        let (s0, s1) = spectrum.sums(z, m);
        let f = m - s0;
        if f.norm() <= tol {
            if m.im.abs() <= 1e-9 * (1.0 + m.re.abs()) {
                let real = C64::new(m.re, 0.0);
                let (r0, r1) = spectrum.sums(z, real);
                let res = (real - r0).norm();
                return (r1.re < 1.0 && res <= tol).then_some((real, res));
            }
            return (m.im > 0.0).then_some((m, f.norm()));
        }
        m -= f / (1.0 - s1);
        if !m.re.is_finite() || !m.im.is_finite() || (m - start).norm() > 1e-2 {
            return None;
        }
    }
    None
}

/// Geometric eta schedule `1e-2, 5e-3, ...` down to the last value above `1e-6`.
pub fn eta_schedule() -> Vec<f64> {
    let mut out = Vec::new();
    let mut eta = 1e-2;
    while eta >= 1e-6 {
        out.push(eta);
        eta *= 0.5;
    }
    out
}

/// Below this density the eta extrapolation drops to first order.
pub const EDGE_DENSITY: f64 = 1e-3;

/// Boundary value of the MDE at a real energy.
#[derive(Clone, Copy, Debug)]
pub struct RealAxisPoint {
    pub energy: f64,
    pub m: C64,
    pub rho: f64,
    pub cdf: f64,
    /// Solution at the first eta of the schedule, used to warm start neighbours.
    pub m_start: C64,
    /// `true` when the value was refined by Newton at eta = 0.
    pub polished: bool,
    pub residual: f64,
}

/// Evaluates density and CDF at one energy by eta continuation.
pub fn real_axis_point(spectrum: &DeformationSpectrum, energy: f64, warm: Option<C64>) -> Result<RealAxisPoint> {
    let opts = SolverOptions::default();
    let schedule = eta_schedule();
    let mut guess = match warm {
        Some(w) => Some(w),
        None => Some(iterate(spectrum, C64::new(energy, 1.0), None, &opts)?.0),
    };
    let mut m_start = C64::new(0.0, 1.0);
    let mut last = C64::new(0.0, 1.0);
    let mut prev = C64::new(0.0, 1.0);
    let mut residual = 0.0;
    for (k, &eta) in schedule.iter().enumerate() {
        let z = C64::new(energy, eta);
        let solved = match iterate(spectrum, z, guess, &opts) {
            Ok(s) => s,
            Err(_) => {
                // Refine the schedule between the last accepted eta and this one.
                let mut sub = if k == 0 { 2.0 * eta } else { schedule[k - 1] };
                let mut g = guess;
                let mut out = None;
                while sub > eta * 1.000_001 {
                    sub = (sub / 2f64.sqrt()).max(eta);
                    match iterate(spectrum, C64::new(energy, sub), g, &opts) {
                        Ok(s) => {
                            g = Some(s.0);
                            out = Some(s);
                        }
                        Err(_) => return Err(Error::ContinuationFailed { energy }),
                    }
                }
                out.ok_or(Error::ContinuationFailed { energy })?
            }
        };
        if k == 0 {
            m_start = solved.0;
        }
        prev = last;
        last = solved.0;
        residual = solved.1;
        guess = Some(solved.0);
    }
    let eta_min = schedule[schedule.len() - 1];
    let z_min = C64::new(energy, eta_min);
    let z_prev = C64::new(energy, 2.0 * eta_min);
    let cdf_min = counting_function(spectrum, z_min, last);
    let cdf_prev = counting_function(spectrum, z_prev, prev);
    let rho_min = last.im / PI;

    if rho_min >= EDGE_DENSITY {
        let m_ext = 2.0 * last - prev;
        if let Some((m, res)) = polish_on_axis(spectrum, energy, m_ext, opts.tolerance) {
            return Ok(RealAxisPoint {
                energy,
                m,
                rho: m.im / PI,
                cdf: counting_function(spectrum, C64::new(energy, 0.0), m).clamp(0.0, 1.0),
                m_start,
                polished: true,
                residual: res,
            });
        }
        return Ok(RealAxisPoint {
            energy,
            m: m_ext,
            rho: (2.0 * rho_min - prev.im / PI).max(0.0),
            cdf: (2.0 * cdf_min - cdf_prev).clamp(0.0, 1.0),
            m_start,
            polished: false,
            residual,
        });
    }
    if let Some((m, res)) = polish_near_edge(spectrum, energy, last, opts.tolerance) {
        // A real root stands for the limit from above: nudge it into the upper
        // half plane for the argument branch.
        let m_arg = C64::new(m.re, m.im.max(f64::MIN_POSITIVE));
        return Ok(RealAxisPoint {
            energy,
            m,
            rho: m.im.max(0.0) / PI,
            cdf: counting_function(spectrum, C64::new(energy, 0.0), m_arg).clamp(0.0, 1.0),
            m_start,
            polished: true,
            residual: res,
        });
    }
    Ok(RealAxisPoint {
        energy,
        m: last,
        rho: rho_min.max(0.0),
        cdf: (2.0 * cdf_min - cdf_prev).clamp(0.0, 1.0),
        m_start,
        polished: false,
        residual,
    })
}

/// `(-<arg(D - z - m)> - Im(m^2)/2) / pi`, the CDF of the density smoothed at
/// height `Im z` (exact for `Im z = 0`).
pub fn counting_function(spectrum: &DeformationSpectrum, z: C64, m: C64) -> f64 {
    (-spectrum.mean_arg(z, m) - (m * m).im / 2.0) / PI
}

/// Real-axis limit `M(E + i0)` as an [`MdeSolution`].
pub fn solve_mde_real_axis(spectrum: &DeformationSpectrum, energy: f64) -> Result<MdeSolution> {
    let p = real_axis_point(spectrum, energy, None)?;
    Ok(MdeSolution::build(
        spectrum,
        C64::new(energy, 0.0),
        p.m,
        p.residual,
        0,
        true,
    ))
}

/// Pointwise density and CDF evaluation over one deformation.
#[derive(Clone, Debug)]
pub struct DensityEvaluator {
    spectrum: DeformationSpectrum,
    edges: (f64, f64),
}

impl DensityEvaluator {
    pub fn new(spectrum: DeformationSpectrum) -> Self {
        let edges = spectrum.support_edges();
        Self { spectrum, edges }
    }

    pub fn spectrum(&self) -> &DeformationSpectrum {
        &self.spectrum
    }

    pub fn support(&self) -> (f64, f64) {
        self.edges
    }

    pub fn point(&self, energy: f64) -> Result<RealAxisPoint> {
        real_axis_point(&self.spectrum, energy, None)
    }

    pub fn rho_at(&self, energy: f64) -> Result<f64> {
        Ok(self.point(energy)?.rho)
    }

    pub fn cdf_at(&self, energy: f64) -> Result<f64> {
        if energy <= self.edges.0 {
            return Ok(0.0);
        }
        if energy >= self.edges.1 {
            return Ok(1.0);
        }
        Ok(self.point(energy)?.cdf)
    }

    /// Classical location `gamma_i` with `CDF(gamma_i) = i / N`, `1 <= i <= N`.
    pub fn quantile(&self, i: usize, n: usize) -> Result<f64> {
        self.quantile_bracketed(i, n, self.edges.0, self.edges.1)
    }

    fn quantile_bracketed(&self, i: usize, n: usize, lo: f64, hi: f64) -> Result<f64> {
        if i == 0 || i > n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        if i == n {
            return Ok(self.edges.1);
        }
        let target = i as f64 / n as f64;
        let (mut a, mut b) = (lo.max(self.edges.0), hi.min(self.edges.1));
        // Bracket may come from an approximate table; widen until valid.
        while a > self.edges.0 && self.cdf_at(a)? > target {
            a = (a - (b - a).max(1e-6)).max(self.edges.0);
        }
        while b < self.edges.1 && self.cdf_at(b)? < target {
            b = (b + (b - a).max(1e-6)).min(self.edges.1);
        }
        let mut e = a + (b - a) * 0.5;
        for _ in 0..200 {
            let p = self.point(e)?;
            let f = p.cdf - target;
            if f.abs() <= 1e-13 {
                return Ok(e);
            }
            if f < 0.0 {
                a = e;
            } else {
                b = e;
            }
            if b - a <= 1e-15 * (1.0 + e.abs()) {
                return Ok(e);
            }
            let newton = if p.rho > 0.0 { e - f / p.rho } else { f64::NAN };
            e = if newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
        }
        Ok(e)
    }
}

/// Tabulated self-consistent density of states.
#[derive(Clone, Debug)]
pub struct ScDos {
    evaluator: DensityEvaluator,
    grid: Vec<f64>,
    rho: Vec<f64>,
    cdf: Vec<f64>,
}

impl ScDos {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// CDF at the grid points, from adaptive Simpson quadrature of the density.
    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn support(&self) -> (f64, f64) {
        self.evaluator.support()
    }

    pub fn evaluator(&self) -> &DensityEvaluator {
        &self.evaluator
    }

    pub fn rho_at(&self, energy: f64) -> Result<f64> {
        self.evaluator.rho_at(energy)
    }

    pub fn cdf_at(&self, energy: f64) -> Result<f64> {
        self.evaluator.cdf_at(energy)
    }

    /// Total mass from the quadrature table.
    pub fn mass(&self) -> f64 {
        *self.cdf.last().unwrap_or(&0.0)
    }

    /// CSV with columns `E,rho,cdf`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "E,rho,cdf")?;
        for ((e, r), c) in self.grid.iter().zip(&self.rho).zip(&self.cdf) {
            writeln!(w, "{},{},{}", sig12(*e), sig12(*r), sig12(*c))?;
        }
        Ok(())
    }
}

/// Uniform grid covering the support with a relative margin.
pub fn default_grid(spectrum: &DeformationSpectrum, points: usize) -> Vec<f64> {
    let (lo, hi) = spectrum.support_edges();
    let margin = 0.05 * (hi - lo);
    let (a, b) = (lo - margin, hi + margin);
    let points = points.max(3);
    (0..points)
        .map(|k| a + (b - a) * k as f64 / (points - 1) as f64)
        .collect()
}

/// Density on `grid` by eta continuation, CDF by adaptive Simpson.
pub fn scdos(spectrum: &DeformationSpectrum, grid: &[f64]) -> Result<ScDos> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput(
            "energy grid must be strictly increasing with at least two points".into(),
        ));
    }
    let evaluator = DensityEvaluator::new(spectrum.clone());
    let (lo, hi) = evaluator.support();
    if grid[0] > lo || grid[grid.len() - 1] < hi {
        return Err(Error::InvalidInput(format!(
            "grid [{}, {}] does not cover the support [{lo}, {hi}]",
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    let mut rho = Vec::with_capacity(grid.len());
    let mut starts = Vec::with_capacity(grid.len());
    let mut warm = None;
    for &e in grid {
        let p = real_axis_point(spectrum, e, warm)?;
        warm = Some(p.m_start);
        starts.push(p.m_start);
        rho.push(p.rho);
    }
    let mut cdf = Vec::with_capacity(grid.len());
    cdf.push(0.0);
    for k in 0..grid.len() - 1 {
        let (a, b) = (grid[k], grid[k + 1]);
        // Only the part inside the support contributes.
        let (ia, ib) = (a.max(lo), b.min(hi));
        let piece = if ib > ia {
            let warm = starts[k];
            let f = |e: f64| -> Result<f64> { Ok(real_axis_point(spectrum, e, Some(warm))?.rho) };
            adaptive_simpson(&f, ia, ib, 1e-12, 40)?
        } else {
            0.0
        };
        cdf.push(cdf[k] + piece);
    }
    Ok(ScDos {
        evaluator,
        grid: grid.to_vec(),
        rho,
        cdf,
    })
}

fn adaptive_simpson(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, tol: f64, max_depth: usize) -> Result<f64> {
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Default bulk threshold `c1`.
pub const DEFAULT_BULK_THRESHOLD: f64 = 0.05;

/// Classical locations `gamma_1 <= ... <= gamma_N`.
#[derive(Clone, Debug)]
pub struct QuantileTable {
    n: usize,
    gamma: Vec<f64>,
    rho: Vec<f64>,
    bulk: Vec<bool>,
    threshold: f64,
}

impl QuantileTable {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `gamma[i - 1]` is the `i`-th quantile.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn bulk(&self) -> &[bool] {
        &self.bulk
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// CSV with columns `i,gamma,bulk_flag`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,gamma,bulk_flag")?;
        for (k, (g, b)) in self.gamma.iter().zip(&self.bulk).enumerate() {
            writeln!(w, "{},{},{}", k + 1, sig12(*g), u8::from(*b))?;
        }
        Ok(())
    }
}

pub fn quantiles(dos: &ScDos, n: usize) -> Result<QuantileTable> {
    quantiles_with_threshold(dos, n, DEFAULT_BULK_THRESHOLD)
}

pub fn quantiles_with_threshold(dos: &ScDos, n: usize, threshold: f64) -> Result<QuantileTable> {
    if n == 0 {
        return Err(Error::InvalidInput("quantile table needs N >= 1".into()));
    }
    if (dos.mass() - 1.0).abs() > 1e-4 {
        return Err(Error::InvalidInput(format!(
            "density mass {} is not normalised",
            dos.mass()
        )));
    }
    let ev = dos.evaluator();
    let mut gamma = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    for i in 1..=n {
        let target = i as f64 / n as f64;
        let k = dos.cdf.partition_point(|&c| c < target);
        let lo = dos.grid[k.saturating_sub(1).min(dos.grid.len() - 1)];
        let hi = dos.grid[k.min(dos.grid.len() - 1)];
        let g = ev.quantile_bracketed(i, n, lo, hi)?;
        rho.push(if i == n { 0.0 } else { ev.rho_at(g)? });
        gamma.push(g);
    }
    let bulk = rho.iter().map(|&r| r >= threshold).collect();
    Ok(QuantileTable {
        n,
        gamma,
        rho,
        bulk,
        threshold,
    })
}

/// `i0 = ceil(N * CDF(E))` clamped to `[1, N]`.
pub fn index_at_energy(dos: &ScDos, energy: f64, n: usize) -> Result<usize> {
    index_from_cdf(dos.cdf_at(energy)?, n)
}

pub fn index_from_cdf(cdf: f64, n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidInput("N must be positive".into()));
    }
    let scaled = n as f64 * cdf;
    let nearest = scaled.round();
    // Values within rounding noise of an integer are that integer.
    let k = if (scaled - nearest).abs() <= 1e-8 {
        nearest
    } else {
        scaled.ceil()
    };
    Ok((k as usize).clamp(1, n))
}

/// Result of comparing `gamma_i` at two parameter values.
#[derive(Clone, Copy, Debug)]
pub struct QuantileShiftReport {
    pub gamma1: f64,
    pub gamma2: f64,
    /// `gamma_i^{x1} - gamma_i^{x2}`
    pub shift: f64,
    /// `(x1 - x2) <A>`
    pub linear_term: f64,
    pub residual: f64,
    /// `|dx| <Å^2>^{1/2} + dx^2`, the size the residual is compared against.
    pub error_scale: f64,
}

pub fn quantile_shift_check(
    family: &MonoparametricFamily,
    x1: f64,
    x2: f64,
    i: usize,
    n: usize,
    bulk_threshold: f64,
) -> Result<QuantileShiftReport> {
    let mut gammas = [0.0; 2];
    for (slot, x) in gammas.iter_mut().zip([x1, x2]) {
        let ev = DensityEvaluator::new(family.spectrum(x)?);
        let g = ev.quantile(i, n)?;
        let rho = if i == n { 0.0 } else { ev.rho_at(g)? };
        if rho < bulk_threshold {
            return Err(Error::NotInBulk {
                index: i,
                n,
                rho,
                threshold: bulk_threshold,
            });
        }
        *slot = g;
    }
    let dx = x1 - x2;
    let a = family.a();
    let shift = gammas[0] - gammas[1];
    let linear_term = dx * a.normalized_trace();
    Ok(QuantileShiftReport {
        gamma1: gammas[0],
        gamma2: gammas[1],
        shift,
        linear_term,
        residual: shift - linear_term,
        error_scale: dx.abs() * a.traceless_second_moment().sqrt() + dx * dx,
    })
}

/// Column `mode` of a basis (standard basis for `None`).
fn basis_product(b1: Option<&Mat<C64>>, b2: Option<&Mat<C64>>, n: usize) -> Mat<C64> {
    match (b1, b2) {
        (None, None) => Mat::identity(n, n),
        (Some(u), None) => u.adjoint().to_owned(),
        (None, Some(v)) => v.clone(),
        (Some(u), Some(v)) => u.adjoint() * v,
    }
}

fn to_dense_basis(b: Option<&Mat<C64>>, n: usize) -> Mat<C64> {
    match b {
        Some(u) => u.clone(),
        None => Mat::identity(n, n),
    }
}

/// `<M1 M2>` or `<M1 M2^*>`.
pub fn two_point_trace(sol1: &MdeSolution, sol2: &MdeSolution, adjoint: bool) -> Result<C64> {
    let (s1, s2) = (sol1.spectrum(), sol2.spectrum());
    let n = s1.n();
    if s2.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: s2.n(),
        });
    }
    let m1 = s1.by_mode(&sol1.mdiag);
    let mut m2 = s2.by_mode(&sol2.mdiag);
    if adjoint {
        m2.iter_mut().for_each(|v| *v = v.conj());
    }
    if s1.shares_basis(s2) {
        return Ok(m1.iter().zip(&m2).map(|(a, b)| a * b).sum::<C64>() / n as f64);
    }
    let p = basis_product(s1.basis(), s2.basis(), n);
    let mut acc = C64::new(0.0, 0.0);
    for l in 0..n {
        let mut col = C64::new(0.0, 0.0);
        for k in 0..n {
            col += m1[k] * p[(k, l)].norm_sqr();
        }
        acc += col * m2[l];
    }
    Ok(acc / n as f64)
}

/// Stability factor `|1 - <M1 M2^{(*)}>|`.
pub fn stability_factor(sol1: &MdeSolution, sol2: &MdeSolution, adjoint: bool) -> Result<f64> {
    Ok((1.0 - two_point_trace(sol1, sol2, adjoint)?).norm())
}

/// Singularity threshold for the two-resolvent deterministic approximation.
pub const M12_SINGULARITY: f64 = 1e-8;

/// `<M12 A>` with `M12 = M1 M2 / (1 - <M1 M2>)`.
pub fn m12_observable(sol1: &MdeSolution, sol2: &MdeSolution, obs: &HermitianMatrix) -> Result<C64> {
    let (s1, s2) = (sol1.spectrum(), sol2.spectrum());
    let n = s1.n();
    if obs.n() != n || s2.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if obs.n() != n { obs.n() } else { s2.n() },
        });
    }
    let denom = 1.0 - two_point_trace(sol1, sol2, false)?;
    if denom.norm() <= M12_SINGULARITY {
        return Err(Error::Singular(denom.norm()));
    }
    let m1 = s1.by_mode(&sol1.mdiag);
    let m2 = s2.by_mode(&sol2.mdiag);
    let numer = if s1.shares_basis(s2) {
        let diag: Vec<C64> = match s1.basis() {
            None => (0..n).map(|k| obs.get(k, k)).collect(),
            Some(u) => {
                let ou: Mat<C64> = obs.to_dense() * u;
                (0..n)
                    .map(|k| (0..n).map(|r| u[(r, k)].conj() * ou[(r, k)]).sum())
                    .collect()
            }
        };
        (0..n).map(|k| m1[k] * m2[k] * diag[k]).sum::<C64>() / n as f64
    } else {
        let b1 = to_dense_basis(s1.basis(), n);
        let b2 = to_dense_basis(s2.basis(), n);
        let p: Mat<C64> = b1.adjoint() * &b2;
        let ob1: Mat<C64> = obs.to_dense() * &b1;
        let q: Mat<C64> = b2.adjoint() * &ob1;
        let mut acc = C64::new(0.0, 0.0);
        for l in 0..n {
            let mut col = C64::new(0.0, 0.0);
            for k in 0..n {
                col += m1[k] * p[(k, l)] * q[(l, k)];
            }
            acc += col * m2[l];
        }
        acc / n as f64
    };
    Ok(numer / denom)
}

/// Semicircle density of radius `r`, `2 sqrt(r^2 - E^2) / (pi r^2)`.
pub fn semicircle_density(energy: f64, radius: f64) -> f64 {
    let u = energy / radius;
    if u.abs() >= 1.0 {
        return 0.0;
    }
    2.0 * (1.0 - u * u).sqrt() / (PI * radius)
}

pub fn semicircle_cdf(energy: f64, radius: f64) -> f64 {
    let u = energy / radius;
    if u <= -1.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    0.5 + (u * (1.0 - u * u).sqrt() + u.asin()) / PI
}

/// Semicircle classical location `gamma_i`, `1 <= i <= N`, by bisection.
pub fn semicircle_quantile(i: usize, n: usize, radius: f64) -> Result<f64> {
    if i == 0 || i > n {
        return Err(Error::IndexOutOfRange { index: i, n });
    }
    let target = i as f64 / n as f64;
    let (mut a, mut b) = (-radius, radius);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if semicircle_cdf(mid, radius) < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}
