//! Dyson Brownian motion at matrix and eigenvalue level.
//!
//! Brownian normalisation: real symmetric increments have off-diagonal
//! variance `dt` and diagonal variance `2 dt`; complex Hermitian increments
//! have `E|dB_ab|^2 = dt` off the diagonal and variance `dt` on it. With this
//! choice `dH = dB / sqrt(N)` drives
//! `d lambda_i = sqrt(2 / (beta N)) db_i + (1/N) sum_{j != i} dt / (lambda_i - lambda_j)`.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::ensembles::{sample_wigner_with, EntryLaw, HermitianMatrix, SymmetryClass};
use crate::error::{Error, Result};
use crate::numfmt::sig12;
use crate::spectral::eigh;
use crate::C64;

/// Maximum number of step halvings in the eigenvalue integrator. Neighbour
/// gaps get within `eps` of zero with probability of order `eps / gap`, so
/// rare steps need `dt` near `N gap^2 / 10` with gaps around `1e-6`.
pub const MAX_HALVINGS: usize = 48;
/// Local step bound `dt <= SUBSTEP_FACTOR * N * gap_min^2`.
pub const SUBSTEP_FACTOR: f64 = 0.1;
/// A sub-step is refined when it shrinks some neighbour gap below this
/// fraction of its old value.
pub const GAP_SHRINK_LIMIT: f64 = 0.5;

/// Hermitian Brownian increment over a time `dt`.
#[derive(Clone, Debug)]
pub struct BrownianIncrement {
    dt: f64,
    matrix: HermitianMatrix,
}

impl BrownianIncrement {
    pub fn sample<R: Rng + ?Sized>(n: usize, sym: SymmetryClass, dt: f64, rng: &mut R) -> Result<Self> {
        check_dt(dt)?;
        // A Gaussian Wigner matrix has variances 1/N (and 2/N on the real
        // diagonal); rescaling by sqrt(N dt) gives the increment.
        let w = sample_wigner_with(n, sym, EntryLaw::Gaussian, rng);
        Ok(Self {
            dt,
            matrix: w.scale((n as f64 * dt).sqrt()),
        })
    }

    /// Zero increment, a test hook for the deterministic part of a flow.
    pub fn zero(n: usize, sym: SymmetryClass, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        Ok(Self {
            dt,
            matrix: HermitianMatrix::zeros(n, sym),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn matrix(&self) -> &HermitianMatrix {
        &self.matrix
    }

    pub fn symmetry(&self) -> SymmetryClass {
        self.matrix.symmetry()
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("time step must be positive, got {dt}")))
    }
}

/// `H + dB / sqrt(N)`.
pub fn matrix_dbm_step<R: Rng + ?Sized>(h: &HermitianMatrix, dt: f64, rng: &mut R) -> Result<HermitianMatrix> {
    let db = BrownianIncrement::sample(h.n(), h.symmetry(), dt, rng)?;
    matrix_dbm_step_with(h, &db)
}

pub fn matrix_dbm_step_with(h: &HermitianMatrix, db: &BrownianIncrement) -> Result<HermitianMatrix> {
    h.add_scaled(db.matrix(), 1.0 / (h.n() as f64).sqrt())
}

/// Euler-Maruyama step of `dH = -(H - mean)/2 dt + dB / sqrt(N)`.
pub fn ou_step<R: Rng + ?Sized>(
    h: &HermitianMatrix,
    mean: &HermitianMatrix,
    dt: f64,
    rng: &mut R,
) -> Result<HermitianMatrix> {
    let db = BrownianIncrement::sample(h.n(), h.symmetry(), dt, rng)?;
    ou_step_with(h, mean, &db)
}

pub fn ou_step_with(h: &HermitianMatrix, mean: &HermitianMatrix, db: &BrownianIncrement) -> Result<HermitianMatrix> {
    let dt = db.dt();
    h.check_compatible(mean)?;
    let drifted = h.scale(1.0 - 0.5 * dt).add_scaled(mean, 0.5 * dt)?;
    matrix_dbm_step_with(&drifted, db)
}

fn check_ascending(lambdas: &[f64]) -> Result<()> {
    if lambdas.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("eigenvalues must be finite".into()));
    }
    if lambdas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("eigenvalues must be strictly increasing".into()));
    }
    Ok(())
}

fn min_gap(lambdas: &[f64]) -> f64 {
    lambdas.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// One step of the eigenvalue SDE with independent driving noise.
pub fn eigenvalue_dbm_step<R: Rng + ?Sized>(lambdas: &[f64], dt: f64, rng: &mut R, beta: u8) -> Result<Vec<f64>> {
    check_dt(dt)?;
    let sd = dt.sqrt();
    let db: Vec<f64> = (0..lambdas.len())
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    eigenvalue_dbm_step_driven(lambdas, dt, &db, rng, beta)
}

/// One step driven by given Brownian increments `db_i` over `[0, dt]`.
///
/// The step is split by Brownian bridges (drawn from `rng`) until the local
/// bound on `dt` holds and the ordering survives.
pub fn eigenvalue_dbm_step_driven<R: Rng + ?Sized>(
    lambdas: &[f64],
    dt: f64,
    db: &[f64],
    rng: &mut R,
    beta: u8,
) -> Result<Vec<f64>> {
    check_dt(dt)?;
    check_ascending(lambdas)?;
    if beta != 1 && beta != 2 {
        return Err(Error::InvalidInput(format!("beta must be 1 or 2, got {beta}")));
    }
    if db.len() != lambdas.len() {
        return Err(Error::DimensionMismatch {
            expected: lambdas.len(),
            found: db.len(),
        });
    }
    advance(lambdas, dt, db, rng, beta, 0)
}

fn advance<R: Rng + ?Sized>(
    lambdas: &[f64],
    dt: f64,
    db: &[f64],
    rng: &mut R,
    beta: u8,
    depth: usize,
) -> Result<Vec<f64>> {
    let n = lambdas.len();
    let nf = n as f64;
    let small_enough = n < 2 || dt <= SUBSTEP_FACTOR * nf * min_gap(lambdas).powi(2);
    if small_enough || depth >= MAX_HALVINGS {
        let noise = (2.0 / (f64::from(beta) * nf)).sqrt();
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let li = lambdas[i];
                let drift: f64 = (0..n).filter(|&j| j != i).map(|j| 1.0 / (li - lambdas[j])).sum();
                li + noise * db[i] + drift * dt / nf
            })
            .collect();
        let ordered = next.windows(2).all(|w| w[0] < w[1]) && next.iter().all(|v| v.is_finite());
        let kept = ordered
            && next
                .windows(2)
                .zip(lambdas.windows(2))
                .all(|(a, b)| a[1] - a[0] >= GAP_SHRINK_LIMIT * (b[1] - b[0]));
        if kept || (ordered && depth >= MAX_HALVINGS) {
            return Ok(next);
        }
        if depth >= MAX_HALVINGS {
            return Err(Error::OrderingViolation { halvings: depth });
        }
    }
    // Brownian bridge midpoint: given the total, the first half has mean
    // db/2 and variance dt/4.
    let half = 0.5 * dt;
    let spread = (0.25 * dt).sqrt();
    let first: Vec<f64> = db
        .iter()
        .map(|&b| 0.5 * b + spread * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let second: Vec<f64> = db.iter().zip(&first).map(|(b, f)| b - f).collect();
    let mid = advance(lambdas, half, &first, rng, beta, depth + 1)?;
    advance(&mid, half, &second, rng, beta, depth + 1)
}

/// Eigenvalues (and optionally matrices) along a time grid.
#[derive(Clone, Debug, Default)]
pub struct DbmPath {
    times: Vec<f64>,
    eigenvalues: Vec<Vec<f64>>,
    matrices: Option<Vec<HermitianMatrix>>,
}

impl DbmPath {
    fn push(&mut self, t: f64, lambdas: Vec<f64>) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::InvalidInput("path times must increase".into()));
            }
        }
        self.times.push(t);
        self.eigenvalues.push(lambdas);
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn eigenvalues(&self) -> &[Vec<f64>] {
        &self.eigenvalues
    }

    pub fn matrices(&self) -> Option<&[HermitianMatrix]> {
        self.matrices.as_deref()
    }

    pub fn last(&self) -> &[f64] {
        self.eigenvalues.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// CSV with columns `t,i,lambda` (`i` is 1-based).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,i,lambda")?;
        for (t, ls) in self.times.iter().zip(&self.eigenvalues) {
            for (i, l) in ls.iter().enumerate() {
                writeln!(w, "{},{},{}", sig12(*t), i + 1, sig12(*l))?;
            }
        }
        Ok(())
    }
}

/// Matrix flow from `h0` over `steps` equal steps up to `t_end`.
pub fn simulate_matrix_dbm<R: Rng + ?Sized>(
    h0: &HermitianMatrix,
    t_end: f64,
    steps: usize,
    rng: &mut R,
    keep_matrices: bool,
) -> Result<DbmPath> {
    let dt = step_size(t_end, steps)?;
    let mut path = DbmPath::default();
    let mut h = h0.clone();
    path.push(0.0, eigh(&h, false)?.eigenvalues().to_vec())?;
    let mut mats = keep_matrices.then(|| vec![h.clone()]);
    for k in 1..=steps {
        h = matrix_dbm_step(&h, dt, rng)?;
        path.push(k as f64 * dt, eigh(&h, false)?.eigenvalues().to_vec())?;
        if let Some(m) = mats.as_mut() {
            m.push(h.clone());
        }
    }
    path.matrices = mats;
    Ok(path)
}

/// Eigenvalue SDE with independent noise.
pub fn simulate_eigenvalue_dbm<R: Rng + ?Sized>(
    lambda0: &[f64],
    t_end: f64,
    steps: usize,
    beta: u8,
    rng: &mut R,
) -> Result<DbmPath> {
    let dt = step_size(t_end, steps)?;
    check_ascending(lambda0)?;
    let mut path = DbmPath::default();
    let mut l = lambda0.to_vec();
    path.push(0.0, l.clone())?;
    for k in 1..=steps {
        l = eigenvalue_dbm_step(&l, dt, rng, beta)?;
        path.push(k as f64 * dt, l.clone())?;
    }
    Ok(path)
}

fn step_size(t_end: f64, steps: usize) -> Result<f64> {
    if steps == 0 {
        return Err(Error::InvalidInput("need at least one step".into()));
    }
    let dt = t_end / steps as f64;
    check_dt(dt)?;
    Ok(dt)
}

/// `sqrt(beta/2) u* dB u` for each column `u` of `vectors`.
pub fn projected_noise(vectors: &faer::Mat<C64>, db: &BrownianIncrement) -> Vec<f64> {
    let beta = f64::from(db.symmetry().beta());
    let dense = db.matrix().to_dense();
    let bu = &dense * vectors;
    let n = vectors.nrows();
    (0..vectors.ncols())
        .map(|k| {
            let q: C64 = (0..n).map(|r| vectors[(r, k)].conj() * bu[(r, k)]).sum();
            (0.5 * beta).sqrt() * q.re
        })
        .collect()
}

/// Matrix flow and the eigenvalue SDE driven by its projected noise.
pub fn coupled_paths<R: Rng + ?Sized>(
    h0: &HermitianMatrix,
    t_end: f64,
    steps: usize,
    rng: &mut R,
) -> Result<(DbmPath, DbmPath)> {
    let dt = step_size(t_end, steps)?;
    let beta = h0.symmetry().beta();
    let mut h = h0.clone();
    let mut sd = eigh(&h, true)?;
    let mut l = sd.eigenvalues().to_vec();
    let (mut mpath, mut epath) = (DbmPath::default(), DbmPath::default());
    mpath.push(0.0, l.clone())?;
    epath.push(0.0, l.clone())?;
    for k in 1..=steps {
        let db = BrownianIncrement::sample(h.n(), h.symmetry(), dt, rng)?;
        let u = sd.eigenvectors().ok_or(Error::MissingEigenvectors)?;
        let noise = projected_noise(u, &db);
        l = eigenvalue_dbm_step_driven(&l, dt, &noise, rng, beta)?;
        h = matrix_dbm_step_with(&h, &db)?;
        sd = eigh(&h, true)?;
        let t = k as f64 * dt;
        mpath.push(t, sd.eigenvalues().to_vec())?;
        epath.push(t, l.clone())?;
    }
    Ok((mpath, epath))
}

/// Outcome of a quadratic covariation measurement.
#[derive(Clone, Copy, Debug)]
pub struct CovariationReport {
    /// `sum db_i^{x1} db_j^{x2} / (steps dt)`
    pub estimate: f64,
    pub std_error: f64,
    /// Path average of `|<u_i^{x1}, u_j^{x2}>|^2`.
    pub mean_overlap_sq: f64,
    pub steps: usize,
}

impl CovariationReport {
    /// Agreement within `k` standard errors.
    pub fn agrees_within(&self, k: f64) -> bool {
        (self.estimate - self.mean_overlap_sq).abs() <= k * self.std_error
    }
}

/// Runs the matrix flow of `H_t + x_r A` and compares the covariation of the
/// projected noises of eigenvector `i` at `x1` and `j` at `x2` with their
/// overlap. Indices are 0-based.
#[allow(clippy::too_many_arguments)]
pub fn measure_quadratic_covariation<R: Rng + ?Sized>(
    h0: &HermitianMatrix,
    a: &HermitianMatrix,
    x1: f64,
    x2: f64,
    i: usize,
    j: usize,
    dt: f64,
    steps: usize,
    rng: &mut R,
) -> Result<CovariationReport> {
    check_dt(dt)?;
    h0.check_compatible(a)?;
    let n = h0.n();
    for idx in [i, j] {
        if idx >= n {
            return Err(Error::IndexOutOfRange { index: idx, n });
        }
    }
    if steps < 2 {
        return Err(Error::InvalidInput("covariation needs at least two steps".into()));
    }
    let mut h = h0.clone();
    let mut products = Vec::with_capacity(steps);
    let mut overlap_sum = 0.0;
    for _ in 0..steps {
        let s1 = eigh(&h.add_scaled(a, x1)?, true)?;
        let s2 = eigh(&h.add_scaled(a, x2)?, true)?;
        let u1 = s1.eigenvectors().ok_or(Error::MissingEigenvectors)?;
        let u2 = s2.eigenvectors().ok_or(Error::MissingEigenvectors)?;
        let ov: C64 = (0..n).map(|r| u1[(r, i)].conj() * u2[(r, j)]).sum();
        overlap_sum += ov.norm_sqr();
        let db = BrownianIncrement::sample(n, h.symmetry(), dt, rng)?;
        let b1 = projected_noise(&u1.subcols(i, 1).to_owned(), &db)[0];
        let b2 = projected_noise(&u2.subcols(j, 1).to_owned(), &db)[0];
        products.push(b1 * b2 / dt);
        h = matrix_dbm_step_with(&h, &db)?;
    }
    let m = products.len() as f64;
    let estimate = products.iter().sum::<f64>() / m;
    let var = products.iter().map(|p| (p - estimate).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(CovariationReport {
        estimate,
        std_error: (var / m).sqrt(),
        mean_overlap_sq: overlap_sum / m,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SeededRandomSource;

    #[test]
    fn increments_are_hermitian_with_right_variances() {
        let mut rng = SeededRandomSource::from_master(3);
        let n = 6;
        let dt = 0.3;
        for sym in [SymmetryClass::RealSymmetric, SymmetryClass::ComplexHermitian] {
            let reps = 20000;
            let (mut off, mut diag) = (0.0, 0.0);
            for _ in 0..reps {
                let b = BrownianIncrement::sample(n, sym, dt, &mut rng).unwrap();
                let m = b.matrix();
                off += m.get(3, 1).norm_sqr();
                diag += m.get(2, 2).norm_sqr();
                assert_eq!(m.get(1, 3), m.get(3, 1).conj());
            }
            let beta = f64::from(sym.beta());
            assert!((off / reps as f64 / dt - 1.0).abs() < 0.05);
            assert!((diag / reps as f64 / dt - 2.0 / beta).abs() < 0.1);
        }
    }

    #[test]
    fn ou_fixed_point_without_noise() {
        let mut rng = SeededRandomSource::from_master(4);
        let mean = crate::ensembles::sample_gue(5, &mut rng);
        let z = BrownianIncrement::zero(5, SymmetryClass::ComplexHermitian, 0.1).unwrap();
        let next = ou_step_with(&mean, &mean, &z).unwrap();
        let diff = next.add_scaled(&mean, -1.0).unwrap();
        assert!(diff.max_abs() < 1e-15);
    }

    #[test]
    fn two_particle_repulsion_and_centre_of_mass() {
        let mut rng = SeededRandomSource::from_master(5);
        let c = 0.5;
        let out = eigenvalue_dbm_step_driven(&[-c, c], 1e-3, &[0.0, 0.0], &mut rng, 1).unwrap();
        let n = 2.0;
        let expected = 2.0 * c + (2.0 / n) * 1e-3 / (2.0 * c);
        assert!(((out[1] - out[0]) - expected).abs() < 1e-15);
        assert!((out[0] + out[1]).abs() < 1e-15);
    }

    #[test]
    fn ordering_kept_under_large_steps() {
        let mut rng = SeededRandomSource::from_master(6);
        let l0: Vec<f64> = (0..20).map(|k| -1.0 + 0.1 * k as f64).collect();
        let path = simulate_eigenvalue_dbm(&l0, 0.5, 5, 2, &mut rng).unwrap();
        for ls in path.eigenvalues() {
            assert!(ls.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn rejects_unordered_input() {
        let mut rng = SeededRandomSource::from_master(7);
        assert!(eigenvalue_dbm_step(&[1.0, 0.0], 0.1, &mut rng, 1).is_err());
        assert!(eigenvalue_dbm_step(&[0.0, 1.0], 0.0, &mut rng, 1).is_err());
    }

    #[test]
    fn weyl_bound_per_step() {
        let mut rng = SeededRandomSource::from_master(8);
        let mut h = crate::ensembles::sample_gue(30, &mut rng);
        for _ in 0..10 {
            let before = eigh(&h, false).unwrap();
            let db = BrownianIncrement::sample(30, SymmetryClass::ComplexHermitian, 0.01, &mut rng).unwrap();
            let norm = eigh(db.matrix(), false)
                .unwrap()
                .eigenvalues()
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            h = matrix_dbm_step_with(&h, &db).unwrap();
            let after = eigh(&h, false).unwrap();
            for (a, b) in before.eigenvalues().iter().zip(after.eigenvalues()) {
                assert!((a - b).abs() <= norm / 30f64.sqrt() + 1e-12);
            }
        }
    }

    #[test]
    fn covariation_trivial_cases() {
        let mut rng = SeededRandomSource::from_master(9);
        let n = 20;
        let h0 = crate::ensembles::sample_gue(n, &mut rng);
        let a = crate::ensembles::sample_gue(n, &mut rng);
        let same = measure_quadratic_covariation(&h0, &a, 0.3, 0.3, 10, 10, 1e-4, 400, &mut rng).unwrap();
        assert!((same.mean_overlap_sq - 1.0).abs() < 1e-10);
        assert!(same.agrees_within(4.0), "{same:?}");
        let orth = measure_quadratic_covariation(&h0, &a, 0.3, 0.3, 10, 11, 1e-4, 400, &mut rng).unwrap();
        assert!(orth.mean_overlap_sq < 1e-20);
        assert!(orth.estimate.abs() <= 4.0 * orth.std_error + 1e-12, "{orth:?}");
    }

    #[test]
    fn path_csv() {
        let mut rng = SeededRandomSource::from_master(10);
        let h0 = crate::ensembles::sample_goe(3, &mut rng);
        let p = simulate_matrix_dbm(&h0, 0.1, 2, &mut rng, true).unwrap();
        assert_eq!(p.times().len(), 3);
        assert_eq!(p.matrices().unwrap().len(), 3);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 10);
    }
}
