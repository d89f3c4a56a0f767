//! Dense Hermitian eigendecomposition and the spectral observables built on it.

use std::ops::Range;

use faer::{Mat, Side};

use crate::ensembles::{HermitianMatrix, SymmetryClass};
use crate::error::{Error, Result};
use crate::C64;

/// Ascending eigenvalues with optional orthonormal eigenvectors (column `i`
/// belongs to eigenvalue `i`).
#[derive(Clone, Debug)]
pub struct SpectralData {
    eigenvalues: Vec<f64>,
    eigenvectors: Option<Mat<C64>>,
}

impl SpectralData {
    /// Wraps precomputed data. Eigenvalues must be ascending.
    pub fn new(eigenvalues: Vec<f64>, eigenvectors: Option<Mat<C64>>) -> Result<Self> {
        if eigenvalues.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidInput("eigenvalues must be ascending".into()));
        }
        if let Some(u) = &eigenvectors {
            if u.nrows() != eigenvalues.len() || u.ncols() != eigenvalues.len() {
                return Err(Error::DimensionMismatch {
                    expected: eigenvalues.len(),
                    found: u.ncols(),
                });
            }
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> Option<&Mat<C64>> {
        self.eigenvectors.as_ref()
    }

    fn vectors(&self) -> Result<&Mat<C64>> {
        self.eigenvectors.as_ref().ok_or(Error::MissingEigenvectors)
    }
}

/// Full eigendecomposition of `h`.
///
/// Eigenvector phases are normalised so that the largest-magnitude component
/// of every column is real and positive.
pub fn eigh(h: &HermitianMatrix, want_vectors: bool) -> Result<SpectralData> {
    if let Some((row, col)) = h.first_non_finite() {
        return Err(Error::NonFinite { row, col });
    }
    let n = h.n();
    if n == 0 {
        return SpectralData::new(Vec::new(), want_vectors.then(|| Mat::zeros(0, 0)));
    }
    match (h.symmetry(), want_vectors) {
        (SymmetryClass::RealSymmetric, false) => {
            let ev = h
                .to_dense_real()
                .self_adjoint_eigenvalues(Side::Lower)
                .map_err(|_| Error::Eigensolver)?;
            SpectralData::new(ev, None)
        }
        (SymmetryClass::ComplexHermitian, false) => {
            let ev = h
                .to_dense()
                .self_adjoint_eigenvalues(Side::Lower)
                .map_err(|_| Error::Eigensolver)?;
            SpectralData::new(ev, None)
        }
        (SymmetryClass::RealSymmetric, true) => {
            let evd = h
                .to_dense_real()
                .self_adjoint_eigen(Side::Lower)
                .map_err(|_| Error::Eigensolver)?;
            let s = evd.S().column_vector();
            let values: Vec<f64> = (0..n).map(|i| s[i]).collect();
            let u = evd.U();
            let mut vecs = Mat::from_fn(n, n, |i, j| C64::new(u[(i, j)], 0.0));
            fix_phases(&mut vecs);
            SpectralData::new(values, Some(vecs))
        }
        (SymmetryClass::ComplexHermitian, true) => {
            let evd = h
                .to_dense()
                .self_adjoint_eigen(Side::Lower)
                .map_err(|_| Error::Eigensolver)?;
            let s = evd.S().column_vector();
            let values: Vec<f64> = (0..n).map(|i| s[i].re).collect();
            let mut vecs = evd.U().to_owned();
            fix_phases(&mut vecs);
            SpectralData::new(values, Some(vecs))
        }
    }
}

fn fix_phases(u: &mut Mat<C64>) {
    let n = u.nrows();
    for j in 0..u.ncols() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..n {
            let a = u[(i, j)].norm();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if best_abs <= 0.0 {
            continue;
        }
        let phase = u[(best, j)].conj() / best_abs;
        for i in 0..n {
            u[(i, j)] *= phase;
        }
        u[(best, j)] = C64::new(u[(best, j)].re, 0.0);
    }
}

/// Raw consecutive gaps `lambda_{i+1} - lambda_i`.
pub fn gaps(sd: &SpectralData) -> Result<Vec<f64>> {
    if sd.n() < 2 {
        return Err(Error::InvalidInput(format!(
            "gaps need at least two eigenvalues, got {}",
            sd.n()
        )));
    }
    Ok(sd.eigenvalues.windows(2).map(|w| w[1] - w[0]).collect())
}

/// One rescaled gap `s = N rho (lambda_{i+1} - lambda_i)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapSample {
    /// Zero-based index of the lower eigenvalue.
    pub index: usize,
    pub raw: f64,
    pub rescaled: f64,
    pub rho: f64,
}

/// Rescaled gap between eigenvalues `index` and `index + 1` (zero based),
/// with the density evaluated at the lower eigenvalue.
pub fn rescaled_gap(sd: &SpectralData, index: usize, rho_at: impl Fn(f64) -> f64) -> Result<GapSample> {
    let n = sd.n();
    if index + 1 >= n {
        return Err(Error::IndexOutOfRange { index, n });
    }
    let lambda = sd.eigenvalues[index];
    rescaled_gap_with_density(sd, index, rho_at(lambda), lambda)
}

/// Same as [`rescaled_gap`] with an explicitly supplied density value, e.g.
/// the density at the classical location instead of the eigenvalue.
pub fn rescaled_gap_with_density(sd: &SpectralData, index: usize, rho: f64, at: f64) -> Result<GapSample> {
    let n = sd.n();
    if index + 1 >= n {
        return Err(Error::IndexOutOfRange { index, n });
    }
    if !(rho > 0.0) {
        return Err(Error::NonPositiveDensity { energy: at, rho });
    }
    let raw = (sd.eigenvalues[index + 1] - sd.eigenvalues[index]).max(0.0);
    Ok(GapSample {
        index,
        raw,
        rescaled: n as f64 * rho * raw,
        rho,
    })
}

/// Default bulk window `[N/10, 9N/10)` as zero-based indices.
pub fn bulk_window(n: usize) -> Range<usize> {
    (n / 10)..(9 * n / 10)
}

/// Squared eigenvector overlaps `|<u_i, v_j>|^2` on a rectangular block.
#[derive(Clone, Debug)]
pub struct OverlapMatrix {
    rows: Range<usize>,
    cols: Range<usize>,
    data: Vec<f64>,
}

impl OverlapMatrix {
    pub fn rows(&self) -> Range<usize> {
        self.rows.clone()
    }

    pub fn cols(&self) -> Range<usize> {
        self.cols.clone()
    }

    /// Entry for absolute indices `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let w = self.cols.len();
        self.data[(i - self.rows.start) * w + (j - self.cols.start)]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data
            .chunks(self.cols.len().max(1))
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let w = self.cols.len();
        let mut sums = vec![0.0; w];
        for r in self.data.chunks(w.max(1)) {
            for (s, v) in sums.iter_mut().zip(r) {
                *s += v;
            }
        }
        sums
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.cols.len();
        self.data
            .iter()
            .enumerate()
            .map(move |(k, &v)| (self.rows.start + k / w, self.cols.start + k % w, v))
    }
}

pub fn overlaps(
    sd1: &SpectralData,
    sd2: &SpectralData,
    rows: Range<usize>,
    cols: Range<usize>,
) -> Result<OverlapMatrix> {
    let u = sd1.vectors()?;
    let v = sd2.vectors()?;
    if sd1.n() != sd2.n() {
        return Err(Error::DimensionMismatch {
            expected: sd1.n(),
            found: sd2.n(),
        });
    }
    let n = sd1.n();
    if rows.end > n || cols.end > n || rows.start > rows.end || cols.start > cols.end {
        return Err(Error::InvalidInput(format!(
            "overlap block {rows:?} x {cols:?} outside dimension {n}"
        )));
    }
    let ub = u.as_ref().subcols(rows.start, rows.len());
    let vb = v.as_ref().subcols(cols.start, cols.len());
    let prod: Mat<C64> = ub.adjoint() * vb;
    let mut data = Vec::with_capacity(rows.len() * cols.len());
    for i in 0..rows.len() {
        for j in 0..cols.len() {
            data.push(prod[(i, j)].norm_sqr());
        }
    }
    Ok(OverlapMatrix { rows, cols, data })
}

fn check_off_axis(z: C64) -> Result<()> {
    if z.im == 0.0 || !z.im.is_finite() || !z.re.is_finite() {
        return Err(Error::InvalidInput(format!(
            "spectral parameter {z} must have a finite nonzero imaginary part"
        )));
    }
    Ok(())
}

/// Normalised resolvent trace `<G(z)> = (1/N) sum_i 1/(lambda_i - z)`.
pub fn resolvent_trace(sd: &SpectralData, z: C64) -> Result<C64> {
    check_off_axis(z)?;
    let n = sd.n() as f64;
    Ok(sd.eigenvalues.iter().map(|&l| 1.0 / (l - z)).sum::<C64>() / n)
}

/// `<G1 G2 A>` from precomputed decompositions.
///
/// With `H1 = U L1 U*` and `H2 = V L2 V*`,
/// `<G1 G2 A> = (1/N) sum_ij (u_i* v_j)(v_j* A u_i) / ((l_i - z1)(m_j - z2))`.
pub fn resolvent_trace_product_spectral(
    sd1: &SpectralData,
    sd2: &SpectralData,
    z1: C64,
    z2: C64,
    obs: &HermitianMatrix,
) -> Result<C64> {
    check_off_axis(z1)?;
    check_off_axis(z2)?;
    let u = sd1.vectors()?;
    let v = sd2.vectors()?;
    let n = sd1.n();
    if sd2.n() != n || obs.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if sd2.n() != n { sd2.n() } else { obs.n() },
        });
    }
    let uv: Mat<C64> = u.adjoint() * v;
    let au: Mat<C64> = obs.to_dense() * u;
    let vau: Mat<C64> = v.adjoint() * &au;
    let g1: Vec<C64> = sd1.eigenvalues.iter().map(|&l| 1.0 / (l - z1)).collect();
    let g2: Vec<C64> = sd2.eigenvalues.iter().map(|&m| 1.0 / (m - z2)).collect();
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..n {
        let mut col = C64::new(0.0, 0.0);
        for i in 0..n {
            col += g1[i] * uv[(i, j)] * vau[(j, i)];
        }
        acc += col * g2[j];
    }
    Ok(acc / n as f64)
}

/// `<G1 G2 A>` with `G_r = (H_r - z_r)^{-1}`, via eigendecomposition.
pub fn resolvent_trace_product(
    h1: &HermitianMatrix,
    h2: &HermitianMatrix,
    z1: C64,
    z2: C64,
    obs: &HermitianMatrix,
) -> Result<C64> {
    check_off_axis(z1)?;
    check_off_axis(z2)?;
    let sd1 = eigh(h1, true)?;
    let sd2 = if h1 == h2 { sd1.clone() } else { eigh(h2, true)? };
    resolvent_trace_product_spectral(&sd1, &sd2, z1, z2, obs)
}

/// Eigenvalues `lambda_first, ..., lambda_{first + len - 1}` (zero based)
/// around a shift.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenWindow {
    pub first: usize,
    pub values: Vec<f64>,
}

impl EigenWindow {
    /// `lambda_index` if the window contains it.
    pub fn get(&self, index: usize) -> Option<f64> {
        index.checked_sub(self.first).and_then(|k| self.values.get(k).copied())
    }
}

/// Number of eigenvalues below `shift`, from the inertia of an LBL* factor
/// of `H - shift`; `None` if the shift hits a pivot exactly.
fn inertia_below(f: &faer::linalg::solvers::Lblt<C64>) -> Option<usize> {
    let d = f.B_diag();
    let s = f.B_subdiag();
    let n = d.dim();
    let mut neg = 0;
    let mut i = 0;
    while i < n {
        if i + 1 < n && s[i] != C64::new(0.0, 0.0) {
            let det = d[i].re * d[i + 1].re - s[i].norm_sqr();
            if det < 0.0 {
                neg += 1;
            } else if det > 0.0 {
                if d[i].re + d[i + 1].re < 0.0 {
                    neg += 2;
                }
            } else {
                return None;
            }
            i += 2;
        } else {
            if d[i].re == 0.0 {
                return None;
            }
            if d[i].re < 0.0 {
                neg += 1;
            }
            i += 1;
        }
    }
    Some(neg)
}

/// The `per_side` eigenvalues on each side of `shift`, by shift-invert
/// Lanczos with full reorthogonalisation. Indices come from the inertia of
/// `H - shift`, so they are exact. Returns `None` when the Krylov space
/// did not converge on a full window (the caller falls back to [`eigh`]).
pub fn eigenvalues_near(h: &HermitianMatrix, shift: f64, per_side: usize) -> Result<Option<EigenWindow>> {
    use faer::linalg::solvers::Solve;
    use rand::Rng;
    use rand_distr::StandardNormal;

    if let Some((r, c)) = h.first_non_finite() {
        return Err(Error::NonFinite { row: r, col: c });
    }
    let n = h.n();
    if per_side == 0 || 2 * per_side > n || !shift.is_finite() {
        return Ok(None);
    }
    let mut dense = h.to_dense();
    for k in 0..n {
        dense[(k, k)] -= shift;
    }
    let f = dense.lblt(Side::Lower);
    let Some(below) = inertia_below(&f) else {
        return Ok(None);
    };
    if below < per_side || n - below < per_side {
        return Ok(None);
    }
    // Fixed start vector keeps the result a pure function of (H, shift).
    let mut rng = crate::SeededRandomSource::from_master(0x5eed_1a2c);
    let mut q = Mat::<C64>::from_fn(n, 1, |_, _| {
        C64::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        )
    });
    let norm = q.norm_l2();
    q /= faer::Scale(C64::new(norm, 0.0));
    let max_steps = n.min(12 * per_side + 40);
    let mut basis = Mat::<C64>::zeros(n, max_steps);
    basis.col_mut(0).copy_from(q.col(0));
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    for step in 0..max_steps {
        let m = step + 1;
        let mut w = f.solve(basis.as_ref().subcols(step, 1));
        let w_norm = w.norm_l2();
        alpha.push((basis.as_ref().subcols(step, 1).adjoint() * &w)[(0, 0)].re);
        // Two passes of classical Gram-Schmidt against the whole basis.
        let qm = basis.as_ref().subcols(0, m);
        for _ in 0..2 {
            let c: Mat<C64> = qm.adjoint() * &w;
            w -= qm * &c;
        }
        let b = w.norm_l2();
        let breakdown = b <= 1e-13 * w_norm;
        if m >= (2 * per_side + 2).min(max_steps) && (m % 2 == 0 || breakdown || m == max_steps) {
            let mut t = Mat::<f64>::zeros(m, m);
            for k in 0..m {
                t[(k, k)] = alpha[k];
                if k + 1 < m {
                    t[(k + 1, k)] = beta[k];
                    t[(k, k + 1)] = beta[k];
                }
            }
            let evd = t.self_adjoint_eigen(Side::Lower).map_err(|_| Error::Eigensolver)?;
            let theta: Vec<f64> = (0..m).map(|k| evd.S().column_vector()[k]).collect();
            let tail = if breakdown { 0.0 } else { b };
            let resid: Vec<f64> = (0..m).map(|k| (tail * evd.U()[(m - 1, k)]).abs()).collect();
            if let Some(win) = window_from_ritz(&theta, &resid, shift, below, per_side) {
                return Ok(Some(win));
            }
        }
        if breakdown || m == max_steps {
            break;
        }
        beta.push(b);
        basis
            .col_mut(m)
            .copy_from((w * faer::Scale(C64::new(1.0 / b, 0.0))).col(0));
    }
    Ok(None)
}

/// Converged eigenvalues nearest the shift, if the `per_side` closest Ritz
/// values on both sides have converged.
fn window_from_ritz(theta: &[f64], resid: &[f64], shift: f64, below: usize, per_side: usize) -> Option<EigenWindow> {
    let mut neg: Vec<(f64, f64)> = Vec::new();
    let mut pos: Vec<(f64, f64)> = Vec::new();
    for (&t, &r) in theta.iter().zip(resid) {
        if t < 0.0 {
            neg.push((t, r));
        } else if t > 0.0 {
            pos.push((t, r));
        }
    }
    // Largest |theta| is the eigenvalue closest to the shift.
    neg.sort_by(|a, b| a.0.total_cmp(&b.0));
    pos.sort_by(|a, b| b.0.total_cmp(&a.0));
    if neg.len() < per_side || pos.len() < per_side {
        return None;
    }
    let ok = |&(t, r): &(f64, f64)| r <= 1e-13 * t * t;
    if !neg[..per_side].iter().all(ok) || !pos[..per_side].iter().all(ok) {
        return None;
    }
    let mut values: Vec<f64> = neg[..per_side].iter().map(|(t, _)| shift + 1.0 / t).collect();
    values.reverse();
    values.extend(pos[..per_side].iter().map(|(t, _)| shift + 1.0 / t));
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return None;
    }
    Some(EigenWindow {
        first: below - per_side,
        values,
    })
}
