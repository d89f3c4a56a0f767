//! Random matrix and scalar parameter laws.
//!
//! A Wigner matrix has entries `h_ab = chi_od / sqrt(N)` above the diagonal,
//! `h_aa = chi_d / sqrt(N)` on it, and `h_ba = conj(h_ab)`. Deformed Wigner
//! matrices add a deterministic Hermitian `B`, and the monoparametric family
//! is `H + x A` for a scalar random `x`.

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::seed::SeededRandomSource;
use crate::C64;

/// Default cap on the matrix dimension.
pub const DEFAULT_MAX_DIMENSION: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryClass {
    /// beta = 1
    #[serde(alias = "real", alias = "goe")]
    RealSymmetric,
    /// beta = 2
    #[serde(alias = "complex", alias = "gue")]
    ComplexHermitian,
}

impl SymmetryClass {
    pub fn beta(self) -> u8 {
        match self {
            SymmetryClass::RealSymmetric => 1,
            SymmetryClass::ComplexHermitian => 2,
        }
    }

    pub fn from_beta(beta: u8) -> Result<Self> {
        match beta {
            1 => Ok(SymmetryClass::RealSymmetric),
            2 => Ok(SymmetryClass::ComplexHermitian),
            b => Err(Error::InvalidInput(format!("beta must be 1 or 2, got {b}"))),
        }
    }

    pub fn is_complex(self) -> bool {
        matches!(self, SymmetryClass::ComplexHermitian)
    }
}

/// Standardized entry distribution: mean zero, `E|chi_od|^2 = 1`, and in the
/// complex class `E chi_od^2 = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryLaw {
    Gaussian,
    Rademacher,
    UniformStandardized,
}

impl EntryLaw {
    /// Variance of `chi_d`: 2 in the real class and 1 in the complex class,
    /// matching GOE/GUE.
    pub fn diagonal_variance(sym: SymmetryClass) -> f64 {
        match sym {
            SymmetryClass::RealSymmetric => 2.0,
            SymmetryClass::ComplexHermitian => 1.0,
        }
    }

    fn unit_real<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            EntryLaw::Gaussian => rng.sample(StandardNormal),
            EntryLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            EntryLaw::UniformStandardized => {
                let r3 = 3f64.sqrt();
                rng.random_range(-r3..r3)
            }
        }
    }

    /// One off-diagonal draw `chi_od`.
    pub fn sample_off_diagonal<R: Rng + ?Sized>(self, sym: SymmetryClass, rng: &mut R) -> C64 {
        match sym {
            SymmetryClass::RealSymmetric => C64::new(self.unit_real(rng), 0.0),
            SymmetryClass::ComplexHermitian => {
                let re = self.unit_real(rng);
                let im = self.unit_real(rng);
                C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            }
        }
    }

    /// One diagonal draw `chi_d`.
    pub fn sample_diagonal<R: Rng + ?Sized>(self, sym: SymmetryClass, rng: &mut R) -> f64 {
        Self::diagonal_variance(sym).sqrt() * self.unit_real(rng)
    }
}

/// Hermitian matrix stored as its packed lower triangle.
///
/// The upper triangle is never stored, so `H = H*` holds bit for bit. The
/// diagonal is real, and in the real symmetric class every imaginary part is
/// zero.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    n: usize,
    sym: SymmetryClass,
    lower: Vec<C64>,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    debug_assert!(i >= j);
    i * (i + 1) / 2 + j
}

impl HermitianMatrix {
    pub fn zeros(n: usize, sym: SymmetryClass) -> Self {
        Self {
            n,
            sym,
            lower: vec![C64::new(0.0, 0.0); n * (n + 1) / 2],
        }
    }

    pub fn identity(n: usize, sym: SymmetryClass) -> Self {
        Self::diagonal(&vec![1.0; n], sym)
    }

    pub fn diagonal(values: &[f64], sym: SymmetryClass) -> Self {
        let mut m = Self::zeros(values.len(), sym);
        for (i, &v) in values.iter().enumerate() {
            m.lower[packed_index(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    /// Builds a matrix from a function of the lower triangle (`i >= j`).
    /// Diagonal imaginary parts are discarded, as are all imaginary parts in
    /// the real class.
    pub fn from_lower_fn(n: usize, sym: SymmetryClass, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(n, sym);
        for i in 0..n {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Reads a full dense matrix, using only its lower triangle.
    pub fn from_dense_lower(dense: &Mat<C64>, sym: SymmetryClass) -> Result<Self> {
        if dense.nrows() != dense.ncols() {
            return Err(Error::DimensionMismatch {
                expected: dense.nrows(),
                found: dense.ncols(),
            });
        }
        Ok(Self::from_lower_fn(dense.nrows(), sym, |i, j| dense[(i, j)]))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn symmetry(&self) -> SymmetryClass {
        self.sym
    }

    /// Entry `(i, j)`, conjugating when `i < j`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        if i >= j {
            self.lower[packed_index(i, j)]
        } else {
            self.lower[packed_index(j, i)].conj()
        }
    }

    /// Sets entry `(i, j)` together with its mirror.
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        let (r, c, v) = if i >= j { (i, j, v) } else { (j, i, v.conj()) };
        let v = if r == c || !self.sym.is_complex() {
            C64::new(v.re, 0.0)
        } else {
            v
        };
        self.lower[packed_index(r, c)] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.lower[packed_index(i, i)].re).sum()
    }

    pub fn lower_packed(&self) -> &[C64] {
        &self.lower
    }

    /// `self + x * other`.
    pub fn add_scaled(&self, other: &HermitianMatrix, x: f64) -> Result<HermitianMatrix> {
        self.check_compatible(other)?;
        let lower = self.lower.iter().zip(&other.lower).map(|(a, b)| a + b * x).collect();
        Ok(Self {
            n: self.n,
            sym: self.sym,
            lower,
        })
    }

    pub fn scale(&self, x: f64) -> HermitianMatrix {
        Self {
            n: self.n,
            sym: self.sym,
            lower: self.lower.iter().map(|v| v * x).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.lower.iter().all(|v| v.re == 0.0 && v.im == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.lower.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..=i {
                let w = if i == j { 1.0 } else { 2.0 };
                s += w * self.lower[packed_index(i, j)].norm_sqr();
            }
        }
        s.sqrt()
    }

    /// Normalized trace `<A> = Tr A / N`.
    pub fn normalized_trace(&self) -> f64 {
        self.trace() / self.n as f64
    }

    /// `<A^2> - <A>^2`, the normalized Hilbert-Schmidt norm of the traceless part.
    pub fn traceless_second_moment(&self) -> f64 {
        let n = self.n as f64;
        let mean = self.normalized_trace();
        (self.frobenius_norm().powi(2) / n - mean * mean).max(0.0)
    }

    pub fn check_compatible(&self, other: &HermitianMatrix) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        if self.sym != other.sym {
            return Err(Error::SymmetryMismatch);
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Mat<C64> {
        Mat::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn to_dense_real(&self) -> Mat<f64> {
        Mat::from_fn(self.n, self.n, |i, j| self.get(i, j).re)
    }

    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        for i in 0..self.n {
            for j in 0..=i {
                let v = self.lower[packed_index(i, j)];
                if !v.re.is_finite() || !v.im.is_finite() {
                    return Some((i, j));
                }
            }
        }
        None
    }
}

/// Fixed deformation `B` and direction `A` with cached summary statistics.
#[derive(Clone, Debug)]
pub struct DeformationSpec {
    b: HermitianMatrix,
    a: HermitianMatrix,
    norm_b: f64,
    mean_a: f64,
    traceless_a_sq: f64,
}

impl DeformationSpec {
    pub fn new(b: HermitianMatrix, a: HermitianMatrix) -> Result<Self> {
        b.check_compatible(&a)?;
        if let Some((row, col)) = b.first_non_finite().or_else(|| a.first_non_finite()) {
            return Err(Error::NonFinite { row, col });
        }
        let norm_b = operator_norm(&b)?;
        let mean_a = a.normalized_trace();
        let traceless_a_sq = a.traceless_second_moment();
        Ok(Self {
            b,
            a,
            norm_b,
            mean_a,
            traceless_a_sq,
        })
    }

    /// `B = 0`, `A = 0`.
    pub fn none(n: usize, sym: SymmetryClass) -> Self {
        Self {
            b: HermitianMatrix::zeros(n, sym),
            a: HermitianMatrix::zeros(n, sym),
            norm_b: 0.0,
            mean_a: 0.0,
            traceless_a_sq: 0.0,
        }
    }

    pub fn b(&self) -> &HermitianMatrix {
        &self.b
    }

    pub fn a(&self) -> &HermitianMatrix {
        &self.a
    }

    pub fn norm_b(&self) -> f64 {
        self.norm_b
    }

    /// `<A>`
    pub fn mean_a(&self) -> f64 {
        self.mean_a
    }

    /// `<Å^2>` with `Å = A - <A>`.
    pub fn traceless_a_sq(&self) -> f64 {
        self.traceless_a_sq
    }

    pub fn n(&self) -> usize {
        self.b.n()
    }
}

fn operator_norm(m: &HermitianMatrix) -> Result<f64> {
    if m.is_zero() {
        return Ok(0.0);
    }
    let sd = crate::spectral::eigh(m, false)?;
    let ev = sd.eigenvalues();
    Ok(ev[0].abs().max(ev[ev.len() - 1].abs()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChiLaw {
    UniformOnInterval {
        lo: f64,
        hi: f64,
    },
    /// Standard normal conditioned on `|chi| <= cut`.
    TruncatedGaussian {
        #[serde(default = "default_cut")]
        cut: f64,
    },
}

fn default_cut() -> f64 {
    10.0
}

/// Law of the scalar `x = N^{-a} chi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamLaw {
    #[serde(default)]
    pub a: f64,
    pub chi: ChiLaw,
}

impl ParamLaw {
    pub fn new(a: f64, chi: ChiLaw) -> Result<Self> {
        let law = Self { a, chi };
        law.validate()?;
        Ok(law)
    }

    pub fn standard_gaussian() -> Self {
        Self {
            a: 0.0,
            chi: ChiLaw::TruncatedGaussian { cut: default_cut() },
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            a: 0.0,
            chi: ChiLaw::UniformOnInterval { lo: value, hi: value },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.a) {
            return Err(Error::InvalidInput(format!(
                "parameter exponent a = {} outside [0, 1)",
                self.a
            )));
        }
        match self.chi {
            ChiLaw::UniformOnInterval { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => Err(
                Error::InvalidInput(format!("uniform interval [{lo}, {hi}] is empty or unbounded")),
            ),
            ChiLaw::TruncatedGaussian { cut } if !(cut.is_finite() && cut > 0.0) => {
                Err(Error::InvalidInput(format!("truncation cut {cut} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// Full recipe for one random matrix law.
#[derive(Clone, Debug)]
pub struct EnsembleSpec {
    n: usize,
    sym: SymmetryClass,
    entries: EntryLaw,
    deform: DeformationSpec,
    param: ParamLaw,
}

impl EnsembleSpec {
    pub fn new(
        n: usize,
        sym: SymmetryClass,
        entries: EntryLaw,
        deform: DeformationSpec,
        param: ParamLaw,
    ) -> Result<Self> {
        Self::with_max_dimension(n, sym, entries, deform, param, DEFAULT_MAX_DIMENSION)
    }

    pub fn with_max_dimension(
        n: usize,
        sym: SymmetryClass,
        entries: EntryLaw,
        deform: DeformationSpec,
        param: ParamLaw,
        max_n: usize,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        if n > max_n {
            return Err(Error::InvalidInput(format!(
                "dimension {n} exceeds the configured cap {max_n}"
            )));
        }
        if deform.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: deform.n(),
            });
        }
        if deform.b().symmetry() != sym {
            return Err(Error::SymmetryMismatch);
        }
        param.validate()?;
        Ok(Self {
            n,
            sym,
            entries,
            deform,
            param,
        })
    }

    /// Gaussian Wigner matrix without deformation (GOE for beta = 1, GUE for beta = 2).
    pub fn gaussian(n: usize, sym: SymmetryClass) -> Result<Self> {
        Self::new(
            n,
            sym,
            EntryLaw::Gaussian,
            DeformationSpec::none(n, sym),
            ParamLaw::constant(0.0),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn symmetry(&self) -> SymmetryClass {
        self.sym
    }

    pub fn entries(&self) -> EntryLaw {
        self.entries
    }

    pub fn deformation(&self) -> &DeformationSpec {
        &self.deform
    }

    pub fn param(&self) -> &ParamLaw {
        &self.param
    }
}

/// Samples the Wigner part `W` of the ensemble.
pub fn sample_wigner(spec: &EnsembleSpec, rng: &mut SeededRandomSource) -> HermitianMatrix {
    sample_wigner_with(spec.n, spec.sym, spec.entries, rng)
}

/// Samples the deformed Wigner matrix `W + B`.
pub fn sample_deformed(spec: &EnsembleSpec, rng: &mut SeededRandomSource) -> HermitianMatrix {
    let w = sample_wigner(spec, rng);
    if spec.deform.b().is_zero() {
        w
    } else {
        w.add_scaled(spec.deform.b(), 1.0)
            .expect("ensemble spec validated dimensions")
    }
}

pub fn sample_wigner_with<R: Rng + ?Sized>(
    n: usize,
    sym: SymmetryClass,
    law: EntryLaw,
    rng: &mut R,
) -> HermitianMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    // Row-major over the lower triangle fixes the draw order.
    HermitianMatrix::from_lower_fn(n, sym, |i, j| {
        if i == j {
            C64::new(law.sample_diagonal(sym, rng) * scale, 0.0)
        } else {
            law.sample_off_diagonal(sym, rng) * scale
        }
    })
}

pub fn sample_goe<R: Rng + ?Sized>(n: usize, rng: &mut R) -> HermitianMatrix {
    sample_wigner_with(n, SymmetryClass::RealSymmetric, EntryLaw::Gaussian, rng)
}

pub fn sample_gue<R: Rng + ?Sized>(n: usize, rng: &mut R) -> HermitianMatrix {
    sample_wigner_with(n, SymmetryClass::ComplexHermitian, EntryLaw::Gaussian, rng)
}

/// `H^x = H + x A`.
pub fn build_monoparametric(h: &HermitianMatrix, a: &HermitianMatrix, x: f64) -> Result<HermitianMatrix> {
    if x == 0.0 {
        h.check_compatible(a)?;
        return Ok(h.clone());
    }
    h.add_scaled(a, x)
}

/// Draws `x = N^{-a} chi`.
pub fn sample_x<R: Rng + ?Sized>(law: &ParamLaw, n: usize, rng: &mut R) -> f64 {
    let chi = match law.chi {
        ChiLaw::UniformOnInterval { lo, hi } => {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        }
        ChiLaw::TruncatedGaussian { cut } => loop {
            let g: f64 = rng.sample(StandardNormal);
            if g.abs() <= cut {
                break g;
            }
        },
    };
    if law.a == 0.0 {
        chi
    } else {
        (n as f64).powf(-law.a) * chi
    }
}
