//! Experiment configuration files (TOML, schema version 1).
//!
//! ```toml
//! schema_version = 1
//! kind = "annealed_gap"
//! seed = 42
//! sizes = [100]
//! samples = 5000
//! symmetry = "complex"
//! ```
//!
//! Unknown keys are rejected. Kind-specific sections (`[rescaling]`,
//! `[param]`, `[overlap]`, `[local_law]`, `[quenched]`, `[paper_scale]`) are
//! optional and fall back to the defaults documented on each field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensembles::{ChiLaw, EntryLaw, ParamLaw, SymmetryClass};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    AnnealedGap,
    QuenchedBulkSampling,
    MonoparametricQuenched,
    KsConvergence,
    OverlapDecay,
    LocalLawCheck,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::AnnealedGap => "annealed_gap",
            ExperimentKind::QuenchedBulkSampling => "quenched_bulk_sampling",
            ExperimentKind::MonoparametricQuenched => "monoparametric_quenched",
            ExperimentKind::KsConvergence => "ks_convergence",
            ExperimentKind::OverlapDecay => "overlap_decay",
            ExperimentKind::LocalLawCheck => "local_law_check",
        }
    }
}

/// Which density rescales a gap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySource {
    /// `sqrt(4 - E^2) / (2 pi)`
    Semicircle,
    /// Semicircle of radius `2 sqrt(1 + x^2)`, the closed form for `H + x A`
    /// with `A` Wigner-like.
    RescaledSemicircle,
    /// Self-consistent density of the deformation from the MDE.
    Mde,
}

/// Where the density is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityPoint {
    /// At the lower eigenvalue of the gap.
    Eigenvalue,
    /// At the classical location of the gap index.
    Quantile,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rescaling {
    pub density: DensitySource,
    pub at: DensityPoint,
}

/// Deterministic direction `A` (or deformation `B`) of a family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixChoice {
    Zero,
    Identity,
    /// `diag(+1, ..., +1, -1, ..., -1)`, half each.
    Signs,
    /// A GUE/GOE draw fixed by the seed.
    Wigner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Identity,
    A,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchedSection {
    /// Energy interval `[lo, hi]` restricting the bulk window.
    #[serde(default)]
    pub interval: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapSection {
    #[serde(default)]
    pub x1: f64,
    #[serde(default = "default_delta_x")]
    pub delta_x: f64,
    #[serde(default = "default_direction")]
    pub direction: MatrixChoice,
}

impl Default for OverlapSection {
    fn default() -> Self {
        Self {
            x1: 0.0,
            delta_x: default_delta_x(),
            direction: default_direction(),
        }
    }
}

fn default_delta_x() -> f64 {
    0.5
}

fn default_direction() -> MatrixChoice {
    MatrixChoice::Wigner
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalLawSection {
    #[serde(default)]
    pub x1: f64,
    #[serde(default = "default_x2")]
    pub x2: f64,
    #[serde(default)]
    pub e1: f64,
    #[serde(default)]
    pub e2: f64,
    /// `eta = N^{-eta_exponent}`
    #[serde(default = "default_eta_exponent")]
    pub eta_exponent: f64,
    /// Use `z2 = conj(z1)` instead of `E2 + i eta`.
    #[serde(default)]
    pub conjugate: bool,
    #[serde(default = "default_observable")]
    pub observable: Observable,
    #[serde(default = "default_ll_direction")]
    pub direction: MatrixChoice,
}

impl Default for LocalLawSection {
    fn default() -> Self {
        Self {
            x1: 0.0,
            x2: default_x2(),
            e1: 0.0,
            e2: 0.0,
            eta_exponent: default_eta_exponent(),
            conjugate: false,
            observable: default_observable(),
            direction: default_ll_direction(),
        }
    }
}

fn default_x2() -> f64 {
    0.5
}

fn default_eta_exponent() -> f64 {
    0.4
}

fn default_observable() -> Observable {
    Observable::Identity
}

fn default_ll_direction() -> MatrixChoice {
    MatrixChoice::Signs
}

/// Overrides applied by `--paper-scale`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaperScale {
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub repetitions: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    /// Master seed; the CLI `--seed` overrides it. One of the two is required.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_symmetry")]
    pub symmetry: SymmetryClass,
    #[serde(default = "default_entries")]
    pub entries: EntryLaw,
    /// Deformation `B` added to the Wigner matrix (annealed and quenched kinds).
    #[serde(default = "default_deformation")]
    pub deformation: MatrixChoice,
    pub sizes: Vec<usize>,
    /// Matrices (annealed), x draws (monoparametric) or x draws per
    /// repetition (KS study).
    #[serde(default = "one")]
    pub samples: usize,
    #[serde(default = "one")]
    pub repetitions: usize,
    /// Law of `x` for the monoparametric kinds.
    #[serde(default)]
    pub param: Option<ParamLaw>,
    /// Direction `A` of the monoparametric kinds.
    #[serde(default)]
    pub direction: Option<MatrixChoice>,
    /// Also sample the plain Wigner arm in `monoparametric_quenched`.
    #[serde(default = "yes")]
    pub include_wigner_arm: bool,
    #[serde(default)]
    pub rescaling: Option<Rescaling>,
    /// Rescaling of the plain Wigner arm.
    #[serde(default)]
    pub wigner_rescaling: Option<Rescaling>,
    #[serde(default = "default_bulk_threshold")]
    pub bulk_threshold: f64,
    #[serde(default)]
    pub quenched: Option<QuenchedSection>,
    #[serde(default)]
    pub overlap: Option<OverlapSection>,
    #[serde(default)]
    pub local_law: Option<LocalLawSection>,
    #[serde(default)]
    pub paper_scale: Option<PaperScale>,
}

fn default_symmetry() -> SymmetryClass {
    SymmetryClass::ComplexHermitian
}

fn default_entries() -> EntryLaw {
    EntryLaw::Gaussian
}

fn default_deformation() -> MatrixChoice {
    MatrixChoice::Zero
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_bulk_threshold() -> f64 {
    crate::mde::DEFAULT_BULK_THRESHOLD
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.sizes.is_empty() {
            return Err(Error::Config("sizes must list at least one dimension".into()));
        }
        if let Some(&bad) = self
            .sizes
            .iter()
            .find(|&&n| !(2..=crate::ensembles::DEFAULT_MAX_DIMENSION).contains(&n))
        {
            return Err(Error::Config(format!("dimension {bad} outside [2, 4096]")));
        }
        if self.samples == 0 || self.repetitions == 0 {
            return Err(Error::Config("samples and repetitions must be at least 1".into()));
        }
        if !(self.bulk_threshold > 0.0) {
            return Err(Error::Config("bulk_threshold must be positive".into()));
        }
        if let Some(p) = &self.param {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(ll) = &self.local_law {
            if !(ll.eta_exponent > 0.0 && ll.eta_exponent < 1.0) {
                return Err(Error::Config("local_law.eta_exponent must lie in (0, 1)".into()));
            }
        }
        if let Some(q) = self.quenched.as_ref().and_then(|q| q.interval) {
            if !(q[0] < q[1]) {
                return Err(Error::Config("quenched.interval must be increasing".into()));
            }
        }
        if let Some(ps) = &self.paper_scale {
            if ps.samples == Some(0) || ps.repetitions == Some(0) || ps.sizes.as_ref().is_some_and(|s| s.is_empty()) {
                return Err(Error::Config(
                    "paper_scale overrides must be nonempty and positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Copy with the `--paper-scale` overrides applied. Without a
    /// `[paper_scale]` section the built-in figure protocols are used.
    pub fn at_paper_scale(&self) -> Result<Self> {
        let mut out = self.clone();
        let ps = self.paper_scale.clone().unwrap_or_else(|| match self.kind {
            ExperimentKind::QuenchedBulkSampling => PaperScale {
                sizes: Some(vec![5000]),
                ..PaperScale::default()
            },
            ExperimentKind::KsConvergence => PaperScale {
                repetitions: Some(50),
                ..PaperScale::default()
            },
            _ => PaperScale::default(),
        });
        if let Some(s) = ps.sizes {
            out.sizes = s;
        }
        if let Some(s) = ps.samples {
            out.samples = s;
        }
        if let Some(r) = ps.repetitions {
            out.repetitions = r;
        }
        // The dimension cap does not apply to the full-size protocols.
        if out.sizes.iter().any(|&n| n < 2) {
            return Err(Error::Config("paper-scale sizes must be at least 2".into()));
        }
        Ok(out)
    }

    pub fn param_law(&self) -> ParamLaw {
        self.param.unwrap_or(ParamLaw {
            a: 0.0,
            chi: ChiLaw::TruncatedGaussian { cut: 10.0 },
        })
    }

    pub fn direction_choice(&self) -> MatrixChoice {
        self.direction.unwrap_or(MatrixChoice::Wigner)
    }

    /// Rescaling of the main arm. Defaults: semicircle at the eigenvalue for
    /// undeformed Wigner kinds, the MDE density at the quantile otherwise.
    pub fn rescaling_choice(&self) -> Rescaling {
        self.rescaling.unwrap_or(match self.kind {
            ExperimentKind::MonoparametricQuenched | ExperimentKind::KsConvergence => Rescaling {
                density: DensitySource::Mde,
                at: DensityPoint::Quantile,
            },
            _ if self.deformation != MatrixChoice::Zero => Rescaling {
                density: DensitySource::Mde,
                at: DensityPoint::Eigenvalue,
            },
            _ => Rescaling {
                density: DensitySource::Semicircle,
                at: DensityPoint::Eigenvalue,
            },
        })
    }

    /// Rescaling of the plain Wigner arm: semicircle at the quantile.
    pub fn wigner_rescaling_choice(&self) -> Rescaling {
        self.wigner_rescaling.unwrap_or(Rescaling {
            density: DensitySource::Semicircle,
            at: DensityPoint::Quantile,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema_version = 1\nkind = \"annealed_gap\"\nsizes = [100]\n";

    #[test]
    fn parses_minimal_and_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.kind, ExperimentKind::AnnealedGap);
        assert_eq!(c.samples, 1);
        assert_eq!(c.symmetry, SymmetryClass::ComplexHermitian);
        assert_eq!(c.rescaling_choice().density, DensitySource::Semicircle);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let bad = format!("{MINIMAL}bogus = 3\n");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Config(_))));
        let v2 = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(ExperimentConfig::from_toml_str(&v2).is_err());
        let nested = format!("{MINIMAL}[overlap]\ndelta = 1.0\n");
        assert!(ExperimentConfig::from_toml_str(&nested).is_err());
    }

    #[test]
    fn rejects_zero_counts() {
        let c = format!("{MINIMAL}samples = 0\n");
        assert!(ExperimentConfig::from_toml_str(&c).is_err());
        let c = MINIMAL.replace("[100]", "[]");
        assert!(ExperimentConfig::from_toml_str(&c).is_err());
    }

    #[test]
    fn paper_scale_defaults() {
        let q = MINIMAL
            .replace("annealed_gap", "quenched_bulk_sampling")
            .replace("[100]", "[2000]");
        let c = ExperimentConfig::from_toml_str(&q).unwrap().at_paper_scale().unwrap();
        assert_eq!(c.sizes, vec![5000]);
        let k = MINIMAL.replace("annealed_gap", "ks_convergence");
        let c = ExperimentConfig::from_toml_str(&format!("{k}repetitions = 25\n")).unwrap();
        assert_eq!(c.at_paper_scale().unwrap().repetitions, 50);
    }

    #[test]
    fn round_trips_through_toml() {
        let text = format!(
            "{MINIMAL}seed = 9\n[param]\na = 0.0\nchi = {{ kind = \"uniform_on_interval\", lo = -1.0, hi = 1.0 }}\n[rescaling]\ndensity = \"mde\"\nat = \"quantile\"\n"
        );
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
