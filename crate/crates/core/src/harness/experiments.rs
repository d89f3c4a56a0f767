//! Runners for the six experiment kinds.
//!
//! A run expands into trials keyed by substream paths
//! `kind/N/r<rep>/<arm>/t<trial>`, evaluates them on a rayon pool and
//! assembles rows in schedule order. Output is therefore independent of the
//! worker count.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::ensembles::{self, HermitianMatrix};
use crate::error::{Error, Result};
use crate::gapref::{self, ks_distance, EmpiricalCdf};
use crate::harness::config::{
    DensityPoint, DensitySource, ExperimentConfig, ExperimentKind, MatrixChoice, Observable, Rescaling, SCHEMA_VERSION,
};
use crate::harness::output::{git_describe, meta_path, Cell, CsvTable, RowAccounting, RunMeta};
use crate::harness::seed::{SeededRandomSource, StreamPath, SubstreamRegistry};
use crate::mde::{self, DeformationSpectrum, DensityEvaluator, MonoparametricFamily};
use crate::spectral;
use crate::C64;

/// From this dimension on the middle gap comes from shift-invert Lanczos
/// around `tr H / N` instead of a full eigensolve.
pub const WINDOW_MIN_N: usize = 400;

const WINDOW_PER_SIDE: usize = 4;

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Overrides the config seed.
    pub seed: Option<u64>,
    pub threads: usize,
    pub paper_scale: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: None,
            threads: 1,
            paper_scale: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub table: CsvTable,
    pub meta: RunMeta,
}

/// Column order of each kind.
pub fn columns(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::AnnealedGap | ExperimentKind::QuenchedBulkSampling => {
            &["n", "repetition", "trial", "index", "lambda", "raw_gap", "rho", "s"]
        }
        ExperimentKind::MonoparametricQuenched => {
            &["n", "arm", "repetition", "trial", "x", "index", "raw_gap", "rho", "s"]
        }
        ExperimentKind::KsConvergence => &["n", "arm", "repetition", "ks"],
        ExperimentKind::OverlapDecay => &[
            "n",
            "repetition",
            "x1",
            "x2",
            "max_overlap_sq",
            "mean_overlap_sq",
            "pairs",
        ],
        ExperimentKind::LocalLawCheck => &[
            "n",
            "repetition",
            "x1",
            "x2",
            "e1",
            "e2",
            "eta",
            "observable",
            "g12_re",
            "g12_im",
            "m12_re",
            "m12_im",
            "error",
            "stability",
            "flagged",
        ],
    }
}

/// Applies `--paper-scale` and resolves the seed.
pub fn prepare(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(ExperimentConfig, u64)> {
    cfg.validate()?;
    let cfg = if opts.paper_scale {
        cfg.at_paper_scale()?
    } else {
        cfg.clone()
    };
    let seed = opts
        .seed
        .or(cfg.seed)
        .ok_or_else(|| Error::Config("no seed: set `seed` in the config or pass --seed".into()))?;
    Ok((cfg, seed))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScheduleLine {
    pub n: usize,
    pub arm: &'static str,
    pub repetitions: usize,
    /// Trials per repetition.
    pub trials: usize,
    /// Rows scheduled for this line.
    pub rows: usize,
}

pub fn schedule(cfg: &ExperimentConfig) -> Vec<ScheduleLine> {
    let reps = cfg.repetitions;
    let mut out = Vec::new();
    for &n in &cfg.sizes {
        let line = |arm, trials, rows| ScheduleLine {
            n,
            arm,
            repetitions: reps,
            trials,
            rows,
        };
        match cfg.kind {
            ExperimentKind::AnnealedGap => out.push(line("main", cfg.samples, reps * cfg.samples)),
            ExperimentKind::QuenchedBulkSampling => {
                let w = spectral::bulk_window(n).len();
                out.push(line("main", 1, reps * w));
            }
            ExperimentKind::MonoparametricQuenched => {
                if cfg.include_wigner_arm {
                    out.push(line("gue", cfg.samples, reps * cfg.samples));
                }
                out.push(line("mono", cfg.samples, reps * cfg.samples));
            }
            ExperimentKind::KsConvergence => {
                out.push(line("gue", cfg.samples, reps));
                out.push(line("mono", cfg.samples, reps));
            }
            ExperimentKind::OverlapDecay | ExperimentKind::LocalLawCheck => out.push(line("main", 1, reps)),
        }
    }
    out
}

/// Human-readable schedule printed by `--dry-run`.
pub fn format_schedule(cfg: &ExperimentConfig, seed: u64) -> String {
    let lines = schedule(cfg);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "kind {} seed {} columns {}",
        cfg.kind.as_str(),
        seed,
        columns(cfg.kind).join(",")
    );
    for l in &lines {
        let _ = writeln!(
            s,
            "  N={:<5} arm={:<5} repetitions={} trials/rep={} rows={}",
            l.n, l.arm, l.repetitions, l.trials, l.rows
        );
    }
    let _ = writeln!(s, "  total rows {}", lines.iter().map(|l| l.rows).sum::<usize>());
    s
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    let (cfg, seed) = prepare(cfg, opts)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let reg = SubstreamRegistry::new(seed);
    let ctx = Ctx { cfg: &cfg, reg: &reg };
    let mut acct = RowAccounting {
        scheduled: schedule(&cfg).iter().map(|l| l.rows).sum(),
        ..RowAccounting::default()
    };
    let mut table = CsvTable::new(columns(cfg.kind));
    let summary = pool.install(|| match cfg.kind {
        ExperimentKind::AnnealedGap => run_annealed(&ctx, &mut table, &mut acct),
        ExperimentKind::QuenchedBulkSampling => run_quenched(&ctx, &mut table, &mut acct),
        ExperimentKind::MonoparametricQuenched => run_monoparametric(&ctx, &mut table, &mut acct),
        ExperimentKind::KsConvergence => run_ks(&ctx, &mut table, &mut acct),
        ExperimentKind::OverlapDecay => run_overlap(&ctx, &mut table, &mut acct),
        ExperimentKind::LocalLawCheck => run_local_law(&ctx, &mut table, &mut acct),
    })?;
    acct.emitted = table.len();
    if !acct.balanced() {
        return Err(Error::InvalidInput(format!(
            "row accounting does not balance: {} scheduled, {} emitted, {} skipped",
            acct.scheduled, acct.emitted, acct.skipped
        )));
    }
    let meta = RunMeta {
        schema_version: SCHEMA_VERSION,
        kind: cfg.kind.as_str().to_string(),
        seed,
        git_describe: git_describe(),
        paper_scale: opts.paper_scale,
        config: serde_json::to_value(&cfg).map_err(|e| Error::Config(e.to_string()))?,
        rows: acct,
        summary,
    };
    Ok(RunOutput { table, meta })
}

/// Writes the CSV and `<out>.meta.json`.
pub fn write_outputs(out: &RunOutput, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.table.write(file)?;
    std::fs::write(meta_path(path), out.meta.to_json()? + "\n")?;
    Ok(())
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    reg: &'a SubstreamRegistry,
}

impl Ctx<'_> {
    fn root(&self, n: usize, rep: usize) -> StreamPath {
        StreamPath::new(self.cfg.kind.as_str()).push(n).push(format!("r{rep}"))
    }

    fn rng(&self, path: StreamPath) -> Result<SeededRandomSource> {
        self.reg.issue(path)
    }

    fn beta(&self) -> u8 {
        self.cfg.symmetry.beta()
    }

    fn wigner(&self, n: usize, rng: &mut SeededRandomSource) -> HermitianMatrix {
        ensembles::sample_wigner_with(n, self.cfg.symmetry, self.cfg.entries, rng)
    }

    /// Deterministic matrix for `choice`; a Wigner draw uses `path`.
    fn fixed(&self, choice: MatrixChoice, n: usize, path: StreamPath) -> Result<HermitianMatrix> {
        let sym = self.cfg.symmetry;
        Ok(match choice {
            MatrixChoice::Zero => HermitianMatrix::zeros(n, sym),
            MatrixChoice::Identity => HermitianMatrix::identity(n, sym),
            MatrixChoice::Signs => {
                let d: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { -1.0 }).collect();
                HermitianMatrix::diagonal(&d, sym)
            }
            MatrixChoice::Wigner => self.wigner(n, &mut self.rng(path)?),
        })
    }

    /// Deformation `B` of size `n`, shared by every repetition.
    fn deformation(&self, n: usize) -> Result<HermitianMatrix> {
        self.fixed(
            self.cfg.deformation,
            n,
            StreamPath::new(self.cfg.kind.as_str()).push(n).push("B"),
        )
    }

    fn reference(&self) -> Result<&'static gapref::GapReference> {
        gapref::gaudin_mehta(self.beta())
    }
}

enum Outcome {
    Row(Vec<Cell>),
    Skip(String),
}

/// Recoverable per-trial failures; everything else aborts the run.
fn skip_reason(e: &Error) -> Option<String> {
    match e {
        Error::NonPositiveDensity { .. } => Some("density not positive".into()),
        Error::NoConvergence { .. } | Error::ContinuationFailed { .. } => Some("mde failure".into()),
        Error::NotInBulk { .. } => Some("outside bulk".into()),
        Error::Singular(_) => Some("singular stability factor".into()),
        _ => None,
    }
}

fn outcome(r: Result<Vec<Cell>>) -> Result<Outcome> {
    match r {
        Ok(row) => Ok(Outcome::Row(row)),
        Err(e) => match skip_reason(&e) {
            Some(reason) => Ok(Outcome::Skip(reason)),
            None => Err(e),
        },
    }
}

fn assemble(outcomes: Vec<Outcome>, table: &mut CsvTable, acct: &mut RowAccounting) -> Result<()> {
    for o in outcomes {
        match o {
            Outcome::Row(row) => table.push(row)?,
            Outcome::Skip(reason) => acct.skip(reason),
        }
    }
    Ok(())
}

/// Density used to rescale gaps.
#[derive(Clone, Debug)]
enum Density {
    Semicircle { radius: f64 },
    Mde(Box<DensityEvaluator>),
}

impl Density {
    fn for_deformation(source: DensitySource, d: &HermitianMatrix, x: f64) -> Result<Self> {
        Ok(match source {
            DensitySource::Semicircle => Density::Semicircle { radius: 2.0 },
            DensitySource::RescaledSemicircle => Density::Semicircle {
                radius: 2.0 * (1.0 + x * x).sqrt(),
            },
            DensitySource::Mde => {
                let spec = if d.is_zero() {
                    DeformationSpectrum::zero(d.n())
                } else {
                    DeformationSpectrum::from_matrix(d)?
                };
                Density::Mde(Box::new(DensityEvaluator::new(spec)))
            }
        })
    }

    fn rho(&self, e: f64) -> Result<f64> {
        match self {
            Density::Semicircle { radius } => Ok(mde::semicircle_density(e, *radius)),
            Density::Mde(ev) => ev.rho_at(e),
        }
    }

    fn quantile(&self, i: usize, n: usize) -> Result<f64> {
        match self {
            Density::Semicircle { radius } => mde::semicircle_quantile(i, n, *radius),
            Density::Mde(ev) => ev.quantile(i, n),
        }
    }

    /// `(rho, point)` for the gap whose lower eigenvalue `lambda` has the
    /// 1-based index `i`.
    fn at_gap(&self, at: DensityPoint, lambda: f64, i: usize, n: usize) -> Result<(f64, f64)> {
        let e = match at {
            DensityPoint::Eigenvalue => lambda,
            DensityPoint::Quantile => self.quantile(i, n)?,
        };
        let rho = self.rho(e)?;
        if !(rho > 0.0) {
            return Err(Error::NonPositiveDensity { energy: e, rho });
        }
        Ok((rho, e))
    }
}

/// 1-based lower index of the middle gap, `lambda_{N/2}` and `lambda_{N/2+1}`.
pub fn middle_index(n: usize) -> usize {
    n / 2
}

/// Eigenvalues `i` and `i + 1` (1-based) of `h`.
pub fn eigen_pair(h: &HermitianMatrix, i: usize) -> Result<(f64, f64)> {
    let n = h.n();
    if i == 0 || i >= n {
        return Err(Error::IndexOutOfRange { index: i, n });
    }
    if n >= WINDOW_MIN_N {
        if let Some(w) = spectral::eigenvalues_near(h, h.normalized_trace(), WINDOW_PER_SIDE)? {
            if let (Some(a), Some(b)) = (w.get(i - 1), w.get(i)) {
                return Ok((a, b));
            }
        }
    }
    let sd = spectral::eigh(h, false)?;
    Ok((sd.eigenvalues()[i - 1], sd.eigenvalues()[i]))
}

fn rescaling_json(r: Rescaling) -> Value {
    serde_json::to_value(r).unwrap_or(Value::Null)
}

fn ks_to_reference(values: &[f64], reference: &gapref::GapReference) -> Result<Option<f64>> {
    if values.is_empty() {
        return Ok(None);
    }
    let emp = EmpiricalCdf::new(values.to_vec())?;
    Ok(Some(ks_distance(&emp, reference)))
}

fn median(v: &[f64]) -> Option<f64> {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return None;
    }
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn run_annealed(ctx: &Ctx, table: &mut CsvTable, acct: &mut RowAccounting) -> Result<Value> {
    let cfg = ctx.cfg;
    let resc = cfg.rescaling_choice();
    let reference = ctx.reference()?;
    let mut per_n = Vec::new();
    for &n in &cfg.sizes {
        let b = ctx.deformation(n)?;
        let density = Density::for_deformation(resc.density, &b, 0.0)?;
        let i = middle_index(n);
        let fixed = match resc.at {
            DensityPoint::Quantile => Some(density.at_gap(resc.at, 0.0, i, n)?),
            DensityPoint::Eigenvalue => None,
        };
        let jobs: Vec<(usize, usize)> = (0..cfg.repetitions)
            .flat_map(|r| (0..cfg.samples).map(move |t| (r, t)))
            .collect();
        let outcomes = jobs
            .par_iter()
            .map(|&(r, t)| {
                let mut rng = ctx.rng(ctx.root(n, r).push(format!("t{t}")))?;
                let w = ctx.wigner(n, &mut rng);
                let h = if b.is_zero() { w } else { w.add_scaled(&b, 1.0)? };
                outcome((|| {
                    let (l1, l2) = eigen_pair(&h, i)?;
                    let (rho, _) = match fixed {
                        Some(v) => v,
                        None => density.at_gap(resc.at, l1, i, n)?,
                    };
                    let raw = (l2 - l1).max(0.0);
                    Ok(vec![
                        n.into(),
                        r.into(),
                        t.into(),
                        i.into(),
                        l1.into(),
                        raw.into(),
                        rho.into(),
                        (n as f64 * rho * raw).into(),
                    ])
                })())
            })
            .collect::<Result<Vec<_>>>()?;
        let start = table.len();
        assemble(outcomes, table, acct)?;
        let s: Vec<f64> = table.rows()[start..].iter().filter_map(|r| r[7].as_f64()).collect();
        per_n.push(json!({
            "n": n,
            "rows": s.len(),
            "ks": ks_to_reference(&s, reference)?,
            "mean_s": if s.is_empty() { None } else { Some(mean_std(&s).0) },
        }));
    }
    Ok(json!({ "rescaling": rescaling_json(resc), "beta": ctx.beta(), "per_n": per_n }))
}

fn run_quenched(ctx: &Ctx, table: &mut CsvTable, acct: &mut RowAccounting) -> Result<Value> {
    let cfg = ctx.cfg;
    let resc = cfg.rescaling_choice();
    let reference = ctx.reference()?;
    let interval = cfg.quenched.as_ref().and_then(|q| q.interval);
    let mut per_rep = Vec::new();
    for &n in &cfg.sizes {
        let b = ctx.deformation(n)?;
        let density = Density::for_deformation(resc.density, &b, 0.0)?;
        for r in 0..cfg.repetitions {
            let mut rng = ctx.rng(ctx.root(n, r))?;
            let w = ctx.wigner(n, &mut rng);
            let h = if b.is_zero() { w } else { w.add_scaled(&b, 1.0)? };
            let sd = spectral::eigh(&h, false)?;
            let ev = sd.eigenvalues();
            let window: Vec<usize> = spectral::bulk_window(n).collect();
            let outcomes = window
                .par_iter()
                .map(|&k| {
                    let (l1, l2) = (ev[k], ev[k + 1]);
                    if let Some([lo, hi]) = interval {
                        if !(l1 >= lo && l1 <= hi) {
                            return Ok(Outcome::Skip("outside interval".into()));
                        }
                    }
                    outcome((|| {
                        let (rho, _) = density.at_gap(resc.at, l1, k + 1, n)?;
                        let raw = (l2 - l1).max(0.0);
                        Ok(vec![
                            n.into(),
                            r.into(),
                            0usize.into(),
                            (k + 1).into(),
                            l1.into(),
                            raw.into(),
                            rho.into(),
                            (n as f64 * rho * raw).into(),
                        ])
                    })())
                })
                .collect::<Result<Vec<_>>>()?;
            let start = table.len();
            assemble(outcomes, table, acct)?;
            let s: Vec<f64> = table.rows()[start..].iter().filter_map(|r| r[7].as_f64()).collect();
            per_rep.push(json!({
                "n": n,
                "repetition": r,
                "rows": s.len(),
                "ks": ks_to_reference(&s, reference)?,
            }));
        }
    }
    Ok(json!({
        "rescaling": rescaling_json(resc),
        "beta": ctx.beta(),
        "interval": interval,
        "per_repetition": per_rep,
    }))
}

/// Fixed `H = W + B` and direction `A` of one repetition.
struct FixedPair {
    n: usize,
    rep: usize,
    h: HermitianMatrix,
    b: HermitianMatrix,
    family: MonoparametricFamily,
}

fn fixed_pairs(ctx: &Ctx) -> Result<Vec<FixedPair>> {
    let cfg = ctx.cfg;
    let keys: Vec<(usize, usize)> = cfg
        .sizes
        .iter()
        .flat_map(|&n| (0..cfg.repetitions).map(move |r| (n, r)))
        .collect();
    let bs: Vec<HermitianMatrix> = cfg.sizes.iter().map(|&n| ctx.deformation(n)).collect::<Result<_>>()?;
    keys.par_iter()
        .map(|&(n, r)| {
            let b = &bs[cfg.sizes.iter().position(|&m| m == n).expect("size listed")];
            let w = ctx.wigner(n, &mut ctx.rng(ctx.root(n, r).push("H"))?);
            let h = if b.is_zero() { w } else { w.add_scaled(b, 1.0)? };
            let a = ctx.fixed(ctx.cfg.direction_choice(), n, ctx.root(n, r).push("A"))?;
            let family = MonoparametricFamily::new(b.clone(), a)?;
            Ok(FixedPair {
                n,
                rep: r,
                h,
                b: b.clone(),
                family,
            })
        })
        .collect()
}

/// One monoparametric trial: `(x, raw gap, rho, s)`.
fn mono_trial(ctx: &Ctx, pair: &FixedPair, resc: Rescaling, t: usize) -> Result<Result<(f64, f64, f64, f64)>> {
    let n = pair.n;
    let mut rng = ctx.rng(ctx.root(n, pair.rep).push("mono").push(format!("t{t}")))?;
    let x = ensembles::sample_x(&ctx.cfg.param_law(), n, &mut rng);
    let family = &pair.family;
    let hx = ensembles::build_monoparametric(&pair.h, family.a(), x)?;
    let i = middle_index(n);
    Ok((|| {
        let density = match resc.density {
            DensitySource::Mde => Density::Mde(Box::new(DensityEvaluator::new(family.spectrum(x)?))),
            other => Density::for_deformation(other, &pair.b, x)?,
        };
        let (l1, l2) = eigen_pair(&hx, i)?;
        let (rho, _) = density.at_gap(resc.at, l1, i, n)?;
        let raw = (l2 - l1).max(0.0);
        Ok((x, raw, rho, n as f64 * rho * raw))
    })())
}

/// One plain Wigner trial of the GUE/GOE arm.
fn wigner_trial(ctx: &Ctx, n: usize, rep: usize, resc: Rescaling, t: usize) -> Result<Result<(f64, f64, f64)>> {
    let mut rng = ctx.rng(ctx.root(n, rep).push("gue").push(format!("t{t}")))?;
    let h = ctx.wigner(n, &mut rng);
    let i = middle_index(n);
    Ok((|| {
        let density = Density::for_deformation(resc.density, &HermitianMatrix::zeros(n, ctx.cfg.symmetry), 0.0)?;
        let (l1, l2) = eigen_pair(&h, i)?;
        let (rho, _) = density.at_gap(resc.at, l1, i, n)?;
        let raw = (l2 - l1).max(0.0);
        Ok((raw, rho, n as f64 * rho * raw))
    })())
}

fn flatten<T>(r: Result<Result<T>>) -> Result<std::result::Result<T, String>> {
    match r? {
        Ok(v) => Ok(Ok(v)),
        Err(e) => match skip_reason(&e) {
            Some(reason) => Ok(Err(reason)),
            None => Err(e),
        },
    }
}

#[derive(Clone, Copy)]
enum Arm {
    Gue,
    Mono,
}

impl Arm {
    fn as_str(self) -> &'static str {
        match self {
            Arm::Gue => "gue",
            Arm::Mono => "mono",
        }
    }
}

fn run_monoparametric(ctx: &Ctx, table: &mut CsvTable, acct: &mut RowAccounting) -> Result<Value> {
    let cfg = ctx.cfg;
    let resc = cfg.rescaling_choice();
    let wresc = cfg.wigner_rescaling_choice();
    let reference = ctx.reference()?;
    let pairs = fixed_pairs(ctx)?;
    let mut arms = Vec::new();
    if cfg.include_wigner_arm {
        arms.push(Arm::Gue);
    }
    arms.push(Arm::Mono);
    let mut jobs = Vec::new();
    for p in 0..pairs.len() {
        for &arm in &arms {
            for t in 0..cfg.samples {
                jobs.push((p, arm, t));
            }
        }
    }
    let outcomes = jobs
        .par_iter()
        .map(|&(p, arm, t)| {
            let pair = &pairs[p];
            let n = pair.n;
            let i = middle_index(n);
            let head =
                |x: Cell| -> Vec<Cell> { vec![n.into(), arm.as_str().into(), pair.rep.into(), t.into(), x, i.into()] };
            Ok(match arm {
                Arm::Mono => match flatten(mono_trial(ctx, pair, resc, t))? {
                    Ok((x, raw, rho, s)) => {
                        let mut row = head(x.into());
                        row.extend([raw.into(), rho.into(), s.into()]);
                        Outcome::Row(row)
                    }
                    Err(reason) => Outcome::Skip(reason),
                },
                Arm::Gue => match flatten(wigner_trial(ctx, n, pair.rep, wresc, t))? {
                    Ok((raw, rho, s)) => {
                        let mut row = head("".into());
                        row.extend([raw.into(), rho.into(), s.into()]);
                        Outcome::Row(row)
                    }
                    Err(reason) => Outcome::Skip(reason),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(outcomes, table, acct)?;
    let mut per = Vec::new();
    for &n in &cfg.sizes {
        for &arm in &arms {
            let s: Vec<f64> = table
                .rows()
                .iter()
                .filter(|r| r[0] == Cell::from(n) && r[1] == Cell::from(arm.as_str()))
                .filter_map(|r| r[8].as_f64())
                .collect();
            per.push(json!({
                "n": n,
                "arm": arm.as_str(),
                "rows": s.len(),
                "ks": ks_to_reference(&s, reference)?,
            }));
        }
    }
    Ok(json!({
        "rescaling": { "mono": rescaling_json(resc), "gue": rescaling_json(wresc) },
        "beta": ctx.beta(),
        "param": cfg.param_law(),
        "direction": cfg.direction_choice(),
        "per_arm": per,
    }))
}

fn run_ks(ctx: &Ctx, table: &mut CsvTable, acct: &mut RowAccounting) -> Result<Value> {
    let cfg = ctx.cfg;
    let resc = cfg.rescaling_choice();
    let wresc = cfg.wigner_rescaling_choice();
    let reference = ctx.reference()?;
    let pairs = fixed_pairs(ctx)?;
    let arms = [Arm::Gue, Arm::Mono];
    let mut jobs = Vec::new();
    for p in 0..pairs.len() {
        for &arm in &arms {
            for t in 0..cfg.samples {
                jobs.push((p, arm, t));
            }
        }
    }
    let gaps = jobs
        .par_iter()
        .map(|&(p, arm, t)| {
            let pair = &pairs[p];
            Ok(match arm {
                Arm::Mono => flatten(mono_trial(ctx, pair, resc, t))?.map(|v| v.3),
                Arm::Gue => flatten(wigner_trial(ctx, pair.n, pair.rep, wresc, t))?.map(|v| v.2),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut skipped_trials = 0usize;
    let mut ks_by = std::collections::BTreeMap::<(usize, &str), Vec<f64>>::new();
    for (c, chunk) in gaps.chunks(cfg.samples).enumerate() {
        let pair = &pairs[c / arms.len()];
        let arm = arms[c % arms.len()];
        let s: Vec<f64> = chunk.iter().filter_map(|g| g.as_ref().ok().copied()).collect();
        skipped_trials += chunk.len() - s.len();
        match ks_to_reference(&s, reference)? {
            Some(ks) => {
                ks_by.entry((pair.n, arm.as_str())).or_default().push(ks);
                table.push(vec![pair.n.into(), arm.as_str().into(), pair.rep.into(), ks.into()])?;
            }
            None => acct.skip("all trials skipped"),
        }
    }
    let per: Vec<Value> = ks_by
        .iter()
        .map(|(&(n, arm), v)| {
            let (mean, sd) = mean_std(v);
            json!({ "n": n, "arm": arm, "repetitions": v.len(), "mean_ks": mean, "std_ks": sd })
        })
        .collect();
    Ok(json!({
        "rescaling": { "mono": rescaling_json(resc), "gue": rescaling_json(wresc) },
        "beta": ctx.beta(),
        "param": cfg.param_law(),
        "direction": cfg.direction_choice(),
        "skipped_trials": skipped_trials,
        "per_arm": per,
    }))
}

fn run_overlap(ctx: &Ctx, table: &mut CsvTable, acct: &mut RowAccounting) -> Result<Value> {
    let cfg = ctx.cfg;
    let sec = cfg.overlap.clone().unwrap_or_default();
    let (x1, x2) = (sec.x1, sec.x1 + sec.delta_x);
    let jobs: Vec<(usize, usize)> = cfg
        .sizes
        .iter()
        .flat_map(|&n| (0..cfg.repetitions).map(move |r| (n, r)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(n, r)| {
            let b = ctx.deformation(n)?;
            let w = ctx.wigner(n, &mut ctx.rng(ctx.root(n, r).push("H"))?);
            let h = if b.is_zero() { w } else { w.add_scaled(&b, 1.0)? };
            let a = ctx.fixed(sec.direction, n, ctx.root(n, r).push("A"))?;
            let sd1 = spectral::eigh(&ensembles::build_monoparametric(&h, &a, x1)?, true)?;
            let sd2 = if x1 == x2 {
                sd1.clone()
            } else {
                spectral::eigh(&ensembles::build_monoparametric(&h, &a, x2)?, true)?
            };
            let bulk = spectral::bulk_window(n);
            let om = spectral::overlaps(&sd1, &sd2, bulk.clone(), bulk)?;
            let width = (n as f64 * (x2 - x1).abs()).ceil() as usize;
            let (mut max, mut sum, mut pairs) = (0.0f64, 0.0, 0usize);
            for (j1, j2, v) in om.iter() {
                if j1.abs_diff(j2) <= width {
                    max = max.max(v);
                    sum += v;
                    pairs += 1;
                }
            }
            let mean = if pairs > 0 { sum / pairs as f64 } else { f64::NAN };
            Ok(Outcome::Row(vec![
                n.into(),
                r.into(),
                x1.into(),
                x2.into(),
                max.into(),
                mean.into(),
                pairs.into(),
            ]))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(outcomes, table, acct)?;
    let per: Vec<Value> = cfg
        .sizes
        .iter()
        .map(|&n| {
            let v: Vec<f64> = table
                .rows()
                .iter()
                .filter(|r| r[0] == Cell::from(n))
                .filter_map(|r| r[4].as_f64())
                .collect();
            json!({ "n": n, "median_max_overlap_sq": median(&v), "n_times_median": median(&v).map(|m| m * n as f64) })
        })
        .collect();
    Ok(json!({ "x1": x1, "x2": x2, "direction": sec.direction, "per_n": per }))
}

fn run_local_law(ctx: &Ctx, table: &mut CsvTable, acct: &mut RowAccounting) -> Result<Value> {
    let cfg = ctx.cfg;
    let sec = cfg.local_law.clone().unwrap_or_default();
    let jobs: Vec<(usize, usize)> = cfg
        .sizes
        .iter()
        .flat_map(|&n| (0..cfg.repetitions).map(move |r| (n, r)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(n, r)| {
            let b = ctx.deformation(n)?;
            let w = ctx.wigner(n, &mut ctx.rng(ctx.root(n, r).push("H"))?);
            let h = if b.is_zero() { w } else { w.add_scaled(&b, 1.0)? };
            let a = ctx.fixed(sec.direction, n, ctx.root(n, r).push("A"))?;
            let eta = (n as f64).powf(-sec.eta_exponent);
            let z1 = C64::new(sec.e1, eta);
            let z2 = if sec.conjugate {
                z1.conj()
            } else {
                C64::new(sec.e2, eta)
            };
            let obs = match sec.observable {
                Observable::Identity => HermitianMatrix::identity(n, cfg.symmetry),
                Observable::A => a.clone(),
            };
            let sd1 = spectral::eigh(&ensembles::build_monoparametric(&h, &a, sec.x1)?, true)?;
            let sd2 = if sec.x1 == sec.x2 {
                sd1.clone()
            } else {
                spectral::eigh(&ensembles::build_monoparametric(&h, &a, sec.x2)?, true)?
            };
            let g12 = spectral::resolvent_trace_product_spectral(&sd1, &sd2, z1, z2, &obs)?;
            let family = MonoparametricFamily::new(b, a)?;
            let sol1 = mde::solve_mde(&family.spectrum(sec.x1)?, z1)?;
            let sol2 = mde::solve_mde(&family.spectrum(sec.x2)?, z2)?;
            let stability = mde::stability_factor(&sol1, &sol2, false)?;
            let (m12, flagged) = match mde::m12_observable(&sol1, &sol2, &obs) {
                Ok(m) => (m, false),
                Err(Error::Singular(_)) => (C64::new(f64::NAN, f64::NAN), true),
                Err(e) => return Err(e),
            };
            let error = if flagged { f64::NAN } else { (g12 - m12).norm() };
            let obs_name = match sec.observable {
                Observable::Identity => "identity",
                Observable::A => "a",
            };
            Ok(Outcome::Row(vec![
                n.into(),
                r.into(),
                sec.x1.into(),
                sec.x2.into(),
                sec.e1.into(),
                z2.re.into(),
                eta.into(),
                obs_name.into(),
                g12.re.into(),
                g12.im.into(),
                m12.re.into(),
                m12.im.into(),
                error.into(),
                stability.into(),
                flagged.into(),
            ]))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(outcomes, table, acct)?;
    let per: Vec<Value> = cfg
        .sizes
        .iter()
        .map(|&n| {
            let rows: Vec<&Vec<Cell>> = table.rows().iter().filter(|r| r[0] == Cell::from(n)).collect();
            let err: Vec<f64> = rows.iter().filter_map(|r| r[12].as_f64()).collect();
            let stab: Vec<f64> = rows.iter().filter_map(|r| r[13].as_f64()).collect();
            let flagged = rows.iter().filter(|r| r[14] == Cell::from(true)).count();
            json!({
                "n": n,
                "median_error": median(&err),
                "min_stability": stab.iter().copied().fold(f64::INFINITY, f64::min),
                "flagged": flagged,
            })
        })
        .collect();
    Ok(json!({
        "local_law": {
            "x1": sec.x1, "x2": sec.x2, "e1": sec.e1, "e2": sec.e2,
            "eta_exponent": sec.eta_exponent, "conjugate": sec.conjugate,
            "observable": sec.observable, "direction": sec.direction,
        },
        "per_n": per,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(text).unwrap()
    }

    #[test]
    fn annealed_single_sample_is_deterministic() {
        let c = cfg("schema_version = 1\nkind = \"annealed_gap\"\nseed = 3\nsizes = [20]\n");
        let a = run_experiment(&c, &RunOptions::default()).unwrap();
        let b = run_experiment(&c, &RunOptions::default()).unwrap();
        assert_eq!(a.table.len(), 1);
        assert_eq!(a.table.to_csv_string(), b.table.to_csv_string());
        assert!(a.meta.rows.balanced());
    }

    #[test]
    fn seed_is_required() {
        let c = cfg("schema_version = 1\nkind = \"annealed_gap\"\nsizes = [20]\n");
        assert!(matches!(
            run_experiment(&c, &RunOptions::default()),
            Err(Error::Config(_))
        ));
        let opts = RunOptions {
            seed: Some(1),
            ..RunOptions::default()
        };
        assert!(run_experiment(&c, &opts).is_ok());
    }

    #[test]
    fn quenched_window_rows() {
        let c = cfg("schema_version = 1\nkind = \"quenched_bulk_sampling\"\nseed = 3\nsizes = [50]\n");
        let out = run_experiment(&c, &RunOptions::default()).unwrap();
        assert_eq!(out.table.len(), 40);
        assert_eq!(schedule(&c)[0].rows, 40);
    }

    #[test]
    fn eigen_pair_matches_full_solve() {
        let mut rng = SeededRandomSource::from_master(8);
        let h = ensembles::sample_gue(WINDOW_MIN_N, &mut rng);
        let sd = spectral::eigh(&h, false).unwrap();
        let i = middle_index(WINDOW_MIN_N);
        let (a, b) = eigen_pair(&h, i).unwrap();
        assert!((a - sd.eigenvalues()[i - 1]).abs() < 1e-11);
        assert!((b - sd.eigenvalues()[i]).abs() < 1e-11);
    }

    #[test]
    fn schedule_lists_arms() {
        let c = cfg("schema_version = 1\nkind = \"ks_convergence\"\nseed = 1\nsizes = [4, 16]\nsamples = 100\nrepetitions = 25\n");
        let s = schedule(&c);
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|l| l.rows == 25));
        assert!(format_schedule(&c, 1).contains("total rows 100"));
    }
}
