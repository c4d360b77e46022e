//! Monte Carlo protocols: convergence of the scaled PBE variance, efficiency ratios
//! against the GLSE, timing, and spectral surface grids.

use std::fs;
use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{asym_cov_glse, asym_cov_lse, asym_cov_pbe, lse_efficient_for_all_spectra};
use crate::covariance::{AliasedSpectrum, CovarianceModel, ModelId, SpectralDensity};
use crate::design::{jump_measure, LatticeDesign, RegressorKind};
use crate::error::{Error, Result};
use crate::estimators::{glse_owned, lse, GlsSolver, PbeSolver, SeparableArModel};
use crate::fit::{average_fits, fit_from_moments, fit_moments, fit_separable, residuals, Approximation};
use crate::sampler::{assemble_sigma, sample_batch, sample_with_factor, CovarianceFactor, DEFAULT_DENSE_CAP};

pub const SCHEMA_VERSION: u32 = 1;

/// Fraction of excluded fits above which a protocol warning is attached.
pub const EXCLUSION_WARNING: f64 = 0.01;

const STREAM_FIT: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_TIMING: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub model: ModelId,
    pub regressor: RegressorKind,
    pub size: usize,
    /// Smaller side used for the PBE growth factor.
    pub scaling_size: usize,
    pub runs: usize,
    /// Each timed run repeats the operation until at least this much time has passed.
    pub min_run_seconds: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            model: ModelId::MaternNu2,
            regressor: RegressorKind::PolyPlusHarmonic,
            size: 100,
            scaling_size: 50,
            runs: 5,
            min_run_seconds: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub models: Vec<ModelId>,
    pub regressor: RegressorKind,
    pub approximations: Vec<Approximation>,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    /// Side of the lattice whose averaged fits define the fixed approximation.
    pub fit_size: usize,
    pub fit_replicates: usize,
    pub base_seed: u64,
    pub beta: f64,
    /// Fit the approximation on every replicate instead of using the averaged fit.
    pub per_replicate_fit: bool,
    pub dense_cap: usize,
    /// Replicates simulated per batch.
    pub chunk: usize,
    pub timing: TimingConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            models: ModelId::ALL.to_vec(),
            regressor: RegressorKind::Harmonic,
            approximations: Approximation::STANDARD.to_vec(),
            sizes: vec![20, 60],
            replicates: 1000,
            fit_size: 60,
            fit_replicates: 1000,
            base_seed: 20_240_601,
            beta: 2.0,
            per_replicate_fit: false,
            dense_cap: DEFAULT_DENSE_CAP,
            chunk: 250,
            timing: TimingConfig::default(),
        }
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    match key.split_once('.') {
        None => {
            table.insert(key.to_string(), value);
            Ok(())
        }
        Some((head, rest)) => {
            let entry = table.entry(head.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(inner) => set_dotted(inner, rest, value),
                _ => Err(Error::Config(format!("'{head}' is not a table"))),
            }
        }
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back to a string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Self::from_parts(s, &[])
    }

    /// Parses `text` and applies `key=value` overrides (dotted keys reach nested tables).
    pub fn from_parts(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{item}' is not key=value")))?;
            set_dotted(&mut table, key.trim(), parse_override_value(raw.trim()))?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_parts(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.replicates < 2 || self.fit_replicates < 2 {
            return bad("replicates and fit_replicates must be >= 2".into());
        }
        if self.models.is_empty() || self.approximations.is_empty() || self.sizes.is_empty() {
            return bad("models, approximations and sizes must be nonempty".into());
        }
        let min_side = self.approximations.iter().map(|a| a.orders().0.max(a.orders().1)).max().unwrap_or(1) + 2;
        if let Some(&n) = self.sizes.iter().chain([&self.fit_size]).find(|&&n| n < min_side) {
            return bad(format!("lattice side {n} is below the minimum {min_side}"));
        }
        if self.chunk == 0 {
            return bad("chunk must be >= 1".into());
        }
        if !self.beta.is_finite() {
            return bad("beta must be finite".into());
        }
        let t = &self.timing;
        if t.runs == 0 || t.size < 4 || t.scaling_size < 4 || !(t.min_run_seconds >= 0.0) {
            return bad("timing needs runs >= 1, sizes >= 4 and min_run_seconds >= 0".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// First seed of the replicate stream for one protocol phase, model and lattice side.
/// Replicate `i` uses this value plus `i`. Hashing keeps streams of nearby base seeds
/// from overlapping.
pub fn stream_seed(base_seed: u64, stream: u64, model: ModelId, n: usize) -> u64 {
    let tag = ModelId::ALL.iter().position(|&m| m == model).unwrap_or(0) as u64;
    splitmix64(base_seed ^ splitmix64((stream << 56) | (tag << 48) | n as u64))
}

/// Rounds to 6 significant digits and prints the shortest decimal of the rounded value.
pub fn format_sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("valid float");
    format!("{rounded}")
}

/// An estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McValue {
    pub value: f64,
    pub se: f64,
}

/// `‖x‖²` times the sample variance, with the standard error from the fourth moment.
pub fn scaled_variance(values: &[f64], norm_sq: f64) -> McValue {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in values {
        let d = (v - mean) * (v - mean);
        m2 += d;
        m4 += d * d;
    }
    let var = m2 / (r - 1.0);
    let se = ((m4 / r - (m2 / r).powi(2)).max(0.0) / r).sqrt();
    McValue { value: norm_sq * var, se: norm_sq * se }
}

/// `Var(num) / Var(den)` on paired replicates, with a delta-method standard error.
pub fn variance_ratio(num: &[f64], den: &[f64]) -> McValue {
    let r = num.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / r;
    let (mn, md) = (mean(num), mean(den));
    let a: Vec<f64> = num.iter().map(|v| (v - mn).powi(2)).collect();
    let b: Vec<f64> = den.iter().map(|v| (v - md).powi(2)).collect();
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    let ratio = sa / sb;
    let resid: f64 = a.iter().zip(&b).map(|(x, y)| (x - ratio * y).powi(2)).sum::<f64>() / r;
    let se = resid.sqrt() / (sb / r) / r.sqrt();
    McValue { value: ratio, se }
}

/// Averaged fit of one approximation from the fit phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedFit {
    pub model: ModelId,
    pub approximation: Approximation,
    pub fit: SeparableArModel<f64>,
    pub attempted: usize,
    pub excluded: usize,
}

/// One row of a result table. Fields that do not apply to an experiment are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub model: ModelId,
    pub regressor: RegressorKind,
    pub approximation: Approximation,
    pub n: usize,
    pub replicates: usize,
    pub excluded: usize,
    pub pbe_variance: Option<McValue>,
    pub lse_variance: Option<McValue>,
    pub glse_variance: Option<McValue>,
    pub asymptotic_pbe: Option<f64>,
    pub asymptotic_lse: Option<f64>,
    pub asymptotic_glse: Option<f64>,
    pub lse_ratio: Option<McValue>,
    pub pbe_ratio: Option<McValue>,
    pub theoretical_lse_ratio: Option<f64>,
    pub theoretical_pbe_ratio: Option<f64>,
    pub lse_efficient: bool,
    pub near_unit_root: bool,
    pub seed_first: u64,
    pub seed_last: u64,
    pub config_hash: String,
}

const CSV_HEADER: [&str; 28] = [
    "experiment",
    "model",
    "regressor",
    "approximation",
    "n",
    "replicates",
    "excluded",
    "pbe_variance",
    "pbe_variance_se",
    "lse_variance",
    "lse_variance_se",
    "glse_variance",
    "glse_variance_se",
    "asymptotic_pbe",
    "asymptotic_lse",
    "asymptotic_glse",
    "lse_ratio",
    "lse_ratio_se",
    "pbe_ratio",
    "pbe_ratio_se",
    "theoretical_lse_ratio",
    "theoretical_pbe_ratio",
    "lse_efficient",
    "near_unit_root",
    "seed_first",
    "seed_last",
    "config_hash",
    "schema_version",
];

impl ResultRow {
    fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(format_sig).unwrap_or_default();
        let mc = |v: Option<McValue>| [opt(v.map(|m| m.value)), opt(v.map(|m| m.se))];
        let mut out = vec![
            self.experiment.clone(),
            self.model.to_string(),
            self.regressor.to_string(),
            self.approximation.to_string(),
            self.n.to_string(),
            self.replicates.to_string(),
            self.excluded.to_string(),
        ];
        out.extend(mc(self.pbe_variance));
        out.extend(mc(self.lse_variance));
        out.extend(mc(self.glse_variance));
        out.extend([opt(self.asymptotic_pbe), opt(self.asymptotic_lse), opt(self.asymptotic_glse)]);
        out.extend(mc(self.lse_ratio));
        out.extend(mc(self.pbe_ratio));
        out.extend([opt(self.theoretical_lse_ratio), opt(self.theoretical_pbe_ratio)]);
        out.extend([
            self.lse_efficient.to_string(),
            self.near_unit_root.to_string(),
            self.seed_first.to_string(),
            self.seed_last.to_string(),
            self.config_hash.clone(),
            SCHEMA_VERSION.to_string(),
        ]);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub experiment: String,
    pub config_hash: String,
    pub fits: Vec<FixedFit>,
    pub rows: Vec<ResultRow>,
    pub warnings: Vec<String>,
}

impl ResultTable {
    pub fn find(&self, model: ModelId, approximation: Approximation, n: usize) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.model == model && r.approximation == approximation && r.n == n)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.csv_record()).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 csv"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("table serializes"))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Simulates `y = Xβ + ε` in batches sharing one covariance factor.
struct Simulator {
    design: LatticeDesign<f64>,
    factor: CovarianceFactor<f64>,
    mean: Array1<f64>,
    seed0: u64,
}

impl Simulator {
    fn new(cfg: &ExperimentConfig, id: ModelId, n: usize, stream: u64) -> Result<Self> {
        let model = id.build::<f64>();
        let design = LatticeDesign::single(n, cfg.regressor)?;
        let factor = CovarianceFactor::new(&model, n, cfg.dense_cap)?;
        let mean = design.column(0).mapv(|x| x * cfg.beta);
        Ok(Self { design, factor, mean, seed0: stream_seed(cfg.base_seed, stream, id, n) })
    }

    fn for_each_chunk(&self, replicates: usize, chunk: usize, mut f: impl FnMut(ArrayView2<f64>) -> Result<()>) -> Result<()> {
        let mut first = 0;
        while first < replicates {
            let count = chunk.min(replicates - first);
            let mut y = sample_batch(&self.factor, self.seed0, first, count);
            y += &self.mean.view().insert_axis(Axis(1));
            f(y.view())?;
            first += count;
        }
        Ok(())
    }

    fn seed_range(&self, replicates: usize) -> (u64, u64) {
        (self.seed0, self.seed0.wrapping_add(replicates as u64 - 1))
    }
}

fn is_fit_exclusion(e: &Error) -> bool {
    matches!(e, Error::NonstationaryFit(_) | Error::OrderDegeneracy)
}

fn lse_moments(design: &LatticeDesign<f64>, y: ArrayView1<f64>) -> Result<[f64; 5]> {
    let b = lse(design, y)?;
    let r = residuals(design, y, b.view())?;
    fit_moments(r.view(), design.side())
}

/// Fits every approximation on `fit_replicates` LSE residual fields at `fit_size` and
/// averages the accepted fits.
pub fn fit_phase(cfg: &ExperimentConfig, id: ModelId) -> Result<Vec<FixedFit>> {
    let sim = Simulator::new(cfg, id, cfg.fit_size, STREAM_FIT)?;
    let k = cfg.approximations.len();
    let mut accepted: Vec<Vec<SeparableArModel<f64>>> = vec![Vec::new(); k];
    let mut excluded = vec![0usize; k];
    sim.for_each_chunk(cfg.fit_replicates, cfg.chunk, |y| {
        let moments: Vec<Result<[f64; 5]>> =
            (0..y.ncols()).into_par_iter().map(|j| lse_moments(&sim.design, y.column(j))).collect();
        for m in moments {
            let m = m?;
            for (i, &approx) in cfg.approximations.iter().enumerate() {
                match fit_from_moments(m, approx) {
                    Ok(fit) => accepted[i].push(fit),
                    Err(e) if is_fit_exclusion(&e) => excluded[i] += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(())
    })?;
    cfg.approximations
        .iter()
        .zip(accepted.iter().zip(&excluded))
        .map(|(&approximation, (fits, &excl))| {
            if fits.is_empty() {
                return Err(Error::InsufficientReplicates { needed: 1, got: 0 });
            }
            Ok(FixedFit { model: id, approximation, fit: average_fits(fits)?, attempted: cfg.fit_replicates, excluded: excl })
        })
        .collect()
}

fn exclusion_warnings(fits: &[FixedFit], warnings: &mut Vec<String>) {
    for f in fits {
        if f.excluded as f64 > EXCLUSION_WARNING * f.attempted as f64 {
            warnings.push(format!(
                "{} {}: {} of {} fits excluded as nonstationary or degenerate",
                f.model, f.approximation, f.excluded, f.attempted
            ));
        }
    }
}

/// Estimate and fit from one replicate in per-replicate mode.
type OwnFit = (f64, SeparableArModel<f64>);

/// PBE estimates per approximation; `None` marks a replicate whose own fit was excluded.
struct PbeRun {
    estimates: Vec<Vec<Option<f64>>>,
    own_fits: Vec<Vec<SeparableArModel<f64>>>,
}

fn run_pbe(cfg: &ExperimentConfig, sim: &Simulator, fixed: &[FixedFit], extra: &mut dyn FnMut(ArrayView2<f64>) -> Result<()>) -> Result<PbeRun> {
    let k = fixed.len();
    let solvers: Vec<PbeSolver<f64>> = if cfg.per_replicate_fit {
        Vec::new()
    } else {
        fixed.iter().map(|f| PbeSolver::new(&sim.design, &f.fit)).collect::<Result<_>>()?
    };
    let mut run = PbeRun { estimates: vec![Vec::with_capacity(cfg.replicates); k], own_fits: vec![Vec::new(); k] };
    let n = sim.design.side();
    sim.for_each_chunk(cfg.replicates, cfg.chunk, |y| {
        extra(y)?;
        if cfg.per_replicate_fit {
            let per: Vec<Result<Vec<Option<OwnFit>>>> = (0..y.ncols())
                .into_par_iter()
                .map(|j| {
                    let col = y.column(j);
                    let b = lse(&sim.design, col)?;
                    let r = residuals(&sim.design, col, b.view())?;
                    fixed
                        .iter()
                        .map(|f| match fit_separable(r.view(), n, f.approximation) {
                            Ok(fit) => Ok(Some((PbeSolver::new(&sim.design, &fit)?.estimate(col)[0], fit))),
                            Err(e) if is_fit_exclusion(&e) => Ok(None),
                            Err(e) => Err(e),
                        })
                        .collect()
                })
                .collect();
            for rep in per {
                for (i, item) in rep?.into_iter().enumerate() {
                    match item {
                        Some((b, fit)) => {
                            run.estimates[i].push(Some(b));
                            run.own_fits[i].push(fit);
                        }
                        None => run.estimates[i].push(None),
                    }
                }
            }
        } else {
            for (i, solver) in solvers.iter().enumerate() {
                let est = solver.estimate_batch(y);
                run.estimates[i].extend(est.row(0).iter().map(|&b| Some(b)));
            }
        }
        Ok(())
    })?;
    Ok(run)
}

/// The approximation used for the asymptotic value: the fixed fit, or the average of the
/// per-replicate fits.
fn effective_fit(cfg: &ExperimentConfig, fixed: &FixedFit, own: &[SeparableArModel<f64>]) -> Result<SeparableArModel<f64>> {
    if cfg.per_replicate_fit {
        average_fits(own)
    } else {
        Ok(fixed.fit)
    }
}

struct ModelContext {
    id: ModelId,
    spectrum: AliasedSpectrum<f64>,
    fixed: Vec<FixedFit>,
}

fn model_context(cfg: &ExperimentConfig, id: ModelId, warnings: &mut Vec<String>) -> Result<ModelContext> {
    let fixed = fit_phase(cfg, id)?;
    exclusion_warnings(&fixed, warnings);
    Ok(ModelContext { id, spectrum: AliasedSpectrum::new(&id.build())?, fixed })
}

fn base_row(cfg: &ExperimentConfig, experiment: &str, ctx: &ModelContext, f: &FixedFit, sim: &Simulator, hash: &str) -> ResultRow {
    let (seed_first, seed_last) = sim.seed_range(cfg.replicates);
    ResultRow {
        experiment: experiment.to_string(),
        model: ctx.id,
        regressor: cfg.regressor,
        approximation: f.approximation,
        n: sim.design.side(),
        replicates: cfg.replicates,
        excluded: 0,
        pbe_variance: None,
        lse_variance: None,
        glse_variance: None,
        asymptotic_pbe: None,
        asymptotic_lse: None,
        asymptotic_glse: None,
        lse_ratio: None,
        pbe_ratio: None,
        theoretical_lse_ratio: None,
        theoretical_pbe_ratio: None,
        lse_efficient: lse_efficient_for_all_spectra(&jump_measure(cfg.regressor)),
        near_unit_root: f.fit.near_unit_root(),
        seed_first,
        seed_last,
        config_hash: hash.to_string(),
    }
}

/// Scaled empirical PBE variance against its limit, per model, approximation and size.
pub fn run_experiment1(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let hash = cfg.hash();
    let jumps = jump_measure(cfg.regressor);
    let mut table = ResultTable { experiment: "experiment1".into(), config_hash: hash.clone(), fits: Vec::new(), rows: Vec::new(), warnings: Vec::new() };
    for &id in &cfg.models {
        let ctx = model_context(cfg, id, &mut table.warnings)?;
        for &n in &cfg.sizes {
            let sim = Simulator::new(cfg, ctx.id, n, STREAM_EVAL)?;
            let norm_sq = sim.design.norms()[0].powi(2);
            let run = run_pbe(cfg, &sim, &ctx.fixed, &mut |_| Ok(()))?;
            for (i, f) in ctx.fixed.iter().enumerate() {
                let kept: Vec<f64> = run.estimates[i].iter().flatten().copied().collect();
                let mut row = base_row(cfg, "experiment1", &ctx, f, &sim, &hash);
                row.excluded = cfg.replicates - kept.len();
                if kept.len() >= 2 {
                    row.pbe_variance = Some(scaled_variance(&kept, norm_sq));
                    let g = effective_fit(cfg, f, &run.own_fits[i])?;
                    row.near_unit_root = g.near_unit_root();
                    row.asymptotic_pbe = Some(asym_cov_pbe(&ctx.spectrum, &g, &jumps)?.scalar());
                }
                table.rows.push(row);
            }
        }
        table.fits.extend(ctx.fixed);
    }
    Ok(table)
}

/// Empirical and theoretical variance ratios LSE/GLSE and PBE/GLSE on common replicates.
pub fn run_experiment2(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let hash = cfg.hash();
    let jumps = jump_measure(cfg.regressor);
    let r00 = jumps.r00::<f64>();
    let mut table = ResultTable { experiment: "experiment2".into(), config_hash: hash.clone(), fits: Vec::new(), rows: Vec::new(), warnings: Vec::new() };
    for &id in &cfg.models {
        let ctx = model_context(cfg, id, &mut table.warnings)?;
        let model = id.build::<f64>();
        let glse_lim = asym_cov_glse(&ctx.spectrum, &jumps)?.scalar();
        let lse_lim = asym_cov_lse(&ctx.spectrum, &jumps, &r00)?.scalar();
        for &n in &cfg.sizes {
            if n > cfg.dense_cap && !model.is_separable() {
                return Err(Error::SizeCap { n, cap: cfg.dense_cap });
            }
            let sim = Simulator::new(cfg, ctx.id, n, STREAM_EVAL)?;
            let norm_sq = sim.design.norms()[0].powi(2);
            let gls = GlsSolver::from_factor(&sim.design, &sim.factor)?;
            let x = sim.design.matrix();
            let lse_map = x.t().to_owned() / x.column(0).dot(&x.column(0));
            let (mut lse_est, mut glse_est) = (Vec::with_capacity(cfg.replicates), Vec::with_capacity(cfg.replicates));
            let run = run_pbe(cfg, &sim, &ctx.fixed, &mut |y| {
                lse_est.extend(lse_map.dot(&y).row(0).iter().copied());
                glse_est.extend(gls.estimate_batch(y).row(0).iter().copied());
                Ok(())
            })?;
            for (i, f) in ctx.fixed.iter().enumerate() {
                let mut row = base_row(cfg, "experiment2", &ctx, f, &sim, &hash);
                let idx: Vec<usize> = (0..cfg.replicates).filter(|&r| run.estimates[i][r].is_some()).collect();
                row.excluded = cfg.replicates - idx.len();
                let pick = |v: &[f64]| idx.iter().map(|&r| v[r]).collect::<Vec<f64>>();
                let pbe: Vec<f64> = idx.iter().map(|&r| run.estimates[i][r].unwrap()).collect();
                let (lse_k, glse_k) = (pick(&lse_est), pick(&glse_est));
                row.lse_variance = Some(scaled_variance(&lse_est, norm_sq));
                row.glse_variance = Some(scaled_variance(&glse_est, norm_sq));
                row.asymptotic_lse = Some(lse_lim);
                row.asymptotic_glse = Some(glse_lim);
                if idx.len() >= 2 {
                    row.pbe_variance = Some(scaled_variance(&pbe, norm_sq));
                    row.lse_ratio = Some(variance_ratio(&lse_k, &glse_k));
                    row.pbe_ratio = Some(variance_ratio(&pbe, &glse_k));
                    let g = effective_fit(cfg, f, &run.own_fits[i])?;
                    row.near_unit_root = g.near_unit_root();
                    let pbe_lim = asym_cov_pbe(&ctx.spectrum, &g, &jumps)?.scalar();
                    row.asymptotic_pbe = Some(pbe_lim);
                    row.theoretical_lse_ratio = Some(lse_lim / glse_lim);
                    row.theoretical_pbe_ratio = Some(pbe_lim / glse_lim);
                }
                table.rows.push(row);
            }
        }
        table.fits.extend(ctx.fixed);
    }
    Ok(table)
}

/// Median wall-clock seconds per call over `runs` timed runs; each run repeats `op` until
/// `min_seconds` has elapsed.
pub fn median_seconds(runs: usize, min_seconds: f64, mut op: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let mut calls = 0u32;
        loop {
            op()?;
            calls += 1;
            if start.elapsed().as_secs_f64() >= min_seconds {
                break;
            }
        }
        samples.push(start.elapsed().as_secs_f64() / calls as f64);
    }
    Ok(median(&mut samples))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub approximation: Approximation,
    pub n: usize,
    pub lse_seconds: f64,
    pub glse_seconds: f64,
    /// Moment fit of the approximation from LSE residuals.
    pub fit_seconds: f64,
    /// Preparing the whitened design and solving for one response.
    pub pbe_solve_seconds: f64,
    /// LSE, fit and PBE solve.
    pub pbe_total_seconds: f64,
    /// PBE solve time at the scaling size.
    pub pbe_solve_small_seconds: f64,
    pub pbe_growth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub model: ModelId,
    pub regressor: RegressorKind,
    pub n: usize,
    pub scaling_n: usize,
    pub runs: usize,
    pub config_hash: String,
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "approximation",
            "n",
            "lse_seconds",
            "glse_seconds",
            "fit_seconds",
            "pbe_solve_seconds",
            "pbe_total_seconds",
            "scaling_n",
            "pbe_solve_small_seconds",
            "pbe_growth",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.approximation.to_string(),
                r.n.to_string(),
                format_sig(r.lse_seconds),
                format_sig(r.glse_seconds),
                format_sig(r.fit_seconds),
                format_sig(r.pbe_solve_seconds),
                format_sig(r.pbe_total_seconds),
                self.scaling_n.to_string(),
                format_sig(r.pbe_solve_small_seconds),
                format_sig(r.pbe_growth),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 csv"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("report serializes"))?;
        Ok(())
    }
}

struct TimingInputs {
    design: LatticeDesign<f64>,
    y: Array1<f64>,
    residuals: Array1<f64>,
}

fn timing_inputs(cfg: &ExperimentConfig, model: &CovarianceModel<f64>, n: usize) -> Result<TimingInputs> {
    let t = &cfg.timing;
    let design = LatticeDesign::single(n, t.regressor)?;
    let factor = CovarianceFactor::new(model, n, cfg.dense_cap)?;
    let eps = sample_with_factor(&factor, stream_seed(cfg.base_seed, STREAM_TIMING, cfg.timing.model, n)).eps;
    drop(factor);
    let y = &design.column(0).mapv(|x| x * cfg.beta) + &eps;
    let b = lse(&design, y.view())?;
    let residuals = residuals(&design, y.view(), b.view())?;
    Ok(TimingInputs { design, y, residuals })
}

fn time_pbe_solve(cfg: &ExperimentConfig, inputs: &TimingInputs, fit: &SeparableArModel<f64>) -> Result<f64> {
    median_seconds(cfg.timing.runs, cfg.timing.min_run_seconds, || {
        let solver = PbeSolver::new(&inputs.design, fit)?;
        black_box(solver.estimate(inputs.y.view()));
        Ok(())
    })
}

/// Wall-clock comparison of LSE, dense GLSE and PBE at the timing size.
pub fn run_timing(cfg: &ExperimentConfig) -> Result<TimingReport> {
    cfg.validate()?;
    let t = &cfg.timing;
    let model = t.model.build::<f64>();
    let n = t.size;
    let big = timing_inputs(cfg, &model, n)?;
    let small = timing_inputs(cfg, &model, t.scaling_size)?;

    let lse_seconds = median_seconds(t.runs, t.min_run_seconds, || {
        black_box(lse(&big.design, big.y.view())?);
        Ok(())
    })?;
    let mut glse_samples = Vec::with_capacity(t.runs);
    for _ in 0..t.runs {
        let sigma = assemble_sigma(&model, n, cfg.dense_cap)?;
        let start = Instant::now();
        black_box(glse_owned(&big.design, big.y.view(), sigma)?);
        glse_samples.push(start.elapsed().as_secs_f64());
    }
    let glse_seconds = median(&mut glse_samples);

    let mut rows = Vec::with_capacity(cfg.approximations.len());
    for &approx in &cfg.approximations {
        let fit_seconds = median_seconds(t.runs, t.min_run_seconds, || {
            black_box(fit_separable(big.residuals.view(), n, approx)?);
            Ok(())
        })?;
        let fit = fit_separable(big.residuals.view(), n, approx)?;
        let pbe_solve_seconds = time_pbe_solve(cfg, &big, &fit)?;
        let small_fit = fit_separable(small.residuals.view(), t.scaling_size, approx)?;
        let pbe_solve_small_seconds = time_pbe_solve(cfg, &small, &small_fit)?;
        rows.push(TimingRow {
            approximation: approx,
            n,
            lse_seconds,
            glse_seconds,
            fit_seconds,
            pbe_solve_seconds,
            pbe_total_seconds: lse_seconds + fit_seconds + pbe_solve_seconds,
            pbe_solve_small_seconds,
            pbe_growth: pbe_solve_seconds / pbe_solve_small_seconds,
        });
    }
    Ok(TimingReport { model: t.model, regressor: t.regressor, n, scaling_n: t.scaling_size, runs: t.runs, config_hash: cfg.hash(), rows })
}

/// `(λ1, λ2, density)` on a `resolution × resolution` grid over `[0, π]²`, `λ1` outer.
pub fn spectral_surface(eval: &dyn SpectralDensity<f64>, resolution: usize) -> Result<Vec<[f64; 3]>> {
    if resolution < 2 {
        return Err(Error::ParameterDomain(format!("surface resolution must be >= 2, got {resolution}")));
    }
    let step = std::f64::consts::PI / (resolution - 1) as f64;
    let mut out = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let (l1, l2) = (i as f64 * step, j as f64 * step);
            out.push([l1, l2, eval.density(l1, l2)?]);
        }
    }
    Ok(out)
}

pub fn surface_csv(points: &[[f64; 3]]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lambda1", "lambda2", "density"]).map_err(csv_err)?;
    for p in points {
        w.write_record(p.iter().map(|&v| format_sig(v))).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

/// Evaluates the surface and writes it as CSV to `path`.
pub fn emit_spectral_surface(eval: &dyn SpectralDensity<f64>, resolution: usize, path: &Path) -> Result<Vec<[f64; 3]>> {
    let points = spectral_surface(eval, resolution)?;
    fs::write(path, surface_csv(&points)?)?;
    Ok(points)
}

/// Run record written next to every set of outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub package_version: String,
    pub command: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: String, base_seed: u64, outputs: Vec<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash,
            base_seed,
            outputs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self).expect("manifest serializes"))?;
        Ok(())
    }
}

/// Hash of an arbitrary serializable invocation, for commands without a config file.
pub fn hash_json<S: Serialize>(value: &S) -> String {
    hex(&Sha256::digest(serde_json::to_vec(value).expect("value serializes")))
}

/// Estimates of one simulated replicate, used by the single-estimate command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateTriple {
    pub lse: Vec<f64>,
    pub glse: Vec<f64>,
    pub pbe: Vec<f64>,
    pub fit: SeparableArModel<f64>,
    pub near_unit_root: bool,
}

/// Simulates one field and returns the three estimates, fitting the PBE approximation
/// from the LSE residuals of that field.
pub fn estimate_once(
    model: &CovarianceModel<f64>,
    regressor: RegressorKind,
    n: usize,
    beta: f64,
    approximation: Approximation,
    seed: u64,
    dense_cap: usize,
) -> Result<EstimateTriple> {
    let design = LatticeDesign::single(n, regressor)?;
    let factor = CovarianceFactor::new(model, n, dense_cap)?;
    let eps = sample_with_factor(&factor, seed).eps;
    let y = &design.column(0).mapv(|x| x * beta) + &eps;
    let b_lse = lse(&design, y.view())?;
    let r = residuals(&design, y.view(), b_lse.view())?;
    let fit = fit_separable(r.view(), n, approximation)?;
    let b_glse = GlsSolver::from_factor(&design, &factor)?.estimate(y.view());
    let solver = PbeSolver::new(&design, &fit)?;
    Ok(EstimateTriple {
        lse: b_lse.to_vec(),
        glse: b_glse.to_vec(),
        pbe: solver.estimate(y.view()).to_vec(),
        fit,
        near_unit_root: solver.near_unit_root(),
    })
}

/// Re-exported for callers assembling their own tables.
pub fn scaled_covariance_of(estimates: ArrayView2<f64>, design: &LatticeDesign<f64>) -> Result<Array2<f64>> {
    crate::estimators::scaled_empirical_covariance(estimates, design.norms().view())
}
