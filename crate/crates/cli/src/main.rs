use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lattice_pbe::asymptotics::{asym_cov_glse, asym_cov_lse, asym_cov_pbe, lse_efficient_for_all_spectra};
use lattice_pbe::covariance::{Ar1Params, AliasedSpectrum, CovarianceModel, Kernel1d, ModelId, SpectralDensity};
use lattice_pbe::design::{jump_measure, RegressorKind};
use lattice_pbe::estimators::{ArAxis, SeparableArModel};
use lattice_pbe::experiments::{
    emit_spectral_surface, estimate_once, fit_phase, format_sig, hash_json, run_experiment1, run_experiment2,
    run_timing, ExperimentConfig, FixedFit, Manifest,
};
use lattice_pbe::fit::{fit_population, Approximation};
use lattice_pbe::sampler::DEFAULT_DENSE_CAP;
use lattice_pbe::{Error, ErrorCategory, Result};

/// Regression on a square lattice with LSE, GLSE and the separable-AR pseudo-best estimator.
///
/// Every command writes its outputs and a manifest.json into the output directory.
/// Failures exit with 2 (configuration), 3 (numerical) or 4 (I/O) and print a JSON
/// error object on stderr.
#[derive(Debug, Parser, Serialize)]
#[command(name = "lattice-pbe", version)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "LATTICE_PBE_OUT", default_value = "lattice-pbe-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
enum Command {
    /// Simulate one field and write the LSE, GLSE and PBE estimates.
    Estimate(EstimateArgs),
    /// Average the separable AR fits of the configured models.
    Fit(ConfigArgs),
    /// Limiting scaled variances and ratios from population fits.
    Asymptotics(AsymptoticsArgs),
    /// Monte Carlo convergence of the scaled PBE variance.
    Experiment1(ConfigArgs),
    /// Monte Carlo efficiency ratios against the GLSE.
    Experiment2(ConfigArgs),
    /// Wall-clock comparison of the estimators.
    Timing(ConfigArgs),
    /// Spectral density on a grid over [0, π]².
    Surface(SurfaceArgs),
}

#[derive(Debug, Args, Serialize)]
struct ConfigArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set replicates=200 or --set timing.size=60.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Base seed, replacing the configured one.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("base_seed={seed}"));
        }
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Args, Serialize)]
struct EstimateArgs {
    /// True covariance model.
    #[arg(long, default_value = "ar1xar1")]
    model: ModelId,
    /// AR(1) coefficient of the first axis (ar1xar1 only).
    #[arg(long)]
    phi1: Option<f64>,
    /// AR(1) coefficient of the second axis (ar1xar1 only).
    #[arg(long)]
    phi2: Option<f64>,
    /// Lattice side.
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value = "poly")]
    regressor: RegressorKind,
    /// Separable approximation used by the PBE.
    #[arg(long, default_value = "ar1xar1")]
    approx: Approximation,
    /// True regression coefficient.
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Largest side for which a dense covariance may be assembled.
    #[arg(long, default_value_t = DEFAULT_DENSE_CAP)]
    dense_cap: usize,
}

#[derive(Debug, Args, Serialize)]
struct AsymptoticsArgs {
    #[arg(long, default_value = "polyharmonic")]
    regressor: RegressorKind,
    /// Restrict to these models (repeatable); all models by default.
    #[arg(long = "model")]
    models: Vec<ModelId>,
    /// Approximations for the PBE limit (repeatable); ar1xar1, ar1xar2 and ar2xar2 by default.
    #[arg(long = "approx")]
    approximations: Vec<Approximation>,
}

#[derive(Debug, Args, Serialize)]
struct SurfaceArgs {
    /// Aliased spectral density of a true covariance model.
    #[arg(long, conflicts_with = "approx", required_unless_present = "approx")]
    model: Option<ModelId>,
    /// Spectral density of a separable AR model; needs --params.
    #[arg(long, requires = "params")]
    approx: Option<Approximation>,
    /// Comma-separated AR coefficients of axis 1 then axis 2, then optionally σ12².
    /// AR(1) takes φ and AR(2) takes a,b for x_t = a x_{t-1} + b x_{t-2} + e_t.
    #[arg(long, allow_hyphen_values = true)]
    params: Option<String>,
    /// Grid points per axis.
    #[arg(long, default_value_t = 64)]
    res: usize,
}

fn ar1_model(phi1: f64, phi2: f64) -> Result<CovarianceModel<f64>> {
    Ok(CovarianceModel::Product(
        Kernel1d::Ar1(Ar1Params::normalized(phi1)?),
        Kernel1d::Ar1(Ar1Params::normalized(phi2)?),
    ))
}

fn write_manifest(out: &Path, command: &str, hash: String, seed: u64, outputs: &[&str]) -> Result<()> {
    Manifest::new(command, hash, seed, outputs.iter().map(|s| s.to_string()).collect()).write(out)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value).expect("serializable output"))?;
    Ok(())
}

fn estimate(cli: &Cli, a: &EstimateArgs) -> Result<()> {
    let model = match (a.phi1, a.phi2) {
        (None, None) => a.model.build(),
        (p1, p2) if a.model == ModelId::Ar1Ar1 => ar1_model(p1.unwrap_or(0.9), p2.unwrap_or(0.9))?,
        _ => return Err(Error::Config("--phi1/--phi2 only apply to --model ar1xar1".into())),
    };
    let triple = estimate_once(&model, a.regressor, a.n, a.beta, a.approx, a.seed, a.dense_cap)?;
    write_json(&cli.out.join("estimate.json"), &triple)?;
    write_manifest(&cli.out, "estimate", hash_json(cli), a.seed, &["estimate.json"])
}

fn axis_cells(axis: &ArAxis<f64>) -> [String; 2] {
    let c = axis.coeffs();
    [format_sig(c[0]), c.get(1).map(|&v| format_sig(v)).unwrap_or_default()]
}

fn fits_csv(fits: &[FixedFit]) -> String {
    let mut out = String::from("model,approximation,axis1_c1,axis1_c2,axis2_c1,axis2_c2,sigma12,attempted,excluded\n");
    for f in fits {
        let [a1, a2] = axis_cells(&f.fit.axis1);
        let [b1, b2] = axis_cells(&f.fit.axis2);
        out.push_str(&format!(
            "{},{},{a1},{a2},{b1},{b2},{},{},{}\n",
            f.model,
            f.approximation,
            format_sig(f.fit.sigma12),
            f.attempted,
            f.excluded
        ));
    }
    out
}

fn fit(cli: &Cli, a: &ConfigArgs) -> Result<()> {
    let cfg = a.load()?;
    let mut fits = Vec::new();
    for &id in &cfg.models {
        fits.extend(fit_phase(&cfg, id)?);
    }
    write_json(&cli.out.join("fits.json"), &fits)?;
    fs::write(cli.out.join("fits.csv"), fits_csv(&fits))?;
    write_manifest(&cli.out, "fit", cfg.hash(), cfg.base_seed, &["fits.json", "fits.csv"])
}

#[derive(Serialize)]
struct AsymptoticRow {
    model: ModelId,
    regressor: RegressorKind,
    approximation: Approximation,
    glse: f64,
    lse: f64,
    pbe: f64,
    lse_ratio: f64,
    pbe_ratio: f64,
    fit: SeparableArModel<f64>,
}

fn asymptotics(cli: &Cli, a: &AsymptoticsArgs) -> Result<()> {
    let models = if a.models.is_empty() { ModelId::ALL.to_vec() } else { a.models.clone() };
    let approximations =
        if a.approximations.is_empty() { Approximation::STANDARD.to_vec() } else { a.approximations.clone() };
    let jumps = jump_measure(a.regressor);
    let r00 = jumps.r00::<f64>();
    let mut rows = Vec::new();
    for id in models {
        let model = id.build::<f64>();
        let f = AliasedSpectrum::new(&model)?;
        let glse = asym_cov_glse(&f, &jumps)?.scalar();
        let lse = asym_cov_lse(&f, &jumps, &r00)?.scalar();
        for &approximation in &approximations {
            let g = match fit_population(&model, approximation) {
                Err(Error::OrderDegeneracy) => {
                    eprintln!("note: {id} {approximation}: population fit degenerates to a lower order; skipped");
                    continue;
                }
                other => other?,
            };
            let pbe = asym_cov_pbe(&f, &g, &jumps)?.scalar();
            rows.push(AsymptoticRow {
                model: id,
                regressor: a.regressor,
                approximation,
                glse,
                lse,
                pbe,
                lse_ratio: lse / glse,
                pbe_ratio: pbe / glse,
                fit: g,
            });
        }
    }
    let mut csv = String::from("model,regressor,approximation,glse,lse,pbe,lse_ratio,pbe_ratio,lse_efficient\n");
    let efficient = lse_efficient_for_all_spectra(&jumps);
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{efficient}\n",
            r.model,
            r.regressor,
            r.approximation,
            format_sig(r.glse),
            format_sig(r.lse),
            format_sig(r.pbe),
            format_sig(r.lse_ratio),
            format_sig(r.pbe_ratio)
        ));
    }
    fs::write(cli.out.join("asymptotics.csv"), csv)?;
    write_json(&cli.out.join("asymptotics.json"), &rows)?;
    write_manifest(&cli.out, "asymptotics", hash_json(cli), 0, &["asymptotics.csv", "asymptotics.json"])
}

fn experiment(cli: &Cli, a: &ConfigArgs, name: &str) -> Result<()> {
    let cfg = a.load()?;
    let table = if name == "experiment1" { run_experiment1(&cfg)? } else { run_experiment2(&cfg)? };
    let (csv, json) = (format!("{name}.csv"), format!("{name}.json"));
    table.write_csv(&cli.out.join(&csv))?;
    table.write_json(&cli.out.join(&json))?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    write_manifest(&cli.out, name, cfg.hash(), cfg.base_seed, &[&csv, &json])
}

fn timing(cli: &Cli, a: &ConfigArgs) -> Result<()> {
    let cfg = a.load()?;
    let report = run_timing(&cfg)?;
    report.write_csv(&cli.out.join("timing.csv"))?;
    report.write_json(&cli.out.join("timing.json"))?;
    write_manifest(&cli.out, "timing", cfg.hash(), cfg.base_seed, &["timing.csv", "timing.json"])
}

fn parse_params(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("'{s}' in --params is not a number"))))
        .collect()
}

fn separable_from_params(approx: Approximation, params: &[f64]) -> Result<SeparableArModel<f64>> {
    let (p1, p2) = approx.orders();
    if params.len() != p1 + p2 && params.len() != p1 + p2 + 1 {
        return Err(Error::Config(format!("{approx} takes {} or {} parameters, got {}", p1 + p2, p1 + p2 + 1, params.len())));
    }
    let axis = |p: usize, c: &[f64]| if p == 1 { ArAxis::Ar1 { phi: c[0] } } else { ArAxis::Ar2 { a: c[0], b: c[1] } };
    let sigma12 = params.get(p1 + p2).copied().unwrap_or(1.0);
    SeparableArModel::new(axis(p1, &params[..p1]), axis(p2, &params[p1..p1 + p2]), sigma12)
}

fn surface(cli: &Cli, a: &SurfaceArgs) -> Result<()> {
    let eval: Box<dyn SpectralDensity<f64>> = match (a.model, a.approx) {
        (Some(id), _) => Box::new(AliasedSpectrum::new(&id.build())?),
        (None, Some(approx)) => {
            let params = parse_params(a.params.as_deref().unwrap_or_default())?;
            Box::new(separable_from_params(approx, &params)?)
        }
        (None, None) => return Err(Error::Config("surface needs --model or --approx".into())),
    };
    emit_spectral_surface(eval.as_ref(), a.res, &cli.out.join("surface.csv"))?;
    write_manifest(&cli.out, "surface", hash_json(cli), 0, &["surface.csv"])
}

fn run(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Estimate(a) => estimate(cli, a),
        Command::Fit(a) => fit(cli, a),
        Command::Asymptotics(a) => asymptotics(cli, a),
        Command::Experiment1(a) => experiment(cli, a, "experiment1"),
        Command::Experiment2(a) => experiment(cli, a, "experiment2"),
        Command::Timing(a) => timing(cli, a),
        Command::Surface(a) => surface(cli, a),
    }
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Numerical => 3,
        ErrorCategory::Io => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            let body = serde_json::json!({ "category": category.as_str(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(exit_code(category))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_map_onto_axes() {
        let g = separable_from_params(Approximation::AR1XAR2, &parse_params("0.3, 0.5,-0.2").unwrap()).unwrap();
        assert_eq!(g.axis1, ArAxis::Ar1 { phi: 0.3 });
        assert_eq!(g.axis2, ArAxis::Ar2 { a: 0.5, b: -0.2 });
        assert_eq!(g.sigma12, 1.0);
        let g = separable_from_params(Approximation::AR1XAR1, &[0.1, 0.2, 4.0]).unwrap();
        assert_eq!(g.sigma12, 4.0);
        assert!(separable_from_params(Approximation::AR2XAR2, &[0.1, 0.2]).is_err());
        assert!(parse_params("0.1,x").is_err());
    }

    #[test]
    fn exit_codes_by_category() {
        assert_eq!(exit_code(ErrorCategory::Config), 2);
        assert_eq!(exit_code(ErrorCategory::Numerical), 3);
        assert_eq!(exit_code(ErrorCategory::Io), 4);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
