use std::path::{Path, PathBuf};

use gomix_core::diagnostics::{diagnose, diagnose_view, DiagnosticsReport};
use gomix_core::extended::{run_extended_chain, ExtendedConfig};
use gomix_core::generate::{generate_dataset, GenerationTruth, Preset, PRESET_VERSION};
use gomix_core::io::{self, DataFormat, ModelFile};
use gomix_core::mcmc::{posterior_summary, run_chain, ChainConfig, ChainOutput, InitPolicy};
use gomix_core::oracle::{check_representation, RepresentationCheckConfig};
use gomix_core::selection::{criteria_sweep, Direction, Method, ParamCount, SweepConfig, DEFAULT_LEVELS};
use gomix_core::vem::{fit_vem, VemConfig, VemFit, VemInit};
use gomix_core::{Dataset, GomError};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Settings shared by every subcommand after config merging.
pub struct Context {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

impl Context {
    fn seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Usage("--seed is required for this subcommand".into()))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn load_data(path: &Option<PathBuf>, format: &Option<String>) -> Result<Dataset, CliError> {
    let path = required(path, "data")?;
    let format = DataFormat::parse(format.as_deref().unwrap_or("auto"))?;
    io::read_dataset(&path, format).map_err(|e| match e {
        GomError::Data { line, message } => CliError::Core(GomError::Data {
            line,
            message: format!("{}: {message}", path.display()),
        }),
        e => CliError::Core(e),
    })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, clap::Args)]
#[serde(default, rename_all = "kebab-case")]
pub struct GenerateArgs {
    /// scenario1 (J=16, K=3) or scenario2 (J=10, K=7).
    #[arg(long)]
    pub preset: Option<String>,
    /// Number of individuals; the preset size when absent.
    #[arg(long)]
    pub n: Option<usize>,
    /// Probability that an individual is a deterministic all-zero stayer.
    #[arg(long)]
    pub stayer_weight: Option<f64>,
}

#[derive(Serialize)]
struct TruthFile<'a> {
    preset: &'a str,
    preset_version: u32,
    seed: u64,
    n: usize,
    stayer_weight: Option<f64>,
    #[serde(flatten)]
    truth: &'a GenerationTruth,
}

pub fn generate(ctx: &Context, args: &GenerateArgs) -> Result<(), CliError> {
    let seed = ctx.seed()?;
    let preset = Preset::parse(args.preset.as_deref().unwrap_or("scenario1"))?;
    let n = args.n.unwrap_or(preset.n());
    let params = preset.params();
    let (data, truth) = generate_dataset(&params, n, seed, args.stayer_weight)?;
    io::write_rows(&ctx.out("data.csv"), &data)?;
    io::write_patterns(&ctx.out("patterns.csv"), &data)?;
    let mut model = ModelFile::from_params(&params);
    model.theta1 = args.stayer_weight;
    io::write_json(&ctx.out("model.json"), &model)?;
    let file = TruthFile { preset: preset.name(), preset_version: PRESET_VERSION, seed, n, stayer_weight: args.stayer_weight, truth: &truth };
    io::write_json(&ctx.out("truth.json"), &file)?;
    println!("generated {n} individuals over {} items from {} into {}", params.j(), preset.name(), ctx.out_dir.display());
    Ok(())
}

/// Sampler and EM settings shared by `fit` and `select`.
#[derive(Clone, Debug, Default, Serialize, Deserialize, clap::Args)]
#[serde(default, rename_all = "kebab-case")]
pub struct EstimationArgs {
    /// Post-burn-in MCMC sweeps.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Shape of the Gamma proposal for alpha0.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Concentration multiplier of the Dirichlet proposal for xi.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Gamma prior shape for alpha0.
    #[arg(long)]
    pub prior_tau: Option<f64>,
    /// Gamma prior rate for alpha0.
    #[arg(long)]
    pub prior_beta: Option<f64>,
    /// Starting alpha0 for MCMC; the prior mean when absent.
    #[arg(long)]
    pub alpha0_init: Option<f64>,
    /// latent-class or random.
    #[arg(long)]
    pub init: Option<String>,
    /// EM restarts of the latent class initializer.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Starting stayer weight for mcmc-extended.
    #[arg(long)]
    pub theta1_init: Option<f64>,
    /// Outer VEM iterations.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// VEM stops when the bound improves by less than this.
    #[arg(long)]
    pub tol: Option<f64>,
}

impl EstimationArgs {
    fn chain(&self, k: usize, seed: u64, init_model: Option<&ModelFile>) -> Result<ChainConfig, CliError> {
        let d = ChainConfig::default();
        let init = match (init_model, self.init.as_deref()) {
            (Some(m), _) => InitPolicy::User(m.params()?),
            (None, None | Some("latent-class")) => InitPolicy::LatentClass { restarts: self.restarts.unwrap_or(10) },
            (None, Some("random")) => InitPolicy::Random,
            (None, Some(other)) => return Err(CliError::Usage(format!("unknown --init `{other}` (latent-class, random)"))),
        };
        Ok(ChainConfig {
            k,
            iterations: self.iterations.unwrap_or(d.iterations),
            burn_in: self.burn_in.unwrap_or(d.burn_in),
            thin: self.thin.unwrap_or(d.thin),
            omega: self.omega.unwrap_or(d.omega),
            eta: self.eta.unwrap_or(d.eta),
            prior_tau: self.prior_tau.unwrap_or(d.prior_tau),
            prior_beta: self.prior_beta.unwrap_or(d.prior_beta),
            seed,
            init,
            alpha0_init: self.alpha0_init,
            ..d
        })
    }

    fn vem(&self, k: usize, seed: u64, init_model: Option<&ModelFile>) -> Result<VemConfig, CliError> {
        let d = VemConfig::default();
        let init = match (init_model, self.init.as_deref()) {
            (Some(m), _) => {
                let p = m.params()?;
                VemInit::User { lambda: p.lambda().to_vec(), alpha: p.alpha() }
            }
            (None, None | Some("latent-class")) => VemInit::LatentClass { restarts: self.restarts.unwrap_or(10) },
            (None, Some("random")) => VemInit::Random,
            (None, Some(other)) => return Err(CliError::Usage(format!("unknown --init `{other}` (latent-class, random)"))),
        };
        Ok(VemConfig { k, max_iter: self.max_iter.unwrap_or(d.max_iter), tol: self.tol.unwrap_or(d.tol), init, seed, ..d })
    }

    fn extended(&self) -> ExtendedConfig {
        ExtendedConfig { theta1_init: self.theta1_init, ..ExtendedConfig::default() }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, clap::Args)]
#[serde(default, rename_all = "kebab-case")]
pub struct FitArgs {
    /// Row-level CSV or pattern-count file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// auto, rows or patterns.
    #[arg(long)]
    pub format: Option<String>,
    /// mcmc, vem or mcmc-extended.
    #[arg(long)]
    pub method: Option<String>,
    /// Number of extreme profiles.
    #[arg(long)]
    pub k: Option<usize>,
    /// Model JSON whose parameters start the fit.
    #[arg(long)]
    pub init_model: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimation: EstimationArgs,
}

pub fn fit(ctx: &Context, args: &FitArgs) -> Result<(), CliError> {
    let seed = ctx.seed()?;
    let k = required(&args.k, "k")?;
    if k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let method = Method::parse(args.method.as_deref().unwrap_or("mcmc"))?;
    let data = load_data(&args.data, &args.format)?;
    let init_model = args.init_model.as_deref().map(io::read_json::<ModelFile>).transpose()?;
    let labels = data.item_labels().map(<[String]>::to_vec);
    match method {
        Method::Vem => {
            let fit = fit_vem(&data, &args.estimation.vem(k, seed, init_model.as_ref())?)?;
            write_vem(ctx, &fit, &data, labels)?;
            println!(
                "vem K={k}: lower bound {} after {} iterations, converged: {}",
                io::fmt_f64(fit.lower_bound()),
                fit.iterations,
                fit.converged
            );
            if !fit.converged {
                return Err(CliError::Core(GomError::Numerical(format!(
                    "variational EM did not converge within {} iterations",
                    fit.iterations
                ))));
            }
        }
        Method::Mcmc | Method::McmcExtended => {
            let cfg = args.estimation.chain(k, seed, init_model.as_ref())?;
            let chain = if method == Method::Mcmc {
                run_chain(&data, &cfg)?
            } else {
                run_extended_chain(&data, &cfg, &args.estimation.extended())?
            };
            let report = write_chain(ctx, &chain, method, labels)?;
            println!(
                "{method} K={k}: {} draws, acceptance alpha0 {:.3} xi {:.3}, {} warnings",
                chain.draws(),
                chain.acceptance_alpha0,
                chain.acceptance_xi,
                report.warnings.len()
            );
        }
    }
    Ok(())
}

fn write_vem(ctx: &Context, fit: &VemFit, data: &Dataset, labels: Option<Vec<String>>) -> Result<(), CliError> {
    let mut model = ModelFile::from_vem(fit);
    model.item_labels = labels;
    io::write_json(&ctx.out("model.json"), &model)?;
    let mut bound = String::from("iteration,lower_bound\n");
    for (i, b) in fit.bound_trace.iter().enumerate() {
        bound.push_str(&format!("{},{}\n", i + 1, io::fmt_f64(*b)));
    }
    std::fs::write(ctx.out("bound.csv"), bound)?;
    let k = fit.state.k();
    let mut g = String::from("individual");
    for kk in 0..k {
        g.push_str(&format!(",g_{kk}"));
    }
    g.push('\n');
    for i in 0..data.n() {
        g.push_str(&i.to_string());
        for v in fit.state.membership_mean(i) {
            g.push(',');
            g.push_str(&io::fmt_f64(v));
        }
        g.push('\n');
    }
    std::fs::write(ctx.out("g_mean.csv"), g)?;
    Ok(())
}

fn write_chain(ctx: &Context, chain: &ChainOutput, method: Method, labels: Option<Vec<String>>) -> Result<DiagnosticsReport, CliError> {
    let mut model = ModelFile::from_summary(&posterior_summary(chain)?, method.name())?;
    model.item_labels = labels;
    io::write_json(&ctx.out("model.json"), &model)?;
    io::write_traces(&ctx.out_dir, chain)?;
    io::write_json(&ctx.out("events.json"), &chain.events)?;
    let report = diagnose(chain)?;
    write_diagnostics(ctx, &report)?;
    Ok(report)
}

fn write_diagnostics(ctx: &Context, report: &DiagnosticsReport) -> Result<(), CliError> {
    io::write_json(&ctx.out("diagnostics.json"), report)?;
    io::write_diagnostics_csv(&ctx.out("diagnostics.csv"), report)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, clap::Args)]
#[serde(default, rename_all = "kebab-case")]
pub struct SelectArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    /// Comma-separated numbers of profiles to fit.
    #[arg(long, value_delimiter = ',')]
    pub k_values: Option<Vec<usize>>,
    /// Comma-separated methods: mcmc, vem, mcmc-extended.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Comma-separated truncation levels for the chi-square statistic.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<u64>>,
    /// Dirichlet draws behind each VEM expected count.
    #[arg(long)]
    pub vem_expected_draws: Option<usize>,
    /// lambda-and-alpha (KJ+K) or lambda-and-xi (KJ+K-1).
    #[arg(long)]
    pub bic_params: Option<String>,
    /// smaller or larger.
    #[arg(long)]
    pub bic_direction: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimation: EstimationArgs,
}

pub fn select(ctx: &Context, args: &SelectArgs) -> Result<(), CliError> {
    let seed = ctx.seed()?;
    let k_values = args.k_values.clone().unwrap_or_else(|| vec![2, 3, 4, 5]);
    if k_values.contains(&0) {
        return Err(CliError::Usage("K values must be at least 1".into()));
    }
    let methods = match &args.methods {
        Some(m) => m.iter().map(|s| Method::parse(s)).collect::<Result<Vec<_>, _>>()?,
        None => vec![Method::Mcmc, Method::Vem],
    };
    let bic_params = match args.bic_params.as_deref() {
        None | Some("lambda-and-alpha") => ParamCount::LambdaAndAlpha,
        Some("lambda-and-xi") => ParamCount::LambdaAndXi,
        Some(o) => return Err(CliError::Usage(format!("unknown --bic-params `{o}`"))),
    };
    let bic_direction = match args.bic_direction.as_deref() {
        None | Some("smaller") => Direction::Smaller,
        Some("larger") => Direction::Larger,
        Some(o) => return Err(CliError::Usage(format!("unknown --bic-direction `{o}`"))),
    };
    let data = load_data(&args.data, &args.format)?;
    let d = SweepConfig::default();
    let cfg = SweepConfig {
        k_values,
        methods,
        chain: args.estimation.chain(d.chain.k, seed, None)?,
        vem: args.estimation.vem(d.vem.k, seed, None)?,
        extended: args.estimation.extended(),
        levels: args.levels.clone().unwrap_or_else(|| DEFAULT_LEVELS.to_vec()),
        vem_expected_draws: args.vem_expected_draws.unwrap_or(d.vem_expected_draws),
        bic_params,
        bic_direction,
        seed,
    };
    let report = criteria_sweep(&data, &cfg)?;
    io::write_json(&ctx.out("criteria.json"), &report)?;
    io::write_criteria_csv(&ctx.out("criteria.csv"), &report)?;
    for &level in &report.levels {
        io::write_expected_csv(&ctx.out(&format!("expected_ge_{level}.csv")), &report, level)?;
    }
    for s in &report.selections {
        println!("{} ({}): K={}", s.criterion, s.method, s.k);
    }
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, clap::Args)]
#[serde(default, rename_all = "kebab-case")]
pub struct DiagnoseArgs {
    /// Directory holding lambda.csv and hyper.csv; the output directory when absent.
    #[arg(long)]
    pub traces: Option<PathBuf>,
}

pub fn diagnose_traces(ctx: &Context, args: &DiagnoseArgs) -> Result<(), CliError> {
    let dir: &Path = args.traces.as_deref().unwrap_or(&ctx.out_dir);
    let traces = io::read_traces(dir)?;
    let report = diagnose_view(&traces.view())?;
    write_diagnostics(ctx, &report)?;
    let failed = report.parameters.iter().filter(|p| p.status == gomix_core::diagnostics::Status::Fail).count();
    println!(
        "{} draws, {} parameters, {failed} failing Geweke, {} warnings",
        report.draws,
        report.parameters.len(),
        report.warnings.len()
    );
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, clap::Args)]
#[serde(default, rename_all = "kebab-case")]
pub struct CheckArgs {
    /// Number of items J.
    #[arg(long)]
    pub items: Option<usize>,
    /// Number of profiles K.
    #[arg(long)]
    pub profiles: Option<usize>,
    /// Random models to check.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Monte Carlo draws per model.
    #[arg(long)]
    pub mc_draws: Option<usize>,
    /// Allowed per-pattern gap between the exact expansion and quadrature.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Allowed Monte Carlo gap in standard errors.
    #[arg(long)]
    pub mc_se: Option<f64>,
}

pub fn check(ctx: &Context, args: &CheckArgs) -> Result<(), CliError> {
    let d = RepresentationCheckConfig::default();
    let cfg = RepresentationCheckConfig {
        n_items: args.items.unwrap_or(d.n_items),
        n_profiles: args.profiles.unwrap_or(d.n_profiles),
        trials: args.trials.unwrap_or(d.trials),
        seed: ctx.seed()?,
        mc_draws: args.mc_draws.unwrap_or(d.mc_draws),
        quadrature_tol: args.tolerance.unwrap_or(d.quadrature_tol),
        mc_se_multiple: args.mc_se.unwrap_or(d.mc_se_multiple),
        ..d
    };
    let report = check_representation(&cfg)?;
    io::write_json(&ctx.out("representation.json"), &report)?;
    println!(
        "{} trials, {} patterns: max quadrature error {}, max MC |z| {:.3}, {} failures",
        report.trials,
        report.patterns_checked,
        io::fmt_f64(report.max_quadrature_error),
        report.max_mc_z,
        report.quadrature_failures + report.mc_failures + report.normalization_failures
    );
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Check(format!("{} representation checks failed", report.failures.len())))
    }
}
