//! Expected cell counts and the criteria used to choose the number of profiles.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics;
use crate::error::{GomError, Result};
use crate::extended::{self, ExtendedConfig};
use crate::mcmc::{self, posterior_summary, ChainConfig, ChainOutput, TraceView};
use crate::model::{Dataset, GomParams, ResponsePattern};
use crate::prob::{pattern_log_prob_raw, pattern_prob_raw};
use crate::rng::{self, tag};
use crate::special::log_add_exp;
use crate::vem::{self, VemConfig};

/// Default number of Dirichlet draws behind a VEM expected count.
pub const VEM_EXPECTED_DRAWS: usize = 5000;
/// Truncation levels reported by default.
pub const DEFAULT_LEVELS: [u64; 3] = [100, 25, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mcmc,
    Vem,
    McmcExtended,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mcmc => "mcmc",
            Method::Vem => "vem",
            Method::McmcExtended => "mcmc-extended",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "mcmc" => Ok(Method::Mcmc),
            "vem" => Ok(Method::Vem),
            "mcmc-extended" => Ok(Method::McmcExtended),
            _ => Err(GomError::InvalidParameter(format!("unknown method `{s}` (expected mcmc, vem or mcmc-extended)"))),
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Expected count with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCount {
    pub value: f64,
    pub se: f64,
}

/// Per-draw probabilities of `patterns`; one Dirichlet `g` draw per parameter draw, shared by all patterns.
fn draw_probabilities<F>(draws: usize, patterns: &[ResponsePattern], seed: u64, draw: F) -> Vec<Vec<f64>>
where
    F: Fn(usize) -> (Vec<f64>, Vec<f64>, Option<f64>) + Sync,
{
    (0..draws)
        .into_par_iter()
        .map(|s| {
            let (lambda, alpha, theta1) = draw(s);
            let j = lambda.len() / alpha.len();
            let mut r = rng::stream(seed, tag::EXPECTED, s as u64, 0);
            let g = rng::dirichlet_vec(&alpha, &mut r);
            patterns
                .iter()
                .map(|p| {
                    let gom = pattern_prob_raw(&lambda, j, &g, p.bits());
                    match theta1 {
                        Some(t1) => t1 * p.is_all_zero() as u8 as f64 + (1.0 - t1) * gom,
                        None => gom,
                    }
                })
                .collect()
        })
        .collect()
}

fn summarize(per_draw: &[Vec<f64>], n_patterns: usize, n: f64) -> Vec<ExpectedCount> {
    let s = per_draw.len() as f64;
    (0..n_patterns)
        .map(|p| {
            let mean = per_draw.iter().map(|d| d[p]).sum::<f64>() / s;
            let se = if per_draw.len() > 1 {
                let var = per_draw.iter().map(|d| (d[p] - mean).powi(2)).sum::<f64>() / (s - 1.0);
                (var / s).sqrt()
            } else {
                0.0
            };
            ExpectedCount { value: n * mean, se: n * se }
        })
        .collect()
}

/// `N` times the average over kept draws of `f(pattern | g_s, lambda_s)`, `g_s ~ Dirichlet(alpha_s)`.
///
/// For extended chains non-zero patterns use `theta2 f`, and the all-zero cell
/// uses `theta1 + n2 / N`: stayers plus the sampled all-zero movers, which
/// reproduces the observed all-zero count at every draw.
pub fn expected_counts_mcmc(chain: &ChainOutput, patterns: &[ResponsePattern], n: f64, seed: u64) -> Result<Vec<ExpectedCount>> {
    expected_counts_view(&chain.view(), chain.n_individuals as f64, patterns, n, seed)
}

/// [`expected_counts_mcmc`] over borrowed traces; `n_individuals` divides the all-zero movers.
pub fn expected_counts_view(
    view: &TraceView<'_>,
    n_individuals: f64,
    patterns: &[ResponsePattern],
    n: f64,
    seed: u64,
) -> Result<Vec<ExpectedCount>> {
    if view.draws() == 0 {
        return Err(GomError::InsufficientDraws { needed: 1, have: 0 });
    }
    check_pattern_lengths(patterns, view.n_items)?;
    let mut per_draw = draw_probabilities(view.draws(), patterns, seed, |s| {
        let alpha = view.xi[s].iter().map(|x| x * view.alpha0[s]).collect();
        (view.lambda[s].clone(), alpha, view.theta1.map(|t| t[s]))
    });
    if let (Some(t1), Some(n2)) = (view.theta1, view.n2) {
        if let Some(zero) = patterns.iter().position(ResponsePattern::is_all_zero) {
            for (s, d) in per_draw.iter_mut().enumerate() {
                d[zero] = t1[s] + n2[s] as f64 / n_individuals;
            }
        }
    }
    Ok(summarize(&per_draw, patterns.len(), n))
}

/// Expected counts at fixed parameters from `draws` Dirichlet draws.
pub fn expected_counts_params(
    params: &GomParams,
    theta1: Option<f64>,
    patterns: &[ResponsePattern],
    n: f64,
    draws: usize,
    seed: u64,
) -> Result<Vec<ExpectedCount>> {
    if draws == 0 {
        return Err(GomError::InsufficientDraws { needed: 1, have: 0 });
    }
    check_pattern_lengths(patterns, params.j())?;
    let lambda = params.lambda_flat();
    let alpha = params.alpha();
    let per_draw = draw_probabilities(draws, patterns, seed, |_| (lambda.clone(), alpha.clone(), theta1));
    Ok(summarize(&per_draw, patterns.len(), n))
}

/// Expected counts of a variational fit.
pub fn expected_counts_vem(params: &GomParams, patterns: &[ResponsePattern], n: f64, draws: usize, seed: u64) -> Result<Vec<ExpectedCount>> {
    expected_counts_params(params, None, patterns, n, draws, seed)
}

fn check_pattern_lengths(patterns: &[ResponsePattern], j: usize) -> Result<()> {
    match patterns.iter().find(|p| p.len() != j) {
        Some(p) => Err(GomError::LengthMismatch { what: "pattern", expected: j, got: p.len() }),
        None => Ok(()),
    }
}

/// Patterns whose observed count reaches `level`, in table order.
pub fn included_patterns(data: &Dataset, level: u64, exclude_all_zero: bool) -> Vec<ResponsePattern> {
    data.table()
        .iter()
        .filter(|(p, &c)| c >= level && !(exclude_all_zero && p.is_all_zero()))
        .map(|(p, _)| p.clone())
        .collect()
}

/// `sum (obs - exp)^2 / exp` over `(observed, expected)` cells.
pub fn pearson_sum(cells: &[(f64, f64)]) -> Result<f64> {
    cells.iter().try_fold(0.0, |acc, &(o, e)| {
        if e > 0.0 && e.is_finite() {
            Ok(acc + (o - e) * (o - e) / e)
        } else {
            Err(GomError::Numerical(format!("expected count {e} must be positive")))
        }
    })
}

/// Truncated sum of squared Pearson residuals over patterns observed at least `level` times.
pub fn chi2_truncated(observed: &Dataset, expected: &BTreeMap<ResponsePattern, f64>, level: u64, exclude_all_zero: bool) -> Result<f64> {
    let cells = included_patterns(observed, level, exclude_all_zero)
        .into_iter()
        .map(|p| {
            let e = *expected
                .get(&p)
                .ok_or_else(|| GomError::InvalidParameter(format!("no expected count for pattern {p}")))?;
            Ok((observed.count(&p) as f64, e))
        })
        .collect::<Result<Vec<_>>>()?;
    pearson_sum(&cells)
}

/// How the BIC approximation counts free parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamCount {
    /// `K J + K`: every lambda entry and every alpha entry.
    #[default]
    LambdaAndAlpha,
    /// `K J + K - 1`: lambda plus the simplex `xi`.
    LambdaAndXi,
}

impl ParamCount {
    pub fn count(self, k: usize, j: usize) -> usize {
        match self {
            ParamCount::LambdaAndAlpha => k * j + k,
            ParamCount::LambdaAndXi => k * j + k - 1,
        }
    }
}

/// `-2 bound + p log N`.
pub fn bic_approx(lower_bound: f64, params: usize, n: f64) -> f64 {
    -2.0 * lower_bound + params as f64 * n.ln()
}

/// Which end of a criterion's scale is preferred.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Smaller,
    Larger,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub dic: f64,
    pub p_d: f64,
    /// Posterior mean deviance.
    pub mean_deviance: f64,
    /// Deviance at the posterior means.
    pub deviance_at_mean: f64,
}

/// DIC from the log-likelihood trace and the deviance at the posterior means.
pub fn dic_from_parts(loglik: &[f64], deviance_at_mean: f64) -> Result<Dic> {
    if loglik.is_empty() {
        return Err(GomError::InsufficientDraws { needed: 1, have: 0 });
    }
    let mean_deviance = -2.0 * loglik.iter().sum::<f64>() / loglik.len() as f64;
    let p_d = mean_deviance - deviance_at_mean;
    Ok(Dic { dic: deviance_at_mean + 2.0 * p_d, p_d, mean_deviance, deviance_at_mean })
}

/// `-2 l(g_mean, lambda_mean)`, in mixture form when `theta1` is given.
pub fn deviance_at(lambda: &[f64], g: &[f64], theta1: Option<f64>, data: &Dataset) -> f64 {
    let (n, j) = (data.n(), data.n_items());
    let k = g.len() / n;
    let x = data.flat();
    let terms: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &x[i * j..(i + 1) * j];
            let l = pattern_log_prob_raw(lambda, j, &g[i * k..(i + 1) * k], xi);
            match theta1 {
                Some(t1) if xi.iter().all(|&b| b == 0) => log_add_exp(t1.ln(), (1.0 - t1).ln() + l),
                Some(t1) => (1.0 - t1).ln() + l,
                None => l,
            }
        })
        .collect();
    -2.0 * terms.iter().sum::<f64>()
}

/// Posterior mean of the kept lambda draws, row-major `K x J`.
pub fn lambda_mean(chain: &ChainOutput) -> Vec<f64> {
    let s = chain.draws() as f64;
    let mut m = vec![0.0; chain.n_profiles * chain.n_items];
    for d in &chain.lambda {
        m.iter_mut().zip(d).for_each(|(a, v)| *a += v);
    }
    m.iter_mut().for_each(|v| *v /= s);
    m
}

/// DIC with focus `(g, lambda)`.
pub fn dic(chain: &ChainOutput, data: &Dataset) -> Result<Dic> {
    let g = chain.g_mean.as_ref().ok_or(GomError::MissingMembershipMeans)?;
    if chain.draws() == 0 {
        return Err(GomError::InsufficientDraws { needed: 1, have: 0 });
    }
    if data.n() != chain.n_individuals || data.n_items() != chain.n_items {
        return Err(GomError::LengthMismatch { what: "dataset individuals", expected: chain.n_individuals, got: data.n() });
    }
    let theta1 = chain.theta1.as_ref().map(|t| t.iter().sum::<f64>() / t.len() as f64);
    dic_from_parts(&chain.loglik, deviance_at(&lambda_mean(chain), g, theta1, data))
}

/// `2 (mean - variance)` of the log-likelihood draws, variance with divisor `S`.
pub fn aicm(loglik: &[f64]) -> Result<f64> {
    if loglik.len() < 2 {
        return Err(GomError::InsufficientDraws { needed: 2, have: loglik.len() });
    }
    let s = loglik.len() as f64;
    let mean = loglik.iter().sum::<f64>() / s;
    let var = loglik.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / s;
    Ok(2.0 * (mean - var))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi2Entry {
    pub level: u64,
    pub value: f64,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriteriaRecord {
    pub k: usize,
    pub method: Method,
    pub chi2: Vec<Chi2Entry>,
    pub bic_approx: Option<f64>,
    pub lower_bound: Option<f64>,
    pub dic: Option<f64>,
    pub p_d: Option<f64>,
    pub aicm: Option<f64>,
    pub theta1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// `chi2>=<level>`, `bic`, `dic` or `aicm`.
    pub criterion: String,
    pub method: Method,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedColumn {
    pub k: usize,
    pub method: Method,
    pub values: Vec<f64>,
}

/// Observed and expected counts for the patterns observed at least `min(levels)` times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedTable {
    pub patterns: Vec<String>,
    pub observed: Vec<u64>,
    pub columns: Vec<ExpectedColumn>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub levels: Vec<u64>,
    pub bic_direction: Direction,
    pub records: Vec<CriteriaRecord>,
    pub selections: Vec<Selection>,
    pub expected: ExpectedTable,
    pub warnings: Vec<String>,
}

impl CriteriaReport {
    pub fn selected(&self, criterion: &str, method: Method) -> Option<usize> {
        self.selections.iter().find(|s| s.criterion == criterion && s.method == method).map(|s| s.k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub k_values: Vec<usize>,
    pub methods: Vec<Method>,
    /// Template for MCMC fits; `k` and `seed` are set per fit.
    pub chain: ChainConfig,
    pub vem: VemConfig,
    pub extended: ExtendedConfig,
    pub levels: Vec<u64>,
    pub vem_expected_draws: usize,
    pub bic_params: ParamCount,
    pub bic_direction: Direction,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            k_values: vec![2, 3, 4, 5],
            methods: vec![Method::Mcmc, Method::Vem],
            chain: ChainConfig::default(),
            vem: VemConfig::default(),
            extended: ExtendedConfig::default(),
            levels: DEFAULT_LEVELS.to_vec(),
            vem_expected_draws: VEM_EXPECTED_DRAWS,
            bic_params: ParamCount::default(),
            bic_direction: Direction::Smaller,
            seed: 0,
        }
    }
}

struct FitOutcome {
    record: CriteriaRecord,
    expected: Vec<f64>,
    warnings: Vec<String>,
}

fn fit_one(data: &Dataset, k: usize, method: Method, config: &SweepConfig, table_patterns: &[ResponsePattern]) -> Result<FitOutcome> {
    let fit_seed = rng::derive_seed(config.seed, tag::SWEEP_K, k as u64, method.index());
    let expected_seed = rng::derive_seed(config.seed, tag::EXPECTED, k as u64, method.index());
    let n = data.n() as f64;
    let mut warnings = Vec::new();
    let mut record = CriteriaRecord {
        k,
        method,
        chi2: Vec::new(),
        bic_approx: None,
        lower_bound: None,
        dic: None,
        p_d: None,
        aicm: None,
        theta1: None,
    };
    let expected = match method {
        Method::Vem => {
            let cfg = VemConfig { k, seed: fit_seed, ..config.vem.clone() };
            let fit = vem::fit_vem(data, &cfg)?;
            if !fit.converged {
                warnings.push(format!("K={k} vem: did not converge"));
            }
            record.lower_bound = Some(fit.lower_bound());
            record.bic_approx = Some(bic_approx(fit.lower_bound(), config.bic_params.count(k, data.n_items()), n));
            expected_counts_vem(&fit.params, table_patterns, n, config.vem_expected_draws, expected_seed)?
        }
        Method::Mcmc | Method::McmcExtended => {
            let cfg = ChainConfig { k, seed: fit_seed, accumulate_g_mean: true, ..config.chain.clone() };
            let chain = if method == Method::Mcmc {
                mcmc::run_chain(data, &cfg)?
            } else {
                extended::run_extended_chain(data, &cfg, &config.extended)?
            };
            let d = dic(&chain, data)?;
            record.dic = Some(d.dic);
            record.p_d = Some(d.p_d);
            record.aicm = Some(aicm(&chain.loglik)?);
            if let Some(t) = &chain.theta1 {
                record.theta1 = Some(t.iter().sum::<f64>() / t.len() as f64);
            }
            if let Ok(sum) = posterior_summary(&chain) {
                let sep = diagnostics::profile_separation(&sum.lambda_means(), &sum.lambda_sds())?;
                for (a, b) in sep.unseparated_pairs() {
                    warnings.push(format!("K={k} {method}: profiles {a} and {b} are not separated; label switching may affect DIC and AICM"));
                }
            }
            expected_counts_mcmc(&chain, table_patterns, n, expected_seed)?
        }
    };
    let exclude_all_zero = method == Method::McmcExtended;
    let by_pattern: BTreeMap<ResponsePattern, f64> =
        table_patterns.iter().cloned().zip(expected.iter().map(|e| e.value)).collect();
    for &level in &config.levels {
        let cells = included_patterns(data, level, exclude_all_zero).len();
        let value = chi2_truncated(data, &by_pattern, level, exclude_all_zero)?;
        record.chi2.push(Chi2Entry { level, value, cells });
    }
    Ok(FitOutcome { record, expected: expected.iter().map(|e| e.value).collect(), warnings })
}

fn argbest<'a>(records: impl Iterator<Item = (&'a CriteriaRecord, f64)>, dir: Direction) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (r, v) in records {
        let better = match best {
            None => true,
            Some((_, b)) => match dir {
                Direction::Smaller => v < b,
                Direction::Larger => v > b,
            },
        };
        if better {
            best = Some((r.k, v));
        }
    }
    best.map(|(k, _)| k)
}

fn selections(records: &[CriteriaRecord], levels: &[u64], bic_direction: Direction) -> Vec<Selection> {
    let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let mut out = Vec::new();
    for &m in &methods {
        let rs = || records.iter().filter(move |r| r.method == m);
        for (li, &level) in levels.iter().enumerate() {
            if let Some(k) = argbest(rs().map(|r| (r, r.chi2[li].value)), Direction::Smaller) {
                out.push(Selection { criterion: format!("chi2>={level}"), method: m, k });
            }
        }
        let mut push = |name: &str, k: Option<usize>| {
            if let Some(k) = k {
                out.push(Selection { criterion: name.into(), method: m, k });
            }
        };
        push("bic", argbest(rs().filter_map(|r| r.bic_approx.map(|v| (r, v))), bic_direction));
        push("dic", argbest(rs().filter_map(|r| r.dic.map(|v| (r, v))), Direction::Smaller));
        push("aicm", argbest(rs().filter_map(|r| r.aicm.map(|v| (r, v))), Direction::Larger));
    }
    out
}

/// Fits every `(K, method)` pair and computes all criteria.
pub fn criteria_sweep(data: &Dataset, config: &SweepConfig) -> Result<CriteriaReport> {
    if config.k_values.is_empty() {
        return Err(GomError::InvalidParameter("the K range is empty".into()));
    }
    if config.methods.is_empty() {
        return Err(GomError::InvalidParameter("no fitting method requested".into()));
    }
    if config.levels.is_empty() {
        return Err(GomError::InvalidParameter("no truncation level requested".into()));
    }
    let min_level = *config.levels.iter().min().expect("non-empty");
    let table_patterns = included_patterns(data, min_level, false);
    let jobs: Vec<(usize, Method)> =
        config.k_values.iter().flat_map(|&k| config.methods.iter().map(move |&m| (k, m))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(k, m)| fit_one(data, k, m, config, &table_patterns))
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let mut records = Vec::new();
    let mut columns = Vec::new();
    for o in outcomes {
        columns.push(ExpectedColumn { k: o.record.k, method: o.record.method, values: o.expected });
        records.push(o.record);
        warnings.extend(o.warnings);
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(CriteriaReport {
        levels: config.levels.clone(),
        bic_direction: config.bic_direction,
        selections: selections(&records, &config.levels, config.bic_direction),
        records,
        expected: ExpectedTable {
            patterns: table_patterns.iter().map(|p| p.to_string()).collect(),
            observed: table_patterns.iter().map(|p| data.count(p)).collect(),
            columns,
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::generate_dataset;
    use crate::mcmc::GuardEvents;
    use crate::prob::{marginal_pattern_prob_exact, random_params};

    fn toy_chain(params: &GomParams, draws: usize, loglik: Vec<f64>) -> ChainOutput {
        ChainOutput {
            n_profiles: params.k(),
            n_items: params.j(),
            n_individuals: 1,
            burn_in: 0,
            iterations: draws,
            thin: 1,
            initial: params.clone(),
            final_params: params.clone(),
            lambda: vec![params.lambda_flat(); draws],
            alpha0: vec![params.alpha0(); draws],
            xi: vec![params.xi().to_vec(); draws],
            loglik,
            accepted_alpha0: vec![false; draws],
            accepted_xi: vec![false; draws],
            acceptance_alpha0: 0.0,
            acceptance_xi: 0.0,
            g_mean: None,
            g_draws: None,
            z_draws: None,
            theta1: None,
            n2: None,
            events: GuardEvents::default(),
        }
    }

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson_sum(&[(10.0, 5.0), (20.0, 25.0)]).unwrap(), 6.0);
        assert_eq!(pearson_sum(&[(7.0, 7.0), (3.0, 3.0)]).unwrap(), 0.0);
        assert!(pearson_sum(&[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn dic_and_aicm_examples() {
        let d = dic_from_parts(&[-10.0, -12.0], 21.0).unwrap();
        assert!((d.mean_deviance - 22.0).abs() < 1e-12);
        assert!((d.p_d - 1.0).abs() < 1e-12);
        assert!((d.dic - 23.0).abs() < 1e-12);
        let same = dic_from_parts(&[-7.0; 5], 14.0).unwrap();
        assert_eq!(same.p_d, 0.0);
        assert_eq!(same.dic, 14.0);
        assert!((aicm(&[-10.0, -12.0]).unwrap() + 24.0).abs() < 1e-12);
        assert_eq!(aicm(&[-3.0; 4]).unwrap(), -6.0);
        assert!(aicm(&[-1.0]).is_err());
        // fixed mean, growing spread
        let mut prev = f64::INFINITY;
        for spread in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let a = aicm(&[-10.0 - spread, -10.0 + spread]).unwrap();
            assert!(a < prev);
            prev = a;
        }
    }

    #[test]
    fn bic_examples() {
        // K = 1: classical BIC of the independence model
        let ll = -123.4;
        assert_eq!(bic_approx(ll, ParamCount::LambdaAndAlpha.count(1, 5), 200.0), 246.8 + 6.0 * 200f64.ln());
        let a = bic_approx(2.0 * ll, 10, 400.0);
        let b = bic_approx(ll, 10, 200.0);
        assert!((a - 2.0 * b - (10.0 * 2f64.ln() - 10.0 * 200f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn single_draw_half_lambda_gives_uniform_counts() {
        let p = GomParams::new(vec![vec![0.5; 3]; 2], 0.7, vec![0.4, 0.6]).unwrap();
        let chain = toy_chain(&p, 1, vec![-1.0]);
        let pats = ResponsePattern::all(3);
        for e in expected_counts_mcmc(&chain, &pats, 800.0, 1).unwrap() {
            assert!((e.value - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_profile_has_no_g_noise() {
        let p = GomParams::new(vec![vec![0.2, 0.9]], 1.0, vec![1.0]).unwrap();
        let chain = toy_chain(&p, 10, vec![-1.0; 10]);
        let e = expected_counts_mcmc(&chain, &[ResponsePattern::new(vec![1, 1]).unwrap()], 1000.0, 2).unwrap();
        assert!((e[0].value - 180.0).abs() < 1e-9);
        let v = expected_counts_vem(&p, &[ResponsePattern::new(vec![0, 1]).unwrap()], 1000.0, 10, 2).unwrap();
        assert!((v[0].value - 720.0).abs() < 1e-9);
    }

    #[test]
    fn expected_counts_match_exact_marginals() {
        for seed in 0..10 {
            let mut r = rng::stream(seed, 5, 0, 0);
            let p = random_params(2, 1 + seed as usize % 4, &mut r);
            let pats = ResponsePattern::all(p.j());
            let chain = toy_chain(&p, 20_000, vec![0.0; 20_000]);
            let mc = expected_counts_mcmc(&chain, &pats, 1000.0, seed).unwrap();
            let vm = expected_counts_vem(&p, &pats, 1000.0, 20_000, seed + 100).unwrap();
            let mut total = 0.0;
            for ((pat, a), b) in pats.iter().zip(&mc).zip(&vm) {
                let exact = 1000.0 * marginal_pattern_prob_exact(&p, pat).unwrap();
                assert!((a.value - exact).abs() <= 3.0 * a.se + 1e-9, "{} vs {exact} (SE {})", a.value, a.se);
                assert!((b.value - exact).abs() <= 3.0 * b.se + 1e-9);
                total += a.value;
            }
            assert!((total - 1000.0).abs() < 1e-8);
        }
    }

    #[test]
    fn raising_the_level_never_adds_cells() {
        let p = crate::generate::Preset::Scenario2.params();
        let (d, _) = generate_dataset(&p, 2000, 1, None).unwrap();
        let mut prev: Option<Vec<ResponsePattern>> = None;
        for level in [1, 2, 5, 10, 25, 100] {
            let inc = included_patterns(&d, level, false);
            if let Some(prev) = prev {
                assert!(inc.iter().all(|p| prev.contains(p)));
            }
            prev = Some(inc);
        }
    }

    #[test]
    fn chi2_requires_expected_values() {
        let p = GomParams::new(vec![vec![0.5; 2]], 1.0, vec![1.0]).unwrap();
        let (d, _) = generate_dataset(&p, 100, 1, None).unwrap();
        assert!(chi2_truncated(&d, &BTreeMap::new(), 1, false).is_err());
        let exact: BTreeMap<_, _> = d.table().iter().map(|(p, &c)| (p.clone(), c as f64)).collect();
        assert_eq!(chi2_truncated(&d, &exact, 1, false).unwrap(), 0.0);
    }

    #[test]
    fn dic_needs_membership_means() {
        let p = GomParams::new(vec![vec![0.5; 2]], 1.0, vec![1.0]).unwrap();
        let (d, _) = generate_dataset(&p, 1, 1, None).unwrap();
        let chain = toy_chain(&p, 2, vec![-1.0, -2.0]);
        assert!(matches!(dic(&chain, &d), Err(GomError::MissingMembershipMeans)));
    }

    #[test]
    fn sweep_with_single_k_and_selection_rules() {
        let (d, _) = generate_dataset(&crate::generate::Preset::Scenario1.params(), 400, 2, None).unwrap();
        let cfg = SweepConfig {
            k_values: vec![2],
            methods: vec![Method::Mcmc, Method::Vem],
            chain: ChainConfig { iterations: 40, burn_in: 20, thin: 2, ..Default::default() },
            vem_expected_draws: 200,
            levels: vec![10, 5],
            ..Default::default()
        };
        let rep = criteria_sweep(&d, &cfg).unwrap();
        assert_eq!(rep.records.len(), 2);
        assert_eq!(rep.selected("aicm", Method::Mcmc), Some(2));
        assert_eq!(rep.selected("bic", Method::Vem), Some(2));
        assert!(rep.records.iter().all(|r| r.chi2.iter().all(|c| c.value >= 0.0)));
        let again = criteria_sweep(&d, &cfg).unwrap();
        assert_eq!(rep, again);
        assert!(criteria_sweep(&d, &SweepConfig { k_values: vec![], ..cfg }).is_err());
    }

    #[test]
    fn argbest_respects_direction_and_ties() {
        let mk = |k| CriteriaRecord { k, method: Method::Vem, chi2: vec![], bic_approx: None, lower_bound: None, dic: None, p_d: None, aicm: None, theta1: None };
        let rs = [mk(2), mk(3), mk(4)];
        let vals = [5.0, 3.0, 3.0];
        assert_eq!(argbest(rs.iter().zip(vals), Direction::Smaller), Some(3));
        assert_eq!(argbest(rs.iter().zip(vals), Direction::Larger), Some(2));
    }

    #[test]
    fn extended_all_zero_cell_is_exact() {
        let (d, _) = generate_dataset(&crate::generate::Preset::Scenario1.params(), 600, 4, Some(0.15)).unwrap();
        let cfg = ChainConfig { k: 2, iterations: 60, burn_in: 20, thin: 3, seed: 8, ..Default::default() };
        let chain = crate::extended::run_extended_chain(&d, &cfg, &Default::default()).unwrap();
        let zero = ResponsePattern::zeros(d.n_items());
        let e = expected_counts_mcmc(&chain, std::slice::from_ref(&zero), d.n() as f64, 1).unwrap();
        assert!((e[0].value - d.count(&zero) as f64).abs() < 1e-9, "{}", e[0].value);
        assert!(chain.theta1.unwrap().iter().all(|t| (0.0..=1.0).contains(t)));
    }
}
