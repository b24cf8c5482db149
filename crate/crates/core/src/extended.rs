//! Two-compartment mixture: an all-zero "stayer" compartment with weight
//! `theta1` alongside a GoM "mover" compartment with weight `theta2`.
//!
//! Only all-zero respondents can be stayers. Stayers sit out the Gibbs sweep,
//! so `lambda`, `g`, `alpha0` and `xi` are driven by movers alone.

use log::warn;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{GomError, Result};
use crate::mcmc::{self, AugmentedState, ChainConfig, ChainOutput, SweepKey, PAR_MIN_LEN};
use crate::model::Dataset;
use crate::prob::pattern_log_prob_raw;
use crate::rng::{self, tag};
use crate::special::log_add_exp;

#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedConfig {
    /// Starting stayer weight; half the observed all-zero proportion when absent.
    pub theta1_init: Option<f64>,
    /// When false the compartment flags stay at their initial values (all movers).
    pub sample_indicators: bool,
}

impl Default for ExtendedConfig {
    fn default() -> Self {
        ExtendedConfig { theta1_init: None, sample_indicators: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompartmentState {
    pub theta1: f64,
    pub theta2: f64,
    /// Indices of the all-zero respondents.
    all_zero: Vec<usize>,
    /// Stayer flag per entry of `all_zero`.
    pub stayer: Vec<bool>,
    /// All-zero respondents currently in the mover compartment.
    pub n2: usize,
    /// Respondents with at least one positive response; always movers.
    pub n_mix: usize,
    pub n: usize,
    sample_indicators: bool,
}

impl CompartmentState {
    pub fn new(data: &Dataset, config: &ExtendedConfig) -> Result<Self> {
        let n = data.n();
        let all_zero: Vec<usize> = (0..n).filter(|&i| data.rows()[i].is_all_zero()).collect();
        let n_mix = n - all_zero.len();
        if n_mix == 0 {
            return Err(GomError::InvalidParameter("every respondent is all-zero; the mover compartment is empty".into()));
        }
        let observed = all_zero.len() as f64 / n as f64;
        let mut theta1 = config.theta1_init.unwrap_or(0.5 * observed);
        if !(0.0..1.0).contains(&theta1) {
            return Err(GomError::InvalidParameter(format!("initial theta1 must lie in [0, 1), got {theta1}")));
        }
        if all_zero.is_empty() {
            warn!("no all-zero respondents; the stayer weight is pinned at 0");
            theta1 = 0.0;
        } else if theta1 > observed {
            warn!("initial theta1 {theta1} exceeds the observed all-zero proportion {observed}");
        }
        Ok(CompartmentState {
            theta1,
            theta2: 1.0 - theta1,
            stayer: vec![false; all_zero.len()],
            n2: all_zero.len(),
            n_mix,
            n,
            all_zero,
            sample_indicators: config.sample_indicators,
        })
    }

    pub fn n1(&self) -> usize {
        self.all_zero.len() - self.n2
    }

    pub fn all_zero_count(&self) -> usize {
        self.all_zero.len()
    }

    /// `theta2 = (n2 + n_mix) / N`, `theta1 = 1 - theta2`.
    pub fn update_theta(&mut self) {
        self.theta2 = (self.n2 + self.n_mix) as f64 / self.n as f64;
        self.theta1 = 1.0 - self.theta2;
    }

    /// Log-likelihood of all respondents under the mixture.
    ///
    /// Non-zero patterns contribute `log theta2 + l_i`; all-zero patterns
    /// contribute `log(theta1 + theta2 f(0 | g_i))`. With `theta1 = 0` this is
    /// the standard log-likelihood.
    pub fn loglik(&self, state: &AugmentedState, x: &[u8]) -> f64 {
        let lam = state.params.lambda_flat();
        let (j, n) = (state.j, state.n);
        let (lt1, lt2) = (self.theta1.ln(), self.theta2.ln());
        let terms: Vec<f64> = (0..n)
            .into_par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map(|i| {
                let xi = &x[i * j..(i + 1) * j];
                let l = pattern_log_prob_raw(&lam, j, state.g(i), xi);
                if xi.iter().all(|&b| b == 0) {
                    log_add_exp(lt1, lt2 + l)
                } else {
                    lt2 + l
                }
            })
            .collect();
        terms.iter().sum()
    }
}

/// Incremental form of the stayer-weight update.
pub fn theta1_incremental(theta1_prev: f64, n2_prev: usize, n2_new: usize, n: usize) -> f64 {
    theta1_prev + (n2_prev as f64 - n2_new as f64) / n as f64
}

/// Probability that an all-zero respondent is a stayer.
pub fn stayer_probability(theta1: f64, theta2: f64, p_all_zero: f64) -> f64 {
    let denom = theta1 + theta2 * p_all_zero;
    if denom > 0.0 {
        theta1 / denom
    } else {
        0.0
    }
}

/// Prior draw of `(g, log g)` given to a current stayer.
type FreshMembership = (Vec<f64>, Vec<f64>);

/// Redraws the compartment of every all-zero respondent.
///
/// A stayer first receives a fresh prior draw of `g`, which is also the
/// membership vector it carries if it re-enters the mover pool.
pub fn sample_compartment_indicators(cs: &mut CompartmentState, state: &mut AugmentedState, key: SweepKey) {
    if !cs.sample_indicators || cs.all_zero.is_empty() {
        return;
    }
    let (k, j) = (state.k, state.j);
    let lam = state.params.lambda_flat();
    let alpha = state.params.alpha();
    let zeros = vec![0u8; j];
    let (theta1, theta2) = (cs.theta1, cs.theta2);
    let updates: Vec<(bool, Option<FreshMembership>)> = cs
        .all_zero
        .par_iter()
        .zip(cs.stayer.par_iter())
        .with_min_len(PAR_MIN_LEN)
        .map(|(&i, &was_stayer)| {
            let mut rng = key.stream(tag::COMPARTMENT, i);
            let fresh = was_stayer.then(|| {
                let (mut g, mut lg) = (vec![0.0; k], vec![0.0; k]);
                rng::sample_dirichlet(&alpha, &mut rng, &mut g, &mut lg);
                (g, lg)
            });
            let g = fresh.as_ref().map_or(state.g(i), |(g, _)| g.as_slice());
            let p = pattern_log_prob_raw(&lam, j, g, &zeros).exp();
            let stayer = rng.random::<f64>() < stayer_probability(theta1, theta2, p);
            (stayer, fresh)
        })
        .collect();
    let mut n2 = 0;
    for ((&i, flag), (stayer, fresh)) in cs.all_zero.iter().zip(cs.stayer.iter_mut()).zip(updates) {
        if let Some((g, lg)) = fresh {
            state.g[i * k..(i + 1) * k].copy_from_slice(&g);
            state.log_g[i * k..(i + 1) * k].copy_from_slice(&lg);
        }
        *flag = stayer;
        state.mover[i] = !stayer;
        n2 += !stayer as usize;
    }
    cs.n2 = n2;
}

/// Runs the extended chain. The output carries `theta1` and `n2` traces.
pub fn run_extended_chain(data: &Dataset, config: &ChainConfig, ext: &ExtendedConfig) -> Result<ChainOutput> {
    mcmc::drive(data, config, Some(ext))
}
