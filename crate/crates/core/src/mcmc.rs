//! Data-augmented Gibbs sampler with Metropolis-Hastings steps for the
//! Dirichlet precision `alpha0` and proportions `xi`.
//!
//! A sweep updates `z`, `lambda`, `g`, `alpha0`, `xi` in that order. All draws
//! for individual `i` in sweep `m` come from the stream `(seed, tag, m, i)`, so
//! the per-individual updates can run on any number of threads.

use log::{debug, warn};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{GomError, Result};
use crate::extended::{self, CompartmentState, ExtendedConfig};
use crate::lcm;
use crate::model::{Dataset, GomParams, LatentClassification, MembershipVector};
use crate::prob::pattern_log_prob_raw;
use crate::rng::{self, tag, StreamRng};
use crate::special::ln_gamma;

/// Sampled lambda values are clamped to `[LAMBDA_CLAMP, 1 - LAMBDA_CLAMP]`.
pub const LAMBDA_CLAMP: f64 = 1e-12;
/// Smallest `xi_k` used as a proposal concentration.
pub const XI_FLOOR: f64 = 1e-8;
/// Latent draws are never stored when one draw would exceed this many `g` entries.
pub const STORE_LATENT_LIMIT: usize = 1_000_000;

/// Minimum number of individuals handed to one rayon task.
pub(crate) const PAR_MIN_LEN: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub enum InitPolicy {
    /// Profiles and weights from a latent class model fitted by EM.
    LatentClass { restarts: usize },
    /// Uniform profiles and equal weights.
    Random,
    User(GomParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    pub k: usize,
    /// Sweeps after burn-in; `iterations / thin` of them are kept.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Shape of the Gamma proposal for `alpha0`.
    pub omega: f64,
    /// Concentration multiplier of the Dirichlet proposal for `xi`.
    pub eta: f64,
    /// Gamma prior on `alpha0` (shape, rate).
    pub prior_tau: f64,
    pub prior_beta: f64,
    /// Beta prior on every lambda entry.
    pub lambda_prior: (f64, f64),
    pub seed: u64,
    pub init: InitPolicy,
    /// Starting `alpha0`; the prior mean when absent.
    pub alpha0_init: Option<f64>,
    /// Keep every kept draw of `g` and `z`.
    pub store_latent: bool,
    /// Accumulate the posterior mean of `g` (needed for DIC).
    pub accumulate_g_mean: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            k: 2,
            iterations: 10_000,
            burn_in: 10_000,
            thin: 10,
            omega: 50.0,
            eta: 100.0,
            prior_tau: 2.0,
            prior_beta: 10.0,
            lambda_prior: (1.0, 1.0),
            seed: 0,
            init: InitPolicy::LatentClass { restarts: 10 },
            alpha0_init: None,
            store_latent: false,
            accumulate_g_mean: true,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GomError::InvalidParameter(m));
        if self.k == 0 || self.k > u8::MAX as usize {
            return bad(format!("K must lie in 1..=255, got {}", self.k));
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        if !(self.omega > 1.0 && self.omega.is_finite()) {
            return bad(format!("omega must exceed 1, got {}", self.omega));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.prior_tau > 0.0 && self.prior_beta > 0.0) {
            return bad("alpha0 prior shape and rate must be positive".into());
        }
        if !(self.lambda_prior.0 > 0.0 && self.lambda_prior.1 > 0.0) {
            return bad("lambda prior parameters must be positive".into());
        }
        if let Some(a) = self.alpha0_init {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("initial alpha0 must be positive, got {a}"));
            }
        }
        if let InitPolicy::User(p) = &self.init {
            if p.k() != self.k {
                return Err(GomError::LengthMismatch { what: "initial profiles", expected: self.k, got: p.k() });
            }
        }
        Ok(())
    }

    pub fn kept_draws(&self) -> usize {
        self.iterations / self.thin
    }

    fn initial_alpha0(&self) -> f64 {
        self.alpha0_init.unwrap_or(self.prior_tau / self.prior_beta)
    }
}

/// Identifies the random streams of one sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepKey {
    pub seed: u64,
    pub sweep: u64,
}

impl SweepKey {
    pub fn stream(self, tag: u64, i: usize) -> StreamRng {
        rng::stream(self.seed, tag, self.sweep, i as u64)
    }
}

/// Parameters plus the augmented latent variables of every individual.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState {
    pub(crate) params: GomParams,
    pub(crate) n: usize,
    pub(crate) k: usize,
    pub(crate) j: usize,
    /// Row-major `N x K`.
    pub(crate) g: Vec<f64>,
    /// Exact logs of `g`; entries may be very negative but stay finite.
    pub(crate) log_g: Vec<f64>,
    /// Row-major `N x J` profile indices.
    pub(crate) z: Vec<u8>,
    /// Individuals excluded from the sweep are stayers of the extended model.
    pub(crate) mover: Vec<bool>,
    pub(crate) sweep_index: u64,
}

impl AugmentedState {
    pub fn new(params: GomParams, g: Vec<MembershipVector>, z: Vec<LatentClassification>) -> Result<Self> {
        let (k, j) = (params.k(), params.j());
        if k > u8::MAX as usize {
            return Err(GomError::InvalidParameter(format!("K must be at most 255, got {k}")));
        }
        if g.len() != z.len() {
            return Err(GomError::LengthMismatch { what: "classifications", expected: g.len(), got: z.len() });
        }
        let n = g.len();
        let mut gf = Vec::with_capacity(n * k);
        let mut zf = Vec::with_capacity(n * j);
        for (gi, zi) in g.iter().zip(&z) {
            if gi.k() != k {
                return Err(GomError::LengthMismatch { what: "membership vector", expected: k, got: gi.k() });
            }
            if zi.as_slice().len() != j {
                return Err(GomError::LengthMismatch { what: "classification", expected: j, got: zi.as_slice().len() });
            }
            if let Some(&bad) = zi.as_slice().iter().find(|&&c| c >= k) {
                return Err(GomError::IndexOutOfRange { what: "profile", index: bad, len: k });
            }
            gf.extend_from_slice(gi.as_slice());
            zf.extend(zi.as_slice().iter().map(|&c| c as u8));
        }
        let log_g = gf.iter().map(|v| v.ln()).collect();
        Ok(AugmentedState { params, n, k, j, g: gf, log_g, z: zf, mover: vec![true; n], sweep_index: 0 })
    }

    pub fn params(&self) -> &GomParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn g(&self, i: usize) -> &[f64] {
        &self.g[i * self.k..(i + 1) * self.k]
    }

    pub fn log_g(&self, i: usize) -> &[f64] {
        &self.log_g[i * self.k..(i + 1) * self.k]
    }

    pub fn z(&self, i: usize) -> &[u8] {
        &self.z[i * self.j..(i + 1) * self.j]
    }

    pub fn is_mover(&self, i: usize) -> bool {
        self.mover[i]
    }

    pub fn sweep_index(&self) -> u64 {
        self.sweep_index
    }

    /// Checks the simplex and range invariants of every component.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |m: String| Err(GomError::Numerical(m));
        for (idx, &l) in self.params.lambda_flat().iter().enumerate() {
            if !(0.0..=1.0).contains(&l) {
                return bad(format!("lambda entry {idx} = {l}"));
            }
        }
        let a0 = self.params.alpha0();
        if !(a0 > 0.0 && a0.is_finite()) {
            return bad(format!("alpha0 = {a0}"));
        }
        let xs: f64 = self.params.xi().iter().sum();
        if (xs - 1.0).abs() > 1e-9 || self.params.xi().iter().any(|&x| x <= 0.0) {
            return bad(format!("xi = {:?}", self.params.xi()));
        }
        for i in 0..self.n {
            let gi = self.g(i);
            let s: f64 = gi.iter().sum();
            if (s - 1.0).abs() > 1e-9 || gi.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return bad(format!("g[{i}] = {gi:?}"));
            }
            if self.log_g(i).iter().any(|v| !v.is_finite() || *v > 0.0) {
                return bad(format!("log g[{i}] = {:?}", self.log_g(i)));
            }
            if self.z(i).iter().any(|&c| c as usize >= self.k) {
                return bad(format!("z[{i}] = {:?}", self.z(i)));
            }
        }
        Ok(())
    }

    /// `sum_i sum_j log sum_k g_ik lambda_kj^x (1 - lambda_kj)^(1-x)` over movers.
    pub fn loglik(&self, x: &[u8]) -> f64 {
        let lam = self.params.lambda_flat();
        let terms: Vec<f64> = (0..self.n)
            .into_par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map(|i| {
                if self.mover[i] {
                    pattern_log_prob_raw(&lam, self.j, self.g(i), &x[i * self.j..(i + 1) * self.j])
                } else {
                    0.0
                }
            })
            .collect();
        terms.iter().sum()
    }

    /// Column sums of `log g` over movers, and the mover count.
    pub fn membership_log_sums(&self) -> (Vec<f64>, usize) {
        let mut sums = vec![0.0; self.k];
        let mut n = 0;
        for i in (0..self.n).filter(|&i| self.mover[i]) {
            n += 1;
            for (s, &lg) in sums.iter_mut().zip(self.log_g(i)) {
                *s += lg;
            }
        }
        (sums, n)
    }
}

/// Draws `z_ij` from its complete conditional for every mover.
///
/// Returns how many items fell back to sampling from `g_i` alone because all
/// weights were zero.
pub fn impute_z(state: &mut AugmentedState, x: &[u8], key: SweepKey) -> usize {
    let (k, j) = (state.k, state.j);
    let lam = state.params.lambda_flat();
    let g = &state.g;
    let mover = &state.mover;
    state
        .z
        .par_chunks_mut(j)
        .enumerate()
        .with_min_len(PAR_MIN_LEN)
        .map(|(i, zi)| {
            if !mover[i] {
                return 0;
            }
            let mut rng = key.stream(tag::IMPUTE_Z, i);
            let gi = &g[i * k..(i + 1) * k];
            let xi = &x[i * j..(i + 1) * j];
            let mut w = vec![0.0; k];
            let mut fallbacks = 0;
            for jj in 0..j {
                let mut total = 0.0;
                for kk in 0..k {
                    let l = lam[kk * j + jj];
                    w[kk] = gi[kk] * if xi[jj] == 1 { l } else { 1.0 - l };
                    total += w[kk];
                }
                zi[jj] = if total > 0.0 {
                    rng::categorical(&w, total, &mut rng)
                } else {
                    fallbacks += 1;
                    rng::categorical(gi, gi.iter().sum(), &mut rng)
                } as u8;
            }
            fallbacks
        })
        .sum()
}

/// Assignment and positive-response counts per profile and item, over movers.
/// Layout: `[assigned(K x J), positive(K x J)]`.
fn assignment_counts(state: &AugmentedState, x: &[u8]) -> Vec<u64> {
    let (k, j) = (state.k, state.j);
    let kj = k * j;
    state
        .z
        .par_chunks(j)
        .enumerate()
        .with_min_len(PAR_MIN_LEN)
        .fold(
            || vec![0u64; 2 * kj],
            |mut acc, (i, zi)| {
                if state.mover[i] {
                    for (jj, &c) in zi.iter().enumerate() {
                        let cell = c as usize * j + jj;
                        acc[cell] += 1;
                        acc[kj + cell] += x[i * j + jj] as u64;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; 2 * kj],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(s, v)| *s += v);
                a
            },
        )
}

/// Draws every `lambda_kj` from its Beta complete conditional. Returns the number of clamped draws.
pub fn sample_lambda(state: &mut AugmentedState, x: &[u8], prior: (f64, f64), key: SweepKey) -> usize {
    let kj = state.k * state.j;
    let counts = assignment_counts(state, x);
    let mut rng = key.stream(tag::LAMBDA, 0);
    let mut clamped = 0;
    let lam: Vec<f64> = (0..kj)
        .map(|cell| {
            let (assigned, pos) = (counts[cell] as f64, counts[kj + cell] as f64);
            let la = rng::sample_log_gamma(prior.0 + pos, &mut rng);
            let lb = rng::sample_log_gamma(prior.1 + assigned - pos, &mut rng);
            let v = 1.0 / (1.0 + (lb - la).exp());
            let c = v.clamp(LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP);
            clamped += (c != v) as usize;
            c
        })
        .collect();
    state.params.set_lambda_flat(&lam);
    clamped
}

/// Draws `g_i ~ Dirichlet(alpha + profile counts of z_i)` for every mover.
pub fn sample_g(state: &mut AugmentedState, key: SweepKey) {
    let (k, j) = (state.k, state.j);
    let alpha = state.params.alpha();
    let z = &state.z;
    let mover = &state.mover;
    state
        .g
        .par_chunks_mut(k)
        .zip(state.log_g.par_chunks_mut(k))
        .enumerate()
        .with_min_len(PAR_MIN_LEN)
        .for_each(|(i, (gi, lgi))| {
            if !mover[i] {
                return;
            }
            let mut rng = key.stream(tag::MEMBERSHIP, i);
            let mut a = alpha.clone();
            for &c in &z[i * j..(i + 1) * j] {
                a[c as usize] += 1.0;
            }
            rng::sample_dirichlet(&a, &mut rng, gi, lgi);
        });
}

/// Outcome of one Metropolis-Hastings step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MhOutcome {
    pub accepted: bool,
    /// The proposal underflowed and was rejected.
    pub underflow: bool,
    /// Some current `xi_k` was below [`XI_FLOOR`].
    pub floored: bool,
}

/// Log full conditional of `alpha0` up to a constant.
///
/// `sum_log_g[k]` is `sum_i log g_ik` over the `n` movers.
pub fn alpha0_log_target(a: f64, xi: &[f64], sum_log_g: &[f64], n: usize, tau: f64, beta: f64) -> f64 {
    let n = n as f64;
    let mut t = (tau - 1.0) * a.ln() - beta * a + n * ln_gamma(a);
    for (&x, &s) in xi.iter().zip(sum_log_g) {
        t += a * x * s - n * ln_gamma(x * a);
    }
    t
}

/// `log r` for moving `alpha0` from `current` to `proposed` under the Gamma(omega, omega / current) proposal.
#[allow(clippy::too_many_arguments)]
pub fn alpha0_log_ratio(
    current: f64,
    proposed: f64,
    xi: &[f64],
    sum_log_g: &[f64],
    n: usize,
    tau: f64,
    beta: f64,
    omega: f64,
) -> f64 {
    let likelihood = alpha0_log_target(proposed, xi, sum_log_g, n, tau, beta)
        - alpha0_log_target(current, xi, sum_log_g, n, tau, beta);
    let q = current / proposed;
    let proposal = (2.0 * omega - 1.0) * q.ln() - omega * (q - 1.0 / q);
    likelihood + proposal
}

/// One MH update of `alpha0` given the column sums of `log g`.
pub fn mh_alpha0(
    state: &mut AugmentedState,
    sums: &(Vec<f64>, usize),
    prior: (f64, f64),
    omega: f64,
    key: SweepKey,
) -> MhOutcome {
    let mut rng = key.stream(tag::ALPHA0, 0);
    let current = state.params.alpha0();
    let proposed = (rng::sample_log_gamma(omega, &mut rng) + (current / omega).ln()).exp();
    if !(proposed > 0.0 && proposed.is_finite()) {
        return MhOutcome { underflow: true, ..Default::default() };
    }
    let log_r = alpha0_log_ratio(current, proposed, state.params.xi(), &sums.0, sums.1, prior.0, prior.1, omega);
    let accepted = rng.random::<f64>().ln() < log_r;
    if accepted {
        state.params.set_alpha0(proposed);
    }
    MhOutcome { accepted, ..Default::default() }
}

/// Log full conditional of `xi` up to a constant (flat prior on the simplex).
pub fn xi_log_target(xi: &[f64], alpha0: f64, sum_log_g: &[f64], n: usize) -> f64 {
    let n = n as f64;
    xi.iter().zip(sum_log_g).map(|(&x, &s)| alpha0 * x * s - n * ln_gamma(x * alpha0)).sum()
}

/// Log density of `Dirichlet(eta K max(from, XI_FLOOR))` at `to`.
fn xi_proposal_log_density(from: &[f64], to: &[f64], eta: f64) -> f64 {
    let scale = eta * from.len() as f64;
    let mut total = 0.0;
    let mut density = 0.0;
    for (&f, &t) in from.iter().zip(to) {
        let c = scale * f.max(XI_FLOOR);
        total += c;
        density += (c - 1.0) * t.ln() - ln_gamma(c);
    }
    density + ln_gamma(total)
}

/// `log r` for moving `xi` from `current` to `proposed` under the Dirichlet random-walk proposal.
pub fn xi_log_ratio(current: &[f64], proposed: &[f64], alpha0: f64, sum_log_g: &[f64], n: usize, eta: f64) -> f64 {
    xi_log_target(proposed, alpha0, sum_log_g, n) - xi_log_target(current, alpha0, sum_log_g, n)
        + xi_proposal_log_density(proposed, current, eta)
        - xi_proposal_log_density(current, proposed, eta)
}

/// One MH update of `xi` given the column sums of `log g`.
pub fn mh_xi(state: &mut AugmentedState, sums: &(Vec<f64>, usize), eta: f64, key: SweepKey) -> MhOutcome {
    let mut rng = key.stream(tag::XI, 0);
    let current = state.params.xi().to_vec();
    let floored = current.iter().any(|&x| x < XI_FLOOR);
    let scale = eta * current.len() as f64;
    let conc: Vec<f64> = current.iter().map(|&x| scale * x.max(XI_FLOOR)).collect();
    let mut proposed = vec![0.0; current.len()];
    let mut log_proposed = vec![0.0; current.len()];
    rng::sample_dirichlet(&conc, &mut rng, &mut proposed, &mut log_proposed);
    if proposed.iter().any(|&x| x <= 0.0) {
        return MhOutcome { underflow: true, floored, ..Default::default() };
    }
    let log_r = xi_log_ratio(&current, &proposed, state.params.alpha0(), &sums.0, sums.1, eta);
    let accepted = rng.random::<f64>().ln() < log_r;
    if accepted {
        state.params.set_xi(&proposed);
    }
    MhOutcome { accepted, floored, ..Default::default() }
}

/// Counts of numerical-guard events.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GuardEvents {
    pub z_fallback: usize,
    pub lambda_clamped: usize,
    pub xi_floored: usize,
    pub alpha0_underflow: usize,
    pub xi_underflow: usize,
}

impl GuardEvents {
    pub fn total(&self) -> usize {
        self.z_fallback + self.lambda_clamped + self.xi_floored + self.alpha0_underflow + self.xi_underflow
    }

    fn add(&mut self, o: &GuardEvents) {
        self.z_fallback += o.z_fallback;
        self.lambda_clamped += o.lambda_clamped;
        self.xi_floored += o.xi_floored;
        self.alpha0_underflow += o.alpha0_underflow;
        self.xi_underflow += o.xi_underflow;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub alpha0: MhOutcome,
    pub xi: MhOutcome,
    pub events: GuardEvents,
}

/// One full sweep over the movers.
pub fn gibbs_sweep(state: &mut AugmentedState, x: &[u8], config: &ChainConfig) -> SweepStats {
    let key = SweepKey { seed: config.seed, sweep: state.sweep_index };
    let z_fallback = impute_z(state, x, key);
    let lambda_clamped = sample_lambda(state, x, config.lambda_prior, key);
    sample_g(state, key);
    let sums = state.membership_log_sums();
    let alpha0 = mh_alpha0(state, &sums, (config.prior_tau, config.prior_beta), config.omega, key);
    let xi = mh_xi(state, &sums, config.eta, key);
    state.sweep_index += 1;
    let events = GuardEvents {
        z_fallback,
        lambda_clamped,
        xi_floored: xi.floored as usize,
        alpha0_underflow: alpha0.underflow as usize,
        xi_underflow: xi.underflow as usize,
    };
    SweepStats { alpha0, xi, events }
}

/// Fills `z` from its complete conditional and returns the state.
fn finish_init(params: GomParams, g: Vec<f64>, x: &[u8], n: usize, seed: u64) -> AugmentedState {
    let (k, j) = (params.k(), params.j());
    let log_g = g.iter().map(|v| v.ln()).collect();
    let mut state =
        AugmentedState { params, n, k, j, g, log_g, z: vec![0; n * j], mover: vec![true; n], sweep_index: 0 };
    impute_z(&mut state, x, SweepKey { seed: rng::derive_seed(seed, tag::INIT, 0, 0), sweep: 0 });
    state
}

/// Initial state from a K-class latent class fit.
///
/// `g_i` starts at the class responsibilities of `i`'s pattern, shrunk by 2%
/// toward the centre so that every `log g_ik` is finite.
pub fn init_from_latent_class(data: &Dataset, k: usize, restarts: usize, alpha0: f64, seed: u64) -> Result<AugmentedState> {
    let fit = lcm::fit_latent_class(data, k, restarts, seed)?;
    let lambda = fit
        .lambda
        .iter()
        .map(|row| row.iter().map(|v| v.clamp(LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP)).collect())
        .collect();
    let total: f64 = fit.weights.iter().sum();
    let xi = fit.weights.iter().map(|w| w / total).collect();
    let params = GomParams::new(lambda, alpha0, xi)?;
    let shrink = 0.02 / k as f64;
    let mut g = Vec::with_capacity(data.n() * k);
    for row in data.rows() {
        g.extend(fit.responsibilities(row).iter().map(|r| 0.98 * r + shrink));
    }
    Ok(finish_init(params, g, &data.flat(), data.n(), seed))
}

/// Initial state for the given policy.
pub fn initialize(data: &Dataset, config: &ChainConfig) -> Result<AugmentedState> {
    let (k, j, n) = (config.k, data.n_items(), data.n());
    let alpha0 = config.initial_alpha0();
    let params = match &config.init {
        InitPolicy::LatentClass { restarts } => {
            return init_from_latent_class(data, k, *restarts, alpha0, config.seed);
        }
        InitPolicy::Random => {
            let mut rng = rng::stream(config.seed, tag::INIT, 1, 0);
            let lambda = (0..k).map(|_| (0..j).map(|_| 0.1 + 0.8 * rng.random::<f64>()).collect()).collect();
            GomParams::new(lambda, alpha0, vec![1.0 / k as f64; k])?
        }
        InitPolicy::User(p) => {
            if p.j() != j {
                return Err(GomError::LengthMismatch { what: "initial profiles (items)", expected: j, got: p.j() });
            }
            p.clone()
        }
    };
    let alpha = params.alpha();
    let mut g = vec![0.0; n * k];
    let mut scratch = vec![0.0; k];
    for (i, gi) in g.chunks_mut(k).enumerate() {
        let mut rng = rng::stream(config.seed, tag::INIT, 2, i as u64);
        rng::sample_dirichlet(&alpha, &mut rng, gi, &mut scratch);
    }
    Ok(finish_init(params, g, &data.flat(), n, config.seed))
}

/// Kept draws and summaries of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainOutput {
    pub n_profiles: usize,
    pub n_items: usize,
    pub n_individuals: usize,
    pub burn_in: usize,
    pub iterations: usize,
    pub thin: usize,
    pub initial: GomParams,
    pub final_params: GomParams,
    /// Row-major `K x J` lambda per kept draw.
    pub lambda: Vec<Vec<f64>>,
    pub alpha0: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
    /// Log-likelihood at each kept draw (mixture form for extended fits).
    pub loglik: Vec<f64>,
    pub accepted_alpha0: Vec<bool>,
    pub accepted_xi: Vec<bool>,
    /// Acceptance rates over all post-burn-in sweeps.
    pub acceptance_alpha0: f64,
    pub acceptance_xi: f64,
    /// Posterior mean of `g` over kept draws, row-major `N x K`.
    pub g_mean: Option<Vec<f64>>,
    pub g_draws: Option<Vec<Vec<f64>>>,
    pub z_draws: Option<Vec<Vec<u8>>>,
    /// Stayer weight per kept draw (extended fits only).
    pub theta1: Option<Vec<f64>>,
    /// All-zero movers per kept draw (extended fits only).
    pub n2: Option<Vec<usize>>,
    pub events: GuardEvents,
}

impl ChainOutput {
    pub fn draws(&self) -> usize {
        self.alpha0.len()
    }

    pub fn view(&self) -> TraceView<'_> {
        TraceView {
            n_profiles: self.n_profiles,
            n_items: self.n_items,
            lambda: &self.lambda,
            alpha0: &self.alpha0,
            xi: &self.xi,
            loglik: &self.loglik,
            theta1: self.theta1.as_deref(),
            n2: self.n2.as_deref(),
            acceptance_alpha0: self.acceptance_alpha0,
            acceptance_xi: self.acceptance_xi,
        }
    }

    /// `(alpha0, xi)` of draw `s` as the Dirichlet vector.
    pub fn alpha(&self, s: usize) -> Vec<f64> {
        self.xi[s].iter().map(|x| x * self.alpha0[s]).collect()
    }
}

/// Kept-draw traces, borrowed from a chain or from trace files.
#[derive(Clone, Copy, Debug)]
pub struct TraceView<'a> {
    pub n_profiles: usize,
    pub n_items: usize,
    pub lambda: &'a [Vec<f64>],
    pub alpha0: &'a [f64],
    pub xi: &'a [Vec<f64>],
    pub loglik: &'a [f64],
    pub theta1: Option<&'a [f64]>,
    pub n2: Option<&'a [usize]>,
    pub acceptance_alpha0: f64,
    pub acceptance_xi: f64,
}

impl TraceView<'_> {
    pub fn draws(&self) -> usize {
        self.alpha0.len()
    }
}

/// Runs the standard chain.
pub fn run_chain(data: &Dataset, config: &ChainConfig) -> Result<ChainOutput> {
    drive(data, config, None)
}

fn state_dump(state: &AugmentedState) -> String {
    let p = &state.params;
    serde_json::json!({ "lambda": p.lambda(), "alpha0": p.alpha0(), "xi": p.xi() }).to_string()
}

pub(crate) fn drive(data: &Dataset, config: &ChainConfig, ext: Option<&ExtendedConfig>) -> Result<ChainOutput> {
    config.validate()?;
    let x = data.flat();
    let mut state = initialize(data, config)?;
    let mut compartments = match ext {
        Some(e) => Some(CompartmentState::new(data, e)?),
        None => None,
    };
    let (n, k, j) = (state.n, state.k, state.j);
    let kept = config.kept_draws();
    let store_latent = config.store_latent && n * k <= STORE_LATENT_LIMIT;
    if config.store_latent && !store_latent {
        warn!("N*K = {} exceeds {STORE_LATENT_LIMIT}; g and z draws will not be stored", n * k);
    }
    let initial = state.params.clone();
    let mut out = ChainOutput {
        n_profiles: k,
        n_items: j,
        n_individuals: n,
        burn_in: config.burn_in,
        iterations: config.iterations,
        thin: config.thin,
        initial: initial.clone(),
        final_params: initial,
        lambda: Vec::with_capacity(kept),
        alpha0: Vec::with_capacity(kept),
        xi: Vec::with_capacity(kept),
        loglik: Vec::with_capacity(kept),
        accepted_alpha0: Vec::with_capacity(kept),
        accepted_xi: Vec::with_capacity(kept),
        acceptance_alpha0: 0.0,
        acceptance_xi: 0.0,
        g_mean: config.accumulate_g_mean.then(|| vec![0.0; n * k]),
        g_draws: store_latent.then(Vec::new),
        z_draws: store_latent.then(Vec::new),
        theta1: compartments.as_ref().map(|_| Vec::with_capacity(kept)),
        n2: compartments.as_ref().map(|_| Vec::with_capacity(kept)),
        events: GuardEvents::default(),
    };
    let (mut acc_a, mut acc_x) = (0usize, 0usize);
    for m in 0..config.burn_in + config.iterations {
        if let Some(cs) = compartments.as_mut() {
            let key = SweepKey { seed: config.seed, sweep: state.sweep_index };
            extended::sample_compartment_indicators(cs, &mut state, key);
        }
        let stats = gibbs_sweep(&mut state, &x, config);
        if let Some(cs) = compartments.as_mut() {
            cs.update_theta();
        }
        out.events.add(&stats.events);
        if m < config.burn_in {
            continue;
        }
        acc_a += stats.alpha0.accepted as usize;
        acc_x += stats.xi.accepted as usize;
        if !(m - config.burn_in + 1).is_multiple_of(config.thin) {
            continue;
        }
        let ll = match &compartments {
            Some(cs) => cs.loglik(&state, &x),
            None => state.loglik(&x),
        };
        if !ll.is_finite() {
            return Err(GomError::NonFiniteLogLikelihood { sweep: m, dump: state_dump(&state) });
        }
        out.lambda.push(state.params.lambda_flat());
        out.alpha0.push(state.params.alpha0());
        out.xi.push(state.params.xi().to_vec());
        out.loglik.push(ll);
        out.accepted_alpha0.push(stats.alpha0.accepted);
        out.accepted_xi.push(stats.xi.accepted);
        if let Some(gm) = out.g_mean.as_mut() {
            gm.iter_mut().zip(&state.g).for_each(|(s, v)| *s += v);
        }
        if let Some(gd) = out.g_draws.as_mut() {
            gd.push(state.g.clone());
        }
        if let Some(zd) = out.z_draws.as_mut() {
            zd.push(state.z.clone());
        }
        if let (Some(cs), Some(t), Some(n2)) = (&compartments, out.theta1.as_mut(), out.n2.as_mut()) {
            t.push(cs.theta1);
            n2.push(cs.n2);
        }
    }
    if config.iterations > 0 {
        out.acceptance_alpha0 = acc_a as f64 / config.iterations as f64;
        out.acceptance_xi = acc_x as f64 / config.iterations as f64;
    }
    let draws = out.draws();
    if let Some(gm) = out.g_mean.as_mut() {
        if draws > 0 {
            gm.iter_mut().for_each(|v| *v /= draws as f64);
        } else {
            gm.copy_from_slice(&state.g);
        }
    }
    if out.events.total() > 0 {
        warn!("numerical guards triggered: {:?}", out.events);
    }
    debug!(
        "chain K={k}: {draws} draws, acceptance alpha0 {:.3}, xi {:.3}",
        out.acceptance_alpha0, out.acceptance_xi
    );
    out.final_params = state.params;
    Ok(out)
}

/// Mean and standard deviation (divisor `S - 1`).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

fn moments<'a>(values: impl Iterator<Item = f64> + Clone + 'a) -> Moments {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    Moments { mean, sd: (ss / (n - 1.0)).sqrt() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummary {
    pub draws: usize,
    /// `K x J`.
    pub lambda: Vec<Vec<Moments>>,
    pub alpha0: Moments,
    pub xi: Vec<Moments>,
    pub theta1: Option<Moments>,
    pub acceptance_alpha0: f64,
    pub acceptance_xi: f64,
}

impl PosteriorSummary {
    /// Posterior means as a parameter set (`xi` renormalized).
    pub fn to_params(&self) -> Result<GomParams> {
        let lambda = self.lambda.iter().map(|row| row.iter().map(|m| m.mean).collect()).collect();
        let s: f64 = self.xi.iter().map(|m| m.mean).sum();
        GomParams::new(lambda, self.alpha0.mean, self.xi.iter().map(|m| m.mean / s).collect())
    }

    pub fn lambda_means(&self) -> Vec<Vec<f64>> {
        self.lambda.iter().map(|row| row.iter().map(|m| m.mean).collect()).collect()
    }

    pub fn lambda_sds(&self) -> Vec<Vec<f64>> {
        self.lambda.iter().map(|row| row.iter().map(|m| m.sd).collect()).collect()
    }
}

pub fn posterior_summary(output: &ChainOutput) -> Result<PosteriorSummary> {
    summarize(&output.view())
}

pub fn summarize(output: &TraceView<'_>) -> Result<PosteriorSummary> {
    let s = output.draws();
    if s < 2 {
        return Err(GomError::InsufficientDraws { needed: 2, have: s });
    }
    let (k, j) = (output.n_profiles, output.n_items);
    let lambda = (0..k)
        .map(|kk| (0..j).map(|jj| moments(output.lambda.iter().map(move |d| d[kk * j + jj]))).collect())
        .collect();
    Ok(PosteriorSummary {
        draws: s,
        lambda,
        alpha0: moments(output.alpha0.iter().copied()),
        xi: (0..k).map(|kk| moments(output.xi.iter().map(move |d| d[kk]))).collect(),
        theta1: output.theta1.map(|t| moments(t.iter().copied())),
        acceptance_alpha0: output.acceptance_alpha0,
        acceptance_xi: output.acceptance_xi,
    })
}
