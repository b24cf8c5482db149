//! Mean-field variational approximation with an approximate EM outer loop.
//!
//! The approximating family is `Dirichlet(gamma_i)` for `g_i` times
//! independent multinomials `phi_ij` for `z_ij`. Individuals with the same
//! response pattern share one set of variational parameters, so the E-step
//! runs once per distinct pattern.

use log::{debug, warn};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{GomError, Result};
use crate::lcm;
use crate::model::{Dataset, GomParams};
use crate::rng::{self, tag};
use crate::special::{digamma, ln_gamma, trigamma};

/// Fitted lambda values are clamped to `[LAMBDA_FLOOR, 1 - LAMBDA_FLOOR]`.
pub const LAMBDA_FLOOR: f64 = 1e-10;
/// Allowed decrease of the bound between outer iterations.
pub const BOUND_SLACK: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub enum VemInit {
    /// Profiles from a latent class fit, `alpha_k = 0.2`.
    LatentClass { restarts: usize },
    /// Uniform random profiles, `alpha_k = 0.2`.
    Random,
    User { lambda: Vec<Vec<f64>>, alpha: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct VemConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Outer loop stops when the bound improves by less than this.
    pub tol: f64,
    pub e_tol: f64,
    pub e_max_iter: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub init: VemInit,
    pub seed: u64,
}

impl Default for VemConfig {
    fn default() -> Self {
        VemConfig {
            k: 2,
            max_iter: 1000,
            tol: 1e-6,
            e_tol: 1e-8,
            e_max_iter: 500,
            newton_tol: 1e-8,
            newton_max_iter: 100,
            init: VemInit::LatentClass { restarts: 10 },
            seed: 0,
        }
    }
}

/// Variational parameters and the current model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState {
    k: usize,
    j: usize,
    /// Distinct patterns, row-major `U x J`.
    patterns: Vec<u8>,
    counts: Vec<f64>,
    /// Pattern index of every individual.
    pattern_of: Vec<usize>,
    /// `U x K`.
    gamma: Vec<f64>,
    /// `U x J x K`.
    phi: Vec<f64>,
    /// Row-major `K x J`.
    lambda: Vec<f64>,
    alpha: Vec<f64>,
    pub lower_bound: f64,
}

impl VariationalState {
    /// Fresh state with `gamma_i = alpha + J / K` and uniform `phi`.
    pub fn new(data: &Dataset, lambda: Vec<Vec<f64>>, alpha: Vec<f64>) -> Result<Self> {
        let k = lambda.len();
        let j = data.n_items();
        if k == 0 {
            return Err(GomError::InvalidParameter("K must be at least 1".into()));
        }
        if alpha.len() != k {
            return Err(GomError::LengthMismatch { what: "alpha", expected: k, got: alpha.len() });
        }
        if alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(GomError::InvalidParameter("alpha entries must be positive".into()));
        }
        for row in &lambda {
            if row.len() != j {
                return Err(GomError::LengthMismatch { what: "lambda row", expected: j, got: row.len() });
            }
        }
        let index: std::collections::BTreeMap<_, usize> =
            data.table().keys().enumerate().map(|(u, p)| (p, u)).collect();
        let patterns: Vec<u8> = data.table().keys().flat_map(|p| p.bits().iter().copied()).collect();
        let counts = data.table().values().map(|&c| c as f64).collect();
        let pattern_of = data.rows().iter().map(|r| index[r]).collect();
        let u = index.len();
        let gamma = (0..u).flat_map(|_| alpha.iter().map(|a| a + j as f64 / k as f64)).collect();
        let phi = vec![1.0 / k as f64; u * j * k];
        let lambda = lambda.iter().flatten().map(|v| v.clamp(LAMBDA_FLOOR, 1.0 - LAMBDA_FLOOR)).collect();
        let mut state = VariationalState { k, j, patterns, counts, pattern_of, gamma, phi, lambda, alpha, lower_bound: 0.0 };
        state.lower_bound = lower_bound(&state)?;
        Ok(state)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn lambda(&self) -> Vec<Vec<f64>> {
        self.lambda.chunks(self.j).map(|c| c.to_vec()).collect()
    }

    /// Current `(lambda, alpha)` as parameters.
    pub fn params(&self) -> Result<GomParams> {
        GomParams::from_alpha(self.lambda(), &self.alpha)
    }

    /// Dirichlet parameters of individual `i`.
    pub fn gamma(&self, i: usize) -> &[f64] {
        let u = self.pattern_of[i];
        &self.gamma[u * self.k..(u + 1) * self.k]
    }

    /// Responsibilities of individual `i` for item `j`.
    pub fn phi(&self, i: usize, j: usize) -> &[f64] {
        let u = self.pattern_of[i];
        let off = (u * self.j + j) * self.k;
        &self.phi[off..off + self.k]
    }

    /// Variational posterior mean of `g_i`.
    pub fn membership_mean(&self, i: usize) -> Vec<f64> {
        let g = self.gamma(i);
        let s: f64 = g.iter().sum();
        g.iter().map(|v| v / s).collect()
    }

    pub fn set_alpha(&mut self, alpha: &[f64]) {
        self.alpha.copy_from_slice(alpha);
    }

    fn pattern(&self, u: usize) -> &[u8] {
        &self.patterns[u * self.j..(u + 1) * self.j]
    }

    /// `sum_i E_q[log g_ik]`.
    pub fn expected_log_g_totals(&self) -> Vec<f64> {
        let k = self.k;
        let mut t = vec![0.0; k];
        for (gam, &c) in self.gamma.chunks(k).zip(&self.counts) {
            let dg0 = digamma(gam.iter().sum());
            for (tk, &gk) in t.iter_mut().zip(gam) {
                *tk += c * (digamma(gk) - dg0);
            }
        }
        t
    }
}

/// Coordinate ascent on `(phi, gamma)` for every distinct pattern.
///
/// Returns the number of patterns that hit the iteration cap.
pub fn e_step(state: &mut VariationalState, tol: f64, max_iter: usize) -> usize {
    let (k, j) = (state.k, state.j);
    let lambda = &state.lambda;
    let alpha = &state.alpha;
    let patterns = &state.patterns;
    state
        .gamma
        .par_chunks_mut(k)
        .zip(state.phi.par_chunks_mut(j * k))
        .enumerate()
        .map(|(u, (gam, phi))| {
            let x = &patterns[u * j..(u + 1) * j];
            let mut w = vec![0.0; k];
            let mut next = vec![0.0; k];
            for _ in 0..max_iter {
                let dg0 = digamma(gam.iter().sum());
                for (wk, &gk) in w.iter_mut().zip(gam.iter()) {
                    *wk = (digamma(gk) - dg0).exp();
                }
                next.copy_from_slice(alpha);
                for (jj, row) in phi.chunks_mut(k).enumerate() {
                    let mut total = 0.0;
                    for kk in 0..k {
                        let l = lambda[kk * j + jj];
                        row[kk] = w[kk] * if x[jj] == 1 { l } else { 1.0 - l };
                        total += row[kk];
                    }
                    for (kk, r) in row.iter_mut().enumerate() {
                        *r /= total;
                        next[kk] += *r;
                    }
                }
                let change = gam.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                gam.copy_from_slice(&next);
                if change < tol {
                    return 0;
                }
            }
            1
        })
        .sum()
}

/// Closed-form maximizer of the bound in lambda. Returns the number of cells left unchanged for lack of mass.
pub fn m_step_lambda(state: &mut VariationalState) -> usize {
    let (k, j) = (state.k, state.j);
    let mut num = vec![0.0; k * j];
    let mut den = vec![0.0; k * j];
    for (u, &c) in state.counts.iter().enumerate() {
        let x = &state.patterns[u * j..(u + 1) * j];
        for jj in 0..j {
            let off = (u * j + jj) * k;
            for kk in 0..k {
                let w = c * state.phi[off + kk];
                den[kk * j + jj] += w;
                if x[jj] == 1 {
                    num[kk * j + jj] += w;
                }
            }
        }
    }
    let mut empty = 0;
    for (cell, l) in state.lambda.iter_mut().enumerate() {
        if den[cell] > 0.0 {
            *l = (num[cell] / den[cell]).clamp(LAMBDA_FLOOR, 1.0 - LAMBDA_FLOOR);
        } else {
            empty += 1;
        }
    }
    if empty > 0 {
        warn!("{empty} lambda cells have no responsibility mass and were left unchanged");
    }
    empty
}

/// Part of the bound that depends on alpha: `N(lnG(a0) - sum lnG(a_k)) + sum (a_k - 1) T_k`.
pub fn alpha_objective(alpha: &[f64], expected_log_g: &[f64], n: f64) -> f64 {
    let a0: f64 = alpha.iter().sum();
    let mut f = n * ln_gamma(a0);
    for (&a, &t) in alpha.iter().zip(expected_log_g) {
        f += (a - 1.0) * t - n * ln_gamma(a);
    }
    f
}

pub fn alpha_gradient(alpha: &[f64], expected_log_g: &[f64], n: f64) -> Vec<f64> {
    let d0 = digamma(alpha.iter().sum());
    alpha.iter().zip(expected_log_g).map(|(&a, &t)| n * (d0 - digamma(a)) + t).collect()
}

/// Dense Hessian `N trigamma(a0) 11' - N diag(trigamma(a_k))`.
pub fn alpha_hessian(alpha: &[f64], n: f64) -> Vec<Vec<f64>> {
    let t0 = n * trigamma(alpha.iter().sum());
    (0..alpha.len())
        .map(|r| (0..alpha.len()).map(|c| t0 - if r == c { n * trigamma(alpha[r]) } else { 0.0 }).collect())
        .collect()
}

/// `H^{-1} g` for `H = diag(q) + z 11'`.
fn newton_direction(alpha: &[f64], grad: &[f64], n: f64) -> Vec<f64> {
    let z = n * trigamma(alpha.iter().sum());
    let q: Vec<f64> = alpha.iter().map(|&a| -n * trigamma(a)).collect();
    let num: f64 = grad.iter().zip(&q).map(|(g, q)| g / q).sum();
    let den: f64 = 1.0 / z + q.iter().map(|q| 1.0 / q).sum::<f64>();
    let b = num / den;
    grad.iter().zip(&q).map(|(g, q)| (g - b) / q).collect()
}

/// Newton-Raphson on alpha with step halving. Returns the iterations used.
pub fn m_step_alpha(state: &mut VariationalState, tol: f64, max_iter: usize) -> Result<usize> {
    let t = state.expected_log_g_totals();
    let n = state.n();
    if t.iter().any(|v| !v.is_finite()) {
        return Err(GomError::Numerical("non-finite digamma terms in the alpha update".into()));
    }
    let mut alpha = state.alpha.clone();
    let mut f = alpha_objective(&alpha, &t, n);
    for it in 0..max_iter {
        let grad = alpha_gradient(&alpha, &t, n);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(GomError::Numerical(format!("non-finite alpha gradient at {alpha:?}")));
        }
        if grad.iter().all(|g| g.abs() < tol) {
            state.alpha = alpha;
            return Ok(it);
        }
        let dir = newton_direction(&alpha, &grad, n);
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = alpha.iter().zip(&dir).map(|(a, d)| a - step * d).collect();
            if cand.iter().all(|&a| a > 0.0 && a.is_finite()) {
                let fc = alpha_objective(&cand, &t, n);
                if fc >= f {
                    moved = fc > f || cand != alpha;
                    alpha = cand;
                    f = fc;
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            state.alpha = alpha;
            return Ok(it + 1);
        }
    }
    state.alpha = alpha;
    Ok(max_iter)
}

/// Evidence lower bound summed over individuals.
pub fn lower_bound(state: &VariationalState) -> Result<f64> {
    let (k, j) = (state.k, state.j);
    let alpha = &state.alpha;
    let a0: f64 = alpha.iter().sum();
    let prior_norm = ln_gamma(a0) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
    let terms: Vec<f64> = (0..state.counts.len())
        .into_par_iter()
        .map(|u| {
            let gam = &state.gamma[u * k..(u + 1) * k];
            let phi = &state.phi[u * j * k..(u + 1) * j * k];
            let x = state.pattern(u);
            let g0: f64 = gam.iter().sum();
            let dg0 = digamma(g0);
            let elog: Vec<f64> = gam.iter().map(|&g| digamma(g) - dg0).collect();
            let mut b = prior_norm - ln_gamma(g0);
            for kk in 0..k {
                b += (alpha[kk] - gam[kk]) * elog[kk] + ln_gamma(gam[kk]);
            }
            for jj in 0..j {
                for kk in 0..k {
                    let p = phi[jj * k + kk];
                    if p > 0.0 {
                        let l = state.lambda[kk * j + jj];
                        let lik = if x[jj] == 1 { l } else { 1.0 - l };
                        b += p * (elog[kk] + lik.ln() - p.ln());
                    }
                }
            }
            state.counts[u] * b
        })
        .collect();
    if let Some(u) = terms.iter().position(|t| !t.is_finite()) {
        let i = state.pattern_of.iter().position(|&p| p == u).unwrap_or(u);
        return Err(GomError::Numerical(format!("non-finite lower-bound term for individual {i}")));
    }
    Ok(terms.iter().sum())
}

#[derive(Clone, Debug)]
pub struct VemFit {
    pub params: GomParams,
    pub state: VariationalState,
    /// Bound after every outer iteration.
    pub bound_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Pattern E-steps that hit their iteration cap, summed over outer iterations.
    pub e_step_capped: usize,
}

impl VemFit {
    pub fn lower_bound(&self) -> f64 {
        self.state.lower_bound
    }
}

fn initial_state(data: &Dataset, config: &VemConfig) -> Result<VariationalState> {
    let k = config.k;
    let (lambda, alpha) = match &config.init {
        VemInit::LatentClass { restarts } => {
            let fit = lcm::fit_latent_class(data, k, *restarts, config.seed)?;
            (fit.lambda, vec![0.2; k])
        }
        VemInit::Random => {
            let mut rng = rng::stream(config.seed, tag::VEM, 0, 0);
            let lambda = (0..k).map(|_| (0..data.n_items()).map(|_| 0.1 + 0.8 * rng.random::<f64>()).collect()).collect();
            (lambda, vec![0.2; k])
        }
        VemInit::User { lambda, alpha } => {
            if lambda.len() != k {
                return Err(GomError::LengthMismatch { what: "initial profiles", expected: k, got: lambda.len() });
            }
            (lambda.clone(), alpha.clone())
        }
    };
    VariationalState::new(data, lambda, alpha)
}

/// Alternates E-step, lambda step and alpha step until the bound stalls.
pub fn fit_vem(data: &Dataset, config: &VemConfig) -> Result<VemFit> {
    if config.k == 0 {
        return Err(GomError::InvalidParameter("K must be at least 1".into()));
    }
    resume_vem(initial_state(data, config)?, config)
}

/// Continues the outer loop from an existing state, keeping its `gamma` and `phi` as warm starts.
pub fn resume_vem(mut state: VariationalState, config: &VemConfig) -> Result<VemFit> {
    let mut trace: Vec<f64> = Vec::new();
    let mut capped = 0;
    let mut converged = false;
    let mut prev = f64::NEG_INFINITY;
    for it in 1..=config.max_iter {
        capped += e_step(&mut state, config.e_tol, config.e_max_iter);
        m_step_lambda(&mut state);
        m_step_alpha(&mut state, config.newton_tol, config.newton_max_iter)?;
        let b = lower_bound(&state)?;
        state.lower_bound = b;
        if b < prev - BOUND_SLACK {
            return Err(GomError::BoundDecrease { iteration: it, from: prev, to: b });
        }
        trace.push(b);
        if b - prev < config.tol {
            converged = true;
            break;
        }
        prev = b;
    }
    if capped > 0 {
        warn!("{capped} pattern E-steps reached the inner iteration cap");
    }
    if !converged {
        warn!("variational EM did not converge in {} iterations", config.max_iter);
    }
    debug!("VEM K={}: bound {:.6} after {} iterations", state.k, state.lower_bound, trace.len());
    Ok(VemFit { params: state.params()?, iterations: trace.len(), state, bound_trace: trace, converged, e_step_capped: capped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate_dataset, Preset};
    use crate::model::ResponsePattern;
    use crate::prob::{marginal_pattern_prob_exact, random_params};
    use std::collections::BTreeMap;

    fn toy_data(params: &GomParams, n: usize, seed: u64) -> Dataset {
        generate_dataset(params, n, seed, None).unwrap().0
    }

    fn exact_loglik(params: &GomParams, data: &Dataset) -> f64 {
        data.table().iter().map(|(p, &c)| c as f64 * marginal_pattern_prob_exact(params, p).unwrap().ln()).sum()
    }

    #[test]
    fn single_profile_bound_is_exact() {
        let p = GomParams::new(vec![vec![0.2, 0.7, 0.4]], 1.0, vec![1.0]).unwrap();
        let d = toy_data(&p, 300, 1);
        let fit = fit_vem(&d, &VemConfig { k: 1, ..Default::default() }).unwrap();
        let means = d.item_means();
        for (a, b) in fit.state.lambda()[0].iter().zip(&means) {
            assert!((a - b).abs() < 1e-12);
        }
        let exact = exact_loglik(&fit.params, &d);
        assert!((fit.lower_bound() - exact).abs() < 1e-8 * exact.abs());
    }

    #[test]
    fn e_step_fixed_point_identities() {
        let mut rng = rng::stream(3, 0, 0, 0);
        let p = random_params(3, 5, &mut rng);
        let d = toy_data(&p, 200, 2);
        let mut st = VariationalState::new(&d, p.lambda().to_vec(), p.alpha()).unwrap();
        e_step(&mut st, 1e-12, 5000);
        for i in 0..d.n() {
            let mut sum = st.alpha().to_vec();
            for jj in 0..5 {
                let row = st.phi(i, jj);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                sum.iter_mut().zip(row).for_each(|(s, r)| *s += r);
            }
            for (a, b) in sum.iter().zip(st.gamma(i)) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn constant_lambda_column_uses_digamma_weights_only() {
        let p = GomParams::from_alpha(vec![vec![0.3, 0.9], vec![0.3, 0.1]], &[0.4, 0.7]).unwrap();
        let d = toy_data(&p, 50, 3);
        let mut st = VariationalState::new(&d, p.lambda().to_vec(), p.alpha()).unwrap();
        e_step(&mut st, 1e-12, 5000);
        let g = st.gamma(0);
        let w: Vec<f64> = g.iter().map(|&v| (digamma(v) - digamma(g.iter().sum())).exp()).collect();
        let s: f64 = w.iter().sum();
        for (a, b) in st.phi(0, 0).iter().zip(&w) {
            assert!((a - b / s).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_point_matches_damped_iteration() {
        // J = 1, K = 2, a single individual answering 1
        let lambda = [0.8, 0.3];
        let alpha = [0.5, 1.5];
        let mut table = BTreeMap::new();
        table.insert(ResponsePattern::new(vec![1]).unwrap(), 1);
        let d = Dataset::from_table(table, None).unwrap();
        let mut st = VariationalState::new(&d, vec![vec![lambda[0]], vec![lambda[1]]], alpha.to_vec()).unwrap();
        e_step(&mut st, 1e-14, 10_000);
        for start in [[0.01, 0.99], [0.5, 0.5], [0.99, 0.01]] {
            let mut phi = start;
            for _ in 0..200 {
                let g = [alpha[0] + phi[0], alpha[1] + phi[1]];
                let w: Vec<f64> =
                    (0..2).map(|k| lambda[k] * (digamma(g[k]) - digamma(g[0] + g[1])).exp()).collect();
                let s = w[0] + w[1];
                phi = [0.5 * phi[0] + 0.5 * w[0] / s, 0.5 * phi[1] + 0.5 * w[1] / s];
            }
            assert!((phi[0] - st.phi(0, 0)[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn lambda_step_special_cases() {
        let p = GomParams::new(vec![vec![0.5; 3]], 1.0, vec![1.0]).unwrap();
        let d = toy_data(&p, 100, 4);
        let mut st = VariationalState::new(&d, vec![vec![0.5; 3]], vec![1.0]).unwrap();
        m_step_lambda(&mut st);
        for (a, b) in st.lambda()[0].iter().zip(d.item_means()) {
            assert!((a - b.clamp(LAMBDA_FLOOR, 1.0 - LAMBDA_FLOOR)).abs() < 1e-12);
        }
        // mass on a single individual
        let mut table = BTreeMap::new();
        table.insert(ResponsePattern::new(vec![1, 0, 1]).unwrap(), 1);
        let d = Dataset::from_table(table, None).unwrap();
        let mut st = VariationalState::new(&d, vec![vec![0.5; 3], vec![0.5; 3]], vec![1.0, 1.0]).unwrap();
        m_step_lambda(&mut st);
        assert_eq!(st.lambda()[0], vec![1.0 - LAMBDA_FLOOR, LAMBDA_FLOOR, 1.0 - LAMBDA_FLOOR]);
    }

    #[test]
    fn each_step_increases_the_bound() {
        for seed in 0..10 {
            let mut rng = rng::stream(seed, 1, 0, 0);
            let p = random_params(3, 6, &mut rng);
            let d = toy_data(&p, 150, seed);
            let q = random_params(3, 6, &mut rng);
            let mut st = VariationalState::new(&d, q.lambda().to_vec(), q.alpha()).unwrap();
            let mut b = st.lower_bound;
            for _ in 0..5 {
                e_step(&mut st, 1e-10, 500);
                let b1 = lower_bound(&st).unwrap();
                m_step_lambda(&mut st);
                let b2 = lower_bound(&st).unwrap();
                m_step_alpha(&mut st, 1e-8, 100).unwrap();
                let b3 = lower_bound(&st).unwrap();
                assert!(b1 >= b - 1e-8 && b2 >= b1 - 1e-8 && b3 >= b2 - 1e-8, "{b} {b1} {b2} {b3}");
                b = b3;
            }
        }
    }

    #[test]
    fn stationary_alpha_is_unchanged() {
        // gamma proportional to alpha with one identical pattern makes the expected log g equal the prior's
        let alpha = vec![0.7, 1.3, 2.0];
        let t: Vec<f64> = alpha.iter().map(|&a| 10.0 * (digamma(a) - digamma(4.0))).collect();
        let g = alpha_gradient(&alpha, &t, 10.0);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    fn random_vem_state(seed: u64) -> VariationalState {
        let mut rng = rng::stream(seed, 2, 0, 0);
        let p = random_params(3, 4, &mut rng);
        let d = toy_data(&p, 80, seed);
        let mut st = VariationalState::new(&d, p.lambda().to_vec(), p.alpha()).unwrap();
        e_step(&mut st, 1e-10, 500);
        let q = random_params(3, 4, &mut rng);
        st.set_alpha(&q.alpha());
        st
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut st = random_vem_state(seed);
            let t = st.expected_log_g_totals();
            let alpha = st.alpha().to_vec();
            let grad = alpha_gradient(&alpha, &t, st.n());
            for k in 0..alpha.len() {
                let h = 1e-5 * alpha[k];
                let mut a = alpha.clone();
                a[k] += h;
                st.set_alpha(&a);
                let up = lower_bound(&st).unwrap();
                a[k] -= 2.0 * h;
                st.set_alpha(&a);
                let down = lower_bound(&st).unwrap();
                st.set_alpha(&alpha);
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grad[k]).abs() < 1e-5 * grad[k].abs().max(1.0), "{fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        for seed in 0..20 {
            let st = random_vem_state(seed);
            let t = st.expected_log_g_totals();
            let alpha = st.alpha().to_vec();
            let hess = alpha_hessian(&alpha, st.n());
            for c in 0..alpha.len() {
                let h = 1e-6 * alpha[c];
                let mut a = alpha.clone();
                a[c] += h;
                let up = alpha_gradient(&a, &t, st.n());
                a[c] -= 2.0 * h;
                let down = alpha_gradient(&a, &t, st.n());
                for r in 0..alpha.len() {
                    let fd = (up[r] - down[r]) / (2.0 * h);
                    assert!((fd - hess[r][c]).abs() < 1e-4 * hess[r][c].abs().max(1.0), "{fd} vs {}", hess[r][c]);
                }
            }
        }
    }

    #[test]
    fn bound_never_exceeds_exact_loglik() {
        for seed in 0..30 {
            let mut rng = rng::stream(seed, 3, 0, 0);
            let j = 1 + (seed as usize % 3);
            let p = random_params(2, j, &mut rng);
            let d = toy_data(&p, 60, seed);
            let mut st = VariationalState::new(&d, p.lambda().to_vec(), p.alpha()).unwrap();
            e_step(&mut st, 1e-12, 2000);
            let b = lower_bound(&st).unwrap();
            let exact = exact_loglik(&p, &d);
            assert!(b < exact, "seed {seed}: bound {b} exact {exact}");
        }
    }

    #[test]
    fn bound_is_invariant_to_row_order() {
        let mut rng = rng::stream(4, 4, 0, 0);
        let p = random_params(2, 4, &mut rng);
        let d = toy_data(&p, 100, 9);
        let mut rows = d.rows().to_vec();
        rows.reverse();
        let r = Dataset::from_rows(rows, None).unwrap();
        let cfg = VemConfig { k: 2, init: VemInit::User { lambda: p.lambda().to_vec(), alpha: p.alpha() }, ..Default::default() };
        let a = fit_vem(&d, &cfg).unwrap();
        let b = fit_vem(&r, &cfg).unwrap();
        assert_eq!(a.lower_bound(), b.lower_bound());
    }

    #[test]
    fn restart_from_solution_converges_immediately() {
        let d = toy_data(&Preset::Scenario1.params(), 1000, 6);
        let cfg = VemConfig { k: 3, seed: 1, ..Default::default() };
        let fit = fit_vem(&d, &cfg).unwrap();
        assert!(fit.converged);
        for w in fit.bound_trace.windows(2) {
            assert!(w[1] >= w[0] - BOUND_SLACK);
        }
        let refit = resume_vem(fit.state.clone(), &cfg).unwrap();
        assert!(refit.converged && refit.iterations <= 2, "{} iterations", refit.iterations);
    }
}
