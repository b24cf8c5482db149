//! Exact and Monte Carlo probability computations for the GoM model and its
//! latent-class representation.

use rand::Rng;

use crate::error::{GomError, Result};
use crate::model::{Dataset, GomParams, LatentClassification, MembershipVector, ResponsePattern};
use crate::rng::{self, tag};
use crate::special::ln_gamma;

/// Largest `K^J` that [`marginal_pattern_prob_exact`] will enumerate.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;

/// Above this many items the class measure switches from rising factorials to log-gamma differences.
const RISING_FACTORIAL_MAX_J: usize = 20;

fn check_pattern(params: &GomParams, l: &ResponsePattern) -> Result<()> {
    if l.len() != params.j() {
        return Err(GomError::LengthMismatch { what: "response pattern", expected: params.j(), got: l.len() });
    }
    Ok(())
}

fn check_membership(params: &GomParams, g: &MembershipVector) -> Result<()> {
    if g.k() != params.k() {
        return Err(GomError::LengthMismatch { what: "membership vector", expected: params.k(), got: g.k() });
    }
    Ok(())
}

/// `Pr(x_j = 1 | g) = sum_k g_k lambda_kj`. Items are numbered from 0.
pub fn conditional_response_prob(params: &GomParams, g: &MembershipVector, j: usize) -> Result<f64> {
    check_membership(params, g)?;
    if j >= params.j() {
        return Err(GomError::IndexOutOfRange { what: "item", index: j, len: params.j() });
    }
    let p: f64 = g.as_slice().iter().zip(params.lambda()).map(|(gk, row)| gk * row[j]).sum();
    Ok(p.clamp(0.0, 1.0))
}

/// Probability of pattern `x` for a membership vector `g` (row-major lambda, `K x J`).
///
/// Each item factor is divided by `sum_k g_k`, which is one up to rounding;
/// this keeps constant lambda columns exact.
pub(crate) fn pattern_prob_raw(lambda: &[f64], n_items: usize, g: &[f64], x: &[u8]) -> f64 {
    let gsum: f64 = g.iter().sum();
    let mut prob = 1.0;
    for (j, &xj) in x.iter().enumerate() {
        let mut p = 0.0;
        for (k, gk) in g.iter().enumerate() {
            let l = lambda[k * n_items + j];
            p += gk * if xj == 1 { l } else { 1.0 - l };
        }
        prob *= p / gsum;
    }
    prob
}

/// `log f(x | g) = sum_j log sum_k g_k lambda_kj^x (1 - lambda_kj)^(1-x)`.
pub(crate) fn pattern_log_prob_raw(lambda: &[f64], n_items: usize, g: &[f64], x: &[u8]) -> f64 {
    let mut ll = 0.0;
    for (j, &xj) in x.iter().enumerate() {
        let mut p = 0.0;
        for (k, gk) in g.iter().enumerate() {
            let l = lambda[k * n_items + j];
            p += gk * if xj == 1 { l } else { 1.0 - l };
        }
        ll += p.ln();
    }
    ll
}

/// Local-independence probability `f(l | g)`.
pub fn pattern_prob_given_g(params: &GomParams, g: &MembershipVector, l: &ResponsePattern) -> Result<f64> {
    check_membership(params, g)?;
    check_pattern(params, l)?;
    Ok(pattern_prob_raw(&params.lambda_flat(), params.j(), g.as_slice(), l.bits()))
}

/// Closed-form class measure `pi_z = E[prod_j g_{z_j}]` under `Dirichlet(alpha0 xi)`.
pub fn dirichlet_product_moment(params: &GomParams, z: &LatentClassification) -> Result<f64> {
    if z.as_slice().len() != params.j() {
        return Err(GomError::LengthMismatch { what: "classification", expected: params.j(), got: z.as_slice().len() });
    }
    if let Some(&bad) = z.as_slice().iter().find(|&&k| k >= params.k()) {
        return Err(GomError::IndexOutOfRange { what: "profile", index: bad, len: params.k() });
    }
    let alpha = params.alpha();
    let mut counts = vec![0usize; params.k()];
    for &k in z.as_slice() {
        counts[k] += 1;
    }
    Ok(log_class_measure(&alpha, &counts).exp())
}

/// `log pi_z` from profile counts `m_k`.
fn log_class_measure(alpha: &[f64], counts: &[usize]) -> f64 {
    let alpha0: f64 = alpha.iter().sum();
    let total: usize = counts.iter().sum();
    if total > RISING_FACTORIAL_MAX_J {
        let num: f64 = alpha
            .iter()
            .zip(counts)
            .map(|(&a, &m)| ln_gamma(a + m as f64) - ln_gamma(a))
            .sum();
        return num - (ln_gamma(alpha0 + total as f64) - ln_gamma(alpha0));
    }
    let mut log_num = 0.0;
    for (&a, &m) in alpha.iter().zip(counts) {
        for t in 0..m {
            log_num += (a + t as f64).ln();
        }
    }
    let log_den: f64 = (0..total).map(|t| (alpha0 + t as f64).ln()).sum();
    log_num - log_den
}

/// Exact marginal probability through the `K^J`-class latent class expansion.
pub fn marginal_pattern_prob_exact(params: &GomParams, l: &ResponsePattern) -> Result<f64> {
    check_pattern(params, l)?;
    let (k, j) = (params.k(), params.j());
    let size = (k as u64).checked_pow(j as u32).unwrap_or(u64::MAX);
    if size > ENUMERATION_LIMIT {
        return Err(GomError::EnumerationTooLarge { k, j, limit: ENUMERATION_LIMIT });
    }
    let alpha = params.alpha();
    let x = l.bits();
    // item likelihood under each profile
    let lik: Vec<Vec<f64>> = params
        .lambda()
        .iter()
        .map(|row| row.iter().zip(x).map(|(&lam, &xj)| if xj == 1 { lam } else { 1.0 - lam }).collect())
        .collect();
    let mut z = vec![0usize; j];
    let mut counts = vec![0usize; k];
    counts[0] = j;
    let mut total = 0.0;
    loop {
        let mut cond = 1.0;
        for (jj, &zk) in z.iter().enumerate() {
            cond *= lik[zk][jj];
        }
        if cond != 0.0 {
            total += log_class_measure(&alpha, &counts).exp() * cond;
        }
        // odometer increment, last item fastest
        let mut pos = j;
        loop {
            if pos == 0 {
                return Ok(total);
            }
            pos -= 1;
            counts[z[pos]] -= 1;
            z[pos] += 1;
            if z[pos] < k {
                counts[z[pos]] += 1;
                break;
            }
            z[pos] = 0;
            counts[0] += 1;
        }
    }
}

/// Monte Carlo estimate of the marginal pattern probability and its standard error.
pub fn marginal_pattern_prob_mc(params: &GomParams, l: &ResponsePattern, draws: usize, seed: u64) -> Result<(f64, f64)> {
    check_pattern(params, l)?;
    if draws == 0 {
        return Err(GomError::InvalidParameter("draws must be at least 1".into()));
    }
    let alpha = params.alpha();
    let lambda = params.lambda_flat();
    let mut rng = rng::stream(seed, tag::MONTE_CARLO, 0, 0);
    let mut g = vec![0.0; params.k()];
    let mut lg = vec![0.0; params.k()];
    let values: Vec<f64> = (0..draws)
        .map(|_| {
            rng::sample_dirichlet(&alpha, &mut rng, &mut g, &mut lg);
            pattern_prob_raw(&lambda, params.j(), &g, l.bits())
        })
        .collect();
    Ok(mean_and_se(&values))
}

/// Sample mean and standard error of the mean (zero for a single value).
pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// K-class latent class model probability `sum_k pi_k prod_j lambda_kj^x (1-lambda_kj)^(1-x)`.
pub fn latent_class_pattern_prob(weights: &[f64], lambda: &[Vec<f64>], l: &ResponsePattern) -> Result<f64> {
    if weights.len() != lambda.len() {
        return Err(GomError::LengthMismatch { what: "class weights", expected: lambda.len(), got: weights.len() });
    }
    let mut w = weights.to_vec();
    crate::model::check_simplex("class weights", &mut w)?;
    let mut total = 0.0;
    for (pk, row) in w.iter().zip(lambda) {
        if row.len() != l.len() {
            return Err(GomError::LengthMismatch { what: "response pattern", expected: row.len(), got: l.len() });
        }
        let prod: f64 = row
            .iter()
            .zip(l.bits())
            .map(|(&lam, &x)| if x == 1 { lam } else { 1.0 - lam })
            .product();
        total += pk * prod;
    }
    Ok(total)
}

/// Profile response probabilities relative to the sample item means, `lambda_kj / mean_j`.
pub fn relative_frequencies(params: &GomParams, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    if data.n_items() != params.j() {
        return Err(GomError::LengthMismatch { what: "dataset items", expected: params.j(), got: data.n_items() });
    }
    let means = data.item_means();
    if let Some(item) = means.iter().position(|&m| m <= 0.0) {
        return Err(GomError::ZeroMarginal {
            item,
            label: data.item_labels().map(|l| l[item].clone()),
        });
    }
    Ok(relative_to_means(params.lambda(), &means))
}

pub(crate) fn relative_to_means(lambda: &[Vec<f64>], means: &[f64]) -> Vec<Vec<f64>> {
    lambda
        .iter()
        .map(|row| row.iter().zip(means).map(|(l, m)| l / m).collect())
        .collect()
}

/// Random model for property checks: uniform lambda, log-uniform alpha0 in [0.2, 5], xi ~ Dirichlet(1).
pub fn random_params<R: Rng + ?Sized>(k: usize, j: usize, rng: &mut R) -> GomParams {
    let lambda = (0..k).map(|_| (0..j).map(|_| rng.random::<f64>()).collect()).collect();
    let alpha0 = (0.2f64.ln() + rng.random::<f64>() * (5.0f64.ln() - 0.2f64.ln())).exp();
    let mut xi = rng::dirichlet_vec(&vec![1.0; k], rng);
    // keep strictly inside the simplex
    xi.iter_mut().for_each(|x| *x = x.max(1e-6));
    let s: f64 = xi.iter().sum();
    xi.iter_mut().for_each(|x| *x /= s);
    GomParams::new(lambda, alpha0, xi).expect("valid random parameters")
}
