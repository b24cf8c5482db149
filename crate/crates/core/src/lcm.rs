//! K-class latent class model fitted by EM, used to initialize the GoM fits.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{GomError, Result};
use crate::model::{Dataset, ResponsePattern};
use crate::rng::{self, tag};

const MAX_ITER: usize = 1000;
const REL_TOL: f64 = 1e-10;
const MAX_ATTEMPTS: u64 = 50;
/// A class whose weight falls below this is considered empty.
const EMPTY_CLASS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct LatentClassFit {
    pub weights: Vec<f64>,
    /// `K x J` conditional response probabilities.
    pub lambda: Vec<Vec<f64>>,
    pub loglik: f64,
    /// Log-likelihood after every EM iteration.
    pub loglik_trace: Vec<f64>,
}

impl LatentClassFit {
    /// Posterior class probabilities for one pattern.
    pub fn responsibilities(&self, pattern: &ResponsePattern) -> Vec<f64> {
        let logw: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.lambda)
            .map(|(&w, row)| w.ln() + row_loglik(row, pattern.bits()))
            .collect();
        normalize_log(&logw)
    }
}

fn row_loglik(row: &[f64], x: &[u8]) -> f64 {
    row.iter().zip(x).map(|(&l, &b)| if b == 1 { l.ln() } else { (1.0 - l).ln() }).sum()
}

fn normalize_log(logw: &[f64]) -> Vec<f64> {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Fits the latent class model from `restarts` random starts and keeps the best log-likelihood.
pub fn fit_latent_class(data: &Dataset, k: usize, restarts: usize, seed: u64) -> Result<LatentClassFit> {
    if k == 0 {
        return Err(GomError::InvalidParameter("K must be at least 1".into()));
    }
    let patterns: Vec<&ResponsePattern> = data.table().keys().collect();
    let counts: Vec<f64> = data.table().values().map(|&c| c as f64).collect();
    let fits: Vec<Option<LatentClassFit>> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            (0..MAX_ATTEMPTS).find_map(|attempt| {
                let mut rng = rng::stream(seed, tag::LCM_RESTART, r, attempt);
                em_run(&patterns, &counts, data.n_items(), k, &mut rng)
            })
        })
        .collect();
    fits.into_iter()
        .flatten()
        .fold(None, |best: Option<LatentClassFit>, f| match best {
            Some(b) if b.loglik >= f.loglik => Some(b),
            _ => Some(f),
        })
        .ok_or_else(|| GomError::Numerical(format!("latent class EM left a class empty in every restart (K = {k})")))
}

fn em_run<R: Rng>(patterns: &[&ResponsePattern], counts: &[f64], j: usize, k: usize, rng: &mut R) -> Option<LatentClassFit> {
    let n: f64 = counts.iter().sum();
    let mut weights = vec![1.0 / k as f64; k];
    let mut lambda: Vec<Vec<f64>> = (0..k).map(|_| (0..j).map(|_| 0.1 + 0.8 * rng.random::<f64>()).collect()).collect();
    let mut trace = Vec::new();
    let mut resp = vec![vec![0.0; k]; patterns.len()];
    for _ in 0..MAX_ITER {
        // E step
        let mut ll = 0.0;
        for (u, pat) in patterns.iter().enumerate() {
            let logw: Vec<f64> = (0..k).map(|c| weights[c].ln() + row_loglik(&lambda[c], pat.bits())).collect();
            let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (r, lw) in resp[u].iter_mut().zip(&logw) {
                *r = (lw - max).exp();
                s += *r;
            }
            resp[u].iter_mut().for_each(|r| *r /= s);
            ll += counts[u] * (max + s.ln());
        }
        // M step
        let mut mass = vec![0.0; k];
        let mut pos = vec![vec![0.0; j]; k];
        for (u, pat) in patterns.iter().enumerate() {
            for c in 0..k {
                let w = counts[u] * resp[u][c];
                mass[c] += w;
                for (jj, &b) in pat.bits().iter().enumerate() {
                    if b == 1 {
                        pos[c][jj] += w;
                    }
                }
            }
        }
        if mass.iter().any(|&m| m / n < EMPTY_CLASS) {
            return None;
        }
        for c in 0..k {
            weights[c] = mass[c] / n;
            for jj in 0..j {
                lambda[c][jj] = pos[c][jj] / mass[c];
            }
        }
        let done = trace.last().is_some_and(|&prev: &f64| (ll - prev).abs() <= REL_TOL * ll.abs());
        trace.push(ll);
        if done {
            break;
        }
    }
    let loglik = *trace.last()?;
    Some(LatentClassFit { weights, lambda, loglik, loglik_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::generate_dataset;
    use crate::model::GomParams;

    #[test]
    fn single_class_is_item_means() {
        let p = GomParams::new(vec![vec![0.2, 0.6, 0.9]], 1.0, vec![1.0]).unwrap();
        let (d, _) = generate_dataset(&p, 500, 1, None).unwrap();
        let fit = fit_latent_class(&d, 1, 3, 7).unwrap();
        assert_eq!(fit.weights, vec![1.0]);
        for (a, b) in fit.lambda[0].iter().zip(d.item_means()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loglik_never_decreases() {
        let (d, _) = generate_dataset(&crate::generate::Preset::Scenario1.params(), 1000, 2, None).unwrap();
        let fit = fit_latent_class(&d, 3, 4, 11).unwrap();
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn recovers_planted_classes() {
        // alpha0 near zero: every individual sits at a vertex, i.e. a latent class model
        let truth = vec![vec![0.9, 0.8, 0.85, 0.1, 0.2, 0.9], vec![0.1, 0.15, 0.2, 0.8, 0.9, 0.05]];
        let p = GomParams::new(truth.clone(), 1e-4, vec![0.6, 0.4]).unwrap();
        let (d, _) = generate_dataset(&p, 2000, 5, None).unwrap();
        let fit = fit_latent_class(&d, 2, 10, 3).unwrap();
        let (a, b) = if fit.lambda[0][0] > fit.lambda[1][0] { (0, 1) } else { (1, 0) };
        for (est, want) in [(&fit.lambda[a], &truth[0]), (&fit.lambda[b], &truth[1])] {
            assert!(est.iter().zip(want).all(|(e, w)| (e - w).abs() < 0.05));
        }
        assert!((fit.weights[a] - 0.6).abs() < 0.05);
    }
}
