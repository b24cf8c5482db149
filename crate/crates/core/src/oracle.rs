//! Quadrature of the individual-level mixture integral, used to check the
//! latent-class expansion independently.
//!
//! Dirichlet expectations are computed by stick-breaking into nested Beta
//! expectations, each integrated with adaptive Gauss-Kronrod (7/15 points).
//! Beta weights with a shape below one are handled by the substitution
//! `x = t^(1/a)`, which removes the endpoint singularity. The Beta
//! normalizing constant is itself obtained by quadrature, so the oracle does
//! not touch the gamma function.

use std::f64::consts::SQRT_2;

use serde::Serialize;

use crate::error::{GomError, Result};
use crate::model::{GomParams, ResponsePattern};
use crate::prob::{marginal_pattern_prob_exact, marginal_pattern_prob_mc, random_params, ENUMERATION_LIMIT};
use crate::rng::{self, tag};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

const MAX_DEPTH: u32 = 48;
const ROUNDOFF: f64 = 1e-14;
const INNER_TOL_FACTOR: f64 = 1e-2;

fn gk15<F: FnMut(f64, f64, &mut [f64])>(f: &mut F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> (Vec<f64>, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    for i in 0..8 {
        let nodes: &[f64] = if i == 7 { &[0.0] } else { &[-1.0, 1.0] };
        for &s in nodes {
            let x = c + s * h * XGK[i];
            f(x, 1.0 - x, buf);
            for d in 0..dim {
                kron[d] += WGK[i] * buf[d];
                if i % 2 == 1 {
                    gauss[d] += WG[i / 2] * buf[d];
                }
            }
        }
    }
    let mut err: f64 = 0.0;
    for d in 0..dim {
        kron[d] *= h;
        gauss[d] *= h;
        err = err.max((kron[d] - gauss[d]).abs());
    }
    (kron, err)
}

/// Integrates a vector-valued function over `[a, b]` to absolute tolerance `tol`.
///
/// The integrand receives `(x, 1 - x)` so callers near the right endpoint can
/// avoid cancellation when the second argument is recomputed more accurately.
pub fn integrate<F: FnMut(f64, f64, &mut [f64])>(mut f: F, a: f64, b: f64, dim: usize, tol: f64) -> Vec<f64> {
    let mut buf = vec![0.0; dim];
    let mut out = vec![0.0; dim];
    let width = b - a;
    let mut stack = vec![(a, b, 0u32)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let (val, err) = gk15(&mut f, lo, hi, dim, &mut buf);
        let local_tol = tol * (hi - lo) / width;
        // below this the Kronrod-Gauss gap is rounding noise
        let roundoff = ROUNDOFF * val.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if err <= local_tol || err <= roundoff || depth >= MAX_DEPTH {
            for d in 0..dim {
                out[d] += val[d];
            }
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    out
}

/// `E[h(X)]` for `X ~ Beta(a, b)`; `h` receives `(x, 1 - x)` and writes `dim` values.
pub fn beta_expectation<H: FnMut(f64, f64, &mut [f64])>(a: f64, b: f64, mut h: H, dim: usize, tol: f64) -> Vec<f64> {
    // the last component integrates the unnormalized density itself
    let ext = dim + 1;
    // B(a, b) <= 1/a + 1/b, so this keeps the tolerance relative to the normalizer
    let tol = tol * (1.0 / a + 1.0 / b).max(1.0);
    let mut tmp = vec![0.0; dim];
    let left: Vec<f64> = if a < 1.0 {
        let upper = 0.5f64.powf(a);
        integrate(
            |t, _, out| {
                let x = t.powf(1.0 / a);
                let w = (1.0 - x).powf(b - 1.0) / a;
                h(x, 1.0 - x, &mut tmp);
                for d in 0..dim {
                    out[d] = w * tmp[d];
                }
                out[dim] = w;
            },
            0.0,
            upper,
            ext,
            tol,
        )
    } else {
        integrate(
            |x, omx, out| {
                let w = x.powf(a - 1.0) * omx.powf(b - 1.0);
                h(x, omx, &mut tmp);
                for d in 0..dim {
                    out[d] = w * tmp[d];
                }
                out[dim] = w;
            },
            0.0,
            0.5,
            ext,
            tol,
        )
    };
    let right: Vec<f64> = if b < 1.0 {
        let upper = 0.5f64.powf(b);
        integrate(
            |s, _, out| {
                let omx = s.powf(1.0 / b);
                let x = 1.0 - omx;
                let w = x.powf(a - 1.0) / b;
                h(x, omx, &mut tmp);
                for d in 0..dim {
                    out[d] = w * tmp[d];
                }
                out[dim] = w;
            },
            0.0,
            upper,
            ext,
            tol,
        )
    } else {
        integrate(
            |x, omx, out| {
                let w = x.powf(a - 1.0) * omx.powf(b - 1.0);
                h(x, omx, &mut tmp);
                for d in 0..dim {
                    out[d] = w * tmp[d];
                }
                out[dim] = w;
            },
            0.5,
            1.0,
            ext,
            tol,
        )
    };
    let norm = left[dim] + right[dim];
    (0..dim).map(|d| (left[d] + right[d]) / norm).collect()
}

/// `E[h(g)]` for `g ~ Dirichlet(alpha)` by nested Beta stick-breaking.
pub fn dirichlet_expectation<H: FnMut(&[f64], &mut [f64])>(alpha: &[f64], mut h: H, dim: usize, tol: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(alpha.len());
    expectation_rec(alpha, 1.0, &mut g, &mut h, dim, tol)
}

fn expectation_rec(
    alpha: &[f64],
    remaining: f64,
    g: &mut Vec<f64>,
    h: &mut dyn FnMut(&[f64], &mut [f64]),
    dim: usize,
    tol: f64,
) -> Vec<f64> {
    if alpha.len() == 1 {
        g.push(remaining);
        let mut out = vec![0.0; dim];
        h(g, &mut out);
        g.pop();
        return out;
    }
    let a = alpha[0];
    let b: f64 = alpha[1..].iter().sum();
    beta_expectation(
        a,
        b,
        |x, omx, out| {
            g.push(remaining * x);
            // inner error must sit below the outer tolerance or it reads as roughness
            let inner = expectation_rec(&alpha[1..], remaining * omx, g, h, dim, tol * INNER_TOL_FACTOR);
            g.pop();
            out.copy_from_slice(&inner);
        },
        dim,
        tol,
    )
}

/// Marginal probabilities of every pattern in `patterns` by direct quadrature of the mixture integral.
pub fn marginal_pattern_probs_quadrature(params: &GomParams, patterns: &[ResponsePattern], tol: f64) -> Vec<f64> {
    let lambda = params.lambda();
    let j = params.j();
    dirichlet_expectation(
        &params.alpha(),
        |g, out| {
            for (slot, pat) in out.iter_mut().zip(patterns) {
                let mut prod = 1.0;
                for jj in 0..j {
                    let p: f64 = g.iter().zip(lambda).map(|(gk, row)| gk * row[jj]).sum();
                    prod *= if pat.bits()[jj] == 1 { p } else { 1.0 - p };
                }
                *slot = prod;
            }
        },
        patterns.len(),
        tol,
    )
}

/// Family-wise level for the count of Monte Carlo misses.
pub const MC_FAMILY_LEVEL: f64 = 1e-3;

/// Smallest `m` with `P(Binomial(n, p) > m) < MC_FAMILY_LEVEL`.
pub fn allowed_exceedances(n: usize, p: f64) -> usize {
    if p >= 1.0 {
        return n;
    }
    if p <= 0.0 {
        return 0;
    }
    let mut pmf = (n as f64 * (1.0 - p).ln()).exp();
    let mut cdf = pmf;
    let mut m = 0;
    while m < n && 1.0 - cdf >= MC_FAMILY_LEVEL {
        pmf *= (n - m) as f64 / (m + 1) as f64 * p / (1.0 - p);
        cdf += pmf;
        m += 1;
    }
    m
}

#[derive(Clone, Debug)]
pub struct RepresentationCheckConfig {
    pub n_items: usize,
    pub n_profiles: usize,
    pub trials: usize,
    pub seed: u64,
    pub mc_draws: usize,
    /// Allowed |exact - quadrature| per pattern.
    pub quadrature_tol: f64,
    /// Allowed |exact - MC| in units of the MC standard error.
    pub mc_se_multiple: f64,
    /// Allowed |sum of pattern probabilities - 1|.
    pub normalization_tol: f64,
}

impl Default for RepresentationCheckConfig {
    fn default() -> Self {
        RepresentationCheckConfig {
            n_items: 3,
            n_profiles: 2,
            trials: 50,
            seed: 1,
            mc_draws: 100_000,
            quadrature_tol: 1e-8,
            mc_se_multiple: 3.0,
            normalization_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RepresentationReport {
    pub n_items: usize,
    pub n_profiles: usize,
    pub trials: usize,
    pub patterns_checked: usize,
    pub max_quadrature_error: f64,
    pub max_mc_z: f64,
    pub max_normalization_error: f64,
    pub quadrature_failures: usize,
    /// Patterns whose Monte Carlo estimate misses the exact value by more than the SE multiple.
    pub mc_failures: usize,
    /// Misses still consistent with chance at the nominal per-comparison rate.
    pub mc_allowed_failures: usize,
    pub normalization_failures: usize,
    pub failures: Vec<String>,
}

impl RepresentationReport {
    pub fn passed(&self) -> bool {
        self.quadrature_failures == 0 && self.mc_failures <= self.mc_allowed_failures && self.normalization_failures == 0
    }
}

/// Compares the exact latent-class expansion with quadrature and Monte Carlo on random models.
pub fn check_representation(cfg: &RepresentationCheckConfig) -> Result<RepresentationReport> {
    let (k, j) = (cfg.n_profiles, cfg.n_items);
    if k == 0 || j == 0 {
        return Err(GomError::InvalidParameter("K and J must be at least 1".into()));
    }
    let size = (k as u64).checked_pow(j as u32).unwrap_or(u64::MAX);
    if size > ENUMERATION_LIMIT {
        return Err(GomError::EnumerationTooLarge { k, j, limit: ENUMERATION_LIMIT });
    }
    if j > 20 {
        return Err(GomError::InvalidParameter("pattern enumeration is limited to J <= 20".into()));
    }
    let patterns = ResponsePattern::all(j);
    let quad_tol = (cfg.quadrature_tol * 1e-2).clamp(1e-12, 1e-6);
    let mut report = RepresentationReport {
        n_items: j,
        n_profiles: k,
        trials: cfg.trials,
        patterns_checked: 0,
        max_quadrature_error: 0.0,
        max_mc_z: 0.0,
        max_normalization_error: 0.0,
        quadrature_failures: 0,
        mc_failures: 0,
        mc_allowed_failures: allowed_exceedances(cfg.trials * patterns.len(), libm::erfc(cfg.mc_se_multiple / SQRT_2)),
        normalization_failures: 0,
        failures: Vec::new(),
    };
    for trial in 0..cfg.trials {
        let mut rng = rng::stream(cfg.seed, tag::CHECK, trial as u64, 0);
        let params = random_params(k, j, &mut rng);
        let quad = marginal_pattern_probs_quadrature(&params, &patterns, quad_tol);
        let mut total = 0.0;
        for (idx, pat) in patterns.iter().enumerate() {
            let exact = marginal_pattern_prob_exact(&params, pat)?;
            total += exact;
            let qerr = (exact - quad[idx]).abs();
            report.max_quadrature_error = report.max_quadrature_error.max(qerr);
            if !(qerr <= cfg.quadrature_tol) {
                report.quadrature_failures += 1;
                report.failures.push(format!("trial {trial} pattern {pat}: exact {exact} vs quadrature {}", quad[idx]));
            }
            let mc_seed = rng::derive_seed(cfg.seed, tag::CHECK, trial as u64, idx as u64 + 1);
            let (mc, se) = marginal_pattern_prob_mc(&params, pat, cfg.mc_draws, mc_seed)?;
            let diff = (exact - mc).abs();
            let z = if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
            report.max_mc_z = report.max_mc_z.max(z);
            if !(diff <= cfg.mc_se_multiple * se) {
                report.mc_failures += 1;
                report.failures.push(format!("trial {trial} pattern {pat}: exact {exact} vs MC {mc} (se {se})"));
            }
            report.patterns_checked += 1;
        }
        let nerr = (total - 1.0).abs();
        report.max_normalization_error = report.max_normalization_error.max(nerr);
        if nerr > cfg.normalization_tol {
            report.normalization_failures += 1;
            report.failures.push(format!("trial {trial}: probabilities sum to {total}"));
        }
    }
    Ok(report)
}
