//! Convergence and identifiability checks on chain output.

use serde::{Deserialize, Serialize};

use crate::error::{GomError, Result};
use crate::mcmc::{summarize, ChainOutput, TraceView};

pub const MIN_TRACE: usize = 100;
pub const GEWEKE_BATCHES: usize = 20;
/// Profiles whose best standardized gap reaches this are separated.
pub const SEPARATION_THRESHOLD: f64 = 2.0;

/// Variance of the window mean, `S(0) / n`, from batch means.
fn mean_variance(w: &[f64]) -> f64 {
    let b = GEWEKE_BATCHES.min(w.len());
    let m = w.len() / b;
    let means: Vec<f64> = w.chunks_exact(m).take(b).map(|c| c.iter().sum::<f64>() / m as f64).collect();
    let grand = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (b - 1) as f64;
    // S(0) = m var(batch means), and the window mean has variance S(0) / (m b)
    var / b as f64
}

/// Geweke z-score comparing the first `frac_a` of the trace with the last `frac_b`.
pub fn geweke_z(trace: &[f64], frac_a: f64, frac_b: f64) -> Result<f64> {
    if trace.len() < MIN_TRACE {
        return Err(GomError::InsufficientDraws { needed: MIN_TRACE, have: trace.len() });
    }
    if !(frac_a > 0.0 && frac_b > 0.0 && frac_a + frac_b <= 1.0) {
        return Err(GomError::InvalidParameter(format!("window fractions {frac_a}, {frac_b} must be positive and sum to at most 1")));
    }
    let n = trace.len();
    let na = ((frac_a * n as f64) as usize).max(2);
    let nb = ((frac_b * n as f64) as usize).max(2);
    let (a, b) = (&trace[..na], &trace[n - nb..]);
    let (va, vb) = (mean_variance(a), mean_variance(b));
    if va <= 0.0 || vb <= 0.0 {
        return Err(GomError::DegenerateTrace("a Geweke window has zero variance".into()));
    }
    let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    Ok((mean(a) - mean(b)) / (va + vb).sqrt())
}

/// Effective sample size with Geyer's initial positive sequence, capped at the trace length.
pub fn effective_sample_size(trace: &[f64]) -> Result<f64> {
    let n = trace.len();
    if n < MIN_TRACE {
        return Err(GomError::InsufficientDraws { needed: MIN_TRACE, have: n });
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| centred[..n - lag].iter().zip(&centred[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return Err(GomError::DegenerateTrace("trace is constant".into()));
    }
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        // pairs are kept positive and non-increasing
        let pair = ((autocov(2 * m) + autocov(2 * m + 1)) / c0).min(prev);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        prev = pair;
        m += 1;
    }
    Ok((n as f64 / tau.max(1e-12)).min(n as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    /// Best standardized gap for every profile pair; symmetric with zero diagonal.
    pub gaps: Vec<Vec<f64>>,
    pub separated: Vec<Vec<bool>>,
}

impl Separation {
    /// Pairs `(k, k')`, `k < k'`, that are not separated.
    pub fn unseparated_pairs(&self) -> Vec<(usize, usize)> {
        let k = self.gaps.len();
        (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).filter(|&(a, b)| !self.separated[a][b]).collect()
    }
}

/// `max_j |mean_kj - mean_k'j| / sqrt(sd_kj^2 + sd_k'j^2)` for every profile pair.
pub fn profile_separation(means: &[Vec<f64>], sds: &[Vec<f64>]) -> Result<Separation> {
    let k = means.len();
    if sds.len() != k {
        return Err(GomError::LengthMismatch { what: "lambda standard deviations", expected: k, got: sds.len() });
    }
    let mut gaps = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in a + 1..k {
            let mut best: f64 = 0.0;
            for ((ma, mb), (sa, sb)) in means[a].iter().zip(&means[b]).zip(sds[a].iter().zip(&sds[b])) {
                let diff = (ma - mb).abs();
                let scale = (sa * sa + sb * sb).sqrt();
                let gap = if scale > 0.0 {
                    diff / scale
                } else if diff > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                best = best.max(gap);
            }
            gaps[a][b] = best;
            gaps[b][a] = best;
        }
    }
    let separated =
        gaps.iter().enumerate().map(|(a, row)| row.iter().enumerate().map(|(b, &g)| a != b && g >= SEPARATION_THRESHOLD).collect()).collect();
    Ok(Separation { gaps, separated })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Warn,
    Fail,
    /// Constant or too-short trace.
    Skipped,
}

impl Status {
    pub fn from_z(z: f64) -> Status {
        match z.abs() {
            a if a < 2.0 => Status::Pass,
            a if a < 3.0 => Status::Warn,
            _ => Status::Fail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub name: String,
    pub mean: f64,
    pub geweke_z: Option<f64>,
    pub ess: Option<f64>,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub draws: usize,
    pub acceptance_alpha0: f64,
    pub acceptance_xi: f64,
    pub parameters: Vec<ParameterDiagnostics>,
    pub separation: Separation,
    pub warnings: Vec<String>,
}

fn scalar(name: String, trace: &[f64], warnings: &mut Vec<String>) -> ParameterDiagnostics {
    let mean = trace.iter().sum::<f64>() / trace.len() as f64;
    let z = geweke_z(trace, 0.1, 0.5);
    let ess = effective_sample_size(trace);
    let status = match &z {
        Ok(z) => Status::from_z(*z),
        Err(e) => {
            warnings.push(format!("{name}: {e}"));
            Status::Skipped
        }
    };
    if status == Status::Fail {
        warnings.push(format!("{name}: Geweke z beyond 3"));
    }
    ParameterDiagnostics { name, mean, geweke_z: z.ok(), ess: ess.ok(), status }
}

/// Geweke z and ESS for every scalar trace plus the profile separation matrix.
pub fn diagnose(chain: &ChainOutput) -> Result<DiagnosticsReport> {
    diagnose_view(&chain.view())
}

pub fn diagnose_view(chain: &TraceView<'_>) -> Result<DiagnosticsReport> {
    let summary = summarize(chain)?;
    let (k, j) = (chain.n_profiles, chain.n_items);
    let mut warnings = Vec::new();
    let mut parameters = vec![
        scalar("loglik".into(), chain.loglik, &mut warnings),
        scalar("alpha0".into(), chain.alpha0, &mut warnings),
    ];
    for kk in 0..k {
        let t: Vec<f64> = chain.xi.iter().map(|d| d[kk]).collect();
        parameters.push(scalar(format!("xi[{kk}]"), &t, &mut warnings));
    }
    for kk in 0..k {
        for jj in 0..j {
            let t: Vec<f64> = chain.lambda.iter().map(|d| d[kk * j + jj]).collect();
            parameters.push(scalar(format!("lambda[{kk},{jj}]"), &t, &mut warnings));
        }
    }
    if let Some(t) = chain.theta1 {
        parameters.push(scalar("theta1".into(), t, &mut warnings));
    }
    let separation = profile_separation(&summary.lambda_means(), &summary.lambda_sds())?;
    for (a, b) in separation.unseparated_pairs() {
        warnings.push(format!("profiles {a} and {b} are not separated by two standard deviations on any item; label switching is possible"));
    }
    Ok(DiagnosticsReport {
        draws: chain.draws(),
        acceptance_alpha0: chain.acceptance_alpha0,
        acceptance_xi: chain.acceptance_xi,
        parameters,
        separation,
        warnings,
    })
}
