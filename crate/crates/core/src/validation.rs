//! Statistical checks of the Gibbs and Metropolis-Hastings kernels against
//! their exact conditional distributions.
//!
//! Each check returns a statistic and the limit it must stay below. Frequency
//! and moment checks report the largest |z|; the stationarity checks report
//! total variation between a long single-kernel run and the target density
//! integrated over the same bins.

use rand::Rng;
use serde::Serialize;

use crate::mcmc::{
    alpha0_log_ratio, alpha0_log_target, impute_z, mh_alpha0, mh_xi, sample_g, sample_lambda, xi_log_ratio,
    xi_log_target, AugmentedState, SweepKey,
};
use crate::model::{GomParams, LatentClassification, MembershipVector};
use crate::oracle;
use crate::rng;

/// Bins of the stationarity histograms.
pub const TV_BINS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub statistic: f64,
    pub limit: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.statistic < self.limit
    }
}

fn toy_state(params: GomParams, g: &[Vec<f64>], z: &[Vec<usize>]) -> AugmentedState {
    let k = params.k();
    AugmentedState::new(
        params,
        g.iter().map(|v| MembershipVector::new(v.clone()).expect("valid toy g")).collect(),
        z.iter().map(|v| LatentClassification::new(v.clone(), k).expect("valid toy z")).collect(),
    )
    .expect("valid toy state")
}

fn freq_z(hits: usize, reps: usize, p: f64) -> f64 {
    let se = (p * (1.0 - p) / reps as f64).sqrt();
    (hits as f64 / reps as f64 - p).abs() / se
}

/// |z| of the sample mean and sample variance against exact moments.
fn moment_z(samples: &[f64], mean: f64, var: f64) -> f64 {
    let r = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / r;
    let v = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / r;
    let m4 = samples.iter().map(|x| (x - m).powi(4)).sum::<f64>() / r;
    let z_mean = (m - mean).abs() / (var / r).sqrt();
    let z_var = (v - var).abs() / ((m4 - v * v).max(f64::MIN_POSITIVE) / r).sqrt();
    z_mean.max(z_var)
}

/// Profile indicators against their complete conditional, two and three profiles.
pub fn impute_z_frequencies(reps: usize, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    // g=(0.5,0.5): item 1 gives (0.9,0.1), item 2 has equal lambdas so p=g, item 3 gives 0.4/0.55
    let p = GomParams::new(vec![vec![0.9, 0.4, 0.2], vec![0.1, 0.4, 0.7]], 1.0, vec![0.5, 0.5]).expect("valid");
    let mut s = toy_state(p, &[vec![0.5, 0.5]], &[vec![0, 0, 0]]);
    let mut hits = [0usize; 3];
    for m in 0..reps {
        impute_z(&mut s, &[1, 0, 0], SweepKey { seed, sweep: m as u64 });
        for (h, &c) in hits.iter_mut().zip(s.z(0)) {
            *h += (c == 0) as usize;
        }
    }
    for (h, p) in hits.iter().zip([0.9, 0.5, 0.4 / 0.55]) {
        worst = worst.max(freq_z(*h, reps, p));
    }

    let g = vec![0.2, 0.5, 0.3];
    let p = GomParams::new(vec![vec![0.7], vec![0.2], vec![0.5]], 1.0, vec![0.3, 0.3, 0.4]).expect("valid");
    let mut s = toy_state(p, &[g], &[vec![0]]);
    let w = [0.2 * 0.7, 0.5 * 0.2, 0.3 * 0.5];
    let tot: f64 = w.iter().sum();
    let mut hits = [0usize; 3];
    for m in 0..reps {
        impute_z(&mut s, &[1], SweepKey { seed: seed ^ 1, sweep: m as u64 });
        hits[s.z(0)[0] as usize] += 1;
    }
    for kk in 0..3 {
        worst = worst.max(freq_z(hits[kk], reps, w[kk] / tot));
    }
    CheckResult { name: "z frequencies".into(), statistic: worst, limit: 4.0 }
}

/// Profile probabilities against their Beta conditionals.
pub fn lambda_moments(reps: usize, seed: u64) -> CheckResult {
    // 8 responses assigned to profile 0, 3 of them positive -> Beta(4,6); profile 1 unassigned -> Beta(1,1)
    let p = GomParams::new(vec![vec![0.5], vec![0.5]], 1.0, vec![0.5, 0.5]).expect("valid");
    let mut s = toy_state(p, &vec![vec![0.5, 0.5]; 8], &vec![vec![0]; 8]);
    let x = [1, 1, 1, 0, 0, 0, 0, 0];
    let (mut a, mut b) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
    for m in 0..reps {
        sample_lambda(&mut s, &x, (1.0, 1.0), SweepKey { seed, sweep: m as u64 });
        let l = s.params().lambda_flat();
        a.push(l[0]);
        b.push(l[1]);
    }
    let beta = |p: f64, q: f64| (p / (p + q), p * q / ((p + q).powi(2) * (p + q + 1.0)));
    let (m0, v0) = beta(4.0, 6.0);
    let (m1, v1) = beta(1.0, 1.0);
    let worst = moment_z(&a, m0, v0).max(moment_z(&b, m1, v1));
    CheckResult { name: "lambda moments".into(), statistic: worst, limit: 4.0 }
}

/// Membership vectors against their Dirichlet conditional.
pub fn g_moments(reps: usize, seed: u64) -> CheckResult {
    let p = GomParams::new(vec![vec![0.5; 4]; 3], 0.6, vec![0.5, 0.3, 0.2]).expect("valid");
    let mut s = toy_state(p, &[vec![0.2, 0.3, 0.5]], &[vec![0, 0, 2, 1]]);
    // alpha = 0.6 xi plus counts (2, 1, 1)
    let a = [0.3 + 2.0, 0.18 + 1.0, 0.12 + 1.0];
    let a0: f64 = a.iter().sum();
    let mut draws: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(reps)).collect();
    for m in 0..reps {
        sample_g(&mut s, SweepKey { seed, sweep: m as u64 });
        for (d, v) in draws.iter_mut().zip(s.g(0)) {
            d.push(*v);
        }
    }
    let worst = (0..3)
        .map(|kk| {
            let mean = a[kk] / a0;
            moment_z(&draws[kk], mean, mean * (1.0 - mean) / (a0 + 1.0))
        })
        .fold(0.0, f64::max);
    CheckResult { name: "g moments".into(), statistic: worst, limit: 4.0 }
}

fn random_sums(n: usize, k: usize, seed: u64) -> (Vec<f64>, usize) {
    let mut r = rng::stream(seed, 0, 0, 0);
    let alpha = vec![0.7; k];
    let mut sums = vec![0.0; k];
    let (mut g, mut lg) = (vec![0.0; k], vec![0.0; k]);
    for _ in 0..n {
        rng::sample_dirichlet(&alpha, &mut r, &mut g, &mut lg);
        sums.iter_mut().zip(&lg).for_each(|(s, l)| *s += l);
    }
    (sums, n)
}

/// Largest `|log r(a->b) + log r(b->a)|`, relative to `1 + |log r(a->b)|`.
pub fn mh_antisymmetry(cases: usize, seed: u64) -> CheckResult {
    let mut r = rng::stream(seed, 0, 1, 0);
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let k = 2 + c % 3;
        let (s, n) = random_sums(25, k, seed.wrapping_add(c as u64));
        let xi = rng::dirichlet_vec(&vec![2.0; k], &mut r);
        let prop = rng::dirichlet_vec(&vec![2.0; k], &mut r);
        let (a, b) = (0.01 + 20.0 * r.random::<f64>(), 0.01 + 20.0 * r.random::<f64>());
        let fwd = alpha0_log_ratio(a, b, &xi, &s, n, 2.0, 10.0, 30.0);
        let back = alpha0_log_ratio(b, a, &xi, &s, n, 2.0, 10.0, 30.0);
        worst = worst.max((fwd + back).abs() / (1.0 + fwd.abs()));
        let fwd = xi_log_ratio(&xi, &prop, a, &s, n, 20.0);
        let back = xi_log_ratio(&prop, &xi, a, &s, n, 20.0);
        worst = worst.max((fwd + back).abs() / (1.0 + fwd.abs()));
    }
    CheckResult { name: "MH ratio antisymmetry".into(), statistic: worst, limit: 1e-9 }
}

/// Total variation between a histogram of `samples` and `exp(log_density)` integrated over the same bins.
pub fn binned_tv(samples: &[f64], edges: &[f64], log_density: impl Fn(f64) -> f64) -> f64 {
    let bins = edges.len() - 1;
    let peak = (0..2000)
        .map(|i| edges[0] + (edges[bins] - edges[0]) * (i as f64 + 0.5) / 2000.0)
        .map(&log_density)
        .fold(f64::NEG_INFINITY, f64::max);
    let mass: Vec<f64> = edges
        .windows(2)
        .map(|w| oracle::integrate(|t, _, out| out[0] = (log_density(t) - peak).exp(), w[0], w[1], 1, 1e-12)[0])
        .collect();
    let total: f64 = mass.iter().sum();
    let mut hist = vec![0.0; bins];
    for &s in samples {
        let b = edges.partition_point(|&e| e <= s).clamp(1, bins) - 1;
        hist[b] += 1.0;
    }
    hist.iter().zip(&mass).map(|(h, m)| (h / samples.len() as f64 - m / total).abs()).sum::<f64>() / 2.0
}

/// The `alpha0` kernel alone, run `steps` times with fixed memberships.
pub fn alpha0_stationarity(steps: usize, seed: u64) -> CheckResult {
    let (s, n) = random_sums(20, 2, seed);
    let xi = [0.6, 0.4];
    let p = GomParams::new(vec![vec![0.5], vec![0.5]], 1.0, xi.to_vec()).expect("valid");
    let mut st = toy_state(p, &[vec![0.5, 0.5]], &[vec![0]]);
    let sums = (s.clone(), n);
    let mut trace = Vec::with_capacity(steps);
    for m in 0..steps {
        mh_alpha0(&mut st, &sums, (2.0, 10.0), 5.0, SweepKey { seed, sweep: m as u64 });
        trace.push(st.params().alpha0());
    }
    let mut sorted = trace.clone();
    sorted.sort_by(f64::total_cmp);
    let tail = steps / 10_000;
    let (lo, hi) = (sorted[tail] * 0.5, sorted[steps - 1 - tail] * 1.5);
    let edges: Vec<f64> = (0..=TV_BINS).map(|i| lo + (hi - lo) * i as f64 / TV_BINS as f64).collect();
    let tv = binned_tv(&trace, &edges, |a| alpha0_log_target(a, &xi, &s, n, 2.0, 10.0));
    CheckResult { name: "alpha0 kernel stationarity (TV)".into(), statistic: tv, limit: 0.02 }
}

/// The `xi` kernel alone on two profiles, run `steps` times.
pub fn xi_stationarity(steps: usize, seed: u64) -> CheckResult {
    let (s, n) = random_sums(20, 2, seed);
    let p = GomParams::new(vec![vec![0.5], vec![0.5]], 1.5, vec![0.5, 0.5]).expect("valid");
    let mut st = toy_state(p, &[vec![0.5, 0.5]], &[vec![0]]);
    let sums = (s.clone(), n);
    let mut trace = Vec::with_capacity(steps);
    for m in 0..steps {
        mh_xi(&mut st, &sums, 5.0, SweepKey { seed, sweep: m as u64 });
        trace.push(st.params().xi()[0]);
    }
    let edges: Vec<f64> = (0..=TV_BINS).map(|i| i as f64 / TV_BINS as f64).collect();
    let tv = binned_tv(&trace, &edges, |w| xi_log_target(&[w, 1.0 - w], 1.5, &s, n));
    CheckResult { name: "xi kernel stationarity (TV)".into(), statistic: tv, limit: 0.02 }
}

/// Every check above: `reps` for frequency and moment tests, `steps` for the stationarity runs.
pub fn conditional_suite(reps: usize, steps: usize, seed: u64) -> Vec<CheckResult> {
    vec![
        impute_z_frequencies(reps, seed),
        lambda_moments(reps, seed.wrapping_add(1)),
        g_moments(reps, seed.wrapping_add(2)),
        mh_antisymmetry(1000, seed.wrapping_add(3)),
        alpha0_stationarity(steps, seed.wrapping_add(4)),
        xi_stationarity(steps, seed.wrapping_add(5)),
    ]
}
