//! Synthetic data from a GoM model, optionally mixed with an all-zero
//! "stayer" compartment, and the two simulation presets.
//!
//! The preset profiles are this crate's own choice of "healthy", "disabled"
//! and "intermediate" response probabilities; they are versioned constants,
//! not values taken from any published fit.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GomError, Result};
use crate::model::{Dataset, GomParams, ResponsePattern};
use crate::rng::{self, tag};

/// Bumped whenever a preset constant changes.
pub const PRESET_VERSION: u32 = 1;

/// Latent quantities behind a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationTruth {
    /// Membership vector of every individual (drawn for stayers too).
    pub g: Vec<Vec<f64>>,
    /// True when the individual came from the all-zero compartment.
    pub stayer: Vec<bool>,
}

pub fn generate_dataset(
    params: &GomParams,
    n: usize,
    seed: u64,
    stayer_weight: Option<f64>,
) -> Result<(Dataset, GenerationTruth)> {
    if n == 0 {
        return Err(GomError::InvalidParameter("n must be at least 1".into()));
    }
    let theta1 = stayer_weight.unwrap_or(0.0);
    if !(0.0..1.0).contains(&theta1) {
        return Err(GomError::InvalidParameter(format!("stayer weight must lie in [0, 1), got {theta1}")));
    }
    let alpha = params.alpha();
    let lambda = params.lambda();
    let j = params.j();
    let draws: Vec<(ResponsePattern, Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, tag::GENERATE, i as u64, 0);
            let stayer = stayer_weight.is_some() && rng.random::<f64>() < theta1;
            let g = rng::dirichlet_vec(&alpha, &mut rng);
            let bits = if stayer {
                vec![0u8; j]
            } else {
                (0..j)
                    .map(|jj| {
                        let p: f64 = g.iter().zip(lambda).map(|(gk, row)| gk * row[jj]).sum();
                        (rng.random::<f64>() < p) as u8
                    })
                    .collect()
            };
            (ResponsePattern::new(bits).expect("binary"), g, stayer)
        })
        .collect();
    let mut rows = Vec::with_capacity(n);
    let mut truth = GenerationTruth { g: Vec::with_capacity(n), stayer: Vec::with_capacity(n) };
    for (r, g, s) in draws {
        rows.push(r);
        truth.g.push(g);
        truth.stayer.push(s);
    }
    Ok((Dataset::from_rows(rows, None)?, truth))
}

/// Named simulation designs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 5000 individuals, 16 items, 3 profiles (healthy, disabled, intermediate).
    Scenario1,
    /// 5000 individuals, 10 items, 7 profiles.
    Scenario2,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Preset> {
        match name {
            "scenario1" => Ok(Preset::Scenario1),
            "scenario2" => Ok(Preset::Scenario2),
            other => Err(GomError::InvalidParameter(format!(
                "unknown preset {other:?} (expected scenario1 or scenario2)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Scenario1 => "scenario1",
            Preset::Scenario2 => "scenario2",
        }
    }

    pub fn n(self) -> usize {
        5000
    }

    pub fn params(self) -> GomParams {
        match self {
            Preset::Scenario1 => GomParams::new(
                SCENARIO1_LAMBDA.iter().map(|r| r.to_vec()).collect(),
                0.25,
                vec![0.7, 0.2, 0.1],
            ),
            Preset::Scenario2 => GomParams::new(
                SCENARIO2_LAMBDA.iter().map(|r| r.to_vec()).collect(),
                0.2,
                SCENARIO2_XI.to_vec(),
            ),
        }
        .expect("preset parameters are valid")
    }

    /// Profile names in preset order.
    pub fn profile_names(self) -> &'static [&'static str] {
        match self {
            Preset::Scenario1 => &["healthy", "disabled", "intermediate"],
            Preset::Scenario2 => &[
                "very healthy",
                "healthy",
                "disabled",
                "very disabled",
                "intermediate (mobility)",
                "intermediate (household)",
                "intermediate (self-care)",
            ],
        }
    }
}

const SCENARIO1_LAMBDA: [[f64; 16]; 3] = [
    // healthy
    [0.01, 0.03, 0.05, 0.03, 0.10, 0.04, 0.20, 0.04, 0.06, 0.03, 0.08, 0.15, 0.12, 0.03, 0.04, 0.03],
    // disabled
    [0.45, 0.85, 0.95, 0.75, 0.97, 0.80, 0.99, 0.80, 0.90, 0.85, 0.95, 0.95, 0.90, 0.60, 0.65, 0.45],
    // intermediate
    [0.05, 0.30, 0.60, 0.15, 0.50, 0.20, 0.90, 0.40, 0.60, 0.40, 0.80, 0.75, 0.70, 0.20, 0.15, 0.10],
];

const SCENARIO2_LAMBDA: [[f64; 10]; 7] = [
    [0.01, 0.02, 0.02, 0.01, 0.03, 0.02, 0.05, 0.02, 0.02, 0.01],
    [0.05, 0.10, 0.15, 0.08, 0.20, 0.10, 0.35, 0.10, 0.15, 0.08],
    [0.40, 0.70, 0.85, 0.60, 0.90, 0.65, 0.95, 0.70, 0.80, 0.70],
    [0.85, 0.97, 0.99, 0.95, 0.99, 0.95, 0.99, 0.97, 0.98, 0.95],
    [0.05, 0.10, 0.80, 0.10, 0.85, 0.10, 0.90, 0.15, 0.20, 0.10],
    [0.02, 0.05, 0.10, 0.05, 0.10, 0.05, 0.95, 0.85, 0.90, 0.85],
    [0.60, 0.05, 0.05, 0.70, 0.10, 0.65, 0.10, 0.05, 0.10, 0.05],
];

const SCENARIO2_XI: [f64; 7] = [0.15, 0.40, 0.10, 0.10, 0.05, 0.10, 0.10];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lambda_gives_zero_patterns() {
        let p = GomParams::new(vec![vec![0.0; 4]; 2], 1.0, vec![0.5, 0.5]).unwrap();
        let (d, truth) = generate_dataset(&p, 200, 1, None).unwrap();
        assert_eq!(d.all_zero_count(), 200);
        assert!(truth.stayer.iter().all(|s| !s));
    }

    #[test]
    fn presets_have_documented_shape() {
        let p1 = Preset::Scenario1.params();
        assert_eq!((p1.k(), p1.j(), p1.alpha0()), (3, 16, 0.25));
        assert_eq!(p1.xi(), &[0.7, 0.2, 0.1]);
        let p2 = Preset::Scenario2.params();
        assert_eq!((p2.k(), p2.j(), p2.alpha0()), (7, 10, 0.2));
        let min = p2.xi().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = p2.xi().iter().cloned().fold(0.0, f64::max);
        assert_eq!((min, max), (0.05, 0.4));
        assert!(Preset::parse("scenario3").is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let p = Preset::Scenario1.params();
        let (a, ta) = generate_dataset(&p, 300, 9, Some(0.1)).unwrap();
        let (b, tb) = generate_dataset(&p, 300, 9, Some(0.1)).unwrap();
        assert_eq!(a.rows(), b.rows());
        assert_eq!(ta, tb);
        let (c, _) = generate_dataset(&p, 300, 10, Some(0.1)).unwrap();
        assert_ne!(a.rows(), c.rows());
    }

    #[test]
    fn invalid_arguments() {
        let p = Preset::Scenario1.params();
        assert!(generate_dataset(&p, 0, 1, None).is_err());
        assert!(generate_dataset(&p, 10, 1, Some(1.0)).is_err());
        assert!(generate_dataset(&p, 10, 1, Some(-0.1)).is_err());
    }

    #[test]
    fn item_means_match_expectation() {
        // E[x_j] = sum_k xi_k lambda_kj
        for preset in [Preset::Scenario1, Preset::Scenario2] {
            let p = preset.params();
            let (d, _) = generate_dataset(&p, 5000, 42, None).unwrap();
            for (j, m) in d.item_means().iter().enumerate() {
                let mu: f64 = p.xi().iter().zip(p.lambda()).map(|(x, row)| x * row[j]).sum();
                let se = (mu * (1.0 - mu) / 5000.0).sqrt();
                assert!((m - mu).abs() < 4.0 * se, "{} item {j}: {m} vs {mu}", preset.name());
            }
        }
    }

    #[test]
    fn stayer_flags_produce_zero_rows() {
        let p = Preset::Scenario1.params();
        let (d, truth) = generate_dataset(&p, 5000, 3, Some(0.15)).unwrap();
        let stayers = truth.stayer.iter().filter(|&&s| s).count();
        assert!((stayers as f64 / 5000.0 - 0.15).abs() < 4.0 * (0.15 * 0.85 / 5000.0f64).sqrt());
        for (row, &s) in d.rows().iter().zip(&truth.stayer) {
            if s {
                assert!(row.is_all_zero());
            }
        }
    }
}
