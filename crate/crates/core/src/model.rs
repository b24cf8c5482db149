//! Domain types: response patterns, datasets, model parameters and the latent
//! membership and classification vectors.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{GomError, Result};

/// Tolerance for a vector to count as a point on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Inputs off the simplex by at most this much are renormalized with a warning.
pub const SIMPLEX_REPAIR_TOL: f64 = 1e-9;

/// One individual's binary responses (1 = positive/disabled, 0 = negative).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResponsePattern(Vec<u8>);

impl ResponsePattern {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(GomError::InvalidParameter(format!(
                "response pattern entry {pos} is {}, expected 0 or 1",
                bits[pos]
            )));
        }
        Ok(ResponsePattern(bits))
    }

    pub fn zeros(j: usize) -> Self {
        ResponsePattern(vec![0; j])
    }

    /// Pattern number `index` in the enumeration where item 1 is the most significant bit.
    pub fn from_index(index: usize, j: usize) -> Self {
        ResponsePattern((0..j).map(|t| ((index >> (j - 1 - t)) & 1) as u8).collect())
    }

    /// All `2^J` patterns in index order.
    pub fn all(j: usize) -> Vec<ResponsePattern> {
        (0..1usize << j).map(|i| Self::from_index(i, j)).collect()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(GomError::InvalidParameter(format!("pattern character {other:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(ResponsePattern(bits))
    }
}

impl fmt::Display for ResponsePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Binary responses of `N` individuals on `J` items.
///
/// Rows are kept in input order; the pattern table is derived from them.
#[derive(Clone, Debug)]
pub struct Dataset {
    n_items: usize,
    rows: Vec<ResponsePattern>,
    table: BTreeMap<ResponsePattern, u64>,
    item_labels: Option<Vec<String>>,
}

impl Dataset {
    pub fn from_rows(rows: Vec<ResponsePattern>, item_labels: Option<Vec<String>>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| GomError::InvalidParameter("dataset needs at least one individual".into()))?;
        let n_items = first.len();
        if n_items == 0 {
            return Err(GomError::InvalidParameter("dataset needs at least one item".into()));
        }
        let mut table = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_items {
                return Err(GomError::Data {
                    line: i + 1,
                    message: format!("row has {} items, expected {n_items}", r.len()),
                });
            }
            *table.entry(r.clone()).or_insert(0) += 1;
        }
        if let Some(labels) = &item_labels {
            if labels.len() != n_items {
                return Err(GomError::LengthMismatch { what: "item labels", expected: n_items, got: labels.len() });
            }
        }
        Ok(Dataset { n_items, rows, table, item_labels })
    }

    /// Expands a pattern-count table into rows, in table order.
    pub fn from_table(table: BTreeMap<ResponsePattern, u64>, item_labels: Option<Vec<String>>) -> Result<Self> {
        let rows = table
            .iter()
            .flat_map(|(p, &c)| std::iter::repeat_n(p.clone(), c as usize))
            .collect();
        Self::from_rows(rows, item_labels)
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn rows(&self) -> &[ResponsePattern] {
        &self.rows
    }

    pub fn table(&self) -> &BTreeMap<ResponsePattern, u64> {
        &self.table
    }

    pub fn item_labels(&self) -> Option<&[String]> {
        self.item_labels.as_deref()
    }

    pub fn count(&self, pattern: &ResponsePattern) -> u64 {
        self.table.get(pattern).copied().unwrap_or(0)
    }

    /// Row-major `N x J` matrix of responses.
    pub fn flat(&self) -> Vec<u8> {
        self.rows.iter().flat_map(|r| r.bits().iter().copied()).collect()
    }

    /// Sample mean of every item.
    pub fn item_means(&self) -> Vec<f64> {
        let mut sums = vec![0u64; self.n_items];
        for r in &self.rows {
            for (s, &b) in sums.iter_mut().zip(r.bits()) {
                *s += b as u64;
            }
        }
        sums.iter().map(|&s| s as f64 / self.n() as f64).collect()
    }

    pub fn all_zero_count(&self) -> u64 {
        self.count(&ResponsePattern::zeros(self.n_items))
    }
}

/// Parameters of a K-profile model on J binary items.
#[derive(Clone, Debug, PartialEq)]
pub struct GomParams {
    lambda: Vec<Vec<f64>>,
    alpha0: f64,
    xi: Vec<f64>,
}

pub(crate) fn check_simplex(what: &str, v: &mut [f64]) -> Result<()> {
    if v.is_empty() {
        return Err(GomError::InvalidParameter(format!("{what} is empty")));
    }
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(GomError::InvalidParameter(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = v.iter().sum();
    let off = (s - 1.0).abs();
    if off > SIMPLEX_REPAIR_TOL {
        return Err(GomError::InvalidParameter(format!("{what} sums to {s}, not 1")));
    }
    if off > SIMPLEX_TOL {
        warn!("{what} sums to {s}; renormalizing");
        v.iter_mut().for_each(|x| *x /= s);
    }
    Ok(())
}

impl GomParams {
    pub fn new(lambda: Vec<Vec<f64>>, alpha0: f64, mut xi: Vec<f64>) -> Result<Self> {
        let k = lambda.len();
        if k == 0 {
            return Err(GomError::InvalidParameter("need at least one profile".into()));
        }
        let j = lambda[0].len();
        if j == 0 {
            return Err(GomError::InvalidParameter("need at least one item".into()));
        }
        for (kk, row) in lambda.iter().enumerate() {
            if row.len() != j {
                return Err(GomError::LengthMismatch { what: "lambda row", expected: j, got: row.len() });
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(GomError::InvalidParameter(format!("lambda[{kk}] has entry {v} outside [0, 1]")));
            }
        }
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(GomError::InvalidParameter(format!("alpha0 must be positive, got {alpha0}")));
        }
        if xi.len() != k {
            return Err(GomError::LengthMismatch { what: "xi", expected: k, got: xi.len() });
        }
        check_simplex("xi", &mut xi)?;
        if xi.iter().any(|&x| x <= 0.0) {
            return Err(GomError::InvalidParameter("xi entries must be strictly positive".into()));
        }
        Ok(GomParams { lambda, alpha0, xi })
    }

    /// Builds parameters from the unreparameterized Dirichlet vector `alpha`.
    pub fn from_alpha(lambda: Vec<Vec<f64>>, alpha: &[f64]) -> Result<Self> {
        if alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(GomError::InvalidParameter("alpha entries must be positive".into()));
        }
        let a0: f64 = alpha.iter().sum();
        let xi: Vec<f64> = alpha.iter().map(|a| a / a0).collect();
        let s: f64 = xi.iter().sum();
        Self::new(lambda, a0, xi.iter().map(|x| x / s).collect())
    }

    pub fn k(&self) -> usize {
        self.lambda.len()
    }

    pub fn j(&self) -> usize {
        self.lambda[0].len()
    }

    pub fn lambda(&self) -> &[Vec<f64>] {
        &self.lambda
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    /// `alpha_k = alpha0 * xi_k`.
    pub fn alpha(&self) -> Vec<f64> {
        self.xi.iter().map(|x| x * self.alpha0).collect()
    }

    /// Row-major `K x J` copy of lambda.
    pub fn lambda_flat(&self) -> Vec<f64> {
        self.lambda.iter().flatten().copied().collect()
    }

    pub(crate) fn set_lambda_flat(&mut self, flat: &[f64]) {
        let j = self.j();
        for (row, chunk) in self.lambda.iter_mut().zip(flat.chunks(j)) {
            row.copy_from_slice(chunk);
        }
    }

    pub(crate) fn set_alpha0(&mut self, a: f64) {
        self.alpha0 = a;
    }

    pub(crate) fn set_xi(&mut self, xi: &[f64]) {
        self.xi.copy_from_slice(xi);
    }
}

/// A point on the K-simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct MembershipVector(Vec<f64>);

impl MembershipVector {
    pub fn new(mut g: Vec<f64>) -> Result<Self> {
        check_simplex("membership vector", &mut g)?;
        Ok(MembershipVector(g))
    }

    /// Full membership in profile `k`.
    pub fn vertex(k: usize, n_profiles: usize) -> Self {
        let mut g = vec![0.0; n_profiles];
        g[k] = 1.0;
        MembershipVector(g)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }
}

/// Profile index for each item. Profiles are numbered from 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LatentClassification(Vec<usize>);

impl LatentClassification {
    pub fn new(z: Vec<usize>, n_profiles: usize) -> Result<Self> {
        if let Some(&bad) = z.iter().find(|&&k| k >= n_profiles) {
            return Err(GomError::IndexOutOfRange { what: "profile", index: bad, len: n_profiles });
        }
        Ok(LatentClassification(z))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// All `K^J` classifications in lexicographic order.
    pub fn enumerate(n_profiles: usize, n_items: usize) -> impl Iterator<Item = LatentClassification> {
        let total = (n_profiles as u64).pow(n_items as u32);
        (0..total).map(move |mut idx| {
            let mut z = vec![0; n_items];
            for slot in z.iter_mut().rev() {
                *slot = (idx % n_profiles as u64) as usize;
                idx /= n_profiles as u64;
            }
            LatentClassification(z)
        })
    }
}
