//! File formats: datasets, model JSON, chain traces and reports.
//!
//! Patterns are written most-significant item first, in column order of the
//! row-level CSV. Profiles and items are numbered from 0.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsReport;
use crate::error::{GomError, Result};
use crate::mcmc::{ChainOutput, PosteriorSummary, TraceView};
use crate::model::{Dataset, GomParams, ResponsePattern};
use crate::selection::{aicm, deviance_at, dic_from_parts, CriteriaReport, Dic};
use crate::vem::VemFit;

/// Shortest text that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| GomError::Data { line, message: format!("`{s}` is not a number") })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    /// One respondent per line, one 0/1 column per item, optional header of item labels.
    Rows,
    /// `pattern,count` lines, optional `# items: a,b,...` comment.
    Patterns,
}

impl DataFormat {
    pub fn parse(s: &str) -> Result<Option<DataFormat>> {
        match s {
            "auto" => Ok(None),
            "rows" => Ok(Some(DataFormat::Rows)),
            "patterns" => Ok(Some(DataFormat::Patterns)),
            _ => Err(GomError::InvalidParameter(format!("unknown data format `{s}` (auto, rows, patterns)"))),
        }
    }
}

fn detect_format(text: &str) -> DataFormat {
    match text.lines().map(str::trim).find(|l| !l.is_empty()) {
        Some(l) if l.starts_with('#') => DataFormat::Patterns,
        Some(l) if l.replace(' ', "").eq_ignore_ascii_case("pattern,count") => DataFormat::Patterns,
        _ => DataFormat::Rows,
    }
}

pub fn read_dataset(path: &Path, format: Option<DataFormat>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, format)
}

pub fn parse_dataset(text: &str, format: Option<DataFormat>) -> Result<Dataset> {
    match format.unwrap_or_else(|| detect_format(text)) {
        DataFormat::Rows => parse_rows(text),
        DataFormat::Patterns => parse_patterns(text),
    }
}

fn binary_cell(s: &str) -> Option<u8> {
    match s.trim() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

fn parse_rows(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut labels: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    let mut width = None;
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let cells: Vec<Option<u8>> = rec.iter().map(binary_cell).collect();
        if width.is_none() && rows.is_empty() && labels.is_none() && cells.iter().any(Option::is_none) {
            labels = Some(rec.iter().map(|s| s.trim().to_string()).collect());
            width = Some(rec.len());
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(GomError::Data { line, message: format!("row has {} items, expected {w}", rec.len()) });
        }
        if let Some(col) = cells.iter().position(Option::is_none) {
            return Err(GomError::Data {
                line,
                message: format!("column {} holds `{}`, expected 0 or 1", col + 1, rec.get(col).unwrap_or("").trim()),
            });
        }
        rows.push(ResponsePattern::new(cells.into_iter().map(|c| c.expect("checked")).collect())?);
    }
    if rows.is_empty() {
        return Err(GomError::Data { line: 0, message: "no data rows".into() });
    }
    Dataset::from_rows(rows, labels)
}

fn parse_patterns(text: &str) -> Result<Dataset> {
    let mut labels: Option<Vec<String>> = None;
    let mut table = BTreeMap::new();
    let mut width = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(c) = l.strip_prefix('#') {
            if let Some(rest) = c.trim().strip_prefix("items:") {
                labels = Some(rest.split(',').map(|s| s.trim().to_string()).collect());
            }
            continue;
        }
        if l.replace(' ', "").eq_ignore_ascii_case("pattern,count") {
            continue;
        }
        let fields: Vec<&str> = l.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if fields.len() != 2 {
            return Err(GomError::Data { line, message: format!("expected `pattern,count`, got `{l}`") });
        }
        let pattern = ResponsePattern::parse(fields[0]).map_err(|e| GomError::Data { line, message: e.to_string() })?;
        let w = *width.get_or_insert(pattern.len());
        if pattern.len() != w {
            return Err(GomError::Data { line, message: format!("pattern has {} items, expected {w}", pattern.len()) });
        }
        let count: u64 = fields[1]
            .parse()
            .map_err(|_| GomError::Data { line, message: format!("count `{}` is not a non-negative integer", fields[1]) })?;
        if table.insert(pattern, count).is_some() {
            return Err(GomError::Data { line, message: format!("pattern {} listed twice", fields[0]) });
        }
    }
    table.retain(|_, c| *c > 0);
    if table.is_empty() {
        return Err(GomError::Data { line: 0, message: "no patterns with positive counts".into() });
    }
    Dataset::from_table(table, labels)
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(fs::File::create(path)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create(path)?.write_all(text.as_bytes())?;
    Ok(())
}

pub fn write_rows(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = String::new();
    if let Some(labels) = data.item_labels() {
        out.push_str(&labels.join(","));
        out.push('\n');
    }
    for r in data.rows() {
        let cells: Vec<&str> = r.bits().iter().map(|&b| if b == 1 { "1" } else { "0" }).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_patterns(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = String::new();
    if let Some(labels) = data.item_labels() {
        out.push_str(&format!("# items: {}\n", labels.join(",")));
    }
    out.push_str("pattern,count\n");
    for (p, c) in data.table() {
        out.push_str(&format!("{p},{c}\n"));
    }
    write_text(path, &out)
}

/// Model JSON: parameters plus whichever fit summaries apply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub lambda: Vec<Vec<f64>>,
    pub alpha0: f64,
    pub xi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_sd: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_sd: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta1_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_alpha0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

impl ModelFile {
    pub fn from_params(params: &GomParams) -> Self {
        ModelFile {
            k: params.k(),
            j: params.j(),
            lambda: params.lambda().to_vec(),
            alpha0: params.alpha0(),
            xi: params.xi().to_vec(),
            theta1: None,
            method: None,
            item_labels: None,
            lambda_sd: None,
            alpha0_sd: None,
            xi_sd: None,
            theta1_sd: None,
            draws: None,
            acceptance_alpha0: None,
            acceptance_xi: None,
            lower_bound: None,
            iterations: None,
            converged: None,
        }
    }

    pub fn from_summary(summary: &PosteriorSummary, method: &str) -> Result<Self> {
        let mut m = ModelFile::from_params(&summary.to_params()?);
        m.method = Some(method.into());
        m.lambda_sd = Some(summary.lambda_sds());
        m.alpha0_sd = Some(summary.alpha0.sd);
        m.xi_sd = Some(summary.xi.iter().map(|x| x.sd).collect());
        m.theta1 = summary.theta1.map(|t| t.mean);
        m.theta1_sd = summary.theta1.map(|t| t.sd);
        m.draws = Some(summary.draws);
        m.acceptance_alpha0 = Some(summary.acceptance_alpha0);
        m.acceptance_xi = Some(summary.acceptance_xi);
        Ok(m)
    }

    pub fn from_vem(fit: &VemFit) -> Self {
        let mut m = ModelFile::from_params(&fit.params);
        m.method = Some("vem".into());
        m.lower_bound = Some(fit.lower_bound());
        m.iterations = Some(fit.iterations);
        m.converged = Some(fit.converged);
        m
    }

    pub fn params(&self) -> Result<GomParams> {
        if self.lambda.len() != self.k {
            return Err(GomError::LengthMismatch { what: "model lambda rows", expected: self.k, got: self.lambda.len() });
        }
        let p = GomParams::new(self.lambda.clone(), self.alpha0, self.xi.clone())?;
        if p.j() != self.j {
            return Err(GomError::LengthMismatch { what: "model lambda columns", expected: self.j, got: p.j() });
        }
        Ok(p)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Writes `lambda.csv`, `hyper.csv` and, when accumulated, `g_mean.csv` into `dir`.
pub fn write_traces(dir: &Path, chain: &ChainOutput) -> Result<()> {
    let (k, j) = (chain.n_profiles, chain.n_items);
    let s = chain.draws();
    let mut out = String::from("k,j");
    for d in 0..s {
        out.push_str(&format!(",draw_{d}"));
    }
    out.push('\n');
    for kk in 0..k {
        for jj in 0..j {
            out.push_str(&format!("{kk},{jj}"));
            for d in &chain.lambda {
                out.push(',');
                out.push_str(&fmt_f64(d[kk * j + jj]));
            }
            out.push('\n');
        }
    }
    write_text(&dir.join("lambda.csv"), &out)?;

    let mut out = String::from("draw,alpha0");
    for kk in 0..k {
        out.push_str(&format!(",xi_{kk}"));
    }
    out.push_str(",loglik,accepted_alpha0,accepted_xi");
    let extended = chain.theta1.is_some();
    if extended {
        out.push_str(",theta1,n2");
    }
    out.push('\n');
    for d in 0..s {
        out.push_str(&format!("{d},{}", fmt_f64(chain.alpha0[d])));
        for x in &chain.xi[d] {
            out.push(',');
            out.push_str(&fmt_f64(*x));
        }
        out.push_str(&format!(
            ",{},{},{}",
            fmt_f64(chain.loglik[d]),
            chain.accepted_alpha0[d] as u8,
            chain.accepted_xi[d] as u8
        ));
        if let (Some(t), Some(n2)) = (&chain.theta1, &chain.n2) {
            out.push_str(&format!(",{},{}", fmt_f64(t[d]), n2[d]));
        }
        out.push('\n');
    }
    write_text(&dir.join("hyper.csv"), &out)?;

    if let Some(g) = &chain.g_mean {
        let mut out = String::from("individual");
        for kk in 0..k {
            out.push_str(&format!(",g_{kk}"));
        }
        out.push('\n');
        for (i, row) in g.chunks(k).enumerate() {
            out.push_str(&i.to_string());
            for v in row {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        write_text(&dir.join("g_mean.csv"), &out)?;
    }
    Ok(())
}

/// Traces read back from [`write_traces`] output.
#[derive(Clone, Debug, PartialEq)]
pub struct Traces {
    pub n_profiles: usize,
    pub n_items: usize,
    /// Row-major `K x J` lambda per draw.
    pub lambda: Vec<Vec<f64>>,
    pub alpha0: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
    pub loglik: Vec<f64>,
    pub accepted_alpha0: Vec<bool>,
    pub accepted_xi: Vec<bool>,
    pub theta1: Option<Vec<f64>>,
    pub n2: Option<Vec<usize>>,
    pub g_mean: Option<Vec<f64>>,
}

impl Traces {
    pub fn draws(&self) -> usize {
        self.loglik.len()
    }

    /// Acceptance rates here cover kept draws only.
    pub fn view(&self) -> TraceView<'_> {
        let rate = |a: &[bool]| a.iter().filter(|&&x| x).count() as f64 / a.len().max(1) as f64;
        TraceView {
            n_profiles: self.n_profiles,
            n_items: self.n_items,
            lambda: &self.lambda,
            alpha0: &self.alpha0,
            xi: &self.xi,
            loglik: &self.loglik,
            theta1: self.theta1.as_deref(),
            n2: self.n2.as_deref(),
            acceptance_alpha0: rate(&self.accepted_alpha0),
            acceptance_xi: rate(&self.accepted_xi),
        }
    }

    pub fn lambda_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_profiles * self.n_items];
        for d in &self.lambda {
            m.iter_mut().zip(d).for_each(|(a, v)| *a += v);
        }
        m.iter_mut().for_each(|v| *v /= self.draws() as f64);
        m
    }

    /// DIC recomputed from the stored traces alone.
    pub fn dic(&self, data: &Dataset) -> Result<Dic> {
        let g = self.g_mean.as_ref().ok_or(GomError::MissingMembershipMeans)?;
        if self.draws() == 0 {
            return Err(GomError::InsufficientDraws { needed: 1, have: 0 });
        }
        if g.len() != data.n() * self.n_profiles || data.n_items() != self.n_items {
            return Err(GomError::LengthMismatch {
                what: "dataset individuals",
                expected: g.len() / self.n_profiles.max(1),
                got: data.n(),
            });
        }
        let theta1 = self.theta1.as_ref().map(|t| t.iter().sum::<f64>() / t.len() as f64);
        dic_from_parts(&self.loglik, deviance_at(&self.lambda_mean(), g, theta1, data))
    }

    pub fn aicm(&self) -> Result<f64> {
        aicm(&self.loglik)
    }
}

fn csv_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let file = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, l) in file.lines().enumerate() {
        let l = l?;
        if !l.trim().is_empty() {
            out.push((i + 1, l.split(',').map(|s| s.trim().to_string()).collect()));
        }
    }
    if out.is_empty() {
        return Err(GomError::Data { line: 0, message: format!("{} is empty", path.display()) });
    }
    Ok(out)
}

fn parse_flag(s: &str, line: usize) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(GomError::Data { line, message: format!("`{s}` is not 0 or 1") }),
    }
}

pub fn read_traces(dir: &Path) -> Result<Traces> {
    let lam = csv_lines(&dir.join("lambda.csv"))?;
    let draws = lam[0].1.len().saturating_sub(2);
    let mut cells: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (line, f) in &lam[1..] {
        if f.len() != draws + 2 {
            return Err(GomError::Data { line: *line, message: format!("expected {} fields, got {}", draws + 2, f.len()) });
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|_| GomError::Data { line: *line, message: format!("bad index `{s}`") });
        let vals = f[2..].iter().map(|s| parse_f64(s, *line)).collect::<Result<Vec<_>>>()?;
        cells.push((idx(&f[0])?, idx(&f[1])?, vals));
    }
    let k = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let j = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    if cells.len() != k * j {
        return Err(GomError::Data { line: 0, message: "lambda.csv does not cover a full K x J grid".into() });
    }
    let mut lambda = vec![vec![0.0; k * j]; draws];
    for (kk, jj, vals) in &cells {
        for (d, v) in vals.iter().enumerate() {
            lambda[d][kk * j + jj] = *v;
        }
    }

    let hyper = csv_lines(&dir.join("hyper.csv"))?;
    let header = &hyper[0].1;
    let extended = header.iter().any(|h| h == "theta1");
    let expected = 1 + 1 + k + 3 + if extended { 2 } else { 0 };
    let mut t = Traces {
        n_profiles: k,
        n_items: j,
        lambda,
        alpha0: Vec::new(),
        xi: Vec::new(),
        loglik: Vec::new(),
        accepted_alpha0: Vec::new(),
        accepted_xi: Vec::new(),
        theta1: extended.then(Vec::new),
        n2: extended.then(Vec::new),
        g_mean: None,
    };
    for (line, f) in &hyper[1..] {
        if f.len() != expected {
            return Err(GomError::Data { line: *line, message: format!("expected {expected} fields, got {}", f.len()) });
        }
        t.alpha0.push(parse_f64(&f[1], *line)?);
        t.xi.push(f[2..2 + k].iter().map(|s| parse_f64(s, *line)).collect::<Result<_>>()?);
        t.loglik.push(parse_f64(&f[2 + k], *line)?);
        t.accepted_alpha0.push(parse_flag(&f[3 + k], *line)?);
        t.accepted_xi.push(parse_flag(&f[4 + k], *line)?);
        if let (Some(th), Some(n2)) = (t.theta1.as_mut(), t.n2.as_mut()) {
            th.push(parse_f64(&f[5 + k], *line)?);
            n2.push(f[6 + k].parse().map_err(|_| GomError::Data { line: *line, message: format!("bad count `{}`", f[6 + k]) })?);
        }
    }
    if t.alpha0.len() != draws {
        return Err(GomError::Data { line: 0, message: format!("hyper.csv has {} draws, lambda.csv {draws}", t.alpha0.len()) });
    }
    let gpath = dir.join("g_mean.csv");
    if gpath.exists() {
        let mut g = Vec::new();
        for (line, f) in &csv_lines(&gpath)?[1..] {
            if f.len() != k + 1 {
                return Err(GomError::Data { line: *line, message: format!("expected {} fields, got {}", k + 1, f.len()) });
            }
            for s in &f[1..] {
                g.push(parse_f64(s, *line)?);
            }
        }
        t.g_mean = Some(g);
    }
    Ok(t)
}

pub fn write_criteria_csv(path: &Path, report: &CriteriaReport) -> Result<()> {
    let mut out = String::from("K,method");
    for l in &report.levels {
        out.push_str(&format!(",chi2_ge_{l},cells_ge_{l}"));
    }
    out.push_str(",bic_approx,lower_bound,dic,p_d,aicm,theta1\n");
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in &report.records {
        out.push_str(&format!("{},{}", r.k, r.method));
        for c in &r.chi2 {
            out.push_str(&format!(",{},{}", fmt_f64(c.value), c.cells));
        }
        out.push_str(&format!(
            ",{},{},{},{},{},{}\n",
            opt(r.bic_approx),
            opt(r.lower_bound),
            opt(r.dic),
            opt(r.p_d),
            opt(r.aicm),
            opt(r.theta1)
        ));
    }
    write_text(path, &out)
}

/// Observed and expected counts of the patterns seen at least `level` times, one column per fit.
pub fn write_expected_csv(path: &Path, report: &CriteriaReport, level: u64) -> Result<()> {
    let t = &report.expected;
    let mut out = String::from("pattern,observed");
    for c in &t.columns {
        out.push_str(&format!(",{}_K{}", c.method, c.k));
    }
    out.push('\n');
    for (row, (p, o)) in t.patterns.iter().zip(&t.observed).enumerate() {
        if *o < level {
            continue;
        }
        out.push_str(&format!("{p},{o}"));
        for c in &t.columns {
            out.push(',');
            out.push_str(&fmt_f64(c.values[row]));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_diagnostics_csv(path: &Path, report: &DiagnosticsReport) -> Result<()> {
    let mut out = String::from("parameter,mean,geweke_z,ess,status\n");
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for p in &report.parameters {
        let status = serde_json::to_value(p.status)?;
        out.push_str(&format!(
            "\"{}\",{},{},{},{}\n",
            p.name,
            fmt_f64(p.mean),
            opt(p.geweke_z),
            opt(p.ess),
            status.as_str().unwrap_or_default()
        ));
    }
    write_text(path, &out)
}
