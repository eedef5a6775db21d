//! Prediction files, P.1401 first-order mapping, MSE/LCC/SRCC at utterance
//! and system level, and summaries over repeated runs.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data_model::{Manifest, SystemType};
use crate::error::{Error, Result};
use crate::stats::t_quantile;

pub const PREDICTION_HEADER: [&str; 4] = ["utterance_id", "model_id", "run_id", "prediction"];
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Predictions of one trained model instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model_id: String,
    pub run_id: u64,
    /// (utterance_id, predicted MOS) in emission order.
    pub predictions: Vec<(String, f64)>,
}

impl PredictionSet {
    pub fn new(model_id: impl Into<String>, run_id: u64) -> Self {
        Self { model_id: model_id.into(), run_id, predictions: Vec::new() }
    }

    pub fn push(&mut self, utterance_id: impl Into<String>, prediction: f64) {
        self.predictions.push((utterance_id.into(), prediction));
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = PREDICTION_HEADER.join(",");
        out.push('\n');
        for (u, p) in &self.predictions {
            // `{}` on f64 prints the shortest string that round-trips.
            let _ = writeln!(out, "{},{},{},{}", csv_field(u), csv_field(&self.model_id), self.run_id, p);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Reads a prediction CSV. Rows are grouped into one set per
/// (model_id, run_id) in order of first appearance.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionSet>> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut cols = [0usize; 4];
    for (i, name) in PREDICTION_HEADER.iter().enumerate() {
        cols[i] = headers.iter().position(|h| h.trim() == *name).ok_or_else(|| Error::Validation {
            path: display.clone(),
            row: 0,
            field: name.to_string(),
            message: "missing column".into(),
        })?;
    }
    let mut sets: Vec<PredictionSet> = Vec::new();
    let mut seen: HashSet<(usize, String)> = HashSet::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = row + 1;
        let bad = |field: &str, message: String| Error::Validation {
            path: display.clone(),
            row,
            field: field.to_string(),
            message,
        };
        let utt = rec[cols[0]].trim().to_string();
        let model = rec[cols[1]].trim().to_string();
        let run: u64 = rec[cols[2]].trim().parse().map_err(|_| bad("run_id", format!("not an integer: `{}`", &rec[cols[2]])))?;
        let pred: f64 = rec[cols[3]].trim().parse().map_err(|_| bad("prediction", format!("not a number: `{}`", &rec[cols[3]])))?;
        if !pred.is_finite() {
            return Err(bad("prediction", "non-finite".into()));
        }
        let idx = match sets.iter().position(|s| s.model_id == model && s.run_id == run) {
            Some(i) => i,
            None => {
                sets.push(PredictionSet::new(model, run));
                sets.len() - 1
            }
        };
        if !seen.insert((idx, utt.clone())) {
            return Err(bad("utterance_id", format!("duplicate `{utt}` within run")));
        }
        sets[idx].push(utt, pred);
    }
    Ok(sets)
}

/// A prediction joined with its manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinedPrediction {
    pub utterance_id: String,
    pub system_id: String,
    pub system_type: SystemType,
    pub truth: f64,
    pub prediction: f64,
}

/// Joins predictions with ground truth from the manifest.
pub fn join(preds: &PredictionSet, manifest: &Manifest) -> Result<Vec<JoinedPrediction>> {
    let index = manifest.index();
    preds
        .predictions
        .iter()
        .map(|(u, p)| {
            let utt = index.get(u.as_str()).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "prediction for `{u}` (model {}, run {}) has no row in manifest `{}`",
                    preds.model_id, preds.run_id, manifest.name
                ))
            })?;
            Ok(JoinedPrediction {
                utterance_id: u.clone(),
                system_id: utt.system_id.clone(),
                system_type: utt.system_type,
                truth: utt.mos,
                prediction: *p,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mapping {
    pub a: f64,
    pub b: f64,
}

impl Mapping {
    pub const IDENTITY: Mapping = Mapping { a: 0.0, b: 1.0 };

    pub fn apply(&self, x: f64) -> f64 {
        self.a + self.b * x
    }
}

/// Least-squares fit of truth ≈ a + b·pred.
pub fn fit_p1401(pred: &[f64], truth: &[f64]) -> Result<Mapping> {
    check_pair(pred, truth, "fit_p1401")?;
    if pred.len() < 2 {
        return Err(Error::InvalidArgument("fit_p1401 needs at least 2 points".into()));
    }
    let n = pred.len() as f64;
    let mx = pred.iter().sum::<f64>() / n;
    let my = truth.iter().sum::<f64>() / n;
    let sxx: f64 = pred.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = pred.iter().zip(truth).map(|(x, y)| (x - mx) * (y - my)).sum();
    let spread = pred.iter().fold(0.0f64, |m, x| m.max((x - mx).abs()));
    if spread <= 1e-12 * mx.abs().max(1.0) || sxx == 0.0 {
        return Err(Error::MappingDegenerate);
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::MappingDegenerate);
    }
    Ok(Mapping { a, b })
}

/// Elementwise a + b·pred, unclipped.
pub fn apply_mapping(pred: &[f64], m: Mapping) -> Vec<f64> {
    pred.iter().map(|&x| m.apply(x)).collect()
}

fn check_pair(x: &[f64], y: &[f64], what: &str) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape(what, x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput(what.to_string()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, "mse")?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// Pearson correlation.
pub fn lcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, "lcc")?;
    if x.len() < 2 {
        return Err(Error::CorrDegenerate("need at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::CorrDegenerate("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; ties share the mean of their positions.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of mid-ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, "srcc")?;
    lcc(&mid_ranks(x), &mid_ranks(y)).map_err(|_| Error::CorrDegenerate("all values tied".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemAggregate {
    pub system_id: String,
    pub system_type: SystemType,
    pub mean_prediction: f64,
    pub mean_truth: f64,
    pub count: usize,
}

/// Per-system means, ordered by system id.
pub fn aggregate_by_system(rows: &[JoinedPrediction]) -> Vec<SystemAggregate> {
    let mut acc: BTreeMap<&str, (SystemType, f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(&r.system_id).or_insert((r.system_type, 0.0, 0.0, 0));
        e.1 += r.prediction;
        e.2 += r.truth;
        e.3 += 1;
    }
    acc.into_iter()
        .map(|(id, (t, p, y, n))| SystemAggregate {
            system_id: id.to_string(),
            system_type: t,
            mean_prediction: p / n as f64,
            mean_truth: y / n as f64,
            count: n,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Level {
    Utterance,
    System,
}

impl Level {
    pub const BOTH: [Level; 2] = [Level::Utterance, Level::System];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Utterance => "UTTERANCE",
            Level::System => "SYSTEM",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "utterance" | "utt" => Ok(Level::Utterance),
            "system" | "sys" => Ok(Level::System),
            _ => Err(Error::InvalidArgument(format!("unknown level `{s}` (expected utterance or system)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Metric {
    Mse,
    Lcc,
    Srcc,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mse, Metric::Lcc, Metric::Srcc];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mse => "MSE",
            Metric::Lcc => "LCC",
            Metric::Srcc => "SRCC",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which utterances enter an evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Tts,
    Vc,
    Types(Vec<SystemType>),
}

impl Subset {
    pub fn contains(&self, t: SystemType) -> bool {
        match self {
            Subset::All => true,
            Subset::Tts => SystemType::tts().contains(&t),
            Subset::Vc => SystemType::vc().contains(&t),
            Subset::Types(v) => v.contains(&t),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Subset::All => "all".into(),
            Subset::Tts => "tts".into(),
            Subset::Vc => "vc".into(),
            Subset::Types(v) => v.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("+"),
        }
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(Subset::All),
            "tts" => Ok(Subset::Tts),
            "vc" => Ok(Subset::Vc),
            other => {
                let types = other
                    .split(['+', ','])
                    .map(|t| t.to_ascii_uppercase().parse::<SystemType>())
                    .collect::<std::result::Result<Vec<_>, String>>()
                    .map_err(|_| Error::InvalidArgument(format!("unknown subset `{s}` (expected tts, vc, all or system types)")))?;
                Ok(Subset::Types(types))
            }
        }
    }
}

/// Metrics of one run at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: u64,
    pub n: usize,
    /// `None` when the fit was degenerate; metrics then use raw predictions.
    pub mapping: Option<Mapping>,
    pub mse: Option<f64>,
    pub lcc: Option<f64>,
    pub srcc: Option<f64>,
    pub flags: Vec<String>,
}

impl RunMetrics {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Mse => self.mse,
            Metric::Lcc => self.lcc,
            Metric::Srcc => self.srcc,
        }
    }
}

/// Mean with 95% Student-t half-width over runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub ci95: f64,
    pub runs: usize,
}

/// Mean and 95% half-width t_{0.975,n−1}·s/√n. A single value has
/// half-width 0 by convention.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ci95 = if n == 1 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        t_quantile(0.975, (n - 1) as f64) * (var / n as f64).sqrt()
    };
    Some(Summary { mean, ci95, runs: n })
}

/// Computes mapped metrics for (prediction, truth) pairs. `mapping` fixes
/// the coefficients; otherwise they are fitted on the pairs.
pub fn metrics_for_pairs(run_id: u64, pred: &[f64], truth: &[f64], mapping: Option<Mapping>) -> Result<RunMetrics> {
    check_pair(pred, truth, "evaluation")?;
    let mut flags = Vec::new();
    let mapping = match mapping {
        Some(m) => Some(m),
        None => match fit_p1401(pred, truth) {
            Ok(m) => Some(m),
            Err(Error::MappingDegenerate) | Err(Error::InvalidArgument(_)) => {
                flags.push("MAPPING_DEGENERATE: metrics computed on unmapped predictions".to_string());
                None
            }
            Err(e) => return Err(e),
        },
    };
    let mapped = apply_mapping(pred, mapping.unwrap_or(Mapping::IDENTITY));
    let mut corr = |r: Result<f64>, name: &str| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::CorrDegenerate(m)) => {
            flags.push(format!("{name}: CORR_DEGENERATE ({m})"));
            Ok(None)
        }
        Err(e) => Err(e),
    };
    let lcc_v = corr(lcc(&mapped, truth), "LCC")?;
    let srcc_v = corr(srcc(&mapped, truth), "SRCC")?;
    Ok(RunMetrics {
        run_id,
        n: pred.len(),
        mapping,
        mse: Some(mse(&mapped, truth)?),
        lcc: lcc_v,
        srcc: srcc_v,
        flags,
    })
}

/// (prediction, truth) pairs of a run at a level.
pub fn level_pairs(rows: &[JoinedPrediction], level: Level) -> (Vec<f64>, Vec<f64>) {
    match level {
        Level::Utterance => rows.iter().map(|r| (r.prediction, r.truth)).unzip(),
        Level::System => aggregate_by_system(rows).iter().map(|s| (s.mean_prediction, s.mean_truth)).unzip(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: Level,
    pub runs: Vec<RunMetrics>,
    pub mse: Option<Summary>,
    pub lcc: Option<Summary>,
    pub srcc: Option<Summary>,
}

impl LevelReport {
    pub fn summary(&self, m: Metric) -> Option<Summary> {
        match m {
            Metric::Mse => self.mse,
            Metric::Lcc => self.lcc,
            Metric::Srcc => self.srcc,
        }
    }

    pub fn values(&self, m: Metric) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.get(m)).collect()
    }

    fn from_runs(level: Level, runs: Vec<RunMetrics>) -> Self {
        let s = |m: Metric| summarize(&runs.iter().filter_map(|r| r.get(m)).collect::<Vec<_>>());
        Self {
            level,
            mse: s(Metric::Mse),
            lcc: s(Metric::Lcc),
            srcc: s(Metric::Srcc),
            runs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub model_id: String,
    pub manifest: String,
    pub subset: String,
    pub mapping_policy: String,
    pub run_count: usize,
    pub levels: Vec<LevelReport>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn level(&self, level: Level) -> Option<&LevelReport> {
        self.levels.iter().find(|l| l.level == level)
    }
}

pub const MAPPING_POLICY: &str =
    "first-order P.1401 polynomial fitted per run and per level (system level on per-system means); mapped values unclipped";

/// Evaluates every run independently at each requested level, then
/// summarizes across runs.
pub fn evaluate(runs: &[PredictionSet], manifest: &Manifest, levels: &[Level], subset: &Subset) -> Result<EvalReport> {
    let first = runs.first().ok_or_else(|| Error::EmptyInput("no prediction runs".into()))?;
    let mut warnings = Vec::new();
    for r in runs {
        if r.model_id != first.model_id {
            return Err(Error::InvalidArgument(format!(
                "evaluate expects runs of one model, got `{}` and `{}`",
                first.model_id, r.model_id
            )));
        }
    }
    let mut per_level: Vec<Vec<RunMetrics>> = vec![Vec::new(); levels.len()];
    for run in runs {
        let rows: Vec<JoinedPrediction> = join(run, manifest)?
            .into_iter()
            .filter(|r| subset.contains(r.system_type))
            .collect();
        if rows.is_empty() {
            warnings.push(format!("run {}: no utterances in subset {}", run.run_id, subset.label()));
            continue;
        }
        for (li, &level) in levels.iter().enumerate() {
            let (p, t) = level_pairs(&rows, level);
            match metrics_for_pairs(run.run_id, &p, &t, None) {
                Ok(m) => {
                    for f in &m.flags {
                        warnings.push(format!("run {} {level}: {f}", run.run_id));
                    }
                    per_level[li].push(m);
                }
                Err(e) => warnings.push(format!("run {} {level}: {e}", run.run_id)),
            }
        }
    }
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        model_id: first.model_id.clone(),
        manifest: manifest.name.clone(),
        subset: subset.label(),
        mapping_policy: MAPPING_POLICY.to_string(),
        run_count: runs.len(),
        levels: levels.iter().zip(per_level).map(|(&l, r)| LevelReport::from_runs(l, r)).collect(),
        warnings,
    })
}

fn cell(s: Option<Summary>) -> String {
    match s {
        Some(s) => format!("{:.2}±{:.2}", s.mean, s.ci95),
        None => "n/a".into(),
    }
}

/// Text table with one row per model: utterance-level then system-level
/// MSE, LCC and SRCC as mean±CI.
pub fn render_results_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.model_id.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:width$} | {:^35} | {:^35}", "", "Utterance Level", "System Level");
    let _ = writeln!(
        out,
        "{:width$} | {:>11} {:>11} {:>11} | {:>11} {:>11} {:>11}",
        "Model", "MSE", "LCC", "SRCC", "MSE", "LCC", "SRCC"
    );
    let _ = writeln!(out, "{}", "-".repeat(width + 78));
    for r in reports {
        let _ = write!(out, "{:width$} |", r.model_id);
        for (i, level) in Level::BOTH.iter().enumerate() {
            for m in Metric::ALL {
                let v = r.level(*level).and_then(|l| l.summary(m));
                let _ = write!(out, " {:>11}", cell(v));
            }
            if i == 0 {
                out.push_str(" |");
            }
        }
        out.push('\n');
    }
    out
}
