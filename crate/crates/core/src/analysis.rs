//! Dataset diagnostics: MOS histograms, per-system percentile bins by
//! system type, TTS/VC performance breakdown and the worst-system audit,
//! with SVG figures and CSV tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_model::{Manifest, SystemType};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_by_system, fit_p1401, join, level_pairs, metrics_for_pairs, summarize, JoinedPrediction, Level, LevelReport,
    Mapping, Metric, PredictionSet, RunMetrics, Subset, Summary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Normalization {
    Count,
    Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub edges: Vec<f64>,
    pub normalization: Normalization,
}

impl HistogramSpec {
    /// `bins` equal-width bins over [1, 5].
    pub fn equal_bins(bins: usize, normalization: Normalization) -> Self {
        let edges = (0..=bins).map(|i| 1.0 + 4.0 * i as f64 / bins as f64).collect();
        Self { edges, normalization }
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.len() < 2 {
            return Err(Error::InvalidArgument("histogram needs at least 2 edges".into()));
        }
        if self.edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("histogram edges must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Bin of `v`: bins are left-inclusive, the last bin also includes its
    /// right edge.
    pub fn bin_of(&self, v: f64) -> Option<usize> {
        let n = self.edges.len() - 1;
        if v < self.edges[0] || v > self.edges[n] {
            return None;
        }
        if v == self.edges[n] {
            return Some(n - 1);
        }
        Some(self.edges.partition_point(|&e| e <= v) - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub dataset: String,
    pub edges: Vec<f64>,
    pub normalization: Normalization,
    pub values: Vec<f64>,
    pub total: usize,
}

pub fn mos_histogram(manifest: &Manifest, spec: &HistogramSpec) -> Result<Histogram> {
    spec.validate()?;
    if manifest.is_empty() {
        return Err(Error::EmptyManifest(manifest.name.clone()));
    }
    let mut counts = vec![0usize; spec.edges.len() - 1];
    for u in &manifest.utterances {
        let b = spec.bin_of(u.mos).ok_or_else(|| {
            Error::InvalidArgument(format!("MOS {} of `{}` lies outside the histogram edges", u.mos, u.utterance_id))
        })?;
        counts[b] += 1;
    }
    let total = manifest.len();
    let values = counts
        .iter()
        .map(|&c| match spec.normalization {
            Normalization::Count => c as f64,
            Normalization::Proportion => c as f64 / total as f64,
        })
        .collect();
    Ok(Histogram {
        dataset: manifest.name.clone(),
        edges: spec.edges.clone(),
        normalization: spec.normalization,
        values,
        total,
    })
}

/// Percentile of sorted data with linear interpolation between closest
/// ranks (position p·(n−1)).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMos {
    pub system_id: String,
    pub system_type: SystemType,
    pub mos: f64,
    pub utterances: usize,
}

/// Per-system mean MOS, ordered by system id. A system's type is the type
/// of its first utterance.
pub fn system_means(manifest: &Manifest) -> Vec<SystemMos> {
    let mut acc: BTreeMap<&str, (SystemType, f64, usize)> = BTreeMap::new();
    for u in &manifest.utterances {
        let e = acc.entry(&u.system_id).or_insert((u.system_type, 0.0, 0));
        e.1 += u.mos;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(id, (t, s, n))| SystemMos {
            system_id: id.to_string(),
            system_type: t,
            mos: s / n as f64,
            utterances: n,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileBin {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub systems: Vec<String>,
    pub composition: BTreeMap<SystemType, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileBinReport {
    pub dataset: String,
    /// 20/40/60/80th percentiles of per-system MOS.
    pub edges: [f64; 4],
    pub bins: Vec<PercentileBin>,
    pub definition: String,
}

pub const PERCENTILE_DEFINITION: &str =
    "per-system mean MOS; 20/40/60/80th percentiles by linear interpolation at position p*(n-1); a system on an edge goes to the lower bin";

pub fn percentile_bins_by_system(manifest: &Manifest) -> Result<PercentileBinReport> {
    let systems = system_means(manifest);
    if systems.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "percentile binning needs at least 5 systems, manifest `{}` has {}; use a larger split or pool splits",
            manifest.name,
            systems.len()
        )));
    }
    let mut sorted: Vec<f64> = systems.iter().map(|s| s.mos).collect();
    sorted.sort_by(f64::total_cmp);
    let edges = [0.2, 0.4, 0.6, 0.8].map(|p| percentile(&sorted, p));
    let bounds = [sorted[0], edges[0], edges[1], edges[2], edges[3], sorted[sorted.len() - 1]];
    let mut bins: Vec<PercentileBin> = (0..5)
        .map(|i| PercentileBin {
            index: i,
            lower: bounds[i],
            upper: bounds[i + 1],
            systems: Vec::new(),
            composition: BTreeMap::new(),
        })
        .collect();
    for s in &systems {
        let b = edges.iter().filter(|&&e| s.mos > e).count();
        bins[b].systems.push(s.system_id.clone());
        *bins[b].composition.entry(s.system_type).or_insert(0) += 1;
    }
    Ok(PercentileBinReport {
        dataset: manifest.name.clone(),
        edges,
        bins,
        definition: PERCENTILE_DEFINITION.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SubsetMapping {
    /// Refit the P.1401 mapping inside each subset.
    Refit,
    /// Fit once per run on all utterances and reuse it for every subset.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub name: String,
    pub types: Vec<SystemType>,
    pub utterances: usize,
    pub report: Option<LevelReport>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownReport {
    pub model_id: String,
    pub dataset: String,
    pub mapping: SubsetMapping,
    pub partitions: Vec<PartitionResult>,
}

/// TTS (BC, ESPNET) and VC (VCC); natural speech is left out.
pub fn default_partitions() -> Vec<(String, Vec<SystemType>)> {
    vec![
        ("TTS".into(), vec![SystemType::Bc, SystemType::Espnet]),
        ("VC".into(), vec![SystemType::Vcc]),
    ]
}

/// Utterance-level metrics per system-type partition, per run, summarized
/// with 95% CIs.
pub fn system_type_breakdown(
    runs: &[PredictionSet],
    manifest: &Manifest,
    partitions: &[(String, Vec<SystemType>)],
    mapping: SubsetMapping,
) -> Result<BreakdownReport> {
    let first = runs.first().ok_or_else(|| Error::EmptyInput("no prediction runs".into()))?;
    for (i, (na, ta)) in partitions.iter().enumerate() {
        for (nb, tb) in &partitions[i + 1..] {
            if ta.iter().any(|t| tb.contains(t)) {
                return Err(Error::InvalidArgument(format!("partitions `{na}` and `{nb}` overlap")));
            }
        }
    }
    let joined: Vec<Vec<JoinedPrediction>> = runs.iter().map(|r| join(r, manifest)).collect::<Result<_>>()?;
    let globals: Vec<Option<Mapping>> = joined
        .iter()
        .map(|rows| {
            let (p, t) = level_pairs(rows, Level::Utterance);
            fit_p1401(&p, &t).ok()
        })
        .collect();
    let mut partitions_out = Vec::new();
    for (name, types) in partitions {
        let subset = Subset::Types(types.clone());
        let mut run_metrics: Vec<RunMetrics> = Vec::new();
        let mut flags = Vec::new();
        let mut utterances = 0;
        for ((run, rows), global) in runs.iter().zip(&joined).zip(&globals) {
            let rows: Vec<JoinedPrediction> = rows.iter().filter(|r| subset.contains(r.system_type)).cloned().collect();
            utterances = rows.len();
            if rows.is_empty() {
                continue;
            }
            let (p, t) = level_pairs(&rows, Level::Utterance);
            let fixed = match mapping {
                SubsetMapping::Refit => None,
                SubsetMapping::Global => *global,
            };
            match metrics_for_pairs(run.run_id, &p, &t, fixed) {
                Ok(m) => run_metrics.push(m),
                Err(e) => flags.push(format!("run {}: {e}", run.run_id)),
            }
        }
        if utterances == 0 {
            flags.push("EMPTY_SUBSET".into());
        }
        let report = (!run_metrics.is_empty()).then(|| {
            let s = |m: Metric| summarize(&run_metrics.iter().filter_map(|r| r.get(m)).collect::<Vec<_>>());
            LevelReport {
                level: Level::Utterance,
                mse: s(Metric::Mse),
                lcc: s(Metric::Lcc),
                srcc: s(Metric::Srcc),
                runs: run_metrics,
            }
        });
        partitions_out.push(PartitionResult {
            name: name.clone(),
            types: types.clone(),
            utterances,
            report,
            flags,
        });
    }
    Ok(BreakdownReport {
        model_id: first.model_id.clone(),
        dataset: manifest.name.clone(),
        mapping,
        partitions: partitions_out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemError {
    pub system_id: String,
    pub system_type: SystemType,
    pub utterances: usize,
    /// |mapped mean prediction − mean truth| at system level, averaged over runs.
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub model_id: String,
    pub systems: Vec<SystemError>,
    pub notes: Vec<String>,
}

/// Ranks systems by system-level absolute error after per-run mapping,
/// worst first; ties keep system-id order.
pub fn worst_systems_audit(runs: &[PredictionSet], manifest: &Manifest, k: usize) -> Result<AuditReport> {
    let first = runs.first().ok_or_else(|| Error::EmptyInput("no prediction runs".into()))?;
    let mut notes = Vec::new();
    let mut acc: BTreeMap<String, (SystemType, usize, f64, usize)> = BTreeMap::new();
    for run in runs {
        let rows = join(run, manifest)?;
        let systems = aggregate_by_system(&rows);
        let (p, t): (Vec<f64>, Vec<f64>) = systems.iter().map(|s| (s.mean_prediction, s.mean_truth)).unzip();
        let m = match fit_p1401(&p, &t) {
            Ok(m) => m,
            Err(_) => {
                notes.push(format!("run {}: mapping degenerate, errors use raw predictions", run.run_id));
                Mapping::IDENTITY
            }
        };
        for s in systems {
            let e = acc.entry(s.system_id.clone()).or_insert((s.system_type, s.count, 0.0, 0));
            e.2 += (m.apply(s.mean_prediction) - s.mean_truth).abs();
            e.3 += 1;
        }
    }
    let mut systems: Vec<SystemError> = acc
        .into_iter()
        .map(|(id, (t, n, sum, runs))| SystemError {
            system_id: id,
            system_type: t,
            utterances: n,
            mean_abs_error: sum / runs as f64,
        })
        .collect();
    systems.sort_by(|a, b| b.mean_abs_error.total_cmp(&a.mean_abs_error));
    if systems.iter().all(|s| s.mean_abs_error < 1e-9) {
        notes.push("DEGENERATE_RANKING: every system error is zero".into());
    }
    if k > systems.len() {
        notes.push(format!("requested top {k}, only {} systems available", systems.len()));
    }
    systems.truncate(k);
    Ok(AuditReport { model_id: first.model_id.clone(), systems, notes })
}

/// `fig_<analysis>_<dataset>.<ext>` inside `dir`.
pub fn figure_path(dir: &Path, analysis: &str, dataset: &str, ext: &str) -> PathBuf {
    dir.join(format!("fig_{analysis}_{}.{ext}", safe_name(dataset)))
}

/// File-name-safe form of an identifier (`ConvMaxPool*` → `ConvMaxPool_star`).
pub fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| match c {
            '*' => "_star".to_string(),
            c if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' => c.to_string(),
            _ => "_".to_string(),
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

struct Bar {
    label: String,
    value: f64,
    whisker: Option<f64>,
    group: usize,
}

const PALETTE: [&str; 5] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3"];

fn svg_bars(title: &str, y_label: &str, bars: &[Bar], legend: &[String]) -> String {
    let (w, h, left, bottom, top) = (640.0, 360.0, 60.0, 50.0, 40.0);
    let plot_h = h - bottom - top;
    let ymax = bars
        .iter()
        .map(|b| b.value + b.whisker.unwrap_or(0.0))
        .fold(0.0f64, f64::max)
        .max(1e-12)
        * 1.1;
    let slot = (w - left - 20.0) / bars.len().max(1) as f64;
    let y = |v: f64| top + plot_h * (1.0 - v / ymax);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, xml(title));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, h - bottom);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, h - bottom, w - 20.0);
    for i in 0..=4 {
        let v = ymax * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#, left - 4.0, y(v) + 4.0, v);
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        xml(y_label)
    );
    for (i, b) in bars.iter().enumerate() {
        let x = left + slot * i as f64 + slot * 0.1;
        let bw = slot * 0.8;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="{}"/>"#,
            y(b.value),
            (y(0.0) - y(b.value)).max(0.0),
            PALETTE[b.group % PALETTE.len()]
        );
        if let Some(wk) = b.whisker {
            let cx = x + bw / 2.0;
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                y(b.value + wk),
                y((b.value - wk).max(0.0))
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x + bw / 2.0,
            h - bottom + 14.0,
            xml(&b.label)
        );
    }
    for (i, name) in legend.iter().enumerate() {
        let lx = w - 150.0;
        let ly = top + 14.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{lx}" y="{ly}" width="10" height="10" fill="{}"/>"#, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 14.0, ly + 9.0, xml(name));
    }
    s.push_str("</svg>\n");
    s
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes the histogram as SVG and CSV; returns both paths.
pub fn write_histogram(h: &Histogram, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut csv = String::from("lower,upper,value\n");
    let mut bars = Vec::new();
    for (i, v) in h.values.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{}", h.edges[i], h.edges[i + 1], v);
        bars.push(Bar { label: format!("{:.2}", h.edges[i]), value: *v, whisker: None, group: 0 });
    }
    let y_label = match h.normalization {
        Normalization::Count => "count",
        Normalization::Proportion => "proportion",
    };
    let csv_path = figure_path(dir, "histogram", &h.dataset, "csv");
    let svg_path = figure_path(dir, "histogram", &h.dataset, "svg");
    write_file(&csv_path, &csv)?;
    write_file(&svg_path, &svg_bars(&format!("MOS histogram: {}", h.dataset), y_label, &bars, &[]))?;
    Ok(vec![svg_path, csv_path])
}

pub fn write_percentile_bins(r: &PercentileBinReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let types: Vec<SystemType> = SystemType::ALL
        .into_iter()
        .filter(|t| r.bins.iter().any(|b| b.composition.contains_key(t)))
        .collect();
    let mut csv = String::from("bin,lower,upper,system_type,systems\n");
    let mut bars = Vec::new();
    for b in &r.bins {
        for (g, t) in types.iter().enumerate() {
            let n = b.composition.get(t).copied().unwrap_or(0);
            let _ = writeln!(csv, "{},{},{},{},{}", b.index + 1, b.lower, b.upper, t, n);
            bars.push(Bar { label: format!("{}{}", b.index + 1, &t.as_str()[..1]), value: n as f64, whisker: None, group: g });
        }
    }
    let csv_path = figure_path(dir, "percentile_bins", &r.dataset, "csv");
    let svg_path = figure_path(dir, "percentile_bins", &r.dataset, "svg");
    write_file(&csv_path, &csv)?;
    let legend: Vec<String> = types.iter().map(|t| t.to_string()).collect();
    write_file(&svg_path, &svg_bars(&format!("Systems per MOS-percentile bin: {}", r.dataset), "systems", &bars, &legend))?;
    Ok(vec![svg_path, csv_path])
}

fn fmt_summary(s: Option<Summary>) -> (String, String) {
    match s {
        Some(s) => (s.mean.to_string(), s.ci95.to_string()),
        None => (String::new(), String::new()),
    }
}

pub fn write_breakdown(r: &BreakdownReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut csv = String::from("model_id,partition,utterances,metric,mean,ci95\n");
    let mut bars = Vec::new();
    for (mi, m) in Metric::ALL.iter().enumerate() {
        for (pi, p) in r.partitions.iter().enumerate() {
            let s = p.report.as_ref().and_then(|l| l.summary(*m));
            let (mean, ci) = fmt_summary(s);
            let _ = writeln!(csv, "{},{},{},{},{},{}", r.model_id, p.name, p.utterances, m, mean, ci);
            if let Some(s) = s {
                bars.push(Bar {
                    label: if pi == 0 { m.to_string() } else { String::new() },
                    value: s.mean.max(0.0),
                    whisker: Some(s.ci95),
                    group: pi,
                });
            }
        }
        if mi + 1 < Metric::ALL.len() {
            bars.push(Bar { label: String::new(), value: 0.0, whisker: None, group: 0 });
        }
    }
    let name = format!("{}_{}", r.dataset, r.model_id);
    let csv_path = figure_path(dir, "system_type_breakdown", &name, "csv");
    let svg_path = figure_path(dir, "system_type_breakdown", &name, "svg");
    write_file(&csv_path, &csv)?;
    let legend: Vec<String> = r.partitions.iter().map(|p| p.name.clone()).collect();
    write_file(
        &svg_path,
        &svg_bars(&format!("Utterance-level metrics by system type: {}", r.model_id), "value (95% CI)", &bars, &legend),
    )?;
    Ok(vec![svg_path, csv_path])
}

pub fn write_audit(r: &AuditReport, dataset: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut csv = String::from("rank,system_id,system_type,utterances,mean_abs_error\n");
    for (i, s) in r.systems.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{},{},{}", i + 1, s.system_id, s.system_type, s.utterances, s.mean_abs_error);
    }
    let path = figure_path(dir, "worst_systems", &format!("{dataset}_{}", r.model_id), "csv");
    write_file(&path, &csv)?;
    Ok(vec![path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{Split, Utterance};

    fn manifest(rows: &[(&str, SystemType, f64)]) -> Manifest {
        let utts = rows
            .iter()
            .enumerate()
            .map(|(i, (sys, t, mos))| Utterance {
                utterance_id: format!("u{i}"),
                audio_path: PathBuf::from(format!("u{i}.wav")),
                system_id: sys.to_string(),
                system_type: *t,
                mos: *mos,
                split: Split::Test,
                num_raters: None,
            })
            .collect();
        Manifest::new("fixture", utts).unwrap()
    }

    #[test]
    fn histogram_edge_convention() {
        let m = manifest(&[1.0, 2.0, 3.0, 4.0, 5.0].map(|v| ("s", SystemType::Bc, v)));
        let h = mos_histogram(&m, &HistogramSpec::equal_bins(4, Normalization::Count)).unwrap();
        assert_eq!(h.values, vec![1.0, 1.0, 1.0, 2.0]);
        let p = mos_histogram(&m, &HistogramSpec::equal_bins(4, Normalization::Proportion)).unwrap();
        assert!((p.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn five_systems_five_bins() {
        let rows: Vec<(String, SystemType, f64)> = (1..=5).map(|i| (format!("s{i}"), SystemType::Bc, i as f64)).collect();
        let rows: Vec<(&str, SystemType, f64)> = rows.iter().map(|(s, t, v)| (s.as_str(), *t, *v)).collect();
        let r = percentile_bins_by_system(&manifest(&rows)).unwrap();
        for b in &r.bins {
            assert_eq!(b.systems.len(), 1);
        }
    }

    #[test]
    fn too_few_systems() {
        let m = manifest(&[("a", SystemType::Bc, 2.0), ("b", SystemType::Vcc, 3.0)]);
        assert!(percentile_bins_by_system(&m).unwrap_err().to_string().contains("at least 5 systems"));
    }

    #[test]
    fn biased_system_ranks_worst() {
        let mut rows = Vec::new();
        for s in 0..6 {
            for k in 0..4 {
                rows.push((["a", "b", "c", "d", "e", "f"][s], SystemType::Bc, 1.5 + s as f64 * 0.5 + k as f64 * 0.1));
            }
        }
        let m = manifest(&rows);
        let mut p = PredictionSet::new("m", 0);
        for u in &m.utterances {
            let bias = if u.system_id == "c" { 1.0 } else { 0.0 };
            p.push(u.utterance_id.clone(), u.mos + bias);
        }
        let a = worst_systems_audit(&[p], &m, 3).unwrap();
        assert_eq!(a.systems[0].system_id, "c");
    }

    #[test]
    fn perfect_predictor_audit_is_degenerate() {
        let rows: Vec<(&str, SystemType, f64)> = vec![("a", SystemType::Bc, 2.0), ("b", SystemType::Vcc, 3.0), ("c", SystemType::Bc, 4.0)];
        let m = manifest(&rows);
        let mut p = PredictionSet::new("m", 0);
        for u in &m.utterances {
            p.push(u.utterance_id.clone(), u.mos);
        }
        let a = worst_systems_audit(&[p], &m, 10).unwrap();
        assert!(a.notes.iter().any(|n| n.starts_with("DEGENERATE_RANKING")));
        assert!(a.notes.iter().any(|n| n.contains("only 3 systems")));
    }
}
