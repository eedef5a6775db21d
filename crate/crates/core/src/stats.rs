//! One-way ANOVA and Tukey HSD (Tukey-Kramer) with the F, Student-t and
//! studentized-range distributions evaluated numerically.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{EvalReport, Level, Metric, REPORT_SCHEMA_VERSION};

pub const DEFAULT_ALPHA: f64 = 0.05;

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Regularized lower incomplete gamma P(a, x).
pub fn inc_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let lg = if a == 0.5 { 0.572_364_942_924_700_1 } else { ln_gamma(a) };
    let ln_front = -x + a * x.ln() - lg;
    if x < a + 1.0 {
        let mut sum = 1.0 / a;
        let mut del = sum;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * ln_front.exp()
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - ln_front.exp() * h
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    let p = 0.5 * inc_gamma(0.5, z * z / 2.0);
    if z >= 0.0 {
        0.5 + p
    } else {
        0.5 - p
    }
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Upper tail P(F > f) of the F distribution with (d1, d2) degrees of freedom.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// Student-t CDF with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * inc_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value of a t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Student-t quantile for p in (0, 1).
pub fn t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0 && df > 0.0);
    if p < 0.5 {
        return -t_quantile(1.0 - p, df);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

const GL16_X: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_8,
    0.755_404_408_355_003,
    0.865_631_202_387_831_8,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL16_W: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_78,
    0.062_253_523_938_647_89,
    0.027_152_459_411_754_09,
];

/// Composite 16-point Gauss-Legendre quadrature.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut s = 0.0;
        for (x, w) in GL16_X.iter().zip(&GL16_W) {
            s += w * (f(mid - half * x) + f(mid + half * x));
        }
        total += s * half;
    }
    total
}

fn gl_nodes(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * 16);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        for (x, w) in GL16_X.iter().zip(&GL16_W) {
            out.push((mid - half * x, w * half));
            out.push((mid + half * x, w * half));
        }
    }
    out
}

/// Quadrature nodes over z with φ(z) folded into the weights and Φ(z)
/// cached.
fn range_nodes() -> &'static [(f64, f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| {
        gl_nodes(-8.5, 8.5, 16)
            .into_iter()
            .map(|(z, w)| (z, w * normal_pdf(z), normal_cdf(z)))
            .collect()
    })
}

/// P(range of k standard normals ≤ w).
fn normal_range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let e = (k - 1) as i32;
    let mut total = 0.0;
    for &(z, wphi, cdf) in range_nodes() {
        let shifted = z - w;
        let lower = if shifted < -9.0 { 0.0 } else { normal_cdf(shifted) };
        let d = cdf - lower;
        if d > 0.0 {
            total += wphi * d.powi(e);
        }
    }
    (k as f64 * total).clamp(0.0, 1.0)
}

/// CDF of the studentized range distribution with `k` means and `df`
/// error degrees of freedom.
pub fn ptukey(q: f64, k: usize, df: f64) -> f64 {
    assert!(k >= 2 && df > 0.0);
    if q <= 0.0 {
        return 0.0;
    }
    if q.is_infinite() {
        return 1.0;
    }
    if df > 25_000.0 {
        return normal_range_cdf(q, k);
    }
    // s = sqrt(χ²_df / df) has density c · s^(df−1) · exp(−df·s²/2).
    let ln_c = (df / 2.0) * (df / 2.0).ln() - ln_gamma(df / 2.0) + (2.0f64).ln();
    let density = |s: f64| {
        if s <= 0.0 {
            0.0
        } else {
            (ln_c + (df - 1.0) * s.ln() - df * s * s / 2.0).exp()
        }
    };
    let spread = 14.0 * (2.0 * df).sqrt() + 60.0;
    let hi = ((df + spread) / df).sqrt();
    let lo = ((df - spread).max(0.0) / df).sqrt();
    let v = integrate(|s| density(s) * normal_range_cdf(q * s, k), lo, hi, 24);
    v.clamp(0.0, 1.0)
}

/// Upper α critical value of the studentized range. Results are memoized
/// per (α, k, df).
pub fn qtukey(alpha: f64, k: usize, df: f64) -> f64 {
    static MEMO: OnceLock<Mutex<HashMap<(u64, usize, u64), f64>>> = OnceLock::new();
    let key = (alpha.to_bits(), k, df.to_bits());
    let memo = MEMO.get_or_init(Default::default);
    if let Some(&q) = memo.lock().expect("qtukey memo").get(&key) {
        return q;
    }
    let q = solve_qtukey(alpha, k, df);
    memo.lock().expect("qtukey memo").insert(key, q);
    q
}

fn solve_qtukey(alpha: f64, k: usize, df: f64) -> f64 {
    let g = |q: f64| ptukey(q, k, df) - (1.0 - alpha);
    let (mut a, mut b) = (1e-3, 4.0);
    let (mut fa, mut fb) = (g(a), g(b));
    while fb < 0.0 {
        a = b;
        fa = fb;
        b *= 2.0;
        fb = g(b);
    }
    // Illinois variant of regula falsi.
    let mut side = 0;
    for _ in 0..100 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = g(c);
        if fc.abs() < 1e-13 || (b - a).abs() < 1e-12 * c {
            return c;
        }
        if fc * fb > 0.0 {
            b = c;
            fb = fc;
            if side == -1 {
                fa /= 2.0;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb /= 2.0;
            }
            side = 1;
        }
    }
    (a * fb - b * fa) / (fb - fa)
}

/// Named groups of observations (one value per run and model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSamples {
    pub metric: String,
    pub groups: Vec<(String, Vec<f64>)>,
}

impl MetricSamples {
    pub fn new(metric: impl Into<String>, groups: Vec<(String, Vec<f64>)>) -> Self {
        Self { metric: metric.into(), groups }
    }

    pub fn from_values(groups: &[&[f64]]) -> Self {
        let labels = (0..groups.len()).map(|i| {
            if i < 26 {
                ((b'A' + i as u8) as char).to_string()
            } else {
                format!("G{i}")
            }
        });
        Self::new(
            "",
            labels.zip(groups).map(|(l, g)| (l, g.to_vec())).collect(),
        )
    }

    fn validate(&self) -> Result<()> {
        if self.groups.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "{}: need at least 2 groups, got {}",
                self.metric,
                self.groups.len()
            )));
        }
        for (name, g) in &self.groups {
            if g.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "{}: group `{name}` has {} observations, need at least 2",
                    self.metric,
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{}: group `{name}` has non-finite values", self.metric)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnovaFlag {
    /// Zero within-group variance with unequal means: F = +∞, p = 0.
    InfiniteF,
    /// Every observation identical: F undefined.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: f64,
    pub ss_within: f64,
    pub flag: Option<AnovaFlag>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn one_way_anova(samples: &MetricSamples) -> Result<AnovaResult> {
    samples.validate()?;
    let k = samples.groups.len();
    let n: usize = samples.groups.iter().map(|(_, g)| g.len()).sum();
    let grand = samples.groups.iter().flat_map(|(_, g)| g.iter()).sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for (_, g) in &samples.groups {
        let m = mean(g);
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let (dfb, dfw) = (k - 1, n - k);
    let scale = samples
        .groups
        .iter()
        .flat_map(|(_, g)| g.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let negligible = |ss: f64| ss <= (scale * 1e-12).powi(2) * n as f64;
    let (f, p, flag) = if negligible(ssw) {
        if negligible(ssb) {
            (f64::NAN, f64::NAN, Some(AnovaFlag::Degenerate))
        } else {
            (f64::INFINITY, 0.0, Some(AnovaFlag::InfiniteF))
        }
    } else {
        let f = (ssb / dfb as f64) / (ssw / dfw as f64);
        (f, f_sf(f, dfb as f64, dfw as f64), None)
    };
    Ok(AnovaResult {
        f,
        p,
        df_between: dfb,
        df_within: dfw,
        ss_between: ssb,
        ss_within: ssw,
        flag,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyPair {
    pub a: String,
    pub b: String,
    /// mean(a) − mean(b).
    pub mean_diff: f64,
    pub q: f64,
    pub p_adj: f64,
    pub critical_q: f64,
    /// Null hypothesis of equal means rejected at α.
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyResult {
    pub alpha: f64,
    pub ms_within: f64,
    pub df_within: usize,
    pub critical_q: f64,
    pub pairs: Vec<TukeyPair>,
    pub flag: Option<AnovaFlag>,
}

/// Tukey HSD with the Tukey-Kramer standard error for unequal group sizes.
/// Pairs are listed in group order (0,1), (0,2), …, (k−2,k−1).
pub fn tukey_hsd(samples: &MetricSamples, alpha: f64) -> Result<TukeyResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let anova = one_way_anova(samples)?;
    let k = samples.groups.len();
    let dfw = anova.df_within;
    let msw = anova.ss_within / dfw as f64;
    let critical = qtukey(alpha, k, dfw as f64);
    let means: Vec<f64> = samples.groups.iter().map(|(_, g)| mean(g)).collect();
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let (ni, nj) = (samples.groups[i].1.len() as f64, samples.groups[j].1.len() as f64);
            let diff = means[i] - means[j];
            let (q, p) = match anova.flag {
                Some(_) => {
                    if diff == 0.0 {
                        (0.0, 1.0)
                    } else {
                        (f64::INFINITY, 0.0)
                    }
                }
                None => {
                    let se = (msw / 2.0 * (1.0 / ni + 1.0 / nj)).sqrt();
                    let q = diff.abs() / se;
                    (q, 1.0 - ptukey(q, k, dfw as f64))
                }
            };
            pairs.push(TukeyPair {
                a: samples.groups[i].0.clone(),
                b: samples.groups[j].0.clone(),
                mean_diff: diff,
                q,
                p_adj: p.clamp(0.0, 1.0),
                critical_q: critical,
                rejected: q > critical,
            });
        }
    }
    Ok(TukeyResult {
        alpha,
        ms_within: msw,
        df_within: dfw,
        critical_q: critical,
        pairs,
        flag: anova.flag,
    })
}

/// Pooled two-sample t statistic and degrees of freedom.
pub fn pooled_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (ma, mb) = (mean(a), mean(b));
    let ssa: f64 = a.iter().map(|v| (v - ma).powi(2)).sum();
    let ssb: f64 = b.iter().map(|v| (v - mb).powi(2)).sum();
    let df = (a.len() + b.len() - 2) as f64;
    let sp2 = (ssa + ssb) / df;
    let t = (ma - mb) / (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
    (t, df)
}

/// ANOVA and Tukey results for one (level, metric) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub level: Level,
    pub metric: Metric,
    pub models: Vec<String>,
    pub anova: Option<AnovaResult>,
    /// ANOVA rejected the hypothesis that all means are equal.
    pub anova_rejected: bool,
    /// Tukey results are computed regardless of the ANOVA outcome.
    pub tukey: Option<TukeyResult>,
    pub annotations: Vec<String>,
}

impl ComparisonCell {
    /// Whether the pair is reported as "equal means not rejected". With the
    /// ANOVA gate, a non-rejecting ANOVA marks every pair as not rejected.
    pub fn not_rejected(&self, a: &str, b: &str, gate: bool) -> Option<bool> {
        if gate && self.anova.is_some() && !self.anova_rejected {
            return Some(true);
        }
        let pair = self.tukey.as_ref()?.pairs.iter().find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))?;
        Some(!pair.rejected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub a: String,
    pub b: String,
    /// One entry per (level, metric) in [`ComparisonReport::columns`] order;
    /// `None` where the test could not be run.
    pub not_rejected: Vec<Option<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub alpha: f64,
    pub anova_gate: bool,
    pub models: Vec<String>,
    pub columns: Vec<(Level, Metric)>,
    pub cells: Vec<ComparisonCell>,
    /// All k(k−1)/2 pairs.
    pub pairs: Vec<PairRow>,
}

/// Runs one-way ANOVA and Tukey HSD across models for every level and
/// metric, using per-run metric values as observations.
pub fn compare_models(reports: &[EvalReport], alpha: f64, anova_gate: bool) -> Result<ComparisonReport> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument(format!("compare needs at least 2 models, got {}", reports.len())));
    }
    let models: Vec<String> = reports.iter().map(|r| r.model_id.clone()).collect();
    let mut columns = Vec::new();
    let mut cells = Vec::new();
    for level in Level::BOTH {
        if reports.iter().all(|r| r.level(level).is_none()) {
            continue;
        }
        for metric in Metric::ALL {
            columns.push((level, metric));
            let mut annotations = Vec::new();
            let mut groups = Vec::new();
            for r in reports {
                let values = r.level(level).map(|l| l.values(metric)).unwrap_or_default();
                if values.len() < 2 {
                    annotations.push(format!("{}: {} run values, excluded", r.model_id, values.len()));
                } else {
                    groups.push((r.model_id.clone(), values));
                }
            }
            let samples = MetricSamples::new(format!("{level}/{metric}"), groups);
            let models_in: Vec<String> = samples.groups.iter().map(|g| g.0.clone()).collect();
            let (anova, tukey) = if samples.groups.len() >= 2 {
                let anova = one_way_anova(&samples)?;
                if let Some(flag) = anova.flag {
                    annotations.push(format!("ANOVA {flag:?}"));
                }
                let tukey = tukey_hsd(&samples, alpha)?;
                (Some(anova), Some(tukey))
            } else {
                annotations.push("fewer than 2 models with enough runs".into());
                (None, None)
            };
            let anova_rejected = anova.as_ref().is_some_and(|a| a.flag != Some(AnovaFlag::Degenerate) && a.p < alpha);
            cells.push(ComparisonCell {
                level,
                metric,
                models: models_in,
                anova,
                anova_rejected,
                tukey,
                annotations,
            });
        }
    }
    let mut pairs = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            let (a, b) = (&models[i], &models[j]);
            pairs.push(PairRow {
                a: a.clone(),
                b: b.clone(),
                not_rejected: cells.iter().map(|c| c.not_rejected(a, b, anova_gate)).collect(),
            });
        }
    }
    Ok(ComparisonReport {
        schema_version: REPORT_SCHEMA_VERSION,
        alpha,
        anova_gate,
        models,
        columns,
        cells,
        pairs,
    })
}

impl ComparisonReport {
    /// Pairs with at least one non-rejected null hypothesis.
    pub fn filtered_pairs(&self) -> Vec<&PairRow> {
        self.pairs.iter().filter(|p| p.not_rejected.contains(&Some(true))).collect()
    }

    /// Pairs × (level, metric) table with ✓ for "equal means not rejected"
    /// and ✗ for rejected. `filtered` keeps only pairs with at least one ✓.
    pub fn render(&self, filtered: bool) -> String {
        let rows: Vec<&PairRow> = if filtered { self.filtered_pairs() } else { self.pairs.iter().collect() };
        let width = rows
            .iter()
            .map(|p| p.a.len() + p.b.len() + 3)
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = String::new();
        let _ = write!(out, "{:width$}", "Pair");
        for (level, metric) in &self.columns {
            let tag = match level {
                Level::Utterance => "utt",
                Level::System => "sys",
            };
            let _ = write!(out, " {:>9}", format!("{tag}-{metric}"));
        }
        out.push('\n');
        for p in rows {
            let _ = write!(out, "{:width$}", format!("{} - {}", p.a, p.b));
            for v in &p.not_rejected {
                let mark = match v {
                    Some(true) => "✓",
                    Some(false) => "✗",
                    None => "-",
                };
                let _ = write!(out, " {mark:>9}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gamma_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(0.5), PI.sqrt().ln(), epsilon = 1e-13);
    }

    #[test]
    fn normal_and_t() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(1.959_963_984_540_054), 0.975, epsilon = 1e-12);
        // Textbook two-sided 95% t values.
        assert_abs_diff_eq!(t_quantile(0.975, 9.0), 2.262, epsilon = 5e-4);
        assert_abs_diff_eq!(t_quantile(0.975, 2.0), 4.303, epsilon = 5e-4);
    }

    #[test]
    fn f_tail_closed_form() {
        // F(2, d2) has survival (1 + 2f/d2)^(−d2/2).
        assert_abs_diff_eq!(f_sf(3.0, 2.0, 6.0), 0.125, epsilon = 1e-12);
    }

    #[test]
    fn anova_fixture() {
        let s = MetricSamples::from_values(&[&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], &[3.0, 4.0, 5.0]]);
        let r = one_way_anova(&s).unwrap();
        assert_abs_diff_eq!(r.f, 3.0, epsilon = 1e-9);
        assert_eq!((r.df_between, r.df_within), (2, 6));
        assert_abs_diff_eq!(r.ss_between, 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ss_within, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn anova_flags() {
        let s = MetricSamples::from_values(&[&[1.0, 1.0], &[2.0, 2.0]]);
        let r = one_way_anova(&s).unwrap();
        assert_eq!(r.flag, Some(AnovaFlag::InfiniteF));
        assert_eq!((r.f, r.p), (f64::INFINITY, 0.0));
        let s = MetricSamples::from_values(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(one_way_anova(&s).unwrap().flag, Some(AnovaFlag::Degenerate));
        let s = MetricSamples::from_values(&[&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]]);
        assert_eq!(one_way_anova(&s).unwrap().f, 0.0);
    }

    #[test]
    fn studentized_range_table_values() {
        // Published upper 5% points of the studentized range.
        for (k, df, q) in [(3, 6.0, 4.34), (3, 10.0, 3.88), (5, 20.0, 4.23), (10, 30.0, 4.82), (2, 10.0, 3.15)] {
            assert_abs_diff_eq!(qtukey(0.05, k, df), q, epsilon = 5e-3);
        }
    }

    #[test]
    fn k2_range_is_scaled_t() {
        let t = t_quantile(0.975, 10.0);
        assert_abs_diff_eq!(qtukey(0.05, 2, 10.0), t * 2f64.sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn tukey_fixture() {
        let s = MetricSamples::from_values(&[&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], &[3.0, 4.0, 5.0]]);
        let r = tukey_hsd(&s, 0.05).unwrap();
        let ac = &r.pairs[1];
        assert_eq!((ac.a.as_str(), ac.b.as_str()), ("A", "C"));
        assert_abs_diff_eq!(ac.q, 2.0 / (1.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert!(!ac.rejected);
        assert_abs_diff_eq!(r.critical_q, 4.339, epsilon = 1e-3);
    }
}
