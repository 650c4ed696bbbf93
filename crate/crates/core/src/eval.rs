//! Per-patient aggregation, paired t-tests and comparison reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::mesh::SurfaceMetrics;
use crate::{Error, Result};

/// Significance threshold after Bonferroni correction over six columns.
pub const BONFERRONI_P: f64 = 0.0083;

/// Stand-in for p when the differences have zero spread but a non-zero mean.
pub const DEGENERATE_P: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Normal,
    Mr,
}

impl Stratum {
    pub fn from_mr(mr: bool) -> Self {
        if mr {
            Stratum::Mr
        } else {
            Stratum::Normal
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientResult {
    pub patient_id: String,
    pub metrics: SurfaceMetrics,
    pub stratum: Stratum,
}

impl PatientResult {
    pub fn validate(&self) -> Result<()> {
        let m = &self.metrics;
        let vals = [
            m.cd_mm,
            m.hd_mm,
            m.cd_anterior,
            m.cd_posterior,
            m.hd_anterior,
            m.hd_posterior,
        ];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "metrics of {} must be finite and non-negative",
                self.patient_id
            )));
        }
        Ok(())
    }
}

/// The six reported quantities, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cd,
    Hd,
    CdAnterior,
    HdAnterior,
    CdPosterior,
    HdPosterior,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Cd,
        Metric::Hd,
        Metric::CdAnterior,
        Metric::HdAnterior,
        Metric::CdPosterior,
        Metric::HdPosterior,
    ];

    pub fn of(self, m: &SurfaceMetrics) -> f64 {
        match self {
            Metric::Cd => m.cd_mm,
            Metric::Hd => m.hd_mm,
            Metric::CdAnterior => m.cd_anterior,
            Metric::HdAnterior => m.hd_anterior,
            Metric::CdPosterior => m.cd_posterior,
            Metric::HdPosterior => m.hd_posterior,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Cd | Metric::CdAnterior | Metric::CdPosterior => "CD",
            Metric::Hd | Metric::HdAnterior | Metric::HdPosterior => "HD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Sample standard deviation over √n; zero for a single value.
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(values: &[f64]) -> Result<MeanSe> {
    let n = values.len();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "cannot summarise zero values".into(),
        ));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let se = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    Ok(MeanSe { mean, se, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub cd: MeanSe,
    pub hd: MeanSe,
    pub cd_anterior: MeanSe,
    pub hd_anterior: MeanSe,
    pub cd_posterior: MeanSe,
    pub hd_posterior: MeanSe,
}

impl MetricSummary {
    pub fn get(&self, m: Metric) -> MeanSe {
        match m {
            Metric::Cd => self.cd,
            Metric::Hd => self.hd,
            Metric::CdAnterior => self.cd_anterior,
            Metric::HdAnterior => self.hd_anterior,
            Metric::CdPosterior => self.cd_posterior,
            Metric::HdPosterior => self.hd_posterior,
        }
    }

    fn of(results: &[&PatientResult]) -> Result<Self> {
        let col =
            |m: Metric| mean_se(&results.iter().map(|r| m.of(&r.metrics)).collect::<Vec<_>>());
        Ok(Self {
            cd: col(Metric::Cd)?,
            hd: col(Metric::Hd)?,
            cd_anterior: col(Metric::CdAnterior)?,
            hd_anterior: col(Metric::HdAnterior)?,
            cd_posterior: col(Metric::CdPosterior)?,
            hd_posterior: col(Metric::HdPosterior)?,
        })
    }
}

/// Mean ± SE over patients, overall and per stratum. A stratum without
/// patients is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub all: MetricSummary,
    pub normal: Option<MetricSummary>,
    pub mr: Option<MetricSummary>,
}

impl Aggregate {
    pub fn stratum(&self, s: Option<Stratum>) -> Option<&MetricSummary> {
        match s {
            None => Some(&self.all),
            Some(Stratum::Normal) => self.normal.as_ref(),
            Some(Stratum::Mr) => self.mr.as_ref(),
        }
    }
}

pub fn aggregate(results: &[PatientResult]) -> Result<Aggregate> {
    for r in results {
        r.validate()?;
    }
    let pick =
        |s: Stratum| -> Vec<&PatientResult> { results.iter().filter(|r| r.stratum == s).collect() };
    let sub = |v: Vec<&PatientResult>| -> Result<Option<MetricSummary>> {
        if v.is_empty() {
            Ok(None)
        } else {
            MetricSummary::of(&v).map(Some)
        }
    };
    Ok(Aggregate {
        all: MetricSummary::of(&results.iter().collect::<Vec<_>>())?,
        normal: sub(pick(Stratum::Normal))?,
        mr: sub(pick(Stratum::Mr))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p value.
    pub p: f64,
    pub df: usize,
    /// The paired differences have zero spread; `t` and `p` are then set
    /// by convention (0 and 1 for a zero mean, ±∞ and [`DEGENERATE_P`]
    /// otherwise).
    pub degenerate: bool,
}

impl TTest {
    pub fn significant(&self) -> bool {
        significant(self.p)
    }
}

pub fn significant(p: f64) -> bool {
    p < BONFERRONI_P
}

/// Two-sided Student-t tail probability `P(|T| ≥ |t|)` with `df` degrees of
/// freedom, via the regularised incomplete beta function.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Paired t-test of `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Pairing(format!(
            "{} values paired with {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs n >= 2, got {n}"
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "paired t-test values must be finite".into(),
        ));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let ss = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let df = n - 1;
    // spread at rounding level counts as none
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if ss.sqrt() <= 1e-14 * scale || ss == 0.0 {
        return Ok(if mean == 0.0 || scale == 0.0 {
            TTest {
                t: 0.0,
                p: 1.0,
                df,
                degenerate: true,
            }
        } else {
            TTest {
                t: f64::INFINITY.copysign(mean),
                p: DEGENERATE_P,
                df,
                degenerate: true,
            }
        });
    }
    let sd = (ss / df as f64).sqrt();
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTest {
        t,
        p: student_t_two_sided(t, df as f64),
        df,
        degenerate: false,
    })
}

/// One column: a metric restricted to a stratum (`None` = all patients).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub stratum: Option<Stratum>,
    pub metric: Metric,
}

impl Column {
    pub fn header(&self) -> String {
        let group = match (self.stratum, self.metric) {
            (Some(Stratum::Normal), _) => "Normal",
            (Some(Stratum::Mr), _) => "MR",
            (None, Metric::CdAnterior | Metric::HdAnterior) => "Anterior",
            (None, Metric::CdPosterior | Metric::HdPosterior) => "Posterior",
            (None, _) => "All",
        };
        format!("{group} {}", self.metric.label())
    }
}

/// Columns of the stratum table.
pub fn stratum_columns() -> [Column; 6] {
    let c = |stratum, metric| Column { stratum, metric };
    [
        c(None, Metric::Cd),
        c(None, Metric::Hd),
        c(Some(Stratum::Normal), Metric::Cd),
        c(Some(Stratum::Normal), Metric::Hd),
        c(Some(Stratum::Mr), Metric::Cd),
        c(Some(Stratum::Mr), Metric::Hd),
    ]
}

/// Columns of the leaflet table.
pub fn leaflet_columns() -> [Column; 6] {
    let c = |metric| Column {
        stratum: None,
        metric,
    };
    [
        c(Metric::Cd),
        c(Metric::Hd),
        c(Metric::CdAnterior),
        c(Metric::HdAnterior),
        c(Metric::CdPosterior),
        c(Metric::HdPosterior),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: String,
    pub cells: Vec<Option<MeanSe>>,
}

/// Paired comparison of a condition against the baseline (first) one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRow {
    pub baseline: String,
    pub condition: String,
    /// `None` where fewer than two patients are available.
    pub tests: Vec<Option<TTest>>,
    pub significant: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub title: String,
    pub columns: Vec<Column>,
    pub headers: Vec<String>,
    pub rows: Vec<ConditionRow>,
    pub p_rows: Vec<PRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub bonferroni_threshold: f64,
    pub conditions: Vec<String>,
    pub patients: Vec<String>,
    pub aggregates: Vec<Aggregate>,
    pub tables: Vec<ReportTable>,
}

/// Orders each condition's results by patient id and checks that every
/// condition covers the same patients with the same strata.
fn pair_up<'a>(
    conditions: &'a [(String, Vec<PatientResult>)],
) -> Result<Vec<Vec<&'a PatientResult>>> {
    let mut sorted: Vec<Vec<&PatientResult>> = conditions
        .iter()
        .map(|(_, rs)| {
            let mut v: Vec<&PatientResult> = rs.iter().collect();
            v.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
            v
        })
        .collect();
    for (k, v) in sorted.iter().enumerate() {
        if v.windows(2).any(|w| w[0].patient_id == w[1].patient_id) {
            return Err(Error::Pairing(format!(
                "duplicate patient in {}",
                conditions[k].0
            )));
        }
    }
    let first = sorted
        .first()
        .ok_or_else(|| Error::InvalidArgument("no conditions to report".into()))?
        .clone();
    for (k, v) in sorted.iter_mut().enumerate().skip(1) {
        let ids = |x: &[&PatientResult]| x.iter().map(|r| r.patient_id.clone()).collect::<Vec<_>>();
        if ids(v) != ids(&first) {
            let missing: Vec<String> = ids(&first)
                .into_iter()
                .filter(|i| !v.iter().any(|r| &r.patient_id == i))
                .chain(
                    ids(v)
                        .into_iter()
                        .filter(|i| !first.iter().any(|r| &r.patient_id == i)),
                )
                .collect();
            return Err(Error::Pairing(format!(
                "{} and {} do not cover the same patients (unmatched: {})",
                conditions[0].0,
                conditions[k].0,
                missing.join(", ")
            )));
        }
        if v.iter().zip(&first).any(|(a, b)| a.stratum != b.stratum) {
            return Err(Error::Pairing(
                "a patient changes stratum between conditions".into(),
            ));
        }
    }
    Ok(sorted)
}

fn column_values(rs: &[&PatientResult], col: &Column) -> Vec<f64> {
    rs.iter()
        .filter(|r| col.stratum.is_none_or(|s| r.stratum == s))
        .map(|r| col.metric.of(&r.metrics))
        .collect()
}

fn build_table(
    title: &str,
    columns: [Column; 6],
    names: &[String],
    paired: &[Vec<&PatientResult>],
    aggs: &[Aggregate],
) -> Result<ReportTable> {
    let rows = names
        .iter()
        .zip(aggs)
        .map(|(name, agg)| ConditionRow {
            condition: name.clone(),
            cells: columns
                .iter()
                .map(|c| agg.stratum(c.stratum).map(|s| s.get(c.metric)))
                .collect(),
        })
        .collect();
    let mut p_rows = Vec::new();
    for k in 1..names.len() {
        let mut tests = Vec::with_capacity(6);
        for c in &columns {
            let (a, b) = (column_values(&paired[0], c), column_values(&paired[k], c));
            tests.push(if a.len() < 2 {
                None
            } else {
                Some(paired_t_test(&a, &b)?)
            });
        }
        p_rows.push(PRow {
            baseline: names[0].clone(),
            condition: names[k].clone(),
            significant: tests
                .iter()
                .map(|t| t.is_some_and(|t| t.significant()))
                .collect(),
            tests,
        });
    }
    Ok(ReportTable {
        title: title.into(),
        headers: columns.iter().map(Column::header).collect(),
        columns: columns.to_vec(),
        rows,
        p_rows,
    })
}

/// Builds the stratum and leaflet comparison tables. The first condition is
/// the baseline every other condition is tested against.
pub fn emit_report(conditions: &[(String, Vec<PatientResult>)]) -> Result<ComparisonReport> {
    let paired = pair_up(conditions)?;
    let names: Vec<String> = conditions.iter().map(|(n, _)| n.clone()).collect();
    let aggs = conditions
        .iter()
        .map(|(_, rs)| aggregate(rs))
        .collect::<Result<Vec<_>>>()?;
    let tables = vec![
        build_table(
            "Normal and MR cases",
            stratum_columns(),
            &names,
            &paired,
            &aggs,
        )?,
        build_table(
            "Anterior and posterior leaflets",
            leaflet_columns(),
            &names,
            &paired,
            &aggs,
        )?,
    ];
    Ok(ComparisonReport {
        bonferroni_threshold: BONFERRONI_P,
        conditions: names,
        patients: paired[0].iter().map(|r| r.patient_id.clone()).collect(),
        aggregates: aggs,
        tables,
    })
}

fn fmt_p(t: &Option<TTest>) -> String {
    match t {
        None => "-".into(),
        Some(t) if t.degenerate && t.p == DEGENERATE_P => "<1e-12".into(),
        Some(t) if t.p < 1e-4 => format!("{:.1e}", t.p),
        Some(t) => format!("{:.4}", t.p),
    }
}

/// Aligned plain-text rendering: one block per table, mean ± SE cells and a
/// p row per comparison, `*` marking significance.
pub fn render_text(r: &ComparisonReport) -> String {
    let mut out = String::new();
    for t in &r.tables {
        let mut grid: Vec<Vec<String>> = Vec::new();
        let mut head = vec![String::new()];
        head.extend(t.headers.iter().cloned());
        grid.push(head);
        for row in &t.rows {
            let mut line = vec![row.condition.clone()];
            line.extend(row.cells.iter().map(|c| match c {
                Some(c) => format!("{:.3} ± {:.3}", c.mean, c.se),
                None => "-".into(),
            }));
            grid.push(line);
        }
        for p in &t.p_rows {
            let mut line = vec![format!("p ({} vs {})", p.condition, p.baseline)];
            line.extend(
                p.tests
                    .iter()
                    .zip(&p.significant)
                    .map(|(t, &s)| format!("{}{}", fmt_p(t), if s { " *" } else { "" })),
            );
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let _ = writeln!(out, "{}", t.title);
        for row in &grid {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| {
                    let pad = w - c.chars().count();
                    if i == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        let _ = writeln!(out);
    }
    let _ = writeln!(out, "* p < {}", r.bonferroni_threshold);
    out
}

pub fn report_to_json(r: &ComparisonReport) -> Result<String> {
    serde_json::to_string_pretty(r).map_err(|e| Error::format("report", e))
}

/// Writes `report.json` and `report.txt` into `dir`.
pub fn write_report(dir: impl AsRef<Path>, r: &ComparisonReport) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    std::fs::write(&json, report_to_json(r)?).map_err(|e| Error::io(&json, e))?;
    let txt = dir.join("report.txt");
    std::fs::write(&txt, render_text(r)).map_err(|e| Error::io(&txt, e))
}
