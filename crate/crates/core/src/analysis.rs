//! Statistical analysis of a run and the report files derived from it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::{
    dimension_bias, extreme_profiles, group_scores, profile_index, z_normalize, DimensionBias,
    ExtremeProfiles, Grouping, NormalizedTable, ProfileIndex, ScoreKey, ScoreTable,
};
use crate::profile_space::{format_characteristic, DimensionCatalog, Profile};
use crate::prompt_forge::{Role, TaskKind};
use crate::runner::{aggregate_records, RunData, RunnerError, StatusCounts, TrialRecord};
use crate::stats::{
    apa_summary, bonferroni, cohens_d, cohens_kappa, kl_divergence, level_histogram,
    significance_stars, t_test_with, unit_bins, unit_label, StatsError, TestKind, TestResult,
    VarianceModel,
};

pub const REPORTS_DIR: &str = "reports";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub variance: VarianceModel,
    pub grouping: Grouping,
    /// Threshold on the Bonferroni-adjusted p for calling a dimension significant.
    pub alpha: f64,
    pub top_k: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            variance: VarianceModel::Welch,
            grouping: Grouping::Subject,
            alpha: 0.01,
            top_k: 5,
        }
    }
}

/// One pairwise value comparison within a dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dimension: String,
    pub group_a: String,
    pub group_b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: TestResult,
    pub d: Option<TestResult>,
    pub p_bonferroni: f64,
}

impl Comparison {
    pub fn label(&self) -> String {
        format!("{} vs {}", self.group_a, self.group_b)
    }

    pub fn gap(&self) -> f64 {
        self.mean_a - self.mean_b
    }

    pub fn p(&self) -> f64 {
        self.t.p_value.unwrap_or(1.0)
    }
}

/// Analysis of one (task, role) score table.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAnalysis {
    pub task: TaskKind,
    pub role: Role,
    pub table: ScoreTable,
    pub normalized: NormalizedTable,
    pub bias: Vec<DimensionBias>,
    pub comparisons: Vec<Comparison>,
    pub significant_dimensions: Vec<String>,
    pub extremes: ExtremeProfiles,
}

impl CellAnalysis {
    /// Dimension with the highest per-value MAB.
    pub fn top_mab_dimension(&self) -> Option<&DimensionBias> {
        self.bias
            .iter()
            .fold(None, |best: Option<&DimensionBias>, d| match best {
                Some(b) if b.max_mab >= d.max_mab => Some(b),
                _ => Some(d),
            })
    }

    pub fn comparison(&self, dimension: &str, a: &str, b: &str) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.dimension == dimension && c.group_a == a && c.group_b == b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub task: TaskKind,
    pub comparison: String,
    pub kappa: TestResult,
    pub kl: Option<TestResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub model: String,
    pub context: String,
    pub dataset: String,
    pub counts: StatusCounts,
    pub notes: Vec<String>,
    pub catalog: DimensionCatalog,
    pub profiles: ProfileIndex,
    pub cells: Vec<CellAnalysis>,
    pub agreement: Vec<AgreementRow>,
}

impl Analysis {
    pub fn cell(&self, task: TaskKind, role: Role) -> Option<&CellAnalysis> {
        self.cells.iter().find(|c| c.task == task && c.role == role)
    }
}

fn t_or_degenerate(
    a: &[f64],
    b: &[f64],
    variance: VarianceModel,
) -> Result<TestResult, StatsError> {
    match t_test_with(a, b, variance) {
        Err(StatsError::DegenerateVariance) => {
            // Constant groups with different means: separation is total.
            let gap = a[0] - b[0];
            Ok(TestResult {
                kind: TestKind::TTest,
                statistic: f64::INFINITY.copysign(gap),
                p_value: Some(0.0),
                effect: None,
                df: Some((a.len() + b.len() - 2) as f64),
                observed_agreement: None,
                expected_agreement: None,
                n1: a.len(),
                n2: b.len(),
                label: significance_stars(0.0).to_string(),
            })
        }
        other => other,
    }
}

pub fn analyze_table(
    table: &ScoreTable,
    role: Role,
    profiles: &ProfileIndex,
    catalog: &DimensionCatalog,
    options: &AnalysisOptions,
) -> Result<CellAnalysis, RunnerError> {
    let normalized = z_normalize(table, &options.grouping, profiles)?;
    let bias = dimension_bias(table, &normalized, profiles, catalog)?;
    let mut comparisons = Vec::new();
    for dim in catalog.dimensions() {
        let mut samples = Vec::new();
        for v in &dim.values {
            let (raw, _) = group_scores(table, &normalized, profiles, &dim.name, v)?;
            samples.push((v, raw));
        }
        for i in 0..samples.len() {
            for j in i + 1..samples.len() {
                let (va, a) = &samples[i];
                let (vb, b) = &samples[j];
                if a.len() < 2 || b.len() < 2 {
                    continue;
                }
                let t = match t_or_degenerate(a, b, options.variance) {
                    Ok(t) => t,
                    Err(_) => continue,
                };
                comparisons.push(Comparison {
                    dimension: dim.name.clone(),
                    group_a: (*va).clone(),
                    group_b: (*vb).clone(),
                    mean_a: a.iter().sum::<f64>() / a.len() as f64,
                    mean_b: b.iter().sum::<f64>() / b.len() as f64,
                    t,
                    d: cohens_d(a, b).ok(),
                    p_bonferroni: 1.0,
                });
            }
        }
    }
    let m = comparisons.len();
    for c in &mut comparisons {
        c.p_bonferroni = bonferroni(c.p(), m);
    }
    let mut significant_dimensions: Vec<String> = Vec::new();
    for c in &comparisons {
        if c.p_bonferroni < options.alpha && !significant_dimensions.contains(&c.dimension) {
            significant_dimensions.push(c.dimension.clone());
        }
    }
    Ok(CellAnalysis {
        task: table.task,
        role,
        table: table.clone(),
        normalized,
        bias,
        comparisons,
        significant_dimensions,
        extremes: extreme_profiles(table, options.top_k),
    })
}

fn ranking_pairs<'a>(
    a: impl Iterator<Item = &'a TrialRecord>,
    b: impl Iterator<Item = &'a TrialRecord>,
) -> (Vec<u8>, Vec<u8>) {
    let key = |r: &TrialRecord| {
        (
            r.profile_id.clone(),
            r.subject.clone(),
            r.problem_id.clone(),
        )
    };
    let left: BTreeMap<_, u8> = a
        .filter(|r| r.is_ok())
        .filter_map(|r| r.parsed.map(|v| (key(r), v as u8)))
        .collect();
    let right: BTreeMap<_, u8> = b
        .filter(|r| r.is_ok())
        .filter_map(|r| r.parsed.map(|v| (key(r), v as u8)))
        .collect();
    left.iter()
        .filter_map(|(k, x)| right.get(k).map(|y| (*x, *y)))
        .unzip()
}

fn ranking_agreement(task: TaskKind, label: String, a: &[u8], b: &[u8]) -> Option<AgreementRow> {
    let kappa = cohens_kappa(a, b).ok()?;
    let kl = kl_divergence(&level_histogram(a), &level_histogram(b)).ok();
    Some(AgreementRow {
        task,
        comparison: label,
        kappa,
        kl,
    })
}

fn generation_agreement(label: String, a: &ScoreTable, b: &ScoreTable) -> Option<AgreementRow> {
    let (x, y): (Vec<f64>, Vec<f64>) = a
        .scores
        .iter()
        .filter_map(|(k, v)| b.scores.get(k).map(|w| (*v, *w)))
        .unzip();
    let bx: Vec<i64> = x.iter().map(|v| unit_label(*v)).collect();
    let by: Vec<i64> = y.iter().map(|v| unit_label(*v)).collect();
    let kappa = cohens_kappa(&bx, &by).ok()?;
    let (hx, hy) = unit_bins(&x, &y);
    Some(AgreementRow {
        task: TaskKind::Generation,
        comparison: label,
        kappa,
        kl: kl_divergence(&hx, &hy).ok(),
    })
}

fn profiles_of(data: &RunData) -> ProfileIndex {
    profile_index(&data.profiles)
}

pub fn analyze(data: &RunData, options: &AnalysisOptions) -> Result<Analysis, RunnerError> {
    let agg = aggregate_records(&data.records, data.plan.len())?;
    let profiles = profiles_of(data);
    let mut cells = Vec::new();
    for ((_, role), table) in &agg.tables {
        if table.is_empty() {
            continue;
        }
        cells.push(analyze_table(
            table,
            *role,
            &profiles,
            &data.catalog,
            options,
        )?);
    }
    let mut agreement = Vec::new();
    let of_role = |role: Role| {
        data.records
            .iter()
            .filter(move |r| r.task == TaskKind::Ranking && r.role == role)
    };
    let (t, s) = ranking_pairs(of_role(Role::Teacher), of_role(Role::Student));
    agreement.extend(ranking_agreement(
        TaskKind::Ranking,
        "teacher vs student".into(),
        &t,
        &s,
    ));
    Ok(Analysis {
        model: data.model_label().to_string(),
        context: data.config.context.as_str().to_string(),
        dataset: data.config.dataset.as_str().to_string(),
        counts: agg.counts,
        notes: data.manifest.notes.clone(),
        catalog: data.catalog.clone(),
        profiles,
        cells,
        agreement,
    })
}

/// Agreement between two runs over the same profiles and problems.
pub fn compare_runs(a: &RunData, b: &RunData) -> Result<Vec<AgreementRow>, RunnerError> {
    let label = |role: Role| format!("{} vs {} ({role})", a.model_label(), b.model_label());
    let mut out = Vec::new();
    for role in [Role::Teacher, Role::Student] {
        let pick = |d: &'_ RunData| -> Vec<TrialRecord> {
            d.records
                .iter()
                .filter(|r| r.task == TaskKind::Ranking && r.role == role)
                .cloned()
                .collect()
        };
        let (ra, rb) = (pick(a), pick(b));
        let (x, y) = ranking_pairs(ra.iter(), rb.iter());
        out.extend(ranking_agreement(TaskKind::Ranking, label(role), &x, &y));
    }
    let ta = aggregate_records(&a.records, a.plan.len())?;
    let tb = aggregate_records(&b.records, b.plan.len())?;
    let key = (TaskKind::Generation, Role::NotApplicable);
    if let (Some(x), Some(y)) = (ta.tables.get(&key), tb.tables.get(&key)) {
        out.extend(generation_agreement(label(Role::NotApplicable), x, y));
    }
    Ok(out)
}

fn num(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{x:.4}")
}

fn pval(p: f64) -> String {
    if p == 0.0 || p >= 1e-4 {
        format!("{p:.6}")
    } else {
        format!("{p:.3e}")
    }
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn characteristic(analysis: &Analysis, profile_id: &str) -> String {
    analysis
        .profiles
        .get(profile_id)
        .map(|p: &Profile| format_characteristic(&analysis.catalog, p))
        .unwrap_or_default()
}

/// Report files as (file name, contents), in a fixed order.
pub fn render_reports(analysis: &Analysis) -> Vec<(String, Vec<u8>)> {
    let model = analysis.model.as_str();
    let mut scores = Vec::new();
    let mut bias_raw = Vec::new();
    let mut bias_z = Vec::new();
    let mut groups = Vec::new();
    let mut forest = Vec::new();
    let mut sig = Vec::new();
    let mut extremes = Vec::new();
    for cell in &analysis.cells {
        let (task, role) = (cell.task.as_str(), cell.role.as_str());
        for (k, v) in &cell.table.scores {
            let ScoreKey {
                profile_id,
                subject,
            } = k;
            scores.push(vec![
                task.into(),
                role.into(),
                profile_id.clone(),
                subject.clone(),
                num(*v),
                num(cell.normalized.z[k]),
                cell.table
                    .included_counts
                    .get(k)
                    .copied()
                    .unwrap_or(0)
                    .to_string(),
                cell.table
                    .excluded_counts
                    .get(k)
                    .copied()
                    .unwrap_or(0)
                    .to_string(),
            ]);
        }
        for d in &cell.bias {
            let lead = || {
                vec![
                    model.to_string(),
                    task.to_string(),
                    analysis.dataset.clone(),
                    role.to_string(),
                    d.dimension.clone(),
                    num(d.max_mab),
                    d.mab_group.clone(),
                ]
            };
            let mut r = lead();
            r.extend([num(d.max_mdb_raw), d.mdb_group.clone()]);
            bias_raw.push(r);
            let mut r = lead();
            r.extend([num(d.max_mdb_z), d.mdb_z_group.clone()]);
            bias_z.push(r);
            for g in &d.groups {
                groups.push(vec![
                    model.into(),
                    task.into(),
                    role.into(),
                    d.dimension.clone(),
                    g.value.clone(),
                    g.n.to_string(),
                    num(g.mean_raw),
                    num(g.mab),
                    num(g.mdb_raw),
                    num(g.mdb_z),
                ]);
                forest.push(vec![
                    model.into(),
                    task.into(),
                    role.into(),
                    d.dimension.clone(),
                    g.value.clone(),
                    g.n.to_string(),
                    num(g.min_z),
                    num(g.mean_z),
                    num(g.max_z),
                ]);
            }
        }
        for c in &cell.comparisons {
            let d = c.d.as_ref().map(|d| d.statistic).unwrap_or(f64::NAN);
            sig.push(vec![
                model.into(),
                analysis.context.clone(),
                c.dimension.clone(),
                c.label(),
                num(c.t.statistic),
                pval(c.p()),
                num(d),
                significance_stars(c.p()).into(),
                apa_summary(c.t.statistic, c.p(), d),
                pval(c.p_bonferroni),
                task.into(),
                role.into(),
                num(c.t.df.unwrap_or(f64::NAN)),
                c.t.n1.to_string(),
                c.t.n2.to_string(),
            ]);
        }
        for (tail, list) in [
            ("top", &cell.extremes.top),
            ("bottom", &cell.extremes.bottom),
        ] {
            for (rank, (pid, score)) in list.iter().enumerate() {
                extremes.push(vec![
                    model.into(),
                    task.into(),
                    role.into(),
                    tail.into(),
                    (rank + 1).to_string(),
                    pid.clone(),
                    characteristic(analysis, pid),
                    num(*score),
                ]);
            }
        }
    }
    let agreement: Vec<Vec<String>> = analysis
        .agreement
        .iter()
        .map(|a| {
            vec![
                model.into(),
                a.task.as_str().into(),
                a.comparison.clone(),
                num(a.kappa.statistic),
                num(a.kappa.observed_agreement.unwrap_or(f64::NAN)),
                num(a.kappa.expected_agreement.unwrap_or(f64::NAN)),
                a.kappa.label.clone(),
                a.kappa.n1.to_string(),
                a.kl.as_ref().map(|k| num(k.statistic)).unwrap_or_default(),
                a.kl.as_ref().map(|k| k.label.clone()).unwrap_or_default(),
            ]
        })
        .collect();
    let bias_header = [
        "Model",
        "Task",
        "Dataset",
        "Role",
        "Dimension",
        "Max MAB",
        "MAB Group",
        "Max MDB",
        "MDB Group",
    ];
    let summary = summary_json(analysis);
    vec![
        (
            "scores.csv".into(),
            csv_bytes(
                &[
                    "Task", "Role", "Profile", "Subject", "Score", "Z", "Included", "Excluded",
                ],
                &scores,
            ),
        ),
        (
            "bias_metrics.csv".into(),
            csv_bytes(&bias_header, &bias_raw),
        ),
        (
            "bias_metrics_z.csv".into(),
            csv_bytes(&bias_header, &bias_z),
        ),
        (
            "bias_groups.csv".into(),
            csv_bytes(
                &[
                    "Model",
                    "Task",
                    "Role",
                    "Dimension",
                    "Group",
                    "N",
                    "Mean",
                    "MAB",
                    "MDB (raw)",
                    "MDB (z)",
                ],
                &groups,
            ),
        ),
        (
            "forest.csv".into(),
            csv_bytes(
                &[
                    "Model",
                    "Task",
                    "Role",
                    "Dimension",
                    "Group",
                    "N",
                    "Min z",
                    "Mean z",
                    "Max z",
                ],
                &forest,
            ),
        ),
        (
            "significance.csv".into(),
            csv_bytes(
                &[
                    "Model",
                    "Profile",
                    "Dimension",
                    "Comparison",
                    "t",
                    "p",
                    "d",
                    "Sig",
                    "APA",
                    "p (Bonferroni)",
                    "Task",
                    "Role",
                    "df",
                    "n1",
                    "n2",
                ],
                &sig,
            ),
        ),
        (
            "extremes.csv".into(),
            csv_bytes(
                &[
                    "Model",
                    "Task",
                    "Role",
                    "Tail",
                    "Rank",
                    "Profile",
                    "Characteristic",
                    "Score",
                ],
                &extremes,
            ),
        ),
        (
            "agreement.csv".into(),
            csv_bytes(
                &[
                    "Model",
                    "Task",
                    "Comparison",
                    "Kappa",
                    "Po",
                    "Pe",
                    "Band",
                    "N",
                    "KL",
                    "KL Label",
                ],
                &agreement,
            ),
        ),
        ("summary.json".into(), summary),
    ]
}

fn summary_json(analysis: &Analysis) -> Vec<u8> {
    let cells: Vec<serde_json::Value> = analysis
        .cells
        .iter()
        .map(|c| {
            serde_json::json!({
                "task": c.task,
                "role": c.role,
                "cells": c.table.len(),
                "excluded_trials": c.table.total_excluded(),
                "grouping": c.normalized.grouping,
                "top_mab_dimension": c.top_mab_dimension().map(|d| d.dimension.clone()),
                "significant_dimensions": c.significant_dimensions,
            })
        })
        .collect();
    let v = serde_json::json!({
        "model": analysis.model,
        "context": analysis.context,
        "dataset": analysis.dataset,
        "counts": analysis.counts,
        "notes": analysis.notes,
        "tables": cells,
    });
    let mut out = serde_json::to_vec_pretty(&v).expect("summary serializes");
    out.push(b'\n');
    out
}

pub fn write_reports(analysis: &Analysis, dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    fs::create_dir_all(dir).map_err(|source| RunnerError::OutputDir {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths = Vec::new();
    for (name, bytes) in render_reports(analysis) {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|source| RunnerError::Io {
            path: path.clone(),
            source,
        })?;
        paths.push(path);
    }
    Ok(paths)
}

/// Plain-text digest of an analysis for terminals.
pub fn render_summary(analysis: &Analysis) -> String {
    let mut s = format!(
        "model {} / {} / {}: {} planned, {} ok, {} excluded, {} failed\n",
        analysis.model,
        analysis.context,
        analysis.dataset,
        analysis.counts.planned,
        analysis.counts.ok,
        analysis.counts.excluded,
        analysis.counts.failed
    );
    for n in &analysis.notes {
        s.push_str(&format!("note: {n}\n"));
    }
    for cell in &analysis.cells {
        s.push_str(&format!(
            "\n[{} / {}] {} cells\n",
            cell.task,
            cell.role,
            cell.table.len()
        ));
        s.push_str(&format!(
            "{:<16} {:>8} {:<18} {:>8} {:<18}\n",
            "dimension", "max MAB", "MAB group", "max MDB", "MDB group"
        ));
        for d in &cell.bias {
            s.push_str(&format!(
                "{:<16} {:>8.3} {:<18} {:>8.3} {:<18}\n",
                d.dimension, d.max_mab, d.mab_group, d.max_mdb_raw, d.mdb_group
            ));
        }
        let mut strongest: Vec<&Comparison> = cell.comparisons.iter().collect();
        strongest.sort_by(|a, b| {
            a.p()
                .total_cmp(&b.p())
                .then_with(|| a.label().cmp(&b.label()))
        });
        for c in strongest.iter().take(3) {
            let d = c.d.as_ref().map(|d| d.statistic).unwrap_or(f64::NAN);
            s.push_str(&format!(
                "  {} {}: {}\n",
                c.dimension,
                c.label(),
                apa_summary(c.t.statistic, c.p(), d)
            ));
        }
        if cell.significant_dimensions.is_empty() {
            s.push_str("  no dimension significant after correction\n");
        } else {
            s.push_str(&format!(
                "  significant: {}\n",
                cell.significant_dimensions.join(", ")
            ));
        }
    }
    for a in &analysis.agreement {
        s.push_str(&format!(
            "\nagreement {}: kappa {:.4} ({}), po {:.4}, pe {:.4}",
            a.comparison,
            a.kappa.statistic,
            a.kappa.label,
            a.kappa.observed_agreement.unwrap_or(f64::NAN),
            a.kappa.expected_agreement.unwrap_or(f64::NAN)
        ));
        if let Some(kl) = &a.kl {
            s.push_str(&format!(", KL {:.4} ({})", kl.statistic, kl.label));
        }
        s.push('\n');
    }
    s
}
