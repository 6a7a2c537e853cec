//! Complexity and bias metrics: MCV, MGL, z-normalization, MAB and MDB.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile_space::{DimensionCatalog, Profile};
use crate::prompt_forge::TaskKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no included trials")]
    NoIncludedTrials,
    #[error("ranking score {0} is outside [1, 5]")]
    ScoreOutOfRange(f64),
    #[error("profile {0} is not in the profile index")]
    UnknownProfile(String),
    #[error("dimension {0} is not in the catalog")]
    UnknownDimension(String),
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Mean choice value over decoded ranking levels.
pub fn mcv(levels: &[u8]) -> Result<f64, MetricsError> {
    if levels.is_empty() {
        return Err(MetricsError::NoIncludedTrials);
    }
    Ok(levels.iter().map(|&l| l as f64).sum::<f64>() / levels.len() as f64)
}

/// Mean grade level over per-trial TGLs.
pub fn mgl(tgls: &[f64]) -> Result<f64, MetricsError> {
    if tgls.is_empty() {
        return Err(MetricsError::NoIncludedTrials);
    }
    Ok(mean(tgls))
}

/// Mean absolute z.
pub fn mab(z: &[f64]) -> Result<f64, MetricsError> {
    if z.is_empty() {
        return Err(MetricsError::NoIncludedTrials);
    }
    Ok(z.iter().map(|v| v.abs()).sum::<f64>() / z.len() as f64)
}

/// Max minus min.
pub fn mdb(scores: &[f64]) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::NoIncludedTrials);
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(hi - lo)
}

/// Population z-scores of one cell; a constant cell maps to zeros.
pub fn z_scores(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return vec![0.0; x.len()];
    }
    let m = mean(x);
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    x.iter().map(|v| (v - m) / sd).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScoreKey {
    pub profile_id: String,
    pub subject: String,
}

impl ScoreKey {
    pub fn new(profile_id: impl Into<String>, subject: impl Into<String>) -> Self {
        ScoreKey {
            profile_id: profile_id.into(),
            subject: subject.into(),
        }
    }
}

/// Per-(profile, subject) mean scores for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub task: TaskKind,
    pub scores: BTreeMap<ScoreKey, f64>,
    pub included_counts: BTreeMap<ScoreKey, usize>,
    pub excluded_counts: BTreeMap<ScoreKey, usize>,
}

impl ScoreTable {
    /// Folds observations into cell means. `None` marks an excluded trial; a
    /// cell whose trials were all excluded keeps its exclusion count only.
    pub fn from_observations<I>(task: TaskKind, observations: I) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = (ScoreKey, Option<f64>)>,
    {
        let mut sums: BTreeMap<ScoreKey, (f64, usize)> = BTreeMap::new();
        let mut excluded: BTreeMap<ScoreKey, usize> = BTreeMap::new();
        for (key, value) in observations {
            match value {
                Some(v) => {
                    if task == TaskKind::Ranking && !(1.0..=5.0).contains(&v) {
                        return Err(MetricsError::ScoreOutOfRange(v));
                    }
                    let e = sums.entry(key).or_insert((0.0, 0));
                    e.0 += v;
                    e.1 += 1;
                }
                None => *excluded.entry(key).or_default() += 1,
            }
        }
        let included_counts = sums.iter().map(|(k, (_, n))| (k.clone(), *n)).collect();
        let scores = sums
            .into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect();
        Ok(ScoreTable {
            task,
            scores,
            included_counts,
            excluded_counts: excluded,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn total_excluded(&self) -> usize {
        self.excluded_counts.values().sum()
    }

    /// Mean score per profile across subjects.
    pub fn profile_means(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (k, v) in &self.scores {
            let e = acc.entry(k.profile_id.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(p, (s, n))| (p, s / n as f64))
            .collect()
    }
}

/// Cells within which scores are standardized.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One cell per subject across all profiles.
    #[default]
    Subject,
    /// One cell per (value of the named dimension, subject).
    DimensionSubject(String),
    /// A single cell.
    Global,
}

impl Grouping {
    pub fn describe(&self) -> String {
        match self {
            Grouping::Subject => "subject".into(),
            Grouping::DimensionSubject(d) => format!("{d} x subject"),
            Grouping::Global => "global".into(),
        }
    }
}

pub type ProfileIndex = BTreeMap<String, Profile>;

pub fn profile_index(profiles: &[Profile]) -> ProfileIndex {
    profiles
        .iter()
        .map(|p| (p.id().to_string(), p.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTable {
    pub grouping: String,
    pub z: BTreeMap<ScoreKey, f64>,
    /// Cell label to member keys.
    pub cells: BTreeMap<String, Vec<ScoreKey>>,
}

impl NormalizedTable {
    pub fn cell_values(&self) -> BTreeMap<&str, Vec<f64>> {
        self.cells
            .iter()
            .map(|(c, keys)| (c.as_str(), keys.iter().map(|k| self.z[k]).collect()))
            .collect()
    }
}

pub fn z_normalize(
    table: &ScoreTable,
    grouping: &Grouping,
    profiles: &ProfileIndex,
) -> Result<NormalizedTable, MetricsError> {
    let mut cells: BTreeMap<String, Vec<ScoreKey>> = BTreeMap::new();
    for key in table.scores.keys() {
        let label = match grouping {
            Grouping::Subject => key.subject.clone(),
            Grouping::Global => "all".into(),
            Grouping::DimensionSubject(dim) => {
                let p = profiles
                    .get(&key.profile_id)
                    .ok_or_else(|| MetricsError::UnknownProfile(key.profile_id.clone()))?;
                let v = p
                    .value_of(dim)
                    .ok_or_else(|| MetricsError::UnknownDimension(dim.clone()))?;
                format!("{v}|{}", key.subject)
            }
        };
        cells.entry(label).or_default().push(key.clone());
    }
    let mut z = BTreeMap::new();
    for keys in cells.values() {
        let raw: Vec<f64> = keys.iter().map(|k| table.scores[k]).collect();
        for (k, v) in keys.iter().zip(z_scores(&raw)) {
            z.insert(k.clone(), v);
        }
    }
    Ok(NormalizedTable {
        grouping: grouping.describe(),
        z,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeProfiles {
    pub top: Vec<(String, f64)>,
    pub bottom: Vec<(String, f64)>,
}

/// The k highest and k lowest per-profile mean scores, ties broken by id.
pub fn extreme_profiles(table: &ScoreTable, k: usize) -> ExtremeProfiles {
    let means: Vec<(String, f64)> = table.profile_means().into_iter().collect();
    let mut asc = means.clone();
    asc.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let mut desc = means;
    desc.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    asc.truncate(k);
    desc.truncate(k);
    ExtremeProfiles {
        top: desc,
        bottom: asc,
    }
}

/// Metrics over the profiles holding one dimension value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub value: String,
    pub n: usize,
    pub mean_raw: f64,
    pub mab: f64,
    pub mdb_raw: f64,
    pub mdb_z: f64,
    pub min_z: f64,
    pub mean_z: f64,
    pub max_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionBias {
    pub dimension: String,
    pub max_mab: f64,
    pub mab_group: String,
    pub max_mdb_raw: f64,
    pub mdb_group: String,
    pub max_mdb_z: f64,
    pub mdb_z_group: String,
    pub groups: Vec<GroupMetrics>,
}

/// Raw and normalized scores of every key whose profile holds `value`.
pub fn group_scores(
    table: &ScoreTable,
    normalized: &NormalizedTable,
    profiles: &ProfileIndex,
    dimension: &str,
    value: &str,
) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    let mut raw = Vec::new();
    let mut z = Vec::new();
    for (k, v) in &table.scores {
        let p = profiles
            .get(&k.profile_id)
            .ok_or_else(|| MetricsError::UnknownProfile(k.profile_id.clone()))?;
        if p.value_of(dimension) == Some(value) {
            raw.push(*v);
            z.push(normalized.z[k]);
        }
    }
    Ok((raw, z))
}

/// Per-value MAB and MDB for each catalog dimension. The MDB group is the
/// value with the widest intra-group span; ties keep the earlier value.
pub fn dimension_bias(
    table: &ScoreTable,
    normalized: &NormalizedTable,
    profiles: &ProfileIndex,
    catalog: &DimensionCatalog,
) -> Result<Vec<DimensionBias>, MetricsError> {
    let mut out = Vec::new();
    for dim in catalog.dimensions() {
        let mut groups = Vec::new();
        for value in &dim.values {
            let (raw, z) = group_scores(table, normalized, profiles, &dim.name, value)?;
            if raw.is_empty() {
                continue;
            }
            groups.push(GroupMetrics {
                value: value.clone(),
                n: raw.len(),
                mean_raw: mean(&raw),
                mab: mab(&z)?,
                mdb_raw: mdb(&raw)?,
                mdb_z: mdb(&z)?,
                min_z: z.iter().copied().fold(f64::INFINITY, f64::min),
                mean_z: mean(&z),
                max_z: z.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
        if groups.is_empty() {
            continue;
        }
        let argmax = |f: fn(&GroupMetrics) -> f64| {
            let mut best = &groups[0];
            for g in &groups[1..] {
                if f(g) > f(best) {
                    best = g;
                }
            }
            (f(best), best.value.clone())
        };
        let (max_mab, mab_group) = argmax(|g| g.mab);
        let (max_mdb_raw, mdb_group) = argmax(|g| g.mdb_raw);
        let (max_mdb_z, mdb_z_group) = argmax(|g| g.mdb_z);
        out.push(DimensionBias {
            dimension: dim.name.clone(),
            max_mab,
            mab_group,
            max_mdb_raw,
            mdb_group,
            max_mdb_z,
            mdb_z_group,
            groups,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile_space::{enumerate_profiles, Context, Dimension};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn means() {
        assert_eq!(mcv(&[1, 2, 3, 4, 5]).unwrap(), 3.0);
        assert!(close(
            mcv(&[3, 4, 4, 2, 3, 5, 3]).unwrap(),
            24.0 / 7.0,
            1e-12
        ));
        assert_eq!(mcv(&[]), Err(MetricsError::NoIncludedTrials));
        assert_eq!(mgl(&[8.0, 10.0, 12.0]).unwrap(), 10.0);
        assert_eq!(mgl(&[7.25; 3]).unwrap(), 7.25);
        assert_eq!(mgl(&[]), Err(MetricsError::NoIncludedTrials));
    }

    #[test]
    fn bias_primitives() {
        assert_eq!(mab(&[0.0; 4]).unwrap(), 0.0);
        assert!(close(mab(&[0.5, -0.5, 1.0]).unwrap(), 2.0 / 3.0, 1e-12));
        assert_eq!(mab(&[-1.7]).unwrap(), 1.7);
        assert_eq!(mdb(&[2.0; 3]).unwrap(), 0.0);
        assert_eq!(mdb(&[0.5, -0.5, 1.0]).unwrap(), 1.5);
        assert_eq!(mdb(&[1.0, 5.0, 3.0, 2.0]).unwrap(), 4.0);
    }

    #[test]
    fn z_cells() {
        let z = z_scores(&[1.0, 2.0, 3.0]);
        let e = (1.5f64).sqrt();
        assert!(close(z[0], -e, 1e-12) && z[1] == 0.0 && close(z[2], e, 1e-12));
        assert_eq!(z_scores(&[4.0, 4.0, 4.0]), vec![0.0; 3]);
    }

    #[test]
    fn table_folding_and_exclusions() {
        let k = ScoreKey::new("p1", "Algebra");
        let obs = vec![
            (k.clone(), Some(2.0)),
            (k.clone(), None),
            (k.clone(), Some(4.0)),
            (ScoreKey::new("p2", "Algebra"), None),
        ];
        let t = ScoreTable::from_observations(TaskKind::Ranking, obs).unwrap();
        assert_eq!(t.scores[&k], 3.0);
        assert_eq!(t.excluded_counts[&k], 1);
        assert_eq!(t.len(), 1);
        assert_eq!(t.total_excluded(), 2);
        let bad = ScoreTable::from_observations(TaskKind::Ranking, vec![(k, Some(6.0))]);
        assert_eq!(bad, Err(MetricsError::ScoreOutOfRange(6.0)));
    }

    fn toy() -> (DimensionCatalog, Vec<Profile>) {
        let cat = DimensionCatalog::new(
            Context::Indian,
            vec![
                Dimension::new("income", &["High", "Low"]),
                Dimension::new("gender", &["Male", "Female"]),
            ],
        )
        .unwrap();
        let profiles = enumerate_profiles(&cat);
        (cat, profiles)
    }

    #[test]
    fn dimension_bias_picks_shifted_dimension() {
        let (cat, profiles) = toy();
        let idx = profile_index(&profiles);
        let obs = profiles.iter().map(|p| {
            let s = if p.value_of("income") == Some("High") {
                12.0
            } else {
                8.0
            };
            let g = if p.value_of("gender") == Some("Male") {
                0.5
            } else {
                0.0
            };
            (ScoreKey::new(p.id(), "Algebra"), Some(s + g))
        });
        let t = ScoreTable::from_observations(TaskKind::Generation, obs).unwrap();
        let n = z_normalize(&t, &Grouping::Subject, &idx).unwrap();
        let bias = dimension_bias(&t, &n, &idx, &cat).unwrap();
        assert_eq!(bias[0].dimension, "income");
        assert!(bias[0].max_mab > 0.9);
        assert_eq!(bias[0].max_mdb_raw, 0.5);
        assert_eq!(bias[1].max_mdb_raw, 4.0);

        // Literal per-value cells remove the group shift entirely.
        let lit = z_normalize(&t, &Grouping::DimensionSubject("income".into()), &idx).unwrap();
        assert_eq!(lit.cells.len(), 2);
        for vals in lit.cell_values().values() {
            assert!(close(mean(vals), 0.0, 1e-12));
        }
    }

    #[test]
    fn extremes() {
        let obs = [("b", 3.0), ("a", 3.0), ("c", 13.052), ("d", 1.0)]
            .map(|(p, v)| (ScoreKey::new(p, "X"), Some(v)));
        let t = ScoreTable::from_observations(TaskKind::Generation, obs).unwrap();
        let e = extreme_profiles(&t, 2);
        assert_eq!(e.top[0], ("c".to_string(), 13.052));
        assert_eq!(e.top[1].0, "a");
        assert_eq!(e.bottom[0].0, "d");
        let all = extreme_profiles(&t, 4);
        assert_eq!(all.top.len(), 4);
        assert_eq!(all.bottom.len(), 4);
        let none = extreme_profiles(&t, 0);
        assert!(none.top.is_empty() && none.bottom.is_empty());
    }
}
