//! Problem banks and the sampling rules for ranking and generation items.
//!
//! Bank files hold one JSON object per line:
//!
//! ```text
//! {"id":"alg-001","subject":"Algebra","level":3,"statement":"...","solution":"...","format":"open"}
//! ```
//!
//! `level`, `solution` and `format` are optional; `format` defaults to `open`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt_forge::{ExplanationSet, PromptError, LEVELS};
use crate::seed::stable_seed;

/// Subjects of the MATH-style bank.
pub const MATH_SUBJECTS: [&str; 7] = [
    "Algebra",
    "Counting and Probability",
    "Geometry",
    "Intermediate Algebra",
    "Number Theory",
    "Prealgebra",
    "Precalculus",
];

/// JEE-style subjects.
pub const JEE_SUBJECTS: [&str; 3] = ["Chemistry", "Mathematics", "Physics"];

/// Problems per subject for MATH generation items.
pub const MATH_GENERATION_PER_SUBJECT: usize = 3;
/// Difficulty level of MATH generation items.
pub const MATH_GENERATION_LEVEL: u8 = 3;
/// Total JEE generation items.
pub const JEE_GENERATION_TOTAL: usize = 50;
/// Ranking items per (subject, level) cell.
pub const RANKING_PER_CELL: usize = 50;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("duplicate problem id `{0}`")]
    DuplicateId(String),
    #[error("problem `{id}`: missing field `{field}`")]
    MissingField { id: String, field: &'static str },
    #[error("problem `{id}`: level {level} is outside 1..=5")]
    RangeError { id: String, level: u8 },
    #[error("cell ({subject}, level {level:?}) has {have} problems, need {need}")]
    InsufficientCell {
        subject: String,
        level: Option<u8>,
        have: usize,
        need: usize,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Math50,
    JeeBench,
    Custom,
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "math50" | "math" => Ok(Source::Math50),
            "jeebench" | "jee" => Ok(Source::JeeBench),
            "custom" => Ok(Source::Custom),
            other => Err(format!("unknown dataset `{other}`")),
        }
    }
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Math50 => "math50",
            Source::JeeBench => "jeebench",
            Source::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemFormat {
    SingleMcq,
    MultiMcq,
    Numeric,
    Integer,
    #[default]
    Open,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    #[serde(default = "custom_source", skip_serializing)]
    pub source: Source,
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
    pub statement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<String>,
    #[serde(default)]
    pub format: ProblemFormat,
}

fn custom_source() -> Source {
    Source::Custom
}

impl Problem {
    /// Text shown as one explanation in a ranking prompt.
    pub fn explanation_text(&self) -> String {
        match &self.solution {
            Some(sol) => format!(
                "Problem: {} Solution: {}",
                self.statement.trim(),
                sol.trim()
            ),
            None => self.statement.trim().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemBank {
    source: Source,
    problems: Vec<Problem>,
}

impl ProblemBank {
    pub fn new(source: Source, mut problems: Vec<Problem>) -> Result<Self, CorpusError> {
        let mut ids = HashSet::new();
        for p in &mut problems {
            p.source = source;
            if p.id.trim().is_empty() {
                return Err(CorpusError::MissingField {
                    id: p.id.clone(),
                    field: "id",
                });
            }
            if !ids.insert(p.id.clone()) {
                return Err(CorpusError::DuplicateId(p.id.clone()));
            }
            if p.subject.trim().is_empty() {
                return Err(CorpusError::MissingField {
                    id: p.id.clone(),
                    field: "subject",
                });
            }
            if p.statement.trim().is_empty() {
                return Err(CorpusError::MissingField {
                    id: p.id.clone(),
                    field: "statement",
                });
            }
            match p.level {
                Some(l) if !(1..=LEVELS as u8).contains(&l) => {
                    return Err(CorpusError::RangeError {
                        id: p.id.clone(),
                        level: l,
                    })
                }
                None if source == Source::Math50 => {
                    return Err(CorpusError::MissingField {
                        id: p.id.clone(),
                        field: "level",
                    })
                }
                _ => {}
            }
        }
        Ok(ProblemBank { source, problems })
    }

    pub fn parse_jsonl(text: &str, source: Source) -> Result<Self, CorpusError> {
        let mut problems = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let p: Problem = serde_json::from_str(line).map_err(|e| CorpusError::ParseError {
                line: i + 1,
                message: e.to_string(),
            })?;
            problems.push(p);
        }
        Self::new(source, problems)
    }

    pub fn load(path: &Path, source: Source) -> Result<Self, CorpusError> {
        Self::parse_jsonl(&std::fs::read_to_string(path)?, source)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.problems {
            out.push_str(&serde_json::to_string(p).expect("problem serializes"));
            out.push('\n');
        }
        out
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn problems(&self) -> &[Problem] {
        &self.problems
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn subjects(&self) -> BTreeSet<String> {
        self.problems.iter().map(|p| p.subject.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Problem> {
        self.problems.iter().find(|p| p.id == id)
    }

    fn cell(&self, subject: &str, level: Option<u8>) -> Vec<&Problem> {
        let mut cell: Vec<&Problem> = self
            .problems
            .iter()
            .filter(|p| p.subject == subject && (level.is_none() || p.level == level))
            .collect();
        cell.sort_by(|a, b| a.id.cmp(&b.id));
        cell
    }
}

fn seeded_pick(
    cell: Vec<&Problem>,
    take: usize,
    seed: u64,
    subject: &str,
    level: Option<u8>,
) -> Result<Vec<Problem>, CorpusError> {
    if cell.len() < take {
        return Err(CorpusError::InsufficientCell {
            subject: subject.to_string(),
            level,
            have: cell.len(),
            need: take,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[
        &seed.to_le_bytes(),
        subject.as_bytes(),
        &[level.unwrap_or(0)],
    ]));
    let mut cell = cell;
    cell.shuffle(&mut rng);
    let mut picked: Vec<Problem> = cell.into_iter().take(take).cloned().collect();
    picked.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(picked)
}

pub type RankingCells = BTreeMap<(String, u8), Vec<Problem>>;

/// Seeded sample of `per_cell` problems for every (subject, level 1..=5).
pub fn sample_ranking_items(
    bank: &ProblemBank,
    per_cell: usize,
    seed: u64,
) -> Result<RankingCells, CorpusError> {
    let mut out = BTreeMap::new();
    for subject in bank.subjects() {
        for level in 1..=LEVELS as u8 {
            let cell = bank.cell(&subject, Some(level));
            let picked = seeded_pick(cell, per_cell, seed, &subject, Some(level))?;
            out.insert((subject.clone(), level), picked);
        }
    }
    Ok(out)
}

/// Explanation sets for one subject: set `j` takes the `j`-th sampled
/// problem of each level. Its id joins the five problem ids with `+`.
pub fn explanation_sets(
    cells: &RankingCells,
    subject: &str,
) -> Result<Vec<ExplanationSet>, CorpusError> {
    let columns: Vec<&Vec<Problem>> = (1..=LEVELS as u8)
        .map(|l| {
            cells
                .get(&(subject.to_string(), l))
                .ok_or_else(|| CorpusError::InsufficientCell {
                    subject: subject.to_string(),
                    level: Some(l),
                    have: 0,
                    need: 1,
                })
        })
        .collect::<Result<_, _>>()?;
    let rows = columns.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..rows)
        .map(|j| {
            let id = columns
                .iter()
                .map(|c| c[j].id.as_str())
                .collect::<Vec<_>>()
                .join("+");
            let texts = columns.iter().map(|c| c[j].explanation_text()).collect();
            ExplanationSet::new(id, texts).map_err(CorpusError::from)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationRule {
    /// Three level-3 problems per subject.
    Math50Rule,
    /// Fifty problems split evenly across subjects.
    JeeRule,
}

impl GenerationRule {
    pub fn for_source(source: Source) -> Self {
        match source {
            Source::JeeBench => GenerationRule::JeeRule,
            _ => GenerationRule::Math50Rule,
        }
    }
}

/// Profile-independent generation items, sorted by (subject, id).
pub fn sample_generation_items(
    bank: &ProblemBank,
    rule: GenerationRule,
    seed: u64,
) -> Result<Vec<Problem>, CorpusError> {
    let mut out = Vec::new();
    match rule {
        GenerationRule::Math50Rule => {
            let mut subjects = bank.subjects();
            if bank.source() == Source::Math50 {
                for s in MATH_SUBJECTS {
                    if !subjects.contains(s) {
                        return Err(CorpusError::InsufficientCell {
                            subject: s.to_string(),
                            level: Some(MATH_GENERATION_LEVEL),
                            have: 0,
                            need: MATH_GENERATION_PER_SUBJECT,
                        });
                    }
                }
                subjects.retain(|s| MATH_SUBJECTS.contains(&s.as_str()));
            }
            for subject in subjects {
                let cell = bank.cell(&subject, Some(MATH_GENERATION_LEVEL));
                out.extend(seeded_pick(
                    cell,
                    MATH_GENERATION_PER_SUBJECT,
                    seed,
                    &subject,
                    Some(MATH_GENERATION_LEVEL),
                )?);
            }
        }
        GenerationRule::JeeRule => {
            let subjects: Vec<String> = bank.subjects().into_iter().collect();
            let available: Vec<usize> = subjects.iter().map(|s| bank.cell(s, None).len()).collect();
            let quota = balanced_quota(&available, JEE_GENERATION_TOTAL).ok_or_else(|| {
                CorpusError::InsufficientCell {
                    subject: "all".into(),
                    level: None,
                    have: available.iter().sum(),
                    need: JEE_GENERATION_TOTAL,
                }
            })?;
            for (subject, take) in subjects.iter().zip(quota) {
                out.extend(seeded_pick(
                    bank.cell(subject, None),
                    take,
                    seed,
                    subject,
                    None,
                )?);
            }
        }
    }
    Ok(out)
}

/// Splits `total` as evenly as capacity allows; earlier subjects take the
/// remainder first.
fn balanced_quota(available: &[usize], total: usize) -> Option<Vec<usize>> {
    if available.iter().sum::<usize>() < total || available.is_empty() {
        return None;
    }
    let mut quota = vec![0usize; available.len()];
    let mut left = total;
    while left > 0 {
        let open: Vec<usize> = (0..available.len())
            .filter(|&i| quota[i] < available[i])
            .collect();
        let share = (left / open.len()).max(1);
        for &i in &open {
            if left == 0 {
                break;
            }
            let give = share.min(available[i] - quota[i]).min(left);
            quota[i] += give;
            left -= give;
        }
    }
    Some(quota)
}

/// Placeholder bank with `per_cell` problems per (subject, level) for
/// exercising the pipeline without a real dataset.
pub fn placeholder_bank(source: Source, per_cell: usize) -> ProblemBank {
    let mut problems = Vec::new();
    let (subjects, levels): (&[&str], Vec<Option<u8>>) = match source {
        Source::JeeBench => (&JEE_SUBJECTS, vec![None]),
        _ => (&MATH_SUBJECTS, (1..=LEVELS as u8).map(Some).collect()),
    };
    for subject in subjects {
        let slug = subject.to_ascii_lowercase().replace(' ', "_");
        for &level in &levels {
            for k in 0..per_cell {
                let id = match level {
                    Some(l) => format!("{slug}-l{l}-{k:03}"),
                    None => format!("{slug}-{k:03}"),
                };
                let depth = level.unwrap_or(3);
                problems.push(Problem {
                    id,
                    source,
                    subject: subject.to_string(),
                    level,
                    statement: format!("Placeholder {subject} problem {k} at depth {depth}."),
                    solution: Some(format!("A worked answer for problem {k} at depth {depth}.")),
                    format: if source == Source::JeeBench {
                        ProblemFormat::SingleMcq
                    } else {
                        ProblemFormat::Open
                    },
                });
            }
        }
    }
    ProblemBank::new(source, problems).expect("placeholder bank is valid")
}
