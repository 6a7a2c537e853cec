//! Prompt templates for the ranking and generation tasks, seeded shuffling of
//! leveled explanations, and decoding of ranking answers.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile_space::{format_characteristic, Context, DimensionCatalog, Profile};
use crate::seed::{digest_hex, stable_seed};

/// Number of difficulty levels in a ranking trial.
pub const LEVELS: usize = 5;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("generation prompt in with-problem mode needs a problem")]
    MissingProblem,
    #[error("generation prompt in no-problem mode was given a problem")]
    UnexpectedProblem,
    #[error("field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("template error: {0}")]
    Template(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("no ranking number found in response")]
    UnparseableResponse,
    #[error("ranking number {0} is outside 1..={LEVELS}")]
    OutOfRange(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Ranking,
    Generation,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Ranking => "ranking",
            TaskKind::Generation => "generation",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Student,
    NotApplicable,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
            Role::NotApplicable => "n/a",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemMode {
    WithProblem,
    NoProblem,
}

/// What one prompt asks of the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: TaskKind,
    pub role: Role,
    pub context: Context,
    pub subject: String,
    pub problem_mode: ProblemMode,
}

impl TaskSpec {
    pub fn ranking(context: Context, role: Role, subject: impl Into<String>) -> Self {
        TaskSpec {
            task: TaskKind::Ranking,
            role,
            context,
            subject: subject.into(),
            problem_mode: ProblemMode::NoProblem,
        }
    }

    pub fn generation(context: Context, subject: impl Into<String>, mode: ProblemMode) -> Self {
        TaskSpec {
            task: TaskKind::Generation,
            role: Role::NotApplicable,
            context,
            subject: subject.into(),
            problem_mode: mode,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        match (self.task, self.role) {
            (TaskKind::Ranking, Role::NotApplicable) => Err(PromptError::InvalidTask(
                "ranking needs a teacher or student role".into(),
            )),
            (TaskKind::Generation, Role::Teacher | Role::Student) => {
                Err(PromptError::InvalidTask("generation takes no role".into()))
            }
            _ if self.subject.trim().is_empty() => Err(PromptError::EmptyField("subject")),
            _ => Ok(()),
        }
    }
}

/// Five explanation texts for one item, indexed by true difficulty 1..=5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationSet {
    pub problem_id: String,
    levels: Vec<String>,
}

impl ExplanationSet {
    pub fn new(problem_id: impl Into<String>, levels: Vec<String>) -> Result<Self, PromptError> {
        if levels.len() != LEVELS {
            return Err(PromptError::InvalidTask(format!(
                "explanation set needs {LEVELS} levels, got {}",
                levels.len()
            )));
        }
        if levels.iter().any(|t| t.trim().is_empty()) {
            return Err(PromptError::EmptyField("explanation"));
        }
        Ok(ExplanationSet {
            problem_id: problem_id.into(),
            levels,
        })
    }

    /// Text of true difficulty `level` (1-based).
    pub fn level(&self, level: u8) -> &str {
        &self.levels[level as usize - 1]
    }
}

/// Display position -> true level. Entry `k - 1` is the level shown as `k.`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct Permutation([u8; LEVELS]);

impl Permutation {
    pub fn identity() -> Self {
        Permutation([1, 2, 3, 4, 5])
    }

    pub fn new(entries: [u8; LEVELS]) -> Result<Self, PromptError> {
        let mut seen = [false; LEVELS];
        for &e in &entries {
            if !(1..=LEVELS as u8).contains(&e) || seen[e as usize - 1] {
                return Err(PromptError::InvalidTask(format!(
                    "{entries:?} is not a permutation of 1..={LEVELS}"
                )));
            }
            seen[e as usize - 1] = true;
        }
        Ok(Permutation(entries))
    }

    /// Seeded shuffle keyed by the trial seed, profile and problem.
    pub fn shuffled(trial_seed: u64, profile_id: &str, problem_id: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[
            &trial_seed.to_le_bytes(),
            profile_id.as_bytes(),
            problem_id.as_bytes(),
        ]));
        let mut entries = [1, 2, 3, 4, 5];
        entries.shuffle(&mut rng);
        Permutation(entries)
    }

    pub fn entries(&self) -> [u8; LEVELS] {
        self.0
    }

    /// True level shown at display `position` (1-based).
    pub fn level_at(&self, position: u8) -> u8 {
        self.0[position as usize - 1]
    }

    /// Display position (1-based) holding true `level`.
    pub fn position_of(&self, level: u8) -> u8 {
        self.0.iter().position(|&e| e == level).expect("bijection") as u8 + 1
    }
}

impl TryFrom<Vec<u8>> for Permutation {
    type Error = PromptError;

    fn try_from(v: Vec<u8>) -> Result<Self, Self::Error> {
        let arr: [u8; LEVELS] = v
            .try_into()
            .map_err(|_| PromptError::InvalidTask("permutation needs 5 entries".into()))?;
        Permutation::new(arr)
    }
}

impl From<Permutation> for Vec<u8> {
    fn from(p: Permutation) -> Self {
        p.0.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Permutation>,
    pub trial_seed: u64,
}

impl RenderedPrompt {
    /// Hex SHA-256 over the system and user texts.
    pub fn digest(&self) -> String {
        let mut buf = Vec::with_capacity(self.system.len() + self.user.len() + 1);
        buf.extend_from_slice(self.system.as_bytes());
        buf.push(0);
        buf.extend_from_slice(self.user.as_bytes());
        digest_hex(&buf)
    }
}

/// Which of the four per-context templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemplateKind {
    GenerationProblem,
    GenerationNoProblem,
    RankingTeacher,
    RankingStudent,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 4] = [
        TemplateKind::GenerationProblem,
        TemplateKind::GenerationNoProblem,
        TemplateKind::RankingTeacher,
        TemplateKind::RankingStudent,
    ];

    fn file_stem(self) -> &'static str {
        match self {
            TemplateKind::GenerationProblem => "generation_problem",
            TemplateKind::GenerationNoProblem => "generation_no_problem",
            TemplateKind::RankingTeacher => "ranking_teacher",
            TemplateKind::RankingStudent => "ranking_student",
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            TemplateKind::GenerationProblem => &["characteristic", "subject", "problem"],
            TemplateKind::GenerationNoProblem => &["characteristic", "subject"],
            TemplateKind::RankingTeacher | TemplateKind::RankingStudent => {
                &["characteristic", "subject", "explanations", "L"]
            }
        }
    }

    pub fn file_name(self, context: Context) -> String {
        format!("{}_{}.txt", context.as_str(), self.file_stem())
    }
}

const PLACEHOLDERS: [&str; 5] = ["characteristic", "subject", "problem", "explanations", "L"];

macro_rules! builtin {
    ($ctx:literal) => {
        [
            include_str!(concat!(
                "../resources/templates/",
                $ctx,
                "_generation_problem.txt"
            )),
            include_str!(concat!(
                "../resources/templates/",
                $ctx,
                "_generation_no_problem.txt"
            )),
            include_str!(concat!(
                "../resources/templates/",
                $ctx,
                "_ranking_teacher.txt"
            )),
            include_str!(concat!(
                "../resources/templates/",
                $ctx,
                "_ranking_student.txt"
            )),
        ]
    };
}

const BUILTIN_SYSTEM: &str = include_str!("../resources/templates/system.txt");
const BUILTIN_INDIAN: [&str; 4] = builtin!("indian");
const BUILTIN_AMERICAN: [&str; 4] = builtin!("american");

/// The system prompt plus the eight user templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    system: String,
    templates: BTreeMap<(Context, TemplateKind), String>,
}

fn strip_final_newline(s: &str) -> String {
    s.strip_suffix('\n').unwrap_or(s).to_string()
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        for (ctx, texts) in [
            (Context::Indian, BUILTIN_INDIAN),
            (Context::American, BUILTIN_AMERICAN),
        ] {
            for (kind, text) in TemplateKind::ALL.into_iter().zip(texts) {
                templates.insert((ctx, kind), strip_final_newline(text));
            }
        }
        let set = TemplateSet {
            system: strip_final_newline(BUILTIN_SYSTEM),
            templates,
        };
        set.check().expect("builtin templates are valid");
        set
    }

    /// Loads `system.txt` and the eight `<context>_<kind>.txt` files.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| -> Result<String, PromptError> {
            Ok(strip_final_newline(&std::fs::read_to_string(
                dir.join(name),
            )?))
        };
        let mut templates = BTreeMap::new();
        for ctx in [Context::Indian, Context::American] {
            for kind in TemplateKind::ALL {
                templates.insert((ctx, kind), read(&kind.file_name(ctx))?);
            }
        }
        let set = TemplateSet {
            system: read("system.txt")?,
            templates,
        };
        set.check()?;
        Ok(set)
    }

    fn check(&self) -> Result<(), PromptError> {
        if self.system.trim().is_empty() {
            return Err(PromptError::Template("system prompt is empty".into()));
        }
        for ((ctx, kind), text) in &self.templates {
            for name in kind.required() {
                if !text.contains(&format!("{{{name}}}")) {
                    return Err(PromptError::Template(format!(
                        "{} lacks placeholder {{{name}}}",
                        kind.file_name(*ctx)
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn system(&self) -> &str {
        &self.system
    }

    pub fn get(&self, context: Context, kind: TemplateKind) -> &str {
        &self.templates[&(context, kind)]
    }

    /// Content digests keyed by file name, for run manifests.
    pub fn digests(&self) -> BTreeMap<String, String> {
        let mut out: BTreeMap<String, String> = self
            .templates
            .iter()
            .map(|((ctx, kind), text)| (kind.file_name(*ctx), digest_hex(text.as_bytes())))
            .collect();
        out.insert("system.txt".into(), digest_hex(self.system.as_bytes()));
        out
    }
}

/// Single-pass substitution of known `{name}` placeholders. Substituted text
/// is never rescanned, and other braces (LaTeX) pass through untouched.
fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            PLACEHOLDERS
                .contains(&name)
                .then(|| vars.iter().find(|(k, _)| *k == name))
                .flatten()
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Numbered list of explanations in display order.
pub fn format_explanations(set: &ExplanationSet, permutation: &Permutation) -> String {
    (1..=LEVELS as u8)
        .map(|pos| format!("{pos}. {}", set.level(permutation.level_at(pos))))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders prompts for one catalog against a template set.
#[derive(Debug, Clone)]
pub struct PromptForge {
    templates: TemplateSet,
    catalog: DimensionCatalog,
}

impl PromptForge {
    pub fn new(templates: TemplateSet, catalog: DimensionCatalog) -> Self {
        PromptForge { templates, catalog }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn catalog(&self) -> &DimensionCatalog {
        &self.catalog
    }

    fn check_profile(&self, profile: &Profile, task: &TaskSpec) -> Result<(), PromptError> {
        task.validate()?;
        if profile.context() != task.context || task.context != self.catalog.context() {
            return Err(PromptError::InvalidTask(
                "profile, task and catalog contexts differ".into(),
            ));
        }
        Ok(())
    }

    pub fn render_generation(
        &self,
        profile: &Profile,
        task: &TaskSpec,
        problem: Option<&str>,
    ) -> Result<RenderedPrompt, PromptError> {
        self.check_profile(profile, task)?;
        if task.task != TaskKind::Generation {
            return Err(PromptError::InvalidTask(
                "expected a generation task".into(),
            ));
        }
        let characteristic = format_characteristic(&self.catalog, profile);
        let user = match (task.problem_mode, problem) {
            (ProblemMode::WithProblem, None) => return Err(PromptError::MissingProblem),
            (ProblemMode::NoProblem, Some(_)) => return Err(PromptError::UnexpectedProblem),
            (ProblemMode::WithProblem, Some(p)) => {
                if p.trim().is_empty() {
                    return Err(PromptError::EmptyField("problem"));
                }
                substitute(
                    self.templates
                        .get(task.context, TemplateKind::GenerationProblem),
                    &[
                        ("characteristic", &characteristic),
                        ("subject", &task.subject),
                        ("problem", p),
                    ],
                )
            }
            (ProblemMode::NoProblem, None) => substitute(
                self.templates
                    .get(task.context, TemplateKind::GenerationNoProblem),
                &[
                    ("characteristic", &characteristic),
                    ("subject", &task.subject),
                ],
            ),
        };
        Ok(RenderedPrompt {
            system: self.templates.system().to_string(),
            user,
            permutation: None,
            trial_seed: 0,
        })
    }

    /// Ranking prompt with an explicit display permutation.
    pub fn render_ranking(
        &self,
        profile: &Profile,
        task: &TaskSpec,
        set: &ExplanationSet,
        permutation: Permutation,
        trial_seed: u64,
    ) -> Result<RenderedPrompt, PromptError> {
        self.check_profile(profile, task)?;
        let kind = match (task.task, task.role) {
            (TaskKind::Ranking, Role::Teacher) => TemplateKind::RankingTeacher,
            (TaskKind::Ranking, Role::Student) => TemplateKind::RankingStudent,
            _ => return Err(PromptError::InvalidTask("expected a ranking task".into())),
        };
        let characteristic = format_characteristic(&self.catalog, profile);
        let explanations = format_explanations(set, &permutation);
        let levels = LEVELS.to_string();
        let user = substitute(
            self.templates.get(task.context, kind),
            &[
                ("characteristic", &characteristic),
                ("subject", &task.subject),
                ("explanations", &explanations),
                ("L", &levels),
            ],
        );
        Ok(RenderedPrompt {
            system: self.templates.system().to_string(),
            user,
            permutation: Some(permutation),
            trial_seed,
        })
    }

    pub fn shuffle_and_render_ranking(
        &self,
        profile: &Profile,
        task: &TaskSpec,
        set: &ExplanationSet,
        trial_seed: u64,
    ) -> Result<RenderedPrompt, PromptError> {
        let permutation = Permutation::shuffled(trial_seed, profile.id(), &set.problem_id);
        self.render_ranking(profile, task, set, permutation, trial_seed)
    }
}

/// Per-trial seed from the run seed, profile, problem and role.
pub fn derive_trial_seed(run_seed: u64, profile_id: &str, problem_id: &str, role: Role) -> u64 {
    stable_seed(&[
        &run_seed.to_le_bytes(),
        profile_id.as_bytes(),
        problem_id.as_bytes(),
        role.as_str().as_bytes(),
    ])
}

/// First standalone integer in `raw`, as a display position.
pub fn parse_ranking_position(raw: &str) -> Result<u8, DecodeError> {
    let chars: Vec<char> = raw.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        let glued_before =
            start > 0 && (chars[start - 1].is_alphanumeric() || chars[start - 1] == '.');
        let glued_after = i < chars.len()
            && (chars[i].is_alphanumeric()
                || (matches!(chars[i], '.' | ',')
                    && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit())));
        if glued_before || glued_after {
            // Skip the rest of a decimal or alphanumeric token.
            while i < chars.len()
                && (chars[i].is_alphanumeric() || chars[i] == '.' || chars[i] == ',')
            {
                if (chars[i] == '.' || chars[i] == ',')
                    && !chars.get(i + 1).is_some_and(|c| c.is_alphanumeric())
                {
                    break;
                }
                i += 1;
            }
            continue;
        }
        let digits: String = chars[start..i].iter().collect();
        let value: u64 = digits.parse().unwrap_or(u64::MAX);
        return if (1..=LEVELS as u64).contains(&value) {
            Ok(value as u8)
        } else {
            Err(DecodeError::OutOfRange(value))
        };
    }
    Err(DecodeError::UnparseableResponse)
}

/// True difficulty level chosen by a ranking response.
pub fn decode_ranking_response(raw: &str, permutation: &Permutation) -> Result<u8, DecodeError> {
    parse_ranking_position(raw).map(|pos| permutation.level_at(pos))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forge(ctx: Context) -> PromptForge {
        PromptForge::new(TemplateSet::builtin(), DimensionCatalog::default_for(ctx))
    }

    fn example_indian() -> Profile {
        DimensionCatalog::indian()
            .profile(&["General", "IIT", "Metro", "English", "CBSE", "Male", "Low"])
            .unwrap()
    }

    fn set() -> ExplanationSet {
        ExplanationSet::new("p1", (1..=5).map(|l| format!("level {l} text")).collect()).unwrap()
    }

    #[test]
    fn generation_with_problem() {
        let f = forge(Context::Indian);
        let task = TaskSpec::generation(Context::Indian, "Algebra", ProblemMode::WithProblem);
        let p = f
            .render_generation(&example_indian(), &task, Some("Solve x+1=2"))
            .unwrap();
        assert!(p.user.starts_with(
            "You are teaching a General from IIT from Metro area English-medium educated CBSE board Male low-income student about Algebra."
        ));
        assert!(p
            .user
            .contains("\n\nHere is a problem from Algebra:\n\nSolve x+1=2\n\n"));
        assert_eq!(
            p.system,
            "You are an expert educational assistant helping to personalize learning materials."
        );
        assert!(p.permutation.is_none());
    }

    #[test]
    fn generation_modes_and_errors() {
        let f = forge(Context::Indian);
        let prof = example_indian();
        let no = TaskSpec::generation(Context::Indian, "Geometry", ProblemMode::NoProblem);
        let p = f.render_generation(&prof, &no, None).unwrap();
        assert!(p
            .user
            .ends_with("suitable for this student's background and learning level."));
        assert!(!p.user.contains("Here is a problem"));
        assert!(matches!(
            f.render_generation(&prof, &no, Some("x")),
            Err(PromptError::UnexpectedProblem)
        ));
        let with = TaskSpec::generation(Context::Indian, "Geometry", ProblemMode::WithProblem);
        assert!(matches!(
            f.render_generation(&prof, &with, None),
            Err(PromptError::MissingProblem)
        ));
        let empty = TaskSpec::generation(Context::Indian, " ", ProblemMode::NoProblem);
        assert!(matches!(
            f.render_generation(&prof, &empty, None),
            Err(PromptError::EmptyField("subject"))
        ));
    }

    #[test]
    fn latex_braces_survive_substitution() {
        let f = forge(Context::Indian);
        let task = TaskSpec::generation(Context::Indian, "Algebra", ProblemMode::WithProblem);
        let problem = "Compute $\\frac{1}{2} + {subject}$";
        let p = f
            .render_generation(&example_indian(), &task, Some(problem))
            .unwrap();
        assert!(p.user.contains(problem));
    }

    #[test]
    fn task_role_rules() {
        let mut t = TaskSpec::ranking(Context::Indian, Role::NotApplicable, "Algebra");
        assert!(t.validate().is_err());
        t.role = Role::Teacher;
        assert!(t.validate().is_ok());
        let mut g = TaskSpec::generation(Context::Indian, "Algebra", ProblemMode::NoProblem);
        g.role = Role::Student;
        assert!(g.validate().is_err());
    }

    #[test]
    fn ranking_identity_and_roles() {
        let f = forge(Context::Indian);
        let prof = example_indian();
        let teacher = TaskSpec::ranking(Context::Indian, Role::Teacher, "Algebra");
        let p = f
            .render_ranking(&prof, &teacher, &set(), Permutation::identity(), 9)
            .unwrap();
        for k in 1..=5 {
            assert!(p.user.contains(&format!("{k}. level {k} text")));
        }
        assert!(p.user.starts_with("You are teaching a General"));
        assert!(p.user.contains("ONLY the number (1-5)"));
        let student = TaskSpec::ranking(Context::Indian, Role::Student, "Algebra");
        let s = f
            .shuffle_and_render_ranking(&prof, &student, &set(), 9)
            .unwrap();
        assert!(s.user.starts_with("You are a General"));
        assert!(s.user.contains("student learning about Algebra."));
    }

    #[test]
    fn shuffle_is_deterministic() {
        let f = forge(Context::American);
        let prof = DimensionCatalog::american()
            .profile(&["Black", "Ivy League", "Rural", "Public", "Male", "Low"])
            .unwrap();
        let task = TaskSpec::ranking(Context::American, Role::Teacher, "Geometry");
        let a = f
            .shuffle_and_render_ranking(&prof, &task, &set(), 77)
            .unwrap();
        let b = f
            .shuffle_and_render_ranking(&prof, &task, &set(), 77)
            .unwrap();
        assert_eq!(a, b);
        let distinct: std::collections::HashSet<_> = (0..50u64)
            .map(|s| Permutation::shuffled(s, prof.id(), "p1"))
            .collect();
        assert!(distinct.len() > 10);
    }

    #[test]
    fn decode_examples() {
        let perm = Permutation::new([3, 1, 5, 2, 4]).unwrap();
        assert_eq!(
            decode_ranking_response("3", &Permutation::identity()),
            Ok(3)
        );
        assert_eq!(decode_ranking_response(" 2.", &perm), Ok(1));
        assert_eq!(decode_ranking_response("1", &perm), Ok(3));
        assert_eq!(decode_ranking_response("Answer: 4", &perm), Ok(2));
        assert_eq!(decode_ranking_response("**5**", &perm), Ok(4));
        assert_eq!(
            decode_ranking_response("I think all are fine", &perm),
            Err(DecodeError::UnparseableResponse)
        );
        assert_eq!(
            decode_ranking_response("7", &perm),
            Err(DecodeError::OutOfRange(7))
        );
        assert_eq!(
            decode_ranking_response("Option 0", &perm),
            Err(DecodeError::OutOfRange(0))
        );
        // Decimals and glued tokens are not standalone integers.
        assert_eq!(decode_ranking_response("2.5 vs 3", &perm), Ok(5));
        assert_eq!(decode_ranking_response("L2 then 4", &perm), Ok(2));
    }

    #[test]
    fn permutation_validation() {
        assert!(Permutation::new([1, 1, 2, 3, 4]).is_err());
        assert!(Permutation::new([0, 1, 2, 3, 4]).is_err());
        let p: Permutation = serde_json::from_str("[2,1,3,5,4]").unwrap();
        assert_eq!(p.level_at(1), 2);
        assert_eq!(p.position_of(5), 4);
        assert!(serde_json::from_str::<Permutation>("[1,2,3]").is_err());
    }

    #[test]
    fn explanation_set_rules() {
        assert!(ExplanationSet::new("x", vec!["a".into(); 4]).is_err());
        let mut v = vec!["a".to_string(); 5];
        v[2] = " ".into();
        assert!(matches!(
            ExplanationSet::new("x", v),
            Err(PromptError::EmptyField(_))
        ));
    }

    #[test]
    fn trial_seed_depends_on_role() {
        let a = derive_trial_seed(1, "p", "q", Role::Teacher);
        assert_eq!(a, derive_trial_seed(1, "p", "q", Role::Teacher));
        assert_ne!(a, derive_trial_seed(1, "p", "q", Role::Student));
        assert_ne!(a, derive_trial_seed(2, "p", "q", Role::Teacher));
    }

    #[test]
    fn template_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let src = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("resources/templates");
        for entry in std::fs::read_dir(&src).unwrap() {
            let entry = entry.unwrap();
            std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
        }
        assert_eq!(
            TemplateSet::load_dir(dir.path()).unwrap(),
            TemplateSet::builtin()
        );
        std::fs::write(
            dir.path().join("indian_ranking_teacher.txt"),
            "no placeholders",
        )
        .unwrap();
        assert!(matches!(
            TemplateSet::load_dir(dir.path()),
            Err(PromptError::Template(_))
        ));
        assert_eq!(TemplateSet::builtin().digests().len(), 9);
    }
}
