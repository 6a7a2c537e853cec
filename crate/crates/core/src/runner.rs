//! Audit orchestration: planning trials, executing them against a backend
//! with bounded parallelism, and folding the trial log back into score tables.
//!
//! A run directory holds everything needed to re-analyze it:
//!
//! ```text
//! manifest.json   config, digests and status counts
//! catalog.toml    dimension catalog used for the run
//! profiles.tsv    sampled profiles
//! plan.jsonl      planned trial stubs, sorted by trial id
//! trials.jsonl    append-only trial log
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    explanation_sets, placeholder_bank, sample_generation_items, sample_ranking_items, CorpusError,
    GenerationRule, Problem, ProblemBank, Source, RANKING_PER_CELL,
};
use crate::llm_gateway::{
    Backend, BackendKind, BackendSpec, CompletionRequest, GatewayError, ReplayBackend, ReplayKey,
    SyntheticBackend,
};
use crate::metrics::{MetricsError, ScoreKey, ScoreTable};
use crate::profile_space::{
    read_profiles_tsv, stratified_sample, write_profiles_tsv, Context, DimensionCatalog, Profile,
    ProfileError, SamplePlan,
};
use crate::prompt_forge::{
    decode_ranking_response, derive_trial_seed, ExplanationSet, ProblemMode, PromptError,
    PromptForge, RenderedPrompt, Role, TaskKind, TaskSpec, TemplateSet,
};
use crate::readability;
use crate::seed::{digest_hex, stable_hex, stable_seed};

/// Reference size of the American profile space, which the shipped
/// catalog's value sets do not reproduce.
pub const AMERICAN_REFERENCE_SPACE: usize = 2_700;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CATALOG_FILE: &str = "catalog.toml";
pub const PROFILES_FILE: &str = "profiles.tsv";
pub const PLAN_FILE: &str = "plan.jsonl";
pub const TRIALS_FILE: &str = "trials.jsonl";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("plan has no trials")]
    EmptyPlan,
    #[error("output directory {path} is not writable: {source}")]
    OutputDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("missing trials: {0}")]
    MissingTrials(String),
    #[error(
        "{count} logged trials are not in the current plan; the config changed since they ran"
    )]
    StaleTrials { count: usize },
    #[error("{path} line {line}: {message}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Math50,
    JeeBench,
}

impl Dataset {
    pub fn source(self) -> Source {
        match self {
            Dataset::Math50 => Source::Math50,
            Dataset::JeeBench => Source::JeeBench,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Math50 => "math50",
            Dataset::JeeBench => "jeebench",
        }
    }
}

impl std::str::FromStr for Dataset {
    type Err = RunnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "math50" | "math" => Ok(Dataset::Math50),
            "jeebench" | "jee" => Ok(Dataset::JeeBench),
            other => Err(RunnerError::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

fn default_roles() -> Vec<Role> {
    vec![Role::Teacher, Role::Student]
}
fn default_mode() -> ProblemMode {
    ProblemMode::WithProblem
}
fn default_sample_size() -> usize {
    100
}
fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub context: Context,
    pub dataset: Dataset,
    pub tasks: Vec<TaskKind>,
    /// Ranking roles; generation trials carry no role.
    #[serde(default = "default_roles")]
    pub roles: Vec<Role>,
    #[serde(default = "default_mode")]
    pub problem_mode: ProblemMode,
    #[serde(default)]
    pub run_seed: u64,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub output_dir: PathBuf,
    pub backend: BackendSpec,
    /// Problem bank in JSONL; a placeholder bank is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(
        context: Context,
        dataset: Dataset,
        tasks: Vec<TaskKind>,
        backend: BackendSpec,
    ) -> Self {
        RunConfig {
            context,
            dataset,
            tasks,
            roles: default_roles(),
            problem_mode: default_mode(),
            run_seed: 0,
            sample_size: default_sample_size(),
            parallelism: default_parallelism(),
            output_dir: PathBuf::new(),
            backend,
            bank: None,
            catalog: None,
            templates: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RunnerError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| RunnerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative paths in a config file resolve against its directory.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.bank, &mut cfg.catalog, &mut cfg.templates]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if !cfg.output_dir.as_os_str().is_empty() && cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.parallelism == 0 {
            return Err(RunnerError::Config("parallelism must be at least 1".into()));
        }
        if self.tasks.is_empty() {
            return Err(RunnerError::Config("no tasks configured".into()));
        }
        if self.dataset == Dataset::JeeBench && self.tasks.contains(&TaskKind::Ranking) {
            return Err(RunnerError::Config(
                "jeebench has no leveled explanations; use it for generation only".into(),
            ));
        }
        if self.tasks.contains(&TaskKind::Ranking)
            && (self.roles.is_empty() || self.roles.contains(&Role::NotApplicable))
        {
            return Err(RunnerError::Config(
                "ranking needs teacher and/or student roles".into(),
            ));
        }
        self.backend.validate()?;
        Ok(())
    }

    fn seed_for(&self, stream: &str) -> u64 {
        stable_seed(&[&self.run_seed.to_le_bytes(), stream.as_bytes()])
    }

    /// Config as recorded in the manifest, without the output location.
    fn manifest_value(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("output_dir");
        }
        v
    }
}

/// Problems feeding the planned trials.
#[derive(Debug, Clone, Default)]
pub struct ProblemPlan {
    /// Explanation sets per subject.
    pub ranking: BTreeMap<String, Vec<ExplanationSet>>,
    pub generation: Vec<Problem>,
}

/// Resolved inputs of a run.
#[derive(Debug, Clone)]
pub struct Study {
    pub config: RunConfig,
    pub catalog: DimensionCatalog,
    pub forge: PromptForge,
    pub profiles: Vec<Profile>,
    pub bank: ProblemBank,
    pub items: ProblemPlan,
    pub notes: Vec<String>,
}

impl Study {
    pub fn prepare(config: &RunConfig) -> Result<Self, RunnerError> {
        config.validate()?;
        let catalog = match &config.catalog {
            Some(p) => DimensionCatalog::load(p)?,
            None => DimensionCatalog::default_for(config.context),
        };
        if catalog.context() != config.context {
            return Err(RunnerError::Config(
                "catalog context differs from run context".into(),
            ));
        }
        let templates = match &config.templates {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::builtin(),
        };
        let bank = match &config.bank {
            Some(p) => ProblemBank::load(p, config.dataset.source())?,
            None => placeholder_bank(config.dataset.source(), RANKING_PER_CELL),
        };
        let mut notes = Vec::new();
        if catalog.context() == Context::American
            && catalog.space_size() != AMERICAN_REFERENCE_SPACE
        {
            notes.push(format!(
                "american profile space has {} combinations; the reference figure is {}",
                catalog.space_size(),
                AMERICAN_REFERENCE_SPACE
            ));
        }
        if config.bank.is_none() {
            notes.push("no problem bank configured; placeholder problems used".into());
        }
        let plan =
            SamplePlan::from_catalog(&catalog, config.sample_size, config.seed_for("profiles"));
        let profiles = stratified_sample(&catalog, &plan)?;
        let mut items = ProblemPlan::default();
        let item_seed = config.seed_for("items");
        if config.tasks.contains(&TaskKind::Ranking) {
            let cells = sample_ranking_items(&bank, RANKING_PER_CELL, item_seed)?;
            for subject in bank.subjects() {
                items
                    .ranking
                    .insert(subject.clone(), explanation_sets(&cells, &subject)?);
            }
        }
        if config.tasks.contains(&TaskKind::Generation) {
            let rule = GenerationRule::for_source(config.dataset.source());
            items.generation = sample_generation_items(&bank, rule, item_seed)?;
        }
        Ok(Study {
            config: config.clone(),
            forge: PromptForge::new(templates, catalog.clone()),
            catalog,
            profiles,
            bank,
            items,
            notes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialStub {
    pub trial_id: String,
    pub profile_id: String,
    pub task: TaskKind,
    pub role: Role,
    pub subject: String,
    pub problem_id: String,
}

pub fn trial_id(
    run_seed: u64,
    profile_id: &str,
    task: TaskKind,
    role: Role,
    problem_id: &str,
) -> String {
    let mut h = stable_hex(&[
        &run_seed.to_le_bytes(),
        profile_id.as_bytes(),
        task.as_str().as_bytes(),
        role.as_str().as_bytes(),
        problem_id.as_bytes(),
    ]);
    h.truncate(24);
    h
}

/// Expands profiles and problems into trial stubs sorted by trial id.
///
/// Ranking yields one trial per (profile, subject, role) over an explanation
/// set chosen per (profile, subject), so both roles see the same set.
/// Generation yields one trial per (profile, problem).
pub fn plan_trials(
    config: &RunConfig,
    profiles: &[Profile],
    items: &ProblemPlan,
) -> Result<Vec<TrialStub>, RunnerError> {
    let mut stubs = Vec::new();
    for task in &config.tasks {
        for p in profiles {
            match task {
                TaskKind::Ranking => {
                    for (subject, sets) in &items.ranking {
                        if sets.is_empty() {
                            continue;
                        }
                        let pick = stable_seed(&[
                            &config.run_seed.to_le_bytes(),
                            p.id().as_bytes(),
                            subject.as_bytes(),
                        ]) as usize
                            % sets.len();
                        let set = &sets[pick];
                        for &role in &config.roles {
                            stubs.push(TrialStub {
                                trial_id: trial_id(
                                    config.run_seed,
                                    p.id(),
                                    *task,
                                    role,
                                    &set.problem_id,
                                ),
                                profile_id: p.id().to_string(),
                                task: *task,
                                role,
                                subject: subject.clone(),
                                problem_id: set.problem_id.clone(),
                            });
                        }
                    }
                }
                TaskKind::Generation => {
                    for prob in &items.generation {
                        let role = Role::NotApplicable;
                        stubs.push(TrialStub {
                            trial_id: trial_id(config.run_seed, p.id(), *task, role, &prob.id),
                            profile_id: p.id().to_string(),
                            task: *task,
                            role,
                            subject: prob.subject.clone(),
                            problem_id: prob.id.clone(),
                        });
                    }
                }
            }
        }
    }
    if stubs.is_empty() {
        return Err(RunnerError::EmptyPlan);
    }
    stubs.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    if stubs.windows(2).any(|w| w[0].trial_id == w[1].trial_id) {
        return Err(RunnerError::Config("duplicate trial ids in plan".into()));
    }
    Ok(stubs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Excluded(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub profile_id: String,
    pub task: TaskKind,
    pub role: Role,
    pub subject: String,
    pub problem_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<crate::prompt_forge::Permutation>,
    pub prompt_digest: String,
    #[serde(default)]
    pub response_text: Option<String>,
    #[serde(default)]
    pub parsed: Option<f64>,
    pub status: TrialStatus,
    #[serde(default)]
    pub attempt_count: u32,
    /// Seconds; zero for offline backends.
    #[serde(default)]
    pub latency: f64,
    /// Unix seconds; absent for offline backends so logs stay reproducible.
    #[serde(default)]
    pub timestamp: Option<f64>,
}

impl TrialRecord {
    fn from_stub(stub: &TrialStub) -> Self {
        TrialRecord {
            trial_id: stub.trial_id.clone(),
            profile_id: stub.profile_id.clone(),
            task: stub.task,
            role: stub.role,
            subject: stub.subject.clone(),
            problem_id: stub.problem_id.clone(),
            permutation: None,
            prompt_digest: String::new(),
            response_text: None,
            parsed: None,
            status: TrialStatus::Failed("not run".into()),
            attempt_count: 0,
            latency: 0.0,
            timestamp: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok
    }

    pub fn key(&self) -> ScoreKey {
        ScoreKey::new(&self.profile_id, &self.subject)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub planned: usize,
    pub ok: usize,
    pub excluded: usize,
    pub failed: usize,
}

impl StatusCounts {
    fn tally<'a>(planned: usize, records: impl IntoIterator<Item = &'a TrialRecord>) -> Self {
        let mut c = StatusCounts {
            planned,
            ..Default::default()
        };
        for r in records {
            match r.status {
                TrialStatus::Ok => c.ok += 1,
                TrialStatus::Excluded(_) => c.excluded += 1,
                TrialStatus::Failed(_) => c.failed += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: serde_json::Value,
    pub catalog_digest: String,
    pub template_digests: BTreeMap<String, String>,
    pub bank_digest: String,
    pub profiles_digest: String,
    pub plan_digest: String,
    pub space_size: usize,
    pub notes: Vec<String>,
    pub counts: StatusCounts,
}

/// Outcome of one `execute` invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub counts: StatusCounts,
    /// Trials sent to the backend by this invocation.
    pub new_calls: usize,
    pub resumed: usize,
}

impl RunSummary {
    /// Every planned trial reached a final ok or excluded state.
    pub fn is_complete(&self) -> bool {
        self.counts.failed == 0 && self.counts.ok + self.counts.excluded == self.counts.planned
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunnerError> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).expect("row serializes");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunnerError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Parses a JSONL file. A torn final line (no newline, or unparsable) is
/// dropped and reported through the flag; a bad line elsewhere is an error.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(
    path: &Path,
) -> Result<(Vec<T>, bool), RunnerError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), false)),
        Err(e) => return Err(io_err(path)(e)),
    };
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut out = Vec::with_capacity(lines.len());
    let mut torn = false;
    for (i, line) in lines.iter().enumerate() {
        let last = i + 1 == lines.len();
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(line.trim_end()) {
            Ok(v) if line.ends_with('\n') => out.push(v),
            Ok(_) if last => torn = true,
            Err(_) if last => torn = true,
            Err(e) => {
                return Err(RunnerError::CorruptLog {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
            Ok(_) => unreachable!("only the last line can lack a newline"),
        }
    }
    Ok((out, torn))
}

fn now_unix() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

struct TrialContext<'a> {
    study: &'a Study,
    profiles: BTreeMap<&'a str, &'a Profile>,
    sets: BTreeMap<&'a str, &'a ExplanationSet>,
    problems: BTreeMap<&'a str, &'a Problem>,
}

impl<'a> TrialContext<'a> {
    fn new(study: &'a Study) -> Self {
        TrialContext {
            study,
            profiles: study.profiles.iter().map(|p| (p.id(), p)).collect(),
            sets: study
                .items
                .ranking
                .values()
                .flatten()
                .map(|s| (s.problem_id.as_str(), s))
                .collect(),
            problems: study
                .items
                .generation
                .iter()
                .map(|p| (p.id.as_str(), p))
                .collect(),
        }
    }

    fn render(&self, stub: &TrialStub, profile: &Profile) -> Result<RenderedPrompt, String> {
        let cfg = &self.study.config;
        let forge = &self.study.forge;
        match stub.task {
            TaskKind::Ranking => {
                let set = self
                    .sets
                    .get(stub.problem_id.as_str())
                    .ok_or_else(|| format!("unknown explanation set {}", stub.problem_id))?;
                let task = TaskSpec::ranking(cfg.context, stub.role, &stub.subject);
                let seed =
                    derive_trial_seed(cfg.run_seed, profile.id(), &stub.problem_id, stub.role);
                forge
                    .shuffle_and_render_ranking(profile, &task, set, seed)
                    .map_err(|e| e.to_string())
            }
            TaskKind::Generation => {
                let problem = self
                    .problems
                    .get(stub.problem_id.as_str())
                    .ok_or_else(|| format!("unknown problem {}", stub.problem_id))?;
                let task = TaskSpec::generation(cfg.context, &stub.subject, cfg.problem_mode);
                let text = match cfg.problem_mode {
                    ProblemMode::WithProblem => Some(problem.statement.as_str()),
                    ProblemMode::NoProblem => None,
                };
                forge
                    .render_generation(profile, &task, text)
                    .map_err(|e| e.to_string())
            }
        }
    }

    fn run(&self, stub: &TrialStub, backend: &dyn Backend) -> TrialRecord {
        let mut rec = TrialRecord::from_stub(stub);
        let Some(profile) = self.profiles.get(stub.profile_id.as_str()) else {
            rec.status = TrialStatus::Failed(format!("unknown profile {}", stub.profile_id));
            return rec;
        };
        let prompt = match self.render(stub, profile) {
            Ok(p) => p,
            Err(e) => {
                rec.status = TrialStatus::Failed(format!("prompt: {e}"));
                return rec;
            }
        };
        rec.prompt_digest = prompt.digest();
        rec.permutation = prompt.permutation;
        let request = CompletionRequest {
            prompt: &prompt,
            profile,
            task: stub.task,
            role: stub.role,
            problem_id: &stub.problem_id,
            trial_key: &stub.trial_id,
        };
        if backend.kind() == BackendKind::Http {
            rec.timestamp = Some(now_unix());
        }
        match backend.complete(&request) {
            Ok(result) => {
                rec.attempt_count = result.attempt_count;
                rec.latency = result.latency;
                let parsed = match stub.task {
                    TaskKind::Ranking => {
                        let perm = prompt
                            .permutation
                            .expect("ranking prompts carry a permutation");
                        decode_ranking_response(&result.text, &perm)
                            .map(f64::from)
                            .map_err(|e| format!("unparseable: {e}"))
                    }
                    TaskKind::Generation => readability::total_grade_level(&result.text)
                        .map_err(|e| format!("unscorable: {e}")),
                };
                rec.response_text = Some(result.text);
                match parsed {
                    Ok(v) => {
                        rec.parsed = Some(v);
                        rec.status = TrialStatus::Ok;
                    }
                    Err(reason) => rec.status = TrialStatus::Excluded(reason),
                }
            }
            Err(e) => {
                rec.status = TrialStatus::Failed(format!("{}: {e}", e.code()));
            }
        }
        rec
    }
}

/// Runs every stub not already resolved in the output directory's trial log.
///
/// Records are appended in plan order regardless of completion order, so two
/// runs of the same config produce identical logs. Failed trials from an
/// earlier invocation are dropped from the log and retried, and a resumed log
/// is rewritten in plan order once the new records are in.
pub fn execute(
    study: &Study,
    stubs: &[TrialStub],
    backend: &dyn Backend,
) -> Result<RunSummary, RunnerError> {
    let cfg = &study.config;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|source| RunnerError::OutputDir {
        path: dir.clone(),
        source,
    })?;

    let plan_ids: BTreeSet<&str> = stubs.iter().map(|s| s.trial_id.as_str()).collect();
    let log_path = dir.join(TRIALS_FILE);
    let (logged, torn) = read_jsonl::<TrialRecord>(&log_path)?;
    let stale = logged
        .iter()
        .filter(|r| !plan_ids.contains(r.trial_id.as_str()))
        .count();
    if stale > 0 {
        return Err(RunnerError::StaleTrials { count: stale });
    }
    let mut seen = BTreeSet::new();
    let kept: Vec<TrialRecord> = logged
        .iter()
        .filter(|r| !matches!(r.status, TrialStatus::Failed(_)))
        .filter(|r| seen.insert(r.trial_id.clone()))
        .cloned()
        .collect();
    if torn || kept.len() != logged.len() {
        write_jsonl(&log_path, &kept)?;
    }

    let mut catalog_text = study.catalog.to_toml_string();
    if !catalog_text.ends_with('\n') {
        catalog_text.push('\n');
    }
    write_atomic(&dir.join(CATALOG_FILE), catalog_text.as_bytes())?;
    let mut profiles_tsv = Vec::new();
    write_profiles_tsv(&study.catalog, &study.profiles, &mut profiles_tsv)?;
    write_atomic(&dir.join(PROFILES_FILE), &profiles_tsv)?;
    write_jsonl(&dir.join(PLAN_FILE), stubs)?;

    let done: BTreeSet<&str> = kept.iter().map(|r| r.trial_id.as_str()).collect();
    let pending: Vec<&TrialStub> = stubs
        .iter()
        .filter(|s| !done.contains(s.trial_id.as_str()))
        .collect();

    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|source| RunnerError::OutputDir {
            path: log_path.clone(),
            source,
        })?;
    let mut writer = BufWriter::new(file);
    let ctx = TrialContext::new(study);
    let next = AtomicUsize::new(0);
    let workers = cfg.parallelism.min(pending.len()).max(1);
    let mut fresh: Vec<TrialRecord> = Vec::with_capacity(pending.len());

    let write_result: Result<(), RunnerError> = std::thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel::<(usize, TrialRecord)>(workers * 4);
        for _ in 0..workers {
            let tx = tx.clone();
            let (ctx, next, pending) = (&ctx, &next, &pending);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= pending.len() {
                    break;
                }
                let rec = ctx.run(pending[i], backend);
                if tx.send((i, rec)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut buffer: BTreeMap<usize, TrialRecord> = BTreeMap::new();
        let mut expected = 0usize;
        for (i, rec) in rx {
            buffer.insert(i, rec);
            while let Some(rec) = buffer.remove(&expected) {
                let mut line = serde_json::to_vec(&rec).expect("record serializes");
                line.push(b'\n');
                writer
                    .write_all(&line)
                    .and_then(|_| writer.flush())
                    .map_err(io_err(&log_path))?;
                fresh.push(rec);
                expected += 1;
            }
        }
        Ok(())
    });
    write_result?;
    drop(writer);

    if !kept.is_empty() && !fresh.is_empty() {
        let order: BTreeMap<&str, usize> = stubs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.trial_id.as_str(), i))
            .collect();
        let mut all: Vec<&TrialRecord> = kept.iter().chain(&fresh).collect();
        all.sort_by_key(|r| order[r.trial_id.as_str()]);
        write_jsonl(&log_path, &all)?;
    }

    let counts = StatusCounts::tally(stubs.len(), kept.iter().chain(&fresh));
    let manifest = Manifest {
        config: cfg.manifest_value(),
        catalog_digest: digest_hex(catalog_text.as_bytes()),
        template_digests: study.forge.templates().digests(),
        bank_digest: digest_hex(study.bank.to_jsonl().as_bytes()),
        profiles_digest: digest_hex(&profiles_tsv),
        plan_digest: digest_hex(&fs::read(dir.join(PLAN_FILE)).map_err(io_err(dir))?),
        space_size: study.catalog.space_size(),
        notes: study.notes.clone(),
        counts,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(RunSummary {
        counts,
        new_calls: pending.len(),
        resumed: kept.len(),
    })
}

/// Replay store over the recorded responses of a run directory.
pub fn replay_backend(run_dir: &Path) -> Result<ReplayBackend, RunnerError> {
    let (records, _) = read_jsonl::<TrialRecord>(&run_dir.join(TRIALS_FILE))?;
    Ok(ReplayBackend::new(records.into_iter().filter_map(|r| {
        let key = ReplayKey {
            profile_id: r.profile_id,
            task: r.task,
            role: r.role,
            problem_id: r.problem_id,
        };
        r.response_text.map(|t| (key, t))
    })))
}

/// Backend described by a spec. A replay spec names the recorded run
/// directory in `endpoint`.
pub fn build_backend(
    spec: &BackendSpec,
    catalog: &DimensionCatalog,
) -> Result<Box<dyn Backend>, RunnerError> {
    spec.validate()?;
    match spec.kind {
        BackendKind::Synthetic => {
            let cfg = spec
                .synthetic
                .clone()
                .expect("validated synthetic spec has a config");
            Ok(Box::new(SyntheticBackend::new(cfg, catalog)?))
        }
        BackendKind::Replay => {
            let dir = spec.endpoint.as_deref().ok_or_else(|| {
                RunnerError::Config(
                    "replay backend needs the source run directory as endpoint".into(),
                )
            })?;
            Ok(Box::new(replay_backend(Path::new(dir))?))
        }
        #[cfg(feature = "http")]
        BackendKind::Http => Ok(Box::new(crate::llm_gateway::HttpBackend::new(
            spec.clone(),
        )?)),
        #[cfg(not(feature = "http"))]
        BackendKind::Http => Err(RunnerError::Config("built without the http feature".into())),
    }
}

/// A run directory loaded for aggregation.
#[derive(Debug, Clone)]
pub struct RunData {
    pub manifest: Manifest,
    pub config: RunConfig,
    pub catalog: DimensionCatalog,
    pub profiles: Vec<Profile>,
    pub plan: Vec<TrialStub>,
    /// Final record per trial, sorted by trial id.
    pub records: Vec<TrialRecord>,
}

impl RunData {
    pub fn load(run_dir: &Path) -> Result<Self, RunnerError> {
        let manifest_path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|_| {
            RunnerError::MissingTrials(format!("{} has no manifest", run_dir.display()))
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| RunnerError::CorruptLog {
                path: manifest_path.clone(),
                line: 1,
                message: e.to_string(),
            })?;
        let mut cfg_value = manifest.config.clone();
        if let Some(o) = cfg_value.as_object_mut() {
            o.insert("output_dir".into(), serde_json::json!(run_dir));
        }
        let config: RunConfig =
            serde_json::from_value(cfg_value).map_err(|e| RunnerError::Config(e.to_string()))?;
        let catalog_path = run_dir.join(CATALOG_FILE);
        let catalog = DimensionCatalog::from_toml_str(
            &fs::read_to_string(&catalog_path).map_err(io_err(&catalog_path))?,
        )?;
        let profiles_path = run_dir.join(PROFILES_FILE);
        let profiles = read_profiles_tsv(
            &catalog,
            File::open(&profiles_path).map_err(io_err(&profiles_path))?,
        )?;
        let (plan, _) = read_jsonl::<TrialStub>(&run_dir.join(PLAN_FILE))?;
        let (logged, _) = read_jsonl::<TrialRecord>(&run_dir.join(TRIALS_FILE))?;
        if plan.is_empty() || logged.is_empty() {
            return Err(RunnerError::MissingTrials(format!(
                "{} has no plan or no logged trials",
                run_dir.display()
            )));
        }
        let mut latest: BTreeMap<String, TrialRecord> = BTreeMap::new();
        for r in logged {
            latest.insert(r.trial_id.clone(), r);
        }
        let missing = plan
            .iter()
            .filter(|s| !latest.contains_key(&s.trial_id))
            .count();
        if missing > 0 {
            return Err(RunnerError::MissingTrials(format!(
                "{missing} of {} planned trials have no log record",
                plan.len()
            )));
        }
        let planned: BTreeSet<&str> = plan.iter().map(|s| s.trial_id.as_str()).collect();
        if latest.keys().any(|k| !planned.contains(k.as_str())) {
            return Err(RunnerError::StaleTrials {
                count: latest
                    .keys()
                    .filter(|k| !planned.contains(k.as_str()))
                    .count(),
            });
        }
        Ok(RunData {
            manifest,
            config,
            catalog,
            profiles,
            plan,
            records: latest.into_values().collect(),
        })
    }

    pub fn model_label(&self) -> &str {
        &self.config.backend.model_name
    }
}

/// Score tables of one run, one per (task, role).
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub tables: BTreeMap<(TaskKind, Role), ScoreTable>,
    pub counts: StatusCounts,
}

type Observation = (ScoreKey, Option<f64>);

/// Folds trial records, in trial-id order, into per-(task, role) score tables.
pub fn aggregate_records(
    records: &[TrialRecord],
    planned: usize,
) -> Result<Aggregate, RunnerError> {
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    let mut obs: BTreeMap<(TaskKind, Role), Vec<Observation>> = BTreeMap::new();
    for r in &sorted {
        let value = if r.is_ok() { r.parsed } else { None };
        obs.entry((r.task, r.role))
            .or_default()
            .push((r.key(), value));
    }
    let mut tables = BTreeMap::new();
    for (k, o) in obs {
        tables.insert(k, ScoreTable::from_observations(k.0, o)?);
    }
    Ok(Aggregate {
        tables,
        counts: StatusCounts::tally(planned, sorted),
    })
}

pub fn aggregate(run_dir: &Path) -> Result<Aggregate, RunnerError> {
    let data = RunData::load(run_dir)?;
    aggregate_records(&data.records, data.plan.len())
}
