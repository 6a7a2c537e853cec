use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use eduaudit::analysis::{
    analyze, compare_runs, render_reports, render_summary, write_reports, AnalysisOptions,
    REPORTS_DIR,
};
use eduaudit::llm_gateway::{BackendKind, BackendSpec, SyntheticBiasConfig};
use eduaudit::metrics::Grouping;
use eduaudit::profile_space::{
    enumerate_profiles, marginal_counts, stratified_sample, write_profiles_tsv, Context,
    DimensionCatalog, SamplePlan,
};
use eduaudit::prompt_forge::{ProblemMode, Role, TaskKind};
use eduaudit::readability::score_text;
use eduaudit::runner::{build_backend, execute, plan_trials, Dataset, RunConfig, RunData, Study};
use eduaudit::stats::VarianceModel;

/// Exit status of a run that finished with failed trials.
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "eduaudit",
    version,
    about = "Demographic disparity audits for LLM-generated explanations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write every profile of a context's space as TSV.
    Enumerate(SpaceArgs),
    /// Draw a marginal-stratified profile sample.
    Sample {
        #[command(flatten)]
        space: SpaceArgs,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plan and execute (or resume) a run.
    Run(Box<RunArgs>),
    /// Analyze a run directory and write the report files.
    Analyze {
        run_dir: PathBuf,
        #[command(flatten)]
        opts: AnalyzeArgs,
        /// Report directory; defaults to <RUN_DIR>/reports.
        #[arg(long)]
        reports: Option<PathBuf>,
    },
    /// Print the analysis summary of a run without writing files.
    Report {
        run_dir: PathBuf,
        #[command(flatten)]
        opts: AnalyzeArgs,
        /// Print summary.json instead of the text digest.
        #[arg(long)]
        json: bool,
    },
    /// Agreement between two runs over the same profiles.
    Compare { a: PathBuf, b: PathBuf },
    /// Readability scores of a text file, or stdin with `-`.
    Readability { file: PathBuf },
}

#[derive(Args)]
struct SpaceArgs {
    #[arg(long, value_parser = parse_context, default_value = "indian")]
    context: Context,
    /// Catalog TOML replacing the built-in dimensions.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RolesArg {
    Teacher,
    Student,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupingArg {
    Subject,
    Global,
    Within,
}

#[derive(Clone, Copy, ValueEnum)]
enum VarianceArg {
    Welch,
    Pooled,
}

#[derive(Args)]
struct RunArgs {
    /// Run config TOML; flags given alongside override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_context)]
    context: Option<Context>,
    #[arg(long, value_parser = parse_dataset)]
    dataset: Option<Dataset>,
    /// Tasks to run, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_task)]
    task: Vec<TaskKind>,
    #[arg(long, value_enum)]
    roles: Option<RolesArg>,
    /// Generation prompts without the problem statement.
    #[arg(long)]
    no_problem: bool,
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    #[arg(long)]
    model: Option<String>,
    /// Chat-completions base URL, or the source run directory for replay.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Problem bank in JSONL.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Planted synthetic shift, as dimension=value:delta.
    #[arg(long = "delta", value_parser = parse_delta)]
    deltas: Vec<(String, String, f64)>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    bias_seed: Option<u64>,
    #[arg(long)]
    base_grade: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, value_enum, default_value = "subject")]
    grouping: GroupingArg,
    /// Dimension whose values split the cells when grouping is `within`.
    #[arg(long)]
    within: Option<String>,
    #[arg(long, value_enum, default_value = "welch")]
    variance: VarianceArg,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
}

fn parse_context(s: &str) -> Result<Context, String> {
    s.parse()
        .map_err(|_| format!("unknown context {s:?}; expected indian or american"))
}

fn parse_dataset(s: &str) -> Result<Dataset, String> {
    s.parse()
        .map_err(|_| format!("unknown dataset {s:?}; expected math50 or jeebench"))
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse()
        .map_err(|_| format!("unknown backend {s:?}; expected http, replay or synthetic"))
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    match s {
        "ranking" => Ok(TaskKind::Ranking),
        "generation" => Ok(TaskKind::Generation),
        _ => Err(format!(
            "unknown task {s:?}; expected ranking or generation"
        )),
    }
}

fn parse_delta(s: &str) -> Result<(String, String, f64), String> {
    let (dim, rest) = s.split_once('=').ok_or("expected dimension=value:delta")?;
    let (value, delta) = rest
        .rsplit_once(':')
        .ok_or("expected dimension=value:delta")?;
    let delta = delta
        .parse::<f64>()
        .map_err(|e| format!("bad delta {delta:?}: {e}"))?;
    Ok((dim.to_string(), value.to_string(), delta))
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Enumerate(space) => {
            let catalog = load_catalog(&space)?;
            let profiles = enumerate_profiles(&catalog);
            emit_tsv(&catalog, &profiles, space.out.as_deref())?;
            eprintln!("{} profiles", profiles.len());
        }
        Command::Sample { space, n, seed } => {
            let catalog = load_catalog(&space)?;
            let plan = SamplePlan::from_catalog(&catalog, n, seed);
            let profiles = stratified_sample(&catalog, &plan)?;
            emit_tsv(&catalog, &profiles, space.out.as_deref())?;
            for d in catalog.dimensions() {
                let counts = marginal_counts(&catalog, &profiles, &d.name)?;
                let cells: Vec<String> = counts.iter().map(|(v, c)| format!("{v}={c}")).collect();
                eprintln!("{}: {}", d.name, cells.join(" "));
            }
        }
        Command::Run(args) => return run(args),
        Command::Analyze {
            run_dir,
            opts,
            reports,
        } => {
            let data = RunData::load(&run_dir)?;
            let analysis = analyze(&data, &opts.options()?)?;
            let dir = reports.unwrap_or_else(|| run_dir.join(REPORTS_DIR));
            let written = write_reports(&analysis, &dir)?;
            print!("{}", render_summary(&analysis));
            eprintln!("wrote {} report files to {}", written.len(), dir.display());
        }
        Command::Report {
            run_dir,
            opts,
            json,
        } => {
            let data = RunData::load(&run_dir)?;
            let analysis = analyze(&data, &opts.options()?)?;
            if json {
                let files = render_reports(&analysis);
                let (_, summary) = files
                    .iter()
                    .find(|(name, _)| name == "summary.json")
                    .context("analysis produced no summary")?;
                io::stdout().write_all(summary)?;
            } else {
                print!("{}", render_summary(&analysis));
            }
        }
        Command::Compare { a, b } => {
            let rows = compare_runs(&RunData::load(&a)?, &RunData::load(&b)?)?;
            for r in rows {
                let kl =
                    r.kl.map(|k| format!(", KL {:.4} ({})", k.statistic, k.label))
                        .unwrap_or_default();
                println!(
                    "{} {}: kappa {:.4} ({}){kl}",
                    r.task, r.comparison, r.kappa.statistic, r.kappa.label
                );
            }
        }
        Command::Readability { file } => {
            let text = if file.as_os_str() == "-" {
                let mut s = String::new();
                io::stdin().read_to_string(&mut s)?;
                s
            } else {
                fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?
            };
            println!("{}", serde_json::to_string_pretty(&score_text(&text)?)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_catalog(space: &SpaceArgs) -> Result<DimensionCatalog> {
    let catalog = match &space.catalog {
        Some(p) => DimensionCatalog::load(p)?,
        None => DimensionCatalog::default_for(space.context),
    };
    if catalog.context() != space.context {
        bail!(
            "catalog is for {}, not {}",
            catalog.context(),
            space.context
        );
    }
    Ok(catalog)
}

fn emit_tsv(
    catalog: &DimensionCatalog,
    profiles: &[eduaudit::profile_space::Profile],
    out: Option<&Path>,
) -> Result<()> {
    let mut buf = Vec::new();
    write_profiles_tsv(catalog, profiles, &mut buf)?;
    match out {
        Some(p) => fs::write(p, buf).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(&buf)?,
    }
    Ok(())
}

impl AnalyzeArgs {
    fn options(&self) -> Result<AnalysisOptions> {
        let grouping = match (self.grouping, &self.within) {
            (GroupingArg::Subject, None) => Grouping::Subject,
            (GroupingArg::Global, None) => Grouping::Global,
            (GroupingArg::Within, Some(d)) => Grouping::DimensionSubject(d.clone()),
            (GroupingArg::Within, None) => bail!("--grouping within needs --within <dimension>"),
            (_, Some(_)) => bail!("--within only applies to --grouping within"),
        };
        let variance = match self.variance {
            VarianceArg::Welch => VarianceModel::Welch,
            VarianceArg::Pooled => VarianceModel::Pooled,
        };
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("--alpha must lie in (0, 1)");
        }
        Ok(AnalysisOptions {
            variance,
            grouping,
            alpha: self.alpha,
            top_k: self.top_k,
        })
    }
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::new(
                self.context.unwrap_or(Context::Indian),
                self.dataset.unwrap_or(Dataset::Math50),
                vec![TaskKind::Ranking, TaskKind::Generation],
                BackendSpec::synthetic(SyntheticBiasConfig::default()),
            ),
        };
        if let Some(c) = self.context {
            cfg.context = c;
        }
        if let Some(d) = self.dataset {
            cfg.dataset = d;
        }
        if !self.task.is_empty() {
            cfg.tasks = self.task.clone();
        } else if self.config.is_none() && cfg.dataset == Dataset::JeeBench {
            cfg.tasks = vec![TaskKind::Generation];
        }
        if let Some(r) = self.roles {
            cfg.roles = match r {
                RolesArg::Teacher => vec![Role::Teacher],
                RolesArg::Student => vec![Role::Student],
                RolesArg::Both => vec![Role::Teacher, Role::Student],
            };
        }
        if self.no_problem {
            cfg.problem_mode = ProblemMode::NoProblem;
        }
        if let Some(kind) = self.backend {
            if kind != cfg.backend.kind {
                cfg.backend = match kind {
                    BackendKind::Synthetic => {
                        BackendSpec::synthetic(SyntheticBiasConfig::default())
                    }
                    BackendKind::Http => BackendSpec::http("", ""),
                    BackendKind::Replay => BackendSpec::new(BackendKind::Replay, "replay"),
                };
            }
        }
        if let Some(m) = &self.model {
            cfg.backend.model_name = m.clone();
        }
        if let Some(e) = &self.endpoint {
            cfg.backend.endpoint = Some(e.clone());
        }
        if let Some(r) = self.max_retries {
            cfg.backend.max_retries = r;
        }
        if let Some(k) = &self.api_key_env {
            cfg.backend.api_key_env = Some(k.clone());
        }
        let synthetic_flags = !self.deltas.is_empty()
            || self.noise.is_some()
            || self.bias_seed.is_some()
            || self.base_grade.is_some();
        if synthetic_flags {
            let Some(syn) = cfg.backend.synthetic.as_mut() else {
                bail!("--delta, --noise, --bias-seed and --base-grade need the synthetic backend");
            };
            for (dim, value, delta) in &self.deltas {
                *syn = std::mem::take(syn).with_delta(dim, value, *delta);
            }
            if let Some(n) = self.noise {
                syn.noise_sd = n;
            }
            if let Some(s) = self.bias_seed {
                syn.seed = s;
            }
            if let Some(g) = self.base_grade {
                syn.base_grade = g;
            }
        }
        if let Some(s) = self.seed {
            cfg.run_seed = s;
        }
        if let Some(n) = self.sample_size {
            cfg.sample_size = n;
        }
        if let Some(p) = self.parallelism {
            cfg.parallelism = p;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if self.bank.is_some() {
            cfg.bank = self.bank.clone();
        }
        if self.catalog.is_some() {
            cfg.catalog = self.catalog.clone();
        }
        if self.templates.is_some() {
            cfg.templates = self.templates.clone();
        }
        if cfg.output_dir.as_os_str().is_empty() {
            bail!("no output directory; pass --out or set output_dir in the config");
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(args: Box<RunArgs>) -> Result<ExitCode> {
    let cfg = args.config()?;
    let study = Study::prepare(&cfg)?;
    for n in &study.notes {
        eprintln!("note: {n}");
    }
    let stubs = plan_trials(&cfg, &study.profiles, &study.items)?;
    let backend = build_backend(&cfg.backend, &study.catalog)?;
    let summary = execute(&study, &stubs, backend.as_ref())?;
    let c = summary.counts;
    println!(
        "{}: {} planned, {} ok, {} excluded, {} failed ({} new calls, {} resumed)",
        cfg.output_dir.display(),
        c.planned,
        c.ok,
        c.excluded,
        c.failed,
        summary.new_calls,
        summary.resumed
    );
    if summary.is_complete() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("run incomplete; rerun the same command to retry failed trials");
        Ok(ExitCode::from(EXIT_PARTIAL))
    }
}
