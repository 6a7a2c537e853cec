//! Browser bindings: readability scoring, prompt preview and a planted-bias
//! explorer over the synthetic backend. Every export returns a JSON string;
//! failures come back as `{"error": "..."}`.

use eduaudit::analysis::{analyze_table, AnalysisOptions};
use eduaudit::corpus::MATH_SUBJECTS;
use eduaudit::llm_gateway::{synthetic_generate, SyntheticBiasConfig};
use eduaudit::metrics::{profile_index, ScoreKey, ScoreTable};
use eduaudit::profile_space::{
    format_characteristic, stratified_sample, Context, DimensionCatalog, SamplePlan,
};
use eduaudit::prompt_forge::{
    decode_ranking_response, ExplanationSet, Permutation, ProblemMode, PromptForge, Role, TaskKind,
    TaskSpec, TemplateSet,
};
use eduaudit::readability::{score_text, total_grade_level};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_PROFILES: usize = 200;

fn respond(result: Result<Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn context(name: &str) -> Result<Context, String> {
    name.parse()
        .map_err(|_| format!("unknown context {name:?}"))
}

/// Dimensions and values of a context, for building forms.
#[wasm_bindgen]
pub fn catalog(context_name: &str) -> String {
    respond(context(context_name).map(|ctx| {
        let catalog = DimensionCatalog::default_for(ctx);
        json!({
            "context": ctx.as_str(),
            "space_size": catalog.space_size(),
            "subjects": MATH_SUBJECTS,
            "dimensions": catalog
                .dimensions()
                .iter()
                .map(|d| json!({ "name": d.name, "values": d.values }))
                .collect::<Vec<_>>(),
        })
    }))
}

pub fn readability_json(text: &str) -> Result<Value, String> {
    let report = score_text(text).map_err(|e| e.to_string())?;
    serde_json::to_value(report).map_err(|e| e.to_string())
}

/// Flesch-Kincaid, Fog, Coleman-Liau and their mean for a passage.
#[wasm_bindgen]
pub fn score(text: &str) -> String {
    respond(readability_json(text))
}

pub fn preview_json(
    context_name: &str,
    values: &[String],
    kind: &str,
    subject: &str,
    shuffle_seed: u64,
) -> Result<Value, String> {
    let ctx = context(context_name)?;
    let catalog = DimensionCatalog::default_for(ctx);
    let profile = catalog.profile(values).map_err(|e| e.to_string())?;
    let characteristic = format_characteristic(&catalog, &profile);
    let forge = PromptForge::new(TemplateSet::builtin(), catalog);
    let levels = ["one", "two", "three", "four", "five"]
        .iter()
        .map(|w| format!("Explanation written at complexity level {w}."))
        .collect();
    let set = ExplanationSet::new("demo", levels).map_err(|e| e.to_string())?;
    let perm = if shuffle_seed == 0 {
        Permutation::identity()
    } else {
        Permutation::shuffled(shuffle_seed, profile.id(), &set.problem_id)
    };
    let prompt = match kind {
        "generation" => forge.render_generation(
            &profile,
            &TaskSpec::generation(ctx, subject, ProblemMode::WithProblem),
            Some("Find all real x with x^2 - 5x + 6 = 0."),
        ),
        "generation_no_problem" => forge.render_generation(
            &profile,
            &TaskSpec::generation(ctx, subject, ProblemMode::NoProblem),
            None,
        ),
        "ranking_teacher" => forge.render_ranking(
            &profile,
            &TaskSpec::ranking(ctx, Role::Teacher, subject),
            &set,
            perm,
            shuffle_seed,
        ),
        "ranking_student" => forge.render_ranking(
            &profile,
            &TaskSpec::ranking(ctx, Role::Student, subject),
            &set,
            perm,
            shuffle_seed,
        ),
        other => return Err(format!("unknown prompt kind {other:?}")),
    }
    .map_err(|e| e.to_string())?;
    let decode = prompt.permutation.map(|p| {
        (1..=5u8)
            .map(|pos| json!({ "answer": pos, "level": decode_ranking_response(&pos.to_string(), &p).ok() }))
            .collect::<Vec<_>>()
    });
    Ok(json!({
        "profile_id": profile.id(),
        "characteristic": characteristic,
        "system": prompt.system,
        "user": prompt.user,
        "digest": prompt.digest(),
        "decode": decode,
    }))
}

/// Rendered prompt for a profile given as one value per dimension.
/// `shuffle_seed` 0 keeps the explanations in level order.
#[wasm_bindgen]
pub fn preview(
    context_name: &str,
    values_json: &str,
    kind: &str,
    subject: &str,
    shuffle_seed: u64,
) -> String {
    respond(
        serde_json::from_str::<Vec<String>>(values_json)
            .map_err(|e| format!("values must be a JSON array of strings: {e}"))
            .and_then(|values| preview_json(context_name, &values, kind, subject, shuffle_seed)),
    )
}

#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
pub struct ExplorerInput {
    pub context: String,
    #[serde(default)]
    pub deltas: Vec<(String, String, f64)>,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_profiles")]
    pub profiles: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.4
}

fn default_profiles() -> usize {
    100
}

pub fn explore_json(input: &ExplorerInput) -> Result<Value, String> {
    let ctx = context(&input.context)?;
    if input.profiles == 0 || input.profiles > MAX_PROFILES {
        return Err(format!("profiles must be between 1 and {MAX_PROFILES}"));
    }
    let catalog = DimensionCatalog::default_for(ctx);
    let mut cfg = SyntheticBiasConfig {
        noise_sd: input.noise,
        seed: input.seed,
        ..Default::default()
    };
    for (dim, value, delta) in &input.deltas {
        cfg = cfg.with_delta(dim, value, *delta);
    }
    cfg.validate(&catalog).map_err(|e| e.to_string())?;
    let plan = SamplePlan::from_catalog(&catalog, input.profiles, input.seed);
    let profiles = stratified_sample(&catalog, &plan).map_err(|e| e.to_string())?;
    let mut obs = Vec::with_capacity(profiles.len() * MATH_SUBJECTS.len());
    let mut example = None;
    for p in &profiles {
        for subject in MATH_SUBJECTS {
            let key = format!("{}|{subject}", p.id());
            let text = synthetic_generate(&cfg, p, subject, &key);
            let grade = total_grade_level(&text).ok();
            if example.is_none() {
                example = Some(
                    json!({ "profile": p.id(), "subject": subject, "text": text, "tgl": grade }),
                );
            }
            obs.push((ScoreKey::new(p.id(), subject), grade));
        }
    }
    let table =
        ScoreTable::from_observations(TaskKind::Generation, obs).map_err(|e| e.to_string())?;
    let index = profile_index(&profiles);
    let cell = analyze_table(
        &table,
        Role::NotApplicable,
        &index,
        &catalog,
        &AnalysisOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let top = cell.top_mab_dimension().map(|d| d.dimension.clone());
    let mut strongest: Vec<_> = cell.comparisons.iter().collect();
    strongest.sort_by(|a, b| {
        a.p()
            .total_cmp(&b.p())
            .then_with(|| a.label().cmp(&b.label()))
    });
    Ok(json!({
        "profiles": profiles.len(),
        "trials": table.len(),
        "top_mab_dimension": top,
        "significant": cell.significant_dimensions,
        "dimensions": cell
            .bias
            .iter()
            .map(|d| json!({
                "dimension": d.dimension,
                "max_mab": d.max_mab,
                "mab_group": d.mab_group,
                "max_mdb": d.max_mdb_raw,
                "mdb_group": d.mdb_group,
                "groups": d.groups.iter().map(|g| json!({ "value": g.value, "mean": g.mean_raw, "mab": g.mab })).collect::<Vec<_>>(),
            }))
            .collect::<Vec<_>>(),
        "comparisons": strongest
            .iter()
            .take(8)
            .map(|c| json!({
                "dimension": c.dimension,
                "label": c.label(),
                "gap": c.gap(),
                "t": c.t.statistic,
                "p": c.p(),
                "p_bonferroni": c.p_bonferroni,
                "d": c.d.as_ref().map(|d| d.statistic),
            }))
            .collect::<Vec<_>>(),
        "example": example,
    }))
}

/// Simulates generation trials with planted shifts and reports the bias
/// metrics and strongest pairwise tests. `input_json` is an object with
/// `context`, `deltas` (`[[dimension, value, delta], ...]`), `noise`,
/// `profiles` and `seed`.
#[wasm_bindgen]
pub fn explore(input_json: &str) -> String {
    respond(
        serde_json::from_str::<ExplorerInput>(input_json)
            .map_err(|e| format!("bad explorer input: {e}"))
            .and_then(|i| explore_json(&i)),
    )
}
