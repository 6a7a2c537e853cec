//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use eduaudit::analysis::{analyze, write_reports, AnalysisOptions};
use eduaudit::llm_gateway::{BackendSpec, SyntheticBackend, SyntheticBiasConfig};
use eduaudit::metrics::{
    dimension_bias, mab, mcv, mdb, mgl, profile_index, z_normalize, Grouping, ScoreKey, ScoreTable,
};
use eduaudit::profile_space::{
    enumerate_profiles, format_characteristic, marginal_counts, stratified_sample,
    uncovered_values, Context, DimensionCatalog, SamplePlan,
};
use eduaudit::prompt_forge::{
    decode_ranking_response, ExplanationSet, Permutation, ProblemMode, PromptForge, Role, TaskKind,
    TaskSpec, TemplateSet,
};
use eduaudit::readability::{self, TextStats};
use eduaudit::runner::{execute, plan_trials, Dataset, RunConfig, RunData, Study};
use eduaudit::stats::{
    cohens_d, cohens_kappa, kappa_from_agreement, kl_band, kl_divergence, t_test, KL_EPSILON,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "metric oracle equivalence", metric_oracles),
        (2, "normalization invariants", normalization_invariants),
        (3, "statistics oracles", statistics_oracles),
        (4, "trial-count structure", trial_counts),
        (5, "planted-bias recovery", planted_bias_recovery),
        (6, "determinism", determinism),
        (7, "prompt fidelity", prompt_fidelity),
        (8, "readability correctness", readability_correctness),
        (9, "ranking decode neutrality", decode_neutrality),
        (10, "sampling", sampling),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {n:>2} {name}: {detail} [{secs:.2}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {n:>2} {name}: {detail} [{secs:.2}s]");
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn brute_mean(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in x {
        s += v;
    }
    s / x.len() as f64
}

fn brute_mdb(x: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for a in x {
        for b in x {
            best = best.max(a - b);
        }
    }
    best
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(1..=200);
        let ranking = case % 2 == 0;
        let profiles = rng.random_range(1..=20);
        let subjects = rng.random_range(1..=7);
        let mut cells: BTreeMap<ScoreKey, Vec<f64>> = BTreeMap::new();
        let mut obs = Vec::with_capacity(n);
        for _ in 0..n {
            let key = ScoreKey::new(
                format!("p{}", rng.random_range(0..profiles)),
                format!("s{}", rng.random_range(0..subjects)),
            );
            let v = if ranking {
                rng.random_range(1..=5u8) as f64
            } else {
                rng.random_range(-5.0..25.0)
            };
            cells.entry(key.clone()).or_default().push(v);
            obs.push((key, Some(v)));
        }
        let task = if ranking {
            TaskKind::Ranking
        } else {
            TaskKind::Generation
        };
        let table = ScoreTable::from_observations(task, obs).map_err(|e| e.to_string())?;
        ensure!(
            table.len() == cells.len(),
            "case {case}: {} cells, expected {}",
            table.len(),
            cells.len()
        );
        for (k, vals) in &cells {
            let expect = brute_mean(vals);
            let direct = if ranking {
                let levels: Vec<u8> = vals.iter().map(|v| *v as u8).collect();
                mcv(&levels).unwrap()
            } else {
                mgl(vals).unwrap()
            };
            worst = worst
                .max((table.scores[k] - expect).abs())
                .max((direct - expect).abs());
        }
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let brute_mab = brute_mean(&z.iter().map(|v| v.abs()).collect::<Vec<_>>());
        worst = worst
            .max((mab(&z).unwrap() - brute_mab).abs())
            .max((mdb(&z).unwrap() - brute_mdb(&z)).abs());
        let raw: Vec<f64> = table.scores.values().copied().collect();
        worst = worst.max((mdb(&raw).unwrap() - brute_mdb(&raw)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(worst <= 1e-12, "max deviation {worst:e} exceeds 1e-12");
    ensure!(secs < 5.0, "took {secs:.2}s (limit 5s)");
    Ok(format!("1000 tables, max deviation {worst:.1e}"))
}

fn population_sd(x: &[f64]) -> f64 {
    let m = brute_mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

fn normalization_invariants() -> Outcome {
    let catalog = DimensionCatalog::indian();
    let profiles = stratified_sample(&catalog, &SamplePlan::from_catalog(&catalog, 100, 5))
        .map_err(|e| e.to_string())?;
    let index = profile_index(&profiles);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut groupings = vec![Grouping::Subject, Grouping::Global];
    groupings.extend(
        catalog
            .dimensions()
            .iter()
            .map(|d| Grouping::DimensionSubject(d.name.clone())),
    );
    let (mut worst_mean, mut worst_sd, mut worst_affine) = (0.0f64, 0.0f64, 0.0f64);
    let mut cells_checked = 0usize;
    for round in 0..20 {
        let mut obs = Vec::new();
        for p in &profiles {
            for s in 0..7 {
                let v = if s == 6 {
                    4.0
                } else {
                    rng.random_range(1.0..5.0) * (1.0 + round as f64)
                };
                obs.push((ScoreKey::new(p.id(), format!("s{s}")), Some(v)));
            }
        }
        let table = ScoreTable::from_observations(TaskKind::Generation, obs).unwrap();
        for g in &groupings {
            let norm = z_normalize(&table, g, &index).map_err(|e| e.to_string())?;
            for (cell, z) in norm.cell_values() {
                cells_checked += 1;
                worst_mean = worst_mean.max(brute_mean(&z).abs());
                let raw: Vec<f64> = norm.cells[cell].iter().map(|k| table.scores[k]).collect();
                let constant = raw.iter().all(|v| *v == raw[0]);
                if constant {
                    ensure!(
                        z.iter().all(|v| *v == 0.0),
                        "constant cell {cell} has non-zero z"
                    );
                } else {
                    worst_sd = worst_sd.max((population_sd(&z) - 1.0).abs());
                }
            }
            // Affine map per normalization cell.
            let mut moved = table.clone();
            for keys in norm.cells.values() {
                let a = rng.random_range(0.01..100.0);
                let b = rng.random_range(-100.0..100.0);
                for k in keys {
                    let v = moved.scores.get_mut(k).unwrap();
                    *v = a * *v + b;
                }
            }
            let norm2 = z_normalize(&moved, g, &index).unwrap();
            let bias1 = dimension_bias(&table, &norm, &index, &catalog).unwrap();
            let bias2 = dimension_bias(&moved, &norm2, &index, &catalog).unwrap();
            for (d1, d2) in bias1.iter().zip(&bias2) {
                for (g1, g2) in d1.groups.iter().zip(&d2.groups) {
                    worst_affine = worst_affine
                        .max((g1.mab - g2.mab).abs())
                        .max((g1.mdb_z - g2.mdb_z).abs());
                }
            }
        }
    }
    ensure!(worst_mean <= 1e-9, "cell mean {worst_mean:e}");
    ensure!(worst_sd <= 1e-9, "cell sd deviation {worst_sd:e}");
    ensure!(worst_affine <= 1e-9, "affine drift {worst_affine:e}");
    Ok(format!(
        "{cells_checked} cells; |mean| {worst_mean:.1e}, |sd-1| {worst_sd:.1e}, affine {worst_affine:.1e}"
    ))
}

fn sample_var(x: &[f64]) -> f64 {
    let m = brute_mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn oracle_welch(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_var(a) / na, sample_var(b) / nb);
    let t = (brute_mean(a) - brute_mean(b)) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va.powi(2) / (na - 1.0) + vb.powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    (t, df, 2.0 * dist.sf(t.abs()))
}

fn oracle_kappa(a: &[usize], b: &[usize], k: usize) -> f64 {
    let n = a.len() as f64;
    let mut m = vec![vec![0.0; k]; k];
    for (x, y) in a.iter().zip(b) {
        m[*x][*y] += 1.0;
    }
    let po: f64 = (0..k).map(|i| m[i][i]).sum::<f64>() / n;
    let pe: f64 = (0..k)
        .map(|i| {
            let row: f64 = m[i].iter().sum();
            let col: f64 = (0..k).map(|j| m[j][i]).sum();
            row * col / (n * n)
        })
        .sum();
    if pe == 1.0 {
        return if po == 1.0 { 1.0 } else { 0.0 };
    }
    (po - pe) / (1.0 - pe)
}

fn oracle_kl(p: &[f64], q: &[f64]) -> f64 {
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    let k = q.len() as f64;
    let mut total = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        let pi = pi / sp;
        if pi == 0.0 {
            continue;
        }
        let qi = (qi / sq + KL_EPSILON) / (1.0 + k * KL_EPSILON);
        total += pi * (pi / qi).ln();
    }
    total
}

fn statistics_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut wt, mut wp, mut wd, mut wk, mut wkl) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let na = rng.random_range(2..=60);
        let nb = rng.random_range(2..=60);
        let ma = rng.random_range(-3.0..3.0);
        let sa = rng.random_range(0.2..4.0);
        let sb = rng.random_range(0.2..4.0);
        let ga = Normal::new(ma, sa).unwrap();
        let gb = Normal::new(0.0, sb).unwrap();
        let a: Vec<f64> = (0..na).map(|_| ga.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..nb).map(|_| gb.sample(&mut rng)).collect();
        let r = t_test(&a, &b).map_err(|e| e.to_string())?;
        let (t, df, p) = oracle_welch(&a, &b);
        wt = wt
            .max((r.statistic - t).abs())
            .max((r.df.unwrap() - df).abs() / df.max(1.0));
        wp = wp.max((r.p_value.unwrap() - p).abs());
        let swapped = t_test(&b, &a).unwrap();
        ensure!(
            swapped.statistic == -r.statistic && swapped.p_value == r.p_value,
            "t-test not antisymmetric"
        );
        let pooled = (((na - 1) as f64 * sample_var(&a) + (nb - 1) as f64 * sample_var(&b))
            / (na + nb - 2) as f64)
            .sqrt();
        let d = (brute_mean(&a) - brute_mean(&b)) / pooled;
        let rd = cohens_d(&a, &b).unwrap().statistic;
        wd = wd.max((rd - d).abs());
        ensure!(
            (cohens_d(&b, &a).unwrap().statistic + rd).abs() < 1e-12,
            "d sign flip failed"
        );

        let k = rng.random_range(2..=6);
        let n = rng.random_range(10..=300);
        let la: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let lb: Vec<usize> = la
            .iter()
            .map(|x| {
                if rng.random_bool(0.5) {
                    *x
                } else {
                    rng.random_range(0..k)
                }
            })
            .collect();
        let kap = cohens_kappa(&la, &lb).unwrap().statistic;
        wk = wk.max((kap - oracle_kappa(&la, &lb, k)).abs());
        let mut relabel: Vec<usize> = (0..k).collect();
        relabel.shuffle(&mut rng);
        let ra: Vec<usize> = la.iter().map(|x| relabel[*x]).collect();
        let rb: Vec<usize> = lb.iter().map(|x| relabel[*x]).collect();
        wk = wk.max((cohens_kappa(&ra, &rb).unwrap().statistic - kap).abs());

        let bins = rng.random_range(2..=10);
        let p: Vec<f64> = (0..bins)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let q: Vec<f64> = (0..bins)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        if p.iter().sum::<f64>() == 0.0 || q.iter().sum::<f64>() == 0.0 {
            continue;
        }
        let kl = kl_divergence(&p, &q).unwrap().statistic;
        ensure!(kl >= 0.0 && kl.is_finite(), "KL {kl} outside [0, inf)");
        wkl = wkl.max((kl - oracle_kl(&p, &q)).abs());
        let self_kl = kl_divergence(&p, &p).unwrap().statistic;
        ensure!(self_kl.abs() < 1e-4, "KL(p,p) = {self_kl}");
    }
    for (name, w) in [("t", wt), ("p", wp), ("d", wd), ("kappa", wk), ("KL", wkl)] {
        ensure!(w <= 1e-9, "{name} deviates from oracle by {w:e}");
    }
    let triple = kappa_from_agreement(0.6329, 0.3270);
    ensure!(
        (triple - 0.4545).abs() <= 1e-4,
        "published triple gives {triple}"
    );
    ensure!(
        kl_band(1.6) == "very different" && kl_band(3.2) == "extreme",
        "KL bands"
    );
    ensure!(
        kl_band(1.5) != "very different" && kl_band(3.0) == "very different",
        "KL band edges"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(304);
    let a: Vec<u8> = (0..10_000).map(|_| rng.random_range(1..=5)).collect();
    let b: Vec<u8> = (0..10_000).map(|_| rng.random_range(1..=5)).collect();
    let null_kappa = cohens_kappa(&a, &b).unwrap().statistic;
    ensure!(null_kappa.abs() <= 0.05, "independent kappa {null_kappa}");
    Ok(format!(
        "max dev t {wt:.1e} p {wp:.1e} d {wd:.1e} kappa {wk:.1e} KL {wkl:.1e}; triple -> {triple:.4}"
    ))
}

fn synthetic_config(
    tasks: Vec<TaskKind>,
    dataset: Dataset,
    bias: SyntheticBiasConfig,
    seed: u64,
) -> RunConfig {
    let mut cfg = RunConfig::new(
        Context::Indian,
        dataset,
        tasks,
        BackendSpec::synthetic(bias),
    );
    cfg.run_seed = seed;
    cfg
}

fn trial_counts() -> Outcome {
    let mut got = Vec::new();
    for (tasks, dataset, expect) in [
        (vec![TaskKind::Ranking], Dataset::Math50, 1_400),
        (vec![TaskKind::Generation], Dataset::Math50, 2_100),
        (vec![TaskKind::Generation], Dataset::JeeBench, 5_000),
    ] {
        let cfg = synthetic_config(tasks, dataset, SyntheticBiasConfig::default(), 1);
        let study = Study::prepare(&cfg).map_err(|e| e.to_string())?;
        ensure!(
            study.profiles.len() == 100,
            "{} profiles",
            study.profiles.len()
        );
        let n = plan_trials(&cfg, &study.profiles, &study.items)
            .map_err(|e| e.to_string())?
            .len();
        ensure!(n == expect, "{dataset:?} planned {n}, expected {expect}");
        got.push(n.to_string());
    }
    Ok(format!("stubs {}", got.join(" / ")))
}

fn run_to(cfg: &RunConfig, dir: &Path) -> Result<RunData, String> {
    let mut cfg = cfg.clone();
    cfg.output_dir = dir.to_path_buf();
    let study = Study::prepare(&cfg).map_err(|e| e.to_string())?;
    let stubs = plan_trials(&cfg, &study.profiles, &study.items).map_err(|e| e.to_string())?;
    let backend = SyntheticBackend::new(cfg.backend.synthetic.clone().unwrap(), &study.catalog)
        .map_err(|e| e.to_string())?;
    let summary = execute(&study, &stubs, &backend).map_err(|e| e.to_string())?;
    if !summary.is_complete() {
        return Err(format!("incomplete run: {:?}", summary.counts));
    }
    RunData::load(dir).map_err(|e| e.to_string())
}

fn planted_bias_recovery() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let planted = SyntheticBiasConfig {
        noise_sd: 0.4,
        seed: 17,
        ..Default::default()
    }
    .with_delta("income", "High", 2.0)
    .with_delta("medium", "English", 1.0);
    let cfg = synthetic_config(vec![TaskKind::Generation], Dataset::Math50, planted, 2024);
    let data = run_to(&cfg, &tmp.path().join("planted"))?;
    let analysis = analyze(&data, &AnalysisOptions::default()).map_err(|e| e.to_string())?;
    let cell = analysis
        .cell(TaskKind::Generation, Role::NotApplicable)
        .ok_or("no generation table")?;
    let top = cell.top_mab_dimension().ok_or("no bias rows")?;
    ensure!(
        top.dimension == "income",
        "top MAB dimension is {} ({:.3})",
        top.dimension,
        top.max_mab
    );
    let hl = cell
        .comparison("income", "High", "Low")
        .ok_or("no High vs Low comparison")?;
    let d = hl.d.as_ref().map(|d| d.statistic).unwrap_or(f64::NAN);
    ensure!(
        hl.p() < 0.001 && d >= 0.5,
        "High vs Low p {:e}, d {d:.3}",
        hl.p()
    );
    ensure!(
        (hl.gap() - 2.0).abs() <= 0.6,
        "recovered income gap {:.3}",
        hl.gap()
    );

    let mut clean = 0;
    for rep in 0..20u64 {
        let null = SyntheticBiasConfig {
            noise_sd: 0.4,
            seed: 500 + rep,
            ..Default::default()
        };
        let cfg = synthetic_config(
            vec![TaskKind::Generation],
            Dataset::Math50,
            null,
            9_000 + rep,
        );
        let data = run_to(&cfg, &tmp.path().join(format!("null{rep}")))?;
        let a = analyze(&data, &AnalysisOptions::default()).map_err(|e| e.to_string())?;
        let c = a
            .cell(TaskKind::Generation, Role::NotApplicable)
            .ok_or("no table")?;
        if c.significant_dimensions.is_empty() {
            clean += 1;
        }
    }
    ensure!(
        clean >= 19,
        "only {clean}/20 null replications free of significant dimensions"
    );
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s (limit 60s)");
    Ok(format!(
        "top MAB income {:.3}; High-Low gap {:.3}, p {:.1e}, d {d:.2}; null clean {clean}/20",
        top.max_mab,
        hl.gap(),
        hl.p()
    ))
}

fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["", "reports"] {
        let d = dir.join(sub);
        for e in fs::read_dir(&d).unwrap() {
            let e = e.unwrap();
            if e.file_type().unwrap().is_file() {
                out.insert(
                    format!("{sub}/{}", e.file_name().to_string_lossy()),
                    fs::read(e.path()).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bias = SyntheticBiasConfig {
        noise_sd: 0.5,
        seed: 3,
        ..Default::default()
    }
    .with_delta("caste", "SC", -0.8);
    let mut cfg = synthetic_config(
        vec![TaskKind::Ranking, TaskKind::Generation],
        Dataset::Math50,
        bias,
        77,
    );
    cfg.parallelism = 8;
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        let data = run_to(&cfg, &dir)?;
        let analysis = analyze(&data, &AnalysisOptions::default()).map_err(|e| e.to_string())?;
        write_reports(&analysis, &dir.join("reports")).map_err(|e| e.to_string())?;
        files.push(dir_files(&dir));
    }
    ensure!(
        files[0].len() >= 10,
        "only {} files written",
        files[0].len()
    );
    ensure!(files[0].keys().eq(files[1].keys()), "file sets differ");
    for (name, bytes) in &files[0] {
        ensure!(files[1][name] == *bytes, "{name} differs between runs");
    }
    let trials = files[0]["/trials.jsonl"]
        .iter()
        .filter(|b| **b == b'\n')
        .count();
    ensure!(trials == 3_500, "{trials} trial records");
    Ok(format!(
        "{} files byte-identical, {trials} trials",
        files[0].len()
    ))
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.strip_suffix('\n').unwrap_or(&text).to_string()
}

fn prompt_fidelity() -> Outcome {
    let set = ExplanationSet::new(
        "set",
        ["one", "two", "three", "four", "five"]
            .iter()
            .map(|w| format!("Level {w} explanation."))
            .collect(),
    )
    .unwrap();
    let examples = [
        (
            Context::Indian,
            vec!["General", "IIT", "Metro", "English", "CBSE", "Male", "Low"],
            "General from IIT from Metro area English-medium educated CBSE board Male low-income",
        ),
        (
            Context::American,
            vec!["Black", "Ivy League", "Rural", "Public", "Male", "Low"],
            "Black from Ivy League from Rural area Public school Male low-income",
        ),
    ];
    let mut checked = 0;
    for (ctx, values, expect) in examples {
        let catalog = DimensionCatalog::default_for(ctx);
        let profile = catalog.profile(&values).map_err(|e| e.to_string())?;
        let characteristic = format_characteristic(&catalog, &profile);
        ensure!(
            characteristic == expect,
            "characteristic {characteristic:?}"
        );
        let forge = PromptForge::new(TemplateSet::builtin(), catalog);
        let name = ctx.as_str();
        let rendered = [
            (
                "generation_problem",
                forge.render_generation(
                    &profile,
                    &TaskSpec::generation(ctx, "Algebra", ProblemMode::WithProblem),
                    Some("Solve x+1=2"),
                ),
            ),
            (
                "generation_no_problem",
                forge.render_generation(
                    &profile,
                    &TaskSpec::generation(ctx, "Algebra", ProblemMode::NoProblem),
                    None,
                ),
            ),
            (
                "ranking_teacher",
                forge.render_ranking(
                    &profile,
                    &TaskSpec::ranking(ctx, Role::Teacher, "Algebra"),
                    &set,
                    Permutation::identity(),
                    0,
                ),
            ),
            (
                "ranking_student",
                forge.render_ranking(
                    &profile,
                    &TaskSpec::ranking(ctx, Role::Student, "Algebra"),
                    &set,
                    Permutation::identity(),
                    0,
                ),
            ),
        ];
        for (kind, prompt) in rendered {
            let prompt = prompt.map_err(|e| e.to_string())?;
            ensure!(
                prompt.system == golden("system.txt"),
                "{name} {kind}: system prompt differs"
            );
            let want = golden(&format!("{name}_{kind}.txt"));
            ensure!(
                prompt.user == want,
                "{name} {kind} differs from golden:\n{}",
                prompt.user
            );
            if kind.starts_with("ranking") {
                ensure!(
                    prompt.user.contains("ONLY the number"),
                    "missing instruction"
                );
                let numbered = prompt
                    .user
                    .lines()
                    .filter(|l| l.len() > 2 && l.as_bytes()[0].is_ascii_digit() && &l[1..3] == ". ")
                    .count();
                ensure!(numbered == 5, "{numbered} numbered explanations");
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} templates match golden files; both example characteristics exact"
    ))
}

const SUBJECTS: [&str; 10] = [
    "The student",
    "A careful reader",
    "Our teacher",
    "The small group",
    "Every learner",
    "My friend",
    "The tutor",
    "This class",
    "A new pupil",
    "The whole team",
];
const PREDICATES: [&str; 5] = [
    "solved the problem quickly",
    "checked each answer twice",
    "drew a neat picture of the shape",
    "wrote the steps on the board",
    "found the missing number",
];

fn readability_correctness() -> Outcome {
    let tol = 1e-3;
    let s = readability::analyze_text("The cat sat.").map_err(|e| e.to_string())?;
    let want = TextStats {
        sentences: 1,
        words: 3,
        syllables: 3,
        letters: 9,
        complex_words: 0,
    };
    ensure!(s == want, "stats {s:?}");
    let fk = readability::flesch_kincaid(&s).unwrap();
    let fog = readability::gunning_fog(&s).unwrap();
    let cli = readability::coleman_liau(&s).unwrap();
    let tgl = readability::total_grade_level("The cat sat.").unwrap();
    ensure!((fk - -2.62).abs() <= tol, "FK {fk}");
    ensure!((fog - 1.2).abs() <= tol, "Fog {fog}");
    ensure!((cli - -8.027).abs() <= tol, "CLI {cli}");
    ensure!((tgl - -3.149).abs() <= tol, "TGL {tgl}");
    let ten = TextStats {
        sentences: 2,
        words: 20,
        syllables: 30,
        letters: 100,
        complex_words: 20,
    };
    let fk10 = readability::flesch_kincaid(&ten).unwrap();
    let fog10 = readability::gunning_fog(&ten).unwrap();
    ensure!((fk10 - 6.01).abs() <= tol, "FK(10, 1.5) {fk10}");
    ensure!((fog10 - 44.0).abs() <= tol, "Fog all-complex {fog10}");
    let cl = TextStats {
        sentences: 5,
        words: 100,
        syllables: 150,
        letters: 500,
        complex_words: 0,
    };
    let cli2 = readability::coleman_liau(&cl).unwrap();
    ensure!((cli2 - 12.12).abs() <= tol, "CLI(500, 5) {cli2}");
    let hi = readability::analyze_text("Hi. Hi. Hi.").unwrap();
    ensure!(hi.sentences == 3 && hi.words == 3, "Hi. Hi. Hi. -> {hi:?}");
    ensure!(
        readability::analyze_text("").is_err(),
        "empty text accepted"
    );
    let degenerate = TextStats::default();
    ensure!(
        readability::flesch_kincaid(&degenerate).is_err(),
        "degenerate FK accepted"
    );

    let corpus: Vec<String> = SUBJECTS
        .iter()
        .flat_map(|s| PREDICATES.iter().map(move |p| format!("{s} {p}")))
        .collect();
    ensure!(corpus.len() == 50, "corpus size {}", corpus.len());
    for (i, base) in corpus.iter().enumerate() {
        let sentence = format!("{base}.");
        let longer = format!("{base} considerably.");
        let fog_a =
            readability::gunning_fog(&readability::analyze_text(&sentence).unwrap()).unwrap();
        let fog_b = readability::gunning_fog(&readability::analyze_text(&longer).unwrap()).unwrap();
        ensure!(
            fog_b >= fog_a,
            "polysyllable append lowered Fog for {sentence:?}"
        );
        let next = &corpus[(i + 1) % corpus.len()];
        let split = format!("{base}. {next}.");
        let merged = format!("{base} and {}.", next.to_lowercase());
        let split_words = format!("{base} and. {}.", next.to_lowercase());
        let fk_split =
            readability::flesch_kincaid(&readability::analyze_text(&split_words).unwrap()).unwrap();
        let fk_merged =
            readability::flesch_kincaid(&readability::analyze_text(&merged).unwrap()).unwrap();
        ensure!(
            fk_merged >= fk_split,
            "sentence merge lowered FK for {split:?}"
        );
    }
    Ok(format!(
        "hand values within {tol}; 50-case monotonicity probes hold"
    ))
}

fn decode_neutrality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let wrappers = ["{}", " {}.", "Answer: {}", "{}\n", "The best choice is {}!"];
    for i in 0..10_000 {
        let level: u8 = rng.random_range(1..=5);
        let mut entries = [1u8, 2, 3, 4, 5];
        entries.shuffle(&mut rng);
        let perm = Permutation::new(entries).unwrap();
        let raw = wrappers[i % wrappers.len()].replace("{}", &perm.position_of(level).to_string());
        let got = decode_ranking_response(&raw, &perm).map_err(|e| e.to_string())?;
        ensure!(
            got == level,
            "level {level} via {raw:?} under {entries:?} decoded as {got}"
        );
    }
    for _ in 0..200 {
        let n = rng.random_range(1..=50);
        let truth: Vec<u8> = (0..n).map(|_| rng.random_range(1..=5)).collect();
        let decoded: Vec<u8> = truth
            .iter()
            .map(|l| {
                let mut e = [1u8, 2, 3, 4, 5];
                e.shuffle(&mut rng);
                let perm = Permutation::new(e).unwrap();
                decode_ranking_response(&perm.position_of(*l).to_string(), &perm).unwrap()
            })
            .collect();
        ensure!(
            mcv(&decoded).unwrap() == mcv(&truth).unwrap(),
            "MCV changed under permutation"
        );
    }
    Ok("10000 pairs recovered exactly; MCV permutation-invariant over 200 lists".into())
}

fn sampling() -> Outcome {
    let catalog = DimensionCatalog::indian();
    let space = enumerate_profiles(&catalog).len();
    ensure!(space == 2_592, "indian space {space}");
    let plan = SamplePlan::from_catalog(&catalog, 100, 42);
    let sample = stratified_sample(&catalog, &plan).map_err(|e| e.to_string())?;
    ensure!(sample.len() == 100, "{} profiles", sample.len());
    let mut worst = 0i64;
    for (dim, targets) in &plan.marginal_targets {
        let counts = marginal_counts(&catalog, &sample, dim).unwrap();
        for (value, want) in targets {
            worst = worst.max((counts[value] as i64 - *want as i64).abs());
        }
    }
    ensure!(worst <= 2, "marginal deviation {worst}");
    let uncovered = uncovered_values(&catalog, &sample);
    ensure!(uncovered.is_empty(), "uncovered {uncovered:?}");
    let mut ids: Vec<&str> = sample.iter().map(|p| p.id()).collect();
    ids.dedup();
    ensure!(ids.len() == 100, "duplicate profiles");
    Ok(format!(
        "space 2592; max marginal deviation {worst}; full coverage"
    ))
}
