//! Demographic dimension catalogs, the cartesian profile space, characteristic
//! strings and the stratified profile sample.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::stable_seed;

const INDIAN_CATALOG: &str = include_str!("../resources/catalogs/indian.toml");
const AMERICAN_CATALOG: &str = include_str!("../resources/catalogs/american.toml");

/// Upper bound on repair swaps during stratified sampling.
pub const MAX_REPAIR_SWAPS: usize = 10_000;
/// Largest accepted gap between a realized marginal count and its target.
pub const MARGINAL_TOLERANCE: usize = 2;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("catalog parse error: {0}")]
    Parse(String),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("value `{value}` is not in dimension `{dimension}`")]
    UnknownValue { dimension: String, value: String },
    #[error("profile has {got} values but the catalog has {want} dimensions")]
    Arity { got: usize, want: usize },
    #[error("infeasible sample plan: {0}")]
    InfeasiblePlan(String),
    #[error("malformed profile id `{0}`")]
    MalformedId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Educational system a catalog describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    Indian,
    American,
}

impl Context {
    pub fn as_str(self) -> &'static str {
        match self {
            Context::Indian => "indian",
            Context::American => "american",
        }
    }

    /// Short label used in report tables.
    pub fn short_label(self) -> &'static str {
        match self {
            Context::Indian => "IND",
            Context::American => "AME",
        }
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Context {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "indian" | "ind" => Ok(Context::Indian),
            "american" | "ame" => Ok(Context::American),
            other => Err(ProfileError::Parse(format!("unknown context `{other}`"))),
        }
    }
}

/// One demographic dimension with its ordered values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub values: Vec<String>,
    /// Default marginal targets for a stratified sample, aligned with `values`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<usize>>,
    /// Fragment template in the characteristic string. `{value}` is replaced
    /// by the value, `{value_lower}` by its lower-cased form.
    #[serde(default = "default_format")]
    pub format: String,
}

fn default_format() -> String {
    "{value}".to_string()
}

impl Dimension {
    pub fn new(name: impl Into<String>, values: &[&str]) -> Self {
        Dimension {
            name: name.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
            targets: None,
            format: default_format(),
        }
    }

    pub fn with_format(mut self, format: impl Into<String>) -> Self {
        self.format = format.into();
        self
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }

    fn render(&self, value: &str) -> String {
        self.format
            .replace("{value_lower}", &value.to_lowercase())
            .replace("{value}", value)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct CatalogFile {
    version: u32,
    context: Context,
    dimensions: Vec<Dimension>,
}

/// Ordered set of dimensions for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionCatalog {
    context: Context,
    version: u32,
    dimensions: Vec<Dimension>,
}

impl DimensionCatalog {
    pub fn new(context: Context, dimensions: Vec<Dimension>) -> Result<Self, ProfileError> {
        Self::with_version(context, 1, dimensions)
    }

    fn with_version(
        context: Context,
        version: u32,
        dimensions: Vec<Dimension>,
    ) -> Result<Self, ProfileError> {
        if dimensions.is_empty() {
            return Err(ProfileError::InvalidCatalog("no dimensions".into()));
        }
        let mut names = HashSet::new();
        for dim in &dimensions {
            if dim.name.is_empty() || !names.insert(dim.name.as_str()) {
                return Err(ProfileError::InvalidCatalog(format!(
                    "empty or duplicate dimension name `{}`",
                    dim.name
                )));
            }
            if dim.values.is_empty() {
                return Err(ProfileError::InvalidCatalog(format!(
                    "dimension `{}` has no values",
                    dim.name
                )));
            }
            let mut seen = HashSet::new();
            for v in &dim.values {
                if v.is_empty() || v.contains('|') || !seen.insert(v.as_str()) {
                    return Err(ProfileError::InvalidCatalog(format!(
                        "dimension `{}` has an empty, duplicate or `|`-bearing value `{v}`",
                        dim.name
                    )));
                }
            }
            if let Some(t) = &dim.targets {
                if t.len() != dim.values.len() {
                    return Err(ProfileError::InvalidCatalog(format!(
                        "dimension `{}` has {} targets for {} values",
                        dim.name,
                        t.len(),
                        dim.values.len()
                    )));
                }
            }
        }
        Ok(DimensionCatalog {
            context,
            version,
            dimensions,
        })
    }

    /// Shipped Indian catalog (7 dimensions, 2,592 profiles).
    pub fn indian() -> Self {
        Self::from_toml_str(INDIAN_CATALOG).expect("shipped Indian catalog is valid")
    }

    /// Shipped American catalog (6 dimensions, 2,025 profiles).
    pub fn american() -> Self {
        Self::from_toml_str(AMERICAN_CATALOG).expect("shipped American catalog is valid")
    }

    pub fn default_for(context: Context) -> Self {
        match context {
            Context::Indian => Self::indian(),
            Context::American => Self::american(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ProfileError> {
        let file: CatalogFile =
            toml::from_str(text).map_err(|e| ProfileError::Parse(e.to_string()))?;
        Self::with_version(file.context, file.version, file.dimensions)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        let file = CatalogFile {
            version: self.version,
            context: self.context,
            dimensions: self.dimensions.clone(),
        };
        toml::to_string(&file).expect("catalog serializes")
    }

    pub fn context(&self) -> Context {
        self.context
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dimensions
    }

    pub fn dimension(&self, name: &str) -> Result<&Dimension, ProfileError> {
        self.dimensions
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| ProfileError::UnknownDimension(name.to_string()))
    }

    pub fn dimension_index(&self, name: &str) -> Result<usize, ProfileError> {
        self.dimensions
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| ProfileError::UnknownDimension(name.to_string()))
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.dimensions.iter().map(|d| d.values.len()).collect()
    }

    /// Number of profiles in the full cartesian space.
    pub fn space_size(&self) -> usize {
        self.cardinalities().iter().product()
    }

    /// Builds a profile from one value per dimension, in dimension order.
    pub fn profile<S: AsRef<str>>(&self, values: &[S]) -> Result<Profile, ProfileError> {
        if values.len() != self.dimensions.len() {
            return Err(ProfileError::Arity {
                got: values.len(),
                want: self.dimensions.len(),
            });
        }
        let mut idx = Vec::with_capacity(values.len());
        for (dim, v) in self.dimensions.iter().zip(values) {
            let v = v.as_ref();
            idx.push(dim.index_of(v).ok_or_else(|| ProfileError::UnknownValue {
                dimension: dim.name.clone(),
                value: v.to_string(),
            })?);
        }
        Ok(self.profile_from_indices(&idx))
    }

    fn profile_from_indices(&self, idx: &[usize]) -> Profile {
        let assignment: Vec<(String, String)> = self
            .dimensions
            .iter()
            .zip(idx)
            .map(|(d, &i)| (d.name.clone(), d.values[i].clone()))
            .collect();
        Profile::from_parts(self.context, assignment)
    }

    /// Parses a canonical profile id (`context|v1|...|vk`).
    pub fn profile_from_id(&self, id: &str) -> Result<Profile, ProfileError> {
        let mut parts = id.split('|');
        let ctx: Context = parts
            .next()
            .ok_or_else(|| ProfileError::MalformedId(id.to_string()))?
            .parse()
            .map_err(|_| ProfileError::MalformedId(id.to_string()))?;
        if ctx != self.context {
            return Err(ProfileError::MalformedId(id.to_string()));
        }
        let values: Vec<&str> = parts.collect();
        self.profile(&values)
    }

    fn indices_of(&self, profile: &Profile) -> Vec<usize> {
        self.dimensions
            .iter()
            .zip(profile.values())
            .map(|(d, v)| d.index_of(v).expect("profile belongs to catalog"))
            .collect()
    }

    /// Default marginal targets, when every dimension carries them.
    pub fn default_targets(&self) -> Option<BTreeMap<String, BTreeMap<String, usize>>> {
        let mut out = BTreeMap::new();
        for dim in &self.dimensions {
            let t = dim.targets.as_ref()?;
            out.insert(
                dim.name.clone(),
                dim.values.iter().cloned().zip(t.iter().copied()).collect(),
            );
        }
        Some(out)
    }
}

/// One intersectional persona.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Profile {
    id: String,
    context: Context,
    assignment: Vec<(String, String)>,
}

impl Profile {
    fn from_parts(context: Context, assignment: Vec<(String, String)>) -> Self {
        let mut id = context.as_str().to_string();
        for (_, v) in &assignment {
            id.push('|');
            id.push_str(v);
        }
        Profile {
            id,
            context,
            assignment,
        }
    }

    /// Stable key `context|v1|...|vk` in dimension order.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn context(&self) -> Context {
        self.context
    }

    pub fn assignment(&self) -> &[(String, String)] {
        &self.assignment
    }

    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.assignment.iter().map(|(_, v)| v.as_str())
    }

    pub fn value_of(&self, dimension: &str) -> Option<&str> {
        self.assignment
            .iter()
            .find(|(d, _)| d == dimension)
            .map(|(_, v)| v.as_str())
    }

    /// Human-readable description, e.g. `caste=General, income=Low`.
    pub fn describe(&self) -> String {
        self.assignment
            .iter()
            .map(|(d, v)| format!("{d}={v}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Full cartesian product in lexicographic (dimension order, value order).
pub fn enumerate_profiles(catalog: &DimensionCatalog) -> Vec<Profile> {
    let cards = catalog.cardinalities();
    let total: usize = cards.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; cards.len()];
    for _ in 0..total {
        out.push(catalog.profile_from_indices(&idx));
        for pos in (0..cards.len()).rev() {
            idx[pos] += 1;
            if idx[pos] < cards[pos] {
                break;
            }
            idx[pos] = 0;
        }
    }
    out
}

/// The profile rendered as the `{characteristic}` prompt fragment.
pub fn format_characteristic(catalog: &DimensionCatalog, profile: &Profile) -> String {
    catalog
        .dimensions()
        .iter()
        .zip(profile.values())
        .map(|(d, v)| d.render(v))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Target marginals for a stratified sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub context: Context,
    pub n: usize,
    pub seed: u64,
    pub marginal_targets: BTreeMap<String, BTreeMap<String, usize>>,
}

impl SamplePlan {
    /// Plan using the catalog's shipped targets, rescaled when `n` differs
    /// from the sum the targets were written for.
    pub fn from_catalog(catalog: &DimensionCatalog, n: usize, seed: u64) -> Self {
        let marginal_targets = match catalog.default_targets() {
            Some(t) => t
                .into_iter()
                .map(|(dim, counts)| (dim, rescale(&counts, n)))
                .collect(),
            None => catalog
                .dimensions()
                .iter()
                .map(|d| {
                    let uniform: BTreeMap<String, usize> =
                        d.values.iter().map(|v| (v.clone(), 1)).collect();
                    (d.name.clone(), rescale(&uniform, n))
                })
                .collect(),
        };
        SamplePlan {
            context: catalog.context(),
            n,
            seed,
            marginal_targets,
        }
    }

    fn validate(&self, catalog: &DimensionCatalog) -> Result<(), ProfileError> {
        let infeasible = |m: String| Err(ProfileError::InfeasiblePlan(m));
        if self.context != catalog.context() {
            return infeasible("plan context differs from catalog".into());
        }
        if self.n == 0 {
            return infeasible("n must be positive".into());
        }
        if self.n > catalog.space_size() {
            return infeasible(format!(
                "n = {} exceeds the profile space ({})",
                self.n,
                catalog.space_size()
            ));
        }
        for dim in catalog.dimensions() {
            let Some(targets) = self.marginal_targets.get(&dim.name) else {
                return infeasible(format!("no targets for dimension `{}`", dim.name));
            };
            for (value, &count) in targets {
                if dim.index_of(value).is_none() {
                    return infeasible(format!("target for unknown value `{value}`"));
                }
                if count > self.n {
                    return infeasible(format!(
                        "target {count} for `{value}` exceeds n = {}",
                        self.n
                    ));
                }
            }
            for value in &dim.values {
                if targets.get(value).copied().unwrap_or(0) == 0 {
                    return infeasible(format!(
                        "value `{value}` of `{}` has no target (coverage requires >= 1)",
                        dim.name
                    ));
                }
            }
            let sum: usize = targets.values().sum();
            if sum != self.n {
                return infeasible(format!(
                    "targets for `{}` sum to {sum}, expected {}",
                    dim.name, self.n
                ));
            }
        }
        if self.marginal_targets.len() != catalog.dimensions().len() {
            return infeasible("targets reference dimensions outside the catalog".into());
        }
        Ok(())
    }
}

/// Largest-remainder rescaling of counts to sum to `n`, each at least 1.
fn rescale(counts: &BTreeMap<String, usize>, n: usize) -> BTreeMap<String, usize> {
    let total: usize = counts.values().sum();
    if total == n {
        return counts.clone();
    }
    let k = counts.len();
    let mut out: BTreeMap<String, usize> = counts.keys().map(|v| (v.clone(), 1)).collect();
    if n <= k {
        return out;
    }
    let spare = (n - k) as f64;
    let mut remainders = Vec::with_capacity(k);
    let mut assigned = k;
    for (v, &c) in counts {
        let exact = spare * c as f64 / total.max(1) as f64;
        let whole = exact.floor() as usize;
        *out.get_mut(v).unwrap() += whole;
        assigned += whole;
        remainders.push((exact - whole as f64, v.clone()));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    for (_, v) in remainders.into_iter().take(n - assigned) {
        *out.get_mut(&v).unwrap() += 1;
    }
    out
}

struct Sampler {
    cards: Vec<usize>,
    targets: Vec<Vec<i64>>,
    counts: Vec<Vec<i64>>,
}

impl Sampler {
    fn add(&mut self, p: &[usize], sign: i64) {
        for (d, &v) in p.iter().enumerate() {
            self.counts[d][v] += sign;
        }
    }

    fn need(&self, d: usize, v: usize) -> i64 {
        self.targets[d][v] - self.counts[d][v]
    }

    fn max_deviation(&self) -> i64 {
        let mut worst = 0;
        for d in 0..self.cards.len() {
            for v in 0..self.cards[d] {
                worst = worst.max(self.need(d, v).abs());
            }
        }
        worst
    }
}

fn draw_by_need(s: &Sampler, d: usize, rng: &mut ChaCha8Rng) -> usize {
    let total: i64 = (0..s.cards[d]).map(|v| s.need(d, v).max(0)).sum();
    if total == 0 {
        return rng.random_range(0..s.cards[d]);
    }
    let mut pick = rng.random_range(0..total);
    for v in 0..s.cards[d] {
        let w = s.need(d, v).max(0);
        if pick < w {
            return v;
        }
        pick -= w;
    }
    unreachable!("pick is below the total need")
}

/// Draws `plan.n` distinct profiles whose marginals track the plan targets.
///
/// Values are handled in sorted order internally, so the selected id set does
/// not depend on how a catalog lists its values. The result is sorted by id.
pub fn stratified_sample(
    catalog: &DimensionCatalog,
    plan: &SamplePlan,
) -> Result<Vec<Profile>, ProfileError> {
    plan.validate(catalog)?;
    if plan.n == catalog.space_size() {
        let mut all = enumerate_profiles(catalog);
        all.sort_by(|a, b| a.id.cmp(&b.id));
        return Ok(all);
    }

    // Canonical value order: sorted strings.
    let sorted_values: Vec<Vec<&str>> = catalog
        .dimensions()
        .iter()
        .map(|d| {
            let mut v: Vec<&str> = d.values.iter().map(String::as_str).collect();
            v.sort_unstable();
            v
        })
        .collect();
    let cards: Vec<usize> = sorted_values.iter().map(Vec::len).collect();
    let targets: Vec<Vec<i64>> = catalog
        .dimensions()
        .iter()
        .zip(&sorted_values)
        .map(|(d, vals)| {
            vals.iter()
                .map(|v| plan.marginal_targets[&d.name][*v] as i64)
                .collect()
        })
        .collect();
    let mut s = Sampler {
        counts: cards.iter().map(|&c| vec![0; c]).collect(),
        cards,
        targets,
    };
    let dims = s.cards.len();
    let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[
        &plan.seed.to_le_bytes(),
        catalog.context().as_str().as_bytes(),
    ]));

    // Greedy fill: each slot draws, per dimension, a value with remaining need
    // (weighted by that need), visiting dimensions from the rarest target first.
    let mut order: Vec<usize> = (0..dims).collect();
    order.sort_by_key(|&d| (s.targets[d].iter().min().copied().unwrap_or(0), d));
    let mut chosen: Vec<Vec<usize>> = Vec::with_capacity(plan.n);
    let mut taken: HashSet<Vec<usize>> = HashSet::with_capacity(plan.n);
    while chosen.len() < plan.n {
        let mut candidate = vec![0usize; dims];
        for &d in &order {
            candidate[d] = draw_by_need(&s, d, &mut rng);
        }
        let mut attempts = 0;
        while taken.contains(&candidate) {
            let d = rng.random_range(0..dims);
            candidate[d] = rng.random_range(0..s.cards[d]);
            attempts += 1;
            if attempts > 10_000 {
                return Err(ProfileError::InfeasiblePlan(
                    "could not draw a distinct profile".into(),
                ));
            }
        }
        s.add(&candidate, 1);
        taken.insert(candidate.clone());
        chosen.push(candidate);
    }

    // Repair: move a profile from an over-represented value to an
    // under-represented one in the same dimension, one dimension at a time.
    let mut swaps = 0;
    while swaps < MAX_REPAIR_SWAPS && s.max_deviation() > 0 {
        let mut improved = false;
        let mut dim_order: Vec<usize> = (0..dims).collect();
        dim_order.shuffle(&mut rng);
        'dims: for &d in &dim_order {
            let over: Vec<usize> = (0..s.cards[d]).filter(|&v| s.need(d, v) < 0).collect();
            let under: Vec<usize> = (0..s.cards[d]).filter(|&v| s.need(d, v) > 0).collect();
            if over.is_empty() || under.is_empty() {
                continue;
            }
            let mut slots: Vec<usize> = (0..chosen.len())
                .filter(|&i| over.contains(&chosen[i][d]))
                .collect();
            slots.shuffle(&mut rng);
            for &i in &slots {
                for &to in &under {
                    let mut next = chosen[i].clone();
                    next[d] = to;
                    if taken.contains(&next) {
                        continue;
                    }
                    taken.remove(&chosen[i]);
                    s.add(&chosen[i], -1);
                    s.add(&next, 1);
                    taken.insert(next.clone());
                    chosen[i] = next;
                    swaps += 1;
                    improved = true;
                    break 'dims;
                }
            }
        }
        if !improved {
            break;
        }
    }

    if s.max_deviation() > MARGINAL_TOLERANCE as i64 {
        return Err(ProfileError::InfeasiblePlan(format!(
            "marginal deviation {} exceeds tolerance {MARGINAL_TOLERANCE}",
            s.max_deviation()
        )));
    }
    if s.counts.iter().flatten().any(|&c| c == 0) {
        return Err(ProfileError::InfeasiblePlan(
            "sample does not cover every dimension value".into(),
        ));
    }

    let mut out: Vec<Profile> = chosen
        .iter()
        .map(|p| {
            let values: Vec<&str> = p
                .iter()
                .enumerate()
                .map(|(d, &v)| sorted_values[d][v])
                .collect();
            catalog
                .profile(&values)
                .expect("sampled values come from catalog")
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Count of each value of `dimension` across `profiles` (zero for unseen values).
pub fn marginal_counts(
    catalog: &DimensionCatalog,
    profiles: &[Profile],
    dimension: &str,
) -> Result<BTreeMap<String, usize>, ProfileError> {
    let d = catalog.dimension_index(dimension)?;
    let dim = &catalog.dimensions()[d];
    let mut counts: BTreeMap<String, usize> = dim.values.iter().map(|v| (v.clone(), 0)).collect();
    for p in profiles {
        let v = &p.assignment[d].1;
        *counts
            .get_mut(v)
            .ok_or_else(|| ProfileError::UnknownValue {
                dimension: dimension.to_string(),
                value: v.clone(),
            })? += 1;
    }
    Ok(counts)
}

/// Dimension values that never appear in `profiles`.
pub fn uncovered_values(catalog: &DimensionCatalog, profiles: &[Profile]) -> Vec<(String, String)> {
    let mut seen: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); catalog.dimensions().len()];
    for p in profiles {
        for (d, v) in catalog.indices_of(p).into_iter().enumerate() {
            seen[d].insert(v);
        }
    }
    let mut out = Vec::new();
    for (d, dim) in catalog.dimensions().iter().enumerate() {
        for (i, v) in dim.values.iter().enumerate() {
            if !seen[d].contains(&i) {
                out.push((dim.name.clone(), v.clone()));
            }
        }
    }
    out
}

/// Writes profiles as a tab-separated table: one column per dimension plus `id`.
pub fn write_profiles_tsv<W: std::io::Write>(
    catalog: &DimensionCatalog,
    profiles: &[Profile],
    out: W,
) -> Result<(), ProfileError> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
    let mut header: Vec<&str> = catalog
        .dimensions()
        .iter()
        .map(|d| d.name.as_str())
        .collect();
    header.push("id");
    let io = |e: csv::Error| ProfileError::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(io)?;
    for p in profiles {
        let mut row: Vec<&str> = p.values().collect();
        row.push(p.id());
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_profiles_tsv`].
pub fn read_profiles_tsv<R: std::io::Read>(
    catalog: &DimensionCatalog,
    input: R,
) -> Result<Vec<Profile>, ProfileError> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| ProfileError::Parse(e.to_string()))?;
        let id = rec
            .get(catalog.dimensions().len())
            .ok_or_else(|| ProfileError::Parse("missing id column".into()))?;
        out.push(catalog.profile_from_id(id)?);
    }
    Ok(out)
}
