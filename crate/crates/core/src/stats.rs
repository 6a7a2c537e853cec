//! Statistical battery: Welch and pooled t-tests, Cohen's d, Cohen's kappa
//! and KL divergence, with their interpretation bands.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Additive smoothing applied to the reference distribution of a KL divergence.
pub const KL_EPSILON: f64 = 1e-6;
/// KL above this is labelled "very different".
pub const KL_VERY_DIFFERENT: f64 = 1.5;
/// KL above this is labelled "extreme".
pub const KL_EXTREME: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {need} observations per sample, got {n1} and {n2}")]
    InsufficientSample { n1: usize, n2: usize, need: usize },
    #[error("both samples have zero variance but different means")]
    DegenerateVariance,
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("distributions have different supports ({0} vs {1} bins)")]
    SupportMismatch(usize, usize),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    TTest,
    CohensD,
    Kappa,
    Kl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effect: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed_agreement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_agreement: Option<f64>,
    pub n1: usize,
    pub n2: usize,
    pub label: String,
}

impl TestResult {
    fn new(kind: TestKind, statistic: f64, n1: usize, n2: usize, label: String) -> Self {
        TestResult {
            kind,
            statistic,
            p_value: None,
            effect: None,
            df: None,
            observed_agreement: None,
            expected_agreement: None,
            n1,
            n2,
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceModel {
    /// Unequal variances with Welch-Satterthwaite degrees of freedom.
    #[default]
    Welch,
    Pooled,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Significance stars: `*` p < 0.05, `**` p < 0.01, `***` p < 0.001.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

pub fn bonferroni(p: f64, comparisons: usize) -> f64 {
    (p * comparisons.max(1) as f64).min(1.0)
}

pub fn t_test(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    t_test_with(a, b, VarianceModel::Welch)
}

pub fn t_test_with(a: &[f64], b: &[f64], model: VarianceModel) -> Result<TestResult, StatsError> {
    let (n1, n2) = (a.len(), b.len());
    if n1 < 2 || n2 < 2 {
        return Err(StatsError::InsufficientSample { n1, n2, need: 2 });
    }
    let (m1, m2) = (mean(a), mean(b));
    let (v1, v2) = (sample_variance(a), sample_variance(b));
    let (se, df) = match model {
        VarianceModel::Welch => {
            let (s1, s2) = (v1 / n1 as f64, v2 / n2 as f64);
            let df =
                (s1 + s2).powi(2) / (s1 * s1 / (n1 as f64 - 1.0) + s2 * s2 / (n2 as f64 - 1.0));
            ((s1 + s2).sqrt(), df)
        }
        VarianceModel::Pooled => {
            let df = (n1 + n2 - 2) as f64;
            let sp2 = ((n1 as f64 - 1.0) * v1 + (n2 as f64 - 1.0) * v2) / df;
            ((sp2 * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt(), df)
        }
    };
    let (t, p, df) = if se == 0.0 {
        if m1 != m2 {
            return Err(StatsError::DegenerateVariance);
        }
        (0.0, 1.0, (n1 + n2 - 2) as f64)
    } else {
        let t = (m1 - m2) / se;
        (t, student_t_two_sided_p(t, df), df)
    };
    let mut r = TestResult::new(
        TestKind::TTest,
        t,
        n1,
        n2,
        significance_stars(p).to_string(),
    );
    r.p_value = Some(p);
    r.df = Some(df);
    Ok(r)
}

/// Band for |d|: Negligible < 0.2 <= Small < 0.5 <= Medium < 0.8 <= Large.
pub fn effect_band(d: f64) -> &'static str {
    let d = d.abs();
    if d < 0.2 {
        "Negligible"
    } else if d < 0.5 {
        "Small"
    } else if d < 0.8 {
        "Medium"
    } else {
        "Large"
    }
}

pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    let (n1, n2) = (a.len(), b.len());
    if n1 < 2 || n2 < 2 {
        return Err(StatsError::InsufficientSample { n1, n2, need: 2 });
    }
    let diff = mean(a) - mean(b);
    let pooled = (((n1 as f64 - 1.0) * sample_variance(a)
        + (n2 as f64 - 1.0) * sample_variance(b))
        / (n1 + n2 - 2) as f64)
        .sqrt();
    let d = if pooled == 0.0 {
        if diff != 0.0 {
            return Err(StatsError::DegenerateVariance);
        }
        0.0
    } else {
        diff / pooled
    };
    let mut r = TestResult::new(TestKind::CohensD, d, n1, n2, effect_band(d).to_string());
    r.effect = Some(d);
    Ok(r)
}

/// Agreement band for a kappa value.
pub fn kappa_band(kappa: f64) -> &'static str {
    if kappa < 0.0 {
        "Poor"
    } else if kappa <= 0.2 {
        "Slight"
    } else if kappa <= 0.4 {
        "Fair"
    } else if kappa <= 0.6 {
        "Moderate"
    } else if kappa <= 0.8 {
        "Substantial"
    } else {
        "Almost perfect"
    }
}

/// Kappa from observed and chance agreement. When chance agreement is 1 the
/// value is 1 for perfect observed agreement and 0 otherwise.
pub fn kappa_from_agreement(observed: f64, expected: f64) -> f64 {
    if expected >= 1.0 {
        if observed >= 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (observed - expected) / (1.0 - expected)
    }
}

pub fn cohens_kappa<T: Ord>(labels_a: &[T], labels_b: &[T]) -> Result<TestResult, StatsError> {
    let n = labels_a.len();
    if n != labels_b.len() {
        return Err(StatsError::LengthMismatch(n, labels_b.len()));
    }
    if n == 0 {
        return Err(StatsError::InsufficientSample {
            n1: 0,
            n2: 0,
            need: 1,
        });
    }
    let mut marg: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    let mut agree = 0usize;
    for (x, y) in labels_a.iter().zip(labels_b) {
        marg.entry(x).or_default().0 += 1;
        marg.entry(y).or_default().1 += 1;
        if x == y {
            agree += 1;
        }
    }
    let nf = n as f64;
    let po = agree as f64 / nf;
    let pe: f64 = marg
        .values()
        .map(|&(ca, cb)| (ca as f64 / nf) * (cb as f64 / nf))
        .sum();
    let kappa = kappa_from_agreement(po, pe);
    let mut r = TestResult::new(TestKind::Kappa, kappa, n, n, kappa_band(kappa).to_string());
    r.observed_agreement = Some(po);
    r.expected_agreement = Some(pe);
    Ok(r)
}

pub fn kl_band(kl: f64) -> &'static str {
    if kl > KL_EXTREME {
        "extreme"
    } else if kl > KL_VERY_DIFFERENT {
        "very different"
    } else if kl > 0.5 {
        "different"
    } else {
        "similar"
    }
}

fn normalize(x: &[f64], which: &str) -> Result<Vec<f64>, StatsError> {
    if x.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(StatsError::InvalidDistribution(format!(
            "{which} has negative or non-finite mass"
        )));
    }
    let total: f64 = x.iter().sum();
    if total <= 0.0 {
        return Err(StatsError::InvalidDistribution(format!(
            "{which} has no mass"
        )));
    }
    Ok(x.iter().map(|v| v / total).collect())
}

/// KL(p || q) in nats. Both inputs are normalized; `q` is smoothed by
/// [`KL_EPSILON`] per bin and renormalized. Zero-mass bins of `p` add nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<TestResult, StatsError> {
    if p.len() != q.len() || p.is_empty() {
        return Err(StatsError::SupportMismatch(p.len(), q.len()));
    }
    let p = normalize(p, "p")?;
    let q = normalize(q, "q")?;
    let z = 1.0 + KL_EPSILON * q.len() as f64;
    let kl: f64 = p
        .iter()
        .zip(&q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / ((qi + KL_EPSILON) / z)).ln())
        .sum::<f64>()
        .max(0.0);
    Ok(TestResult::new(
        TestKind::Kl,
        kl,
        p.len(),
        q.len(),
        kl_band(kl).to_string(),
    ))
}

/// Counts of ranking choices over the five levels.
pub fn level_histogram(levels: &[u8]) -> Vec<f64> {
    let mut h = vec![0.0; 5];
    for &l in levels {
        if (1..=5).contains(&l) {
            h[l as usize - 1] += 1.0;
        }
    }
    h
}

/// Unit-width histograms of two samples over their shared support
/// `[floor(min), ceil(max)]`.
pub fn unit_bins(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let all = a.iter().chain(b).copied();
    let lo = all.clone().fold(f64::INFINITY, f64::min).floor();
    let hi = all.fold(f64::NEG_INFINITY, f64::max).ceil();
    if !lo.is_finite() || !hi.is_finite() {
        return (Vec::new(), Vec::new());
    }
    let bins = ((hi - lo) as usize).max(1);
    let fill = |x: &[f64]| {
        let mut h = vec![0.0; bins];
        for &v in x {
            let i = ((v - lo).floor() as usize).min(bins - 1);
            h[i] += 1.0;
        }
        h
    };
    (fill(a), fill(b))
}

/// Unit grade-level bin of a continuous score, for agreement statistics.
pub fn unit_label(x: f64) -> i64 {
    x.floor() as i64
}

/// APA-style summary, e.g. `t=10.00, p=0.000, d=0.53***`.
pub fn apa_summary(t: f64, p: f64, d: f64) -> String {
    format!("t={t:.2}, p={p:.3}, d={d:.2}{}", significance_stars(p))
}

/// Two-sided p-value of a Student t statistic.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7.
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// I_x(a, b) by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..20_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
