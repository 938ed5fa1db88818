//! Hypothesis tests. All tests are two-sided and judged at [`ALPHA`].

use serde::{Deserialize, Serialize};

use super::dist::{f_survival, t_two_sided_p};
use super::StatsError;

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Df {
    Scalar(f64),
    Pair(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// t or F.
    pub statistic: f64,
    pub df: Df,
    pub p_value: f64,
    pub significant: bool,
}

impl TestResult {
    fn new(statistic: f64, df: Df, p_value: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self { statistic, df, p_value, significant: p_value < ALPHA }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sum_sq_dev(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

/// One-sample t-test of `xs` against zero.
pub fn one_sample_t(xs: &[f64]) -> Result<TestResult, StatsError> {
    let n = xs.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, found: n });
    }
    let m = mean(xs);
    let var = sum_sq_dev(xs, m) / (n - 1) as f64;
    let df = (n - 1) as f64;
    if var == 0.0 {
        if m == 0.0 {
            // no difference at all
            return Ok(TestResult::new(0.0, Df::Scalar(df), 1.0));
        }
        return Err(StatsError::Degenerate("differences have zero variance".into()));
    }
    let t = m / (var / n as f64).sqrt();
    Ok(TestResult::new(t, Df::Scalar(df), t_two_sided_p(t, df)))
}

/// Paired-sample t-test on `a - b`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    one_sample_t(&d)
}

/// Two-sample Student t-test with pooled variance.
pub fn independent_t(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    let (na, nb) = (a.len(), b.len());
    if na < 2 || nb < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, found: na.min(nb) });
    }
    let (ma, mb) = (mean(a), mean(b));
    let df = (na + nb - 2) as f64;
    let pooled = (sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / df;
    let se = (pooled * (1.0 / na as f64 + 1.0 / nb as f64)).sqrt();
    if se == 0.0 {
        if ma == mb {
            return Ok(TestResult::new(0.0, Df::Scalar(df), 1.0));
        }
        return Err(StatsError::Degenerate("both samples have zero variance".into()));
    }
    let t = (ma - mb) / se;
    Ok(TestResult::new(t, Df::Scalar(df), t_two_sided_p(t, df)))
}

/// One-way between-groups ANOVA, df = (k − 1, N − k).
pub fn one_way_anova(groups: &[&[f64]]) -> Result<TestResult, StatsError> {
    let k = groups.len();
    if k < 2 {
        return Err(StatsError::TooFewGroups { needed: 2, found: k });
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(StatsError::TooFewSamples { needed: 2, found: g.len() });
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = mean(g);
        ssb += g.len() as f64 * (m - grand) * (m - grand);
        ssw += sum_sq_dev(g, m);
    }
    let (d1, d2) = ((k - 1) as f64, (n - k) as f64);
    let raw: f64 = groups.iter().flat_map(|g| g.iter()).map(|v| v * v).sum();
    Ok(f_result(ssb / d1, ssw / d2, ssb, d1, d2, raw))
}

/// Sums of squares below `1e-20 * Σv²` are rounding noise and count as zero.
fn f_result(ms_effect: f64, ms_error: f64, ss_effect: f64, d1: f64, d2: f64, raw_ss: f64) -> TestResult {
    let tiny = 1e-20 * raw_ss;
    if ss_effect <= tiny {
        return TestResult::new(0.0, Df::Pair(d1, d2), 1.0);
    }
    if ms_error * d2 <= tiny {
        return TestResult::new(f64::INFINITY, Df::Pair(d1, d2), 0.0);
    }
    let f = ms_effect / ms_error;
    TestResult::new(f, Df::Pair(d1, d2), f_survival(f, d1, d2))
}

/// One-way repeated-measures ANOVA on a subjects × conditions matrix.
/// The subject effect is removed from the error term; df = (k − 1, (k − 1)(n − 1)).
pub fn rm_anova(data: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    let n = data.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, found: n });
    }
    let k = data[0].len();
    if k < 2 {
        return Err(StatsError::TooFewGroups { needed: 2, found: k });
    }
    if data.iter().any(|row| row.len() != k) {
        return Err(StatsError::Ragged);
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::Degenerate("matrix contains missing or non-finite cells".into()));
    }
    let grand = data.iter().flatten().sum::<f64>() / (n * k) as f64;
    let col_means: Vec<f64> = (0..k).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut ss_cond = 0.0;
    for m in &col_means {
        ss_cond += n as f64 * (m - grand) * (m - grand);
    }
    // residual after removing row and column effects
    let mut ss_err = 0.0;
    for row in data {
        let rm = mean(row);
        for (j, v) in row.iter().enumerate() {
            let r = v - rm - col_means[j] + grand;
            ss_err += r * r;
        }
    }
    let d1 = (k - 1) as f64;
    let d2 = ((k - 1) * (n - 1)) as f64;
    let raw: f64 = data.iter().flatten().map(|v| v * v).sum();
    Ok(f_result(ss_cond / d1, ss_err / d2, ss_cond, d1, d2, raw))
}

/// Holm-Šidák step-down adjustment, returned in input order.
pub fn holm_sidak(p_values: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(&p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidP(p));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        let k = (m - rank) as i32;
        let adj = if k == 1 { p_values[i] } else { 1.0 - (1.0 - p_values[i]).powi(k) };
        running = running.max(adj).min(1.0);
        adjusted[i] = running;
    }
    Ok(adjusted)
}
