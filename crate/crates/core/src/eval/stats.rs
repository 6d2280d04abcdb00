//! Significance tests on per-case absolute errors.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Upper-tail p-value for H1: mean(a) > mean(b).
    pub p_one_tailed: f64,
    pub mean_diff: f64,
    pub n: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n − 1 denominator).
fn sample_var(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn upper_tail_t(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 0.0;
    }
    if t == f64::NEG_INFINITY {
        return 1.0;
    }
    StudentsT::new(0.0, 1.0, df).map_or(f64::NAN, |d| d.sf(t))
}

/// Ratio with the 0/0 case defined as 0.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            num.signum() * f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Paired t-test of H1: mean(a − b) > 0.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("paired t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let m = mean(&diffs);
    let se = (sample_var(&diffs, m) / n).sqrt();
    let t = ratio(m, se);
    let df = n - 1.0;
    Ok(TTest {
        t,
        df,
        p_one_tailed: upper_tail_t(t, df),
        mean_diff: m,
        n: diffs.len(),
    })
}

/// Welch's unequal-variance t-test of H1: mean(a) > mean(b).
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput("Welch t-test needs at least 2 values per sample".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_var(a, ma) / na, sample_var(b, mb) / nb);
    let t = ratio(ma - mb, (va + vb).sqrt());
    let df = if va + vb == 0.0 {
        na + nb - 2.0
    } else {
        (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0))
    };
    Ok(TTest {
        t,
        df,
        p_one_tailed: upper_tail_t(t, df),
        mean_diff: ma - mb,
        n: a.len() + b.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anova {
    pub f: f64,
    pub df_between: f64,
    pub df_within: f64,
    pub p: f64,
}

/// One-way ANOVA F-test across groups.
pub fn one_way_anova(groups: &[&[f64]]) -> Result<Anova> {
    if groups.len() < 2 {
        return Err(Error::InvalidInput("ANOVA needs at least 2 groups".into()));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidInput("ANOVA group is empty".into()));
    }
    let total: usize = groups.iter().map(|g| g.len()).sum();
    if total <= groups.len() {
        return Err(Error::InvalidInput("ANOVA needs more observations than groups".into()));
    }
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / total as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    let df_between = (groups.len() - 1) as f64;
    let df_within = (total - groups.len()) as f64;
    let f = ratio(ss_between / df_between, ss_within / df_within);
    let p = if f == f64::INFINITY {
        0.0
    } else {
        FisherSnedecor::new(df_between, df_within).map_or(f64::NAN, |d| d.sf(f))
    };
    Ok(Anova {
        f,
        df_between,
        df_within,
        p,
    })
}
