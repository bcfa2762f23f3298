//! Fixed-effects two-way ANOVA, one-sample t-test, and the special
//! functions behind their p-values.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const LANCZOS_G: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Natural log of the gamma function, Lanczos approximation (g=7, n=9).
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma domain: x > 0, got {x}");
    if x < 0.5 {
        // reflection keeps the approximation in its accurate range
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_G[0];
    for (i, &c) in LANCZOS_G.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
pub fn inc_beta(x: f64, a: f64, b: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "inc_beta domain: x in [0,1], got {x}");
    assert!(a > 0.0 && b > 0.0, "inc_beta domain: a,b > 0, got a={a} b={b}");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    // the continued fraction converges fast only below the symmetry point
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    const MAX_ITER: usize = 500;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
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
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return h;
        }
    }
    h
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn t_cdf(x: f64, df: f64) -> f64 {
    assert!(df >= 1.0, "t_cdf domain: df >= 1, got {df}");
    let tail = inc_beta(df / (df + x * x), 0.5 * df, 0.5);
    if x <= 0.0 {
        0.5 * tail
    } else {
        1.0 - 0.5 * tail
    }
}

/// Two-sided tail probability of Student's t; exact complement, no 1-x cancellation.
pub fn t_sf_two_sided(t: f64, df: f64) -> f64 {
    assert!(df >= 1.0, "t_sf domain: df >= 1, got {df}");
    inc_beta(df / (df + t * t), 0.5 * df, 0.5)
}

/// CDF of the F distribution with (d1, d2) degrees of freedom.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    assert!(x >= 0.0, "f_cdf domain: x >= 0, got {x}");
    assert!(d1 >= 1.0 && d2 >= 1.0, "f_cdf domain: d1,d2 >= 1");
    if x == 0.0 {
        return 0.0;
    }
    inc_beta(d1 * x / (d1 * x + d2), 0.5 * d1, 0.5 * d2)
}

/// Upper tail of the F distribution; exact complement form.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    assert!(x >= 0.0, "f_sf domain: x >= 0, got {x}");
    assert!(d1 >= 1.0 && d2 >= 1.0, "f_sf domain: d1,d2 >= 1");
    inc_beta(d2 / (d2 + d1 * x), 0.5 * d2, 0.5 * d1)
}

/// Inverse of `t_cdf` in its first argument, by bisection; the CDF is
/// strictly increasing, so the bracket [-1e9, 1e9] pins any p away
/// from 0 and 1 to ~1e-12 absolute in x.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "t_quantile domain: 0 < p < 1, got {p}");
    assert!(df >= 1.0, "t_quantile domain: df >= 1, got {df}");
    let (mut lo, mut hi) = (-1e9f64, 1e9f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Mean with a two-sided 95% t-interval: (mean, lo, hi). Intended for
/// summarizing a quantity across independent replications.
pub fn mean_t_interval95(xs: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("t-interval needs n >= 2, got {n}")));
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    let half = t_quantile(0.975, nf - 1.0) * (ss / (nf - 1.0)).sqrt() / nf.sqrt();
    Ok((mean, mean - half, mean + half))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    pub p_two_sided: f64,
    pub mean: f64,
    pub stderr: f64,
}

pub fn t_test_one_sample(xs: &[f64], mu0: f64) -> Result<TTestResult> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("one-sample t-test needs n >= 2, got {n}")));
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    if ss == 0.0 {
        return Err(Error::Degenerate("one-sample t-test: zero variance".into()));
    }
    let stderr = (ss / (nf - 1.0)).sqrt() / nf.sqrt();
    let t = (mean - mu0) / stderr;
    let df = n - 1;
    Ok(TTestResult { t, df, p_two_sided: t_sf_two_sided(t, df as f64), mean, stderr })
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectRow {
    pub df1: usize,
    pub df2: usize,
    pub ss: f64,
    pub ms: f64,
    pub f: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnovaTable {
    pub model: EffectRow,
    pub edge_length: EffectRow,
    pub interaction: EffectRow,
    pub residual_df: usize,
    pub residual_ss: f64,
    pub residual_ms: f64,
    pub total_ss: f64,
    pub n_per_cell: usize,
    /// Residual variance is exactly zero; F and p are undefined.
    pub zero_residual: bool,
}

/// Balanced fixed-effects two-way ANOVA over rows of
/// (model level, edge-length level, observation). Unbalanced input is
/// rejected rather than silently reweighted.
pub fn anova_two_way<K1, K2>(rows: &[(K1, K2, f64)]) -> Result<AnovaTable>
where
    K1: Ord + Clone + std::fmt::Debug,
    K2: Ord + Clone + std::fmt::Debug,
{
    let mut cells: BTreeMap<(K1, K2), Vec<f64>> = BTreeMap::new();
    let mut levels_a: Vec<K1> = Vec::new();
    let mut levels_b: Vec<K2> = Vec::new();
    for (ka, kb, y) in rows {
        if !y.is_finite() {
            return Err(Error::NonFinite("anova observation".into()));
        }
        cells.entry((ka.clone(), kb.clone())).or_default().push(*y);
        if !levels_a.contains(ka) {
            levels_a.push(ka.clone());
        }
        if !levels_b.contains(kb) {
            levels_b.push(kb.clone());
        }
    }
    levels_a.sort();
    levels_b.sort();
    let a = levels_a.len();
    let b = levels_b.len();
    if a < 2 || b < 2 {
        return Err(Error::Degenerate(format!(
            "two-way ANOVA needs >= 2 levels per factor, got {a} x {b}"
        )));
    }
    let mut n_per_cell = 0usize;
    for ka in &levels_a {
        for kb in &levels_b {
            let n = cells.get(&(ka.clone(), kb.clone())).map_or(0, Vec::len);
            if n == 0 {
                return Err(Error::Unbalanced(format!("empty cell ({ka:?}, {kb:?})")));
            }
            if n_per_cell == 0 {
                n_per_cell = n;
            } else if n != n_per_cell {
                return Err(Error::Unbalanced(format!(
                    "cell ({ka:?}, {kb:?}) has {n} observations, expected {n_per_cell}"
                )));
            }
        }
    }
    let n = n_per_cell as f64;
    let big_n = (a * b * n_per_cell) as f64;
    let grand: f64 = rows.iter().map(|r| r.2).sum::<f64>() / big_n;

    let cell_mean = |ka: &K1, kb: &K2| -> f64 {
        let v = &cells[&(ka.clone(), kb.clone())];
        v.iter().sum::<f64>() / v.len() as f64
    };
    let row_means: Vec<f64> = levels_a
        .iter()
        .map(|ka| levels_b.iter().map(|kb| cell_mean(ka, kb)).sum::<f64>() / b as f64)
        .collect();
    let col_means: Vec<f64> = levels_b
        .iter()
        .map(|kb| levels_a.iter().map(|ka| cell_mean(ka, kb)).sum::<f64>() / a as f64)
        .collect();

    let ss_a = (b as f64) * n * row_means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>();
    let ss_b = (a as f64) * n * col_means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>();
    let mut ss_ab = 0.0;
    for (i, ka) in levels_a.iter().enumerate() {
        for (j, kb) in levels_b.iter().enumerate() {
            let dev = cell_mean(ka, kb) - row_means[i] - col_means[j] + grand;
            ss_ab += dev * dev;
        }
    }
    ss_ab *= n;
    let mut ss_e = 0.0;
    for ((ka, kb), v) in &cells {
        let m = cell_mean(ka, kb);
        ss_e += v.iter().map(|y| (y - m) * (y - m)).sum::<f64>();
    }
    let total_ss = ss_a + ss_b + ss_ab + ss_e;

    let df_a = a - 1;
    let df_b = b - 1;
    let df_ab = df_a * df_b;
    let df_e = a * b * (n_per_cell - 1);
    let zero_residual = df_e == 0 || ss_e == 0.0;
    let ms_e = if df_e > 0 { ss_e / df_e as f64 } else { 0.0 };

    let effect = |df1: usize, ss: f64| -> EffectRow {
        let ms = ss / df1 as f64;
        let (f, p) = if zero_residual {
            (None, None)
        } else {
            let f = ms / ms_e;
            (Some(f), Some(f_sf(f, df1 as f64, df_e as f64)))
        };
        EffectRow { df1, df2: df_e, ss, ms, f, p }
    };

    Ok(AnovaTable {
        model: effect(df_a, ss_a),
        edge_length: effect(df_b, ss_b),
        interaction: effect(df_ab, ss_ab),
        residual_df: df_e,
        residual_ss: ss_e,
        residual_ms: ms_e,
        total_ss,
        n_per_cell,
        zero_residual,
    })
}
