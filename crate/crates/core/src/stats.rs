//! Empirical-distribution machinery and censoring-aware goodness-of-fit
//! tests comparing Monte Carlo output to the closed-form limit laws.

use crate::laws::{nrbm_cov, LawError};
use crate::special::normal_cdf;
use crate::walk::MemoryParam;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empirical distribution requires at least one sample")]
    Empty,
    #[error("comparison window excludes every sample")]
    EmptyWindow,
    #[error("window bounds must satisfy 0 <= lo < hi < 1")]
    BadWindow,
    #[error("marginal report requires at least {required} replicas, got {got}")]
    TooFewReplicas { required: usize, got: usize },
    #[error("checkpoint time below the configured epsilon")]
    TimeTooSmall,
    #[error(transparent)]
    Law(#[from] LawError),
}

/// Sorted sample set with ECDF evaluation and censoring metadata.
///
/// Censored observations contribute to `n_total` but are not retained:
/// every stored sample lies at or below the censor point, and the ECDF at
/// the censor point equals (n_total - n_censored) / n_total.
#[derive(Debug, Clone)]
pub struct EmpiricalDistribution {
    sorted_samples: Vec<f64>,
    n_total: usize,
    n_censored: usize,
    censor_point: Option<f64>,
}

impl EmpiricalDistribution {
    /// Build from uncensored values plus a count of censored observations.
    pub fn new(
        mut samples: Vec<f64>,
        n_censored: usize,
        censor_point: Option<f64>,
    ) -> Result<Self, StatsError> {
        if samples.is_empty() && n_censored == 0 {
            return Err(StatsError::Empty);
        }
        samples.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        if let Some(c) = censor_point {
            debug_assert!(samples.last().is_none_or(|&x| x <= c));
        }
        Ok(Self {
            n_total: samples.len() + n_censored,
            sorted_samples: samples,
            n_censored,
            censor_point,
        })
    }

    /// ECDF of a fully observed sample.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self, StatsError> {
        Self::new(samples, 0, None)
    }

    /// Right-continuous step evaluation: #{samples <= x} / n_total.
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.sorted_samples.partition_point(|&s| s <= x);
        idx as f64 / self.n_total as f64
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted_samples
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_censored(&self) -> usize {
        self.n_censored
    }

    pub fn censor_point(&self) -> Option<f64> {
        self.censor_point
    }

    pub fn censoring_fraction(&self) -> f64 {
        self.n_censored as f64 / self.n_total as f64
    }
}

/// Build an empirical distribution, splitting off values at or above the
/// censor point when one is given.
pub fn ecdf(samples: &[f64], censor_point: Option<f64>) -> Result<EmpiricalDistribution, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    match censor_point {
        None => EmpiricalDistribution::from_samples(samples.to_vec()),
        Some(c) => {
            let (kept, censored): (Vec<f64>, Vec<f64>) = samples.iter().partition(|&&x| x < c);
            EmpiricalDistribution::new(kept, censored.len(), Some(c))
        }
    }
}

/// Result of a windowed one-sample Kolmogorov-Smirnov comparison.
#[derive(Debug, Clone, Serialize)]
pub struct GofReport {
    pub ks_distance: f64,
    /// Asymptotic Kolmogorov p-value; indicative only when windowed, since
    /// windowing breaks exact null calibration.
    pub ks_pvalue: f64,
    pub comparison_window: (f64, f64),
    pub n_effective: usize,
}

/// Asymptotic Kolmogorov survival function 2 sum (-1)^{j-1} exp(-2 j^2 x^2),
/// truncated when terms drop below 1e-10.
pub fn kolmogorov_pvalue(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..1000 {
        let term = (-2.0 * (j as f64).powi(2) * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-10 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Windowed KS distance between the ECDF and a reference CDF.
///
/// The window (q_lo, q_hi) is in quantile (CDF) units of the reference law.
/// When the sample is censored, the upper edge is additionally clipped to
/// the law's mass below the censor point, so the statistic never reads
/// samples above the cap.
pub fn ks_test<C: Fn(f64) -> f64>(
    emp: &EmpiricalDistribution,
    cdf: C,
    window: (f64, f64),
) -> Result<GofReport, StatsError> {
    let (q_lo, q_hi) = window;
    if !(0.0..1.0).contains(&q_lo) || q_hi <= q_lo || q_hi >= 1.0 {
        return Err(StatsError::BadWindow);
    }
    let q_hi_eff = match emp.censor_point() {
        Some(c) if emp.n_censored() > 0 => q_hi.min(cdf(c)),
        _ => q_hi,
    };
    let n = emp.n_total() as f64;
    let mut dist: f64 = 0.0;
    let mut n_effective = 0usize;
    for (i, &x) in emp.samples().iter().enumerate() {
        let f = cdf(x);
        if f < q_lo || f > q_hi_eff {
            continue;
        }
        n_effective += 1;
        let above = (i + 1) as f64 / n;
        let below = i as f64 / n;
        dist = dist.max((above - f).abs()).max((below - f).abs());
    }
    if n_effective == 0 {
        return Err(StatsError::EmptyWindow);
    }
    Ok(GofReport {
        ks_distance: dist,
        ks_pvalue: kolmogorov_pvalue((n_effective as f64).sqrt() * dist),
        comparison_window: (q_lo, q_hi_eff),
        n_effective,
    })
}

/// Per-checkpoint moment summary of rescaled positions against the
/// theoretical limit curve.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalStat {
    pub t: f64,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub theory_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginalReport {
    pub per_time: Vec<MarginalStat>,
    /// Empirical covariance of the centered rescaled positions.
    pub covariance: Vec<Vec<f64>>,
    pub theory_covariance: Vec<Vec<f64>>,
    pub replicas: usize,
}

/// Moments of S(floor(n t))/sqrt(n) (diffusive) or
/// S(floor(n^t))/sqrt(n^t log n) (critical) across replicas, next to the
/// theoretical limit mean and covariance.
///
/// `rescaled` holds one row per replica, one column per checkpoint time,
/// already divided by the appropriate scale.
pub fn marginal_report(
    rescaled: &[Vec<f64>],
    p: MemoryParam,
    times: &[f64],
    critical: bool,
    min_time: f64,
) -> Result<MarginalReport, StatsError> {
    let replicas = rescaled.len();
    if replicas < 1000 {
        return Err(StatsError::TooFewReplicas { required: 1000, got: replicas });
    }
    if times.iter().any(|&t| t < min_time) {
        return Err(StatsError::TimeTooSmall);
    }
    let dim = times.len();
    let mut means = vec![0.0; dim];
    for row in rescaled {
        for (m, &v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= replicas as f64;
    }
    let mut cov = vec![vec![0.0; dim]; dim];
    for row in rescaled {
        for i in 0..dim {
            for j in 0..dim {
                cov[i][j] += (row[i] - means[i]) * (row[j] - means[j]);
            }
        }
    }
    for r in &mut cov {
        for v in r.iter_mut() {
            *v /= (replicas - 1) as f64;
        }
    }
    let mut theory_cov = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..dim {
            theory_cov[i][j] = if critical {
                times[i].min(times[j])
            } else {
                nrbm_cov(p, times[i], times[j])?
            };
        }
    }
    let per_time = (0..dim)
        .map(|i| {
            let theory_mean = if critical {
                1.0
            } else {
                crate::laws::trained_limit_mean(p, times[i])?
            };
            Ok(MarginalStat {
                t: times[i],
                mean: means[i],
                mean_se: (cov[i][i] / replicas as f64).sqrt(),
                variance: cov[i][i],
                theory_mean,
            })
        })
        .collect::<Result<Vec<_>, StatsError>>()?;
    Ok(MarginalReport {
        per_time,
        covariance: cov,
        theory_covariance: theory_cov,
        replicas,
    })
}

/// Sample moments.
#[derive(Debug, Clone, Serialize)]
pub struct MomentTable {
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

pub fn moments(samples: &[f64]) -> Result<MomentTable, StatsError> {
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::Empty);
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &x in samples {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    Ok(MomentTable {
        mean,
        mean_se: (m2 / (nf - 1.0)).sqrt(),
        variance: m2 * nf / (nf - 1.0),
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalityReport {
    pub gof: GofReport,
    pub moments: MomentTable,
    pub theory_variance: f64,
}

/// KS of standardized samples against N(0, sigma^2) plus a moment table.
pub fn normality_report(
    standardized: &[f64],
    theory_variance: f64,
    window: (f64, f64),
) -> Result<NormalityReport, StatsError> {
    let emp = EmpiricalDistribution::from_samples(standardized.to_vec())?;
    let sd = theory_variance.sqrt();
    let gof = ks_test(&emp, |x| normal_cdf(x / sd), window)?;
    Ok(NormalityReport {
        gof,
        moments: moments(standardized)?,
        theory_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::{stable_half_cdf, stable_half_quantile};

    #[test]
    fn ecdf_basic() {
        let emp = ecdf(&[1.0, 2.0, 3.0], None).unwrap();
        assert!((emp.eval(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(emp.eval(0.5), 0.0);
        assert_eq!(emp.eval(3.0), 1.0);
        assert!(ecdf(&[], None).is_err());
    }

    #[test]
    fn ecdf_censoring() {
        let emp = ecdf(&[1.0, 2.0, 10.0, 10.0], Some(10.0)).unwrap();
        assert_eq!(emp.n_total(), 4);
        assert_eq!(emp.n_censored(), 2);
        // ECDF at the censor point equals the uncensored mass.
        assert!((emp.eval(10.0) - 0.5).abs() < 1e-15);
        assert!((emp.eval(1.5) - 0.25).abs() < 1e-15);
        // All samples censored: ECDF identically 0 below the cap.
        let all = ecdf(&[5.0, 5.0], Some(5.0)).unwrap();
        assert_eq!(all.eval(4.9), 0.0);
    }

    #[test]
    fn ecdf_uniform_dkw_scale() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(321);
        let n = 1_000_000;
        let samples: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let emp = ecdf(&samples, None).unwrap();
        let sup = samples
            .iter()
            .map(|&x| (emp.eval(x) - x).abs())
            .fold(0.0f64, f64::max);
        assert!(sup < 0.002, "sup |ECDF - id| = {sup}");
    }

    #[test]
    fn ks_plugin_consistency() {
        // Quantile-transformed uniform grid drawn from the law itself.
        for n in [1_000usize, 100_000] {
            let samples: Vec<f64> = (1..=n)
                .map(|i| stable_half_quantile((i as f64 - 0.5) / n as f64).unwrap())
                .collect();
            let emp = ecdf(&samples, None).unwrap();
            let rep = ks_test(&emp, stable_half_cdf, (0.01, 0.99)).unwrap();
            assert!(rep.ks_distance < 1.0 / n as f64, "{}", rep.ks_distance);
        }
    }

    #[test]
    fn ks_detects_shift() {
        let n = 100_000usize;
        let samples: Vec<f64> = (1..=n)
            .map(|i| stable_half_quantile((i as f64 - 0.5) / n as f64).unwrap() + 0.5)
            .collect();
        let emp = ecdf(&samples, None).unwrap();
        let rep = ks_test(&emp, stable_half_cdf, (0.001, 0.999)).unwrap();
        // Numeric oracle: sup_t |F(t) - F(t - 0.5)| over a fine grid.
        let oracle = (1..200_000)
            .map(|i| {
                let t = i as f64 * 1e-3;
                (stable_half_cdf(t) - stable_half_cdf(t - 0.5)).abs()
            })
            .fold(0.0f64, f64::max);
        assert!((rep.ks_distance - oracle).abs() < 0.01, "{} vs {oracle}", rep.ks_distance);
        assert!(rep.ks_pvalue < 1e-6);
    }

    #[test]
    fn ks_windowed_censored() {
        // Censor at the 0.9 quantile; compare on [0.05, 0.8].
        let n = 100_000usize;
        let cap = stable_half_quantile(0.9).unwrap();
        let samples: Vec<f64> = (1..=n)
            .map(|i| stable_half_quantile((i as f64 - 0.5) / n as f64).unwrap().min(cap))
            .collect();
        let emp = ecdf(&samples, Some(cap)).unwrap();
        assert!((emp.censoring_fraction() - 0.1).abs() < 0.01);
        let rep = ks_test(&emp, stable_half_cdf, (0.05, 0.8)).unwrap();
        assert!(rep.ks_distance < 0.01, "{}", rep.ks_distance);
        // The clipped upper edge never exceeds the censored mass.
        assert!(rep.comparison_window.1 <= 0.9 + 1e-12);
    }

    #[test]
    fn ks_window_validation() {
        let emp = ecdf(&[1.0, 2.0], None).unwrap();
        assert_eq!(ks_test(&emp, stable_half_cdf, (0.9, 0.1)).unwrap_err(), StatsError::BadWindow);
        // Window excluding all samples.
        let emp = ecdf(&[1e-6], None).unwrap();
        assert_eq!(
            ks_test(&emp, stable_half_cdf, (0.5, 0.9)).unwrap_err(),
            StatsError::EmptyWindow
        );
    }

    #[test]
    fn kolmogorov_critical_value() {
        // K(1.63) ~ 0.01: the classical 1% point.
        let p = kolmogorov_pvalue(1.63);
        assert!((p - 0.01).abs() < 0.002, "{p}");
        assert_eq!(kolmogorov_pvalue(0.0), 1.0);
    }

    #[test]
    fn normality_exact_quantiles() {
        let n = 50_000;
        let samples: Vec<f64> = (1..=n)
            .map(|i| {
                let u = (i as f64 - 0.5) / n as f64;
                -std::f64::consts::SQRT_2 * crate::special::erfc_inv(2.0 * u)
            })
            .collect();
        let rep = normality_report(&samples, 1.0, (0.01, 0.99)).unwrap();
        assert!(rep.gof.ks_distance < 1e-3);
        assert!(rep.moments.mean.abs() < 1e-3);
        assert!((rep.moments.variance - 1.0).abs() < 1e-2);
        assert!((rep.moments.kurtosis - 3.0).abs() < 0.1);
    }

    #[test]
    fn marginal_report_requires_replicas() {
        let rows = vec![vec![0.0, 0.0]; 10];
        let p = MemoryParam::new(0.6).unwrap();
        assert!(matches!(
            marginal_report(&rows, p, &[0.5, 1.0], false, 0.01).unwrap_err(),
            StatsError::TooFewReplicas { .. }
        ));
    }
}
