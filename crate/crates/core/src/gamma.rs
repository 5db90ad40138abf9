//! Gamma-ratio weights a_j = Gamma(j) / Gamma(j + 2p - 1) and the exact
//! martingale transform a_m S(m) they induce, with quadratic-variation
//! diagnostics.
//!
//! Direct Gamma evaluation overflows near j = 170, so single weights are
//! computed from the log-ratio. The log-ratio itself is computed as a
//! Stirling-series *difference* (never as a difference of two large
//! log-gamma values), which keeps full relative precision even at j = 1e6
//! where log Gamma(j) is of order 1e7. Tables use the exact ratio
//! recurrence a_{j+1} = a_j * j / (j + 2p - 1).

use crate::real::Real;
use crate::walk::{CheckpointSeries, MemoryParam, Regime};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GammaError {
    #[error("weight index must be >= 1 (Gamma pole handling is out of contract)")]
    IndexZero,
    #[error("martingale transform requires consecutive integer times")]
    NonUnitTimes,
    #[error("martingale transform requires a start index >= 1")]
    StartAtZero,
    #[error("normalization requires p < 3/4; the critical regime scales by sqrt(log n)")]
    NotDiffusive,
}

/// Stirling correction series c(x): lgamma(x) = (x-1/2)ln x - x
/// + ln(2 pi)/2 + c(x). Accurate below 1e-13 for x >= 15.
fn stirling_correction<F: Real>(x: F) -> F {
    let x2 = x * x;
    let inv = x.recip();
    let mut term = inv / F::of(12.0);
    let mut acc = term;
    term = term / x2;
    acc = acc - term * F::of(12.0 / 360.0);
    term = term / x2;
    acc = acc + term * F::of(12.0 / 1260.0);
    term = term / x2;
    acc = acc - term * F::of(12.0 / 1680.0);
    term = term / x2;
    acc = acc + term * F::of(12.0 / 1188.0);
    acc
}

/// lgamma(j) - lgamma(j + q) for j >= 1 and |q| <= 1, to near machine
/// precision.
fn log_gamma_ratio<F: Real>(j: u64, q: F) -> F {
    const LIFT: u64 = 16;
    if j < LIFT {
        let mut acc = log_gamma_ratio(j + LIFT, q);
        for i in 0..LIFT {
            let base = F::of_u64(j + i);
            // ln((j+q+i)/(j+i)); the ratio is 0 exactly at the q = -1,
            // j = 1 Gamma pole, where the weight itself is 0.
            acc = acc + ((base + q) / base).ln();
        }
        acc
    } else {
        let x = F::of_u64(j);
        -q * x.ln() - (x + q - F::half()) * (q / x).ln_1p() + q + stirling_correction(x)
            - stirling_correction(x + q)
    }
}

/// The weight a_j = Gamma(j) / Gamma(j + 2p - 1).
pub fn weight<F: Real>(p: MemoryParam, j: u64) -> Result<F, GammaError> {
    if j == 0 {
        return Err(GammaError::IndexZero);
    }
    Ok(log_gamma_ratio(j, F::of(p.two_p_minus_one())).exp())
}

/// Weights a_j for j in `first..=last`, built by the exact ratio recurrence.
#[derive(Debug, Clone)]
pub struct GammaWeightTable<F> {
    pub p: MemoryParam,
    first: u64,
    values: Vec<F>,
}

impl<F: Real> GammaWeightTable<F> {
    pub fn new(p: MemoryParam, first: u64, last: u64) -> Result<Self, GammaError> {
        if first == 0 {
            return Err(GammaError::IndexZero);
        }
        let q = F::of(p.two_p_minus_one());
        let mut values = Vec::with_capacity((last - first + 1) as usize);
        let mut a: F = weight(p, first)?;
        values.push(a);
        for j in first..last {
            let denom = F::of_u64(j) + q;
            if a.is_zero() || denom.is_zero() {
                // Gamma pole at (p = 0, j = 1); restart from the log form.
                a = weight(p, j + 1)?;
            } else {
                a = a * F::of_u64(j) / denom;
            }
            values.push(a);
        }
        Ok(Self { p, first, values })
    }

    pub fn get(&self, j: u64) -> F {
        self.values[(j - self.first) as usize]
    }

    pub fn first_index(&self) -> u64 {
        self.first
    }

    pub fn last_index(&self) -> u64 {
        self.first + self.values.len() as u64 - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MartingaleKind {
    Diffusive,
    Critical,
}

/// Streaming martingale state: tracks a_m, M(m) and the running quadratic
/// variation without storing the trajectory.
///
/// The diffusive transform subtracts the baseline a_k S(k); the critical
/// one is offset by one step and subtracts a_{k+1} S(k+1), so its first
/// recorded increment occurs at m = k + 2.
#[derive(Debug, Clone)]
pub struct MartingaleTracker<F> {
    q: F,
    kind: MartingaleKind,
    m: u64,
    a: F,
    total: F,
    baseline: Option<F>,
    m_value: F,
    qv: F,
    last_increment: F,
}

impl<F: Real> MartingaleTracker<F> {
    /// Start at index k >= 1 with position s_k.
    pub fn new(p: MemoryParam, k: u64, s_k: i64, kind: MartingaleKind) -> Result<Self, GammaError> {
        if k == 0 {
            return Err(GammaError::StartAtZero);
        }
        let a: F = weight(p, k)?;
        let total = a * F::of(s_k as f64);
        let baseline = match kind {
            MartingaleKind::Diffusive => Some(total),
            MartingaleKind::Critical => None,
        };
        Ok(Self {
            q: F::of(p.two_p_minus_one()),
            kind,
            m: k,
            a,
            total,
            baseline,
            m_value: F::zero(),
            qv: F::zero(),
            last_increment: F::zero(),
        })
    }

    /// Advance to index m+1 with the walk now at position `s`.
    #[inline]
    pub fn push(&mut self, s: i64) {
        let denom = F::of_u64(self.m) + self.q;
        self.a = self.a * F::of_u64(self.m) / denom;
        self.m += 1;
        let total = self.a * F::of(s as f64);
        match self.baseline {
            None => {
                // Critical transform: this point is the baseline itself.
                self.baseline = Some(total);
            }
            Some(base) => {
                let increment = total - self.total;
                self.last_increment = increment;
                debug_assert!(
                    increment.abs() <= F::two() * self.a * F::of(1.0 + 1e-12),
                    "martingale increment bound violated at m = {}",
                    self.m
                );
                self.qv = self.qv + increment * increment;
                self.m_value = total - base;
            }
        }
        self.total = total;
    }

    pub fn index(&self) -> u64 {
        self.m
    }

    pub fn kind(&self) -> MartingaleKind {
        self.kind
    }

    pub fn weight_value(&self) -> F {
        self.a
    }

    pub fn value(&self) -> F {
        self.m_value
    }

    pub fn quadratic_variation(&self) -> F {
        self.qv
    }

    pub fn last_increment(&self) -> F {
        self.last_increment
    }
}

/// Martingale transform of a unit-resolution trajectory, with running
/// quadratic variation.
#[derive(Debug, Clone)]
pub struct MartingaleSeries<F> {
    pub times: Vec<u64>,
    pub m_values: Vec<F>,
    pub qv_values: Vec<F>,
    pub kind: MartingaleKind,
}

/// Build M(m) = a_m S(m) - a_k S(k) (diffusive) or its one-step-offset
/// critical variant from a trajectory recorded at consecutive integer
/// times. The kind follows the regime of p.
pub fn martingale_transform<F: Real>(
    trajectory: &CheckpointSeries,
    p: MemoryParam,
) -> Result<MartingaleSeries<F>, GammaError> {
    let times = &trajectory.times;
    if times.is_empty() || times[0] == 0 {
        return Err(GammaError::StartAtZero);
    }
    if times.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(GammaError::NonUnitTimes);
    }
    let kind = match p.regime() {
        Regime::Critical => MartingaleKind::Critical,
        _ => MartingaleKind::Diffusive,
    };
    let mut tracker = MartingaleTracker::new(p, times[0], trajectory.positions[0], kind)?;
    let mut m_values = Vec::with_capacity(times.len());
    let mut qv_values = Vec::with_capacity(times.len());
    m_values.push(F::zero());
    qv_values.push(F::zero());
    for &s in &trajectory.positions[1..] {
        tracker.push(s);
        m_values.push(tracker.value());
        qv_values.push(tracker.quadratic_variation());
    }
    Ok(MartingaleSeries {
        times: times.clone(),
        m_values,
        qv_values,
        kind,
    })
}

/// Running sum of squared increments of the series.
pub fn quadratic_variation<F: Real>(series: &MartingaleSeries<F>) -> Vec<F> {
    let mut out = Vec::with_capacity(series.m_values.len());
    let mut acc = F::zero();
    let mut prev = F::zero();
    for (i, &m) in series.m_values.iter().enumerate() {
        if i > 0 {
            let d = m - prev;
            acc = acc + d * d;
        }
        prev = m;
        out.push(acc);
    }
    out
}

/// M divided by sqrt(n^{3-4p} / (3-4p)); diffusive regime only.
pub fn normalized_martingale<F: Real>(
    series: &MartingaleSeries<F>,
    p: MemoryParam,
    n: u64,
) -> Result<Vec<F>, GammaError> {
    if p.get() >= MemoryParam::CRITICAL {
        return Err(GammaError::NotDiffusive);
    }
    let expo = F::of(3.0 - 4.0 * p.get());
    let scale = (F::of_u64(n).powf(expo) / expo).sqrt();
    Ok(series.m_values.iter().map(|&m| m / scale).collect())
}
