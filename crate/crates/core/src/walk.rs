//! Exact simulation of trained and untrained elephant random walks.
//!
//! The memory dynamics ("pick a uniform past step, repeat it with
//! probability p") reduce to a single Bernoulli draw per step: the next step
//! is +1 with probability 1/2 + (2p-1) S(n) / (2n). Simulation therefore
//! needs only the O(1) sufficient statistic (n, S(n), p) and one RNG draw
//! per step, never the step history. The reduction is validated against the
//! literal urn counts by an exhaustive enumeration test.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WalkError {
    #[error("memory parameter must lie in [0, 1], got {0}")]
    BadParameter(f64),
    #[error("training prefix steps must be +1 or -1")]
    BadPrefix,
    #[error("no history: the walk has not taken a step yet")]
    NoHistory,
    #[error("step counter overflow")]
    Overflow,
    #[error("cap {cap} must exceed training length {k}")]
    CapTooSmall { cap: u64, k: u64 },
    #[error("checkpoint times must be strictly increasing and start at or after k={k}")]
    BadCheckpointTimes { k: u64 },
}

/// Phase of the walk as a function of the memory parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Diffusive,
    Critical,
    Superdiffusive,
}

/// Memory parameter p in [0, 1]: probability of repeating the sampled past
/// step.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryParam(f64);

impl MemoryParam {
    pub const CRITICAL: f64 = 0.75;

    pub fn new(p: f64) -> Result<Self, WalkError> {
        if (0.0..=1.0).contains(&p) {
            Ok(Self(p))
        } else {
            Err(WalkError::BadParameter(p))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// The coefficient 2p - 1 appearing in the drift and the weight ratios.
    pub fn two_p_minus_one(self) -> f64 {
        2.0 * self.0 - 1.0
    }

    pub fn regime(self) -> Regime {
        if self.0 < Self::CRITICAL {
            Regime::Diffusive
        } else if self.0 == Self::CRITICAL {
            Regime::Critical
        } else {
            Regime::Superdiffusive
        }
    }
}

/// Fixed first steps of a trained walk. The canonical prefix is k copies
/// of +1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPrefix {
    steps: Vec<i8>,
}

impl TrainingPrefix {
    /// k copies of +1.
    pub fn canonical(k: u64) -> Self {
        Self {
            steps: vec![1; k as usize],
        }
    }

    pub fn from_steps(steps: Vec<i8>) -> Result<Self, WalkError> {
        if steps.iter().all(|&s| s == 1 || s == -1) {
            Ok(Self { steps })
        } else {
            Err(WalkError::BadPrefix)
        }
    }

    pub fn len(&self) -> u64 {
        self.steps.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn end_position(&self) -> i64 {
        self.steps.iter().map(|&s| s as i64).sum()
    }
}

/// O(1) walk state: step count, position and memory parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WalkState {
    pub n: u64,
    pub position: i64,
    pub param: MemoryParam,
}

impl WalkState {
    /// Untrained start (n = 0, S = 0).
    pub fn untrained(param: MemoryParam) -> Self {
        Self {
            n: 0,
            position: 0,
            param,
        }
    }

    /// State after a fixed training prefix: n = k, position = sum(prefix).
    /// An empty prefix yields the untrained start.
    pub fn init_trained(prefix: &TrainingPrefix, param: MemoryParam) -> Self {
        Self {
            n: prefix.len(),
            position: prefix.end_position(),
            param,
        }
    }

    /// Probability that the next step is +1: 1/2 + (2p-1) S(n) / (2n).
    ///
    /// Equals p N+/n + (1-p) N-/n where N+/N- count past up/down steps.
    pub fn step_prob_up(&self) -> Result<f64, WalkError> {
        if self.n == 0 {
            return Err(WalkError::NoHistory);
        }
        Ok(0.5 + self.param.two_p_minus_one() * self.position as f64 / (2.0 * self.n as f64))
    }

    /// Advance one step. At n = 0 the untrained first step is a fair coin
    /// (convention: the training-free walk is centered).
    ///
    /// Sampling uses the scaled comparison (u - 1/2) n < (p - 1/2) S, which
    /// avoids a division per step; it agrees with `step_prob_up` to within
    /// one ulp of the threshold.
    #[inline]
    pub fn advance<R: Rng>(&mut self, rng: &mut R) -> Result<(), WalkError> {
        let up = if self.n == 0 {
            rng.random::<f64>() < 0.5
        } else {
            step_up(rng, self.param.get() - 0.5, self.position as f64, self.n as f64)
        };
        self.n = self.n.checked_add(1).ok_or(WalkError::Overflow)?;
        self.position += if up { 1 } else { -1 };
        Ok(())
    }
}

/// One Bernoulli step of the memory dynamics at (n, s) with drift c = p - 1/2.
#[inline(always)]
fn step_up<R: Rng>(rng: &mut R, c: f64, s: f64, n: f64) -> bool {
    (rng.random::<f64>() - 0.5) * n < c * s
}

/// One observed first-return time, possibly censored at `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReturnTimeSample {
    pub value: u64,
    pub censored: bool,
    pub cap: u64,
    pub k: u64,
    pub p: MemoryParam,
}

/// First n >= k with S(n) = 0, censored at `cap`.
///
/// A prefix that already ends at position 0 returns value = k uncensored;
/// otherwise `cap` must exceed k (the Stable(1/2) limit has infinite mean,
/// so uncapped runs are not offered).
pub fn first_return_time<R: Rng>(
    prefix: &TrainingPrefix,
    param: MemoryParam,
    cap: u64,
    rng: &mut R,
) -> Result<ReturnTimeSample, WalkError> {
    let k = prefix.len();
    let start = prefix.end_position();
    if start == 0 {
        return Ok(ReturnTimeSample {
            value: k,
            censored: false,
            cap,
            k,
            p: param,
        });
    }
    if cap <= k {
        return Err(WalkError::CapTooSmall { cap, k });
    }
    let c = param.get() - 0.5;
    let mut n = k;
    let mut nf = k as f64;
    let mut s = start;
    while n < cap {
        let up = step_up(rng, c, s as f64, nf);
        n += 1;
        nf += 1.0;
        s += if up { 1 } else { -1 };
        if s == 0 {
            return Ok(ReturnTimeSample {
                value: n,
                censored: false,
                cap,
                k,
                p: param,
            });
        }
    }
    Ok(ReturnTimeSample {
        value: cap,
        censored: true,
        cap,
        k,
        p: param,
    })
}

/// Positions of one trajectory recorded at requested step counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSeries {
    pub times: Vec<u64>,
    pub positions: Vec<i64>,
    pub k: u64,
    pub p: MemoryParam,
}

/// Simulate one trajectory, recording S exactly at the requested step
/// counts. Times must be strictly increasing with the first >= k.
pub fn simulate_checkpoints<R: Rng>(
    prefix: &TrainingPrefix,
    param: MemoryParam,
    times: &[u64],
    rng: &mut R,
) -> Result<CheckpointSeries, WalkError> {
    let k = prefix.len();
    let sorted = times.windows(2).all(|w| w[0] < w[1]);
    if !sorted || times.first().is_some_and(|&t| t < k) {
        return Err(WalkError::BadCheckpointTimes { k });
    }
    let mut state = WalkState::init_trained(prefix, param);
    let c = param.get() - 0.5;
    let mut positions = Vec::with_capacity(times.len());
    for &target in times {
        // First step of an untrained walk is a fair coin.
        if state.n == 0 && target > 0 {
            state.advance(rng)?;
        }
        let mut n = state.n;
        let mut nf = n as f64;
        let mut s = state.position;
        while n < target {
            let up = step_up(rng, c, s as f64, nf);
            n += 1;
            nf += 1.0;
            s += if up { 1 } else { -1 };
        }
        state.n = n;
        state.position = s;
        positions.push(s);
    }
    Ok(CheckpointSeries {
        times: times.to_vec(),
        positions,
        k,
        p: param,
    })
}

/// First time in [k, horizon] at which S is <= 0, if any.
pub fn first_nonpositive_time<R: Rng>(
    prefix: &TrainingPrefix,
    param: MemoryParam,
    horizon: u64,
    rng: &mut R,
) -> Result<Option<u64>, WalkError> {
    let k = prefix.len();
    if horizon < k {
        return Err(WalkError::CapTooSmall { cap: horizon, k });
    }
    if prefix.end_position() <= 0 {
        return Ok(Some(k));
    }
    let c = param.get() - 0.5;
    let mut n = k;
    let mut nf = k as f64;
    let mut s = prefix.end_position();
    while n < horizon {
        let up = step_up(rng, c, s as f64, nf);
        n += 1;
        nf += 1.0;
        s += if up { 1 } else { -1 };
        if s <= 0 {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// True iff the walk dips to or below the origin by `horizon`.
pub fn early_return_indicator<R: Rng>(
    prefix: &TrainingPrefix,
    param: MemoryParam,
    horizon: u64,
    rng: &mut R,
) -> Result<bool, WalkError> {
    Ok(first_nonpositive_time(prefix, param, horizon, rng)?.is_some())
}
