//! Deterministic, replica-parallel Monte Carlo experiment runner.
//!
//! Each replica draws from its own counter-derived RNG stream, so results
//! are a pure function of (config, seed) no matter how replicas are
//! scheduled. Aggregation is a commutative merge of partial summaries;
//! exactly one writer finalizes the sample CSV and summary JSON.

use crate::gamma::{self, MartingaleKind, MartingaleTracker};
use crate::laws::{self, LawError};
use crate::stats::{self, StatsError};
use crate::walk::{self, MemoryParam, Regime, TrainingPrefix, WalkError};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use thiserror::Error;

/// Cooperative abort flag; replicas stop between iterations once set and
/// the summary is finalized with `"aborted": true`.
pub static ABORT: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Gamma(#[from] gamma::GammaError),
    #[error("cannot merge partial summaries from different configs")]
    MergeMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExperimentKind {
    ReturnTimeDiffusive,
    ReturnTimeCritical,
    ScalingMarginals,
    ScalingMarginalsCritical,
    OvertrainedClt,
    OvertrainedCltCritical,
    MartingaleDiagnostics,
    EarlyReturnProbe,
    TrajectoryFigure,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        Ok(match s {
            "ReturnTimeDiffusive" => Self::ReturnTimeDiffusive,
            "ReturnTimeCritical" => Self::ReturnTimeCritical,
            "ScalingMarginals" => Self::ScalingMarginals,
            "ScalingMarginalsCritical" => Self::ScalingMarginalsCritical,
            "OvertrainedClt" => Self::OvertrainedClt,
            "OvertrainedCltCritical" => Self::OvertrainedCltCritical,
            "MartingaleDiagnostics" => Self::MartingaleDiagnostics,
            "EarlyReturnProbe" => Self::EarlyReturnProbe,
            "TrajectoryFigure" => Self::TrajectoryFigure,
            other => return Err(HarnessError::Config(format!("unknown kind `{other}`"))),
        })
    }

    fn requires_critical_p(self) -> bool {
        matches!(
            self,
            Self::ReturnTimeCritical | Self::ScalingMarginalsCritical | Self::OvertrainedCltCritical
        )
    }

    fn id(self) -> u64 {
        self as u64
    }
}

/// Training-length specification: a fixed k or a rule resolved from (p, n).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KRule {
    Fixed(u64),
    /// The critical training phase: (3-4p)^{-1/(4-4p)} n^{(3-4p)/(4-4p)}
    /// (diffusive) or ceil(log n) (critical regime).
    CriticalPhase,
    /// floor(n^exponent).
    PowerRule(f64),
    /// ceil(log n).
    LogRule,
}

impl KRule {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        if s == "critical-phase" {
            Ok(Self::CriticalPhase)
        } else if s == "log" {
            Ok(Self::LogRule)
        } else if let Some(e) = s.strip_prefix("power:") {
            let e: f64 = e
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad power rule `{s}`")))?;
            Ok(Self::PowerRule(e))
        } else {
            parse_count(s).map(Self::Fixed)
        }
    }

    pub fn resolve(self, p: MemoryParam, n: u64) -> Result<u64, HarnessError> {
        Ok(match self {
            Self::Fixed(k) => k,
            Self::CriticalPhase => match p.regime() {
                Regime::Diffusive => laws::critical_training_k::<f64>(p, n)?.floor() as u64,
                _ => (n as f64).ln().ceil() as u64,
            },
            Self::PowerRule(e) => (n as f64).powf(e).floor() as u64,
            Self::LogRule => (n as f64).ln().ceil() as u64,
        })
    }
}

impl Serialize for KRule {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Fixed(k) => ser.serialize_str(&k.to_string()),
            Self::CriticalPhase => ser.serialize_str("critical-phase"),
            Self::PowerRule(e) => ser.serialize_str(&format!("power:{e}")),
            Self::LogRule => ser.serialize_str("log"),
        }
    }
}

/// Fully deterministic description of one Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub p: f64,
    pub k: KRule,
    pub n: Option<u64>,
    pub replicas: u64,
    pub cap: u64,
    pub seed: u64,
    pub checkpoint_times: Vec<f64>,
    pub window: (f64, f64),
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            kind,
            p: 0.5,
            k: KRule::Fixed(1),
            n: None,
            replicas: 1,
            cap: 0,
            seed: 0,
            checkpoint_times: Vec::new(),
            window: (0.05, 0.80),
            output_dir: output_dir.into(),
        }
    }

    fn param(&self) -> Result<MemoryParam, HarnessError> {
        Ok(MemoryParam::new(self.p)?)
    }

    /// Kind-specific parameter completeness, checked before any simulation.
    pub fn validate(&self) -> Result<ResolvedConfig, HarnessError> {
        use ExperimentKind::*;
        let p = self.param()?;
        if self.replicas < 1 {
            return Err(HarnessError::Config("replicas must be >= 1".into()));
        }
        if self.kind.requires_critical_p() && p.regime() != Regime::Critical {
            return Err(HarnessError::Config(format!(
                "{:?} requires p = 3/4, got {}",
                self.kind, self.p
            )));
        }
        if matches!(
            self.kind,
            ReturnTimeDiffusive | ScalingMarginals | OvertrainedClt | MartingaleDiagnostics
                | EarlyReturnProbe
        ) && p.regime() != Regime::Diffusive
        {
            return Err(HarnessError::Config(format!(
                "{:?} requires the diffusive regime p < 3/4, got {}",
                self.kind, self.p
            )));
        }
        let needs_n = matches!(
            self.kind,
            ScalingMarginals | ScalingMarginalsCritical | OvertrainedClt | OvertrainedCltCritical
                | MartingaleDiagnostics | EarlyReturnProbe | TrajectoryFigure
        );
        let n = match (needs_n, self.n) {
            (true, Some(n)) if n >= 1 => n,
            (true, _) => {
                return Err(HarnessError::Config(format!("{:?} requires n >= 1", self.kind)))
            }
            (false, _) => self.n.unwrap_or(0),
        };
        let k = self.k.resolve(p, n.max(1))?;
        if matches!(self.kind, ReturnTimeDiffusive | ReturnTimeCritical) {
            if k == 0 {
                return Err(HarnessError::Config("return-time runs require k >= 1".into()));
            }
            if self.cap <= k {
                return Err(WalkError::CapTooSmall { cap: self.cap, k }.into());
            }
        }
        if matches!(self.kind, ScalingMarginals | ScalingMarginalsCritical | EarlyReturnProbe) {
            if self.checkpoint_times.is_empty() {
                return Err(HarnessError::Config(
                    "checkpoint_times must be nonempty for this kind".into(),
                ));
            }
            if self
                .checkpoint_times
                .iter()
                .any(|&t| !t.is_finite() || t <= 0.0)
            {
                return Err(HarnessError::Config("checkpoint_times must be positive".into()));
            }
        }
        let (lo, hi) = self.window;
        if !(0.0..1.0).contains(&lo) || hi <= lo || hi >= 1.0 {
            return Err(HarnessError::Config("window must satisfy 0 <= lo < hi < 1".into()));
        }
        Ok(ResolvedConfig { p, k, n })
    }

    /// Canonical key=value form, also used as the merge compatibility key.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind={:?}", self.kind);
        let _ = writeln!(s, "p={}", self.p);
        let kstr = match self.k {
            KRule::Fixed(k) => k.to_string(),
            KRule::CriticalPhase => "critical-phase".into(),
            KRule::PowerRule(e) => format!("power:{e}"),
            KRule::LogRule => "log".into(),
        };
        let _ = writeln!(s, "k={kstr}");
        if let Some(n) = self.n {
            let _ = writeln!(s, "n={n}");
        }
        let _ = writeln!(s, "replicas={}", self.replicas);
        let _ = writeln!(s, "cap={}", self.cap);
        let _ = writeln!(s, "seed={}", self.seed);
        if !self.checkpoint_times.is_empty() {
            let times: Vec<String> = self.checkpoint_times.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(s, "checkpoint_times={}", times.join(","));
        }
        let _ = writeln!(s, "window={},{}", self.window.0, self.window.1);
        s
    }
}

/// Resolved quantities derived from a validated config.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedConfig {
    pub p: MemoryParam,
    pub k: u64,
    pub n: u64,
}

/// Parse a count accepting scientific notation (floored).
pub fn parse_count(s: &str) -> Result<u64, HarnessError> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = s
        .parse()
        .map_err(|_| HarnessError::Config(format!("bad count `{s}`")))?;
    if !f.is_finite() || f < 0.0 || f > 1.8e19 {
        return Err(HarnessError::Config(format!("count `{s}` out of range")));
    }
    Ok(f.floor() as u64)
}

/// Flat key=value config file; unknown keys are an error.
pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut kind = None;
    let mut cfg = ExperimentConfig::new(ExperimentKind::ReturnTimeDiffusive, "out");
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("expected key=value, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "kind" => kind = Some(ExperimentKind::parse(value)?),
            "p" => {
                cfg.p = value
                    .parse()
                    .map_err(|_| HarnessError::Config(format!("bad p `{value}`")))?
            }
            "k" => cfg.k = KRule::parse(value)?,
            "n" => cfg.n = Some(parse_count(value)?),
            "replicas" => cfg.replicas = parse_count(value)?,
            "cap" => cfg.cap = parse_count(value)?,
            "seed" => cfg.seed = parse_count(value)?,
            "checkpoint_times" => {
                cfg.checkpoint_times = value
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|_| HarnessError::Config(format!("bad time `{t}`")))
                    })
                    .collect::<Result<_, _>>()?
            }
            "window" => {
                let (lo, hi) = value
                    .split_once(',')
                    .ok_or_else(|| HarnessError::Config("window needs `lo,hi`".into()))?;
                cfg.window = (
                    lo.trim()
                        .parse()
                        .map_err(|_| HarnessError::Config(format!("bad window `{value}`")))?,
                    hi.trim()
                        .parse()
                        .map_err(|_| HarnessError::Config(format!("bad window `{value}`")))?,
                );
            }
            "output_dir" => cfg.output_dir = PathBuf::from(value),
            other => return Err(HarnessError::Config(format!("unknown key `{other}`"))),
        }
    }
    cfg.kind = kind.ok_or_else(|| HarnessError::Config("missing `kind`".into()))?;
    Ok(cfg)
}

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Counter-based per-replica stream: a hash of the (seed, experiment,
/// replica) triple seeds an independent generator, so parallel scheduling
/// never affects the draws.
pub fn replica_rng(master_seed: u64, experiment_id: u64, replica_index: u64) -> Xoshiro256PlusPlus {
    let mut s = splitmix(master_seed.wrapping_add(0x9E3779B97F4A7C15));
    s = splitmix(s ^ experiment_id.wrapping_add(0xD1B54A32D192ED03));
    s = splitmix(s ^ replica_index.wrapping_add(0x8CB92BA72F3D8DD7));
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        s = s.wrapping_add(0x9E3779B97F4A7C15);
        chunk.copy_from_slice(&splitmix(s).to_le_bytes());
    }
    Xoshiro256PlusPlus::from_seed(seed)
}

/// One persisted observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRow {
    pub replica: u64,
    pub value: SampleValue,
    pub censored: bool,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleValue {
    Int(i64),
    Real(f64),
}

impl SampleValue {
    pub fn as_f64(self) -> f64 {
        match self {
            Self::Int(v) => v as f64,
            Self::Real(v) => v,
        }
    }

    fn csv(self) -> String {
        match self {
            Self::Int(v) => v.to_string(),
            // 17 significant digits round-trips f64 exactly.
            Self::Real(v) => format!("{v:.16e}"),
        }
    }
}

/// Result of one contiguous replica range.
#[derive(Debug, Clone)]
pub struct PartialSummary {
    pub config_key: String,
    pub replica_start: u64,
    pub replica_end: u64,
    pub rows: Vec<SampleRow>,
    pub n_censored: u64,
    pub total_steps: u64,
    pub aborted: bool,
}

/// Full experiment summary, serialized as the summary JSON.
#[derive(Debug, Serialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub results: Value,
    pub censoring_fraction: f64,
    pub seed: u64,
    pub version: String,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub aborted: bool,
    #[serde(skip)]
    pub rows: Vec<SampleRow>,
}

impl ExperimentSummary {
    pub fn over_censored(&self) -> bool {
        self.results
            .get("over_censored")
            .and_then(Value::as_bool)
            .unwrap_or(false)
    }
}

/// Execute replicas [start, end) of a config sequentially.
pub fn run_partial(
    config: &ExperimentConfig,
    start: u64,
    end: u64,
) -> Result<PartialSummary, HarnessError> {
    let resolved = config.validate()?;
    let mut rows = Vec::new();
    let mut n_censored = 0u64;
    let mut total_steps = 0u64;
    let mut aborted = false;
    for replica in start..end {
        if ABORT.load(Ordering::Relaxed) {
            aborted = true;
            break;
        }
        let mut rng = replica_rng(config.seed, config.kind.id(), replica);
        let replica_rows = run_replica(config, resolved, replica, &mut rng)?;
        for row in &replica_rows {
            if row.censored {
                n_censored += 1;
            }
            total_steps += row.steps;
        }
        rows.extend(replica_rows);
    }
    Ok(PartialSummary {
        config_key: config.canonical_text(),
        replica_start: start,
        replica_end: end,
        rows,
        n_censored,
        total_steps,
        aborted,
    })
}

fn run_replica(
    config: &ExperimentConfig,
    r: ResolvedConfig,
    replica: u64,
    rng: &mut Xoshiro256PlusPlus,
) -> Result<Vec<SampleRow>, HarnessError> {
    use ExperimentKind::*;
    let prefix = TrainingPrefix::canonical(r.k);
    Ok(match config.kind {
        ReturnTimeDiffusive | ReturnTimeCritical => {
            let sample = walk::first_return_time(&prefix, r.p, config.cap, rng)?;
            vec![SampleRow {
                replica,
                value: SampleValue::Int(sample.value as i64),
                censored: sample.censored,
                steps: sample.value - r.k,
            }]
        }
        ScalingMarginals => {
            let steps: Vec<u64> = checkpoint_steps_diffusive(&config.checkpoint_times, r.n);
            let series = walk::simulate_checkpoints(&prefix, r.p, &steps, rng)?;
            series
                .times
                .iter()
                .zip(&series.positions)
                .map(|(&t, &s)| SampleRow {
                    replica,
                    value: SampleValue::Int(s),
                    censored: false,
                    steps: t,
                })
                .collect()
        }
        ScalingMarginalsCritical => {
            let steps: Vec<u64> = checkpoint_steps_critical(&config.checkpoint_times, r.n);
            let series = walk::simulate_checkpoints(&prefix, r.p, &steps, rng)?;
            series
                .times
                .iter()
                .zip(&series.positions)
                .map(|(&t, &s)| SampleRow {
                    replica,
                    value: SampleValue::Int(s),
                    censored: false,
                    steps: t,
                })
                .collect()
        }
        OvertrainedClt | OvertrainedCltCritical => {
            let series = walk::simulate_checkpoints(&prefix, r.p, &[r.n], rng)?;
            vec![SampleRow {
                replica,
                value: SampleValue::Int(series.positions[0]),
                censored: false,
                steps: r.n - r.k,
            }]
        }
        MartingaleDiagnostics => {
            // Stream the martingale transform over one trajectory of n
            // steps past training; record the qv ratio against the
            // n^(3-4p)/(3-4p) asymptote and the worst increment ratio.
            let mut state = walk::WalkState::init_trained(&prefix, r.p);
            let mut tracker =
                MartingaleTracker::<f64>::new(r.p, r.k, r.k as i64, MartingaleKind::Diffusive)?;
            let mut worst = 0.0f64;
            for _ in 0..r.n {
                state.advance(rng)?;
                tracker.push(state.position);
                let bound = 2.0 * tracker.weight_value();
                worst = worst.max(tracker.last_increment().abs() / bound);
            }
            let expo = 3.0 - 4.0 * r.p.get();
            let qv_ratio = tracker.quadratic_variation() * expo / (r.n as f64).powf(expo);
            vec![
                SampleRow {
                    replica,
                    value: SampleValue::Real(qv_ratio),
                    censored: false,
                    steps: r.n,
                },
                SampleRow {
                    replica,
                    value: SampleValue::Real(worst),
                    censored: false,
                    steps: r.n,
                },
            ]
        }
        EarlyReturnProbe => {
            let eps_max = config
                .checkpoint_times
                .iter()
                .cloned()
                .fold(0.0f64, f64::max);
            let horizon = r.k + (eps_max * r.n as f64).floor() as u64;
            let hit = walk::first_nonpositive_time(&prefix, r.p, horizon, rng)?;
            vec![SampleRow {
                replica,
                value: SampleValue::Int(hit.unwrap_or(horizon) as i64),
                censored: hit.is_none(),
                steps: hit.unwrap_or(horizon) - r.k,
            }]
        }
        TrajectoryFigure => {
            let steps: Vec<u64> = (r.k..=r.k + r.n).collect();
            let series = walk::simulate_checkpoints(&prefix, r.p, &steps, rng)?;
            series
                .times
                .iter()
                .zip(&series.positions)
                .map(|(&t, &s)| SampleRow {
                    replica,
                    value: SampleValue::Int(s),
                    censored: false,
                    steps: t,
                })
                .collect()
        }
    })
}

fn checkpoint_steps_diffusive(times: &[f64], n: u64) -> Vec<u64> {
    times.iter().map(|&t| (t * n as f64).floor() as u64).collect()
}

fn checkpoint_steps_critical(times: &[f64], n: u64) -> Vec<u64> {
    times.iter().map(|&t| (n as f64).powf(t).floor() as u64).collect()
}

/// Order-independent merge of partial summaries from disjoint replica
/// ranges of one config.
pub fn merge(partials: Vec<PartialSummary>) -> Result<PartialSummary, HarnessError> {
    let mut iter = partials.into_iter();
    let mut acc = iter.next().ok_or(HarnessError::MergeMismatch)?;
    for part in iter {
        if part.config_key != acc.config_key {
            return Err(HarnessError::MergeMismatch);
        }
        acc.replica_start = acc.replica_start.min(part.replica_start);
        acc.replica_end = acc.replica_end.max(part.replica_end);
        acc.rows.extend(part.rows);
        acc.n_censored += part.n_censored;
        acc.total_steps += part.total_steps;
        acc.aborted |= part.aborted;
    }
    // Sample-file concatenation followed by sort on (replica, time).
    acc.rows.sort_by_key(|row| (row.replica, row.steps));
    Ok(acc)
}

/// Estimated total step budget for return-time configs, from the limit
/// law's tail mass at the cap.
pub fn estimate_step_budget(config: &ExperimentConfig) -> Option<f64> {
    let r = config.validate().ok()?;
    let grid = 2000;
    match config.kind {
        ExperimentKind::ReturnTimeDiffusive => {
            // E[T ^ cap] = integral over survival of the rescaled limit.
            let gamma = (4.0 - 4.0 * r.p.get()) / (3.0 - 4.0 * r.p.get());
            let scale = (r.k as f64).powf(gamma);
            let cap_x = config.cap as f64 / scale;
            let dx = cap_x / grid as f64;
            let mut acc = 0.0;
            for i in 0..grid {
                let x = (i as f64 + 0.5) * dx;
                let surv = 1.0 - laws::diffusive_return_cdf(r.p, x).ok()?;
                acc += surv * dx;
            }
            Some(config.replicas as f64 * acc * scale)
        }
        ExperimentKind::ReturnTimeCritical => {
            // T ~ exp(k tau): integrate the survival over log time.
            let lo = (r.k as f64).ln();
            let hi = (config.cap as f64).ln();
            let du = (hi - lo) / grid as f64;
            let mut acc = 0.0;
            for i in 0..grid {
                let u = lo + (i as f64 + 0.5) * du;
                let surv = 1.0 - laws::critical_return_cdf(u / r.k as f64);
                acc += surv * u.exp() * du;
            }
            Some(config.replicas as f64 * acc)
        }
        _ => None,
    }
}

/// Run all replicas (rayon-parallel), merge, evaluate the kind-specific
/// statistics and persist samples.csv plus summary.json under the
/// config's output directory. Returns the summary.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    let resolved = config.validate()?;
    let start = std::time::Instant::now();

    if let Some(budget) = estimate_step_budget(config) {
        eprintln!("estimated step budget: {budget:.3e} steps");
    }
    if config.kind == ExperimentKind::ReturnTimeCritical && resolved.k >= 12 {
        eprintln!(
            "warning: critical return times grow exponentially in k; \
             expected median ~ exp(2.198 k) = {:.2e} steps per replica",
            (2.1981 * resolved.k as f64).exp()
        );
    }

    let workers = rayon::current_num_threads() as u64;
    let chunk = (config.replicas / (workers * 8)).max(1);
    let ranges: Vec<(u64, u64)> = (0..config.replicas)
        .step_by(chunk as usize)
        .map(|s| (s, (s + chunk).min(config.replicas)))
        .collect();
    let partials: Vec<PartialSummary> = ranges
        .into_par_iter()
        .map(|(s, e)| run_partial(config, s, e))
        .collect::<Result<_, _>>()?;
    let merged = merge(partials)?;
    finalize(config, resolved, merged, start.elapsed().as_secs_f64())
}

/// Assemble the summary from merged rows and write the output files.
pub fn finalize(
    config: &ExperimentConfig,
    resolved: ResolvedConfig,
    merged: PartialSummary,
    wall_seconds: f64,
) -> Result<ExperimentSummary, HarnessError> {
    let n_samples = merged
        .rows
        .iter()
        .map(|r| r.replica)
        .collect::<std::collections::HashSet<_>>()
        .len() as u64;
    let censoring_fraction = if merged.rows.is_empty() {
        0.0
    } else {
        merged.n_censored as f64 / n_samples.max(1) as f64
    };
    let mut results = evaluate(config, resolved, &merged)?;
    if let Value::Object(map) = &mut results {
        map.insert("total_steps".into(), json!(merged.total_steps));
        map.insert("k_resolved".into(), json!(resolved.k));
        // "Censored" means no-early-return for the probe; only return-time
        // sampling treats a majority-censored run as pathological.
        let censoring_matters = matches!(
            config.kind,
            ExperimentKind::ReturnTimeDiffusive | ExperimentKind::ReturnTimeCritical
        );
        if censoring_matters && censoring_fraction > 0.5 {
            map.insert("over_censored".into(), json!(true));
        }
    }
    let summary = ExperimentSummary {
        config: config.clone(),
        results,
        censoring_fraction,
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_seconds,
        aborted: merged.aborted,
        rows: merged.rows,
    };
    persist(config, &summary)?;
    Ok(summary)
}

fn evaluate(
    config: &ExperimentConfig,
    r: ResolvedConfig,
    merged: &PartialSummary,
) -> Result<Value, HarnessError> {
    use ExperimentKind::*;
    Ok(match config.kind {
        ReturnTimeDiffusive => {
            let gamma = (4.0 - 4.0 * r.p.get()) / (3.0 - 4.0 * r.p.get());
            let scale = (r.k as f64).powf(gamma);
            let values: Vec<f64> = merged
                .rows
                .iter()
                .filter(|row| !row.censored)
                .map(|row| row.value.as_f64() / scale)
                .collect();
            let law_p = r.p;
            let gof = return_time_gof(
                values,
                merged.n_censored as usize,
                config.cap as f64 / scale,
                |x| laws::diffusive_return_cdf(law_p, x).unwrap_or(0.0),
                config.window,
            );
            json!({ "law": "diffusive-return", "normalization": format!("T * k^-{gamma:.6}"), "ks": gof })
        }
        ReturnTimeCritical => {
            let values: Vec<f64> = merged
                .rows
                .iter()
                .filter(|row| !row.censored)
                .map(|row| row.value.as_f64().ln() / r.k as f64)
                .collect();
            let gof = return_time_gof(
                values,
                merged.n_censored as usize,
                (config.cap as f64).ln() / r.k as f64,
                laws::critical_return_cdf,
                config.window,
            );
            json!({ "law": "critical-return", "normalization": "log(T)/k", "ks": gof })
        }
        ScalingMarginals | ScalingMarginalsCritical => {
            let critical = config.kind == ScalingMarginalsCritical;
            let times = &config.checkpoint_times;
            let dim = times.len();
            let scales: Vec<f64> = if critical {
                checkpoint_steps_critical(times, r.n)
                    .iter()
                    .map(|&m| (m as f64 * (r.n as f64).ln()).sqrt())
                    .collect()
            } else {
                vec![(r.n as f64).sqrt(); dim]
            };
            let mut rescaled: Vec<Vec<f64>> = Vec::with_capacity(merged.rows.len() / dim);
            for chunk in merged.rows.chunks(dim) {
                rescaled.push(
                    chunk
                        .iter()
                        .zip(&scales)
                        .map(|(row, &s)| row.value.as_f64() / s)
                        .collect(),
                );
            }
            let report = stats::marginal_report(&rescaled, r.p, times, critical, 1e-3)?;
            serde_json::to_value(&report).expect("report serializes")
        }
        OvertrainedClt => {
            let center: f64 = laws::overtrained_center(r.p, r.n, r.k)?;
            let scale = (r.n as f64).sqrt();
            let standardized: Vec<f64> = merged
                .rows
                .iter()
                .map(|row| (row.value.as_f64() - center) / scale)
                .collect();
            let theory_var = 1.0 / (3.0 - 4.0 * r.p.get());
            let report = stats::normality_report(&standardized, theory_var, config.window)?;
            let mut v = serde_json::to_value(&report).expect("report serializes");
            if let Value::Object(map) = &mut v {
                map.insert("center".into(), json!(center));
            }
            v
        }
        OvertrainedCltCritical => {
            let center: f64 = laws::overtrained_center_critical(r.n, r.k);
            let scale = (r.n as f64 * (r.n as f64).ln()).sqrt();
            let standardized: Vec<f64> = merged
                .rows
                .iter()
                .map(|row| (row.value.as_f64() - center) / scale)
                .collect();
            let report = stats::normality_report(&standardized, 1.0, config.window)?;
            let mut v = serde_json::to_value(&report).expect("report serializes");
            if let Value::Object(map) = &mut v {
                map.insert("center".into(), json!(center));
            }
            v
        }
        MartingaleDiagnostics => {
            // Rows alternate (qv ratio, worst increment ratio) per replica.
            let qv_ratios: Vec<f64> = merged.rows.iter().step_by(2).map(|r| r.value.as_f64()).collect();
            let worst = merged
                .rows
                .iter()
                .skip(1)
                .step_by(2)
                .map(|r| r.value.as_f64())
                .fold(0.0f64, f64::max);
            let mean_qv = qv_ratios.iter().sum::<f64>() / qv_ratios.len() as f64;
            let identity_err = weight_identity_max_error(r.p);
            json!({
                "qv_ratio_mean": mean_qv,
                "qv_ratio_expected": 1.0,
                "max_increment_bound_ratio": worst,
                "weight_identity_max_rel_error": identity_err,
            })
        }
        EarlyReturnProbe => {
            let mut eps_sorted = config.checkpoint_times.clone();
            eps_sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let total = merged.rows.len() as f64;
            let table: Vec<Value> = eps_sorted
                .iter()
                .map(|&eps| {
                    let horizon = r.k + (eps * r.n as f64).floor() as u64;
                    let hits = merged
                        .rows
                        .iter()
                        .filter(|row| !row.censored && row.value.as_f64() as u64 <= horizon)
                        .count() as f64;
                    let prob = hits / total;
                    let se = (prob * (1.0 - prob) / total).sqrt();
                    json!({ "eps": eps, "probability": prob, "se": se })
                })
                .collect();
            json!({ "table": table })
        }
        TrajectoryFigure => {
            let last = merged.rows.last().map(|row| row.value.as_f64()).unwrap_or(0.0);
            let first_return = merged
                .rows
                .iter()
                .find(|row| row.steps > r.k && row.value.as_f64() == 0.0)
                .map(|row| row.steps);
            json!({ "final_position": last, "first_return": first_return })
        }
    })
}

/// Goodness-of-fit for return times; heavily censored runs report the
/// failure reason instead of aborting, so the over-censored exit path
/// still produces a summary.
fn return_time_gof<C: Fn(f64) -> f64>(
    values: Vec<f64>,
    n_censored: usize,
    censor_point: f64,
    cdf: C,
    window: (f64, f64),
) -> Value {
    let attempt = stats::EmpiricalDistribution::new(values, n_censored, Some(censor_point))
        .and_then(|emp| stats::ks_test(&emp, cdf, window));
    match attempt {
        Ok(gof) => serde_json::to_value(&gof).expect("gof serializes"),
        Err(err) => json!({ "unavailable": err.to_string() }),
    }
}

/// Max relative error of a_{m+1}(1 + (2p-1)/m) = a_m over a log-spaced
/// index grid up to 1e6.
pub fn weight_identity_max_error(p: MemoryParam) -> f64 {
    let mut worst = 0.0f64;
    let mut m = 1u64;
    while m <= 1_000_000 {
        if !(p.get() == 0.0 && m == 1) {
            let a_m: f64 = gamma::weight(p, m).expect("m >= 1");
            let a_next: f64 = gamma::weight(p, m + 1).expect("m >= 1");
            let lhs = a_next * (1.0 + p.two_p_minus_one() / m as f64);
            worst = worst.max((lhs / a_m - 1.0).abs());
        }
        m = (m as f64 * 1.9) as u64 + 1;
    }
    worst
}

fn persist(config: &ExperimentConfig, summary: &ExperimentSummary) -> Result<(), HarnessError> {
    std::fs::create_dir_all(&config.output_dir)?;
    let samples_path = config.output_dir.join("samples.csv");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&samples_path)?);
    out.write_all(b"replica,value,censored,steps\n")?;
    for row in &summary.rows {
        writeln!(
            out,
            "{},{},{},{}",
            row.replica,
            row.value.csv(),
            row.censored as u8,
            row.steps
        )?;
    }
    out.flush()?;
    if config.kind == ExperimentKind::TrajectoryFigure {
        let mut traj = std::io::BufWriter::new(
            std::fs::File::create(config.output_dir.join("trajectory.csv"))?,
        );
        traj.write_all(b"n,S\n")?;
        for row in &summary.rows {
            writeln!(traj, "{},{}", row.steps, row.value.csv())?;
        }
        traj.flush()?;
    }
    let json_path = config.output_dir.join("summary.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(summary).expect("summary serializes"))?;
    Ok(())
}
