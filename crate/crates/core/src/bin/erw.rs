//! Command-line front end for the trained elephant random walk lab.
//!
//! Experiments write all artifacts under `--out`; stderr carries logs and
//! stdout carries the summary path. Exit codes: 0 success, 2 when more
//! than half the replicas hit the censoring cap, 1 on any error.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use erw_lab::harness::{
    self, parse_count, ExperimentConfig, ExperimentKind, ExperimentSummary, KRule,
};
use erw_lab::laws;
use erw_lab::stats;
use erw_lab::walk::{MemoryParam, TrainingPrefix, WalkState};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "erw", version, about = "Monte Carlo lab for trained elephant random walks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory and write an (n, S) CSV.
    Simulate(SimulateArgs),
    /// Sample first-return times and test them against the limit law.
    ReturnTimes(RunArgs),
    /// Sample checkpoint marginals of the rescaled walk.
    Scaling(RunArgs),
    /// Central limit check for the overtrained walk at time n.
    Clt(RunArgs),
    /// Martingale transform and quadratic variation diagnostics.
    Diagnose(RunArgs),
    /// Early-return probability probe over an epsilon grid.
    Probe(RunArgs),
    /// Evaluate closed-form limit laws on a grid and write a CSV table.
    Laws(LawsArgs),
    /// Run a KS test of an existing sample CSV against a limit law.
    Ks(KsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Memory parameter in [0, 1].
    #[arg(long)]
    p: f64,
    /// Training length (all +1 steps).
    #[arg(long)]
    k: u64,
    /// Steps to simulate after training.
    #[arg(long, value_parser = parse_count_arg)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Shared flags for the experiment subcommands. Any flag given on the
/// command line overrides the corresponding config-file value.
#[derive(Args)]
struct RunArgs {
    /// Optional key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    p: Option<f64>,
    /// Training length: integer, `critical-phase`, `power:E`, or `log`.
    #[arg(long)]
    k: Option<String>,
    /// Horizon n (scaling, clt, diagnose, probe).
    #[arg(long, value_parser = parse_count_arg)]
    n: Option<u64>,
    #[arg(long, value_parser = parse_count_arg)]
    replicas: Option<u64>,
    /// Censoring cap for return-time sampling.
    #[arg(long, value_parser = parse_count_arg)]
    cap: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint times (scaling) or epsilon grid (probe), comma separated.
    #[arg(long, value_delimiter = ',', alias = "eps")]
    times: Option<Vec<f64>>,
    /// Goodness-of-fit comparison window as `lo,hi` quantiles.
    #[arg(long)]
    window: Option<String>,
    /// Use the critical-regime (p = 3/4) variant of the experiment.
    #[arg(long)]
    critical: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LawsArgs {
    /// Which law: stable-half, diffusive-return, critical-return, nrbm-cov.
    #[arg(long)]
    law: String,
    #[arg(long)]
    p: Option<f64>,
    /// Grid: `start..stop`, `start..stop:count`, or a comma list.
    #[arg(long)]
    grid: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct KsArgs {
    /// Sample CSV with header replica,value,censored,steps.
    #[arg(long)]
    samples: PathBuf,
    /// Reference law: stable-half, diffusive-return, critical-return.
    #[arg(long)]
    law: String,
    #[arg(long)]
    p: Option<f64>,
    /// Comparison window `lo,hi` in reference-CDF quantile units.
    #[arg(long, default_value = "0.05,0.8")]
    window: String,
    /// Censoring point on the rescaled axis, if the samples are capped.
    #[arg(long)]
    censor_point: Option<f64>,
    /// Divide sample values by this before testing (e.g. the return scale).
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

fn parse_count_arg(s: &str) -> Result<u64, String> {
    let v = parse_count(s).map_err(|e| e.to_string())?;
    if s.contains(['e', 'E', '.']) {
        eprintln!("note: parsed `{s}` as {v}");
    }
    Ok(v)
}

fn parse_window(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s
        .split_once(',')
        .context("window must be `lo,hi`")?;
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

fn main() -> ExitCode {
    let _ = ctrlc::set_handler(|| {
        eprintln!("interrupt: finishing current replicas and finalizing partial summary");
        harness::ABORT.store(true, std::sync::atomic::Ordering::Relaxed);
    });
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::ReturnTimes(args) => {
            experiment(args, ExperimentKind::ReturnTimeDiffusive, ExperimentKind::ReturnTimeCritical)
        }
        Command::Scaling(args) => {
            experiment(args, ExperimentKind::ScalingMarginals, ExperimentKind::ScalingMarginalsCritical)
        }
        Command::Clt(args) => {
            experiment(args, ExperimentKind::OvertrainedClt, ExperimentKind::OvertrainedCltCritical)
        }
        Command::Diagnose(args) => {
            experiment(args, ExperimentKind::MartingaleDiagnostics, ExperimentKind::MartingaleDiagnostics)
        }
        Command::Probe(args) => {
            experiment(args, ExperimentKind::EarlyReturnProbe, ExperimentKind::EarlyReturnProbe)
        }
        Command::Laws(args) => laws_table(args),
        Command::Ks(args) => ks(args),
    }
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let p = MemoryParam::new(args.p)?;
    let prefix = TrainingPrefix::canonical(args.k);
    let mut state = WalkState::init_trained(&prefix, p);
    let mut rng = harness::replica_rng(args.seed, ExperimentKind::TrajectoryFigure as u64, 0);
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("trajectory.csv");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
    out.write_all(b"n,S\n")?;
    writeln!(out, "{},{}", state.n, state.position)?;
    for _ in 0..args.steps {
        state.advance(&mut rng)?;
        writeln!(out, "{},{}", state.n, state.position)?;
    }
    out.flush()?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn experiment(
    args: RunArgs,
    diffusive_kind: ExperimentKind,
    critical_kind: ExperimentKind,
) -> Result<ExitCode> {
    let kind = if args.critical { critical_kind } else { diffusive_kind };
    let mut cfg = match &args.config {
        Some(path) => {
            let file_cfg = harness::parse_config_file(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            if file_cfg.kind != kind && args.config.is_some() {
                eprintln!(
                    "note: config file kind {:?} kept (subcommand implies {:?})",
                    file_cfg.kind, kind
                );
            }
            file_cfg
        }
        None => {
            let mut c = ExperimentConfig::new(kind, "out");
            // Subcommand-specific defaults for flag-only invocation.
            c.p = if args.critical { 0.75 } else { 0.5 };
            c.replicas = 1000;
            if matches!(kind, ExperimentKind::EarlyReturnProbe) {
                c.k = KRule::CriticalPhase;
                c.checkpoint_times = vec![0.4, 0.2, 0.1, 0.05];
            }
            if matches!(kind, ExperimentKind::OvertrainedClt | ExperimentKind::OvertrainedCltCritical) {
                c.k = KRule::PowerRule(0.55);
            }
            c
        }
    };

    macro_rules! override_flag {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                if args.config.is_some() {
                    eprintln!("note: flag --{} overrides config value", stringify!($field));
                }
                cfg.$field = v;
            }
        };
    }
    override_flag!(p, args.p);
    override_flag!(n, args.n.map(Some));
    override_flag!(replicas, args.replicas);
    override_flag!(cap, args.cap);
    override_flag!(seed, args.seed);
    override_flag!(checkpoint_times, args.times);
    override_flag!(output_dir, args.out);
    if let Some(k) = &args.k {
        if args.config.is_some() {
            eprintln!("note: flag --k overrides config value");
        }
        cfg.k = KRule::parse(k)?;
    }
    if let Some(w) = &args.window {
        if args.config.is_some() {
            eprintln!("note: flag --window overrides config value");
        }
        cfg.window = parse_window(w)?;
    }
    if matches!(kind, ExperimentKind::MartingaleDiagnostics) && cfg.n.is_none() {
        bail!("diagnose requires --n");
    }

    let summary = harness::run(&cfg)?;
    report(&cfg, &summary)
}

fn report(cfg: &ExperimentConfig, summary: &ExperimentSummary) -> Result<ExitCode> {
    eprintln!(
        "{} replicas, censoring fraction {:.4}, wall {:.1}s",
        cfg.replicas, summary.censoring_fraction, summary.wall_seconds
    );
    println!("{}", cfg.output_dir.join("summary.json").display());
    if summary.over_censored() {
        eprintln!("warning: more than half of the replicas were censored at the cap");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    if let Some((range, count)) = spec.rsplit_once(':') {
        if let Some((a, b)) = range.split_once("..") {
            let (a, b): (f64, f64) = (a.parse()?, b.parse()?);
            let count: usize = count.parse()?;
            if count < 2 || b <= a {
                bail!("grid needs start < stop and count >= 2");
            }
            let step = (b - a) / (count - 1) as f64;
            return Ok((0..count).map(|i| a + step * i as f64).collect());
        }
    }
    if let Some((a, b)) = spec.split_once("..") {
        let (a, b): (f64, f64) = (a.parse()?, b.parse()?);
        if b <= a {
            bail!("grid needs start < stop");
        }
        let step = (b - a) / 99.0;
        return Ok((0..100).map(|i| a + step * i as f64).collect());
    }
    spec.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(Into::into))
        .collect()
}

fn laws_table(args: LawsArgs) -> Result<ExitCode> {
    let grid = parse_grid(&args.grid)?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join(format!("{}.csv", args.law));
    let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
    match args.law.as_str() {
        "stable-half" => {
            out.write_all(b"x,pdf,cdf\n")?;
            for &x in &grid {
                writeln!(
                    out,
                    "{x:.16e},{:.16e},{:.16e}",
                    laws::stable_half_pdf(x),
                    laws::stable_half_cdf(x)
                )?;
            }
        }
        "diffusive-return" => {
            let p = MemoryParam::new(args.p.context("diffusive-return requires --p")?)?;
            out.write_all(b"x,pdf,cdf\n")?;
            let expo = 3.0 - 4.0 * p.get();
            for &x in &grid {
                // Chain rule through the time change u = x^{3-4p}/(3-4p).
                let u = x.powf(expo) / expo;
                let pdf = laws::stable_half_pdf(u) * x.powf(expo - 1.0);
                writeln!(out, "{x:.16e},{pdf:.16e},{:.16e}", laws::diffusive_return_cdf(p, x)?)?;
            }
        }
        "critical-return" => {
            out.write_all(b"x,pdf,cdf\n")?;
            for &x in &grid {
                writeln!(
                    out,
                    "{x:.16e},{:.16e},{:.16e}",
                    laws::stable_half_pdf(x),
                    laws::critical_return_cdf(x)
                )?;
            }
        }
        "nrbm-cov" => {
            let p = MemoryParam::new(args.p.context("nrbm-cov requires --p")?)?;
            out.write_all(b"s,t,cov\n")?;
            for &s in &grid {
                for &t in &grid {
                    writeln!(out, "{s:.16e},{t:.16e},{:.16e}", laws::nrbm_cov(p, s, t)?)?;
                }
            }
        }
        other => bail!("unknown law `{other}`"),
    }
    out.flush()?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn ks(args: KsArgs) -> Result<ExitCode> {
    let window = parse_window(&args.window)?;
    let text = std::fs::read_to_string(&args.samples)
        .with_context(|| format!("reading {}", args.samples.display()))?;
    let mut values = Vec::new();
    let mut n_censored = 0usize;
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "replica,value,censored,steps" {
                bail!("unexpected CSV header `{line}`");
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            bail!("line {}: expected 4 columns", i + 1);
        }
        let value: f64 = cols[1].parse().with_context(|| format!("line {}", i + 1))?;
        let censored = cols[2] == "1" || cols[2] == "true";
        if censored {
            n_censored += 1;
        } else {
            values.push(value / args.scale);
        }
    }
    let emp = stats::EmpiricalDistribution::new(values, n_censored, args.censor_point)?;
    let gof = match args.law.as_str() {
        "stable-half" | "critical-return" => {
            stats::ks_test(&emp, laws::stable_half_cdf, window)?
        }
        "diffusive-return" => {
            let p = MemoryParam::new(args.p.context("diffusive-return requires --p")?)?;
            stats::ks_test(&emp, move |x| laws::diffusive_return_cdf(p, x).unwrap_or(0.0), window)?
        }
        other => bail!("unknown law `{other}`"),
    };
    println!("{}", serde_json::to_string_pretty(&gof)?);
    Ok(ExitCode::SUCCESS)
}
