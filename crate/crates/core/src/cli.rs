//! Command-line front end: `run`, `bias`, `oracle`, `replay`.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 abort, replay mismatch or
//! malformed transcript.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::adversary::{AliceSpec, BobSpec};
use crate::io::{replay, TranscriptFile};
use crate::protocol::{
    CoinOutcome, DesignatedRule, FinalBell, ProtocolPhase, Session, SessionConfig, Verification,
};
use crate::stats::{analytic_oracles, estimate, render_report, report_record, ExperimentSpec, SuccessPredicate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DOMAIN: i32 = 2;
/// Caps the worker pool used by `bias`.
pub const THREADS_ENV: &str = "EPRCOIN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "eprcoin", version, about = "EPR-pair coin tossing simulator")]
struct Cli {
    /// key=value file supplying defaults for omitted flags
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one session and print its phase log
    Run(RunArgs),
    /// Estimate the outcome bias over many independent sessions
    Bias(BiasArgs),
    /// Print the closed-form oracle table
    Oracle,
    /// Re-check a transcript file
    Replay { path: PathBuf },
}

#[derive(Debug, Args)]
struct SessionArgs {
    /// number of EPR pairs (even, >= 2)
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alice: Option<AliceSpec>,
    #[arg(long)]
    bob: Option<BobSpec>,
    /// fixed | bob | random
    #[arg(long)]
    rule: Option<DesignatedRule>,
    /// psi- | psi+
    #[arg(long)]
    bell: Option<FinalBell>,
    /// on | off
    #[arg(long)]
    verify: Option<Verification>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    session: SessionArgs,
    /// write the transcript here
    #[arg(long, value_name = "PATH")]
    transcript: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BiasArgs {
    #[command(flatten)]
    session: SessionArgs,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    master_seed: Option<u64>,
    /// 0 | 1 | one
    #[arg(long)]
    target: Option<SuccessPredicate>,
    /// write the key=value report here
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

struct Usage(String);

impl<E: std::fmt::Display> From<E> for Usage {
    fn from(e: E) -> Self {
        Usage(e.to_string())
    }
}

/// Keys a config file may set. Other keys written by `bias` reports are
/// accepted and ignored so a report can be fed back in.
const CONFIG_KEYS: &[&str] = &[
    "n", "seed", "alice", "bob", "rule", "bell", "verify", "trials", "master_seed", "target",
];
const REPORT_ONLY_KEYS: &[&str] = &[
    "non_aborted",
    "successes",
    "status",
    "p_hat",
    "epsilon_hat",
    "ci_low",
    "ci_high",
    "abort_rate",
    "correlated_final_sessions",
    "wall_clock_seconds",
];

#[derive(Debug, Default)]
struct ConfigFile(BTreeMap<String, String>);

impl ConfigFile {
    fn load(path: &Path) -> Result<ConfigFile, Usage> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Usage(format!("config line {}: expected key=value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if CONFIG_KEYS.contains(&k) {
                map.insert(k.to_string(), v.to_string());
            } else if !(REPORT_ONLY_KEYS.contains(&k) || k.starts_with("oracle.")) {
                return Err(Usage(format!("config line {}: unknown key `{k}`", i + 1)));
            }
        }
        Ok(ConfigFile(map))
    }

    fn get<T>(&self, key: &str) -> Result<Option<T>, Usage>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| Usage(format!("config key `{key}`: {e}"))))
            .transpose()
    }
}

fn pick<T>(flag: Option<T>, cfg: &ConfigFile, key: &str, default: T) -> Result<T, Usage>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    Ok(match flag {
        Some(v) => v,
        None => cfg.get(key)?.unwrap_or(default),
    })
}

fn resolve_session(a: SessionArgs, cfg: &ConfigFile) -> Result<(SessionConfig, AliceSpec, BobSpec), Usage> {
    let config = SessionConfig::new(pick(a.n, cfg, "n", 20)?, pick(a.seed, cfg, "seed", 0)?)
        .with_rule(pick(a.rule, cfg, "rule", DesignatedRule::FixedFirst)?)
        .with_bell(pick(a.bell, cfg, "bell", FinalBell::PsiMinus)?)
        .with_verification(pick(a.verify, cfg, "verify", Verification::On)?);
    config.validate()?;
    let alice = pick(a.alice, cfg, "alice", AliceSpec::Honest)?;
    let bob = pick(a.bob, cfg, "bob", BobSpec::Honest)?;
    Ok((config, alice, bob))
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = (|| {
        let cfg = match &cli.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        match cli.command {
            Command::Run(a) => cmd_run(a, &cfg, out),
            Command::Bias(a) => cmd_bias(a, &cfg, out),
            Command::Oracle => cmd_oracle(out),
            Command::Replay { path } => cmd_replay(&path, out, err),
        }
    })();
    match result {
        Ok(code) => code,
        Err(Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
    }
}

fn cmd_run(a: RunArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<i32, Usage> {
    let (config, alice, bob) = resolve_session(a.session, cfg)?;
    let mut session = Session::new(config, alice.build(), bob.build())?;
    writeln!(
        out,
        "session=s{} n={} rule={} bell={} verify={} alice={alice} bob={bob}",
        config.seed, config.n, config.designated_rule, config.final_bell, config.verification
    )?;
    writeln!(out, "phase={}", session.phase())?;
    while !matches!(session.phase(), ProtocolPhase::Done | ProtocolPhase::Aborted) {
        let phase = session.advance()?;
        writeln!(out, "phase={phase}")?;
    }
    let result = session.finish()?;
    if let Some(path) = &a.transcript {
        std::fs::write(path, crate::io::render_result(&result))
            .map_err(|e| Usage(format!("cannot write {}: {e}", path.display())))?;
    }
    match result.outcome {
        CoinOutcome::Bit(b) => {
            let idx = result.designated_index.expect("designated pair on DONE");
            writeln!(out, "outcome={b} designated={idx}")?;
            Ok(EXIT_OK)
        }
        CoinOutcome::Abort => {
            let reason = result.abort_reason.map(|r| r.to_string()).unwrap_or_default();
            writeln!(out, "outcome=ABORT reason={reason}")?;
            Ok(EXIT_DOMAIN)
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, Usage> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(Usage::from)
}

fn cmd_bias(a: BiasArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<i32, Usage> {
    let (config, alice, bob) = resolve_session(a.session, cfg)?;
    let trials: u64 = pick(a.trials, cfg, "trials", 10_000)?;
    if trials == 0 {
        return Err(Usage("--trials must be at least 1".into()));
    }
    let master_seed = pick(a.master_seed, cfg, "master_seed", 0)?;
    let flag_target = match a.target {
        Some(t) => Some(t),
        None => cfg.get::<SuccessPredicate>("target")?,
    };
    let predicate = match (flag_target, bob.target()) {
        (Some(SuccessPredicate::OutcomeEqualsTarget(t)), Some(declared)) if t != declared => {
            return Err(Usage(format!(
                "--target {t} contradicts the strategy's target {declared}; pass --bob {}",
                bob.with_target(t)
            )));
        }
        (Some(p), _) => p,
        (None, Some(t)) => SuccessPredicate::OutcomeEqualsTarget(t),
        (None, None) => SuccessPredicate::OutcomeEqualsOne,
    };
    let spec = ExperimentSpec::new(config, alice, bob, trials, master_seed).with_predicate(predicate);
    let pool = thread_pool()?;
    let start = Instant::now();
    let est = pool.install(|| estimate(&spec))?;
    let elapsed = start.elapsed();
    let report = render_report(&report_record(&spec, &est, elapsed, &analytic_oracles()));
    out.write_all(report.as_bytes())?;
    if let Some(path) = &a.out {
        std::fs::write(path, &report).map_err(|e| Usage(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(EXIT_OK)
}

fn cmd_oracle(out: &mut dyn Write) -> Result<i32, Usage> {
    let table = analytic_oracles();
    writeln!(out, "{:<48} {:>22} {:>22} {:>9} result", "name", "value", "expected", "tolerance")?;
    for e in &table {
        writeln!(
            out,
            "{:<48} {:>22.16e} {:>22.16e} {:>9.0e} {}",
            e.name,
            e.value,
            e.expected,
            e.tolerance,
            if e.pass() { "PASS" } else { "FAIL" }
        )?;
    }
    Ok(if table.iter().all(|e| e.pass()) { EXIT_OK } else { EXIT_DOMAIN })
}

fn cmd_replay(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Usage> {
    let text = std::fs::read(path).map_err(|e| Usage(format!("cannot read {}: {e}", path.display())))?;
    let text = match String::from_utf8(text) {
        Ok(t) => t,
        Err(_) => {
            writeln!(err, "malformed transcript: not UTF-8")?;
            return Ok(EXIT_DOMAIN);
        }
    };
    let file = match TranscriptFile::parse(&text) {
        Ok(f) => f,
        Err(e) => {
            writeln!(err, "malformed transcript: {e}")?;
            return Ok(EXIT_DOMAIN);
        }
    };
    match replay(&file) {
        Ok(r) => {
            let outcome = match r.outcome {
                CoinOutcome::Bit(b) => b.to_string(),
                CoinOutcome::Abort => "ABORT".into(),
            };
            writeln!(out, "replay ok session={} outcome={outcome}", file.session_id())?;
            Ok(EXIT_OK)
        }
        Err(e) => {
            writeln!(out, "mismatch seq={}", e.seq())?;
            writeln!(err, "{e}")?;
            Ok(EXIT_DOMAIN)
        }
    }
}
