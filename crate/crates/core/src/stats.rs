//! Monte Carlo bias estimation and closed-form oracles.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

use crate::adversary::{AliceSpec, BobSpec};
use crate::protocol::{run_with_specs, Bit, BitConvention, CoinOutcome, ProtocolError, SessionConfig};
use crate::qstate::{
    uniform_pauli_mixture, Axis, BellKind, DensityMatrix4, Particle, PureTwoQubitState, SpinOutcome,
};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;
/// Sample count for sphere quadratures.
pub const SPHERE_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("Wilson interval needs n >= 1")]
    EmptySample,
    #[error("successes ({successes}) exceed trials ({n})")]
    TooManySuccesses { successes: u64, n: u64 },
    #[error("z must be positive and finite")]
    BadQuantile,
    #[error("an experiment needs at least one trial")]
    NoTrials,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> Result<(f64, f64), StatsError> {
    if n == 0 {
        return Err(StatsError::EmptySample);
    }
    if successes > n {
        return Err(StatsError::TooManySuccesses { successes, n });
    }
    if !(z.is_finite() && z > 0.0) {
        return Err(StatsError::BadQuantile);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let low = if successes == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let high = if successes == n { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok((low, high))
}

/// What counts as a success in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuccessPredicate {
    OutcomeEqualsTarget(Bit),
    OutcomeEqualsOne,
}

impl SuccessPredicate {
    pub fn target(self) -> Bit {
        match self {
            SuccessPredicate::OutcomeEqualsTarget(b) => b,
            SuccessPredicate::OutcomeEqualsOne => Bit::One,
        }
    }
}

impl fmt::Display for SuccessPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SuccessPredicate::OutcomeEqualsTarget(b) => write!(f, "{b}"),
            SuccessPredicate::OutcomeEqualsOne => f.write_str("one"),
        }
    }
}

impl FromStr for SuccessPredicate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one" => Ok(SuccessPredicate::OutcomeEqualsOne),
            other => other
                .parse()
                .map(SuccessPredicate::OutcomeEqualsTarget)
                .map_err(|_| format!("expected 0, 1 or one, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    /// Session template; its seed is replaced per trial.
    pub config: SessionConfig,
    pub alice: AliceSpec,
    pub bob: BobSpec,
    pub trials: u64,
    pub master_seed: u64,
    pub predicate: SuccessPredicate,
}

impl ExperimentSpec {
    /// Success = the coin equals Bob's declared target, or bit 1 when Bob
    /// declares none.
    pub fn new(config: SessionConfig, alice: AliceSpec, bob: BobSpec, trials: u64, master_seed: u64) -> Self {
        let predicate = match bob.target() {
            Some(t) => SuccessPredicate::OutcomeEqualsTarget(t),
            None => SuccessPredicate::OutcomeEqualsOne,
        };
        ExperimentSpec {
            config,
            alice,
            bob,
            trials,
            master_seed,
            predicate,
        }
    }

    pub fn with_predicate(mut self, p: SuccessPredicate) -> Self {
        self.predicate = p;
        self
    }
}

/// Seed of trial `i`: the `(i+1)`-th SplitMix64 output for state
/// `master_seed`, i.e. `mix(master_seed + (i+1)·0x9E3779B97F4A7C15)`.
pub fn trial_seed(master_seed: u64, i: u64) -> u64 {
    let mut z = master_seed.wrapping_add(i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Tally {
    trials: u64,
    non_aborted: u64,
    successes: u64,
    correlated_final: u64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally {
            trials: self.trials + o.trials,
            non_aborted: self.non_aborted + o.non_aborted,
            successes: self.successes + o.successes,
            correlated_final: self.correlated_final + o.correlated_final,
        }
    }
}

/// Proportion estimate over non-aborted sessions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub p_hat: f64,
    pub epsilon_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasEstimate {
    pub trials: u64,
    pub non_aborted: u64,
    pub successes: u64,
    /// `None` when every session aborted.
    pub rate: Option<RateEstimate>,
    pub abort_rate: f64,
    /// Completed sessions with at least one final pair that was not
    /// anti-correlated.
    pub correlated_final_sessions: u64,
}

impl BiasEstimate {
    fn from_tally(t: Tally) -> BiasEstimate {
        let rate = (t.non_aborted > 0).then(|| {
            let p_hat = t.successes as f64 / t.non_aborted as f64;
            let (ci_low, ci_high) =
                wilson_interval(t.successes, t.non_aborted, Z_95).expect("non-empty sample");
            RateEstimate {
                p_hat,
                epsilon_hat: p_hat - 0.5,
                ci_low,
                ci_high,
            }
        });
        BiasEstimate {
            trials: t.trials,
            non_aborted: t.non_aborted,
            successes: t.successes,
            rate,
            abort_rate: (t.trials - t.non_aborted) as f64 / t.trials as f64,
            correlated_final_sessions: t.correlated_final,
        }
    }

    pub fn p_hat(&self) -> Option<f64> {
        self.rate.map(|r| r.p_hat)
    }

    pub fn epsilon_hat(&self) -> Option<f64> {
        self.rate.map(|r| r.epsilon_hat)
    }

    pub fn is_undefined(&self) -> bool {
        self.rate.is_none()
    }
}

/// Runs `spec.trials` independent sessions (in parallel on the current rayon
/// pool) and aggregates counts. The result depends only on `spec`.
pub fn estimate(spec: &ExperimentSpec) -> Result<BiasEstimate, StatsError> {
    if spec.trials == 0 {
        return Err(StatsError::NoTrials);
    }
    spec.config.validate()?;
    let target = spec.predicate.target();
    let tally = (0..spec.trials)
        .into_par_iter()
        .map(|i| -> Result<Tally, StatsError> {
            let cfg = spec.config.with_seed(trial_seed(spec.master_seed, i));
            let r = run_with_specs(cfg, &spec.alice, &spec.bob)?;
            let mut t = Tally {
                trials: 1,
                ..Tally::default()
            };
            if let CoinOutcome::Bit(b) = r.outcome {
                t.non_aborted = 1;
                t.successes = u64::from(b == target);
                t.correlated_final = u64::from(!r.final_pairs_anticorrelated());
            }
            Ok(t)
        })
        .try_reduce(Tally::default, |a, b| Ok(a.merge(b)))?;
    Ok(BiasEstimate::from_tally(tally))
}

/// Deterministic near-uniform point set on the sphere (Fibonacci lattice).
/// Heights are the midpoints of `count` equal slices of `[-1, 1]`.
pub fn fibonacci_sphere(count: usize) -> impl Iterator<Item = Axis> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count).map(move |k| {
        let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
        Axis::from_height_azimuth(z, golden * k as f64)
    })
}

/// Mean of `f` over [`fibonacci_sphere`] points.
pub fn sphere_average(count: usize, f: impl Fn(&Axis) -> f64) -> f64 {
    fibonacci_sphere(count).map(|a| f(&a)).sum::<f64>() / count as f64
}

/// Pass probability of one challenged pair in `state` when both sides
/// measure along a common uniformly random axis.
pub fn random_axis_pass_rate(state: &PureTwoQubitState, samples: usize) -> f64 {
    sphere_average(samples, |a| state.anticorrelation_probability(a, a))
}

/// Abort probability with `challenged` pairs, each independently a product
/// pair with probability `product_fraction` (passing with `product_pass`)
/// and otherwise a genuine singlet (always passing):
/// `1 − E[product_pass^K] = 1 − (1 − f + f·product_pass)^challenged`.
pub fn mixed_abort_probability(product_fraction: f64, product_pass: f64, challenged: u32) -> f64 {
    1.0 - (1.0 - product_fraction + product_fraction * product_pass).powi(challenged as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleEntry {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
}

impl OracleEntry {
    fn new(name: impl Into<String>, value: f64, expected: f64, tolerance: f64) -> Self {
        OracleEntry {
            name: name.into(),
            value,
            expected,
            tolerance,
        }
    }

    pub fn deviation(&self) -> f64 {
        (self.value - self.expected).abs()
    }

    pub fn pass(&self) -> bool {
        self.deviation() <= self.tolerance
    }
}

/// Closed-form values computed from the state engine alone, no protocol runs.
pub fn analytic_oracles() -> Vec<OracleEntry> {
    let mut out = Vec::new();
    let singlet = PureTwoQubitState::bell(BellKind::PsiMinus);
    for k in 0..19 {
        let theta = std::f64::consts::PI * k as f64 / 18.0;
        let b = Axis::from_spherical(theta, 0.0);
        out.push(OracleEntry::new(
            format!("singlet_anticorrelation_deg{:03}", k * 10),
            singlet.anticorrelation_probability(&Axis::Z, &b),
            (1.0 + theta.cos()) / 2.0,
            1e-12,
        ));
    }

    let product = PureTwoQubitState::basis(SpinOutcome::Down, SpinOutcome::Down);
    let product_pass = random_axis_pass_rate(&product, SPHERE_SAMPLES);
    out.push(OracleEntry::new("product_pair_pass_rate", product_pass, 1.0 / 3.0, 0.02));

    // A singlet whose B was measured along z, then unlocked: |0⟩|1⟩ or |1⟩|0⟩.
    let collapsed = PureTwoQubitState::basis(SpinOutcome::Up, SpinOutcome::Down);
    let collapsed_pass = random_axis_pass_rate(&collapsed, SPHERE_SAMPLES);
    out.push(OracleEntry::new("collapsed_pair_pass_rate", collapsed_pass, 2.0 / 3.0, 0.02));

    let conv = BitConvention::default();
    let down = conv.outcome(Bit::One);
    let bit1 = 0.5 * product.outcome_probability(Particle::A, &Axis::Z, down)
        + 0.5 * singlet.outcome_probability(Particle::A, &Axis::Z, down);
    out.push(OracleEntry::new("mixed_strategy_bit1_probability", bit1, 0.75, 1e-12));

    let dev = uniform_pauli_mixture(BellKind::PsiMinus).max_abs_diff(&DensityMatrix4::maximally_mixed());
    out.push(OracleEntry::new("pauli_mixture_deviation_from_quarter_identity", dev, 0.0, 1e-12));

    out.push(OracleEntry::new(
        "premeasure_all_abort_rate_n20",
        1.0 - collapsed_pass.powi(10),
        1.0 - (2.0f64 / 3.0).powi(10),
        0.01,
    ));
    out.push(OracleEntry::new(
        "mixed_product_abort_rate_n20",
        mixed_abort_probability(0.5, product_pass, 10),
        1.0 - (2.0f64 / 3.0).powi(10),
        0.01,
    ));
    out
}

pub fn oracle(name: &str) -> Option<OracleEntry> {
    analytic_oracles().into_iter().find(|e| e.name == name)
}

/// Flat `key=value` report: experiment echo, every estimate field, timing,
/// and the oracle table.
pub fn report_record(
    spec: &ExperimentSpec,
    est: &BiasEstimate,
    elapsed: Duration,
    oracles: &[OracleEntry],
) -> Vec<(String, String)> {
    let mut kv: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| kv.push((k.to_string(), v));
    let c = &spec.config;
    put("n", c.n.to_string());
    put("rule", c.designated_rule.to_string());
    put("bell", c.final_bell.to_string());
    put("verify", c.verification.to_string());
    put("alice", spec.alice.to_string());
    put("bob", spec.bob.to_string());
    put("trials", spec.trials.to_string());
    put("master_seed", spec.master_seed.to_string());
    put("target", spec.predicate.to_string());
    put("non_aborted", est.non_aborted.to_string());
    put("successes", est.successes.to_string());
    match est.rate {
        Some(r) => {
            put("status", "defined".into());
            put("p_hat", r.p_hat.to_string());
            put("epsilon_hat", r.epsilon_hat.to_string());
            put("ci_low", r.ci_low.to_string());
            put("ci_high", r.ci_high.to_string());
        }
        None => {
            put("status", "undefined".into());
            for k in ["p_hat", "epsilon_hat", "ci_low", "ci_high"] {
                put(k, "nan".into());
            }
        }
    }
    put("abort_rate", est.abort_rate.to_string());
    put("correlated_final_sessions", est.correlated_final_sessions.to_string());
    put("wall_clock_seconds", format!("{:.6}", elapsed.as_secs_f64()));
    for o in oracles {
        put(&format!("oracle.{}.value", o.name), o.value.to_string());
        put(&format!("oracle.{}.expected", o.name), o.expected.to_string());
        put(&format!("oracle.{}.pass", o.name), o.pass().to_string());
    }
    kv
}

pub fn render_report(kv: &[(String, String)]) -> String {
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}
