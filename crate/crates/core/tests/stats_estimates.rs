use std::time::Duration;

use eprcoin::adversary::{AliceSpec, BobSpec};
use eprcoin::protocol::{Bit, SessionConfig, Verification};
use eprcoin::stats::{
    analytic_oracles, estimate, render_report, report_record, trial_seed, wilson_interval, ExperimentSpec,
    SuccessPredicate,
};

fn honest(trials: u64, master_seed: u64) -> ExperimentSpec {
    ExperimentSpec::new(SessionConfig::new(20, 0), AliceSpec::Honest, BobSpec::Honest, trials, master_seed)
}

#[test]
fn identical_specs_give_identical_estimates() {
    let spec = ExperimentSpec::new(
        SessionConfig::new(20, 0).with_verification(Verification::Off),
        AliceSpec::MixedProduct { fraction: 0.5 },
        BobSpec::Honest,
        5000,
        9,
    );
    assert_eq!(estimate(&spec).unwrap(), estimate(&spec).unwrap());
    let other = ExperimentSpec { master_seed: 10, ..spec.clone() };
    assert_ne!(estimate(&spec).unwrap(), estimate(&other).unwrap());
}

#[test]
fn worker_count_does_not_change_results() {
    let spec = honest(3000, 4);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    assert_eq!(one.install(|| estimate(&spec)).unwrap(), four.install(|| estimate(&spec)).unwrap());
}

#[test]
fn honest_interval_covers_half_over_20_seeds() {
    let mut misses = 0;
    for seed in 0..20 {
        let e = estimate(&honest(100_000, 1000 + seed)).unwrap();
        let r = e.rate.unwrap();
        assert!((r.p_hat - 0.5).abs() < 0.01);
        if !(r.ci_low <= 0.5 && 0.5 <= r.ci_high) {
            misses += 1;
        }
    }
    assert!(misses <= 3, "{misses} misses");
}

#[test]
fn estimate_fields_are_consistent() {
    let spec = ExperimentSpec::new(
        SessionConfig::new(20, 0),
        AliceSpec::Honest,
        BobSpec::PremeasureAll { target: Bit::Zero },
        4000,
        2,
    );
    let e = estimate(&spec).unwrap();
    assert_eq!(e.trials, 4000);
    assert!(e.non_aborted < e.trials);
    assert!((e.abort_rate - (1.0 - e.non_aborted as f64 / 4000.0)).abs() < 1e-15);
    let r = e.rate.unwrap();
    assert_eq!(r.p_hat, e.successes as f64 / e.non_aborted as f64);
    assert_eq!(r.epsilon_hat, r.p_hat - 0.5);
    assert_eq!((r.ci_low, r.ci_high), wilson_interval(e.successes, e.non_aborted, 1.96).unwrap());
}

#[test]
fn default_predicate_follows_declared_target() {
    let s = ExperimentSpec::new(
        SessionConfig::new(20, 0),
        AliceSpec::Honest,
        BobSpec::ZAxisSelect { target: Bit::Zero },
        1,
        0,
    );
    assert_eq!(s.predicate, SuccessPredicate::OutcomeEqualsTarget(Bit::Zero));
    assert_eq!(honest(1, 0).predicate, SuccessPredicate::OutcomeEqualsOne);
}

#[test]
fn trial_seed_is_splitmix64() {
    // Reference SplitMix64 stream for state 1234567.
    let mut state: u64 = 1234567;
    let mut next = || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    for i in 0..100 {
        assert_eq!(trial_seed(1234567, i), next());
    }
}

#[test]
fn report_carries_every_estimate_field() {
    let spec = honest(100, 1);
    let e = estimate(&spec).unwrap();
    let kv = report_record(&spec, &e, Duration::from_millis(5), &analytic_oracles());
    let keys: Vec<&str> = kv.iter().map(|(k, _)| k.as_str()).collect();
    for k in [
        "trials",
        "non_aborted",
        "successes",
        "p_hat",
        "epsilon_hat",
        "ci_low",
        "ci_high",
        "abort_rate",
        "correlated_final_sessions",
        "wall_clock_seconds",
        "master_seed",
        "alice",
        "bob",
        "oracle.pauli_mixture_deviation_from_quarter_identity.pass",
    ] {
        assert!(keys.contains(&k), "{k}");
    }
    let text = render_report(&kv);
    assert!(text.lines().all(|l| l.split_once('=').is_some()));
    assert!(text.contains("\ntrials=100\n"));
}
