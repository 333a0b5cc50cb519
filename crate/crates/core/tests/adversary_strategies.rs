use eprcoin::adversary::{
    alice_mixed_product, honest_alice, honest_bob, naive_alice_nolock, AliceSpec, BobSpec, StrategyError,
};
use eprcoin::io::render_result;
use eprcoin::protocol::{run_full_session, run_with_specs, Bit, DesignatedRule, SessionConfig, Verification};
use eprcoin::stats::{estimate, ExperimentSpec, SuccessPredicate};

fn attackers(target: Bit) -> [BobSpec; 4] {
    [
        BobSpec::Honest,
        BobSpec::ZAxisSelect { target },
        BobSpec::PremeasureAll { target },
        BobSpec::PremeasureUnverified { target },
    ]
}

#[test]
fn honest_closure() {
    for seed in 0..20 {
        let cfg = SessionConfig::new(20, seed);
        let boxed = run_full_session(cfg, honest_alice(), honest_bob()).unwrap();
        let spec = run_with_specs(cfg, &AliceSpec::Honest, &BobSpec::Honest).unwrap();
        assert_eq!(render_result(&boxed), render_result(&spec));
    }
}

#[test]
fn attacks_are_deterministic() {
    let alices = [AliceSpec::Honest, AliceSpec::NaiveNoLock, AliceSpec::MixedProduct { fraction: 0.5 }];
    for alice in alices {
        for bob in attackers(Bit::One) {
            for rule in [DesignatedRule::FixedFirst, DesignatedRule::BobChooses, DesignatedRule::PublicRandom] {
                let cfg = SessionConfig::new(20, 99).with_rule(rule);
                let a = render_result(&run_with_specs(cfg, &alice, &bob).unwrap());
                let b = render_result(&run_with_specs(cfg, &alice, &bob).unwrap());
                assert_eq!(a, b, "{alice} {bob}");
            }
        }
    }
}

#[test]
fn target_symmetry() {
    let trials = 20_000;
    for verification in [Verification::On, Verification::Off] {
        for rule in [DesignatedRule::FixedFirst, DesignatedRule::BobChooses] {
            for i in 1..4 {
                let rates: Vec<(f64, f64)> = [Bit::Zero, Bit::One]
                    .into_iter()
                    .map(|t| {
                        let cfg = SessionConfig::new(20, 0).with_rule(rule).with_verification(verification);
                        let spec = ExperimentSpec::new(cfg, AliceSpec::Honest, attackers(t)[i], trials, 5 + i as u64);
                        let e = estimate(&spec).unwrap();
                        let m = e.non_aborted.max(1) as f64;
                        let p = e.p_hat().unwrap_or(0.5);
                        (p, p * (1.0 - p) / m)
                    })
                    .collect();
                let (p0, v0) = rates[0];
                let (p1, v1) = rates[1];
                let bound = 3.0 * (v0 + v1).sqrt() + 1e-12;
                assert!(
                    (p0 - p1).abs() <= bound,
                    "{} {rule} {verification}: {p0} vs {p1}",
                    attackers(Bit::One)[i]
                );
            }
        }
    }
}

#[test]
fn zero_fraction_behaves_like_honest_alice() {
    let cfg = SessionConfig::new(20, 0);
    let spec = ExperimentSpec::new(cfg, AliceSpec::MixedProduct { fraction: 0.0 }, BobSpec::Honest, 100_000, 17);
    let e = estimate(&spec).unwrap();
    assert_eq!(e.abort_rate, 0.0);
    assert!(e.epsilon_hat().unwrap().abs() <= 0.005);
    assert_eq!(e.correlated_final_sessions, 0);
}

#[test]
fn mixed_fraction_bounds() {
    assert!(alice_mixed_product(0.0).is_ok());
    assert!(alice_mixed_product(1.0).is_ok());
    assert!(matches!(alice_mixed_product(1.01), Err(StrategyError::BadParameter { .. })));
    assert!(matches!(alice_mixed_product(f64::NAN), Err(StrategyError::BadParameter { .. })));
    let _ = naive_alice_nolock();
}

#[test]
fn zaxis_select_breaks_unlocked_protocol_every_time() {
    for t in [Bit::Zero, Bit::One] {
        for seed in 0..200 {
            let cfg = SessionConfig::new(20, seed).with_rule(DesignatedRule::BobChooses);
            let r = run_with_specs(cfg, &AliceSpec::NaiveNoLock, &BobSpec::ZAxisSelect { target: t }).unwrap();
            assert_eq!(r.outcome_bit(), Some(t));
        }
    }
}

#[test]
fn premeasure_unverified_is_never_caught() {
    for seed in 0..300 {
        let cfg = SessionConfig::new(20, seed).with_rule(DesignatedRule::BobChooses);
        let r = run_with_specs(cfg, &AliceSpec::Honest, &BobSpec::PremeasureUnverified { target: Bit::One }).unwrap();
        assert!(!r.is_abort());
        assert!(r.final_pairs_anticorrelated());
    }
}

#[test]
fn premeasure_all_is_usually_caught() {
    let cfg = SessionConfig::new(20, 0);
    let spec = ExperimentSpec::new(cfg, AliceSpec::Honest, BobSpec::PremeasureAll { target: Bit::One }, 5000, 3);
    let e = estimate(&spec).unwrap();
    assert!(e.abort_rate > 0.95, "{}", e.abort_rate);
}

#[test]
fn mixed_alice_skews_toward_one_without_verification() {
    let cfg = SessionConfig::new(20, 0).with_verification(Verification::Off);
    let spec = ExperimentSpec::new(cfg, AliceSpec::MixedProduct { fraction: 1.0 }, BobSpec::Honest, 2000, 4)
        .with_predicate(SuccessPredicate::OutcomeEqualsOne);
    assert_eq!(estimate(&spec).unwrap().p_hat(), Some(1.0));
}
