use eprcoin::adversary::{AliceSpec, BobSpec};
use eprcoin::io::{
    decode_message, encode_message, render_result, replay, DecodeContext, ReplayError, TranscriptFile,
};
use eprcoin::protocol::{run_with_specs, Bit, CoinOutcome, DesignatedRule, Envelope, Message, Sender, SessionConfig};
use eprcoin::qstate::{Axis, SpinOutcome};
use proptest::prelude::*;

const GOLDEN: &str = include_str!("data/golden_honest.eprt");

fn golden_config() -> SessionConfig {
    SessionConfig::new(20, 42)
}

fn tamper_line(text: &str, seq: u64, from: &str, to: &str) -> String {
    let prefix = format!("REC s42 {seq} ");
    text.lines()
        .map(|l| {
            if l.starts_with(&prefix) {
                l.replacen(from, to, 1)
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

#[test]
fn golden_regenerates_byte_for_byte() {
    let r = run_with_specs(golden_config(), &AliceSpec::Honest, &BobSpec::Honest).unwrap();
    assert_eq!(render_result(&r), GOLDEN);
}

#[test]
fn golden_round_trips() {
    let file = TranscriptFile::parse(GOLDEN).unwrap();
    assert_eq!(file.render(), GOLDEN);
    let ctx = DecodeContext { n: Some(20) };
    for (line, env) in GOLDEN.lines().skip(1).zip(&file.records) {
        let (sid, decoded) = decode_message(line, &ctx).unwrap();
        assert_eq!(sid, "s42");
        assert_eq!(&decoded, env);
        assert_eq!(encode_message(&sid, &decoded), line);
    }
    let r = run_with_specs(golden_config(), &AliceSpec::Honest, &BobSpec::Honest).unwrap();
    assert_eq!(file.records, r.transcript);
}

#[test]
fn golden_replays_to_its_end_line() {
    let file = TranscriptFile::parse(GOLDEN).unwrap();
    let r = replay(&file).unwrap();
    assert_eq!(r.outcome, file.end.outcome);
    assert_eq!(r.designated_index, file.end.designated);
    assert_eq!(render_result(&r), GOLDEN);
}

#[test]
fn flipped_verification_result_diverges_at_verify_status() {
    let seq4 = GOLDEN.lines().find(|l| l.starts_with("REC s42 4 ")).unwrap();
    let (from, to) = if seq4.contains(" +1") { (" +1", " -1") } else { (" -1", " +1") };
    let tampered = tamper_line(GOLDEN, 4, from, to);
    assert_ne!(tampered, GOLDEN);
    let file = TranscriptFile::parse(&tampered).unwrap();
    let err = replay(&file).unwrap_err();
    assert_eq!(err.seq(), 6, "{err}");
}

#[test]
fn flipped_final_result_is_caught() {
    for seq in [8, 10] {
        let line = GOLDEN.lines().find(|l| l.starts_with(&format!("REC s42 {seq} "))).unwrap();
        let (from, to) = if line.contains(" +1") { (" +1", " -1") } else { (" -1", " +1") };
        let tampered = tamper_line(GOLDEN, seq, from, to);
        let file = TranscriptFile::parse(&tampered).unwrap();
        assert!(matches!(replay(&file), Err(ReplayError::Mismatch { .. })), "seq {seq}");
    }
}

#[test]
fn wrong_end_line_is_caught() {
    let flipped = GOLDEN.replace("\nEND 0 1\n", "\nEND 1 1\n");
    assert_ne!(flipped, GOLDEN);
    let file = TranscriptFile::parse(&flipped).unwrap();
    assert!(replay(&file).is_err());
}

#[test]
fn aborted_transcript_replays() {
    let mut found = false;
    for seed in 0..20 {
        let r = run_with_specs(
            SessionConfig::new(20, seed),
            &AliceSpec::Honest,
            &BobSpec::PremeasureAll { target: Bit::One },
        )
        .unwrap();
        if !r.is_abort() {
            continue;
        }
        found = true;
        let text = render_result(&r);
        assert!(text.ends_with("END ABORT -\n"));
        assert!(text.contains("VERIFY_STATUS fail"));
        let file = TranscriptFile::parse(&text).unwrap();
        let replayed = replay(&file).unwrap();
        assert_eq!(replayed.outcome, CoinOutcome::Abort);
        assert_eq!(replayed.transcript.len(), r.transcript.len());
    }
    assert!(found);
}

#[test]
fn every_configuration_replays() {
    let alices = [AliceSpec::Honest, AliceSpec::NaiveNoLock, AliceSpec::MixedProduct { fraction: 0.5 }];
    let bobs = [
        BobSpec::Honest,
        BobSpec::ZAxisSelect { target: Bit::Zero },
        BobSpec::PremeasureAll { target: Bit::One },
        BobSpec::PremeasureUnverified { target: Bit::One },
    ];
    for alice in &alices {
        for bob in &bobs {
            for rule in [DesignatedRule::FixedFirst, DesignatedRule::BobChooses, DesignatedRule::PublicRandom] {
                for seed in 0..5 {
                    let r = run_with_specs(SessionConfig::new(8, seed).with_rule(rule), alice, bob).unwrap();
                    let text = render_result(&r);
                    let file = TranscriptFile::parse(&text).unwrap();
                    assert_eq!(file.render(), text);
                    let back = replay(&file).unwrap_or_else(|e| panic!("{alice} {bob} {rule}: {e}"));
                    assert_eq!(render_result(&back), text);
                }
            }
        }
    }
}

#[test]
fn grammar_violations_are_rejected() {
    assert!(TranscriptFile::parse(&format!("\u{feff}{GOLDEN}")).is_err());
    assert!(TranscriptFile::parse(&GOLDEN.replace('\n', "\r\n")).is_err());
    assert!(TranscriptFile::parse(GOLDEN.trim_end_matches('\n')).is_err());
    let gap: String = GOLDEN
        .lines()
        .filter(|l| !l.starts_with("REC s42 2 "))
        .map(|l| format!("{l}\n"))
        .collect();
    assert!(TranscriptFile::parse(&gap).is_err());
    assert!(TranscriptFile::parse(&GOLDEN.replace("REC s42 5 ", "REC s43 5 ")).is_err());
    assert!(TranscriptFile::parse(&GOLDEN.replacen("seed=42", "seed=43", 1)).is_err());
    assert!(TranscriptFile::parse(&GOLDEN.replacen("EPRCOIN v1", "EPRCOIN v2", 1)).is_err());
    assert!(TranscriptFile::parse(&GOLDEN.replacen("n=20", "n=21", 1)).is_err());
    let no_end: String = GOLDEN.lines().filter(|l| !l.starts_with("END")).map(|l| format!("{l}\n")).collect();
    assert!(TranscriptFile::parse(&no_end).is_err());
}

#[test]
fn parse_errors_name_line_and_field() {
    let bad = GOLDEN.replacen("BOB CHALLENGE 0,2,", "BOB CHALLENGE 0,2,2,", 1);
    let e = TranscriptFile::parse(&bad).unwrap_err();
    assert_eq!(e.line, 3);
    assert_eq!(e.field, "challenge");
}

fn axis_strategy() -> impl Strategy<Value = Axis> {
    (-1.0f64..=1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, phi)| Axis::from_height_azimuth(z, phi))
}

fn outcome_strategy() -> impl Strategy<Value = SpinOutcome> {
    prop_oneof![Just(SpinOutcome::Up), Just(SpinOutcome::Down)]
}

fn message_strategy(n: usize) -> impl Strategy<Value = (Sender, Message)> {
    let half = n / 2;
    let subset = proptest::sample::subsequence((0..n).collect::<Vec<_>>(), half);
    prop_oneof![
        Just((Sender::Alice, Message::Particles { n })),
        subset
            .clone()
            .prop_map(|v| (Sender::Bob, Message::Challenge { indices: v.into_iter().collect() })),
        Just((Sender::Alice, Message::UnlockDone)),
        (subset.clone(), proptest::collection::vec(axis_strategy(), half))
            .prop_map(|(idx, axes)| (Sender::Bob, Message::Axes(idx.into_iter().zip(axes).collect()))),
        (subset.clone(), proptest::collection::vec(outcome_strategy(), half), any::<bool>()).prop_map(
            |(idx, outs, alice)| {
                let s = if alice { Sender::Alice } else { Sender::Bob };
                (s, Message::Results(idx.into_iter().zip(outs).collect()))
            }
        ),
        any::<bool>().prop_map(|ok| (Sender::Bob, Message::VerifyStatus { ok })),
        Just((Sender::Alice, Message::FinalUnlockDone)),
        (0..n, outcome_strategy(), any::<bool>()).prop_map(|(index, outcome, bob)| {
            let s = if bob { Sender::Bob } else { Sender::Public };
            (s, Message::OutcomeClaim { index, outcome })
        }),
    ]
}

proptest! {
    #[test]
    fn decode_inverts_encode(
        (n, seq, (sender, message)) in (1usize..12)
            .prop_flat_map(|h| (Just(2 * h), 0u64..20, message_strategy(2 * h)))
    ) {
        let env = Envelope { seq, sender, message };
        let line = encode_message("s7", &env);
        let (sid, back) = decode_message(&line, &DecodeContext { n: Some(n) }).unwrap();
        prop_assert_eq!(sid, "s7");
        prop_assert_eq!(encode_message("s7", &back), line);
        prop_assert_eq!(back, env);
    }

    #[test]
    fn any_session_round_trips(seed in any::<u64>(), h in 1usize..12) {
        let r = run_with_specs(SessionConfig::new(2 * h, seed), &AliceSpec::Honest, &BobSpec::Honest).unwrap();
        let text = render_result(&r);
        let file = TranscriptFile::parse(&text).unwrap();
        prop_assert_eq!(file.render(), text.clone());
        prop_assert_eq!(render_result(&replay(&file).unwrap()), text);
    }
}
