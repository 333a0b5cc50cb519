//! Canonical text encoding of messages and transcripts (`.eprt`), and replay.
//!
//! A transcript file is UTF-8 with LF line endings and no BOM:
//!
//! ```text
//! EPRCOIN v1 n=<n> seed=<seed> rule=<fixed|bob|random> bell=<psi-|psi+> verify=<on|off> alice=<spec> bob=<spec>
//! REC <session-id> <seq> <ALICE|BOB|PUBLIC> <msg-type> <payload...>
//! ...
//! END <0|1|ABORT> <designated-index|->
//! ```
//!
//! The session id is `s<seed>`. Payloads:
//!
//! | type              | payload                                   |
//! |-------------------|-------------------------------------------|
//! | PARTICLES         | `<n>`                                     |
//! | CHALLENGE         | `i,j,...` ascending                       |
//! | UNLOCK_DONE       | (none)                                    |
//! | AXES              | `<i> <x> <y> <z>` per entry, ascending i  |
//! | RESULTS           | `<i> <+1|-1>` per entry, ascending i      |
//! | VERIFY_STATUS     | `ok` or `fail`                            |
//! | FINAL_UNLOCK_DONE | (none)                                    |
//! | OUTCOME_CLAIM     | `<i> <+1|-1>`                             |
//!
//! Reals use 17 significant digits in lowercase scientific notation
//! (`format!("{:.16e}")`, e.g. `1.0000000000000000e0`). Only the canonical
//! spelling of each token is accepted, so `encode(decode(line)) == line` for
//! every line that decodes.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::adversary::{AliceSpec, BobSpec};
use crate::protocol::{
    draw_public_index, substream, verification_passes, AbortReason, CoinOutcome,
    DesignatedRule, Envelope, FinalBell, FinalPairBits, Message, Sender, SessionConfig,
    SessionResult, Substream, Verification,
};
use crate::qstate::{Axis, SpinOutcome};

pub const FILE_EXTENSION: &str = "eprt";
const MAGIC: &str = "EPRCOIN";
const VERSION: &str = "v1";
/// Norm deviation accepted for a decoded axis.
const AXIS_PARSE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, field `{field}` (token {position}): {reason}")]
pub struct ParseError {
    /// 1-based line number in the file; 0 when decoding a lone record.
    pub line: usize,
    pub field: &'static str,
    /// 0-based token index within the line.
    pub position: usize,
    pub reason: String,
}

fn perr(field: &'static str, position: usize, reason: impl Into<String>) -> ParseError {
    ParseError {
        line: 0,
        field,
        position,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("replay mismatch at seq {seq}: {detail}")]
    Mismatch { seq: u64, detail: String },
}

impl ReplayError {
    pub fn seq(&self) -> u64 {
        match self {
            ReplayError::Mismatch { seq, .. } => *seq,
        }
    }
}

pub fn session_id(seed: u64) -> String {
    format!("s{seed}")
}

pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_real(tok: &str, field: &'static str, pos: usize) -> Result<f64, ParseError> {
    let x: f64 = tok
        .parse()
        .map_err(|_| perr(field, pos, format!("`{tok}` is not a real number")))?;
    if !x.is_finite() {
        return Err(perr(field, pos, "non-finite real"));
    }
    if format_real(x) != tok {
        return Err(perr(field, pos, format!("`{tok}` is not in canonical form")));
    }
    Ok(x)
}

fn parse_uint<T: std::str::FromStr + ToString>(
    tok: &str,
    field: &'static str,
    pos: usize,
) -> Result<T, ParseError> {
    let v: T = tok
        .parse()
        .map_err(|_| perr(field, pos, format!("`{tok}` is not an unsigned integer")))?;
    if v.to_string() != tok {
        return Err(perr(field, pos, format!("`{tok}` is not in canonical form")));
    }
    Ok(v)
}

fn format_outcome(o: SpinOutcome) -> &'static str {
    match o {
        SpinOutcome::Up => "+1",
        SpinOutcome::Down => "-1",
    }
}

fn parse_outcome(tok: &str, pos: usize) -> Result<SpinOutcome, ParseError> {
    match tok {
        "+1" => Ok(SpinOutcome::Up),
        "-1" => Ok(SpinOutcome::Down),
        _ => Err(perr("outcome", pos, format!("expected +1 or -1, got `{tok}`"))),
    }
}

fn parse_sender(tok: &str, pos: usize) -> Result<Sender, ParseError> {
    match tok {
        "ALICE" => Ok(Sender::Alice),
        "BOB" => Ok(Sender::Bob),
        "PUBLIC" => Ok(Sender::Public),
        _ => Err(perr("sender", pos, format!("unknown sender `{tok}`"))),
    }
}

/// Decoding context: the pair count from the header, when known.
#[derive(Debug, Clone, Copy, Default)]
pub struct DecodeContext {
    pub n: Option<usize>,
}

/// One `REC` line, without its trailing newline.
pub fn encode_message(session: &str, env: &Envelope) -> String {
    let mut out = format!(
        "REC {session} {} {} {}",
        env.seq,
        env.sender,
        env.message.type_name()
    );
    let mut push = |s: &str| {
        out.push(' ');
        out.push_str(s);
    };
    match &env.message {
        Message::Particles { n } => push(&n.to_string()),
        Message::Challenge { indices } => {
            let list: Vec<String> = indices.iter().map(|i| i.to_string()).collect();
            push(&list.join(","));
        }
        Message::UnlockDone | Message::FinalUnlockDone => {}
        Message::Axes(entries) => {
            for (i, a) in entries {
                push(&i.to_string());
                for c in a.components() {
                    push(&format_real(c));
                }
            }
        }
        Message::Results(entries) => {
            for (i, o) in entries {
                push(&i.to_string());
                push(format_outcome(*o));
            }
        }
        Message::VerifyStatus { ok } => push(if *ok { "ok" } else { "fail" }),
        Message::OutcomeClaim { index, outcome } => {
            push(&index.to_string());
            push(format_outcome(*outcome));
        }
    }
    out
}

fn check_index(i: usize, ctx: &DecodeContext, pos: usize) -> Result<(), ParseError> {
    if let Some(n) = ctx.n {
        if i >= n {
            return Err(perr("index", pos, format!("index {i} out of range for n={n}")));
        }
    }
    Ok(())
}

/// Parses one `REC` line. Returns the session id and the envelope.
pub fn decode_message(line: &str, ctx: &DecodeContext) -> Result<(String, Envelope), ParseError> {
    let toks: Vec<&str> = line.split(' ').collect();
    if toks.len() < 5 {
        return Err(perr("record", toks.len(), "expected `REC <session> <seq> <sender> <type>`"));
    }
    if toks[0] != "REC" {
        return Err(perr("tag", 0, format!("expected REC, got `{}`", toks[0])));
    }
    let session = toks[1];
    if session.is_empty() {
        return Err(perr("session-id", 1, "empty session id"));
    }
    let seq: u64 = parse_uint(toks[2], "seq", 2)?;
    let sender = parse_sender(toks[3], 3)?;
    let payload = &toks[5..];
    let base = 5;
    let arity = |want: usize| -> Result<(), ParseError> {
        if payload.len() != want {
            return Err(perr(
                "payload",
                base + payload.len().min(want),
                format!("{} expects {want} payload tokens, got {}", toks[4], payload.len()),
            ));
        }
        Ok(())
    };
    let message = match toks[4] {
        "PARTICLES" => {
            arity(1)?;
            let n: usize = parse_uint(payload[0], "n", base)?;
            if let Some(want) = ctx.n {
                if n != want {
                    return Err(perr("n", base, format!("PARTICLES {n} but header n={want}")));
                }
            }
            Message::Particles { n }
        }
        "CHALLENGE" => {
            arity(1)?;
            let mut indices = BTreeSet::new();
            let mut prev: Option<usize> = None;
            for part in payload[0].split(',') {
                let i: usize = parse_uint(part, "challenge", base)?;
                if prev.is_some_and(|p| p >= i) {
                    return Err(perr("challenge", base, "indices must be strictly ascending"));
                }
                check_index(i, ctx, base)?;
                prev = Some(i);
                indices.insert(i);
            }
            if let Some(n) = ctx.n {
                if indices.len() != n / 2 {
                    return Err(perr(
                        "challenge",
                        base,
                        format!("cardinality {} but n/2 = {}", indices.len(), n / 2),
                    ));
                }
            }
            Message::Challenge { indices }
        }
        "UNLOCK_DONE" => {
            arity(0)?;
            Message::UnlockDone
        }
        "FINAL_UNLOCK_DONE" => {
            arity(0)?;
            Message::FinalUnlockDone
        }
        "AXES" => {
            if payload.is_empty() || !payload.len().is_multiple_of(4) {
                return Err(perr("payload", base, "AXES expects groups of `<i> <x> <y> <z>`"));
            }
            let mut entries = Vec::with_capacity(payload.len() / 4);
            let mut prev: Option<usize> = None;
            for (k, g) in payload.chunks(4).enumerate() {
                let pos = base + 4 * k;
                let i: usize = parse_uint(g[0], "index", pos)?;
                check_index(i, ctx, pos)?;
                if prev.is_some_and(|p| p >= i) {
                    return Err(perr("index", pos, "indices must be strictly ascending"));
                }
                prev = Some(i);
                let x = parse_real(g[1], "axis.x", pos + 1)?;
                let y = parse_real(g[2], "axis.y", pos + 2)?;
                let z = parse_real(g[3], "axis.z", pos + 3)?;
                let axis = Axis::with_tolerance(x, y, z, AXIS_PARSE_TOLERANCE)
                    .map_err(|_| perr("axis", pos + 1, "axis is not unit length"))?;
                entries.push((i, axis));
            }
            Message::Axes(entries)
        }
        "RESULTS" => {
            if payload.is_empty() || !payload.len().is_multiple_of(2) {
                return Err(perr("payload", base, "RESULTS expects pairs of `<i> <+1|-1>`"));
            }
            let mut entries = Vec::with_capacity(payload.len() / 2);
            let mut prev: Option<usize> = None;
            for (k, g) in payload.chunks(2).enumerate() {
                let pos = base + 2 * k;
                let i: usize = parse_uint(g[0], "index", pos)?;
                check_index(i, ctx, pos)?;
                if prev.is_some_and(|p| p >= i) {
                    return Err(perr("index", pos, "indices must be strictly ascending"));
                }
                prev = Some(i);
                entries.push((i, parse_outcome(g[1], pos + 1)?));
            }
            Message::Results(entries)
        }
        "VERIFY_STATUS" => {
            arity(1)?;
            match payload[0] {
                "ok" => Message::VerifyStatus { ok: true },
                "fail" => Message::VerifyStatus { ok: false },
                t => return Err(perr("status", base, format!("expected ok or fail, got `{t}`"))),
            }
        }
        "OUTCOME_CLAIM" => {
            arity(2)?;
            let index: usize = parse_uint(payload[0], "index", base)?;
            check_index(index, ctx, base)?;
            Message::OutcomeClaim {
                index,
                outcome: parse_outcome(payload[1], base + 1)?,
            }
        }
        t => return Err(perr("msg-type", 4, format!("unknown message type `{t}`"))),
    };
    Ok((
        session.to_string(),
        Envelope {
            seq,
            sender,
            message,
        },
    ))
}

/// Everything the header line records.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptHeader {
    pub config: SessionConfig,
    pub alice: AliceSpec,
    pub bob: BobSpec,
}

impl fmt::Display for TranscriptHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        write!(
            f,
            "{MAGIC} {VERSION} n={} seed={} rule={} bell={} verify={} alice={} bob={}",
            c.n, c.seed, c.designated_rule, c.final_bell, c.verification, self.alice, self.bob
        )
    }
}

impl TranscriptHeader {
    pub fn parse(line: &str) -> Result<Self, ParseError> {
        let toks: Vec<&str> = line.split(' ').collect();
        if toks.first() != Some(&MAGIC) {
            return Err(perr("magic", 0, format!("expected {MAGIC}")));
        }
        if toks.get(1) != Some(&VERSION) {
            return Err(perr("version", 1, format!("expected {VERSION}")));
        }
        const KEYS: [&str; 7] = ["n", "seed", "rule", "bell", "verify", "alice", "bob"];
        if toks.len() != 2 + KEYS.len() {
            return Err(perr("header", toks.len(), "wrong number of header fields"));
        }
        let mut vals = [""; 7];
        for (k, key) in KEYS.iter().enumerate() {
            let pos = 2 + k;
            let v = toks[pos]
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| perr(key, pos, format!("expected `{key}=...`")))?;
            vals[k] = v;
        }
        let n: usize = parse_uint(vals[0], "n", 2)?;
        let seed: u64 = parse_uint(vals[1], "seed", 3)?;
        let rule: DesignatedRule = vals[2].parse().map_err(|e: String| perr("rule", 4, e))?;
        let bell: FinalBell = vals[3].parse().map_err(|e: String| perr("bell", 5, e))?;
        let verify: Verification = vals[4].parse().map_err(|e: String| perr("verify", 6, e))?;
        let alice: AliceSpec = vals[5].parse().map_err(|e| perr("alice", 7, format!("{e}")))?;
        let bob: BobSpec = vals[6].parse().map_err(|e| perr("bob", 8, format!("{e}")))?;
        let config = SessionConfig::new(n, seed)
            .with_rule(rule)
            .with_bell(bell)
            .with_verification(verify);
        config.validate().map_err(|e| perr("n", 2, e.to_string()))?;
        let header = TranscriptHeader { config, alice, bob };
        if header.to_string() != line {
            return Err(perr("header", 0, "header is not in canonical form"));
        }
        Ok(header)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TranscriptEnd {
    pub outcome: CoinOutcome,
    pub designated: Option<usize>,
}

impl fmt::Display for TranscriptEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("END ")?;
        match self.outcome {
            CoinOutcome::Bit(b) => write!(f, "{b}")?,
            CoinOutcome::Abort => f.write_str("ABORT")?,
        }
        match self.designated {
            Some(i) => write!(f, " {i}"),
            None => f.write_str(" -"),
        }
    }
}

impl TranscriptEnd {
    pub fn parse(line: &str) -> Result<Self, ParseError> {
        let toks: Vec<&str> = line.split(' ').collect();
        if toks.len() != 3 || toks[0] != "END" {
            return Err(perr("end", 0, "expected `END <outcome> <index>`"));
        }
        let outcome = match toks[1] {
            "ABORT" => CoinOutcome::Abort,
            t => CoinOutcome::Bit(t.parse().map_err(|e: String| perr("outcome", 1, e))?),
        };
        let designated = match toks[2] {
            "-" => None,
            t => Some(parse_uint(t, "designated-index", 2)?),
        };
        match (outcome, designated) {
            (CoinOutcome::Abort, Some(_)) => {
                Err(perr("designated-index", 2, "aborted session has no designated pair"))
            }
            (CoinOutcome::Bit(_), None) => {
                Err(perr("designated-index", 2, "completed session needs a designated pair"))
            }
            _ => Ok(TranscriptEnd {
                outcome,
                designated,
            }),
        }
    }
}

/// A complete `.eprt` file.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptFile {
    pub header: TranscriptHeader,
    pub records: Vec<Envelope>,
    pub end: TranscriptEnd,
}

impl TranscriptFile {
    pub fn from_result(r: &SessionResult) -> Self {
        TranscriptFile {
            header: TranscriptHeader {
                config: r.config,
                alice: r.alice,
                bob: r.bob,
            },
            records: r.transcript.clone(),
            end: TranscriptEnd {
                outcome: r.outcome,
                designated: r.designated_index,
            },
        }
    }

    pub fn session_id(&self) -> String {
        session_id(self.header.config.seed)
    }

    /// Canonical file text; every line, including the last, ends in LF.
    pub fn render(&self) -> String {
        let sid = self.session_id();
        let mut out = self.header.to_string();
        out.push('\n');
        for env in &self.records {
            out.push_str(&encode_message(&sid, env));
            out.push('\n');
        }
        out.push_str(&self.end.to_string());
        out.push('\n');
        out
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let at = |line: usize| move |mut e: ParseError| {
            e.line = line;
            e
        };
        if text.starts_with('\u{feff}') {
            return Err(at(1)(perr("file", 0, "byte-order mark not allowed")));
        }
        if text.contains('\r') {
            return Err(at(1)(perr("file", 0, "CR line endings not allowed")));
        }
        let body = text
            .strip_suffix('\n')
            .ok_or_else(|| at(1)(perr("file", 0, "file must end with a newline")))?;
        let lines: Vec<&str> = body.split('\n').collect();
        if lines.len() < 2 {
            return Err(at(1)(perr("file", 0, "missing header or END line")));
        }
        let header = TranscriptHeader::parse(lines[0]).map_err(at(1))?;
        let sid = session_id(header.config.seed);
        let ctx = DecodeContext {
            n: Some(header.config.n),
        };
        let last = lines.len() - 1;
        let mut records = Vec::with_capacity(last.saturating_sub(1));
        for (k, line) in lines[1..last].iter().enumerate() {
            let lineno = k + 2;
            let (s, env) = decode_message(line, &ctx).map_err(at(lineno))?;
            if s != sid {
                return Err(at(lineno)(perr(
                    "session-id",
                    1,
                    format!("`{s}` does not match header session `{sid}`"),
                )));
            }
            if env.seq != k as u64 {
                return Err(at(lineno)(perr(
                    "seq",
                    2,
                    format!("expected seq {k}, got {}", env.seq),
                )));
            }
            if encode_message(&sid, &env) != *line {
                return Err(at(lineno)(perr("record", 0, "record is not in canonical form")));
            }
            records.push(env);
        }
        let end = TranscriptEnd::parse(lines[last]).map_err(at(last + 1))?;
        Ok(TranscriptFile {
            header,
            records,
            end,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    Particles,
    Challenge,
    UnlockDone,
    Axes,
    AliceChecks,
    BobChecks,
    VerifyStatus,
    FinalUnlockDone,
    BobFinal,
    Claim,
    AliceFinal,
    Finished,
    FinishedAborted,
}

/// Re-derives every public value of a recorded session from its recorded
/// inputs and compares. Measurement outcomes are taken from the record.
///
/// Recomputed values: the pair count, the challenge/final partition, that
/// axes and results cover exactly the challenged pairs, the verification
/// status, the designated index (fixed and public-random rules), the claimed
/// outcome, the coin, and (for Alice strategies that always unlock to a
/// singlet or triplet) z anti-correlation of every final pair.
pub fn replay(t: &TranscriptFile) -> Result<SessionResult, ReplayError> {
    let cfg = t.header.config;
    let n = cfg.n;
    let mismatch = |seq: u64, detail: String| ReplayError::Mismatch { seq, detail };

    let mut expect = Expect::Particles;
    let mut challenge: Vec<usize> = Vec::new();
    let mut finals: Vec<usize> = Vec::new();
    let mut alice_check: Vec<(usize, SpinOutcome)> = Vec::new();
    let mut bob_final: Vec<(usize, SpinOutcome)> = Vec::new();
    let mut alice_final: Vec<(usize, SpinOutcome)> = Vec::new();
    let mut designated: Option<usize> = None;
    let mut verify_mismatches = 0usize;

    let indices = |entries: &[(usize, SpinOutcome)]| entries.iter().map(|e| e.0).collect::<Vec<_>>();

    for env in &t.records {
        let seq = env.seq;
        let want_sender = |s: Sender| -> Result<(), ReplayError> {
            if env.sender != s {
                return Err(mismatch(
                    seq,
                    format!("{} sent by {}, expected {}", env.message.type_name(), env.sender, s),
                ));
            }
            Ok(())
        };
        let unexpected = || {
            mismatch(
                seq,
                format!("unexpected {} in state {:?}", env.message.type_name(), expect),
            )
        };
        match (expect, &env.message) {
            (Expect::Particles, Message::Particles { n: got }) => {
                want_sender(Sender::Alice)?;
                if *got != n {
                    return Err(mismatch(seq, format!("PARTICLES {got}, header n={n}")));
                }
                expect = Expect::Challenge;
            }
            (Expect::Challenge, Message::Challenge { indices: set }) => {
                want_sender(Sender::Bob)?;
                challenge = set.iter().copied().collect();
                finals = (0..n).filter(|i| !set.contains(i)).collect();
                if challenge.len() != n / 2 {
                    return Err(mismatch(seq, "challenge is not an n/2 subset".into()));
                }
                expect = Expect::UnlockDone;
            }
            (Expect::UnlockDone, Message::UnlockDone) => {
                want_sender(Sender::Alice)?;
                expect = Expect::Axes;
            }
            (Expect::Axes, Message::Axes(entries)) => {
                want_sender(Sender::Bob)?;
                let got: Vec<usize> = entries.iter().map(|e| e.0).collect();
                if got != challenge {
                    return Err(mismatch(seq, "axes do not cover exactly the challenge".into()));
                }
                expect = Expect::AliceChecks;
            }
            (Expect::AliceChecks, Message::Results(entries)) => {
                want_sender(Sender::Alice)?;
                if indices(entries) != challenge {
                    return Err(mismatch(seq, "results do not cover exactly the challenge".into()));
                }
                alice_check = entries.clone();
                expect = Expect::BobChecks;
            }
            (Expect::BobChecks, Message::Results(entries)) => {
                want_sender(Sender::Bob)?;
                if indices(entries) != challenge {
                    return Err(mismatch(seq, "results do not cover exactly the challenge".into()));
                }
                verify_mismatches = alice_check
                    .iter()
                    .zip(entries)
                    .filter(|(a, b)| a.1 == b.1)
                    .count();
                expect = Expect::VerifyStatus;
            }
            (Expect::VerifyStatus, Message::VerifyStatus { ok }) => {
                want_sender(Sender::Bob)?;
                let recomputed = verification_passes(cfg.verification, verify_mismatches);
                if recomputed != *ok {
                    return Err(mismatch(
                        seq,
                        format!(
                            "recorded VERIFY_STATUS {}, recomputed {} ({verify_mismatches} correlated pairs)",
                            if *ok { "ok" } else { "fail" },
                            if recomputed { "ok" } else { "fail" }
                        ),
                    ));
                }
                expect = if *ok {
                    Expect::FinalUnlockDone
                } else {
                    Expect::FinishedAborted
                };
            }
            (Expect::FinalUnlockDone, Message::FinalUnlockDone) => {
                want_sender(Sender::Alice)?;
                expect = Expect::BobFinal;
            }
            (Expect::BobFinal, Message::Results(entries)) => {
                want_sender(Sender::Bob)?;
                if indices(entries) != finals {
                    return Err(mismatch(seq, "final results do not cover the final set".into()));
                }
                bob_final = entries.clone();
                expect = Expect::Claim;
            }
            (Expect::Claim, Message::OutcomeClaim { index, outcome }) => {
                let (sender, want_index) = match cfg.designated_rule {
                    DesignatedRule::FixedFirst => (Sender::Public, Some(finals[0])),
                    DesignatedRule::PublicRandom => {
                        let mut public = substream(cfg.seed, Substream::Public);
                        (Sender::Public, Some(draw_public_index(&mut public, &finals)))
                    }
                    DesignatedRule::BobChooses => (Sender::Bob, None),
                };
                want_sender(sender)?;
                if let Some(w) = want_index {
                    if w != *index {
                        return Err(mismatch(
                            seq,
                            format!("designated index {index}, recomputed {w}"),
                        ));
                    }
                }
                let Some(&(_, bob_o)) = bob_final.iter().find(|e| e.0 == *index) else {
                    return Err(mismatch(seq, format!("designated index {index} is not a final pair")));
                };
                if bob_o != *outcome {
                    return Err(mismatch(seq, "claimed outcome differs from Bob's final result".into()));
                }
                designated = Some(*index);
                expect = Expect::AliceFinal;
            }
            (Expect::AliceFinal, Message::Results(entries)) => {
                want_sender(Sender::Alice)?;
                if indices(entries) != finals {
                    return Err(mismatch(seq, "final results do not cover the final set".into()));
                }
                if matches!(t.header.alice, AliceSpec::Honest | AliceSpec::NaiveNoLock) {
                    if let Some((i, _)) = entries
                        .iter()
                        .zip(&bob_final)
                        .find(|(a, b)| a.1 == b.1)
                        .map(|(a, _)| *a)
                    {
                        return Err(mismatch(
                            seq,
                            format!("final pair {i} is not anti-correlated along z"),
                        ));
                    }
                }
                alice_final = entries.clone();
                expect = Expect::Finished;
            }
            _ => return Err(unexpected()),
        }
    }

    let end_seq = t.records.len() as u64;
    let conv = cfg.bit_convention;
    let (outcome, abort_reason) = match expect {
        Expect::Finished => {
            let idx = designated.expect("set with claim");
            let a = alice_final.iter().find(|e| e.0 == idx).expect("final pair").1;
            (CoinOutcome::Bit(conv.bit(a)), None)
        }
        Expect::FinishedAborted => (
            CoinOutcome::Abort,
            Some(AbortReason::VerificationFailed {
                mismatches: verify_mismatches,
            }),
        ),
        // The two points where Bob can send something malformed, which is
        // dropped rather than recorded.
        Expect::Challenge if t.end.outcome == CoinOutcome::Abort => (
            CoinOutcome::Abort,
            Some(AbortReason::MalformedChallenge("not recorded".into())),
        ),
        Expect::Claim
            if cfg.designated_rule == DesignatedRule::BobChooses
                && t.end.outcome == CoinOutcome::Abort =>
        {
            (
                CoinOutcome::Abort,
                Some(AbortReason::MalformedClaim("not recorded".into())),
            )
        }
        other => {
            return Err(mismatch(
                end_seq,
                format!("transcript ends in state {other:?} with {}", t.end),
            ))
        }
    };
    let recomputed_end = TranscriptEnd {
        outcome,
        designated: match outcome {
            CoinOutcome::Bit(_) => designated,
            CoinOutcome::Abort => None,
        },
    };
    if recomputed_end != t.end {
        return Err(mismatch(
            end_seq,
            format!("recorded `{}`, recomputed `{}`", t.end, recomputed_end),
        ));
    }

    let final_pair_bits = if matches!(outcome, CoinOutcome::Bit(_)) {
        alice_final
            .iter()
            .zip(&bob_final)
            .map(|(a, b)| FinalPairBits {
                index: a.0,
                alice_bit: conv.bit(a.1),
                bob_bit: conv.bit(b.1),
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(SessionResult {
        config: cfg,
        alice: t.header.alice,
        bob: t.header.bob,
        outcome,
        designated_index: recomputed_end.designated,
        transcript: t.records.clone(),
        final_pair_bits,
        abort_reason,
    })
}

/// Convenience: the canonical file text for a finished session.
pub fn render_result(r: &SessionResult) -> String {
    TranscriptFile::from_result(r).render()
}
