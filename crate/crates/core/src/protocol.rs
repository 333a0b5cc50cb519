//! The coin-tossing session as a phase-tagged state machine.
//!
//! A [`Session`] owns every pair's joint state, Alice's private lock record,
//! the transcript, and four independent random substreams derived from the
//! session seed (see [`substream`]). Parties act only through the hooks of
//! [`AliceStrategy`] and [`BobStrategy`]; Bob touches his particles only
//! through [`BobLab`].
//!
//! Message flow of a completed session:
//!
//! ```text
//! seq  sender  message              phase after
//! 0    ALICE   PARTICLES n          LOCKED_AND_SENT
//! 1    BOB     CHALLENGE i,j,...    CHALLENGED
//! 2    ALICE   UNLOCK_DONE          SUBSET_UNLOCKED
//! 3    BOB     AXES                 .
//! 4    ALICE   RESULTS (challenge)  .
//! 5    BOB     RESULTS (challenge)  RESULTS_EXCHANGED
//! 6    BOB     VERIFY_STATUS        VERIFIED | ABORTED
//! 7    ALICE   FINAL_UNLOCK_DONE    FINAL_UNLOCKED
//! 8    BOB     RESULTS (final, z)   .
//! 9    BOB|PUBLIC OUTCOME_CLAIM     .
//! 10   ALICE   RESULTS (final, z)   DONE
//! ```
//!
//! Bob publishes his final z results and the designated pair before Alice
//! reveals hers, so a Bob-chosen designation can only use what Bob himself
//! observed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adversary::{AliceSpec, AliceStrategy, BobSpec, BobStrategy, LockRecord, UnlockStage};
use crate::qstate::{Axis, BellKind, Particle, PauliOp, PureTwoQubitState, SpinOutcome};

pub type StreamRng = ChaCha8Rng;

/// ChaCha stream ids used inside one session seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    Alice = 1,
    Bob = 2,
    Public = 3,
    /// Born-rule draws for every measurement, by either party.
    Nature = 4,
}

/// `ChaCha8Rng::seed_from_u64(seed)` with its stream set to the substream id.
pub fn substream(seed: u64, which: Substream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("step `{step}` called in phase {phase}")]
    OutOfOrder { step: &'static str, phase: ProtocolPhase },
}

/// A coin value. `Up ↦ 0`, `Down ↦ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bit {
    Zero,
    One,
}

impl Bit {
    pub fn as_u8(self) -> u8 {
        match self {
            Bit::Zero => 0,
            Bit::One => 1,
        }
    }

    pub fn flip(self) -> Bit {
        match self {
            Bit::Zero => Bit::One,
            Bit::One => Bit::Zero,
        }
    }
}

impl fmt::Display for Bit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

impl FromStr for Bit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "0" => Ok(Bit::Zero),
            "1" => Ok(Bit::One),
            other => Err(format!("expected bit 0 or 1, got `{other}`")),
        }
    }
}

/// The publicly declared spin-to-bit mapping. Only `UP ↦ 0, DOWN ↦ 1` exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BitConvention {
    #[default]
    UpZeroDownOne,
}

impl BitConvention {
    pub fn bit(self, o: SpinOutcome) -> Bit {
        match (self, o) {
            (BitConvention::UpZeroDownOne, SpinOutcome::Up) => Bit::Zero,
            (BitConvention::UpZeroDownOne, SpinOutcome::Down) => Bit::One,
        }
    }

    pub fn outcome(self, b: Bit) -> SpinOutcome {
        match b {
            Bit::Zero => SpinOutcome::Up,
            Bit::One => SpinOutcome::Down,
        }
    }
}

/// How the coin-defining pair is picked from the final set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DesignatedRule {
    /// Lowest unchallenged index.
    FixedFirst,
    /// Bob names any final index after seeing his own final outcomes.
    BobChooses,
    /// Uniform over the final set, drawn from the public substream.
    PublicRandom,
}

impl DesignatedRule {
    pub fn as_str(self) -> &'static str {
        match self {
            DesignatedRule::FixedFirst => "fixed",
            DesignatedRule::BobChooses => "bob",
            DesignatedRule::PublicRandom => "random",
        }
    }
}

impl fmt::Display for DesignatedRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DesignatedRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(DesignatedRule::FixedFirst),
            "bob" => Ok(DesignatedRule::BobChooses),
            "random" => Ok(DesignatedRule::PublicRandom),
            other => Err(format!("unknown rule `{other}` (expected fixed, bob, random)")),
        }
    }
}

/// Bell state Alice leaves on the final pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FinalBell {
    PsiMinus,
    PsiPlus,
}

impl FinalBell {
    pub fn as_str(self) -> &'static str {
        match self {
            FinalBell::PsiMinus => "psi-",
            FinalBell::PsiPlus => "psi+",
        }
    }

    pub fn kind(self) -> BellKind {
        match self {
            FinalBell::PsiMinus => BellKind::PsiMinus,
            FinalBell::PsiPlus => BellKind::PsiPlus,
        }
    }
}

impl fmt::Display for FinalBell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FinalBell {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "psi-" => Ok(FinalBell::PsiMinus),
            "psi+" => Ok(FinalBell::PsiPlus),
            other => Err(format!("unknown bell `{other}` (expected psi-, psi+)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verification {
    On,
    Off,
}

impl Verification {
    pub fn as_str(self) -> &'static str {
        match self {
            Verification::On => "on",
            Verification::Off => "off",
        }
    }
}

impl fmt::Display for Verification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verification {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "on" => Ok(Verification::On),
            "off" => Ok(Verification::Off),
            other => Err(format!("unknown verification `{other}` (expected on, off)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SessionConfig {
    pub n: usize,
    pub seed: u64,
    pub designated_rule: DesignatedRule,
    pub final_bell: FinalBell,
    pub verification: Verification,
    pub bit_convention: BitConvention,
}

impl SessionConfig {
    /// Fixed-first designation, singlet final pairs, verification on.
    pub fn new(n: usize, seed: u64) -> Self {
        SessionConfig {
            n,
            seed,
            designated_rule: DesignatedRule::FixedFirst,
            final_bell: FinalBell::PsiMinus,
            verification: Verification::On,
            bit_convention: BitConvention::UpZeroDownOne,
        }
    }

    pub fn with_rule(mut self, rule: DesignatedRule) -> Self {
        self.designated_rule = rule;
        self
    }

    pub fn with_bell(mut self, bell: FinalBell) -> Self {
        self.final_bell = bell;
        self
    }

    pub fn with_verification(mut self, v: Verification) -> Self {
        self.verification = v;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.n < 2 || !self.n.is_multiple_of(2) {
            return Err(ProtocolError::Config(format!(
                "n must be a positive even integer >= 2, got {}",
                self.n
            )));
        }
        Ok(())
    }

    pub fn half(&self) -> usize {
        self.n / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProtocolPhase {
    Init,
    LockedAndSent,
    Challenged,
    SubsetUnlocked,
    ResultsExchanged,
    Verified,
    FinalUnlocked,
    Done,
    Aborted,
}

impl fmt::Display for ProtocolPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProtocolPhase::Init => "INIT",
            ProtocolPhase::LockedAndSent => "LOCKED_AND_SENT",
            ProtocolPhase::Challenged => "CHALLENGED",
            ProtocolPhase::SubsetUnlocked => "SUBSET_UNLOCKED",
            ProtocolPhase::ResultsExchanged => "RESULTS_EXCHANGED",
            ProtocolPhase::Verified => "VERIFIED",
            ProtocolPhase::FinalUnlocked => "FINAL_UNLOCKED",
            ProtocolPhase::Done => "DONE",
            ProtocolPhase::Aborted => "ABORTED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sender {
    Alice,
    Bob,
    Public,
}

impl Sender {
    pub fn as_str(self) -> &'static str {
        match self {
            Sender::Alice => "ALICE",
            Sender::Bob => "BOB",
            Sender::Public => "PUBLIC",
        }
    }
}

impl fmt::Display for Sender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Public messages. There is deliberately no variant that can carry a lock
/// operator.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Particles { n: usize },
    Challenge { indices: BTreeSet<usize> },
    UnlockDone,
    Axes(Vec<(usize, Axis)>),
    Results(Vec<(usize, SpinOutcome)>),
    VerifyStatus { ok: bool },
    FinalUnlockDone,
    OutcomeClaim { index: usize, outcome: SpinOutcome },
}

impl Message {
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Particles { .. } => "PARTICLES",
            Message::Challenge { .. } => "CHALLENGE",
            Message::UnlockDone => "UNLOCK_DONE",
            Message::Axes(_) => "AXES",
            Message::Results(_) => "RESULTS",
            Message::VerifyStatus { .. } => "VERIFY_STATUS",
            Message::FinalUnlockDone => "FINAL_UNLOCK_DONE",
            Message::OutcomeClaim { .. } => "OUTCOME_CLAIM",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub seq: u64,
    pub sender: Sender,
    pub message: Message,
}

/// Why a session ended in ABORT.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbortReason {
    VerificationFailed { mismatches: usize },
    MalformedChallenge(String),
    MalformedClaim(String),
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbortReason::VerificationFailed { mismatches } => {
                write!(f, "verification failed ({mismatches} correlated pairs)")
            }
            AbortReason::MalformedChallenge(m) => write!(f, "malformed challenge: {m}"),
            AbortReason::MalformedClaim(m) => write!(f, "malformed outcome claim: {m}"),
        }
    }
}

/// Public per-pair record. Alice's lock operator is kept elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub index: usize,
    pub joint_state: PureTwoQubitState,
    pub in_challenge: bool,
    pub verification_axis: Option<Axis>,
    pub alice_result: Option<SpinOutcome>,
    pub bob_result: Option<SpinOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoinOutcome {
    Bit(Bit),
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FinalPairBits {
    pub index: usize,
    pub alice_bit: Bit,
    pub bob_bit: Bit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub config: SessionConfig,
    pub alice: AliceSpec,
    pub bob: BobSpec,
    pub outcome: CoinOutcome,
    pub designated_index: Option<usize>,
    pub transcript: Vec<Envelope>,
    pub final_pair_bits: Vec<FinalPairBits>,
    pub abort_reason: Option<AbortReason>,
}

impl SessionResult {
    pub fn is_abort(&self) -> bool {
        self.outcome == CoinOutcome::Abort
    }

    pub fn outcome_bit(&self) -> Option<Bit> {
        match self.outcome {
            CoinOutcome::Bit(b) => Some(b),
            CoinOutcome::Abort => None,
        }
    }

    /// True when every final pair has `alice_bit ≠ bob_bit`.
    pub fn final_pairs_anticorrelated(&self) -> bool {
        self.final_pair_bits.iter().all(|p| p.alice_bit != p.bob_bit)
    }
}

/// Bob's only handle on the quantum state: measuring his own particles.
pub struct BobLab<'a> {
    pairs: &'a mut [PairRecord],
    nature: &'a mut StreamRng,
}

impl BobLab<'_> {
    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    /// Measures particle B of pair `index` along `axis`, collapsing the pair.
    ///
    /// Panics if `index >= n`.
    pub fn measure(&mut self, index: usize, axis: &Axis) -> SpinOutcome {
        measure_pair(&mut self.pairs[index], Particle::B, axis, self.nature)
    }
}

fn measure_pair(
    pair: &mut PairRecord,
    particle: Particle,
    axis: &Axis,
    nature: &mut StreamRng,
) -> SpinOutcome {
    let u: f64 = nature.random();
    let (outcome, post) = pair
        .joint_state
        .measure_spin(particle, axis, u)
        .expect("normalized state, unit axis and u in [0,1)");
    pair.joint_state = post;
    outcome
}

/// Uniform choice of the designated pair from the public substream.
pub fn draw_public_index(public: &mut StreamRng, final_indices: &[usize]) -> usize {
    final_indices[public.random_range(0..final_indices.len())]
}

/// One protocol run between two strategies.
pub struct Session {
    config: SessionConfig,
    phase: ProtocolPhase,
    pairs: Vec<PairRecord>,
    locks: Vec<LockRecord>,
    challenge: BTreeSet<usize>,
    transcript: Vec<Envelope>,
    alice: Box<dyn AliceStrategy>,
    bob: Box<dyn BobStrategy>,
    alice_rng: StreamRng,
    bob_rng: StreamRng,
    public_rng: StreamRng,
    nature_rng: StreamRng,
    designated: Option<usize>,
    abort_reason: Option<AbortReason>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("config", &self.config)
            .field("phase", &self.phase)
            .field("transcript_len", &self.transcript.len())
            .finish_non_exhaustive()
    }
}

impl Session {
    pub fn new(
        config: SessionConfig,
        alice: Box<dyn AliceStrategy>,
        bob: Box<dyn BobStrategy>,
    ) -> Result<Self, ProtocolError> {
        config.validate()?;
        let seed = config.seed;
        Ok(Session {
            config,
            phase: ProtocolPhase::Init,
            pairs: Vec::with_capacity(config.n),
            locks: Vec::with_capacity(config.n),
            challenge: BTreeSet::new(),
            transcript: Vec::new(),
            alice,
            bob,
            alice_rng: substream(seed, Substream::Alice),
            bob_rng: substream(seed, Substream::Bob),
            public_rng: substream(seed, Substream::Public),
            nature_rng: substream(seed, Substream::Nature),
            designated: None,
            abort_reason: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn phase(&self) -> ProtocolPhase {
        self.phase
    }

    pub fn pairs(&self) -> &[PairRecord] {
        &self.pairs
    }

    pub fn transcript(&self) -> &[Envelope] {
        &self.transcript
    }

    pub fn challenge(&self) -> &BTreeSet<usize> {
        &self.challenge
    }

    pub fn abort_reason(&self) -> Option<&AbortReason> {
        self.abort_reason.as_ref()
    }

    /// Alice's private lock record. Exposed for tests and diagnostics only;
    /// nothing on the protocol path hands it to Bob or to the transcript.
    pub fn lock_records(&self) -> &[LockRecord] {
        &self.locks
    }

    /// Indices not in the challenge, ascending.
    pub fn final_indices(&self) -> Vec<usize> {
        (0..self.config.n)
            .filter(|i| !self.challenge.contains(i))
            .collect()
    }

    fn expect_phase(&self, want: ProtocolPhase, step: &'static str) -> Result<(), ProtocolError> {
        if self.phase != want {
            return Err(ProtocolError::OutOfOrder {
                step,
                phase: self.phase,
            });
        }
        Ok(())
    }

    fn send(&mut self, sender: Sender, message: Message) {
        let seq = self.transcript.len() as u64;
        self.transcript.push(Envelope {
            seq,
            sender,
            message,
        });
    }

    fn abort(&mut self, reason: AbortReason) {
        self.abort_reason = Some(reason);
        self.phase = ProtocolPhase::Aborted;
    }

    /// Prepare, lock and transmit every pair.
    pub fn prepare_lock_send(&mut self) -> Result<ProtocolPhase, ProtocolError> {
        self.expect_phase(ProtocolPhase::Init, "prepare_lock_send")?;
        for index in 0..self.config.n {
            let prepared = self.alice.prepare_pair(index, &mut self.alice_rng);
            self.locks.push(prepared.lock);
            self.pairs.push(PairRecord {
                index,
                joint_state: prepared.state,
                in_challenge: false,
                verification_axis: None,
                alice_result: None,
                bob_result: None,
            });
        }
        self.send(Sender::Alice, Message::Particles { n: self.config.n });
        let mut lab = BobLab {
            pairs: &mut self.pairs,
            nature: &mut self.nature_rng,
        };
        self.bob.on_receive(&mut lab, &mut self.bob_rng);
        self.phase = ProtocolPhase::LockedAndSent;
        Ok(self.phase)
    }

    /// Bob discloses his n/2 verification indices.
    pub fn challenge_step(&mut self) -> Result<ProtocolPhase, ProtocolError> {
        self.expect_phase(ProtocolPhase::LockedAndSent, "challenge")?;
        let n = self.config.n;
        let chosen = self.bob.choose_challenge(n, &mut self.bob_rng);
        let set: BTreeSet<usize> = chosen.iter().copied().collect();
        let problem = if set.len() != chosen.len() {
            Some("duplicate indices".to_string())
        } else if let Some(bad) = set.iter().find(|&&i| i >= n) {
            Some(format!("index {bad} out of range"))
        } else if set.len() != self.config.half() {
            Some(format!("{} indices, expected {}", set.len(), self.config.half()))
        } else {
            None
        };
        if let Some(p) = problem {
            self.abort(AbortReason::MalformedChallenge(p));
            return Ok(self.phase);
        }
        for &i in &set {
            self.pairs[i].in_challenge = true;
        }
        self.challenge = set.clone();
        self.send(Sender::Bob, Message::Challenge { indices: set });
        self.phase = ProtocolPhase::Challenged;
        Ok(self.phase)
    }

    /// Alice undoes her lock on the challenged pairs.
    pub fn unlock_subset(&mut self) -> Result<ProtocolPhase, ProtocolError> {
        self.expect_phase(ProtocolPhase::Challenged, "unlock_subset")?;
        for &i in &self.challenge {
            let ops = self.alice.unlock_ops(
                &self.locks[i],
                UnlockStage::Challenge,
                self.config.final_bell,
            );
            apply_ops(&mut self.pairs[i], &ops);
        }
        self.send(Sender::Alice, Message::UnlockDone);
        self.phase = ProtocolPhase::SubsetUnlocked;
        Ok(self.phase)
    }

    /// Bob measures along his axes, Alice measures along the same
    /// axes and both results are published.
    pub fn verification_exchange(&mut self) -> Result<ProtocolPhase, ProtocolError> {
        self.expect_phase(ProtocolPhase::SubsetUnlocked, "verification_exchange")?;
        let indices: Vec<usize> = self.challenge.iter().copied().collect();
        let mut axes = Vec::with_capacity(indices.len());
        let mut bob_results = Vec::with_capacity(indices.len());
        for &i in &indices {
            let axis = self.bob.choose_axis(i, &mut self.bob_rng);
            let mut lab = BobLab {
                pairs: &mut self.pairs,
                nature: &mut self.nature_rng,
            };
            let reported = self.bob.report_result(i, &axis, &mut lab);
            self.pairs[i].verification_axis = Some(axis);
            self.pairs[i].bob_result = Some(reported);
            axes.push((i, axis));
            bob_results.push((i, reported));
        }
        self.send(Sender::Bob, Message::Axes(axes.clone()));
        let mut alice_results = Vec::with_capacity(indices.len());
        for (i, axis) in axes {
            let o = measure_pair(&mut self.pairs[i], Particle::A, &axis, &mut self.nature_rng);
            self.pairs[i].alice_result = Some(o);
            alice_results.push((i, o));
        }
        self.send(Sender::Alice, Message::Results(alice_results));
        self.send(Sender::Bob, Message::Results(bob_results));
        self.phase = ProtocolPhase::ResultsExchanged;
        Ok(self.phase)
    }

    /// Strict anti-correlation check on every challenged pair.
    pub fn verify(&mut self) -> Result<ProtocolPhase, ProtocolError> {
        self.expect_phase(ProtocolPhase::ResultsExchanged, "verify")?;
        let mismatches = self
            .challenge
            .iter()
            .filter(|&&i| self.pairs[i].alice_result == self.pairs[i].bob_result)
            .count();
        let ok = verification_passes(self.config.verification, mismatches);
        self.send(Sender::Bob, Message::VerifyStatus { ok });
        if ok {
            self.phase = ProtocolPhase::Verified;
        } else {
            self.abort(AbortReason::VerificationFailed { mismatches });
        }
        Ok(self.phase)
    }

    /// Alice unlocks the remaining pairs.
    pub fn final_unlock(&mut self) -> Result<ProtocolPhase, ProtocolError> {
        self.expect_phase(ProtocolPhase::Verified, "final_unlock")?;
        for i in self.final_indices() {
            let ops =
                self.alice
                    .unlock_ops(&self.locks[i], UnlockStage::Final, self.config.final_bell);
            apply_ops(&mut self.pairs[i], &ops);
        }
        self.send(Sender::Alice, Message::FinalUnlockDone);
        self.phase = ProtocolPhase::FinalUnlocked;
        Ok(self.phase)
    }

    /// Both measure the final pairs along z and the designated pair
    /// is fixed.
    pub fn final_measure(&mut self) -> Result<ProtocolPhase, ProtocolError> {
        self.expect_phase(ProtocolPhase::FinalUnlocked, "final_measure")?;
        let finals = self.final_indices();
        let mut bob_final = Vec::with_capacity(finals.len());
        for &i in &finals {
            let o = measure_pair(&mut self.pairs[i], Particle::B, &Axis::Z, &mut self.nature_rng);
            self.pairs[i].bob_result = Some(o);
            bob_final.push((i, o));
        }
        self.send(Sender::Bob, Message::Results(bob_final.clone()));

        let (sender, index) = match self.config.designated_rule {
            DesignatedRule::FixedFirst => (Sender::Public, finals[0]),
            DesignatedRule::PublicRandom => {
                (Sender::Public, draw_public_index(&mut self.public_rng, &finals))
            }
            DesignatedRule::BobChooses => {
                let pick = self.bob.choose_final_index(&bob_final, &mut self.bob_rng);
                if !finals.contains(&pick) {
                    self.abort(AbortReason::MalformedClaim(format!(
                        "index {pick} is not a final pair"
                    )));
                    return Ok(self.phase);
                }
                (Sender::Bob, pick)
            }
        };
        let claimed = self.pairs[index].bob_result.expect("measured above");
        self.send(
            sender,
            Message::OutcomeClaim {
                index,
                outcome: claimed,
            },
        );
        self.designated = Some(index);

        let mut alice_final = Vec::with_capacity(finals.len());
        for &i in &finals {
            let o = measure_pair(&mut self.pairs[i], Particle::A, &Axis::Z, &mut self.nature_rng);
            self.pairs[i].alice_result = Some(o);
            alice_final.push((i, o));
        }
        self.send(Sender::Alice, Message::Results(alice_final));
        self.phase = ProtocolPhase::Done;
        Ok(self.phase)
    }

    /// Runs the next step for the current phase.
    pub fn advance(&mut self) -> Result<ProtocolPhase, ProtocolError> {
        match self.phase {
            ProtocolPhase::Init => self.prepare_lock_send(),
            ProtocolPhase::LockedAndSent => self.challenge_step(),
            ProtocolPhase::Challenged => self.unlock_subset(),
            ProtocolPhase::SubsetUnlocked => self.verification_exchange(),
            ProtocolPhase::ResultsExchanged => self.verify(),
            ProtocolPhase::Verified => self.final_unlock(),
            ProtocolPhase::FinalUnlocked => self.final_measure(),
            phase @ (ProtocolPhase::Done | ProtocolPhase::Aborted) => {
                Err(ProtocolError::OutOfOrder {
                    step: "advance",
                    phase,
                })
            }
        }
    }

    /// Consumes a DONE or ABORTED session.
    pub fn finish(self) -> Result<SessionResult, ProtocolError> {
        let conv = self.config.bit_convention;
        let (outcome, final_pair_bits) = match self.phase {
            ProtocolPhase::Done => {
                let idx = self.designated.expect("designated pair set in final_measure");
                let bits: Vec<FinalPairBits> = self
                    .final_indices()
                    .into_iter()
                    .map(|i| FinalPairBits {
                        index: i,
                        alice_bit: conv.bit(self.pairs[i].alice_result.expect("measured")),
                        bob_bit: conv.bit(self.pairs[i].bob_result.expect("measured")),
                    })
                    .collect();
                let coin = conv.bit(self.pairs[idx].alice_result.expect("measured"));
                (CoinOutcome::Bit(coin), bits)
            }
            ProtocolPhase::Aborted => (CoinOutcome::Abort, Vec::new()),
            phase => {
                return Err(ProtocolError::OutOfOrder {
                    step: "finish",
                    phase,
                })
            }
        };
        Ok(SessionResult {
            config: self.config,
            alice: self.alice.spec(),
            bob: self.bob.spec(),
            outcome,
            designated_index: match outcome {
                CoinOutcome::Bit(_) => self.designated,
                CoinOutcome::Abort => None,
            },
            transcript: self.transcript,
            final_pair_bits,
            abort_reason: self.abort_reason,
        })
    }
}

pub(crate) fn verification_passes(v: Verification, mismatches: usize) -> bool {
    match v {
        Verification::On => mismatches == 0,
        Verification::Off => true,
    }
}

fn apply_ops(pair: &mut PairRecord, ops: &[PauliOp]) {
    for &op in ops {
        pair.joint_state = pair.joint_state.apply_pauli(Particle::A, op);
    }
}

pub fn new_session(
    config: SessionConfig,
    alice: Box<dyn AliceStrategy>,
    bob: Box<dyn BobStrategy>,
) -> Result<Session, ProtocolError> {
    Session::new(config, alice, bob)
}

/// Runs every phase in order. Aborts end the run early with
/// [`CoinOutcome::Abort`] and the transcript up to that point.
pub fn run_full_session(
    config: SessionConfig,
    alice: Box<dyn AliceStrategy>,
    bob: Box<dyn BobStrategy>,
) -> Result<SessionResult, ProtocolError> {
    let mut session = Session::new(config, alice, bob)?;
    while !matches!(session.phase(), ProtocolPhase::Done | ProtocolPhase::Aborted) {
        session.advance()?;
    }
    session.finish()
}

/// Convenience wrapper building both strategies from their specs.
pub fn run_with_specs(
    config: SessionConfig,
    alice: &AliceSpec,
    bob: &BobSpec,
) -> Result<SessionResult, ProtocolError> {
    run_full_session(config, alice.build(), bob.build())
}
