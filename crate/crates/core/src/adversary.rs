//! Party behaviour: hook traits, the honest baselines and the named attacks.
//!
//! A strategy sees only what its party could see. Alice's hooks receive her
//! own lock record and randomness; Bob's hooks receive public indices, his
//! randomness, and a [`BobLab`] through which he can measure his own
//! particles and nothing else.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::protocol::{Bit, BitConvention, BobLab, FinalBell, StreamRng};
use crate::qstate::{Axis, BellKind, Particle, PauliOp, PureTwoQubitState, SpinOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyError {
    #[error("unknown {party} strategy `{name}`; valid: {valid}")]
    UnknownName {
        party: &'static str,
        name: String,
        valid: &'static str,
    },
    #[error("bad parameter for `{name}`: {reason}")]
    BadParameter { name: String, reason: String },
}

pub const ALICE_STRATEGIES: &str = "honest, naive_alice_nolock, alice_mixed_product:<fraction in [0,1]>";
pub const BOB_STRATEGIES: &str = "honest, bob_zaxis_select:target=<0|1>, bob_premeasure_all:target=<0|1>, bob_premeasure_unverified:target=<0|1>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairOrigin {
    LockedSinglet,
    Product,
}

/// Alice's private per-pair record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LockRecord {
    pub op: PauliOp,
    pub origin: PairOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparedPair {
    pub state: PureTwoQubitState,
    pub lock: LockRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnlockStage {
    Challenge,
    Final,
}

/// Operators the protocol-following Alice applies to particle A when
/// unlocking: her lock op, plus `Z` on final pairs when triplets were
/// requested. Product pairs are left alone.
pub fn honest_unlock_ops(lock: &LockRecord, stage: UnlockStage, bell: FinalBell) -> Vec<PauliOp> {
    match (lock.origin, stage, bell) {
        (PairOrigin::Product, _, _) => Vec::new(),
        (PairOrigin::LockedSinglet, UnlockStage::Final, FinalBell::PsiPlus) => {
            vec![lock.op, PauliOp::Z]
        }
        (PairOrigin::LockedSinglet, _, _) => vec![lock.op],
    }
}

pub trait AliceStrategy: Send {
    fn spec(&self) -> AliceSpec;

    fn prepare_pair(&mut self, index: usize, rng: &mut StreamRng) -> PreparedPair;

    fn unlock_ops(&self, lock: &LockRecord, stage: UnlockStage, bell: FinalBell) -> Vec<PauliOp> {
        honest_unlock_ops(lock, stage, bell)
    }
}

pub trait BobStrategy: Send {
    fn spec(&self) -> BobSpec;

    /// Bit Bob is trying to force, declared before the session.
    fn target_bit(&self) -> Option<Bit> {
        None
    }

    /// Called once all particles B have arrived.
    fn on_receive(&mut self, _lab: &mut BobLab<'_>, _rng: &mut StreamRng) {}

    fn choose_challenge(&mut self, n: usize, rng: &mut StreamRng) -> Vec<usize>;

    fn choose_axis(&mut self, index: usize, rng: &mut StreamRng) -> Axis;

    /// Outcome Bob publishes for challenged pair `index` along `axis`.
    fn report_result(&mut self, index: usize, axis: &Axis, lab: &mut BobLab<'_>) -> SpinOutcome;

    /// Only consulted under the Bob-chooses designation rule.
    fn choose_final_index(&mut self, own_final: &[(usize, SpinOutcome)], rng: &mut StreamRng) -> usize;
}

/// Uniform direction on the sphere: `z ~ U[-1, 1]`, azimuth `~ U[0, 2π)`.
pub fn uniform_axis<R: Rng + ?Sized>(rng: &mut R) -> Axis {
    let z = rng.random_range(-1.0..=1.0);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    Axis::from_height_azimuth(z, phi)
}

/// Uniformly random n/2-subset of `0..n`, ascending.
pub fn uniform_half<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut v = sample(rng, n, n / 2).into_vec();
    v.sort_unstable();
    v
}

// ---------------------------------------------------------------------------
// Alice

#[derive(Debug, Clone, Copy)]
struct HonestAlice;

impl AliceStrategy for HonestAlice {
    fn spec(&self) -> AliceSpec {
        AliceSpec::Honest
    }

    fn prepare_pair(&mut self, _index: usize, rng: &mut StreamRng) -> PreparedPair {
        let op = PauliOp::ALL[rng.random_range(0..4)];
        PreparedPair {
            state: PureTwoQubitState::bell(BellKind::PsiMinus).apply_pauli(Particle::A, op),
            lock: LockRecord {
                op,
                origin: PairOrigin::LockedSinglet,
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct NaiveAlice;

impl AliceStrategy for NaiveAlice {
    fn spec(&self) -> AliceSpec {
        AliceSpec::NaiveNoLock
    }

    fn prepare_pair(&mut self, _index: usize, _rng: &mut StreamRng) -> PreparedPair {
        PreparedPair {
            state: PureTwoQubitState::bell(BellKind::PsiMinus),
            lock: LockRecord {
                op: PauliOp::Ident,
                origin: PairOrigin::LockedSinglet,
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct MixedProductAlice {
    fraction: f64,
}

impl AliceStrategy for MixedProductAlice {
    fn spec(&self) -> AliceSpec {
        AliceSpec::MixedProduct {
            fraction: self.fraction,
        }
    }

    fn prepare_pair(&mut self, index: usize, rng: &mut StreamRng) -> PreparedPair {
        let u: f64 = rng.random();
        if u < self.fraction {
            PreparedPair {
                state: PureTwoQubitState::basis(SpinOutcome::Down, SpinOutcome::Down),
                lock: LockRecord {
                    op: PauliOp::Ident,
                    origin: PairOrigin::Product,
                },
            }
        } else {
            HonestAlice.prepare_pair(index, rng)
        }
    }
}

pub fn honest_alice() -> Box<dyn AliceStrategy> {
    Box::new(HonestAlice)
}

/// Plain singlets, no locking.
pub fn naive_alice_nolock() -> Box<dyn AliceStrategy> {
    Box::new(NaiveAlice)
}

/// Each pair is `|1⟩|1⟩` with probability `fraction`, else a locked singlet.
pub fn alice_mixed_product(fraction: f64) -> Result<Box<dyn AliceStrategy>, StrategyError> {
    check_fraction(fraction)?;
    Ok(Box::new(MixedProductAlice { fraction }))
}

fn check_fraction(fraction: f64) -> Result<(), StrategyError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(StrategyError::BadParameter {
            name: "alice_mixed_product".into(),
            reason: format!("fraction {fraction} outside [0, 1]"),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Bob

#[derive(Debug, Clone, Copy)]
struct HonestBob;

impl BobStrategy for HonestBob {
    fn spec(&self) -> BobSpec {
        BobSpec::Honest
    }

    fn choose_challenge(&mut self, n: usize, rng: &mut StreamRng) -> Vec<usize> {
        uniform_half(n, rng)
    }

    fn choose_axis(&mut self, _index: usize, rng: &mut StreamRng) -> Axis {
        uniform_axis(rng)
    }

    fn report_result(&mut self, index: usize, axis: &Axis, lab: &mut BobLab<'_>) -> SpinOutcome {
        lab.measure(index, axis)
    }

    fn choose_final_index(&mut self, own_final: &[(usize, SpinOutcome)], rng: &mut StreamRng) -> usize {
        own_final[rng.random_range(0..own_final.len())].0
    }
}

/// Premeasure every B along z, discard unwanted pairs into the challenge,
/// verify along z with the premeasured values.
#[derive(Debug, Clone)]
struct ZAxisSelectBob {
    target: Bit,
    premeasured: Vec<SpinOutcome>,
}

impl ZAxisSelectBob {
    /// Bob's z-outcome that, under anti-correlation, leaves Alice holding `target`.
    fn wanted(&self) -> SpinOutcome {
        BitConvention::default().outcome(self.target).flip()
    }
}

impl BobStrategy for ZAxisSelectBob {
    fn spec(&self) -> BobSpec {
        BobSpec::ZAxisSelect {
            target: self.target,
        }
    }

    fn target_bit(&self) -> Option<Bit> {
        Some(self.target)
    }

    fn on_receive(&mut self, lab: &mut BobLab<'_>, _rng: &mut StreamRng) {
        self.premeasured = (0..lab.n()).map(|i| lab.measure(i, &Axis::Z)).collect();
    }

    fn choose_challenge(&mut self, n: usize, _rng: &mut StreamRng) -> Vec<usize> {
        let wanted = self.wanted();
        let mut order: Vec<usize> = (0..n).collect();
        // unwanted first, then wanted; lowest index first within each group
        order.sort_by_key(|&i| (self.premeasured[i] == wanted, i));
        let mut chosen = order[..n / 2].to_vec();
        chosen.sort_unstable();
        chosen
    }

    fn choose_axis(&mut self, _index: usize, _rng: &mut StreamRng) -> Axis {
        Axis::Z
    }

    fn report_result(&mut self, index: usize, _axis: &Axis, _lab: &mut BobLab<'_>) -> SpinOutcome {
        self.premeasured[index]
    }

    fn choose_final_index(&mut self, own_final: &[(usize, SpinOutcome)], _rng: &mut StreamRng) -> usize {
        let wanted = self.wanted();
        own_final
            .iter()
            .find(|(i, _)| self.premeasured[*i] == wanted)
            .unwrap_or(&own_final[0])
            .0
    }
}

/// Premeasure every B along z, then follow the protocol honestly.
#[derive(Debug, Clone)]
struct PremeasureAllBob {
    target: Bit,
    premeasured: Vec<SpinOutcome>,
}

impl BobStrategy for PremeasureAllBob {
    fn spec(&self) -> BobSpec {
        BobSpec::PremeasureAll {
            target: self.target,
        }
    }

    fn target_bit(&self) -> Option<Bit> {
        Some(self.target)
    }

    fn on_receive(&mut self, lab: &mut BobLab<'_>, _rng: &mut StreamRng) {
        self.premeasured = (0..lab.n()).map(|i| lab.measure(i, &Axis::Z)).collect();
    }

    fn choose_challenge(&mut self, n: usize, rng: &mut StreamRng) -> Vec<usize> {
        uniform_half(n, rng)
    }

    fn choose_axis(&mut self, _index: usize, rng: &mut StreamRng) -> Axis {
        uniform_axis(rng)
    }

    fn report_result(&mut self, index: usize, axis: &Axis, lab: &mut BobLab<'_>) -> SpinOutcome {
        lab.measure(index, axis)
    }

    fn choose_final_index(&mut self, own_final: &[(usize, SpinOutcome)], rng: &mut StreamRng) -> usize {
        HonestBob.choose_final_index(own_final, rng)
    }
}

/// Fix a uniformly random challenge first, premeasure only the pairs kept
/// back, verify honestly on untouched pairs.
#[derive(Debug, Clone)]
struct PremeasureUnverifiedBob {
    target: Bit,
    challenge: Vec<usize>,
    premeasured: Vec<Option<SpinOutcome>>,
}

impl BobStrategy for PremeasureUnverifiedBob {
    fn spec(&self) -> BobSpec {
        BobSpec::PremeasureUnverified {
            target: self.target,
        }
    }

    fn target_bit(&self) -> Option<Bit> {
        Some(self.target)
    }

    fn on_receive(&mut self, lab: &mut BobLab<'_>, rng: &mut StreamRng) {
        let n = lab.n();
        self.challenge = uniform_half(n, rng);
        self.premeasured = vec![None; n];
        for i in 0..n {
            if self.challenge.binary_search(&i).is_err() {
                self.premeasured[i] = Some(lab.measure(i, &Axis::Z));
            }
        }
    }

    fn choose_challenge(&mut self, _n: usize, _rng: &mut StreamRng) -> Vec<usize> {
        self.challenge.clone()
    }

    fn choose_axis(&mut self, _index: usize, rng: &mut StreamRng) -> Axis {
        uniform_axis(rng)
    }

    fn report_result(&mut self, index: usize, axis: &Axis, lab: &mut BobLab<'_>) -> SpinOutcome {
        lab.measure(index, axis)
    }

    fn choose_final_index(&mut self, own_final: &[(usize, SpinOutcome)], _rng: &mut StreamRng) -> usize {
        let wanted = BitConvention::default().outcome(self.target).flip();
        own_final
            .iter()
            .find(|(i, _)| self.premeasured[*i] == Some(wanted))
            .unwrap_or(&own_final[0])
            .0
    }
}

pub fn honest_bob() -> Box<dyn BobStrategy> {
    Box::new(HonestBob)
}

pub fn bob_zaxis_select(target: Bit) -> Box<dyn BobStrategy> {
    Box::new(ZAxisSelectBob {
        target,
        premeasured: Vec::new(),
    })
}

pub fn bob_premeasure_all(target: Bit) -> Box<dyn BobStrategy> {
    Box::new(PremeasureAllBob {
        target,
        premeasured: Vec::new(),
    })
}

pub fn bob_premeasure_unverified(target: Bit) -> Box<dyn BobStrategy> {
    Box::new(PremeasureUnverifiedBob {
        target,
        challenge: Vec::new(),
        premeasured: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Specs

/// Alice strategy by name and parameters. Textual form: `honest`,
/// `naive_alice_nolock`, `alice_mixed_product:<fraction>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AliceSpec {
    Honest,
    NaiveNoLock,
    MixedProduct { fraction: f64 },
}

impl AliceSpec {
    pub fn build(&self) -> Box<dyn AliceStrategy> {
        match *self {
            AliceSpec::Honest => honest_alice(),
            AliceSpec::NaiveNoLock => naive_alice_nolock(),
            AliceSpec::MixedProduct { fraction } => Box::new(MixedProductAlice { fraction }),
        }
    }
}

impl fmt::Display for AliceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AliceSpec::Honest => f.write_str("honest"),
            AliceSpec::NaiveNoLock => f.write_str("naive_alice_nolock"),
            AliceSpec::MixedProduct { fraction } => write!(f, "alice_mixed_product:{fraction}"),
        }
    }
}

impl FromStr for AliceSpec {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        match (name, param) {
            ("honest" | "honest_alice", None) => Ok(AliceSpec::Honest),
            ("naive_alice_nolock", None) => Ok(AliceSpec::NaiveNoLock),
            ("alice_mixed_product", Some(p)) => {
                let p = p.strip_prefix("fraction=").unwrap_or(p);
                let fraction: f64 = p.parse().map_err(|_| StrategyError::BadParameter {
                    name: name.into(),
                    reason: format!("`{p}` is not a number"),
                })?;
                check_fraction(fraction)?;
                Ok(AliceSpec::MixedProduct { fraction })
            }
            _ => Err(StrategyError::UnknownName {
                party: "alice",
                name: s.into(),
                valid: ALICE_STRATEGIES,
            }),
        }
    }
}

/// Bob strategy by name and parameters. Textual form: `honest` or
/// `<name>:target=<0|1>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BobSpec {
    Honest,
    ZAxisSelect { target: Bit },
    PremeasureAll { target: Bit },
    PremeasureUnverified { target: Bit },
}

impl BobSpec {
    pub fn build(&self) -> Box<dyn BobStrategy> {
        match *self {
            BobSpec::Honest => honest_bob(),
            BobSpec::ZAxisSelect { target } => bob_zaxis_select(target),
            BobSpec::PremeasureAll { target } => bob_premeasure_all(target),
            BobSpec::PremeasureUnverified { target } => bob_premeasure_unverified(target),
        }
    }

    pub fn target(&self) -> Option<Bit> {
        match *self {
            BobSpec::Honest => None,
            BobSpec::ZAxisSelect { target }
            | BobSpec::PremeasureAll { target }
            | BobSpec::PremeasureUnverified { target } => Some(target),
        }
    }

    /// Same strategy aimed at another bit.
    pub fn with_target(&self, target: Bit) -> BobSpec {
        match self {
            BobSpec::Honest => BobSpec::Honest,
            BobSpec::ZAxisSelect { .. } => BobSpec::ZAxisSelect { target },
            BobSpec::PremeasureAll { .. } => BobSpec::PremeasureAll { target },
            BobSpec::PremeasureUnverified { .. } => BobSpec::PremeasureUnverified { target },
        }
    }
}

impl fmt::Display for BobSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BobSpec::Honest => f.write_str("honest"),
            BobSpec::ZAxisSelect { target } => write!(f, "bob_zaxis_select:target={target}"),
            BobSpec::PremeasureAll { target } => write!(f, "bob_premeasure_all:target={target}"),
            BobSpec::PremeasureUnverified { target } => {
                write!(f, "bob_premeasure_unverified:target={target}")
            }
        }
    }
}

impl FromStr for BobSpec {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let target = |p: Option<&str>| -> Result<Bit, StrategyError> {
            let p = p.ok_or_else(|| StrategyError::BadParameter {
                name: name.into(),
                reason: "missing target=<0|1>".into(),
            })?;
            let v = p.strip_prefix("target=").unwrap_or(p);
            v.parse().map_err(|reason| StrategyError::BadParameter {
                name: name.into(),
                reason,
            })
        };
        match name {
            "honest" | "honest_bob" if param.is_none() => Ok(BobSpec::Honest),
            "bob_zaxis_select" => Ok(BobSpec::ZAxisSelect { target: target(param)? }),
            "bob_premeasure_all" => Ok(BobSpec::PremeasureAll { target: target(param)? }),
            "bob_premeasure_unverified" => Ok(BobSpec::PremeasureUnverified {
                target: target(param)?,
            }),
            _ => Err(StrategyError::UnknownName {
                party: "bob",
                name: s.into(),
                valid: BOB_STRATEGIES,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::substream;
    use crate::protocol::Substream;

    #[test]
    fn spec_text_round_trips() {
        for s in ["honest", "naive_alice_nolock", "alice_mixed_product:0.5", "alice_mixed_product:0"] {
            assert_eq!(s.parse::<AliceSpec>().unwrap().to_string(), s);
        }
        for s in [
            "honest",
            "bob_zaxis_select:target=0",
            "bob_premeasure_all:target=1",
            "bob_premeasure_unverified:target=1",
        ] {
            assert_eq!(s.parse::<BobSpec>().unwrap().to_string(), s);
        }
        assert_eq!("honest_alice".parse::<AliceSpec>().unwrap(), AliceSpec::Honest);
        assert_eq!(
            "bob_premeasure_all:1".parse::<BobSpec>().unwrap(),
            BobSpec::PremeasureAll { target: Bit::One }
        );
    }

    #[test]
    fn spec_errors() {
        assert!(matches!(
            "alice_mixed_product:1.5".parse::<AliceSpec>(),
            Err(StrategyError::BadParameter { .. })
        ));
        assert!(matches!(
            "alice_mixed_product:-0.1".parse::<AliceSpec>(),
            Err(StrategyError::BadParameter { .. })
        ));
        assert!(alice_mixed_product(2.0).is_err());
        assert!(matches!(
            "mallory".parse::<AliceSpec>(),
            Err(StrategyError::UnknownName { .. })
        ));
        assert!(matches!(
            "bob_zaxis_select".parse::<BobSpec>(),
            Err(StrategyError::BadParameter { .. })
        ));
        assert!(matches!(
            "bob_zaxis_select:target=2".parse::<BobSpec>(),
            Err(StrategyError::BadParameter { .. })
        ));
        let err = "eve".parse::<BobSpec>().unwrap_err().to_string();
        assert!(err.contains("bob_premeasure_unverified"));
    }

    #[test]
    fn honest_unlock_rules() {
        let locked = LockRecord {
            op: PauliOp::Y,
            origin: PairOrigin::LockedSinglet,
        };
        let product = LockRecord {
            op: PauliOp::Ident,
            origin: PairOrigin::Product,
        };
        assert_eq!(honest_unlock_ops(&locked, UnlockStage::Challenge, FinalBell::PsiPlus), vec![PauliOp::Y]);
        assert_eq!(honest_unlock_ops(&locked, UnlockStage::Final, FinalBell::PsiMinus), vec![PauliOp::Y]);
        assert_eq!(
            honest_unlock_ops(&locked, UnlockStage::Final, FinalBell::PsiPlus),
            vec![PauliOp::Y, PauliOp::Z]
        );
        assert!(honest_unlock_ops(&product, UnlockStage::Final, FinalBell::PsiPlus).is_empty());
    }

    #[test]
    fn naive_alice_prepares_plain_singlets() {
        let mut a = naive_alice_nolock();
        let mut rng = substream(1, Substream::Alice);
        for i in 0..8 {
            let p = a.prepare_pair(i, &mut rng);
            assert_eq!(p.state, PureTwoQubitState::bell(BellKind::PsiMinus));
            assert_eq!(p.lock.op, PauliOp::Ident);
        }
    }

    #[test]
    fn mixed_product_extremes() {
        let mut rng = substream(3, Substream::Alice);
        let mut all = alice_mixed_product(1.0).unwrap();
        for i in 0..16 {
            let p = all.prepare_pair(i, &mut rng);
            assert_eq!(p.lock.origin, PairOrigin::Product);
            assert!(p.state.is_product(1e-15));
        }
        let mut none = alice_mixed_product(0.0).unwrap();
        for i in 0..16 {
            let p = none.prepare_pair(i, &mut rng);
            assert_eq!(p.lock.origin, PairOrigin::LockedSinglet);
            assert!(p.state.bell_kind(1e-12).is_some());
        }
    }

    #[test]
    fn uniform_half_is_a_sorted_half() {
        let mut rng = substream(9, Substream::Bob);
        for n in [2, 4, 20, 100] {
            let h = uniform_half(n, &mut rng);
            assert_eq!(h.len(), n / 2);
            assert!(h.windows(2).all(|w| w[0] < w[1]));
            assert!(h.iter().all(|&i| i < n));
        }
    }

    #[test]
    fn sampled_axes_are_unit() {
        let mut rng = substream(4, Substream::Bob);
        for _ in 0..1000 {
            let a = uniform_axis(&mut rng);
            let [x, y, z] = a.components();
            assert!(((x * x + y * y + z * z).sqrt() - 1.0).abs() < 1e-12);
        }
    }
}
