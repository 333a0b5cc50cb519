//! Exact two-qubit state arithmetic.
//!
//! Basis order is `|00⟩, |01⟩, |10⟩, |11⟩` with particle A (Alice's kept
//! half) as the left tensor factor and particle B (the transmitted partner)
//! on the right. `|0⟩` is spin-up along z and `|1⟩` is spin-down.
//!
//! All values are immutable; every operation returns a new value. Measurement
//! randomness is injected by the caller as a uniform `u ∈ [0, 1)`.

use std::fmt;

use nalgebra::{Complex, Matrix2, Matrix4};
use thiserror::Error;

pub type C64 = Complex<f64>;

/// Tolerance on `Σ|amp|² = 1` for stored pure states.
pub const NORM_TOLERANCE: f64 = 1e-9;
/// Tolerance used for algebraic identities and density-matrix invariants.
pub const ALGEBRA_TOLERANCE: f64 = 1e-12;
const PROBABILITY_SNAP: f64 = 1e-14;
/// Measurement branches below this probability are never selected.
const DEGENERATE_BRANCH: f64 = 1e-15;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QstateError {
    #[error("amplitudes are not normalized (norm² = {0})")]
    NotNormalized(f64),
    #[error("non-finite amplitude or component")]
    NonFinite,
    #[error("axis ({x}, {y}, {z}) is not unit length")]
    NonUnitAxis { x: f64, y: f64, z: f64 },
    #[error("measurement draw {0} is outside [0, 1)")]
    DrawOutOfRange(f64),
    #[error("selected measurement branch has probability {0}")]
    DegenerateBranch(f64),
    #[error("invalid density matrix: {0}")]
    InvalidDensity(&'static str),
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Particle {
    A,
    B,
}

impl Particle {
    pub fn other(self) -> Particle {
        match self {
            Particle::A => Particle::B,
            Particle::B => Particle::A,
        }
    }
}

/// The four Bell states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BellKind {
    PsiMinus,
    PsiPlus,
    PhiMinus,
    PhiPlus,
}

impl BellKind {
    pub const ALL: [BellKind; 4] = [
        BellKind::PsiMinus,
        BellKind::PsiPlus,
        BellKind::PhiMinus,
        BellKind::PhiPlus,
    ];
}

/// Single-particle Pauli operators plus identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PauliOp {
    X,
    Y,
    Z,
    Ident,
}

impl PauliOp {
    pub const ALL: [PauliOp; 4] = [PauliOp::X, PauliOp::Y, PauliOp::Z, PauliOp::Ident];

    pub fn matrix(self) -> [[C64; 2]; 2] {
        match self {
            PauliOp::X => [[ZERO, ONE], [ONE, ZERO]],
            PauliOp::Y => [[ZERO, c(0.0, -1.0)], [c(0.0, 1.0), ZERO]],
            PauliOp::Z => [[ONE, ZERO], [ZERO, -ONE]],
            PauliOp::Ident => [[ONE, ZERO], [ZERO, ONE]],
        }
    }
}

/// Result of a projective spin measurement. `Up` is the +1 eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpinOutcome {
    Up,
    Down,
}

impl SpinOutcome {
    pub fn eigenvalue(self) -> f64 {
        match self {
            SpinOutcome::Up => 1.0,
            SpinOutcome::Down => -1.0,
        }
    }

    pub fn flip(self) -> SpinOutcome {
        match self {
            SpinOutcome::Up => SpinOutcome::Down,
            SpinOutcome::Down => SpinOutcome::Up,
        }
    }
}

/// A unit measurement direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    x: f64,
    y: f64,
    z: f64,
}

impl Axis {
    pub const X: Axis = Axis { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Axis = Axis { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Axis = Axis { x: 0.0, y: 0.0, z: 1.0 };

    /// Accepts `(x, y, z)` if its norm is 1 within [`NORM_TOLERANCE`].
    pub fn new(x: f64, y: f64, z: f64) -> Result<Axis, QstateError> {
        Axis::with_tolerance(x, y, z, NORM_TOLERANCE)
    }

    /// Like [`Axis::new`] with a caller-chosen norm tolerance. Components are
    /// stored as given, never renormalized.
    pub fn with_tolerance(x: f64, y: f64, z: f64, tol: f64) -> Result<Axis, QstateError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(QstateError::NonFinite);
        }
        let norm = (x * x + y * y + z * z).sqrt();
        if (norm - 1.0).abs() > tol {
            return Err(QstateError::NonUnitAxis { x, y, z });
        }
        Ok(Axis { x, y, z })
    }

    /// Polar angle `theta` from +z, azimuth `phi` from +x.
    pub fn from_spherical(theta: f64, phi: f64) -> Axis {
        let s = theta.sin();
        Axis {
            x: s * phi.cos(),
            y: s * phi.sin(),
            z: theta.cos(),
        }
    }

    /// Builds the axis with height `z ∈ [-1, 1]` and azimuth `phi`. Uniform
    /// `z` and `phi` give a uniform direction on the sphere.
    pub fn from_height_azimuth(z: f64, phi: f64) -> Axis {
        let z = z.clamp(-1.0, 1.0);
        let r = (1.0 - z * z).max(0.0).sqrt();
        Axis {
            x: r * phi.cos(),
            y: r * phi.sin(),
            z,
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn components(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Axis) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Projector `(I ± a·σ)/2` onto the given eigenspace of `a·σ`.
    fn projector(&self, outcome: SpinOutcome) -> [[C64; 2]; 2] {
        let s = outcome.eigenvalue();
        [
            [c((1.0 + s * self.z) / 2.0, 0.0), c(s * self.x / 2.0, -s * self.y / 2.0)],
            [c(s * self.x / 2.0, s * self.y / 2.0), c((1.0 - s * self.z) / 2.0, 0.0)],
        ]
    }
}

/// Joint pure state of one shared pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureTwoQubitState {
    amps: [C64; 4],
}

impl PureTwoQubitState {
    pub fn new(amps: [C64; 4]) -> Result<Self, QstateError> {
        if amps.iter().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(QstateError::NonFinite);
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(QstateError::NotNormalized(norm));
        }
        Ok(PureTwoQubitState { amps })
    }

    /// Computational basis state `|a⟩_A |b⟩_B` with `Up ↦ |0⟩`, `Down ↦ |1⟩`.
    pub fn basis(a: SpinOutcome, b: SpinOutcome) -> Self {
        let mut amps = [ZERO; 4];
        amps[index(a, b)] = ONE;
        PureTwoQubitState { amps }
    }

    pub fn bell(kind: BellKind) -> Self {
        let h = c(FRAC_1_SQRT_2, 0.0);
        let amps = match kind {
            BellKind::PsiMinus => [ZERO, h, -h, ZERO],
            BellKind::PsiPlus => [ZERO, h, h, ZERO],
            BellKind::PhiMinus => [h, ZERO, ZERO, -h],
            BellKind::PhiPlus => [h, ZERO, ZERO, h],
        };
        PureTwoQubitState { amps }
    }

    pub fn amps(&self) -> &[C64; 4] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Componentwise equality within `tol`.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.amps
            .iter()
            .zip(other.amps.iter())
            .all(|(a, b)| (a - b).norm() <= tol)
    }

    /// Equality up to a unit-modulus global factor.
    pub fn eq_up_to_phase(&self, other: &Self, tol: f64) -> bool {
        let (k, pivot) = other
            .amps
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.norm_sqr().total_cmp(&b.norm_sqr()))
            .expect("four amplitudes");
        if pivot.norm() <= tol {
            return false;
        }
        let phase = self.amps[k] / pivot;
        if (phase.norm() - 1.0).abs() > tol {
            return false;
        }
        self.amps
            .iter()
            .zip(other.amps.iter())
            .all(|(a, b)| (a - phase * b).norm() <= tol)
    }

    /// Which Bell state this is, up to global phase, if any.
    pub fn bell_kind(&self, tol: f64) -> Option<BellKind> {
        BellKind::ALL
            .into_iter()
            .find(|&k| self.eq_up_to_phase(&PureTwoQubitState::bell(k), tol))
    }

    /// True when the amplitude matrix has rank one, i.e. no entanglement.
    pub fn is_product(&self, tol: f64) -> bool {
        let [a00, a01, a10, a11] = self.amps;
        (a00 * a11 - a01 * a10).norm() <= tol
    }

    /// `(U ⊗ I)|ψ⟩` for particle A, `(I ⊗ U)|ψ⟩` for particle B.
    pub fn apply_pauli(&self, particle: Particle, op: PauliOp) -> Self {
        if op == PauliOp::Ident {
            return *self;
        }
        PureTwoQubitState {
            amps: apply_single(&self.amps, particle, &op.matrix()),
        }
    }

    /// Born probability of `outcome` when `particle` is measured along `axis`.
    pub fn outcome_probability(&self, particle: Particle, axis: &Axis, outcome: SpinOutcome) -> f64 {
        let projected = apply_single(&self.amps, particle, &axis.projector(outcome));
        let p: f64 = projected.iter().map(|a| a.norm_sqr()).sum();
        p.clamp(0.0, 1.0)
    }

    /// Projective measurement with standard collapse. Selects `Up` iff
    /// `u < P(Up)`.
    pub fn measure_spin(
        &self,
        particle: Particle,
        axis: &Axis,
        u: f64,
    ) -> Result<(SpinOutcome, Self), QstateError> {
        if !(0.0..1.0).contains(&u) {
            return Err(QstateError::DrawOutOfRange(u));
        }
        // Round-off can leave ~1e-33 on a branch that is exactly empty.
        let p_up = match self.outcome_probability(particle, axis, SpinOutcome::Up) {
            p if p < PROBABILITY_SNAP => 0.0,
            p if p > 1.0 - PROBABILITY_SNAP => 1.0,
            p => p,
        };
        let outcome = if u < p_up {
            SpinOutcome::Up
        } else {
            SpinOutcome::Down
        };
        let projected = apply_single(&self.amps, particle, &axis.projector(outcome));
        let p: f64 = projected.iter().map(|a| a.norm_sqr()).sum();
        if p < DEGENERATE_BRANCH {
            return Err(QstateError::DegenerateBranch(p));
        }
        let scale = 1.0 / p.sqrt();
        Ok((
            outcome,
            PureTwoQubitState {
                amps: projected.map(|a| a * scale),
            },
        ))
    }

    /// `P(out_A, out_B)` for A along `axis_a` and B along `axis_b`, indexed
    /// `[A outcome][B outcome]` with `Up = 0`.
    pub fn joint_distribution(&self, axis_a: &Axis, axis_b: &Axis) -> [[f64; 2]; 2] {
        let mut table = [[0.0; 2]; 2];
        for (i, oa) in [SpinOutcome::Up, SpinOutcome::Down].into_iter().enumerate() {
            let pa = apply_single(&self.amps, Particle::A, &axis_a.projector(oa));
            for (j, ob) in [SpinOutcome::Up, SpinOutcome::Down].into_iter().enumerate() {
                let pab = apply_single(&pa, Particle::B, &axis_b.projector(ob));
                table[i][j] = pab.iter().map(|a| a.norm_sqr()).sum();
            }
        }
        table
    }

    /// Probability that A along `axis_a` and B along `axis_b` disagree.
    pub fn anticorrelation_probability(&self, axis_a: &Axis, axis_b: &Axis) -> f64 {
        let t = self.joint_distribution(axis_a, axis_b);
        t[0][1] + t[1][0]
    }

    pub fn density(&self) -> DensityMatrix4 {
        let v = nalgebra::Vector4::from_column_slice(&self.amps);
        DensityMatrix4 {
            m: v * v.adjoint(),
        }
    }
}

impl fmt::Display for PureTwoQubitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels = ["00", "01", "10", "11"];
        let mut first = true;
        for (a, l) in self.amps.iter().zip(labels) {
            if a.norm() < 1e-12 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            write!(f, "({:.6}{:+.6}i)|{}⟩", a.re, a.im, l)?;
            first = false;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

fn index(a: SpinOutcome, b: SpinOutcome) -> usize {
    let bit = |o| match o {
        SpinOutcome::Up => 0,
        SpinOutcome::Down => 1,
    };
    2 * bit(a) + bit(b)
}

/// Applies a 2×2 operator to one tensor factor.
fn apply_single(amps: &[C64; 4], particle: Particle, u: &[[C64; 2]; 2]) -> [C64; 4] {
    let mut out = [ZERO; 4];
    for a in 0..2 {
        for b in 0..2 {
            let acc = match particle {
                Particle::A => u[a][0] * amps[b] + u[a][1] * amps[2 + b],
                Particle::B => u[b][0] * amps[2 * a] + u[b][1] * amps[2 * a + 1],
            };
            out[2 * a + b] = acc;
        }
    }
    out
}

pub fn make_bell(kind: BellKind) -> PureTwoQubitState {
    PureTwoQubitState::bell(kind)
}

/// Two-qubit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix4 {
    m: Matrix4<C64>,
}

impl DensityMatrix4 {
    pub fn new(m: Matrix4<C64>) -> Result<Self, QstateError> {
        validate_density(&m)?;
        Ok(DensityMatrix4 { m })
    }

    /// `¼·I`.
    pub fn maximally_mixed() -> Self {
        DensityMatrix4 {
            m: Matrix4::identity() * c(0.25, 0.0),
        }
    }

    /// Convex combination `Σ wᵢ ρᵢ`; weights must be non-negative and sum to 1.
    pub fn mixture<'a>(
        parts: impl IntoIterator<Item = (f64, &'a DensityMatrix4)>,
    ) -> Result<Self, QstateError> {
        let mut m = Matrix4::<C64>::zeros();
        let mut total = 0.0;
        for (w, rho) in parts {
            if !(w.is_finite() && w >= 0.0) {
                return Err(QstateError::InvalidDensity("negative or non-finite weight"));
            }
            total += w;
            m += rho.m * c(w, 0.0);
        }
        if (total - 1.0).abs() > ALGEBRA_TOLERANCE {
            return Err(QstateError::InvalidDensity("weights do not sum to one"));
        }
        DensityMatrix4::new(m)
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.m
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.m[(row, col)]
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix4) -> f64 {
        (self.m - other.m).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        let e = self.m.symmetric_eigenvalues();
        let mut out = [e[0], e[1], e[2], e[3]];
        out.sort_by(f64::total_cmp);
        out
    }

    /// Reduced state of `keep`, tracing out the other particle.
    pub fn partial_trace(&self, keep: Particle) -> DensityMatrix2 {
        let mut r = Matrix2::<C64>::zeros();
        for i in 0..2 {
            for j in 0..2 {
                r[(i, j)] = match keep {
                    Particle::A => self.m[(2 * i, 2 * j)] + self.m[(2 * i + 1, 2 * j + 1)],
                    Particle::B => self.m[(i, j)] + self.m[(2 + i, 2 + j)],
                };
            }
        }
        DensityMatrix2 { m: r }
    }
}

impl From<&PureTwoQubitState> for DensityMatrix4 {
    fn from(s: &PureTwoQubitState) -> Self {
        s.density()
    }
}

/// Single-particle density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix2 {
    m: Matrix2<C64>,
}

impl DensityMatrix2 {
    pub fn new(m: Matrix2<C64>) -> Result<Self, QstateError> {
        validate_density(&m)?;
        Ok(DensityMatrix2 { m })
    }

    /// `½·I`.
    pub fn maximally_mixed() -> Self {
        DensityMatrix2 {
            m: Matrix2::identity() * c(0.5, 0.0),
        }
    }

    /// `|o⟩⟨o|` for the z-basis state of `o`.
    pub fn z_projector(o: SpinOutcome) -> Self {
        let mut m = Matrix2::zeros();
        match o {
            SpinOutcome::Up => m[(0, 0)] = ONE,
            SpinOutcome::Down => m[(1, 1)] = ONE,
        }
        DensityMatrix2 { m }
    }

    pub fn matrix(&self) -> &Matrix2<C64> {
        &self.m
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix2) -> f64 {
        (self.m - other.m).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        let e = self.m.symmetric_eigenvalues();
        let mut out = [e[0], e[1]];
        out.sort_by(f64::total_cmp);
        out
    }
}

/// Partial trace onto one particle.
pub trait Marginal {
    fn marginal(&self, particle: Particle) -> DensityMatrix2;
}

impl Marginal for PureTwoQubitState {
    fn marginal(&self, particle: Particle) -> DensityMatrix2 {
        self.density().partial_trace(particle)
    }
}

impl Marginal for DensityMatrix4 {
    fn marginal(&self, particle: Particle) -> DensityMatrix2 {
        self.partial_trace(particle)
    }
}

pub fn marginal(state: &impl Marginal, particle: Particle) -> DensityMatrix2 {
    state.marginal(particle)
}

/// Equal-weight average of `(U⊗I)|bell⟩⟨bell|(U⊗I)†` over the four Pauli
/// operators. This is the pair state as seen by anyone who does not know the
/// lock record.
pub fn uniform_pauli_mixture(kind: BellKind) -> DensityMatrix4 {
    let bell = PureTwoQubitState::bell(kind);
    let mut m = Matrix4::<C64>::zeros();
    for op in PauliOp::ALL {
        m += bell.apply_pauli(Particle::A, op).density().m;
    }
    DensityMatrix4 { m: m * c(0.25, 0.0) }
}

fn validate_density<D>(m: &nalgebra::OMatrix<C64, D, D>) -> Result<(), QstateError>
where
    D: nalgebra::DimName,
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<D, D>
        + nalgebra::allocator::Allocator<D>
        + nalgebra::allocator::Allocator<nalgebra::DimDiff<D, nalgebra::U1>>
        + nalgebra::allocator::Allocator<D, nalgebra::DimDiff<D, nalgebra::U1>>,
    D: nalgebra::DimSub<nalgebra::U1>,
{
    if m.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(QstateError::NonFinite);
    }
    let herm_dev = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if herm_dev > ALGEBRA_TOLERANCE {
        return Err(QstateError::InvalidDensity("not Hermitian"));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > ALGEBRA_TOLERANCE || tr.im.abs() > ALGEBRA_TOLERANCE {
        return Err(QstateError::InvalidDensity("trace is not one"));
    }
    if m.clone().symmetric_eigenvalues().iter().any(|&e| e < -ALGEBRA_TOLERANCE) {
        return Err(QstateError::InvalidDensity("negative eigenvalue"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const H: f64 = FRAC_1_SQRT_2;

    fn real(v: [f64; 4]) -> [C64; 4] {
        v.map(|x| c(x, 0.0))
    }

    #[test]
    fn bell_amplitudes() {
        let psi_m = make_bell(BellKind::PsiMinus);
        assert_eq!(psi_m.amps(), &real([0.0, H, -H, 0.0]));
        let phi_p = make_bell(BellKind::PhiPlus);
        assert_eq!(phi_p.amps(), &real([H, 0.0, 0.0, H]));
        for k in BellKind::ALL {
            assert!((make_bell(k).norm_sqr() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn singlet_evolution_table() {
        let s = make_bell(BellKind::PsiMinus);
        let expect = [
            (PauliOp::X, BellKind::PhiMinus),
            (PauliOp::Y, BellKind::PhiPlus),
            (PauliOp::Z, BellKind::PsiPlus),
            (PauliOp::Ident, BellKind::PsiMinus),
        ];
        for (op, kind) in expect {
            let once = s.apply_pauli(Particle::A, op);
            assert!(once.eq_up_to_phase(&make_bell(kind), 1e-12), "{op:?}");
            assert_eq!(once.bell_kind(1e-12), Some(kind));
            let twice = once.apply_pauli(Particle::A, op);
            assert!(twice.approx_eq(&s, 1e-12), "{op:?} twice");
        }
    }

    #[test]
    fn y_introduces_a_phase() {
        let s = make_bell(BellKind::PsiMinus).apply_pauli(Particle::A, PauliOp::Y);
        assert!(!s.approx_eq(&make_bell(BellKind::PhiPlus), 1e-12));
        assert!(s.eq_up_to_phase(&make_bell(BellKind::PhiPlus), 1e-12));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            PureTwoQubitState::new(real([1.0, 1.0, 0.0, 0.0])),
            Err(QstateError::NotNormalized(_))
        ));
        assert!(PureTwoQubitState::new(real([f64::NAN, 0.0, 0.0, 0.0])).is_err());
        assert!(matches!(Axis::new(1.0, 1.0, 0.0), Err(QstateError::NonUnitAxis { .. })));
        let s = make_bell(BellKind::PsiMinus);
        assert!(matches!(
            s.measure_spin(Particle::A, &Axis::Z, 1.0),
            Err(QstateError::DrawOutOfRange(_))
        ));
    }

    #[test]
    fn outcome_probabilities() {
        let up_up = PureTwoQubitState::basis(SpinOutcome::Up, SpinOutcome::Up);
        assert_eq!(up_up.outcome_probability(Particle::A, &Axis::Z, SpinOutcome::Up), 1.0);
        let s = make_bell(BellKind::PsiMinus);
        for axis in [Axis::X, Axis::Y, Axis::Z, Axis::from_spherical(0.3, 1.9)] {
            let p = s.outcome_probability(Particle::A, &axis, SpinOutcome::Up);
            assert!((p - 0.5).abs() < 1e-12);
        }
        let p = s.outcome_probability(Particle::B, &Axis::Z, SpinOutcome::Down);
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singlet_collapse() {
        let s = make_bell(BellKind::PsiMinus);
        let (o, post) = s.measure_spin(Particle::A, &Axis::Z, 0.3).unwrap();
        assert_eq!(o, SpinOutcome::Up);
        assert!(post.eq_up_to_phase(
            &PureTwoQubitState::basis(SpinOutcome::Up, SpinOutcome::Down),
            1e-12
        ));
        let (o, post) = s.measure_spin(Particle::A, &Axis::Z, 0.7).unwrap();
        assert_eq!(o, SpinOutcome::Down);
        assert!(post.eq_up_to_phase(
            &PureTwoQubitState::basis(SpinOutcome::Down, SpinOutcome::Up),
            1e-12
        ));
    }

    #[test]
    fn singlet_anticorrelates_on_common_axis() {
        let s = make_bell(BellKind::PsiMinus);
        for &ua in &[0.0, 0.2, 0.49, 0.51, 0.99] {
            for &ub in &[0.0, 0.5, 0.999] {
                let axis = Axis::from_spherical(1.1, 0.4);
                let (oa, post) = s.measure_spin(Particle::A, &axis, ua).unwrap();
                let (ob, _) = post.measure_spin(Particle::B, &axis, ub).unwrap();
                assert_ne!(oa, ob);
            }
        }
    }

    #[test]
    fn product_pair_random_axis_pass_rate_endpoints() {
        let dd = PureTwoQubitState::basis(SpinOutcome::Down, SpinOutcome::Down);
        // Along z both are down: never disagree. Along x: independent fair coins.
        assert!(dd.anticorrelation_probability(&Axis::Z, &Axis::Z).abs() < 1e-12);
        assert!((dd.anticorrelation_probability(&Axis::X, &Axis::X) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn locking_mixture_is_quarter_identity() {
        let quarter = DensityMatrix4::maximally_mixed();
        for k in BellKind::ALL {
            let rho = uniform_pauli_mixture(k);
            assert!(rho.max_abs_diff(&quarter) <= 1e-12, "{k:?}");
        }
        let products: Vec<_> = [
            (SpinOutcome::Up, SpinOutcome::Down),
            (SpinOutcome::Down, SpinOutcome::Up),
            (SpinOutcome::Up, SpinOutcome::Up),
            (SpinOutcome::Down, SpinOutcome::Down),
        ]
        .into_iter()
        .map(|(a, b)| PureTwoQubitState::basis(a, b).density())
        .collect();
        let mix = DensityMatrix4::mixture(products.iter().map(|r| (0.25, r))).unwrap();
        assert!(uniform_pauli_mixture(BellKind::PsiMinus).max_abs_diff(&mix) <= 1e-12);
    }

    #[test]
    fn marginals() {
        let half = DensityMatrix2::maximally_mixed();
        for k in BellKind::ALL {
            for p in [Particle::A, Particle::B] {
                assert!(marginal(&make_bell(k), p).max_abs_diff(&half) <= 1e-12);
            }
        }
        let s = PureTwoQubitState::basis(SpinOutcome::Up, SpinOutcome::Down);
        assert!(
            marginal(&s, Particle::A).max_abs_diff(&DensityMatrix2::z_projector(SpinOutcome::Up))
                <= 1e-12
        );
        assert!(
            marginal(&s, Particle::B).max_abs_diff(&DensityMatrix2::z_projector(SpinOutcome::Down))
                <= 1e-12
        );
        assert!(
            marginal(&DensityMatrix4::maximally_mixed(), Particle::B).max_abs_diff(&half) <= 1e-12
        );
    }

    #[test]
    fn density_validation() {
        let mut m = Matrix4::<C64>::identity() * c(0.25, 0.0);
        assert!(DensityMatrix4::new(m).is_ok());
        m[(0, 1)] = c(0.1, 0.0);
        assert_eq!(
            DensityMatrix4::new(m),
            Err(QstateError::InvalidDensity("not Hermitian"))
        );
        let neg = Matrix2::new(c(1.5, 0.0), ZERO, ZERO, c(-0.5, 0.0));
        assert_eq!(
            DensityMatrix2::new(neg),
            Err(QstateError::InvalidDensity("negative eigenvalue"))
        );
        let rho = make_bell(BellKind::PhiMinus).density();
        let ev = rho.eigenvalues();
        assert!((ev[3] - 1.0).abs() < 1e-12 && ev[0].abs() < 1e-12);
        assert!(DensityMatrix4::new(*rho.matrix()).is_ok());
    }

    fn arb_state() -> impl Strategy<Value = PureTwoQubitState> {
        prop::array::uniform8(-1.0f64..1.0)
            .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
            .prop_map(|v| {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let amps = [
                    c(v[0] / n, v[1] / n),
                    c(v[2] / n, v[3] / n),
                    c(v[4] / n, v[5] / n),
                    c(v[6] / n, v[7] / n),
                ];
                PureTwoQubitState::new(amps).unwrap()
            })
    }

    fn arb_axis() -> impl Strategy<Value = Axis> {
        (-1.0f64..=1.0, 0.0f64..std::f64::consts::TAU)
            .prop_map(|(z, phi)| Axis::from_height_azimuth(z, phi))
    }

    fn arb_particle() -> impl Strategy<Value = Particle> {
        prop_oneof![Just(Particle::A), Just(Particle::B)]
    }

    fn arb_op() -> impl Strategy<Value = PauliOp> {
        prop::sample::select(PauliOp::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn pauli_is_unitary_and_involutive(s in arb_state(), p in arb_particle(), op in arb_op()) {
            let once = s.apply_pauli(p, op);
            prop_assert!((once.norm_sqr() - s.norm_sqr()).abs() <= 1e-12);
            prop_assert!(once.apply_pauli(p, op).approx_eq(&s, 1e-12));
        }

        #[test]
        fn born_rule_is_complete(s in arb_state(), p in arb_particle(), a in arb_axis()) {
            let up = s.outcome_probability(p, &a, SpinOutcome::Up);
            let down = s.outcome_probability(p, &a, SpinOutcome::Down);
            prop_assert!((up + down - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn collapse_is_idempotent(s in arb_state(), p in arb_particle(), a in arb_axis(), u in 0.0f64..1.0) {
            if let Ok((o, post)) = s.measure_spin(p, &a, u) {
                prop_assert!((post.norm_sqr() - 1.0).abs() <= 1e-9);
                prop_assert!((post.outcome_probability(p, &a, o) - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn local_pauli_commutes_with_remote_measurement(
            s in arb_state(), op in arb_op(), a in arb_axis(), b in arb_axis()
        ) {
            // Route 1: Pauli on A, then measure B along b and A along a.
            let direct = s.apply_pauli(Particle::A, op).joint_distribution(&a, &b);
            // Route 2: measure B first, collapse, then Pauli on A, then measure A.
            let mut routed = [[0.0; 2]; 2];
            for (j, ob) in [SpinOutcome::Up, SpinOutcome::Down].into_iter().enumerate() {
                let pb = s.outcome_probability(Particle::B, &b, ob);
                if pb < 1e-14 {
                    continue;
                }
                let u = match ob { SpinOutcome::Up => 0.0, SpinOutcome::Down => 1.0 - f64::EPSILON };
                let (got, post) = s.measure_spin(Particle::B, &b, u).unwrap();
                prop_assume!(got == ob);
                let post = post.apply_pauli(Particle::A, op);
                for (i, oa) in [SpinOutcome::Up, SpinOutcome::Down].into_iter().enumerate() {
                    routed[i][j] = pb * post.outcome_probability(Particle::A, &a, oa);
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((direct[i][j] - routed[i][j]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn bell_marginals_are_maximally_mixed(k in prop::sample::select(BellKind::ALL.to_vec()), op in arb_op()) {
            let s = make_bell(k).apply_pauli(Particle::A, op);
            prop_assert!(marginal(&s, Particle::B).max_abs_diff(&DensityMatrix2::maximally_mixed()) <= 1e-12);
        }
    }
}
