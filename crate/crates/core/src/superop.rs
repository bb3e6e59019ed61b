//! Liouvillian, jump superoperators, no-jump generator and steady states.
//!
//! Operators are column-stacked, so `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::linalg::{
    c, devectorize, left_mul, nullspace_onedim, right_mul, sandwich, trace, trace_vec, vectorize,
    ComplexMatrix, ComplexVector, LinalgError, LuSolver, C64,
};
use crate::model::{BathLabel, ChannelId, ChannelKind, LindbladModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SuperopError {
    #[error("steady state is not unique: {0}")]
    NonUniqueSteadyState(LinalgError),
    #[error("no-jump generator is singular (dark subspace?): {0}")]
    SingularNoJump(LinalgError),
    #[error("no monitored jump activity in the steady state")]
    NoActivity,
    #[error(
        "excitation current mismatch {mismatch:.3e} between cold ({cold:.6e}) and hot \
         ({hot:.6e}) side; model is not single-excitation"
    )]
    CurrentMismatch { cold: f64, hot: f64, mismatch: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Linear map on `d × d` operators stored as a `d² × d²` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    dim: usize,
    matrix: ComplexMatrix,
}

impl Superoperator {
    pub fn new(dim: usize, matrix: ComplexMatrix) -> Self {
        assert_eq!(matrix.nrows(), dim * dim);
        assert_eq!(matrix.ncols(), dim * dim);
        Self { dim, matrix }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(dim, ComplexMatrix::zeros(dim * dim, dim * dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        devectorize(self.dim, &(&self.matrix * vectorize(rho)))
    }

    pub fn apply_vec(&self, v: &ComplexVector) -> ComplexVector {
        &self.matrix * v
    }

    /// `tr(S ρ)` for a vectorized `ρ`.
    pub fn trace_of(&self, v: &ComplexVector) -> f64 {
        trace_vec(self.dim, &self.apply_vec(v)).re
    }
}

impl std::ops::Add<&Superoperator> for &Superoperator {
    type Output = Superoperator;
    fn add(self, rhs: &Superoperator) -> Superoperator {
        Superoperator::new(self.dim, &self.matrix + &rhs.matrix)
    }
}

impl std::ops::Sub<&Superoperator> for &Superoperator {
    type Output = Superoperator;
    fn sub(self, rhs: &Superoperator) -> Superoperator {
        Superoperator::new(self.dim, &self.matrix - &rhs.matrix)
    }
}

impl std::ops::Mul<&Superoperator> for &Superoperator {
    type Output = Superoperator;
    fn mul(self, rhs: &Superoperator) -> Superoperator {
        Superoperator::new(self.dim, &self.matrix * &rhs.matrix)
    }
}

/// `D[A]ρ = AρA† - ½{A†A, ρ}` as a superoperator.
pub fn dissipator(a: &ComplexMatrix) -> ComplexMatrix {
    let ad = a.adjoint();
    let ada = &ad * a;
    sandwich(a, &ad) - (left_mul(&ada) + right_mul(&ada)) * c(0.5, 0.0)
}

/// `-i[H, ·]`.
pub fn commutator_generator(h: &ComplexMatrix) -> ComplexMatrix {
    (left_mul(h) - right_mul(h)) * c(0.0, -1.0)
}

/// Full GKSL generator including work-reservoir dissipators.
pub fn build_liouvillian(model: &LindbladModel) -> Superoperator {
    let mut l = commutator_generator(model.hamiltonian());
    for ch in model.bath_channels() {
        if ch.rate_minus != 0.0 {
            l += dissipator(&ch.operator) * c(ch.rate_minus, 0.0);
        }
        if ch.rate_plus != 0.0 {
            l += dissipator(&ch.operator.adjoint()) * c(ch.rate_plus, 0.0);
        }
    }
    for k in model.work_ops() {
        l += dissipator(k);
    }
    Superoperator::new(model.dim(), l)
}

/// Jump superoperators of the four monitored channels plus the unmonitored
/// work-reservoir part.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpChannels {
    pub monitored: BTreeMap<ChannelId, Superoperator>,
    pub unmonitored: Superoperator,
}

impl JumpChannels {
    pub fn get(&self, id: ChannelId) -> &Superoperator {
        &self.monitored[&id]
    }

    /// Sum of the monitored channels of one kind.
    pub fn kind_total(&self, kind: ChannelKind) -> Superoperator {
        let dim = self.unmonitored.dim();
        self.monitored
            .iter()
            .filter(|(id, _)| id.kind == kind)
            .fold(Superoperator::zeros(dim), |acc, (_, s)| &acc + s)
    }

    /// Sum of all monitored channels.
    pub fn monitored_total(&self) -> Superoperator {
        let dim = self.unmonitored.dim();
        self.monitored
            .values()
            .fold(Superoperator::zeros(dim), |acc, s| &acc + s)
    }
}

pub fn build_jump_channels(model: &LindbladModel) -> JumpChannels {
    let d = model.dim();
    let mut monitored: BTreeMap<ChannelId, Superoperator> = ChannelId::ALL
        .into_iter()
        .map(|id| (id, Superoperator::zeros(d)))
        .collect();
    for ch in model.bath_channels() {
        for kind in [ChannelKind::Extraction, ChannelKind::Injection] {
            let rate = ch.rate(kind);
            if rate == 0.0 {
                continue;
            }
            let a = ch.jump_operator(kind);
            let s = monitored.get_mut(&ChannelId::new(ch.bath, kind)).unwrap();
            s.matrix += sandwich(&a, &a.adjoint()) * c(rate, 0.0);
        }
    }
    let mut unmonitored = ComplexMatrix::zeros(d * d, d * d);
    for k in model.work_ops() {
        unmonitored += sandwich(k, &k.adjoint());
    }
    JumpChannels {
        monitored,
        unmonitored: Superoperator::new(d, unmonitored),
    }
}

/// Every superoperator the cycle analysis needs, built once per model.
#[derive(Debug, Clone)]
pub struct MachineOperators {
    pub liouvillian: Superoperator,
    pub jumps: JumpChannels,
    /// `ℒ₀ = ℒ - Σ 𝒥` over the monitored channels; it still contains the
    /// work-reservoir jumps, which are not part of the recorded strings.
    pub no_jump: Superoperator,
    no_jump_lu: LuSolver,
}

impl MachineOperators {
    pub fn new(model: &LindbladModel) -> Result<Self, SuperopError> {
        let liouvillian = build_liouvillian(model);
        let jumps = build_jump_channels(model);
        let no_jump = &liouvillian - &jumps.monitored_total();
        let no_jump_lu = LuSolver::new(no_jump.matrix()).map_err(SuperopError::SingularNoJump)?;
        Ok(Self {
            liouvillian,
            jumps,
            no_jump,
            no_jump_lu,
        })
    }

    pub fn dim(&self) -> usize {
        self.liouvillian.dim()
    }

    /// Coherent no-jump generator `ρ ↦ -i(H_e ρ - ρ H_e†)`, i.e. `ℒ₀ - 𝒥_K`.
    pub fn coherent_no_jump(&self) -> Superoperator {
        &self.no_jump - &self.jumps.unmonitored
    }

    /// `ℒ₀⁻¹ v`.
    pub fn solve_no_jump(&self, v: &ComplexVector) -> Result<ComplexVector, SuperopError> {
        Ok(self.no_jump_lu.solve_vec(v)?)
    }

    /// `ℒ₀⁻¹ M` for a matrix right-hand side.
    pub fn solve_no_jump_mat(&self, m: &ComplexMatrix) -> Result<ComplexMatrix, SuperopError> {
        Ok(self.no_jump_lu.solve_mat(m)?)
    }

    pub fn no_jump_condition(&self) -> f64 {
        self.no_jump_lu.condition()
    }

    /// Applies `𝓜 = -𝒥 ℒ₀⁻¹` restricted to `channels`.
    pub fn jump_map(
        &self,
        channels: &Superoperator,
        v: &ComplexVector,
    ) -> Result<ComplexVector, SuperopError> {
        Ok(-channels.apply_vec(&self.solve_no_jump(v)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateBundle {
    pub rho_ss: ComplexMatrix,
    /// Jump steady state `𝒥ρ_ss / K_hc`.
    pub pi: ComplexMatrix,
    pub pi_e: ComplexMatrix,
    pub pi_i: ComplexMatrix,
    pub p_e: f64,
    pub p_i: f64,
    /// Monitored jumps per unit time, `tr(𝒥ρ_ss)`.
    pub activity_hc: f64,
    pub activity_e: f64,
    pub activity_i: f64,
    /// Activity including the unmonitored work-reservoir jumps.
    pub activity_total: f64,
}

fn hermitize(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

fn normalized(m: ComplexMatrix) -> (ComplexMatrix, f64) {
    let t = trace(&m).re;
    if t > 0.0 {
        (hermitize(&(m / C64::new(t, 0.0))), t)
    } else {
        (m, t)
    }
}

pub fn steady_state(liouvillian: &Superoperator) -> Result<ComplexMatrix, SuperopError> {
    let v = nullspace_onedim(liouvillian.matrix()).map_err(SuperopError::NonUniqueSteadyState)?;
    let rho = devectorize(liouvillian.dim(), &v);
    let t = trace(&rho);
    Ok(hermitize(&(rho / t)))
}

pub fn steady_bundle(ops: &MachineOperators) -> Result<SteadyStateBundle, SuperopError> {
    let rho_ss = steady_state(&ops.liouvillian)?;
    let jumps = &ops.jumps;
    let (pi, activity_hc) = normalized(jumps.monitored_total().apply(&rho_ss));
    let (pi_e, activity_e) = normalized(jumps.kind_total(ChannelKind::Extraction).apply(&rho_ss));
    let (pi_i, activity_i) = normalized(jumps.kind_total(ChannelKind::Injection).apply(&rho_ss));
    if !(activity_hc > 0.0 && activity_e > 0.0 && activity_i > 0.0) {
        return Err(SuperopError::NoActivity);
    }
    let activity_total = activity_hc + trace(&jumps.unmonitored.apply(&rho_ss)).re;
    Ok(SteadyStateBundle {
        rho_ss,
        pi,
        pi_e,
        pi_i,
        p_e: activity_e / activity_hc,
        p_i: activity_i / activity_hc,
        activity_hc,
        activity_e,
        activity_i,
        activity_total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentReport {
    /// `tr{(𝒥_{E_c} - 𝒥_{I_c})ρ_ss}`, the returned current.
    pub cold_side: f64,
    /// `-tr{(𝒥_{E_h} - 𝒥_{I_h})ρ_ss}`.
    pub hot_side: f64,
    pub mismatch: f64,
}

/// Tolerance on the cold/hot current mismatch, relative to `max(1, K_hc)`.
pub const CURRENT_TOL: f64 = 1e-10;

pub fn excitation_current(
    ops: &MachineOperators,
    bundle: &SteadyStateBundle,
) -> Result<CurrentReport, SuperopError> {
    let rho = &bundle.rho_ss;
    let net = |bath| {
        let e = ops.jumps.get(ChannelId::new(bath, ChannelKind::Extraction)).apply(rho);
        let i = ops.jumps.get(ChannelId::new(bath, ChannelKind::Injection)).apply(rho);
        trace(&(e - i)).re
    };
    let cold_side = net(BathLabel::Cold);
    let hot_side = -net(BathLabel::Hot);
    let mismatch = (cold_side - hot_side).abs();
    if mismatch > CURRENT_TOL * bundle.activity_hc.max(1.0) {
        return Err(SuperopError::CurrentMismatch {
            cold: cold_side,
            hot: hot_side,
            mismatch,
        });
    }
    Ok(CurrentReport {
        cold_side,
        hot_side,
        mismatch,
    })
}
