//! Single-excitation structure: the Hilbert space splits into a block reached
//! after extractions and a block reached after injections.
//!
//! Every bath jump operator must map the post-injection block into the
//! post-extraction block, and the Hamiltonian and work-reservoir operators
//! must not couple the two. Under these conditions injections and extractions
//! strictly alternate along any trajectory.

use nalgebra::SVD;
use thiserror::Error;

use crate::linalg::{c, singular_values, ComplexMatrix};
use crate::model::LindbladModel;

/// Relative tolerance used for ranks and structural violations.
pub const STRUCTURE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StructureError {
    #[error("model has no bath channels")]
    NoChannels,
    #[error("bath channel {index} is not nilpotent (|L^2| = {norm:.3e})")]
    NotNilpotent { index: usize, norm: f64 },
    #[error(
        "bath channel {index} does not map into the common extraction block \
         (leak {leak:.3e})"
    )]
    NoCommonSplit { index: usize, leak: f64 },
}

/// Orthogonal decomposition `H = H_E ⊕ H_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceSplit {
    /// Orthonormal basis of the post-extraction block, one column per vector.
    pub basis_extract: ComplexMatrix,
    /// Orthonormal basis of the post-injection block.
    pub basis_inject: ComplexMatrix,
    /// Directions of the post-extraction block that no jump operator reaches.
    pub dark_dimension: usize,
}

impl SubspaceSplit {
    pub fn dim(&self) -> usize {
        self.basis_extract.nrows()
    }

    pub fn projector_extract(&self) -> ComplexMatrix {
        &self.basis_extract * self.basis_extract.adjoint()
    }

    pub fn projector_inject(&self) -> ComplexMatrix {
        &self.basis_inject * self.basis_inject.adjoint()
    }
}

fn spectral_norm(a: &ComplexMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    singular_values(a).first().copied().unwrap_or(0.0)
}

fn rank(sv: &[f64]) -> usize {
    let top = sv.first().copied().unwrap_or(0.0);
    sv.iter().filter(|&&s| s > STRUCTURE_TOL * top).count()
}

/// Finds the split from the bath jump operators alone.
///
/// `H_I` is the joint row space of the extraction operators and `H_E` its
/// orthogonal complement, so directions no operator touches end up in `H_E`
/// and are reported as dark.
pub fn find_subspaces(model: &LindbladModel) -> Result<SubspaceSplit, StructureError> {
    let d = model.dim();
    let ops: Vec<&ComplexMatrix> = model.bath_channels().iter().map(|ch| &ch.operator).collect();
    if ops.is_empty() {
        return Err(StructureError::NoChannels);
    }
    for (index, l) in ops.iter().enumerate() {
        let l2 = *l * *l;
        let scale = l.norm().powi(2);
        let norm = l2.norm();
        if norm > STRUCTURE_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(StructureError::NotNilpotent { index, norm });
        }
    }

    let mut stacked = ComplexMatrix::zeros(ops.len() * d, d);
    for (k, l) in ops.iter().enumerate() {
        stacked.view_mut((k * d, 0), (d, d)).copy_from(*l);
    }
    let svd = SVD::new(stacked, false, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let r = rank(&sv);
    let v = svd.v_t.expect("right singular vectors requested").adjoint();
    let basis_inject = v.columns(0, r).into_owned();
    let basis_extract = v.columns(r, d - r).into_owned();

    let p_inject = &basis_inject * basis_inject.adjoint();
    for (index, l) in ops.iter().enumerate() {
        let leak = spectral_norm(&(&p_inject * *l));
        if leak > STRUCTURE_TOL * spectral_norm(l).max(f64::MIN_POSITIVE) {
            return Err(StructureError::NoCommonSplit { index, leak });
        }
    }

    let mut side = ComplexMatrix::zeros(d, ops.len() * d);
    for (k, l) in ops.iter().enumerate() {
        side.view_mut((0, k * d), (d, d)).copy_from(*l);
    }
    let reached = rank(&singular_values(&side));
    let dark_dimension = (d - r).saturating_sub(reached);

    Ok(SubspaceSplit {
        basis_extract,
        basis_inject,
        dark_dimension,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// Bath jumps take `H_I` into `H_E` and annihilate `H_E`.
    JumpsCrossBlocks,
    /// The Hamiltonian does not couple `H_E` and `H_I`.
    HamiltonianBlockDiagonal,
    /// Work-reservoir operators do not couple `H_E` and `H_I`.
    WorkBlockDiagonal,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::JumpsCrossBlocks => "jumps_cross_blocks",
            Condition::HamiltonianBlockDiagonal => "hamiltonian_block_diagonal",
            Condition::WorkBlockDiagonal => "work_block_diagonal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub condition: Condition,
    /// Largest spectral norm of the forbidden part.
    pub violation: f64,
    /// Spectral norm of the operator the violation is measured against.
    pub scale: f64,
    /// Operator index (channel or work operator) carrying the largest violation.
    pub operator: Option<usize>,
    /// Largest entry of the forbidden part, in the computational basis.
    pub worst_entry: Option<(usize, usize)>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub checks: Vec<ConditionCheck>,
    pub dark_dimension: usize,
}

impl StructureReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConditionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, condition: Condition) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.condition == condition)
    }
}

fn worst_entry(m: &ComplexMatrix) -> Option<(usize, usize)> {
    let mut best = None;
    let mut best_abs = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let a = m[(i, j)].norm();
            if a > best_abs {
                best_abs = a;
                best = Some((i, j));
            }
        }
    }
    best
}

fn evaluate<'a>(
    condition: Condition,
    ops: impl Iterator<Item = &'a ComplexMatrix>,
    forbidden: impl Fn(&ComplexMatrix) -> ComplexMatrix,
) -> ConditionCheck {
    let mut check = ConditionCheck {
        condition,
        violation: 0.0,
        scale: 0.0,
        operator: None,
        worst_entry: None,
        passed: true,
    };
    for (index, op) in ops.enumerate() {
        let part = forbidden(op);
        let violation = spectral_norm(&part);
        let scale = spectral_norm(op);
        if violation > STRUCTURE_TOL * scale {
            check.passed = false;
        }
        if violation > check.violation {
            check.violation = violation;
            check.operator = Some(index);
            check.worst_entry = worst_entry(&part);
        }
        check.scale = check.scale.max(scale);
    }
    check
}

/// Checks the three block conditions against a given split.
pub fn check_single_excitation(model: &LindbladModel, split: &SubspaceSplit) -> StructureReport {
    let p_e = split.projector_extract();
    let p_i = split.projector_inject();
    let jumps = evaluate(
        Condition::JumpsCrossBlocks,
        model.bath_channels().iter().map(|ch| &ch.operator),
        |l| l - &p_e * l * &p_i,
    );
    let off_diagonal = |m: &ComplexMatrix| &p_e * m * &p_i + &p_i * m * &p_e;
    let hamiltonian = evaluate(
        Condition::HamiltonianBlockDiagonal,
        std::iter::once(model.hamiltonian()),
        off_diagonal,
    );
    let work = evaluate(Condition::WorkBlockDiagonal, model.work_ops().iter(), off_diagonal);
    StructureReport {
        checks: vec![jumps, hamiltonian, work],
        dark_dimension: split.dark_dimension,
    }
}

/// Runs [`find_subspaces`] and [`check_single_excitation`] in one go.
pub fn analyze_structure(
    model: &LindbladModel,
) -> Result<(SubspaceSplit, StructureReport), StructureError> {
    let split = find_subspaces(model)?;
    let report = check_single_excitation(model, &split);
    Ok((split, report))
}

/// Projects onto the computational-basis vectors listed in `levels`.
pub fn basis_projector(dim: usize, levels: &[usize]) -> ComplexMatrix {
    let mut p = ComplexMatrix::zeros(dim, dim);
    for &k in levels {
        p[(k, k)] = c(1.0, 0.0);
    }
    p
}
