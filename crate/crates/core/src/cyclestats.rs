//! Cycle-resolved statistics from the superoperator algebra.
//!
//! A cycle `X` is an injection `I_X` followed by the next extraction `E_X`.
//! Its duration density is `p_X(τ) = tr{𝒪_{X,τ} π_E}` with
//! `𝒪_{X,τ} = ∫₀^τ 𝒥_{E_X} e^{ℒ₀(τ-t)} 𝒥_{I_X} e^{ℒ₀t} dt`, and integrating
//! over `τ` gives `𝒪_X = 𝒥_{E_X} ℒ₀⁻¹ 𝒥_{I_X} ℒ₀⁻¹`.

use std::fmt;

use log::warn;
use nalgebra::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::linalg::{
    c, expm, spectral_abscissa, spectral_radius, trace_vec, vectorize, ComplexMatrix,
    ComplexVector, LinalgError, C64,
};
use crate::model::{BathLabel, ChannelId, ChannelKind, LindbladModel};
use crate::superop::{
    excitation_current, steady_bundle, CurrentReport, MachineOperators, SteadyStateBundle,
    Superoperator, SuperopError,
};

/// Conditional quantities are undefined below this cycle probability.
pub const MIN_CONDITIONING_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CycleError {
    #[error(transparent)]
    Superop(#[from] SuperopError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("conditioning on near-impossible cycle {label} (p = {probability:.3e})")]
    NearImpossible { label: CycleLabel, probability: f64 },
    #[error("useful cycles effectively never occur (p_u = {0:.3e})")]
    NoUsefulCycles(f64),
    #[error("invalid time grid: {0}")]
    BadGrid(String),
}

/// The four cycle types, numbered as `1: I_h E_c`, `2: I_c E_h`,
/// `3: I_h E_h`, `4: I_c E_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CycleLabel {
    WorkExtraction,
    Refrigeration,
    HotIdle,
    ColdIdle,
}

impl CycleLabel {
    pub const ALL: [CycleLabel; 4] = [
        CycleLabel::WorkExtraction,
        CycleLabel::Refrigeration,
        CycleLabel::HotIdle,
        CycleLabel::ColdIdle,
    ];

    /// 1-based cycle number.
    pub fn number(self) -> usize {
        self.slot() + 1
    }

    /// 0-based position in arrays of four.
    pub fn slot(self) -> usize {
        match self {
            CycleLabel::WorkExtraction => 0,
            CycleLabel::Refrigeration => 1,
            CycleLabel::HotIdle => 2,
            CycleLabel::ColdIdle => 3,
        }
    }

    pub fn from_number(x: usize) -> Option<Self> {
        Self::ALL.get(x.checked_sub(1)?).copied()
    }

    pub fn injection_bath(self) -> BathLabel {
        match self {
            CycleLabel::WorkExtraction | CycleLabel::HotIdle => BathLabel::Hot,
            CycleLabel::Refrigeration | CycleLabel::ColdIdle => BathLabel::Cold,
        }
    }

    pub fn extraction_bath(self) -> BathLabel {
        match self {
            CycleLabel::Refrigeration | CycleLabel::HotIdle => BathLabel::Hot,
            CycleLabel::WorkExtraction | CycleLabel::ColdIdle => BathLabel::Cold,
        }
    }

    pub fn injection(self) -> ChannelId {
        ChannelId::new(self.injection_bath(), ChannelKind::Injection)
    }

    pub fn extraction(self) -> ChannelId {
        ChannelId::new(self.extraction_bath(), ChannelKind::Extraction)
    }

    pub fn from_pair(injection: BathLabel, extraction: BathLabel) -> Self {
        match (injection, extraction) {
            (BathLabel::Hot, BathLabel::Cold) => CycleLabel::WorkExtraction,
            (BathLabel::Cold, BathLabel::Hot) => CycleLabel::Refrigeration,
            (BathLabel::Hot, BathLabel::Hot) => CycleLabel::HotIdle,
            (BathLabel::Cold, BathLabel::Cold) => CycleLabel::ColdIdle,
        }
    }

    pub fn is_useful(self) -> bool {
        matches!(self, CycleLabel::WorkExtraction | CycleLabel::Refrigeration)
    }
}

impl fmt::Display for CycleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}{})", self.number(), self.injection(), self.extraction())
    }
}

/// Uniform grid `τ_k = k t_max / (n_points - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_max: f64,
    pub n_points: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, n_points: usize) -> Result<Self, CycleError> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(CycleError::BadGrid(format!("t_max = {t_max} must be positive")));
        }
        if n_points < 2 {
            return Err(CycleError::BadGrid(format!("n_points = {n_points} must be at least 2")));
        }
        Ok(Self { t_max, n_points })
    }

    pub fn spacing(&self) -> f64 {
        self.t_max / (self.n_points - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n_points).map(|k| k as f64 * h).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    MonteCarlo,
    ClosedForm,
}

fn serialize_opt<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_finite() => s.serialize_f64(*x),
        _ => s.serialize_none(),
    }
}

fn serialize_opt4<S: Serializer>(v: &[Option<f64>; 4], s: S) -> Result<S::Ok, S::Error> {
    let vals: Vec<Option<f64>> = v.iter().map(|x| x.filter(|y| y.is_finite())).collect();
    vals.serialize(s)
}

/// Summary of the cycle statistics of one machine.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleStatistics {
    pub p: [f64; 4],
    /// `E(τ|X)`; `None` for cycles that effectively never occur.
    #[serde(serialize_with = "serialize_opt4")]
    pub e_tau_cond: [Option<f64>; 4],
    pub e_tau: f64,
    pub i_ex: f64,
    #[serde(serialize_with = "serialize_opt")]
    pub sigma_per_cycle: Option<f64>,
    #[serde(serialize_with = "serialize_opt")]
    pub mean_entropy: Option<f64>,
    #[serde(serialize_with = "serialize_opt")]
    pub var_entropy: Option<f64>,
    /// Mean number of idle cycles between useful ones; `None` if `p_u ≈ 0`.
    #[serde(serialize_with = "serialize_opt")]
    pub mean_idle: Option<f64>,
    #[serde(serialize_with = "serialize_opt")]
    pub time_ratio: Option<f64>,
    pub provenance: Provenance,
}

impl CycleStatistics {
    pub fn p_useful(&self) -> f64 {
        self.p[0] + self.p[1]
    }

    pub fn p_idle(&self) -> f64 {
        self.p[2] + self.p[3]
    }
}

/// `(E(Σ_cyc), Var(Σ_cyc))` for entropy `σ` per work-extraction cycle,
/// `-σ` per refrigeration cycle and zero for idles.
pub fn entropy_moments(p: &[f64; 4], sigma: f64) -> (f64, f64) {
    let net = p[0] - p[1];
    let p_id = p[2] + p[3];
    (sigma * net, sigma * sigma * ((1.0 - p_id) - net * net))
}

/// `(⟨n⟩, 𝒯)` from cycle probabilities and conditional mean durations.
pub fn intermittency_from(
    p: &[f64; 4],
    e_tau_cond: &[Option<f64>; 4],
) -> Result<(f64, f64), CycleError> {
    let p_u = p[0] + p[1];
    if p_u <= MIN_CONDITIONING_PROBABILITY {
        return Err(CycleError::NoUsefulCycles(p_u));
    }
    let weighted = |x: usize| if p[x] > 0.0 { p[x] * e_tau_cond[x].unwrap_or(0.0) } else { 0.0 };
    let mean_idle = (p[2] + p[3]) / p_u;
    let time_ratio = (weighted(2) + weighted(3)) / (weighted(0) + weighted(1));
    Ok((mean_idle, time_ratio))
}

/// Duration densities on a grid, with the mass beyond the last point.
#[derive(Debug, Clone, PartialEq)]
pub struct TauDensity {
    pub label: CycleLabel,
    pub taus: Vec<f64>,
    pub values: Vec<f64>,
    /// `∫_{t_max}^∞ p_X(τ) dτ`, evaluated exactly.
    pub tail: f64,
}

/// `ℙ_u(n)` for `n = 0..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct UsefulCounts {
    pub probabilities: Vec<f64>,
    /// `1 - Σ ℙ_u(n)` over the returned terms.
    pub remaining: f64,
    /// Spectral radius of `𝒪_id`; the tail decays geometrically at this rate.
    pub idle_spectral_radius: f64,
}

impl UsefulCounts {
    pub fn mean(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }
}

/// Density of the time between consecutive useful cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct UsefulTimeDensity {
    pub times: Vec<f64>,
    pub density: Vec<f64>,
    /// Mean from the derivative of the Laplace transform at zero.
    pub mean_time: f64,
    /// `∫ ℙ_u(t) dt` on the inversion grid.
    pub integral: f64,
    /// `∫ t ℙ_u(t) dt` on the inversion grid.
    pub numeric_mean: f64,
    /// Inversion grid spacing and length actually used.
    pub spacing: f64,
    pub fft_len: usize,
    /// Whether the last refinement moved the result by less than 1%.
    pub converged: bool,
}

impl UsefulTimeDensity {
    /// Cumulative distribution on `times` by the trapezoid rule.
    pub fn cdf(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.times.len());
        let mut acc = 0.0;
        out.push(0.0);
        for k in 1..self.times.len() {
            let h = self.times[k] - self.times[k - 1];
            acc += 0.5 * h * (self.density[k] + self.density[k - 1]);
            out.push(acc);
        }
        out
    }
}

/// Cycle analysis of one model, with the superoperators and steady state
/// computed once.
#[derive(Debug, Clone)]
pub struct CycleAnalysis {
    ops: MachineOperators,
    bundle: SteadyStateBundle,
    pi_e: ComplexVector,
    sigma: Option<f64>,
}

impl CycleAnalysis {
    pub fn new(model: &LindbladModel) -> Result<Self, CycleError> {
        let ops = MachineOperators::new(model)?;
        let bundle = steady_bundle(&ops)?;
        let pi_e = vectorize(&bundle.pi_e);
        Ok(Self {
            ops,
            bundle,
            pi_e,
            sigma: model.cycle_entropy(),
        })
    }

    pub fn operators(&self) -> &MachineOperators {
        &self.ops
    }

    pub fn bundle(&self) -> &SteadyStateBundle {
        &self.bundle
    }

    pub fn dim(&self) -> usize {
        self.ops.dim()
    }

    /// Vectorized `π_E`.
    pub fn pi_e(&self) -> &ComplexVector {
        &self.pi_e
    }

    fn jump(&self, id: ChannelId) -> &Superoperator {
        self.ops.jumps.get(id)
    }

    fn tr(&self, v: &ComplexVector) -> f64 {
        trace_vec(self.dim(), v).re
    }

    /// `𝒪_X v`, two solves against `ℒ₀`.
    pub fn apply_cycle(&self, x: CycleLabel, v: &ComplexVector) -> Result<ComplexVector, CycleError> {
        let a = self.ops.solve_no_jump(v)?;
        let b = self.ops.solve_no_jump(&self.jump(x.injection()).apply_vec(&a))?;
        Ok(self.jump(x.extraction()).apply_vec(&b))
    }

    fn apply_group(&self, labels: &[CycleLabel], v: &ComplexVector) -> Result<ComplexVector, CycleError> {
        let mut out = ComplexVector::zeros(v.len());
        for &x in labels {
            out += self.apply_cycle(x, v)?;
        }
        Ok(out)
    }

    /// `𝒪_X` as a matrix.
    pub fn cycle_superop(&self, x: CycleLabel) -> Result<Superoperator, CycleError> {
        let n = self.dim() * self.dim();
        let a = self.ops.solve_no_jump_mat(&ComplexMatrix::identity(n, n))?;
        let b = self.ops.solve_no_jump_mat(&(self.jump(x.injection()).matrix() * a))?;
        Ok(Superoperator::new(self.dim(), self.jump(x.extraction()).matrix() * b))
    }

    /// `Õ_{X,z} = 𝒥_{E_X} (iz - ℒ₀)⁻¹ 𝒥_{I_X} (iz - ℒ₀)⁻¹`.
    pub fn laplace_cycle_superop(&self, x: CycleLabel, z: f64) -> Result<Superoperator, CycleError> {
        let n = self.dim() * self.dim();
        let shifted = ComplexMatrix::identity(n, n) * c(0.0, z) - self.ops.no_jump.matrix();
        let lu = crate::linalg::LuSolver::new(&shifted)?;
        let a = lu.solve_mat(&ComplexMatrix::identity(n, n))?;
        let b = lu.solve_mat(&(self.jump(x.injection()).matrix() * a))?;
        Ok(Superoperator::new(self.dim(), self.jump(x.extraction()).matrix() * b))
    }

    pub fn probability(&self, x: CycleLabel) -> Result<f64, CycleError> {
        Ok(self.tr(&self.apply_cycle(x, &self.pi_e)?))
    }

    pub fn probabilities(&self) -> Result<[f64; 4], CycleError> {
        let mut p = [0.0; 4];
        for x in CycleLabel::ALL {
            p[x.slot()] = self.probability(x)?;
        }
        Ok(p)
    }

    /// `p_X E(τⁿ|X) = n! Σ_{k=0}^{n} tr{𝒥_{E_X} (-ℒ₀)^{-(k+1)} 𝒥_{I_X} (-ℒ₀)^{-(n-k+1)} π_E}`.
    pub fn weighted_moment(&self, x: CycleLabel, n: u32) -> Result<f64, CycleError> {
        let neg_solve = |v: &ComplexVector| -> Result<ComplexVector, CycleError> {
            Ok(-self.ops.solve_no_jump(v)?)
        };
        let mut powers = Vec::with_capacity(n as usize + 1);
        let mut v = self.pi_e.clone();
        for _ in 0..=n {
            v = neg_solve(&v)?;
            powers.push(v.clone());
        }
        let mut total = 0.0;
        for k in 0..=n as usize {
            let mut w = self.jump(x.injection()).apply_vec(&powers[n as usize - k]);
            for _ in 0..=k {
                w = neg_solve(&w)?;
            }
            total += self.jump(x.extraction()).trace_of(&w);
        }
        let factorial: f64 = (1..=n).map(f64::from).product();
        Ok(factorial * total)
    }

    /// `E(τⁿ|X)`.
    pub fn moment(&self, x: CycleLabel, n: u32) -> Result<f64, CycleError> {
        let p = self.probability(x)?;
        if p <= MIN_CONDITIONING_PROBABILITY {
            return Err(CycleError::NearImpossible {
                label: x,
                probability: p,
            });
        }
        Ok(self.weighted_moment(x, n)? / p)
    }

    pub fn conditional_mean_time(&self, x: CycleLabel) -> Result<f64, CycleError> {
        self.moment(x, 1)
    }

    /// `E(τ) = Σ_X p_X E(τ|X)`.
    pub fn mean_time(&self) -> Result<f64, CycleError> {
        let mut total = 0.0;
        for x in CycleLabel::ALL {
            total += self.weighted_moment(x, 1)?;
        }
        Ok(total)
    }

    pub fn current(&self) -> Result<CurrentReport, CycleError> {
        Ok(excitation_current(&self.ops, &self.bundle)?)
    }

    /// Entropy per work-extraction cycle from detailed balance, if the model
    /// has one thermal channel per bath.
    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn entropy_per_cycle(&self, sigma: f64) -> Result<(f64, f64), CycleError> {
        Ok(entropy_moments(&self.probabilities()?, sigma))
    }

    pub fn intermittency(&self) -> Result<(f64, f64), CycleError> {
        let p = self.probabilities()?;
        let mut e = [None; 4];
        for x in CycleLabel::ALL {
            if p[x.slot()] > MIN_CONDITIONING_PROBABILITY {
                e[x.slot()] = Some(self.conditional_mean_time(x)?);
            }
        }
        intermittency_from(&p, &e)
    }

    pub fn statistics(&self) -> Result<CycleStatistics, CycleError> {
        let p = self.probabilities()?;
        let mut e_tau_cond = [None; 4];
        for x in CycleLabel::ALL {
            if p[x.slot()] > MIN_CONDITIONING_PROBABILITY {
                e_tau_cond[x.slot()] = Some(self.conditional_mean_time(x)?);
            }
        }
        let e_tau = self.mean_time()?;
        let i_ex = self.current()?.cold_side;
        let entropy = self.sigma.map(|s| entropy_moments(&p, s));
        let (mean_idle, time_ratio) = match intermittency_from(&p, &e_tau_cond) {
            Ok((n, t)) => (Some(n), Some(t)),
            Err(_) => (None, None),
        };
        Ok(CycleStatistics {
            p,
            e_tau_cond,
            e_tau,
            i_ex,
            sigma_per_cycle: self.sigma,
            mean_entropy: entropy.map(|e| e.0),
            var_entropy: entropy.map(|e| e.1),
            mean_idle,
            time_ratio,
            provenance: Provenance::Analytic,
        })
    }

    /// Slowest decay rate of the no-jump evolution, `-max Re λ(ℒ₀)`.
    pub fn slowest_rate(&self) -> Result<f64, CycleError> {
        Ok(-spectral_abscissa(self.ops.no_jump.matrix())?)
    }

    /// `t_max = 12/Γ_slow` with 2048 points.
    pub fn default_grid(&self) -> Result<TimeGrid, CycleError> {
        TimeGrid::new(12.0 / self.slowest_rate()?, 2048)
    }

    /// `p_X(τ)` on `grid` through the block-triangular generator
    /// `[[ℒ₀, 0], [𝒥_{I_X}, ℒ₀]]`, whose exponential carries
    /// `∫₀^τ e^{ℒ₀(τ-t)} 𝒥_{I_X} e^{ℒ₀t} dt` in its lower-left block.
    pub fn p_x_of_tau(&self, x: CycleLabel, grid: &TimeGrid) -> Result<TauDensity, CycleError> {
        let n = self.dim() * self.dim();
        let l0 = self.ops.no_jump.matrix();
        let mut block = ComplexMatrix::zeros(2 * n, 2 * n);
        block.view_mut((0, 0), (n, n)).copy_from(l0);
        block.view_mut((n, n), (n, n)).copy_from(l0);
        block
            .view_mut((n, 0), (n, n))
            .copy_from(self.jump(x.injection()).matrix());
        let step = expm(&block, grid.spacing())?;
        let extraction = self.jump(x.extraction());

        let mut w = ComplexVector::zeros(2 * n);
        w.rows_mut(0, n).copy_from(&self.pi_e);
        let mut values = Vec::with_capacity(grid.n_points);
        for k in 0..grid.n_points {
            if k > 0 {
                w = &step * &w;
            }
            let lower = w.rows(n, n).into_owned();
            values.push(extraction.trace_of(&lower));
        }
        let upper = w.rows(0, n).into_owned();
        let lower = w.rows(n, n).into_owned();
        let a = self.ops.solve_no_jump(&upper)?;
        let b = self.ops.solve_no_jump(&self.jump(x.injection()).apply_vec(&a))?;
        let tail_vec = b - self.ops.solve_no_jump(&lower)?;
        Ok(TauDensity {
            label: x,
            taus: grid.points(),
            values,
            tail: extraction.trace_of(&tail_vec),
        })
    }

    pub fn all_densities(&self, grid: &TimeGrid) -> Result<Vec<TauDensity>, CycleError> {
        CycleLabel::ALL
            .par_iter()
            .map(|&x| self.p_x_of_tau(x, grid))
            .collect()
    }

    /// `ℙ_u(n) = tr{𝒪_u 𝒪_id^n 𝒪_u π_E} / tr{𝒪_u π_E}`.
    pub fn p_useful_n(&self, n_max: usize) -> Result<UsefulCounts, CycleError> {
        const USEFUL: [CycleLabel; 2] = [CycleLabel::WorkExtraction, CycleLabel::Refrigeration];
        const IDLE: [CycleLabel; 2] = [CycleLabel::HotIdle, CycleLabel::ColdIdle];
        let start = self.apply_group(&USEFUL, &self.pi_e)?;
        let norm = self.tr(&start);
        if norm <= MIN_CONDITIONING_PROBABILITY {
            return Err(CycleError::NoUsefulCycles(norm));
        }
        let mut v = start / c(norm, 0.0);
        let mut probabilities = Vec::with_capacity(n_max + 1);
        for n in 0..=n_max {
            probabilities.push(self.tr(&self.apply_group(&USEFUL, &v)?));
            if n < n_max {
                v = self.apply_group(&IDLE, &v)?;
            }
        }
        let idle = &self.cycle_superop(CycleLabel::HotIdle)? + &self.cycle_superop(CycleLabel::ColdIdle)?;
        let remaining = 1.0 - probabilities.iter().sum::<f64>();
        Ok(UsefulCounts {
            probabilities,
            remaining,
            idle_spectral_radius: spectral_radius(idle.matrix())?,
        })
    }

    fn useful_setup(&self) -> Result<(ComplexVector, Superoperator, Superoperator), CycleError> {
        let useful = &self.cycle_superop(CycleLabel::WorkExtraction)?
            + &self.cycle_superop(CycleLabel::Refrigeration)?;
        let idle = &self.cycle_superop(CycleLabel::HotIdle)? + &self.cycle_superop(CycleLabel::ColdIdle)?;
        let start = useful.apply_vec(&self.pi_e);
        let norm = self.tr(&start);
        if norm <= MIN_CONDITIONING_PROBABILITY {
            return Err(CycleError::NoUsefulCycles(norm));
        }
        Ok((start / c(norm, 0.0), useful, idle))
    }

    /// Mean time between useful cycles, `-G'(0)` for the Laplace transform
    /// `G(s) = tr{Õ_u(s) (1 - Õ_id(s))⁻¹ v}` of `ℙ_u(t)`.
    pub fn mean_useful_time(&self) -> Result<f64, CycleError> {
        let (v, useful, idle) = self.useful_setup()?;
        let n = v.len();
        let resolvent = |y: &ComplexVector| -> Result<ComplexVector, CycleError> {
            Ok(-self.ops.solve_no_jump(y)?)
        };
        // dÕ_X/ds at s = 0 applied to y, with R = (s - ℒ₀)⁻¹.
        let derivative = |labels: &[CycleLabel], y: &ComplexVector| -> Result<ComplexVector, CycleError> {
            let mut out = ComplexVector::zeros(n);
            for &x in labels {
                let inj = self.jump(x.injection());
                let ext = self.jump(x.extraction());
                let ry = resolvent(y)?;
                let rry = resolvent(&ry)?;
                let first = resolvent(&resolvent(&inj.apply_vec(&ry))?)?;
                let second = resolvent(&inj.apply_vec(&rry))?;
                out -= ext.apply_vec(&(first + second));
            }
            Ok(out)
        };
        let useful_labels = [CycleLabel::WorkExtraction, CycleLabel::Refrigeration];
        let idle_labels = [CycleLabel::HotIdle, CycleLabel::ColdIdle];
        let q = crate::linalg::LuSolver::new(&(ComplexMatrix::identity(n, n) - idle.matrix()))?;
        let x = q.solve_vec(&v)?;
        let term1 = self.tr(&derivative(&useful_labels, &x)?);
        let inner = q.solve_vec(&derivative(&idle_labels, &x)?)?;
        let term2 = self.tr(&useful.apply_vec(&inner));
        Ok(-(term1 + term2))
    }

    /// `ℙ_u(t)` by inverting its Fourier transform on a uniform frequency
    /// grid with an FFT, then interpolating onto `grid`.
    ///
    /// The frequency span starts at `20·ρ(ℒ₀)` and is doubled until the
    /// density moves by less than 1% between refinements.
    pub fn p_useful_time(&self, grid: &TimeGrid) -> Result<UsefulTimeDensity, CycleError> {
        const MAX_REFINEMENTS: usize = 4;
        let schur = SchurParts::new(&self.useful_generator()?)?;
        let mean_time = self.mean_useful_time()?;
        let span = grid.t_max.max(40.0 * mean_time);
        let mut z_max = 20.0 * spectral_radius(self.ops.no_jump.matrix())?;

        let mut previous = self.invert_useful(&schur, z_max, span)?;
        let mut converged = false;
        for _ in 0..MAX_REFINEMENTS {
            z_max *= 2.0;
            let refined = self.invert_useful(&schur, z_max, span)?;
            let change = max_relative_change(&previous, &refined);
            previous = refined;
            if change < 0.01 {
                converged = true;
                break;
            }
        }
        if !converged {
            warn!("useful-time density still changes by more than 1% under grid refinement");
        }
        let (spacing, density) = previous;
        let integral = trapezoid(&density, spacing, |_| 1.0);
        let numeric_mean = trapezoid(&density, spacing, |t| t);
        let times = grid.points();
        let interpolated = times
            .iter()
            .map(|&t| interpolate(&density, spacing, t))
            .collect();
        Ok(UsefulTimeDensity {
            times,
            density: interpolated,
            mean_time,
            integral,
            numeric_mean,
            spacing,
            fft_len: density.len(),
            converged,
        })
    }

    /// Linear generator whose output is `ℙ_u(t)`.
    ///
    /// The state has three sectors: before the next injection, after a hot
    /// injection and after a cold injection. Idle extractions feed back into
    /// the first sector; useful extractions leave and are read out.
    pub fn useful_generator(&self) -> Result<UsefulGenerator, CycleError> {
        let (v, _, _) = self.useful_setup()?;
        let n = v.len();
        let d = self.dim();
        let l0 = self.ops.no_jump.matrix();
        let mut g = ComplexMatrix::zeros(3 * n, 3 * n);
        for s in 0..3 {
            g.view_mut((s * n, s * n), (n, n)).copy_from(l0);
        }
        let j = |id| self.jump(id).matrix();
        g.view_mut((n, 0), (n, n)).copy_from(j(ChannelId::IH));
        g.view_mut((2 * n, 0), (n, n)).copy_from(j(ChannelId::IC));
        g.view_mut((0, n), (n, n)).copy_from(j(ChannelId::EH));
        g.view_mut((0, 2 * n), (n, n)).copy_from(j(ChannelId::EC));

        let trace_row = ComplexVector::from_fn(n, |k, _| {
            if k % d == k / d {
                c(1.0, 0.0)
            } else {
                c(0.0, 0.0)
            }
        });
        let mut readout = ComplexVector::zeros(3 * n);
        readout
            .rows_mut(n, n)
            .copy_from(&(j(ChannelId::EC).transpose() * &trace_row));
        readout
            .rows_mut(2 * n, n)
            .copy_from(&(j(ChannelId::EH).transpose() * &trace_row));
        let mut start = ComplexVector::zeros(3 * n);
        start.rows_mut(0, n).copy_from(&v);
        Ok(UsefulGenerator {
            generator: g,
            start,
            readout,
        })
    }

    fn invert_useful(
        &self,
        schur: &SchurParts,
        z_max: f64,
        span: f64,
    ) -> Result<(f64, Vec<f64>), CycleError> {
        let dt = std::f64::consts::PI / z_max;
        let len = ((span / dt).ceil() as usize).max(16).next_power_of_two();
        let dz = 2.0 * std::f64::consts::PI / (len as f64 * dt);
        let mut buffer: Vec<Complex<f64>> = (0..len)
            .into_par_iter()
            .map(|j| {
                let signed = if j < len / 2 { j as f64 } else { j as f64 - len as f64 };
                schur.transfer(signed * dz)
            })
            .collect();
        if buffer.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(CycleError::Linalg(LinalgError::NonFinite));
        }
        FftPlanner::new().plan_fft_inverse(len).process(&mut buffer);
        let scale = 1.0 / (len as f64 * dt);
        Ok((dt, buffer.iter().map(|z| z.re * scale).collect()))
    }
}

/// `ℙ_u(t) = readoutᵀ exp(G t) start`.
#[derive(Debug, Clone, PartialEq)]
pub struct UsefulGenerator {
    pub generator: ComplexMatrix,
    pub start: ComplexVector,
    pub readout: ComplexVector,
}

impl UsefulGenerator {
    /// Fourier transform `∫ ℙ_u(t) e^{-izt} dt = readoutᵀ (iz - G)⁻¹ start`.
    pub fn transfer(&self, z: f64) -> Result<C64, CycleError> {
        let n = self.generator.nrows();
        let shifted = ComplexMatrix::identity(n, n) * c(0.0, z) - &self.generator;
        let x = crate::linalg::solve(&shifted, &self.start)?;
        Ok(self.readout.iter().zip(x.iter()).map(|(a, b)| a * b).sum())
    }
}

/// Schur form `G = Q T Q†` with the readout and start folded into `Q`, so the
/// transfer function costs one triangular solve per frequency.
struct SchurParts {
    upper: ComplexMatrix,
    start: ComplexVector,
    readout: ComplexVector,
}

impl SchurParts {
    fn new(g: &UsefulGenerator) -> Result<Self, CycleError> {
        let schur = nalgebra::Schur::try_new(g.generator.clone(), 1e-14, 10_000)
            .ok_or(CycleError::Linalg(LinalgError::NonFinite))?;
        let (q, upper) = schur.unpack();
        Ok(Self {
            upper,
            start: q.adjoint() * &g.start,
            readout: q.transpose() * &g.readout,
        })
    }

    fn transfer(&self, z: f64) -> C64 {
        let n = self.start.len();
        let mut y = self.start.clone();
        let iz = c(0.0, z);
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in i + 1..n {
                acc += self.upper[(i, k)] * y[k];
            }
            y[i] = acc / (iz - self.upper[(i, i)]);
        }
        (0..n).map(|k| self.readout[k] * y[k]).sum()
    }
}

fn trapezoid(values: &[f64], h: f64, weight: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    for k in 1..values.len() {
        let (t0, t1) = ((k - 1) as f64 * h, k as f64 * h);
        total += 0.5 * h * (weight(t0) * values[k - 1] + weight(t1) * values[k]);
    }
    total
}

fn interpolate(values: &[f64], h: f64, t: f64) -> f64 {
    let pos = t / h;
    let k = pos.floor() as usize;
    if k + 1 >= values.len() {
        return 0.0;
    }
    let frac = pos - k as f64;
    values[k] * (1.0 - frac) + values[k + 1] * frac
}

/// Largest change of the coarse samples relative to their peak.
fn max_relative_change(coarse: &(f64, Vec<f64>), fine: &(f64, Vec<f64>)) -> f64 {
    let (h, values) = coarse;
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for (k, v) in values.iter().enumerate() {
        let t = k as f64 * h;
        worst = worst.max((interpolate(&fine.1, fine.0, t) - v).abs());
    }
    worst / peak.max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_maser, MaserParams};

    fn analysis(p: &MaserParams) -> CycleAnalysis {
        CycleAnalysis::new(&build_maser(p).unwrap()).unwrap()
    }

    // Reference values from an independent dense-matrix implementation.
    const P_DEFAULT: [f64; 4] = [
        0.2657748939791737,
        0.19360526188306754,
        0.41732024829836956,
        0.12329959583938899,
    ];

    #[test]
    fn labels_roundtrip() {
        for x in CycleLabel::ALL {
            assert_eq!(CycleLabel::from_number(x.number()), Some(x));
            assert_eq!(CycleLabel::from_pair(x.injection_bath(), x.extraction_bath()), x);
        }
        assert_eq!(CycleLabel::WorkExtraction.injection(), ChannelId::IH);
        assert_eq!(CycleLabel::WorkExtraction.extraction(), ChannelId::EC);
        assert!(CycleLabel::Refrigeration.is_useful() && !CycleLabel::ColdIdle.is_useful());
    }

    #[test]
    fn default_probabilities() {
        let p = analysis(&MaserParams::default()).probabilities().unwrap();
        for k in 0..4 {
            assert!((p[k] - P_DEFAULT[k]).abs() < 1e-10, "{p:?}");
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cycle_operators_are_stationary() {
        let a = analysis(&MaserParams::default());
        let mut total = ComplexVector::zeros(9);
        for x in CycleLabel::ALL {
            let o = a.cycle_superop(x).unwrap();
            let direct = a.apply_cycle(x, a.pi_e()).unwrap();
            assert!((o.apply_vec(a.pi_e()) - &direct).camax() < 1e-13);
            total += direct;
        }
        assert!((total - a.pi_e()).camax() < 1e-10);
    }

    #[test]
    fn laplace_transform_at_zero_is_cycle_operator() {
        let a = analysis(&MaserParams::default());
        for x in CycleLabel::ALL {
            let o = a.cycle_superop(x).unwrap();
            let oz = a.laplace_cycle_superop(x, 0.0).unwrap();
            assert!((o.matrix() - oz.matrix()).camax() < 1e-12);
        }
    }

    #[test]
    fn conditional_times_pair_up() {
        let a = analysis(&MaserParams::default());
        let e: Vec<f64> = CycleLabel::ALL
            .iter()
            .map(|&x| a.conditional_mean_time(x).unwrap())
            .collect();
        assert!((e[0] - 42.75669128507045).abs() < 1e-8);
        assert!((e[1] - 109.68330110952328).abs() < 1e-8);
        assert!((e[0] - e[2]).abs() < 1e-8 && (e[1] - e[3]).abs() < 1e-8);
        let k = a.bundle().activity_hc;
        assert!((a.mean_time().unwrap() - 2.0 / k).abs() < 1e-8);
    }

    #[test]
    fn second_moment_exceeds_square_of_mean() {
        let a = analysis(&MaserParams::default());
        for x in CycleLabel::ALL {
            let m1 = a.moment(x, 1).unwrap();
            let m2 = a.moment(x, 2).unwrap();
            assert!(m2 > m1 * m1);
            assert!((a.moment(x, 0).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn undriven_useful_cycles_balance() {
        // Without drive the sequences 0 -> 2 -> 1 and 1 -> 2 -> 0 still occur,
        // but equally often.
        let p = MaserParams {
            epsilon: 0.0,
            ..MaserParams::default()
        };
        let a = analysis(&p);
        let probs = a.probabilities().unwrap();
        let expected = [
            0.23769553119098785,
            0.23769553119098782,
            0.37322997899044935,
            0.15137895862757486,
        ];
        for k in 0..4 {
            assert!((probs[k] - expected[k]).abs() < 1e-10, "{probs:?}");
        }
        let stats = a.statistics().unwrap();
        assert!(stats.i_ex.abs() < 1e-12);
        assert!(stats.mean_entropy.unwrap().abs() < 1e-12);
        let sigma = stats.sigma_per_cycle.unwrap();
        let bound = sigma * sigma * (1.0 - stats.p_idle());
        assert!((stats.var_entropy.unwrap() - bound).abs() < 1e-10);
    }

    #[test]
    fn density_starts_at_zero_and_matches_reference() {
        let a = analysis(&MaserParams::default());
        let grid = TimeGrid::new(100.0, 101).unwrap();
        let d = a.p_x_of_tau(CycleLabel::WorkExtraction, &grid).unwrap();
        let expected = [(0, 0.0), (1, 0.00128047), (5, 0.00439096), (20, 0.00525906), (100, 0.0003826)];
        for (k, v) in expected {
            assert!((d.values[k] - v).abs() < 1e-8, "tau {k}: {}", d.values[k]);
        }
    }

    #[test]
    fn density_integrates_to_probability() {
        let a = analysis(&MaserParams::default());
        let grid = TimeGrid::new(300.0, 6001).unwrap();
        let p = a.probabilities().unwrap();
        for d in a.all_densities(&grid).unwrap() {
            let h = grid.spacing();
            let v = &d.values;
            // Simpson's rule on an even number of intervals.
            let mut s = v[0] + v[v.len() - 1];
            for (k, x) in v.iter().enumerate().take(v.len() - 1).skip(1) {
                s += if k % 2 == 1 { 4.0 * x } else { 2.0 * x };
            }
            let integral = s * h / 3.0 + d.tail;
            assert!((integral - p[d.label.slot()]).abs() < 1e-6);
        }
    }

    #[test]
    fn useful_counts_follow_extraction_memory() {
        let a = analysis(&MaserParams::default());
        let counts = a.p_useful_n(400).unwrap();
        let p = a.probabilities().unwrap();
        let pu = p[0] + p[1];
        // The injection bath depends on which level the previous extraction
        // left behind, so consecutive cycle labels are correlated. Value from
        // a two-state chain over extraction baths.
        assert!((counts.probabilities[0] - 0.4881175459787999).abs() < 1e-10);
        assert!((counts.probabilities[0] - pu).abs() > 0.02);
        assert!(counts.remaining.abs() < 1e-12);
        assert!((counts.mean() - (1.0 - pu) / pu).abs() < 1e-10);
        assert!(counts.idle_spectral_radius < 1.0);
    }

    #[test]
    fn useful_time_density_normalizes() {
        let a = analysis(&MaserParams::default());
        let grid = TimeGrid::new(2000.0, 401).unwrap();
        let d = a.p_useful_time(&grid).unwrap();
        assert!(d.converged);
        assert!((d.integral - 1.0).abs() < 0.01, "{}", d.integral);
        assert!((d.numeric_mean / d.mean_time - 1.0).abs() < 0.01);
        assert!(d.density.iter().all(|&v| v > -1e-6));
    }

    #[test]
    fn useful_transfer_matches_cycle_operators() {
        let a = analysis(&MaserParams::default());
        let g = a.useful_generator().unwrap();
        let v = {
            let raw = a.apply_cycle(CycleLabel::WorkExtraction, a.pi_e()).unwrap()
                + a.apply_cycle(CycleLabel::Refrigeration, a.pi_e()).unwrap();
            let t = trace_vec(3, &raw);
            raw / t
        };
        let n = v.len();
        for z in [0.0, 0.3, 1.0, -2.5] {
            let group = |labels: [CycleLabel; 2]| {
                let mut m = ComplexMatrix::zeros(n, n);
                for x in labels {
                    m += a.laplace_cycle_superop(x, z).unwrap().matrix();
                }
                m
            };
            let o_u = group([CycleLabel::WorkExtraction, CycleLabel::Refrigeration]);
            let o_id = group([CycleLabel::HotIdle, CycleLabel::ColdIdle]);
            let x = crate::linalg::solve(&(ComplexMatrix::identity(n, n) - o_id), &v).unwrap();
            let expected = trace_vec(3, &(o_u * x));
            assert!((g.transfer(z).unwrap() - expected).norm() < 1e-12, "z = {z}");
        }
    }

    #[test]
    fn useful_time_density_matches_time_stepping() {
        let a = analysis(&MaserParams::default());
        let g = a.useful_generator().unwrap();
        let grid = TimeGrid::new(400.0, 81).unwrap();
        let d = a.p_useful_time(&grid).unwrap();
        let step = expm(&g.generator, grid.spacing()).unwrap();
        let mut x = g.start.clone();
        let peak = d.density.iter().cloned().fold(0.0, f64::max);
        for (k, value) in d.density.iter().enumerate() {
            if k > 0 {
                x = &step * &x;
            }
            let direct: C64 = g.readout.iter().zip(x.iter()).map(|(r, y)| r * y).sum();
            assert!((direct.re - value).abs() < 1e-3 * peak, "t = {}", grid.points()[k]);
        }
    }
}
