//! Closed-form results for the driven three-level maser.
//!
//! After an injection the maser sits in `|2>`, which decays at rate
//! `R = γ_h(n̄_h+1) + γ_c(n̄_c+1)` without mixing. Before the injection the
//! no-jump evolution is a 2×2 non-Hermitian problem on `{|0>, |1>}` whose
//! propagator is written in closed form, so every cycle density reduces to
//! sums of `t^k e^{st}` terms that integrate exactly.

use std::f64::consts::FRAC_1_SQRT_2;

use thiserror::Error;

use crate::cyclestats::{entropy_moments, CycleLabel, CycleStatistics, Provenance};
use crate::linalg::{c, ComplexMatrix, C64};
use crate::model::{MaserParams, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaserRefError {
    #[error(transparent)]
    Params(#[from] ModelError),
    #[error("useful cycles never occur (p_u = {0:.3e})")]
    NoUsefulCycles(f64),
    #[error("conditioning on near-impossible cycle {label} (p = {probability:.3e})")]
    NearImpossible { label: CycleLabel, probability: f64 },
}

/// Rate combinations that recur in the maser formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaserDerived {
    /// `γ = (γ_h + γ_c)/2`.
    pub gamma_bar: f64,
    /// `Γ = (n̄_h γ_h + n̄_c γ_c)/2`.
    pub big_gamma: f64,
    /// `Λ = (n̄_h γ_h - n̄_c γ_c)/2`.
    pub lambda: f64,
    pub delta: f64,
    /// `n̄_ave = Γ/γ`.
    pub n_ave: f64,
    /// `κ = (Γ² - Λ²)/2Γ`.
    pub kappa: f64,
    /// Golden-rule rate `2ε²Γ/(Δ² + Γ²)` between `|0>` and `|1>`.
    pub gamma_cl: f64,
    /// `√(ε² + (Δ² + Λ²)/4)`.
    pub b: f64,
    pub n_hot: f64,
    pub n_cold: f64,
}

impl MaserDerived {
    pub fn new(p: &MaserParams) -> Result<Self, MaserRefError> {
        p.validate()?;
        for (name, value) in [("T_h", p.t_h), ("T_c", p.t_c)] {
            if value == 0.0 {
                return Err(ModelError::BadParameter {
                    name,
                    value,
                    reason: "closed forms need both baths at positive temperature",
                }
                .into());
            }
        }
        let n_hot = p.n_hot();
        let n_cold = p.n_cold();
        let gamma_bar = 0.5 * (p.gamma_h + p.gamma_c);
        let big_gamma = 0.5 * (n_hot * p.gamma_h + n_cold * p.gamma_c);
        let lambda = 0.5 * (n_hot * p.gamma_h - n_cold * p.gamma_c);
        let delta = p.detuning();
        let kappa = if big_gamma > 0.0 {
            (big_gamma * big_gamma - lambda * lambda) / (2.0 * big_gamma)
        } else {
            0.0
        };
        let gamma_cl = 2.0 * p.epsilon * p.epsilon * big_gamma / (delta * delta + big_gamma * big_gamma);
        Ok(Self {
            gamma_bar,
            big_gamma,
            lambda,
            delta,
            n_ave: big_gamma / gamma_bar,
            kappa,
            gamma_cl,
            b: (p.epsilon * p.epsilon + 0.25 * (delta * delta + lambda * lambda)).sqrt(),
            n_hot,
            n_cold,
        })
    }

    /// Decay rate of `|2><2|`, `2(γ + Γ)`.
    pub fn upper_decay(&self) -> f64 {
        2.0 * (self.gamma_bar + self.big_gamma)
    }
}

/// `s_X`: the level a cycle's injection starts from (`0` for hot, `1` for cold).
pub fn start_level(x: CycleLabel) -> usize {
    match x {
        CycleLabel::WorkExtraction | CycleLabel::HotIdle => 0,
        CycleLabel::Refrigeration | CycleLabel::ColdIdle => 1,
    }
}

/// `(A_X, B_X)`: weights of the direct and the crossed pre-injection path.
pub fn path_weights(p: &MaserParams, x: CycleLabel) -> (f64, f64) {
    let (gh, gc) = (p.gamma_h, p.gamma_c);
    let (nh, nc) = (p.n_hot(), p.n_cold());
    match x {
        CycleLabel::WorkExtraction => (
            gh * gh * gc * nh * (nh + 1.0) * (nc + 1.0),
            gh * gc * gc * nh * (nc + 1.0).powi(2),
        ),
        CycleLabel::Refrigeration => (
            gh * gc * gc * (nh + 1.0) * nc * (nc + 1.0),
            gh * gh * gc * (nh + 1.0).powi(2) * nc,
        ),
        CycleLabel::HotIdle => (
            gh.powi(3) * nh * (nh + 1.0).powi(2),
            gh * gh * gc * nh * (nh + 1.0) * (nc + 1.0),
        ),
        CycleLabel::ColdIdle => (
            gc.powi(3) * nc * (nc + 1.0).powi(2),
            gc * gc * gh * nc * (nc + 1.0) * (nh + 1.0),
        ),
    }
}

/// Real oscillatory form `C₁e^{-Γτ} + C₂e^{-Γτ}cos(2bτ + φ) - C₃e^{-Rτ}`,
/// exact whenever the 2×2 block has a real level splitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatoryForm {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub phi: f64,
    /// Half the angular frequency of the oscillation.
    pub b: f64,
}

impl OscillatoryForm {
    pub fn eval(&self, tau: f64, big_gamma: f64, upper_decay: f64) -> f64 {
        let env = (-big_gamma * tau).exp();
        self.c1 * env + self.c2 * env * (2.0 * self.b * tau + self.phi).cos()
            - self.c3 * (-upper_decay * tau).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleConstants {
    pub a_x: f64,
    pub b_x: f64,
    /// `γ + Γ/2`.
    pub a: f64,
    /// `ε/√2`.
    pub c: f64,
    /// `Λ/2`.
    pub d: f64,
    pub s_x: usize,
    /// Present when the splitting of the pre-injection block is real.
    pub oscillatory: Option<OscillatoryForm>,
}

/// One term `coef · t^power · e^{rate t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ExpTerm {
    coef: C64,
    power: u32,
    rate: C64,
}

/// Relative size of `β²` below which the splitting counts as degenerate.
const DEGENERATE_SPLITTING: f64 = 1e-14;

/// Closed-form evaluator for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct MaserClosedForm {
    params: MaserParams,
    derived: MaserDerived,
    /// `|<0|U(t)|0>|²`, `|<1|U(t)|1>|²`, `|<1|U(t)|0>|²` as exponential sums.
    survival: [Vec<ExpTerm>; 2],
    crossing: Vec<ExpTerm>,
    /// Complex half-splitting `β = √(ε² + b_z²)`.
    beta: C64,
    degenerate: bool,
}

/// `(b₀, b_x, b_z)` with `H_e' = b₀I + b_xσ_x + b_zσ_z` on `{|0>, |1>}`.
pub fn block_coefficients(p: &MaserParams) -> Result<(C64, f64, C64), MaserRefError> {
    let d = MaserDerived::new(p)?;
    Ok((
        c(0.5 * d.delta, -0.5 * d.big_gamma),
        p.epsilon,
        c(-0.5 * d.delta, -0.5 * d.lambda),
    ))
}

/// Effective Hamiltonian `H̃ - (i/2)Σ A†A` of the maser.
pub fn closed_form_he(p: &MaserParams) -> Result<ComplexMatrix, MaserRefError> {
    p.validate()?;
    let (nh, nc) = (p.n_hot(), p.n_cold());
    let mut h = ComplexMatrix::zeros(3, 3);
    h[(0, 0)] = c(0.0, -0.5 * nh * p.gamma_h);
    h[(0, 1)] = c(p.epsilon, 0.0);
    h[(1, 0)] = c(p.epsilon, 0.0);
    h[(1, 1)] = c(p.detuning(), -0.5 * nc * p.gamma_c);
    h[(2, 2)] = c(0.0, -0.5 * (p.gamma_c * (nc + 1.0) + p.gamma_h * (nh + 1.0)));
    Ok(h)
}

fn squared_modulus(amplitude: &[(C64, u32, C64)]) -> Vec<ExpTerm> {
    let mut out = Vec::new();
    for &(c1, k1, r1) in amplitude {
        for &(c2, k2, r2) in amplitude {
            out.push(ExpTerm {
                coef: c1 * c2.conj(),
                power: k1 + k2,
                rate: r1 + r2.conj(),
            });
        }
    }
    out
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// `e^{-Rτ} ∫₀^τ t^k e^{st} dt` with `s = q + R`, written to avoid overflow.
fn damped_integral(k: u32, q: C64, big_r: f64, tau: f64) -> C64 {
    let s = q + big_r;
    let grow = (q * tau).exp();
    let decay = (-big_r * tau).exp();
    // ∫₀^τ t^k e^{st} dt = e^{sτ} Σ_j (-1)^j k!/(k-j)! τ^{k-j}/s^{j+1} - (-1)^k k!/s^{k+1}
    let mut head = c(0.0, 0.0);
    for j in 0..=k {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let falling = factorial(k) / factorial(k - j);
        head += c(sign * falling * tau.powi((k - j) as i32), 0.0) / s.powu(j + 1);
    }
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    grow * head - c(decay * sign * factorial(k), 0.0) / s.powu(k + 1)
}

impl MaserClosedForm {
    pub fn new(params: &MaserParams) -> Result<Self, MaserRefError> {
        let derived = MaserDerived::new(params)?;
        let (b0, bx, bz) = block_coefficients(params)?;
        let beta_sq = c(bx * bx, 0.0) + bz * bz;
        let scale = bx.abs().max(bz.norm()).max(f64::MIN_POSITIVE);
        let degenerate = beta_sq.norm() <= DEGENERATE_SPLITTING * scale * scale;
        let beta = if degenerate { c(0.0, 0.0) } else { beta_sq.sqrt() };
        // N = b_x σ_x + b_z σ_z
        let n = [[bz, c(bx, 0.0)], [c(bx, 0.0), -bz]];
        let identity = |j: usize, k: usize| if j == k { c(1.0, 0.0) } else { c(0.0, 0.0) };
        let amplitude = |j: usize, k: usize| -> Vec<(C64, u32, C64)> {
            let base = c(0.0, -1.0) * b0;
            if degenerate {
                // e^{-ib₀t}(I - i t N)
                vec![
                    (identity(j, k), 0, base),
                    (c(0.0, -1.0) * n[j][k], 1, base),
                ]
            } else {
                let ratio = n[j][k] / beta;
                vec![
                    ((identity(j, k) + ratio) * 0.5, 0, base - c(0.0, 1.0) * beta),
                    ((identity(j, k) - ratio) * 0.5, 0, base + c(0.0, 1.0) * beta),
                ]
            }
        };
        Ok(Self {
            params: *params,
            derived,
            survival: [squared_modulus(&amplitude(0, 0)), squared_modulus(&amplitude(1, 1))],
            crossing: squared_modulus(&amplitude(1, 0)),
            beta,
            degenerate,
        })
    }

    pub fn params(&self) -> &MaserParams {
        &self.params
    }

    pub fn derived(&self) -> &MaserDerived {
        &self.derived
    }

    /// Complex half-splitting of the pre-injection block; real at resonance
    /// when `ε > |Λ|/2`.
    pub fn splitting(&self) -> C64 {
        self.beta
    }

    fn weighted_terms(&self, x: CycleLabel) -> impl Iterator<Item = (f64, &ExpTerm)> {
        let (a_x, b_x) = path_weights(&self.params, x);
        let r = self.derived.upper_decay();
        self.survival[start_level(x)]
            .iter()
            .map(move |t| (a_x / r, t))
            .chain(self.crossing.iter().map(move |t| (b_x / r, t)))
    }

    /// `p_X(τ)`.
    pub fn p_x_of_tau(&self, x: CycleLabel, tau: f64) -> f64 {
        let r = self.derived.upper_decay();
        self.weighted_terms(x)
            .map(|(w, t)| (t.coef * damped_integral(t.power, t.rate, r, tau)).re * w)
            .sum()
    }

    /// `∫₀^∞ τⁿ p_X(τ) dτ`.
    pub fn weighted_moment(&self, x: CycleLabel, n: u32) -> f64 {
        let r = self.derived.upper_decay();
        let mut total = 0.0;
        for (w, t) in self.weighted_terms(x) {
            // ∫ f(t) ∫₀^∞ (t+u)ⁿ e^{-Ru} du dt
            for j in 0..=n {
                let m = n - j + t.power;
                let time_part = c(factorial(m), 0.0) / (-t.rate).powu(m + 1);
                let tail = factorial(j) / r.powi(j as i32 + 1);
                total += w * binomial(n, j) * tail * (t.coef * time_part).re;
            }
        }
        total
    }

    pub fn conditional_mean_time(&self, x: CycleLabel) -> Result<f64, MaserRefError> {
        let p = self.weighted_moment(x, 0);
        if p <= crate::cyclestats::MIN_CONDITIONING_PROBABILITY {
            return Err(MaserRefError::NearImpossible {
                label: x,
                probability: p,
            });
        }
        Ok(self.weighted_moment(x, 1) / p)
    }

    /// Constants of the cycle, including the real oscillatory form when the
    /// splitting is real.
    pub fn constants(&self, x: CycleLabel) -> CycleConstants {
        let (a_x, b_x) = path_weights(&self.params, x);
        let d = &self.derived;
        CycleConstants {
            a_x,
            b_x,
            a: d.gamma_bar + 0.5 * d.big_gamma,
            c: self.params.epsilon * FRAC_1_SQRT_2,
            d: 0.5 * d.lambda,
            s_x: start_level(x),
            oscillatory: self.oscillatory_form(x),
        }
    }

    fn oscillatory_form(&self, x: CycleLabel) -> Option<OscillatoryForm> {
        let beta = self.beta;
        if self.degenerate || beta.im.abs() > 1e-12 * beta.norm() {
            return None;
        }
        let big_gamma = self.derived.big_gamma;
        let r = self.derived.upper_decay();
        let mut c1 = 0.0;
        let mut osc = c(0.0, 0.0);
        let mut c3 = 0.0;
        let tol = 1e-9 * (big_gamma + beta.re);
        for (w, t) in self.weighted_terms(x) {
            let s = t.rate + r;
            let amp = t.coef * w / s;
            c3 += amp.re;
            if (t.rate.im).abs() < tol {
                c1 += amp.re;
            } else if t.rate.im > 0.0 {
                // conjugate pair: 2 Re(amp e^{iωτ}) = 2|amp| cos(ωτ + arg amp)
                osc += amp * 2.0;
            }
        }
        Some(OscillatoryForm {
            c1,
            c2: osc.norm(),
            c3,
            phi: osc.im.atan2(osc.re),
            b: beta.re,
        })
    }

    /// `p_1..p_4` from the rate combinations `κ`, `γ_cl` and `n̄_ave`.
    pub fn probabilities(&self) -> [f64; 4] {
        let d = &self.derived;
        let (nh, nc, nave) = (d.n_hot, d.n_cold, d.n_ave);
        let pre = d.kappa / (2.0 * d.big_gamma);
        let coherent = 1.0 / (1.0 + d.kappa / d.gamma_cl);
        let incoherent = 1.0 / (1.0 + d.gamma_cl / d.kappa);
        let coherent = if coherent.is_finite() { coherent } else { 0.0 };
        let f = |n: f64| (1.0 + 1.0 / n) / (1.0 + 1.0 / nave);
        let ratio_h = nh * self.params.gamma_h / (nc * self.params.gamma_c);
        [
            pre * f(nc) * (coherent + f(nh) * incoherent),
            pre * f(nh) * (coherent + f(nc) * incoherent),
            pre * ratio_h * f(nh) * (coherent + f(nh) * incoherent),
            pre / ratio_h * f(nc) * (coherent + f(nc) * incoherent),
        ]
    }

    /// `p_1 - p_2` in factorized form.
    pub fn net_useful(&self) -> f64 {
        let d = &self.derived;
        let rates = 1.0 / (1.0 / d.kappa + 1.0 / d.gamma_cl);
        rates / (2.0 * d.big_gamma) / (1.0 + 1.0 / d.n_ave) * (1.0 / d.n_cold - 1.0 / d.n_hot)
    }

    /// Mean and variance of the geometric idle-run law, `1/p_u - 1` and
    /// `(1 - p_u)/p_u²`.
    pub fn intermittency(&self) -> Result<(f64, f64), MaserRefError> {
        let p = self.probabilities();
        let pu = p[0] + p[1];
        if !(pu > crate::cyclestats::MIN_CONDITIONING_PROBABILITY) {
            return Err(MaserRefError::NoUsefulCycles(pu));
        }
        Ok((1.0 / pu - 1.0, (1.0 - pu) / (pu * pu)))
    }

    pub fn statistics(&self) -> Result<CycleStatistics, MaserRefError> {
        let p = self.probabilities();
        let mut e_tau_cond = [None; 4];
        let mut e_tau = 0.0;
        for x in CycleLabel::ALL {
            e_tau += self.weighted_moment(x, 1);
            if p[x.slot()] > crate::cyclestats::MIN_CONDITIONING_PROBABILITY {
                e_tau_cond[x.slot()] = Some(self.conditional_mean_time(x)?);
            }
        }
        let sigma = self.params.sigma();
        let (mean_entropy, var_entropy) = entropy_moments(&p, sigma);
        let (mean_idle, time_ratio) = match crate::cyclestats::intermittency_from(&p, &e_tau_cond) {
            Ok((n, t)) => (Some(n), Some(t)),
            Err(_) => (None, None),
        };
        Ok(CycleStatistics {
            p,
            e_tau_cond,
            e_tau,
            i_ex: (p[0] - p[1]) / e_tau,
            sigma_per_cycle: Some(sigma),
            mean_entropy: Some(mean_entropy),
            var_entropy: Some(var_entropy),
            mean_idle,
            time_ratio,
            provenance: Provenance::ClosedForm,
        })
    }
}
