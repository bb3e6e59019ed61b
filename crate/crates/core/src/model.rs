//! Machine definitions: Hamiltonian, thermal bath channels and work reservoirs.
//!
//! A [`LindbladModel`] holds everything the GKSL generator needs in the frame
//! where the Hamiltonian is time independent. Bath channels carry their
//! extraction operator `L`; the matching injection operator is `L†`.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::linalg::{c, is_finite, is_hermitian, ket_bra, ComplexMatrix, C64};

/// Relative tolerance for the Hermiticity of stored Hamiltonians.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("hamiltonian is not Hermitian")]
    NotHermitian,
    #[error("{what} has shape {rows}x{cols}, expected {dim}x{dim}")]
    Dimension {
        what: String,
        rows: usize,
        cols: usize,
        dim: usize,
    },
    #[error("{what} must be finite and non-negative, got {value}")]
    BadRate { what: String, value: f64 },
    #[error("invalid parameter {name} = {value}: {reason}")]
    BadParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BathLabel {
    Hot,
    Cold,
}

impl BathLabel {
    pub const ALL: [BathLabel; 2] = [BathLabel::Hot, BathLabel::Cold];

    pub fn as_str(self) -> &'static str {
        match self {
            BathLabel::Hot => "hot",
            BathLabel::Cold => "cold",
        }
    }

    fn short(self) -> char {
        match self {
            BathLabel::Hot => 'h',
            BathLabel::Cold => 'c',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelKind {
    Injection,
    Extraction,
}

/// One of the four monitored channels `I_h, E_h, I_c, E_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelId {
    pub bath: BathLabel,
    pub kind: ChannelKind,
}

impl ChannelId {
    pub const IH: ChannelId = ChannelId::new(BathLabel::Hot, ChannelKind::Injection);
    pub const EH: ChannelId = ChannelId::new(BathLabel::Hot, ChannelKind::Extraction);
    pub const IC: ChannelId = ChannelId::new(BathLabel::Cold, ChannelKind::Injection);
    pub const EC: ChannelId = ChannelId::new(BathLabel::Cold, ChannelKind::Extraction);
    pub const ALL: [ChannelId; 4] = [Self::IH, Self::EH, Self::IC, Self::EC];

    pub const fn new(bath: BathLabel, kind: ChannelKind) -> Self {
        Self { bath, kind }
    }

    /// Short tag used in trajectory files: `Ih`, `Eh`, `Ic`, `Ec`.
    pub fn tag(self) -> String {
        let k = match self.kind {
            ChannelKind::Injection => 'I',
            ChannelKind::Extraction => 'E',
        };
        format!("{k}{}", self.bath.short())
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|ch| ch.tag() == tag)
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// Bose-Einstein occupation `1 / (exp(ω/T) - 1)`; zero at `T = 0`.
pub fn bose(omega: f64, temperature: f64) -> f64 {
    if temperature == 0.0 {
        0.0
    } else {
        1.0 / (omega / temperature).exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathChannel {
    pub bath: BathLabel,
    /// Extraction operator `L`; injections use `L†`.
    pub operator: ComplexMatrix,
    /// Extraction rate γ⁻.
    pub rate_minus: f64,
    /// Injection rate γ⁺.
    pub rate_plus: f64,
    /// Energy exchanged with the bath per jump.
    pub energy_quantum: f64,
}

impl BathChannel {
    /// Channel with thermal rates `γ(n̄+1)` and `γ n̄`.
    pub fn thermal(
        bath: BathLabel,
        operator: ComplexMatrix,
        coupling: f64,
        omega: f64,
        temperature: f64,
    ) -> Self {
        let n = bose(omega, temperature);
        Self {
            bath,
            operator,
            rate_minus: coupling * (n + 1.0),
            rate_plus: coupling * n,
            energy_quantum: omega,
        }
    }

    /// Bare coupling `γ = γ⁻ - γ⁺` of a thermal channel.
    pub fn coupling(&self) -> f64 {
        self.rate_minus - self.rate_plus
    }

    /// Occupation `n̄ = γ⁺ / γ`.
    pub fn occupation(&self) -> f64 {
        self.rate_plus / self.coupling()
    }

    /// Temperature implied by local detailed balance, `ω / ln(γ⁻/γ⁺)`.
    pub fn temperature(&self) -> f64 {
        if self.rate_plus == 0.0 {
            0.0
        } else {
            self.energy_quantum / (self.rate_minus / self.rate_plus).ln()
        }
    }

    pub fn rate(&self, kind: ChannelKind) -> f64 {
        match kind {
            ChannelKind::Extraction => self.rate_minus,
            ChannelKind::Injection => self.rate_plus,
        }
    }

    /// Jump operator for the given direction (`L` or `L†`).
    pub fn jump_operator(&self, kind: ChannelKind) -> ComplexMatrix {
        match kind {
            ChannelKind::Extraction => self.operator.clone(),
            ChannelKind::Injection => self.operator.adjoint(),
        }
    }
}

/// Time-independent GKSL model. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladModel {
    dim: usize,
    hamiltonian: ComplexMatrix,
    bath_channels: Vec<BathChannel>,
    /// Work-reservoir jump operators with their rate folded in (`√rate · K`).
    work_ops: Vec<ComplexMatrix>,
}

impl LindbladModel {
    pub fn new(
        hamiltonian: ComplexMatrix,
        bath_channels: Vec<BathChannel>,
        work_ops: Vec<ComplexMatrix>,
    ) -> Result<Self, ModelError> {
        let dim = hamiltonian.nrows();
        let check_dim = |what: String, m: &ComplexMatrix| {
            if m.nrows() != dim || m.ncols() != dim {
                Err(ModelError::Dimension {
                    what,
                    rows: m.nrows(),
                    cols: m.ncols(),
                    dim,
                })
            } else {
                Ok(())
            }
        };
        check_dim("hamiltonian".into(), &hamiltonian)?;
        if !is_finite(&hamiltonian) || !is_hermitian(&hamiltonian, HERMITIAN_TOL) {
            return Err(ModelError::NotHermitian);
        }
        for (i, ch) in bath_channels.iter().enumerate() {
            check_dim(format!("bath_channels[{i}].operator"), &ch.operator)?;
            for (name, value) in [
                ("rate_minus", ch.rate_minus),
                ("rate_plus", ch.rate_plus),
            ] {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(ModelError::BadRate {
                        what: format!("bath_channels[{i}].{name}"),
                        value,
                    });
                }
            }
            if !ch.energy_quantum.is_finite() {
                return Err(ModelError::BadRate {
                    what: format!("bath_channels[{i}].energy_quantum"),
                    value: ch.energy_quantum,
                });
            }
        }
        for (i, k) in work_ops.iter().enumerate() {
            check_dim(format!("work_ops[{i}]"), k)?;
        }
        Ok(Self {
            dim,
            hamiltonian,
            bath_channels,
            work_ops,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> &ComplexMatrix {
        &self.hamiltonian
    }

    pub fn bath_channels(&self) -> &[BathChannel] {
        &self.bath_channels
    }

    pub fn work_ops(&self) -> &[ComplexMatrix] {
        &self.work_ops
    }

    /// Effective non-Hermitian Hamiltonian `H - (i/2) Σ A†A` over every jump
    /// (bath extractions, injections and work-reservoir operators).
    pub fn effective_hamiltonian(&self) -> ComplexMatrix {
        let mut decay = ComplexMatrix::zeros(self.dim, self.dim);
        for ch in &self.bath_channels {
            let l = &ch.operator;
            let ld = l.adjoint();
            decay += (&ld * l) * c(ch.rate_minus, 0.0);
            decay += (l * &ld) * c(ch.rate_plus, 0.0);
        }
        for k in &self.work_ops {
            decay += k.adjoint() * k;
        }
        &self.hamiltonian - decay * c(0.0, 0.5)
    }

    /// Entropy produced by one work-extraction cycle, `ω_c/T_c - ω_h/T_h`,
    /// written through detailed balance as `ln(γ⁻_c/γ⁺_c) - ln(γ⁻_h/γ⁺_h)`.
    ///
    /// Only defined when each bath has exactly one channel with non-zero
    /// injection rate.
    pub fn cycle_entropy(&self) -> Option<f64> {
        let single = |bath| {
            let chans: Vec<_> = self
                .bath_channels
                .iter()
                .filter(|ch| ch.bath == bath)
                .collect();
            match chans.as_slice() {
                [ch] if ch.rate_plus > 0.0 => Some((ch.rate_minus / ch.rate_plus).ln()),
                _ => None,
            }
        };
        Some(single(BathLabel::Cold)? - single(BathLabel::Hot)?)
    }

    /// Copy with every channel of `bath` re-thermalized at `temperature`,
    /// keeping each channel's coupling and energy quantum.
    pub fn with_bath_temperature(&self, bath: BathLabel, temperature: f64) -> Result<Self, ModelError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(ModelError::BadParameter {
                name: "temperature",
                value: temperature,
                reason: "must be positive",
            });
        }
        let mut out = self.clone();
        for ch in out.bath_channels.iter_mut().filter(|ch| ch.bath == bath) {
            *ch = BathChannel::thermal(
                bath,
                ch.operator.clone(),
                ch.coupling(),
                ch.energy_quantum,
                temperature,
            );
        }
        Ok(out)
    }

    /// Copy with every channel of `bath` given coupling `coupling` at its
    /// current occupation.
    pub fn with_bath_coupling(&self, bath: BathLabel, coupling: f64) -> Result<Self, ModelError> {
        if !(coupling > 0.0 && coupling.is_finite()) {
            return Err(ModelError::BadParameter {
                name: "coupling",
                value: coupling,
                reason: "must be positive",
            });
        }
        let mut out = self.clone();
        for ch in out.bath_channels.iter_mut().filter(|ch| ch.bath == bath) {
            let n = ch.occupation();
            ch.rate_minus = coupling * (n + 1.0);
            ch.rate_plus = coupling * n;
        }
        Ok(out)
    }
}

/// Physical parameters of the driven three-level maser (`ħ = k_B = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaserParams {
    pub omega_h: f64,
    pub omega_c: f64,
    pub omega_d: f64,
    pub epsilon: f64,
    pub gamma_h: f64,
    pub gamma_c: f64,
    #[serde(rename = "T_h")]
    pub t_h: f64,
    #[serde(rename = "T_c")]
    pub t_c: f64,
}

impl Default for MaserParams {
    fn default() -> Self {
        Self {
            omega_h: 8.0,
            omega_c: 2.0,
            omega_d: 4.0,
            epsilon: 0.5,
            gamma_h: 0.05,
            gamma_c: 0.05,
            t_h: 10.0,
            t_c: 1.0,
        }
    }
}

impl MaserParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("omega_h", self.omega_h),
            ("omega_c", self.omega_c),
            ("omega_d", self.omega_d),
            ("gamma_h", self.gamma_h),
            ("gamma_c", self.gamma_c),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::BadParameter {
                    name,
                    value,
                    reason: "must be positive and finite",
                });
            }
        }
        for (name, value) in [("T_h", self.t_h), ("T_c", self.t_c)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ModelError::BadParameter {
                    name,
                    value,
                    reason: "must be non-negative and finite",
                });
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(ModelError::BadParameter {
                name: "epsilon",
                value: self.epsilon,
                reason: "must be non-negative and finite",
            });
        }
        if self.omega_h <= self.omega_c {
            return Err(ModelError::BadParameter {
                name: "omega_h",
                value: self.omega_h,
                reason: "must exceed omega_c",
            });
        }
        Ok(())
    }

    /// Rotating-frame detuning `Δ = (ω_h - ω_c) - ω_d`.
    pub fn detuning(&self) -> f64 {
        (self.omega_h - self.omega_c) - self.omega_d
    }

    pub fn n_hot(&self) -> f64 {
        bose(self.omega_h, self.t_h)
    }

    pub fn n_cold(&self) -> f64 {
        bose(self.omega_c, self.t_c)
    }

    /// Entropy per work-extraction cycle, `ω_c/T_c - ω_h/T_h`.
    pub fn sigma(&self) -> f64 {
        self.omega_c / self.t_c - self.omega_h / self.t_h
    }

    /// Recovers maser parameters from a model with the exact maser layout.
    pub fn from_model(model: &LindbladModel) -> Option<Self> {
        const TOL: f64 = 1e-12;
        if model.dim() != 3 || !model.work_ops().is_empty() || model.bath_channels().len() != 2 {
            return None;
        }
        let h = model.hamiltonian();
        let scale = crate::linalg::max_abs(h).max(1.0);
        let expected_h = maser_hamiltonian(h[(1, 1)].re, h[(0, 1)].re);
        if crate::linalg::max_abs(&(h - &expected_h)) > TOL * scale || h[(0, 1)].re < 0.0 {
            return None;
        }
        let find = |bath, op: ComplexMatrix| {
            model
                .bath_channels()
                .iter()
                .find(|ch| ch.bath == bath && crate::linalg::max_abs(&(&ch.operator - &op)) <= TOL)
        };
        let hot = find(BathLabel::Hot, ket_bra(3, 0, 2))?;
        let cold = find(BathLabel::Cold, ket_bra(3, 1, 2))?;
        let (omega_h, omega_c) = (hot.energy_quantum, cold.energy_quantum);
        let params = Self {
            omega_h,
            omega_c,
            omega_d: omega_h - omega_c - h[(1, 1)].re,
            epsilon: h[(0, 1)].re,
            gamma_h: hot.coupling(),
            gamma_c: cold.coupling(),
            t_h: hot.temperature(),
            t_c: cold.temperature(),
        };
        params.validate().ok()?;
        Some(params)
    }
}

fn maser_hamiltonian(delta: f64, epsilon: f64) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(3, 3);
    h[(1, 1)] = c(delta, 0.0);
    h[(0, 1)] = c(epsilon, 0.0);
    h[(1, 0)] = c(epsilon, 0.0);
    h
}

/// Three-level maser in the frame rotating with the drive:
/// `H = Δ|1><1| + ε(|0><1| + |1><0|)`, hot channel `|0><2|`, cold channel `|1><2|`.
pub fn build_maser(p: &MaserParams) -> Result<LindbladModel, ModelError> {
    p.validate()?;
    let h = maser_hamiltonian(p.detuning(), p.epsilon);
    let hot = BathChannel::thermal(BathLabel::Hot, ket_bra(3, 0, 2), p.gamma_h, p.omega_h, p.t_h);
    let cold = BathChannel::thermal(BathLabel::Cold, ket_bra(3, 1, 2), p.gamma_c, p.omega_c, p.t_c);
    LindbladModel::new(h, vec![hot, cold], vec![])
}

/// Drive strength of the cross-subspace term in [`build_forbidden_fourlevel`].
pub const FORBIDDEN_CROSS_DRIVE: f64 = 0.3;

fn fourlevel(cross_drive: f64) -> LindbladModel {
    // |0>,|1> rest after an extraction; |2>,|3> after an injection.
    let mut h = ComplexMatrix::zeros(4, 4);
    h[(1, 1)] = c(0.5, 0.0);
    h[(3, 3)] = c(-0.4, 0.0);
    for (i, j, v) in [(0, 1, 0.4), (2, 3, 0.25), (1, 2, cross_drive)] {
        h[(i, j)] = c(v, 0.0);
        h[(j, i)] = c(v, 0.0);
    }
    let hot = BathChannel::thermal(BathLabel::Hot, ket_bra(4, 0, 3), 0.05, 6.0, 8.0);
    let cold = BathChannel::thermal(BathLabel::Cold, ket_bra(4, 1, 2), 0.05, 2.0, 1.0);
    LindbladModel::new(h, vec![hot, cold], vec![]).expect("four-level model is valid")
}

/// Four-level machine where a Rabi drive links the post-extraction level
/// `|1>` with the post-injection level `|2>`; it can hold two excitations.
pub fn build_forbidden_fourlevel() -> LindbladModel {
    fourlevel(FORBIDDEN_CROSS_DRIVE)
}

/// The same four-level machine without the cross-subspace drive, which
/// satisfies the single-excitation conditions with two-dimensional subspaces.
pub fn build_allowed_fourlevel() -> LindbladModel {
    fourlevel(0.0)
}

/// Settings for [`random_single_excitation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomModelSpec {
    pub dim_extract: usize,
    pub dim_inject: usize,
    /// Jump operators per bath.
    pub channels_per_bath: usize,
    pub with_work_op: bool,
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        Self {
            dim_extract: 2,
            dim_inject: 1,
            channels_per_bath: 1,
            with_work_op: false,
        }
    }
}

/// Random single-excitation machine in a randomly rotated basis.
///
/// Jump operators map the post-injection block into the post-extraction
/// block; the Hamiltonian and the optional work-reservoir operator are block
/// diagonal. Rates are thermal with `ω_h > ω_c` and `T_h > T_c`.
pub fn random_single_excitation<R: rand::Rng + ?Sized>(
    rng: &mut R,
    spec: RandomModelSpec,
) -> LindbladModel {
    let de = spec.dim_extract;
    let di = spec.dim_inject;
    let d = de + di;
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let omega_h = uniform(4.0, 8.0);
    let omega_c = uniform(1.0, 3.0);
    let t_h = uniform(2.0, 20.0);
    let t_c = uniform(0.5, 1.5);
    let mut couplings = Vec::new();
    for _ in 0..2 * spec.channels_per_bath {
        couplings.push(uniform(0.02, 0.1));
    }
    let work_rate = uniform(0.01, 0.05);
    let mut gauss = |scale: f64| {
        let z: C64 = c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        z * c(2.0 * scale, 0.0)
    };
    let basis = {
        let m = ComplexMatrix::from_fn(d, d, |_, _| gauss(1.0));
        m.qr().q()
    };
    let rotate = |m: &ComplexMatrix| &basis * m * basis.adjoint();

    let mut h = ComplexMatrix::zeros(d, d);
    for (lo, hi) in [(0, de), (de, d)] {
        for i in lo..hi {
            for j in i..hi {
                let z = if i == j { c(gauss(1.0).re, 0.0) } else { gauss(0.6) };
                h[(i, j)] = z;
                h[(j, i)] = z.conj();
            }
        }
    }
    let h = rotate(&h);
    let h = (&h + h.adjoint()) * c(0.5, 0.0);


    let mut channels = Vec::new();
    for (b, bath) in BathLabel::ALL.into_iter().enumerate() {
        let (omega, temp) = match bath {
            BathLabel::Hot => (omega_h, t_h),
            BathLabel::Cold => (omega_c, t_c),
        };
        for k in 0..spec.channels_per_bath {
            let mut l = ComplexMatrix::zeros(d, d);
            for i in 0..de {
                for j in de..d {
                    l[(i, j)] = gauss(1.0);
                }
            }
            let l = rotate(&l);
            let coupling = couplings[b * spec.channels_per_bath + k];
            channels.push(BathChannel::thermal(bath, l, coupling, omega, temp));
        }
    }

    let mut work_ops = Vec::new();
    if spec.with_work_op {
        let mut k = ComplexMatrix::zeros(d, d);
        for (lo, hi) in [(0, de), (de, d)] {
            for i in lo..hi {
                for j in lo..hi {
                    if i != j {
                        k[(i, j)] = gauss(1.0);
                    }
                }
            }
        }
        work_ops.push(rotate(&k) * c(work_rate.sqrt(), 0.0));
    }
    LindbladModel::new(h, channels, work_ops).expect("random model is valid")
}

// ---------------------------------------------------------------------------
// JSON model files

fn complex_list(m: &ComplexMatrix) -> Value {
    // row-major list of [re, im]
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(json!([m[(i, j)].re, m[(i, j)].im]));
        }
    }
    Value::Array(out)
}

pub fn model_to_json(model: &LindbladModel) -> Value {
    let channels: Vec<Value> = model
        .bath_channels
        .iter()
        .map(|ch| {
            json!({
                "bath": ch.bath.as_str(),
                "operator": complex_list(&ch.operator),
                "rate_minus": ch.rate_minus,
                "rate_plus": ch.rate_plus,
                "energy_quantum": ch.energy_quantum,
            })
        })
        .collect();
    json!({
        "dim": model.dim,
        "hamiltonian": complex_list(&model.hamiltonian),
        "bath_channels": channels,
        "work_ops": model.work_ops.iter().map(complex_list).collect::<Vec<_>>(),
    })
}

pub fn save_model(model: &LindbladModel) -> String {
    serde_json::to_string_pretty(&model_to_json(model)).expect("model JSON serializes")
}

fn schema(path: &str, message: impl Into<String>) -> ModelError {
    ModelError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

fn field<'a>(obj: &'a Value, path: &str, key: &str) -> Result<(&'a Value, String), ModelError> {
    let sub = format!("{path}.{key}");
    match obj.get(key) {
        Some(v) => Ok((v, sub)),
        None => Err(schema(&sub, "missing field")),
    }
}

fn number(v: &Value, path: &str) -> Result<f64, ModelError> {
    v.as_f64().ok_or_else(|| schema(path, "expected a number"))
}

fn matrix(v: &Value, path: &str, dim: usize) -> Result<ComplexMatrix, ModelError> {
    let items = v
        .as_array()
        .ok_or_else(|| schema(path, "expected an array of [re, im] pairs"))?;
    if items.len() != dim * dim {
        return Err(schema(
            path,
            format!("expected {} entries, found {}", dim * dim, items.len()),
        ));
    }
    let mut m = ComplexMatrix::zeros(dim, dim);
    for (k, item) in items.iter().enumerate() {
        let p = format!("{path}[{k}]");
        let pair = item
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| schema(&p, "expected [re, im]"))?;
        let re = number(&pair[0], &format!("{p}[0]"))?;
        let im = number(&pair[1], &format!("{p}[1]"))?;
        m[(k / dim, k % dim)] = C64::new(re, im);
    }
    Ok(m)
}

pub fn model_from_json(root: &Value) -> Result<LindbladModel, ModelError> {
    let path = "$";
    if !root.is_object() {
        return Err(schema(path, "expected an object"));
    }
    let (dim_v, dim_path) = field(root, path, "dim")?;
    let dim = dim_v
        .as_u64()
        .filter(|&d| d > 0)
        .ok_or_else(|| schema(&dim_path, "expected a positive integer"))? as usize;
    let (h_v, h_path) = field(root, path, "hamiltonian")?;
    let hamiltonian = matrix(h_v, &h_path, dim)?;

    let (chans_v, chans_path) = field(root, path, "bath_channels")?;
    let chans = chans_v
        .as_array()
        .ok_or_else(|| schema(&chans_path, "expected an array"))?;
    let mut bath_channels = Vec::with_capacity(chans.len());
    for (i, ch) in chans.iter().enumerate() {
        let p = format!("{chans_path}[{i}]");
        if !ch.is_object() {
            return Err(schema(&p, "expected an object"));
        }
        let (bath_v, bath_path) = field(ch, &p, "bath")?;
        let bath = match bath_v.as_str() {
            Some("hot") => BathLabel::Hot,
            Some("cold") => BathLabel::Cold,
            _ => return Err(schema(&bath_path, "expected \"hot\" or \"cold\"")),
        };
        let (op_v, op_path) = field(ch, &p, "operator")?;
        let operator = matrix(op_v, &op_path, dim)?;
        let (v, vp) = field(ch, &p, "rate_minus")?;
        let rate_minus = number(v, &vp)?;
        let (v, vp) = field(ch, &p, "rate_plus")?;
        let rate_plus = number(v, &vp)?;
        let (v, vp) = field(ch, &p, "energy_quantum")?;
        let energy_quantum = number(v, &vp)?;
        bath_channels.push(BathChannel {
            bath,
            operator,
            rate_minus,
            rate_plus,
            energy_quantum,
        });
    }

    let work_ops = match root.get("work_ops") {
        None | Some(Value::Null) => Vec::new(),
        Some(v) => {
            let p = format!("{path}.work_ops");
            let arr = v.as_array().ok_or_else(|| schema(&p, "expected an array"))?;
            arr.iter()
                .enumerate()
                .map(|(i, m)| matrix(m, &format!("{p}[{i}]"), dim))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    LindbladModel::new(hamiltonian, bath_channels, work_ops)
}

pub fn load_model(text: &str) -> Result<LindbladModel, ModelError> {
    let root: Value = serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
    model_from_json(&root)
}
