//! Quantum-jump Monte Carlo sampler, cycle parser and empirical estimators.
//!
//! Trajectories are pure-state unravelings of the GKSL model. Every jump
//! operator, including the work-reservoir ones, is unraveled, but only bath
//! jumps enter the cycle strings.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{Schur, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::cyclestats::CycleLabel;
use crate::linalg::{c, expm, find_root_increasing_newton, ComplexMatrix, ComplexVector, LinalgError, RootOptions};
use crate::model::{BathLabel, ChannelId, ChannelKind, LindbladModel};

/// Fewest cycles accepted by [`estimate`].
pub const MIN_CYCLES: usize = 100;

/// Eigenvector bases worse conditioned than this fall back to dense `expm`.
const EIGENBASIS_CONDITION: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(
        "waiting-time sampler stalled at t = {time:.6e}: survival plateaus at {survival:.6e} \
         above the drawn level {target:.6e} (near-dark state)"
    )]
    DarkState { time: f64, survival: f64, target: f64 },
    #[error("initial state has zero norm")]
    ZeroState,
    #[error("initial state has dimension {got}, model has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("stationary extraction state is not positive (trace {0:.3e})")]
    BadStationaryState(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("monitored events {first} and {second} are both {kind:?} jumps")]
    ConsecutiveSameKind { first: usize, second: usize, kind: ChannelKind },
    #[error("event {index} at t = {time} is not after the previous event")]
    NonIncreasingTime { index: usize, time: f64 },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("insufficient statistics: {got} cycles, need at least {MIN_CYCLES}")]
    InsufficientStatistics { got: usize },
}

/// Channel of a recorded jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventChannel {
    Monitored(ChannelId),
    /// Work-reservoir jump, by work-operator index.
    Work(usize),
}

impl EventChannel {
    pub fn tag(self) -> String {
        match self {
            EventChannel::Monitored(id) => id.tag(),
            EventChannel::Work(k) => format!("W{k}"),
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        if let Some(id) = ChannelId::from_tag(tag) {
            return Some(EventChannel::Monitored(id));
        }
        tag.strip_prefix('W')?.parse().ok().map(EventChannel::Work)
    }
}

impl fmt::Display for EventChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub channel: EventChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialStateTag {
    PiE,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    /// ChaCha stream of this trajectory within its batch.
    pub stream: u64,
    pub initial_state_tag: InitialStateTag,
    pub events: Vec<JumpEvent>,
}

/// Starting point of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Eigenvector of `π_E` drawn with its eigenvalue as probability.
    Stationary(ComplexMatrix),
    Pure(ComplexVector),
}

/// When a trajectory stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Time(f64),
    /// Total number of jumps, work jumps included.
    Jumps(usize),
    /// Number of monitored extractions.
    Cycles(usize),
}

/// Draws an eigenvector of `π_E` with probability equal to its eigenvalue.
pub fn sample_stationary_initial<R: Rng + ?Sized>(
    pi_e: &ComplexMatrix,
    rng: &mut R,
) -> Result<ComplexVector, TrajectoryError> {
    let eig = SymmetricEigen::new(pi_e.clone());
    let weights: Vec<f64> = eig.eigenvalues.iter().map(|&w| w.max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(TrajectoryError::BadStationaryState(total));
    }
    let k = pick(&weights, total, rng);
    Ok(eig.eigenvectors.column(k).into_owned())
}

fn pick<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = k;
            if u < w {
                return k;
            }
            u -= w;
        }
    }
    last
}

/// `e^{-iH_e t}` through an eigenbasis when it is well conditioned.
#[derive(Debug, Clone)]
enum Propagator {
    Eigen {
        vectors: ComplexMatrix,
        inverse: ComplexMatrix,
        values: ComplexVector,
    },
    Dense(ComplexMatrix),
}

impl Propagator {
    fn new(he: &ComplexMatrix) -> Self {
        let generator = he * c(0.0, -1.0);
        Self::eigen(&generator).unwrap_or(Propagator::Dense(generator))
    }

    fn eigen(generator: &ComplexMatrix) -> Option<Self> {
        let n = generator.nrows();
        let (q, t) = Schur::try_new(generator.clone(), f64::EPSILON, 0)?.unpack();
        let mut x = ComplexMatrix::identity(n, n);
        for k in 0..n {
            let lambda = t[(k, k)];
            for j in (0..k).rev() {
                let mut acc = c(0.0, 0.0);
                for m in j + 1..=k {
                    acc += t[(j, m)] * x[(m, k)];
                }
                let gap = t[(j, j)] - lambda;
                if gap.norm() <= 1e-12 * lambda.norm().max(1.0) {
                    return None;
                }
                x[(j, k)] = -acc / gap;
            }
        }
        let vectors = q * x;
        let inverse = vectors.clone().try_inverse()?;
        let cond = vectors.norm() * inverse.norm();
        if !cond.is_finite() || cond > EIGENBASIS_CONDITION {
            return None;
        }
        Some(Propagator::Eigen {
            vectors,
            inverse,
            values: t.diagonal(),
        })
    }

    fn prepare(&self, psi: &ComplexVector) -> ComplexVector {
        match self {
            Propagator::Eigen { inverse, .. } => inverse * psi,
            Propagator::Dense(_) => psi.clone(),
        }
    }

    fn evolve(&self, prepared: &ComplexVector, t: f64) -> Result<ComplexVector, LinalgError> {
        match self {
            Propagator::Eigen { vectors, values, .. } => {
                let phased = prepared.zip_map(values, |a, l| a * (l * t).exp());
                Ok(vectors * phased)
            }
            Propagator::Dense(g) => Ok(expm(g, t)? * prepared),
        }
    }
}

/// Jump operator with its rate folded in.
#[derive(Debug, Clone)]
struct Jump {
    channel: EventChannel,
    operator: ComplexMatrix,
}

/// Reusable sampler for one model.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    jumps: Vec<Jump>,
    /// `Σ A†A`.
    decay: ComplexMatrix,
    propagator: Propagator,
    /// First bracket point of the waiting-time search, `1/‖H_e‖`.
    time_scale: f64,
}

impl JumpSampler {
    pub fn new(model: &LindbladModel) -> Self {
        let mut jumps = Vec::new();
        for ch in model.bath_channels() {
            for kind in [ChannelKind::Injection, ChannelKind::Extraction] {
                let rate = ch.rate(kind);
                if rate > 0.0 {
                    jumps.push(Jump {
                        channel: EventChannel::Monitored(ChannelId::new(ch.bath, kind)),
                        operator: ch.jump_operator(kind) * c(rate.sqrt(), 0.0),
                    });
                }
            }
        }
        for (k, w) in model.work_ops().iter().enumerate() {
            jumps.push(Jump {
                channel: EventChannel::Work(k),
                operator: w.clone(),
            });
        }
        let d = model.dim();
        let decay = jumps
            .iter()
            .fold(ComplexMatrix::zeros(d, d), |acc, j| acc + j.operator.adjoint() * &j.operator);
        let he = model.effective_hamiltonian();
        let scale = he.norm();
        Self {
            jumps,
            decay,
            propagator: Propagator::new(&he),
            time_scale: if scale > 0.0 { 1.0 / scale } else { 1.0 },
        }
    }

    pub fn dim(&self) -> usize {
        self.decay.nrows()
    }

    /// Time until the next jump, or `None` if it falls beyond `limit`.
    fn wait<R: Rng + ?Sized>(
        &self,
        psi: &ComplexVector,
        limit: f64,
        rng: &mut R,
    ) -> Result<Option<(f64, ComplexVector)>, TrajectoryError> {
        let prepared = self.propagator.prepare(psi);
        let target = 1.0 - rng.random::<f64>();
        let mut failure = None;
        let mut cdf = |t: f64| -> (f64, f64) {
            match self.propagator.evolve(&prepared, t) {
                Ok(phi) => {
                    let survival = phi.norm_squared();
                    let rate = phi.dotc(&(&self.decay * &phi)).re;
                    (1.0 - survival, rate)
                }
                Err(e) => {
                    failure = Some(e);
                    (f64::INFINITY, 1.0)
                }
            }
        };
        if limit.is_finite() && cdf(limit).0 < target {
            return Ok(None);
        }
        let opts = RootOptions {
            t_start: self.time_scale,
            t_max: if limit.is_finite() { limit } else { 1e9 * self.time_scale },
            tol: 1e-12,
        };
        let root = find_root_increasing_newton(&mut cdf, target, opts);
        if let Some(e) = failure {
            return Err(e.into());
        }
        let t = match root {
            Ok(t) => t,
            Err(LinalgError::BracketExceeded { t_max, value, .. }) => {
                return Err(TrajectoryError::DarkState {
                    time: t_max,
                    survival: 1.0 - value,
                    target: 1.0 - target,
                })
            }
            Err(e) => return Err(e.into()),
        };
        Ok(Some((t, self.propagator.evolve(&prepared, t)?)))
    }

    fn jump<R: Rng + ?Sized>(&self, psi: &ComplexVector, rng: &mut R) -> (EventChannel, ComplexVector) {
        let candidates: Vec<ComplexVector> = self.jumps.iter().map(|j| &j.operator * psi).collect();
        let weights: Vec<f64> = candidates.iter().map(|v| v.norm_squared()).collect();
        let total = weights.iter().sum();
        let k = pick(&weights, total, rng);
        let next = &candidates[k] / c(weights[k].sqrt(), 0.0);
        (self.jumps[k].channel, next)
    }

    /// Runs one trajectory on the given ChaCha stream.
    pub fn sample(
        &self,
        initial: &InitialState,
        horizon: Horizon,
        seed: u64,
        stream: u64,
    ) -> Result<TrajectoryRecord, TrajectoryError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let (mut psi, tag) = match initial {
            InitialState::Stationary(pi_e) => (sample_stationary_initial(pi_e, &mut rng)?, InitialStateTag::PiE),
            InitialState::Pure(v) => {
                if v.len() != self.dim() {
                    return Err(TrajectoryError::DimensionMismatch {
                        expected: self.dim(),
                        got: v.len(),
                    });
                }
                let n = v.norm();
                if !(n > 0.0) {
                    return Err(TrajectoryError::ZeroState);
                }
                (v / c(n, 0.0), InitialStateTag::Custom)
            }
        };
        let mut events = Vec::new();
        let mut now = 0.0;
        let mut extractions = 0;
        loop {
            let done = match horizon {
                Horizon::Time(_) => false,
                Horizon::Jumps(n) => events.len() >= n,
                Horizon::Cycles(n) => extractions >= n,
            };
            if done {
                break;
            }
            let limit = match horizon {
                Horizon::Time(t_max) => t_max - now,
                _ => f64::INFINITY,
            };
            let Some((dt, evolved)) = self.wait(&psi, limit, &mut rng)? else {
                break;
            };
            let norm = evolved.norm();
            let evolved = evolved / c(norm, 0.0);
            let (channel, next) = self.jump(&evolved, &mut rng);
            // keep timestamps strictly increasing even for sub-ulp waits
            now = if now + dt > now { now + dt } else { next_up(now) };
            if let EventChannel::Monitored(id) = channel {
                if id.kind == ChannelKind::Extraction {
                    extractions += 1;
                }
            }
            events.push(JumpEvent { time: now, channel });
            psi = next;
        }
        Ok(TrajectoryRecord {
            seed,
            stream,
            initial_state_tag: tag,
            events,
        })
    }

    /// Runs trajectories `0..count` in parallel; output is ordered by stream.
    pub fn sample_batch(
        &self,
        initial: &InitialState,
        horizon: Horizon,
        seed: u64,
        count: usize,
    ) -> Result<Vec<TrajectoryRecord>, TrajectoryError> {
        (0..count as u64)
            .into_par_iter()
            .map(|k| self.sample(initial, horizon, seed, k))
            .collect()
    }
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

/// Convenience wrapper around [`JumpSampler::sample`] on stream 0.
pub fn sample_trajectory(
    model: &LindbladModel,
    initial: &InitialState,
    horizon: Horizon,
    seed: u64,
) -> Result<TrajectoryRecord, TrajectoryError> {
    JumpSampler::new(model).sample(initial, horizon, seed, 0)
}

#[derive(Serialize, Deserialize)]
struct EventLine {
    t: f64,
    ch: String,
}

/// Writes one `{"t": .., "ch": ..}` object per line.
pub fn write_jsonl<W: Write>(events: &[JumpEvent], mut out: W) -> std::io::Result<()> {
    for e in events {
        let line = EventLine {
            t: e.time,
            ch: e.channel.tag(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads events written by [`write_jsonl`] or recorded elsewhere.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<JumpEvent>, ParseError> {
    let mut events = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let format = |message: String| ParseError::Format { line: k + 1, message };
        let line = line.map_err(|e| format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: EventLine = serde_json::from_str(&line).map_err(|e| format(e.to_string()))?;
        let channel =
            EventChannel::from_tag(&raw.ch).ok_or_else(|| format(format!("unknown channel {:?}", raw.ch)))?;
        if !(raw.t >= 0.0) || !raw.t.is_finite() {
            return Err(format(format!("bad timestamp {}", raw.t)));
        }
        events.push(JumpEvent { time: raw.t, channel });
    }
    Ok(events)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParsedCycle {
    pub label: CycleLabel,
    pub duration: f64,
}

/// Cycles of one record. Durations run from the previous extraction (or the
/// origin) to this cycle's extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCycles {
    pub cycles: Vec<ParsedCycle>,
    /// Time up to an extraction that arrived before any injection, when the
    /// record starts in the post-injection block.
    pub head: Option<f64>,
    /// Injection still waiting for its extraction at the end of the record.
    pub leftover: Option<(BathLabel, f64)>,
    /// Time from the last extraction to the last event.
    pub tail: f64,
}

impl ParsedCycles {
    pub fn total_duration(&self) -> f64 {
        self.head.unwrap_or(0.0) + self.cycles.iter().map(|c| c.duration).sum::<f64>() + self.tail
    }

    /// Drops the first cycle, which may depend on the initial state.
    pub fn without_first(mut self) -> Self {
        if !self.cycles.is_empty() {
            let first = self.cycles.remove(0);
            self.head = Some(self.head.unwrap_or(0.0) + first.duration);
        }
        self
    }

    pub fn labels(&self) -> impl Iterator<Item = CycleLabel> + '_ {
        self.cycles.iter().map(|c| c.label)
    }
}

/// Pairs consecutive injection/extraction events into cycles.
pub fn parse_cycles(events: &[JumpEvent]) -> Result<ParsedCycles, ParseError> {
    let mut cycles = Vec::new();
    let mut head = None;
    let mut boundary = 0.0;
    let mut pending: Option<BathLabel> = None;
    let mut last_kind: Option<(usize, ChannelKind)> = None;
    let mut previous = f64::NEG_INFINITY;
    for (index, e) in events.iter().enumerate() {
        if !(e.time > previous) && index > 0 {
            return Err(ParseError::NonIncreasingTime { index, time: e.time });
        }
        previous = e.time;
        let EventChannel::Monitored(id) = e.channel else {
            continue;
        };
        if let Some((prev, kind)) = last_kind {
            if kind == id.kind {
                return Err(ParseError::ConsecutiveSameKind { first: prev, second: index, kind });
            }
        }
        last_kind = Some((index, id.kind));
        match id.kind {
            ChannelKind::Injection => pending = Some(id.bath),
            ChannelKind::Extraction => {
                match pending.take() {
                    Some(bath) => cycles.push(ParsedCycle {
                        label: CycleLabel::from_pair(bath, id.bath),
                        duration: e.time - boundary,
                    }),
                    None => head = Some(e.time),
                }
                boundary = e.time;
            }
        }
    }
    let tail = events.last().map_or(0.0, |e| e.time - boundary);
    let leftover = pending.map(|bath| {
        let t = events
            .iter()
            .rev()
            .find(|e| matches!(e.channel, EventChannel::Monitored(id) if id.kind == ChannelKind::Injection))
            .map_or(boundary, |e| e.time);
        (bath, t)
    });
    Ok(ParsedCycles {
        cycles,
        head,
        leftover,
        tail,
    })
}

/// Length of the longest run of consecutive same-kind monitored events minus
/// one, summed over the record: zero when injections and extractions alternate.
pub fn same_kind_repeats(events: &[JumpEvent]) -> usize {
    let mut last = None;
    let mut repeats = 0;
    for e in events {
        if let EventChannel::Monitored(id) = e.channel {
            if last == Some(id.kind) {
                repeats += 1;
            }
            last = Some(id.kind);
        }
    }
    repeats
}

/// Value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// Deviation from `reference` in standard errors.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = (self.value - reference).abs();
        if self.se > 0.0 {
            diff / self.se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, reference: f64, sigmas: f64) -> bool {
        self.z_score(reference) <= sigmas
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DurationMoments {
    pub count: u64,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalStats {
    pub n_cycles: usize,
    pub counts: [u64; 4],
    pub p: [Estimate; 4],
    pub durations: [DurationMoments; 4],
    pub mean_duration: Estimate,
    /// Excitation current `(p̂₁ - p̂₂)/τ̄` as a ratio estimator.
    pub i_ex: Estimate,
    /// Mean idle-run length between useful cycles.
    pub mean_idle: Option<Estimate>,
    /// Idle time over useful time.
    pub time_ratio: Option<f64>,
    /// `run_histogram[n]`: idle runs of length `n` that follow a useful cycle
    /// and end in one.
    pub run_histogram: Vec<u64>,
    /// Set when cycles are not exactly independent (more than one
    /// post-injection direction), so standard errors are approximate.
    pub correlated_cycles: bool,
}

fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Pools cycles across records. `inject_dim` is the dimension of the
/// post-injection block of the model that produced them.
pub fn estimate(parsed: &[ParsedCycles], inject_dim: usize) -> Result<EmpiricalStats, EstimateError> {
    let all: Vec<ParsedCycle> = parsed.iter().flat_map(|p| p.cycles.iter().copied()).collect();
    let n = all.len();
    if n < MIN_CYCLES {
        return Err(EstimateError::InsufficientStatistics { got: n });
    }
    let nf = n as f64;
    let mut counts = [0u64; 4];
    let mut by_label: [Vec<f64>; 4] = Default::default();
    for cyc in &all {
        counts[cyc.label.slot()] += 1;
        by_label[cyc.label.slot()].push(cyc.duration);
    }
    let p = counts.map(|k| {
        let ph = k as f64 / nf;
        Estimate {
            value: ph,
            se: (ph * (1.0 - ph) / nf).sqrt(),
        }
    });
    let durations = std::array::from_fn(|x| {
        let v = &by_label[x];
        if v.is_empty() {
            DurationMoments {
                count: 0,
                mean: None,
                variance: None,
            }
        } else {
            let (m, var) = moments(v);
            DurationMoments {
                count: v.len() as u64,
                mean: Some(m),
                variance: (v.len() > 1).then_some(var),
            }
        }
    });
    let taus: Vec<f64> = all.iter().map(|c| c.duration).collect();
    let (tau_mean, tau_var) = moments(&taus);
    let mean_duration = Estimate {
        value: tau_mean,
        se: (tau_var / nf).sqrt(),
    };

    let net = |c: &ParsedCycle| match c.label {
        CycleLabel::WorkExtraction => 1.0,
        CycleLabel::Refrigeration => -1.0,
        _ => 0.0,
    };
    let current = (p[0].value - p[1].value) / tau_mean;
    let residuals: Vec<f64> = all.iter().map(|c| net(c) - current * c.duration).collect();
    let (_, res_var) = moments(&residuals);
    let i_ex = Estimate {
        value: current,
        se: (res_var / nf).sqrt() / tau_mean,
    };

    let mut run_histogram: Vec<u64> = Vec::new();
    let mut runs = Vec::new();
    for record in parsed {
        let mut run: Option<usize> = None;
        for label in record.labels() {
            if label.is_useful() {
                if let Some(len) = run {
                    runs.push(len as f64);
                    if run_histogram.len() <= len {
                        run_histogram.resize(len + 1, 0);
                    }
                    run_histogram[len] += 1;
                }
                run = Some(0);
            } else if let Some(len) = run.as_mut() {
                *len += 1;
            }
        }
    }
    let mean_idle = (!runs.is_empty()).then(|| {
        let (m, v) = moments(&runs);
        Estimate {
            value: m,
            se: (v / runs.len() as f64).sqrt(),
        }
    });
    let sum = |xs: &[usize]| xs.iter().map(|&x| by_label[x].iter().sum::<f64>()).sum::<f64>();
    let useful_time = sum(&[0, 1]);
    let time_ratio = (useful_time > 0.0).then(|| sum(&[2, 3]) / useful_time);

    Ok(EmpiricalStats {
        n_cycles: n,
        counts,
        p,
        durations,
        mean_duration,
        i_ex,
        mean_idle,
        time_ratio,
        run_histogram,
        correlated_cycles: inject_dim > 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson test of observed counts against `expected[n]` for `n = 0, 1, ..`,
/// the mass beyond the listed values forming one more bin. Adjacent bins are
/// merged from the right until each expects at least five counts.
pub fn chi_square(observed: &[u64], expected: &[f64]) -> ChiSquareResult {
    let total: u64 = observed.iter().sum();
    let t = total as f64;
    let len = expected.len().max(observed.len());
    let obs = |n: usize| observed.get(n).copied().unwrap_or(0) as f64;
    let listed: f64 = expected.iter().sum();
    let mut bins: Vec<(f64, f64)> = (0..expected.len()).map(|n| (obs(n), expected[n] * t)).collect();
    let overflow_obs: f64 = (expected.len()..len).map(obs).sum();
    bins.push((overflow_obs, (1.0 - listed).max(0.0) * t));

    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for &(o, e) in bins.iter().rev() {
        acc.0 += o;
        acc.1 += e;
        if acc.1 >= 5.0 {
            merged.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 > 0.0 || acc.1 > 0.0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => merged.push(acc),
        }
    }
    let statistic: f64 = merged
        .iter()
        .map(|&(o, e)| {
            if e > 0.0 {
                (o - e).powi(2) / e
            } else if o > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .sum();
    let dof = merged.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else if statistic.is_finite() {
        ChiSquared::new(dof as f64).map_or(f64::NAN, |d| d.sf(statistic))
    } else {
        0.0
    };
    ChiSquareResult {
        statistic,
        dof,
        p_value,
    }
}

/// `p_u(1 - p_u)^n` for `n = 0..=n_max`.
pub fn geometric_law(p_useful: f64, n_max: usize) -> Vec<f64> {
    (0..=n_max).map(|n| p_useful * (1.0 - p_useful).powi(n as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_maser, MaserParams};
    use crate::superop::{steady_bundle, MachineOperators};

    fn ev(time: f64, tag: &str) -> JumpEvent {
        JumpEvent {
            time,
            channel: EventChannel::from_tag(tag).unwrap(),
        }
    }

    fn maser_pi_e(p: &MaserParams) -> (LindbladModel, ComplexMatrix) {
        let model = build_maser(p).unwrap();
        let bundle = steady_bundle(&MachineOperators::new(&model).unwrap()).unwrap();
        (model, bundle.pi_e)
    }

    #[test]
    fn tags_round_trip() {
        for tag in ["Ih", "Eh", "Ic", "Ec", "W0", "W12"] {
            assert_eq!(EventChannel::from_tag(tag).unwrap().tag(), tag);
        }
        assert!(EventChannel::from_tag("Xh").is_none());
        assert!(EventChannel::from_tag("W").is_none());
    }

    #[test]
    fn single_cycle_from_origin() {
        let parsed = parse_cycles(&[ev(0.3, "Ih"), ev(0.9, "Ec")]).unwrap();
        assert_eq!(parsed.cycles.len(), 1);
        assert_eq!(parsed.cycles[0].label, CycleLabel::WorkExtraction);
        assert_eq!(parsed.cycles[0].duration, 0.9);
        assert_eq!(parsed.tail, 0.0);
    }

    #[test]
    fn trailing_injection_is_leftover() {
        let events = [ev(0.1, "Ih"), ev(0.4, "Ec"), ev(0.7, "Ic"), ev(0.8, "W0"), ev(1.1, "Ih")];
        let err = parse_cycles(&events).unwrap_err();
        assert!(matches!(err, ParseError::ConsecutiveSameKind { first: 2, second: 4, .. }));
        let parsed = parse_cycles(&events[..4]).unwrap();
        assert_eq!(parsed.cycles.len(), 1);
        assert_eq!(parsed.leftover, Some((BathLabel::Cold, 0.7)));
        assert!((parsed.total_duration() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn leading_extraction_is_head() {
        let parsed = parse_cycles(&[ev(0.2, "Eh"), ev(0.5, "Ic"), ev(0.6, "Eh")]).unwrap();
        assert_eq!(parsed.head, Some(0.2));
        assert_eq!(parsed.cycles[0].label, CycleLabel::Refrigeration);
        assert!((parsed.cycles[0].duration - 0.4).abs() < 1e-15);
    }

    #[test]
    fn jsonl_round_trip() {
        let events = vec![ev(0.125, "Ih"), ev(1.0 / 3.0, "W2"), ev(2.5, "Ec")];
        let mut buf = Vec::new();
        write_jsonl(&events, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"t\":0.125,\"ch\":\"Ih\"}\n"));
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), events);
        assert!(matches!(
            read_jsonl("{\"t\":1.0,\"ch\":\"Q\"}".as_bytes()),
            Err(ParseError::Format { line: 1, .. })
        ));
    }

    #[test]
    fn eigen_propagator_matches_expm() {
        let model = build_maser(&MaserParams::default()).unwrap();
        let he = model.effective_hamiltonian();
        let prop = Propagator::new(&he);
        assert!(matches!(prop, Propagator::Eigen { .. }));
        let psi = ComplexVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8), c(0.0, 0.0)]);
        for t in [0.0, 0.7, 13.0, 250.0] {
            let a = prop.evolve(&prop.prepare(&psi), t).unwrap();
            let b = expm(&(&he * c(0.0, -1.0)), t).unwrap() * &psi;
            assert!((a - b).camax() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_record() {
        let (model, pi_e) = maser_pi_e(&MaserParams::default());
        let sampler = JumpSampler::new(&model);
        let init = InitialState::Stationary(pi_e);
        let a = sampler.sample(&init, Horizon::Jumps(500), 7, 3).unwrap();
        let b = sampler.sample(&init, Horizon::Jumps(500), 7, 3).unwrap();
        let other = sampler.sample(&init, Horizon::Jumps(500), 7, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.events, other.events);
        let batch = sampler.sample_batch(&init, Horizon::Jumps(500), 7, 5).unwrap();
        assert_eq!(batch[3], a);
    }

    #[test]
    fn time_horizon_is_respected() {
        let (model, pi_e) = maser_pi_e(&MaserParams::default());
        let rec = sample_trajectory(&model, &InitialState::Stationary(pi_e), Horizon::Time(500.0), 1).unwrap();
        assert!(!rec.events.is_empty());
        assert!(rec.events.last().unwrap().time <= 500.0);
        assert!(rec.events.windows(2).all(|w| w[0].time < w[1].time));
    }

    #[test]
    fn first_extraction_branching_from_upper_level() {
        // ε = 0 and a cold bath at zero temperature
        let p = MaserParams {
            epsilon: 0.0,
            t_c: 0.0,
            ..MaserParams::default()
        };
        let model = build_maser(&p).unwrap();
        let sampler = JumpSampler::new(&model);
        let mut upper = ComplexVector::zeros(3);
        upper[2] = c(1.0, 0.0);
        let init = InitialState::Pure(upper);
        let n = 20_000;
        let hot = (0..n)
            .filter(|&k| {
                let rec = sampler.sample(&init, Horizon::Jumps(1), 11, k).unwrap();
                rec.events[0].channel == EventChannel::Monitored(ChannelId::EH)
            })
            .count() as f64;
        let rh = p.gamma_h * (p.n_hot() + 1.0);
        let expected = rh / (rh + p.gamma_c);
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((hot / n as f64 - expected).abs() < 4.0 * se);
    }

    #[test]
    fn stationary_draws_follow_pi_e_weights() {
        let (_, pi_e) = maser_pi_e(&MaserParams::default());
        // π_E of the maser is diagonal on the two lower levels.
        assert!(pi_e[(0, 1)].norm() < 1e-14 && pi_e[(2, 2)].norm() < 1e-14);
        let w = pi_e[(0, 0)].re;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut ground = 0usize;
        for _ in 0..n {
            let v = sample_stationary_initial(&pi_e, &mut rng).unwrap();
            let on_ground = v[0].norm();
            assert!((on_ground - 1.0).abs() < 1e-12 || on_ground < 1e-12);
            if on_ground > 0.5 {
                ground += 1;
            }
        }
        let se = (w * (1.0 - w) / n as f64).sqrt();
        assert!((ground as f64 / n as f64 - w).abs() < 3.0 * se);
    }

    #[test]
    fn rank_one_pi_e_is_deterministic() {
        let mut pi = ComplexMatrix::zeros(3, 3);
        pi[(1, 1)] = c(1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let v = sample_stationary_initial(&pi, &mut rng).unwrap();
            assert!((v[1].norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn dark_level_stalls_the_sampler() {
        let model = build_maser(&MaserParams::default()).unwrap();
        let embed = |m: &ComplexMatrix| {
            let mut out = ComplexMatrix::zeros(4, 4);
            out.view_mut((0, 0), (3, 3)).copy_from(m);
            out
        };
        let channels = model
            .bath_channels()
            .iter()
            .map(|ch| {
                let mut ch = ch.clone();
                ch.operator = embed(&ch.operator);
                ch
            })
            .collect();
        let bigger = LindbladModel::new(embed(model.hamiltonian()), channels, vec![]).unwrap();
        let mut dark = ComplexVector::zeros(4);
        dark[3] = c(1.0, 0.0);
        let err = sample_trajectory(&bigger, &InitialState::Pure(dark), Horizon::Jumps(1), 0).unwrap_err();
        match err {
            TrajectoryError::DarkState { survival, .. } => assert!((survival - 1.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn estimator_rejects_short_records() {
        let parsed = ParsedCycles {
            cycles: vec![
                ParsedCycle {
                    label: CycleLabel::HotIdle,
                    duration: 1.0
                };
                50
            ],
            head: None,
            leftover: None,
            tail: 0.0,
        };
        assert_eq!(
            estimate(&[parsed], 1).unwrap_err(),
            EstimateError::InsufficientStatistics { got: 50 }
        );
    }

    #[test]
    fn run_histogram_counts_closed_runs() {
        use CycleLabel::*;
        let labels = [HotIdle, WorkExtraction, HotIdle, ColdIdle, Refrigeration, WorkExtraction, ColdIdle];
        let cycles: Vec<ParsedCycle> = labels
            .iter()
            .cycle()
            .take(140)
            .map(|&label| ParsedCycle { label, duration: 1.0 })
            .collect();
        let stats = estimate(
            &[ParsedCycles {
                cycles,
                head: None,
                leftover: None,
                tail: 0.0,
            }],
            1,
        )
        .unwrap();
        assert_eq!(stats.counts.iter().sum::<u64>() as usize, stats.n_cycles);
        // runs: 2, 0, then (ColdIdle, HotIdle) = 2 between repetitions
        assert_eq!(stats.run_histogram[0], 20);
        assert_eq!(stats.run_histogram[2], 39);
        let p0 = stats.p[0].value;
        assert!((stats.p[0].se - (p0 * (1.0 - p0) / 140.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn chi_square_accepts_exact_counts() {
        let law = geometric_law(0.4, 30);
        let observed: Vec<u64> = law.iter().map(|p| (p * 1e5).round() as u64).collect();
        let r = chi_square(&observed, &law);
        assert!(r.p_value > 0.99);
        let skewed: Vec<u64> = geometric_law(0.5, 30).iter().map(|p| (p * 1e5).round() as u64).collect();
        assert!(chi_square(&skewed, &law).p_value < 1e-10);
    }
}
