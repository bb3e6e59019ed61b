use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::Args;
use cyclescope::cyclestats::{CycleAnalysis, CycleLabel, CycleStatistics, TimeGrid, MIN_CONDITIONING_PROBABILITY};
use cyclescope::maser_ref::MaserClosedForm;
use cyclescope::model::{
    build_allowed_fourlevel, build_forbidden_fourlevel, build_maser, load_model, save_model, LindbladModel,
    MaserParams,
};
use cyclescope::structure::{analyze_structure, StructureReport};
use cyclescope::trajectory::{
    estimate, geometric_law, parse_cycles, read_jsonl, write_jsonl, EmpiricalStats, Horizon, InitialState,
    JumpSampler, ParsedCycles, MIN_CYCLES,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{self, float};
use crate::{ModelKind, Oracle, EXIT_STRUCTURE};

/// Cycles whose `|p₁ - p₂|` falls below this are tagged as the crossover.
pub const CROSSOVER_TOL: f64 = 1e-8;

/// Sigma band of the simulate/analyze comparison table.
pub const COMPARISON_SIGMAS: f64 = 3.0;

const USEFUL_COUNT_MAX: usize = 200;
const USEFUL_TIME_POINTS: usize = 2048;
const USEFUL_TIME_SPAN: f64 = 8.0;

pub fn load(path: &Path) -> anyhow::Result<LindbladModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_model(&text).with_context(|| format!("loading model {}", path.display()))
}

pub fn print_report(report: &StructureReport, mut out: impl Write) -> std::io::Result<()> {
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    writeln!(out, "structure: {verdict}")?;
    for c in &report.checks {
        let operator = c.operator.map_or("-".to_string(), |k| k.to_string());
        let entry = c.worst_entry.map_or("-".to_string(), |(i, j)| format!("({i},{j})"));
        writeln!(
            out,
            "  {:<28} violation {:.3e}  scale {:.3e}  operator {operator}  entry {entry}  {}",
            c.condition.name(),
            c.violation,
            c.scale,
            if c.passed { "PASS" } else { "FAIL" }
        )?;
    }
    writeln!(out, "  dark dimension: {}", report.dark_dimension)
}

/// Runs the structure check. Returns the post-injection dimension, or
/// `None` after reporting a failure on stderr.
fn gate(model: &LindbladModel) -> Option<usize> {
    match analyze_structure(model) {
        Ok((split, report)) if report.passed() => Some(split.basis_inject.ncols()),
        Ok((_, report)) => {
            let _ = print_report(&report, std::io::stderr());
            None
        }
        Err(e) => {
            eprintln!("structure: FAIL ({e})");
            None
        }
    }
}

pub fn check(path: &Path) -> anyhow::Result<u8> {
    let model = load(path)?;
    match analyze_structure(&model) {
        Ok((_, report)) => {
            print_report(&report, std::io::stdout())?;
            Ok(if report.passed() { 0 } else { EXIT_STRUCTURE })
        }
        Err(e) => {
            println!("structure: FAIL ({e})");
            Ok(EXIT_STRUCTURE)
        }
    }
}

pub fn regime(p: &[f64; 4]) -> &'static str {
    let d = p[0] - p[1];
    if d.abs() <= CROSSOVER_TOL {
        "crossover"
    } else if d > 0.0 {
        "engine"
    } else {
        "refrigerator"
    }
}

/// Parses `t_max=40,n=2048` or `40,2048`.
pub fn parse_grid(text: &str) -> anyhow::Result<TimeGrid> {
    let mut t_max = None;
    let mut n = None;
    for (k, part) in text.split(',').enumerate() {
        let (key, value) = match part.split_once('=') {
            Some((key, value)) => (key.trim(), value.trim()),
            None => (if k == 0 { "t_max" } else { "n" }, part.trim()),
        };
        match key {
            "t_max" => t_max = Some(value.parse::<f64>().with_context(|| format!("bad t_max {value:?}"))?),
            "n" => n = Some(value.parse::<usize>().with_context(|| format!("bad n {value:?}"))?),
            _ => bail!("unknown grid key {key:?}, expected t_max or n"),
        }
    }
    match (t_max, n) {
        (Some(t_max), Some(n)) => Ok(TimeGrid::new(t_max, n)?),
        _ => bail!("--tau-grid needs both t_max and n, e.g. t_max=40,n=2048"),
    }
}

fn stats_json(stats: &CycleStatistics, grid: &TimeGrid) -> anyhow::Result<Value> {
    let mut v = serde_json::to_value(stats)?;
    let obj = v.as_object_mut().ok_or_else(|| anyhow!("statistics did not serialize to an object"))?;
    obj.insert("regime".into(), json!(regime(&stats.p)));
    obj.insert("p_useful".into(), json!(stats.p_useful()));
    obj.insert("p_idle".into(), json!(stats.p_idle()));
    obj.insert("tau_grid".into(), json!({"t_max": grid.t_max, "n": grid.n_points}));
    Ok(v)
}

pub fn stats(path: &Path, oracle: Oracle, tau_grid: Option<&str>, out: &Path) -> anyhow::Result<u8> {
    let model = load(path)?;
    if gate(&model).is_none() {
        return Ok(EXIT_STRUCTURE);
    }
    let analysis = CycleAnalysis::new(&model)?;
    let grid = match tau_grid {
        Some(text) => parse_grid(text)?,
        None => analysis.default_grid()?,
    };
    let taus = grid.points();
    let (stats, columns) = match oracle {
        Oracle::Analytic => {
            let densities = analysis.all_densities(&grid)?;
            let columns: Vec<Vec<f64>> = densities.into_iter().map(|d| d.values).collect();
            (analysis.statistics()?, columns)
        }
        Oracle::ClosedForm => {
            let params = MaserParams::from_model(&model)
                .ok_or_else(|| anyhow!("--oracle closed_form needs a three-level maser model"))?;
            let form = MaserClosedForm::new(&params)?;
            let columns = CycleLabel::ALL
                .iter()
                .map(|&x| taus.iter().map(|&t| form.p_x_of_tau(x, t)).collect())
                .collect();
            (form.statistics()?, columns)
        }
    };

    output::ensure_dir(out)?;
    output::write_json(&out.join("stats.json"), &stats_json(&stats, &grid)?)?;
    let rows = taus.iter().enumerate().map(|(k, &t)| {
        let mut row = vec![float(t)];
        row.extend(columns.iter().map(|c| float(c[k])));
        row
    });
    output::write_csv(&out.join("densities.csv"), &["tau", "p1", "p2", "p3", "p4"], rows)?;

    if stats.p_useful() > MIN_CONDITIONING_PROBABILITY {
        write_useful_panels(&analysis, stats.p_useful(), out)?;
    } else {
        log::warn!("no useful cycles; skipping useful_counts.csv and useful_time.csv");
    }
    println!(
        "p = [{}]  regime {}  E(tau) {}",
        stats.p.iter().map(|&p| float(p)).collect::<Vec<_>>().join(", "),
        regime(&stats.p),
        float(stats.e_tau)
    );
    Ok(0)
}

fn write_useful_panels(analysis: &CycleAnalysis, p_useful: f64, out: &Path) -> anyhow::Result<()> {
    let counts = analysis.p_useful_n(USEFUL_COUNT_MAX)?;
    let geometric = geometric_law(p_useful, USEFUL_COUNT_MAX);
    let rows = counts
        .probabilities
        .iter()
        .zip(&geometric)
        .enumerate()
        .map(|(n, (p, g))| vec![n.to_string(), float(*p), float(*g)]);
    output::write_csv(&out.join("useful_counts.csv"), &["n", "probability", "geometric"], rows)?;

    let mean = analysis.mean_useful_time()?;
    let grid = TimeGrid::new(USEFUL_TIME_SPAN * mean, USEFUL_TIME_POINTS)?;
    let density = analysis.p_useful_time(&grid)?;
    if !density.converged {
        log::warn!("useful-time inversion did not reach its 1% refinement target");
    }
    let cdf = density.cdf();
    let rows = (0..density.times.len())
        .map(|k| vec![float(density.times[k]), float(density.density[k]), float(cdf[k])]);
    output::write_csv(&out.join("useful_time.csv"), &["t", "density", "cdf"], rows)
}

#[derive(Debug, Serialize)]
pub struct ComparisonRow {
    pub quantity: String,
    pub empirical: f64,
    pub se: f64,
    pub exact: f64,
    pub z: f64,
    pub within: bool,
}

pub fn comparison(emp: &EmpiricalStats, exact: &CycleStatistics) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    let mut push = |quantity: String, value: f64, se: f64, reference: Option<f64>| {
        let Some(reference) = reference.filter(|r| r.is_finite()) else {
            return;
        };
        let estimate = cyclescope::trajectory::Estimate { value, se };
        let z = estimate.z_score(reference);
        rows.push(ComparisonRow {
            quantity,
            empirical: value,
            se,
            exact: reference,
            z,
            within: z <= COMPARISON_SIGMAS,
        });
    };
    for k in 0..4 {
        push(format!("p{}", k + 1), emp.p[k].value, emp.p[k].se, Some(exact.p[k]));
    }
    push("e_tau".into(), emp.mean_duration.value, emp.mean_duration.se, Some(exact.e_tau));
    for k in 0..4 {
        let d = &emp.durations[k];
        if let (Some(mean), Some(var)) = (d.mean, d.variance) {
            let se = (var / d.count as f64).sqrt();
            push(format!("e_tau_{}", k + 1), mean, se, exact.e_tau_cond[k]);
        }
    }
    push("i_ex".into(), emp.i_ex.value, emp.i_ex.se, Some(exact.i_ex));
    if let Some(idle) = emp.mean_idle {
        push("mean_idle".into(), idle.value, idle.se, exact.mean_idle);
    }
    rows
}

fn print_comparison(rows: &[ComparisonRow]) {
    println!("{:<10} {:>24} {:>24} {:>24} {:>8}", "quantity", "empirical", "se", "exact", "z");
    for r in rows {
        println!(
            "{:<10} {:>24} {:>24} {:>24} {:>8.3} {}",
            r.quantity,
            float(r.empirical),
            float(r.se),
            float(r.exact),
            r.z,
            if r.within { "ok" } else { "OUTSIDE" }
        );
    }
}

#[derive(Debug, Serialize)]
struct RecordSummary {
    file: String,
    seed: Option<u64>,
    stream: Option<u64>,
    events: usize,
    cycles: usize,
}

fn empirical_report(
    emp: &EmpiricalStats,
    exact: &CycleStatistics,
    records: Vec<RecordSummary>,
    extra: Value,
) -> anyhow::Result<(Value, bool)> {
    let rows = comparison(emp, exact);
    print_comparison(&rows);
    let all_within = rows.iter().all(|r| r.within);
    let mut report = json!({
        "empirical": emp,
        "comparison": rows,
        "sigmas": COMPARISON_SIGMAS,
        "all_within": all_within,
        "records": records,
    });
    if let (Some(obj), Value::Object(extra)) = (report.as_object_mut(), extra) {
        obj.extend(extra);
    }
    Ok((report, all_within))
}

pub fn simulate(path: &Path, cycles: usize, seeds: usize, seed: u64, out: &Path) -> anyhow::Result<u8> {
    if cycles < MIN_CYCLES {
        bail!("insufficient statistics: {cycles} cycles requested, at least {MIN_CYCLES} needed");
    }
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let model = load(path)?;
    let Some(inject_dim) = gate(&model) else {
        return Ok(EXIT_STRUCTURE);
    };
    let analysis = CycleAnalysis::new(&model)?;
    let exact = analysis.statistics()?;
    let per_trajectory = cycles.div_ceil(seeds);
    let init = InitialState::Stationary(analysis.bundle().pi_e.clone());
    let records = JumpSampler::new(&model)
        .sample_batch(&init, Horizon::Cycles(per_trajectory), seed, seeds)
        .context("sampling trajectories")?;

    let dir = out.join("trajectories");
    output::ensure_dir(&dir)?;
    let parsed: Vec<(RecordSummary, ParsedCycles)> = records
        .par_iter()
        .map(|r| {
            let name = format!("stream_{:04}.jsonl", r.stream);
            let mut file = output::create(&dir.join(&name))?;
            write_jsonl(&r.events, &mut file)?;
            file.flush()?;
            let parsed = parse_cycles(&r.events)?;
            let summary = RecordSummary {
                file: format!("trajectories/{name}"),
                seed: Some(r.seed),
                stream: Some(r.stream),
                events: r.events.len(),
                cycles: parsed.cycles.len(),
            };
            Ok((summary, parsed))
        })
        .collect::<anyhow::Result<_>>()?;
    let (summaries, parsed): (Vec<_>, Vec<_>) = parsed.into_iter().unzip();
    let emp = estimate(&parsed, inject_dim)?;
    let extra = json!({
        "seed": seed,
        "seeds": seeds,
        "cycles_per_trajectory": per_trajectory,
        "initial_state": "pi_e",
    });
    let (report, _) = empirical_report(&emp, &exact, summaries, extra)?;
    output::write_json(&out.join("empirical.json"), &report)?;
    Ok(0)
}

pub fn analyze(path: &Path, records: &[PathBuf], out: &Path) -> anyhow::Result<u8> {
    let model = load(path)?;
    let Some(inject_dim) = gate(&model) else {
        return Ok(EXIT_STRUCTURE);
    };
    let exact = CycleAnalysis::new(&model)?.statistics()?;
    let parsed: Vec<(RecordSummary, ParsedCycles)> = records
        .par_iter()
        .map(|file| {
            let reader = BufReader::new(fs::File::open(file).with_context(|| format!("opening {}", file.display()))?);
            let events = read_jsonl(reader).with_context(|| format!("reading {}", file.display()))?;
            let parsed = parse_cycles(&events).with_context(|| format!("parsing {}", file.display()))?;
            let summary = RecordSummary {
                file: file.display().to_string(),
                seed: None,
                stream: None,
                events: events.len(),
                cycles: parsed.cycles.len(),
            };
            Ok((summary, parsed))
        })
        .collect::<anyhow::Result<_>>()?;
    let (summaries, parsed): (Vec<_>, Vec<_>) = parsed.into_iter().unzip();
    let emp = estimate(&parsed, inject_dim)?;
    let (report, _) = empirical_report(&emp, &exact, summaries, json!({}))?;
    output::write_json(out, &report)?;
    Ok(0)
}

#[derive(Args, Debug, Default)]
pub struct MaserArgs {
    #[arg(long)]
    pub omega_h: Option<f64>,
    #[arg(long)]
    pub omega_c: Option<f64>,
    #[arg(long)]
    pub omega_d: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub gamma_h: Option<f64>,
    #[arg(long)]
    pub gamma_c: Option<f64>,
    #[arg(long)]
    pub t_h: Option<f64>,
    #[arg(long)]
    pub t_c: Option<f64>,
}

impl MaserArgs {
    pub fn params(&self) -> MaserParams {
        let d = MaserParams::default();
        MaserParams {
            omega_h: self.omega_h.unwrap_or(d.omega_h),
            omega_c: self.omega_c.unwrap_or(d.omega_c),
            omega_d: self.omega_d.unwrap_or(d.omega_d),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            gamma_h: self.gamma_h.unwrap_or(d.gamma_h),
            gamma_c: self.gamma_c.unwrap_or(d.gamma_c),
            t_h: self.t_h.unwrap_or(d.t_h),
            t_c: self.t_c.unwrap_or(d.t_c),
        }
    }
}

pub fn model(kind: ModelKind, maser: &MaserArgs, out: Option<&Path>) -> anyhow::Result<u8> {
    let model = match kind {
        ModelKind::Maser => build_maser(&maser.params())?,
        ModelKind::Forbidden => build_forbidden_fourlevel(),
        ModelKind::Allowed => build_allowed_fourlevel(),
    };
    let mut text = save_model(&model);
    text.push('\n');
    match out {
        Some(path) => {
            let mut file = output::create(path)?;
            file.write_all(text.as_bytes())?;
            file.flush()?;
        }
        None => print!("{text}"),
    }
    Ok(0)
}
