use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use cyclescope::cyclestats::{CycleAnalysis, CycleStatistics};
use cyclescope::model::{build_maser, BathLabel, LindbladModel, MaserParams};
use cyclescope::structure::analyze_structure;
use rayon::prelude::*;
use serde::Deserialize;

use crate::commands::load;
use crate::output::{self, float, opt_float};
use crate::EXIT_STRUCTURE;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
    pub quantities: Vec<String>,
}

pub const QUANTITIES: &[&str] = &[
    "p1",
    "p2",
    "p3",
    "p4",
    "p_useful",
    "p_idle",
    "e_tau",
    "e_tau_1",
    "e_tau_2",
    "e_tau_3",
    "e_tau_4",
    "i_ex",
    "sigma_per_cycle",
    "mean_entropy",
    "var_entropy",
    "mean_idle",
    "time_ratio",
    "mean_useful_time",
];

/// Parameters any model with hot and cold channels accepts.
pub const BATH_PARAMETERS: &[&str] = &["T_h", "T_c", "T_h/T_c", "gamma_h", "gamma_c"];

/// Extra parameters of the three-level maser.
pub const MASER_PARAMETERS: &[&str] = &["omega_h", "omega_c", "omega_d", "epsilon"];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Parameter {
    Temperature(BathLabel),
    TemperatureRatio,
    Coupling(BathLabel),
    Maser(&'static str),
}

fn parameter(name: &str, is_maser: bool) -> anyhow::Result<Parameter> {
    let p = match name {
        "T_h" | "t_h" => Parameter::Temperature(BathLabel::Hot),
        "T_c" | "t_c" => Parameter::Temperature(BathLabel::Cold),
        "T_h/T_c" | "t_h/t_c" => Parameter::TemperatureRatio,
        "gamma_h" => Parameter::Coupling(BathLabel::Hot),
        "gamma_c" => Parameter::Coupling(BathLabel::Cold),
        _ => match MASER_PARAMETERS.iter().find(|&&m| m == name) {
            Some(&m) if is_maser => Parameter::Maser(m),
            Some(_) => bail!("parameter {name:?} is only defined for the three-level maser"),
            None => {
                let mut valid = BATH_PARAMETERS.to_vec();
                if is_maser {
                    valid.extend(MASER_PARAMETERS);
                }
                bail!("unknown parameter {name:?}; valid parameters: {}", valid.join(", "));
            }
        },
    };
    Ok(p)
}

fn set_maser(params: &MaserParams, p: Parameter, value: f64) -> MaserParams {
    let mut out = *params;
    match p {
        Parameter::Temperature(BathLabel::Hot) => out.t_h = value,
        Parameter::Temperature(BathLabel::Cold) => out.t_c = value,
        Parameter::TemperatureRatio => out.t_h = value * params.t_c,
        Parameter::Coupling(BathLabel::Hot) => out.gamma_h = value,
        Parameter::Coupling(BathLabel::Cold) => out.gamma_c = value,
        Parameter::Maser("omega_h") => out.omega_h = value,
        Parameter::Maser("omega_c") => out.omega_c = value,
        Parameter::Maser("omega_d") => out.omega_d = value,
        Parameter::Maser("epsilon") => out.epsilon = value,
        Parameter::Maser(other) => unreachable!("unhandled maser parameter {other}"),
    }
    out
}

fn cold_temperature(model: &LindbladModel) -> anyhow::Result<f64> {
    model
        .bath_channels()
        .iter()
        .find(|ch| ch.bath == BathLabel::Cold)
        .map(|ch| ch.temperature())
        .ok_or_else(|| anyhow!("model has no cold channel"))
}

fn model_at(base: &LindbladModel, maser: Option<&MaserParams>, p: Parameter, value: f64) -> anyhow::Result<LindbladModel> {
    if let Some(params) = maser {
        return Ok(build_maser(&set_maser(params, p, value))?);
    }
    let model = match p {
        Parameter::Temperature(bath) => base.with_bath_temperature(bath, value)?,
        Parameter::TemperatureRatio => base.with_bath_temperature(BathLabel::Hot, value * cold_temperature(base)?)?,
        Parameter::Coupling(bath) => base.with_bath_coupling(bath, value)?,
        Parameter::Maser(name) => bail!("parameter {name:?} is only defined for the three-level maser"),
    };
    Ok(model)
}

fn quantity(name: &str, s: &CycleStatistics, analysis: &CycleAnalysis) -> anyhow::Result<String> {
    let v = match name {
        "p1" => float(s.p[0]),
        "p2" => float(s.p[1]),
        "p3" => float(s.p[2]),
        "p4" => float(s.p[3]),
        "p_useful" => float(s.p_useful()),
        "p_idle" => float(s.p_idle()),
        "e_tau" => float(s.e_tau),
        "e_tau_1" => opt_float(s.e_tau_cond[0]),
        "e_tau_2" => opt_float(s.e_tau_cond[1]),
        "e_tau_3" => opt_float(s.e_tau_cond[2]),
        "e_tau_4" => opt_float(s.e_tau_cond[3]),
        "i_ex" => float(s.i_ex),
        "sigma_per_cycle" => opt_float(s.sigma_per_cycle),
        "mean_entropy" => opt_float(s.mean_entropy),
        "var_entropy" => opt_float(s.var_entropy),
        "mean_idle" => opt_float(s.mean_idle),
        "time_ratio" => opt_float(s.time_ratio),
        "mean_useful_time" => {
            if s.mean_idle.is_some() {
                float(analysis.mean_useful_time()?)
            } else {
                float(f64::NAN)
            }
        }
        _ => bail!("unknown quantity {name:?}"),
    };
    Ok(v)
}

pub fn validate(spec: &SweepSpec) -> anyhow::Result<()> {
    if spec.values.is_empty() {
        bail!("sweep has no values");
    }
    if let Some(v) = spec.values.iter().find(|v| !v.is_finite()) {
        bail!("sweep value {v} is not finite");
    }
    if spec.quantities.is_empty() {
        bail!("sweep has no quantities; valid quantities: {}", QUANTITIES.join(", "));
    }
    for q in &spec.quantities {
        if !QUANTITIES.contains(&q.as_str()) {
            bail!("unknown quantity {q:?}; valid quantities: {}", QUANTITIES.join(", "));
        }
    }
    Ok(())
}

pub fn run(model_path: &Path, spec_path: &Path, out: &Path) -> anyhow::Result<u8> {
    let base = load(model_path)?;
    let text = fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let spec: SweepSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing sweep spec {}", spec_path.display()))?;
    validate(&spec)?;
    let maser = MaserParams::from_model(&base);
    let param = parameter(&spec.parameter, maser.is_some())?;
    match analyze_structure(&base) {
        Ok((_, report)) if report.passed() => {}
        Ok((_, report)) => {
            crate::commands::print_report(&report, std::io::stderr())?;
            return Ok(EXIT_STRUCTURE);
        }
        Err(e) => {
            eprintln!("structure: FAIL ({e})");
            return Ok(EXIT_STRUCTURE);
        }
    }

    let rows: Vec<Vec<String>> = spec
        .values
        .par_iter()
        .map(|&value| {
            let model = model_at(&base, maser.as_ref(), param, value)
                .with_context(|| format!("{} = {value}", spec.parameter))?;
            let analysis = CycleAnalysis::new(&model)?;
            let stats = analysis.statistics()?;
            let mut row = vec![float(value)];
            for q in &spec.quantities {
                row.push(quantity(q, &stats, &analysis)?);
            }
            Ok(row)
        })
        .collect::<anyhow::Result<_>>()?;

    let mut header = vec![spec.parameter.as_str()];
    header.extend(spec.quantities.iter().map(String::as_str));
    output::write_csv(out, &header, rows)?;
    Ok(0)
}
