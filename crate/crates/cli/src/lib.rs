//! Command-line front end for `ercmix`: CSV ingestion, fitting,
//! classification, existence checks and the two simulation experiments, with
//! JSON reports.
//!
//! Settings come from an optional JSON manifest and from flags; flags win.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use ercmix::em::check_finite_sample_existence;
use ercmix::lab::{self, ComponentLaw, ShiftedMixtureSpec};
use ercmix::mixture::classify_rows;
use ercmix::{DensityGenerator, FitConfig, MixtureParams, Model, Scatter};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

mod input;
pub mod report;

pub use input::{parse_csv, parse_csv_str};
use report::{
    model_name, to_json, ClassifyReport, ConsistencyExpReport, ExistenceReport, FitReport,
    SeparationExpReport, ThetaReport,
};

/// Exit code for I/O, parse and configuration failures.
pub const EXIT_ERROR: i32 = 1;
/// Exit code when the data fail the existence preconditions.
pub const EXIT_PRECONDITION: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Fit(#[from] ercmix::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    CheckExistence,
    Fit,
    Classify,
    ConsistencyExp,
    SeparationExp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Gaussian,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LawName {
    Gaussian,
    Ball,
    Cube,
}

/// Every setting the front end understands. Keys mirror the flag names.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Manifest {
    pub command: Option<Command>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Fit report whose parameters `classify` applies.
    pub theta: Option<PathBuf>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub gamma: Option<f64>,
    pub model: Option<ModelName>,
    pub nu: Option<f64>,
    pub starts: Option<usize>,
    pub seed: Option<u64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    /// Separation experiment: shift gaps, one per level.
    pub levels: Option<Vec<f64>>,
    /// Consistency experiment: ascending sample sizes.
    pub sizes: Option<Vec<usize>>,
    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    pub p: Option<usize>,
    /// Consistency experiment: distance between neighbouring component centers.
    pub gap: Option<f64>,
    pub law: Option<LawName>,
    pub xi: Option<Vec<f64>>,
    /// Separation experiment: sample size per level.
    pub n: Option<usize>,
    pub reference_size: Option<usize>,
}

impl Manifest {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(self, other: Manifest) -> Manifest {
        macro_rules! pick {
            ($($f:ident),*) => { Manifest { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            command,
            data,
            out,
            theta,
            k,
            gamma,
            model,
            nu,
            starts,
            seed,
            max_iter,
            tol,
            levels,
            sizes,
            epsilon,
            eta,
            p,
            gap,
            law,
            xi,
            n,
            reference_size
        )
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|e| format!("{x:?}: {e}")))
        .collect()
}

#[derive(Debug, Parser)]
#[command(
    name = "ercmix",
    version,
    about = "Eigen-ratio constrained mixture fitting"
)]
pub struct Args {
    /// check-existence | fit | classify | consistency-exp | separation-exp
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// JSON manifest with the same keys as the flags
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub theta: Option<PathBuf>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum)]
    pub model: Option<ModelName>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_parser = parse_list::<f64>)]
    pub levels: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_list::<usize>)]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub gap: Option<f64>,
    #[arg(long, value_enum)]
    pub law: Option<LawName>,
    #[arg(long, value_parser = parse_list::<f64>)]
    pub xi: Option<Vec<f64>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reference_size: Option<usize>,
}

impl Args {
    /// The manifest file (if any) overlaid with the flags.
    pub fn into_manifest(self) -> Result<Manifest, CliError> {
        let base = match &self.manifest {
            Some(path) => Manifest::from_file(path)?,
            None => Manifest::default(),
        };
        Ok(base.overlay(Manifest {
            command: self.command,
            data: self.data,
            out: self.out,
            theta: self.theta,
            k: self.k,
            gamma: self.gamma,
            model: self.model,
            nu: self.nu,
            starts: self.starts,
            seed: self.seed,
            max_iter: self.max_iter,
            tol: self.tol,
            levels: self.levels,
            sizes: self.sizes,
            epsilon: self.epsilon,
            eta: self.eta,
            p: self.p,
            gap: self.gap,
            law: self.law,
            xi: self.xi,
            n: self.n,
            reference_size: self.reference_size,
        }))
    }
}

/// Exit code plus the JSON document that was written.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub report: String,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn model_of(m: &Manifest) -> Result<Model, CliError> {
    match (m.model.unwrap_or(ModelName::Gaussian), m.nu) {
        (ModelName::Gaussian, _) => Ok(Model::Gaussian),
        (ModelName::T, Some(nu)) => Ok(Model::StudentT { nu }),
        (ModelName::T, None) => Err(config_err("--model t requires --nu")),
    }
}

fn fit_config(m: &Manifest, default_k: Option<usize>) -> Result<FitConfig, CliError> {
    let k =
        m.k.or(default_k)
            .ok_or_else(|| config_err("--K is required"))?;
    let mut cfg = FitConfig::new(k, m.gamma.unwrap_or(100.0), model_of(m)?);
    if let Some(s) = m.starts {
        cfg.n_starts = s;
    }
    if let Some(s) = m.seed {
        cfg.seed = s;
    }
    if let Some(it) = m.max_iter {
        cfg.max_iter = it;
    }
    if let Some(t) = m.tol {
        cfg.rel_tol = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_of(m: &Manifest) -> Result<DMatrix<f64>, CliError> {
    let path = m
        .data
        .as_ref()
        .ok_or_else(|| config_err("--data is required"))?;
    parse_csv(path)
}

fn theta_from_report(r: &FitReport) -> Result<MixtureParams, CliError> {
    let generator = match (r.model.as_str(), r.nu) {
        ("gaussian", _) => DensityGenerator::Gaussian,
        ("t", Some(nu)) => DensityGenerator::student_t(nu)?,
        (other, _) => {
            return Err(CliError::Input(format!(
                "unknown model {other:?} in theta report"
            )))
        }
    };
    let centers = r
        .theta
        .mu
        .iter()
        .map(|c| DVector::from_vec(c.clone()))
        .collect();
    let scatters = r
        .theta
        .sigma
        .iter()
        .map(|rows| {
            let p = rows.len();
            if rows.iter().any(|row| row.len() != p) {
                return Err(CliError::Input("scatter matrix is not square".into()));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            Ok(Scatter::new(DMatrix::from_row_slice(p, p, &flat))?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(MixtureParams::new(
        r.theta.pi.clone(),
        centers,
        scatters,
        generator,
    )?)
}

fn read_fit_report(path: &Path) -> Result<FitReport, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn law_of(m: &Manifest, default: LawName, p: usize) -> (ComponentLaw, f64) {
    // default central radius captures (almost) all of the law's mass
    match m.law.unwrap_or(default) {
        LawName::Gaussian => (
            ComponentLaw::Gaussian {
                mean: DVector::zeros(p),
                cov: DMatrix::identity(p, p),
            },
            (p as f64).sqrt() + 3.0,
        ),
        LawName::Ball => (ComponentLaw::UniformBall { radius: 1.0 }, 1.0),
        LawName::Cube => (
            ComponentLaw::UniformCube { half_width: 1.0 },
            (p as f64).sqrt(),
        ),
    }
}

fn population(
    m: &Manifest,
    k: usize,
    default_law: LawName,
    gaps: &[f64],
) -> Result<ShiftedMixtureSpec, CliError> {
    let p = m.p.unwrap_or(2);
    let (law, default_eps) = law_of(m, default_law, p);
    let xi = m.xi.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
    let epsilon = m.epsilon.unwrap_or(default_eps);
    Ok(ShiftedMixtureSpec::with_gaps(
        p,
        vec![law; k],
        xi,
        gaps,
        epsilon,
        m.eta.unwrap_or(0.01),
    )?)
}

fn check_existence(m: &Manifest) -> Result<Outcome, CliError> {
    let data = data_of(m)?;
    let cfg = fit_config(m, None)?;
    let diag = check_finite_sample_existence(&data, &cfg);
    let (model, nu) = model_name(cfg.model);
    let report = ExistenceReport {
        ok: diag.ok,
        reasons: diag.reasons,
        n: data.nrows(),
        p: data.ncols(),
        k: cfg.k,
        model: model.into(),
        nu,
    };
    let code = if report.ok { 0 } else { EXIT_PRECONDITION };
    Ok(Outcome {
        code,
        report: to_json(&report),
    })
}

fn precondition_outcome(
    m: &Manifest,
    data: &DMatrix<f64>,
    diag: ercmix::Diagnostics,
) -> Result<Outcome, CliError> {
    let cfg = fit_config(m, None)?;
    let (model, nu) = model_name(cfg.model);
    let report = ExistenceReport {
        ok: false,
        reasons: diag.reasons,
        n: data.nrows(),
        p: data.ncols(),
        k: cfg.k,
        model: model.into(),
        nu,
    };
    Ok(Outcome {
        code: EXIT_PRECONDITION,
        report: to_json(&report),
    })
}

fn run_fit(m: &Manifest) -> Result<Outcome, CliError> {
    let data = data_of(m)?;
    let cfg = fit_config(m, None)?;
    let result = match ercmix::fit(&data, &cfg) {
        Ok(r) => r,
        Err(ercmix::Error::Precondition(diag)) => return precondition_outcome(m, &data, diag),
        Err(e) => return Err(e.into()),
    };
    let (model, nu) = model_name(cfg.model);
    let report = FitReport {
        k: cfg.k,
        gamma: cfg.gamma,
        model: model.into(),
        nu,
        loglik: result.loglik,
        theta: ThetaReport::new(&result.theta),
        assignments: result.assignments.iter().map(|a| a + 1).collect(),
        n_iter: result.n_iter,
        converged: result.converged,
        seed: cfg.seed,
    };
    Ok(Outcome {
        code: 0,
        report: to_json(&report),
    })
}

fn run_classify(m: &Manifest) -> Result<Outcome, CliError> {
    let path = m
        .theta
        .as_ref()
        .ok_or_else(|| config_err("--theta is required"))?;
    let theta = theta_from_report(&read_fit_report(path)?)?;
    let data = data_of(m)?;
    let labels = classify_rows(&data, &theta)?;
    let report = ClassifyReport {
        k: theta.k(),
        assignments: labels.iter().map(|l| l + 1).collect(),
    };
    Ok(Outcome {
        code: 0,
        report: to_json(&report),
    })
}

fn run_consistency(m: &Manifest) -> Result<Outcome, CliError> {
    let cfg = fit_config(m, Some(2))?;
    let spec = population(m, cfg.k, LawName::Gaussian, &[m.gap.unwrap_or(6.0)])?;
    let sizes = m.sizes.clone().unwrap_or_else(|| vec![200, 2000, 20_000]);
    let reference = m.reference_size.unwrap_or(lab::DEFAULT_REFERENCE_SIZE);
    let seed = m.seed.unwrap_or(0);
    let r = lab::run_consistency_experiment(&spec, 0, &sizes, &cfg, reference, seed)?;
    Ok(Outcome {
        code: 0,
        report: to_json(&ConsistencyExpReport::new(&r, seed)),
    })
}

fn run_separation(m: &Manifest) -> Result<Outcome, CliError> {
    let cfg = fit_config(m, Some(2))?;
    let gaps = m
        .levels
        .clone()
        .unwrap_or_else(|| vec![6.0, 12.0, 24.0, 48.0]);
    let spec = population(m, cfg.k, LawName::Ball, &gaps)?;
    let levels: Vec<usize> = (0..gaps.len()).collect();
    let seed = m.seed.unwrap_or(0);
    let r = lab::run_separation_experiment(&spec, &levels, &cfg, m.n.unwrap_or(5000), seed)?;
    Ok(Outcome {
        code: 0,
        report: to_json(&SeparationExpReport::new(&r, seed)),
    })
}

/// Executes the manifest and writes the report to `out` (or returns it for
/// the caller to print when `out` is unset).
pub fn run(m: &Manifest) -> Result<Outcome, CliError> {
    let command = m.command.ok_or_else(|| config_err("no command given"))?;
    let outcome = match command {
        Command::CheckExistence => check_existence(m)?,
        Command::Fit => run_fit(m)?,
        Command::Classify => run_classify(m)?,
        Command::ConsistencyExp => run_consistency(m)?,
        Command::SeparationExp => run_separation(m)?,
    };
    if let Some(path) = &m.out {
        std::fs::write(path, &outcome.report)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(outcome)
}
