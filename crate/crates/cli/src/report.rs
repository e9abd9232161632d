use std::io;

use ercmix::lab::{ConsistencyReport, Containment, SeparationReport, ValidityCheck};
use ercmix::{MixtureParams, Model};
use serde::{Deserialize, Serialize};

/// Compact JSON with every float written to 17 significant digits, so that
/// reports round-trip exactly and are byte-stable.
struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
    value
        .serialize(&mut ser)
        .expect("reports serialize infallibly");
    let mut s = String::from_utf8(buf).expect("serde_json writes UTF-8");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ThetaReport {
    pub pi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    /// Dense row-major scatter matrices.
    pub sigma: Vec<Vec<Vec<f64>>>,
}

impl ThetaReport {
    pub fn new(theta: &MixtureParams) -> Self {
        let p = theta.p();
        Self {
            pi: theta.weights().to_vec(),
            mu: theta
                .centers()
                .iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
            sigma: theta
                .scatters()
                .iter()
                .map(|s| {
                    (0..p)
                        .map(|i| (0..p).map(|j| s.matrix()[(i, j)]).collect())
                        .collect()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitReport {
    #[serde(rename = "K")]
    pub k: usize,
    pub gamma: f64,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    pub loglik: f64,
    #[serde(flatten)]
    pub theta: ThetaReport,
    /// 1-based component labels.
    pub assignments: Vec<usize>,
    pub n_iter: usize,
    pub converged: bool,
    pub seed: u64,
}

pub fn model_name(model: Model) -> (&'static str, Option<f64>) {
    match model {
        Model::Gaussian => ("gaussian", None),
        Model::StudentT { nu } => ("t", Some(nu)),
    }
}

#[derive(Debug, Serialize)]
pub struct ExistenceReport {
    pub ok: bool,
    pub reasons: Vec<String>,
    pub n: usize,
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct ClassifyReport {
    #[serde(rename = "K")]
    pub k: usize,
    pub assignments: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl From<&ValidityCheck> for CheckReport {
    fn from(c: &ValidityCheck) -> Self {
        Self {
            name: c.name.clone(),
            passed: c.passed,
            detail: c.detail.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ReferenceReport {
    pub size: usize,
    pub population_loglik: f64,
    pub std_error: f64,
    #[serde(flatten)]
    pub theta: ThetaReport,
}

#[derive(Debug, Serialize)]
pub struct ConsistencyRowReport {
    pub n: usize,
    pub distance: Option<f64>,
    pub loglik_gap: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ConsistencyExpReport {
    pub valid: bool,
    pub checks: Vec<CheckReport>,
    pub reference: Option<ReferenceReport>,
    pub rows: Vec<ConsistencyRowReport>,
    pub seed: u64,
}

impl ConsistencyExpReport {
    pub fn new(r: &ConsistencyReport, seed: u64) -> Self {
        Self {
            valid: r.valid(),
            checks: r.checks.iter().map(CheckReport::from).collect(),
            reference: r.reference.as_ref().map(|f| ReferenceReport {
                size: f.size,
                population_loglik: f.population_loglik.estimate,
                std_error: f.population_loglik.std_error,
                theta: ThetaReport::new(&f.theta),
            }),
            rows: r
                .rows
                .iter()
                .map(|row| ConsistencyRowReport {
                    n: row.n,
                    distance: row.distance,
                    loglik_gap: row.loglik_gap,
                    error: row.error.clone(),
                })
                .collect(),
            seed,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SeparationRowReport {
    pub gap: f64,
    pub fractions: Option<Vec<f64>>,
    /// 1-based fitted component matched to each population component.
    pub matching: Option<Vec<usize>>,
    pub matching_degenerate: Option<bool>,
    pub weight_errors: Option<Vec<f64>>,
    pub mean_errors: Option<Vec<f64>>,
    pub cov_errors: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SeparationExpReport {
    pub checks: Vec<CheckReport>,
    pub rows: Vec<SeparationRowReport>,
    pub seed: u64,
}

impl SeparationExpReport {
    pub fn new(r: &SeparationReport, seed: u64) -> Self {
        let rows = r
            .rows
            .iter()
            .map(|row| {
                let c: Option<&Containment> = row.containment.as_ref();
                SeparationRowReport {
                    gap: row.min_gap,
                    fractions: c.map(|c| c.fractions.clone()),
                    matching: c.map(|c| c.matching.iter().map(|m| m + 1).collect()),
                    matching_degenerate: c.map(|c| c.degenerate),
                    weight_errors: row.weight_errors.clone(),
                    mean_errors: row.mean_errors.clone(),
                    cov_errors: row.cov_errors.clone(),
                    error: row.error.clone(),
                }
            })
            .collect();
        Self {
            checks: r.checks.iter().map(CheckReport::from).collect(),
            rows,
            seed,
        }
    }
}
