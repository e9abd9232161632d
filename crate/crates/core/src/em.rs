//! ECM fitting of eigen-ratio constrained Gaussian and fixed-`nu` Student-t
//! mixtures.
//!
//! Each start runs E-step / moment M-step / constrained eigenvalue step until
//! the relative change of the mean log-likelihood drops below `rel_tol`.
//! Starts are independent and seeded from `(seed, start_index)`, so results do
//! not depend on how many threads execute them.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::erc::{feasibility_truncate, optimal_constrained_eigenvalues, satisfies_erc, ErcConfig};
use crate::error::{Error, Result};
use crate::esd::Scatter;
use crate::generators::DensityGenerator;
use crate::mixture::{MixtureParams, PosteriorMatrix, RowData};

/// Component family being fitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    Gaussian,
    /// Student-t with fixed degrees of freedom.
    StudentT {
        nu: f64,
    },
}

impl Model {
    pub fn generator(&self) -> Result<DensityGenerator> {
        match self {
            Model::Gaussian => Ok(DensityGenerator::Gaussian),
            Model::StudentT { nu } => DensityGenerator::student_t(*nu),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub k: usize,
    pub gamma: f64,
    pub model: Model,
    pub n_starts: usize,
    pub max_iter: usize,
    /// Stop when `|l_t - l_{t-1}| / (1 + |l_t|) < rel_tol`.
    pub rel_tol: f64,
    pub seed: u64,
    /// A start is abandoned when a component's posterior mass falls below `min_weight * n`.
    pub min_weight: f64,
}

impl FitConfig {
    pub fn new(k: usize, gamma: f64, model: Model) -> Self {
        Self {
            k,
            gamma,
            model,
            n_starts: 10,
            max_iter: 500,
            rel_tol: 1e-8,
            seed: 0,
            min_weight: 1e-6,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_starts(mut self, n_starts: usize) -> Self {
        self.n_starts = n_starts;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        ErcConfig::new(self.gamma)?;
        self.model.generator()?;
        if self.n_starts == 0 || self.max_iter == 0 {
            return Err(Error::Config(
                "n_starts and max_iter must be positive".into(),
            ));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config(format!(
                "rel_tol must be > 0, got {}",
                self.rel_tol
            )));
        }
        if !(self.min_weight >= 0.0 && self.min_weight < 1.0 / self.k as f64) {
            return Err(Error::Config(format!(
                "min_weight must lie in [0, 1/K), got {}",
                self.min_weight
            )));
        }
        Ok(())
    }

    pub fn erc(&self) -> Result<ErcConfig> {
        ErcConfig::new(self.gamma)
    }
}

/// Outcome of the finite-sample existence check.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub ok: bool,
    pub reasons: Vec<String>,
}

/// Number of distinct rows (bitwise, with `-0.0 == 0.0`).
pub fn count_distinct_rows(data: &DMatrix<f64>) -> usize {
    let mut seen = HashSet::new();
    for row in data.row_iter() {
        let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
        seen.insert(key);
    }
    seen.len()
}

/// Checks `n > K`, at least `K + 1` distinct rows, and the generator's
/// sample size threshold. Never fails; violations are listed in `reasons`.
pub fn check_finite_sample_existence(data: &DMatrix<f64>, cfg: &FitConfig) -> Diagnostics {
    let (n, p) = data.shape();
    let k = cfg.k;
    let mut reasons = Vec::new();
    if n == 0 || p == 0 {
        reasons.push("data is empty".to_string());
        return Diagnostics { ok: false, reasons };
    }
    if n <= k {
        reasons.push(format!("n>K violated (n = {n}, K = {k})"));
    }
    let distinct = count_distinct_rows(data);
    if distinct < k + 1 {
        reasons.push(format!(
            "fewer than K+1 distinct points ({distinct} distinct, K = {k})"
        ));
    }
    match cfg.model.generator().and_then(|g| g.min_sample_size(p, k)) {
        Ok(min_n) if n < min_n => reasons.push(format!(
            "sample size below the generator threshold (n = {n}, need n >= {min_n})"
        )),
        Ok(_) => {}
        Err(e) => reasons.push(format!("generator threshold unavailable: {e}")),
    }
    Diagnostics {
        ok: reasons.is_empty(),
        reasons,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

fn covariance(rows: &RowData, members: &[usize]) -> DMatrix<f64> {
    let p = rows.p();
    let mut mean = DVector::zeros(p);
    for &i in members {
        mean += DVector::from_column_slice(rows.row(i));
    }
    mean /= members.len() as f64;
    let mut cov = DMatrix::zeros(p, p);
    for &i in members {
        let d = DVector::from_column_slice(rows.row(i)) - &mean;
        cov += &d * d.transpose();
    }
    cov / members.len() as f64
}

/// Seeded start: `K` distinct rows as centers (squared-distance weighted), nearest-center
/// clusters for weights and scatters, then truncation onto the constraint set.
pub fn init_params(data: &DMatrix<f64>, cfg: &FitConfig, start_seed: u64) -> Result<MixtureParams> {
    let rows = RowData::from_matrix(data)?;
    init_from_rows(&rows, cfg, start_seed)
}

fn init_from_rows(rows: &RowData, cfg: &FitConfig, start_seed: u64) -> Result<MixtureParams> {
    let (n, p, k) = (rows.n(), rows.p(), cfg.k);
    let mut rng = ChaCha8Rng::seed_from_u64(start_seed);
    let sq_dist = |i: usize, j: usize| -> f64 {
        rows.row(i)
            .iter()
            .zip(rows.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };

    // first center uniform, the rest with probability proportional to the
    // squared distance to the nearest picked center (rows equal to a picked
    // center have weight zero, so picks are distinct)
    let mut picked: Vec<usize> = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(i, picked[0])).collect();
    while picked.len() < k {
        let total: f64 = nearest.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Init(format!(
                "only {} distinct rows for K = {k}",
                picked.len()
            )));
        }
        let dist = WeightedIndex::new(&nearest).map_err(|e| Error::Init(e.to_string()))?;
        let next = dist.sample(&mut rng);
        picked.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(i, next));
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..n {
        let mut best = (0, f64::INFINITY);
        for (c, &j) in picked.iter().enumerate() {
            let d = sq_dist(i, j);
            if d < best.1 {
                best = (c, d);
            }
        }
        members[best.0].push(i);
    }

    let floor = 1.0 / (10.0 * k as f64);
    let mut weights: Vec<f64> = members
        .iter()
        .map(|m| (m.len() as f64 / n as f64).max(floor))
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let all: Vec<usize> = (0..n).collect();
    let pooled = covariance(rows, &all);
    let ridge = if pooled.trace() > 0.0 {
        1e-6 * pooled.trace() / p as f64
    } else {
        1e-6
    };
    let ridge_eye = DMatrix::<f64>::identity(p, p) * ridge;
    let scatters = members
        .iter()
        .map(|m| {
            // clusters too small for a full-rank covariance borrow the pooled one
            let cov = if m.len() > p {
                covariance(rows, m)
            } else {
                pooled.clone()
            };
            Scatter::new(cov + &ridge_eye)
        })
        .collect::<Result<Vec<_>>>()?;
    let scatters = feasibility_truncate(&scatters, cfg.erc()?)?;
    let centers = picked
        .iter()
        .map(|&i| DVector::from_column_slice(rows.row(i)))
        .collect();
    MixtureParams::new(weights, centers, scatters, cfg.model.generator()?)
}

/// Posterior matrix of `theta` on every row of `data`.
pub fn e_step(data: &DMatrix<f64>, theta: &MixtureParams) -> Result<PosteriorMatrix> {
    let rows = RowData::from_matrix(data)?;
    rows.check_dim(theta.p())?;
    let pass = rows.posterior_pass(&theta.evaluator()?);
    Ok(PosteriorMatrix::new(pass.tau).expect("posterior rows are normalized"))
}

fn check_tau(rows: &RowData, tau: &PosteriorMatrix, cfg: &FitConfig) -> Result<()> {
    if tau.n() != rows.n() || tau.k() != cfg.k {
        return Err(Error::Shape(format!(
            "posterior is {}x{}, expected {}x{}",
            tau.n(),
            tau.k(),
            rows.n(),
            cfg.k
        )));
    }
    Ok(())
}

/// Classical Gaussian moment updates followed by the joint constrained
/// eigenvalue step.
pub fn m_step_gaussian(
    data: &DMatrix<f64>,
    tau: &PosteriorMatrix,
    cfg: &FitConfig,
) -> Result<MixtureParams> {
    let rows = RowData::from_matrix(data)?;
    check_tau(&rows, tau, cfg)?;
    constrained_m_step(&rows, tau.as_matrix(), None, cfg)
}

/// Latent-scale weight of the Student-t update at squared Mahalanobis distance `delta`.
pub fn latent_scale_weight(nu: f64, p: usize, delta: f64) -> f64 {
    (nu + p as f64) / (nu + delta)
}

/// Fixed-`nu` Student-t update: latent scale weights from `theta`, weighted
/// moments, then the constrained eigenvalue step.
pub fn m_step_student_t(
    data: &DMatrix<f64>,
    tau: &PosteriorMatrix,
    theta: &MixtureParams,
    cfg: &FitConfig,
) -> Result<MixtureParams> {
    let rows = RowData::from_matrix(data)?;
    check_tau(&rows, tau, cfg)?;
    rows.check_dim(theta.p())?;
    let nu = match cfg.model {
        Model::StudentT { nu } => nu,
        Model::Gaussian => {
            return Err(Error::Config(
                "Student-t M-step needs a Student-t model".into(),
            ))
        }
    };
    let u = scale_weights(&rows, theta, nu);
    constrained_m_step(&rows, tau.as_matrix(), Some(&u), cfg)
}

// n x K latent scale weights, row-major
fn scale_weights(rows: &RowData, theta: &MixtureParams, nu: f64) -> Vec<f64> {
    let (n, k, p) = (rows.n(), theta.k(), rows.p());
    let mut u = vec![0.0; n * k];
    let mut diff = vec![0.0; p];
    for i in 0..n {
        let x = rows.row(i);
        for c in 0..k {
            for (d, (a, b)) in diff.iter_mut().zip(x.iter().zip(theta.centers()[c].iter())) {
                *d = a - b;
            }
            let delta = theta.scatters()[c].quad_form(&diff);
            u[i * k + c] = latent_scale_weight(nu, p, delta);
        }
    }
    u
}

fn constrained_m_step(
    rows: &RowData,
    tau: &DMatrix<f64>,
    u: Option<&[f64]>,
    cfg: &FitConfig,
) -> Result<MixtureParams> {
    let (n, p, k) = (rows.n(), rows.p(), cfg.k);
    let mass: Vec<f64> = (0..k).map(|c| tau.column(c).sum()).collect();
    for (c, &w) in mass.iter().enumerate() {
        if !(w > 0.0) || w < cfg.min_weight * n as f64 {
            return Err(Error::EmptyComponent {
                component: c,
                weight: w / n as f64,
            });
        }
    }
    let total: f64 = mass.iter().sum();
    let weights: Vec<f64> = mass.iter().map(|w| w / total).collect();

    let mut centers = Vec::with_capacity(k);
    let mut raw = Vec::with_capacity(k);
    for c in 0..k {
        let a = |i: usize| match u {
            Some(u) => tau[(i, c)] * u[i * k + c],
            None => tau[(i, c)],
        };
        let mut mu = DVector::zeros(p);
        let mut a_sum = 0.0;
        for i in 0..n {
            let ai = a(i);
            a_sum += ai;
            for (m, x) in mu.iter_mut().zip(rows.row(i)) {
                *m += ai * x;
            }
        }
        mu /= a_sum;
        let mut s = DMatrix::zeros(p, p);
        let mut d = vec![0.0; p];
        for i in 0..n {
            let ai = a(i);
            for (dj, (x, m)) in d.iter_mut().zip(rows.row(i).iter().zip(mu.iter())) {
                *dj = x - m;
            }
            for r in 0..p {
                let ar = ai * d[r];
                for q in 0..=r {
                    s[(r, q)] += ar * d[q];
                }
            }
        }
        for r in 0..p {
            for q in 0..r {
                s[(q, r)] = s[(r, q)];
            }
        }
        s /= mass[c];
        centers.push(mu);
        raw.push(s.symmetric_eigen());
    }

    let targets: Vec<Vec<f64>> = raw
        .iter()
        .map(|e| e.eigenvalues.iter().map(|v| v.max(0.0)).collect())
        .collect();
    let lambdas = optimal_constrained_eigenvalues(&targets, &mass, cfg.erc()?)?;
    let scatters = raw
        .iter()
        .zip(&lambdas)
        .map(|(e, l)| Scatter::from_eigen(l, &e.eigenvectors))
        .collect::<Result<Vec<_>>>()?;
    MixtureParams::new(weights, centers, scatters, cfg.model.generator()?)
}

fn m_step_rows(
    rows: &RowData,
    tau: &DMatrix<f64>,
    theta: &MixtureParams,
    cfg: &FitConfig,
) -> Result<MixtureParams> {
    match cfg.model {
        Model::Gaussian => constrained_m_step(rows, tau, None, cfg),
        Model::StudentT { nu } => {
            let u = scale_weights(rows, theta, nu);
            constrained_m_step(rows, tau, Some(&u), cfg)
        }
    }
}

/// Upper bound on the mean log-likelihood: `log g(0) - (p/2) log lambda_min(theta)`.
pub fn loglik_upper_bound(theta: &MixtureParams) -> Result<f64> {
    let log_g0 = theta.generator().evaluator(theta.p())?.log_peak();
    Ok(log_g0 - 0.5 * theta.p() as f64 * theta.lambda_min().ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta: MixtureParams,
    pub loglik: f64,
    /// Mean log-likelihood at the start and after every M-step.
    pub loglik_trace: Vec<f64>,
    pub posterior: PosteriorMatrix,
    /// MAP labels (0-based).
    pub assignments: Vec<usize>,
    pub n_iter: usize,
    pub converged: bool,
    pub start_index: usize,
    pub diagnostics: Diagnostics,
}

/// Called with `(start_index, iteration, theta)` after every M-step.
pub type Observer<'a> = &'a (dyn Fn(usize, usize, &MixtureParams) + Sync);

struct Chain {
    theta: MixtureParams,
    tau: DMatrix<f64>,
    labels: Vec<usize>,
    trace: Vec<f64>,
    n_iter: usize,
    converged: bool,
}

const MAX_RETRIES: u64 = 3;

fn run_start(
    rows: &RowData,
    cfg: &FitConfig,
    start: usize,
    observer: Option<Observer<'_>>,
) -> Result<Chain> {
    let mut last = None;
    for attempt in 0..=MAX_RETRIES {
        let seed = derive_seed(cfg.seed, start as u64 | (attempt << 32));
        match run_attempt(rows, cfg, start, seed, observer) {
            Ok(chain) => return Ok(chain),
            Err(e @ Error::EmptyComponent { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::FitFailed(format!(
        "start {start}: {} after {MAX_RETRIES} retries",
        last.expect("at least one attempt ran")
    )))
}

fn run_attempt(
    rows: &RowData,
    cfg: &FitConfig,
    start: usize,
    seed: u64,
    observer: Option<Observer<'_>>,
) -> Result<Chain> {
    let erc = cfg.erc()?;
    let mut theta = init_from_rows(rows, cfg, seed)?;
    let mut pass = rows.posterior_pass(&theta.evaluator()?);
    let mut trace = vec![pass.loglik];
    let mut converged = false;
    let mut n_iter = 0;
    for it in 1..=cfg.max_iter {
        theta = m_step_rows(rows, &pass.tau, &theta, cfg)?;
        debug_assert!(satisfies_erc(&theta, erc, 1e-10));
        if let Some(obs) = observer {
            obs(start, it, &theta);
        }
        pass = rows.posterior_pass(&theta.evaluator()?);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(pass.loglik);
        n_iter = it;
        if (pass.loglik - prev).abs() / (1.0 + pass.loglik.abs()) < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    Ok(Chain {
        theta,
        tau: pass.tau,
        labels: pass.labels,
        trace,
        n_iter,
        converged,
    })
}

/// Multi-start constrained maximum likelihood fit.
pub fn fit(data: &DMatrix<f64>, cfg: &FitConfig) -> Result<FitResult> {
    fit_with_observer(data, cfg, None)
}

pub fn fit_with_observer(
    data: &DMatrix<f64>,
    cfg: &FitConfig,
    observer: Option<Observer<'_>>,
) -> Result<FitResult> {
    cfg.validate()?;
    let diagnostics = check_finite_sample_existence(data, cfg);
    if !diagnostics.ok {
        return Err(Error::Precondition(diagnostics));
    }
    let rows = RowData::from_matrix(data)?;
    let chains: Vec<Result<Chain>> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|s| run_start(&rows, cfg, s, observer))
        .collect();

    let mut best: Option<(usize, Chain)> = None;
    let mut failures = Vec::new();
    for (s, chain) in chains.into_iter().enumerate() {
        match chain {
            Ok(c) => {
                let better = match &best {
                    None => true,
                    Some((_, b)) => c.trace.last() > b.trace.last(),
                };
                if better {
                    best = Some((s, c));
                }
            }
            Err(e @ Error::FitFailed(_)) => failures.push(e.to_string()),
            Err(e) => return Err(e),
        }
    }
    let (start_index, chain) = best.ok_or_else(|| Error::FitFailed(failures.join("; ")))?;
    Ok(FitResult {
        loglik: *chain.trace.last().expect("trace is non-empty"),
        theta: chain.theta,
        loglik_trace: chain.trace,
        posterior: PosteriorMatrix::new(chain.tau).expect("posterior rows are normalized"),
        assignments: chain.labels,
        n_iter: chain.n_iter,
        converged: chain.converged,
        start_index,
        diagnostics,
    })
}
