//! Samplers and experiment runners for the consistency and separation
//! behaviour of the constrained estimator.
//!
//! Populations are shifted mixtures `P_m = Σ_k ξ_k Q_k(· − ρ_{m,k})` where each
//! `Q_k` is centered at the origin and `m` indexes a separation schedule.
//! Every experiment cell derives its own seed, so tables depend only on the
//! base seed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::em::{derive_seed, fit, FitConfig, Model};
use crate::error::{Error, Result};
use crate::mixture::{map_classify, param_distance, MixtureParams, RowData};

const MASS_CHECK_DRAWS: usize = 100_000;
const MASS_CHECK_SEED: u64 = 0x6d61_7373;

// seed streams, kept apart so that no two cells share randomness by accident
const STREAM_SAMPLE: u64 = 1;
const STREAM_FIT: u64 = 2;
const STREAM_MC: u64 = 3;
const STREAM_CONTAIN: u64 = 4;

/// A component distribution `Q_k`, centered so that the origin is its center.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentLaw {
    Gaussian {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
    UniformBall {
        radius: f64,
    },
    UniformCube {
        half_width: f64,
    },
    /// `N(0, cov)` with probability `1 − fraction`, `N(0, inflation·cov)` otherwise.
    ContaminatedGaussian {
        cov: DMatrix<f64>,
        fraction: f64,
        inflation: f64,
    },
    /// All mass at the origin. Only useful to build degenerate populations.
    PointMass,
}

impl ComponentLaw {
    pub fn is_continuous(&self) -> bool {
        !matches!(self, ComponentLaw::PointMass)
    }

    pub fn mean(&self, p: usize) -> DVector<f64> {
        match self {
            ComponentLaw::Gaussian { mean, .. } => mean.clone(),
            _ => DVector::zeros(p),
        }
    }

    pub fn covariance(&self, p: usize) -> DMatrix<f64> {
        let eye = DMatrix::<f64>::identity(p, p);
        match self {
            ComponentLaw::Gaussian { cov, .. } => cov.clone(),
            ComponentLaw::UniformBall { radius } => eye * (radius * radius / (p as f64 + 2.0)),
            ComponentLaw::UniformCube { half_width } => eye * (half_width * half_width / 3.0),
            ComponentLaw::ContaminatedGaussian {
                cov,
                fraction,
                inflation,
            } => cov * ((1.0 - fraction) + fraction * inflation),
            ComponentLaw::PointMass => DMatrix::zeros(p, p),
        }
    }

    fn sampler(&self, p: usize) -> Result<LawSampler> {
        let check_cov = |cov: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            if cov.shape() != (p, p) {
                return Err(Error::Shape(format!(
                    "covariance is {:?}, expected {p}x{p}",
                    cov.shape()
                )));
            }
            psd_factor(cov)
        };
        Ok(match self {
            ComponentLaw::Gaussian { mean, cov } => {
                if mean.len() != p {
                    return Err(Error::Shape(format!(
                        "mean has length {}, expected {p}",
                        mean.len()
                    )));
                }
                LawSampler::Gaussian {
                    mean: mean.clone(),
                    factor: check_cov(cov)?,
                }
            }
            ComponentLaw::UniformBall { radius } => {
                positive("radius", *radius)?;
                LawSampler::Ball { radius: *radius }
            }
            ComponentLaw::UniformCube { half_width } => {
                positive("half_width", *half_width)?;
                LawSampler::Cube {
                    half_width: *half_width,
                }
            }
            ComponentLaw::ContaminatedGaussian {
                cov,
                fraction,
                inflation,
            } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(Error::Config(format!(
                        "contamination fraction must be in [0, 1], got {fraction}"
                    )));
                }
                positive("inflation", *inflation)?;
                LawSampler::Contaminated {
                    factor: check_cov(cov)?,
                    fraction: *fraction,
                    scale: inflation.sqrt(),
                }
            }
            ComponentLaw::PointMass => LawSampler::Point,
        })
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// `L` with `L Lᵀ = cov`, via the eigendecomposition so that singular
/// covariances are allowed.
fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = cov.amax().max(1.0);
    if (cov - cov.transpose()).amax() > 1e-8 * scale {
        return Err(Error::Shape("covariance is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-8 * scale {
        return Err(Error::NotPsd(min));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

#[derive(Debug, Clone)]
enum LawSampler {
    Gaussian {
        mean: DVector<f64>,
        factor: DMatrix<f64>,
    },
    Ball {
        radius: f64,
    },
    Cube {
        half_width: f64,
    },
    Contaminated {
        factor: DMatrix<f64>,
        fraction: f64,
        scale: f64,
    },
    Point,
}

impl LawSampler {
    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let p = out.len();
        let normal = |rng: &mut ChaCha8Rng| -> DVector<f64> {
            DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
        };
        match self {
            LawSampler::Gaussian { mean, factor } => {
                let x = factor * normal(rng) + mean;
                out.copy_from_slice(x.as_slice());
            }
            LawSampler::Ball { radius } => {
                let dir = loop {
                    let z = normal(rng);
                    let norm = z.norm();
                    if norm > 0.0 {
                        break z / norm;
                    }
                };
                let u: f64 = rng.random();
                let r = radius * u.powf(1.0 / p as f64);
                for (o, d) in out.iter_mut().zip(dir.iter()) {
                    *o = r * d;
                }
            }
            LawSampler::Cube { half_width } => {
                for o in out.iter_mut() {
                    *o = rng.random_range(-half_width..=*half_width);
                }
            }
            LawSampler::Contaminated {
                factor,
                fraction,
                scale,
            } => {
                let inflate = rng.random::<f64>() < *fraction;
                let mut x = factor * normal(rng);
                if inflate {
                    x *= *scale;
                }
                out.copy_from_slice(x.as_slice());
            }
            LawSampler::Point => out.fill(0.0),
        }
    }
}

/// Draws `n` points from a single law; rows of the returned matrix.
pub fn sample_law(law: &ComponentLaw, p: usize, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let sampler = law.sampler(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = DMatrix::zeros(n, p);
    let mut buf = vec![0.0; p];
    for i in 0..n {
        sampler.draw(&mut rng, &mut buf);
        for (j, v) in buf.iter().enumerate() {
            data[(i, j)] = *v;
        }
    }
    Ok(data)
}

/// A shifted mixture population with a separation schedule.
#[derive(Debug, Clone)]
pub struct ShiftedMixtureSpec {
    p: usize,
    laws: Vec<ComponentLaw>,
    xi: Vec<f64>,
    shifts: Vec<Vec<DVector<f64>>>,
    epsilon: f64,
    eta: f64,
    samplers: Vec<LawSampler>,
    central_mass: Vec<f64>,
}

impl ShiftedMixtureSpec {
    /// `shifts[m][k]` is the center of component `k` at level `m`.
    ///
    /// Rejects laws whose Monte Carlo mass inside the `epsilon`-ball falls
    /// below `1 − 2·eta`.
    pub fn new(
        p: usize,
        laws: Vec<ComponentLaw>,
        xi: Vec<f64>,
        shifts: Vec<Vec<DVector<f64>>>,
        epsilon: f64,
        eta: f64,
    ) -> Result<Self> {
        let k = laws.len();
        if p == 0 || k == 0 {
            return Err(Error::InvalidSpec(
                "need p >= 1 and at least one law".into(),
            ));
        }
        if xi.len() != k {
            return Err(Error::InvalidSpec(format!(
                "{} weights for {k} laws",
                xi.len()
            )));
        }
        if xi.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidSpec("weights must be positive".into()));
        }
        let total: f64 = xi.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidSpec(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        if shifts.is_empty() {
            return Err(Error::InvalidSpec("shift schedule is empty".into()));
        }
        let mut prev_gap = f64::NEG_INFINITY;
        for (m, level) in shifts.iter().enumerate() {
            if level.len() != k
                || level
                    .iter()
                    .any(|r| r.len() != p || r.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::InvalidSpec(format!(
                    "level {m} needs {k} finite shifts of length {p}"
                )));
            }
            let gap = min_pairwise_distance(level);
            if gap < prev_gap {
                return Err(Error::InvalidSpec(format!(
                    "minimum shift distance decreases at level {m} ({gap} < {prev_gap})"
                )));
            }
            prev_gap = gap;
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::InvalidSpec(format!(
                "eta must be in [0, 1), got {eta}"
            )));
        }
        let samplers = laws
            .iter()
            .map(|l| l.sampler(p))
            .collect::<Result<Vec<_>>>()?;

        let mut central_mass = Vec::with_capacity(k);
        for (j, sampler) in samplers.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(MASS_CHECK_SEED, j as u64));
            let mut buf = vec![0.0; p];
            let mut inside = 0usize;
            for _ in 0..MASS_CHECK_DRAWS {
                sampler.draw(&mut rng, &mut buf);
                if buf.iter().map(|v| v * v).sum::<f64>().sqrt() < epsilon {
                    inside += 1;
                }
            }
            let frac = inside as f64 / MASS_CHECK_DRAWS as f64;
            if frac < 1.0 - 2.0 * eta {
                return Err(Error::InvalidSpec(format!(
                    "law {j} puts {frac:.4} of its mass within epsilon = {epsilon}, need at least 1 - eta = {}",
                    1.0 - eta
                )));
            }
            central_mass.push(frac);
        }

        Ok(Self {
            p,
            laws,
            xi,
            shifts,
            epsilon,
            eta,
            samplers,
            central_mass,
        })
    }

    /// Collinear schedule: at level `m` component `k` sits at `gaps[m]·k·e₁`.
    pub fn with_gaps(
        p: usize,
        laws: Vec<ComponentLaw>,
        xi: Vec<f64>,
        gaps: &[f64],
        epsilon: f64,
        eta: f64,
    ) -> Result<Self> {
        let k = laws.len();
        let shifts = gaps
            .iter()
            .map(|&g| {
                (0..k)
                    .map(|j| {
                        let mut r = DVector::zeros(p);
                        r[0] = g * j as f64;
                        r
                    })
                    .collect()
            })
            .collect();
        Self::new(p, laws, xi, shifts, epsilon, eta)
    }

    /// Collinear schedule with gaps `s, 2s, …, levels·s`.
    pub fn with_base_gap(
        p: usize,
        laws: Vec<ComponentLaw>,
        xi: Vec<f64>,
        base_gap: f64,
        levels: usize,
        epsilon: f64,
        eta: f64,
    ) -> Result<Self> {
        let gaps: Vec<f64> = (1..=levels).map(|m| base_gap * m as f64).collect();
        Self::with_gaps(p, laws, xi, &gaps, epsilon, eta)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.laws.len()
    }

    pub fn laws(&self) -> &[ComponentLaw] {
        &self.laws
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn levels(&self) -> usize {
        self.shifts.len()
    }

    /// Monte Carlo estimate of `Q_k{‖x‖ < ε}` from construction.
    pub fn central_mass(&self) -> &[f64] {
        &self.central_mass
    }

    pub fn shifts(&self, level: usize) -> Result<&[DVector<f64>]> {
        self.shifts.get(level).map(Vec::as_slice).ok_or_else(|| {
            Error::Range(format!(
                "level {level} outside schedule of {} levels",
                self.shifts.len()
            ))
        })
    }

    /// Smallest distance between two shifts at `level`.
    pub fn min_gap(&self, level: usize) -> Result<f64> {
        Ok(min_pairwise_distance(self.shifts(level)?))
    }
}

fn min_pairwise_distance(points: &[DVector<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min((&points[i] - &points[j]).norm());
        }
    }
    best
}

/// Rows with their latent component labels (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub data: DMatrix<f64>,
    pub labels: Vec<usize>,
}

/// Draws `n` rows from `P_m`: label from `ξ`, point from `Q_label`, then shift.
pub fn sample_mixture(
    spec: &ShiftedMixtureSpec,
    level: usize,
    n: usize,
    seed: u64,
) -> Result<Sample> {
    let shifts = spec.shifts(level)?;
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let p = spec.p;
    let categorical =
        WeightedIndex::new(&spec.xi).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut buf = vec![0.0; p];
    for i in 0..n {
        let k = categorical.sample(&mut rng);
        spec.samplers[k].draw(&mut rng, &mut buf);
        for j in 0..p {
            data[(i, j)] = buf[j] + shifts[k][j];
        }
        labels.push(k);
    }
    Ok(Sample { data, labels })
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

fn mean_and_se(values: &[f64]) -> McEstimate {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    McEstimate {
        estimate: mean,
        std_error: (var / m).sqrt(),
    }
}

fn population_row_logliks(
    thetas: &[&MixtureParams],
    spec: &ShiftedMixtureSpec,
    level: usize,
    draws: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if draws < 100 {
        return Err(Error::Config(format!(
            "Monte Carlo size must be at least 100, got {draws}"
        )));
    }
    let sample = sample_mixture(spec, level, draws, seed)?;
    let rows = RowData::from_matrix(&sample.data)?;
    thetas
        .iter()
        .map(|theta| {
            rows.check_dim(theta.p())?;
            Ok(rows.row_logliks(&theta.evaluator()?))
        })
        .collect()
}

/// Monte Carlo estimate of `∫ log ψ(x; θ) dP_m(x)` from `draws` points.
pub fn mc_population_loglik(
    theta: &MixtureParams,
    spec: &ShiftedMixtureSpec,
    level: usize,
    draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    let values = population_row_logliks(&[theta], spec, level, draws, seed)?;
    Ok(mean_and_se(&values[0]))
}

/// Outcome of one runtime validity check on the population.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl ValidityCheck {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

fn no_atom_check(spec: &ShiftedMixtureSpec, level: usize) -> Result<ValidityCheck> {
    // P charges a set of at most K points with probability one only when every
    // component is a point mass
    let atoms = spec.laws.iter().filter(|l| !l.is_continuous()).count();
    let shifts = spec.shifts(level)?;
    let passed = atoms < spec.k();
    let detail = if passed {
        format!(
            "{} of {} components are continuous",
            spec.k() - atoms,
            spec.k()
        )
    } else {
        let mut distinct: Vec<&DVector<f64>> = Vec::new();
        for r in shifts {
            if !distinct.contains(&r) {
                distinct.push(r);
            }
        }
        format!(
            "population is concentrated on {} point(s), K = {}",
            distinct.len(),
            spec.k()
        )
    };
    Ok(ValidityCheck::new("no mass on K points", passed, detail))
}

fn moment_check() -> ValidityCheck {
    // every built-in law has a finite second moment, which makes E log g(‖X‖²)
    // finite for both generators
    ValidityCheck::new(
        "finite expected log generator",
        true,
        "all component laws have finite second moments",
    )
}

fn tail_check(model: Model, p: usize) -> Result<ValidityCheck> {
    let passed = model.generator()?.check_population_tail(p)?;
    let detail = match model {
        Model::Gaussian => "holds for the Gaussian generator".to_string(),
        Model::StudentT { nu } => format!("requires nu + p > 2 (nu = {nu}, p = {p})"),
    };
    Ok(ValidityCheck::new("generator tail", passed, detail))
}

/// A fitted reference standing in for the population maximizer.
#[derive(Debug, Clone)]
pub struct Reference {
    pub theta: MixtureParams,
    pub population_loglik: McEstimate,
    pub size: usize,
    pub seed: u64,
}

fn cell_sample_seed(seed: u64, n: usize) -> u64 {
    derive_seed(derive_seed(seed, STREAM_SAMPLE), n as u64)
}

fn cell_fit_seed(seed: u64, n: usize) -> u64 {
    derive_seed(derive_seed(seed, STREAM_FIT), n as u64)
}

fn fit_cell(
    spec: &ShiftedMixtureSpec,
    level: usize,
    n: usize,
    cfg: &FitConfig,
    seed: u64,
) -> Result<crate::FitResult> {
    let sample = sample_mixture(spec, level, n, cell_sample_seed(seed, n))?;
    let cfg = cfg.clone().with_seed(cell_fit_seed(seed, n));
    fit(&sample.data, &cfg)
}

/// Fits the reference on a sample of `size` points and estimates its
/// population log-likelihood from another `size` draws.
pub fn fit_reference(
    spec: &ShiftedMixtureSpec,
    level: usize,
    cfg: &FitConfig,
    size: usize,
    seed: u64,
) -> Result<Reference> {
    let result = fit_cell(spec, level, size, cfg, seed)?;
    let population_loglik = mc_population_loglik(
        &result.theta,
        spec,
        level,
        size,
        derive_seed(seed, STREAM_MC),
    )?;
    Ok(Reference {
        theta: result.theta,
        population_loglik,
        size,
        seed,
    })
}

/// One sample size of the consistency experiment. Failed fits leave the
/// numeric columns empty and record the error.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRow {
    pub n: usize,
    pub distance: Option<f64>,
    pub loglik_gap: Option<f64>,
    pub error: Option<String>,
}

impl ConsistencyRow {
    fn failed(n: usize, error: String) -> Self {
        Self {
            n,
            distance: None,
            loglik_gap: None,
            error: Some(error),
        }
    }
}

/// Fits a fresh sample of size `n` and compares it with the reference.
pub fn consistency_row(
    spec: &ShiftedMixtureSpec,
    level: usize,
    n: usize,
    cfg: &FitConfig,
    reference: &Reference,
    seed: u64,
) -> ConsistencyRow {
    let outcome = fit_cell(spec, level, n, cfg, seed).and_then(|r| {
        let distance = param_distance(&r.theta, &reference.theta)?;
        Ok((
            distance,
            (r.loglik - reference.population_loglik.estimate).abs(),
        ))
    });
    match outcome {
        Ok((distance, gap)) => ConsistencyRow {
            n,
            distance: Some(distance),
            loglik_gap: Some(gap),
            error: None,
        },
        Err(e) => ConsistencyRow::failed(n, e.to_string()),
    }
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub checks: Vec<ValidityCheck>,
    pub reference: Option<Reference>,
    pub rows: Vec<ConsistencyRow>,
}

impl ConsistencyReport {
    pub fn valid(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Paired comparison of the K-component reference against a (K−1)-component
/// fit on the same reference sample: passes when the population
/// log-likelihood gain exceeds three standard errors.
fn order_check(
    spec: &ShiftedMixtureSpec,
    level: usize,
    cfg: &FitConfig,
    reference: &Reference,
) -> Result<ValidityCheck> {
    const NAME: &str = "K components beat K-1";
    if cfg.k == 1 {
        return Ok(ValidityCheck::new(NAME, true, "K = 1"));
    }
    let smaller = FitConfig {
        k: cfg.k - 1,
        ..cfg.clone()
    };
    let reduced = match fit_cell(spec, level, reference.size, &smaller, reference.seed) {
        Ok(r) => r.theta,
        Err(e) => {
            return Ok(ValidityCheck::new(
                NAME,
                false,
                format!("K-1 fit failed: {e}"),
            ))
        }
    };
    let values = population_row_logliks(
        &[&reference.theta, &reduced],
        spec,
        level,
        reference.size,
        derive_seed(reference.seed, STREAM_MC),
    )?;
    let diff: Vec<f64> = values[0]
        .iter()
        .zip(&values[1])
        .map(|(a, b)| a - b)
        .collect();
    let est = mean_and_se(&diff);
    let passed = est.estimate > 3.0 * est.std_error;
    Ok(ValidityCheck::new(
        NAME,
        passed,
        format!(
            "population log-likelihood gain {:.6} (std. error {:.2e})",
            est.estimate, est.std_error
        ),
    ))
}

/// Fits a reference on `reference_size` points, then a fresh sample per entry
/// of `sizes`, recording the parameter distance and log-likelihood gap to the
/// reference. Validity failures are reported instead of distances.
pub fn run_consistency_experiment(
    spec: &ShiftedMixtureSpec,
    level: usize,
    sizes: &[usize],
    cfg: &FitConfig,
    reference_size: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    cfg.validate()?;
    spec.shifts(level)?;
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "sample sizes must be non-empty and strictly ascending".into(),
        ));
    }
    let largest = *sizes.last().expect("sizes is non-empty");
    if reference_size < 10 * largest {
        return Err(Error::Config(format!(
            "reference size {reference_size} is below 10 x the largest sample size {largest}"
        )));
    }
    if cfg.k != spec.k() {
        return Err(Error::Config(format!(
            "fit K = {} but the population has {} components",
            cfg.k,
            spec.k()
        )));
    }

    let mut checks = vec![
        no_atom_check(spec, level)?,
        moment_check(),
        tail_check(cfg.model, spec.p)?,
    ];
    let flagged = |checks: &[ValidityCheck]| -> Vec<ConsistencyRow> {
        let failed: Vec<&str> = checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        let msg = format!("validity check failed: {}", failed.join(", "));
        sizes
            .iter()
            .map(|&n| ConsistencyRow::failed(n, msg.clone()))
            .collect()
    };
    if checks.iter().any(|c| !c.passed) {
        let rows = flagged(&checks);
        return Ok(ConsistencyReport {
            checks,
            reference: None,
            rows,
        });
    }

    let reference = match fit_reference(spec, level, cfg, reference_size, seed) {
        Ok(r) => r,
        Err(e) => {
            let msg = format!("reference fit failed: {e}");
            let rows = sizes
                .iter()
                .map(|&n| ConsistencyRow::failed(n, msg.clone()))
                .collect();
            return Ok(ConsistencyReport {
                checks,
                reference: None,
                rows,
            });
        }
    };
    checks.push(order_check(spec, level, cfg, &reference)?);
    if checks.iter().any(|c| !c.passed) {
        let rows = flagged(&checks);
        return Ok(ConsistencyReport {
            checks,
            reference: Some(reference),
            rows,
        });
    }
    let rows = sizes
        .iter()
        .map(|&n| consistency_row(spec, level, n, cfg, &reference, seed))
        .collect();
    Ok(ConsistencyReport {
        checks,
        reference: Some(reference),
        rows,
    })
}

/// Per-component containment of the central balls `B_ε(ρ_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Containment {
    /// Fraction of uniform draws from `B_ε(ρ_k)` classified to `matching[k]`.
    pub fractions: Vec<f64>,
    /// `matching[k]` is the fitted component paired with population component `k`.
    pub matching: Vec<usize>,
    /// Set when the nearest-center rule alone would pair two shifts with the
    /// same fitted center.
    pub degenerate: bool,
}

/// Pairs shifts with fitted centers greedily by increasing distance (ties to
/// the lowest indices), which is injective by construction.
pub fn match_centers(
    shifts: &[DVector<f64>],
    centers: &[DVector<f64>],
) -> Result<(Vec<usize>, bool)> {
    let k = shifts.len();
    if centers.len() != k {
        return Err(Error::Shape(format!(
            "{} centers for {k} shifts",
            centers.len()
        )));
    }
    let dist = |a: usize, b: usize| (&shifts[a] - &centers[b]).norm();

    let nearest: Vec<usize> = (0..k)
        .map(|a| {
            (0..k).fold(
                0,
                |best, b| if dist(a, b) < dist(a, best) { b } else { best },
            )
        })
        .collect();
    let mut seen = vec![false; k];
    let mut degenerate = false;
    for &b in &nearest {
        degenerate |= std::mem::replace(&mut seen[b], true);
    }

    let mut pairs: Vec<(f64, usize, usize)> = (0..k)
        .flat_map(|a| (0..k).map(move |b| (a, b)))
        .map(|(a, b)| (dist(a, b), a, b))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut matching = vec![usize::MAX; k];
    let mut used = vec![false; k];
    for (_, a, b) in pairs {
        if matching[a] == usize::MAX && !used[b] {
            matching[a] = b;
            used[b] = true;
        }
    }
    Ok((matching, degenerate))
}

fn uniform_ball_point(rng: &mut ChaCha8Rng, center: &DVector<f64>, radius: f64) -> Vec<f64> {
    let p = center.len();
    let z = loop {
        let z = DVector::<f64>::from_fn(p, |_, _| rng.sample(StandardNormal));
        if z.norm() > 0.0 {
            break z;
        }
    };
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / p as f64) / z.norm();
    (0..p).map(|j| center[j] + r * z[j]).collect()
}

/// For each population component, the fraction of `n_test` uniform draws from
/// `B_ε(ρ_k)` that the MAP rule of `theta` assigns to the matched component.
pub fn central_set_containment(
    theta: &MixtureParams,
    spec: &ShiftedMixtureSpec,
    level: usize,
    n_test: usize,
    seed: u64,
) -> Result<Containment> {
    let shifts = spec.shifts(level)?;
    if theta.k() != spec.k() || theta.p() != spec.p {
        return Err(Error::Shape(format!(
            "theta has K = {}, p = {}; population has K = {}, p = {}",
            theta.k(),
            theta.p(),
            spec.k(),
            spec.p
        )));
    }
    if n_test == 0 {
        return Err(Error::Config("n_test must be at least 1".into()));
    }
    let (matching, degenerate) = match_centers(shifts, theta.centers())?;
    let mut fractions = Vec::with_capacity(spec.k());
    for (k, rho) in shifts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        let mut hits = 0usize;
        for _ in 0..n_test {
            let x = uniform_ball_point(&mut rng, rho, spec.epsilon);
            if map_classify(&x, theta)? == matching[k] {
                hits += 1;
            }
        }
        fractions.push(hits as f64 / n_test as f64);
    }
    Ok(Containment {
        fractions,
        matching,
        degenerate,
    })
}

pub const DEFAULT_N_TEST: usize = 2000;
pub const DEFAULT_REFERENCE_SIZE: usize = 200_000;

/// One separation level: containment and the parameter errors of the fitted
/// components against their population counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationRow {
    pub level: usize,
    pub min_gap: f64,
    pub containment: Option<Containment>,
    /// `|π̂_k − ξ_k|`.
    pub weight_errors: Option<Vec<f64>>,
    /// `‖μ̂_k − ρ_k − mean(Q_k)‖`; Gaussian fits only.
    pub mean_errors: Option<Vec<f64>>,
    /// `‖Σ̂_k − cov(Q_k)‖_F`; Gaussian fits only.
    pub cov_errors: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SeparationReport {
    pub checks: Vec<ValidityCheck>,
    pub rows: Vec<SeparationRow>,
}

fn scatter_check(spec: &ShiftedMixtureSpec, model: Model) -> ValidityCheck {
    // continuous laws with a generator decaying faster than t^{-p/2}; the
    // Student-t generator decays like t^{-(nu+p)/2}, so any nu > 0 qualifies
    let atoms: Vec<usize> = (0..spec.k())
        .filter(|&k| !spec.laws[k].is_continuous())
        .collect();
    let passed = atoms.is_empty();
    let detail = match (passed, model) {
        (false, _) => format!("components {atoms:?} are point masses"),
        (true, Model::Gaussian) => "continuous laws, Gaussian generator".to_string(),
        (true, Model::StudentT { nu }) => format!(
            "continuous laws, Student-t tail exponent (nu + p)/2 = {} > p/2",
            (nu + spec.p as f64) / 2.0
        ),
    };
    ValidityCheck::new("degenerating scatter is penalized", passed, detail)
}

fn separation_row(
    spec: &ShiftedMixtureSpec,
    level: usize,
    cfg: &FitConfig,
    n: usize,
    seed: u64,
) -> Result<SeparationRow> {
    let min_gap = spec.min_gap(level)?;
    // the same draws from each Q_k at every level; only the shifts change
    let sample = sample_mixture(spec, level, n, derive_seed(seed, STREAM_SAMPLE))?;
    let fitted = match fit(
        &sample.data,
        &cfg.clone().with_seed(derive_seed(seed, STREAM_FIT)),
    ) {
        Ok(r) => r.theta,
        Err(e) => {
            return Ok(SeparationRow {
                level,
                min_gap,
                containment: None,
                weight_errors: None,
                mean_errors: None,
                cov_errors: None,
                error: Some(e.to_string()),
            })
        }
    };
    let containment = central_set_containment(
        &fitted,
        spec,
        level,
        DEFAULT_N_TEST,
        derive_seed(seed, STREAM_CONTAIN),
    )?;
    let shifts = spec.shifts(level)?;
    let m = &containment.matching;
    let weight_errors = (0..spec.k())
        .map(|k| (fitted.weights()[m[k]] - spec.xi[k]).abs())
        .collect();
    let (mean_errors, cov_errors) = if matches!(cfg.model, Model::Gaussian) {
        let p = spec.p;
        let means = (0..spec.k())
            .map(|k| (&fitted.centers()[m[k]] - &shifts[k] - spec.laws[k].mean(p)).norm())
            .collect();
        let covs = (0..spec.k())
            .map(|k| (fitted.scatters()[m[k]].matrix() - spec.laws[k].covariance(p)).norm())
            .collect();
        (Some(means), Some(covs))
    } else {
        (None, None)
    };
    Ok(SeparationRow {
        level,
        min_gap,
        containment: Some(containment),
        weight_errors: Some(weight_errors),
        mean_errors,
        cov_errors,
        error: None,
    })
}

/// Samples, fits and compares at each requested level. Moment columns are only
/// filled for Gaussian fits, where the fitted moments target the component
/// mean and covariance.
pub fn run_separation_experiment(
    spec: &ShiftedMixtureSpec,
    levels: &[usize],
    cfg: &FitConfig,
    n: usize,
    seed: u64,
) -> Result<SeparationReport> {
    cfg.validate()?;
    if cfg.k != spec.k() {
        return Err(Error::Config(format!(
            "fit K = {} but the population has {} components",
            cfg.k,
            spec.k()
        )));
    }
    for &level in levels {
        spec.shifts(level)?;
    }
    let checks = vec![
        scatter_check(spec, cfg.model),
        moment_check(),
        tail_check(cfg.model, spec.p)?,
    ];
    let rows = levels
        .iter()
        .map(|&level| separation_row(spec, level, cfg, n, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeparationReport { checks, rows })
}
