//! Density generators `g(t)` of elliptically symmetric families.
//!
//! A generator maps a squared Mahalanobis distance `t >= 0` to the (normalized)
//! radial density value. Everything here works in log space and includes the
//! normalizing constant, so `det(S)^{-1/2} g(t)` integrates to one over `R^p`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// User supplied `log g(t, p)`.
pub type LogGeneratorFn = Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum DensityGenerator {
    /// `g(t) = (2 pi)^{-p/2} exp(-t/2)`.
    Gaussian,
    /// `g(t) = c_{p,nu} (1 + t/nu)^{-(nu+p)/2}`.
    StudentT { nu: f64 },
    /// Arbitrary non-increasing generator. Carries no tail metadata, so the
    /// existence checks refuse it.
    Custom { log_g: Option<LogGeneratorFn> },
}

impl DensityGenerator {
    pub fn student_t(nu: f64) -> Result<Self> {
        validate_nu(nu)?;
        Ok(Self::StudentT { nu })
    }

    pub fn custom<F>(log_g: F) -> Self
    where
        F: Fn(f64, usize) -> f64 + Send + Sync + 'static,
    {
        Self::Custom {
            log_g: Some(Arc::new(log_g)),
        }
    }

    pub fn nu(&self) -> Option<f64> {
        match self {
            Self::StudentT { nu } => Some(*nu),
            _ => None,
        }
    }

    /// Binds the generator to a dimension, precomputing the normalizing constant.
    pub fn evaluator(&self, p: usize) -> Result<LogGenerator> {
        if p == 0 {
            return Err(Error::Domain("dimension p must be at least 1".into()));
        }
        let pf = p as f64;
        let kind = match self {
            Self::Gaussian => EvalKind::Gaussian {
                log_c: -0.5 * pf * (2.0 * PI).ln(),
            },
            Self::StudentT { nu } => {
                validate_nu(*nu)?;
                let nu = *nu;
                let log_c =
                    ln_gamma(0.5 * (nu + pf)) - ln_gamma(0.5 * nu) - 0.5 * pf * (nu * PI).ln();
                EvalKind::StudentT {
                    nu,
                    log_c,
                    exponent: 0.5 * (nu + pf),
                }
            }
            Self::Custom { log_g: Some(f) } => EvalKind::Custom(Arc::clone(f), p),
            Self::Custom { log_g: None } => {
                return Err(Error::Config(
                    "custom generator has no log_g function".into(),
                ))
            }
        };
        Ok(LogGenerator { kind })
    }

    pub fn eval_log_g(&self, t: f64, p: usize) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!(
                "generator argument must be >= 0, got {t}"
            )));
        }
        Ok(self.evaluator(p)?.eval(t))
    }

    /// Smallest sample size satisfying the generator's finite-sample existence
    /// threshold: `n > K` (Gaussian), `n > K (1 + p/nu)` (Student-t).
    pub fn min_sample_size(&self, p: usize, k: usize) -> Result<usize> {
        if p == 0 || k == 0 {
            return Err(Error::Domain("p and K must be at least 1".into()));
        }
        match self {
            Self::Gaussian => Ok(k + 1),
            Self::StudentT { nu } => {
                validate_nu(*nu)?;
                Ok(floor_of_threshold(*nu, p, k) + 1)
            }
            Self::Custom { .. } => Err(Error::UnsupportedGenerator(
                "no closed-form sample size threshold for a custom generator".into(),
            )),
        }
    }

    /// Whether `g(beta / y) = o(y)` as `y -> 0`, needed for the population
    /// likelihood to stay bounded as scatters degenerate.
    pub fn check_population_tail(&self, p: usize) -> Result<bool> {
        match self {
            Self::Gaussian => Ok(true),
            Self::StudentT { nu } => {
                validate_nu(*nu)?;
                Ok(nu + p as f64 > 2.0)
            }
            Self::Custom { .. } => Err(Error::UnsupportedGenerator(
                "population tail condition is unknown for a custom generator".into(),
            )),
        }
    }
}

// floor(K (nu + p) / nu), exact in integer arithmetic when nu is integral.
fn floor_of_threshold(nu: f64, p: usize, k: usize) -> usize {
    if nu.fract() == 0.0 && nu < 1e15 {
        let nu_i = nu as u128;
        return ((k as u128 * (nu_i + p as u128)) / nu_i) as usize;
    }
    (k as f64 * (1.0 + p as f64 / nu)).floor() as usize
}

fn validate_nu(nu: f64) -> Result<()> {
    if nu > 0.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "Student-t degrees of freedom must be > 0, got {nu}"
        )))
    }
}

impl fmt::Debug for DensityGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian => write!(f, "Gaussian"),
            Self::StudentT { nu } => write!(f, "StudentT {{ nu: {nu} }}"),
            Self::Custom { log_g } => write!(f, "Custom {{ defined: {} }}", log_g.is_some()),
        }
    }
}

impl PartialEq for DensityGenerator {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Gaussian, Self::Gaussian) => true,
            (Self::StudentT { nu: a }, Self::StudentT { nu: b }) => a == b,
            (Self::Custom { log_g: Some(a) }, Self::Custom { log_g: Some(b) }) => Arc::ptr_eq(a, b),
            (Self::Custom { log_g: None }, Self::Custom { log_g: None }) => true,
            _ => false,
        }
    }
}

/// A generator bound to a fixed dimension.
#[derive(Clone)]
pub struct LogGenerator {
    kind: EvalKind,
}

#[derive(Clone)]
enum EvalKind {
    Gaussian { log_c: f64 },
    StudentT { nu: f64, log_c: f64, exponent: f64 },
    Custom(LogGeneratorFn, usize),
}

impl LogGenerator {
    /// `log g(t)`; `t` is assumed non-negative.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match &self.kind {
            EvalKind::Gaussian { log_c } => log_c - 0.5 * t,
            EvalKind::StudentT {
                nu,
                log_c,
                exponent,
            } => log_c - exponent * (t / nu).ln_1p(),
            EvalKind::Custom(f, p) => f(t, *p),
        }
    }

    /// `log g(0)`, the log of the density peak for a unit scatter.
    pub fn log_peak(&self) -> f64 {
        self.eval(0.0)
    }
}
