//! Single elliptically symmetric densities in eigen-parameterized form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::generators::DensityGenerator;

/// Smallest admissible eigenvalue for a scatter whose largest eigenvalue is `lambda_max`.
pub fn eigenvalue_floor(lambda_max: f64) -> f64 {
    1e-12 * lambda_max.max(1.0)
}

/// Symmetric positive-definite scatter matrix with its eigendecomposition.
///
/// Eigenvalues are stored ascending, with matching eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Scatter {
    matrix: DMatrix<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
    inv_eigvals: DVector<f64>,
    log_det: f64,
}

impl Scatter {
    /// Decomposes a symmetric matrix. Eigenvalues in `[0, floor)` are clamped up
    /// to [`eigenvalue_floor`]; clearly negative ones are rejected.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let p = matrix.nrows();
        if p == 0 || matrix.ncols() != p {
            return Err(Error::Shape(format!(
                "scatter must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("scatter has non-finite entries".into()));
        }
        let scale = matrix.amax();
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Shape(format!(
                "scatter is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let lambda_max = eig.eigenvalues.max();
        let lambda_min = eig.eigenvalues.min();
        if lambda_min < -1e-8 * matrix.norm() {
            return Err(Error::NotPsd(lambda_min));
        }
        if lambda_max <= 0.0 {
            return Err(Error::Degenerate("scatter is the zero matrix".into()));
        }
        let floor = eigenvalue_floor(lambda_max);
        let vals: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(floor)).collect();
        Self::assemble(sym, vals, eig.eigenvectors)
    }

    /// Builds a scatter from eigenvalues and orthonormal eigenvector columns
    /// (`V diag(values) V^T`). Eigenvalues are kept bit-exact.
    pub fn from_eigen(eigvals: &[f64], eigvecs: &DMatrix<f64>) -> Result<Self> {
        let p = eigvals.len();
        if p == 0 || eigvecs.nrows() != p || eigvecs.ncols() != p {
            return Err(Error::Shape(format!(
                "{} eigenvalues but {}x{} eigenvector matrix",
                p,
                eigvecs.nrows(),
                eigvecs.ncols()
            )));
        }
        if eigvals.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Degenerate(format!(
                "eigenvalues must be positive, got {eigvals:?}"
            )));
        }
        let mut m = DMatrix::zeros(p, p);
        for (j, &lam) in eigvals.iter().enumerate() {
            let v = eigvecs.column(j);
            m += lam * &v * v.transpose();
        }
        let m = (&m + m.transpose()) * 0.5;
        Self::assemble(m, eigvals.to_vec(), eigvecs.clone())
    }

    pub fn identity(p: usize) -> Self {
        Self::from_eigen(&vec![1.0; p], &DMatrix::identity(p, p))
            .expect("identity is a valid scatter")
    }

    pub fn scaled_identity(p: usize, variance: f64) -> Result<Self> {
        Self::from_eigen(&vec![variance; p], &DMatrix::identity(p, p))
    }

    fn assemble(matrix: DMatrix<f64>, vals: Vec<f64>, vecs: DMatrix<f64>) -> Result<Self> {
        let p = vals.len();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let eigvals = DVector::from_iterator(p, order.iter().map(|&j| vals[j]));
        let eigvecs = DMatrix::from_fn(p, p, |r, c| vecs[(r, order[c])]);
        if eigvals[0] < eigenvalue_floor(eigvals[p - 1]) {
            return Err(Error::Degenerate(format!(
                "smallest eigenvalue {:e} is below the floor for largest {:e}",
                eigvals[0],
                eigvals[p - 1]
            )));
        }
        let inv_eigvals = eigvals.map(|v| 1.0 / v);
        let log_det = eigvals.iter().map(|v| v.ln()).sum();
        Ok(Self {
            matrix,
            eigvals,
            eigvecs,
            inv_eigvals,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Eigenvalues, ascending.
    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn min_eigval(&self) -> f64 {
        self.eigvals[0]
    }

    pub fn max_eigval(&self) -> f64 {
        self.eigvals[self.dim() - 1]
    }

    /// Quadratic form `d^T S^{-1} d` for a difference vector; no shape checks.
    #[inline]
    pub(crate) fn quad_form(&self, diff: &[f64]) -> f64 {
        let p = diff.len();
        let mut acc = 0.0;
        for j in 0..p {
            let col = self.eigvecs.column(j);
            let mut proj = 0.0;
            for (r, d) in diff.iter().enumerate() {
                proj += col[r] * d;
            }
            acc += proj * proj * self.inv_eigvals[j];
        }
        acc
    }
}

pub fn make_scatter(matrix: DMatrix<f64>) -> Result<Scatter> {
    Scatter::new(matrix)
}

fn check_dims(x: &[f64], mu: &[f64], s: &Scatter) -> Result<()> {
    if x.len() != s.dim() || mu.len() != s.dim() {
        return Err(Error::Shape(format!(
            "x has {} entries, mu {}, scatter dimension {}",
            x.len(),
            mu.len(),
            s.dim()
        )));
    }
    Ok(())
}

/// `(x - mu)^T S^{-1} (x - mu)` through the eigendecomposition.
pub fn mahalanobis_sq(x: &[f64], mu: &[f64], s: &Scatter) -> Result<f64> {
    check_dims(x, mu, s)?;
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    Ok(s.quad_form(&diff))
}

pub fn esd_log_density(x: &[f64], mu: &[f64], s: &Scatter, gen: &DensityGenerator) -> Result<f64> {
    let d = mahalanobis_sq(x, mu, s)?;
    let log_g = gen.evaluator(s.dim())?;
    Ok(-0.5 * s.log_det() + log_g.eval(d))
}

/// Log of `g(0) * lambda_min^{-p/2}`, the supremum of the density over `x`.
pub fn log_density_upper_bound(s: &Scatter, gen: &DensityGenerator, p: usize) -> Result<f64> {
    if p != s.dim() {
        return Err(Error::Shape(format!(
            "p = {p} but scatter dimension {}",
            s.dim()
        )));
    }
    Ok(gen.evaluator(p)?.log_peak() - 0.5 * p as f64 * s.min_eigval().ln())
}

pub fn density_upper_bound(s: &Scatter, gen: &DensityGenerator, p: usize) -> Result<f64> {
    log_density_upper_bound(s, gen, p).map(f64::exp)
}
