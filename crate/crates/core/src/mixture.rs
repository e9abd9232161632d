//! Mixture densities, posteriors, MAP classification and the label-switching
//! invariant parameter metric.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::esd::Scatter;
use crate::generators::{DensityGenerator, LogGenerator};

/// Mixture parameters: weights, centers and scatters sharing one generator.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    weights: Vec<f64>,
    centers: Vec<DVector<f64>>,
    scatters: Vec<Scatter>,
    generator: DensityGenerator,
}

impl MixtureParams {
    pub fn new(
        weights: Vec<f64>,
        centers: Vec<DVector<f64>>,
        scatters: Vec<Scatter>,
        generator: DensityGenerator,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Shape(
                "a mixture needs at least one component".into(),
            ));
        }
        if centers.len() != k || scatters.len() != k {
            return Err(Error::Shape(format!(
                "{k} weights, {} centers, {} scatters",
                centers.len(),
                scatters.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain(format!(
                "weights must be non-negative, got {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() >= 1e-10 {
            return Err(Error::Domain(format!("weights sum to {total}, not 1")));
        }
        let p = scatters[0].dim();
        if centers.iter().any(|c| c.len() != p) || scatters.iter().any(|s| s.dim() != p) {
            return Err(Error::Shape(format!(
                "components disagree on dimension {p}"
            )));
        }
        if centers.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Domain("centers must be finite".into()));
        }
        Ok(Self {
            weights,
            centers,
            scatters,
            generator,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn p(&self) -> usize {
        self.scatters[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }

    pub fn scatters(&self) -> &[Scatter] {
        &self.scatters
    }

    pub fn generator(&self) -> &DensityGenerator {
        &self.generator
    }

    /// Smallest eigenvalue over all component scatters.
    pub fn lambda_min(&self) -> f64 {
        self.scatters
            .iter()
            .map(Scatter::min_eigval)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest eigenvalue over all component scatters.
    pub fn lambda_max(&self) -> f64 {
        self.scatters
            .iter()
            .map(Scatter::max_eigval)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy with components reordered: component `j` of the result is `self[order[j]]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.k()];
        if order.len() != self.k()
            || order
                .iter()
                .any(|&i| i >= self.k() || std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::Shape(format!(
                "{order:?} is not a permutation of 0..{}",
                self.k()
            )));
        }
        Self::new(
            order.iter().map(|&i| self.weights[i]).collect(),
            order.iter().map(|&i| self.centers[i].clone()).collect(),
            order.iter().map(|&i| self.scatters[i].clone()).collect(),
            self.generator.clone(),
        )
    }

    pub(crate) fn evaluator(&self) -> Result<MixtureEval<'_>> {
        Ok(MixtureEval {
            params: self,
            log_weights: self.weights.iter().map(|w| w.ln()).collect(),
            log_g: self.generator.evaluator(self.p())?,
        })
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.p() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, mixture dimension {}",
                x.len(),
                self.p()
            )));
        }
        Ok(())
    }
}

/// Mixture bound to a generator evaluator; hot-loop helper.
pub(crate) struct MixtureEval<'a> {
    params: &'a MixtureParams,
    log_weights: Vec<f64>,
    log_g: LogGenerator,
}

impl MixtureEval<'_> {
    /// `log f_k(x)` without the weight.
    #[inline]
    pub(crate) fn component_log_density(&self, k: usize, x: &[f64], diff: &mut [f64]) -> f64 {
        let mu = &self.params.centers[k];
        for (d, (a, b)) in diff.iter_mut().zip(x.iter().zip(mu.iter())) {
            *d = a - b;
        }
        let s = &self.params.scatters[k];
        -0.5 * s.log_det() + self.log_g.eval(s.quad_form(diff))
    }

    /// Fills `out[k] = log pi_k + log f_k(x)`.
    #[inline]
    pub(crate) fn log_joint(&self, x: &[f64], out: &mut [f64], diff: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = if self.log_weights[k] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                self.log_weights[k] + self.component_log_density(k, x, diff)
            };
        }
    }

    pub(crate) fn k(&self) -> usize {
        self.params.k()
    }

    pub(crate) fn p(&self) -> usize {
        self.params.p()
    }
}

/// Numerically stable `log sum exp`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the maximum, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

pub fn log_mixture_density(x: &[f64], theta: &MixtureParams) -> Result<f64> {
    theta.check_point(x)?;
    let ev = theta.evaluator()?;
    let mut joint = vec![0.0; theta.k()];
    let mut diff = vec![0.0; theta.p()];
    ev.log_joint(x, &mut joint, &mut diff);
    Ok(log_sum_exp(&joint))
}

/// Mean log-likelihood of the rows of an `n x p` data matrix.
pub fn sample_loglik(data: &DMatrix<f64>, theta: &MixtureParams) -> Result<f64> {
    let rows = RowData::from_matrix(data)?;
    rows.check_dim(theta.p())?;
    let ev = theta.evaluator()?;
    Ok(rows.mean_loglik(&ev))
}

/// Posterior component probabilities at `x`.
pub fn posterior(x: &[f64], theta: &MixtureParams) -> Result<Vec<f64>> {
    theta.check_point(x)?;
    let ev = theta.evaluator()?;
    let mut joint = vec![0.0; theta.k()];
    let mut diff = vec![0.0; theta.p()];
    ev.log_joint(x, &mut joint, &mut diff);
    let lse = log_sum_exp(&joint);
    Ok(joint.iter().map(|v| (v - lse).exp()).collect())
}

/// MAP component (0-based), lowest index on ties.
pub fn map_classify(x: &[f64], theta: &MixtureParams) -> Result<usize> {
    theta.check_point(x)?;
    let ev = theta.evaluator()?;
    let mut joint = vec![0.0; theta.k()];
    let mut diff = vec![0.0; theta.p()];
    ev.log_joint(x, &mut joint, &mut diff);
    Ok(argmax(&joint))
}

/// MAP labels (0-based) for every row of `data`.
pub fn classify_rows(data: &DMatrix<f64>, theta: &MixtureParams) -> Result<Vec<usize>> {
    let rows = RowData::from_matrix(data)?;
    rows.check_dim(theta.p())?;
    let ev = theta.evaluator()?;
    Ok(rows.posterior_pass(&ev).labels)
}

/// `n x K` posterior probabilities; each row sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix(DMatrix<f64>);

impl PosteriorMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        for (i, row) in matrix.row_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (row.sum() - 1.0).abs() > 1e-10 {
                return Err(Error::Domain(format!(
                    "posterior row {i} is not a probability vector"
                )));
            }
        }
        Ok(Self(matrix))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.0.column_iter().map(|c| c.sum()).collect()
    }
}

/// Output of a single E-step pass.
pub(crate) struct PosteriorPass {
    pub tau: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub loglik: f64,
}

/// Row-major copy of a data matrix so every observation is a contiguous slice.
#[derive(Debug, Clone)]
pub(crate) struct RowData {
    buf: Vec<f64>,
    n: usize,
    p: usize,
}

const CHUNK: usize = 1024;

impl RowData {
    pub(crate) fn from_matrix(data: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = data.shape();
        if n == 0 || p == 0 {
            return Err(Error::Domain(
                "data must have at least one row and one column".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("data contains non-finite values".into()));
        }
        let mut buf = Vec::with_capacity(n * p);
        for i in 0..n {
            buf.extend(data.row(i).iter());
        }
        Ok(Self { buf, n, p })
    }

    pub(crate) fn n(&self) -> usize {
        self.n
    }

    pub(crate) fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub(crate) fn row(&self, i: usize) -> &[f64] {
        &self.buf[i * self.p..(i + 1) * self.p]
    }

    pub(crate) fn check_dim(&self, p: usize) -> Result<()> {
        if self.p != p {
            return Err(Error::Shape(format!(
                "data has {} columns, mixture dimension {p}",
                self.p
            )));
        }
        Ok(())
    }

    /// Per-row mixture log densities, computed in parallel chunks.
    pub(crate) fn row_logliks(&self, ev: &MixtureEval<'_>) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let mut joint = vec![0.0; ev.k()];
                let mut diff = vec![0.0; ev.p()];
                for (j, o) in chunk.iter_mut().enumerate() {
                    ev.log_joint(self.row(c * CHUNK + j), &mut joint, &mut diff);
                    *o = log_sum_exp(&joint);
                }
            });
        out
    }

    pub(crate) fn mean_loglik(&self, ev: &MixtureEval<'_>) -> f64 {
        // sequential sum keeps the result independent of the thread count
        self.row_logliks(ev).iter().sum::<f64>() / self.n as f64
    }

    pub(crate) fn posterior_pass(&self, ev: &MixtureEval<'_>) -> PosteriorPass {
        let k = ev.k();
        let mut rows = vec![0.0; self.n * k];
        let mut labels = vec![0usize; self.n];
        let mut lls = vec![0.0; self.n];
        rows.par_chunks_mut(CHUNK * k)
            .zip(labels.par_chunks_mut(CHUNK))
            .zip(lls.par_chunks_mut(CHUNK))
            .enumerate()
            .for_each(|(c, ((tau, lab), ll))| {
                let mut diff = vec![0.0; ev.p()];
                for j in 0..lab.len() {
                    let joint = &mut tau[j * k..(j + 1) * k];
                    ev.log_joint(self.row(c * CHUNK + j), joint, &mut diff);
                    lab[j] = argmax(joint);
                    let lse = log_sum_exp(joint);
                    ll[j] = lse;
                    for v in joint.iter_mut() {
                        *v = (*v - lse).exp();
                    }
                }
            });
        PosteriorPass {
            tau: DMatrix::from_row_slice(self.n, k, &rows),
            labels,
            loglik: lls.iter().sum::<f64>() / self.n as f64,
        }
    }
}

/// Block cost between component `i` of `a` and component `j` of `b`.
fn component_cost(a: &MixtureParams, i: usize, b: &MixtureParams, j: usize) -> f64 {
    (a.weights[i] - b.weights[j]).abs()
        + (&a.centers[i] - &b.centers[j]).norm()
        + (a.scatters[i].matrix() - b.scatters[j].matrix()).norm()
}

/// Label-switching invariant distance and the minimizing matching
/// (`matching[k]` is the component of `b` paired with component `k` of `a`).
pub fn match_components(a: &MixtureParams, b: &MixtureParams) -> Result<(Vec<usize>, f64)> {
    if a.k() != b.k() || a.p() != b.p() {
        return Err(Error::Shape(format!(
            "cannot compare K={}, p={} with K={}, p={}",
            a.k(),
            a.p(),
            b.k(),
            b.p()
        )));
    }
    let k = a.k();
    let cost = DMatrix::from_fn(k, k, |i, j| component_cost(a, i, b, j));
    Ok(if k <= 8 {
        min_cost_by_enumeration(&cost)
    } else {
        min_cost_assignment(&cost)
    })
}

/// Minimum over component permutations of the summed weight, center and
/// scatter (Frobenius) differences.
pub fn param_distance(a: &MixtureParams, b: &MixtureParams) -> Result<f64> {
    match_components(a, b).map(|(_, d)| d)
}

pub(crate) fn min_cost_by_enumeration(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let k = cost.nrows();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (perm.clone(), f64::INFINITY);
    // Heap's algorithm, iterative
    let mut c = vec![0usize; k];
    let eval = |perm: &[usize]| {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| cost[(i, j)])
            .sum::<f64>()
    };
    best.1 = eval(&perm);
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let v = eval(&perm);
            if v < best.1 {
                best = (perm.clone(), v);
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Hungarian algorithm (shortest augmenting paths with potentials), O(K^3).
pub(crate) fn min_cost_assignment(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    // owner[j] = row matched to column j (1-based, 0 = free)
    let mut owner = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum();
    (assignment, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
        (-(x - mu) * (x - mu) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
    }

    fn univariate(weights: &[f64], means: &[f64], vars: &[f64]) -> MixtureParams {
        MixtureParams::new(
            weights.to_vec(),
            means.iter().map(|&m| dvector![m]).collect(),
            vars.iter()
                .map(|&v| Scatter::scaled_identity(1, v).unwrap())
                .collect(),
            DensityGenerator::Gaussian,
        )
        .unwrap()
    }

    #[test]
    fn rejects_malformed_params() {
        let s = Scatter::identity(2);
        let c = dvector![0.0, 0.0];
        let g = DensityGenerator::Gaussian;
        assert!(MixtureParams::new(
            vec![0.5, 0.6],
            vec![c.clone(), c.clone()],
            vec![s.clone(), s.clone()],
            g.clone()
        )
        .is_err());
        assert!(MixtureParams::new(
            vec![1.5, -0.5],
            vec![c.clone(), c.clone()],
            vec![s.clone(), s.clone()],
            g.clone()
        )
        .is_err());
        assert!(matches!(
            MixtureParams::new(vec![1.0], vec![dvector![0.0]], vec![s.clone()], g.clone()),
            Err(Error::Shape(_))
        ));
        assert!(
            MixtureParams::new(vec![1.0, 0.0], vec![c.clone(), c], vec![s.clone(), s], g).is_ok()
        );
    }

    #[test]
    fn mixture_density_examples() {
        let single = univariate(&[1.0], &[0.5], &[2.0]);
        let direct = crate::esd::esd_log_density(
            &[1.3],
            &[0.5],
            &single.scatters()[0],
            &DensityGenerator::Gaussian,
        )
        .unwrap();
        assert_abs_diff_eq!(
            log_mixture_density(&[1.3], &single).unwrap(),
            direct,
            epsilon = 1e-14
        );

        let twin = univariate(&[0.5, 0.5], &[0.5, 0.5], &[2.0, 2.0]);
        assert_abs_diff_eq!(
            log_mixture_density(&[1.3], &twin).unwrap(),
            direct,
            epsilon = 1e-14
        );

        let theta = univariate(&[0.3, 0.7], &[0.0, 4.0], &[1.0, 1.0]);
        let oracle = (0.3 * normal_pdf(0.0, 0.0, 1.0) + 0.7 * normal_pdf(0.0, 4.0, 1.0)).ln();
        let got = log_mixture_density(&[0.0], &theta).unwrap();
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-12);
        assert!((got - (-2.122)).abs() < 1e-3);
        assert!(matches!(
            log_mixture_density(&[0.0, 1.0], &theta),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_weight_components_contribute_nothing() {
        let a = univariate(&[1.0, 0.0], &[0.0, 0.1], &[1.0, 0.01]);
        let b = univariate(&[1.0], &[0.0], &[1.0]);
        for x in [-2.0, 0.0, 0.1, 3.0] {
            assert_eq!(
                log_mixture_density(&[x], &a).unwrap(),
                log_mixture_density(&[x], &b).unwrap()
            );
            assert_eq!(map_classify(&[x], &a).unwrap(), 0);
            assert_eq!(posterior(&[x], &a).unwrap()[1], 0.0);
        }
    }

    #[test]
    fn sample_loglik_examples() {
        let theta = univariate(&[0.3, 0.7], &[0.0, 4.0], &[1.0, 2.5]);
        let one = DMatrix::from_row_slice(1, 1, &[1.7]);
        assert_abs_diff_eq!(
            sample_loglik(&one, &theta).unwrap(),
            log_mixture_density(&[1.7], &theta).unwrap(),
            epsilon = 1e-14
        );
        let rows = [-0.4, 1.7, 5.2];
        let data = DMatrix::from_row_slice(3, 1, &rows);
        let doubled = DMatrix::from_row_slice(6, 1, &[-0.4, 1.7, 5.2, -0.4, 1.7, 5.2]);
        let oracle = rows
            .iter()
            .map(|&x| (0.3 * normal_pdf(x, 0.0, 1.0) + 0.7 * normal_pdf(x, 4.0, 2.5)).ln())
            .sum::<f64>()
            / 3.0;
        let got = sample_loglik(&data, &theta).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs());
        assert_abs_diff_eq!(
            sample_loglik(&doubled, &theta).unwrap(),
            got,
            epsilon = 1e-14
        );
        assert!(matches!(
            sample_loglik(&DMatrix::zeros(0, 1), &theta),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn posterior_and_map_examples() {
        let single = univariate(&[1.0], &[0.0], &[1.0]);
        assert_eq!(posterior(&[3.0], &single).unwrap(), vec![1.0]);

        let third = 1.0 / 3.0;
        let triple = univariate(&[third, third, 1.0 - 2.0 * third], &[1.0; 3], &[1.0; 3]);
        for t in posterior(&[0.2], &triple).unwrap() {
            assert_abs_diff_eq!(t, third, epsilon = 1e-12);
        }

        let theta = univariate(&[0.5, 0.5], &[0.0, 4.0], &[1.0, 1.0]);
        let oracle =
            normal_pdf(1.0, 0.0, 1.0) / (normal_pdf(1.0, 0.0, 1.0) + normal_pdf(1.0, 4.0, 1.0));
        let tau = posterior(&[1.0], &theta).unwrap();
        assert_abs_diff_eq!(tau[0], oracle, epsilon = 1e-12);
        assert!((tau[0] - 0.98201).abs() < 1e-5);
        assert_eq!(map_classify(&[1.0], &theta).unwrap(), 0);
        // tie at the midpoint goes to the lowest index
        assert_eq!(map_classify(&[2.0], &theta).unwrap(), 0);

        let far = univariate(&[0.9, 0.1], &[0.0, 50.0], &[1.0, 1.0]);
        assert_eq!(map_classify(&[50.0], &far).unwrap(), 1);
    }

    #[test]
    fn param_distance_examples() {
        let a = MixtureParams::new(
            vec![0.4, 0.6],
            vec![dvector![0.0, 0.0], dvector![5.0, 1.0]],
            vec![
                Scatter::identity(2),
                Scatter::scaled_identity(2, 2.0).unwrap(),
            ],
            DensityGenerator::Gaussian,
        )
        .unwrap();
        assert_eq!(param_distance(&a, &a).unwrap(), 0.0);
        let swapped = a.permuted(&[1, 0]).unwrap();
        assert_eq!(param_distance(&a, &swapped).unwrap(), 0.0);
        let mut centers = a.centers().to_vec();
        centers[0][0] += 0.5;
        let b = MixtureParams::new(
            a.weights().to_vec(),
            centers,
            a.scatters().to_vec(),
            DensityGenerator::Gaussian,
        )
        .unwrap();
        // identity pairing costs 0.5; the swap costs far more
        let (m, d) = match_components(&a, &b).unwrap();
        assert_eq!(m, vec![0, 1]);
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-14);
        let c = univariate(&[1.0], &[0.0], &[1.0]);
        assert!(matches!(param_distance(&a, &c), Err(Error::Shape(_))));
    }

    fn random_params(vals: &[f64], k: usize) -> MixtureParams {
        let mut w: Vec<f64> = (0..k).map(|i| 0.1 + vals[i].abs()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let w_last = 1.0 - w[..k - 1].iter().sum::<f64>();
        w[k - 1] = w_last;
        MixtureParams::new(
            w,
            (0..k)
                .map(|i| dvector![vals[k + i] * 5.0, vals[2 * k + i] * 5.0])
                .collect(),
            (0..k)
                .map(|i| Scatter::scaled_identity(2, 0.5 + vals[3 * k + i].abs()).unwrap())
                .collect(),
            DensityGenerator::Gaussian,
        )
        .unwrap()
    }

    #[test]
    fn hungarian_matches_enumeration() {
        let mut state = 12345u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for k in 1..=7 {
            for _ in 0..30 {
                let cost = DMatrix::from_fn(k, k, |_, _| next() * 10.0);
                let (_, a) = min_cost_by_enumeration(&cost);
                let (perm, b) = min_cost_assignment(&cost);
                let mut sorted = perm.clone();
                sorted.sort();
                assert_eq!(sorted, (0..k).collect::<Vec<_>>());
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn posterior_rows_sum_to_one(vals in proptest::collection::vec(-1.0f64..1.0, 12), x in -20.0f64..20.0, y in -20.0f64..20.0) {
            let theta = random_params(&vals, 3);
            let tau = posterior(&[x, y], &theta).unwrap();
            prop_assert!((tau.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            let ev = theta.evaluator().unwrap();
            let mut joint = vec![0.0; 3];
            let mut diff = vec![0.0; 2];
            ev.log_joint(&[x, y], &mut joint, &mut diff);
            prop_assert_eq!(map_classify(&[x, y], &theta).unwrap(), argmax(&joint));
        }

        #[test]
        fn param_distance_is_a_pseudometric(
            a in proptest::collection::vec(-1.0f64..1.0, 12),
            b in proptest::collection::vec(-1.0f64..1.0, 12),
            c in proptest::collection::vec(-1.0f64..1.0, 12),
        ) {
            let (a, b, c) = (random_params(&a, 3), random_params(&b, 3), random_params(&c, 3));
            let ab = param_distance(&a, &b).unwrap();
            prop_assert!((ab - param_distance(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= param_distance(&a, &c).unwrap() + param_distance(&c, &b).unwrap() + 1e-12);
            prop_assert_eq!(param_distance(&a, &a.permuted(&[2, 0, 1]).unwrap()).unwrap(), 0.0);
        }

        #[test]
        fn loglik_invariant_under_row_permutation(vals in proptest::collection::vec(-1.0f64..1.0, 12), pts in proptest::collection::vec(-10.0f64..10.0, 20)) {
            let theta = random_params(&vals, 3);
            let data = DMatrix::from_row_slice(10, 2, &pts);
            let rev = pts.chunks(2).rev().flatten().copied().collect::<Vec<_>>();
            let rdata = DMatrix::from_row_slice(10, 2, &rev);
            let a = sample_loglik(&data, &theta).unwrap();
            let b = sample_loglik(&rdata, &theta).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
