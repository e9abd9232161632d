//! Eigen-ratio constraint: `lambda_max(theta) / lambda_min(theta) <= gamma`
//! over all eigenvalues of all component scatters.

use crate::error::{Error, Result};
use crate::esd::{eigenvalue_floor, Scatter};
use crate::mixture::MixtureParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErcConfig {
    gamma: f64,
}

impl ErcConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma >= 1.0 && gamma.is_finite() {
            Ok(Self { gamma })
        } else {
            Err(Error::Config(format!(
                "eigen-ratio bound gamma must be a finite value >= 1, got {gamma}"
            )))
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

pub fn scatters_satisfy_erc(scatters: &[Scatter], cfg: ErcConfig, tol: f64) -> bool {
    let lo = scatters
        .iter()
        .map(Scatter::min_eigval)
        .fold(f64::INFINITY, f64::min);
    let hi = scatters
        .iter()
        .map(Scatter::max_eigval)
        .fold(f64::NEG_INFINITY, f64::max);
    lo > 0.0 && hi <= cfg.gamma * lo * (1.0 + tol)
}

pub fn satisfies_erc(theta: &MixtureParams, cfg: ErcConfig, tol: f64) -> bool {
    scatters_satisfy_erc(theta.scatters(), cfg, tol)
}

/// Caps every eigenvalue at `gamma * lambda_min(theta)`, keeping eigenvectors.
/// Feasible input is returned unchanged.
pub fn feasibility_truncate(scatters: &[Scatter], cfg: ErcConfig) -> Result<Vec<Scatter>> {
    if scatters.is_empty() {
        return Err(Error::Shape("no scatters to truncate".into()));
    }
    let lambda_min = scatters
        .iter()
        .map(Scatter::min_eigval)
        .fold(f64::INFINITY, f64::min);
    if !(lambda_min > 0.0) {
        return Err(Error::Degenerate(format!(
            "lambda_min(theta) = {lambda_min:e}"
        )));
    }
    let cap = cfg.gamma * lambda_min;
    scatters
        .iter()
        .map(|s| {
            if s.max_eigval() <= cap {
                Ok(s.clone())
            } else {
                let vals: Vec<f64> = s.eigvals().iter().map(|&v| v.min(cap)).collect();
                Scatter::from_eigen(&vals, s.eigvecs())
            }
        })
        .collect()
}

#[inline]
fn clip(d: f64, m: f64, gamma: f64) -> f64 {
    d.max(m).min(gamma * m)
}

/// `sum_k w_k sum_j (log lambda_kj + d_kj / lambda_kj)`.
pub fn eigen_objective(targets: &[Vec<f64>], weights: &[f64], lambdas: &[Vec<f64>]) -> f64 {
    targets
        .iter()
        .zip(lambdas)
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|((d, l), &w)| w * d.iter().zip(l).map(|(d, l)| l.ln() + d / l).sum::<f64>())
        .sum()
}

fn objective_at(targets: &[Vec<f64>], weights: &[f64], m: f64, gamma: f64) -> f64 {
    targets
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(d, &w)| {
            w * d
                .iter()
                .map(|&d| {
                    let l = clip(d, m, gamma);
                    l.ln() + d / l
                })
                .sum::<f64>()
        })
        .sum()
}

/// Constrained eigenvalues `clip(d, m*, gamma m*)` where `m*` minimizes
/// [`eigen_objective`]. The objective is smooth between the breakpoints
/// `{d} U {d / gamma}` with a closed-form stationary point on each piece, so
/// the search is exact.
pub fn optimal_constrained_eigenvalues(
    targets: &[Vec<f64>],
    weights: &[f64],
    cfg: ErcConfig,
) -> Result<Vec<Vec<f64>>> {
    if targets.is_empty() || targets.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} target sets but {} weights",
            targets.len(),
            weights.len()
        )));
    }
    if targets
        .iter()
        .flatten()
        .any(|d| !(*d >= 0.0) || !d.is_finite())
    {
        return Err(Error::Domain(
            "eigenvalue targets must be finite and non-negative".into(),
        ));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite())
        || !(weights.iter().sum::<f64>() > 0.0)
    {
        return Err(Error::Domain(
            "weights must be non-negative with a positive sum".into(),
        ));
    }
    let global_max = targets.iter().flatten().copied().fold(0.0, f64::max);
    if global_max <= 0.0 {
        return Err(Error::Degenerate("all eigenvalue targets are zero".into()));
    }
    let gamma = cfg.gamma;

    let floor = eigenvalue_floor(global_max);
    let targets: Vec<Vec<f64>> = targets
        .iter()
        .map(|d| {
            if d.iter().all(|&v| v < floor) {
                vec![floor; d.len()]
            } else {
                d.clone()
            }
        })
        .collect();

    let lo = targets
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if lo > 0.0 && global_max <= gamma * lo {
        return Ok(targets);
    }

    // entries that enter the objective, with their weights
    let active: Vec<(f64, f64)> = targets
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .flat_map(|(d, &w)| d.iter().map(move |&d| (d, w)))
        .collect();
    let mut breaks: Vec<f64> = active
        .iter()
        .flat_map(|&(d, _)| [d, d / gamma])
        .filter(|&b| b > 0.0)
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    if breaks.is_empty() {
        return Err(Error::Degenerate(
            "no positive weighted eigenvalue target".into(),
        ));
    }

    let mut candidates = breaks.clone();
    let mut bounds = Vec::with_capacity(breaks.len() + 1);
    bounds.push((0.0, breaks[0]));
    bounds.extend(breaks.windows(2).map(|w| (w[0], w[1])));
    bounds.push((breaks[breaks.len() - 1], f64::INFINITY));
    for (a, b) in bounds {
        // inside (a, b): d <= a are raised to m, d >= gamma b are cut to gamma m
        let (mut num, mut den) = (0.0, 0.0);
        for &(d, w) in &active {
            if d <= a {
                num += w * d;
                den += w;
            } else if d / gamma >= b {
                num += w * d / gamma;
                den += w;
            }
        }
        if den > 0.0 {
            let m = num / den;
            if m > a && m < b {
                candidates.push(m);
            }
        } else if b.is_finite() {
            candidates.push(0.5 * (a + b));
        }
    }

    let mut best_m = candidates[0];
    let mut best_f = f64::INFINITY;
    for &m in &candidates {
        let f = objective_at(&targets, weights, m, gamma);
        if f < best_f || (f == best_f && m < best_m) {
            best_f = f;
            best_m = m;
        }
    }
    Ok(targets
        .iter()
        .map(|d| d.iter().map(|&v| clip(v, best_m, gamma)).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn diag_scatter(vals: &[f64]) -> Scatter {
        Scatter::from_eigen(vals, &DMatrix::identity(vals.len(), vals.len())).unwrap()
    }

    // brute force over 2000 log-spaced m (plus a local refinement)
    fn grid_oracle(targets: &[Vec<f64>], weights: &[f64], gamma: f64) -> f64 {
        let all: Vec<f64> = targets
            .iter()
            .flatten()
            .copied()
            .filter(|&v| v > 0.0)
            .collect();
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min) / gamma / 10.0;
        let hi = all.iter().copied().fold(0.0, f64::max) * 10.0;
        let n = 2000;
        let step = (hi / lo).ln() / n as f64;
        let mut best = (f64::INFINITY, lo);
        for i in 0..=n {
            let m = lo * (step * i as f64).exp();
            let f = objective_at(targets, weights, m, gamma);
            if f < best.0 {
                best = (f, m);
            }
        }
        // golden-section refinement around the best grid cell
        let (mut a, mut b) = (best.1 * (-step).exp(), best.1 * step.exp());
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if objective_at(targets, weights, c, gamma) < objective_at(targets, weights, d, gamma) {
                b = d;
            } else {
                a = c;
            }
        }
        objective_at(targets, weights, 0.5 * (a + b), gamma).min(best.0)
    }

    #[test]
    fn config_validation() {
        assert!(ErcConfig::new(0.5).is_err());
        assert!(ErcConfig::new(f64::INFINITY).is_err());
        assert_eq!(ErcConfig::new(1.0).unwrap().gamma(), 1.0);
    }

    #[test]
    fn satisfies_examples() {
        let g1 = ErcConfig::new(1.0).unwrap();
        let g10 = ErcConfig::new(10.0).unwrap();
        let eye = vec![Scatter::identity(2), Scatter::identity(2)];
        assert!(scatters_satisfy_erc(&eye, g1, 0.0));
        assert!(!scatters_satisfy_erc(
            &[diag_scatter(&[1.0, 3.0]), diag_scatter(&[100.0, 50.0])],
            g10,
            0.0
        ));
        assert!(scatters_satisfy_erc(
            &[diag_scatter(&[2.0, 20.0])],
            g10,
            0.0
        ));
    }

    #[test]
    fn truncation_examples() {
        let g10 = ErcConfig::new(10.0).unwrap();
        let out = feasibility_truncate(&[diag_scatter(&[1.0, 100.0])], g10).unwrap();
        assert_eq!(out[0].eigvals().as_slice(), &[1.0, 10.0]);

        let feasible = vec![diag_scatter(&[1.0, 3.0]), diag_scatter(&[2.0, 9.0])];
        assert_eq!(feasibility_truncate(&feasible, g10).unwrap(), feasible);

        let out =
            feasibility_truncate(&[diag_scatter(&[2.0]), diag_scatter(&[3.0, 50.0])], g10).unwrap();
        assert_eq!(out[0].eigvals().as_slice(), &[2.0]);
        assert_eq!(out[1].eigvals().as_slice(), &[3.0, 20.0]);
        assert!(scatters_satisfy_erc(&out, g10, 0.0));
    }

    #[test]
    fn truncation_keeps_eigenvectors() {
        let q = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        let s = Scatter::from_eigen(&[1.0, 400.0], &q).unwrap();
        let out = feasibility_truncate(&[s.clone()], ErcConfig::new(4.0).unwrap()).unwrap();
        assert_eq!(out[0].eigvecs(), s.eigvecs());
        assert_eq!(out[0].eigvals().as_slice(), &[1.0, 4.0]);
    }

    #[test]
    fn optimal_examples() {
        let g10 = ErcConfig::new(10.0).unwrap();
        let d = vec![vec![1.0, 100.0]];
        let out = optimal_constrained_eigenvalues(&d, &[1.0], g10).unwrap();
        assert_abs_diff_eq!(out[0][0], 5.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[0][1], 55.0, epsilon = 1e-10);
        let fo = grid_oracle(&d, &[1.0], 10.0);
        assert!((eigen_objective(&d, &[1.0], &out) - fo).abs() <= 1e-9 * fo.abs());

        let d = vec![vec![2.0, 4.0]];
        assert_eq!(optimal_constrained_eigenvalues(&d, &[1.0], g10).unwrap(), d);

        let d = vec![vec![1.0], vec![100.0]];
        let out =
            optimal_constrained_eigenvalues(&d, &[0.5, 0.5], ErcConfig::new(1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(out[0][0], 50.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1][0], 50.5, epsilon = 1e-12);
        let fo = grid_oracle(&d, &[0.5, 0.5], 1.0);
        assert!((eigen_objective(&d, &[0.5, 0.5], &out) - fo).abs() <= 1e-9 * fo.abs());
    }

    #[test]
    fn optimal_errors_and_degenerate_guard() {
        let g = ErcConfig::new(10.0).unwrap();
        assert!(matches!(
            optimal_constrained_eigenvalues(&[vec![0.0, 0.0]], &[1.0], g),
            Err(Error::Degenerate(_))
        ));
        assert!(optimal_constrained_eigenvalues(&[vec![1.0]], &[0.0], g).is_err());
        assert!(optimal_constrained_eigenvalues(&[vec![-1.0]], &[1.0], g).is_err());
        // a collapsed component is floored before the search
        let out =
            optimal_constrained_eigenvalues(&[vec![0.0, 0.0], vec![1.0, 2.0]], &[0.1, 0.9], g)
                .unwrap();
        let flat: Vec<f64> = out.iter().flatten().copied().collect();
        let lo = flat.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = flat.iter().copied().fold(0.0, f64::max);
        assert!(lo > 0.0 && hi <= 10.0 * lo);
    }

    #[test]
    fn zero_weight_components_still_clipped() {
        let g = ErcConfig::new(2.0).unwrap();
        let out = optimal_constrained_eigenvalues(&[vec![1.0, 1.5], vec![1000.0]], &[1.0, 0.0], g)
            .unwrap();
        assert_eq!(out[0], vec![1.0, 1.5]);
        // any m in [0.75, 1] is optimal; ties resolve to the smallest
        assert_eq!(out[1], vec![1.5]);
        let flat: Vec<f64> = out.iter().flatten().copied().collect();
        let lo = flat.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(flat.iter().all(|&v| v <= 2.0 * lo));
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, f64)> {
        (1usize..4, 1usize..4).prop_flat_map(|(k, p)| {
            (
                proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, p), k),
                proptest::collection::vec(0.01f64..1.0, k),
                prop_oneof![Just(1.0), 1.0f64..50.0],
            )
                .prop_map(|(logd, w, g)| {
                    (
                        logd.iter()
                            .map(|r| r.iter().map(|v| 10f64.powf(*v)).collect())
                            .collect(),
                        w,
                        g,
                    )
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn optimal_beats_truncation_and_matches_grid((d, w, gamma) in instance()) {
            let cfg = ErcConfig::new(gamma).unwrap();
            let out = optimal_constrained_eigenvalues(&d, &w, cfg).unwrap();
            let scat: Vec<Scatter> = out.iter().map(|v| diag_scatter(v)).collect();
            prop_assert!(scatters_satisfy_erc(&scat, cfg, 0.0));

            let trunc = feasibility_truncate(&d.iter().map(|v| diag_scatter(v)).collect::<Vec<_>>(), cfg).unwrap();
            prop_assert!(scatters_satisfy_erc(&trunc, cfg, 0.0));
            // eigvals of a diagonal scatter come back sorted, so compare on sorted targets
            let sorted: Vec<Vec<f64>> = d.iter().map(|v| { let mut v = v.clone(); v.sort_by(f64::total_cmp); v }).collect();
            let tl: Vec<Vec<f64>> = trunc.iter().map(|s| s.eigvals().iter().copied().collect()).collect();
            let f_opt = eigen_objective(&d, &w, &out);
            prop_assert!(f_opt <= eigen_objective(&sorted, &w, &tl) + 1e-9 * f_opt.abs().max(1.0));

            let fo = grid_oracle(&d, &w, gamma);
            prop_assert!((f_opt - fo).abs() <= 1e-6 * fo.abs().max(1.0), "exact {} grid {}", f_opt, fo);

            for (dk, lk) in d.iter().zip(&out) {
                for i in 0..dk.len() {
                    for j in 0..dk.len() {
                        if dk[i] <= dk[j] {
                            prop_assert!(lk[i] <= lk[j]);
                        }
                    }
                }
            }
        }
    }
}
