//! Debiased Sinkhorn barycenters on a one-dimensional grid.
//!
//! All scalings are kept as logarithms, and the Gibbs kernel is applied as a
//! log-sum-exp, so distant Diracs and small regularizations do not underflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{decode, Precision, StateDistribution, StateId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl SinkhornConfig {
    /// `ε = 4·(bin width)²`, `tol = 1e-6`, 1000 iterations.
    pub fn for_precision(precision: Precision) -> Self {
        Self {
            epsilon: 4.0 * precision.bin_width().powi(2),
            max_iters: 1000,
            tol: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkhornStatus {
    /// Change fell below `tol`.
    Converged,
    /// Iteration cap reached with change in `[tol, 100·tol]`.
    Loose,
    /// Iteration cap reached with change above `100·tol`.
    NonConvergence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Barycenter {
    /// Normalized barycenter weights on the grid.
    pub probs: Vec<f64>,
    pub iterations: usize,
    pub last_change: f64,
    pub status: SinkhornStatus,
}

/// Log Gibbs kernel `−(x_u − x_v)² / ε` on a fixed grid.
#[derive(Debug, Clone)]
pub struct GibbsKernel {
    n: usize,
    log_k: Vec<f64>,
    k: Vec<f64>,
    epsilon: f64,
}

/// Terms this far below the running maximum cannot change an f64 sum.
const LSE_CUTOFF: f64 = 50.0;

/// Shifted linear-domain sums above this are free of underflow error.
const SAFE_SUM: f64 = 1e-250;

impl GibbsKernel {
    pub fn new(points: &[f64], epsilon: f64) -> Self {
        let n = points.len();
        let mut log_k = Vec::with_capacity(n * n);
        for &xu in points {
            for &xv in points {
                log_k.push(-(xu - xv) * (xu - xv) / epsilon);
            }
        }
        let k = log_k.iter().map(|l| l.exp()).collect();
        Self { n, log_k, k, epsilon }
    }

    /// Grid of decoded lattice values for states `lo..=hi`.
    pub fn on_states(precision: Precision, lo: u32, hi: u32, epsilon: f64) -> Self {
        let points: Vec<f64> = (lo..=hi)
            .map(|i| decode(StateId::new(i, precision).expect("index within precision")))
            .collect();
        Self::new(&points, epsilon)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `out_u = log Σ_v K_uv exp(a_v)`. The kernel is symmetric, so this is
    /// also the transpose product.
    ///
    /// Sums are taken in the linear domain after shifting by `max a`; rows
    /// where that sum would underflow are redone as a log-sum-exp.
    fn apply_log(&self, a: &[f64], out: &mut [f64]) {
        let shift = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if shift == f64::NEG_INFINITY {
            out.iter_mut().for_each(|o| *o = f64::NEG_INFINITY);
            return;
        }
        let e: Vec<f64> = a.iter().map(|x| (x - shift).exp()).collect();
        for (u, o) in out.iter_mut().enumerate() {
            let row = &self.k[u * self.n..(u + 1) * self.n];
            let sum: f64 = row.iter().zip(&e).map(|(k, e)| k * e).sum();
            *o = if sum > SAFE_SUM {
                shift + sum.ln()
            } else {
                self.row_lse(u, a)
            };
        }
    }

    fn row_lse(&self, u: usize, a: &[f64]) -> f64 {
        let row = &self.log_k[u * self.n..(u + 1) * self.n];
        let max = row
            .iter()
            .zip(a)
            .map(|(k, x)| k + x)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        let floor = max - LSE_CUTOFF;
        let sum: f64 = row
            .iter()
            .zip(a)
            .map(|(k, x)| k + x)
            .filter(|t| *t > floor)
            .map(|t| (t - max).exp())
            .sum();
        max + sum.ln()
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("barycenter weights must be >= 0".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("barycenter weights sum to {total}")));
    }
    Ok(())
}

/// Debiased entropic barycenter of `dists` (each a probability vector on the
/// kernel's grid) with the given weights.
///
/// Per round, for every input `i`: `φ_i ← μ_i / (K ψ_i)`; then
/// `b ← d · Π_i (Kᵀ φ_i)^{w_i}`, `ψ_i ← b / (Kᵀ φ_i)` and
/// `d ← sqrt(d · b / (K d))`. Iteration stops when the max-norm change of `b`
/// drops below `tol`, measured on the normalized `b`. Inputs with zero weight do not influence `b` and are
/// skipped.
pub fn barycenter_on_grid(
    kernel: &GibbsKernel,
    dists: &[&[f64]],
    weights: &[f64],
    cfg: &SinkhornConfig,
) -> Result<Barycenter> {
    cfg.validate()?;
    if dists.is_empty() || dists.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} distributions but {} weights",
            dists.len(),
            weights.len()
        )));
    }
    check_weights(weights)?;
    let n = kernel.len();
    let mut inputs: Vec<(Vec<f64>, f64)> = Vec::new();
    for (mu, &w) in dists.iter().zip(weights) {
        if mu.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "distribution has {} entries, grid has {n}",
                mu.len()
            )));
        }
        if mu.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("barycenter input has a negative entry".into()));
        }
        let total: f64 = mu.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("barycenter input has no mass".into()));
        }
        if w > 0.0 {
            inputs.push((mu.iter().map(|p| (p / total).ln()).collect(), w));
        }
    }

    let m = inputs.len();
    let mut log_psi = vec![vec![0.0; n]; m];
    let mut log_kphi = vec![vec![0.0; n]; m];
    let mut log_phi = vec![0.0; n];
    let mut log_d = vec![0.0; n];
    let mut log_b = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut b_prev = vec![0.0; n];
    let mut change = f64::INFINITY;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        for (i, (log_mu, _)) in inputs.iter().enumerate() {
            kernel.apply_log(&log_psi[i], &mut scratch);
            for u in 0..n {
                log_phi[u] = if log_mu[u] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else if scratch[u] == f64::NEG_INFINITY {
                    return Err(Error::NumericalUnderflow("sinkhorn scaling"));
                } else {
                    log_mu[u] - scratch[u]
                };
            }
            kernel.apply_log(&log_phi, &mut log_kphi[i]);
        }
        for u in 0..n {
            log_b[u] = log_d[u]
                + inputs
                    .iter()
                    .zip(&log_kphi)
                    .map(|((_, w), kp)| w * kp[u])
                    .sum::<f64>();
        }
        for i in 0..m {
            for u in 0..n {
                log_psi[i][u] = log_b[u] - log_kphi[i][u];
            }
        }
        kernel.apply_log(&log_d, &mut scratch);
        for u in 0..n {
            log_d[u] = 0.5 * (log_d[u] + log_b[u] - scratch[u]);
        }

        let max = log_b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NumericalUnderflow("sinkhorn barycenter"));
        }
        let total: f64 = log_b.iter().map(|l| (l - max).exp()).sum();
        change = 0.0;
        for u in 0..n {
            let b = (log_b[u] - max).exp() / total;
            change = f64::max(change, (b - b_prev[u]).abs());
            b_prev[u] = b;
        }
        if change < cfg.tol {
            break;
        }
    }

    let max = log_b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NumericalUnderflow("sinkhorn barycenter"));
    }
    let mut probs: Vec<f64> = log_b.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);

    let status = if change < cfg.tol {
        SinkhornStatus::Converged
    } else if change <= 100.0 * cfg.tol {
        SinkhornStatus::Loose
    } else {
        SinkhornStatus::NonConvergence
    };
    Ok(Barycenter {
        probs,
        iterations,
        last_change: change,
        status,
    })
}

/// Barycenter of full state distributions on the complete `10^k` grid.
pub fn debiased_sinkhorn_barycenter(
    dists: &[StateDistribution],
    weights: &[f64],
    cfg: &SinkhornConfig,
) -> Result<(StateDistribution, Barycenter)> {
    let precision = dists
        .first()
        .ok_or_else(|| Error::InvalidArgument("no distributions".into()))?
        .precision();
    if dists.iter().any(|d| d.precision() != precision) {
        return Err(Error::DimensionMismatch("distributions differ in precision".into()));
    }
    let n = precision.num_states() as u32;
    let kernel = GibbsKernel::on_states(precision, 0, n - 1, cfg.epsilon);
    let refs: Vec<&[f64]> = dists.iter().map(StateDistribution::probs).collect();
    let bary = barycenter_on_grid(&kernel, &refs, weights, cfg)?;
    let dist = StateDistribution::from_weights(bary.probs.clone(), precision)?;
    Ok((dist, bary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::one_hot;

    fn k2() -> Precision {
        Precision::new(2).unwrap()
    }

    fn l1(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    }

    fn bump(center: f64, width: f64) -> StateDistribution {
        let w: Vec<f64> = (0..100)
            .map(|i| (-(i as f64 / 10.0 - center).powi(2) / (2.0 * width * width)).exp())
            .collect();
        StateDistribution::from_weights(w, k2()).unwrap()
    }

    #[test]
    fn identical_inputs_are_fixed() {
        let cfg = SinkhornConfig::for_precision(k2());
        for mu in [bump(4.0, 0.5), bump(3.0, 0.1), bump(6.5, 0.05)] {
            let (out, bary) = debiased_sinkhorn_barycenter(&[mu.clone(), mu.clone()], &[0.5, 0.5], &cfg).unwrap();
            assert!(l1(out.probs(), mu.probs()) < 1e-3, "{:?} {}", bary.status, l1(out.probs(), mu.probs()));
        }
    }

    #[test]
    fn identical_diracs_stay_concentrated() {
        // the debiasing vector has to undo a blur of more than one bin, which
        // the capped iteration only does approximately
        let cfg = SinkhornConfig::for_precision(k2());
        let mu = one_hot(StateId::new(37, k2()).unwrap());
        let (out, _) = debiased_sinkhorn_barycenter(&[mu.clone(), mu], &[0.5, 0.5], &cfg).unwrap();
        assert_eq!(out.mode().index(), 37);
        assert!(out.max_mass() > 0.95);
    }

    #[test]
    fn degenerate_weight_returns_first() {
        let cfg = SinkhornConfig::for_precision(k2());
        let a = bump(3.0, 0.4);
        let b = bump(7.0, 0.2);
        let (out, _) = debiased_sinkhorn_barycenter(&[a.clone(), b], &[1.0, 0.0], &cfg).unwrap();
        assert!(l1(out.probs(), a.probs()) < 1e-3);
    }

    #[test]
    fn two_diracs_meet_at_weighted_mean() {
        let cfg = SinkhornConfig::for_precision(k2());
        let a = one_hot(StateId::new(20, k2()).unwrap());
        let b = one_hot(StateId::new(60, k2()).unwrap());
        let (out, _) = debiased_sinkhorn_barycenter(&[a, b], &[0.5, 0.5], &cfg).unwrap();
        assert!((out.mean() - 4.0).abs() <= 0.1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = SinkhornConfig::for_precision(k2());
        let a = bump(3.0, 0.4);
        assert!(debiased_sinkhorn_barycenter(&[a.clone(), a.clone()], &[0.7, 0.7], &cfg).is_err());
        assert!(debiased_sinkhorn_barycenter(&[a.clone()], &[0.5, 0.5], &cfg).is_err());
        let bad = SinkhornConfig { epsilon: 0.0, ..cfg };
        assert!(debiased_sinkhorn_barycenter(&[a], &[1.0], &bad).is_err());
    }

    #[test]
    fn iteration_cap_reports_status() {
        let cfg = SinkhornConfig {
            max_iters: 1,
            ..SinkhornConfig::for_precision(k2())
        };
        let a = one_hot(StateId::new(20, k2()).unwrap());
        let b = one_hot(StateId::new(60, k2()).unwrap());
        let (out, bary) = debiased_sinkhorn_barycenter(&[a, b], &[0.5, 0.5], &cfg).unwrap();
        assert_eq!(bary.status, SinkhornStatus::NonConvergence);
        assert!((out.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
