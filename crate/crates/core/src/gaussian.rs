//! Gaussian components and mixtures.
//!
//! Both densities of the hybrid Bernoulli triplet are stored as weighted sums of
//! Gaussians. Covariances are symmetrized whenever a component is built, and
//! mixtures are reduced with the usual prune / greedy-merge / cap heuristic.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HbfError, Result};
use crate::linalg::{self, cholesky, log_det, mahalanobis_sq, symmetrize};

/// A weighted Gaussian term `weight * N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianComponent {
    /// Builds a component, symmetrizing `cov`.
    ///
    /// Fails on negative or non-finite weights and on shape mismatches. Positive
    /// semi-definiteness is checked lazily by the operations that factor `cov`.
    pub fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(HbfError::numerical(
                "gaussian component",
                format!("weight must be finite and non-negative, got {weight}"),
            ));
        }
        linalg::check_dim("component covariance rows", mean.len(), cov.nrows())?;
        linalg::check_dim("component covariance cols", mean.len(), cov.ncols())?;
        Ok(Self {
            weight,
            cov: symmetrize(&cov),
            mean,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Unweighted density `N(x; mean, cov)`.
    pub fn density(&self, x: &DVector<f64>) -> Result<f64> {
        gaussian_eval(x, &self.mean, &self.cov)
    }

    /// True when `cov + jitter` admits a Cholesky factorization.
    pub fn is_psd(&self) -> bool {
        cholesky(&self.cov, "psd check").is_ok()
    }
}

/// `N(x; m, P)` evaluated through a Cholesky factorization of `P`.
pub fn gaussian_eval(x: &DVector<f64>, m: &DVector<f64>, p: &DMatrix<f64>) -> Result<f64> {
    Ok(log_gaussian_eval(x, m, p)?.exp())
}

pub fn log_gaussian_eval(x: &DVector<f64>, m: &DVector<f64>, p: &DMatrix<f64>) -> Result<f64> {
    let d = m.len();
    linalg::check_dim("gaussian_eval point", d, x.len())?;
    linalg::check_dim("gaussian_eval covariance", d, p.nrows())?;
    let ch = cholesky(p, "gaussian_eval")?;
    let diff = x - m;
    Ok(-0.5 * (d as f64 * (2.0 * PI).ln() + log_det(&ch) + mahalanobis_sq(&ch, &diff)))
}

/// Mixture reduction thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionParams {
    /// Components with weight strictly below this are dropped.
    pub prune_threshold: f64,
    /// Components within this Mahalanobis distance of the current leader are merged.
    pub merge_threshold: f64,
    pub max_components: usize,
    /// When set, a candidate is merged only if its covariance also lies within this
    /// relative Frobenius distance of the leader's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance_tolerance: Option<f64>,
}

impl Default for ReductionParams {
    fn default() -> Self {
        Self {
            prune_threshold: 1e-3,
            merge_threshold: 3.0,
            max_components: 100,
            covariance_tolerance: None,
        }
    }
}

/// An ordered list of Gaussian components sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    pub fn new(dim: usize, components: Vec<GaussianComponent>) -> Result<Self> {
        if dim == 0 {
            return Err(HbfError::numerical("gaussian mixture", "dimension must be positive"));
        }
        for c in &components {
            linalg::check_dim("mixture component", dim, c.dim())?;
        }
        Ok(Self { dim, components })
    }

    pub fn single(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        Self::new(dim, vec![GaussianComponent::new(1.0, mean, cov)?])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn into_components(self) -> Vec<GaussianComponent> {
        self.components
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// `Σ ω_j N(x; m_j, P_j)`.
    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        self.components
            .iter()
            .try_fold(0.0, |acc, c| Ok(acc + c.weight * c.density(x)?))
    }

    /// Index of the highest-weight component; ties resolve to the lowest index.
    pub fn argmax_weight(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, c) in self.components.iter().enumerate() {
            match best {
                Some(b) if self.components[b].weight >= c.weight => {}
                _ => best = Some(i),
            }
        }
        best
    }

    /// Rescales the weights to sum to one, preserving order.
    pub fn normalize(&self) -> Result<Self> {
        let total = self.total_weight();
        if !(total > 0.0) || !total.is_finite() {
            return Err(HbfError::DegenerateMixture { total });
        }
        let components = self
            .components
            .iter()
            .map(|c| GaussianComponent {
                weight: c.weight / total,
                ..c.clone()
            })
            .collect();
        Ok(Self {
            dim: self.dim,
            components,
        })
    }

    /// Mean and covariance of the whole mixture (weights assumed normalized).
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let mut mean = DVector::zeros(self.dim);
        for c in &self.components {
            mean += &c.mean * c.weight;
        }
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for c in &self.components {
            let d = &c.mean - &mean;
            cov += (&c.cov + &d * d.transpose()) * c.weight;
        }
        (mean, symmetrize(&cov))
    }

    /// Prune, greedily merge and cap the mixture, then renormalize.
    pub fn prune_merge(&self, params: &ReductionParams) -> Result<Self> {
        prune_merge(self, params)
    }
}

/// Weight-proportional moment match of a group of components.
fn moment_match(group: &[&GaussianComponent], dim: usize) -> GaussianComponent {
    let weight: f64 = group.iter().map(|c| c.weight).sum();
    let mut mean = DVector::zeros(dim);
    for c in group {
        mean += &c.mean * c.weight;
    }
    mean /= weight;
    let mut cov = DMatrix::zeros(dim, dim);
    for c in group {
        let d = &c.mean - &mean;
        cov += (&c.cov + &d * d.transpose()) * c.weight;
    }
    cov /= weight;
    GaussianComponent {
        weight,
        mean,
        cov: symmetrize(&cov),
    }
}

/// Mixture reduction.
///
/// 1. drop components with weight below `prune_threshold`;
/// 2. repeatedly take the heaviest survivor (lowest index on ties) and absorb every
///    remaining component whose mean lies within squared Mahalanobis distance
///    `merge_threshold²` under the leader's covariance (and, if requested, whose
///    covariance is close to the leader's);
/// 3. keep the `max_components` heaviest results;
/// 4. renormalize.
///
/// If pruning removes everything, the heaviest original component is kept alone.
pub fn prune_merge(gm: &GaussianMixture, params: &ReductionParams) -> Result<GaussianMixture> {
    let dim = gm.dim;
    let mut pool: Vec<&GaussianComponent> = gm
        .components
        .iter()
        .filter(|c| !(c.weight < params.prune_threshold))
        .collect();
    if pool.is_empty() {
        let best = gm.argmax_weight().ok_or(HbfError::DegenerateMixture { total: 0.0 })?;
        pool.push(&gm.components[best]);
    }

    let gate = params.merge_threshold * params.merge_threshold;
    // Leaders are visited heaviest first; a stable sort keeps lower indices first on ties.
    let mut by_weight: Vec<usize> = (0..pool.len()).collect();
    by_weight.sort_by(|&a, &b| pool[b].weight.total_cmp(&pool[a].weight));
    // Candidates sorted by their first coordinate. A squared Mahalanobis distance is at
    // least dm0² / P00, so only a window around the leader needs the full test.
    let mut by_first: Vec<usize> = (0..pool.len()).collect();
    by_first.sort_by(|&a, &b| pool[a].mean[0].total_cmp(&pool[b].mean[0]));
    let first: Vec<f64> = by_first.iter().map(|&i| pool[i].mean[0]).collect();
    let mut taken = vec![false; pool.len()];
    let mut diff = DVector::zeros(dim);
    let mut merged = Vec::new();
    for &lead in &by_weight {
        if taken[lead] {
            continue;
        }
        let leader = pool[lead];
        let ch = cholesky(&leader.cov, "merge leader covariance")?;
        let half = (gate * leader.cov[(0, 0)]).sqrt();
        let lo = first.partition_point(|&m| m < leader.mean[0] - half);
        let mut group_idx = vec![lead];
        taken[lead] = true;
        for &j in &by_first[lo..] {
            let c = pool[j];
            if c.mean[0] > leader.mean[0] + half {
                break;
            }
            if taken[j] {
                continue;
            }
            diff.copy_from(&c.mean);
            diff -= &leader.mean;
            let similar = params.covariance_tolerance.is_none_or(|tol| {
                (&c.cov - &leader.cov).norm() <= tol * leader.cov.norm()
            });
            if similar && mahalanobis_sq(&ch, &diff) <= gate {
                taken[j] = true;
                group_idx.push(j);
            }
        }
        merged.push(if group_idx.len() == 1 {
            leader.clone()
        } else {
            group_idx.sort_unstable();
            let group: Vec<&GaussianComponent> = group_idx.iter().map(|&i| pool[i]).collect();
            moment_match(&group, dim)
        });
    }

    // Stable sort keeps selection order among equal weights.
    merged.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    merged.truncate(params.max_components.max(1));
    GaussianMixture {
        dim,
        components: merged,
    }
    .normalize()
}
