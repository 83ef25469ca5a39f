//! Gaussian-mixture hybrid Bernoulli filter.
//!
//! The filter state is the triplet `(r, p0, p1)`: the probability that a signal
//! attack is active, the state density under no attack, and the joint density of
//! `[x; a]` under attack. [`predict`] propagates the triplet through the Markov
//! attack switching and the plant dynamics; [`correct_ps`] and [`correct_epi`]
//! condition it on one step's measurement set for the two channel attacks.

mod correct;
mod estimate;
mod predict;

pub use correct::{correct, correct_epi, correct_ps};
pub use estimate::{extract_estimate, EstimateReport, EstimateSource};
pub use predict::predict;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HbfError, Result};
use crate::gaussian::{GaussianMixture, ReductionParams};
use crate::models::{AttackModel, ChannelModel, SystemModel};

/// Normalizers below this are treated as zero mass.
pub const NORMALIZER_FLOOR: f64 = 1e-300;

/// Measurements received in one step.
pub type MeasurementSet = Vec<DVector<f64>>;

/// How the attack-hypothesis components are conditioned on a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackCorrection {
    /// Unbiased minimum-variance joint input and state estimator gains
    /// (`L̃ = P Cᵀ S⁻¹`, `M = (Hᵀ S⁻¹ H)⁻¹ Hᵀ S⁻¹`). The corrected attack estimate
    /// ignores the prior `p(a)`.
    #[default]
    Jise,
    /// Kalman conditioning of the stacked `[x; a]` Gaussian on `y = C̃ [x; a] + v`,
    /// the exact posterior for a Gaussian attack prior.
    Exact,
}

/// Tuning knobs shared by the prediction and correction steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOptions {
    /// `None` disables pruning and merging entirely.
    pub reduction: Option<ReductionParams>,
    pub attack_correction: AttackCorrection,
    pub detection_threshold: f64,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            reduction: Some(ReductionParams::default()),
            attack_correction: AttackCorrection::Jise,
            detection_threshold: 0.5,
        }
    }
}

impl FilterOptions {
    pub(crate) fn reduce(&self, gm: GaussianMixture) -> Result<GaussianMixture> {
        match &self.reduction {
            Some(params) => gm.prune_merge(params),
            None => Ok(gm),
        }
    }
}

/// The `(r, p0, p1)` triplet. `p1` lives on the stacked space `[x; a]` of dimension `n + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridBernoulliDensity {
    pub r: f64,
    pub p0: GaussianMixture,
    pub p1: GaussianMixture,
    n: usize,
    m: usize,
}

impl HybridBernoulliDensity {
    pub fn new(r: f64, p0: GaussianMixture, p1: GaussianMixture, n: usize, m: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) {
            return Err(HbfError::config("init.r", "attack probability must lie in [0, 1]"));
        }
        crate::linalg::check_dim("p0 dimension", n, p0.dim())?;
        crate::linalg::check_dim("p1 dimension", n + m, p1.dim())?;
        if p0.is_empty() || p1.is_empty() {
            return Err(HbfError::config("init", "p0 and p1 need at least one component"));
        }
        Ok(Self { r, p0, p1, n, m })
    }

    /// Builds `p1` as the product of `p0` with the attack prior, with zero cross-covariance.
    pub fn from_state_prior(r: f64, p0: GaussianMixture, am: &AttackModel) -> Result<Self> {
        let n = p0.dim();
        let m = am.dim();
        let mut comps = Vec::with_capacity(p0.len() * am.prior.len());
        for c in p0.components() {
            for h in am.prior.components() {
                comps.push(crate::gaussian::GaussianComponent::new(
                    c.weight * h.weight,
                    stack(&c.mean, &h.mean),
                    block_diag(&c.cov, &h.cov),
                )?);
            }
        }
        let p1 = GaussianMixture::new(n + m, comps)?;
        Self::new(r, p0, p1, n, m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Checks the density invariants: `r ∈ [0, 1]`, both weight sums within `tol`
    /// of one, symmetric positive semi-definite covariances.
    pub fn check_invariants(&self, tol: f64) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(format!("r = {} outside [0, 1]", self.r));
        }
        for (name, gm) in [("p0", &self.p0), ("p1", &self.p1)] {
            let total = gm.total_weight();
            if (total - 1.0).abs() > tol {
                return Err(format!("{name} weights sum to {total}"));
            }
            for (j, c) in gm.components().iter().enumerate() {
                if !(c.weight >= 0.0) {
                    return Err(format!("{name}[{j}] has weight {}", c.weight));
                }
                if !crate::linalg::is_symmetric(&c.cov, 1e-9) {
                    return Err(format!("{name}[{j}] covariance is not symmetric"));
                }
                if !c.is_psd() {
                    return Err(format!("{name}[{j}] covariance is not PSD"));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn stack(top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(top.len() + bottom.len(), top.iter().chain(bottom.iter()).copied())
}

pub(crate) fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let mut out = DMatrix::zeros(ra + b.nrows(), ca + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((ra, ca), b.shape()).copy_from(b);
    out
}

/// A filter instance bundling models, options and the current density.
///
/// Each step is [`correct`](Self::correct) with the measurement set received at `k`,
/// then [`predict`](Self::predict) to `k + 1`.
#[derive(Debug, Clone)]
pub struct HybridBernoulliFilter {
    pub sys: SystemModel,
    pub attack: AttackModel,
    pub channel: ChannelModel,
    pub options: FilterOptions,
    density: HybridBernoulliDensity,
}

impl HybridBernoulliFilter {
    pub fn new(
        sys: SystemModel,
        attack: AttackModel,
        channel: ChannelModel,
        options: FilterOptions,
        initial: HybridBernoulliDensity,
    ) -> Result<Self> {
        crate::linalg::check_dim("initial density state", sys.n(), initial.n())?;
        crate::linalg::check_dim("initial density attack", sys.m(), initial.m())?;
        crate::linalg::check_dim("attack prior", sys.m(), attack.dim())?;
        crate::linalg::check_dim("clutter box", sys.p(), channel.clutter_box.dim())?;
        Ok(Self {
            sys,
            attack,
            channel,
            options,
            density: initial,
        })
    }

    pub fn density(&self) -> &HybridBernoulliDensity {
        &self.density
    }

    pub fn correct(&mut self, z: &[DVector<f64>]) -> Result<()> {
        self.density = correct(&self.density, z, &self.sys, &self.channel, &self.options)?;
        Ok(())
    }

    pub fn predict(&mut self) -> Result<()> {
        self.density = predict(&self.density, &self.sys, &self.attack, &self.options)?;
        Ok(())
    }

    pub fn estimate(&self) -> EstimateReport {
        extract_estimate(&self.density, self.options.detection_threshold)
    }
}
