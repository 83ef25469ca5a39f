use nalgebra::DVector;

use super::HybridBernoulliDensity;

/// Which mixture the point estimate was read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateSource {
    NoAttack,
    Attack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub attack_detected: bool,
    pub r: f64,
    pub state_estimate: DVector<f64>,
    /// Present only when an attack is declared.
    pub attack_estimate: Option<DVector<f64>>,
    pub source: EstimateSource,
}

/// Maximum a posteriori point estimate.
///
/// An attack is declared when `r > threshold`; the estimate is then the mean of the
/// heaviest `p1` component split into state and attack parts. Otherwise it is the
/// mean of the heaviest `p0` component.
pub fn extract_estimate(density: &HybridBernoulliDensity, threshold: f64) -> EstimateReport {
    let n = density.n();
    let detected = density.r > threshold;
    let (gm, source) = if detected {
        (&density.p1, EstimateSource::Attack)
    } else {
        (&density.p0, EstimateSource::NoAttack)
    };
    // Densities always hold at least one component.
    let best = &gm.components()[gm.argmax_weight().unwrap_or(0)].mean;
    EstimateReport {
        attack_detected: detected,
        r: density.r,
        state_estimate: best.rows(0, n).into_owned(),
        attack_estimate: detected.then(|| best.rows(n, density.m()).into_owned()),
        source,
    }
}
