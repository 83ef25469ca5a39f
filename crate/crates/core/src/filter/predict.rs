use nalgebra::DMatrix;

use super::{block_diag, stack, FilterOptions, HybridBernoulliDensity, NORMALIZER_FLOOR};
use crate::error::Result;
use crate::gaussian::{GaussianComponent, GaussianMixture};
use crate::linalg::symmetrize;
use crate::models::{AttackModel, SystemModel};

/// One-step prediction of the hybrid Bernoulli density.
///
/// `p0` receives `J0 + J1` components (no-attack continuation and attack death),
/// `p1` receives `Ja (J0 + J1)` components (attack birth and survival, each paired
/// with every attack-prior component). Reduction is applied afterwards when enabled.
///
/// A branch whose predicted probability is exactly zero keeps the previous mixture
/// as a placeholder so the density stays well-formed.
pub fn predict(
    post: &HybridBernoulliDensity,
    sys: &SystemModel,
    am: &AttackModel,
    opts: &FilterOptions,
) -> Result<HybridBernoulliDensity> {
    let r = post.r;
    let (pb, ps) = (am.p_birth, am.p_survival);
    let r_pred = ((1.0 - r) * pb + r * ps).clamp(0.0, 1.0);

    let a = &sys.a;
    let a_tilde = sys.a_tilde();
    let propagate = |f: &DMatrix<f64>, c: &GaussianComponent| {
        (f * &c.mean, symmetrize(&(f * &c.cov * f.transpose() + &sys.q)))
    };
    let from_p0: Vec<_> = post.p0.components().iter().map(|c| (c.weight, propagate(a, c))).collect();
    let from_p1: Vec<_> = post.p1.components().iter().map(|c| (c.weight, propagate(&a_tilde, c))).collect();

    let stay = (1.0 - r) * (1.0 - pb);
    let die = r * (1.0 - ps);
    let mut p0 = Vec::with_capacity(from_p0.len() + from_p1.len());
    for (w, (mean, cov)) in &from_p0 {
        p0.push(GaussianComponent::new(stay * w, mean.clone(), cov.clone())?);
    }
    for (w, (mean, cov)) in &from_p1 {
        p0.push(GaussianComponent::new(die * w, mean.clone(), cov.clone())?);
    }

    let born = (1.0 - r) * pb;
    let survive = r * ps;
    let prior = am.prior.components();
    let mut p1 = Vec::with_capacity(prior.len() * p0.len());
    for (coef, src) in [(born, &from_p0), (survive, &from_p1)] {
        for (w, (mean, cov)) in src.iter() {
            for h in prior {
                p1.push(GaussianComponent::new(
                    coef * w * h.weight,
                    stack(mean, &h.mean),
                    block_diag(cov, &h.cov),
                )?);
            }
        }
    }

    let p0 = finish(GaussianMixture::new(post.n(), p0)?, &post.p0, opts)?;
    let p1 = finish(GaussianMixture::new(post.n() + post.m(), p1)?, &post.p1, opts)?;
    HybridBernoulliDensity::new(r_pred, p0, p1, post.n(), post.m())
}

/// Normalizes a predicted branch, or falls back to the previous mixture when the
/// branch carries no mass.
fn finish(gm: GaussianMixture, previous: &GaussianMixture, opts: &FilterOptions) -> Result<GaussianMixture> {
    if !(gm.total_weight() > NORMALIZER_FLOOR) {
        return Ok(previous.clone());
    }
    opts.reduce(gm.normalize()?)
}
