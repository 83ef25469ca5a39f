use nalgebra::{DMatrix, DVector};

use super::{AttackCorrection, FilterOptions, HybridBernoulliDensity};
use crate::error::{HbfError, Result};
use crate::gaussian::{log_gaussian_eval, GaussianComponent, GaussianMixture};
use crate::linalg::{cholesky, log_det, mahalanobis_sq, spd_inverse, symmetrize};
use crate::models::{clutter_density, ChannelMode, ChannelModel, OutsideBoxPolicy, SystemModel};

/// Correction for whichever attack the channel model describes.
pub fn correct(
    prior: &HybridBernoulliDensity,
    z: &[DVector<f64>],
    sys: &SystemModel,
    ch: &ChannelModel,
    opts: &FilterOptions,
) -> Result<HybridBernoulliDensity> {
    match ch.mode {
        ChannelMode::PacketSubstitution => correct_ps(prior, z, sys, ch, opts),
        ChannelMode::ExtraPacketInjection => correct_epi(prior, z, sys, ch, opts),
    }
}

/// Correction under packet substitution: `z` holds at most one packet, which is a
/// fake drawn from the clutter density with probability `p_f`.
///
/// Each mixture doubles: the prior components survive with the fake-packet weight,
/// followed by their Kalman-corrected counterparts.
pub fn correct_ps(
    prior: &HybridBernoulliDensity,
    z: &[DVector<f64>],
    sys: &SystemModel,
    ch: &ChannelModel,
    opts: &FilterOptions,
) -> Result<HybridBernoulliDensity> {
    if ch.mode != ChannelMode::PacketSubstitution {
        return Err(HbfError::ModelMismatch("packet-substitution correction on an injection channel".into()));
    }
    if z.len() > 1 {
        return Err(HbfError::ModelMismatch(format!(
            "packet substitution delivers at most one packet, got {}",
            z.len()
        )));
    }
    let Some(y) = z.first() else {
        return Ok(prior.clone());
    };
    crate::linalg::check_dim("measurement", sys.p(), y.len())?;
    let kappa = clutter_density(y, ch);
    update(prior, z, ch.p_fake * kappa, &[1.0 - ch.p_fake], sys, opts)
}

/// Correction under extra packet injection: the true packet arrives with
/// probability `p_d` alongside a Poisson(`ξ`) number of fakes spread uniformly over
/// the clutter box.
///
/// Each mixture grows to `(1 + |z|)` times its size: the missed-detection copy of
/// the prior, then one Kalman-corrected copy per received packet in order.
pub fn correct_epi(
    prior: &HybridBernoulliDensity,
    z: &[DVector<f64>],
    sys: &SystemModel,
    ch: &ChannelModel,
    opts: &FilterOptions,
) -> Result<HybridBernoulliDensity> {
    if ch.mode != ChannelMode::ExtraPacketInjection {
        return Err(HbfError::ModelMismatch("injection correction on a substitution channel".into()));
    }
    if z.is_empty() {
        return Ok(prior.clone());
    }
    for y in z {
        crate::linalg::check_dim("measurement", sys.p(), y.len())?;
    }
    let xi = ch.clutter_rate;
    let pd = ch.p_delivery;
    let outside: Vec<bool> = z.iter().map(|y| !ch.clutter_box.contains(y)).collect();

    if xi == 0.0 {
        // No fakes: the single packet must be the true one.
        if z.len() > 1 {
            return Err(HbfError::ModelMismatch(format!(
                "{} packets received on a channel without injected packets",
                z.len()
            )));
        }
        return update(prior, z, 0.0, &[1.0], sys, opts);
    }

    if outside.iter().any(|&o| o) {
        match ch.outside_box {
            OutsideBoxPolicy::Reject => {
                let idx = outside.iter().position(|&o| o).unwrap_or(0);
                return Err(HbfError::ModelMismatch(format!(
                    "packet {idx} lies outside the clutter box"
                )));
            }
            OutsideBoxPolicy::SystemOriginated => {
                // Limit of vanishing clutter density: only out-of-box packets can be true.
                let coefs: Vec<f64> = outside.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
                return update(prior, z, 0.0, &coefs, sys, opts);
            }
        }
    }

    let coefs: Vec<f64> = z.iter().map(|y| pd / (xi * clutter_density(y, ch))).collect();
    update(prior, z, 1.0 - pd, &coefs, sys, opts)
}

/// Shared Bayes update. The likelihood of the measurement set under a component
/// `N(m, P)` is proportional to `legacy + Σ_y coefs[y] q(y)`, where `q(y)` is the
/// predicted measurement density of that component.
fn update(
    prior: &HybridBernoulliDensity,
    z: &[DVector<f64>],
    legacy: f64,
    coefs: &[f64],
    sys: &SystemModel,
    opts: &FilterOptions,
) -> Result<HybridBernoulliDensity> {
    let c_tilde = sys.c_tilde();
    let mut cond0 = Vec::with_capacity(z.len());
    let mut cond1 = Vec::with_capacity(z.len());
    for y in z {
        let c0 = prior
            .p0
            .components()
            .iter()
            .map(|c| kalman_condition(&c.mean, &c.cov, &sys.c, &sys.r, y))
            .collect::<Result<Vec<_>>>()?;
        let c1 = prior
            .p1
            .components()
            .iter()
            .map(|c| match opts.attack_correction {
                AttackCorrection::Exact => kalman_condition(&c.mean, &c.cov, &c_tilde, &sys.r, y),
                AttackCorrection::Jise => jise_condition(&c.mean, &c.cov, &c_tilde, sys, y),
            })
            .collect::<Result<Vec<_>>>()?;
        cond0.push(c0);
        cond1.push(c1);
    }

    let log_n0 = log_normalizer(&prior.p0, &cond0, legacy, coefs);
    let log_n1 = log_normalizer(&prior.p1, &cond1, legacy, coefs);

    let r = prior.r;
    let live0 = r < 1.0 && log_n0 > f64::NEG_INFINITY;
    let live1 = r > 0.0 && log_n1 > f64::NEG_INFINITY;
    let r_post = match (live0, live1) {
        // r N1 / ((1 - r) N0 + r N1)
        (true, true) => 1.0 / (1.0 + ((1.0 - r).ln() + log_n0 - r.ln() - log_n1).exp()),
        (true, false) => 0.0,
        (false, true) => 1.0,
        (false, false) => {
            return Err(HbfError::numerical(
                "measurement update",
                format!("likelihood normalizers vanished (log no attack {log_n0}, log attack {log_n1})"),
            ))
        }
    };

    let p0 = if live0 {
        opts.reduce(posterior(&prior.p0, &cond0, legacy, coefs, log_n0)?)?
    } else {
        prior.p0.clone()
    };
    let p1 = if live1 {
        opts.reduce(posterior(&prior.p1, &cond1, legacy, coefs, log_n1)?)?
    } else {
        prior.p1.clone()
    };
    HybridBernoulliDensity::new(r_post, p0, p1, prior.n(), prior.m())
}

/// Log-weights of the posterior components, legacy copies first, then one block per
/// packet. Zero terms come out as negative infinity.
fn log_terms<'a>(
    gm: &'a GaussianMixture,
    cond: &'a [Vec<Conditioned>],
    legacy: f64,
    coefs: &'a [f64],
) -> impl Iterator<Item = f64> + 'a {
    let legacy_terms = gm.components().iter().map(move |c| (legacy * c.weight).ln());
    let corrected = coefs.iter().zip(cond).flat_map(move |(k, cs)| {
        gm.components().iter().zip(cs).map(move |(c, d)| (k * c.weight).ln() + d.log_q)
    });
    legacy_terms.chain(corrected)
}

/// `ln(legacy + Σ_y coefs[y] Σ_j ω_j q_j(y))`, accumulated without underflow.
fn log_normalizer(gm: &GaussianMixture, cond: &[Vec<Conditioned>], legacy: f64, coefs: &[f64]) -> f64 {
    let top = log_terms(gm, cond, legacy, coefs).fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + log_terms(gm, cond, legacy, coefs).map(|t| (t - top).exp()).sum::<f64>().ln()
}

fn posterior(
    gm: &GaussianMixture,
    cond: &[Vec<Conditioned>],
    legacy: f64,
    coefs: &[f64],
    log_normalizer: f64,
) -> Result<GaussianMixture> {
    let mut weights = log_terms(gm, cond, legacy, coefs).map(|t| (t - log_normalizer).exp());
    let mut out = Vec::with_capacity(gm.len() * (1 + cond.len()));
    for c in gm.components() {
        let w = weights.next().unwrap_or(0.0);
        out.push(GaussianComponent::new(w, c.mean.clone(), c.cov.clone())?);
    }
    for cs in cond {
        for d in cs {
            let w = weights.next().unwrap_or(0.0);
            out.push(GaussianComponent::new(w, d.mean.clone(), d.cov.clone())?);
        }
    }
    GaussianMixture::new(gm.dim(), out)?.normalize()
}

/// A component conditioned on one measurement, with the predicted measurement density.
struct Conditioned {
    log_q: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// Kalman update of `N(m, P)` on `y = O x + v`, `v ~ N(0, R)`.
fn kalman_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    obs: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<Conditioned> {
    let s = symmetrize(&(obs * cov * obs.transpose() + r));
    let ch = cholesky(&s, "innovation covariance")?;
    let nu = y - obs * mean;
    let p = y.len() as f64;
    let log_q = -0.5 * (mahalanobis_sq(&ch, &nu) + log_det(&ch) + p * (2.0 * std::f64::consts::PI).ln());
    let op = obs * cov;
    // S⁻¹ O P, the transposed gain.
    let gain_t = ch.solve(&op);
    let gain = gain_t.transpose();
    let j = DMatrix::identity(mean.len(), mean.len()) - &gain * obs;
    Ok(Conditioned {
        log_q,
        mean: mean + &gain * nu,
        cov: symmetrize(&(&j * cov * j.transpose() + &gain * r * gain.transpose())),
    })
}

/// Joint input and state estimation update of the stacked `[x; a]` component.
///
/// The measurement density still uses the full stacked prior; the corrected
/// Gaussian is the one produced by the unbiased minimum-variance gains.
fn jise_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    c_tilde: &DMatrix<f64>,
    sys: &SystemModel,
    y: &DVector<f64>,
) -> Result<Conditioned> {
    let (n, m) = (sys.n(), sys.m());
    let log_q = log_gaussian_eval(y, &(c_tilde * mean), &(c_tilde * cov * c_tilde.transpose() + &sys.r))?;

    let x = mean.rows(0, n).into_owned();
    let px = cov.view((0, 0), (n, n)).into_owned();
    let (c, h) = (&sys.c, &sys.h);
    let s_inv = spd_inverse(&symmetrize(&(c * &px * c.transpose() + &sys.r)), "innovation covariance")?;
    let pa = spd_inverse(&(h.transpose() * &s_inv * h), "attack information matrix")?;
    let gain_a = &pa * h.transpose() * &s_inv;
    let gain_x0 = &px * c.transpose() * &s_inv;
    let eye_p = DMatrix::identity(sys.p(), sys.p());
    let gain_x = &gain_x0 * (eye_p - h * &gain_a);

    let nu = y - c * &x;
    let x_post = &x + &gain_x * &nu;
    let a_post = &gain_a * &nu;
    // Joseph form: equal to (I - L C) Px for these gains, without the cancellation.
    let j = DMatrix::identity(n, n) - &gain_x * c;
    let px_post = symmetrize(&(&j * &px * j.transpose() + &gain_x * &sys.r * gain_x.transpose()));
    let pxa = -(&gain_x0 * h * &pa);

    let mut joint = DMatrix::zeros(n + m, n + m);
    joint.view_mut((0, 0), (n, n)).copy_from(&px_post);
    joint.view_mut((0, n), (n, m)).copy_from(&pxa);
    joint.view_mut((n, 0), (m, n)).copy_from(&pxa.transpose());
    joint.view_mut((n, n), (m, m)).copy_from(&pa);
    Ok(Conditioned {
        log_q,
        mean: super::stack(&x_post, &a_post),
        cov: symmetrize(&joint),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::gaussian_eval;
    use crate::models::{AttackModel, ClutterBox};
    use approx::assert_relative_eq;

    fn scalar_sys() -> SystemModel {
        let one = DMatrix::from_element(1, 1, 1.0);
        SystemModel::new(DMatrix::from_element(1, 1, 0.9), one.clone(), one.clone(), one.clone(), one.clone(), one).unwrap()
    }

    fn prior(r: f64) -> HybridBernoulliDensity {
        let p0 = GaussianMixture::single(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let am = AttackModel::new(0.1, 0.9, p0.clone()).unwrap();
        HybridBernoulliDensity::from_state_prior(r, p0, &am).unwrap()
    }

    fn ps_channel(pf: f64) -> ChannelModel {
        ChannelModel::new(ChannelMode::PacketSubstitution, 1.0, pf, 0.0, ClutterBox::uniform(1, -10.0, 10.0).unwrap()).unwrap()
    }

    fn epi_channel(pd: f64, xi: f64) -> ChannelModel {
        ChannelModel::new(ChannelMode::ExtraPacketInjection, pd, 0.0, xi, ClutterBox::uniform(1, -10.0, 10.0).unwrap())
            .unwrap()
    }

    fn y(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn raw() -> FilterOptions {
        FilterOptions {
            reduction: None,
            attack_correction: AttackCorrection::Exact,
            ..FilterOptions::default()
        }
    }

    #[test]
    fn empty_measurement_set_is_identity() {
        let d = prior(0.3);
        assert_eq!(correct_ps(&d, &[], &scalar_sys(), &ps_channel(0.3), &raw()).unwrap(), d);
        assert_eq!(correct_epi(&d, &[], &scalar_sys(), &epi_channel(0.9, 0.5), &raw()).unwrap(), d);
    }

    #[test]
    fn packet_substitution_matches_closed_form() {
        let (r, pf, yv) = (0.3, 0.3, 2.0);
        let out = correct_ps(&prior(r), &[y(yv)], &scalar_sys(), &ps_channel(pf), &raw()).unwrap();
        let kappa = 1.0 / 20.0;
        let psi0 = gaussian_eval(&y(yv), &y(0.0), &DMatrix::from_element(1, 1, 2.0)).unwrap();
        let psi1 = gaussian_eval(&y(yv), &y(0.0), &DMatrix::from_element(1, 1, 3.0)).unwrap();
        let expected = r * ((1.0 - pf) * psi1 + pf * kappa)
            / ((1.0 - pf) * (psi0 - r * (psi0 - psi1)) + pf * kappa);
        assert_relative_eq!(out.r, expected, max_relative = 1e-12);

        let c = out.p0.components();
        assert_eq!(c.len(), 2);
        let denom = (1.0 - pf) * psi0 + pf * kappa;
        assert_relative_eq!(c[0].weight, pf * kappa / denom, max_relative = 1e-12);
        assert_relative_eq!(c[1].mean[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(c[1].cov[(0, 0)], 0.5, epsilon = 1e-12);
        out.check_invariants(1e-12).unwrap();
    }

    #[test]
    fn injection_matches_closed_form() {
        let (r, pd, xi) = (0.4, 0.9, 0.5);
        let z = [y(1.0), y(-3.0)];
        let out = correct_epi(&prior(r), &z, &scalar_sys(), &epi_channel(pd, xi), &raw()).unwrap();
        let kappa = 1.0 / 20.0;
        let gamma = |var: f64| -> f64 {
            z.iter()
                .map(|v| gaussian_eval(v, &y(0.0), &DMatrix::from_element(1, 1, var)).unwrap() / (xi * kappa))
                .sum()
        };
        let (g0, g1) = (gamma(2.0), gamma(3.0));
        let expected = r * (1.0 - pd + pd * g1) / (1.0 - pd + pd * ((1.0 - r) * g0 + r * g1));
        assert_relative_eq!(out.r, expected, max_relative = 1e-12);
        assert_eq!(out.p0.len(), 3);
        assert_eq!(out.p1.len(), 3);
        assert_relative_eq!(out.p0.components()[0].weight, (1.0 - pd) / (1.0 - pd + pd * g0), max_relative = 1e-12);
    }

    #[test]
    fn exact_attack_update_matches_joint_kalman() {
        let out = correct_ps(&prior(0.5), &[y(2.0)], &scalar_sys(), &ps_channel(0.0), &raw()).unwrap();
        let c = out.p1.components().iter().find(|c| c.weight > 0.5).unwrap();
        // prior N(0, I2), y = x + a + v: gain = [1, 1] / 3
        assert_relative_eq!(c.mean[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(c.mean[1], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(c.cov[(0, 0)], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(c.cov[(0, 1)], -1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn jise_update_ignores_attack_prior() {
        let opts = FilterOptions {
            attack_correction: AttackCorrection::Jise,
            ..raw()
        };
        let out = correct_ps(&prior(0.5), &[y(2.0)], &scalar_sys(), &ps_channel(0.0), &opts).unwrap();
        let c = out.p1.components().iter().find(|c| c.weight > 0.5).unwrap();
        // scalar H = C = 1: the state is not corrected and the whole innovation is attributed to a
        assert_relative_eq!(c.mean[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(c.mean[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(c.cov[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.cov[(1, 1)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(c.cov[(0, 1)], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn extreme_probabilities_are_fixed_points() {
        for r in [0.0, 1.0] {
            let out = correct_ps(&prior(r), &[y(1.5)], &scalar_sys(), &ps_channel(0.3), &raw()).unwrap();
            assert_eq!(out.r, r);
            let out = correct_epi(&prior(r), &[y(1.5), y(4.0)], &scalar_sys(), &epi_channel(0.9, 0.5), &raw()).unwrap();
            assert_eq!(out.r, r);
        }
    }

    #[test]
    fn substitution_rejects_two_packets() {
        let err = correct_ps(&prior(0.3), &[y(0.0), y(1.0)], &scalar_sys(), &ps_channel(0.3), &raw()).unwrap_err();
        assert!(matches!(err, HbfError::ModelMismatch(_)));
    }

    #[test]
    fn outside_box_policy() {
        let ch = epi_channel(0.9, 0.5);
        let z = [y(12.0), y(1.0)];
        let err = correct_epi(&prior(0.3), &z, &scalar_sys(), &ch, &raw()).unwrap_err();
        assert!(matches!(err, HbfError::ModelMismatch(_)));

        let ch = ch.with_outside_box(OutsideBoxPolicy::SystemOriginated);
        let out = correct_epi(&prior(0.3), &z, &scalar_sys(), &ch, &raw()).unwrap();
        // Only the out-of-box packet carries posterior weight.
        let heavy: Vec<_> = out.p0.components().iter().filter(|c| c.weight > 0.0).collect();
        assert_eq!(heavy.len(), 1);
        assert_relative_eq!(heavy[0].mean[0], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn far_outlier_does_not_underflow() {
        // ln q is about -5e5 here, far below the smallest positive double.
        let out = correct_ps(&prior(0.0), &[y(1000.0)], &scalar_sys(), &ps_channel(0.0), &raw()).unwrap();
        assert_eq!(out.r, 0.0);
        assert_eq!(out.p0.len(), 2);
        assert_relative_eq!(out.p0.components()[1].weight, 1.0);
        assert_relative_eq!(out.p0.components()[1].mean[0], 500.0, epsilon = 1e-9);
    }
}
