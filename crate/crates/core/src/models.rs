//! System, signal-attack and measurement-channel models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HbfError, Result};
use crate::gaussian::{gaussian_eval, GaussianMixture};
use crate::linalg::{self, cholesky, is_symmetric};

/// Linear-Gaussian plant with a structured attack input.
///
/// ```text
/// x[k+1] = A x[k] + G a[k] + w[k],   w ~ N(0, Q)
/// y[k]   = C x[k] + H a[k] + v[k],   v ~ N(0, R)
/// ```
///
/// The attack terms are present only while the system is under attack.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl SystemModel {
    /// Validates shapes, noise covariances, and that `H` has full column rank.
    pub fn new(
        a: DMatrix<f64>,
        g: DMatrix<f64>,
        c: DMatrix<f64>,
        h: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(HbfError::config("sys.A", "must be a non-empty square matrix"));
        }
        let m = g.ncols();
        let p = c.nrows();
        if g.nrows() != n {
            return Err(HbfError::config("sys.G", format!("must have {n} rows")));
        }
        if c.ncols() != n {
            return Err(HbfError::config("sys.C", format!("must have {n} columns")));
        }
        if h.nrows() != p || h.ncols() != m {
            return Err(HbfError::config("sys.H", format!("must be {p}x{m}")));
        }
        if q.nrows() != n || q.ncols() != n || !is_symmetric(&q, 1e-9) {
            return Err(HbfError::config("sys.Q", format!("must be a symmetric {n}x{n} matrix")));
        }
        if q.symmetric_eigenvalues().min() < -1e-12 * q.amax().max(1.0) {
            return Err(HbfError::config("sys.Q", "must be positive semi-definite"));
        }
        if r.nrows() != p || r.ncols() != p || !is_symmetric(&r, 1e-9) {
            return Err(HbfError::config("sys.R", format!("must be a symmetric {p}x{p} matrix")));
        }
        if nalgebra::Cholesky::new(r.clone()).is_none() {
            return Err(HbfError::config("sys.R", "must be positive definite"));
        }
        if m == 0 || p < m || h.rank(1e-10 * h.amax().max(1.0)) < m {
            return Err(HbfError::config(
                "sys.H",
                format!("must have full column rank m={m} for the input gain"),
            ));
        }
        Ok(Self {
            q: linalg::symmetrize(&q),
            r: linalg::symmetrize(&r),
            a,
            g,
            c,
            h,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.g.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_scalar(&self) -> bool {
        self.n() == 1 && self.m() == 1 && self.p() == 1
    }

    /// `[A, G]`, the transition acting on the stacked vector `[x; a]`.
    pub fn a_tilde(&self) -> DMatrix<f64> {
        hstack(&self.a, &self.g)
    }

    /// `[C, H]`, the observation acting on the stacked vector `[x; a]`.
    pub fn c_tilde(&self) -> DMatrix<f64> {
        hstack(&self.c, &self.h)
    }
}

pub(crate) fn hstack(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape()).copy_from(right);
    out
}

/// `ℓ(y | x) = N(y; C x, R)`.
pub fn likelihood_no_attack(y: &DVector<f64>, x: &DVector<f64>, sys: &SystemModel) -> Result<f64> {
    linalg::check_dim("likelihood state", sys.n(), x.len())?;
    gaussian_eval(y, &(&sys.c * x), &sys.r)
}

/// `ℓ(y | a, x) = N(y; C x + H a, R)`.
pub fn likelihood_attack(
    y: &DVector<f64>,
    a: &DVector<f64>,
    x: &DVector<f64>,
    sys: &SystemModel,
) -> Result<f64> {
    linalg::check_dim("likelihood state", sys.n(), x.len())?;
    linalg::check_dim("likelihood attack", sys.m(), a.len())?;
    gaussian_eval(y, &(&sys.c * x + &sys.h * a), &sys.r)
}

/// Markov switching of the attack set plus the a-priori attack density `p(a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackModel {
    /// Probability that an attack starts when none is active.
    pub p_birth: f64,
    /// Probability that an active attack persists.
    pub p_survival: f64,
    pub prior: GaussianMixture,
}

impl AttackModel {
    pub fn new(p_birth: f64, p_survival: f64, prior: GaussianMixture) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_birth) {
            return Err(HbfError::config("am.p_b", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&p_survival) {
            return Err(HbfError::config("am.p_s", "must lie in [0, 1]"));
        }
        if (prior.total_weight() - 1.0).abs() > 1e-9 {
            return Err(HbfError::config("am.prior", "weights must sum to 1"));
        }
        for c in prior.components() {
            cholesky(&c.cov, "attack prior").map_err(|_| {
                HbfError::config("am.prior", "covariances must be positive semi-definite")
            })?;
        }
        Ok(Self {
            p_birth,
            p_survival,
            prior,
        })
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }
}

/// `p(a) = Σ_j ω̃_j N(a; ã_j, P̃_j)`.
pub fn attack_prior_density(a: &DVector<f64>, am: &AttackModel) -> Result<f64> {
    am.prior.eval(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// At most one packet per step, possibly replaced by a fake.
    PacketSubstitution,
    /// The delivered packet plus a Poisson number of fakes.
    ExtraPacketInjection,
}

/// What the injection-mode correction does with a measurement outside the clutter box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutsideBoxPolicy {
    /// Raise a model-mismatch error.
    #[default]
    Reject,
    /// Treat the measurement as certainly system-originated (the `κ(y) → 0` limit).
    SystemOriginated,
}

/// Axis-aligned box supporting the uniform clutter density `κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterBox {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl ClutterBox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        linalg::check_dim("clutter box", lo.len(), hi.len())?;
        if lo.is_empty() || lo.iter().zip(hi.iter()).any(|(l, h)| !(h > l) || !l.is_finite() || !h.is_finite()) {
            return Err(HbfError::config("ch.clutter_box", "every axis needs finite lo < hi"));
        }
        Ok(Self { lo, hi })
    }

    /// Same interval on every one of `dim` axes.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(DVector::from_element(dim, lo), DVector::from_element(dim, hi))
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn volume(&self) -> f64 {
        (&self.hi - &self.lo).product()
    }

    pub fn contains(&self, y: &DVector<f64>) -> bool {
        y.len() == self.dim()
            && y.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }
}

/// Delivery, fake-packet and clutter parameters of the monitoring channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub mode: ChannelMode,
    pub p_delivery: f64,
    /// Packet-substitution probability (substitution mode only).
    pub p_fake: f64,
    /// Mean number of injected packets per step (injection mode only).
    pub clutter_rate: f64,
    pub clutter_box: ClutterBox,
    pub outside_box: OutsideBoxPolicy,
}

impl ChannelModel {
    pub fn new(
        mode: ChannelMode,
        p_delivery: f64,
        p_fake: f64,
        clutter_rate: f64,
        clutter_box: ClutterBox,
    ) -> Result<Self> {
        if !(p_delivery > 0.0 && p_delivery <= 1.0) {
            return Err(HbfError::config("ch.p_d", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&p_fake) {
            return Err(HbfError::config("ch.p_f", "must lie in [0, 1)"));
        }
        if !(clutter_rate >= 0.0) || !clutter_rate.is_finite() {
            return Err(HbfError::config("ch.xi", "must be finite and non-negative"));
        }
        Ok(Self {
            mode,
            p_delivery,
            p_fake,
            clutter_rate,
            clutter_box,
            outside_box: OutsideBoxPolicy::Reject,
        })
    }

    pub fn with_outside_box(mut self, policy: OutsideBoxPolicy) -> Self {
        self.outside_box = policy;
        self
    }
}

/// Uniform clutter density: `1 / volume` inside the box, zero outside.
pub fn clutter_density(y: &DVector<f64>, ch: &ChannelModel) -> f64 {
    if ch.clutter_box.contains(y) {
        1.0 / ch.clutter_box.volume()
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianComponent;
    use approx::assert_relative_eq;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn v1(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn scalar_sys(c: f64, h: f64, r: f64) -> SystemModel {
        SystemModel::new(m1(0.9), m1(1.0), m1(c), m1(h), m1(1.0), m1(r)).unwrap()
    }

    fn scalar_prior(parts: &[(f64, f64, f64)]) -> AttackModel {
        let comps = parts
            .iter()
            .map(|&(w, m, p)| GaussianComponent::new(w, v1(m), m1(p)).unwrap())
            .collect();
        AttackModel::new(0.2, 0.8, GaussianMixture::new(1, comps).unwrap()).unwrap()
    }

    #[test]
    fn likelihood_no_attack_examples() {
        let s = scalar_sys(1.0, 1.0, 1.0);
        assert_relative_eq!(likelihood_no_attack(&v1(0.7), &v1(0.7), &s).unwrap(), 0.3989422804, epsilon = 1e-10);
        let s = scalar_sys(2.0, 1.0, 1.0);
        assert_relative_eq!(likelihood_no_attack(&v1(2.0), &v1(1.0), &s).unwrap(), 0.3989422804, epsilon = 1e-10);
        let s = scalar_sys(1.0, 1.0, 4.0);
        assert_relative_eq!(likelihood_no_attack(&v1(2.0), &v1(0.0), &s).unwrap(), 0.1209853623, epsilon = 1e-10);
    }

    #[test]
    fn likelihood_attack_examples() {
        let s = scalar_sys(1.0, 1.0, 1.0);
        assert_relative_eq!(
            likelihood_attack(&v1(2.0), &v1(1.0), &v1(1.0), &s).unwrap(),
            0.3989422804,
            epsilon = 1e-10
        );
        let s = scalar_sys(1.0, 2.0, 1.0);
        assert_relative_eq!(
            likelihood_attack(&v1(0.0), &v1(1.0), &v1(0.0), &s).unwrap(),
            0.0539909665,
            epsilon = 1e-10
        );
        // zero attack reduces to the attack-free likelihood
        for y in [-1.0, 0.3, 2.5] {
            assert_eq!(
                likelihood_attack(&v1(y), &v1(0.0), &v1(0.4), &s).unwrap(),
                likelihood_no_attack(&v1(y), &v1(0.4), &s).unwrap()
            );
        }
    }

    #[test]
    fn zero_feedthrough_is_rejected() {
        let err = SystemModel::new(m1(0.9), m1(1.0), m1(1.0), m1(0.0), m1(1.0), m1(1.0)).unwrap_err();
        assert!(err.to_string().contains("sys.H"));
    }

    #[test]
    fn clutter_density_examples() {
        let ch = |b: ClutterBox| {
            ChannelModel::new(ChannelMode::ExtraPacketInjection, 0.9, 0.0, 0.5, b).unwrap()
        };
        let c1 = ch(ClutterBox::uniform(1, -0.3, 140.3).unwrap());
        assert_relative_eq!(clutter_density(&v1(50.0), &c1), 0.0071123756, epsilon = 1e-10);
        assert_eq!(clutter_density(&v1(150.0), &c1), 0.0);
        let c2 = ch(ClutterBox::new(DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![1.0, 2.0])).unwrap());
        assert_eq!(clutter_density(&DVector::from_vec(vec![0.5, 1.0]), &c2), 0.5);
    }

    #[test]
    fn clutter_density_integrates_to_one() {
        let b = ClutterBox::uniform(1, -2.0, 3.0).unwrap();
        let ch = ChannelModel::new(ChannelMode::PacketSubstitution, 1.0, 0.1, 0.0, b).unwrap();
        let n = 180_001;
        let (lo, hi) = (-4.0, 5.0);
        let h = (hi - lo) / (n - 1) as f64;
        // midpoint rule, the box edges fall on cell boundaries
        let total: f64 = (0..n - 1)
            .map(|i| clutter_density(&v1(lo + (i as f64 + 0.5) * h), &ch) * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn attack_prior_examples() {
        let am = scalar_prior(&[(1.0, 0.0, 1.0)]);
        assert_relative_eq!(attack_prior_density(&v1(0.0), &am).unwrap(), 0.3989422804, epsilon = 1e-10);
        let am = scalar_prior(&[(0.5, -1.0, 1.0), (0.5, 1.0, 1.0)]);
        assert_relative_eq!(attack_prior_density(&v1(0.0), &am).unwrap(), 0.2419707245, epsilon = 1e-10);
        let am = scalar_prior(&[(0.3, -2.0, 0.5), (0.7, 1.5, 2.0)]);
        let x = v1(0.25);
        let direct = 0.3 * gaussian_eval(&x, &v1(-2.0), &m1(0.5)).unwrap()
            + 0.7 * gaussian_eval(&x, &v1(1.5), &m1(2.0)).unwrap();
        assert_relative_eq!(attack_prior_density(&x, &am).unwrap(), direct, epsilon = 1e-15);
    }

    #[test]
    fn probability_bounds_are_validated() {
        let prior = GaussianMixture::single(v1(0.0), m1(1.0)).unwrap();
        assert!(AttackModel::new(1.2, 0.5, prior.clone()).is_err());
        assert!(AttackModel::new(0.2, -0.1, prior).is_err());
        let b = ClutterBox::uniform(1, 0.0, 1.0).unwrap();
        assert!(ChannelModel::new(ChannelMode::PacketSubstitution, 0.0, 0.1, 0.0, b.clone()).is_err());
        assert!(ChannelModel::new(ChannelMode::PacketSubstitution, 1.0, 1.0, 0.0, b).is_err());
        assert!(ClutterBox::uniform(1, 1.0, 1.0).is_err());
    }
}
