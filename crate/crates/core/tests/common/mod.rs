#![allow(dead_code)]

use hbf::config::{self, Scenario};
use hbf::filter::FilterOptions;
use hbf::sim::AttackSchedule;
use hbf::{
    AttackCorrection, AttackModel, ChannelMode, ChannelModel, ClutterBox, GaussianComponent, GaussianMixture,
    HybridBernoulliDensity, OutsideBoxPolicy, SystemModel,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn scenario(name: &str, overrides: &[&str]) -> Scenario {
    let path = format!("{}/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    config::load(path.as_ref(), &overrides).unwrap().build().unwrap()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_spd<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> DMatrix<f64> {
    let l = random_matrix(rng, dim, dim, scale);
    &l * l.transpose() + DMatrix::identity(dim, dim) * (0.1 * scale * scale)
}

pub fn random_mixture<R: Rng>(rng: &mut R, dim: usize, count: usize) -> GaussianMixture {
    let comps = (0..count)
        .map(|_| {
            GaussianComponent::new(
                rng.random_range(0.05..1.0),
                DVector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0)),
                random_spd(rng, dim, 1.0),
            )
            .unwrap()
        })
        .collect();
    GaussianMixture::new(dim, comps).unwrap().normalize().unwrap()
}

/// A stable random model with matching attack prior and channel.
pub fn random_models<R: Rng>(rng: &mut R, mode: ChannelMode) -> (SystemModel, AttackModel, ChannelModel) {
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=2);
    let p = rng.random_range(m..=3);
    let sys = SystemModel::new(
        random_matrix(rng, n, n, 0.9 / n as f64),
        random_matrix(rng, n, m, 1.0),
        random_matrix(rng, p, n, 1.0),
        random_matrix(rng, p, m, 1.0) + DMatrix::identity(p, m),
        random_spd(rng, n, 0.5),
        random_spd(rng, p, 0.5),
    )
    .unwrap();
    let prior_count = rng.random_range(1..=2);
    let attack = AttackModel::new(
        rng.random_range(0.01..0.5),
        rng.random_range(0.5..0.99),
        random_mixture(rng, m, prior_count),
    )
    .unwrap();
    let bx = ClutterBox::uniform(p, -30.0, 30.0).unwrap();
    let channel = match mode {
        ChannelMode::PacketSubstitution => {
            ChannelModel::new(mode, rng.random_range(0.5..=1.0), rng.random_range(0.0..0.5), 0.0, bx).unwrap()
        }
        ChannelMode::ExtraPacketInjection => {
            ChannelModel::new(mode, rng.random_range(0.5..0.99), 0.0, rng.random_range(0.1..2.0), bx).unwrap()
        }
    }
    .with_outside_box(OutsideBoxPolicy::SystemOriginated);
    (sys, attack, channel)
}

pub fn random_density<R: Rng>(rng: &mut R, n: usize, m: usize, j0: usize, j1: usize) -> HybridBernoulliDensity {
    let r = rng.random_range(0.05..0.95);
    HybridBernoulliDensity::new(r, random_mixture(rng, n, j0), random_mixture(rng, n + m, j1), n, m).unwrap()
}

/// A random scenario driven by a Markov attack schedule.
pub fn random_scenario<R: Rng>(rng: &mut R, horizon: usize) -> Scenario {
    let mode = if rng.random_bool(0.5) {
        ChannelMode::PacketSubstitution
    } else {
        ChannelMode::ExtraPacketInjection
    };
    let (sys, attack, channel) = random_models(rng, mode);
    let n = sys.n();
    let j0 = rng.random_range(1..=3);
    let p0 = random_mixture(rng, n, j0);
    let r = match rng.random_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..1.0),
    };
    let initial = HybridBernoulliDensity::from_state_prior(r, p0, &attack).unwrap();
    let correction = if rng.random_bool(0.5) {
        AttackCorrection::Jise
    } else {
        AttackCorrection::Exact
    };
    Scenario {
        x0: DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)),
        options: FilterOptions {
            attack_correction: correction,
            ..FilterOptions::default()
        },
        sys,
        attack,
        channel,
        initial,
        horizon,
        schedule: AttackSchedule::Markov,
        seed: rng.random(),
        trials: 1,
    }
}
