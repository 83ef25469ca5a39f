//! Truth simulation, single filter runs and Monte-Carlo evaluation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::config::Scenario;
use crate::error::{HbfError, Result};
use crate::filter::{EstimateReport, HybridBernoulliFilter, MeasurementSet};
use crate::gaussian::GaussianMixture;
use crate::linalg::cholesky;
use crate::models::{ChannelMode, ChannelModel, SystemModel};

/// How the true attack evolves during a simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackSchedule {
    /// `value` is applied for `onset <= k < onset + duration`.
    Deterministic {
        onset: usize,
        duration: usize,
        value: DVector<f64>,
    },
    /// Inactive at `k = 0`, then switched by the birth/survival chain with a fresh
    /// draw from the attack prior on every active step.
    Markov,
}

/// Ground truth for one trial. Index `k` runs over `0..horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrace {
    pub x: Vec<DVector<f64>>,
    pub attack: Vec<Option<DVector<f64>>>,
    pub z: Vec<MeasurementSet>,
    /// Whether the system-originated packet reached the monitor.
    pub delivered: Vec<bool>,
    pub num_fake: Vec<usize>,
}

/// Filter output at each step, recorded after the correction.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub estimates: Vec<EstimateReport>,
    pub j0: Vec<usize>,
    pub j1: Vec<usize>,
}

/// Per-trial random generator, independent of how trials are scheduled.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64))
}

/// Gaussian sampler built once per covariance.
struct NoiseSource {
    chol: DMatrix<f64>,
}

impl NoiseSource {
    fn new(cov: &DMatrix<f64>, context: &str) -> Result<Self> {
        Ok(Self {
            chol: cholesky(cov, context)?.l(),
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let e = DVector::from_fn(self.chol.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.chol * e
    }
}

/// Draws one sample from a Gaussian mixture.
pub fn sample_mixture<R: Rng>(gm: &GaussianMixture, rng: &mut R) -> Result<DVector<f64>> {
    let total = gm.total_weight();
    let mut u = rng.random::<f64>() * total;
    let comps = gm.components();
    let mut pick = comps.len() - 1;
    for (i, c) in comps.iter().enumerate() {
        if u < c.weight {
            pick = i;
            break;
        }
        u -= c.weight;
    }
    let c = &comps[pick];
    Ok(&c.mean + NoiseSource::new(&c.cov, "attack prior covariance")?.sample(rng))
}

fn sample_box<R: Rng>(ch: &ChannelModel, rng: &mut R) -> DVector<f64> {
    let (lo, hi) = (ch.clutter_box.lo(), ch.clutter_box.hi());
    DVector::from_fn(lo.len(), |i, _| rng.random_range(lo[i]..hi[i]))
}

/// Simulates states, attacks and received measurement sets for `sc.horizon` steps.
pub fn simulate_truth<R: Rng>(sc: &Scenario, rng: &mut R) -> Result<TruthTrace> {
    let sys: &SystemModel = &sc.sys;
    let ch = &sc.channel;
    let w = NoiseSource::new(&sys.q, "sys.Q")?;
    let v = NoiseSource::new(&sys.r, "sys.R")?;
    let poisson = match ch.mode {
        ChannelMode::ExtraPacketInjection if ch.clutter_rate > 0.0 => Some(
            Poisson::new(ch.clutter_rate).map_err(|e| HbfError::config("ch.xi", e.to_string()))?,
        ),
        _ => None,
    };

    let k_max = sc.horizon;
    let mut out = TruthTrace {
        x: Vec::with_capacity(k_max),
        attack: Vec::with_capacity(k_max),
        z: Vec::with_capacity(k_max),
        delivered: Vec::with_capacity(k_max),
        num_fake: Vec::with_capacity(k_max),
    };
    let mut x = sc.x0.clone();
    let mut active = false;
    for k in 0..k_max {
        let attack = match &sc.schedule {
            AttackSchedule::Deterministic { onset, duration, value } => {
                (k >= *onset && k < onset + duration).then(|| value.clone())
            }
            AttackSchedule::Markov => {
                if k > 0 {
                    let p = if active { sc.attack.p_survival } else { sc.attack.p_birth };
                    active = rng.random::<f64>() < p;
                }
                if active {
                    Some(sample_mixture(&sc.attack.prior, rng)?)
                } else {
                    None
                }
            }
        };

        let mut y = &sys.c * &x + v.sample(rng);
        if let Some(a) = &attack {
            y += &sys.h * a;
        }
        let delivered = rng.random::<f64>() < ch.p_delivery;
        let mut z = Vec::new();
        let mut fakes = 0;
        match ch.mode {
            ChannelMode::PacketSubstitution => {
                if delivered {
                    if rng.random::<f64>() < ch.p_fake {
                        z.push(sample_box(ch, rng));
                        fakes = 1;
                    } else {
                        z.push(y);
                    }
                }
            }
            ChannelMode::ExtraPacketInjection => {
                if delivered {
                    z.push(y);
                }
                if let Some(dist) = &poisson {
                    fakes = dist.sample(rng) as usize;
                    for _ in 0..fakes {
                        z.push(sample_box(ch, rng));
                    }
                }
                z.shuffle(rng);
            }
        }

        let mut next = &sys.a * &x + w.sample(rng);
        if let Some(a) = &attack {
            next += &sys.g * a;
        }
        out.x.push(std::mem::replace(&mut x, next));
        out.attack.push(attack);
        out.z.push(z);
        out.delivered.push(delivered && !(ch.mode == ChannelMode::PacketSubstitution && fakes == 1));
        out.num_fake.push(fakes);
    }
    Ok(out)
}

/// Runs the filter over a measurement sequence: at each step correct, record,
/// then predict to the next step.
pub fn run_filter(sc: &Scenario, measurements: &[MeasurementSet]) -> Result<FilterTrace> {
    let mut filter = HybridBernoulliFilter::new(
        sc.sys.clone(),
        sc.attack.clone(),
        sc.channel.clone(),
        sc.options,
        sc.initial.clone(),
    )?;
    let k_max = measurements.len();
    let mut trace = FilterTrace {
        estimates: Vec::with_capacity(k_max),
        j0: Vec::with_capacity(k_max),
        j1: Vec::with_capacity(k_max),
    };
    for (k, z) in measurements.iter().enumerate() {
        filter.correct(z).map_err(|e| e.at_step(k))?;
        trace.estimates.push(filter.estimate());
        trace.j0.push(filter.density().p0.len());
        trace.j1.push(filter.density().p1.len());
        if k + 1 < k_max {
            filter.predict().map_err(|e| e.at_step(k))?;
        }
    }
    Ok(trace)
}

/// Simulates one trial and filters it.
pub fn run_trial(sc: &Scenario, trial: usize) -> Result<(TruthTrace, FilterTrace)> {
    let mut rng = trial_rng(sc.seed, trial);
    let wrap = |e: HbfError| HbfError::AtTrial {
        trial,
        source: Box::new(e),
    };
    let truth = simulate_truth(sc, &mut rng).map_err(wrap)?;
    let trace = run_filter(sc, &truth.z).map_err(wrap)?;
    Ok((truth, trace))
}

/// Per-step Monte-Carlo summaries. `rmse_a` averages only over trials that are
/// attacked and flagged at that step, and is `NaN` when there are none.
#[derive(Debug, Clone, PartialEq)]
pub struct MCStats {
    pub trials: usize,
    pub mean_r: Vec<f64>,
    pub detection_rate: Vec<f64>,
    pub true_attack_rate: Vec<f64>,
    /// `rmse_x[k][i]`
    pub rmse_x: Vec<Vec<f64>>,
    pub rmse_a: Vec<Vec<f64>>,
}

struct TrialSummary {
    r: Vec<f64>,
    detected: Vec<bool>,
    attacked: Vec<bool>,
    sq_x: Vec<DVector<f64>>,
    sq_a: Vec<Option<DVector<f64>>>,
}

fn summarize(truth: &TruthTrace, trace: &FilterTrace) -> TrialSummary {
    let k_max = truth.x.len();
    let mut s = TrialSummary {
        r: Vec::with_capacity(k_max),
        detected: Vec::with_capacity(k_max),
        attacked: Vec::with_capacity(k_max),
        sq_x: Vec::with_capacity(k_max),
        sq_a: Vec::with_capacity(k_max),
    };
    for k in 0..k_max {
        let est = &trace.estimates[k];
        s.r.push(est.r);
        s.detected.push(est.attack_detected);
        s.attacked.push(truth.attack[k].is_some());
        s.sq_x.push((&est.state_estimate - &truth.x[k]).map(|d| d * d));
        s.sq_a.push(match (&truth.attack[k], &est.attack_estimate) {
            (Some(a), Some(ah)) => Some((ah - a).map(|d| d * d)),
            _ => None,
        });
    }
    s
}

/// Runs `trials` independent trials in parallel and aggregates them in trial order,
/// so the result does not depend on the thread count.
pub fn run_monte_carlo(sc: &Scenario, trials: usize) -> Result<MCStats> {
    let summaries: Vec<TrialSummary> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(sc, t).map(|(truth, trace)| summarize(&truth, &trace)))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&summaries, sc.horizon, sc.sys.n(), sc.sys.m()))
}

fn aggregate(summaries: &[TrialSummary], k_max: usize, n: usize, m: usize) -> MCStats {
    let t = summaries.len() as f64;
    let mut stats = MCStats {
        trials: summaries.len(),
        mean_r: vec![0.0; k_max],
        detection_rate: vec![0.0; k_max],
        true_attack_rate: vec![0.0; k_max],
        rmse_x: vec![vec![0.0; n]; k_max],
        rmse_a: vec![vec![f64::NAN; m]; k_max],
    };
    for k in 0..k_max {
        let mut sx = DVector::zeros(n);
        let mut sa = DVector::zeros(m);
        let mut na = 0usize;
        for s in summaries {
            stats.mean_r[k] += s.r[k];
            stats.detection_rate[k] += f64::from(u8::from(s.detected[k]));
            stats.true_attack_rate[k] += f64::from(u8::from(s.attacked[k]));
            sx += &s.sq_x[k];
            if let Some(d) = &s.sq_a[k] {
                sa += d;
                na += 1;
            }
        }
        stats.mean_r[k] /= t;
        stats.detection_rate[k] /= t;
        stats.true_attack_rate[k] /= t;
        stats.rmse_x[k] = sx.iter().map(|v| (v / t).sqrt()).collect();
        if na > 0 {
            stats.rmse_a[k] = sa.iter().map(|v| (v / na as f64).sqrt()).collect();
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(extra: &[&str]) -> Scenario {
        let text = r#"{
            "sys": {"A": [[0.9]], "G": [[1]], "C": [[1]], "H": [[1]], "Q": [[1]], "R": [[1]]},
            "am": {"p_b": 0.1, "p_s": 0.9, "prior": [{"weight": 1, "mean": [2], "cov": [[1]]}]},
            "ch": {"mode": "packet_substitution", "p_f": 0.3, "clutter_box": {"lo": -10, "hi": 10}},
            "horizon": 30,
            "attack_schedule": {"kind": "deterministic", "onset": 5, "duration": 10, "value": [3]},
            "init": {"x0": [0], "r": 0.1, "p0": [{"weight": 1, "mean": [0], "cov": [[1]]}]},
            "seed": 11
        }"#;
        let overrides: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        crate::config::parse_with_overrides(text, &overrides).unwrap().build().unwrap()
    }

    #[test]
    fn deterministic_schedule_is_half_open() {
        let sc = scenario(&[]);
        let truth = simulate_truth(&sc, &mut trial_rng(1, 0)).unwrap();
        let active: Vec<usize> = (0..30).filter(|&k| truth.attack[k].is_some()).collect();
        assert_eq!(active, (5..15).collect::<Vec<_>>());
        assert_eq!(truth.x[0][0], 0.0);
    }

    #[test]
    fn trials_are_reproducible() {
        let sc = scenario(&[]);
        assert_eq!(run_trial(&sc, 3).unwrap(), run_trial(&sc, 3).unwrap());
        assert_ne!(run_trial(&sc, 3).unwrap().0, run_trial(&sc, 4).unwrap().0);
    }

    #[test]
    fn substitution_delivers_at_most_one_packet() {
        let sc = scenario(&["ch.p_d=0.7"]);
        let truth = simulate_truth(&sc, &mut trial_rng(5, 0)).unwrap();
        assert!(truth.z.iter().all(|z| z.len() <= 1));
        assert!(truth.z.iter().any(|z| z.is_empty()));
    }

    #[test]
    fn aggregate_uses_only_attacked_and_detected_trials_for_attack_error() {
        let mk = |attacked: bool, detected: bool, err: f64| TrialSummary {
            r: vec![0.0],
            detected: vec![detected],
            attacked: vec![attacked],
            sq_x: vec![DVector::from_element(1, err * err)],
            sq_a: vec![(attacked && detected).then(|| DVector::from_element(1, err * err))],
        };
        let stats = aggregate(&[mk(true, true, 2.0), mk(false, true, 5.0), mk(true, false, 1.0)], 1, 1, 1);
        assert_eq!(stats.rmse_a[0][0], 2.0);
        assert!((stats.detection_rate[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((stats.rmse_x[0][0] - (30.0_f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn perfect_estimator_has_zero_error() {
        let sc = scenario(&[]);
        let truth = simulate_truth(&sc, &mut trial_rng(sc.seed, 0)).unwrap();
        let estimates = (0..sc.horizon)
            .map(|k| EstimateReport {
                attack_detected: truth.attack[k].is_some(),
                r: f64::from(u8::from(truth.attack[k].is_some())),
                state_estimate: truth.x[k].clone(),
                attack_estimate: truth.attack[k].clone(),
                source: crate::filter::EstimateSource::NoAttack,
            })
            .collect();
        let trace = FilterTrace {
            estimates,
            j0: vec![1; sc.horizon],
            j1: vec![1; sc.horizon],
        };
        let stats = aggregate(&[summarize(&truth, &trace)], sc.horizon, 1, 1);
        for k in 0..sc.horizon {
            assert_eq!(stats.rmse_x[k][0], 0.0);
            assert!(stats.rmse_a[k][0] == 0.0 || (stats.rmse_a[k][0].is_nan() && truth.attack[k].is_none()));
        }
    }
}
