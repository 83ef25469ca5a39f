//! JSON scenario files.
//!
//! A scenario bundles the plant, attack and channel models, the attack schedule
//! used for simulation, the filter initialization and tuning, and the run
//! parameters. Any field can be overridden from the command line with
//! `key.path=value` where `value` is parsed as JSON when possible.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HbfError, Result};
use crate::filter::{AttackCorrection, FilterOptions, HybridBernoulliDensity};
use crate::gaussian::{GaussianComponent, GaussianMixture, ReductionParams};
use crate::linalg::matrix_from_rows;
use crate::models::{AttackModel, ChannelMode, ChannelModel, ClutterBox, OutsideBoxPolicy, SystemModel};
use crate::sim::AttackSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub sys: SysConfig,
    pub am: AttackConfig,
    pub ch: ChannelConfig,
    pub horizon: usize,
    pub attack_schedule: ScheduleConfig,
    pub init: InitConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_trials() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SysConfig {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub p_b: f64,
    pub p_s: f64,
    pub prior: Vec<ComponentConfig>,
}

/// A box bound given either once for every axis or per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Scalar(f64),
    PerAxis(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: Bound,
    pub hi: Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub mode: ChannelMode,
    #[serde(default = "one")]
    pub p_d: f64,
    #[serde(default)]
    pub p_f: f64,
    #[serde(default)]
    pub xi: f64,
    pub clutter_box: BoxConfig,
    #[serde(default)]
    pub outside_box: OutsideBoxPolicy,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    /// Attack `value` active for `onset <= k < onset + duration`.
    Deterministic {
        onset: usize,
        duration: usize,
        value: Vec<f64>,
    },
    /// Attack switched on and off by the birth/survival chain, with a fresh draw
    /// from the attack prior on every active step.
    Markov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// True initial state used by the simulator.
    pub x0: Vec<f64>,
    pub r: f64,
    pub p0: Vec<ComponentConfig>,
    /// Defaults to `p0` paired with the attack prior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<Vec<ComponentConfig>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "default_gamma_p")]
    pub gamma_p: f64,
    #[serde(default = "default_gamma_m")]
    pub gamma_m: f64,
    #[serde(default = "default_j_max")]
    pub j_max: usize,
    /// Optional relative covariance distance required, on top of `gamma_m`, for a merge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_c: Option<f64>,
    /// Set to false to keep every component (no pruning, merging or capping).
    #[serde(default = "yes")]
    pub reduce: bool,
    #[serde(default = "default_threshold")]
    pub detection_threshold: f64,
    #[serde(default)]
    pub attack_correction: AttackCorrection,
}

fn default_gamma_p() -> f64 {
    ReductionParams::default().prune_threshold
}

fn default_gamma_m() -> f64 {
    ReductionParams::default().merge_threshold
}

fn default_j_max() -> usize {
    ReductionParams::default().max_components
}

fn yes() -> bool {
    true
}

fn default_threshold() -> f64 {
    0.5
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            gamma_p: default_gamma_p(),
            gamma_m: default_gamma_m(),
            j_max: default_j_max(),
            gamma_c: None,
            reduce: true,
            detection_threshold: default_threshold(),
            attack_correction: AttackCorrection::default(),
        }
    }
}

/// Validated models and run parameters built from a [`ScenarioConfig`].
#[derive(Debug, Clone)]
pub struct Scenario {
    pub sys: SystemModel,
    pub attack: AttackModel,
    pub channel: ChannelModel,
    pub options: FilterOptions,
    pub initial: HybridBernoulliDensity,
    pub x0: DVector<f64>,
    pub horizon: usize,
    pub schedule: AttackSchedule,
    pub seed: u64,
    pub trials: usize,
}

fn mixture(comps: &[ComponentConfig], dim: usize, field: &str) -> Result<GaussianMixture> {
    if comps.is_empty() {
        return Err(HbfError::config(field, "needs at least one component"));
    }
    let mut out = Vec::with_capacity(comps.len());
    for (i, c) in comps.iter().enumerate() {
        let f = format!("{field}[{i}]");
        if c.mean.len() != dim {
            return Err(HbfError::config(
                format!("{f}.mean"),
                format!("expected length {dim}, got {}", c.mean.len()),
            ));
        }
        let cov = matrix_from_rows(&c.cov, &format!("{f}.cov"))?;
        if cov.shape() != (dim, dim) {
            return Err(HbfError::config(format!("{f}.cov"), format!("expected {dim}x{dim}")));
        }
        if !(c.weight >= 0.0) || !c.weight.is_finite() {
            return Err(HbfError::config(format!("{f}.weight"), "must be finite and non-negative"));
        }
        let comp = GaussianComponent::new(c.weight, DVector::from_vec(c.mean.clone()), cov)?;
        if !comp.is_psd() {
            return Err(HbfError::config(format!("{f}.cov"), "must be positive semi-definite"));
        }
        out.push(comp);
    }
    GaussianMixture::new(dim, out)?
        .normalize()
        .map_err(|_| HbfError::config(field, "weights must have a positive sum"))
}

fn bound(b: &Bound, dim: usize, field: &str) -> Result<DVector<f64>> {
    match b {
        Bound::Scalar(v) => Ok(DVector::from_element(dim, *v)),
        Bound::PerAxis(v) if v.len() == dim => Ok(DVector::from_vec(v.clone())),
        Bound::PerAxis(v) => Err(HbfError::config(field, format!("expected {dim} entries, got {}", v.len()))),
    }
}

fn probability(v: f64, field: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(HbfError::config(field, "must lie in [0, 1]"));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<Scenario> {
        let s = &self.sys;
        let sys = SystemModel::new(
            matrix_from_rows(&s.a, "sys.A")?,
            matrix_from_rows(&s.g, "sys.G")?,
            matrix_from_rows(&s.c, "sys.C")?,
            matrix_from_rows(&s.h, "sys.H")?,
            matrix_from_rows(&s.q, "sys.Q")?,
            matrix_from_rows(&s.r, "sys.R")?,
        )?;
        let (n, m, p) = (sys.n(), sys.m(), sys.p());

        let attack = AttackModel::new(self.am.p_b, self.am.p_s, mixture(&self.am.prior, m, "am.prior")?)?;

        let ch = &self.ch;
        let clutter_box = ClutterBox::new(
            bound(&ch.clutter_box.lo, p, "ch.clutter_box.lo")?,
            bound(&ch.clutter_box.hi, p, "ch.clutter_box.hi")?,
        )?;
        let channel = ChannelModel::new(ch.mode, ch.p_d, ch.p_f, ch.xi, clutter_box)?.with_outside_box(ch.outside_box);

        let f = &self.filter;
        if !(f.gamma_p >= 0.0 && f.gamma_p < 1.0) {
            return Err(HbfError::config("filter.gamma_p", "must lie in [0, 1)"));
        }
        if !(f.gamma_m >= 0.0) || !f.gamma_m.is_finite() {
            return Err(HbfError::config("filter.gamma_m", "must be finite and non-negative"));
        }
        if f.gamma_c.is_some_and(|c| !(c >= 0.0) || !c.is_finite()) {
            return Err(HbfError::config("filter.gamma_c", "must be finite and non-negative"));
        }
        if f.j_max == 0 {
            return Err(HbfError::config("filter.j_max", "must be positive"));
        }
        probability(f.detection_threshold, "filter.detection_threshold")?;
        let options = FilterOptions {
            reduction: f.reduce.then_some(ReductionParams {
                prune_threshold: f.gamma_p,
                merge_threshold: f.gamma_m,
                max_components: f.j_max,
                covariance_tolerance: f.gamma_c,
            }),
            attack_correction: f.attack_correction,
            detection_threshold: f.detection_threshold,
        };

        let init = &self.init;
        if init.x0.len() != n {
            return Err(HbfError::config("init.x0", format!("expected length {n}, got {}", init.x0.len())));
        }
        probability(init.r, "init.r")?;
        let p0 = mixture(&init.p0, n, "init.p0")?;
        let initial = match &init.p1 {
            Some(p1) => HybridBernoulliDensity::new(init.r, p0, mixture(p1, n + m, "init.p1")?, n, m)?,
            None => HybridBernoulliDensity::from_state_prior(init.r, p0, &attack)?,
        };

        if self.horizon == 0 {
            return Err(HbfError::config("horizon", "must be positive"));
        }
        let schedule = match &self.attack_schedule {
            ScheduleConfig::Deterministic { onset, duration, value } => {
                if value.len() != m {
                    return Err(HbfError::config(
                        "attack_schedule.value",
                        format!("expected length {m}, got {}", value.len()),
                    ));
                }
                AttackSchedule::Deterministic {
                    onset: *onset,
                    duration: *duration,
                    value: DVector::from_vec(value.clone()),
                }
            }
            ScheduleConfig::Markov => AttackSchedule::Markov,
        };
        if self.trials == 0 {
            return Err(HbfError::config("trials", "must be positive"));
        }

        Ok(Scenario {
            sys,
            attack,
            channel,
            options,
            initial,
            x0: DVector::from_vec(init.x0.clone()),
            horizon: self.horizon,
            schedule,
            seed: self.seed,
            trials: self.trials,
        })
    }

    /// SHA-256 of the compact JSON serialization, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }
}

/// Sets `path` (dot separated, numeric segments index arrays) inside a JSON value.
/// The right-hand side is parsed as JSON, falling back to a plain string.
pub fn apply_override(root: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HbfError::config(assignment, "override must look like key.path=value"))?;
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(HbfError::config(path, "empty path segment"));
    }
    let (last, parents) = segments.split_last().expect("split yields at least one segment");
    let mut node = root;
    for seg in parents {
        node = match node {
            serde_json::Value::Object(map) => map.get_mut(*seg),
            serde_json::Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| HbfError::config(path, format!("no such key `{seg}`")))?;
    }
    match node {
        serde_json::Value::Object(map) => {
            map.insert(last.to_string(), value);
        }
        serde_json::Value::Array(items) => {
            let slot = last
                .parse::<usize>()
                .ok()
                .and_then(|i| items.get_mut(i))
                .ok_or_else(|| HbfError::config(path, format!("no such index `{last}`")))?;
            *slot = value;
        }
        _ => return Err(HbfError::config(path, "cannot set a field on a scalar")),
    }
    Ok(())
}

/// Parses a scenario from JSON text after applying overrides in order.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<ScenarioConfig> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    Ok(serde_json::from_value(value)?)
}

pub fn load(path: &Path, overrides: &[String]) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_with_overrides(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"{
        "sys": {"A": [[0.9]], "G": [[1]], "C": [[1]], "H": [[1]], "Q": [[1]], "R": [[1]]},
        "am": {"p_b": 0.1, "p_s": 0.9, "prior": [{"weight": 1, "mean": [0], "cov": [[1]]}]},
        "ch": {"mode": "packet_substitution", "p_f": 0.3, "clutter_box": {"lo": -10, "hi": 10}},
        "horizon": 20,
        "attack_schedule": {"kind": "deterministic", "onset": 5, "duration": 5, "value": [2]},
        "init": {"x0": [0], "r": 0.1, "p0": [{"weight": 1, "mean": [0], "cov": [[1]]}]},
        "seed": 3
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ScenarioConfig::from_json_str(SCALAR).unwrap();
        let sc = cfg.build().unwrap();
        assert!(sc.sys.is_scalar());
        assert_eq!(sc.initial.p1.dim(), 2);
        assert_eq!(sc.channel.p_delivery, 1.0);
        assert_eq!(sc.trials, 100);
    }

    #[test]
    fn override_replaces_nested_value() {
        let cfg = parse_with_overrides(SCALAR, &["ch.p_f=0.5".into(), "sys.A.0.0=0.5".into()]).unwrap();
        assert_eq!(cfg.ch.p_f, 0.5);
        assert_eq!(cfg.sys.a[0][0], 0.5);
        assert_ne!(cfg.hash().unwrap(), ScenarioConfig::from_json_str(SCALAR).unwrap().hash().unwrap());
    }

    #[test]
    fn override_of_missing_parent_fails() {
        let err = parse_with_overrides(SCALAR, &["nope.p=1".into()]).unwrap_err();
        assert!(err.is_config_error());
    }

    #[test]
    fn invalid_probability_names_field() {
        let cfg = parse_with_overrides(SCALAR, &["ch.p_d=1.5".into()]).unwrap();
        let err = cfg.build().unwrap_err();
        assert!(err.to_string().contains("ch.p_d"), "{err}");
        assert!(err.is_config_error());
    }

    #[test]
    fn wrong_shape_names_field() {
        let cfg = parse_with_overrides(SCALAR, &["sys.H=[[0]]".into()]).unwrap();
        let err = cfg.build().unwrap_err();
        assert!(err.to_string().contains("sys.H"), "{err}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        assert!(parse_with_overrides(SCALAR, &["ch.bogus=1".into()]).is_err());
    }
}
