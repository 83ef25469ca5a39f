//! With the attack switched off (r = 0, no births) and a perfect channel, the
//! no-attack mixture collapses to one Gaussian that follows a plain Kalman filter.

use hbf::filter::correct;
use hbf::filter::predict;
use hbf::sim::{simulate_truth, trial_rng};
use hbf::config;

fn main() -> hbf::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/benchmark.json");
    let overrides = ["init.r=0", "am.p_b=0", "ch.mode=\"packet_substitution\"", "ch.p_d=1", "ch.p_f=0"]
        .map(String::from);
    let sc = config::load(path.as_ref(), &overrides)?.build()?;
    let truth = simulate_truth(&sc, &mut trial_rng(sc.seed, 0))?;

    let mut d = sc.initial.clone();
    let mut kf_m = d.p0.components()[0].mean.clone();
    let mut kf_p = d.p0.components()[0].cov.clone();
    let (a, c) = (&sc.sys.a, &sc.sys.c);
    let mut worst: f64 = 0.0;
    for (k, z) in truth.z.iter().take(200).enumerate() {
        if k > 0 {
            d = predict(&d, &sc.sys, &sc.attack, &sc.options)?;
            kf_m = a * &kf_m;
            kf_p = a * &kf_p * a.transpose() + &sc.sys.q;
        }
        d = correct(&d, z, &sc.sys, &sc.channel, &sc.options)?;
        let s = c * &kf_p * c.transpose() + &sc.sys.r;
        let gain = &kf_p * c.transpose() * s.try_inverse().expect("innovation covariance");
        kf_m = &kf_m + &gain * (&z[0] - c * &kf_m);
        kf_p = &kf_p - &gain * c * &kf_p;
        let comp = &d.p0.components()[0];
        worst = worst.max((&comp.mean - &kf_m).amax()).max((&comp.cov - &kf_p).amax());
    }
    println!("r stays at {}, p0 has {} component(s)", d.r, d.p0.len());
    println!("largest deviation from the Kalman filter over 200 steps: {worst:e}");
    Ok(())
}
