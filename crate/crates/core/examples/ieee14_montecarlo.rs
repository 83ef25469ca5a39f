//! Swing-equation scenario with heavy clutter. Pass a trial count to shorten the run:
//! `cargo run --release --example ieee14_montecarlo -- 50`.

use hbf::config;
use hbf::sim::run_monte_carlo;

fn main() -> hbf::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/ieee14.json");
    let sc = config::load(path.as_ref(), &[])?.build()?;
    let trials = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(sc.trials);
    let stats = run_monte_carlo(&sc, trials)?;
    for k in (0..sc.horizon).step_by(25) {
        let mean_x: f64 = stats.rmse_x[k].iter().sum::<f64>() / stats.rmse_x[k].len() as f64;
        println!(
            "k={k:3} attacked={:.2} mean r={:.3} detected={:.2} avg rmse_x={mean_x:.4} rmse_a={:.4?}",
            stats.true_attack_rate[k], stats.mean_r[k], stats.detection_rate[k], stats.rmse_a[k].as_slice()
        );
    }
    Ok(())
}
