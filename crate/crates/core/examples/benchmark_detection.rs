//! Monte-Carlo detection study on the five-state benchmark.

use hbf::config;
use hbf::sim::run_monte_carlo;

fn main() -> hbf::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/benchmark.json");
    let sc = config::load(path.as_ref(), &[])?.build()?;
    let stats = run_monte_carlo(&sc, sc.trials)?;
    for k in [0, 100, 149, 150, 151, 155, 250, 349, 350, 351, 355, 450] {
        println!(
            "k={k:3} mean r={:.3} detected={:.2} rmse_x1={:.3} rmse_a={:?}",
            stats.mean_r[k],
            stats.detection_rate[k],
            stats.rmse_x[k][0],
            stats.rmse_a[k].iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
    Ok(())
}
