//! Compare the mixture filter with the dense-grid recursion on both scalar scenarios.

use hbf::cli::{oracle_rows, ORACLE_TOLERANCE};
use hbf::config;
use hbf::oracle::{GridOptions, OracleRow};

fn main() -> hbf::Result<()> {
    for name in ["scalar_ps", "scalar_epi"] {
        let path = format!("{}/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
        let sc = config::load(path.as_ref(), &[])?.build()?;
        let start = std::time::Instant::now();
        let rows = oracle_rows(&sc, &GridOptions::default())?;
        let worst = rows.iter().max_by(|a, b| a.max_delta().total_cmp(&b.max_delta())).unwrap();
        println!(
            "{name}: {} steps in {:.1?}, worst delta {:.2e} at k={} ({})",
            rows.len(),
            start.elapsed(),
            worst.max_delta(),
            worst.k,
            if rows.iter().all(|r: &OracleRow| r.max_delta() <= ORACLE_TOLERANCE) { "ok" } else { "mismatch" }
        );
    }
    Ok(())
}
