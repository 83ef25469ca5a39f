//! One trial of the scalar packet-substitution scenario, printed step by step.

use hbf::config;
use hbf::sim::run_trial;

fn main() -> hbf::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/scalar_ps.json");
    let sc = config::load(path.as_ref(), &[])?.build()?;
    let (truth, trace) = run_trial(&sc, 0)?;
    println!(" k  attack   r      x      x_hat  a_hat   J0    J1");
    for k in 0..sc.horizon {
        let est = &trace.estimates[k];
        let a = truth.attack[k].as_ref().map_or(String::from("   -  "), |a| format!("{:6.2}", a[0]));
        let a_hat = est.attack_estimate.as_ref().map_or(String::from("   -  "), |a| format!("{:6.2}", a[0]));
        let fake = if truth.num_fake[k] > 0 { " fake" } else { "" };
        println!(
            "{k:2} {a} {:6.3} {:6.2} {:6.2} {a_hat} {:5} {:5}{fake}",
            est.r, truth.x[k][0], est.state_estimate[0], trace.j0[k], trace.j1[k]
        );
    }
    Ok(())
}
