//! Scalar extra-packet-injection trial: the measurement set holds the true packet
//! (when delivered) plus Poisson clutter.

use hbf::config;
use hbf::sim::run_trial;

fn main() -> hbf::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/scalar_epi.json");
    let sc = config::load(path.as_ref(), &[])?.build()?;
    let (truth, trace) = run_trial(&sc, 0)?;
    for k in 0..sc.horizon {
        let packets: Vec<String> = truth.z[k].iter().map(|y| format!("{:6.2}", y[0])).collect();
        println!(
            "k={k:2} attacked={} r={:.3} detected={} Z=[{}]",
            u8::from(truth.attack[k].is_some()),
            trace.estimates[k].r,
            u8::from(trace.estimates[k].attack_detected),
            packets.join(" ")
        );
    }
    Ok(())
}
