//! Build a small mixture, evaluate it, and reduce it with pruning and merging.

use hbf::{GaussianComponent, GaussianMixture, ReductionParams};
use nalgebra::{DMatrix, DVector};

fn comp(w: f64, m: [f64; 2], var: f64) -> GaussianComponent {
    GaussianComponent::new(w, DVector::from_row_slice(&m), DMatrix::identity(2, 2) * var).unwrap()
}

fn main() -> hbf::Result<()> {
    let gm = GaussianMixture::new(
        2,
        vec![
            comp(0.50, [0.0, 0.0], 1.0),
            comp(0.30, [0.2, -0.1], 1.1),
            comp(0.1995, [6.0, 6.0], 0.5),
            comp(0.0005, [-9.0, 4.0], 2.0),
        ],
    )?;
    let (mean, cov) = gm.moments();
    println!("{} components, density at origin {:.5}", gm.len(), gm.eval(&DVector::zeros(2))?);
    println!("mixture mean {:.4?}, trace cov {:.4}", mean.as_slice(), cov.trace());

    let reduced = gm.prune_merge(&ReductionParams::default())?;
    println!("after reduction: {} components", reduced.len());
    for c in reduced.components() {
        println!("  w={:.4} m={:.3?} P11={:.4}", c.weight, c.mean.as_slice(), c.cov[(0, 0)]);
    }
    Ok(())
}
