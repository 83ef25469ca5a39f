mod common;

use hbf::filter::{correct, predict, FilterOptions};
use hbf::{ChannelMode, GaussianComponent, GaussianMixture, ReductionParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_density, random_models};

fn scalar_mixture() -> impl Strategy<Value = GaussianMixture> {
    prop::collection::vec((1e-6..1.0f64, -20.0..20.0f64, 0.01..10.0f64), 1..40).prop_map(|parts| {
        let comps = parts
            .into_iter()
            .map(|(w, m, v)| {
                GaussianComponent::new(w, DVector::from_element(1, m), DMatrix::from_element(1, 1, v)).unwrap()
            })
            .collect();
        GaussianMixture::new(1, comps).unwrap()
    })
}

fn reduction() -> impl Strategy<Value = ReductionParams> {
    (0.0..0.05f64, 0.0..4.0f64, 1usize..30, prop::option::of(0.0..1.0f64)).prop_map(|(p, m, j, c)| ReductionParams {
        prune_threshold: p,
        merge_threshold: m,
        max_components: j,
        covariance_tolerance: c,
    })
}

proptest! {
    #[test]
    fn reduction_output_is_a_normalized_capped_mixture(gm in scalar_mixture(), params in reduction()) {
        let out = gm.prune_merge(&params).unwrap();
        prop_assert!(!out.is_empty());
        prop_assert!(out.len() <= params.max_components.min(gm.len()));
        prop_assert!((out.total_weight() - 1.0).abs() < 1e-12);
        let w = out.weights();
        prop_assert!(w.windows(2).all(|p| p[0] >= p[1]));
        prop_assert!(out.components().iter().all(|c| c.cov[(0, 0)] > 0.0));
    }

    #[test]
    fn merging_without_pruning_or_capping_keeps_moments(gm in scalar_mixture(), gate in 0.0..4.0f64) {
        let gm = gm.normalize().unwrap();
        let params = ReductionParams {
            prune_threshold: 0.0,
            merge_threshold: gate,
            max_components: usize::MAX,
            covariance_tolerance: None,
        };
        let (m0, p0) = gm.moments();
        let (m1, p1) = gm.prune_merge(&params).unwrap().moments();
        prop_assert!((m0[0] - m1[0]).abs() < 1e-9 * (1.0 + m0[0].abs()));
        prop_assert!((p0[(0, 0)] - p1[(0, 0)]).abs() < 1e-9 * (1.0 + p0[(0, 0)]));
    }

    #[test]
    fn steps_keep_the_density_valid(seed in any::<u64>(), injection in any::<bool>(), packets in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mode = if injection { ChannelMode::ExtraPacketInjection } else { ChannelMode::PacketSubstitution };
        let (sys, attack, channel) = random_models(&mut rng, mode);
        let d = random_density(&mut rng, sys.n(), sys.m(), 2, 2);
        let opts = FilterOptions::default();
        let pred = predict(&d, &sys, &attack, &opts).unwrap();
        prop_assert!(pred.check_invariants(1e-9).is_ok());
        let count = if injection { packets } else { packets.min(1) };
        let z: Vec<DVector<f64>> = (0..count)
            .map(|i| DVector::from_fn(sys.p(), |j, _| ((i * 7 + j * 3) % 11) as f64 - 5.0))
            .collect();
        let post = correct(&pred, &z, &sys, &channel, &opts).unwrap();
        prop_assert!(post.check_invariants(1e-9).is_ok());
    }

    #[test]
    fn injection_posterior_ignores_packet_order(seed in any::<u64>(), shift in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (sys, _, channel) = random_models(&mut rng, ChannelMode::ExtraPacketInjection);
        let d = random_density(&mut rng, sys.n(), sys.m(), 2, 2);
        let opts = FilterOptions { reduction: None, ..FilterOptions::default() };
        let z: Vec<DVector<f64>> = (0..3).map(|i| DVector::from_fn(sys.p(), |j, _| i as f64 * 1.5 - j as f64)).collect();
        let mut rotated = z.clone();
        rotated.rotate_left(shift);
        let a = correct(&d, &z, &sys, &channel, &opts).unwrap();
        let b = correct(&d, &rotated, &sys, &channel, &opts).unwrap();
        prop_assert!((a.r - b.r).abs() < 1e-12);
        for (ga, gb) in [(&a.p0, &b.p0), (&a.p1, &b.p1)] {
            let (ma, pa) = ga.moments();
            let (mb, pb) = gb.moments();
            prop_assert!((ma - mb).amax() < 1e-9);
            prop_assert!((pa - pb).amax() < 1e-9);
            let mut wa = ga.weights();
            let mut wb = gb.weights();
            wa.sort_by(f64::total_cmp);
            wb.sort_by(f64::total_cmp);
            prop_assert!(wa.iter().zip(&wb).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }
}
