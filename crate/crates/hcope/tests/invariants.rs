//! Property-based checks of the core numeric invariants.

use proptest::prelude::*;

use hcope::bootstrap::{lower_bound, resample_indices, BootstrapConfig, BootstrapMethod};
use hcope::env::{sample_dataset, TabularEnv};
use hcope::estimator::PreparedEstimator;
use hcope::importance::IsData;
use hcope::mdp::{denormalize_return, normalize_return, MdpSpec};
use hcope::policy::{Policy, TabularPolicy};
use hcope::seed;
use hcope::tabular::micro;
use hcope::Result;

proptest! {
    #[test]
    fn return_normalization_round_trips(
        gamma in 0.5f64..1.0,
        horizon in 1usize..6,
        r_min in -10.0f64..0.0,
        width in 0.1f64..10.0,
        frac in 0.0f64..1.0,
    ) {
        let spec = MdpSpec::new(gamma, horizon, r_min, r_min + width).unwrap();
        let g = spec.g_min() + frac * (spec.g_max() - spec.g_min());
        let norm = normalize_return(g, &spec).unwrap();
        prop_assert!((0.0..=1.0).contains(&norm));
        let back = denormalize_return(norm, &spec).unwrap();
        prop_assert!((back - g).abs() < 1e-9);
    }

    #[test]
    fn self_normalized_estimates_stay_in_return_range(
        data_seed in 0u64..5000,
        n in 2usize..15,
        rows in proptest::collection::vec(
            proptest::collection::vec(0.05f64..1.0, 2), 3),
    ) {
        let case = micro::loop3();
        let spec = case.mdp.spec();
        let env = TabularEnv::new(case.mdp, "micro");
        let pi_b = Policy::Tabular(case.pi_b);
        // Arbitrary full-support evaluation policy.
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let pi_e = Policy::Tabular(TabularPolicy::new(rows).unwrap());
        let ds = sample_dataset(&env, &pi_b, "b", n, data_seed).unwrap();
        let data = IsData::prepare(&ds, &pi_e, &pi_b, &spec).unwrap();
        let idx = data.all_indices();
        for est in [data.wis(&idx).unwrap(), data.pdwis(&idx).unwrap()] {
            prop_assert!(est >= spec.g_min() - 1e-9 && est <= spec.g_max() + 1e-9,
                "estimate {est} outside [{}, {}]", spec.g_min(), spec.g_max());
        }
    }

    #[test]
    fn resample_indices_are_in_range(n in 1usize..200, s in 0u64..1000) {
        let idx = resample_indices(n, &mut seed::rng(s, &[1]));
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.iter().all(|&i| i < n));
    }

    #[test]
    fn derived_streams_are_reproducible(s in any::<u64>(), path in proptest::collection::vec(any::<u64>(), 0..4)) {
        prop_assert_eq!(seed::derive(s, &path), seed::derive(s, &path));
        use rand::RngCore;
        let mut a = seed::rng(s, &path);
        let mut b = seed::rng(s, &path);
        prop_assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn percentile_bound_monotone_in_delta(
        scale in 0.1f64..10.0,
        offset in -5.0f64..5.0,
        s in 0u64..500,
    ) {
        struct Stub {
            scale: f64,
            offset: f64,
        }
        impl PreparedEstimator for Stub {
            fn name(&self) -> String {
                "stub".into()
            }
            fn n(&self) -> usize {
                8
            }
            fn estimate(&self, idx: &[usize], _path: &[u64]) -> Result<f64> {
                let mean = idx.iter().map(|&i| i as f64).sum::<f64>() / idx.len() as f64;
                Ok(self.scale * mean + self.offset)
            }
        }
        let stub = Stub { scale, offset };
        let mut prev = f64::NEG_INFINITY;
        for delta in [0.02, 0.05, 0.25, 0.6] {
            let cfg = BootstrapConfig::new(100, delta, BootstrapMethod::Percentile, s).unwrap();
            let report = lower_bound(&stub, &cfg).unwrap();
            prop_assert!(report.lower_bound >= prev);
            prev = report.lower_bound;
        }
    }
}
