//! Property tests for the structural invariants that hold for arbitrary
//! inputs, not just the worked examples.

use proptest::prelude::*;

use strativ::data::{ColumnMap, Dataset};
use strativ::stratify;

fn finite_f64() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL.prop_filter("finite", |v| v.is_finite() && v.abs() < 1e100)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Saving and reloading a dataset reproduces every column bit for bit.
    #[test]
    fn dataset_roundtrip_is_bit_identical(
        rows in prop::collection::vec((finite_f64(), finite_f64(), finite_f64()), 1..40)
    ) {
        let z: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let x: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let data = Dataset::new(z, x, y).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        data.save(&path).unwrap();
        let back = Dataset::load(&path, &ColumnMap::default(), None).unwrap();
        prop_assert_eq!(data, back);
    }

    /// Every individual lands in exactly one stratum or is excluded, each
    /// stratum holds exactly floor(n/K) members, and the assignment is a
    /// pure function of its inputs.
    #[test]
    fn stratification_partitions_and_is_deterministic(
        pairs in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 4..160),
        k in 2usize..6,
    ) {
        prop_assume!(pairs.len() >= k);
        let z: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let x: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let y = x.clone();
        let data = Dataset::new(z, x, y).unwrap();
        let n = data.len();

        let a = stratify::doubly_ranked_stratify(&data, k, k).unwrap();
        let b = stratify::doubly_ranked_stratify(&data, k, k).unwrap();
        prop_assert_eq!(&a, &b);

        let assigned = a.assignment.iter().filter(|v| v.is_some()).count();
        prop_assert_eq!(assigned + a.excluded_count, n);
        let rows = a.strata_rows();
        for r in &rows {
            prop_assert_eq!(r.len(), n / k);
        }
    }

    /// Posterior inclusion probability rows are stochastic for any inputs.
    #[test]
    fn ser_rows_are_stochastic(
        entries in prop::collection::vec(-10.0f64..10.0, 12),
        response in prop::collection::vec(-10.0f64..10.0, 4),
        sigma0 in 0.0f64..25.0,
    ) {
        let design = nalgebra::DMatrix::from_row_slice(4, 3, &entries);
        let prior = vec![1.0 / 3.0; 3];
        let ser = strativ::susie::single_effect_regression(&design, &response, sigma0, &prior)
            .unwrap();
        let total: f64 = ser.pi.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        prop_assert!(ser.pi.iter().all(|p| *p >= 0.0));
        prop_assert!(ser.sigma.iter().all(|s| *s >= 0.0));
    }

    /// The Wald identity beta * alpha = theta holds exactly for any
    /// summaries the pipeline produces.
    #[test]
    fn wald_identity_exact(
        seed in 0u64..500,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let n = 200;
        let mut z = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let zi: f64 = rng.sample(rand_distr::StandardNormal);
            let e: f64 = rng.sample(rand_distr::StandardNormal);
            let ey: f64 = rng.sample(rand_distr::StandardNormal);
            z.push(zi);
            x.push(0.5 * zi + e);
            y.push(0.3 * (0.5 * zi + e) + ey);
        }
        let data = Dataset::new(z, x, y).unwrap();
        let assignment = stratify::doubly_ranked_stratify(&data, 4, 4).unwrap();
        let summaries = strativ::summary::stratum_associations(
            &data,
            &assignment,
            strativ::data::SeOrder::Second,
            4.0,
        )
        .unwrap();
        for s in &summaries {
            // the stored ratio is the definition, bit for bit
            prop_assert_eq!(s.beta_hat, s.theta_hat / s.alpha_hat);
            // the product identity holds to one rounding of the division
            let product = s.beta_hat * s.alpha_hat;
            prop_assert!((product - s.theta_hat).abs() <= 2.0 * f64::EPSILON * s.theta_hat.abs());
        }
    }
}
