use featpose::estimator::argmin;
use featpose::pose_pdf;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn pdf_is_normalized_and_monotone(e in prop::collection::vec(0.0f64..2.0, 1..200), tau in 0.01f64..1000.0) {
        let p = pose_pdf(&e, tau).unwrap();
        prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for i in 0..e.len() {
            for j in 0..e.len() {
                if e[i] < e[j] {
                    prop_assert!(p.probs[i] >= p.probs[j]);
                }
            }
        }
    }

    #[test]
    fn temperature_and_error_scale_are_dual(e in prop::collection::vec(0.0f64..1.0, 2..100), tau in 0.1f64..100.0, c in 0.1f64..10.0) {
        let p = pose_pdf(&e, tau).unwrap();
        let scaled: Vec<f64> = e.iter().map(|x| x * c).collect();
        let q = pose_pdf(&scaled, tau / c).unwrap();
        for (a, b) in p.probs.iter().zip(&q.probs) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn argmax_does_not_depend_on_temperature(e in prop::collection::vec(0.0f64..1.0, 1..100), tau in 1e-3f64..1e5) {
        prop_assert_eq!(pose_pdf(&e, tau).unwrap().argmax(), argmin(&e));
    }

    #[test]
    fn huge_errors_do_not_underflow(e in prop::collection::vec(1e6f64..1e7, 2..50)) {
        let p = pose_pdf(&e, 100.0).unwrap();
        prop_assert!(p.probs.iter().all(|v| v.is_finite()));
        prop_assert!(p.probs[argmin(&e)] > 0.0);
    }
}

#[test]
fn uniform_pdf_draws_are_binomial_per_bin() {
    let p = pose_pdf(&vec![0.25; 108], 100.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws = 108_000;
    let mut counts = vec![0usize; 108];
    for _ in 0..draws {
        counts[p.sample_index(&mut rng)] += 1;
    }
    let mean = draws as f64 / 108.0;
    let sd = (draws as f64 * (1.0 / 108.0) * (1.0 - 1.0 / 108.0)).sqrt();
    for (k, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() < 5.0 * sd, "bin {k}: {c}");
    }
}

#[test]
fn inverse_sampling_matches_the_pdf() {
    let e: Vec<f64> = (0..50).map(|i| ((i * 13) % 17) as f64 * 0.01).collect();
    let p = pose_pdf(&e, 40.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let draws = 100_000;
    let mut counts = vec![0usize; e.len()];
    for _ in 0..draws {
        counts[p.sample_index(&mut rng)] += 1;
    }
    let tv: f64 = 0.5 * counts.iter().zip(&p.probs).map(|(&c, &q)| (c as f64 / draws as f64 - q).abs()).sum::<f64>();
    assert!(tv < 0.02, "{tv}");
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(pose_pdf(&[], 1.0).is_err());
    assert!(pose_pdf(&[0.1], 0.0).is_err());
    assert!(pose_pdf(&[0.1, f64::NAN], 1.0).is_err());
}
