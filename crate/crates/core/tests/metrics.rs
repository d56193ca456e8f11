use featpose::ingest::fit_pca;
use featpose::metrics::{angular_error, depth_error, kl_divergence, Axis, PoseHistogram};
use featpose::FeatureMap;
use proptest::prelude::*;
use std::f64::consts::TAU;

fn hist(v: Vec<f64>) -> PoseHistogram {
    PoseHistogram::from_probs(Axis::Theta, (0.0, TAU), v).unwrap()
}

proptest! {
    #[test]
    fn kl_is_non_negative_and_zero_on_identity(p in prop::collection::vec(0.0f64..1.0, 24), q in prop::collection::vec(0.0f64..1.0, 24)) {
        prop_assume!(p.iter().sum::<f64>() > 0.0 && q.iter().sum::<f64>() > 0.0);
        let (hp, hq) = (hist(p), hist(q));
        prop_assert!(kl_divergence(&hp, &hq).unwrap() >= 0.0);
        prop_assert!(kl_divergence(&hp, &hp).unwrap().abs() < 1e-12);
    }

    #[test]
    fn angular_error_is_a_metric_on_the_circle(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0) {
        let (ab, ba) = (angular_error(a, b), angular_error(b, a));
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!((0.0..=180.0).contains(&ab));
        prop_assert!(ab <= angular_error(a, c) + angular_error(c, b) + 1e-9);
        prop_assert!(angular_error(a, a + TAU) < 1e-9);
    }

    #[test]
    fn depth_error_ignores_constant_offsets(vals in prop::collection::vec(1.0f32..5.0, 16), off in -3.0f32..3.0, std in 0.1f64..2.0) {
        let gt = FeatureMap::from_vec(4, 4, 1, vals.clone()).unwrap();
        let pred = FeatureMap::from_vec(4, 4, 1, vals.iter().map(|v| v + off).collect()).unwrap();
        let mask = vec![true; 16];
        prop_assert!(depth_error(&pred, &gt, &mask, std).unwrap().unwrap() < 1e-5);
    }
}

/// Cyclic Jacobi eigenvalue iteration, independent of the library eigensolver.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let (c, s) = (1.0 / (t * t + 1.0).sqrt(), t / (t * t + 1.0).sqrt());
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                #[allow(clippy::needless_range_loop)]
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    d.sort_by(|x, y| y.total_cmp(x));
    d
}

#[test]
fn pca_explained_variance_matches_an_independent_eigensolver() {
    let (h, w, c) = (10, 10, 7);
    let data: Vec<f32> = (0..h * w * c)
        .map(|i| {
            let (p, ch) = ((i / c) as f32, (i % c) as f32);
            (p * 0.37 + ch).sin() * (ch + 1.0) + (p * 0.11).cos() * 0.5
        })
        .collect();
    let map = FeatureMap::from_vec(h, w, c, data.clone()).unwrap();
    let fit = fit_pca(&[(&map, None)]).unwrap();

    let n = (h * w) as f64;
    let mean: Vec<f64> = (0..c).map(|j| data.iter().skip(j).step_by(c).map(|&v| v as f64).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; c]; c];
    for px in data.chunks_exact(c) {
        for i in 0..c {
            for j in 0..c {
                cov[i][j] += (px[i] as f64 - mean[i]) * (px[j] as f64 - mean[j]) / n;
            }
        }
    }
    let eig = jacobi_eigenvalues(cov);
    let expected = eig[..3].iter().sum::<f64>() / eig.iter().sum::<f64>();
    assert!((fit.explained_variance - expected).abs() < 1e-6, "{} vs {expected}", fit.explained_variance);
    for (a, b) in fit.eigenvalues.iter().zip(&eig) {
        assert!((a - b).abs() < 1e-6 * eig[0].max(1.0));
    }
    let projected = fit.project(&map, None).unwrap();
    let var0 = projected.data().chunks_exact(3).map(|p| (p[0] as f64).powi(2)).sum::<f64>() / n;
    assert!((var0 - eig[0]).abs() < 1e-3 * eig[0]);
}
