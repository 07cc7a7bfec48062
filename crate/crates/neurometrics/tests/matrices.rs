use diffcore::SeededRng;
use nalgebra::DMatrix;
use neurometrics::{
    coherence_matrix, covariance_matrix, dfa_exponent, eig_entropy, matrix_distance, psd_jsd, welch_psd,
    MetricError, PsdEstimate, WelchConfig,
};
use proptest::prelude::*;

const FS: f64 = 100.0;

fn white_rows(c: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = SeededRng::new(seed, 1);
    (0..c).map(|_| (0..n).map(|_| r.normal()).collect()).collect()
}

#[test]
fn white_channels_have_near_maximal_entropy() {
    let cov = covariance_matrix(&white_rows(8, 20_000, 1)).unwrap();
    assert!((eig_entropy(&cov) - 1.0).abs() < 0.05);
    assert_eq!(cov, cov.transpose());
}

#[test]
fn identical_channels_have_zero_entropy() {
    let row = white_rows(1, 1000, 2).remove(0);
    let cov = covariance_matrix(&vec![row; 5]).unwrap();
    assert!(eig_entropy(&cov) < 1e-9);
}

#[test]
fn covariance_needs_two_samples() {
    assert!(matches!(covariance_matrix(&[vec![1.0]]), Err(MetricError::Length(_))));
}

#[test]
fn duplicated_channel_is_fully_coherent() {
    let mut rows = white_rows(2, 3000, 3);
    rows.push(rows[0].clone());
    let coh = coherence_matrix(&rows, FS, &WelchConfig::default(), (1.0, 45.0)).unwrap();
    assert!((coh[(0, 2)] - 1.0).abs() < 1e-6);
    assert_eq!(coh[(1, 1)], 1.0);
}

#[test]
fn independent_channels_are_weakly_coherent() {
    let coh = coherence_matrix(&white_rows(6, 3000, 4), FS, &WelchConfig::default(), (1.0, 45.0)).unwrap();
    let mut off = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            if i != j {
                off += coh[(i, j)];
            }
        }
    }
    assert!(off / 30.0 < 0.2);
}

/// Monte-Carlo mean of the DFA exponent over 50 seeds of 60 s each.
fn dfa_over_seeds(make: impl Fn(u64) -> Vec<f64>, target: f64, tol: f64) {
    let mean = (0..50).map(|s| dfa_exponent(&make(s), FS).unwrap()).sum::<f64>() / 50.0;
    assert!((mean - target).abs() < tol, "mean exponent {mean}");
}

#[test]
fn dfa_of_white_noise_is_one_half() {
    dfa_over_seeds(|s| white_rows(1, 6000, 100 + s).remove(0), 0.5, 0.1);
}

#[test]
fn dfa_of_random_walk_is_three_halves() {
    dfa_over_seeds(
        |s| {
            let mut acc = 0.0;
            white_rows(1, 6000, 200 + s)
                .remove(0)
                .into_iter()
                .map(|v| {
                    acc += v;
                    acc
                })
                .collect()
        },
        1.5,
        0.15,
    );
}

#[test]
fn dfa_of_pink_noise_is_one() {
    dfa_over_seeds(
        |s| megsynth::pink_noise(6000, FS, 1.0, &mut SeededRng::new(300 + s, 0)),
        1.0,
        0.15,
    );
}

#[test]
fn dfa_needs_four_seconds() {
    assert!(matches!(dfa_exponent(&vec![0.0; 399], FS), Err(MetricError::Length(_))));
}

#[test]
fn matrix_distance_examples() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
    assert_eq!(matrix_distance(&a, &a).unwrap(), 0.0);
    assert!((matrix_distance(&a, &DMatrix::zeros(2, 2)).unwrap() - 2.0).abs() < 1e-15);
    assert_eq!(matrix_distance(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 2)).unwrap(), 0.0);
    assert!(matches!(
        matrix_distance(&a, &DMatrix::zeros(3, 3)),
        Err(MetricError::Dimension(_))
    ));
}

fn psd_from(values: Vec<f64>) -> PsdEstimate {
    PsdEstimate {
        freqs: (0..values.len()).map(|k| k as f64 * 0.5).collect(),
        power: vec![values],
        fs: FS,
        config: WelchConfig::default(),
    }
}

/// JSD written as the mean KL divergence to the midpoint, in bits.
fn jsd_oracle(p: &[f64], q: &[f64]) -> f64 {
    let norm = |v: &[f64]| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let (p, q) = (norm(p), norm(q));
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| (a + b) / 2.0).collect();
    let kl = |a: &[f64]| -> f64 {
        a.iter()
            .zip(&m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).ln())
            .sum::<f64>()
            / std::f64::consts::LN_2
    };
    0.5 * kl(&p) + 0.5 * kl(&q)
}

#[test]
fn jsd_examples() {
    let mut r = SeededRng::new(5, 0);
    let p: Vec<f64> = (0..101).map(|_| r.uniform(0.1, 2.0)).collect();
    let q: Vec<f64> = (0..101).map(|_| r.uniform(0.1, 2.0)).collect();
    assert_eq!(psd_jsd(&psd_from(p.clone()), &psd_from(p.clone())).unwrap(), 0.0);
    // bins 2..=90 are the 1–45 Hz range on a 0.5 Hz grid
    let js = psd_jsd(&psd_from(p.clone()), &psd_from(q.clone())).unwrap();
    assert!((js - jsd_oracle(&p[2..=90], &q[2..=90])).abs() < 1e-9);
    let low: Vec<f64> = (0..101).map(|k| if k < 40 { 1.0 } else { 0.0 }).collect();
    let high: Vec<f64> = (0..101).map(|k| if k >= 40 { 1.0 } else { 0.0 }).collect();
    assert!((psd_jsd(&psd_from(low), &psd_from(high)).unwrap() - 1.0).abs() < 1e-12);
    let other = PsdEstimate {
        freqs: (0..51).map(|k| k as f64).collect(),
        power: vec![vec![1.0; 51]],
        fs: FS,
        config: WelchConfig::default(),
    };
    assert!(matches!(psd_jsd(&psd_from(p), &other), Err(MetricError::Grid(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_distance_is_a_bounded_symmetric_dissimilarity(seed in 0u64..10_000, n in 1usize..6) {
        let mut r = SeededRng::new(seed, 0);
        let a = DMatrix::from_fn(n, n, |_, _| r.normal());
        let b = DMatrix::from_fn(n, n, |_, _| r.normal());
        let d = matrix_distance(&a, &b).unwrap();
        prop_assert_eq!(d, matrix_distance(&b, &a).unwrap());
        prop_assert!((0.0..=2.0 + 1e-12).contains(&d));
        prop_assert_eq!(matrix_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn jsd_is_bounded_and_symmetric(seed in 0u64..10_000) {
        let mut r = SeededRng::new(seed, 1);
        let p: Vec<f64> = (0..101).map(|_| r.uniform(0.0, 1.0).powi(3)).collect();
        let q: Vec<f64> = (0..101).map(|_| r.uniform(0.0, 1.0).powi(3)).collect();
        let (a, b) = (psd_from(p), psd_from(q));
        let d = psd_jsd(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - psd_jsd(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert!(psd_jsd(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn coherence_lies_in_the_unit_interval(seed in 0u64..10_000, mix in 0.0f64..1.0) {
        let mut rows = white_rows(3, 800, seed);
        let shared = rows[0].clone();
        rows[1].iter_mut().zip(&shared).for_each(|(v, s)| *v = mix * s + (1.0 - mix) * *v);
        let coh = coherence_matrix(&rows, FS, &WelchConfig::default(), (1.0, 45.0)).unwrap();
        prop_assert!(coh.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(coh.clone(), coh.transpose());
    }

    #[test]
    fn psd_values_are_nonnegative(seed in 0u64..10_000) {
        let psd = welch_psd(&white_rows(2, 600, seed), FS, &WelchConfig::default()).unwrap();
        prop_assert!(psd.power.iter().flatten().all(|p| *p >= 0.0));
        prop_assert!(psd.freqs.windows(2).all(|w| w[1] > w[0]));
    }
}
