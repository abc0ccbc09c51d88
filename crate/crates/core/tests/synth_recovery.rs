use dictlearn::eval::mean_l0;
use dictlearn::store::{read_dataset, DatasetMeta, HookPoint};
use dictlearn::synth::{generate, mmcs, GroundTruthDictionary, SyntheticConfig};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn config(n_gt: usize, d: usize, n_samples: usize, avg_active: f64, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n_gt,
        d,
        n_samples,
        avg_active,
        coeff_scale: 1.0,
        noise_sigma: 0.0,
        seed,
    }
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

#[test]
fn mean_active_count_matches_the_binomial_mean() {
    let data = generate(&config(512, 8, 10_000, 5.0, 1)).unwrap();
    let l0 = data.codes.mean_l0();
    assert!((4.5..=5.5).contains(&l0), "mean L0 {l0}");
    let dense: Vec<_> = (0..data.codes.n_rows()).map(|i| data.codes.dense_row(i)).collect();
    let streamed = mean_l0(dense.iter().map(|r| r.view())).unwrap();
    assert!((streamed - l0).abs() < 1e-12);
    assert!((4.0..=6.0).contains(&streamed));
}

#[test]
fn coefficients_are_exponential_with_the_configured_mean() {
    let mut cfg = config(64, 4, 20_000, 4.0, 2);
    cfg.coeff_scale = 2.5;
    let data = generate(&cfg).unwrap();
    let v = &data.codes.values;
    assert!(v.iter().all(|&a| a >= 0.0));
    let mean = v.iter().map(|&a| f64::from(a)).sum::<f64>() / v.len() as f64;
    // ~80k draws, std of the mean ≈ 2.5 / sqrt(80k) ≈ 0.009
    assert!((mean - 2.5).abs() < 0.05, "coefficient mean {mean}");
}

#[test]
fn noise_free_decode_with_truth_reproduces_samples() {
    let data = generate(&config(32, 16, 500, 3.0, 3)).unwrap();
    let dict = data.truth.to_dictionary();
    for i in 0..data.dataset.len() {
        let x = data.dataset.row(i);
        let x_hat = dict.decode(data.codes.dense_row(i).view()).unwrap();
        let err = (&x_hat - &x).mapv(|v| v * v).sum().sqrt();
        let norm = x.mapv(|v| v * v).sum().sqrt().max(1e-12);
        assert!(err / norm < 1e-5 || err < 1e-5, "row {i}: relative error {}", err / norm);
    }
}

#[test]
fn noise_adds_the_configured_variance() {
    let mut cfg = config(4, 32, 4000, 1.0, 4);
    cfg.noise_sigma = 0.3;
    let noisy = generate(&cfg).unwrap();
    let clean = noisy.truth.to_dictionary();
    let mut sq = 0.0;
    for i in 0..noisy.dataset.len() {
        let x_hat = clean.decode(noisy.codes.dense_row(i).view()).unwrap();
        sq += (&noisy.dataset.row(i) - &x_hat).mapv(|v| f64::from(v).powi(2)).sum();
    }
    let var = sq / (4000.0 * 32.0);
    assert!((var - 0.09).abs() < 0.005, "noise variance {var}");
}

#[test]
fn truth_rows_are_unit_norm() {
    let data = generate(&config(100, 7, 10, 1.0, 5)).unwrap();
    for row in data.truth.vectors().rows() {
        assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn config_parses_from_json_and_rejects_unknown_keys() {
    let cfg: SyntheticConfig = serde_json::from_str(
        r#"{"n_gt":8,"d":4,"n_samples":10,"avg_active":2,"coeff_scale":1,"noise_sigma":0,"seed":9}"#,
    )
    .unwrap();
    assert_eq!(cfg, config(8, 4, 10, 2.0, 9));
    let bad = r#"{"n_gt":8,"d":4,"n_samples":10,"avg_active":2,"coeff_scale":1,"noise_sigma":0,"seed":9,"x":1}"#;
    assert!(serde_json::from_str::<SyntheticConfig>(bad).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut bad = vec![config(0, 4, 10, 1.0, 0), config(4, 0, 10, 1.0, 0), config(4, 4, 0, 1.0, 0)];
    bad.push(config(4, 4, 10, 0.0, 0));
    bad.push(config(4, 4, 10, f64::NAN, 0));
    let mut neg_noise = config(4, 4, 10, 1.0, 0);
    neg_noise.noise_sigma = -1.0;
    bad.push(neg_noise);
    for cfg in bad {
        assert!(generate(&cfg).is_err(), "{cfg:?}");
    }
}

#[test]
fn written_codes_decode_to_the_written_dataset() {
    let dir = tempfile::TempDir::new().unwrap();
    let data = generate(&config(16, 6, 300, 2.0, 6)).unwrap();
    let meta = DatasetMeta::new("synth-test", HookPoint::Other);
    let codes_path = dir.path().join("codes.sact");
    data.codes.write(&codes_path, &meta).unwrap();
    let codes = read_dataset(&codes_path).unwrap();
    assert_eq!(codes.d_in(), 16);
    let truth = data.truth.vectors().mapv(|v| v as f32);
    let recon = codes.view().dot(&truth);
    let diff = (&recon - &data.dataset.view()).mapv(f32::abs).fold(0.0f32, |a, &b| a.max(b));
    assert!(diff < 1e-4, "max abs difference {diff}");
}

#[test]
fn mmcs_errors() {
    let truth = GroundTruthDictionary::new(gaussian(3, 4, 0)).unwrap();
    assert!(mmcs(Array2::<f32>::zeros((0, 4)).view(), &truth).is_err());
    assert!(mmcs(Array2::<f32>::zeros((2, 5)).view(), &truth).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mmcs_ignores_row_order_and_positive_scale(
        n_gt in 1usize..8,
        n_learned in 1usize..10,
        d in 2usize..6,
        seed in any::<u64>(),
    ) {
        let truth = GroundTruthDictionary::new(gaussian(n_gt, d, seed)).unwrap();
        let learned = gaussian(n_learned, d, seed ^ 0x5555).mapv(|v| v as f32);
        let base = mmcs(learned.view(), &truth).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n_learned).collect();
        order.shuffle(&mut rng);
        let mut moved = learned.select(Axis(0), &order);
        for mut row in moved.rows_mut() {
            let s: f32 = rng.random_range(0.1..10.0);
            row.mapv_inplace(|v| v * s);
        }
        let other = mmcs(moved.view(), &truth).unwrap();
        prop_assert!((base.mmcs - other.mmcs).abs() < 1e-6);
        for (a, b) in base.per_feature_max_cos.iter().zip(&other.per_feature_max_cos) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mmcs_is_monotone_under_appended_rows(
        n_gt in 1usize..8,
        n_learned in 1usize..6,
        extra in 1usize..6,
        d in 2usize..6,
        seed in any::<u64>(),
    ) {
        let truth = GroundTruthDictionary::new(gaussian(n_gt, d, seed)).unwrap();
        let all = gaussian(n_learned + extra, d, seed.wrapping_add(1)).mapv(|v| v as f32);
        let head = mmcs(all.slice(ndarray::s![..n_learned, ..]), &truth).unwrap();
        let full = mmcs(all.view(), &truth).unwrap();
        prop_assert!(full.mmcs >= head.mmcs - 1e-12);
        for (a, b) in head.per_feature_max_cos.iter().zip(&full.per_feature_max_cos) {
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn mmcs_report_is_consistent(n_gt in 1usize..8, n_learned in 1usize..8, d in 1usize..6, seed in any::<u64>()) {
        let truth = GroundTruthDictionary::new(gaussian(n_gt, d, seed)).unwrap();
        let learned = gaussian(n_learned, d, !seed).mapv(|v| v as f32);
        let r = mmcs(learned.view(), &truth).unwrap();
        prop_assert_eq!(r.per_feature_max_cos.len(), n_gt);
        prop_assert_eq!(r.matched_index.len(), n_gt);
        let mean = r.per_feature_max_cos.iter().sum::<f64>() / n_gt as f64;
        prop_assert!((mean - r.mmcs).abs() < 1e-12);
        for (j, (&c, &k)) in r.per_feature_max_cos.iter().zip(&r.matched_index).enumerate() {
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert!(k < n_learned);
            let g = truth.vectors().row(j).to_owned();
            let f = learned.row(k).mapv(f64::from);
            let cos = g.dot(&f) / f.dot(&f).sqrt();
            prop_assert!((cos - c).abs() < 1e-6);
        }
    }

    #[test]
    fn generation_is_deterministic(seed in any::<u64>(), n in 1usize..300) {
        let cfg = SyntheticConfig { noise_sigma: 0.1, ..config(12, 5, n, 2.0, seed) };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        prop_assert_eq!(a.truth.vectors(), b.truth.vectors());
        let bits = |x: &[f32]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(a.dataset.as_slice()), bits(b.dataset.as_slice()));
        prop_assert_eq!(&a.codes.indices, &b.codes.indices);
        prop_assert_eq!(bits(&a.codes.values), bits(&b.codes.values));
    }
}
