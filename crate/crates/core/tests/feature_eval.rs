use dictlearn::baselines::{fit_pca, DirectionCodec};
use dictlearn::eval::{
    evaluate, evaluate_stream, feature_moments, fvu, logit_effect, mean_l0, scan_dataset, token_histogram,
    unembed_feature, Codec,
};
use dictlearn::store::{BatchReader, DatasetMeta, HookPoint};
use dictlearn::{ActivationDataset, Dictionary};
use ndarray::{arr1, arr2, Array1, Array2, ArrayView2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn random_dict(d_in: usize, d_hid: usize, seed: u64) -> Dictionary {
    Dictionary::random(d_in, d_hid, true, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Predicts the dataset mean for every row.
struct MeanCodec(Array1<f32>);

impl Codec for MeanCodec {
    fn d_in(&self) -> usize {
        self.0.len()
    }

    fn n_features(&self) -> usize {
        1
    }

    fn encode_rows(&self, x: ArrayView2<'_, f32>) -> Array2<f32> {
        Array2::zeros((x.nrows(), 1))
    }

    fn reconstruct_rows(&self, codes: ArrayView2<'_, f32>) -> Array2<f32> {
        let mut out = Array2::zeros((codes.nrows(), self.0.len()));
        out.rows_mut().into_iter().for_each(|mut r| r.assign(&self.0));
        out
    }
}

#[test]
fn rank_one_pca_on_variances_four_and_one() {
    let rows: Vec<[f32; 2]> = vec![[2.0, 1.0], [2.0, -1.0], [-2.0, 1.0], [-2.0, -1.0]];
    let data = ActivationDataset::from_rows(2, &rows).unwrap();
    let pca = fit_pca(&data, 1).unwrap();
    let codec = DirectionCodec::new(&pca.directions, None, false).unwrap();
    let v = fvu(&codec, &data).unwrap();
    assert!((v - 0.2).abs() < 1e-9, "fvu {v}");
}

#[test]
fn mean_l0_by_hand() {
    let codes = arr2(&[[1.0f32, 0.0], [1.0, 1.0]]);
    assert_eq!(mean_l0(codes.rows()).unwrap(), 1.5);
    let zeros = Array2::<f32>::zeros((3, 4));
    assert_eq!(mean_l0(zeros.rows()).unwrap(), 0.0);
    assert!(mean_l0(Array2::<f32>::zeros((0, 4)).rows()).is_err());
}

#[test]
fn streamed_evaluation_matches_in_memory() {
    let dir = tempfile::TempDir::new().unwrap();
    let path = dir.path().join("e.sact");
    let data = ActivationDataset::new(gaussian(1234, 6, 1)).unwrap();
    data.write(&path, &DatasetMeta::new("eval-test", HookPoint::Residual)).unwrap();
    let dict = random_dict(6, 10, 2);
    let a = evaluate(&dict, &data, 10).unwrap();
    let b = evaluate_stream(&dict, BatchReader::open(&path, 100).unwrap(), 10).unwrap();
    assert_eq!(a.n_samples, 1234);
    assert_eq!(a.dead_count, b.dead_count);
    assert!((a.fvu - b.fvu).abs() <= 1e-12 * a.fvu);
    assert!((a.mean_l0 - b.mean_l0).abs() <= 1e-12);
    assert!(a.fvu >= 0.0 && a.mean_l0 <= 10.0);
}

#[test]
fn evaluation_report_matches_a_straight_line_oracle() {
    let data = ActivationDataset::new(gaussian(300, 4, 3)).unwrap();
    let dict = random_dict(4, 7, 4);
    let report = evaluate(&dict, &data, 10).unwrap();
    let mean: Vec<f64> = (0..4)
        .map(|j| data.view().column(j).iter().map(|&v| f64::from(v)).sum::<f64>() / 300.0)
        .collect();
    let (mut err, mut total, mut active) = (0.0, 0.0, 0usize);
    let mut fired = [false; 7];
    for x in data.view().rows() {
        let mut x_hat = [0.0f64; 4];
        for (i, f) in fired.iter_mut().enumerate() {
            let m = dict.encoder().row(i).to_owned();
            let pre: f64 = (0..4).map(|j| f64::from(m[j]) * f64::from(x[j])).sum::<f64>() + f64::from(dict.bias()[i]);
            let c = pre.max(0.0);
            if c > 0.0 {
                active += 1;
                *f = true;
            }
            for j in 0..4 {
                x_hat[j] += c * f64::from(m[j]);
            }
        }
        for j in 0..4 {
            err += (f64::from(x[j]) - x_hat[j]).powi(2);
            total += (f64::from(x[j]) - mean[j]).powi(2);
        }
    }
    assert!((report.fvu - err / total).abs() < 1e-5 * (err / total));
    assert!((report.mean_l0 - active as f64 / 300.0).abs() < 1e-9);
    assert_eq!(report.dead_count, fired.iter().filter(|f| !**f).count());
}

#[test]
fn feature_moments_match_two_pass_per_feature() {
    let data = ActivationDataset::new(gaussian(2000, 5, 5)).unwrap();
    let dict = random_dict(5, 6, 6);
    let got = feature_moments(&dict, &data).unwrap();
    let codes = dict.encode_batch(data.view()).unwrap();
    for (i, m) in got.iter().enumerate() {
        let col: Vec<f64> = codes.column(i).iter().map(|&v| f64::from(v)).collect();
        let n = col.len() as f64;
        let mu = col.iter().sum::<f64>() / n;
        let central = |p: i32| col.iter().map(|v| (v - mu).powi(p)).sum::<f64>() / n;
        let (m2, m3, m4) = (central(2), central(3), central(4));
        assert!((m.mean.unwrap() - mu).abs() < 1e-9 * mu.abs().max(1.0));
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2);
        assert!((m.skew.unwrap() - skew).abs() < 1e-9 * skew.abs().max(1.0), "skew {i}");
        assert!((m.kurtosis.unwrap() - kurt).abs() < 1e-9 * kurt, "kurtosis {i}");
    }
}

#[test]
fn unembedding_matches_a_full_sort() {
    let unembed = gaussian(10, 4, 7);
    let dict = random_dict(4, 3, 8);
    let vocab: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
    for feature in 0..3 {
        let got = unembed_feature(feature, &dict, unembed.view(), &vocab, 10).unwrap();
        let f = dict.feature(feature);
        let mut oracle: Vec<(usize, f64)> = (0..10)
            .map(|t| (t, (0..4).map(|j| f64::from(unembed[[t, j]]) * f64::from(f[j])).sum()))
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let names: Vec<&str> = got.iter().map(|g| g.0.as_str()).collect();
        let want: Vec<String> = oracle.iter().map(|o| format!("t{}", o.0)).collect();
        assert_eq!(names, want);
        for (g, o) in got.iter().zip(&oracle) {
            assert!((g.1 - o.1).abs() < 1e-6);
        }
    }
}

#[test]
fn unembedding_ranking_is_scale_invariant() {
    let unembed = gaussian(12, 3, 9);
    let vocab: Vec<String> = (0..12).map(|i| i.to_string()).collect();
    let f = arr2(&[[0.3f32, -0.2, 0.9]]);
    let unit = Dictionary::tied(f.clone()).unwrap();
    // an untied decoder row of twice the length
    let doubled = Dictionary::new(f.clone(), arr1(&[0.0]), Some(f.mapv(|v| 2.0 * v))).unwrap();
    let a: Vec<String> = unembed_feature(0, &unit, unembed.view(), &vocab, 5).unwrap().into_iter().map(|p| p.0).collect();
    let b: Vec<String> = unembed_feature(0, &doubled, unembed.view(), &vocab, 5).unwrap().into_iter().map(|p| p.0).collect();
    assert_eq!(a, b);
    assert!(unembed_feature(0, &unit, unembed.view(), &vocab, 13).is_err());
}

#[test]
fn logit_effect_dimension_errors() {
    let dict = random_dict(3, 2, 0);
    assert!(logit_effect(0, &dict, arr1(&[1.0f32, 0.0, 0.0]).view(), Array2::zeros((5, 4)).view()).is_err());
    assert!(logit_effect(0, &dict, arr1(&[1.0f32, 0.0]).view(), Array2::zeros((5, 3)).view()).is_err());
    assert!(logit_effect(2, &dict, arr1(&[1.0f32, 0.0, 0.0]).view(), Array2::zeros((5, 3)).view()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mean_predictor_has_unit_fvu(n in 2usize..200, d in 1usize..6, seed in any::<u64>()) {
        let data = ActivationDataset::new(gaussian(n, d, seed)).unwrap();
        let mean = data.view().mapv(f64::from).mean_axis(ndarray::Axis(0)).unwrap().mapv(|v| v as f32);
        let v = fvu(&MeanCodec(mean), &data).unwrap();
        prop_assert!((v - 1.0).abs() < 1e-5, "fvu {}", v);
    }

    #[test]
    fn pca_fvu_is_nonincreasing_in_rank(n in 20usize..200, d in 2usize..7, seed in any::<u64>()) {
        let mut x = gaussian(n, d, seed);
        for (j, mut col) in x.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * (j + 1) as f32);
        }
        let data = ActivationDataset::new(x).unwrap();
        let mut last = f64::INFINITY;
        for m in 1..=d {
            let pca = fit_pca(&data, m).unwrap();
            let v = fvu(&DirectionCodec::new(&pca.directions, None, false).unwrap(), &data).unwrap();
            prop_assert!(v <= last + 1e-6, "rank {}: {} > {}", m, v, last);
            prop_assert!(v >= 0.0);
            last = v;
        }
        prop_assert!(last < 1e-5);
    }

    #[test]
    fn histogram_total_counts_positive_activations(n in 1usize..150, n_bins in 1usize..8, seed in any::<u64>()) {
        let data = ActivationDataset::new(gaussian(n, 3, seed)).unwrap();
        let dict = random_dict(3, 2, seed ^ 1);
        let tokens: Vec<String> = (0..n).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
        let h = token_histogram(0, &dict, &data, &tokens, n_bins).unwrap();
        let positives = (0..n).filter(|&i| dict.activation(0, data.row(i)).unwrap() > 0.0).count() as u64;
        prop_assert_eq!(h.total(), positives);
        if positives > 0 {
            prop_assert_eq!(h.bin_edges.len(), n_bins + 1);
            prop_assert!(h.bin_edges.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(h.bin_edges[0], 0.0);
            prop_assert_eq!(*h.bin_edges.last().unwrap(), h.max_activation);
        } else {
            prop_assert!(h.is_empty());
        }
    }

    #[test]
    fn logit_effect_is_linear_and_has_the_expected_norm(seed in any::<u64>(), scale in 0.1f32..5.0) {
        let d = 4;
        let unembed = gaussian(6, d, seed);
        // a feature with zero bias: its activation scales with x
        let f = gaussian(1, d, seed ^ 2);
        let dict = Dictionary::tied(f).unwrap();
        let x = gaussian(1, d, seed ^ 3).row(0).to_owned();
        let c = dict.activation(0, x.view()).unwrap();
        let diff = logit_effect(0, &dict, x.view(), unembed.view()).unwrap();
        let uf = unembed.dot(&dict.feature(0)).mapv(f64::from);
        let norm = diff.dot(&diff).sqrt();
        prop_assert!((norm - f64::from(c) * uf.dot(&uf).sqrt()).abs() < 1e-4 * (1.0 + norm));

        let scaled = logit_effect(0, &dict, x.mapv(|v| v * scale).view(), unembed.view()).unwrap();
        for (a, b) in scaled.iter().zip(diff.iter()) {
            prop_assert!((a - f64::from(scale) * b).abs() < 1e-4 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn scan_of_a_dictionary_counts_every_row(n in 1usize..600, seed in any::<u64>()) {
        let data = ActivationDataset::new(gaussian(n, 3, seed)).unwrap();
        let dict = random_dict(3, 5, seed);
        let stats = scan_dataset(&dict, &data).unwrap();
        prop_assert_eq!(stats.n, n as u64);
    }
}
