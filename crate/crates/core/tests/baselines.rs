mod common;

use dictlearn::baselines::{
    fit_ica, fit_pca, fit_pca_online, make_fixed_directions, DirectionCodec, DirectionKind, DirectionSet, FixedKind,
    IcaConfig, TopK,
};
use dictlearn::eval::{fvu, Codec};
use dictlearn::store::{BatchReader, DatasetMeta, HookPoint};
use dictlearn::{ActivationDataset, Error};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Gaussian data with a random anisotropic covariance: z · diag(scales) · Q.
fn anisotropic(n: usize, d: usize, seed: u64) -> ActivationDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = common::gram_schmidt(
        &(0..d)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect::<Vec<Vec<f64>>>(),
    );
    let scales: Vec<f64> = (0..d).map(|j| 3.0 * 0.8f64.powi(j as i32)).collect();
    let offset: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x = Array2::from_shape_fn((n, d), |_| 0.0f32);
    let mut x = x;
    for mut row in x.rows_mut() {
        let z: Vec<f64> = scales.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
        for j in 0..d {
            let v: f64 = offset[j] + (0..d).map(|k| z[k] * q[k][j]).sum::<f64>();
            row[j] = v as f32;
        }
    }
    ActivationDataset::new(x).unwrap()
}

fn rows_f64(data: &ActivationDataset) -> Vec<Vec<f64>> {
    data.view().rows().into_iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect()
}

fn directions_f64(set: &DirectionSet) -> Vec<Vec<f64>> {
    set.directions().rows().into_iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect()
}

#[test]
fn pca_matches_a_jacobi_oracle() {
    let data = anisotropic(5000, 16, 1);
    let rows = rows_f64(&data);
    let (values, vectors) = common::jacobi_eigen(&common::covariance(&rows));
    for k in [1, 4, 8] {
        let fit = fit_pca(&data, k).unwrap();
        let angle = common::max_principal_angle(&directions_f64(&fit.directions), &vectors[..k]);
        assert!(angle < 1e-3, "k={k}: principal angle {angle}");
        for (got, want) in fit.explained_variance.iter().zip(&values) {
            assert!((got - want).abs() < 1e-6 * want, "eigenvalue {got} vs {want}");
        }
    }
}

#[test]
fn pca_is_at_least_as_good_as_any_other_subspace_of_its_rank() {
    for seed in 0..5 {
        let data = anisotropic(2000, 8, 10 + seed);
        let rows = rows_f64(&data);
        let k = 3;
        let fit = fit_pca(&data, k).unwrap();
        let pca_fvu = common::projection_fvu(&rows, &directions_f64(&fit.directions));
        let lib_fvu = fvu(&DirectionCodec::new(&fit.directions, None, false).unwrap(), &data).unwrap();
        assert!((pca_fvu - lib_fvu).abs() < 1e-5, "seed {seed}: {pca_fvu} vs {lib_fvu}");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let random: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let other = common::projection_fvu(&rows, &common::gram_schmidt(&random));
            assert!(pca_fvu <= other + 1e-9, "seed {seed}: PCA {pca_fvu} > random {other}");
        }
    }
}

#[test]
fn streamed_pca_matches_in_memory() {
    let dir = tempfile::TempDir::new().unwrap();
    let path = dir.path().join("p.sact");
    let data = anisotropic(3000, 6, 2);
    data.write(&path, &DatasetMeta::new("pca-test", HookPoint::Mlp)).unwrap();
    let a = fit_pca(&data, 4).unwrap();
    let b = fit_pca_online(BatchReader::open(&path, 333).unwrap(), 4).unwrap();
    for (x, y) in a.explained_variance.iter().zip(&b.explained_variance) {
        assert!((x - y).abs() < 1e-9 * x);
    }
    // both fits fix signs the same way, so the rows agree entry by entry
    let diff = (&a.directions.directions() - &b.directions.directions()).mapv(f32::abs);
    assert!(diff.iter().all(|&v| v < 1e-6), "max entry difference {}", diff.fold(0.0f32, |m, &v| m.max(v)));
    for (x, y) in a.directions.mean().iter().zip(b.directions.mean().iter()) {
        assert!((x - y).abs() < 1e-6);
    }
    assert!(fit_pca_online(std::iter::empty(), 1).is_err());
}

#[test]
fn ica_rejects_more_components_than_dimensions() {
    let data = anisotropic(500, 4, 3);
    assert!(matches!(fit_ica(data.view(), &IcaConfig::new(5)), Err(Error::Argument(_))));
    assert!(matches!(fit_ica(data.view(), &IcaConfig::new(0)), Err(Error::Argument(_))));
}

#[test]
fn ica_config_rejects_unknown_keys() {
    let cfg: IcaConfig = serde_json::from_str(r#"{"n_components":3}"#).unwrap();
    assert_eq!(cfg, IcaConfig::new(3));
    assert!(serde_json::from_str::<IcaConfig>(r#"{"n_components":3,"whiten":true}"#).is_err());
}

#[test]
fn ica_full_rank_codes_reconstruct_the_data() {
    // Laplace sources, random square mixing: the unmixing is invertible, so
    // linear codes decode exactly through the dual rows.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 4000;
    let mixing = Array2::from_shape_simple_fn((3, 3), || rng.sample::<f64, _>(StandardNormal));
    let x = Array2::from_shape_fn((n, 3), |_| 0.0f32);
    let mut x = x;
    for mut row in x.rows_mut() {
        let s: Vec<f64> = (0..3)
            .map(|_| {
                let u: f64 = rng.random_range(-0.5..0.5);
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            })
            .collect();
        for j in 0..3 {
            row[j] = (0..3).map(|k| s[k] * mixing[[k, j]]).sum::<f64>() as f32;
        }
    }
    let data = ActivationDataset::new(x).unwrap();
    let fit = fit_ica(data.view(), &IcaConfig::new(3)).unwrap();
    assert!(fit.converged);
    let v = fvu(&DirectionCodec::new(&fit.directions, None, false).unwrap(), &data).unwrap();
    assert!(v < 1e-6, "fvu {v}");
    for row in fit.mixing.rows() {
        assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
    }
    assert_eq!(fit.directions.kind(), DirectionKind::Ica);
}

#[test]
fn direction_sets_round_trip_through_sdic() {
    let dir = tempfile::TempDir::new().unwrap();
    let data = anisotropic(2000, 5, 6);
    let sets = [
        fit_pca(&data, 3).unwrap().directions,
        fit_ica(data.view(), &IcaConfig::new(4)).unwrap().directions,
        make_fixed_directions(FixedKind::Random, 5, 7, 1).unwrap(),
        make_fixed_directions(FixedKind::NeuronBasis, 5, 5, 0).unwrap(),
    ];
    for (i, set) in sets.iter().enumerate() {
        let path = dir.path().join(format!("s{i}.sdic"));
        set.save(&path).unwrap();
        let back = DirectionSet::load(&path).unwrap();
        assert_eq!(&back, set, "set {i}");
        let as_dict = dictlearn::Dictionary::load(&path).unwrap();
        assert_eq!(as_dict.encoder(), set.directions(), "set {i}");
        assert_eq!(as_dict.decoder(), set.decoder(), "set {i}");
    }
}

#[test]
fn neuron_basis_needs_a_square_basis() {
    assert!(make_fixed_directions(FixedKind::NeuronBasis, 4, 3, 0).is_err());
    assert!(make_fixed_directions(FixedKind::Random, 4, 0, 0).is_err());
}

fn direction_set(k: usize, d: usize, seed: u64) -> DirectionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Array2::from_shape_simple_fn((k, d), || rng.sample::<f64, _>(StandardNormal));
    let mean = Array1::from_shape_simple_fn(d, || rng.random_range(-1.0..1.0));
    DirectionSet::new(m, DirectionKind::Random, mean).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pca_directions_are_orthonormal(n in 30usize..400, d in 1usize..9, seed in any::<u64>()) {
        let data = anisotropic(n, d, seed);
        let k = 1 + (seed as usize) % d;
        let fit = fit_pca(&data, k).unwrap();
        let m = fit.directions.directions().mapv(f64::from);
        let gram = m.dot(&m.t());
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[[i, j]] - want).abs() < 1e-6, "gram[{},{}] = {}", i, j, gram[[i, j]]);
            }
        }
        prop_assert!(fit.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn top_k_caps_the_active_count(k in 1usize..10, d in 1usize..6, seed in any::<u64>()) {
        let set = direction_set(k, d, seed);
        let k_active = 1 + (seed as usize / 7) % k;
        let codec = DirectionCodec::new(&set, Some(TopK { k_active }), true).unwrap();
        let plain = DirectionCodec::new(&set, None, true).unwrap();
        let x = anisotropic(64, d, seed ^ 9);
        let capped = codec.encode_rows(x.view());
        let full = plain.encode_rows(x.view());
        for (c, f) in capped.rows().into_iter().zip(full.rows()) {
            prop_assert!(c.iter().filter(|&&v| v > 0.0).count() <= k_active);
            prop_assert!(c.iter().all(|&v| v >= 0.0));
            // survivors keep their value and are the largest ones
            let min_kept = c.iter().filter(|&&v| v > 0.0).fold(f32::INFINITY, |a, &b| a.min(b));
            for (cv, fv) in c.iter().zip(f.iter()) {
                prop_assert!(*cv == 0.0 || cv == fv);
                if *cv == 0.0 && *fv > 0.0 {
                    prop_assert!(*fv <= min_kept);
                }
            }
        }
    }

    #[test]
    fn top_k_of_every_direction_changes_nothing(k in 1usize..10, d in 1usize..6, seed in any::<u64>()) {
        let set = direction_set(k, d, seed);
        let x = anisotropic(64, d, seed ^ 3);
        for clamp in [true, false] {
            let a = DirectionCodec::new(&set, Some(TopK { k_active: k }), clamp).unwrap().encode_rows(x.view());
            let b = DirectionCodec::new(&set, None, clamp).unwrap().encode_rows(x.view());
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn clamped_codes_of_a_neuron_basis_are_the_positive_part(d in 1usize..8, seed in any::<u64>()) {
        let set = make_fixed_directions(FixedKind::NeuronBasis, d, d, 0).unwrap();
        let x = anisotropic(20, d, seed);
        let codes = DirectionCodec::new(&set, None, true).unwrap().encode_rows(x.view());
        prop_assert_eq!(codes, x.view().mapv(|v| v.max(0.0)));
    }
}
