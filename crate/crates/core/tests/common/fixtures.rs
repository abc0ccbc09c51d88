use dictlearn::patching::{PatchCase, ToyOracle};
use dictlearn::store::TokenRecord;
use dictlearn::{ActivationDataset, Dictionary};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::gram_schmidt;

pub const TRIGGER: &str = " cat";
const WORDS: [&str; 8] = [" the", " a", " sat", " on", " mat", " dog", " ran", "."];

/// A token corpus for autointerp. Feature 0 of the returned 4-d identity
/// dictionary reads coordinate 0, which is nonzero only on trigger tokens.
///
/// `active_lines` lines of 64+ tokens contain triggers with line-specific
/// amplitudes; `quiet_lines` lines of 64+ tokens never fire; `short_lines`
/// lines of 10 tokens do contain triggers but are too short to use.
pub fn interp_corpus(active_lines: usize, quiet_lines: usize, short_lines: usize, seed: u64) -> (Dictionary, ActivationDataset, Vec<TokenRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<[f32; 4]> = Vec::new();
    let mut tokens = Vec::new();
    let mut kinds: Vec<(usize, bool)> = Vec::new();
    for i in 0..active_lines + quiet_lines {
        kinds.push((64 + rng.random_range(0..8usize), i < active_lines));
    }
    kinds.extend((0..short_lines).map(|_| (10, true)));
    // interleave deterministically
    for i in (1..kinds.len()).rev() {
        let j = rng.random_range(0..=i);
        kinds.swap(i, j);
    }
    for (doc, &(len, active)) in kinds.iter().enumerate() {
        let amplitude = 0.5 + rng.random::<f32>() * 4.0;
        for pos in 0..len {
            let fire = active && pos % 7 == 3;
            let tok = if fire { TRIGGER } else { WORDS[rng.random_range(0..WORDS.len())] };
            let strength = if fire { amplitude * (0.6 + 0.4 * rng.random::<f32>()) } else { 0.0 };
            rows.push([strength, rng.random::<f32>(), -rng.random::<f32>(), 0.25]);
            tokens.push(TokenRecord {
                doc_id: doc as u64,
                token: tok.to_owned(),
            });
        }
    }
    let dict = Dictionary::tied(Array2::eye(4)).unwrap();
    (dict, ActivationDataset::from_rows(4, &rows).unwrap(), tokens)
}

/// Seeded orthonormal rows.
pub fn orthonormal(n: usize, d: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let q = gram_schmidt(&raw);
    Array2::from_shape_fn((n, d), |(i, j)| q[i][j] as f32)
}

/// Patch cases whose activations are exact nonnegative combinations of an
/// orthonormal tied dictionary with zero bias, so encoding recovers the
/// codes and patching every feature reproduces the target.
pub fn representable_cases(n_cases: usize, positions: usize, d: usize, seed: u64) -> (Dictionary, ToyOracle, Vec<PatchCase>) {
    let q = orthonormal(d, d, seed);
    let dict = Dictionary::tied(q.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let unembed = Array2::from_shape_simple_fn((10, d), || rng.sample::<f32, _>(StandardNormal));
    let oracle = ToyOracle::new(unembed).unwrap();
    let draw = |rng: &mut ChaCha8Rng| {
        let mut x = Array2::<f32>::zeros((positions, d));
        for mut row in x.rows_mut() {
            let mut c = Array1::<f32>::zeros(d);
            for _ in 0..3 {
                c[rng.random_range(0..d)] = rng.random_range(0.5f32..2.0);
            }
            row.assign(&c.dot(&q));
        }
        x
    };
    let cases = (0..n_cases)
        .map(|_| {
            let base = draw(&mut rng);
            let target = draw(&mut rng);
            PatchCase::new(&dict, base, target, &oracle).unwrap()
        })
        .collect();
    (dict, oracle, cases)
}

/// Three identity features, an oracle reading each into its own logit among
/// eight, and small base/target gaps of distinct size per feature, so KL
/// contributions are close to additive.
pub fn three_feature_case() -> (Dictionary, ToyOracle, Vec<PatchCase>) {
    let dict = Dictionary::tied(Array2::eye(3)).unwrap();
    let mut u = Array2::<f32>::zeros((8, 3));
    for i in 0..3 {
        u[[i, i]] = 1.0;
    }
    let oracle = ToyOracle::new(u).unwrap();
    let base = ndarray::array![[0.1f32, 0.1, 0.1], [0.2, 0.05, 0.1]];
    let target = ndarray::array![[0.5f32, 0.35, 0.2], [0.6, 0.3, 0.15]];
    let case = PatchCase::new(&dict, base, target, &oracle).unwrap();
    (dict, oracle, vec![case])
}
