use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{read_dataset, read_meta, DatasetMeta, HookPoint};
use crate::{Error, Result};

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    path.with_file_name(format!("{stem}.{suffix}.sact"))
}

/// Shuffles the rows of a `.sact` file with a seeded Fisher–Yates
/// permutation and writes `<stem>.train.sact` (the first
/// `floor(train_fraction * count)` permuted rows) and `<stem>.holdout.sact`
/// (the rest) beside it.
pub fn shuffle_split(path: &Path, seed: u64, train_fraction: f64) -> Result<(PathBuf, PathBuf)> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::arg(format!(
            "train_fraction must lie in (0, 1], got {train_fraction}"
        )));
    }
    let data = read_dataset(path)?;
    let n_train = (train_fraction * data.len() as f64).floor() as usize;
    if n_train < 1 {
        return Err(Error::arg(format!(
            "train_fraction {train_fraction} of {} rows leaves no training rows",
            data.len()
        )));
    }
    let meta = read_meta(path).unwrap_or_else(|_| DatasetMeta::new("shuffle_split", HookPoint::Other));

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, holdout_idx) = order.split_at(n_train);

    let train_path = sibling(path, "train");
    let holdout_path = sibling(path, "holdout");
    data.select_rows(train_idx).write(&train_path, &meta)?;
    data.select_rows(holdout_idx).write(&holdout_path, &meta)?;
    Ok((train_path, holdout_path))
}
