//! K-fold cross-validation and the augmentation comparison campaign.

use super::dataset::{AugmentedDataset, SubsetSource};
use super::report::{aggregate, FoldReport, FoldResult, MethodRowData};
use crate::augment::AugMethod;
use crate::error::{Error, Result};
use crate::nnet::{evaluate, preset_by_name, train, NetworkModel, TrainConfig};
use crate::rng::{mix, stream_rng};
use crate::sdi::SdiDataset;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Augmentation method used to inflate SDIs for training.
    pub method: AugMethod,
    /// Network preset name.
    pub preset: String,
    pub train: TrainConfig,
    /// Number of folds.
    pub k: usize,
    /// Fold-shuffle seed.
    pub fold_seed: u64,
    /// Weight-initialization seed (mixed with the fold number).
    pub init_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: AugMethod::AllTile,
            preset: "COMPACT_FDC".into(),
            train: TrainConfig::default(),
            k: 5,
            fold_seed: 1,
            init_seed: 2,
        }
    }
}

/// Seeded shuffle split into `k` disjoint folds covering `0..n`, sizes
/// differing by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} samples cannot fill {k} folds")));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut stream_rng(seed, 0xF0));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        folds.push(indices[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

fn fold_hash(folds: &[Vec<usize>]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for fold in folds {
        for &i in fold {
            hash ^= i as u64 + 1;
            hash = hash.wrapping_mul(0x100_0000_01b3);
        }
        hash ^= 0xFF;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}

/// Train/test each fold with the remaining folds as training data. The
/// training and held-out index sets are asserted disjoint at runtime.
pub fn run_experiment_on_folds(
    dataset: &SdiDataset,
    folds: &[Vec<usize>],
    cfg: &ExperimentConfig,
) -> Result<FoldReport> {
    let spec = preset_by_name(&cfg.preset)?;
    let source = AugmentedDataset::new(dataset, cfg.method);
    let mut per_fold = Vec::with_capacity(folds.len());

    for (f, test_idx) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != f)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();

        // No-leakage guard: the sets must be disjoint and cover the data.
        let mut seen = vec![false; dataset.len()];
        for &i in train_idx.iter().chain(test_idx.iter()) {
            if seen[i] {
                return Err(Error::invalid(format!(
                    "index {i} appears in both training and test sets of fold {f}"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid(format!("fold {f} does not cover the data")));
        }

        let train_view = SubsetSource::new(&source, &train_idx);
        let test_view = SubsetSource::new(&source, test_idx);

        let mut model = NetworkModel::<f32>::init(&spec, mix(cfg.init_seed, f as u64))?;
        let mut fold_cfg = cfg.train;
        fold_cfg.seed = mix(cfg.train.seed, f as u64);
        let history = train(&mut model, &train_view, Some(&test_view), &fold_cfg)?;
        let accuracy_pct = history
            .last5_test_accuracy()
            .ok_or_else(|| Error::invalid("training produced no held-out accuracies"))?;
        let confusion = evaluate(&model, &test_view)?;
        per_fold.push(FoldResult {
            fold: f,
            accuracy_pct,
            confusion,
            history,
        });
    }

    let accuracies: Vec<f64> = per_fold.iter().map(|f| f.accuracy_pct).collect();
    let (mean_pct, std_pct) = aggregate(&accuracies);
    let report = FoldReport {
        method: cfg.method.name().to_string(),
        preset: cfg.preset.clone(),
        k: folds.len(),
        per_fold,
        mean_pct,
        std_pct,
        fold_index_hash: fold_hash(folds),
    };
    report.validate()?;
    Ok(report)
}

/// K-fold cross-validation over a dataset.
pub fn run_experiment(dataset: &SdiDataset, cfg: &ExperimentConfig) -> Result<FoldReport> {
    if dataset.len() < cfg.k {
        return Err(Error::invalid("dataset smaller than fold count"));
    }
    let folds = kfold_split(dataset.len(), cfg.k, cfg.fold_seed)?;
    run_experiment_on_folds(dataset, &folds, cfg)
}

pub type MethodRow = MethodRowData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugComparison {
    pub rows: Vec<MethodRowData>,
    /// Shared fold hash; equal entries certify identical fold index sets.
    pub fold_index_hash: u64,
    pub per_method_hash: Vec<u64>,
    pub preset: String,
    pub k: usize,
}

impl AugComparison {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs the identical experiment once per augmentation method on identical
/// folds and seeds.
pub fn compare_augmentations(
    dataset: &SdiDataset,
    base: &ExperimentConfig,
) -> Result<AugComparison> {
    let folds = kfold_split(dataset.len(), base.k, base.fold_seed)?;
    let mut rows = Vec::with_capacity(AugMethod::ALL.len());
    let mut per_method_hash = Vec::with_capacity(AugMethod::ALL.len());
    for method in AugMethod::ALL {
        let cfg = ExperimentConfig {
            method,
            ..base.clone()
        };
        let report = run_experiment_on_folds(dataset, &folds, &cfg)?;
        per_method_hash.push(report.fold_index_hash);
        rows.push(MethodRowData {
            method: method.name().to_string(),
            fold_accuracies: report.fold_accuracies(),
            mean_pct: report.mean_pct,
            std_pct: report.std_pct,
        });
    }
    Ok(AugComparison {
        rows,
        fold_index_hash: fold_hash(&folds),
        per_method_hash,
        preset: base.preset.clone(),
        k: base.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::{gen_dataset, GenConfig};
    use crate::matrix::Matrix;
    use crate::sdi::{SDIMatrix, SDI_COLS, SDI_ROWS};

    #[test]
    fn kfold_small_example() {
        let folds = kfold_split(10, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        assert_eq!(folds.iter().map(|f| f.len()).collect::<Vec<_>>(), [2; 5]);
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn kfold_full_scale_sizes() {
        // 111,965 images split 5 ways: five folds of 22,393.
        let folds = kfold_split(111_965, 5, 0).unwrap();
        for fold in &folds {
            assert_eq!(fold.len(), 22_393);
        }
    }

    #[test]
    fn kfold_is_seeded_and_validates() {
        assert_eq!(kfold_split(100, 5, 7).unwrap(), kfold_split(100, 5, 7).unwrap());
        assert_ne!(kfold_split(100, 5, 7).unwrap(), kfold_split(100, 5, 8).unwrap());
        assert!(kfold_split(4, 5, 0).is_err());
        assert!(kfold_split(10, 1, 0).is_err());

        // Sizes differ by at most one when k does not divide n.
        let folds = kfold_split(103, 5, 1).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(sizes.iter().all(|&s| s == 20 || s == 21));
    }

    #[test]
    fn generation_is_deterministic_and_labeled() {
        let cfg = GenConfig {
            size: 650,
            trajectory_s: 120.0,
            ..GenConfig::default()
        };
        let a = gen_dataset(&cfg, 5).unwrap();
        let b = gen_dataset(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 650);

        let c = gen_dataset(&cfg, 6).unwrap();
        assert_ne!(a, c);

        // Case-0-only weights produce all-zero labels.
        let mut weights = [0.0; 10];
        weights[0] = 1.0;
        let quiet = gen_dataset(
            &GenConfig {
                size: 200,
                trajectory_s: 120.0,
                case_weights: weights,
                ..GenConfig::default()
            },
            7,
        )
        .unwrap();
        assert!(quiet.labels().iter().all(|&l| l == 0));

        // Uniform weights at this size cover several classes.
        let hist = a.label_histogram();
        assert!(hist.iter().filter(|&&n| n > 0).count() >= 5, "{hist:?}");
    }

    fn degenerate_dataset(n: usize) -> SdiDataset {
        // All records identical and constant: every augmentation method
        // produces the same mid-gray image.
        let mut ds = SdiDataset::new();
        let values =
            Matrix::from_vec(SDI_ROWS, SDI_COLS, vec![0.5; SDI_ROWS * SDI_COLS]).unwrap();
        for i in 0..n {
            ds.push(&SDIMatrix {
                values: values.clone(),
                label: (i % 10) as u8,
                t_end: 0.0,
            });
        }
        ds
    }

    #[test]
    fn comparison_runs_all_methods_on_identical_folds() {
        let ds = degenerate_dataset(20);
        let cfg = ExperimentConfig {
            preset: "COMPACT_FDC".into(),
            train: TrainConfig {
                lr: 1e-3,
                epochs: 1,
                batch_size: 10,
                seed: 4,
                ..TrainConfig::default()
            },
            k: 2,
            ..ExperimentConfig::default()
        };
        let cmp = compare_augmentations(&ds, &cfg).unwrap();
        assert_eq!(cmp.rows.len(), 7);
        assert!(cmp.per_method_hash.iter().all(|&h| h == cmp.fold_index_hash));
        // Identical constant inputs: every method reports the same folds.
        let first = &cmp.rows[0];
        for row in &cmp.rows[1..] {
            assert_eq!(row.fold_accuracies, first.fold_accuracies, "{}", row.method);
            assert_eq!(row.mean_pct, first.mean_pct);
        }
    }

    #[test]
    fn identical_fold_accuracies_have_zero_std() {
        let ds = degenerate_dataset(12);
        let cfg = ExperimentConfig {
            train: TrainConfig {
                lr: 0.0,
                epochs: 1,
                batch_size: 6,
                ..TrainConfig::default()
            },
            k: 3,
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&ds, &cfg).unwrap();
        report.validate().unwrap();
        let json = report.to_json().unwrap();
        let back = FoldReport::from_json(&json).unwrap();
        assert_eq!(back, report);
    }
}
