// SPDX-License-Identifier: MIT OR Apache-2.0

//! Concept datasets: positive/negative pairs, sample sizing and the
//! fixed-test / growing-train split protocol.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::comments::{contains_concept, strip_concept, ConceptKind};
use crate::error::{Error, Result};
use crate::io::sha256_hex;

/// Train sizes of the accuracy-curve grid, as percentages of `S = 2N`.
pub const TRAIN_GRID_PERCENT: [usize; 8] = [1, 2, 5, 10, 20, 30, 40, 50];

/// A source file with a concept present, and the same file with it removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub id: String,
    pub concept: ConceptKind,
    pub positive: String,
    pub negative: String,
}

impl ExamplePair {
    /// Build a pair, checking that `positive` holds the concept, `negative`
    /// does not, and the two differ.
    pub fn new(
        id: String,
        concept: ConceptKind,
        positive: String,
        negative: String,
    ) -> Result<Self> {
        let pair = ExamplePair {
            id,
            concept,
            positive,
            negative,
        };
        pair.validate()?;
        Ok(pair)
    }

    /// Pair `source` with its concept-stripped version, or `None` when the
    /// source does not contain the concept.
    pub fn from_source(id: String, concept: ConceptKind, source: String) -> Option<Self> {
        if !contains_concept(&source, concept) {
            return None;
        }
        let negative = strip_concept(&source, concept);
        if negative == source {
            return None;
        }
        Some(ExamplePair {
            id,
            concept,
            positive: source,
            negative,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !contains_concept(&self.positive, self.concept) {
            return Err(Error::Invariant(format!(
                "{}: positive lacks {}",
                self.id, self.concept
            )));
        }
        if contains_concept(&self.negative, self.concept) {
            return Err(Error::Invariant(format!(
                "{}: negative still has {}",
                self.id, self.concept
            )));
        }
        if self.positive == self.negative {
            return Err(Error::Invariant(format!(
                "{}: positive equals negative",
                self.id
            )));
        }
        Ok(())
    }
}

/// A file that could not be turned into a pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

/// Output of [`build_pairs`].
#[derive(Debug, Clone, Default)]
pub struct PairSet {
    pub pairs: Vec<ExamplePair>,
    pub warnings: Vec<SkippedFile>,
}

/// Turn every `.java` file under `corpus_root` that contains `concept` into
/// an [`ExamplePair`], ordered by id.
///
/// Ids are the corpus-relative path plus the first 12 hex digits of the
/// file's SHA-256. Unreadable or non-UTF-8 files are skipped with a warning.
pub fn build_pairs(corpus_root: &Path, concept: ConceptKind) -> Result<PairSet> {
    if !corpus_root.is_dir() {
        return Err(Error::io(
            corpus_root,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "corpus root is not a directory",
            ),
        ));
    }
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    for entry in walkdir::WalkDir::new(corpus_root).sort_by_file_name() {
        match entry {
            Ok(e)
                if e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "java") =>
            {
                files.push(e.into_path())
            }
            Ok(_) => {}
            Err(e) => warnings.push(SkippedFile {
                path: e.path().map(Path::to_path_buf).unwrap_or_default(),
                reason: e.to_string(),
            }),
        }
    }

    let results: Vec<std::result::Result<Option<ExamplePair>, SkippedFile>> = files
        .par_iter()
        .map(|path| {
            let bytes = fs::read(path).map_err(|e| SkippedFile {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let hash = sha256_hex(&bytes);
            let source = String::from_utf8(bytes).map_err(|_| SkippedFile {
                path: path.clone(),
                reason: "invalid UTF-8".to_owned(),
            })?;
            let rel = path.strip_prefix(corpus_root).unwrap_or(path);
            let rel: Vec<_> = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect();
            let id = format!("{}#{}", rel.join("/"), &hash[..12]);
            Ok(ExamplePair::from_source(id, concept, source))
        })
        .collect();

    let mut pairs = Vec::new();
    for r in results {
        match r {
            Ok(Some(p)) => pairs.push(p),
            Ok(None) => {}
            Err(w) => warnings.push(w),
        }
    }
    pairs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(PairSet { pairs, warnings })
}

/// Cochran sample size with finite-population correction, `p = 0.5`.
///
/// `n0 = z^2 / (4 margin^2)` with `z` the standard-normal quantile at
/// `(1 + confidence) / 2`, then `n = n0 / (1 + (n0 - 1) / population)`,
/// rounded to the nearest integer and capped at `population`.
pub fn sample_size(population: usize, confidence: f64, margin: f64) -> Result<usize> {
    if population == 0 {
        return Err(Error::InvalidArgument(
            "population must be at least 1".into(),
        ));
    }
    for (name, v) in [("confidence", confidence), ("margin", margin)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "{name} must lie in (0, 1), got {v}"
            )));
        }
    }
    let z = Normal::standard().inverse_cdf((1.0 + confidence) / 2.0);
    let n0 = z * z * 0.25 / (margin * margin);
    let n = n0 / (1.0 + (n0 - 1.0) / population as f64);
    Ok((n.round() as usize).clamp(1, population))
}

/// Parameters of one fixed-test / growing-train split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// `N`, the fixed test-set size in records.
    pub test_size: usize,
    /// Training records, in `[ceil(0.01 * 2N), N]`.
    pub train_size: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(test_size: usize, train_size: usize, seed: u64) -> Result<Self> {
        if test_size == 0 {
            return Err(Error::InvalidArgument("test_size must be positive".into()));
        }
        let min = grid_train_size(test_size, 1);
        if train_size < min || train_size > test_size {
            return Err(Error::InvalidArgument(format!(
                "train_size {train_size} outside [{min}, {test_size}]"
            )));
        }
        Ok(SplitSpec {
            test_size,
            train_size,
            seed,
        })
    }

    /// The eight specs of the accuracy-curve grid, ascending in train size.
    pub fn grid(test_size: usize, seed: u64) -> Result<Vec<SplitSpec>> {
        TRAIN_GRID_PERCENT
            .iter()
            .map(|&p| SplitSpec::new(test_size, grid_train_size(test_size, p), seed))
            .collect()
    }
}

/// `ceil(percent / 100 * 2N)` in exact integer arithmetic.
pub fn grid_train_size(test_size: usize, percent: usize) -> usize {
    (percent * 2 * test_size).div_ceil(100)
}

/// Seeded permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Split `items` into `(train, test)`.
///
/// The test set is the first `test_size` items of the seeded shuffle and the
/// training set the next `train_size`, so the test set does not depend on
/// `train_size`.
pub fn split<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let required = spec.test_size + spec.train_size;
    if items.len() < required {
        return Err(Error::InsufficientData {
            required,
            available: items.len(),
        });
    }
    let order = shuffled_indices(items.len(), spec.seed);
    let test = order[..spec.test_size]
        .iter()
        .map(|&i| items[i].clone())
        .collect();
    let train = order[spec.test_size..required]
        .iter()
        .map(|&i| items[i].clone())
        .collect();
    Ok((train, test))
}
