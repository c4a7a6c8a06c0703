//! Dataset generation, loading, and non-IID partitioning.
//!
//! Supplies a synthetic Gaussian-cluster classification generator, a loader
//! for IDX raster archives, a label-skewed unbalanced partitioner, and the
//! pooled test set used to score generalization.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distance of each class mean from the origin along its own axis.
pub const SIMPLEX_SCALE: f64 = 2.0;

/// Default per-coordinate standard deviation around each class mean.
pub const DEFAULT_SPREAD: f64 = 0.5;

/// Fraction of samples reserved for testing.
const TEST_FRACTION: f64 = 0.2;

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Errors from dataset generation and loading.
#[derive(Debug, Error)]
pub enum DataError {
    /// An IDX file does not start with the expected magic number.
    #[error("bad idx magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    /// Image and label archives disagree on the sample count.
    #[error("idx count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    /// The file ends before its declared payload.
    #[error("idx file truncated")]
    TruncatedFile,
    /// A label shard cannot supply the requested number of samples.
    #[error("label {label} has too few samples: need {needed}, have {available}")]
    InsufficientSamples {
        label: usize,
        needed: usize,
        available: usize,
    },
    /// Structurally invalid generator or partition parameters.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(std::io::Error),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DataError::TruncatedFile
        } else {
            DataError::Io(e)
        }
    }
}

/// A labeled sample matrix with a train/test split.
///
/// `source_ids` trace every row back to the dataset it was carved from, so
/// partitions can be audited for disjointness and leakage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    /// Row-per-sample feature matrix.
    pub features: Array2<f64>,
    /// Class id per row, each in `[0, n_classes)`.
    pub labels: Vec<usize>,
    /// Number of classes.
    pub n_classes: usize,
    /// Row indices forming the training split.
    pub train_idx: Vec<usize>,
    /// Row indices forming the test split, disjoint from `train_idx`.
    pub test_idx: Vec<usize>,
    /// Stable provenance id per row.
    pub source_ids: Vec<u64>,
}

impl Dataset {
    /// Number of rows.
    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    /// Feature dimension.
    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Checks labels, split disjointness, and length agreement.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.n_samples();
        if self.labels.len() != n || self.source_ids.len() != n {
            return Err(DataError::InvalidSpec(
                "labels and source ids must match the row count".into(),
            ));
        }
        if self.labels.iter().any(|&y| y >= self.n_classes) {
            return Err(DataError::InvalidSpec("label out of class range".into()));
        }
        let train: HashSet<usize> = self.train_idx.iter().cloned().collect();
        for &i in &self.test_idx {
            if i >= n || train.contains(&i) {
                return Err(DataError::InvalidSpec(
                    "test split overlaps train split or exceeds rows".into(),
                ));
            }
        }
        if self.train_idx.iter().any(|&i| i >= n) {
            return Err(DataError::InvalidSpec("train index exceeds rows".into()));
        }
        Ok(())
    }
}

/// How to carve per-UE shards out of a global dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionSpec {
    /// Distinct labels each UE draws from.
    pub labels_per_ue: usize,
    /// Inclusive range for shard sizes; drawn log-uniformly.
    pub samples_per_ue: (u64, u64),
    /// Seed for label assignment, shard sizes, and shuffles.
    pub seed: u64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec {
            labels_per_ue: 2,
            samples_per_ue: (100, 400),
            seed: 0,
        }
    }
}

/// Audit record of one UE's shard.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardManifest {
    pub ue: usize,
    pub labels: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_total: usize,
}

/// Audit record of a whole partition, serializable as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub seed: u64,
    pub labels_per_ue: usize,
    pub per_ue: Vec<ShardManifest>,
}

/// Generates Gaussian class clusters with means on a scaled simplex:
/// class `c` centers at `SIMPLEX_SCALE` along coordinate axis `c`.
pub fn synth_dataset(
    n_classes: usize,
    input_dim: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    synth_dataset_with_spread(n_classes, input_dim, n_samples, DEFAULT_SPREAD, seed)
}

/// [`synth_dataset`] with an explicit per-coordinate standard deviation.
pub fn synth_dataset_with_spread(
    n_classes: usize,
    input_dim: usize,
    n_samples: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n_classes < 2 {
        return Err(DataError::InvalidSpec("need at least two classes".into()));
    }
    if input_dim < n_classes {
        return Err(DataError::InvalidSpec(
            "input dimension must be at least the class count".into(),
        ));
    }
    if n_samples == 0 {
        return Err(DataError::InvalidSpec("need at least one sample".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(DataError::InvalidSpec("spread must be finite and nonnegative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread.max(f64::MIN_POSITIVE))
        .map_err(|_| DataError::InvalidSpec("bad spread".into()))?;
    let mut features = Array2::zeros((n_samples, input_dim));
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let y = rng.random_range(0..n_classes);
        labels.push(y);
        for j in 0..input_dim {
            let mean = if j == y { SIMPLEX_SCALE } else { 0.0 };
            features[[i, j]] = mean + noise.sample(&mut rng);
        }
    }

    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut rng);
    let n_test = ((n_samples as f64) * TEST_FRACTION).round() as usize;
    let n_test = n_test.min(n_samples.saturating_sub(1));
    let test_idx = order.split_off(n_samples - n_test);

    Ok(Dataset {
        features,
        labels,
        n_classes,
        train_idx: order,
        test_idx,
        source_ids: (0..n_samples as u64).collect(),
    })
}

/// Splits the global training pool into per-UE shards: each UE draws from
/// exactly `labels_per_ue` labels, shard sizes vary log-uniformly, and no
/// sample lands in two shards. Each shard carries its own 80/20 split.
pub fn partition_noniid(
    data: &Dataset,
    n_ues: usize,
    spec: &PartitionSpec,
) -> Result<(Vec<Dataset>, PartitionManifest), DataError> {
    data.validate()?;
    let c = data.n_classes;
    if spec.labels_per_ue == 0 || spec.labels_per_ue > c {
        return Err(DataError::InvalidSpec(
            "labels_per_ue must be in [1, n_classes]".into(),
        ));
    }
    if spec.samples_per_ue.0 == 0 || spec.samples_per_ue.0 > spec.samples_per_ue.1 {
        return Err(DataError::InvalidSpec(
            "samples_per_ue must be a positive ascending range".into(),
        ));
    }
    if n_ues == 0 {
        return Err(DataError::InvalidSpec("need at least one ue".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut label_order: Vec<usize> = (0..c).collect();
    label_order.shuffle(&mut rng);

    // Shuffled pool of global train indices per label, consumed by a cursor.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); c];
    for &row in &data.train_idx {
        pools[data.labels[row]].push(row);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let mut cursors = vec![0usize; c];

    let (lo, hi) = spec.samples_per_ue;
    let (ln_lo, ln_hi) = ((lo as f64).ln(), (hi as f64).ln());

    let mut shards = Vec::with_capacity(n_ues);
    let mut manifests = Vec::with_capacity(n_ues);
    for ue in 0..n_ues {
        let size = (ln_lo + rng.random::<f64>() * (ln_hi - ln_lo)).exp().round() as usize;
        let size = size.max(1);
        let ue_labels: Vec<usize> = (0..spec.labels_per_ue)
            .map(|j| label_order[(ue * spec.labels_per_ue + j) % c])
            .collect();

        let mut rows = Vec::with_capacity(size);
        let base = size / ue_labels.len();
        for (j, &label) in ue_labels.iter().enumerate() {
            let want = if j == 0 {
                base + size % ue_labels.len()
            } else {
                base
            };
            let available = pools[label].len() - cursors[label];
            if want > available {
                return Err(DataError::InsufficientSamples {
                    label,
                    needed: want,
                    available,
                });
            }
            rows.extend_from_slice(&pools[label][cursors[label]..cursors[label] + want]);
            cursors[label] += want;
        }
        rows.shuffle(&mut rng);

        let n = rows.len();
        let mut features = Array2::zeros((n, data.input_dim()));
        let mut labels = Vec::with_capacity(n);
        let mut source_ids = Vec::with_capacity(n);
        for (local, &row) in rows.iter().enumerate() {
            features.row_mut(local).assign(&data.features.row(row));
            labels.push(data.labels[row]);
            source_ids.push(data.source_ids[row]);
        }
        let n_test = if n >= 2 {
            (((n as f64) * TEST_FRACTION).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        let shard = Dataset {
            features,
            labels,
            n_classes: c,
            train_idx: (0..n - n_test).collect(),
            test_idx: (n - n_test..n).collect(),
            source_ids,
        };
        manifests.push(ShardManifest {
            ue,
            labels: ue_labels,
            n_train: shard.train_idx.len(),
            n_test: shard.test_idx.len(),
            n_total: n,
        });
        shards.push(shard);
    }

    Ok((
        shards,
        PartitionManifest {
            seed: spec.seed,
            labels_per_ue: spec.labels_per_ue,
            per_ue: manifests,
        },
    ))
}

/// Concatenates every UE's test shard into one all-test pool, keeping the
/// first occurrence of each source id.
pub fn build_generalization_pool(per_ue: &[Dataset]) -> Dataset {
    let input_dim = per_ue.first().map_or(0, Dataset::input_dim);
    let n_classes = per_ue.iter().map(|d| d.n_classes).max().unwrap_or(0);
    let mut seen: HashSet<u64> = HashSet::new();
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for (u, shard) in per_ue.iter().enumerate() {
        for &i in &shard.test_idx {
            if seen.insert(shard.source_ids[i]) {
                rows.push((u, i));
            }
        }
    }
    let mut features = Array2::zeros((rows.len(), input_dim));
    let mut labels = Vec::with_capacity(rows.len());
    let mut source_ids = Vec::with_capacity(rows.len());
    for (local, &(u, i)) in rows.iter().enumerate() {
        features.row_mut(local).assign(&per_ue[u].features.row(i));
        labels.push(per_ue[u].labels[i]);
        source_ids.push(per_ue[u].source_ids[i]);
    }
    let n = rows.len();
    Dataset {
        features,
        labels,
        n_classes,
        train_idx: Vec::new(),
        test_idx: (0..n).collect(),
        source_ids,
    }
}

/// Loads an IDX image/label archive pair. Pixels scale to `[0, 1]`; the
/// last fifth of the rows forms the test split.
pub fn load_idx_archive(
    images_path: &Path,
    labels_path: &Path,
) -> Result<Dataset, DataError> {
    let mut img = std::io::BufReader::new(std::fs::File::open(images_path)?);
    let magic = img.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_IMAGE_MAGIC,
            found: magic,
        });
    }
    let n_images = img.read_u32::<BigEndian>()? as usize;
    let rows = img.read_u32::<BigEndian>()? as usize;
    let cols = img.read_u32::<BigEndian>()? as usize;
    let mut pixels = vec![0u8; n_images * rows * cols];
    img.read_exact(&mut pixels)?;

    let mut lbl = std::io::BufReader::new(std::fs::File::open(labels_path)?);
    let magic = lbl.read_u32::<BigEndian>()?;
    if magic != IDX_LABEL_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_LABEL_MAGIC,
            found: magic,
        });
    }
    let n_labels = lbl.read_u32::<BigEndian>()? as usize;
    if n_labels != n_images {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let mut raw_labels = vec![0u8; n_labels];
    lbl.read_exact(&mut raw_labels)?;

    let dim = rows * cols;
    let mut features = Array2::zeros((n_images, dim));
    for i in 0..n_images {
        for j in 0..dim {
            features[[i, j]] = pixels[i * dim + j] as f64 / 255.0;
        }
    }
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let n_test = n_images / 5;
    Ok(Dataset {
        features,
        labels,
        n_classes,
        train_idx: (0..n_images - n_test).collect(),
        test_idx: (n_images - n_test..n_images).collect(),
        source_ids: (0..n_images as u64).collect(),
    })
}
