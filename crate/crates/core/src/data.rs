//! Datasets, IDX ingestion, train/test splitting and non-IID partitioning.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::seed;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Feature matrix (one row per sample) with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if features.nrows() != labels.len() {
            return Err(DataError::InvalidArgument(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(DataError::InvalidArgument("num_classes must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self { features, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copies the rows listed in `indices` into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// A view over every sample.
    pub fn view(&self) -> ShardView<'_> {
        ShardView { dataset: self, indices: (0..self.len()).collect(), relabeled: None }
    }

    pub fn shard<'a>(&'a self, indices: &[usize]) -> ShardView<'a> {
        ShardView { dataset: self, indices: indices.to_vec(), relabeled: None }
    }
}

/// A subset of a parent dataset, optionally with replacement labels.
///
/// Relabeling never touches the parent; the overriding labels live in the
/// view itself.
#[derive(Clone, Debug)]
pub struct ShardView<'a> {
    dataset: &'a LabeledDataset,
    indices: Vec<usize>,
    relabeled: Option<Vec<usize>>,
}

impl<'a> ShardView<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dataset(&self) -> &'a LabeledDataset {
        self.dataset
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn label(&self, k: usize) -> usize {
        match &self.relabeled {
            Some(labels) => labels[k],
            None => self.dataset.labels[self.indices[k]],
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|k| self.label(k)).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.dataset.num_classes
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Self {
        assert_eq!(labels.len(), self.indices.len());
        self.relabeled = Some(labels);
        self
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for k in 0..self.len() {
            counts[self.label(k)] += 1;
        }
        counts
    }
}

/// Per-client sample-index lists into a parent dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub client_shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.client_shards.len()
    }

    pub fn total_samples(&self) -> usize {
        self.client_shards.iter().map(Vec::len).sum()
    }

    /// Checks disjointness and index validity against a parent of `parent_len` rows.
    pub fn validate(&self, parent_len: usize) -> Result<(), DataError> {
        let mut seen = vec![false; parent_len];
        for (c, shard) in self.client_shards.iter().enumerate() {
            for &i in shard {
                if i >= parent_len {
                    return Err(DataError::InvalidArgument(format!(
                        "client {c}: index {i} out of range"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(DataError::InvalidArgument(format!(
                        "index {i} assigned twice"
                    )));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// IDX format

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    let io = |source| DataError::Io { path: path.to_path_buf(), source };
    let mut raw = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut raw)).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated { expected: at + 4, actual: bytes.len() })
}

/// Parses an IDX image file: returns `(count, pixels_per_image, raw pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8]), DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic { expected: IDX_IMAGES_MAGIC, found: magic });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let pixels = rows * cols;
    let expected = 16 + count * pixels;
    if bytes.len() < expected {
        return Err(DataError::Truncated { expected, actual: bytes.len() });
    }
    Ok((count, pixels, &bytes[16..expected]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8], DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic { expected: IDX_LABELS_MAGIC, found: magic });
    }
    let count = be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(DataError::Truncated { expected, actual: bytes.len() });
    }
    Ok(&bytes[8..expected])
}

/// Loads an IDX image/label pair (plain or gzip-compressed).
///
/// Pixels are scaled to `[0, 1]` by dividing by 255; the dataset always has
/// ten classes.
pub fn load_idx_dataset(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset, DataError> {
    let image_bytes = read_file(images_path.as_ref())?;
    let label_bytes = read_file(labels_path.as_ref())?;
    let (count, pixels, raw) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != count {
        return Err(DataError::CountMismatch { images: count, labels: labels.len() });
    }
    let features = Array2::from_shape_vec(
        (count, pixels),
        raw.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("shape matches byte count");
    LabeledDataset::new(features, labels.iter().map(|&l| l as usize).collect(), 10)
}

/// Encodes images in IDX format (used for fixtures and exports).
pub fn encode_idx_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for word in [IDX_IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    for img in images {
        assert_eq!(img.len(), rows * cols);
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<(), DataError> {
    let path = path.as_ref();
    File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Gaussian blobs with unit variance, one mean per class.
///
/// When `dim >= num_classes` the means sit on scaled basis vectors
/// (`separation / sqrt(2) * e_c`, pairwise distance exactly `separation`);
/// otherwise they are spaced `separation` apart on the first axis.
pub fn generate_synthetic_dataset(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    if num_classes < 2 || per_class == 0 || dim == 0 || !(separation > 0.0) {
        return Err(DataError::InvalidArgument(format!(
            "synthetic dataset needs num_classes >= 2, per_class >= 1, dim >= 1, separation > 0 \
             (got {num_classes}, {per_class}, {dim}, {separation})"
        )));
    }
    let mut means = Array2::<f64>::zeros((num_classes, dim));
    for c in 0..num_classes {
        if dim >= num_classes {
            means[(c, c)] = separation / std::f64::consts::SQRT_2;
        } else {
            means[(c, 0)] = separation * c as f64;
        }
    }
    let mut rng = seed::derive_rng(seed, seed::Purpose::Synthetic, 0, 0);
    let n = num_classes * per_class;
    let mut features = Array2::<f64>::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        for k in 0..per_class {
            let row = c * per_class + k;
            for j in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                features[(row, j)] = means[(c, j)] + z;
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, num_classes)
}

// ---------------------------------------------------------------------------
// Splitting and partitioning

/// Shuffled split; the test side gets `floor((1 - train_fraction) * n)` samples.
pub fn split_train_test(
    ds: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    let (train, test) = split_indices(ds.len(), train_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

pub fn split_indices(
    n: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::derive_rng(seed, seed::Purpose::Split, 0, 0));
    // 1e-9 absorbs representation error such as (1 - 0.8) * 100 = 19.999...
    let n_test = (((1.0 - train_fraction) * n as f64) + 1e-9).floor() as usize;
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

/// Drops uniformly random samples from every shard larger than `cap`.
pub fn enforce_cap(partition: &mut Partition, cap: usize, seed: u64) {
    for (c, shard) in partition.client_shards.iter_mut().enumerate() {
        if shard.len() > cap {
            let mut rng = seed::derive_rng(seed, seed::Purpose::Partition, 1_000 + c as u64, 0);
            shard.shuffle(&mut rng);
            shard.truncate(cap);
            shard.sort_unstable();
        }
    }
}

/// Distribution 1 ("k% non-IID").
///
/// `k_percent` of the samples are sorted by label and cut at random points
/// into `2 * n_clients` contiguous shards of unequal size, two per client;
/// the remaining samples are dealt out round-robin so every client receives
/// an equal share (sizes differ by at most one). Shards larger than
/// `per_client_cap` lose uniformly random samples.
pub fn partition_distribution1(
    ds: &LabeledDataset,
    n_clients: usize,
    k_percent: f64,
    per_client_cap: usize,
    seed: u64,
) -> Result<Partition, DataError> {
    partition_distribution1_with(ds, n_clients, k_percent, per_client_cap, 2, seed)
}

pub fn partition_distribution1_with(
    ds: &LabeledDataset,
    n_clients: usize,
    k_percent: f64,
    per_client_cap: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<Partition, DataError> {
    if n_clients == 0 {
        return Err(DataError::InvalidArgument("n_clients must be at least 1".into()));
    }
    if !(0.0..=100.0).contains(&k_percent) {
        return Err(DataError::InvalidArgument(format!(
            "k_percent must lie in [0, 100], got {k_percent}"
        )));
    }
    if shards_per_client == 0 {
        return Err(DataError::InvalidArgument("shards_per_client must be at least 1".into()));
    }
    let n = ds.len();
    let n_skewed = ((k_percent / 100.0) * n as f64).round() as usize;
    let n_equal = n - n_skewed;
    let equal_share = n_equal.div_ceil(n_clients);
    if per_client_cap < equal_share {
        return Err(DataError::Infeasible(format!(
            "per-client cap {per_client_cap} below the equal share {equal_share}"
        )));
    }

    let mut rng = seed::derive_rng(seed, seed::Purpose::Partition, 0, 0);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let equal_part = idx.split_off(n_skewed);
    let mut skewed = idx;
    // Stable sort keeps the shuffled order inside each label.
    skewed.sort_by_key(|&i| ds.labels()[i]);

    let mut shards = vec![Vec::new(); n_clients];
    for (k, &i) in equal_part.iter().enumerate() {
        shards[k % n_clients].push(i);
    }

    let pieces = n_clients * shards_per_client;
    if n_skewed > 0 {
        let mut cuts: Vec<usize> = (0..pieces - 1).map(|_| rng.random_range(0..=n_skewed)).collect();
        cuts.sort_unstable();
        let mut bounds = Vec::with_capacity(pieces + 1);
        bounds.push(0);
        bounds.extend(cuts);
        bounds.push(n_skewed);
        let mut order: Vec<usize> = (0..pieces).collect();
        order.shuffle(&mut rng);
        for (slot, &piece) in order.iter().enumerate() {
            let client = slot / shards_per_client;
            shards[client].extend_from_slice(&skewed[bounds[piece]..bounds[piece + 1]]);
        }
    }
    for shard in &mut shards {
        shard.sort_unstable();
    }
    let mut partition = Partition { client_shards: shards };
    enforce_cap(&mut partition, per_client_cap, seed);
    Ok(partition)
}

/// Distribution 2: every client holds samples from at most
/// `classes_per_client` labels.
///
/// Classes are laid out as a repeating cycle of one shuffled permutation and
/// each client takes the next `classes_per_client` entries, so a client's
/// classes are always distinct and the first `num_classes` slots cover every
/// class. Each class is then split evenly across its holders.
pub fn partition_distribution2(
    ds: &LabeledDataset,
    n_clients: usize,
    classes_per_client: usize,
    seed: u64,
) -> Result<Partition, DataError> {
    let num_classes = ds.num_classes();
    if n_clients == 0 {
        return Err(DataError::InvalidArgument("n_clients must be at least 1".into()));
    }
    if classes_per_client == 0 || classes_per_client > num_classes {
        return Err(DataError::InvalidArgument(format!(
            "classes_per_client must lie in [1, {num_classes}], got {classes_per_client}"
        )));
    }
    if n_clients * classes_per_client < num_classes {
        return Err(DataError::Infeasible(format!(
            "{n_clients} clients x {classes_per_client} classes cannot cover {num_classes} classes"
        )));
    }
    let mut rng = seed::derive_rng(seed, seed::Purpose::Partition, 1, 0);
    let mut perm: Vec<usize> = (0..num_classes).collect();
    perm.shuffle(&mut rng);

    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for client in 0..n_clients {
        for j in 0..classes_per_client {
            let class = perm[(client * classes_per_client + j) % num_classes];
            holders[class].push(client);
        }
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut shards = vec![Vec::new(); n_clients];
    for (class, mut members) in by_class.into_iter().enumerate() {
        members.shuffle(&mut rng);
        let owners = &holders[class];
        for (k, i) in members.into_iter().enumerate() {
            shards[owners[k % owners.len()]].push(i);
        }
    }
    for shard in &mut shards {
        shard.sort_unstable();
    }
    Ok(Partition { client_shards: shards })
}
