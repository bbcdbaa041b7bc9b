//! Labeled batches: IDX files, synthetic blobs and seeded batch order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::rng::{stream, SeededRng};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wrong IDX magic: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },
    #[error("truncated IDX file: header promises {expected} bytes, file has {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("IDX dimensions overflow the address space")]
    SizeOverflow,
    #[error("IDX file holds no items")]
    Empty,
    #[error("label {label} at index {index} is out of range for {n_classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: u8,
        n_classes: usize,
    },
    #[error("image file has {images} items but label file has {labels}")]
    Pairing { images: usize, labels: usize },
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("batch size {batch_size} exceeds the {rows} available rows")]
    BatchTooLarge { batch_size: usize, rows: usize },
}

/// Images `[m, d]` with values in `[0, 1]` and one-hot labels `[m, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    images: Tensor,
    labels: Tensor,
    classes: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(images: Tensor, labels: Tensor) -> Result<Self, DataError> {
        if images.shape().len() != 2 || labels.shape().len() != 2 {
            return Err(DataError::InvalidBatch(
                "images and labels must be matrices".into(),
            ));
        }
        if images.rows() != labels.rows() {
            return Err(DataError::Pairing {
                images: images.rows(),
                labels: labels.rows(),
            });
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::InvalidBatch(format!(
                "image value {v} outside [0, 1]"
            )));
        }
        let classes = one_hot_classes(&labels)?;
        Ok(LabeledBatch {
            images,
            labels,
            classes,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    /// Hot index of every label row.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledBatch {
        LabeledBatch {
            images: self.images.gather_rows(indices),
            labels: self.labels.gather_rows(indices),
            classes: indices.iter().map(|&i| self.classes[i]).collect(),
        }
    }
}

fn one_hot_classes(labels: &Tensor) -> Result<Vec<usize>, DataError> {
    labels
        .row_iter()
        .enumerate()
        .map(|(i, row)| {
            let hot: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, _)| j)
                .collect();
            match hot.as_slice() {
                [j] if row[*j] == 1.0 => Ok(*j),
                _ => Err(DataError::InvalidBatch(format!(
                    "label row {i} is not one-hot"
                ))),
            }
        })
        .collect()
}

pub fn one_hot(classes: &[usize], n_classes: usize) -> Tensor {
    let mut data = vec![0.0; classes.len() * n_classes];
    for (i, &c) in classes.iter().enumerate() {
        data[i * n_classes + c] = 1.0;
    }
    Tensor::new(vec![classes.len(), n_classes], data).expect("one-hot shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: LabeledBatch,
    pub test: LabeledBatch,
    pub n_classes: usize,
    pub dim: usize,
}

impl Dataset {
    pub fn new(train: LabeledBatch, test: LabeledBatch) -> Result<Self, DataError> {
        if train.dim() != test.dim() || train.n_classes() != test.n_classes() {
            return Err(DataError::InvalidBatch(format!(
                "train split is {}x{} classes but test split is {}x{}",
                train.dim(),
                train.n_classes(),
                test.dim(),
                test.n_classes()
            )));
        }
        Ok(Dataset {
            n_classes: train.n_classes(),
            dim: train.dim(),
            train,
            test,
        })
    }

    /// Train and test splits from IDX image/label file pairs.
    pub fn from_idx_files(
        train_images: &Path,
        train_labels: &Path,
        test_images: &Path,
        test_labels: &Path,
        n_classes: usize,
    ) -> Result<Self, DataError> {
        let train = load_idx_pair(train_images, train_labels, n_classes)?;
        let test = load_idx_pair(test_images, test_labels, n_classes)?;
        Dataset::new(train, test)
    }

    /// One IDX pair split 80/20 into train/test by position (every fifth row is test).
    pub fn from_idx_pair_split(
        images: &Path,
        labels: &Path,
        n_classes: usize,
    ) -> Result<Self, DataError> {
        let all = load_idx_pair(images, labels, n_classes)?;
        if all.len() < 5 {
            return Err(DataError::InvalidArgument(
                "need at least 5 items to split off a test set".into(),
            ));
        }
        let (train, test): (Vec<usize>, Vec<usize>) = (0..all.len()).partition(|i| i % 5 != 4);
        Dataset::new(all.select(&train), all.select(&test))
    }
}

pub fn load_idx_pair(
    images: &Path,
    labels: &Path,
    n_classes: usize,
) -> Result<LabeledBatch, DataError> {
    let x = load_idx_images(images)?;
    let y = load_idx_labels(labels, n_classes)?;
    LabeledBatch::new(x, y)
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_idx_images(path: &Path) -> Result<Tensor, DataError> {
    decode_idx_images(&read(path)?)
}

pub fn load_idx_labels(path: &Path, n_classes: usize) -> Result<Tensor, DataError> {
    decode_idx_labels(&read(path)?, n_classes)
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn check_header(bytes: &[u8], magic: u32, header_len: usize) -> Result<(), DataError> {
    if bytes.len() < 4 {
        return Err(DataError::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(DataError::WrongMagic {
            expected: magic,
            found,
        });
    }
    if bytes.len() < header_len {
        return Err(DataError::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Parses an IDX image file: magic, count, rows, cols (big-endian `u32`)
/// then unsigned pixel bytes. Pixels are scaled by 1/255 and each image is
/// flattened row-major into one row of the result.
pub fn decode_idx_images(bytes: &[u8]) -> Result<Tensor, DataError> {
    check_header(bytes, IDX_IMAGES_MAGIC, 16)?;
    let m = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let d = rows.checked_mul(cols).ok_or(DataError::SizeOverflow)?;
    let total = m.checked_mul(d).ok_or(DataError::SizeOverflow)?;
    let expected = total.checked_add(16).ok_or(DataError::SizeOverflow)?;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if m == 0 || d == 0 {
        return Err(DataError::Empty);
    }
    let data = bytes[16..expected]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Ok(Tensor::new(vec![m, d], data).expect("pixels are finite"))
}

pub fn decode_idx_labels(bytes: &[u8], n_classes: usize) -> Result<Tensor, DataError> {
    check_header(bytes, IDX_LABELS_MAGIC, 8)?;
    let m = be_u32(bytes, 4) as usize;
    let expected = m.checked_add(8).ok_or(DataError::SizeOverflow)?;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if m == 0 || n_classes == 0 {
        return Err(DataError::Empty);
    }
    let raw = &bytes[8..expected];
    if let Some((index, &label)) = raw
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= n_classes)
    {
        return Err(DataError::LabelOutOfRange {
            index,
            label,
            n_classes,
        });
    }
    let classes: Vec<usize> = raw.iter().map(|&l| l as usize).collect();
    Ok(one_hot(&classes, n_classes))
}

/// Encodes `pixels` (`m * rows * cols` bytes) as an IDX image file.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let m = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, m as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Parameters of the synthetic Gaussian-blob dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobsConfig {
    pub n_classes: usize,
    pub dim: usize,
    pub m_per_class: usize,
    pub seed: u64,
    #[serde(default = "default_spread")]
    pub spread: f64,
}

fn default_spread() -> f64 {
    0.15
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig {
            n_classes: 10,
            dim: 64,
            m_per_class: 100,
            seed: 42,
            spread: default_spread(),
        }
    }
}

/// Class `c` is centered at `0.8 * e_c` with isotropic Gaussian noise of
/// standard deviation `spread`, clipped to `[0, 1]`.
///
/// Samples are drawn round by round (one sample of every class per round);
/// every fifth round goes to the test split, the rest to train.
pub fn synthetic_blobs(cfg: &BlobsConfig) -> Result<Dataset, DataError> {
    if cfg.n_classes < 2 {
        return Err(DataError::InvalidArgument("need at least 2 classes".into()));
    }
    if cfg.dim < cfg.n_classes {
        return Err(DataError::InvalidArgument(format!(
            "dim {} must be at least the number of classes {}",
            cfg.dim, cfg.n_classes
        )));
    }
    if cfg.m_per_class < 5 {
        return Err(DataError::InvalidArgument(
            "need at least 5 samples per class for the 80/20 split".into(),
        ));
    }
    if !(cfg.spread >= 0.0 && cfg.spread.is_finite()) {
        return Err(DataError::InvalidArgument(format!(
            "spread must be finite and non-negative, got {}",
            cfg.spread
        )));
    }
    let mut rng = SeededRng::with_stream(cfg.seed, stream::DATA);
    let mut split = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for round in 0..cfg.m_per_class {
        let target = &mut split[usize::from(round % 5 == 4)];
        for class in 0..cfg.n_classes {
            for d in 0..cfg.dim {
                let center = if d == class { 0.8 } else { 0.0 };
                let v = center + cfg.spread * rng.normal();
                target.0.push(v.clamp(0.0, 1.0));
            }
            target.1.push(class);
        }
    }
    let [train, test] = split.map(|(x, classes)| {
        let m = classes.len();
        LabeledBatch::new(
            Tensor::new(vec![m, cfg.dim], x).expect("finite"),
            one_hot(&classes, cfg.n_classes),
        )
        .expect("valid synthetic batch")
    });
    Dataset::new(train, test)
}

/// Endless seeded sequence of row-index batches over `rows` rows.
///
/// Each epoch is a fresh shuffle of all rows cut into `rows / size` batches;
/// the final partial batch is dropped.
#[derive(Debug, Clone)]
pub struct IndexBatches {
    size: usize,
    rng: SeededRng,
    perm: Vec<usize>,
    cursor: usize,
}

impl IndexBatches {
    pub fn new(rows: usize, size: usize, rng: SeededRng) -> Result<Self, DataError> {
        if size == 0 || size > rows {
            return Err(DataError::BatchTooLarge {
                batch_size: size,
                rows,
            });
        }
        Ok(IndexBatches {
            size,
            rng,
            perm: (0..rows).collect(),
            cursor: rows,
        })
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor + self.size > self.perm.len() {
            self.perm.sort_unstable();
            self.rng.shuffle(&mut self.perm);
            self.cursor = 0;
        }
        let out = self.perm[self.cursor..self.cursor + self.size].to_vec();
        self.cursor += self.size;
        out
    }
}

/// Endless seeded batches drawn from `batch`.
pub fn batch_iter(
    batch: &LabeledBatch,
    batch_size: usize,
    seed: u64,
) -> Result<impl Iterator<Item = LabeledBatch> + '_, DataError> {
    let mut order = IndexBatches::new(batch.len(), batch_size, SeededRng::new(seed))?;
    Ok(std::iter::from_fn(move || {
        Some(batch.select(&order.next_indices()))
    }))
}

/// Where a dataset comes from: synthetic blobs or IDX files on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Synthetic(BlobsConfig),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Separate test files; without them every fifth row is held out.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        #[serde(default = "default_idx_classes")]
        n_classes: usize,
    },
}

fn default_idx_classes() -> usize {
    10
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset, DataError> {
        match self {
            DatasetSpec::Synthetic(cfg) => synthetic_blobs(cfg),
            DatasetSpec::Idx {
                images,
                labels,
                test_images,
                test_labels,
                n_classes,
            } => match (test_images, test_labels) {
                (Some(ti), Some(tl)) => Dataset::from_idx_files(images, labels, ti, tl, *n_classes),
                (None, None) => Dataset::from_idx_pair_split(images, labels, *n_classes),
                _ => Err(DataError::InvalidArgument(
                    "test images and test labels must be given together".into(),
                )),
            },
        }
    }

    /// Short human-readable identity, e.g. `blobs(n=10,dim=64,m=100,spread=0.15,seed=42)`.
    pub fn label(&self) -> String {
        match self {
            DatasetSpec::Synthetic(c) => format!(
                "blobs(n={},dim={},m={},spread={},seed={})",
                c.n_classes, c.dim, c.m_per_class, c.spread, c.seed
            ),
            DatasetSpec::Idx {
                images,
                labels,
                test_images,
                test_labels,
                ..
            } => {
                let mut s = format!("idx({},{}", images.display(), labels.display());
                if let (Some(ti), Some(tl)) = (test_images, test_labels) {
                    s.push_str(&format!(";{},{}", ti.display(), tl.display()));
                }
                s.push(')');
                s
            }
        }
    }
}
