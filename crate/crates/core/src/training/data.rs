//! Datasets, MNIST IDX ingestion and stratified subsampling.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Images stored flat as `n × features`; `sample_shape` records the per-sample
/// layout (e.g. `[1, 28, 28]`) used when a convolutional model asks for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub sample_shape: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        sample_shape: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        let (n, features) = images.dims2()?;
        if labels.len() != n {
            return Err(Error::Dimension(format!("{n} images but {} labels", labels.len())));
        }
        if sample_shape.iter().product::<usize>() != features {
            return Err(Error::Dimension(format!(
                "sample shape {sample_shape:?} does not hold {features} features"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self { images, labels, sample_shape, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.images.shape()[1]
    }

    /// Rows `indices` as `[k, features]`, or `[k, ..sample_shape]` when `spatial`.
    pub fn batch(&self, indices: &[usize], spatial: bool) -> Result<(Tensor, Vec<usize>)> {
        let f = self.features();
        let mut data = Vec::with_capacity(indices.len() * f);
        for &i in indices {
            data.extend_from_slice(self.images.row(i));
        }
        let mut shape = vec![indices.len()];
        if spatial {
            shape.extend_from_slice(&self.sample_shape);
        } else {
            shape.push(f);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(shape, data)?, labels))
    }

    pub fn select(&self, indices: &[usize], split: Split) -> Result<Self> {
        let (images, labels) = self.batch(indices, false)?;
        Self::new(images, labels, self.sample_shape.clone(), self.classes, split)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length(format!("{what}: header truncated")))
}

/// Parses an IDX image file into `(count, rows, cols, pixels/255)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let magic = read_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = read_u32(bytes, 4, "images")? as usize;
    let rows = read_u32(bytes, 8, "images")? as usize;
    let cols = read_u32(bytes, 12, "images")? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Length(format!("image payload has {} bytes, header promises {need}", body.len())));
    }
    Ok((n, rows, cols, body[..need].iter().map(|&b| f64::from(b) / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = read_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Length(format!("label payload has {} bytes, header promises {n}", body.len())));
    }
    Ok(body[..n].iter().map(|&b| b as usize).collect())
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::Length(format!("{n} images but {} labels", labels.len())));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    Dataset::new(Tensor::new(vec![n, rows * cols], pixels)?, labels, vec![1, rows, cols], classes, split)
}

/// The official MNIST train and test sets.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: Dataset,
    pub test: Dataset,
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

impl Mnist {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = |name: &str| -> Result<PathBuf> {
            let p = dir.join(name);
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::Input(format!("missing MNIST file {}", p.display())))
            }
        };
        Ok(Self {
            train: load_mnist_idx(&path(MNIST_FILES[0])?, &path(MNIST_FILES[1])?, Split::Train)?,
            test: load_mnist_idx(&path(MNIST_FILES[2])?, &path(MNIST_FILES[3])?, Split::Test)?,
        })
    }

    /// `$SKO_DATA_DIR`, then `./data/mnist`, whichever holds the files.
    pub fn default_dir() -> Option<PathBuf> {
        std::env::var_os("SKO_DATA_DIR")
            .map(PathBuf::from)
            .into_iter()
            .chain([PathBuf::from("data/mnist")])
            .find(|d| d.join(MNIST_FILES[0]).is_file())
    }

    /// Splits the official training set into `(train pool, validation)` with
    /// `val_size` samples held out by a seeded permutation.
    pub fn holdout(&self, val_size: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        let n = self.train.len();
        if val_size >= n {
            return Err(Error::Parameter(format!("validation size {val_size} ≥ {n}")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut RngStream::derive(seed, &[0x76_616c]).generator());
        let (val, pool) = idx.split_at(val_size);
        Ok((self.train.select(pool, Split::Train)?, self.train.select(val, Split::Val)?))
    }
}

/// Class-stratified sample of `size` rows, deterministic in `stream`.
///
/// Quotas are filled evenly across classes; a class with too few samples
/// hands its remainder to the others. The result is shuffled.
pub fn subsample(ds: &Dataset, size: usize, stream: &RngStream) -> Result<Dataset> {
    if size > ds.len() {
        return Err(Error::Parameter(format!("subsample of {size} from {} rows", ds.len())));
    }
    if size == 0 {
        return Err(Error::Parameter("subsample size must be positive".into()));
    }
    let mut rng = stream.generator();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    let mut quota = vec![0usize; ds.classes];
    let mut left = size;
    while left > 0 {
        let open: Vec<usize> = (0..ds.classes).filter(|&k| quota[k] < by_class[k].len()).collect();
        let share = (left / open.len()).max(1);
        for &k in &open {
            if left == 0 {
                break;
            }
            let take = share.min(by_class[k].len() - quota[k]).min(left);
            quota[k] += take;
            left -= take;
        }
    }
    let mut chosen: Vec<usize> = by_class.iter().zip(&quota).flat_map(|(m, &q)| m[..q].iter().copied()).collect();
    chosen.shuffle(&mut rng);
    ds.select(&chosen, ds.split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGES_MAGIC, n, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    fn toy(labels: Vec<usize>, classes: usize) -> Dataset {
        let n = labels.len();
        let images = Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        Dataset::new(images, labels, vec![1], classes, Split::Train).unwrap()
    }

    #[test]
    fn image_round_trip() {
        let (n, r, c, px) = parse_idx_images(&idx_images(2, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 4])).unwrap();
        assert_eq!((n, r, c), (2, 2, 2));
        assert_eq!(px[1], 1.0);
        assert_eq!(px[2], 0.2);
        assert_eq!(px[4], 1.0 / 255.0);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bad = idx_labels(&[1, 2]);
        bad[3] = 0x03;
        assert!(matches!(parse_idx_labels(&bad), Err(Error::Format(_))));
        let mut bad = idx_images(1, 1, 1, &[0]);
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_is_length_error() {
        assert!(matches!(parse_idx_images(&idx_images(2, 2, 2, &[0; 7])), Err(Error::Length(_))));
        assert!(matches!(parse_idx_labels(&idx_labels(&[1, 2])[..9]), Err(Error::Length(_))));
        assert!(matches!(parse_idx_labels(&[0, 0, 8]), Err(Error::Length(_))));
    }

    #[test]
    fn files_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("img"), idx_images(3, 1, 2, &[0, 1, 2, 3, 4, 5])).unwrap();
        fs::write(dir.path().join("lab"), idx_labels(&[7, 0, 9])).unwrap();
        let ds = load_mnist_idx(&dir.path().join("img"), &dir.path().join("lab"), Split::Test).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.labels, vec![7, 0, 9]);
        assert_eq!(ds.sample_shape, vec![1, 1, 2]);
        assert_eq!(ds.images.row(2), &[4.0 / 255.0, 5.0 / 255.0]);
        fs::write(dir.path().join("lab2"), idx_labels(&[7, 0])).unwrap();
        assert!(load_mnist_idx(&dir.path().join("img"), &dir.path().join("lab2"), Split::Test).is_err());
    }

    #[test]
    fn stratified_quotas() {
        let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let ds = toy(labels, 10);
        let s = subsample(&ds, 500, &RngStream::new(1, 0)).unwrap();
        assert_eq!(s.class_counts(), vec![50; 10]);
        let s = subsample(&ds, 503, &RngStream::new(1, 0)).unwrap();
        assert!(s.class_counts().iter().all(|&c| (50..=51).contains(&c)));
    }

    #[test]
    fn short_class_hands_over_quota() {
        let mut labels = vec![0usize; 2];
        labels.extend(vec![1usize; 100]);
        let s = subsample(&toy(labels, 2), 50, &RngStream::new(2, 0)).unwrap();
        assert_eq!(s.class_counts(), vec![2, 48]);
    }

    #[test]
    fn full_size_is_permutation() {
        let ds = toy((0..37).map(|i| i % 3).collect(), 3);
        let s = subsample(&ds, 37, &RngStream::new(3, 0)).unwrap();
        let mut rows: Vec<f64> = s.images.data().to_vec();
        rows.sort_by(f64::total_cmp);
        assert_eq!(rows, (0..37).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_and_bounded() {
        let ds = toy((0..200).map(|i| i % 4).collect(), 4);
        let a = subsample(&ds, 60, &RngStream::new(5, 1)).unwrap();
        let b = subsample(&ds, 60, &RngStream::new(5, 1)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(subsample(&ds, 201, &RngStream::new(5, 1)), Err(Error::Parameter(_))));
    }
}
