//! Data plumbing: IDX image/label ingestion, binary model persistence,
//! PGM image export, and target-distribution construction.
//!
//! The IDX container uses big-endian headers (magic 0x00000803 for images,
//! 0x00000801 for labels). Model files use the little-endian NNIV layout
//! described at [`save_model`]. PGM output is binary P5 with maxval 255.

use crate::linalg::{Matrix, Vector};
use crate::network::{ActivationKind, ClassDistribution, LinearLayer, Network, NetworkError};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

pub const MODEL_MAGIC: [u8; 4] = *b"NNIV";
pub const MODEL_VERSION: u32 = 1;

/// Canonical MNIST file names inside a data directory.
pub const TRAIN_IMAGES_FILE: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS_FILE: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES_FILE: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS_FILE: &str = "t10k-labels-idx1-ubyte";

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "NETINVERT_DATA";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {got:#010x}, expected {expected:#010x}")]
    BadMagic { path: String, expected: u32, got: u32 },
    #[error("{path}: payload holds {got} bytes, expected {expected}")]
    PayloadLength { path: String, expected: usize, got: usize },
    #[error("{path}: header truncated")]
    TruncatedHeader { path: String },
    #[error("dataset has {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("image {index} has {got} pixels, expected {expected}")]
    ImageSizeMismatch { index: usize, expected: usize, got: usize },
    #[error("pixel value {value} at image {index} is outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error("label {label} at index {index} is out of range (max {max})")]
    LabelOutOfRange { index: usize, label: usize, max: usize },
    #[error("model file {path}: bad magic")]
    BadModelMagic { path: String },
    #[error("model file {path}: unknown version {got}")]
    UnknownModelVersion { path: String, got: u32 },
    #[error("model file {path}: unknown activation id {id}")]
    UnknownActivation { path: String, id: u32 },
    #[error("model file {path}: declared dimensions inconsistent with payload")]
    InconsistentModel { path: String },
    #[error("only softmax classifiers can be persisted")]
    NotAClassifier,
    #[error("pgm: vector length {len} does not match {width}x{height}")]
    PgmSizeMismatch { len: usize, width: usize, height: usize },
    #[error("target peak {peak} out of range: must lie in (1/{classes}, 1)")]
    InvalidPeak { peak: f64, classes: usize },
    #[error("class index {class_index} out of range for {classes} classes")]
    ClassOutOfRange { class_index: usize, classes: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

/// Labeled image collection: flattened pixel vectors in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<Vector>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Vec<Vector>, labels: Vec<usize>) -> Result<Self, DataError> {
        if images.len() != labels.len() {
            return Err(DataError::CountMismatch { images: images.len(), labels: labels.len() });
        }
        let dim = images.first().map_or(0, |im| im.len());
        for (index, image) in images.iter().enumerate() {
            if image.len() != dim {
                return Err(DataError::ImageSizeMismatch { index, expected: dim, got: image.len() });
            }
            for &value in image {
                if !(0.0..=1.0).contains(&value) {
                    return Err(DataError::PixelOutOfRange { index, value });
                }
            }
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Vector] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_dim(&self) -> usize {
        self.images.first().map_or(0, |im| im.len())
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::TruncatedHeader { path: path.display().to_string() })
}

/// Loads an IDX image/label pair into a dataset, scaling pixel bytes by
/// 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let image_bytes = fs::read(images_path).map_err(|e| io_err(images_path, e))?;
    let label_bytes = fs::read(labels_path).map_err(|e| io_err(labels_path, e))?;

    let magic = read_be_u32(&image_bytes, 0, images_path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: images_path.display().to_string(),
            expected: IDX_IMAGE_MAGIC,
            got: magic,
        });
    }
    let n_images = read_be_u32(&image_bytes, 4, images_path)? as usize;
    let rows = read_be_u32(&image_bytes, 8, images_path)? as usize;
    let cols = read_be_u32(&image_bytes, 12, images_path)? as usize;
    let pixels = rows * cols;
    let expected = 16 + n_images * pixels;
    if image_bytes.len() != expected {
        return Err(DataError::PayloadLength {
            path: images_path.display().to_string(),
            expected,
            got: image_bytes.len(),
        });
    }

    let magic = read_be_u32(&label_bytes, 0, labels_path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_path.display().to_string(),
            expected: IDX_LABEL_MAGIC,
            got: magic,
        });
    }
    let n_labels = read_be_u32(&label_bytes, 4, labels_path)? as usize;
    let expected = 8 + n_labels;
    if label_bytes.len() != expected {
        return Err(DataError::PayloadLength {
            path: labels_path.display().to_string(),
            expected,
            got: label_bytes.len(),
        });
    }

    if n_images != n_labels {
        return Err(DataError::CountMismatch { images: n_images, labels: n_labels });
    }

    let mut images = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let start = 16 + i * pixels;
        let image: Vector = image_bytes[start..start + pixels]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        images.push(image);
    }
    let labels: Vec<usize> = label_bytes[8..].iter().map(|&b| b as usize).collect();

    Dataset::new(images, labels)
}

/// Resolves the data directory: `NETINVERT_DATA` if set, else `./data`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

/// Loads the canonical training split from a data directory.
pub fn load_train(dir: &Path) -> Result<Dataset, DataError> {
    load_idx(&dir.join(TRAIN_IMAGES_FILE), &dir.join(TRAIN_LABELS_FILE))
}

/// Loads the canonical held-out split from a data directory.
pub fn load_validation(dir: &Path) -> Result<Dataset, DataError> {
    load_idx(&dir.join(TEST_IMAGES_FILE), &dir.join(TEST_LABELS_FILE))
}

fn activation_id(kind: ActivationKind) -> u32 {
    match kind {
        ActivationKind::Identity => 0,
        ActivationKind::LeakyRelu { .. } => 1,
        ActivationKind::Selu => 2,
    }
}

/// Serializes a softmax classifier.
///
/// Layout (all integers and floats little-endian): magic `NNIV`, version
/// u32, layer count u32; then per layer rows u32, cols u32, activation id
/// u32 (0 identity, 1 leaky-relu followed by the f64 slope, 2 selu),
/// row-major f64 weights, f64 biases. The round trip is bit-exact.
pub fn save_model(net: &Network, path: &Path) -> Result<(), DataError> {
    if !net.has_softmax() {
        return Err(DataError::NotAClassifier);
    }
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&MODEL_MAGIC);
    bytes.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        let w = layer.weight();
        bytes.extend_from_slice(&(w.rows() as u32).to_le_bytes());
        bytes.extend_from_slice(&(w.cols() as u32).to_le_bytes());
        bytes.extend_from_slice(&activation_id(layer.activation()).to_le_bytes());
        if let ActivationKind::LeakyRelu { slope } = layer.activation() {
            bytes.extend_from_slice(&slope.to_le_bytes());
        }
        for &v in w.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for &v in layer.bias() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&bytes).map_err(|e| io_err(path, e))?;
    Ok(())
}

struct ModelReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ModelReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| DataError::InconsistentModel { path: self.path.display().to_string() })?;
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
    }
}

/// Deserializes a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<Network, DataError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = ModelReader { bytes: &bytes, pos: 0, path };

    if r.take(4)? != MODEL_MAGIC {
        return Err(DataError::BadModelMagic { path: path.display().to_string() });
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(DataError::UnknownModelVersion { path: path.display().to_string(), got: version });
    }
    let layer_count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let activation = match r.u32()? {
            0 => ActivationKind::Identity,
            1 => ActivationKind::LeakyRelu { slope: r.f64()? },
            2 => ActivationKind::Selu,
            id => return Err(DataError::UnknownActivation { path: path.display().to_string(), id }),
        };
        let mut weight_data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            weight_data.push(r.f64()?);
        }
        let weight = Matrix::new(rows, cols, weight_data)
            .map_err(|_| DataError::InconsistentModel { path: path.display().to_string() })?;
        let mut bias = Vec::with_capacity(rows);
        for _ in 0..rows {
            bias.push(r.f64()?);
        }
        layers.push(LinearLayer::new(weight, bias, activation)?);
    }
    if r.pos != bytes.len() {
        return Err(DataError::InconsistentModel { path: path.display().to_string() });
    }
    Ok(Network::new(layers, true)?)
}

/// Renders a flattened image as binary PGM (P5, maxval 255). Values are
/// clamped to [0, 1] before byte scaling; inversion outputs routinely
/// leave the pixel box.
pub fn write_pgm(x: &[f64], width: usize, height: usize, path: &Path) -> Result<(), DataError> {
    if x.len() != width * height {
        return Err(DataError::PgmSizeMismatch { len: x.len(), width, height });
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(x.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&bytes).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Builds the verification target: probability `peak` on `class_k` and the
/// remainder spread uniformly over the other classes.
pub fn make_target(class_k: usize, classes: usize, peak: f64) -> Result<ClassDistribution, DataError> {
    if class_k >= classes {
        return Err(DataError::ClassOutOfRange { class_index: class_k, classes });
    }
    if !(peak > 1.0 / classes as f64 && peak < 1.0) {
        return Err(DataError::InvalidPeak { peak, classes });
    }
    let rest = (1.0 - peak) / (classes - 1) as f64;
    let probs: Vector = (0..classes).map(|i| if i == class_k { peak } else { rest }).collect();
    Ok(ClassDistribution::new(probs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use tempfile::tempdir;

    fn write_idx_pair(dir: &Path, images: &[[u8; 4]], labels: &[u8]) -> (PathBuf, PathBuf) {
        let image_path = dir.join("images-idx3");
        let label_path = dir.join("labels-idx1");
        let mut ib = Vec::new();
        ib.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        ib.extend_from_slice(&(images.len() as u32).to_be_bytes());
        ib.extend_from_slice(&2u32.to_be_bytes());
        ib.extend_from_slice(&2u32.to_be_bytes());
        for im in images {
            ib.extend_from_slice(im);
        }
        fs::write(&image_path, ib).unwrap();
        let mut lb = Vec::new();
        lb.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
        lb.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lb.extend_from_slice(labels);
        fs::write(&label_path, lb).unwrap();
        (image_path, label_path)
    }

    #[test]
    fn idx_roundtrip_and_scaling() {
        let dir = tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), &[[0, 255, 128, 1]], &[7]);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels(), &[7]);
        let im = &ds.images()[0];
        assert_eq!(im[0], 0.0);
        assert_eq!(im[1], 1.0);
        assert!((im[2] - 128.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn idx_rejects_wrong_magic() {
        let dir = tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), &[[0, 0, 0, 0]], &[0]);
        // Overwrite the image magic with the label magic.
        let mut bytes = fs::read(&ip).unwrap();
        bytes[..4].copy_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
        fs::write(&ip, bytes).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(DataError::BadMagic { .. })));
    }

    #[test]
    fn idx_rejects_truncation_and_count_mismatch() {
        let dir = tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), &[[1, 2, 3, 4]], &[0]);
        let bytes = fs::read(&ip).unwrap();
        fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(DataError::PayloadLength { .. })));

        let (ip2, lp2) = write_idx_pair(dir.path(), &[[1, 2, 3, 4], [5, 6, 7, 8]], &[0, 1]);
        let mut lb = fs::read(&lp2).unwrap();
        lb[4..8].copy_from_slice(&1u32.to_be_bytes());
        lb.truncate(9);
        fs::write(&lp2, lb).unwrap();
        assert!(matches!(load_idx(&ip2, &lp2), Err(DataError::CountMismatch { .. })));
    }

    fn sample_net() -> Network {
        let w1 = Matrix::from_rows(&[vec![0.5, -0.25, 0.125], vec![1.0, 2.0, -3.0]]);
        let l1 = LinearLayer::new(w1, vec![0.1, -0.2], ActivationKind::Selu).unwrap();
        let w2 = Matrix::from_rows(&[vec![1.5, 0.5], vec![-0.5, 0.25]]);
        let l2 = LinearLayer::new(w2, vec![0.0, 0.7], ActivationKind::LeakyRelu { slope: 0.02 }).unwrap();
        Network::new(vec![l1, l2], true).unwrap()
    }

    #[test]
    fn model_roundtrip_is_bitwise_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.nniv");
        let net = sample_net();
        save_model(&net, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(net.layers().len(), loaded.layers().len());
        for (a, b) in net.layers().iter().zip(loaded.layers()) {
            assert_eq!(a.activation(), b.activation());
            for (x, y) in a.weight().data().iter().zip(b.weight().data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "weight bits");
            }
            for (x, y) in a.bias().iter().zip(b.bias()) {
                assert_eq!(x.to_bits(), y.to_bits(), "bias bits");
            }
        }
        assert!(loaded.has_softmax());
    }

    #[test]
    fn model_rejects_corruption() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.nniv");
        save_model(&sample_net(), &path).unwrap();

        let good = fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[..4].copy_from_slice(b"XXXX");
        fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_model(&path), Err(DataError::BadModelMagic { .. })));

        let mut bad_version = good.clone();
        bad_version[4..8].copy_from_slice(&99u32.to_le_bytes());
        fs::write(&path, &bad_version).unwrap();
        assert!(matches!(load_model(&path), Err(DataError::UnknownModelVersion { .. })));

        fs::write(&path, &good[..good.len() - 5]).unwrap();
        assert!(matches!(load_model(&path), Err(DataError::InconsistentModel { .. })));
    }

    #[test]
    fn model_rejects_non_classifier() {
        let dir = tempdir().unwrap();
        let layer =
            LinearLayer::new(Matrix::identity(3), vec![0.0; 3], ActivationKind::Identity).unwrap();
        let net = Network::new(vec![layer], false).unwrap();
        assert!(matches!(
            save_model(&net, &dir.path().join("m.nniv")),
            Err(DataError::NotAClassifier)
        ));
    }

    #[test]
    fn pgm_golden_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        write_pgm(&[0.0, 0.0, 0.0, 0.0], 2, 2, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes, b"P5\n2 2\n255\n\0\0\0\0");

        write_pgm(&[1.0, 2.7, -0.5, 0.5], 2, 2, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[255u8, 255, 0, 128]);
    }

    #[test]
    fn pgm_rejects_size_mismatch() {
        let dir = tempdir().unwrap();
        assert!(matches!(
            write_pgm(&[0.0; 3], 2, 2, &dir.path().join("x.pgm")),
            Err(DataError::PgmSizeMismatch { .. })
        ));
    }

    #[test]
    fn make_target_examples() {
        let t = make_target(0, 10, 0.91).unwrap();
        assert_eq!(t.probs()[0], 0.91);
        for &p in &t.probs()[1..] {
            assert!((p - 0.01).abs() < 1e-15);
        }
        for k in 0..10 {
            let t = make_target(k, 10, 0.91).unwrap();
            let sum: f64 = t.probs().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "sums to one");
        }
        assert!(matches!(make_target(0, 10, 1.0), Err(DataError::InvalidPeak { .. })));
        assert!(matches!(make_target(0, 10, 0.05), Err(DataError::InvalidPeak { .. })));
        assert!(matches!(make_target(12, 10, 0.91), Err(DataError::ClassOutOfRange { .. })));
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(
            Dataset::new(vec![vec![0.5]], vec![]),
            Err(DataError::CountMismatch { .. })
        ));
        assert!(matches!(
            Dataset::new(vec![vec![1.5]], vec![0]),
            Err(DataError::PixelOutOfRange { .. })
        ));
        assert!(matches!(
            Dataset::new(vec![vec![0.5], vec![0.5, 0.5]], vec![0, 1]),
            Err(DataError::ImageSizeMismatch { .. })
        ));
    }
}
