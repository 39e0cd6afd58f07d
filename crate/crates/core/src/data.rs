//! Dataset ingestion and synthesis.
//!
//! Image datasets arrive as big-endian IDX files (the MNIST family) and are
//! soft-clamped on load: a pixel value `p` becomes the expected feature
//! `p / 255` of a binary `{0, 1}` input node, so inference consumes the
//! encoding directly and no input distribution is ever modeled. Synthetic
//! fixtures (Gaussian blobs, labeled scalar sequences) provide desk-scale
//! training problems.

use std::path::Path;

use thiserror::Error;

use crate::noise::derive_rng;
use crate::scalar::{real, Real};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {got:#010x} at byte 0, expected {expected:#010x}")]
    BadMagic {
        path: String,
        got: u32,
        expected: u32,
    },
    #[error("{path}: truncated at byte {offset}, needed {needed} more bytes")]
    Truncated {
        path: String,
        offset: usize,
        needed: usize,
    },
    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
}

/// Raw decoded IDX image data, pixels untouched.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImages {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels, `count * rows * cols` bytes.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawImages {
    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }
}

/// One labeled example: a feature-expectation vector and a class index.
#[derive(Clone, Debug)]
pub struct Example<F> {
    pub input: Vec<F>,
    pub label: usize,
}

/// An immutable labeled dataset of feature-expectation inputs.
#[derive(Clone, Debug)]
pub struct Dataset<F> {
    pub examples: Vec<Example<F>>,
    pub input_dim: usize,
    pub classes: usize,
}

impl<F: Real> Dataset<F> {
    pub fn new(examples: Vec<Example<F>>, input_dim: usize, classes: usize) -> Self {
        debug_assert!(examples.iter().all(|e| e.input.len() == input_dim));
        debug_assert!(examples.iter().all(|e| e.label < classes.max(1)));
        Self {
            examples,
            input_dim,
            classes,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// The first `n` examples.
    pub fn take(&self, n: usize) -> Self {
        Self {
            examples: self.examples[..n.min(self.examples.len())].to_vec(),
            input_dim: self.input_dim,
            classes: self.classes,
        }
    }
}

fn read_u32(data: &[u8], offset: usize, path: &str) -> Result<u32, DataError> {
    let bytes: [u8; 4] = data
        .get(offset..offset + 4)
        .ok_or_else(|| DataError::Truncated {
            path: path.to_string(),
            offset: data.len(),
            needed: offset + 4 - data.len(),
        })?
        .try_into()
        .unwrap();
    Ok(u32::from_be_bytes(bytes))
}

/// Decodes an IDX image buffer: magic `0x00000803`, then `u32` count, rows,
/// cols, then row-major `u8` pixels.
pub fn decode_idx_images(data: &[u8], path: &str) -> Result<(usize, usize, Vec<u8>), DataError> {
    let magic = read_u32(data, 0, path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_string(),
            got: magic,
            expected: IDX_IMAGE_MAGIC,
        });
    }
    let count = read_u32(data, 4, path)? as usize;
    let rows = read_u32(data, 8, path)? as usize;
    let cols = read_u32(data, 12, path)? as usize;
    let need = count * rows * cols;
    let body = &data[16..];
    if body.len() < need {
        return Err(DataError::Truncated {
            path: path.to_string(),
            offset: 16 + body.len(),
            needed: need - body.len(),
        });
    }
    Ok((rows, cols, body[..need].to_vec()))
}

/// Decodes an IDX label buffer: magic `0x00000801`, then `u32` count, then
/// `u8` labels.
pub fn decode_idx_labels(data: &[u8], path: &str) -> Result<Vec<u8>, DataError> {
    let magic = read_u32(data, 0, path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_string(),
            got: magic,
            expected: IDX_LABEL_MAGIC,
        });
    }
    let count = read_u32(data, 4, path)? as usize;
    let body = &data[8..];
    if body.len() < count {
        return Err(DataError::Truncated {
            path: path.to_string(),
            offset: 8 + body.len(),
            needed: count - body.len(),
        });
    }
    Ok(body[..count].to_vec())
}

/// Loads an IDX image/label file pair. The item counts must match.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<RawImages, DataError> {
    let ipath = images_path.as_ref().display().to_string();
    let lpath = labels_path.as_ref().display().to_string();
    let image_bytes = std::fs::read(&images_path).map_err(|source| DataError::Io {
        path: ipath.clone(),
        source,
    })?;
    let label_bytes = std::fs::read(&labels_path).map_err(|source| DataError::Io {
        path: lpath.clone(),
        source,
    })?;
    let (rows, cols, pixels) = decode_idx_images(&image_bytes, &ipath)?;
    let labels = decode_idx_labels(&label_bytes, &lpath)?;
    let image_count = pixels.len() / (rows * cols).max(1);
    if image_count != labels.len() {
        return Err(DataError::CountMismatch {
            images: image_count,
            labels: labels.len(),
        });
    }
    Ok(RawImages {
        rows,
        cols,
        pixels,
        labels,
    })
}

/// Encodes images back into IDX bytes; the exact inverse of
/// [`decode_idx_images`].
pub fn encode_idx_images(raw: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + raw.pixels.len());
    out.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(raw.count() as u32).to_be_bytes());
    out.extend_from_slice(&(raw.rows as u32).to_be_bytes());
    out.extend_from_slice(&(raw.cols as u32).to_be_bytes());
    out.extend_from_slice(&raw.pixels);
    out
}

pub fn encode_idx_labels(raw: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + raw.labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(raw.labels.len() as u32).to_be_bytes());
    out.extend_from_slice(&raw.labels);
    out
}

/// Soft clamping: a pixel becomes the expected feature of a binary `{0, 1}`
/// input node, `q = p / 255`.
pub fn soft_clamp<F: Real>(pixel: u8) -> F {
    real::<F>(pixel as f64 / 255.0)
}

/// Converts raw images into a soft-clamped dataset with `classes` classes.
pub fn to_dataset<F: Real>(raw: &RawImages, classes: usize) -> Dataset<F> {
    let examples = (0..raw.count())
        .map(|i| Example {
            input: raw.image(i).iter().map(|&p| soft_clamp(p)).collect(),
            label: raw.labels[i] as usize,
        })
        .collect();
    Dataset::new(examples, raw.rows * raw.cols, classes)
}

/// Seed-deterministic split into `(train, validation)`; the validation part
/// takes `floor(n * val_fraction)` examples of a shuffled permutation.
pub fn split<F: Real>(dataset: &Dataset<F>, val_fraction: f64, seed: u64) -> (Dataset<F>, Dataset<F>) {
    assert!(
        (0.0..1.0).contains(&val_fraction),
        "validation fraction must lie in [0, 1)"
    );
    let n = dataset.len();
    let k = (n as f64 * val_fraction).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(&[seed, 0x5711]);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = (u64::from_le_bytes(
            rand::Rng::gen::<[u8; 8]>(&mut rng),
        ) % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    let pick = |idx: &[usize]| {
        Dataset::new(
            idx.iter().map(|&i| dataset.examples[i].clone()).collect(),
            dataset.input_dim,
            dataset.classes,
        )
    };
    (pick(&order[k..]), pick(&order[..k]))
}

/// Gaussian blobs clipped to `[0, 1]^dim`. Centroids are drawn uniformly in
/// the cube; the blob standard deviation is the minimum centroid distance
/// divided by `separation`, so large separations give cleanly separable
/// classes.
pub fn synth_blobs<F: Real>(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset<F>, DataError> {
    if classes == 0 || dim == 0 {
        return Err(DataError::InvalidParameters(
            "blobs need at least one class and one dimension".into(),
        ));
    }
    if separation <= 0.0 {
        return Err(DataError::InvalidParameters(
            "separation must be positive".into(),
        ));
    }
    let mut rng = derive_rng(&[seed, 0xB10B]);
    let centroids: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| f64::unit_uniform(&mut rng)).collect())
        .collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..classes {
        for b in a + 1..classes {
            let d: f64 = centroids[a]
                .iter()
                .zip(&centroids[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    let std = if min_dist.is_finite() {
        min_dist / separation
    } else {
        0.05
    };
    let mut examples = Vec::with_capacity(classes * per_class);
    for (label, c) in centroids.iter().enumerate() {
        for _ in 0..per_class {
            let input: Vec<F> = c
                .iter()
                .map(|&m| real::<F>((m + std * f64::std_normal(&mut rng)).clamp(0.0, 1.0)))
                .collect();
            examples.push(Example { input, label });
        }
    }
    Ok(Dataset::new(examples, dim, classes))
}

/// Scalar sequences in `[0, 1]^length`, labeled 1 when the sum exceeds
/// `length / 2`. Inputs feed the per-step input layers of an unrolled
/// recurrent graph.
pub fn synth_sequences<F: Real>(
    length: usize,
    n: usize,
    seed: u64,
) -> Result<Dataset<F>, DataError> {
    if length == 0 {
        return Err(DataError::InvalidParameters(
            "sequences need a positive length".into(),
        ));
    }
    let mut rng = derive_rng(&[seed, 0x5EC5]);
    let threshold = length as f64 / 2.0;
    let examples = (0..n)
        .map(|_| {
            let values: Vec<f64> = (0..length).map(|_| f64::unit_uniform(&mut rng)).collect();
            let total: f64 = values.iter().sum();
            Example {
                input: values.iter().map(|&v| real::<F>(v)).collect(),
                label: usize::from(total > threshold),
            }
        })
        .collect();
    Ok(Dataset::new(examples, length, 2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_raw() -> RawImages {
        RawImages {
            rows: 2,
            cols: 3,
            pixels: vec![0, 128, 255, 10, 20, 30, 200, 100, 50, 25, 75, 125],
            labels: vec![1, 0],
        }
    }

    #[test]
    fn idx_header_decodes_big_endian() {
        // 60000 images of 28x28: 0x0000EA60 and 0x0000001C.
        let mut data = Vec::new();
        data.extend_from_slice(&[0x00, 0x00, 0x08, 0x03]);
        data.extend_from_slice(&[0x00, 0x00, 0xEA, 0x60]);
        data.extend_from_slice(&[0x00, 0x00, 0x00, 0x1C]);
        data.extend_from_slice(&[0x00, 0x00, 0x00, 0x1C]);
        // Truncated body: the header parses, the body check fires.
        let err = decode_idx_images(&data, "t").unwrap_err();
        match err {
            DataError::Truncated { offset, needed, .. } => {
                assert_eq!(offset, 16);
                assert_eq!(needed, 60000 * 28 * 28);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn wrong_label_magic_is_rejected() {
        let mut data = Vec::new();
        data.extend_from_slice(&0x0000_0802u32.to_be_bytes());
        data.extend_from_slice(&1u32.to_be_bytes());
        data.push(3);
        assert!(matches!(
            decode_idx_labels(&data, "t"),
            Err(DataError::BadMagic { got: 0x0000_0802, .. })
        ));
    }

    #[test]
    fn idx_round_trip_is_bit_exact() {
        let raw = sample_raw();
        let images = encode_idx_images(&raw);
        let labels = encode_idx_labels(&raw);
        let (rows, cols, pixels) = decode_idx_images(&images, "t").unwrap();
        let decoded_labels = decode_idx_labels(&labels, "t").unwrap();
        let back = RawImages {
            rows,
            cols,
            pixels,
            labels: decoded_labels,
        };
        assert_eq!(back, raw);
        assert_eq!(encode_idx_images(&back), images);
        assert_eq!(encode_idx_labels(&back), labels);
    }

    #[test]
    fn count_mismatch_is_detected() {
        let raw = sample_raw();
        let images = encode_idx_images(&raw);
        let mut bad = RawImages {
            labels: vec![1, 0, 2],
            ..raw
        };
        bad.labels.truncate(3);
        let labels = encode_idx_labels(&bad);
        let dir = std::env::temp_dir().join("chaingraph_idx_test");
        std::fs::create_dir_all(&dir).unwrap();
        let ipath = dir.join("images");
        let lpath = dir.join("labels");
        std::fs::write(&ipath, &images).unwrap();
        std::fs::write(&lpath, &labels).unwrap();
        assert!(matches!(
            load_idx(&ipath, &lpath),
            Err(DataError::CountMismatch { images: 2, labels: 3 })
        ));
    }

    #[test]
    fn soft_clamp_endpoints_and_midpoint() {
        assert_eq!(soft_clamp::<f64>(0), 0.0);
        assert_eq!(soft_clamp::<f64>(255), 1.0);
        assert!((soft_clamp::<f64>(128) - 128.0 / 255.0).abs() < 1e-15);
        // Monotone and inside [0, 1].
        let mut prev = -1.0;
        for p in 0..=255u8 {
            let v = soft_clamp::<f64>(p);
            assert!((0.0..=1.0).contains(&v));
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let ds: Dataset<f64> = Dataset::new(
            (0..10)
                .map(|i| Example {
                    input: vec![i as f64],
                    label: 0,
                })
                .collect(),
            1,
            1,
        );
        let (train, val) = split(&ds, 0.2, 9);
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 2);
        let mut seen: Vec<f64> = train
            .examples
            .iter()
            .chain(val.examples.iter())
            .map(|e| e.input[0])
            .collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(seen, (0..10).map(|i| i as f64).collect::<Vec<_>>());

        let (t2, v2) = split(&ds, 0.2, 9);
        assert_eq!(
            train.examples.iter().map(|e| e.input[0]).collect::<Vec<_>>(),
            t2.examples.iter().map(|e| e.input[0]).collect::<Vec<_>>()
        );
        assert_eq!(
            val.examples.iter().map(|e| e.input[0]).collect::<Vec<_>>(),
            v2.examples.iter().map(|e| e.input[0]).collect::<Vec<_>>()
        );

        let (all, empty) = split(&ds, 0.0, 1);
        assert_eq!(all.len(), 10);
        assert!(empty.is_empty());
    }

    #[test]
    fn blobs_are_separable_by_nearest_centroid() {
        let ds: Dataset<f64> = synth_blobs(3, 40, 2, 10.0, 5).unwrap();
        assert_eq!(ds.len(), 120);
        // Class centroids recomputed from the data; nearest-centroid must
        // classify every point correctly at separation 10.
        let mut centroids = vec![vec![0.0; 2]; 3];
        let mut counts = vec![0.0; 3];
        for e in &ds.examples {
            for (d, v) in e.input.iter().enumerate() {
                centroids[e.label][d] += v;
            }
            counts[e.label] += 1.0;
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            for v in c.iter_mut() {
                *v /= n;
            }
        }
        for e in &ds.examples {
            let nearest = (0..3)
                .min_by(|&a, &b| {
                    let da: f64 = (0..2)
                        .map(|d| (e.input[d] - centroids[a][d]).powi(2))
                        .sum();
                    let db: f64 = (0..2)
                        .map(|d| (e.input[d] - centroids[b][d]).powi(2))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(nearest, e.label);
        }
    }

    #[test]
    fn empty_blobs_and_determinism() {
        let a: Dataset<f64> = synth_blobs(2, 0, 3, 5.0, 7).unwrap();
        assert!(a.is_empty());
        let b: Dataset<f64> = synth_blobs(2, 5, 3, 5.0, 7).unwrap();
        let c: Dataset<f64> = synth_blobs(2, 5, 3, 5.0, 7).unwrap();
        for (x, y) in b.examples.iter().zip(c.examples.iter()) {
            assert_eq!(x.input, y.input);
            assert_eq!(x.label, y.label);
        }
    }

    #[test]
    fn sequences_have_threshold_labels() {
        let ds: Dataset<f64> = synth_sequences(10, 50, 3).unwrap();
        assert_eq!(ds.input_dim, 10);
        assert_eq!(ds.classes, 2);
        for e in &ds.examples {
            let total: f64 = e.input.iter().sum();
            assert_eq!(e.label, usize::from(total > 5.0));
            assert!(e.input.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        // Both classes should appear in 50 draws.
        assert!(ds.examples.iter().any(|e| e.label == 0));
        assert!(ds.examples.iter().any(|e| e.label == 1));
    }
}
