//! IDX image/label parsing, pixel normalization, and synthetic dataset
//! generators.
//!
//! The IDX container is the classic big-endian format: a 32-bit magic
//! (2051 for images, 2049 for labels), dimension words, then the raw
//! unsigned-byte payload. Parsing is strict — wrong magic, truncation,
//! and trailing bytes are all distinct errors, and serializing back
//! reproduces the input byte for byte.

use std::fmt;

use crate::math::{Matrix, Rng};
use crate::toys::ToyWorld;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

/// Errors from dataset parsing and construction.
#[derive(Debug, Clone, PartialEq)]
pub enum IngestError {
    /// Header magic did not match the expected file kind.
    WrongMagic { expected: u32, observed: u32 },
    /// Fewer bytes than the header demands.
    Truncated { expected: usize, actual: usize },
    /// More bytes than the header demands.
    TrailingBytes { expected: usize, actual: usize },
    /// Vector dimensions disagree.
    DimensionMismatch { left: usize, right: usize },
    /// Requested an empty dataset.
    EmptyDataset,
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WrongMagic { expected, observed } => {
                write!(f, "bad IDX magic: expected {expected}, observed {observed}")
            }
            Self::Truncated { expected, actual } => {
                write!(f, "truncated IDX payload: expected {expected} bytes, got {actual}")
            }
            Self::TrailingBytes { expected, actual } => {
                write!(f, "trailing bytes after IDX payload: expected {expected} bytes, got {actual}")
            }
            Self::DimensionMismatch { left, right } => {
                write!(f, "dimension mismatch: {left} vs {right}")
            }
            Self::EmptyDataset => write!(f, "dataset must contain at least one sample"),
        }
    }
}

impl std::error::Error for IngestError {}

fn read_u32_be(bytes: &[u8], offset: usize) -> Option<u32> {
    let chunk = bytes.get(offset..offset + 4)?;
    Some(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
}

// ---------------------------------------------------------------------------
// IDX images
// ---------------------------------------------------------------------------

/// Raw image archive in IDX layout: `count` images of `rows x cols`
/// unsigned bytes, row-major per image.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    count: usize,
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
}

impl IdxImages {
    pub fn new(count: usize, rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self, IngestError> {
        let expected = count * rows * cols;
        if pixels.len() != expected {
            return Err(IngestError::Truncated {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self { count, rows, cols, pixels })
    }

    /// Parses a complete IDX image file. The byte count must match the
    /// header exactly; trailing bytes are rejected.
    pub fn parse(bytes: &[u8]) -> Result<Self, IngestError> {
        if bytes.len() < 16 {
            return Err(IngestError::Truncated {
                expected: 16,
                actual: bytes.len(),
            });
        }
        let magic = read_u32_be(bytes, 0).expect("length checked");
        if magic != IMAGE_MAGIC {
            return Err(IngestError::WrongMagic {
                expected: IMAGE_MAGIC,
                observed: magic,
            });
        }
        let count = read_u32_be(bytes, 4).expect("length checked") as usize;
        let rows = read_u32_be(bytes, 8).expect("length checked") as usize;
        let cols = read_u32_be(bytes, 12).expect("length checked") as usize;
        let payload = count
            .checked_mul(rows)
            .and_then(|v| v.checked_mul(cols))
            .ok_or(IngestError::Truncated {
                expected: usize::MAX,
                actual: bytes.len() - 16,
            })?;
        let expected = payload + 16;
        match bytes.len().cmp(&expected) {
            std::cmp::Ordering::Less => Err(IngestError::Truncated {
                expected,
                actual: bytes.len(),
            }),
            std::cmp::Ordering::Greater => Err(IngestError::TrailingBytes {
                expected,
                actual: bytes.len(),
            }),
            std::cmp::Ordering::Equal => Ok(Self {
                count,
                rows,
                cols,
                pixels: bytes[16..].to_vec(),
            }),
        }
    }

    /// Serializes back to IDX bytes; the inverse of [`IdxImages::parse`].
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.count as u32).to_be_bytes());
        out.extend_from_slice(&(self.rows as u32).to_be_bytes());
        out.extend_from_slice(&(self.cols as u32).to_be_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

/// Label archive in IDX layout (magic 2049). Labels are parsed only for
/// optional per-class reporting; training ignores them.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxLabels {
    labels: Vec<u8>,
}

impl IdxLabels {
    pub fn parse(bytes: &[u8]) -> Result<Self, IngestError> {
        if bytes.len() < 8 {
            return Err(IngestError::Truncated {
                expected: 8,
                actual: bytes.len(),
            });
        }
        let magic = read_u32_be(bytes, 0).expect("length checked");
        if magic != LABEL_MAGIC {
            return Err(IngestError::WrongMagic {
                expected: LABEL_MAGIC,
                observed: magic,
            });
        }
        let count = read_u32_be(bytes, 4).expect("length checked") as usize;
        let expected = count + 8;
        match bytes.len().cmp(&expected) {
            std::cmp::Ordering::Less => Err(IngestError::Truncated {
                expected,
                actual: bytes.len(),
            }),
            std::cmp::Ordering::Greater => Err(IngestError::TrailingBytes {
                expected,
                actual: bytes.len(),
            }),
            std::cmp::Ordering::Equal => Ok(Self {
                labels: bytes[8..].to_vec(),
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.labels.len());
        out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Flattened real-valued dataset with entries in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub data: Matrix,
    pub split_seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    /// First `n` samples, preserving order.
    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            data: self.data.slice_rows(0, n.min(self.data.rows())),
            split_seed: self.split_seed,
        }
    }
}

/// Scales pixels into `[0, 1]` and flattens each image to a row of
/// length `rows * cols`. Row `i` of the result is image `i`.
pub fn normalize(images: &IdxImages) -> Dataset {
    let dim = images.rows * images.cols;
    let data: Vec<f64> = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset {
        data: Matrix::new(images.count, dim, data).expect("pixel data is finite"),
        split_seed: 0,
    }
}

/// Samples `n` points from a boolean two-feature world: each row is
/// `0`, `v_a`, `v_b`, or `v_a + v_b` according to the joint distribution.
///
/// The outcome order for the inverse-CDF draw is fixed as
/// (both, a only, b only, neither) so streams reproduce across platforms.
pub fn synthetic_boolean_dataset(
    world: &ToyWorld,
    v_a: &[f64],
    v_b: &[f64],
    n: usize,
    seed: u64,
) -> Result<Dataset, IngestError> {
    if v_a.len() != v_b.len() {
        return Err(IngestError::DimensionMismatch {
            left: v_a.len(),
            right: v_b.len(),
        });
    }
    if n == 0 {
        return Err(IngestError::EmptyDataset);
    }
    let dim = v_a.len();
    let p_both = world.p_joint();
    let p_a_only = world.p_a() - p_both;
    let p_b_only = world.p_b() - p_both;
    let mut rng = Rng::new(seed);
    let mut data = vec![0.0; n * dim];
    for row in 0..n {
        let u = rng.next_f64();
        let (use_a, use_b) = if u < p_both {
            (true, true)
        } else if u < p_both + p_a_only {
            (true, false)
        } else if u < p_both + p_a_only + p_b_only {
            (false, true)
        } else {
            (false, false)
        };
        let out = &mut data[row * dim..(row + 1) * dim];
        if use_a {
            for (o, &v) in out.iter_mut().zip(v_a) {
                *o += v;
            }
        }
        if use_b {
            for (o, &v) in out.iter_mut().zip(v_b) {
                *o += v;
            }
        }
    }
    Ok(Dataset {
        data: Matrix::new(n, dim, data).expect("finite by construction"),
        split_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toys::ToyWorld;

    fn tiny_image_file() -> Vec<u8> {
        // magic 2051, count=1, rows=2, cols=2, pixels [0, 128, 255, 64]
        let mut b = Vec::new();
        b.extend_from_slice(&2051u32.to_be_bytes());
        b.extend_from_slice(&1u32.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        b.extend_from_slice(&[0, 128, 255, 64]);
        b
    }

    #[test]
    fn parses_hand_built_file() {
        let images = IdxImages::parse(&tiny_image_file()).unwrap();
        assert_eq!(images.count(), 1);
        assert_eq!(images.rows(), 2);
        assert_eq!(images.cols(), 2);
        assert_eq!(images.pixels(), &[0, 128, 255, 64]);
    }

    #[test]
    fn rejects_label_magic_for_images() {
        let mut b = tiny_image_file();
        b[0..4].copy_from_slice(&2049u32.to_be_bytes());
        assert_eq!(
            IdxImages::parse(&b),
            Err(IngestError::WrongMagic {
                expected: 2051,
                observed: 2049
            })
        );
    }

    #[test]
    fn rejects_empty_and_truncated() {
        assert!(matches!(
            IdxImages::parse(&[]),
            Err(IngestError::Truncated { .. })
        ));
        let b = tiny_image_file();
        assert!(matches!(
            IdxImages::parse(&b[..b.len() - 1]),
            Err(IngestError::Truncated { .. })
        ));
    }

    #[test]
    fn rejects_trailing_bytes() {
        let mut b = tiny_image_file();
        b.push(0);
        assert!(matches!(
            IdxImages::parse(&b),
            Err(IngestError::TrailingBytes { .. })
        ));
    }

    #[test]
    fn round_trips_bytes() {
        let b = tiny_image_file();
        let images = IdxImages::parse(&b).unwrap();
        assert_eq!(images.to_bytes(), b);
    }

    #[test]
    fn labels_round_trip() {
        let mut b = Vec::new();
        b.extend_from_slice(&2049u32.to_be_bytes());
        b.extend_from_slice(&3u32.to_be_bytes());
        b.extend_from_slice(&[7, 0, 9]);
        let labels = IdxLabels::parse(&b).unwrap();
        assert_eq!(labels.labels(), &[7, 0, 9]);
        assert_eq!(labels.to_bytes(), b);
    }

    #[test]
    fn normalize_scales_and_preserves_order() {
        let images = IdxImages::parse(&tiny_image_file()).unwrap();
        let ds = normalize(&images);
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dim(), 4);
        let row = ds.data.row(0);
        assert_eq!(row[0], 0.0);
        assert!((row[1] - 128.0 / 255.0).abs() < 1e-15);
        assert_eq!(row[2], 1.0);
    }

    #[test]
    fn fuzz_parser_never_panics() {
        let mut rng = Rng::new(99);
        for _ in 0..2000 {
            let len = rng.next_below(64) as usize;
            let bytes: Vec<u8> = (0..len).map(|_| rng.next_u64() as u8).collect();
            let _ = IdxImages::parse(&bytes);
            let _ = IdxLabels::parse(&bytes);
        }
    }

    #[test]
    fn synthetic_degenerate_worlds() {
        let both = ToyWorld::split(1.0, 1.0, 0.0).unwrap();
        let ds = synthetic_boolean_dataset(&both, &[1.0, 0.0], &[0.0, 2.0], 8, 3).unwrap();
        for row in ds.data.iter_rows() {
            assert_eq!(row, &[1.0, 2.0]);
        }
        let a_only = ToyWorld::split(1.0, 0.0, 0.0).unwrap();
        let ds = synthetic_boolean_dataset(&a_only, &[1.0, 0.0], &[0.0, 2.0], 8, 3).unwrap();
        for row in ds.data.iter_rows() {
            assert_eq!(row, &[1.0, 0.0]);
        }
    }

    #[test]
    fn synthetic_joint_frequency_within_three_sigma() {
        let world = ToyWorld::split(0.6, 0.5, 0.3).unwrap();
        let p_joint = world.p_joint();
        let n = 10_000;
        let ds = synthetic_boolean_dataset(&world, &[1.0, 0.0], &[0.0, 1.0], n, 11).unwrap();
        let joint = ds
            .data
            .iter_rows()
            .filter(|r| r[0] != 0.0 && r[1] != 0.0)
            .count() as f64
            / n as f64;
        let se = (p_joint * (1.0 - p_joint) / n as f64).sqrt();
        assert!(
            (joint - p_joint).abs() <= 3.0 * se,
            "joint frequency {joint} not within 3 SE of {p_joint}"
        );
    }

    #[test]
    fn synthetic_rejects_bad_args() {
        let world = ToyWorld::split(0.5, 0.5, 0.0).unwrap();
        assert!(matches!(
            synthetic_boolean_dataset(&world, &[1.0], &[1.0, 2.0], 4, 0),
            Err(IngestError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            synthetic_boolean_dataset(&world, &[1.0], &[2.0], 0, 0),
            Err(IngestError::EmptyDataset)
        ));
    }
}
