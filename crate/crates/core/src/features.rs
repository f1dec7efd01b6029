//! Frame-level embedding sequences and their binary file format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "VCF1" | u8 normalized | u32 n | u32 dim | n*dim f32 (row-major)
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::DEFAULT_MAX_LEN;

pub const FEATURE_MAGIC: [u8; 4] = *b"VCF1";
const HEADER_LEN: usize = 4 + 1 + 4 + 4;
const NORM_TOLERANCE: f64 = 1e-4;

/// One video as an ordered list of frame embeddings, one row per second.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    video_id: String,
    frames: Array2<f32>,
    normalized: bool,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, frames: Array2<f32>, normalized: bool) -> Result<Self> {
        Self::with_max_len(video_id, frames, normalized, DEFAULT_MAX_LEN)
    }

    pub fn with_max_len(
        video_id: impl Into<String>,
        frames: Array2<f32>,
        normalized: bool,
        max_len: usize,
    ) -> Result<Self> {
        let (n, dim) = frames.dim();
        if dim == 0 {
            return Err(Error::DimZero);
        }
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        if n > max_len {
            return Err(Error::TooLong {
                len: n,
                max: max_len,
            });
        }
        for (row, frame) in frames.rows().into_iter().enumerate() {
            if let Some(col) = frame.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { row, col });
            }
            if normalized {
                let norm = frame
                    .iter()
                    .map(|&v| f64::from(v).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::InvalidNorm { row, norm });
                }
            }
        }
        Ok(Self {
            video_id: video_id.into(),
            frames,
            normalized,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frames(&self) -> &Array2<f32> {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.frames.mapv(f64::from)
    }

    /// Keeps the first `max_len` frames.
    pub fn truncated(&self, max_len: usize) -> Self {
        let keep = self.len().min(max_len.max(1));
        Self {
            video_id: self.video_id.clone(),
            frames: self.frames.slice(ndarray::s![..keep, ..]).to_owned(),
            normalized: self.normalized,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, dim) = self.frames.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * dim);
        out.extend_from_slice(&FEATURE_MAGIC);
        out.push(u8::from(self.normalized));
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        for v in self.frames.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(
        video_id: impl Into<String>,
        bytes: &[u8],
        opts: &ReadOptions,
    ) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::TruncatedFile {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != FEATURE_MAGIC {
            return Err(Error::BadMagic {
                found: magic,
                expected: FEATURE_MAGIC,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedFile {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let normalized = bytes[4] != 0;
        let n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(Error::DimZero);
        }
        let expected = HEADER_LEN + 4 * n * dim;
        if bytes.len() < expected {
            return Err(Error::TruncatedFile {
                expected,
                found: bytes.len(),
            });
        }
        let keep = if opts.truncate {
            n.min(opts.max_len)
        } else {
            n
        };
        let values: Vec<f32> = bytes[HEADER_LEN..HEADER_LEN + 4 * keep * dim]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let frames = Array2::from_shape_vec((keep, dim), values).expect("shape matches length");
        Self::with_max_len(video_id, frames, normalized, opts.max_len)
    }
}

/// Load-time policy for feature files.
#[derive(Debug, Clone, Copy)]
pub struct ReadOptions {
    pub max_len: usize,
    /// Cut sequences longer than `max_len` instead of rejecting them.
    pub truncate: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_MAX_LEN,
            truncate: false,
        }
    }
}

/// Reads a feature file; the video id is the file stem.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    read_features_with(path, &ReadOptions::default())
}

pub fn read_features_with(path: impl AsRef<Path>, opts: &ReadOptions) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureSequence::from_bytes(id, &bytes, opts)
}

pub fn write_features(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, seq.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Scales every row to unit L2 norm. Zero rows are left untouched.
pub fn l2_normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn header(normalized: u8, n: u32, dim: u32) -> Vec<u8> {
        let mut b = b"VCF1".to_vec();
        b.push(normalized);
        b.extend_from_slice(&n.to_le_bytes());
        b.extend_from_slice(&dim.to_le_bytes());
        b
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let frames = array![
            [0.1f32, -2.5, 3.0e-8, 7.0],
            [f32::MIN_POSITIVE, 1.0, -0.0, 12345.678],
            [0.3, 0.3, 0.3, 0.3]
        ];
        let seq = FeatureSequence::new("v", frames.clone(), false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vcf");
        write_features(&path, &seq).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back.video_id(), "v");
        for (a, b) in back.frames().iter().zip(frames.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic() {
        let mut b = header(0, 1, 1);
        b[..4].copy_from_slice(b"XXXX");
        b.extend_from_slice(&1.0f32.to_le_bytes());
        let err = FeatureSequence::from_bytes("x", &b, &ReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
    }

    #[test]
    fn truncated_payload() {
        let mut b = header(0, 2, 2);
        b.extend_from_slice(&1.0f32.to_le_bytes());
        let err = FeatureSequence::from_bytes("x", &b, &ReadOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::TruncatedFile {
                expected: 29,
                found: 17
            }
        ));
        let err =
            FeatureSequence::from_bytes("x", b"VCF1\x00", &ReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::TruncatedFile { .. }));
    }

    #[test]
    fn dim_zero_and_nan() {
        let b = header(0, 3, 0);
        assert!(matches!(
            FeatureSequence::from_bytes("x", &b, &ReadOptions::default()),
            Err(Error::DimZero)
        ));
        let mut b = header(0, 1, 2);
        b.extend_from_slice(&1.0f32.to_le_bytes());
        b.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            FeatureSequence::from_bytes("x", &b, &ReadOptions::default()),
            Err(Error::NonFiniteValue { row: 0, col: 1 })
        ));
    }

    #[test]
    fn zeros_accepted_unless_flagged_normalized() {
        let payload = vec![0u8; 4 * 1200 * 256];
        let mut plain = header(0, 1200, 256);
        plain.extend_from_slice(&payload);
        let seq = FeatureSequence::from_bytes("z", &plain, &ReadOptions::default()).unwrap();
        assert_eq!(seq.len(), 1200);

        let mut flagged = header(1, 1200, 256);
        flagged.extend_from_slice(&payload);
        let err = FeatureSequence::from_bytes("z", &flagged, &ReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidNorm { row: 0, .. }), "{err:?}");
    }

    #[test]
    fn too_long_rejected_or_truncated() {
        let frames = Array2::<f32>::ones((5, 2));
        let seq = FeatureSequence::with_max_len("l", frames, false, 10).unwrap();
        let bytes = seq.to_bytes();
        let strict = ReadOptions {
            max_len: 4,
            truncate: false,
        };
        assert!(matches!(
            FeatureSequence::from_bytes("l", &bytes, &strict),
            Err(Error::TooLong { len: 5, max: 4 })
        ));
        let lenient = ReadOptions {
            max_len: 4,
            truncate: true,
        };
        assert_eq!(
            FeatureSequence::from_bytes("l", &bytes, &lenient)
                .unwrap()
                .len(),
            4
        );
    }
}
