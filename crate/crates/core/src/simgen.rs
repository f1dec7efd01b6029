//! Similarity-matrix generation: temperature-scaled cosine correlation,
//! dual-softmax matching, bilinear resizing, and matrix file formats.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::par;

pub const SIM_MAGIC: [u8; 4] = *b"VCS1";
const SIM_HEADER_LEN: usize = 4 + 1 + 4 + 4 + 8 * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimKind {
    /// `cos / temperature`.
    RawCosine,
    /// Row softmax times column softmax, in `[0, 1]`.
    DualSoftmax,
}

impl SimKind {
    pub fn name(&self) -> &'static str {
        match self {
            SimKind::RawCosine => "raw_cosine",
            SimKind::DualSoftmax => "dual_softmax",
        }
    }

    fn code(&self) -> u8 {
        match self {
            SimKind::RawCosine => 0,
            SimKind::DualSoftmax => 1,
        }
    }
}

/// A query x reference grid of similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    values: Array2<f64>,
    kind: SimKind,
    scale_q: f64,
    scale_r: f64,
    temperature: f64,
}

impl SimMatrix {
    /// Validates finiteness and the value range of `kind`. Raw matrices may
    /// reach `1 / temperature` in magnitude.
    pub fn new(
        values: Array2<f64>,
        kind: SimKind,
        scale_q: f64,
        scale_r: f64,
        temperature: f64,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimMismatch("similarity matrix has no cells".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if !(scale_q > 0.0 && scale_r > 0.0 && scale_q.is_finite() && scale_r.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "scales must be positive: {scale_q}, {scale_r}"
            )));
        }
        let (lo, hi) = match kind {
            SimKind::RawCosine => (-1.0 / temperature, 1.0 / temperature),
            SimKind::DualSoftmax => (0.0, 1.0),
        };
        let slack = 1e-9 * hi.abs().max(1.0);
        if let Some(((row, col), v)) = values
            .indexed_iter()
            .find(|(_, v)| !v.is_finite() || **v < lo - slack || **v > hi + slack)
        {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row, col });
            }
            return Err(Error::InvalidParam(format!(
                "{} value {v} at ({row}, {col}) outside [{lo}, {hi}]",
                kind.name()
            )));
        }
        Ok(Self {
            values,
            kind,
            scale_q,
            scale_r,
            temperature,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
    pub fn kind(&self) -> SimKind {
        self.kind
    }
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }
    pub fn cols(&self) -> usize {
        self.values.ncols()
    }
    /// Seconds per query-axis cell.
    pub fn scale_q(&self) -> f64 {
        self.scale_q
    }
    /// Seconds per reference-axis cell.
    pub fn scale_r(&self) -> f64 {
        self.scale_r
    }
    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Video lengths in seconds covered by the grid.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.rows() as f64 * self.scale_q,
            self.cols() as f64 * self.scale_r,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (r, c) = self.values.dim();
        let mut out = Vec::with_capacity(SIM_HEADER_LEN + 4 * r * c);
        out.extend_from_slice(&SIM_MAGIC);
        out.push(self.kind.code());
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        for v in [self.scale_q, self.scale_r, self.temperature] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.values.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < SIM_HEADER_LEN {
            return Err(Error::TruncatedFile {
                expected: SIM_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != SIM_MAGIC {
            return Err(Error::BadMagic {
                found: magic,
                expected: SIM_MAGIC,
            });
        }
        let kind = match bytes[4] {
            0 => SimKind::RawCosine,
            1 => SimKind::DualSoftmax,
            k => {
                return Err(Error::InvalidParam(format!(
                    "unknown similarity kind code {k}"
                )))
            }
        };
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let (rows, cols) = (u32_at(5), u32_at(9));
        let (scale_q, scale_r, temperature) = (f64_at(13), f64_at(21), f64_at(29));
        let expected = SIM_HEADER_LEN + 4 * rows * cols;
        if bytes.len() < expected {
            return Err(Error::TruncatedFile {
                expected,
                found: bytes.len(),
            });
        }
        let values: Vec<f64> = bytes[SIM_HEADER_LEN..expected]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let values = Array2::from_shape_vec((rows, cols), values).expect("sized");
        Self::new(values, kind, scale_q, scale_r, temperature)
    }
}

pub fn read_sim_matrix(path: impl AsRef<Path>) -> Result<SimMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    SimMatrix::from_bytes(&bytes)
}

pub fn write_sim_matrix(path: impl AsRef<Path>, m: &SimMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_bytes()).map_err(|e| Error::io(path, e))
}

fn unit_rows(m: ArrayView2<f64>, side: &'static str) -> Result<Array2<f64>> {
    let mut out = m.to_owned();
    for (index, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0) {
            return Err(Error::ZeroVector { side, index });
        }
        row /= norm;
    }
    Ok(out)
}

/// `S[m, n] = cos(fq_m, fr_n) / tau` over frame rows (no class-token rows).
pub fn cosine_matrix(fq: ArrayView2<f64>, fr: ArrayView2<f64>, tau: f64) -> Result<SimMatrix> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParam(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if fq.ncols() != fr.ncols() {
        return Err(Error::DimMismatch(format!(
            "feature widths {} and {}",
            fq.ncols(),
            fr.ncols()
        )));
    }
    let q = unit_rows(fq, "query")?;
    let r = unit_rows(fr, "reference")?;
    let cos = q.dot(&r.t()).mapv(|c| c.clamp(-1.0, 1.0) / tau);
    SimMatrix::new(cos, SimKind::RawCosine, 1.0, 1.0, tau)
}

pub fn cosine_from_sequences(
    q: &FeatureSequence,
    r: &FeatureSequence,
    tau: f64,
) -> Result<SimMatrix> {
    cosine_matrix(q.to_f64().view(), r.to_f64().view(), tau)
}

fn softmax_rows(s: ArrayView2<f64>) -> Array2<f64> {
    let (rows, cols) = s.dim();
    let mut out = s.to_owned();
    if let Some(data) = out.as_slice_mut() {
        par::for_each_chunk_mut(data, cols, |_, row| {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            row.iter_mut().for_each(|x| *x /= sum);
        });
    }
    debug_assert_eq!(out.dim(), (rows, cols));
    out
}

/// Product of the row-wise and column-wise softmax of `s`.
pub fn dual_softmax_values(s: ArrayView2<f64>) -> Array2<f64> {
    let by_row = softmax_rows(s);
    let by_col = softmax_rows(s.t().as_standard_layout().view());
    by_row * by_col.t()
}

pub fn dual_softmax(s: &SimMatrix) -> SimMatrix {
    let values = dual_softmax_values(s.values.view());
    SimMatrix::new(
        values,
        SimKind::DualSoftmax,
        s.scale_q,
        s.scale_r,
        s.temperature,
    )
    .expect("dual softmax stays in [0, 1]")
}

/// Source coordinate of destination index `i` with the align-corners-false convention.
fn source_coord(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let x = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).max(0.0);
    let x0 = (x.floor() as usize).min(src - 1);
    let x1 = (x0 + 1).min(src - 1);
    (x0, x1, x - x0 as f64)
}

pub fn resize_values(v: ArrayView2<f64>, target: (usize, usize)) -> Result<Array2<f64>> {
    let (h, w) = target;
    if h == 0 || w == 0 {
        return Err(Error::EmptyTarget(h, w));
    }
    let (sh, sw) = v.dim();
    if sh == 0 || sw == 0 {
        return Err(Error::DimMismatch("cannot resize an empty matrix".into()));
    }
    let cols: Vec<_> = (0..w).map(|j| source_coord(j, sw, w)).collect();
    let mut out = Array2::zeros((h, w));
    let data = out.as_slice_mut().expect("fresh array is contiguous");
    par::for_each_chunk_mut(data, w, |i, row| {
        let (y0, y1, fy) = source_coord(i, sh, h);
        for (j, &(x0, x1, fx)) in cols.iter().enumerate() {
            let top = v[[y0, x0]] * (1.0 - fx) + v[[y0, x1]] * fx;
            let bottom = v[[y1, x0]] * (1.0 - fx) + v[[y1, x1]] * fx;
            row[j] = top * (1.0 - fy) + bottom * fy;
        }
    });
    Ok(out)
}

/// Bilinear resize to `(rows, cols)`; scale factors follow so boxes still map to seconds.
pub fn resize_bilinear(s: &SimMatrix, target: (usize, usize)) -> Result<SimMatrix> {
    let values = resize_values(s.values.view(), target)?;
    let scale_q = s.scale_q * s.rows() as f64 / target.0 as f64;
    let scale_r = s.scale_r * s.cols() as f64 / target.1 as f64;
    SimMatrix::new(values, s.kind, scale_q, scale_r, s.temperature)
}

/// 8-bit binary PGM. Dual-softmax values map directly; raw matrices are
/// min-max scaled first.
pub fn to_pgm(s: &SimMatrix) -> Vec<u8> {
    let (lo, hi) = match s.kind {
        SimKind::DualSoftmax => (0.0, 1.0),
        SimKind::RawCosine => {
            let lo = s.values.fold(f64::INFINITY, |a, &b| a.min(b));
            let hi = s.values.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            (lo, hi)
        }
    };
    let span = if hi > lo { hi - lo } else { 1.0 };
    let comment = match s.kind {
        SimKind::DualSoftmax => {
            "# copyloc dual_softmax, pixel = round(255 * clamp(v, 0, 1))".to_string()
        }
        SimKind::RawCosine => format!("# copyloc raw_cosine min-max scaled from [{lo}, {hi}]"),
    };
    let mut out = format!("P5\n{comment}\n{} {}\n255\n", s.cols(), s.rows()).into_bytes();
    out.extend(
        s.values
            .iter()
            .map(|v| (255.0 * ((v - lo) / span).clamp(0.0, 1.0)).round() as u8),
    );
    out
}

pub fn write_pgm(path: impl AsRef<Path>, s: &SimMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_pgm(s)).map_err(|e| Error::io(path, e))
}

/// Whether dual-softmax runs before or after resizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SoftmaxOrder {
    #[default]
    BeforeResize,
    AfterResize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub tau: f64,
    pub dual_softmax: bool,
    pub resize: Option<(usize, usize)>,
    pub order: SoftmaxOrder,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            dual_softmax: true,
            resize: Some((640, 640)),
            order: SoftmaxOrder::BeforeResize,
        }
    }
}

/// Cosine matrix followed by the configured dual-softmax and resize steps.
pub fn similarity(fq: ArrayView2<f64>, fr: ArrayView2<f64>, cfg: &SimConfig) -> Result<SimMatrix> {
    let mut m = cosine_matrix(fq, fr, cfg.tau)?;
    if cfg.dual_softmax && cfg.order == SoftmaxOrder::BeforeResize {
        m = dual_softmax(&m);
    }
    if let Some(target) = cfg.resize {
        if target != (m.rows(), m.cols()) {
            m = resize_bilinear(&m, target)?;
        }
    }
    if cfg.dual_softmax && cfg.order == SoftmaxOrder::AfterResize {
        m = dual_softmax(&m);
    }
    Ok(m)
}

/// Min-max normalized copy of the values. A constant matrix maps to its
/// value clamped to `[0, 1]`.
pub fn minmax_normalized(values: ArrayView2<f64>) -> Array2<f64> {
    let lo = values.fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = values.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if hi - lo <= 1e-12 {
        return values.mapv(|v| v.clamp(0.0, 1.0));
    }
    values.mapv(|v| (v - lo) / (hi - lo))
}
