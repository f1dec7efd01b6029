//! Attention-based feature enhancement.
//!
//! Both sequences get a class token prepended and a fixed sinusoidal
//! temporal encoding added, then pass through `L` layers of multi-head
//! self-attention followed by multi-head cross-attention, applied to both
//! streams symmetrically. Each attention block is added residually to its
//! input, so an empty stack is the identity. The class-token rows of the
//! outputs feed a one-hidden-layer MLP that scores the pair at video level.
//!
//! Two attention kernels are available: the quadratic softmax kernel and the
//! linear kernel `phi(q) . phi(k)` with `phi(x) = elu(x) + 1`, evaluated in
//! factored form so its cost grows linearly with sequence length.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::par;

/// Rows of `Q` processed together by the softmax kernel.
const ROW_BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Vanilla,
    Linear,
}

impl std::str::FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" | "softmax" => Ok(Kernel::Vanilla),
            "linear" => Ok(Kernel::Linear),
            other => Err(Error::InvalidParam(format!("unknown kernel {other:?}"))),
        }
    }
}

/// Sinusoidal encoding: `sin(pos / 10000^(2i/d))` at column `2i`, `cos` at `2i + 1`.
pub fn temporal_encoding(n: usize, d: usize) -> Result<Array2<f64>> {
    if !d.is_multiple_of(2) {
        return Err(Error::OddDimension(d));
    }
    let mut out = Array2::zeros((n, d));
    for i in 0..d / 2 {
        let freq = 10000f64.powf(-((2 * i) as f64) / d as f64);
        for pos in 0..n {
            let angle = pos as f64 * freq;
            out[[pos, 2 * i]] = angle.sin();
            out[[pos, 2 * i + 1]] = angle.cos();
        }
    }
    Ok(out)
}

/// Prepends `class_token` to `frames` and adds the temporal encoding.
pub fn build_input_frames(
    frames: ArrayView2<f64>,
    class_token: ArrayView1<f64>,
) -> Result<Array2<f64>> {
    let d = frames.ncols();
    if class_token.len() != d {
        return Err(Error::DimMismatch(format!(
            "class token has {} entries, frames have {d}",
            class_token.len()
        )));
    }
    let stacked =
        concatenate(Axis(0), &[class_token.insert_axis(Axis(0)), frames]).expect("widths agree");
    Ok(stacked + temporal_encoding(frames.nrows() + 1, d)?)
}

pub fn build_input(seq: &FeatureSequence, class_token: ArrayView1<f64>) -> Result<Array2<f64>> {
    build_input_frames(seq.to_f64().view(), class_token)
}

fn check_qkv(q: &ArrayView2<f64>, k: &ArrayView2<f64>, v: &ArrayView2<f64>) -> Result<()> {
    if q.ncols() != k.ncols() {
        return Err(Error::DimMismatch(format!(
            "query width {} != key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::DimMismatch(format!(
            "{} keys but {} values",
            k.nrows(),
            v.nrows()
        )));
    }
    if k.nrows() == 0 {
        return Err(Error::DimMismatch("attention over zero keys".into()));
    }
    Ok(())
}

fn stack_rows(blocks: Vec<Array2<f64>>, ncols: usize) -> Array2<f64> {
    if blocks.is_empty() {
        return Array2::zeros((0, ncols));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(0), &views).expect("blocks share width")
}

/// `softmax(Q K^T) V`, row-wise softmax over keys.
pub fn softmax_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_qkv(&q, &k, &v)?;
    let blocks = q.nrows().div_ceil(ROW_BLOCK);
    let kt = k.t();
    let parts = par::map_range(blocks, |b| {
        let rows = q.slice(s![b * ROW_BLOCK..((b + 1) * ROW_BLOCK).min(q.nrows()), ..]);
        let mut scores = rows.dot(&kt);
        for mut row in scores.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        scores.dot(&v)
    });
    Ok(stack_rows(parts, v.ncols()))
}

/// `elu(x) + 1` with unit alpha; strictly positive for finite input.
pub fn elu_feature(x: f64) -> f64 {
    if x >= 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

/// Linear-kernel attention in factored form:
/// `out_i = phi(q_i) (sum_j phi(k_j) v_j^T) / phi(q_i) . (sum_j phi(k_j))`.
pub fn linear_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_qkv(&q, &k, &v)?;
    let phi_q = q.mapv(elu_feature);
    let phi_k = k.mapv(elu_feature);
    let kv = phi_k.t().dot(&v);
    let z = phi_k.sum_axis(Axis(0));
    let mut out = phi_q.dot(&kv);
    let den = phi_q.dot(&z);
    for (i, (mut row, &d)) in out.rows_mut().into_iter().zip(den.iter()).enumerate() {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::ZeroDenominator(i));
        }
        row /= d;
    }
    Ok(out)
}

pub fn attention(
    kernel: Kernel,
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    match kernel {
        Kernel::Vanilla => softmax_attention(q, k, v),
        Kernel::Linear => linear_attention(q, k, v),
    }
}

/// Projections of one multi-head attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaWeights {
    /// Per head, `d x d_head`.
    pub wq: Vec<Array2<f64>>,
    pub wk: Vec<Array2<f64>>,
    pub wv: Vec<Array2<f64>>,
    /// `d x d`, applied to the concatenated head outputs.
    pub wo: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub self_attn: MhaWeights,
    pub cross_attn: MhaWeights,
}

/// Video-level classifier: `sigmoid(w2 . relu(W1 x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    /// `hidden x 2d`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub dim: usize,
    pub heads: usize,
    pub layers: Vec<LayerWeights>,
    pub class_query: Array1<f64>,
    pub class_reference: Array1<f64>,
    pub head: MlpHead,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionShape {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub hidden: usize,
}

impl Default for AttentionShape {
    fn default() -> Self {
        Self {
            dim: crate::DEFAULT_DIM,
            heads: 8,
            layers: 1,
            hidden: 256,
        }
    }
}

impl AttentionShape {
    fn check(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.hidden == 0 {
            return Err(Error::WeightShapeMismatch(format!(
                "zero-sized shape {self:?}"
            )));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::WeightShapeMismatch(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Tensor names and shapes in blob order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, dh) = (self.dim, self.head_dim());
        let mut out = vec![
            ("class_query".to_string(), vec![d]),
            ("class_reference".to_string(), vec![d]),
        ];
        for l in 0..self.layers {
            for block in ["self", "cross"] {
                for h in 0..self.heads {
                    for p in ["wq", "wk", "wv"] {
                        out.push((format!("layer{l}.{block}.head{h}.{p}"), vec![d, dh]));
                    }
                }
                out.push((format!("layer{l}.{block}.wo"), vec![d, d]));
            }
        }
        out.push(("head.w1".into(), vec![self.hidden, 2 * d]));
        out.push(("head.b1".into(), vec![self.hidden]));
        out.push(("head.w2".into(), vec![self.hidden]));
        out.push(("head.b2".into(), vec![1]));
        out
    }
}

impl AttentionWeights {
    pub fn shape(&self) -> AttentionShape {
        AttentionShape {
            dim: self.dim,
            heads: self.heads,
            layers: self.layers.len(),
            hidden: self.head.b1.len(),
        }
    }

    /// Builds weights by drawing every scalar from `fill`, in blob order.
    fn from_fn(shape: AttentionShape, fill: impl FnMut(&str, usize) -> f64) -> Result<Self> {
        struct Filler<F>(F);
        impl<F: FnMut(&str, usize) -> f64> Filler<F> {
            fn vec(&mut self, name: &str, len: usize) -> Array1<f64> {
                Array1::from_iter((0..len).map(|_| (self.0)(name, len)))
            }
            fn mat(&mut self, name: &str, r: usize, c: usize) -> Array2<f64> {
                self.vec(name, r * c)
                    .into_shape_with_order((r, c))
                    .expect("sized")
            }
            fn block(&mut self, heads: usize, d: usize, dh: usize) -> MhaWeights {
                let (mut wq, mut wk, mut wv) = (Vec::new(), Vec::new(), Vec::new());
                for _ in 0..heads {
                    wq.push(self.mat("wq", d, dh));
                    wk.push(self.mat("wk", d, dh));
                    wv.push(self.mat("wv", d, dh));
                }
                MhaWeights {
                    wq,
                    wk,
                    wv,
                    wo: self.mat("wo", d, d),
                }
            }
        }

        shape.check()?;
        let (d, dh, h) = (shape.dim, shape.head_dim(), shape.heads);
        let mut f = Filler(fill);
        let class_query = f.vec("class_query", d);
        let class_reference = f.vec("class_reference", d);
        let layers = (0..shape.layers)
            .map(|_| LayerWeights {
                self_attn: f.block(h, d, dh),
                cross_attn: f.block(h, d, dh),
            })
            .collect();
        let w1 = f.mat("head.w1", shape.hidden, 2 * d);
        let b1 = f.vec("head.b1", shape.hidden);
        let w2 = f.vec("head.w2", shape.hidden);
        let b2 = f.vec("head.b2", 1)[0];
        let w = Self {
            dim: d,
            heads: h,
            layers,
            class_query,
            class_reference,
            head: MlpHead { w1, b1, w2, b2 },
        };
        w.validate()?;
        Ok(w)
    }

    pub fn zeros(shape: AttentionShape) -> Result<Self> {
        Self::from_fn(shape, |_, _| 0.0)
    }

    /// Seeded Gaussian weights (ChaCha8), scaled to keep activations O(1).
    pub fn random(shape: AttentionShape, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = shape.dim as f64;
        Self::from_fn(shape, |name, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let scale = match name {
                "wq" | "wk" | "wv" => 1.0 / d.sqrt(),
                "wo" => 0.5 / d.sqrt(),
                "head.w1" => 1.0 / (2.0 * d).sqrt(),
                "head.w2" => 1.0 / (shape.hidden as f64).sqrt(),
                _ => 0.1,
            };
            z * scale
        })
    }

    /// Rounds every scalar to f32, matching what [`save_weights`] stores.
    pub fn to_f32_precision(&self) -> Self {
        let mut vals = self
            .tensors()
            .into_iter()
            .flatten()
            .map(|v| f64::from(v as f32));
        Self::from_fn(self.shape(), |_, _| vals.next().expect("same layout")).expect("valid shape")
    }

    pub fn validate(&self) -> Result<()> {
        let shape = AttentionShape {
            dim: self.dim,
            heads: self.heads,
            layers: self.layers.len(),
            hidden: self.head.b1.len(),
        };
        shape.check()?;
        let (d, dh) = (self.dim, shape.head_dim());
        let bad = |what: String| Err(Error::WeightShapeMismatch(what));
        if self.class_query.len() != d || self.class_reference.len() != d {
            return bad("class token length".into());
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, m) in [("self", &layer.self_attn), ("cross", &layer.cross_attn)] {
                if m.wq.len() != self.heads || m.wk.len() != self.heads || m.wv.len() != self.heads
                {
                    return bad(format!("layer {l} {name}: head count"));
                }
                let heads_ok =
                    m.wq.iter()
                        .chain(&m.wk)
                        .chain(&m.wv)
                        .all(|p| p.dim() == (d, dh));
                if !heads_ok || m.wo.dim() != (d, d) {
                    return bad(format!("layer {l} {name}: projection shape"));
                }
            }
        }
        let hd = &self.head;
        if hd.w1.dim() != (hd.b1.len(), 2 * d) || hd.w2.len() != hd.b1.len() {
            return bad("classification head".into());
        }
        let all_finite = self
            .tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()));
        if !all_finite {
            return bad("non-finite weight".into());
        }
        Ok(())
    }

    /// Flattened tensors in blob order.
    fn tensors(&self) -> Vec<Vec<f64>> {
        let mut out = vec![self.class_query.to_vec(), self.class_reference.to_vec()];
        for layer in &self.layers {
            for m in [&layer.self_attn, &layer.cross_attn] {
                for h in 0..m.wq.len() {
                    for p in [&m.wq[h], &m.wk[h], &m.wv[h]] {
                        out.push(p.iter().copied().collect());
                    }
                }
                out.push(m.wo.iter().copied().collect());
            }
        }
        out.push(self.head.w1.iter().copied().collect());
        out.push(self.head.b1.to_vec());
        out.push(self.head.w2.to_vec());
        out.push(vec![self.head.b2]);
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightManifest {
    format: String,
    dim: usize,
    heads: usize,
    layers: usize,
    hidden: usize,
    blob: String,
    tensors: Vec<TensorEntry>,
}

const WEIGHT_FORMAT: &str = "copyloc-attention/1";

/// Writes `<manifest>` (JSON) and a sibling `.bin` blob of little-endian f32
/// tensors in [`AttentionShape::tensor_layout`] order.
pub fn save_weights(manifest_path: impl AsRef<Path>, w: &AttentionWeights) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let blob_path = manifest_path.with_extension("bin");
    let shape = w.shape();
    let manifest = WeightManifest {
        format: WEIGHT_FORMAT.into(),
        dim: shape.dim,
        heads: shape.heads,
        layers: shape.layers,
        hidden: shape.hidden,
        blob: blob_path
            .file_name()
            .unwrap()
            .to_string_lossy()
            .into_owned(),
        tensors: shape
            .tensor_layout()
            .into_iter()
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect(),
    };
    let mut blob = Vec::new();
    for t in w.tensors() {
        for v in t {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))
}

pub fn load_weights(manifest_path: impl AsRef<Path>) -> Result<AttentionWeights> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: WeightManifest = serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
        line: e.line(),
        message: e.to_string(),
    })?;
    if m.format != WEIGHT_FORMAT {
        return Err(Error::WeightShapeMismatch(format!(
            "unknown weight format {:?}",
            m.format
        )));
    }
    let shape = AttentionShape {
        dim: m.dim,
        heads: m.heads,
        layers: m.layers,
        hidden: m.hidden,
    };
    shape.check()?;
    let layout = shape.tensor_layout();
    let listed: Vec<_> = m
        .tensors
        .iter()
        .map(|t| (t.name.clone(), t.shape.clone()))
        .collect();
    if listed != layout {
        return Err(Error::WeightShapeMismatch(
            "tensor list does not match the declared shape".into(),
        ));
    }
    let blob_path: PathBuf = manifest_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(&m.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let expected: usize = layout
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    if blob.len() != 4 * expected {
        return Err(Error::TruncatedFile {
            expected: 4 * expected,
            found: blob.len(),
        });
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
    AttentionWeights::from_fn(shape, |_, _| values.next().expect("length checked"))
}

/// Multi-head attention with queries from `x` and keys/values from `y`.
pub fn multi_head(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    w: &MhaWeights,
    kernel: Kernel,
) -> Result<Array2<f64>> {
    let d = w.wo.nrows();
    if x.ncols() != d || y.ncols() != d {
        return Err(Error::DimMismatch(format!(
            "inputs of width {} and {} for model width {d}",
            x.ncols(),
            y.ncols()
        )));
    }
    let mut heads = Vec::with_capacity(w.wq.len());
    for h in 0..w.wq.len() {
        let q = x.dot(&w.wq[h]);
        let k = y.dot(&w.wk[h]);
        let v = y.dot(&w.wv[h]);
        heads.push(attention(kernel, q.view(), k.view(), v.view())?);
    }
    let views: Vec<_> = heads.iter().map(|h| h.view()).collect();
    let cat = concatenate(Axis(1), &views).expect("heads share row count");
    Ok(cat.dot(&w.wo))
}

/// Runs the stacked self/cross layers on both streams. Inputs must already
/// carry their class-token row.
pub fn enhance_pair(
    fq: ArrayView2<f64>,
    fr: ArrayView2<f64>,
    w: &AttentionWeights,
    kernel: Kernel,
) -> Result<(Array2<f64>, Array2<f64>)> {
    w.validate()?;
    let mut q = fq.to_owned();
    let mut r = fr.to_owned();
    for layer in &w.layers {
        let dq = multi_head(q.view(), q.view(), &layer.self_attn, kernel)?;
        let dr = multi_head(r.view(), r.view(), &layer.self_attn, kernel)?;
        q += &dq;
        r += &dr;
        let cq = multi_head(q.view(), r.view(), &layer.cross_attn, kernel)?;
        let cr = multi_head(r.view(), q.view(), &layer.cross_attn, kernel)?;
        q += &cq;
        r += &cr;
    }
    if w.layers.is_empty() && (fq.ncols() != w.dim || fr.ncols() != w.dim) {
        return Err(Error::DimMismatch(format!(
            "inputs of width {} and {} for model width {}",
            fq.ncols(),
            fr.ncols(),
            w.dim
        )));
    }
    Ok((q, r))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Video-level copy probability from the two class-token rows.
pub fn video_head(
    class_q: ArrayView1<f64>,
    class_r: ArrayView1<f64>,
    head: &MlpHead,
) -> Result<f64> {
    let input = concatenate(Axis(0), &[class_q, class_r]).expect("1-d");
    if input.len() != head.w1.ncols() {
        return Err(Error::DimMismatch(format!(
            "head expects {} inputs, got {}",
            head.w1.ncols(),
            input.len()
        )));
    }
    let hidden = (head.w1.dot(&input) + &head.b1).mapv(|v| v.max(0.0));
    Ok(sigmoid(hidden.dot(&head.w2) + head.b2))
}

/// Enhanced frame features (class token stripped) and the video-level probability.
#[derive(Debug, Clone)]
pub struct EnhancedPair {
    pub query: Array2<f64>,
    pub reference: Array2<f64>,
    pub video_prob: f64,
}

/// Full feature-enhancement pass for one pair of sequences.
pub fn enhance_sequences(
    query: &FeatureSequence,
    reference: &FeatureSequence,
    w: &AttentionWeights,
    kernel: Kernel,
) -> Result<EnhancedPair> {
    let fq = build_input(query, w.class_query.view())?;
    let fr = build_input(reference, w.class_reference.view())?;
    let (oq, or) = enhance_pair(fq.view(), fr.view(), w, kernel)?;
    let video_prob = video_head(oq.row(0), or.row(0), &w.head)?;
    Ok(EnhancedPair {
        query: oq.slice(s![1.., ..]).to_owned(),
        reference: or.slice(s![1.., ..]).to_owned(),
        video_prob,
    })
}

/// One row of the kernel scaling table.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub n: usize,
    pub vanilla_secs: f64,
    pub linear_secs: f64,
    /// Time ratio against the previous row; `None` for the first row.
    pub vanilla_ratio: Option<f64>,
    pub linear_ratio: Option<f64>,
}

/// Times both kernels on random `n x dim` inputs, taking the fastest of `reps` runs.
pub fn time_kernels(
    lengths: &[usize],
    dim: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<ScalingRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<ScalingRow> = Vec::new();
    for &n in lengths {
        let mut gen = || {
            Array2::from_shape_fn((n, dim), |_| StandardNormal.sample(&mut rng))
                * (1.0 / (dim as f64).sqrt())
        };
        let (q, k, v) = (gen(), gen(), gen());
        let best = |kernel: Kernel| -> Result<f64> {
            let mut best = f64::INFINITY;
            for _ in 0..reps.max(1) {
                let t = Instant::now();
                let out = attention(kernel, q.view(), k.view(), v.view())?;
                std::hint::black_box(&out);
                best = best.min(t.elapsed().as_secs_f64());
            }
            Ok(best)
        };
        let vanilla_secs = best(Kernel::Vanilla)?;
        let linear_secs = best(Kernel::Linear)?;
        let prev = rows.last();
        rows.push(ScalingRow {
            n,
            vanilla_secs,
            linear_secs,
            vanilla_ratio: prev.map(|p| vanilla_secs / p.vanilla_secs),
            linear_ratio: prev.map(|p| linear_secs / p.linear_secs),
        });
    }
    Ok(rows)
}
