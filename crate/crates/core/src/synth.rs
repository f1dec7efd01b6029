//! Seeded synthetic copied pairs with exactly known ground truth.
//!
//! Base frames are i.i.d. standard Gaussian vectors scaled to unit length.
//! A planted copy takes a reference subsequence, resamples it by the speed
//! factor with linear interpolation, optionally reverses it, perturbs every
//! frame with isotropic Gaussian noise of total norm about `noise`, and
//! writes the renormalized result into the query. All randomness comes from
//! `ChaCha8Rng::seed_from_u64(seed)`, so a seed and a plan always produce
//! bit-identical output on every platform.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::annotations::{PairAnnotation, SegmentBox};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;

/// One planted copy. `dur` is measured on the reference; the query span is
/// `round(dur / speed)` frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopySpec {
    pub query_start: usize,
    pub ref_start: usize,
    pub dur: usize,
    pub speed: f64,
    pub reversed: bool,
    pub noise: f64,
}

impl CopySpec {
    pub fn query_dur(&self) -> usize {
        (self.dur as f64 / self.speed).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub len_q: usize,
    pub len_r: usize,
    pub dim: usize,
    pub copies: Vec<CopySpec>,
}

#[derive(Debug, Clone)]
pub struct GeneratedPair {
    pub query: FeatureSequence,
    pub reference: FeatureSequence,
    pub annotation: PairAnnotation,
}

fn check_plan(spec: &PairSpec) -> Result<()> {
    if spec.dim == 0 {
        return Err(Error::DimZero);
    }
    if spec.len_q == 0 || spec.len_r == 0 {
        return Err(Error::EmptySequence);
    }
    for c in &spec.copies {
        if ![0.5, 1.0, 2.0].contains(&c.speed) {
            return Err(Error::InvalidParam(format!(
                "speed {} not in {{0.5, 1, 2}}",
                c.speed
            )));
        }
        if !(c.noise >= 0.0 && c.noise.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "noise {} must be >= 0",
                c.noise
            )));
        }
        if c.dur == 0 || c.query_dur() == 0 {
            return Err(Error::DoesNotFit("copy has zero duration".into()));
        }
        if c.ref_start + c.dur > spec.len_r {
            return Err(Error::DoesNotFit(format!(
                "reference span {}..{} exceeds length {}",
                c.ref_start,
                c.ref_start + c.dur,
                spec.len_r
            )));
        }
        if c.query_start + c.query_dur() > spec.len_q {
            return Err(Error::DoesNotFit(format!(
                "query span {}..{} exceeds length {}",
                c.query_start,
                c.query_start + c.query_dur(),
                spec.len_q
            )));
        }
    }
    let disjoint = |a: (usize, usize), b: (usize, usize)| a.1 <= b.0 || b.1 <= a.0;
    for (i, a) in spec.copies.iter().enumerate() {
        for b in &spec.copies[i + 1..] {
            if !disjoint(
                (a.query_start, a.query_start + a.query_dur()),
                (b.query_start, b.query_start + b.query_dur()),
            ) {
                return Err(Error::OverlapInPlan("query"));
            }
            if !disjoint(
                (a.ref_start, a.ref_start + a.dur),
                (b.ref_start, b.ref_start + b.dur),
            ) {
                return Err(Error::OverlapInPlan("reference"));
            }
        }
    }
    Ok(())
}

fn unit_gaussian(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((rows, dim), |_| StandardNormal.sample(rng));
    crate::features::l2_normalize_rows(&mut m);
    m
}

fn to_unit(mut v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v /= n;
    }
    v
}

/// Group tags describing the transformations of a plan.
pub fn plan_tags(spec: &PairSpec) -> Vec<String> {
    if spec.copies.is_empty() {
        return vec!["negative".into()];
    }
    let mut tags = Vec::new();
    for c in &spec.copies {
        let t = if c.reversed {
            "reversed".to_string()
        } else if c.speed != 1.0 {
            format!("speed:{}", c.speed)
        } else {
            "plain".to_string()
        };
        if !tags.contains(&t) {
            tags.push(t);
        }
    }
    tags
}

pub fn pair_ids(seed: u64) -> (String, String) {
    (format!("s{seed:05}_q"), format!("s{seed:05}_r"))
}

pub fn gen_pair(seed: u64, spec: &PairSpec) -> Result<GeneratedPair> {
    check_plan(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = unit_gaussian(&mut rng, spec.len_r, spec.dim);
    let mut query = unit_gaussian(&mut rng, spec.len_q, spec.dim);
    let noise_scale = 1.0 / (spec.dim as f64).sqrt();
    let mut boxes = Vec::with_capacity(spec.copies.len());

    for c in &spec.copies {
        let qdur = c.query_dur();
        let last = (c.dur - 1) as f64;
        let mut frames: Vec<Array1<f64>> = (0..qdur)
            .map(|k| {
                let pos = (k as f64 * c.speed).min(last);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(c.dur - 1);
                let f = pos - i0 as f64;
                let a = reference.row(c.ref_start + i0);
                let b = reference.row(c.ref_start + i1);
                to_unit(&a * (1.0 - f) + &b * f)
            })
            .collect();
        if c.reversed {
            frames.reverse();
        }
        for (k, frame) in frames.into_iter().enumerate() {
            let noisy = if c.noise > 0.0 {
                let eps = Array1::from_shape_fn(spec.dim, |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * c.noise * noise_scale
                });
                to_unit(frame + eps)
            } else {
                frame
            };
            query.row_mut(c.query_start + k).assign(&noisy);
        }
        boxes.push(SegmentBox::gt(
            c.query_start as f64,
            (c.query_start + qdur) as f64,
            c.ref_start as f64,
            (c.ref_start + c.dur) as f64,
        )?);
    }

    let (qid, rid) = pair_ids(seed);
    let weak = Some(!boxes.is_empty());
    let annotation = PairAnnotation::new(qid.clone(), rid.clone(), boxes, weak, plan_tags(spec))?
        .with_lengths(spec.len_q as f64, spec.len_r as f64)?;
    Ok(GeneratedPair {
        query: FeatureSequence::new(qid, query.mapv(|v| v as f32), false)?,
        reference: FeatureSequence::new(rid, reference.mapv(|v| v as f32), false)?,
        annotation,
    })
}

/// Families of generated pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// One speed-1 copy with noise 0.05.
    Easy,
    /// One copy cycling by seed through reversed, 2x and 0.5x speed.
    Hard,
    /// No copy.
    Negative,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Preset::Easy),
            "hard" => Ok(Preset::Hard),
            "negative" => Ok(Preset::Negative),
            other => Err(Error::InvalidParam(format!("unknown preset {other:?}"))),
        }
    }
}

/// Draws a single-copy plan for `seed` from its own RNG stream.
pub fn preset_spec(preset: Preset, seed: u64, dim: usize) -> PairSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0FC0_91E5);
    let len_q = rng.random_range(60..=180);
    let len_r = rng.random_range(60..=180);
    let (speed, reversed) = match preset {
        Preset::Easy => (1.0, false),
        Preset::Hard => match seed % 3 {
            0 => (1.0, true),
            1 => (2.0, false),
            _ => (0.5, false),
        },
        Preset::Negative => {
            return PairSpec {
                len_q,
                len_r,
                dim,
                copies: Vec::new(),
            }
        }
    };
    // reference duration bounded so the query span also fits
    let max_dur = ((len_q as f64 * speed).floor() as usize).min(len_r).min(60);
    let dur = rng.random_range(15..=max_dur.max(15)).min(max_dur);
    let dur = if speed == 2.0 { dur & !1 } else { dur };
    let copy = CopySpec {
        query_start: 0,
        ref_start: rng.random_range(0..=len_r - dur),
        dur,
        speed,
        reversed,
        noise: 0.05,
    };
    let query_start = rng.random_range(0..=len_q - copy.query_dur());
    PairSpec {
        len_q,
        len_r,
        dim,
        copies: vec![CopySpec {
            query_start,
            ..copy
        }],
    }
}
