//! Segment boxes, pair annotations, predictions and their JSON-lines files.
//!
//! One pair per line:
//!
//! ```json
//! {"query_id":"q","ref_id":"r","segments":[[0,5,10,15]],"weak_label":true,"groups":["sports"]}
//! ```
//!
//! Predictions add a `scores` array parallel to `segments` and an optional
//! `video_prob`; pseudo labels further add `source` and `kept`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A copied-segment pair as a rectangle on the query x reference time grid.
///
/// Coordinates are seconds with end-exclusive semantics: a box covering
/// query cells `[a, b)` spans seconds `[a * scale_q, b * scale_q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegmentBox {
    ts_q: f64,
    te_q: f64,
    ts_r: f64,
    te_r: f64,
    score: f64,
}

impl SegmentBox {
    pub fn new(ts_q: f64, te_q: f64, ts_r: f64, te_r: f64, score: f64) -> Result<Self> {
        let coords = [ts_q, te_q, ts_r, te_r];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidBox(format!(
                "coordinates must be finite and >= 0: {coords:?}"
            )));
        }
        if ts_q >= te_q || ts_r >= te_r {
            return Err(Error::InvalidBox(format!(
                "start must precede end: {coords:?}"
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidBox(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            ts_q,
            te_q,
            ts_r,
            te_r,
            score,
        })
    }

    /// Ground-truth box, score fixed to 1.
    pub fn gt(ts_q: f64, te_q: f64, ts_r: f64, te_r: f64) -> Result<Self> {
        Self::new(ts_q, te_q, ts_r, te_r, 1.0)
    }

    pub fn from_coords(c: [f64; 4], score: f64) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3], score)
    }

    /// Box over end-exclusive cell ranges `rows` x `cols` of a grid whose cells
    /// are `scale_q` x `scale_r` seconds.
    pub fn from_cells(
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
        scale_q: f64,
        scale_r: f64,
        score: f64,
    ) -> Result<Self> {
        Self::new(
            rows.start as f64 * scale_q,
            rows.end as f64 * scale_q,
            cols.start as f64 * scale_r,
            cols.end as f64 * scale_r,
            score.clamp(0.0, 1.0),
        )
    }

    pub fn ts_q(&self) -> f64 {
        self.ts_q
    }
    pub fn te_q(&self) -> f64 {
        self.te_q
    }
    pub fn ts_r(&self) -> f64 {
        self.ts_r
    }
    pub fn te_r(&self) -> f64 {
        self.te_r
    }
    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.ts_q, self.te_q, self.ts_r, self.te_r]
    }

    pub fn query_duration(&self) -> f64 {
        self.te_q - self.ts_q
    }

    pub fn ref_duration(&self) -> f64 {
        self.te_r - self.ts_r
    }

    pub fn area(&self) -> f64 {
        self.query_duration() * self.ref_duration()
    }

    pub fn with_score(mut self, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidBox(format!("score {score} outside [0, 1]")));
        }
        self.score = score;
        Ok(self)
    }

    /// Multiplies every coordinate by `k > 0`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(
            self.ts_q * k,
            self.te_q * k,
            self.ts_r * k,
            self.te_r * k,
            self.score,
        )
    }

    /// True if the box lies inside videos of the given lengths in seconds.
    pub fn fits(&self, len_q: f64, len_r: f64) -> bool {
        self.te_q <= len_q + 1e-9 && self.te_r <= len_r + 1e-9
    }
}

impl<'de> Deserialize<'de> for SegmentBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            ts_q: f64,
            te_q: f64,
            ts_r: f64,
            te_r: f64,
            score: f64,
        }
        let r = Raw::deserialize(d)?;
        SegmentBox::new(r.ts_q, r.te_q, r.ts_r, r.te_r, r.score).map_err(serde::de::Error::custom)
    }
}

/// Ground truth for one video pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAnnotation {
    query_id: String,
    ref_id: String,
    gt_boxes: Vec<SegmentBox>,
    weak_label: Option<bool>,
    groups: Vec<String>,
    query_len: Option<f64>,
    ref_len: Option<f64>,
}

impl PairAnnotation {
    pub fn new(
        query_id: impl Into<String>,
        ref_id: impl Into<String>,
        gt_boxes: Vec<SegmentBox>,
        weak_label: Option<bool>,
        groups: Vec<String>,
    ) -> Result<Self> {
        if weak_label == Some(false) && !gt_boxes.is_empty() {
            return Err(Error::InvalidAnnotation(
                "weak_label is false but segments are present".into(),
            ));
        }
        let gt_boxes = gt_boxes
            .into_iter()
            .map(|b| b.with_score(1.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            query_id: query_id.into(),
            ref_id: ref_id.into(),
            gt_boxes,
            weak_label,
            groups,
            query_len: None,
            ref_len: None,
        })
    }

    /// Attaches video lengths in seconds; boxes must fit inside them.
    pub fn with_lengths(mut self, len_q: f64, len_r: f64) -> Result<Self> {
        if !(len_q > 0.0 && len_r > 0.0) {
            return Err(Error::InvalidAnnotation(format!(
                "lengths must be positive: {len_q}, {len_r}"
            )));
        }
        if let Some(b) = self.gt_boxes.iter().find(|b| !b.fits(len_q, len_r)) {
            return Err(Error::InvalidAnnotation(format!(
                "box {:?} exceeds video lengths {len_q}x{len_r}",
                b.coords()
            )));
        }
        self.query_len = Some(len_q);
        self.ref_len = Some(len_r);
        Ok(self)
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }
    pub fn ref_id(&self) -> &str {
        &self.ref_id
    }
    pub fn gt_boxes(&self) -> &[SegmentBox] {
        &self.gt_boxes
    }
    pub fn weak_label(&self) -> Option<bool> {
        self.weak_label
    }
    pub fn groups(&self) -> &[String] {
        &self.groups
    }
    pub fn lengths(&self) -> Option<(f64, f64)> {
        self.query_len.zip(self.ref_len)
    }

    /// Video-level label: the weak label when present, otherwise whether any segment is annotated.
    pub fn is_copied(&self) -> bool {
        self.weak_label.unwrap_or(!self.gt_boxes.is_empty())
    }

    /// Same pair with the segment boxes dropped, keeping only the weak label.
    pub fn weak_only(&self) -> Self {
        Self {
            gt_boxes: Vec::new(),
            weak_label: Some(self.is_copied()),
            ..self.clone()
        }
    }
}

/// Detector output for one video pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPrediction {
    pub query_id: String,
    pub ref_id: String,
    pub boxes: Vec<SegmentBox>,
    /// Video-level copy probability from the classification head, if computed.
    pub video_prob: Option<f64>,
}

impl PairPrediction {
    pub fn new(
        query_id: impl Into<String>,
        ref_id: impl Into<String>,
        boxes: Vec<SegmentBox>,
    ) -> Self {
        Self {
            query_id: query_id.into(),
            ref_id: ref_id.into(),
            boxes,
            video_prob: None,
        }
    }
}

/// Wire form shared by annotation, prediction and pseudo-label lines.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub(crate) struct PairRecord {
    pub query_id: String,
    pub ref_id: String,
    #[serde(default)]
    pub segments: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak_label: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_len: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_len: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept: Option<bool>,
}

impl PairRecord {
    pub fn boxes(&self) -> Result<Vec<SegmentBox>> {
        if let Some(scores) = &self.scores {
            if scores.len() != self.segments.len() {
                return Err(Error::InvalidBox(format!(
                    "{} scores for {} segments",
                    scores.len(),
                    self.segments.len()
                )));
            }
        }
        self.segments
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let score = self.scores.as_ref().map_or(1.0, |s| s[i]);
                SegmentBox::from_coords(*c, score)
            })
            .collect()
    }

    pub fn set_boxes(&mut self, boxes: &[SegmentBox], with_scores: bool) {
        self.segments = boxes.iter().map(SegmentBox::coords).collect();
        self.scores = with_scores.then(|| boxes.iter().map(SegmentBox::score).collect());
    }

    pub fn to_annotation(&self) -> Result<PairAnnotation> {
        let ann = PairAnnotation::new(
            self.query_id.clone(),
            self.ref_id.clone(),
            self.boxes()?,
            self.weak_label,
            self.groups.clone().unwrap_or_default(),
        )?;
        match (self.query_len, self.ref_len) {
            (Some(q), Some(r)) => ann.with_lengths(q, r),
            (None, None) => Ok(ann),
            _ => Err(Error::InvalidAnnotation(
                "query_len and ref_len must appear together".into(),
            )),
        }
    }

    pub fn from_annotation(a: &PairAnnotation) -> Self {
        let mut rec = PairRecord {
            query_id: a.query_id.clone(),
            ref_id: a.ref_id.clone(),
            weak_label: a.weak_label,
            groups: (!a.groups.is_empty()).then(|| a.groups.clone()),
            query_len: a.query_len,
            ref_len: a.ref_len,
            ..Default::default()
        };
        rec.set_boxes(&a.gt_boxes, false);
        rec
    }

    pub fn to_prediction(&self) -> Result<PairPrediction> {
        if let Some(p) = self.video_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParam(format!(
                    "video_prob {p} outside [0, 1]"
                )));
            }
        }
        Ok(PairPrediction {
            query_id: self.query_id.clone(),
            ref_id: self.ref_id.clone(),
            boxes: self.boxes()?,
            video_prob: self.video_prob,
        })
    }

    pub fn from_prediction(p: &PairPrediction) -> Self {
        let mut rec = PairRecord {
            query_id: p.query_id.clone(),
            ref_id: p.ref_id.clone(),
            video_prob: p.video_prob,
            ..Default::default()
        };
        rec.set_boxes(&p.boxes, true);
        rec
    }
}

pub(crate) fn read_records(path: &Path) -> Result<Vec<(usize, PairRecord)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedJson {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, rec));
    }
    Ok(out)
}

pub(crate) fn write_records(
    path: &Path,
    records: impl IntoIterator<Item = PairRecord>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(&rec).expect("records always serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn at_line<T>(line: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::MalformedJson { .. } | Error::InvariantViolation { .. } => e,
        other => Error::InvariantViolation {
            line,
            reason: other.to_string(),
        },
    })
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<PairAnnotation>> {
    read_records(path.as_ref())?
        .into_iter()
        .map(|(line, rec)| at_line(line, rec.to_annotation()))
        .collect()
}

pub fn write_annotations(path: impl AsRef<Path>, anns: &[PairAnnotation]) -> Result<()> {
    write_records(path.as_ref(), anns.iter().map(PairRecord::from_annotation))
}

/// Reads predictions; lines without `scores` get score 1 per segment.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PairPrediction>> {
    read_records(path.as_ref())?
        .into_iter()
        .map(|(line, rec)| at_line(line, rec.to_prediction()))
        .collect()
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[PairPrediction]) -> Result<()> {
    write_records(path.as_ref(), preds.iter().map(PairRecord::from_prediction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn box_invariants() {
        assert!(SegmentBox::new(0.0, 5.0, 10.0, 15.0, 0.5).is_ok());
        assert!(SegmentBox::new(5.0, 5.0, 10.0, 15.0, 0.5).is_err());
        assert!(SegmentBox::new(-1.0, 5.0, 10.0, 15.0, 0.5).is_err());
        assert!(SegmentBox::new(0.0, 5.0, 10.0, 15.0, 1.5).is_err());
        assert!(SegmentBox::new(0.0, f64::NAN, 10.0, 15.0, 0.5).is_err());
    }

    #[test]
    fn segment_maps_to_box() {
        let f = write_lines(&[r#"{"query_id":"a","ref_id":"b","segments":[[0,5,10,15]]}"#]);
        let anns = read_annotations(f.path()).unwrap();
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].gt_boxes()[0].coords(), [0.0, 5.0, 10.0, 15.0]);
        assert_eq!(anns[0].gt_boxes()[0].score(), 1.0);
        assert!(anns[0].is_copied());
    }

    #[test]
    fn weak_negative_with_segment_rejected() {
        let f = write_lines(&[
            r#"{"query_id":"a","ref_id":"b"}"#,
            r#"{"query_id":"a","ref_id":"c","segments":[[0,5,10,15]],"weak_label":false}"#,
        ]);
        match read_annotations(f.path()) {
            Err(Error::InvariantViolation { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_number() {
        let f = write_lines(&[r#"{"query_id":"a","ref_id":"b"}"#, "", "{not json"]);
        match read_annotations(f.path()) {
            Err(Error::MalformedJson { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn prediction_scores_round_trip() {
        let p = PairPrediction {
            query_id: "q".into(),
            ref_id: "r".into(),
            boxes: vec![
                SegmentBox::new(1.0, 2.0, 3.0, 4.0, 0.25).unwrap(),
                SegmentBox::new(0.5, 9.0, 3.0, 40.0, 0.75).unwrap(),
            ],
            video_prob: Some(0.3),
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_predictions(f.path(), std::slice::from_ref(&p)).unwrap();
        assert_eq!(read_predictions(f.path()).unwrap(), vec![p]);
    }

    fn arb_box() -> impl Strategy<Value = SegmentBox> {
        (
            0.0..500.0f64,
            0.001..100.0f64,
            0.0..500.0f64,
            0.001..100.0f64,
        )
            .prop_map(|(a, da, b, db)| SegmentBox::gt(a, a + da, b, b + db).unwrap())
    }

    fn arb_annotation() -> impl Strategy<Value = PairAnnotation> {
        (
            "[a-z0-9_]{1,12}",
            "[a-z0-9_]{1,12}",
            prop::collection::vec(arb_box(), 0..4),
            prop::option::of(any::<bool>()),
            prop::collection::vec("[a-z ]{0,8}", 0..3),
        )
            .prop_map(|(q, r, boxes, weak, groups)| {
                let weak = if boxes.is_empty() {
                    weak
                } else {
                    weak.map(|_| true)
                };
                PairAnnotation::new(q, r, boxes, weak, groups).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn annotation_round_trip(anns in prop::collection::vec(arb_annotation(), 100)) {
            let f = tempfile::NamedTempFile::new().unwrap();
            write_annotations(f.path(), &anns).unwrap();
            let back = read_annotations(f.path()).unwrap();
            prop_assert_eq!(back, anns);
        }
    }
}
