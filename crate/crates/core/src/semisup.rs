//! Pseudo-label pipeline: confidence thresholding of teacher detections,
//! weak-label filtering, and assembly of the supervised and unsupervised
//! loss terms.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotations::{
    read_records, write_records, PairAnnotation, PairPrediction, PairRecord, SegmentBox,
};
use crate::error::{Error, Result};
use crate::losses::{assign_targets, iou, segment_loss, semi_total, video_loss, Target};
use crate::par;

/// Confidence threshold used when none is given.
pub const DEFAULT_THETA: f64 = 0.6;
/// IoU with a ground-truth copy at which a pseudo box counts as correct.
pub const CORRECT_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoSource {
    Unlabeled,
    WeakPositive,
    WeakNegative,
}

impl PseudoSource {
    pub fn name(&self) -> &'static str {
        match self {
            PseudoSource::Unlabeled => "unlabeled",
            PseudoSource::WeakPositive => "weak_positive",
            PseudoSource::WeakNegative => "weak_negative",
        }
    }
}

impl FromStr for PseudoSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unlabeled" => Ok(PseudoSource::Unlabeled),
            "weak_positive" => Ok(PseudoSource::WeakPositive),
            "weak_negative" => Ok(PseudoSource::WeakNegative),
            other => Err(Error::InvalidParam(format!(
                "unknown pseudo-label source {other:?}"
            ))),
        }
    }
}

/// Pseudo supervision for one pair. A weak negative never carries boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub query_id: String,
    pub ref_id: String,
    pub boxes: Vec<SegmentBox>,
    pub source: PseudoSource,
    pub kept: bool,
}

impl PseudoLabel {
    fn check(&self) -> Result<()> {
        if self.source == PseudoSource::WeakNegative && !self.boxes.is_empty() {
            return Err(Error::InvalidAnnotation(format!(
                "weak negative pair {}/{} carries {} boxes",
                self.query_id,
                self.ref_id,
                self.boxes.len()
            )));
        }
        Ok(())
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("{name} = {v} outside [0, 1]")))
    }
}

/// Keeps the boxes scoring at least `theta`; pairs left empty are not kept.
pub fn make_pseudo_labels(detections: &[PairPrediction], theta: f64) -> Result<Vec<PseudoLabel>> {
    check_unit("theta", theta)?;
    Ok(par::map(detections, |d| {
        let boxes: Vec<SegmentBox> = d
            .boxes
            .iter()
            .filter(|b| b.score() >= theta)
            .copied()
            .collect();
        PseudoLabel {
            query_id: d.query_id.clone(),
            ref_id: d.ref_id.clone(),
            kept: !boxes.is_empty(),
            boxes,
            source: PseudoSource::Unlabeled,
        }
    }))
}

/// Applies a video-level weak label to one pseudo label.
pub fn weak_label_filter(mut pseudo: PseudoLabel, weak: bool) -> PseudoLabel {
    if !weak {
        pseudo.boxes.clear();
        pseudo.source = PseudoSource::WeakNegative;
        pseudo.kept = true;
    } else if pseudo.boxes.is_empty() {
        pseudo.kept = false;
    } else {
        pseudo.source = PseudoSource::WeakPositive;
        pseudo.kept = true;
    }
    pseudo
}

/// Filters every pseudo label whose pair has a weak label in `anns`; the
/// rest pass through untouched.
pub fn filter_with_weak_labels(
    pseudo: Vec<PseudoLabel>,
    anns: &[PairAnnotation],
) -> Vec<PseudoLabel> {
    let weak: HashMap<(&str, &str), bool> = anns
        .iter()
        .filter_map(|a| a.weak_label().map(|w| ((a.query_id(), a.ref_id()), w)))
        .collect();
    pseudo
        .into_iter()
        .map(
            |p| match weak.get(&(p.query_id.as_str(), p.ref_id.as_str())) {
                Some(&w) => weak_label_filter(p, w),
                None => p,
            },
        )
        .collect()
}

/// Number of boxes across kept labels.
pub fn kept_box_count(pseudo: &[PseudoLabel]) -> usize {
    pseudo
        .iter()
        .filter(|p| p.kept)
        .map(|p| p.boxes.len())
        .sum()
}

/// Fraction of kept pseudo boxes that overlap a ground-truth copy of their
/// pair with IoU at least [`CORRECT_IOU`]. `None` when no box is kept.
pub fn pseudo_box_precision(pseudo: &[PseudoLabel], truth: &[PairAnnotation]) -> Option<f64> {
    let gts: HashMap<(&str, &str), &[SegmentBox]> = truth
        .iter()
        .map(|a| ((a.query_id(), a.ref_id()), a.gt_boxes()))
        .collect();
    let (mut good, mut total) = (0usize, 0usize);
    for p in pseudo.iter().filter(|p| p.kept) {
        let gt = gts
            .get(&(p.query_id.as_str(), p.ref_id.as_str()))
            .copied()
            .unwrap_or(&[]);
        for b in &p.boxes {
            total += 1;
            if gt.iter().any(|g| iou(b, g) >= CORRECT_IOU) {
                good += 1;
            }
        }
    }
    (total > 0).then(|| good as f64 / total as f64)
}

/// The two loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemiBatch {
    pub supervised: f64,
    pub unsupervised: f64,
    pub combined: f64,
    pub labeled_pairs: usize,
    pub pseudo_pairs: usize,
}

fn pair_loss(
    pred: &PairPrediction,
    targets: &[SegmentBox],
    copied: bool,
    boxes_too: bool,
    lambda: f64,
) -> Result<f64> {
    let seg = if boxes_too {
        let assigned: Vec<Target> = assign_targets(&pred.boxes, targets);
        segment_loss(&pred.boxes, &assigned, lambda)?
    } else {
        0.0
    };
    let video = pred.video_prob.map_or(0.0, |y| video_loss(y, copied));
    Ok(seg + video)
}

/// Builds `L_s` from ground truth and `L_u` from kept pseudo labels, each
/// averaged over the pairs that contribute. `preds` holds the student's
/// outputs for every pair involved. Pseudo boxes act as targets with
/// `p* = 1`; weak negatives contribute only the video term with `y* = 0`.
pub fn assemble_semi_batch(
    labeled: &[PairAnnotation],
    pseudo: &[PseudoLabel],
    preds: &[PairPrediction],
    lambda: f64,
    lambda_u: f64,
) -> Result<SemiBatch> {
    if !(lambda_u >= 0.0 && lambda_u.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "lambda_u = {lambda_u} must be >= 0"
        )));
    }
    let by_pair: HashMap<(&str, &str), &PairPrediction> = preds
        .iter()
        .map(|p| ((p.query_id.as_str(), p.ref_id.as_str()), p))
        .collect();
    let lookup = |q: &str, r: &str| {
        by_pair
            .get(&(q, r))
            .copied()
            .ok_or_else(|| Error::InvalidParam(format!("no prediction for pair {q}/{r}")))
    };

    let sup: Vec<f64> = par::map(labeled, |a| {
        let pred = lookup(a.query_id(), a.ref_id())?;
        pair_loss(pred, a.gt_boxes(), a.is_copied(), true, lambda)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let kept: Vec<&PseudoLabel> = pseudo.iter().filter(|p| p.kept).collect();
    let unsup: Vec<f64> = par::map(&kept, |p| {
        p.check()?;
        let pred = lookup(&p.query_id, &p.ref_id)?;
        match p.source {
            PseudoSource::WeakNegative => pair_loss(pred, &[], false, false, lambda),
            _ => pair_loss(pred, &p.boxes, true, true, lambda),
        }
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let (supervised, unsupervised) = (mean(&sup), mean(&unsup));
    Ok(SemiBatch {
        supervised,
        unsupervised,
        combined: semi_total(supervised, unsupervised, lambda_u),
        labeled_pairs: sup.len(),
        pseudo_pairs: unsup.len(),
    })
}

fn to_record(p: &PseudoLabel) -> PairRecord {
    let mut rec = PairRecord {
        query_id: p.query_id.clone(),
        ref_id: p.ref_id.clone(),
        source: Some(p.source.name().to_string()),
        kept: Some(p.kept),
        ..Default::default()
    };
    rec.set_boxes(&p.boxes, true);
    rec
}

fn from_record(line: usize, rec: &PairRecord) -> Result<PseudoLabel> {
    let wrap = |e: Error| match e {
        Error::MalformedJson { .. } | Error::InvariantViolation { .. } => e,
        other => Error::InvariantViolation {
            line,
            reason: other.to_string(),
        },
    };
    let label = PseudoLabel {
        query_id: rec.query_id.clone(),
        ref_id: rec.ref_id.clone(),
        boxes: rec.boxes().map_err(wrap)?,
        source: rec
            .source
            .as_deref()
            .unwrap_or("unlabeled")
            .parse()
            .map_err(wrap)?,
        kept: rec.kept.unwrap_or(true),
    };
    label.check().map_err(wrap)?;
    Ok(label)
}

pub fn write_pseudo_labels(path: impl AsRef<Path>, labels: &[PseudoLabel]) -> Result<()> {
    write_records(path.as_ref(), labels.iter().map(to_record))
}

pub fn read_pseudo_labels(path: impl AsRef<Path>) -> Result<Vec<PseudoLabel>> {
    read_records(path.as_ref())?
        .iter()
        .map(|(line, rec)| from_record(*line, rec))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(q0: f64, r0: f64, len: f64, score: f64) -> SegmentBox {
        SegmentBox::new(q0, q0 + len, r0, r0 + len, score).unwrap()
    }

    fn det(boxes: Vec<SegmentBox>) -> PairPrediction {
        PairPrediction::new("q", "r", boxes)
    }

    #[test]
    fn threshold_examples() {
        let d = [det(vec![b(0.0, 0.0, 5.0, 0.9), b(10.0, 10.0, 5.0, 0.3)])];
        let p = make_pseudo_labels(&d, 0.6).unwrap();
        assert_eq!(p[0].boxes.len(), 1);
        assert!(p[0].kept);
        assert_eq!(make_pseudo_labels(&d, 0.0).unwrap()[0].boxes.len(), 2);
        let p = make_pseudo_labels(&d, 1.0).unwrap();
        assert!(p[0].boxes.is_empty() && !p[0].kept);
        let d1 = [det(vec![b(0.0, 0.0, 5.0, 1.0)])];
        assert_eq!(make_pseudo_labels(&d1, 1.0).unwrap()[0].boxes.len(), 1);
        assert!(make_pseudo_labels(&d, 1.01).is_err());
    }

    #[test]
    fn filter_rules() {
        let three = PseudoLabel {
            query_id: "q".into(),
            ref_id: "r".into(),
            boxes: vec![b(0.0, 0.0, 2.0, 0.9); 3],
            source: PseudoSource::Unlabeled,
            kept: true,
        };
        let neg = weak_label_filter(three.clone(), false);
        assert!(neg.boxes.is_empty() && neg.kept);
        assert_eq!(neg.source, PseudoSource::WeakNegative);

        let empty = PseudoLabel {
            boxes: vec![],
            kept: false,
            ..three.clone()
        };
        assert!(!weak_label_filter(empty, true).kept);

        let two = PseudoLabel {
            boxes: vec![b(0.0, 0.0, 2.0, 0.9); 2],
            ..three
        };
        let pos = weak_label_filter(two.clone(), true);
        assert_eq!(pos.boxes, two.boxes);
        assert!(pos.kept);
        assert_eq!(pos.source, PseudoSource::WeakPositive);
    }

    #[test]
    fn semi_batch_examples() {
        let ann = PairAnnotation::new(
            "a",
            "b",
            vec![SegmentBox::gt(0.0, 10.0, 0.0, 10.0).unwrap()],
            Some(true),
            vec![],
        )
        .unwrap();
        let mut student = PairPrediction::new("a", "b", vec![b(1.0, 1.0, 10.0, 0.8)]);
        student.video_prob = Some(0.7);
        let self_consistent = PseudoLabel {
            query_id: "u".into(),
            ref_id: "v".into(),
            boxes: vec![b(3.0, 4.0, 6.0, 1.0)],
            source: PseudoSource::Unlabeled,
            kept: true,
        };
        let mut mirror = PairPrediction::new("u", "v", self_consistent.boxes.clone());
        mirror.video_prob = Some(1.0);
        let preds = [student.clone(), mirror];

        let none = assemble_semi_batch(std::slice::from_ref(&ann), &[], &preds, 5.0, 0.5).unwrap();
        assert_eq!(none.combined, none.supervised);
        assert_eq!(none.pseudo_pairs, 0);

        // compose the loss oracle by hand
        let i = iou(&student.boxes[0], &ann.gt_boxes()[0]);
        let expected = -(0.8f64).ln() + 5.0 * (1.0 - i) - (0.7f64).ln();
        assert!((none.supervised - expected).abs() < 1e-12);

        let with = assemble_semi_batch(
            std::slice::from_ref(&ann),
            std::slice::from_ref(&self_consistent),
            &preds,
            5.0,
            0.5,
        )
        .unwrap();
        assert!(with.unsupervised < 1e-6);
        assert!((with.combined - with.supervised).abs() < 1e-6);

        let zero = assemble_semi_batch(
            std::slice::from_ref(&ann),
            &[self_consistent],
            &preds,
            5.0,
            0.0,
        )
        .unwrap();
        assert_eq!(zero.combined, zero.supervised);
    }

    #[test]
    fn weak_negative_uses_video_term_only() {
        let neg = PseudoLabel {
            query_id: "u".into(),
            ref_id: "v".into(),
            boxes: vec![],
            source: PseudoSource::WeakNegative,
            kept: true,
        };
        let mut pred = PairPrediction::new("u", "v", vec![b(0.0, 0.0, 3.0, 0.9)]);
        pred.video_prob = Some(0.25);
        let batch = assemble_semi_batch(&[], &[neg], &[pred], 5.0, 0.5).unwrap();
        assert!((batch.unsupervised + (0.75f64).ln()).abs() < 1e-12);
        assert!((batch.combined - 0.5 * batch.unsupervised).abs() < 1e-12);
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let ann = PairAnnotation::new("a", "b", vec![], Some(false), vec![]).unwrap();
        assert!(assemble_semi_batch(&[ann], &[], &[], 5.0, 0.5).is_err());
    }

    #[test]
    fn precision_counts_boxes_on_copies() {
        let ann = PairAnnotation::new(
            "q",
            "r",
            vec![SegmentBox::gt(0.0, 10.0, 0.0, 10.0).unwrap()],
            Some(true),
            vec![],
        )
        .unwrap();
        let p = PseudoLabel {
            query_id: "q".into(),
            ref_id: "r".into(),
            boxes: vec![b(0.0, 0.0, 10.0, 0.9), b(50.0, 50.0, 10.0, 0.9)],
            source: PseudoSource::Unlabeled,
            kept: true,
        };
        assert_eq!(
            pseudo_box_precision(std::slice::from_ref(&p), std::slice::from_ref(&ann)),
            Some(0.5)
        );
        let dropped = PseudoLabel { kept: false, ..p };
        assert_eq!(pseudo_box_precision(&[dropped], &[ann]), None);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pseudo.jsonl");
        let labels = vec![
            PseudoLabel {
                query_id: "q".into(),
                ref_id: "r".into(),
                boxes: vec![b(1.5, 2.5, 4.0, 0.75)],
                source: PseudoSource::WeakPositive,
                kept: true,
            },
            PseudoLabel {
                query_id: "q2".into(),
                ref_id: "r2".into(),
                boxes: vec![],
                source: PseudoSource::WeakNegative,
                kept: true,
            },
        ];
        write_pseudo_labels(&path, &labels).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"source\":\"weak_positive\""));
        assert_eq!(read_pseudo_labels(&path).unwrap(), labels);

        std::fs::write(
            &path,
            "{\"query_id\":\"q\",\"ref_id\":\"r\",\"segments\":[[0,1,0,1]],\"source\":\"weak_negative\"}\n",
        )
        .unwrap();
        assert!(matches!(
            read_pseudo_labels(&path),
            Err(Error::InvariantViolation { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn raising_theta_never_adds_boxes(
            scores in proptest::collection::vec(0.0f64..=1.0, 0..12),
            t1 in 0.0f64..=1.0,
            t2 in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let d = [det(scores.iter().enumerate().map(|(i, &s)| b(i as f64 * 3.0, 0.0, 2.0, s)).collect())];
            let n_lo = kept_box_count(&make_pseudo_labels(&d, lo).unwrap());
            let n_hi = kept_box_count(&make_pseudo_labels(&d, hi).unwrap());
            prop_assert!(n_hi <= n_lo);
        }
    }
}
