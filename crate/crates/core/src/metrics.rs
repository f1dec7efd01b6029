//! Segment-level and video-level evaluation.
//!
//! A pair's predicted and ground-truth boxes are treated as two regions of
//! the query x reference time plane (unions of rectangles). Recall is the
//! covered fraction of the ground-truth region, precision the fraction of
//! the predicted region lying on ground truth. Dataset scores are
//! micro-averaged over areas; macro (per-pair) averages are reported too.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::annotations::{PairAnnotation, PairPrediction, SegmentBox};
use crate::error::{Error, Result};
use crate::par;

/// Areas of the union regions of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairScores {
    pub overlap: f64,
    pub pred_area: f64,
    pub gt_area: f64,
}

impl PairScores {
    /// `None` when the pair has no ground truth but does have predictions.
    pub fn recall(&self) -> Option<f64> {
        match (self.gt_area > 0.0, self.pred_area > 0.0) {
            (true, _) => Some(self.overlap / self.gt_area),
            (false, false) => Some(1.0),
            (false, true) => None,
        }
    }

    /// `None` when the pair has ground truth but no predictions.
    pub fn precision(&self) -> Option<f64> {
        match (self.pred_area > 0.0, self.gt_area > 0.0) {
            (true, _) => Some(self.overlap / self.pred_area),
            (false, false) => Some(1.0),
            (false, true) => None,
        }
    }
}

/// Areas of `U_p`, `U_g` and `U_p ∩ U_g`, computed exactly on the grid
/// induced by all box edges.
pub fn region_areas(preds: &[SegmentBox], gts: &[SegmentBox]) -> PairScores {
    let mut xs: Vec<f64> = preds
        .iter()
        .chain(gts)
        .flat_map(|b| [b.ts_q(), b.te_q()])
        .collect();
    let mut ys: Vec<f64> = preds
        .iter()
        .chain(gts)
        .flat_map(|b| [b.ts_r(), b.te_r()])
        .collect();
    for v in [&mut xs, &mut ys] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    if xs.len() < 2 || ys.len() < 2 {
        return PairScores {
            overlap: 0.0,
            pred_area: 0.0,
            gt_area: 0.0,
        };
    }
    let (nx, ny) = (xs.len() - 1, ys.len() - 1);
    let find = |v: &[f64], t: f64| {
        v.binary_search_by(|p| p.total_cmp(&t))
            .expect("edge is a grid line")
    };
    let rasterize = |boxes: &[SegmentBox]| {
        let mut cover = vec![false; nx * ny];
        for b in boxes {
            let (x0, x1) = (find(&xs, b.ts_q()), find(&xs, b.te_q()));
            let (y0, y1) = (find(&ys, b.ts_r()), find(&ys, b.te_r()));
            for i in x0..x1 {
                cover[i * ny + y0..i * ny + y1].fill(true);
            }
        }
        cover
    };
    let p = rasterize(preds);
    let g = rasterize(gts);
    let (mut overlap, mut pred_area, mut gt_area) = (0.0, 0.0, 0.0);
    for i in 0..nx {
        let w = xs[i + 1] - xs[i];
        for j in 0..ny {
            let a = w * (ys[j + 1] - ys[j]);
            let k = i * ny + j;
            if p[k] {
                pred_area += a;
            }
            if g[k] {
                gt_area += a;
            }
            if p[k] && g[k] {
                overlap += a;
            }
        }
    }
    PairScores {
        overlap,
        pred_area,
        gt_area,
    }
}

/// Recall and precision of one pair; see [`PairScores`] for the conventions.
pub fn pair_segment_metrics(
    preds: &[SegmentBox],
    gts: &[SegmentBox],
) -> (Option<f64>, Option<f64>) {
    let s = region_areas(preds, gts);
    (s.recall(), s.precision())
}

pub fn fscore(recall: f64, precision: f64) -> f64 {
    if recall + precision > 0.0 {
        2.0 * recall * precision / (recall + precision)
    } else {
        0.0
    }
}

/// Per-pair input to [`dataset_metrics`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub scores: PairScores,
    pub groups: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupScores {
    pub recall: f64,
    pub precision: f64,
    pub fscore: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub recall: f64,
    pub precision: f64,
    pub fscore: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub macro_fscore: f64,
    /// False rejection rate; `None` without positive pairs or video decisions.
    pub frr: Option<f64>,
    /// False acceptance rate; `None` without negative pairs or video decisions.
    pub far: Option<f64>,
    pub per_group: BTreeMap<String, GroupScores>,
    pub pair_count: usize,
    pub positive_pair_count: usize,
}

/// Micro-averaged R/P/F over summed areas. Vacuous ratios (no ground truth
/// or no predictions anywhere) count as 1.
fn micro<'a>(scores: impl IntoIterator<Item = &'a PairScores>) -> (f64, f64, f64) {
    let (mut o, mut p, mut g) = (0.0, 0.0, 0.0);
    for s in scores {
        o += s.overlap;
        p += s.pred_area;
        g += s.gt_area;
    }
    let recall = if g > 0.0 { o / g } else { 1.0 };
    let precision = if p > 0.0 { o / p } else { 1.0 };
    (recall, precision, fscore(recall, precision))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn dataset_metrics(results: &[PairResult]) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (recall, precision, f) = micro(results.iter().map(|r| &r.scores));
    let macro_recall = mean(results.iter().filter_map(|r| r.scores.recall()));
    let macro_precision = mean(results.iter().filter_map(|r| r.scores.precision()));

    let mut groups: BTreeMap<String, Vec<&PairScores>> = BTreeMap::new();
    for r in results {
        for g in &r.groups {
            groups.entry(g.clone()).or_default().push(&r.scores);
        }
    }
    let per_group = groups
        .into_iter()
        .map(|(name, scores)| {
            let pairs = scores.len();
            let (recall, precision, fscore) = micro(scores);
            (
                name,
                GroupScores {
                    recall,
                    precision,
                    fscore,
                    pairs,
                },
            )
        })
        .collect();
    Ok(MetricsReport {
        recall,
        precision,
        fscore: f,
        macro_recall,
        macro_precision,
        macro_fscore: fscore(macro_recall, macro_precision),
        frr: None,
        far: None,
        per_group,
        pair_count: results.len(),
        positive_pair_count: results.iter().filter(|r| r.scores.gt_area > 0.0).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VideoLevel {
    pub frr: Option<f64>,
    pub far: Option<f64>,
}

/// FRR over truly copied pairs and FAR over uncopied pairs. A rate is
/// `None` when its denominator class is absent.
pub fn video_level_metrics(decisions: &[bool], labels: &[bool]) -> Result<VideoLevel> {
    if decisions.len() != labels.len() {
        return Err(Error::LengthMismatch(decisions.len(), labels.len()));
    }
    let (mut pos, mut neg, mut rejected, mut accepted) = (0usize, 0usize, 0usize, 0usize);
    for (&d, &y) in decisions.iter().zip(labels) {
        if y {
            pos += 1;
            rejected += usize::from(!d);
        } else {
            neg += 1;
            accepted += usize::from(d);
        }
    }
    Ok(VideoLevel {
        frr: (pos > 0).then(|| rejected as f64 / pos as f64),
        far: (neg > 0).then(|| accepted as f64 / neg as f64),
    })
}

/// How a pair is declared copied at video level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecisionRule {
    /// At least one box was emitted.
    #[default]
    Boxes,
    /// The classification head gave at least 0.5.
    Head,
    /// Either of the above.
    Either,
}

impl std::str::FromStr for DecisionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boxes" => Ok(Self::Boxes),
            "head" => Ok(Self::Head),
            "either" => Ok(Self::Either),
            other => Err(Error::InvalidParam(format!(
                "unknown decision rule {other:?}"
            ))),
        }
    }
}

pub fn decide(pred: &PairPrediction, rule: DecisionRule) -> bool {
    let boxes = !pred.boxes.is_empty();
    let head = pred.video_prob.is_some_and(|p| p >= 0.5);
    match rule {
        DecisionRule::Boxes => boxes,
        DecisionRule::Head => head,
        DecisionRule::Either => boxes || head,
    }
}

/// Duration-ratio bucket tag (20% bins) from the share of the query covered by ground truth.
pub fn duration_bucket(ann: &PairAnnotation) -> Option<String> {
    let (len_q, _) = ann.lengths()?;
    if ann.gt_boxes().is_empty() {
        return None;
    }
    let mut spans: Vec<(f64, f64)> = ann
        .gt_boxes()
        .iter()
        .map(|b| (b.ts_q(), b.te_q()))
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut covered = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (s, e) in spans {
        cur = match cur {
            Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                covered += ce - cs;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    if let Some((cs, ce)) = cur {
        covered += ce - cs;
    }
    let ratio = (covered / len_q).clamp(0.0, 1.0);
    let bin = ((ratio * 5.0).floor() as usize).min(4);
    Some(format!("ratio:{}-{}%", bin * 20, bin * 20 + 20))
}

/// Scores predictions against annotations. Pairs are matched by
/// `(query_id, ref_id)`; an annotated pair without predictions counts as
/// predicting nothing. Predictions for unannotated pairs are ignored.
pub fn evaluate(
    preds: &[PairPrediction],
    anns: &[PairAnnotation],
    rule: DecisionRule,
) -> Result<MetricsReport> {
    let by_pair: HashMap<(&str, &str), &PairPrediction> = preds
        .iter()
        .map(|p| ((p.query_id.as_str(), p.ref_id.as_str()), p))
        .collect();
    let results = par::map(anns, |a| {
        let pred = by_pair.get(&(a.query_id(), a.ref_id())).copied();
        let boxes = pred.map_or(&[][..], |p| p.boxes.as_slice());
        let mut groups = a.groups().to_vec();
        groups.extend(duration_bucket(a));
        PairResult {
            scores: region_areas(boxes, a.gt_boxes()),
            groups,
        }
    });
    let mut report = dataset_metrics(&results)?;
    let decisions: Vec<bool> = anns
        .iter()
        .map(|a| {
            by_pair
                .get(&(a.query_id(), a.ref_id()))
                .is_some_and(|p| decide(p, rule))
        })
        .collect();
    let labels: Vec<bool> = anns.iter().map(PairAnnotation::is_copied).collect();
    let video = video_level_metrics(&decisions, &labels)?;
    report.frr = video.frr;
    report.far = video.far;
    report.positive_pair_count = labels.iter().filter(|&&y| y).count();
    Ok(report)
}

impl MetricsReport {
    /// Aligned plain-text table, percentages for R/P/F.
    pub fn to_table(&self) -> String {
        let pct = |v: f64| format!("{:6.2}", 100.0 * v);
        let rate = |v: Option<f64>| v.map_or_else(|| "     -".to_string(), |x| format!("{x:6.4}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>7} {:>7} {:>7} {:>6}",
            "scope", "R%", "P%", "F%", "pairs"
        );
        let _ = writeln!(
            out,
            "{:<24} {:>7} {:>7} {:>7} {:>6}",
            "micro",
            pct(self.recall),
            pct(self.precision),
            pct(self.fscore),
            self.pair_count
        );
        let _ = writeln!(
            out,
            "{:<24} {:>7} {:>7} {:>7} {:>6}",
            "macro",
            pct(self.macro_recall),
            pct(self.macro_precision),
            pct(self.macro_fscore),
            self.pair_count
        );
        for (name, g) in &self.per_group {
            let _ = writeln!(
                out,
                "{:<24} {:>7} {:>7} {:>7} {:>6}",
                name,
                pct(g.recall),
                pct(g.precision),
                pct(g.fscore),
                g.pairs
            );
        }
        let _ = writeln!(
            out,
            "video-level FRR {}  FAR {}  (positives {} / {})",
            rate(self.frr),
            rate(self.far),
            self.positive_pair_count,
            self.pair_count
        );
        out
    }
}
