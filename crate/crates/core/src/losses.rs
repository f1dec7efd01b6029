//! Training objectives as pure scalar functions, with hand-written
//! gradients for the two differentiable primitives (BCE and IoU loss).

use crate::annotations::SegmentBox;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;
/// Regression weight of the segment loss.
pub const DEFAULT_LAMBDA: f64 = 5.0;
/// Weight of the unsupervised term in the semi-supervised total.
pub const DEFAULT_LAMBDA_U: f64 = 0.5;
/// Minimum IoU for a prediction to be assigned to a ground-truth segment.
pub const MATCH_IOU: f64 = 0.1;

/// Intersection of two `[start, end)` intervals, clamped at zero.
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// IoU of two boxes given as `[ts_q, te_q, ts_r, te_r]`.
pub fn iou_coords(a: [f64; 4], b: [f64; 4]) -> f64 {
    let inter = overlap(a[0], a[1], b[0], b[1]) * overlap(a[2], a[3], b[2], b[3]);
    let area = |c: [f64; 4]| (c[1] - c[0]) * (c[3] - c[2]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Rectangle IoU on the query x reference time plane.
pub fn iou(a: &SegmentBox, b: &SegmentBox) -> f64 {
    iou_coords(a.coords(), b.coords())
}

/// Gradient of `1 - IoU(pred, target)` with respect to the four coordinates
/// of `pred`. Valid away from ties between corresponding edges.
pub fn iou_loss_grad(pred: [f64; 4], target: [f64; 4]) -> [f64; 4] {
    let iw = overlap(pred[0], pred[1], target[0], target[1]);
    let ih = overlap(pred[2], pred[3], target[2], target[3]);
    let inter = iw * ih;
    let (pw, ph) = (pred[1] - pred[0], pred[3] - pred[2]);
    let union = pw * ph + (target[1] - target[0]) * (target[3] - target[2]) - inter;

    // d(overlap)/d(start), d(overlap)/d(end) for one axis.
    let axis = |s: f64, e: f64, ts: f64, te: f64, len: f64| -> (f64, f64) {
        if len <= 0.0 {
            return (0.0, 0.0);
        }
        let ds = if s > ts { -1.0 } else { 0.0 };
        let de = if e < te { 1.0 } else { 0.0 };
        (ds, de)
    };
    let (dsq, deq) = axis(pred[0], pred[1], target[0], target[1], iw);
    let (dsr, der) = axis(pred[2], pred[3], target[2], target[3], ih);
    let d_inter = [dsq * ih, deq * ih, dsr * iw, der * iw];
    let d_area = [-ph, ph, -pw, pw];
    let mut g = [0.0; 4];
    for k in 0..4 {
        let d_union = d_area[k] - d_inter[k];
        let d_iou = (d_inter[k] * union - inter * d_union) / (union * union);
        g[k] = -d_iou;
    }
    g
}

/// Binary cross-entropy of probability `p` against label `y`.
pub fn bce(p: f64, y: bool) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `d bce / d p` at the clamped probability.
pub fn bce_grad(p: f64, y: bool) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    if y {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// Supervision for one prediction: positive with a target box, or negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Positive(SegmentBox),
    Negative,
}

/// `sum_i [bce(p_i, p*_i) + lambda (1 - IoU(t_i, t*_i)) [p*_i = 1]]`, where
/// `p_i` is each prediction's score.
pub fn segment_loss(preds: &[SegmentBox], targets: &[Target], lambda: f64) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch(preds.len(), targets.len()));
    }
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| match t {
            Target::Positive(gt) => bce(p.score(), true) + lambda * (1.0 - iou(p, gt)),
            Target::Negative => bce(p.score(), false),
        })
        .sum())
}

/// Greedy max-IoU assignment: pairs are visited by descending IoU and each
/// ground truth takes at most one prediction with IoU at least
/// [`MATCH_IOU`]. Unassigned predictions become negatives.
pub fn assign_targets(preds: &[SegmentBox], gts: &[SegmentBox]) -> Vec<Target> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let v = iou(p, g);
            if v >= MATCH_IOU {
                candidates.push((v, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut targets = vec![Target::Negative; preds.len()];
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    for (_, i, j) in candidates {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            targets[i] = Target::Positive(gts[j]);
        }
    }
    targets
}

/// Video-level classification loss.
pub fn video_loss(y: f64, copied: bool) -> f64 {
    bce(y, copied)
}

pub fn total_loss(seg: f64, video: f64) -> f64 {
    seg + video
}

pub fn semi_total(supervised: f64, unsupervised: f64, lambda_u: f64) -> f64 {
    supervised + lambda_u * unsupervised
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn b(c: [f64; 4], s: f64) -> SegmentBox {
        SegmentBox::from_coords(c, s).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = b([0.0, 2.0, 0.0, 2.0], 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b([5.0, 6.0, 0.0, 2.0], 1.0)), 0.0);
        assert_abs_diff_eq!(
            iou(&a, &b([1.0, 3.0, 0.0, 2.0], 1.0)),
            1.0 / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn bce_cases() {
        assert!(bce(1.0 - EPS, true) < 1e-6);
        assert_abs_diff_eq!(bce(0.5, true), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(bce(0.5, false), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(bce(EPS, true), 16.118_095_650_958_32, epsilon = 1e-9);
        assert_abs_diff_eq!(bce(0.0, true), bce(EPS, true));
    }

    #[test]
    fn segment_loss_cases() {
        assert_eq!(segment_loss(&[], &[], 5.0).unwrap(), 0.0);
        let gt = b([0.0, 2.0, 0.0, 2.0], 1.0);
        let perfect = b([0.0, 2.0, 0.0, 2.0], 0.999_999);
        assert!(segment_loss(&[perfect], &[Target::Positive(gt)], 5.0).unwrap() < 1e-5);
        let half = b([1.0, 3.0, 0.0, 2.0], 0.5);
        let loss = segment_loss(&[half], &[Target::Positive(gt)], 5.0).unwrap();
        assert_abs_diff_eq!(
            loss,
            std::f64::consts::LN_2 + 5.0 * (2.0 / 3.0),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(loss, 4.0265, epsilon = 1e-4);
        assert!(matches!(
            segment_loss(&[half], &[], 5.0),
            Err(Error::LengthMismatch(1, 0))
        ));
    }

    #[test]
    fn weighted_sums() {
        assert_eq!(total_loss(0.0, 0.0), 0.0);
        assert_eq!(semi_total(1.3, 99.0, 0.0), 1.3);
        assert_abs_diff_eq!(semi_total(1.0, 0.4, 0.5), 1.2, epsilon = 1e-15);
    }

    #[test]
    fn assignment_is_one_to_one() {
        let gts = [
            b([0.0, 10.0, 0.0, 10.0], 1.0),
            b([20.0, 30.0, 20.0, 30.0], 1.0),
        ];
        let preds = [
            b([1.0, 10.0, 0.0, 10.0], 0.9),
            b([0.0, 9.0, 0.0, 10.0], 0.8),
            b([21.0, 30.0, 20.0, 29.0], 0.7),
            b([50.0, 60.0, 50.0, 60.0], 0.6),
        ];
        let t = assign_targets(&preds, &gts);
        assert_eq!(t[0], Target::Positive(gts[0]));
        assert_eq!(t[1], Target::Negative);
        assert_eq!(t[2], Target::Positive(gts[1]));
        assert_eq!(t[3], Target::Negative);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(
            a in (0.0..50.0f64, 0.1..30.0f64, 0.0..50.0f64, 0.1..30.0f64),
            c in (0.0..50.0f64, 0.1..30.0f64, 0.0..50.0f64, 0.1..30.0f64),
        ) {
            let x = [a.0, a.0 + a.1, a.2, a.2 + a.3];
            let y = [c.0, c.0 + c.1, c.2, c.2 + c.3];
            let v = iou_coords(x, y);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou_coords(y, x));
            prop_assert!((iou_coords(x, x) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn segment_loss_nonnegative(
            s in 0.0..=1.0f64,
            positive in any::<bool>(),
            a in (0.0..50.0f64, 0.1..30.0f64, 0.0..50.0f64, 0.1..30.0f64),
        ) {
            let p = b([a.0, a.0 + a.1, a.2, a.2 + a.3], s);
            let t = if positive { Target::Positive(b([1.0, 5.0, 1.0, 5.0], 1.0)) } else { Target::Negative };
            prop_assert!(segment_loss(&[p], &[t], DEFAULT_LAMBDA).unwrap() >= 0.0);
        }
    }
}
