use crate::annotations::SegmentBox;
use crate::losses::iou;

use super::sort_by_score;

/// Greedy non-maximum suppression: keeps boxes in descending score order,
/// dropping any whose IoU with an already kept box exceeds `iou_thresh`.
pub fn nms(boxes: &[SegmentBox], iou_thresh: f64) -> Vec<SegmentBox> {
    let mut sorted = boxes.to_vec();
    sort_by_score(&mut sorted);
    let mut kept: Vec<SegmentBox> = Vec::with_capacity(sorted.len());
    for b in sorted {
        if kept.iter().all(|k| iou(k, &b) <= iou_thresh) {
            kept.push(b);
        }
    }
    kept
}
