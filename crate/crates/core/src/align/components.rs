use std::collections::VecDeque;

use ndarray::Array2;

use crate::annotations::SegmentBox;
use crate::error::{Error, Result};
use crate::simgen::{SimKind, SimMatrix};

use super::{cells_to_box, nms, normalized, DetectorParams};

/// Grows `mask` by `ry` rows and `rx` columns (square structuring element).
fn dilate(mask: &Array2<bool>, ry: usize, rx: usize) -> Array2<bool> {
    if ry == 0 && rx == 0 {
        return mask.clone();
    }
    let (rows, cols) = mask.dim();
    let mut horiz = Array2::from_elem((rows, cols), false);
    for m in 0..rows {
        for n in 0..cols {
            if mask[[m, n]] {
                for k in n.saturating_sub(rx)..=(n + rx).min(cols - 1) {
                    horiz[[m, k]] = true;
                }
            }
        }
    }
    let mut out = Array2::from_elem((rows, cols), false);
    for m in 0..rows {
        for n in 0..cols {
            if horiz[[m, n]] {
                for k in m.saturating_sub(ry)..=(m + ry).min(rows - 1) {
                    out[[k, n]] = true;
                }
            }
        }
    }
    out
}

/// 8-connected components of `mask`, as lists of cells in discovery order.
pub(crate) fn label_components(mask: &Array2<bool>) -> Vec<Vec<(usize, usize)>> {
    let (rows, cols) = mask.dim();
    let mut seen = Array2::from_elem((rows, cols), false);
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in mask.indexed_iter().filter(|(_, &on)| on).map(|(c, _)| c) {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut cells = Vec::new();
        while let Some((m, n)) = queue.pop_front() {
            cells.push((m, n));
            for dm in -1isize..=1 {
                for dn in -1isize..=1 {
                    let (pm, pn) = (m as isize + dm, n as isize + dn);
                    if pm < 0 || pn < 0 || pm >= rows as isize || pn >= cols as isize {
                        continue;
                    }
                    let c = (pm as usize, pn as usize);
                    if mask[c] && !seen[c] {
                        seen[c] = true;
                        queue.push_back(c);
                    }
                }
            }
        }
        comps.push(cells);
    }
    comps
}

/// Connected-component box detector on a dual-softmax matrix.
///
/// The matrix is min-max normalized and binarized at `t_bin`. Foreground
/// cells closer than `cc_link` seconds are grouped by labeling the
/// 8-connected components of a dilated mask; each group's box and score
/// (mean normalized value) come from its undilated foreground cells. Boxes
/// smaller than `a_min` cells or scoring below `s_min` are dropped and the
/// rest go through non-maximum suppression.
pub fn cc_detect(s: &SimMatrix, p: &DetectorParams) -> Result<Vec<SegmentBox>> {
    if s.kind() != SimKind::DualSoftmax {
        return Err(Error::WrongKind {
            expected: SimKind::DualSoftmax.name(),
            found: s.kind().name(),
        });
    }
    let v = normalized(s);
    let mask = v.mapv(|x| x >= p.t_bin);
    let ry = (p.cc_link / (2.0 * s.scale_q())).floor() as usize;
    let rx = (p.cc_link / (2.0 * s.scale_r())).floor() as usize;
    let grown = dilate(&mask, ry, rx);
    let mut boxes = Vec::new();
    for comp in label_components(&grown) {
        let cells: Vec<_> = comp.into_iter().filter(|&c| mask[c]).collect();
        if cells.is_empty() {
            continue;
        }
        let score = cells.iter().map(|&c| v[c]).sum::<f64>() / cells.len() as f64;
        let h =
            cells.iter().map(|c| c.0).max().unwrap() - cells.iter().map(|c| c.0).min().unwrap() + 1;
        let w =
            cells.iter().map(|c| c.1).max().unwrap() - cells.iter().map(|c| c.1).min().unwrap() + 1;
        if h * w < p.a_min || score < p.s_min {
            continue;
        }
        boxes.push(cells_to_box(&cells, s, score));
    }
    Ok(nms(&boxes, p.nms_iou))
}
