use std::collections::BTreeMap;

use crate::annotations::SegmentBox;
use crate::simgen::SimMatrix;

use super::{cells_to_box, normalized, sort_by_score, DetectorParams};

/// Temporal Hough voting: matched cells vote for their time offset
/// `n - m`; every well-supported offset bin is split into runs along the
/// query axis and each run becomes a box.
pub fn hough_voting(s: &SimMatrix, p: &DetectorParams) -> Vec<SegmentBox> {
    let v = normalized(s);
    let width = p.bin_width as i64;
    let mut bins: BTreeMap<i64, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for ((m, n), &val) in v.indexed_iter() {
        if val >= p.t_bin {
            let offset = n as i64 - m as i64;
            bins.entry(offset.div_euclid(width))
                .or_default()
                .push((m, n, val));
        }
    }
    let mut out = Vec::new();
    for cells in bins.into_values() {
        if cells.len() < p.v_min {
            continue;
        }
        // indexed_iter is row-major, so cells are already sorted by (m, n)
        let mut run: Vec<(usize, usize, f64)> = Vec::new();
        let mut flush = |run: &mut Vec<(usize, usize, f64)>| {
            if run.len() >= p.l_min {
                let coords: Vec<_> = run.iter().map(|c| (c.0, c.1)).collect();
                let score = run.iter().map(|c| c.2).sum::<f64>() / run.len() as f64;
                out.push(cells_to_box(&coords, s, score));
            }
            run.clear();
        };
        for cell in cells {
            if let Some(last) = run.last() {
                if cell.0 - last.0 > p.gap {
                    flush(&mut run);
                }
            }
            run.push(cell);
        }
        flush(&mut run);
    }
    sort_by_score(&mut out);
    out
}
