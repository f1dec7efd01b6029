use ndarray::Array2;

use crate::annotations::SegmentBox;
use crate::simgen::SimMatrix;

use super::{cells_to_box, normalized, sort_by_score, DetectorParams};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Step {
    Start,
    Diag,
    Up,
    Left,
}

/// Subsequence DTW on the cost `1 - S` of the normalized matrix.
///
/// The accumulated cost is taken relative to the acceptance level
/// `1 - s_min`, so a warping path may start at any cell where carrying a
/// predecessor would not lower its cost:
///
/// `D(m, n) = c(m, n) - (1 - s_min) + min(0, D(m-1, n-1), D(m-1, n), D(m, n-1))`.
///
/// A negative `D` is exactly a path whose mean cost is below `1 - s_min`.
/// The cheapest endpoint is traced back to its start, emitted when the path
/// has at least `l_min` cells (score `1 - mean cost`), its bounding
/// rectangle is blocked, and the table is rebuilt until no negative endpoint
/// is left.
pub fn dtw_align(s: &SimMatrix, p: &DetectorParams) -> Vec<SegmentBox> {
    let v = normalized(s);
    let (rows, cols) = v.dim();
    let accept = 1.0 - p.s_min;
    let mut blocked = Array2::from_elem((rows, cols), false);
    let mut acc = Array2::<f64>::zeros((rows, cols));
    let mut step = Array2::from_elem((rows, cols), Step::Start);
    let mut out = Vec::new();

    loop {
        let mut end: Option<(usize, usize)> = None;
        for m in 0..rows {
            for n in 0..cols {
                if blocked[[m, n]] {
                    acc[[m, n]] = f64::INFINITY;
                    continue;
                }
                let mut best = 0.0;
                let mut from = Step::Start;
                if m > 0 && n > 0 && acc[[m - 1, n - 1]] < best {
                    best = acc[[m - 1, n - 1]];
                    from = Step::Diag;
                }
                if m > 0 && acc[[m - 1, n]] < best {
                    best = acc[[m - 1, n]];
                    from = Step::Up;
                }
                if n > 0 && acc[[m, n - 1]] < best {
                    best = acc[[m, n - 1]];
                    from = Step::Left;
                }
                acc[[m, n]] = (1.0 - v[[m, n]]) - accept + best;
                step[[m, n]] = from;
                if end.is_none_or(|e| acc[[m, n]] < acc[e]) {
                    end = Some((m, n));
                }
            }
        }
        let Some(end) = end else { break };
        if !(acc[end] < 0.0) {
            break;
        }
        let mut path = vec![end];
        let (mut m, mut n) = end;
        loop {
            match step[[m, n]] {
                Step::Start => break,
                Step::Diag => {
                    m -= 1;
                    n -= 1;
                }
                Step::Up => m -= 1,
                Step::Left => n -= 1,
            }
            path.push((m, n));
        }
        let (m0, m1) = (path.last().unwrap().0, end.0);
        let (n0, n1) = (path.last().unwrap().1, end.1);
        blocked.slice_mut(ndarray::s![m0..=m1, n0..=n1]).fill(true);
        if path.len() >= p.l_min {
            let mean_cost = path.iter().map(|&c| 1.0 - v[c]).sum::<f64>() / path.len() as f64;
            out.push(cells_to_box(&path, s, 1.0 - mean_cost));
        }
    }
    sort_by_score(&mut out);
    out
}
