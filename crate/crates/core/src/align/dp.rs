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

/// Dynamic programming for the best-scoring diagonal blocks.
///
/// `score(m, n) = max(0, S(m, n) + max(score(m-1, n-1), score(m-1, n) - g,
/// score(m, n-1) - g))` on the normalized matrix. Chains are traced back from
/// matched cells (value `>= t_bin`) in descending score order, skipping cells
/// already claimed; each chain is trimmed to its first and last matched cell
/// and kept if it spans at least `l_min` cells with mean value `>= s_min`.
pub fn dyn_prog(s: &SimMatrix, p: &DetectorParams) -> Vec<SegmentBox> {
    let v = normalized(s);
    let (rows, cols) = v.dim();
    let mut score = Array2::<f64>::zeros((rows, cols));
    let mut step = Array2::from_elem((rows, cols), Step::Start);
    let g = p.dp_gap_penalty;
    for m in 0..rows {
        for n in 0..cols {
            let mut best = 0.0;
            let mut from = Step::Start;
            if m > 0 && n > 0 && score[[m - 1, n - 1]] > best {
                best = score[[m - 1, n - 1]];
                from = Step::Diag;
            }
            if m > 0 && score[[m - 1, n]] - g > best {
                best = score[[m - 1, n]] - g;
                from = Step::Up;
            }
            if n > 0 && score[[m, n - 1]] - g > best {
                best = score[[m, n - 1]] - g;
                from = Step::Left;
            }
            let total = v[[m, n]] + best;
            if total > 0.0 {
                score[[m, n]] = total;
                step[[m, n]] = from;
            }
        }
    }

    let threshold = p.chain_threshold();
    let mut candidates: Vec<(usize, usize)> = score
        .indexed_iter()
        .filter(|&((m, n), &sc)| sc > threshold && v[[m, n]] >= p.t_bin)
        .map(|(c, _)| c)
        .collect();
    candidates.sort_by(|a, b| score[*b].total_cmp(&score[*a]).then(a.cmp(b)));

    let mut visited = Array2::from_elem((rows, cols), false);
    let mut out = Vec::new();
    for (m, n) in candidates {
        if visited[[m, n]] {
            continue;
        }
        let mut chain = Vec::new();
        let (mut cm, mut cn) = (m, n);
        loop {
            if visited[[cm, cn]] {
                break;
            }
            chain.push((cm, cn));
            match step[[cm, cn]] {
                Step::Start => break,
                Step::Diag => {
                    cm -= 1;
                    cn -= 1;
                }
                Step::Up => cm -= 1,
                Step::Left => cn -= 1,
            }
        }
        chain.reverse();
        let Some(first) = chain.iter().position(|&c| v[c] >= p.t_bin) else {
            continue;
        };
        let last = chain.iter().rposition(|&c| v[c] >= p.t_bin).unwrap();
        let chain = &chain[first..=last];
        for &c in chain {
            visited[c] = true;
        }
        let mean = chain.iter().map(|&c| v[c]).sum::<f64>() / chain.len() as f64;
        if chain.len() >= p.l_min && mean >= p.s_min {
            out.push(cells_to_box(chain, s, mean));
        }
    }
    sort_by_score(&mut out);
    out
}
