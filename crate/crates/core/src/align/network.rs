use crate::annotations::SegmentBox;
use crate::simgen::SimMatrix;

use super::{cells_to_box, normalized, DetectorParams};

/// Temporal network: cells above `t_node` are nodes, edges join nodes that
/// advance on both axes by at most `gap` frames, and the heaviest path
/// (sum of node values) is extracted greedily, one path at a time, until the
/// best remaining path weighs less than `l_min * s_min`. Paths shorter than
/// `l_min` nodes are consumed without being emitted.
///
/// Output is in extraction order, which is descending path weight.
pub fn temporal_network(s: &SimMatrix, p: &DetectorParams) -> Vec<SegmentBox> {
    let v = normalized(s);
    let (rows, cols) = v.dim();
    // Nodes in lexicographic (m, n) order, which is a topological order of the DAG.
    let nodes: Vec<(usize, usize, f64)> = v
        .indexed_iter()
        .filter(|(_, &val)| val >= p.t_node)
        .map(|((m, n), &val)| (m, n, val))
        .collect();
    let mut index = vec![usize::MAX; rows * cols];
    for (i, &(m, n, _)) in nodes.iter().enumerate() {
        index[m * cols + n] = i;
    }
    let mut alive = vec![true; nodes.len()];
    let mut best = vec![0.0f64; nodes.len()];
    let mut prev = vec![usize::MAX; nodes.len()];
    let threshold = p.chain_threshold();
    let mut out = Vec::new();

    loop {
        let mut top: Option<usize> = None;
        for (i, &(m, n, val)) in nodes.iter().enumerate() {
            if !alive[i] {
                continue;
            }
            let mut acc = 0.0;
            let mut from = usize::MAX;
            for pm in m.saturating_sub(p.gap)..m {
                for pn in n.saturating_sub(p.gap)..n {
                    let j = index[pm * cols + pn];
                    if j != usize::MAX && alive[j] && best[j] > acc {
                        acc = best[j];
                        from = j;
                    }
                }
            }
            best[i] = val + acc;
            prev[i] = from;
            if top.is_none_or(|t| best[i] > best[t]) {
                top = Some(i);
            }
        }
        let Some(end) = top else { break };
        if best[end] < threshold {
            break;
        }
        let weight = best[end];
        let mut path = Vec::new();
        let mut cur = end;
        while cur != usize::MAX {
            path.push((nodes[cur].0, nodes[cur].1));
            alive[cur] = false;
            cur = prev[cur];
        }
        if path.len() >= p.l_min {
            out.push(cells_to_box(&path, s, weight / path.len() as f64));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{diagonal, dual};
    use super::*;
    use ndarray::Array2;

    #[test]
    fn no_nodes() {
        assert!(
            temporal_network(&dual(Array2::zeros((8, 8))), &DetectorParams::default()).is_empty()
        );
    }

    #[test]
    fn diagonal_is_one_path() {
        let boxes = temporal_network(&dual(diagonal(12, 9, 2)), &DetectorParams::default());
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].coords(), [0.0, 9.0, 2.0, 11.0]);
        assert_eq!(boxes[0].score(), 1.0);
    }

    #[test]
    fn follows_speed_change() {
        let mut v = Array2::zeros((20, 40));
        for m in 0..15 {
            v[[m, 2 * m + 3]] = 1.0;
        }
        let boxes = temporal_network(&dual(v), &DetectorParams::default());
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].coords(), [0.0, 15.0, 3.0, 32.0]);
    }
}
