use copyloc::align::{cc_detect, DetectorParams};
use copyloc::annotations::SegmentBox;
use copyloc::losses::iou;
use copyloc::simgen::{dual_softmax_values, resize_bilinear, SimKind, SimMatrix};
use ndarray::Array2;
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = Array2<f64>> {
    (1usize..10, 1usize..10).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-20.0f64..20.0, r * c)
            .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

fn col_softmax(s: &Array2<f64>) -> Array2<f64> {
    let mut out = s.clone();
    for mut col in out.columns_mut() {
        let max = col.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        col.mapv_inplace(|x| (x - max).exp());
        let total = col.sum();
        col /= total;
    }
    out
}

proptest! {
    #[test]
    fn global_shift_leaves_dual_softmax_unchanged(s in matrix(), c in -50.0f64..50.0) {
        let a = dual_softmax_values(s.view());
        let b = dual_softmax_values(s.mapv(|x| x + c).view());
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn row_shift_only_moves_the_column_softmax(s in matrix(), row in 0usize..10, c in -5.0f64..5.0) {
        let row = row % s.nrows();
        let mut shifted = s.clone();
        shifted.row_mut(row).mapv_inplace(|x| x + c);
        let (a, b) = (dual_softmax_values(s.view()), dual_softmax_values(shifted.view()));
        // the row-softmax factor cancels, leaving the ratio of column softmaxes
        let (ca, cb) = (col_softmax(&s), col_softmax(&shifted));
        for ((i, j), &x) in a.indexed_iter() {
            let want = cb[[i, j]] / ca[[i, j]];
            prop_assert!((b[[i, j]] / x - want).abs() <= 1e-9 * want.max(1.0));
        }
    }

    #[test]
    fn values_lie_in_unit_interval(s in matrix()) {
        let p = dual_softmax_values(s.view());
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}

#[test]
fn resized_boxes_map_back_to_the_source_grid() {
    for (rows, cols) in [(32, 32), (45, 120), (180, 60), (33, 71)] {
        let (m0, m1) = (rows / 4, rows * 3 / 4);
        let (n0, n1) = (cols / 5, cols / 2);
        let mut v = Array2::zeros((rows, cols));
        v.slice_mut(ndarray::s![m0..m1, n0..n1]).fill(1.0);
        let s = SimMatrix::new(v, SimKind::DualSoftmax, 1.0, 1.0, 0.1).unwrap();
        let big = resize_bilinear(&s, (640, 640)).unwrap();
        let boxes = cc_detect(&big, &DetectorParams::default()).unwrap();
        assert_eq!(boxes.len(), 1, "{rows}x{cols}");
        let c = boxes[0].coords();
        // re-rasterize on the source grid
        let cell = |t: f64| t.round();
        let back = SegmentBox::gt(cell(c[0]), cell(c[1]), cell(c[2]), cell(c[3])).unwrap();
        let truth = SegmentBox::gt(m0 as f64, m1 as f64, n0 as f64, n1 as f64).unwrap();
        let overlap = iou(&back, &truth);
        assert!(overlap >= 0.9, "{rows}x{cols}: {c:?} iou {overlap}");
    }
}
