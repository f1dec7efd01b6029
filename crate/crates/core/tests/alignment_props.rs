use copyloc::align::{cc_detect, detect, DetectorParams, Method};
use copyloc::losses::iou;
use copyloc::pipeline::{generate_suite, predict_suite, sim_config_for};
use copyloc::simgen::{similarity, SimConfig};
use copyloc::synth::{gen_pair, CopySpec, PairSpec, Preset};
use copyloc::Error;

fn clean_pair(seed: u64) -> copyloc::synth::GeneratedPair {
    let spec = PairSpec {
        len_q: 90,
        len_r: 110,
        dim: 128,
        copies: vec![CopySpec {
            query_start: 20 + (seed as usize % 7),
            ref_start: 40,
            dur: 30,
            speed: 1.0,
            reversed: false,
            noise: 0.0,
        }],
    };
    gen_pair(seed, &spec).unwrap()
}

#[test]
fn every_method_puts_its_top_box_on_a_clean_copy() {
    for seed in 0..5 {
        let pair = clean_pair(seed);
        let gt = pair.annotation.gt_boxes()[0];
        for method in Method::ALL {
            let s = similarity(
                pair.query.to_f64().view(),
                pair.reference.to_f64().view(),
                &sim_config_for(method),
            )
            .unwrap();
            let boxes = detect(&s, method, &DetectorParams::default()).unwrap();
            let top = boxes
                .first()
                .unwrap_or_else(|| panic!("{method} found nothing"));
            assert!(
                iou(top, &gt) >= 0.5,
                "{method} seed {seed}: {:?}",
                top.coords()
            );
            let (eq, er) = s.extent();
            assert!(
                boxes.iter().all(|b| b.fits(eq, er)),
                "{method} box out of bounds"
            );
        }
    }
}

/// Holds for speed-1 copies. A 2x copy on the resized grid is a chain of
/// blobs that can split into several components as the threshold rises.
#[test]
fn raising_t_bin_never_adds_components() {
    let pairs = generate_suite(Preset::Easy, &(0..40).collect::<Vec<_>>(), 64).unwrap();
    for p in &pairs {
        let s = similarity(
            p.query.to_f64().view(),
            p.reference.to_f64().view(),
            &SimConfig::default(),
        )
        .unwrap();
        let mut last = usize::MAX;
        for t in [0.2, 0.35, 0.5, 0.65, 0.8] {
            let params = DetectorParams {
                t_bin: t,
                ..DetectorParams::default()
            };
            let n = cc_detect(&s, &params).unwrap().len();
            assert!(
                n <= last,
                "{}: t_bin {t} gave {n} > {last}",
                p.annotation.query_id()
            );
            last = n;
        }
    }
}

#[test]
fn components_reject_raw_matrices() {
    let pair = clean_pair(0);
    let cfg = SimConfig {
        dual_softmax: false,
        resize: None,
        ..SimConfig::default()
    };
    let raw = similarity(
        pair.query.to_f64().view(),
        pair.reference.to_f64().view(),
        &cfg,
    )
    .unwrap();
    assert!(matches!(
        cc_detect(&raw, &DetectorParams::default()),
        Err(Error::WrongKind { .. })
    ));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let pairs = generate_suite(Preset::Hard, &(0..6).collect::<Vec<_>>(), 64).unwrap();
    let params = DetectorParams::default();
    for method in Method::ALL {
        let reference =
            copyloc::par::sequential(|| predict_suite(&pairs, method, &params).unwrap());
        for threads in [1, 3] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let got = pool.install(|| predict_suite(&pairs, method, &params).unwrap());
            assert_eq!(got, reference, "{method} with {threads} threads");
        }
    }
}
