//! End-to-end helpers: features to boxes for one pair, and whole synthetic
//! suites scored against their planted ground truth.

use crate::align::{detect, DetectorParams, Method};
use crate::annotations::{PairAnnotation, PairPrediction, SegmentBox};
use crate::error::Result;
use crate::features::FeatureSequence;
use crate::metrics::{evaluate, DecisionRule, MetricsReport};
use crate::par;
use crate::simgen::{similarity, SimConfig};
use crate::synth::{gen_pair, preset_spec, GeneratedPair, Preset};

/// Similarity settings a method runs on by default: the connected-component
/// detector sees the fixed 640x640 grid, the alignment baselines the native
/// frame grid.
pub fn sim_config_for(method: Method) -> SimConfig {
    match method {
        Method::Components => SimConfig::default(),
        _ => SimConfig {
            resize: None,
            ..SimConfig::default()
        },
    }
}

/// Similarity matrix and detection for one pair of sequences.
pub fn localize(
    query: &FeatureSequence,
    reference: &FeatureSequence,
    method: Method,
    params: &DetectorParams,
    cfg: &SimConfig,
) -> Result<Vec<SegmentBox>> {
    let s = similarity(query.to_f64().view(), reference.to_f64().view(), cfg)?;
    detect(&s, method, params)
}

/// Generates the preset pair for every seed, in seed order.
pub fn generate_suite(preset: Preset, seeds: &[u64], dim: usize) -> Result<Vec<GeneratedPair>> {
    par::map(seeds, |&seed| {
        gen_pair(seed, &preset_spec(preset, seed, dim))
    })
    .into_iter()
    .collect()
}

/// Runs `method` over already generated pairs and returns one prediction per pair.
pub fn predict_suite(
    pairs: &[GeneratedPair],
    method: Method,
    params: &DetectorParams,
) -> Result<Vec<PairPrediction>> {
    let cfg = sim_config_for(method);
    par::map(pairs, |p| {
        let boxes = localize(&p.query, &p.reference, method, params, &cfg)?;
        Ok(PairPrediction::new(
            p.annotation.query_id(),
            p.annotation.ref_id(),
            boxes,
        ))
    })
    .into_iter()
    .collect()
}

/// Dataset metrics of `method` on the given pairs.
pub fn score_suite(
    pairs: &[GeneratedPair],
    method: Method,
    params: &DetectorParams,
) -> Result<MetricsReport> {
    let preds = predict_suite(pairs, method, params)?;
    let anns: Vec<PairAnnotation> = pairs.iter().map(|p| p.annotation.clone()).collect();
    evaluate(&preds, &anns, DecisionRule::Boxes)
}
