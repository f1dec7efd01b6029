use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use copyloc::align::{detect as run_detector, DetectorParams, Method};
use copyloc::annotations::{
    read_annotations, read_predictions, write_annotations, write_predictions,
};
use copyloc::attention::{
    enhance_sequences, load_weights, save_weights, time_kernels, AttentionShape, AttentionWeights,
    Kernel,
};
use copyloc::features::{read_features, write_features};
use copyloc::metrics::{evaluate, DecisionRule};
use copyloc::par;
use copyloc::semisup::{
    assemble_semi_batch, filter_with_weak_labels, make_pseudo_labels, write_pseudo_labels,
    PseudoSource,
};
use copyloc::simgen::{
    read_sim_matrix, similarity, write_pgm, write_sim_matrix, SimConfig, SoftmaxOrder,
};
use copyloc::synth::{gen_pair, preset_spec, Preset};
use copyloc::{FeatureSequence, PairAnnotation, PairPrediction};
use serde_json::{json, Value};

use crate::{AttnArgs, BenchArgs, DetectArgs, EvalArgs, GenArgs, PseudoArgs, SimmatArgs};

type Pair = (String, String);

/// `(query_id, ref_id)` of every non-blank line of a JSONL file, in order.
fn read_pair_list(path: &Path) -> Result<Vec<Pair>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading pair list {}", path.display()))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: malformed JSON", path.display(), i + 1))?;
        let field = |k: &str| {
            v.get(k)
                .and_then(Value::as_str)
                .map(str::to_string)
                .with_context(|| {
                    format!("{}:{}: missing string field {k:?}", path.display(), i + 1)
                })
        };
        pairs.push((field("query_id")?, field("ref_id")?));
    }
    Ok(pairs)
}

fn pair_stem(q: &str, r: &str) -> String {
    format!("{q}__{r}")
}

fn load(path: &Path) -> Result<FeatureSequence> {
    read_features(path).with_context(|| format!("reading features {}", path.display()))
}

/// Runs `f` over all pairs in parallel, keeping input order and stopping at the first error.
fn per_pair<R: Send>(
    pairs: &[Pair],
    f: impl Fn(&str, &str) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    par::map(pairs, |(q, r)| {
        f(q, r).with_context(|| format!("pair {q} / {r}"))
    })
    .into_iter()
    .collect()
}

pub fn gen(a: GenArgs) -> Result<()> {
    let preset: Preset = a.preset.parse()?;
    ensure!(
        (0.0..=1.0).contains(&a.negative_fraction),
        "--negative-fraction must lie in [0, 1]"
    );
    let features = a.out.join("features");
    fs::create_dir_all(&features).with_context(|| format!("creating {}", features.display()))?;

    let f = a.negative_fraction;
    let plans: Vec<_> = (0..a.pairs as u64)
        .map(|i| {
            let negative = ((i + 1) as f64 * f).floor() > (i as f64 * f).floor();
            let p = if negative { Preset::Negative } else { preset };
            (a.seed + i, preset_spec(p, a.seed + i, a.dim))
        })
        .collect();
    let generated = par::map(&plans, |(seed, spec)| gen_pair(*seed, spec))
        .into_iter()
        .collect::<copyloc::Result<Vec<_>>>()?;

    for g in &generated {
        for seq in [&g.query, &g.reference] {
            let path = features.join(format!("{}.vcf", seq.video_id()));
            write_features(&path, seq).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    let anns: Vec<PairAnnotation> = generated.iter().map(|g| g.annotation.clone()).collect();
    write_annotations(a.out.join("annotations.jsonl"), &anns)?;

    let manifest = json!({
        "rng": "ChaCha8Rng::seed_from_u64",
        "first_seed": a.seed,
        "preset": a.preset,
        "negative_fraction": a.negative_fraction,
        "dim": a.dim,
        "pairs": plans.iter().zip(&generated).map(|((seed, spec), g)| json!({
            "seed": seed,
            "query_id": g.annotation.query_id(),
            "ref_id": g.annotation.ref_id(),
            "spec": spec,
        })).collect::<Vec<_>>(),
    });
    let path = a.out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} pairs to {}", generated.len(), a.out.display());
    Ok(())
}

fn enhanced_paths(dir: &Path, q: &str, r: &str) -> (PathBuf, PathBuf) {
    let stem = pair_stem(q, r);
    (
        dir.join(format!("{stem}.query.vcf")),
        dir.join(format!("{stem}.reference.vcf")),
    )
}

pub fn attn(a: AttnArgs) -> Result<()> {
    let kernel: Kernel = a.kernel.parse()?;
    let pairs = read_pair_list(&a.input.pairs)?;
    let weights = match (&a.weights, a.random_weights) {
        (Some(path), _) => {
            load_weights(path).with_context(|| format!("loading weights {}", path.display()))?
        }
        (None, Some(seed)) => {
            let Some((q, _)) = pairs.first() else {
                bail!("no pairs to infer the feature dimension from")
            };
            let dim = load(&a.input.features.join(format!("{q}.vcf")))?.dim();
            let shape = AttentionShape {
                dim,
                heads: a.heads,
                layers: a.layers,
                hidden: a.hidden,
            };
            // stored weights are f32, so draw at that precision to keep --save-weights reproducible
            AttentionWeights::random(shape, seed)?.to_f32_precision()
        }
        (None, None) => bail!("either --weights or --random-weights is required"),
    };
    if let Some(path) = &a.save_weights {
        save_weights(path, &weights)
            .with_context(|| format!("writing weights {}", path.display()))?;
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let probs = per_pair(&pairs, |q, r| {
        let fq = load(&a.input.features.join(format!("{q}.vcf")))?;
        let fr = load(&a.input.features.join(format!("{r}.vcf")))?;
        let e = enhance_sequences(&fq, &fr, &weights, kernel)?;
        let (pq, pr) = enhanced_paths(&a.out, q, r);
        write_features(
            &pq,
            &FeatureSequence::new(q, e.query.mapv(|v| v as f32), false)?,
        )?;
        write_features(
            &pr,
            &FeatureSequence::new(r, e.reference.mapv(|v| v as f32), false)?,
        )?;
        Ok(e.video_prob)
    })?;
    let preds: Vec<PairPrediction> = pairs
        .iter()
        .zip(probs)
        .map(|((q, r), p)| PairPrediction {
            video_prob: Some(p),
            ..PairPrediction::new(q.as_str(), r.as_str(), vec![])
        })
        .collect();
    write_predictions(a.out.join("video_probs.jsonl"), &preds)?;
    println!("enhanced {} pairs into {}", pairs.len(), a.out.display());
    Ok(())
}

fn parse_resize(s: &str) -> Result<Option<(usize, usize)>> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let (h, w) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("--resize expects HxW or none, got {s:?}"))?;
    let (h, w): (usize, usize) = (h.trim().parse()?, w.trim().parse()?);
    ensure!(h > 0 && w > 0, "--resize dimensions must be positive");
    Ok(Some((h, w)))
}

fn parse_order(s: &str) -> Result<SoftmaxOrder> {
    match s {
        "before" => Ok(SoftmaxOrder::BeforeResize),
        "after" => Ok(SoftmaxOrder::AfterResize),
        other => bail!("--order expects before or after, got {other:?}"),
    }
}

pub fn simmat(a: SimmatArgs) -> Result<()> {
    let cfg = SimConfig {
        tau: a.tau,
        dual_softmax: !a.raw,
        resize: parse_resize(&a.resize)?,
        order: parse_order(&a.order)?,
    };
    ensure!(a.tau > 0.0 && a.tau.is_finite(), "--tau must be positive");
    let pairs = read_pair_list(&a.input.pairs)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    per_pair(&pairs, |q, r| {
        let (pq, pr) = if a.enhanced {
            enhanced_paths(&a.input.features, q, r)
        } else {
            (
                a.input.features.join(format!("{q}.vcf")),
                a.input.features.join(format!("{r}.vcf")),
            )
        };
        let (fq, fr) = (load(&pq)?, load(&pr)?);
        let s = similarity(fq.to_f64().view(), fr.to_f64().view(), &cfg)?;
        let stem = pair_stem(q, r);
        write_sim_matrix(a.out.join(format!("{stem}.vcs")), &s)?;
        if a.export_pgm {
            write_pgm(a.out.join(format!("{stem}.pgm")), &s)?;
        }
        Ok(())
    })?;
    println!(
        "wrote {} similarity matrices to {}",
        pairs.len(),
        a.out.display()
    );
    Ok(())
}

pub fn detect(a: DetectArgs) -> Result<()> {
    let method: Method = a.method.parse()?;
    let mut params = DetectorParams::default();
    for kv in &a.params {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--param expects KEY=VALUE, got {kv:?}"))?;
        params.set(k.trim(), v.trim())?;
    }
    params.validate()?;
    let probs: HashMap<Pair, f64> = match &a.video_probs {
        Some(path) => read_predictions(path)
            .with_context(|| format!("reading {}", path.display()))?
            .into_iter()
            .filter_map(|p| p.video_prob.map(|v| ((p.query_id, p.ref_id), v)))
            .collect(),
        None => HashMap::new(),
    };
    let pairs = read_pair_list(&a.pairs)?;
    let preds = per_pair(&pairs, |q, r| {
        let path = a.sims.join(format!("{}.vcs", pair_stem(q, r)));
        let s = read_sim_matrix(&path).with_context(|| format!("reading {}", path.display()))?;
        let boxes = run_detector(&s, method, &params)?;
        Ok(PairPrediction {
            video_prob: probs.get(&(q.to_string(), r.to_string())).copied(),
            ..PairPrediction::new(q, r, boxes)
        })
    })?;
    write_predictions(&a.out, &preds)?;
    let total: usize = preds.iter().map(|p| p.boxes.len()).sum();
    println!(
        "{method}: {total} boxes over {} pairs -> {}",
        preds.len(),
        a.out.display()
    );
    Ok(())
}

fn merge_groups(anns: Vec<PairAnnotation>, path: &Path) -> Result<Vec<PairAnnotation>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading groups {}", path.display()))?;
    let mut extra: HashMap<Pair, Vec<String>> = HashMap::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let v: Value = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: malformed JSON", path.display(), i + 1))?;
        let get = |k: &str| v.get(k).and_then(Value::as_str).map(str::to_string);
        let (Some(q), Some(r)) = (get("query_id"), get("ref_id")) else {
            bail!("{}:{}: missing query_id or ref_id", path.display(), i + 1);
        };
        let groups = v
            .get("groups")
            .and_then(Value::as_array)
            .map(|g| {
                g.iter()
                    .filter_map(Value::as_str)
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default();
        extra
            .entry((q, r))
            .or_default()
            .extend::<Vec<String>>(groups);
    }
    anns.into_iter()
        .map(|a| {
            let key = (a.query_id().to_string(), a.ref_id().to_string());
            let Some(more) = extra.get(&key) else {
                return Ok(a);
            };
            let mut groups = a.groups().to_vec();
            groups.extend(more.iter().filter(|g| !a.groups().contains(g)).cloned());
            let merged =
                PairAnnotation::new(key.0, key.1, a.gt_boxes().to_vec(), a.weak_label(), groups)?;
            Ok(match a.lengths() {
                Some((lq, lr)) => merged.with_lengths(lq, lr)?,
                None => merged,
            })
        })
        .collect()
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let rule: DecisionRule = a.rule.parse()?;
    let preds = read_predictions(&a.predictions)
        .with_context(|| format!("reading {}", a.predictions.display()))?;
    let mut anns = read_annotations(&a.annotations)
        .with_context(|| format!("reading {}", a.annotations.display()))?;
    if let Some(path) = &a.groups {
        anns = merge_groups(anns, path)?;
    }
    let report = evaluate(&preds, &anns, rule)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &a.json_out {
        fs::write(path, json.clone() + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    match a.format.as_str() {
        "table" => print!("{}", report.to_table()),
        "json" => println!("{json}"),
        other => bail!("--format expects table or json, got {other:?}"),
    }
    Ok(())
}

pub fn pseudo(a: PseudoArgs) -> Result<()> {
    let detections = read_predictions(&a.detections)
        .with_context(|| format!("reading {}", a.detections.display()))?;
    let mut labels = make_pseudo_labels(&detections, a.theta)?;
    if let Some(path) = &a.weak {
        let weak = read_annotations(path).with_context(|| format!("reading {}", path.display()))?;
        labels = filter_with_weak_labels(labels, &weak);
    }
    write_pseudo_labels(&a.out, &labels)?;

    let count = |s: PseudoSource| labels.iter().filter(|l| l.kept && l.source == s).count();
    let mut summary = json!({
        "pairs": labels.len(),
        "kept": labels.iter().filter(|l| l.kept).count(),
        "kept_boxes": copyloc::semisup::kept_box_count(&labels),
        "unlabeled": count(PseudoSource::Unlabeled),
        "weak_positive": count(PseudoSource::WeakPositive),
        "weak_negative": count(PseudoSource::WeakNegative),
        "theta": a.theta,
    });
    if let Some(student) = &a.student {
        let preds =
            read_predictions(student).with_context(|| format!("reading {}", student.display()))?;
        let labeled = match &a.labeled {
            Some(path) => {
                read_annotations(path).with_context(|| format!("reading {}", path.display()))?
            }
            None => Vec::new(),
        };
        let batch = assemble_semi_batch(&labeled, &labels, &preds, a.lambda, a.lambda_u)?;
        summary["loss"] = serde_json::to_value(batch)?;
        summary["lambda_u"] = json!(a.lambda_u);
    }
    println!("{summary}");
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    ensure!(
        !a.lengths.is_empty(),
        "--lengths must name at least one length"
    );
    let rows = time_kernels(&a.lengths, a.dim, a.reps, a.seed)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(());
    }
    let ratio = |r: Option<f64>| r.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
    println!(
        "{:>7} {:>12} {:>12} {:>10} {:>10}",
        "n", "vanilla_s", "linear_s", "vanilla_x", "linear_x"
    );
    for r in &rows {
        println!(
            "{:>7} {:>12.6} {:>12.6} {:>10} {:>10}",
            r.n,
            r.vanilla_secs,
            r.linear_secs,
            ratio(r.vanilla_ratio),
            ratio(r.linear_ratio)
        );
    }
    Ok(())
}
