//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test --release -p mtrcnet --test acceptance`.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use common::{gradient_check, random_batch, toy_config};
use mtrcnet::cli::RunConfig;
use mtrcnet::eval::{
    average_precision, evaluate_records, f1, mean_abs_diff, phase_pr_re, predict_video, predict_videos,
    video_accuracy, write_report, EvalReport, PredictionRecord, VideoTruth,
};
use mtrcnet::losses::{
    bernoulli_kl, correlation_loss, phase_loss, tool_loss, ActiveTerms, Lambdas,
};
use mtrcnet::model::{init_parameters, ModelParams, Partition, PartitionSet};
use mtrcnet::parallel::Exec;
use mtrcnet::synth::{generate_dataset, Dataset, GenerateOptions, VideoRecord};
use mtrcnet::training::{load_checkpoint, run_plan, sha256_hex, StageEpochs, Strategy, TrainConfig};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

const DESK_CONFIG: &str = include_str!("../../../configs/desk.toml");
const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { name, pass, detail }
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[derive(Deserialize)]
struct OracleCase {
    tool_probs: Vec<Vec<f64>>,
    tool_labels: Vec<Vec<u8>>,
    tool_priors: Vec<Vec<f64>>,
    phase_probs: Vec<Vec<f64>>,
    phase_labels: Vec<usize>,
    kl_p: f64,
    kl_q: f64,
    tool_loss: f64,
    phase_loss: f64,
    bernoulli_kl: f64,
    correlation_loss: f64,
}

#[derive(Deserialize)]
struct Oracle {
    cases: Vec<OracleCase>,
}

fn frames3<T: Copy>(rows: &[Vec<T>]) -> Array3<T> {
    let n = rows.len();
    let k = rows[0].len();
    Array3::from_shape_fn((1, n, k), |(_, t, c)| rows[t][c])
}

fn loss_oracle() -> Outcome {
    let text = include_str!("data/loss_oracle.json");
    let oracle: Oracle = serde_json::from_str(text).expect("oracle json");
    let mut worst = [0.0f64; 4];
    for c in &oracle.cases {
        let tp = frames3(&c.tool_probs);
        let tl = frames3(&c.tool_labels);
        let pr = frames3(&c.tool_priors);
        let pp = frames3(&c.phase_probs);
        let pl = Array2::from_shape_vec((1, c.phase_labels.len()), c.phase_labels.clone()).unwrap();
        let got = [
            tool_loss(tp.view(), tl.view()).unwrap(),
            phase_loss(pp.view(), pl.view()).unwrap(),
            bernoulli_kl(c.kl_p, c.kl_q).unwrap(),
            correlation_loss(tp.view(), pr.view()).unwrap(),
        ];
        let want = [c.tool_loss, c.phase_loss, c.bernoulli_kl, c.correlation_loss];
        for i in 0..4 {
            worst[i] = worst[i].max(rel_err(got[i], want[i]));
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    outcome(
        "loss oracle",
        max < 1e-10,
        format!(
            "{} cases, max rel err tool {:.2e} phase {:.2e} kl {:.2e} corr {:.2e} (< 1e-10)",
            oracle.cases.len(),
            worst[0],
            worst[1],
            worst[2],
            worst[3]
        ),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let cfg = toy_config();
    let mut worst = 0.0f64;
    let mut ok = true;
    let mut parts = Vec::new();
    for (active, seed) in [(ActiveTerms::FULL, 1), (ActiveTerms::MAPPING_ONLY, 2)] {
        let params = init_parameters(&cfg, seed).unwrap();
        let batch = random_batch(&cfg, 2, 3, seed + 100);
        for c in gradient_check(&params, &batch, Lambdas::default(), active, PartitionSet::ALL, 1e-4) {
            worst = worst.max(c.max_rel_err);
            ok &= c.max_rel_err < 1e-4 && c.checked > 0 && c.kinked * 4 <= c.checked + c.kinked;
            parts.push(format!("{}={:.1e}", c.partition, c.max_rel_err));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        "gradient check",
        ok && secs < 60.0,
        format!("max rel err {worst:.2e} (< 1e-4), {} in {secs:.1}s", parts.join(" ")),
    )
}

fn brute_pr_re(gt: &[usize], pred: &[usize], k: usize) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let mut pr = Vec::new();
    let mut re = Vec::new();
    for c in 0..k {
        let g: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] == c).collect();
        let p: Vec<usize> = (0..pred.len()).filter(|&i| pred[i] == c).collect();
        let both = g.iter().filter(|i| p.contains(i)).count();
        pr.push((!p.is_empty()).then(|| both as f64 / p.len() as f64));
        re.push((!g.is_empty()).then(|| both as f64 / g.len() as f64));
    }
    (pr, re)
}

fn brute_ap(scores: &[f64], labels: &[u8]) -> Option<f64> {
    // rank of i = 1 + number of frames ranked ahead of it
    let ahead = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let n = scores.len();
    let rank = |i: usize| 1 + (0..n).filter(|&j| ahead(j, i)).count();
    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    if pos.is_empty() {
        return None;
    }
    pos.sort_by_key(|&i| rank(i));
    let sum: f64 = pos
        .iter()
        .map(|&i| {
            let r = rank(i);
            let hits = pos.iter().filter(|&&j| rank(j) <= r).count();
            hits as f64 / r as f64
        })
        .sum();
    Some(sum / pos.len() as f64)
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut mismatches = 0;
    for _ in 0..500 {
        let n = rng.random_range(1..=20);
        let k = rng.random_range(2..=3);
        let gt: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        // coarse scores so ties occur
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 / 5.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();

        let s = phase_pr_re(&gt, &pred, k).unwrap();
        let (pr, re) = brute_pr_re(&gt, &pred, k);
        let correct = (0..n).filter(|&i| gt[i] == pred[i]).count();
        let acc = correct as f64 / n as f64;
        if s.precision != pr
            || s.recall != re
            || video_accuracy(&gt, &pred).unwrap() != Some(acc)
            || average_precision(&scores, &labels).unwrap() != brute_ap(&scores, &labels)
        {
            mismatches += 1;
        }
    }
    let gt = [vec![0; 6], vec![1; 4]].concat();
    let pred = [vec![0; 5], vec![1; 5]].concat();
    let s = phase_pr_re(&gt, &pred, 2).unwrap();
    let worked = s.precision == vec![Some(1.0), Some(0.8)]
        && s.recall == vec![Some(5.0 / 6.0), Some(1.0)]
        && video_accuracy(&gt, &pred).unwrap() == Some(0.9);
    outcome(
        "metric oracle",
        mismatches == 0 && worked,
        format!(
            "{mismatches} mismatches in 500 instances; worked example PR {:?} RE {:?}",
            s.precision, s.recall
        ),
    )
}

fn f1_consistency() -> Outcome {
    let v = f1(0.869, 0.880);
    outcome("f1 consistency", (v - 0.874).abs() <= 1e-3, format!("f1(0.869, 0.880) = {v:.4}"))
}

struct TrainedRun {
    strategy: Strategy,
    seed: u64,
    clip_len: usize,
    params: ModelParams,
    preds: Vec<PredictionRecord>,
    report: EvalReport,
}

fn desk_config() -> RunConfig {
    RunConfig::from_toml(DESK_CONFIG).expect("desk config")
}

fn train_and_eval(base: &TrainConfig, ds: &Dataset, truth: &[VideoTruth], dir: &Path, strategy: Strategy, seed: u64, clip_len: usize) -> TrainedRun {
    let mut cfg = base.clone();
    cfg.strategy = strategy;
    cfg.seed = seed;
    cfg.arch.clip_len = clip_len;
    let out = dir.join(format!("{}-s{seed}-c{clip_len}", strategy.name()));
    let run = run_plan(&cfg, ds, &out).expect("training");
    let params = load_checkpoint(run.checkpoints.last().unwrap()).unwrap();
    let preds = predict_videos(&params, &ds.test(), Exec::Parallel).unwrap();
    let report = evaluate_records(&preds, truth).unwrap();
    println!(
        "  {:<14} seed {seed} clip {clip_len:>2}: accuracy {:.4} mAP {:.4}",
        strategy.name(),
        report.accuracy_mean,
        report.map
    );
    TrainedRun {
        strategy,
        seed,
        clip_len,
        params,
        preds,
        report,
    }
}

fn find<'a>(runs: &'a [TrainedRun], s: Strategy, seed: u64, clip: usize) -> &'a TrainedRun {
    runs.iter()
        .find(|r| r.strategy == s && r.seed == seed && r.clip_len == clip)
        .unwrap()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Phase predictions of one run combined with tool predictions of another.
fn combine(phase: &[PredictionRecord], tools: &[PredictionRecord]) -> Vec<PredictionRecord> {
    phase
        .iter()
        .zip(tools)
        .map(|(a, b)| {
            assert_eq!((&a.video_id, a.frame_idx), (&b.video_id, b.frame_idx));
            PredictionRecord {
                tool_probs: b.tool_probs.clone(),
                ..a.clone()
            }
        })
        .collect()
}

fn cooccurrence_mad(report: &EvalReport) -> f64 {
    mean_abs_diff(&report.cooccurrence_gt.normalized, &report.cooccurrence_pred.normalized)
}

fn trend_suite(dir: &Path) -> (Vec<Outcome>, Vec<TrainedRun>, Dataset) {
    let start = Instant::now();
    let cfg = desk_config();
    let ds = generate_dataset(&cfg.workflow, &cfg.dataset, &dir.join("data"), Exec::Parallel).unwrap();
    let truth: Vec<VideoTruth> = ds.test().into_iter().map(VideoTruth::from).collect();
    let mut runs = Vec::new();
    for seed in SEEDS {
        for s in [Strategy::ThreeStep, Strategy::NoCorrelation, Strategy::SinglePhase, Strategy::SingleTool] {
            runs.push(train_and_eval(&cfg.train, &ds, &truth, dir, s, seed, 10));
        }
        runs.push(train_and_eval(&cfg.train, &ds, &truth, dir, Strategy::ThreeStep, seed, 4));
    }
    let minutes = start.elapsed().as_secs_f64() / 60.0;

    let acc = |s, clip| mean(SEEDS.iter().map(|&seed| find(&runs, s, seed, clip).report.accuracy_mean));
    let map = |s| mean(SEEDS.iter().map(|&seed| find(&runs, s, seed, 10).report.map));
    let (a_cl, a_no, a_single) = (acc(Strategy::ThreeStep, 10), acc(Strategy::NoCorrelation, 10), acc(Strategy::SinglePhase, 10));
    let (m_cl, m_no, m_single) = (map(Strategy::ThreeStep), map(Strategy::NoCorrelation), map(Strategy::SingleTool));
    let a_clip4 = acc(Strategy::ThreeStep, 4);

    let mut out = Vec::new();
    out.push(outcome(
        "trend: phase accuracy",
        a_cl >= a_no && a_no >= a_single && minutes < 30.0,
        format!(
            "three_step {a_cl:.4} >= no_cl {a_no:.4} >= single_phase {a_single:.4}; CL gap {:+.4} ({minutes:.1} min for {} runs)",
            a_cl - a_no,
            runs.len()
        ),
    ));
    out.push(outcome(
        "trend: tool mAP",
        m_cl >= m_no && m_no >= m_single,
        format!(
            "three_step {m_cl:.4} >= no_cl {m_no:.4} >= single_tool {m_single:.4}; CL gap {:+.4}",
            m_cl - m_no
        ),
    ));
    out.push(outcome(
        "trend: clip length",
        a_cl >= a_clip4,
        format!("three_step clip 10 {a_cl:.4} >= clip 4 {a_clip4:.4}"),
    ));

    let mut wins = 0;
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let cl = cooccurrence_mad(&find(&runs, Strategy::ThreeStep, seed, 10).report);
        let combined = combine(
            &find(&runs, Strategy::SinglePhase, seed, 10).preds,
            &find(&runs, Strategy::SingleTool, seed, 10).preds,
        );
        let singles = cooccurrence_mad(&evaluate_records(&combined, &truth).unwrap());
        wins += (cl < singles) as usize;
        per_seed.push(format!("seed {seed}: {cl:.4} vs {singles:.4}"));
    }
    out.push(outcome(
        "co-occurrence reconstruction",
        wins >= 2,
        format!("three_step below single-task pair on {wins}/3 seeds ({})", per_seed.join(", ")),
    ));
    (out, runs, ds)
}

fn causality(runs: &[TrainedRun], ds: &Dataset) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let videos = ds.test();
    let mut violations = 0;
    for i in 0..50 {
        let run = &runs[i % runs.len()];
        let src = videos[rng.random_range(0..videos.len())];
        let len = src.len().min(40);
        let fl = src.frame_len();
        let base = VideoRecord {
            frames: src.frames[..len * fl].to_vec(),
            phase_labels: src.phase_labels[..len].to_vec(),
            tool_labels: src.tool_labels[..len].to_vec(),
            ..src.clone()
        };
        let t = rng.random_range(0..len - 1);
        let mut perturbed = base.clone();
        for v in &mut perturbed.frames[(t + 1) * fl..] {
            *v = rng.random::<f32>();
        }
        let a = predict_video(&run.params, &base).unwrap();
        let b = predict_video(&run.params, &perturbed).unwrap();
        let bits = |r: &PredictionRecord| {
            r.phase_probs
                .iter()
                .chain(&r.tool_probs)
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        if (0..=t).any(|k| bits(&a[k]) != bits(&b[k]) || a[k].phase_pred != b[k].phase_pred) {
            violations += 1;
        }
    }
    outcome(
        "causality",
        violations == 0,
        format!("{violations} of 50 perturbations changed a prediction at or before t ({} models)", runs.len()),
    )
}

/// Small, fast training setup for contract checks.
fn quick_setup(dir: &Path) -> (TrainConfig, Dataset) {
    let cfg = desk_config();
    let opts = GenerateOptions {
        num_videos: 4,
        ..cfg.dataset
    };
    let ds = generate_dataset(&cfg.workflow, &opts, &dir.join("data"), Exec::Parallel).unwrap();
    let mut train = cfg.train;
    train.epochs = StageEpochs {
        joint: 1,
        mapping: 1,
        correlation: 1,
    };
    train.val_videos = 0;
    train.arch.clip_len = 4;
    train.clip_stride = 4;
    (train, ds)
}

fn partition_equal(a: &ModelParams, b: &ModelParams, part: Partition) -> bool {
    a.weights.partition_tensors(part) == b.weights.partition_tensors(part)
}

fn freeze_contracts(dir: &Path) -> Outcome {
    let (base, ds) = quick_setup(dir);
    let mut cfg = base.clone();
    cfg.strategy = Strategy::Ts2;
    let ts2 = run_plan(&cfg, &ds, &dir.join("ts2")).unwrap();
    let before = load_checkpoint(&ts2.checkpoints[1]).unwrap();
    let after = load_checkpoint(&ts2.checkpoints[2]).unwrap();
    let ts2_m_same = partition_equal(&before, &after, Partition::MappingCell);
    let ts2_rest_moved = !partition_equal(&before, &after, Partition::ToolHead);

    cfg.strategy = Strategy::ThreeStep;
    let three = run_plan(&cfg, &ds, &dir.join("three_step")).unwrap();
    let s1 = load_checkpoint(&three.checkpoints[0]).unwrap();
    let s2 = load_checkpoint(&three.checkpoints[1]).unwrap();
    let others_same = [Partition::Backbone, Partition::ToolHead, Partition::PhaseHead]
        .into_iter()
        .all(|p| partition_equal(&s1, &s2, p));
    let m_moved = !partition_equal(&s1, &s2, Partition::MappingCell);
    outcome(
        "freeze contracts",
        ts2_m_same && ts2_rest_moved && others_same && m_moved,
        format!(
            "TS2 stage 3 mapping unchanged: {ts2_m_same}; three_step stage 2 other partitions unchanged: {others_same}, mapping changed: {m_moved}"
        ),
    )
}

fn run_digests(dir: &Path, cfg: &TrainConfig, ds: &Dataset) -> Vec<(String, String)> {
    let run = run_plan(cfg, ds, dir).unwrap();
    let params = load_checkpoint(run.checkpoints.last().unwrap()).unwrap();
    let truth: Vec<VideoTruth> = ds.test().into_iter().map(VideoTruth::from).collect();
    let preds = predict_videos(&params, &ds.test(), Exec::Sequential).unwrap();
    write_report(&evaluate_records(&preds, &truth).unwrap(), &dir.join("report")).unwrap();
    let mut files: Vec<String> = ["steps.csv", "epochs.csv", "run_manifest.json"]
        .iter()
        .map(|s| s.to_string())
        .chain(run.manifest.checkpoints.iter().cloned())
        .collect();
    let mut report_files: Vec<String> = fs::read_dir(dir.join("report"))
        .unwrap()
        .map(|e| format!("report/{}", e.unwrap().file_name().to_string_lossy()))
        .collect();
    report_files.sort();
    files.extend(report_files);
    files
        .into_iter()
        .map(|f| {
            let digest = sha256_hex(&fs::read(dir.join(&f)).unwrap());
            (f, digest)
        })
        .collect()
}

fn reproducibility(dir: &Path) -> Outcome {
    let (mut cfg, ds) = quick_setup(dir);
    cfg.deterministic = true;
    let a = run_digests(&dir.join("a"), &cfg, &ds);
    let b = run_digests(&dir.join("b"), &cfg, &ds);
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        "reproducibility",
        a.len() == b.len() && differing.is_empty(),
        format!("{} files compared by SHA-256, differing: {differing:?}", a.len()),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut results = vec![loss_oracle(), gradients(), metric_oracle(), f1_consistency()];
    results.push(freeze_contracts(&tmp.path().join("freeze")));
    results.push(reproducibility(&tmp.path().join("repro")));
    let (trend, runs, ds) = trend_suite(&tmp.path().join("trend"));
    results.extend(trend);
    results.push(causality(&runs, &ds));

    let failed: Vec<&Outcome> = results.iter().filter(|r| !r.pass).collect();
    println!("\n{} of {} criteria passed", results.len() - failed.len(), results.len());
    for f in &failed {
        println!("failed: {} ({})", f.name, f.detail);
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
