use mtrcnet::eval::{
    evaluate_records, image, read_matrix_csv, read_predictions, write_predictions, write_report,
    PredictionRecord, VideoTruth,
};
use mtrcnet::synth::{generate_video, WorkflowSpec};

fn oracle_predictions(truth: &VideoTruth) -> Vec<PredictionRecord> {
    truth
        .phases
        .iter()
        .zip(&truth.tools)
        .enumerate()
        .map(|(t, (&z, y))| {
            let mut pp = vec![0.0; 7];
            pp[z] = 1.0;
            PredictionRecord {
                video_id: truth.video_id.clone(),
                frame_idx: t,
                phase_pred: z,
                phase_probs: pp,
                tool_probs: y.iter().map(|&v| v as f64).collect(),
            }
        })
        .collect()
}

fn truths() -> Vec<VideoTruth> {
    let spec = WorkflowSpec::default();
    (0..3)
        .map(|i| VideoTruth::from(&generate_video(&spec, &format!("video{i:02}"), 90 + i).unwrap()))
        .collect()
}

#[test]
fn oracle_predictions_score_perfectly_and_match_ribbons() {
    let truth = truths();
    let preds: Vec<PredictionRecord> = truth.iter().flat_map(oracle_predictions).collect();
    let r = evaluate_records(&preds, &truth).unwrap();
    assert_eq!(r.accuracy_mean, 1.0);
    assert_eq!(r.map, 1.0);
    assert!(r.cooccurrence_diff.iter().flatten().all(|&v| v == 0.0));
    for v in &truth {
        let rows: Vec<&PredictionRecord> = preds.iter().filter(|p| p.video_id == v.video_id).collect();
        let phases: Vec<usize> = rows.iter().map(|p| p.phase_pred).collect();
        let tools: Vec<Vec<u8>> = rows
            .iter()
            .map(|p| p.tool_probs.iter().map(|&q| (q >= 0.5) as u8).collect())
            .collect();
        assert_eq!(image::phase_ribbon(&v.phases, 2, 12), image::phase_ribbon(&phases, 2, 12));
        assert_eq!(image::tool_ribbon(&v.tools, 2, 4), image::tool_ribbon(&tools, 2, 4));
    }
}

#[test]
fn report_matrices_round_trip() {
    let truth = truths();
    let mut preds: Vec<PredictionRecord> = truth.iter().flat_map(oracle_predictions).collect();
    for (i, p) in preds.iter_mut().enumerate().filter(|(i, _)| i % 5 == 0) {
        p.phase_pred = (p.phase_pred + 1) % 7;
        p.tool_probs[i % 7] = 1.0 - p.tool_probs[i % 7];
    }
    let r = evaluate_records(&preds, &truth).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_report(&r, dir.path()).unwrap();
    assert_eq!(read_matrix_csv(&dir.path().join("confusion.csv")).unwrap(), r.confusion.normalized);
    assert_eq!(read_matrix_csv(&dir.path().join("cooccurrence_gt.csv")).unwrap(), r.cooccurrence_gt.normalized);
    assert_eq!(read_matrix_csv(&dir.path().join("cooccurrence_pred.csv")).unwrap(), r.cooccurrence_pred.normalized);
    assert_eq!(read_matrix_csv(&dir.path().join("cooccurrence_diff.csv")).unwrap(), r.cooccurrence_diff);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["num_frames"], r.num_frames);
}

#[test]
fn predictions_round_trip() {
    let truth = truths();
    let mut preds: Vec<PredictionRecord> = truth.iter().flat_map(oracle_predictions).collect();
    for (i, p) in preds.iter_mut().enumerate() {
        p.tool_probs[0] = 1.0 / (i as f64 + 3.0);
        p.phase_probs[6] = (i as f64).sqrt() / 1e3;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pred.csv");
    write_predictions(&path, &preds).unwrap();
    assert_eq!(read_predictions(&path).unwrap(), preds);
}
