// scratch probe: is refined-box averaging hurting the fused evaluation?
use mspld::config::ExperimentConfig;
use mspld::data::{generate_proposals, generate_synthetic_dataset, DatasetSplit};
use mspld::detector::{fuse, DetectionOutput, DetectorModel};
use mspld::engine::{Engine, RunConfig};
use mspld::eval::{average_precision, ApMode, ImageEval};
use mspld::geometry::{nms, ScoredBox};

fn detections(out: &DetectionOutput, nms_iou: f64, c: usize) -> Vec<ScoredBox> {
    let mut dets = Vec::new();
    for class_id in 0..c {
        let cands: Vec<ScoredBox> = out.effective_boxes().iter().zip(&out.scores)
            .map(|(b, row)| ScoredBox { bbox: *b, class_id, score: row[class_id] }).collect();
        dets.extend(nms(&cands, nms_iou));
    }
    dets
}

fn eval_fused(models: &[DetectorModel], d: &DatasetSplit, cfg: &RunConfig, strip: bool, blend: &str) -> f64 {
    let images: Vec<ImageEval> = d.test_ids.iter().map(|&id| {
        let im = d.image(id);
        let props = generate_proposals(im, &cfg.proposals, cfg.seed).proposals;
        let mut outs: Vec<DetectionOutput> = models.iter().map(|m| m.score(im, &props).unwrap()).collect();
        if strip { for o in &mut outs { o.refined = None; } }
        let mut fused = fuse(&outs).unwrap();
        if blend == "argmax_model" {
            // alternative: take the refined box from the model most confident on the fused argmax class
            let refined: Vec<_> = (0..props.len()).map(|i| {
                let row = &fused.scores[i];
                let best_c = (0..row.len()).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
                let best_m = (0..outs.len()).max_by(|&a, &b| outs[a].scores[i][best_c].partial_cmp(&outs[b].scores[i][best_c]).unwrap()).unwrap();
                outs[best_m].refined.as_ref().unwrap()[i]
            }).collect();
            fused.refined = Some(refined);
        }
        ImageEval { detections: detections(&fused, cfg.eval_nms_iou, d.num_classes), ground_truth: im.objects.clone() }
    }).collect();
    average_precision(&images, d.num_classes, 0.5, ApMode::ElevenPoint).mean.unwrap_or(0.0)
}

fn main() {
    let config = ExperimentConfig::reference(42);
    let dataset = generate_synthetic_dataset(&config.scene, 42).unwrap();
    let mut full = dataset.clone();
    let ids: Vec<u64> = full.unlabeled_ids.iter().copied().collect();
    for id in ids { full.unlabeled_ids.remove(&id); full.labeled_ids.insert(id); }
    let engine = Engine::new(&config.run, &full).unwrap();
    let state = engine.initial_state().unwrap();
    println!("full labels: fused mean-boxes {:.4}", eval_fused(&state.models, &full, &config.run, false, "mean"));
    println!("full labels: fused no-refined {:.4}", eval_fused(&state.models, &full, &config.run, true, "mean"));
    println!("full labels: fused best-model-box {:.4}", eval_fused(&state.models, &full, &config.run, false, "argmax_model"));
}
