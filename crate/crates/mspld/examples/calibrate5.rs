// scratch probe: pseudo-box geometry quality، mspld vs singles
use mspld::config::ExperimentConfig;
use mspld::data::{generate_synthetic_dataset, sample_initial_labels, DatasetSplit};
use mspld::engine::{Engine, RunConfig, RunMode, RunOutcome};
use mspld::geometry::iou;

fn pseudo_stats(d: &DatasetSplit, run: &RunOutcome, model: usize) -> (usize, f64, f64) {
    let pseudo = &run.state.training_pseudo[model];
    let mut n = 0usize;
    let mut iou_sum = 0.0;
    let mut class_ok = 0usize;
    for (&id, boxes) in pseudo {
        let gt = &d.image(id).objects;
        for b in boxes {
            n += 1;
            let best = gt.iter().filter(|g| g.class_id == b.class_id)
                .map(|g| iou(&g.bbox, &b.bbox)).fold(0.0f64, f64::max);
            iou_sum += gt.iter().map(|g| iou(&g.bbox, &b.bbox)).fold(0.0f64, f64::max);
            if best >= 0.5 { class_ok += 1; }
        }
    }
    (n, iou_sum / n.max(1) as f64, class_ok as f64 / n.max(1) as f64)
}

fn main() {
    let config = ExperimentConfig::reference(42);
    let dataset = generate_synthetic_dataset(&config.scene, 42).unwrap();
    let labeled = sample_initial_labels(&dataset, 3, 1).unwrap();

    for (j, spec) in config.run.models.iter().enumerate() {
        let single = RunConfig { mode: RunMode::SplSingle, models: vec![spec.clone()], ..config.run.clone() };
        let out = Engine::new(&single, &labeled).unwrap().run().unwrap();
        let (n, miou, prec) = pseudo_stats(&labeled, &out, 0);
        println!("single {j}: boxes {n:3} mean-anyclass-iou {miou:.3} insP {prec:.3} final map {:.3}",
            out.report.mean_ap.unwrap());
    }
    let out = Engine::new(&config.run, &labeled).unwrap().run().unwrap();
    for j in 0..3 {
        let (n, miou, prec) = pseudo_stats(&labeled, &out, j);
        println!("mspld  {j}: boxes {n:3} mean-anyclass-iou {miou:.3} insP {prec:.3} model map {:.3}",
            out.report.per_model_map[j].unwrap());
    }
    println!("mspld fused {:.3}", out.report.mean_ap.unwrap());
}
