// scratch probe: headroom = fully-supervised ceiling vs k=3 seed models
use mspld::config::ExperimentConfig;
use mspld::data::{generate_synthetic_dataset, sample_initial_labels, DatasetSplit};
use mspld::engine::{Engine, RunConfig, RunMode};

fn eval_with_labels(config: &RunConfig, labeled: &DatasetSplit) -> (Vec<f64>, f64) {
    let engine = Engine::new(config, labeled).unwrap();
    let state = engine.initial_state().unwrap();
    let per: Vec<f64> = state
        .models
        .iter()
        .map(|m| engine.evaluate_model_on_test(m).mean.unwrap_or(0.0))
        .collect();
    let fused = engine.evaluate_fused_on_test(&state.models).mean.unwrap_or(0.0);
    (per, fused)
}

fn main() {
    let config = ExperimentConfig::reference(42);
    let dataset = generate_synthetic_dataset(&config.scene, 42).unwrap();

    // ceiling: every train image labeled
    let mut full = dataset.clone();
    let ids: Vec<u64> = full.unlabeled_ids.iter().copied().collect();
    for id in ids {
        full.unlabeled_ids.remove(&id);
        full.labeled_ids.insert(id);
    }
    let (per, fused) = eval_with_labels(&config.run, &full);
    println!("ceiling (all labels): per-model {:?} fused {:.4}", per.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>(), fused);

    // seed-only: k=3
    for seed in [1u64, 2, 3] {
        let labeled = sample_initial_labels(&dataset, config.run.labels_per_class, seed).unwrap();
        let (per, fused) = eval_with_labels(&config.run, &labeled);
        println!("k=3 seed {seed}: per-model {:?} fused {:.4} ({} labeled)",
            per.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>(), fused, labeled.labeled_ids.len());
    }
}
