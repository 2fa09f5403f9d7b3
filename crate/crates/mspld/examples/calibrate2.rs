// scratch probe: per-model trajectories, mspld vs independent singles
use mspld::config::ExperimentConfig;
use mspld::data::{generate_synthetic_dataset, sample_initial_labels};
use mspld::engine::{Engine, RunConfig, RunMode};

fn main() {
    let config = ExperimentConfig::reference(42);
    let dataset = generate_synthetic_dataset(&config.scene, 42).unwrap();
    let labeled = sample_initial_labels(&dataset, config.run.labels_per_class, 1).unwrap();

    println!("=== singles ===");
    let mut single_final = Vec::new();
    for (j, spec) in config.run.models.iter().enumerate() {
        let single = RunConfig { mode: RunMode::SplSingle, models: vec![spec.clone()], ..config.run.clone() };
        let out = Engine::new(&single, &labeled).unwrap().run().unwrap();
        for t in &out.traces {
            let m = &t.models[0];
            println!("model {j} iter {}: sel {:3} boxes {:3} insP {:.3} insR {:.3} map {:.3}",
                t.iteration, m.selected_images, m.pseudo_boxes, m.ins_precision, m.ins_recall,
                m.test_map.unwrap_or(0.0));
        }
        single_final.push(out.report.mean_ap.unwrap());
    }
    println!("single finals: {:?}", single_final);

    println!("=== mspld ===");
    let out = Engine::new(&config.run, &labeled).unwrap().run().unwrap();
    for t in &out.traces {
        for m in &t.models {
            println!("model {} iter {}: sel {:3} boxes {:3} insP {:.3} insR {:.3} map {:.3}",
                m.model_id, t.iteration, m.selected_images, m.pseudo_boxes, m.ins_precision,
                m.ins_recall, m.test_map.unwrap_or(0.0));
        }
        println!("  fused map {:.3}", t.fused_test_map.unwrap_or(0.0));
    }
    println!("mspld per-model finals: {:?}", out.report.per_model_map);
    println!("mspld fused final: {:?}", out.report.mean_ap);
}
