// scratch probe: criterion 7-style dynamics + criterion 8 noise variant
use mspld::cli::run_comparison;
use mspld::config::ExperimentConfig;
use mspld::data::{generate_synthetic_dataset, sample_initial_labels};
use mspld::engine::Engine;

fn main() {
    let config = ExperimentConfig::reference(42);
    let dataset = generate_synthetic_dataset(&config.scene, 42).unwrap();

    for seed in [1u64, 2, 3] {
        let labeled = sample_initial_labels(&dataset, 3, seed).unwrap();
        let out = Engine::new(&config.run, &labeled).unwrap().run().unwrap();
        let recalls: Vec<f64> = out.traces.iter().map(|t| {
            t.models.iter().map(|m| m.ins_recall).sum::<f64>() / t.models.len() as f64
        }).collect();
        let maps: Vec<f64> = out.traces.iter().map(|t| t.fused_test_map.unwrap_or(0.0)).collect();
        let nondec = recalls.windows(2).take(3).all(|w| w[1] >= w[0] - 1e-12);
        println!("seed {seed}: mean-recall {:?} nondec1..4 {nondec}", recalls.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
        println!("        fused maps {:?} final>first {}", maps.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>(), maps.last() > maps.first());
    }

    // noise variant: equal count of distractors (100% noise scale)
    let mut noisy_cfg = ExperimentConfig::reference(42);
    noisy_cfg.scene.num_images = 600;
    noisy_cfg.scene.distractor_fraction = 0.5;
    let noisy = generate_synthetic_dataset(&noisy_cfg.scene, 42).unwrap();
    let report = run_comparison(&noisy_cfg, &noisy).unwrap();
    for m in &report.methods {
        println!("noisy {:<28} map {:.4} ±{:.4}", m.method, m.map_mean, m.map_std);
    }
    let best = report.best_single_map();
    let ens = report.method("spl_ensemble").unwrap().map_mean;
    let mspld = report.method("mspld").unwrap().map_mean;
    println!("noisy ordering: mspld {:.4} >= ens {:.4}: {}  ens >= best {:.4}: {}",
        mspld, ens, mspld >= ens, best, ens >= best);
}
