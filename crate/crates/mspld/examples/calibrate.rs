// scratch probe for tuning the reference scene; not part of the test suite
use mspld::cli::run_comparison;
use mspld::config::ExperimentConfig;
use mspld::data::generate_synthetic_dataset;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let data_seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let t0 = std::time::Instant::now();
    let config = ExperimentConfig::reference(data_seed);
    let dataset = generate_synthetic_dataset(&config.scene, data_seed).unwrap();
    let report = run_comparison(&config, &dataset).unwrap();
    for m in &report.methods {
        println!(
            "{:<28} map {:.4} ±{:.4}  corloc {:.4}  per-seed {:?}",
            m.method, m.map_mean, m.map_std, m.corloc_mean,
            m.per_seed_map.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
    let best_single = report.best_single_map();
    let ens = report.method("spl_ensemble").unwrap().map_mean;
    let mspld = report.method("mspld").unwrap().map_mean;
    println!("best_single {:.4}  ensemble {:.4}  mspld {:.4}", best_single, ens, mspld);
    println!("mspld - best_single = {:.4} (need >= 0.02)", mspld - best_single);
    println!("ordering: mspld >= ens: {}  ens >= best: {}", mspld >= ens, ens >= best_single);
    println!("elapsed: {:.1}s", t0.elapsed().as_secs_f64());
}
