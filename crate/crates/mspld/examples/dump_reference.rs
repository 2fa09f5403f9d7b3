fn main() {
    let cfg = mspld::config::ExperimentConfig::reference(42);
    println!("{}", serde_json::to_string_pretty(&cfg).unwrap());
}
