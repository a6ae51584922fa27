//! The desk-scale scenario: proposed selection against random selection.

use uavfl::orchestrator::{load_datasets, run_experiment_on, summary_csv, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = ExperimentConfig::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/scenario1.toml"))?;
    let data = load_datasets(&base)?;
    let mut rows = Vec::new();
    for strategy in ["proposed", "random", "speed", "divergence", "capped"] {
        let mut cfg = base.clone();
        cfg.apply_override(&format!("selection.strategy={strategy}"))?;
        let r = run_experiment_on(&cfg, &data)?;
        let last = r.rounds.last().expect("at least one round");
        println!("{strategy:<10} selected {:?} aggregated {:?}", last.selected, last.aggregated);
        rows.push(r.summary);
    }
    print!("\n{}", summary_csv(&rows)?);
    Ok(())
}
