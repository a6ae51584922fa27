//! Attacked runs paired with their no-attack twins.
//!
//! `cargo run --release --example attack_resistance -- [targeted|untargeted] [key=value ...]`

use uavfl::orchestrator::{load_datasets, run_with_reference, summary_csv, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let kind = args.next().unwrap_or_else(|| "untargeted".into());
    let path = format!("{}/../../configs/scenario1-{kind}.toml", env!("CARGO_MANIFEST_DIR"));
    let mut base = ExperimentConfig::from_file(path)?;
    base.apply_overrides(&args.collect::<Vec<_>>())?;
    let data = load_datasets(&base)?;
    let mut rows = Vec::new();
    for strategy in ["proposed", "random", "kmeans"] {
        let mut cfg = base.clone();
        cfg.apply_override(&format!("selection.strategy={strategy}"))?;
        let (attacked, twin) = run_with_reference(&cfg, &data)?;
        println!("{strategy}: attackers {:?}", attacked.malicious);
        for log in attacked.rounds.iter().rev().take(3).rev() {
            println!("  round {:2} flagged {:?} aggregated {:?}", log.round, log.flagged, log.aggregated);
        }
        rows.push(attacked.summary);
        rows.extend(twin.map(|t| t.summary));
    }
    print!("\n{}", summary_csv(&rows)?);
    Ok(())
}
