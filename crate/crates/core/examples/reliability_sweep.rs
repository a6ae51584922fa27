//! Accuracy as the admission threshold approaches the reset ceiling.

use uavfl::orchestrator::{run_sweep, summary_csv, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = ExperimentConfig::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/scenario1.toml"))?;
    let runs = run_sweep(&base, "selection.rho", &["-5", "5", "9"])?;
    for (rho, r) in &runs {
        println!("rho {rho:>3}: A_g {:?}, mean aggregated {:.2}", r.summary.final_accuracy, r.summary.mean_aggregated);
    }
    print!("\n{}", summary_csv(&runs.into_iter().map(|(_, r)| r.summary).collect::<Vec<_>>())?);
    Ok(())
}
