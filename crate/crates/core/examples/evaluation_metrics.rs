//! Attack success rates, detection rates and run-level aggregates.

use uavfl::metrics::{asr_targeted, asr_targeted_class, asr_untargeted, detection_rates, dropout_ratio};
use uavfl::orchestrator::{run_experiment, ExperimentConfig};
use uavfl::ClientId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = vec![5, 5, 5, 5, 3, 1, 2, 0, 5, 4];
    let pred = vec![3, 3, 5, 5, 3, 1, 2, 0, 5, 4];
    println!("ASR_ta {:.2}, within class 5 {:?}", asr_targeted(&pred, &truth, 5)?, asr_targeted_class(&pred, &truth, 5)?);
    println!("ASR_ua for 0.90 -> 0.72: {:.2}", asr_untargeted(0.90, 0.72)?);
    let ids = |v: &[u32]| v.iter().map(|&i| ClientId(i)).collect::<Vec<_>>();
    let rates = detection_rates(&ids(&[1, 7]), &ids(&[7, 8]), &ids(&(0..10).collect::<Vec<_>>()))?;
    println!("FP {:?}, FN {:?}", rates.fp, rates.fn_rate);

    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&[
        "data.source=synthetic",
        "fleet.clients=10",
        "fleet.dropouts=3",
        "run.rounds=5",
        "model.epochs=2",
        "model.lr=0.1",
        "selection.eps=0.9",
    ])?;
    let result = run_experiment(&cfg)?;
    println!("chi_d {:.3}, tau_a {:?}", dropout_ratio(&result.rounds)?, result.summary.tau_a);
    Ok(())
}
