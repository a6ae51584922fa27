//! run, compare, plot and inspect-partition through the library entry points.

use uavfl::cli::{cmd_compare, cmd_inspect_partition, cmd_plot, cmd_run, ConfigArgs, PlotMetric};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("uavfl-cli-workflow");
    let args = |extra: &[&str]| ConfigArgs {
        config: None,
        set: ["data.source=synthetic", "fleet.clients=10", "run.rounds=8", "model.lr=0.1", "selection.eps=0.9"]
            .iter()
            .chain(extra)
            .map(|s| s.to_string())
            .collect(),
        seed: Some(3),
        out_dir: Some(out.clone()),
    };
    let mut dirs = Vec::new();
    for strategy in ["proposed", "random"] {
        let written = cmd_run(&args(&[&format!("selection.strategy={strategy}")]))?;
        dirs.push(written[0].0.clone());
    }
    print!("{}", cmd_compare(&dirs)?);
    let (svg, csv) = cmd_plot(&dirs, PlotMetric::Accuracy, &out.join("accuracy.svg"))?;
    println!("plot {} and {}", svg.display(), csv.display());
    for line in cmd_inspect_partition(&args(&[]))?.lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
