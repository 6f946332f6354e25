//! Runs the synthetic transfer benchmark in-process and prints the report.
//!
//! cargo run --release -p mlsd --example transfer -- [seeds...]

use mlsd::stance::experiment::DEFAULT_SEEDS;
use mlsd::stance::{run_experiment, ExperimentInputs, MlsdShots};
use mlsd::synthetic::{transfer_benchmark, transfer_settings, TransferSizes};

fn main() -> anyhow::Result<()> {
    let seeds: Vec<u64> = std::env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    let seeds = if seeds.is_empty() { DEFAULT_SEEDS.to_vec() } else { seeds };

    let bench = transfer_benchmark(TransferSizes::default(), 0)?;
    let inputs = ExperimentInputs {
        source_name: "synthetic-source".into(),
        destination_name: "synthetic-destination".into(),
        source: &bench.source,
        destination: &bench.destination,
        noise: &bench.noise,
        store: &bench.store,
        mining_store: None,
    };
    let report = run_experiment(&inputs, &transfer_settings(seeds), MlsdShots::PerSeed)?;
    print!("{}", report.to_text());
    Ok(())
}
