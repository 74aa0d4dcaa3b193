//! Original vs attention-replaced model over several seeds, as a table.
//!
//! `cargo run --release --example comparison -- full` runs the desk-scale
//! experiment; without the argument a trimmed version runs in seconds.

use amtsfm::experiment::Experiment;
use amtsfm::prune::prune_config;
use amtsfm::trainer::run_comparison;
use amtsfm::Result;

fn experiment(full: bool) -> Experiment {
    let mut exp = Experiment::desk_stf();
    if !full {
        exp.data = amtsfm::experiment::DataSource::SynthStf(amtsfm::data::SynthStf::new(16, 1200, 7));
        exp.train.max_epochs = 3;
        exp.train.max_batches_per_epoch = Some(5);
        exp.train.seeds = vec![0, 1];
    }
    exp
}

fn run(full: bool) -> Result<()> {
    let exp = experiment(full);
    let pruned = prune_config(&exp.model, &exp.prune_spec())?.config;
    let report = run_comparison(&exp.model, &pruned, &exp.prepare()?, &exp.train)?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn run_example() -> Result<()> {
    run(false)
}

fn main() -> Result<()> {
    run(std::env::args().any(|a| a == "full"))
}
