//! Exact parameter and FLOP accounting, and what replacing attention saves.

use amtsfm::cost::{analytic_cost, compare, measured_cost};
use amtsfm::model::{AmtsfmModel, Batch, ModelConfig};
use amtsfm::prune::{prune_config, PruneSpec};
use amtsfm::{Result, Tensor};

pub fn run_example() -> Result<()> {
    for cfg in [ModelConfig::reference_stf(), ModelConfig::reference_ltsf()] {
        let pruned = prune_config(&cfg, &PruneSpec::all())?.config;
        println!("{:?} reference, one sample:", cfg.task);
        print!("{}", analytic_cost(&cfg, 1).to_table());
        print!("{}", compare(&cfg, &pruned).to_table());
        println!();
    }

    // The analytic count is what the instrumented forward pass measures.
    let mut cfg = ModelConfig::stf(5, 8, 16, 2, 1);
    cfg.lookback = 6;
    cfg.horizon = 4;
    let model = AmtsfmModel::new(cfg.clone(), 0)?;
    let batch = Batch::new(Tensor::zeros(&[2, 6, 5, 1]));
    let measured = measured_cost(&model, &batch)?;
    println!("analytic {} FLOPs, measured {}", analytic_cost(&cfg, 2).total_flops, measured.total_flops);
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
