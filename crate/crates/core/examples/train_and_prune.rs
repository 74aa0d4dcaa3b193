//! Train a small model, prune its attention blocks, fine-tune and checkpoint.

use amtsfm::data::{synth_stf, Split, SplitRatios, SynthStf};
use amtsfm::model::{load_checkpoint, save_checkpoint, AmtsfmModel, ModelConfig};
use amtsfm::prune::{prune_weights, PruneSpec};
use amtsfm::trainer::{evaluate, train, Optimizer, Prepared, TrainConfig};
use amtsfm::Result;

pub fn run_example() -> Result<()> {
    let ds = synth_stf(&SynthStf { steps_per_day: 48, ..SynthStf::new(6, 960, 2) })?;
    let data = Prepared::new(ds, SplitRatios::STANDARD)?;
    let mut cfg = ModelConfig::stf(6, 8, 16, 2, 1);
    cfg.embedding.time_of_day = true;
    cfg.embedding.steps_per_day = 48;
    cfg.embedding.node_embedding = true;
    let tc = TrainConfig {
        optimizer: Optimizer::adam(3e-3),
        max_epochs: 6,
        patience: 2,
        train_stride: 2,
        eval_stride: 4,
        max_batches_per_epoch: Some(10),
        seeds: vec![0],
        ..TrainConfig::default()
    };

    let trained = train(AmtsfmModel::new(cfg, 0)?, &data, &tc, 0)?;
    print!("{}", trained.history_csv());
    let before = evaluate(&trained.model, &data, Split::Test, &tc)?;
    println!("original: MAE {:.4} with {} parameters", before.overall.mae, trained.model.param_count());

    let (pruned, warnings) = prune_weights(&trained.model, &PruneSpec::encoder())?;
    warnings.iter().for_each(|w| println!("warning: {w}"));
    let tuned = train(pruned, &data, &tc, 0)?;
    let after = evaluate(&tuned.model, &data, Split::Test, &tc)?;
    println!("pruned:   MAE {:.4} with {} parameters", after.overall.mae, tuned.model.param_count());

    let dir = std::env::temp_dir().join(format!("amtsfm-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("pruned.ckpt");
    save_checkpoint(&tuned.model, &path)?;
    let loaded = load_checkpoint(&path)?;
    println!("checkpoint round trip identical: {}", loaded == tuned.model);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
