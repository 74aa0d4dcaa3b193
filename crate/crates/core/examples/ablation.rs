//! The ablation grid: which blocks are replaced and what each variant costs.

use amtsfm::cost::{analytic_cost, reduction_pct};
use amtsfm::model::{DecoderKind, LayerSpec, ModelConfig};
use amtsfm::prune::ablation_grid;
use amtsfm::Result;

pub fn run_example() -> Result<()> {
    let mut cfg = ModelConfig::reference_stf();
    cfg.decoder = DecoderKind::Attention;
    cfg.decoder_layers = vec![LayerSpec::full(amtsfm::blocks::BlockKind::TemporalAttention); 2];
    let base = analytic_cost(&cfg, 1);
    println!("{:<13} {:>14} {:>9} {:>12} {:>9}", "variant", "FLOPs", "FLOPs↓", "params", "params↓");
    for (name, variant) in ablation_grid(&cfg)? {
        let c = analytic_cost(&variant, 1);
        println!(
            "{name:<13} {:>14} {:>8.3}% {:>12} {:>8.3}%",
            c.total_flops,
            reduction_pct(base.total_flops, c.total_flops),
            c.total_params,
            reduction_pct(base.total_params, c.total_params)
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
