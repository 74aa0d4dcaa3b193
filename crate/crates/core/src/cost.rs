//! Analytic FLOPs and parameter counts, with a measured counterpart read off
//! the tape's operation counter.
//!
//! Convention: a multiply-add is 2 FLOPs, so `[m,k]·[k,n]` costs `2mkn`;
//! elementwise ops cost 1 per output element; softmax over `n` costs `5n`;
//! LayerNorm over `d` costs `8d`; data movement is free. Costs are for one
//! evaluation-mode forward pass, so dropout is free too.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{attention_flops, block_flops, ffn_tail_flops, wrapper_flops, BlockSpec};
use crate::error::Result;
use crate::model::{AmtsfmModel, Batch, DecoderKind, ModelConfig, ProjectionHead, DAYS_PER_WEEK};
use crate::tensor::{Mode, Tape};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_flops: u64,
}

impl CostReport {
    fn from_rows(rows: Vec<CostRow>) -> Self {
        let total_params = rows.iter().map(|r| r.params).sum();
        let total_flops = rows.iter().map(|r| r.flops).sum();
        Self { rows, total_params, total_flops }
    }

    pub fn row(&self, name: &str) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost report serialises")
    }

    /// Aligned text table with a totals line.
    pub fn to_table(&self) -> String {
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
        let mut s = format!("{:<w$}  {:>12}  {:>16}\n", "block", "params", "flops");
        for r in &self.rows {
            let _ = writeln!(s, "{:<w$}  {:>12}  {:>16}", r.name, r.params, r.flops);
        }
        let _ = writeln!(s, "{:<w$}  {:>12}  {:>16}", "total", self.total_params, self.total_flops);
        s
    }
}

/// `100·(old − new)/old`; zero when `old` is zero.
pub fn reduction_pct(old: u64, new: u64) -> f64 {
    if old == 0 {
        0.0
    } else {
        100.0 * (old as f64 - new as f64) / old as f64
    }
}

/// Rounds to the three decimals used when reporting percentages.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostComparison {
    pub original: CostReport,
    pub pruned: CostReport,
    pub flops_drop_pct: f64,
    pub params_drop_pct: f64,
}

impl CostComparison {
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("comparison serialises");
        v["flops_drop_pct"] = round3(self.flops_drop_pct).into();
        v["params_drop_pct"] = round3(self.params_drop_pct).into();
        serde_json::to_string_pretty(&v).expect("comparison serialises")
    }

    pub fn to_table(&self) -> String {
        let names: Vec<&str> = {
            let mut n: Vec<&str> = self.original.rows.iter().map(|r| r.name.as_str()).collect();
            for r in &self.pruned.rows {
                if !n.contains(&r.name.as_str()) {
                    n.push(&r.name);
                }
            }
            n
        };
        let w = names.iter().map(|n| n.len()).max().unwrap_or(0).max(5);
        let mut s = format!(
            "{:<w$}  {:>12}  {:>12}  {:>16}  {:>16}\n",
            "block", "params(a)", "params(b)", "flops(a)", "flops(b)"
        );
        let get = |rep: &CostReport, n: &str| rep.row(n).map_or((0, 0), |r| (r.params, r.flops));
        for n in names {
            let (pa, fa) = get(&self.original, n);
            let (pb, fb) = get(&self.pruned, n);
            let _ = writeln!(s, "{n:<w$}  {pa:>12}  {pb:>12}  {fa:>16}  {fb:>16}");
        }
        let _ = writeln!(
            s,
            "{:<w$}  {:>12}  {:>12}  {:>16}  {:>16}",
            "total", self.original.total_params, self.pruned.total_params, self.original.total_flops, self.pruned.total_flops
        );
        let _ = writeln!(s, "FLOPs drop: {:.3}%", self.flops_drop_pct);
        let _ = writeln!(s, "params drop: {:.3}%", self.params_drop_pct);
        s
    }
}

pub fn compare(a: &ModelConfig, b: &ModelConfig) -> CostComparison {
    compare_reports(analytic_cost(a, 1), analytic_cost(b, 1))
}

pub fn compare_reports(original: CostReport, pruned: CostReport) -> CostComparison {
    CostComparison {
        flops_drop_pct: reduction_pct(original.total_flops, pruned.total_flops),
        params_drop_pct: reduction_pct(original.total_params, pruned.total_params),
        original,
        pruned,
    }
}

fn attn_params(d: u64) -> u64 {
    4 * (d * d + d)
}

/// Closed-form parameter count of one block.
pub fn block_params(spec: &BlockSpec) -> u64 {
    let (d, ff) = (spec.d_model as u64, spec.d_ff as u64);
    let mut p = 0;
    if spec.kind.is_attention() {
        p += attn_params(d);
    }
    if spec.use_layernorm {
        p += 2 * d;
    }
    if spec.use_feedforward {
        p += 2 * d * ff + ff + d;
        if spec.use_layernorm {
            p += 2 * d;
        }
    }
    p
}

fn embedding_row(cfg: &ModelConfig, batch: u64) -> CostRow {
    let (c, d, n, t) = (cfg.in_features as u64, cfg.d_model as u64, cfg.nodes as u64, cfg.lookback as u64);
    let rows = batch * t * n;
    let mut params = c * d + d;
    let mut flops = 2 * rows * c * d + rows * d;
    let e = &cfg.embedding;
    for (on, table) in [
        (e.time_of_day, e.steps_per_day as u64),
        (e.day_of_week, DAYS_PER_WEEK as u64),
        (e.node_embedding, n),
    ] {
        if on {
            params += table * d;
            flops += rows * d;
        }
    }
    CostRow { name: "embedding".into(), params, flops }
}

fn decoder_row(cfg: &ModelConfig, batch: u64) -> CostRow {
    let (d, c, n, t, h) = (
        cfg.d_model as u64,
        cfg.out_features as u64,
        cfg.nodes as u64,
        cfg.lookback as u64,
        cfg.horizon as u64,
    );
    let (params, flops) = match cfg.decoder {
        DecoderKind::Projection => match cfg.projection_head {
            ProjectionHead::Factorized => (
                t * h + h + d * c + c,
                batch * n * (2 * d * t * h + d * h) + batch * h * n * (2 * d * c + c),
            ),
            ProjectionHead::Flatten => (t * d * h * c + h * c, batch * n * (2 * t * d * h * c + h * c)),
        },
        DecoderKind::Attention => {
            let mut params = d + c * d + d + d * c + c;
            for layer in &cfg.decoder_layers {
                let spec = cfg.block_spec(layer);
                params += block_params(&spec);
                if spec.kind.is_attention() {
                    params += attn_params(d);
                }
                if spec.use_layernorm {
                    params += 2 * d;
                }
            }
            let heads = cfg.heads as u64;
            let mut per_series = 0;
            for k in 1..=h {
                per_series += 2 * (k - 1) * c * d + (k - 1) * d;
                for layer in &cfg.decoder_layers {
                    let spec = cfg.block_spec(layer);
                    if spec.kind.is_attention() {
                        per_series += attention_flops(k, k, d, heads) + attention_flops(k, t, d, heads);
                    } else {
                        per_series += t * d + d;
                    }
                    per_series += 2 * wrapper_flops(&spec, k) + ffn_tail_flops(&spec, k);
                }
                per_series += 2 * d * c + c;
            }
            (params, batch * n * per_series)
        }
    };
    CostRow { name: "decoder".into(), params, flops }
}

/// Exact inference cost of a model built from `cfg` on `batch` samples.
pub fn analytic_cost(cfg: &ModelConfig, batch: usize) -> CostReport {
    let b = batch as u64;
    let (t, n) = (cfg.lookback, cfg.nodes);
    let mut rows = vec![embedding_row(cfg, b)];
    for (l, layer) in cfg.encoder_temporal.iter().enumerate() {
        let spec = cfg.block_spec(layer);
        rows.push(CostRow {
            name: format!("encoder.temporal.{l}"),
            params: block_params(&spec),
            flops: b * n as u64 * block_flops(&spec, t),
        });
    }
    for (l, layer) in cfg.encoder_spatial.iter().enumerate() {
        let spec = cfg.block_spec(layer);
        rows.push(CostRow {
            name: format!("encoder.spatial.{l}"),
            params: block_params(&spec),
            flops: b * t as u64 * block_flops(&spec, n),
        });
    }
    rows.push(decoder_row(cfg, b));
    CostReport::from_rows(rows)
}

/// Cost read from one instrumented evaluation-mode forward pass.
pub fn measured_cost(model: &AmtsfmModel, batch: &Batch) -> Result<CostReport> {
    let mut tape = Tape::new();
    let bound = model.params().bind_constant(&mut tape);
    let mut batch = batch.clone();
    batch.targets = None;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    model.forward(&mut tape, &bound, &batch, Mode::Eval, &mut rng)?;
    let by_scope = tape.flops().by_scope();
    let cfg = model.config();
    let mut names = vec!["embedding".to_string()];
    names.extend((0..cfg.encoder_temporal.len()).map(|l| format!("encoder.temporal.{l}")));
    names.extend((0..cfg.encoder_spatial.len()).map(|l| format!("encoder.spatial.{l}")));
    names.push("decoder".into());
    let mut rows: Vec<CostRow> = names
        .iter()
        .map(|name| CostRow {
            name: name.clone(),
            params: model.params().numel_prefixed(&format!("{name}.")) as u64,
            flops: by_scope.get(name).copied().unwrap_or(0),
        })
        .collect();
    let other: u64 = by_scope
        .iter()
        .filter(|(k, _)| !names.contains(k))
        .map(|(_, v)| v)
        .sum();
    if other > 0 {
        rows.push(CostRow { name: "other".into(), params: 0, flops: other });
    }
    Ok(CostReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{block_param_count, BlockKind, NormPlacement};
    use crate::model::LayerSpec;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn measure(cfg: &ModelConfig, batch: usize, seed: u64) -> CostReport {
        let model = AmtsfmModel::new(cfg.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(&[batch, cfg.lookback, cfg.nodes, cfg.in_features], 1.0, &mut rng);
        let len = batch * cfg.lookback;
        let batch = Batch {
            x,
            tod: Some((0..len).map(|i| i % cfg.embedding.steps_per_day).collect()),
            dow: Some((0..len).map(|i| i % 7).collect()),
            targets: None,
        };
        measured_cost(&model, &batch).unwrap()
    }

    fn random_layer(rng: &mut ChaCha8Rng, attention: BlockKind) -> LayerSpec {
        LayerSpec {
            kind: if rng.random_bool(0.5) { attention } else { BlockKind::Mlp },
            use_feedforward: rng.random_bool(0.7),
            use_residual: rng.random_bool(0.7),
            use_layernorm: rng.random_bool(0.7),
        }
    }

    fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
        let heads = rng.random_range(1..=2);
        let mut cfg = ModelConfig::stf(rng.random_range(1..=4), 2 * heads * rng.random_range(1..=2), rng.random_range(1..=6), heads, 0);
        cfg.lookback = rng.random_range(1..=5);
        cfg.horizon = rng.random_range(1..=4);
        cfg.in_features = rng.random_range(1..=2);
        cfg.out_features = rng.random_range(1..=2);
        cfg.embedding.time_of_day = rng.random_bool(0.5);
        cfg.embedding.steps_per_day = 6;
        cfg.embedding.day_of_week = rng.random_bool(0.5);
        cfg.embedding.node_embedding = rng.random_bool(0.5);
        if rng.random_bool(0.3) {
            cfg.norm_placement = NormPlacement::Inside;
        }
        for _ in 0..rng.random_range(0..=2) {
            cfg.encoder_temporal.push(random_layer(rng, BlockKind::TemporalAttention));
        }
        for _ in 0..rng.random_range(1..=2) {
            cfg.encoder_spatial.push(random_layer(rng, BlockKind::SpatialAttention));
        }
        if rng.random_bool(0.5) {
            cfg.decoder = DecoderKind::Attention;
            for _ in 0..rng.random_range(1..=2) {
                cfg.decoder_layers.push(random_layer(rng, BlockKind::TemporalAttention));
            }
        }
        cfg
    }

    #[test]
    fn measured_equals_analytic_on_random_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..25 {
            let cfg = random_config(&mut rng);
            let batch = rng.random_range(1..=2);
            let measured = measure(&cfg, batch, i);
            assert_eq!(measured, analytic_cost(&cfg, batch), "config {i}: {cfg:?}");
            let model = AmtsfmModel::new(cfg.clone(), i).unwrap();
            assert_eq!(model.param_count() as u64, measured.total_params);
        }
    }

    #[test]
    fn closed_form_block_params_agree_with_registry() {
        for kind in [BlockKind::TemporalAttention, BlockKind::Mlp] {
            for flags in 0..8u8 {
                let mut spec = BlockSpec::new(kind, 4, 8, 2);
                spec.use_feedforward = flags & 1 != 0;
                spec.use_residual = flags & 2 != 0;
                spec.use_layernorm = flags & 4 != 0;
                assert_eq!(block_params(&spec), block_param_count(&spec));
            }
        }
        assert_eq!(block_params(&BlockSpec::new(BlockKind::Mlp, 4, 8, 1)), 92);
    }

    #[test]
    fn totals_are_row_sums() {
        let r = analytic_cost(&ModelConfig::reference_stf(), 1);
        assert_eq!(r.total_flops, r.rows.iter().map(|x| x.flops).sum::<u64>());
        assert_eq!(r.total_params, r.rows.iter().map(|x| x.params).sum::<u64>());
    }

    #[test]
    fn self_comparison_is_zero() {
        let cfg = ModelConfig::reference_ltsf();
        let c = compare(&cfg, &cfg);
        assert_eq!((c.flops_drop_pct, c.params_drop_pct), (0.0, 0.0));
        assert!(c.to_table().contains("FLOPs drop: 0.000%"));
    }

    /// Exact integer fit of `a + b·n + c·n²` through three points.
    fn quadratic_fit(f: impl Fn(u64) -> u64, n: u64) -> (i128, i128, i128) {
        let (y0, y1, y2) = (f(n) as i128, f(2 * n) as i128, f(3 * n) as i128);
        let n = n as i128;
        let c2 = (y2 - 2 * y1 + y0) / (2 * n * n);
        assert_eq!((y2 - 2 * y1 + y0) % (2 * n * n), 0);
        let b = (y1 - y0 - 3 * c2 * n * n) / n;
        let a = y0 - b * n - c2 * n * n;
        (a, b, c2)
    }

    #[test]
    fn attention_is_quadratic_and_mlp_linear_in_length() {
        let att = BlockSpec::new(BlockKind::TemporalAttention, 8, 16, 2);
        let (a, b, c) = quadratic_fit(|n| block_flops(&att, n as usize), 5);
        assert!(c > 0);
        for n in [1u64, 7, 20] {
            assert_eq!(a + b * n as i128 + c * (n as i128).pow(2), block_flops(&att, n as usize) as i128);
        }
        let quadratic = |n: u64| (block_flops(&att, n as usize) - block_flops(&att, 0)) as i128 - b * n as i128;
        assert_eq!(quadratic(10) * 4, quadratic(20));
        let mlp = BlockSpec::new(BlockKind::Mlp, 8, 16, 2);
        let (a, _, c) = quadratic_fit(|n| block_flops(&mlp, n as usize), 5);
        assert_eq!((a, c), (0, 0));
    }

    #[test]
    fn doubling_nodes_doubles_mlp_encoder_flops() {
        let mut cfg = ModelConfig::ltsf(3, 6, 4, 8, 16, 2, 2);
        for l in &mut cfg.encoder_temporal {
            l.kind = BlockKind::Mlp;
        }
        let small = measure(&cfg, 1, 1);
        cfg.nodes = 6;
        let big = measure(&cfg, 1, 1);
        for l in 0..2 {
            let name = format!("encoder.temporal.{l}");
            assert_eq!(2 * small.row(&name).unwrap().flops, big.row(&name).unwrap().flops);
        }
    }

    #[test]
    fn json_rounds_percentages() {
        let mut pruned = ModelConfig::reference_ltsf();
        pruned.encoder_temporal[0].kind = BlockKind::Mlp;
        let c = compare(&ModelConfig::reference_ltsf(), &pruned);
        let v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(v["flops_drop_pct"].as_f64().unwrap(), round3(c.flops_drop_pct));
        assert!(c.flops_drop_pct > 0.0);
    }
}
