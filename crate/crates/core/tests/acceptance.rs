//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use amtsfm::blocks::{block_forward, init_block_params, BlockCtx, BlockKind, BlockParams, BlockSpec};
use amtsfm::checks::{gcn_equivalence, gradcheck_suite, lemma_suite, CheckLine};
use amtsfm::cost::{analytic_cost, compare, measured_cost};
use amtsfm::experiment::Experiment;
use amtsfm::metrics::{improvement_pct, Metrics};
use amtsfm::model::{decode_attention, embed, encode, AmtsfmModel, Batch, DecoderKind, LayerSpec, ModelConfig, ProjectionHead};
use amtsfm::params::ParamStore;
use amtsfm::prune::{ablation_grid, prune_config, PruneSpec};
use amtsfm::trainer::{compare_variants, run_variant, VariantResult};
use amtsfm::{Mode, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn summarize(lines: &[CheckLine]) -> Verdict {
    let worst = lines.iter().max_by(|a, b| (a.worst / a.tol).total_cmp(&(b.worst / b.tol))).expect("non-empty");
    let cases: usize = lines.iter().map(|l| l.cases).sum();
    let failed: Vec<&str> = lines.iter().filter(|l| !l.passed()).map(|l| l.name.as_str()).collect();
    verdict(
        failed.is_empty(),
        format!(
            "{} checks, {cases} cases, worst {} at {:.3e} (tol {:.0e}){}",
            lines.len(),
            worst.name,
            worst.worst,
            worst.tol,
            if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
        ),
    )
}

fn within(v: Verdict, elapsed: Duration, limit: Duration) -> Verdict {
    let ok = elapsed <= limit;
    verdict(
        v.passed && ok,
        format!("{} [{:.1}s, limit {}s]", v.detail, elapsed.as_secs_f64(), limit.as_secs()),
    )
}

fn gradients() -> Verdict {
    let t = Instant::now();
    let lines = gradcheck_suite(50, 0).unwrap();
    within(summarize(&lines), t.elapsed(), Duration::from_secs(300))
}

fn lemma() -> Verdict {
    let t = Instant::now();
    let lines = lemma_suite(0).unwrap();
    within(summarize(&lines), t.elapsed(), Duration::from_secs(60))
}

fn gcn() -> Verdict {
    let t = Instant::now();
    let line = gcn_equivalence(100, 0).unwrap();
    within(summarize(&[line]), t.elapsed(), Duration::from_secs(60))
}

fn cost_grid() -> Vec<ModelConfig> {
    let mut grid = Vec::new();
    for delta in [DecoderKind::Attention, DecoderKind::Projection] {
        for heads in [1, 2] {
            for lt in [1, 2] {
                for ls in [1, 2] {
                    let mut c = ModelConfig::stf(4, 8, 12, heads, 1);
                    c.lookback = 6;
                    c.horizon = 3;
                    c.encoder_temporal = vec![LayerSpec::full(BlockKind::TemporalAttention); lt];
                    c.encoder_spatial = vec![LayerSpec::full(BlockKind::SpatialAttention); ls];
                    grid.push(with_decoder(c, delta, lt));
                }
            }
        }
        for heads in [1, 2, 4] {
            for lt in [1, 2, 3] {
                let c = ModelConfig::ltsf(3, 8, 4, 8, 12, heads, lt);
                grid.push(with_decoder(c, delta, lt));
            }
        }
    }
    // Pruned variants exercise the mlp paths of every stack.
    let pruned: Vec<ModelConfig> = grid.iter().step_by(3).map(|c| prune_config(c, &PruneSpec::all()).unwrap().config).collect();
    grid.extend(pruned);
    let flat: Vec<ModelConfig> = grid
        .iter()
        .filter(|c| c.decoder == DecoderKind::Projection)
        .step_by(4)
        .map(|c| ModelConfig { projection_head: ProjectionHead::Flatten, ..c.clone() })
        .collect();
    grid.extend(flat);
    grid
}

fn with_decoder(mut c: ModelConfig, delta: DecoderKind, layers: usize) -> ModelConfig {
    c.decoder = delta;
    if delta == DecoderKind::Attention {
        c.decoder_layers = vec![LayerSpec::full(BlockKind::TemporalAttention); layers.min(2)];
    }
    c.embedding.time_of_day = layers % 2 == 0;
    c.embedding.steps_per_day = 24;
    c.embedding.node_embedding = layers > 1;
    c
}

fn cost_oracle() -> Verdict {
    let grid = cost_grid();
    let mut mismatches = Vec::new();
    for (i, cfg) in grid.iter().enumerate() {
        let model = AmtsfmModel::new(cfg.clone(), i as u64).unwrap();
        let batch = Batch {
            x: Tensor::zeros(&[1, cfg.lookback, cfg.nodes, cfg.in_features]),
            tod: Some(vec![0; cfg.lookback]),
            dow: Some(vec![0; cfg.lookback]),
            targets: None,
        };
        let measured = measured_cost(&model, &batch).unwrap();
        let analytic = analytic_cost(cfg, 1);
        if measured != analytic || analytic.total_params as usize != model.param_count() {
            mismatches.push(i);
        }
    }
    verdict(mismatches.is_empty(), format!("{} configs, exact mismatches at {mismatches:?}", grid.len()))
}

fn encoder_flops(cfg: &ModelConfig) -> i128 {
    let r = analytic_cost(cfg, 1);
    r.rows.iter().filter(|row| row.name.starts_with("encoder")).map(|row| row.flops as i128).sum()
}

/// Second difference and the quadratic coefficient over three equally spaced points.
fn curvature(f: impl Fn(usize) -> i128, xs: [usize; 3]) -> (i128, f64) {
    let h = (xs[1] - xs[0]) as f64;
    let second = f(xs[2]) - 2 * f(xs[1]) + f(xs[0]);
    (second, second as f64 / (2.0 * h * h))
}

fn complexity() -> Verdict {
    let by_len = |mlp: bool| {
        move |t: usize| {
            let mut c = ModelConfig::ltsf(4, t, 4, 16, 32, 2, 2);
            if mlp {
                c = prune_config(&c, &PruneSpec::encoder()).unwrap().config;
            }
            encoder_flops(&c)
        }
    };
    let by_nodes = |mlp: bool| {
        move |n: usize| {
            let mut c = ModelConfig::stf(n, 16, 32, 2, 2);
            c.encoder_temporal.clear();
            c.interleave = false;
            c.encoder_temporal = Vec::new();
            c.encoder_spatial = vec![LayerSpec::full(BlockKind::SpatialAttention); 2];
            if mlp {
                c = prune_config(&c, &PruneSpec::spatial()).unwrap().config;
            }
            encoder_flops(&c)
        }
    };
    let xs = [12, 24, 36];
    let (lin_t, _) = curvature(by_len(true), xs);
    let (lin_n, _) = curvature(by_nodes(true), xs);
    let (_, quad_t) = curvature(by_len(false), xs);
    let (_, quad_n) = curvature(by_nodes(false), xs);
    verdict(
        lin_t == 0 && lin_n == 0 && quad_t > 0.0 && quad_n > 0.0,
        format!("mlp second differences T:{lin_t} N:{lin_n}; attention n² coefficients T:{quad_t:.1} N:{quad_n:.1}"),
    )
}

fn bands() -> Verdict {
    let drop = |cfg: ModelConfig| {
        let pruned = prune_config(&cfg, &PruneSpec::all()).unwrap().config;
        compare(&cfg, &pruned).flops_drop_pct
    };
    let (stf, ltsf) = (drop(ModelConfig::reference_stf()), drop(ModelConfig::reference_ltsf()));
    verdict(
        (50.0..=80.0).contains(&stf) && (20.0..=60.0).contains(&ltsf),
        format!("STF FLOPs↓ {stf:.3}% in [50, 80]; LTSF FLOPs↓ {ltsf:.3}% in [20, 60]"),
    )
}

fn purity() -> Verdict {
    let mut cross_node = 0usize;
    let mut cross_time = 0usize;
    let mut checked = 0usize;
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = ModelConfig::stf(4, 8, 16, 2, 2);
        cfg.lookback = 5;
        cfg.horizon = 3;
        cfg.embedding.node_embedding = seed % 2 == 0;
        cfg.embedding.time_of_day = true;
        cfg.embedding.steps_per_day = 24;
        let cfg = prune_config(&cfg, &PruneSpec::all()).unwrap().config;
        let model = AmtsfmModel::new(cfg.clone(), seed).unwrap();
        let x0 = Tensor::randn(&[1, 5, 4, 1], 1.0, &mut rng);
        let tod: Vec<usize> = (0..5).collect();

        // Whole model: outputs of node n never see inputs of other nodes.
        let mut tape = Tape::new();
        let bound = model.params().bind_constant(&mut tape);
        let x = tape.leaf(x0.clone());
        let batch = Batch { x: x0.clone(), tod: Some(tod.clone()), dow: None, targets: None };
        let out = model.forward_from(&mut tape, &bound, x, &batch, Mode::Eval, &mut rng).unwrap();
        let os = tape.shape(out).to_vec();
        for o in 0..tape.value(out).numel() {
            tape.reset_grads();
            let mut s = Tensor::zeros(&os);
            s.data_mut()[o] = 1.0;
            tape.backward_with_seed(out, &s).unwrap();
            let g = tape.grad(x).unwrap();
            let node = (o / os[3]) % os[2];
            for (i, v) in g.data().iter().enumerate() {
                checked += 1;
                if i % 4 != node && *v != 0.0 {
                    cross_node += 1;
                }
            }
        }

        // Encoder: each (time, node) position only sees itself.
        let mut tape = Tape::new();
        let bound = model.params().bind_constant(&mut tape);
        let x = tape.leaf(x0);
        let e = embed(&mut tape, &cfg, &bound, x, Some(&tod), None).unwrap();
        let mut ctx = BlockCtx { mode: Mode::Eval, rng: &mut rng };
        let z = encode(&mut tape, &cfg, &bound, e, &mut ctx).unwrap();
        let zs = tape.shape(z).to_vec();
        for o in 0..tape.value(z).numel() {
            tape.reset_grads();
            let mut s = Tensor::zeros(&zs);
            s.data_mut()[o] = 1.0;
            tape.backward_with_seed(z, &s).unwrap();
            let g = tape.grad(x).unwrap();
            let (t, n) = ((o / zs[3]) / zs[2] % zs[1], (o / zs[3]) % zs[2]);
            for (i, v) in g.data().iter().enumerate() {
                checked += 1;
                if (i / 4 != t || i % 4 != n) && *v != 0.0 {
                    if i % 4 != n {
                        cross_node += 1;
                    } else {
                        cross_time += 1;
                    }
                }
            }
        }
    }

    // Temporal mlp blocks under every wrapper combination.
    for flags in 0..8u8 {
        let mut spec = BlockSpec::new(BlockKind::Mlp, 6, 10, 1);
        (spec.use_feedforward, spec.use_residual, spec.use_layernorm) = (flags & 1 != 0, flags & 2 != 0, flags & 4 != 0);
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from(flags));
        let mut store = ParamStore::new();
        init_block_params(&spec, "b", &mut store, &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind_constant(&mut tape);
        let params = BlockParams::resolve(&spec, &bound, "b").unwrap();
        let e = tape.leaf(Tensor::randn(&[3, 7, 6], 1.0, &mut rng));
        let mut ctx = BlockCtx { mode: Mode::Eval, rng: &mut rng };
        let out = block_forward(&mut tape, e, &spec, &params, false, &mut ctx).unwrap();
        for o in 0..3 * 7 * 6 {
            tape.reset_grads();
            let mut s = Tensor::zeros(&[3, 7, 6]);
            s.data_mut()[o] = 1.0;
            tape.backward_with_seed(out, &s).unwrap();
            let g = tape.grad(e).unwrap();
            for (i, v) in g.data().iter().enumerate() {
                checked += 1;
                if i / 6 != o / 6 && *v != 0.0 {
                    cross_time += 1;
                }
            }
        }
    }
    verdict(
        cross_node == 0 && cross_time == 0,
        format!("{checked} Jacobian entries; non-zero cross-node {cross_node}, cross-time {cross_time}"),
    )
}

fn causality() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for (seed, kinds) in [
        vec![BlockKind::TemporalAttention],
        vec![BlockKind::TemporalAttention, BlockKind::TemporalAttention],
        vec![BlockKind::Mlp],
        vec![BlockKind::TemporalAttention, BlockKind::Mlp],
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let mut cfg = ModelConfig::stf(3, 8, 16, 2, 1);
        cfg.lookback = 5;
        cfg.horizon = 4;
        cfg.decoder = DecoderKind::Attention;
        cfg.decoder_layers = kinds.into_iter().map(LayerSpec::full).collect();
        let model = AmtsfmModel::new(cfg.clone(), seed as u64).unwrap();
        let mut tape = Tape::new();
        let bound = model.params().bind_constant(&mut tape);
        let x = tape.constant(Tensor::randn(&[2, 5, 3, 1], 1.0, &mut rng));
        let y = tape.leaf(Tensor::randn(&[2, 4, 3, 1], 1.0, &mut rng));
        let mut ctx = BlockCtx { mode: Mode::Train, rng: &mut rng };
        let e = embed(&mut tape, &cfg, &bound, x, None, None).unwrap();
        let z = encode(&mut tape, &cfg, &bound, e, &mut ctx).unwrap();
        let out = decode_attention(&mut tape, &cfg, &bound, z, Some(y), &mut ctx).unwrap();
        let os = tape.shape(out).to_vec();
        for o in 0..tape.value(out).numel() {
            tape.reset_grads();
            let mut s = Tensor::zeros(&os);
            s.data_mut()[o] = 1.0;
            tape.backward_with_seed(out, &s).unwrap();
            let g = tape.grad(y).unwrap();
            let (b, h) = (o / (os[1] * os[2] * os[3]), (o / (os[2] * os[3])) % os[1]);
            for hp in h..os[1] {
                for n in 0..os[2] {
                    checked += 1;
                    worst = worst.max(g.get(&[b, hp, n, 0]).abs());
                }
            }
        }
    }
    verdict(worst < 1e-12, format!("{checked} entries with h' >= h, max |∂out[h]/∂y[h']| = {worst:.3e}"))
}

struct Desk {
    origin: VariantResult,
    ram: VariantResult,
    no_ffn: VariantResult,
    no_ln: VariantResult,
    table: String,
    flops_drop: f64,
    elapsed: Duration,
}

fn desk() -> Desk {
    let t = Instant::now();
    let exp = Experiment::desk_stf();
    let data = exp.prepare().unwrap();
    let grid = ablation_grid(&exp.model).unwrap();
    let cfg = |name: &str| grid.iter().find(|(n, _)| n == name).map(|(_, c)| c.clone()).unwrap();
    let ram_cfg = prune_config(&exp.model, &PruneSpec::all()).unwrap().config;
    let run = |name: &str, c: &ModelConfig| run_variant(name, c, &data, &exp.train).unwrap();
    let origin = run("Origin", &exp.model);
    let ram = run("RAM", &ram_cfg);
    let main_elapsed = t.elapsed();
    let no_ffn = run("w/o FFN", &cfg("w/o FFN"));
    let no_ln = run("w/o LN", &cfg("w/o LN"));
    let report = compare_variants(&data.raw.name, origin.clone(), ram.clone(), (&exp.model, &ram_cfg));
    Desk {
        origin,
        ram,
        no_ffn,
        no_ln,
        table: report.to_table(),
        flops_drop: report.flops_drop_pct,
        elapsed: main_elapsed,
    }
}

fn comparison(d: &Desk) -> Verdict {
    print!("{}", d.table);
    let converged = d.origin.runs.iter().chain(&d.ram.runs).all(|r| r.converged());
    let ratios: Vec<String> = d
        .origin
        .runs
        .iter()
        .chain(&d.ram.runs)
        .map(|r| format!("{:.2}", r.best_val_loss / r.first_val_loss))
        .collect();
    let degradation = improvement_pct(d.origin.mean.mae, d.ram.mean.mae);
    within(
        verdict(
            converged && d.flops_drop >= 50.0 && degradation <= 25.0,
            format!(
                "converged {converged} (best/first val {}), FLOPs↓ {:.3}%, MAE {:.4} → {:.4} ({degradation:+.3}%)",
                ratios.join(" "),
                d.flops_drop,
                d.origin.mean.mae,
                d.ram.mean.mae
            ),
        ),
        d.elapsed,
        Duration::from_secs(1800),
    )
}

fn ablation(d: &Desk) -> Verdict {
    verdict(
        d.no_ffn.mean.mae >= d.no_ln.mean.mae,
        format!(
            "3-seed MAE: w/o FFN {:.4} ≥ w/o LN {:.4} (RAM {:.4})",
            d.no_ffn.mean.mae, d.no_ln.mean.mae, d.ram.mean.mae
        ),
    )
}

fn metrics_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..64);
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let target: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(-100.0..100.0) })
            .collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
        mask[0] = true;
        let got = Metrics::compute(&pred, &target, Some(&mask)).unwrap();
        let (mut abs, mut sq, mut pct, mut cnt, mut pcnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let e = pred[i] - target[i];
            abs += e.abs();
            sq += e * e;
            cnt += 1.0;
            if target[i] != 0.0 {
                pct += (e / target[i]).abs();
                pcnt += 1.0;
            }
        }
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        worst = worst.max(rel(got.mae, abs / cnt)).max(rel(got.mse, sq / cnt)).max(rel(got.rmse, (sq / cnt).sqrt()));
        if pcnt > 0.0 {
            worst = worst.max(rel(got.mape, 100.0 * pct / pcnt));
        } else if !got.mape.is_nan() {
            worst = f64::INFINITY;
        }
    }
    let pems04 = improvement_pct(18.229, 18.467);
    verdict(
        worst < 1e-12 && (pems04 - 1.307).abs() <= 0.01,
        format!("1000 masked instances, worst relative deviation {worst:.3e}; 18.229 → 18.467 gives {pems04:.4}% (printed 1.307%)"),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut exp = Experiment::desk_stf();
    exp.data = amtsfm::experiment::DataSource::SynthStf(amtsfm::data::SynthStf::new(16, 700, 3));
    exp.train.max_epochs = 2;
    exp.train.max_batches_per_epoch = Some(3);
    exp.train.seeds = vec![4, 5];
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, exp.to_toml()).unwrap();
    let cfg = cfg.to_str().unwrap().to_string();

    // Identical argv both times; the output tree is cleared in between.
    let root = dir.path().join("out");
    let run = || -> Vec<(String, Vec<u8>)> {
        let _ = std::fs::remove_dir_all(&root);
        let p = |f: &str| root.join(f).to_str().unwrap().to_string();
        let commands: Vec<Vec<String>> = vec![
            vec!["synth".into(), "--config".into(), cfg.clone(), "--out".into(), p("data.csv")],
            vec!["train".into(), "--config".into(), cfg.clone(), "--out".into(), p("run")],
            vec!["eval".into(), "--config".into(), cfg.clone(), "--checkpoint".into(), p("run/model.ckpt"), "--dump".into(), p("preds.csv")],
            vec!["prune".into(), "--config".into(), cfg.clone(), "--checkpoint".into(), p("run/model.ckpt"), "--out".into(), p("pruned.ckpt")],
            vec!["--json".into(), "cost".into(), "--config".into(), cfg.clone(), "--scope".into(), "all".into()],
            vec!["compare".into(), "--config".into(), cfg.clone()],
            vec!["ablate".into(), "--config".into(), cfg.clone(), "--variants".into(), "TM,w/o LN".into()],
            vec!["gradcheck".into(), "--cases".into(), "1".into()],
            vec!["lemma-check".into(), "--instances".into(), "16".into()],
        ];
        let mut outputs = Vec::new();
        for args in commands {
            let (mut out, mut err) = (Vec::new(), Vec::new());
            let code = amtsfm::cli::run(std::iter::once("amtsfm".to_string()).chain(args.iter().cloned()), &mut out, &mut err);
            assert_eq!(code, 0, "{args:?}: {}", String::from_utf8_lossy(&err));
            outputs.push((args.join(" "), out));
        }
        for f in ["data.csv", "run/model.ckpt", "run/history.csv", "run/report.json", "preds.csv", "pruned.ckpt"] {
            outputs.push((f.to_string(), std::fs::read(root.join(f)).unwrap()));
        }
        outputs
    };
    let a = run();
    let b = run();
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("run/report.json")).unwrap()).unwrap();
    let stamped = report["config_hash"] == exp.hash() && report["seed"] == 4;
    verdict(
        differing.is_empty() && stamped,
        format!("{} outputs of 9 commands compared bitwise; differing: {differing:?}; hash+seed embedded: {stamped}", a.len()),
    )
}

fn main() {
    let mut all = true;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        all &= v.passed;
        println!(
            "{} [{id:>2}] {name}: {} ({:.1}s)",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    };
    report(1, "gradient correctness", &mut gradients);
    report(2, "uniform-attention identities", &mut lemma);
    report(3, "graph convolution equals attention", &mut gcn);
    report(4, "cost model equals instrumented counter", &mut cost_oracle);
    report(5, "linear vs quadratic FLOPs", &mut complexity);
    report(6, "FLOPs-reduction bands", &mut bands);
    report(7, "position-wise purity", &mut purity);
    report(8, "decoder causality", &mut causality);
    let desk = catch_unwind(desk);
    match &desk {
        Ok(d) => {
            report(9, "desk-scale comparison", &mut || comparison(d));
            report(10, "ablation ordering", &mut || ablation(d));
        }
        Err(_) => {
            report(9, "desk-scale comparison", &mut || verdict(false, "training panicked"));
            report(10, "ablation ordering", &mut || verdict(false, "training panicked"));
        }
    }
    report(11, "metrics oracle", &mut metrics_oracle);
    report(12, "determinism", &mut determinism);
    if !all {
        std::process::exit(1);
    }
}
