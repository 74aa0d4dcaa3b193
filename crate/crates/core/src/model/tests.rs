use super::*;
use crate::blocks::BlockKind;
use rand::Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny(decoder: DecoderKind) -> ModelConfig {
    let mut cfg = ModelConfig::stf(3, 8, 16, 2, 1);
    cfg.lookback = 4;
    cfg.horizon = 3;
    cfg.decoder = decoder;
    if decoder == DecoderKind::Attention {
        cfg.decoder_layers = vec![LayerSpec::full(BlockKind::TemporalAttention)];
    }
    cfg
}

fn random_x(cfg: &ModelConfig, b: usize, seed: u64) -> Tensor {
    Tensor::randn(&[b, cfg.lookback, cfg.nodes, cfg.in_features], 1.0, &mut rng(seed))
}

fn mlp_everywhere(cfg: &mut ModelConfig) {
    for l in cfg
        .encoder_temporal
        .iter_mut()
        .chain(cfg.encoder_spatial.iter_mut())
        .chain(cfg.decoder_layers.iter_mut())
    {
        l.kind = BlockKind::Mlp;
    }
}

/// `J[o, i] = ∂out[o] / ∂x[i]` through reverse-mode seeds.
fn jacobian(tape: &mut Tape, out: Var, x: Var) -> Vec<Vec<f64>> {
    let n_out = tape.value(out).numel();
    let shape = tape.shape(out).to_vec();
    (0..n_out)
        .map(|o| {
            let mut seed = Tensor::zeros(&shape);
            seed.data_mut()[o] = 1.0;
            tape.reset_grads();
            tape.backward_with_seed(out, &seed).unwrap();
            tape.grad(x).unwrap().into_data()
        })
        .collect()
}

#[test]
fn embed_identity_when_flags_off() {
    let mut cfg = tiny(DecoderKind::Projection);
    cfg.in_features = cfg.d_model;
    let mut model = AmtsfmModel::new(cfg.clone(), 1).unwrap();
    *model.params_mut().get_mut("embedding.w_in").unwrap() = Tensor::eye(cfg.d_model);
    let x = random_x(&cfg, 2, 3);
    let mut tape = Tape::new();
    let bound = model.params().bind_constant(&mut tape);
    let xv = tape.constant(x.clone());
    let e = embed(&mut tape, &cfg, &bound, xv, None, None).unwrap();
    assert_eq!(tape.value(e), &x);
}

#[test]
fn embed_node_table_on_zero_input() {
    let mut cfg = tiny(DecoderKind::Projection);
    cfg.embedding.node_embedding = true;
    let mut model = AmtsfmModel::new(cfg.clone(), 1).unwrap();
    let table = Tensor::randn(&[cfg.nodes, cfg.d_model], 1.0, &mut rng(9));
    *model.params_mut().get_mut("embedding.node").unwrap() = table.clone();
    let mut tape = Tape::new();
    let bound = model.params().bind_constant(&mut tape);
    let xv = tape.constant(Tensor::zeros(&[1, cfg.lookback, cfg.nodes, 1]));
    let e = embed(&mut tape, &cfg, &bound, xv, None, None).unwrap();
    let e = tape.value(e).clone();
    for t in 0..cfg.lookback {
        for n in 0..cfg.nodes {
            for k in 0..cfg.d_model {
                assert_eq!(e.get(&[0, t, n, k]), table.get(&[n, k]));
            }
        }
    }
}

#[test]
fn embed_matches_termwise_sum() {
    let mut cfg = tiny(DecoderKind::Projection);
    cfg.in_features = 2;
    cfg.embedding = EmbeddingConfig {
        time_of_day: true,
        steps_per_day: 24,
        day_of_week: true,
        node_embedding: true,
    };
    let mut model = AmtsfmModel::new(cfg.clone(), 4).unwrap();
    let mut r = rng(5);
    for name in ["embedding.b_in", "embedding.tod", "embedding.dow", "embedding.node"] {
        let p = model.params_mut().get_mut(name).unwrap();
        *p = Tensor::randn(p.shape(), 1.0, &mut r);
    }
    let b = 2;
    let x = Tensor::randn(&[b, cfg.lookback, cfg.nodes, 2], 1.0, &mut r);
    let tod: Vec<usize> = (0..b * cfg.lookback).map(|_| r.random_range(0..24)).collect();
    let dow: Vec<usize> = (0..b * cfg.lookback).map(|_| r.random_range(0..7)).collect();
    let mut tape = Tape::new();
    let bound = model.params().bind_constant(&mut tape);
    let xv = tape.constant(x.clone());
    let e = embed(&mut tape, &cfg, &bound, xv, Some(&tod), Some(&dow)).unwrap();
    let e = tape.value(e);
    let p = model.params();
    let (w, bias) = (p.get("embedding.w_in").unwrap(), p.get("embedding.b_in").unwrap());
    let (tt, dt, nt) = (
        p.get("embedding.tod").unwrap(),
        p.get("embedding.dow").unwrap(),
        p.get("embedding.node").unwrap(),
    );
    for bi in 0..b {
        for t in 0..cfg.lookback {
            for n in 0..cfg.nodes {
                for k in 0..cfg.d_model {
                    let lin: f64 = (0..2).map(|c| x.get(&[bi, t, n, c]) * w.get(&[c, k])).sum();
                    let s = bi * cfg.lookback + t;
                    let want = lin + bias.get(&[k]) + tt.get(&[tod[s], k]) + dt.get(&[dow[s], k]) + nt.get(&[n, k]);
                    assert!((e.get(&[bi, t, n, k]) - want).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn embed_calendar_errors() {
    let mut cfg = tiny(DecoderKind::Projection);
    cfg.embedding.time_of_day = true;
    cfg.embedding.steps_per_day = 10;
    let model = AmtsfmModel::new(cfg.clone(), 1).unwrap();
    let mut batch = Batch::new(random_x(&cfg, 1, 1));
    assert!(model.predict(&batch).is_err());
    batch.tod = Some(vec![10; cfg.lookback]);
    let err = model.predict(&batch).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "embed", .. }));
    batch.tod = Some(vec![9; cfg.lookback]);
    assert!(model.predict(&batch).is_ok());
}

#[test]
fn split_stack_roundtrip() {
    let e = Tensor::randn(&[3, 4, 5], 1.0, &mut rng(1));
    for axis in [SplitAxis::Node, SplitAxis::Time] {
        let parts = split(&e, axis).unwrap();
        assert_eq!(stack(&parts, axis).unwrap(), e);
    }
    assert_eq!(split(&e, SplitAxis::Node).unwrap().len(), 4);
    assert_eq!(split(&e, SplitAxis::Time).unwrap()[0].shape(), &[4, 5]);
}

#[test]
fn split_single_node_is_squeeze() {
    let e = Tensor::new(&[2, 1, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
    let parts = split(&e, SplitAxis::Node).unwrap();
    assert_eq!(parts, vec![Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap()]);
}

#[test]
fn split_then_stack_other_axis_transposes() {
    let (t, n, d) = (3, 4, 2);
    let e = Tensor::randn(&[t, n, d], 1.0, &mut rng(2));
    let swapped = stack(&split(&e, SplitAxis::Node).unwrap(), SplitAxis::Time).unwrap();
    assert_eq!(swapped.shape(), &[n, t, d]);
    for ti in 0..t {
        for ni in 0..n {
            for k in 0..d {
                assert_eq!(swapped.get(&[ni, ti, k]), e.get(&[ti, ni, k]));
            }
        }
    }
}

#[test]
fn encode_without_layers_is_identity() {
    let mut cfg = tiny(DecoderKind::Projection);
    cfg.task = Task::Ltsf;
    cfg.encoder_temporal.clear();
    cfg.encoder_spatial.clear();
    let model = AmtsfmModel::new(cfg.clone(), 1).unwrap();
    let mut tape = Tape::new();
    let bound = model.params().bind_constant(&mut tape);
    let e = tape.constant(Tensor::randn(&[2, cfg.lookback, cfg.nodes, cfg.d_model], 1.0, &mut rng(3)));
    let mut r = rng(0);
    let mut ctx = BlockCtx { mode: Mode::Eval, rng: &mut r };
    let z = encode(&mut tape, &cfg, &bound, e, &mut ctx).unwrap();
    assert_eq!(tape.value(z), tape.value(e));
}

#[test]
fn mlp_encoder_is_node_and_position_wise() {
    let mut cfg = tiny(DecoderKind::Projection);
    mlp_everywhere(&mut cfg);
    let model = AmtsfmModel::new(cfg.clone(), 2).unwrap();
    let (t, n, d) = (cfg.lookback, cfg.nodes, cfg.d_model);
    let mut tape = Tape::new();
    let bound = model.params().bind_constant(&mut tape);
    let e = tape.leaf(Tensor::randn(&[1, t, n, d], 1.0, &mut rng(4)));
    let mut r = rng(0);
    let mut ctx = BlockCtx { mode: Mode::Eval, rng: &mut r };
    let z = encode(&mut tape, &cfg, &bound, e, &mut ctx).unwrap();
    let jac = jacobian(&mut tape, z, e);
    let pos = |i: usize| (i / (n * d), (i / d) % n);
    for (o, row) in jac.iter().enumerate() {
        for (i, &g) in row.iter().enumerate() {
            if pos(o) != pos(i) {
                assert_eq!(g, 0.0, "output {o} depends on input {i}");
            }
        }
    }
}

#[test]
fn identical_nodes_encode_identically() {
    let mut cfg = tiny(DecoderKind::Projection);
    cfg.task = Task::Ltsf;
    cfg.nodes = 2;
    cfg.encoder_spatial.clear();
    let model = AmtsfmModel::new(cfg.clone(), 3).unwrap();
    let series = Tensor::randn(&[cfg.lookback], 1.0, &mut rng(5));
    let x = Tensor::from_fn(&[1, cfg.lookback, 2, 1], |i| series.get(&[i[1]]));
    let mut tape = Tape::new();
    let bound = model.params().bind_constant(&mut tape);
    let xv = tape.constant(x);
    let e = embed(&mut tape, &cfg, &bound, xv, None, None).unwrap();
    let mut r = rng(0);
    let mut ctx = BlockCtx { mode: Mode::Eval, rng: &mut r };
    let z = encode(&mut tape, &cfg, &bound, e, &mut ctx).unwrap();
    let z = tape.value(z).clone();
    for t in 0..cfg.lookback {
        for k in 0..cfg.d_model {
            assert_eq!(z.get(&[0, t, 0, k]), z.get(&[0, t, 1, k]));
        }
    }
}

fn projection_setup(t: usize, h: usize, d: usize, c_out: usize) -> (ModelConfig, AmtsfmModel) {
    let mut cfg = tiny(DecoderKind::Projection);
    cfg.lookback = t;
    cfg.horizon = h;
    cfg.d_model = d;
    cfg.out_features = c_out;
    let model = AmtsfmModel::new(cfg.clone(), 6).unwrap();
    (cfg, model)
}

fn project(model: &AmtsfmModel, z: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let bound = model.params().bind_constant(&mut tape);
    let zv = tape.constant(z.clone());
    let out = decode_projection(&mut tape, model.config(), &bound, zv).unwrap();
    tape.value(out).clone()
}

#[test]
fn projection_identity() {
    let (cfg, mut model) = projection_setup(4, 4, 8, 8);
    let p = model.params_mut();
    *p.get_mut("decoder.proj.w_t").unwrap() = Tensor::eye(4);
    *p.get_mut("decoder.proj.w_out").unwrap() = Tensor::eye(8);
    let z = Tensor::randn(&[2, 4, cfg.nodes, 8], 1.0, &mut rng(7));
    assert_eq!(project(&model, &z), z);
}

#[test]
fn projection_uniform_time_map_gives_temporal_mean() {
    let (cfg, mut model) = projection_setup(4, 3, 8, 2);
    *model.params_mut().get_mut("decoder.proj.w_t").unwrap() = Tensor::full(&[4, 3], 0.25);
    let z = Tensor::randn(&[1, 4, cfg.nodes, 8], 1.0, &mut rng(8));
    let out = project(&model, &z);
    let w = model.params().get("decoder.proj.w_out").unwrap();
    for h in 0..3 {
        for n in 0..cfg.nodes {
            for c in 0..2 {
                let want: f64 = (0..8)
                    .map(|k| (0..4).map(|t| z.get(&[0, t, n, k])).sum::<f64>() / 4.0 * w.get(&[k, c]))
                    .sum();
                assert!((out.get(&[0, h, n, c]) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn projection_matches_loop_oracle() {
    let (cfg, mut model) = projection_setup(5, 3, 4, 2);
    let mut r = rng(10);
    for name in ["decoder.proj.b_t", "decoder.proj.b_out"] {
        let p = model.params_mut().get_mut(name).unwrap();
        *p = Tensor::randn(p.shape(), 1.0, &mut r);
    }
    let z = Tensor::randn(&[2, 5, cfg.nodes, 4], 1.0, &mut r);
    let out = project(&model, &z);
    let p = model.params();
    let (wt, bt) = (p.get("decoder.proj.w_t").unwrap(), p.get("decoder.proj.b_t").unwrap());
    let (wo, bo) = (p.get("decoder.proj.w_out").unwrap(), p.get("decoder.proj.b_out").unwrap());
    for b in 0..2 {
        for h in 0..3 {
            for n in 0..cfg.nodes {
                for c in 0..2 {
                    let mut acc = bo.get(&[c]);
                    for k in 0..4 {
                        let mut th = bt.get(&[h]);
                        for t in 0..5 {
                            th += z.get(&[b, t, n, k]) * wt.get(&[t, h]);
                        }
                        acc += th * wo.get(&[k, c]);
                    }
                    assert!((out.get(&[b, h, n, c]) - acc).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn flatten_head_matches_loop_oracle() {
    let mut cfg = tiny(DecoderKind::Projection);
    cfg.projection_head = ProjectionHead::Flatten;
    cfg.out_features = 2;
    let (t, h, d) = (cfg.lookback, cfg.horizon, cfg.d_model);
    let mut model = AmtsfmModel::new(cfg.clone(), 11).unwrap();
    assert_eq!(model.params().get("decoder.proj.w").unwrap().shape(), &[t * d, h * 2]);
    let mut r = rng(12);
    let bias = model.params_mut().get_mut("decoder.proj.b").unwrap();
    *bias = Tensor::randn(bias.shape(), 1.0, &mut r);
    let z = Tensor::randn(&[2, t, cfg.nodes, d], 1.0, &mut r);
    let out = project(&model, &z);
    assert_eq!(out.shape(), &[2, h, cfg.nodes, 2]);
    let (w, bias) = (model.params().get("decoder.proj.w").unwrap(), model.params().get("decoder.proj.b").unwrap());
    for b in 0..2 {
        for hh in 0..h {
            for n in 0..cfg.nodes {
                for c in 0..2 {
                    let col = hh * 2 + c;
                    let mut acc = bias.get(&[col]);
                    for tt in 0..t {
                        for k in 0..d {
                            acc += z.get(&[b, tt, n, k]) * w.get(&[tt * d + k, col]);
                        }
                    }
                    assert!((out.get(&[b, hh, n, c]) - acc).abs() < 1e-12);
                }
            }
        }
    }
}

fn decode(
    cfg: &ModelConfig,
    model: &AmtsfmModel,
    z: &Tensor,
    targets: Option<&Tensor>,
) -> (Tape, Var, Option<Var>) {
    let mut tape = Tape::new();
    let bound = model.params().bind_constant(&mut tape);
    let zv = tape.constant(z.clone());
    let tv = targets.map(|t| tape.leaf(t.clone()));
    let mut r = rng(0);
    let mode = if tv.is_some() { Mode::Train } else { Mode::Eval };
    let mut ctx = BlockCtx { mode, rng: &mut r };
    let out = decode_attention(&mut tape, cfg, &bound, zv, tv, &mut ctx).unwrap();
    (tape, out, tv)
}

#[test]
fn attention_decoder_is_causal() {
    for kind in [BlockKind::TemporalAttention, BlockKind::Mlp] {
        let mut cfg = tiny(DecoderKind::Attention);
        cfg.horizon = 4;
        cfg.decoder_layers = vec![LayerSpec::full(kind); 2];
        let model = AmtsfmModel::new(cfg.clone(), 11).unwrap();
        let (n, h) = (cfg.nodes, cfg.horizon);
        let z = Tensor::randn(&[1, cfg.lookback, n, cfg.d_model], 1.0, &mut rng(12));
        let y = Tensor::randn(&[1, h, n, 1], 1.0, &mut rng(13));
        let (mut tape, out, tv) = decode(&cfg, &model, &z, Some(&y));
        let jac = jacobian(&mut tape, out, tv.unwrap());
        let step = |i: usize| i / n;
        let node = |i: usize| i % n;
        for (o, row) in jac.iter().enumerate() {
            for (i, &g) in row.iter().enumerate() {
                if step(i) >= step(o) || node(i) != node(o) {
                    assert_eq!(g, 0.0, "{kind:?}: out {o} depends on target {i}");
                }
            }
            if step(o) > 0 {
                assert!(row[(step(o) - 1) * n + node(o)] != 0.0);
            }
        }
    }
}

#[test]
fn empty_decoder_is_head_on_start_token() {
    let mut cfg = tiny(DecoderKind::Attention);
    let model = AmtsfmModel::new(cfg.clone(), 14).unwrap();
    cfg.decoder_layers.clear();
    let z = Tensor::randn(&[2, cfg.lookback, cfg.nodes, cfg.d_model], 1.0, &mut rng(15));
    let (tape, out, _) = decode(&cfg, &model, &z, None);
    let out = tape.value(out);
    assert_eq!(out.shape(), &[2, cfg.horizon, cfg.nodes, 1]);
    let p = model.params();
    let start = p.get("decoder.start").unwrap().reshaped(&[1, cfg.d_model]).unwrap();
    let want = start.matmul(p.get("decoder.head.w").unwrap()).unwrap().item() + p.get("decoder.head.b").unwrap().item();
    for b in 0..2 {
        for n in 0..cfg.nodes {
            assert!((out.get(&[b, 0, n, 0]) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn autoregression_matches_teacher_forcing_on_own_outputs() {
    for kind in [BlockKind::TemporalAttention, BlockKind::Mlp] {
        let mut cfg = tiny(DecoderKind::Attention);
        cfg.horizon = 5;
        cfg.decoder_layers = vec![LayerSpec::full(kind); 2];
        let model = AmtsfmModel::new(cfg.clone(), 16).unwrap();
        let z = Tensor::randn(&[2, cfg.lookback, cfg.nodes, cfg.d_model], 1.0, &mut rng(17));
        let (tape, out, _) = decode(&cfg, &model, &z, None);
        let auto = tape.value(out).clone();
        let (tape, out, _) = decode(&cfg, &model, &z, Some(&auto));
        assert!(tape.value(out).max_abs_diff(&auto) < 1e-10);
    }
}

#[test]
fn mode_and_targets_must_agree() {
    let cfg = tiny(DecoderKind::Attention);
    let model = AmtsfmModel::new(cfg.clone(), 18).unwrap();
    let x = random_x(&cfg, 1, 19);
    let y = Tensor::zeros(&[1, cfg.horizon, cfg.nodes, 1]);
    let mut r = rng(0);
    let mut run = |targets: Option<Tensor>, mode: Mode| {
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let batch = Batch { x: x.clone(), tod: None, dow: None, targets };
        model.forward(&mut tape, &bound, &batch, mode, &mut r).map(|_| ())
    };
    assert!(run(None, Mode::Train).is_err());
    assert!(run(Some(y.clone()), Mode::Eval).is_err());
    assert!(run(Some(y), Mode::Train).is_ok());
    assert!(run(None, Mode::Eval).is_ok());
}

#[test]
fn zero_weights_give_zero_output() {
    for decoder in [DecoderKind::Projection, DecoderKind::Attention] {
        let cfg = tiny(decoder);
        let mut model = AmtsfmModel::new(cfg.clone(), 20).unwrap();
        for (name, t) in model.params_mut().iter_mut() {
            if !name.ends_with(".gain") {
                *t = Tensor::zeros(t.shape());
            }
        }
        let out = model.predict(&Batch::new(random_x(&cfg, 2, 21))).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0), "{decoder:?}");
    }
}

#[test]
fn output_shapes_for_random_configs() {
    let mut r = rng(22);
    for i in 0..20 {
        let heads = r.random_range(1..=2);
        let mut cfg = ModelConfig::stf(r.random_range(1..=4), 4 * heads, r.random_range(2..=8), heads, 0);
        cfg.lookback = r.random_range(1..=5);
        cfg.horizon = r.random_range(1..=4);
        cfg.in_features = r.random_range(1..=2);
        cfg.out_features = r.random_range(1..=2);
        let kinds = [BlockKind::TemporalAttention, BlockKind::Mlp];
        for _ in 0..r.random_range(0..=2) {
            cfg.encoder_temporal.push(LayerSpec::full(kinds[r.random_range(0..2)]));
        }
        for _ in 0..r.random_range(1..=2) {
            let kind = if r.random_bool(0.5) { BlockKind::SpatialAttention } else { BlockKind::Mlp };
            cfg.encoder_spatial.push(LayerSpec::full(kind));
        }
        if r.random_bool(0.5) {
            cfg.decoder = DecoderKind::Attention;
            cfg.decoder_layers = vec![LayerSpec::full(kinds[r.random_range(0..2)])];
        }
        let model = AmtsfmModel::new(cfg.clone(), i).unwrap();
        let b = r.random_range(1..=3);
        let out = model.predict(&Batch::new(random_x(&cfg, b, i))).unwrap();
        assert_eq!(out.shape(), &[b, cfg.horizon, cfg.nodes, cfg.out_features], "config {i}");
        assert!(out.is_finite());
    }
}

#[test]
fn predict_one_drops_batch_axis() {
    let cfg = tiny(DecoderKind::Projection);
    let model = AmtsfmModel::new(cfg.clone(), 23).unwrap();
    let x = Tensor::randn(&[cfg.lookback, cfg.nodes, 1], 1.0, &mut rng(24));
    let out = model.predict_one(&x, None, None).unwrap();
    assert_eq!(out.shape(), &[cfg.horizon, cfg.nodes, 1]);
}

#[test]
fn bad_input_shape_is_annotated() {
    let cfg = tiny(DecoderKind::Projection);
    let model = AmtsfmModel::new(cfg.clone(), 25).unwrap();
    let err = model.predict(&Batch::new(Tensor::zeros(&[1, 2, 3, 1]))).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "embed", .. }));
}

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let mut cfg = tiny(DecoderKind::Attention);
    cfg.embedding.node_embedding = true;
    let model = AmtsfmModel::new(cfg, 26).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&model, &mut buf).unwrap();
    assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
    let back = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(back, model);
    for (name, t) in model.params().iter() {
        let u = back.params().get(name).unwrap();
        assert!(t.data().iter().zip(u.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn checkpoint_rejects_corruption() {
    let model = AmtsfmModel::new(tiny(DecoderKind::Projection), 27).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&model, &mut buf).unwrap();
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Checkpoint(_))));
    let mut bad = buf.clone();
    bad[8] = 2;
    assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Checkpoint(_))));
    assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
    let mut bad = buf;
    bad.push(0);
    assert!(read_checkpoint(bad.as_slice()).is_err());
}

#[test]
fn from_params_checks_registry() {
    let model = AmtsfmModel::new(tiny(DecoderKind::Projection), 28).unwrap();
    let (cfg, mut params) = model.into_parts();
    params.remove("decoder.proj.b_t");
    assert!(AmtsfmModel::from_params(cfg, params).is_err());
}
