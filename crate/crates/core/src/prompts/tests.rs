use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::check_gradients;
use crate::encoder::{Checkpoint, Encoder, EncoderConfig, IdentityHook, BACKBONE_PREFIX};
use crate::eventstore::{Event, EventStream, Instance, Labeled, NeighborIndex, NodeId, Setting, Task, TaskMode};

fn run(f: impl FnOnce(&mut Graph) -> Var) -> Tensor {
    let mut g = Graph::new();
    let v = f(&mut g);
    g.value(v).clone()
}

fn state(d_x: usize, d_t: usize, cfg: &PromptConfig, seed: u64) -> (ParamRegistry, PromptState) {
    let mut reg = ParamRegistry::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = PromptState::init(&mut reg, d_x, d_t, cfg, &mut rng).unwrap();
    (reg, s)
}

/// Overwrite every state entry with a seeded random value.
fn randomize(reg: &mut ParamRegistry, s: &PromptState, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in s.param_ids() {
        for v in reg.value_mut(id).data_mut() {
            *v = rng.gen_range(-1.0..1.5);
        }
    }
}

fn random_stream(nodes: usize, events: usize, seed: u64) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let evs = (0..events)
        .map(|_| {
            let a = rng.gen_range(0..nodes);
            let b = (a + rng.gen_range(1..nodes)) % nodes;
            Event::new(a, b, rng.gen_range(0.0..50.0)).with_label((a % 2) as i64)
        })
        .collect();
    let feat = Tensor::from_fn(nodes, 4, |_, _| rng.gen_range(-1.0..1.0));
    EventStream::new(evs, nodes).unwrap().with_node_features(feat).unwrap()
}

fn small_encoder(layers: usize) -> EncoderConfig {
    EncoderConfig {
        d_x: 4,
        d_t: 4,
        d_h: 4,
        d_e: 0,
        layers,
        k: 3,
        ..EncoderConfig::default()
    }
}

fn checkpoint(stream: &EventStream, layers: usize) -> Checkpoint {
    let mut reg = ParamRegistry::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let enc = Encoder::init(small_encoder(layers), &mut reg, stream.time_span(), &mut rng).unwrap();
    Checkpoint::capture(&enc, &reg)
}

fn node(v: NodeId, t: f64, label: i64) -> Labeled {
    Labeled {
        instance: Instance::Node { node: v, t },
        label,
    }
}

fn nc_task() -> Task {
    let support = (0..10).map(|v| node(v, 30.0 + v as f64, (v % 2) as i64)).collect();
    let validation = (0..6).map(|v| node(v, 44.0 + v as f64, (v % 2) as i64)).collect();
    let queries = (0..10).map(|v| node(v, 49.0, (v % 2) as i64)).collect();
    Task {
        mode: TaskMode::NodeClassification,
        setting: Setting::Transductive,
        classes: vec![0, 1],
        support_events: vec![],
        support,
        validation,
        queries,
    }
}

#[test]
fn prompt_application_examples() {
    let x = Tensor::vector(vec![3.0, 4.0, 5.0]);
    let same = run(|g| {
        let p = g.constant(Tensor::filled(1, 3, 1.0));
        let x = g.constant(x.clone());
        apply_node_prompt(g, p, x).unwrap()
    });
    assert_eq!(same, x);
    let got = run(|g| {
        let p = g.constant(Tensor::vector(vec![2.0, 0.0, 1.0]));
        let x = g.constant(x.clone());
        apply_node_prompt(g, p, x).unwrap()
    });
    assert_eq!(got.data(), &[6.0, 0.0, 5.0]);
    let zero = run(|g| {
        let p = g.constant(Tensor::zeros(1, 3));
        let x = g.constant(x.clone());
        apply_time_prompt(g, p, x).unwrap()
    });
    assert_eq!(zero.data(), &[0.0; 3]);

    let mut g = Graph::new();
    let p = g.constant(Tensor::zeros(1, 2));
    let x = g.constant(x);
    assert!(apply_node_prompt(&mut g, p, x).is_err());
}

#[test]
fn prompts_match_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = Tensor::from_fn(1, 6, |_, _| rng.gen_range(-2.0..2.0));
    let x = Tensor::from_fn(5, 6, |_, _| rng.gen_range(-2.0..2.0));
    let got = run(|g| {
        let p = g.constant(p.clone());
        let x = g.constant(x.clone());
        apply_node_prompt(g, p, x).unwrap()
    });
    for r in 0..5 {
        for c in 0..6 {
            assert!((got.get(r, c) - p.get(0, c) * x.get(r, c)).abs() <= 1e-12);
        }
    }
}

#[test]
fn time_prompt_gradient_matches_finite_differences() {
    let cfg = PromptConfig {
        flags: AblationFlags::new(false, true, false, false),
        ..PromptConfig::default()
    };
    let (mut reg, s) = state(3, 4, &cfg, 0);
    randomize(&mut reg, &s, 1);
    let f = Tensor::from_fn(3, 4, |r, c| (r as f64 - c as f64) * 0.3 + 0.1);
    let report = check_gradients(
        |g, reg| {
            let p = g.param(reg, s.p_time);
            let f = g.constant(f.clone());
            let out = apply_time_prompt(g, p, f)?;
            let sq = g.mul(out, out)?;
            Ok(g.sum(sq))
        },
        &mut reg,
        1e-5,
    )
    .unwrap();
    assert_eq!(report.entries_checked, 4);
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn fresh_condition_nets_emit_ones() {
    let (reg, s) = state(3, 4, &PromptConfig::default(), 2);
    let tcn = run(|g| {
        let f = g.constant(Tensor::from_fn(2, 4, |r, c| (r * 4 + c) as f64));
        tcn_generate(g, &reg, &s, f).unwrap()
    });
    assert_eq!(tcn, Tensor::filled(2, 3, 1.0));
    let ncn = run(|g| {
        let x = g.constant(Tensor::from_fn(2, 3, |r, c| (r * 3 + c) as f64 - 2.0));
        ncn_generate(g, &reg, &s, x).unwrap()
    });
    assert_eq!(ncn, Tensor::filled(2, 4, 1.0));
}

#[test]
fn tcn_matches_hand_computation() {
    let cfg = PromptConfig {
        hidden: Some(1),
        ..PromptConfig::default()
    };
    let (mut reg, s) = state(2, 2, &cfg, 0);
    *reg.value_mut(s.tcn.w1) = Tensor::new(2, 1, vec![0.5, -1.0]).unwrap();
    *reg.value_mut(s.tcn.b1) = Tensor::new(1, 1, vec![0.2]).unwrap();
    *reg.value_mut(s.tcn.w2) = Tensor::new(1, 2, vec![2.0, -3.0]).unwrap();
    *reg.value_mut(s.tcn.b2) = Tensor::new(1, 2, vec![0.1, 0.0]).unwrap();
    let got = run(|g| {
        let f = g.constant(Tensor::vector(vec![1.0, 0.4]));
        tcn_generate(g, &reg, &s, f).unwrap()
    });
    // hidden = sigmoid(0.5 - 0.4 + 0.2) = sigmoid(0.3)
    let h = 1.0 / (1.0 + (-0.3f64).exp());
    let want = [1.0 + 2.0 * h + 0.1, 1.0 - 3.0 * h];
    for (a, b) in got.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn condition_nets_separate_distinct_inputs() {
    let (mut reg, s) = state(4, 4, &PromptConfig::default(), 5);
    randomize(&mut reg, &s, 6);
    let tcn = run(|g| {
        let f = g.constant(Tensor::new(2, 4, vec![1.0, 0.0, 0.5, -0.5, 0.2, 0.9, -0.3, 0.7]).unwrap());
        tcn_generate(g, &reg, &s, f).unwrap()
    });
    assert_ne!(tcn.row(0), tcn.row(1));
    let ncn = run(|g| {
        let x = g.constant(Tensor::new(2, 4, vec![1.0, 2.0, 0.0, -1.0, -1.0, 0.5, 0.3, 0.0]).unwrap());
        ncn_generate(g, &reg, &s, x).unwrap()
    });
    assert_ne!(ncn.row(0), ncn.row(1));
}

#[test]
fn ncn_gradient_matches_finite_differences() {
    let cfg = PromptConfig {
        flags: AblationFlags::new(false, false, true, false),
        ..PromptConfig::default()
    };
    let (mut reg, s) = state(4, 4, &cfg, 7);
    randomize(&mut reg, &s, 8);
    let x = Tensor::from_fn(3, 4, |r, c| ((r + 2 * c) as f64).sin());
    let report = check_gradients(
        |g, reg| {
            let x = g.constant(x.clone());
            let out = ncn_generate(g, reg, &s, x)?;
            let t = g.tanh(out);
            Ok(g.sum(t))
        },
        &mut reg,
        1e-5,
    )
    .unwrap();
    assert_eq!(report.entries_checked, s.count_trainable(&reg).ncn);
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn prompted_features_identity_zero_and_order() {
    let x = Tensor::from_fn(3, 4, |r, c| (r as f64 + 1.0) * (c as f64 - 1.5));
    let f = Tensor::from_fn(3, 4, |r, c| ((r * 4 + c) as f64 * 0.7).cos());
    let both = |reg: &ParamRegistry, s: &PromptState| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let fv = g.constant(f.clone());
        let (a, b) = prompted_features(&mut g, reg, s, xv, fv).unwrap();
        (g.value(a).clone(), g.value(b).clone())
    };

    let (mut reg, s) = state(4, 4, &PromptConfig::default(), 1);
    assert_eq!(both(&reg, &s), (x.clone(), f.clone()));

    randomize(&mut reg, &s, 2);
    let (base_x, base_f) = both(&reg, &s);
    assert_ne!(base_x, x);
    assert_ne!(base_f, f);

    *reg.value_mut(s.p_node) = Tensor::zeros(1, 4);
    let (zero_x, _) = both(&reg, &s);
    assert!(zero_x.data().iter().all(|v| *v == 0.0));

    // The TCN sees the time-prompted features, so changing p_time moves x̃.
    randomize(&mut reg, &s, 2);
    reg.value_mut(s.p_time).data_mut()[0] += 0.5;
    let (moved_x, _) = both(&reg, &s);
    assert_ne!(moved_x, base_x);
}

#[test]
fn identity_state_leaves_embeddings_bitwise_unchanged() {
    let stream = random_stream(10, 60, 1);
    let index = NeighborIndex::build(&stream);
    let ckpt = checkpoint(&stream, 2);
    let model = TunedModel::new(&ckpt, &PromptConfig::default(), 3).unwrap();
    let targets: Vec<(NodeId, f64)> = (0..10).map(|v| (v, 5.0 * v as f64 + 2.5)).collect();
    let prompted = model.embed(&stream, &index, &targets).unwrap();
    let plain = model
        .encoder
        .embed_values(&model.registry, &stream, &index, &targets, &IdentityHook)
        .unwrap();
    assert_eq!(prompted, plain);

    let mut changed = model.clone();
    randomize(&mut changed.registry, &changed.state, 4);
    assert_ne!(changed.embed(&stream, &index, &targets).unwrap(), plain);
}

#[test]
fn tuning_objective_gradients_match_finite_differences() {
    let stream = random_stream(10, 50, 2);
    let index = NeighborIndex::build(&stream);
    let ckpt = checkpoint(&stream, 2);
    let mut model = TunedModel::new(&ckpt, &PromptConfig::default(), 1).unwrap();
    let (state, enc, cfg) = (model.state.clone(), model.encoder.clone(), model.config.clone());
    randomize(&mut model.registry, &state, 5);
    for id in state.param_ids() {
        for v in model.registry.value_mut(id).data_mut() {
            *v *= 0.5;
        }
    }
    let task = nc_task();
    let targets: Vec<(NodeId, f64)> = task
        .support
        .iter()
        .map(|s| (s.instance.anchor(), s.instance.time()))
        .collect();
    let labels: Vec<i64> = task.support.iter().map(|s| s.label).collect();
    let idx: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let build = |g: &mut Graph, reg: &ParamRegistry| {
        let h = enc.embed(g, reg, &stream, &index, &targets, &state.hook())?;
        let p = prototypes(g, h, &labels, &task.classes)?;
        downstream_nc_loss(g, h, &idx, p, cfg.tau, cfg.similarity)
    };
    let report = check_gradients(build, &mut model.registry, 1e-5).unwrap();
    assert_eq!(report.entries_checked, state.count_trainable(&model.registry).total);
    assert!(report.max_rel_error < 1e-4, "{report:?}");

    let mut g = Graph::new();
    let loss = build(&mut g, &model.registry).unwrap();
    g.backward(loss, &mut model.registry).unwrap();
    for id in state.param_ids() {
        assert!(
            model.registry.grad(id).data().iter().any(|v| *v != 0.0),
            "{}",
            model.registry.name(id)
        );
    }
    for id in enc.param_ids() {
        assert!(model.registry.grad(id).data().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn tuning_keeps_backbone_bitwise_and_is_reproducible() {
    let stream = random_stream(10, 60, 3);
    let index = NeighborIndex::build(&stream);
    let ckpt = checkpoint(&stream, 1);
    let cfg = PromptConfig {
        epochs: 15,
        ..PromptConfig::default()
    };
    let task = nc_task();
    let mut model = TunedModel::new(&ckpt, &cfg, 2).unwrap();
    let enc = model.encoder.clone();
    let report = model
        .tune_with(&stream, &index, &task, |reg| {
            for id in enc.param_ids() {
                assert!(reg.grad(id).data().iter().all(|v| *v == 0.0));
            }
        })
        .unwrap();
    assert!(report.steps > 0);
    assert_eq!(report.train_losses.len(), report.steps + 1);
    assert_eq!(Checkpoint::capture(&model.encoder, &model.registry), ckpt);
    for id in model.registry.ids() {
        assert_eq!(
            model.registry.is_frozen(id),
            model.registry.name(id).starts_with(BACKBONE_PREFIX)
        );
    }

    let (again, report2) = tune_prompts(&ckpt, &stream, &index, &task, &cfg, 2).unwrap();
    assert_eq!(report, report2);
    assert_eq!(model.state.values(&model.registry), again.state.values(&again.registry));
}

#[test]
fn no_trainable_components_means_no_steps() {
    let stream = random_stream(10, 60, 3);
    let index = NeighborIndex::build(&stream);
    let ckpt = checkpoint(&stream, 1);
    let cfg = PromptConfig {
        flags: AblationFlags::NONE,
        ..PromptConfig::default()
    };
    let (model, report) = tune_prompts(&ckpt, &stream, &index, &nc_task(), &cfg, 0).unwrap();
    assert_eq!(report.steps, 0);
    assert_eq!(model.state.count_trainable(&model.registry).total, 0);
}

#[test]
fn trainable_counts_follow_closed_form() {
    let (reg, s) = state(4, 4, &PromptConfig::default(), 0);
    let c = s.count_trainable(&reg);
    assert_eq!((c.p_node, c.p_time, c.tcn, c.ncn, c.total), (4, 4, 22, 22, 52));

    let (reg, s) = state(172, 172, &PromptConfig::default(), 0);
    let c = s.count_trainable(&reg);
    assert_eq!((c.tcn, c.ncn, c.total), (29_842, 29_842, 60_028));

    for d in [2, 4, 8, 16] {
        for alpha in [1, 2, 4] {
            let cfg = PromptConfig {
                alpha,
                ..PromptConfig::default()
            };
            let (reg, s) = state(d, d, &cfg, 0);
            let h = bottleneck(d, alpha);
            assert!(h >= 1);
            assert_eq!(
                s.count_trainable(&reg).total,
                closed_form_count(d, d, h, h),
                "d={d} alpha={alpha}"
            );
        }
    }

    let cfg = PromptConfig {
        alpha: 8,
        ..PromptConfig::default()
    };
    let (reg, s) = state(8, 8, &cfg, 0);
    assert_eq!(reg.value(s.tcn.w1).cols(), 1);
    assert_eq!(s.count_trainable(&reg).total, closed_form_count(8, 8, 1, 1));
}

#[test]
fn disabled_components_contribute_nothing() {
    for (_, flags) in AblationFlags::variants() {
        let cfg = PromptConfig {
            flags,
            ..PromptConfig::default()
        };
        let (reg, s) = state(6, 4, &cfg, 0);
        let c = s.count_trainable(&reg);
        assert_eq!(c.p_node > 0, flags.node_prompt);
        assert_eq!(c.p_time > 0, flags.time_prompt);
        assert_eq!(c.tcn > 0, flags.tcn);
        assert_eq!(c.ncn > 0, flags.ncn);
        assert_eq!(reg.trainable_count(), c.total);
    }
}

#[test]
fn prototypes_match_scalar_means() {
    let h = Tensor::new(5, 2, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 3.0, 4.0, 2.0, 5.0]).unwrap();
    let labels = [0, 1, 0, 1, 0];
    let p = Prototypes::compute(&h, &labels, &[0, 1]).unwrap();
    let want0 = [(1.0 - 1.0 + 2.0) / 3.0, (2.0 + 0.0 + 5.0) / 3.0];
    assert!((p.rows.get(0, 0) - want0[0]).abs() < 1e-12);
    assert!((p.rows.get(0, 1) - want0[1]).abs() < 1e-12);
    // Two identical examples: the mean is either one.
    assert_eq!(p.rows.row(1), &[3.0, 4.0]);

    let single = Prototypes::compute(&h, &[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4]).unwrap();
    assert_eq!(single.rows, h);

    assert!(matches!(
        Prototypes::compute(&h, &labels, &[0, 1, 7]),
        Err(Error::EmptyClass(7))
    ));
}

fn nc_loss(h: Tensor, protos: Tensor, idx: &[usize], tau: f64) -> f64 {
    let mut g = Graph::new();
    let h = g.constant(h);
    let p = g.constant(protos);
    let l = downstream_nc_loss(&mut g, h, idx, p, tau, Similarity::Dot).unwrap();
    g.scalar(l).unwrap()
}

#[test]
fn downstream_loss_examples() {
    let h = Tensor::new(2, 2, vec![1.0, 0.0, 0.3, 0.7]).unwrap();
    assert_eq!(
        nc_loss(h.clone(), Tensor::new(1, 2, vec![0.5, 0.5]).unwrap(), &[0, 0], 0.1),
        0.0
    );

    let equal = Tensor::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let l = nc_loss(h.clone(), equal, &[0, 1], 0.1);
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

    // Dot similarities (1, 0) for the single query, τ = 1.
    let q = Tensor::new(1, 2, vec![1.0, 0.0]).unwrap();
    let protos = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let l = nc_loss(q, protos, &[0], 1.0);
    assert!((l - 0.313262).abs() < 1e-6);
    assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
}

#[test]
fn state_roundtrips_through_json() {
    let cfg = PromptConfig {
        flags: AblationFlags::new(true, false, true, false),
        ..PromptConfig::default()
    };
    let (mut reg, s) = state(4, 6, &cfg, 0);
    randomize(&mut reg, &s, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    s.save(&reg, &path).unwrap();
    let mut other = ParamRegistry::new();
    let back = PromptState::load(&path, &mut other).unwrap();
    assert_eq!(back.flags, s.flags);
    assert_eq!(back.values(&other), s.values(&reg));
    assert_eq!(back.count_trainable(&other), s.count_trainable(&reg));

    let mut occupied = reg.clone();
    assert!(PromptState::load(&path, &mut occupied).is_err());
}

#[test]
fn config_validation() {
    for bad in [
        PromptConfig {
            alpha: 0,
            ..PromptConfig::default()
        },
        PromptConfig {
            hidden: Some(0),
            ..PromptConfig::default()
        },
        PromptConfig {
            tau: 0.0,
            ..PromptConfig::default()
        },
        PromptConfig {
            lr: f64::NAN,
            ..PromptConfig::default()
        },
        PromptConfig {
            patience: Some(0),
            ..PromptConfig::default()
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
    }
    assert_eq!(AblationFlags::FULL.label(), "node+time+ncn+tcn");
    assert_eq!(AblationFlags::NONE.label(), "none");
}
