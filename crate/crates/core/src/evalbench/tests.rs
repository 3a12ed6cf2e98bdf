use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoder::EncoderConfig;
use crate::eventstore::{chronological_split, Event, Labeled};
use crate::pretrain::{run_pretraining, PretrainConfig};

struct Fixture {
    stream: EventStream,
    index: NeighborIndex,
    split: SplitIndices,
    checkpoint: Checkpoint,
}

impl Fixture {
    fn work(&self) -> Workload<'_> {
        Workload {
            checkpoint: &self.checkpoint,
            stream: &self.stream,
            index: &self.index,
            split: &self.split,
        }
    }
}

/// A small planted-pattern stream with a briefly pre-trained one-layer backbone.
fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let synth = SynthConfig {
            n_events: 4000,
            ..SynthConfig::default()
        };
        let stream = generate_synthetic(&synth).unwrap();
        let cfg = PretrainConfig {
            epochs: 5,
            max_batches_per_epoch: Some(40),
            encoder: EncoderConfig {
                layers: 1,
                k: 10,
                ..EncoderConfig::default()
            },
            ..PretrainConfig::default()
        };
        let checkpoint = run_pretraining(&stream, &cfg).unwrap().checkpoint;
        Fixture {
            index: NeighborIndex::build(&stream),
            split: chronological_split(&stream).unwrap(),
            stream,
            checkpoint,
        }
    })
}

fn quick() -> PromptConfig {
    PromptConfig {
        epochs: 10,
        ..PromptConfig::default()
    }
}

fn protocol(tasks: usize) -> ProtocolConfig {
    ProtocolConfig {
        tasks,
        seeds: 1,
        max_queries: Some(200),
    }
}

/// Stream where node ids grow over time, so late events bring unseen nodes.
fn growing_stream() -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 4000;
    let events = (0..n)
        .map(|i| {
            let hi = 10 + i / 40;
            let a = rng.gen_range(0..hi);
            let b = (a + rng.gen_range(1..hi)) % hi;
            Event::new(a, b, i as f64).with_label((a % 2) as i64)
        })
        .collect();
    let feat = crate::diffcore::Tensor::from_fn(110, 4, |r, c| ((r * 4 + c) as f64).sin());
    EventStream::new(events, 110).unwrap().with_node_features(feat).unwrap()
}

#[test]
fn inductive_queries_are_a_subset_of_transductive_ones() {
    let stream = growing_stream();
    let index = NeighborIndex::build(&stream);
    let split = chronological_split(&stream).unwrap();
    for seed in 0..5 {
        let draw = |setting| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_task(&stream, &index, &split, TaskMode::LinkPrediction, setting, &mut rng).unwrap()
        };
        let trans = draw(Setting::Transductive);
        let ind = draw(Setting::Inductive);
        assert!(!ind.queries.is_empty());
        assert!(ind.queries.len() < trans.queries.len());
        assert!(ind.queries.iter().all(|q| trans.queries.contains(q)));
        assert_eq!(ind.support, trans.support);
    }
}

#[test]
fn task_seeds_are_distinct_and_reproducible() {
    let mut seen = std::collections::HashSet::new();
    for t in 0..20 {
        for s in 0..3 {
            assert!(seen.insert(task_seed(7, t, s)));
        }
    }
    assert_eq!(task_seed(7, 2, 1), 7 + 2 * 10007 + 1);
    let f = fixture();
    let a = sample_tasks(&f.work(), EvalMode::NodeClassification, &protocol(2), 1).unwrap();
    let b = sample_tasks(&f.work(), EvalMode::NodeClassification, &protocol(2), 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].1.queries.len(), 200);
    assert_ne!(a[0].1.support, a[1].1.support);
}

#[test]
fn link_subsampling_keeps_pairs() {
    let f = fixture();
    let p = ProtocolConfig {
        max_queries: Some(51),
        ..protocol(1)
    };
    let (_, task) = &sample_tasks(&f.work(), EvalMode::LinkTransductive, &p, 0).unwrap()[0];
    assert_eq!(task.queries.len(), 50);
    for pair in task.queries.chunks(2) {
        assert_eq!((pair[0].label, pair[1].label), (1, 0));
        assert_eq!(pair[0].instance.anchor(), pair[1].instance.anchor());
    }
}

#[test]
fn shuffled_labels_give_chance_auc() {
    let f = fixture();
    let tasks = sample_tasks(
        &f.work(),
        EvalMode::NodeClassification,
        &ProtocolConfig {
            tasks: 8,
            seeds: 1,
            max_queries: None,
        },
        3,
    )
    .unwrap();
    let cfg = PromptConfig {
        flags: AblationFlags::NONE,
        ..PromptConfig::default()
    };
    let mut aucs = Vec::new();
    for (i, (key, task)) in tasks.into_iter().enumerate() {
        let mut task = task;
        let mut labels: Vec<i64> = task.queries.iter().map(|q| q.label).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(i as u64));
        for (q, l) in task.queries.iter_mut().zip(labels) {
            q.label = l;
        }
        let r = tune_and_evaluate(&f.work(), key, &task, EvalMode::NodeClassification, "v", &cfg).unwrap();
        aucs.push(r.auc.unwrap());
    }
    let a = aggregate(&aucs).unwrap();
    assert!((a.mean - 0.5).abs() < 0.03, "{a:?}");
}

#[test]
fn link_scores_prefer_positives_after_tuning() {
    let f = fixture();
    let tasks = sample_tasks(&f.work(), EvalMode::LinkTransductive, &protocol(2), 5).unwrap();
    let (mut wins, mut pairs) = (0, 0);
    for (key, task) in &tasks {
        let mut model = TunedModel::new(&f.checkpoint, &quick(), key.seed).unwrap();
        model.tune(&f.stream, &f.index, task).unwrap();
        for pair in task.queries.chunks(2) {
            let score = |q: &Labeled| match q.instance {
                Instance::Link { src, dst, t } => {
                    let h = model.embed(&f.stream, &f.index, &[(src, t), (dst, t)]).unwrap();
                    model.config.similarity.eval(h.row(0), h.row(1))
                }
                Instance::Node { .. } => unreachable!(),
            };
            wins += (score(&pair[0]) > score(&pair[1])) as usize;
            pairs += 1;
        }
        let eval = run_link_prediction(&model, &f.stream, &f.index, task).unwrap();
        assert_eq!(eval.n_queries, task.queries.len());
    }
    assert!(wins as f64 >= 0.7 * pairs as f64, "{wins}/{pairs}");
}

#[test]
fn empty_inductive_query_sets_are_flagged_and_excluded() {
    // Every synthetic user already appears during pre-training.
    let f = fixture();
    let report = run_tune_eval(&f.work(), &[EvalMode::LinkInductive], &protocol(2), &quick(), 0, 1).unwrap();
    let m = report.mode(EvalMode::LinkInductive).unwrap();
    assert_eq!((m.n, m.excluded, m.mean), (0, 2, None));
    assert!(report.results.iter().all(|r| r.auc.is_none() && r.n_queries == 0));
}

#[test]
fn ablation_matrix_properties() {
    let f = fixture();
    let tasks = sample_tasks(&f.work(), EvalMode::NodeClassification, &protocol(2), 2).unwrap();
    let variants: Vec<(String, AblationFlags)> = AblationFlags::variants()
        .iter()
        .map(|(n, fl)| (n.to_string(), *fl))
        .collect();
    let report = run_ablation(&f.work(), &tasks, EvalMode::NodeClassification, &variants, &quick(), 2).unwrap();
    assert_eq!(report.variants.len(), 7);
    assert_eq!(report.results.len(), 14);

    let full = report.variant("full").unwrap();
    let v1 = report.variant("variant1").unwrap();
    assert_eq!(v1.trainable, 0);
    for v in &report.variants {
        if v.name != "full" {
            assert!(full.trainable > v.trainable, "{}", v.name);
        }
    }
    for r in report.results.iter().filter(|r| r.variant == "variant1") {
        assert_eq!(r.steps, 0);
    }

    // Variant 1 equals the frozen backbone scored directly.
    let cfg = PromptConfig {
        flags: AblationFlags::NONE,
        ..quick()
    };
    let model = TunedModel::new(&f.checkpoint, &cfg, 0).unwrap();
    let direct = run_node_classification(&model, &f.stream, &f.index, &tasks[0].1).unwrap();
    let first = report.results.iter().find(|r| r.variant == "variant1").unwrap();
    assert_eq!(first.auc, direct.auc);

    let again = run_ablation(&f.work(), &tasks, EvalMode::NodeClassification, &variants, &quick(), 1).unwrap();
    let strip = |rs: &[TaskResult]| -> Vec<TaskResult> {
        rs.iter()
            .map(|r| TaskResult {
                wall_ms: 0,
                ..r.clone()
            })
            .collect()
    };
    assert_eq!(strip(&report.results), strip(&again.results));
    let run = serde_json::json!({ "seed": 2 });
    assert_eq!(report.to_json(&run), again.to_json(&run));
}

#[test]
fn report_schema() {
    let f = fixture();
    let tasks = sample_tasks(&f.work(), EvalMode::NodeClassification, &protocol(1), 2).unwrap();
    let variants = vec![
        ("variant1".to_string(), AblationFlags::NONE),
        ("full".to_string(), AblationFlags::FULL),
    ];
    let report = run_ablation(&f.work(), &tasks, EvalMode::NodeClassification, &variants, &quick(), 1).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&report.to_json(&serde_json::json!({"k": 1}))).unwrap();
    assert_eq!(doc["config"]["k"], 1);
    let full = &doc["per_variant"]["full"];
    for key in ["flags", "trainable", "mean", "std", "n", "excluded"] {
        assert!(!full[key].is_null(), "{key}");
    }
    assert_eq!(full["flags"]["tcn"], true);
    assert_eq!(doc["per_variant"]["variant1"]["trainable"], 0);

    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("variant,node_prompt"));
    assert!(lines[1].starts_with("variant1,0,0,0,0,0,"));
    let table = results_csv(&report.results);
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn embeddings_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    let emb = crate::diffcore::Tensor::new(2, 2, vec![0.5, -1.0, 2.0, 0.0]).unwrap();
    write_embeddings_csv(&path, &[(3, Some(1)), (7, None)], &emb).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "node,label,dim0,dim1\n3,1,0.5,-1\n7,,2,0\n");
    assert!(write_embeddings_csv(&path, &[(3, None)], &emb).is_err());
}

#[test]
fn aggregate_matches_scalar_oracle_on_500_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let values: Vec<f64> = (0..500).map(|_| rng.gen_range(0.4..0.95)).collect();
    let mut sum = 0.0;
    for v in &values {
        sum += v;
    }
    let mean = sum / 500.0;
    let mut ss = 0.0;
    for v in &values {
        ss += (v - mean) * (v - mean);
    }
    let a = aggregate(&values).unwrap();
    assert_eq!(a.n, 500);
    assert!((a.mean - mean).abs() < 1e-12);
    assert!((a.std - (ss / 499.0).sqrt()).abs() < 1e-12);
}

#[test]
fn parallel_map_keeps_order_and_propagates_errors() {
    let items: Vec<u64> = (0..50).collect();
    let serial = parallel_map(1, &items, |v| Ok(v * v)).unwrap();
    let par = parallel_map(4, &items, |v| Ok(v * v)).unwrap();
    assert_eq!(serial, par);
    let err = parallel_map(3, &items, |&v| {
        if v == 17 {
            Err(Error::Sampling("boom".into()))
        } else {
            Ok(v)
        }
    });
    assert!(err.is_err());
}

#[test]
fn protocol_validation() {
    for bad in [
        ProtocolConfig {
            tasks: 0,
            ..ProtocolConfig::default()
        },
        ProtocolConfig {
            seeds: 0,
            ..ProtocolConfig::default()
        },
        ProtocolConfig {
            max_queries: Some(0),
            ..ProtocolConfig::default()
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
    }
}
