//! Negative sampling and few-shot task construction.

use std::collections::HashSet;
use std::ops::Range;

use rand::seq::index::sample;
use rand::Rng;

use super::{EventStream, NeighborIndex, NodeId, SplitIndices};
use crate::error::{Error, Result};

/// Events sampled from a pool to form one task's support set.
pub const SUPPORT_EVENTS: usize = 30;
/// Resamples allowed when looking for a support set covering every class.
pub const CLASS_COVERAGE_RETRIES: usize = 1000;

/// What "not linked" means for a negative pair `(v, b)` at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeRule {
    /// No event between `v` and `b` at any time `<= t`.
    NeverLinked,
    /// No event between `v` and `b` at exactly `t`.
    NotLinkedAt,
}

/// Candidate negatives drawn from `range`: destinations for bipartite
/// streams, both endpoints otherwise. `None` means the whole stream.
pub fn destination_pool(stream: &EventStream, range: Option<Range<usize>>) -> Vec<NodeId> {
    let events = match range {
        Some(r) => &stream.events()[r],
        None => {
            return match stream.num_sources() {
                Some(u) => (u..stream.num_nodes()).collect(),
                None => (0..stream.num_nodes()).collect(),
            }
        }
    };
    let mut pool: Vec<NodeId> = if stream.is_bipartite() {
        events.iter().map(|e| e.dst).collect()
    } else {
        events.iter().flat_map(|e| [e.src, e.dst]).collect()
    };
    pool.sort_unstable();
    pool.dedup();
    pool
}

/// Uniform draw from `pool` (excluding `v`) among nodes not linked to `v`
/// under `rule`.
pub fn sample_negative(
    index: &NeighborIndex,
    v: NodeId,
    t: f64,
    pool: &[NodeId],
    rule: NegativeRule,
    rng: &mut impl Rng,
) -> Result<NodeId> {
    let valid = |b: NodeId| {
        b != v
            && match rule {
                NegativeRule::NeverLinked => !index.linked_until(v, b, t),
                NegativeRule::NotLinkedAt => !index.linked_at(v, b, t),
            }
    };
    if pool.is_empty() {
        return Err(Error::PoolExhausted { node: v, t });
    }
    // Rejection keeps the draw uniform over valid nodes; the exhaustive
    // fallback below is uniform too.
    for _ in 0..32 {
        let b = pool[rng.gen_range(0..pool.len())];
        if valid(b) {
            return Ok(b);
        }
    }
    let candidates: Vec<NodeId> = pool.iter().copied().filter(|&b| valid(b)).collect();
    if candidates.is_empty() {
        return Err(Error::PoolExhausted { node: v, t });
    }
    Ok(candidates[rng.gen_range(0..candidates.len())])
}

/// [`NegativeRule::NeverLinked`] first, then [`NegativeRule::NotLinkedAt`]
/// when `v` has already interacted with the whole pool.
pub fn sample_negative_with_fallback(
    index: &NeighborIndex,
    v: NodeId,
    t: f64,
    pool: &[NodeId],
    rng: &mut impl Rng,
) -> Result<NodeId> {
    match sample_negative(index, v, t, pool, NegativeRule::NeverLinked, rng) {
        Err(Error::PoolExhausted { .. }) => sample_negative(index, v, t, pool, NegativeRule::NotLinkedAt, rng),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    NodeClassification,
    LinkPrediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Transductive,
    Inductive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Instance {
    Node { node: NodeId, t: f64 },
    Link { src: NodeId, dst: NodeId, t: f64 },
}

impl Instance {
    pub fn anchor(&self) -> NodeId {
        match *self {
            Instance::Node { node, .. } => node,
            Instance::Link { src, .. } => src,
        }
    }

    pub fn time(&self) -> f64 {
        match *self {
            Instance::Node { t, .. } | Instance::Link { t, .. } => t,
        }
    }
}

/// An instance with its class label (node classification) or polarity
/// (link prediction: 1 positive, 0 negative).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Labeled {
    pub instance: Instance,
    pub label: i64,
}

/// One few-shot downstream episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub mode: TaskMode,
    pub setting: Setting,
    pub classes: Vec<i64>,
    /// Indices of the sampled pool events behind `support`.
    pub support_events: Vec<usize>,
    pub support: Vec<Labeled>,
    pub validation: Vec<Labeled>,
    pub queries: Vec<Labeled>,
}

fn draw_events(range: &Range<usize>, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let take = n.min(range.len());
    let mut picked: Vec<usize> = sample(rng, range.len(), take)
        .into_iter()
        .map(|i| range.start + i)
        .collect();
    picked.sort_unstable();
    picked
}

fn covers(stream: &EventStream, picked: &[usize], classes: &[i64]) -> bool {
    let got: HashSet<i64> = picked.iter().filter_map(|&i| stream.events()[i].state_label).collect();
    classes.iter().all(|c| got.contains(c))
}

fn node_instances(stream: &EventStream, picked: &[usize]) -> Vec<Labeled> {
    picked
        .iter()
        .filter_map(|&i| {
            let e = &stream.events()[i];
            e.state_label.map(|label| Labeled {
                instance: Instance::Node { node: e.src, t: e.t },
                label,
            })
        })
        .collect()
}

fn link_instances(
    stream: &EventStream,
    index: &NeighborIndex,
    picked: &[usize],
    pool: &[NodeId],
    rng: &mut impl Rng,
) -> Result<Vec<Labeled>> {
    let mut out = Vec::with_capacity(2 * picked.len());
    for &i in picked {
        let e = &stream.events()[i];
        let b = sample_negative_with_fallback(index, e.src, e.t, pool, rng)?;
        out.push(Labeled {
            instance: Instance::Link {
                src: e.src,
                dst: e.dst,
                t: e.t,
            },
            label: 1,
        });
        out.push(Labeled {
            instance: Instance::Link {
                src: e.src,
                dst: b,
                t: e.t,
            },
            label: 0,
        });
    }
    Ok(out)
}

/// Sample one task. Node classification draws [`SUPPORT_EVENTS`] pool events
/// covering every class and labels their source nodes at event time; link
/// prediction pairs each drawn event with one sampled negative. Validation
/// repeats the draw on the validation pool. Inductive tasks drop queries
/// whose anchor node appears in pre-training or support events.
pub fn sample_task(
    stream: &EventStream,
    index: &NeighborIndex,
    split: &SplitIndices,
    mode: TaskMode,
    setting: Setting,
    rng: &mut impl Rng,
) -> Result<Task> {
    if split.tune_pool.len() < SUPPORT_EVENTS {
        return Err(Error::Sampling(format!(
            "tune pool has {} events, need {SUPPORT_EVENTS}",
            split.tune_pool.len()
        )));
    }
    let classes = match mode {
        TaskMode::NodeClassification => stream.classes(),
        TaskMode::LinkPrediction => vec![0, 1],
    };

    let (support_events, validation_events) = match mode {
        TaskMode::NodeClassification => {
            let in_pool = covers(stream, &split.tune_pool.clone().collect::<Vec<_>>(), &classes);
            if classes.is_empty() || !in_pool {
                return Err(Error::Sampling("tune pool lacks an event for some class".to_string()));
            }
            let mut support = None;
            for _ in 0..CLASS_COVERAGE_RETRIES {
                let picked = draw_events(&split.tune_pool, SUPPORT_EVENTS, rng);
                if covers(stream, &picked, &classes) {
                    support = Some(picked);
                    break;
                }
            }
            let support = support.ok_or_else(|| {
                Error::Sampling(format!(
                    "no class-covering support set after {CLASS_COVERAGE_RETRIES} draws"
                ))
            })?;
            // validation coverage is best effort
            let mut valid = draw_events(&split.valid_pool, SUPPORT_EVENTS, rng);
            for _ in 1..CLASS_COVERAGE_RETRIES {
                if covers(stream, &valid, &classes) {
                    break;
                }
                valid = draw_events(&split.valid_pool, SUPPORT_EVENTS, rng);
            }
            (support, valid)
        }
        TaskMode::LinkPrediction => (
            draw_events(&split.tune_pool, SUPPORT_EVENTS, rng),
            draw_events(&split.valid_pool, SUPPORT_EVENTS, rng),
        ),
    };

    let test: Vec<usize> = split.test.clone().collect();
    let (support, validation, mut queries) = match mode {
        TaskMode::NodeClassification => (
            node_instances(stream, &support_events),
            node_instances(stream, &validation_events),
            node_instances(stream, &test),
        ),
        TaskMode::LinkPrediction => {
            let tune_pool = destination_pool(stream, Some(split.tune_pool.clone()));
            let valid_pool = destination_pool(stream, Some(split.valid_pool.clone()));
            let test_pool = destination_pool(stream, Some(split.test.clone()));
            (
                link_instances(stream, index, &support_events, &tune_pool, rng)?,
                link_instances(stream, index, &validation_events, &valid_pool, rng)?,
                link_instances(stream, index, &test, &test_pool, rng)?,
            )
        }
    };

    if setting == Setting::Inductive {
        let mut seen: HashSet<NodeId> = stream.events()[split.pretrain.clone()]
            .iter()
            .flat_map(|e| [e.src, e.dst])
            .collect();
        for &i in &support_events {
            let e = &stream.events()[i];
            seen.insert(e.src);
            seen.insert(e.dst);
        }
        queries.retain(|q| !seen.contains(&q.instance.anchor()));
    }

    Ok(Task {
        mode,
        setting,
        classes,
        support_events,
        support,
        validation,
        queries,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::eventstore::{chronological_split, Event};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn forced_choice_and_exhaustion() {
        // nodes 0 (v), 1 (a), 2: v links only to a
        let s = EventStream::new(vec![Event::new(0, 1, 1.0)], 3).unwrap();
        let idx = NeighborIndex::build(&s);
        let pool = [0, 1, 2];
        for seed in 0..20 {
            let b = sample_negative(&idx, 0, 1.0, &pool, NegativeRule::NeverLinked, &mut rng(seed));
            assert_eq!(b.unwrap(), 2);
        }
        let s = EventStream::new(vec![Event::new(0, 1, 1.0), Event::new(0, 2, 1.0)], 3).unwrap();
        let idx = NeighborIndex::build(&s);
        let err = sample_negative(&idx, 0, 1.0, &pool, NegativeRule::NeverLinked, &mut rng(0));
        assert!(matches!(err, Err(Error::PoolExhausted { node: 0, .. })));
        // links strictly after t do not count
        assert_eq!(
            sample_negative(&idx, 0, 0.5, &[1], NegativeRule::NeverLinked, &mut rng(0)).unwrap(),
            1
        );
    }

    #[test]
    fn fallback_allows_earlier_partners() {
        let s = EventStream::new(vec![Event::new(0, 1, 1.0), Event::new(0, 2, 2.0)], 3).unwrap();
        let idx = NeighborIndex::build(&s);
        let b = sample_negative_with_fallback(&idx, 0, 2.0, &[1, 2], &mut rng(3)).unwrap();
        assert_eq!(b, 1);
    }

    /// Chi-square frequency oracle: 10^5 draws over 990 valid nodes.
    #[test]
    fn negatives_are_uniform() {
        let n = 1001;
        let partners: Vec<Event> = (1..=10).map(|b| Event::new(0, b, b as f64)).collect();
        let s = EventStream::new(partners, n).unwrap();
        let idx = NeighborIndex::build(&s);
        let pool: Vec<NodeId> = (1..n).collect();
        let mut counts = vec![0usize; n];
        let mut r = rng(11);
        let draws = 100_000;
        for _ in 0..draws {
            let b = sample_negative(&idx, 0, 100.0, &pool, NegativeRule::NeverLinked, &mut r).unwrap();
            counts[b] += 1;
        }
        assert!(counts[..=10].iter().all(|&c| c == 0));
        let k = 990.0;
        let expected = draws as f64 / k;
        let chi2: f64 = counts[11..]
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // df = 989; mean 989, sd ~44.5; 5 sd bound
        assert!(chi2 < 989.0 + 5.0 * (2.0f64 * 989.0).sqrt(), "chi2 = {chi2}");
    }

    fn labeled_stream(n: usize) -> EventStream {
        let events = (0..n)
            .map(|i| Event::new(i % 10, 10 + (i * 7) % 5, i as f64).with_label((i % 3 == 0) as i64))
            .collect();
        EventStream::new(events, 15).unwrap().with_bipartite(10).unwrap()
    }

    #[test]
    fn node_classification_task_covers_classes() {
        let s = labeled_stream(4000);
        let idx = NeighborIndex::build(&s);
        let split = chronological_split(&s).unwrap();
        for seed in 0..20 {
            let task = sample_task(
                &s,
                &idx,
                &split,
                TaskMode::NodeClassification,
                Setting::Transductive,
                &mut rng(seed),
            )
            .unwrap();
            assert_eq!(task.support_events.len(), SUPPORT_EVENTS);
            assert_eq!(task.support.len(), SUPPORT_EVENTS);
            for c in &task.classes {
                assert!(task.support.iter().any(|l| l.label == *c));
            }
            assert_eq!(task.queries.len(), split.test.len());
            assert!(task.support_events.iter().all(|i| split.tune_pool.contains(i)));
        }
    }

    #[test]
    fn link_prediction_support_is_balanced() {
        let s = labeled_stream(4000);
        let idx = NeighborIndex::build(&s);
        let split = chronological_split(&s).unwrap();
        let task = sample_task(
            &s,
            &idx,
            &split,
            TaskMode::LinkPrediction,
            Setting::Transductive,
            &mut rng(5),
        )
        .unwrap();
        assert_eq!(task.support.len(), 60);
        assert_eq!(task.support.iter().filter(|l| l.label == 1).count(), 30);
        assert_eq!(task.queries.len(), 2 * split.test.len());
    }

    #[test]
    fn inductive_drops_seen_nodes() {
        let s = labeled_stream(4000);
        let idx = NeighborIndex::build(&s);
        let split = chronological_split(&s).unwrap();
        let task = sample_task(
            &s,
            &idx,
            &split,
            TaskMode::NodeClassification,
            Setting::Inductive,
            &mut rng(1),
        )
        .unwrap();
        assert!(task.queries.is_empty());
    }

    #[test]
    fn same_seed_same_task_and_inductive_subset() {
        // users 10..20 only appear in the test range
        let mut events: Vec<Event> = (0..900)
            .map(|i| Event::new(i % 10, 20 + i % 4, i as f64).with_label((i % 2) as i64))
            .collect();
        events.extend((900..1000).map(|i| Event::new(i % 20, 20 + i % 4, i as f64).with_label((i % 2) as i64)));
        let s = EventStream::new(events, 24).unwrap().with_bipartite(20).unwrap();
        let idx = NeighborIndex::build(&s);
        let mut split = chronological_split(&s).unwrap();
        // widen the tune pool so 30 events can be drawn
        split.pretrain = 0..700;
        split.tune_pool = 700..800;
        split.valid_pool = 800..850;
        split.test = 850..1000;
        for mode in [TaskMode::NodeClassification, TaskMode::LinkPrediction] {
            let a = sample_task(&s, &idx, &split, mode, Setting::Transductive, &mut rng(9)).unwrap();
            let b = sample_task(&s, &idx, &split, mode, Setting::Transductive, &mut rng(9)).unwrap();
            assert_eq!(a, b);
            let ind = sample_task(&s, &idx, &split, mode, Setting::Inductive, &mut rng(9)).unwrap();
            assert!(!ind.queries.is_empty());
            assert!(ind.queries.len() < a.queries.len());
            assert!(ind.queries.iter().all(|q| a.queries.contains(q)));
        }
    }

    #[test]
    fn missing_class_in_pool_is_an_error() {
        let events = (0..1000)
            .map(|i| {
                let label = if (800..840).contains(&i) { 0 } else { (i % 2) as i64 };
                Event::new(i % 10, 10, i as f64).with_label(label)
            })
            .collect();
        let s = EventStream::new(events, 11).unwrap();
        let idx = NeighborIndex::build(&s);
        let mut split = chronological_split(&s).unwrap();
        split.tune_pool = 800..840;
        let err = sample_task(
            &s,
            &idx,
            &split,
            TaskMode::NodeClassification,
            Setting::Transductive,
            &mut rng(0),
        );
        assert!(matches!(err, Err(Error::Sampling(_))));
        split.tune_pool = 830..870;
        assert!(sample_task(
            &s,
            &idx,
            &split,
            TaskMode::NodeClassification,
            Setting::Transductive,
            &mut rng(0)
        )
        .is_ok());
    }
}
