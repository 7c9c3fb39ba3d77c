//! Shared fixtures for the metric suites: random ranking instances with
//! peaked per-pair score distributions, plus a brute-force recall that
//! shares no code with the library implementation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use sga_core::graph::{
    ObjectInstance, PredicateDistribution, RelationshipTriplet, SceneGraph,
};
use sga_core::metrics::ScoredTriplet;

pub struct MetricInstance {
    pub objects: Vec<ObjectInstance>,
    pub dists: Vec<PredicateDistribution>,
    pub gt: SceneGraph,
}

/// Random frame with up to 5 objects and up to 8 predicates. Scores are a
/// per-pair softmax with one dominant logit, so every pair's argmax outranks
/// every non-argmax prediction globally. Ground truth hits the dominant
/// predicate about half the time and may be absent entirely.
pub fn random_peaked_instance(rng: &mut ChaCha8Rng) -> MetricInstance {
    let num_predicates = rng.gen_range(2..=8usize);
    let n_others = rng.gen_range(1..=4usize);
    let mut objects = vec![ObjectInstance { category: 0, bbox: [0.4, 0.4, 0.6, 0.6] }];
    for _ in 0..n_others {
        let x = rng.gen_range(0.0..0.5f64);
        let y = rng.gen_range(0.0..0.5f64);
        objects.push(ObjectInstance {
            category: rng.gen_range(1..6usize),
            bbox: [x, y, x + 0.3, y + 0.3],
        });
    }

    let mut dists = Vec::new();
    let mut triplets = Vec::new();
    for j in 1..=n_others {
        let dominant = rng.gen_range(0..num_predicates);
        let logits: Vec<f64> = (0..num_predicates)
            .map(|p| if p == dominant { rng.gen_range(4.0..6.0) } else { rng.gen_range(0.0..1.0) })
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let scores: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        dists.push(PredicateDistribution::new((0, j), scores).unwrap());
        if rng.gen_bool(0.8) {
            let predicate =
                if rng.gen_bool(0.5) { dominant } else { rng.gen_range(0..num_predicates) };
            triplets.push(RelationshipTriplet {
                subject_idx: 0,
                object_idx: j,
                predicate,
                score: None,
            });
        }
    }
    let gt = SceneGraph { frame_index: 0, objects: objects.clone(), triplets };
    MetricInstance { objects, dists, gt }
}

/// Selection-scan ranking and list-consuming matching. Equal (score,
/// predicate) keeps the earliest candidate, mirroring a stable sort.
pub fn oracle_recall(gt: &SceneGraph, candidates: &[ScoredTriplet], k: usize) -> Option<f64> {
    if gt.triplets.is_empty() {
        return None;
    }
    let mut remaining = candidates.to_vec();
    let mut picked = Vec::new();
    while picked.len() < k && !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            let (a, b) = (&remaining[i], &remaining[best]);
            if a.score > b.score || (a.score == b.score && a.predicate < b.predicate) {
                best = i;
            }
        }
        picked.push(remaining.remove(best));
    }

    let mut gt_left: Vec<(usize, usize, usize)> = gt
        .triplets
        .iter()
        .map(|t| (gt.objects[t.subject_idx].category, t.predicate, gt.objects[t.object_idx].category))
        .collect();
    let total = gt_left.len();
    let mut hits = 0usize;
    for p in &picked {
        let found = gt_left
            .iter()
            .position(|&(s, pr, o)| s == p.subject_cat && pr == p.predicate && o == p.object_cat);
        if let Some(i) = found {
            gt_left.remove(i);
            hits += 1;
        }
    }
    Some(hits as f64 / total as f64)
}
