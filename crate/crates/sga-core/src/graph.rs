//! Symbolic scene graphs: object instances with normalized boxes, predicate
//! triplets, per-video frame sequences, and the two strategies that turn
//! per-pair predicate scores into a graph. All types are immutable after
//! construction and safe to share across threads.

use std::sync::Arc;

use crate::error::{SgaError, SgaResult};

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Taxonomy {
    pub object_classes: Vec<String>,
    pub predicate_classes: Vec<String>,
}

impl Taxonomy {
    pub fn num_object_classes(&self) -> usize {
        self.object_classes.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicate_classes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub category: usize,
    /// (x1, y1, x2, y2), normalized to [0,1], x1 <= x2 and y1 <= y2.
    pub bbox: [f64; 4],
}

impl ObjectInstance {
    pub fn validate(&self, num_classes: usize) -> Result<(), String> {
        if self.category >= num_classes {
            return Err(format!(
                "object category {} out of range (|C| = {num_classes})",
                self.category
            ));
        }
        let [x1, y1, x2, y2] = self.bbox;
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(in_unit(x1) && in_unit(y1) && in_unit(x2) && in_unit(y2) && x1 <= x2 && y1 <= y2) {
            return Err(format!("degenerate bbox {:?}", self.bbox));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationshipTriplet {
    pub subject_idx: usize,
    pub object_idx: usize,
    pub predicate: usize,
    /// Prediction confidence; absent on ground-truth annotations.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub frame_index: usize,
    pub objects: Vec<ObjectInstance>,
    pub triplets: Vec<RelationshipTriplet>,
}

impl SceneGraph {
    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), String> {
        for o in &self.objects {
            o.validate(taxonomy.num_object_classes())?;
        }
        for t in &self.triplets {
            if t.subject_idx >= self.objects.len() || t.object_idx >= self.objects.len() {
                return Err(format!(
                    "triplet ({}, {}, {}) references a missing object (frame has {})",
                    t.subject_idx,
                    t.predicate,
                    t.object_idx,
                    self.objects.len()
                ));
            }
            if t.subject_idx == t.object_idx {
                return Err(format!("triplet subject == object ({})", t.subject_idx));
            }
            if t.predicate >= taxonomy.num_predicates() {
                return Err(format!(
                    "predicate {} out of range (|P| = {})",
                    t.predicate,
                    taxonomy.num_predicates()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoAnnotation {
    pub video_id: String,
    /// Strictly increasing by frame_index.
    pub frames: Vec<SceneGraph>,
    pub taxonomy: Arc<Taxonomy>,
}

impl VideoAnnotation {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub taxonomy: Arc<Taxonomy>,
    pub videos: Vec<VideoAnnotation>,
}

/// Scores over all predicate classes for one ordered object pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PredicateDistribution {
    pub pair: (usize, usize),
    pub scores: Vec<f64>,
}

impl PredicateDistribution {
    pub fn new(pair: (usize, usize), scores: Vec<f64>) -> SgaResult<Self> {
        if scores.is_empty() {
            return Err(SgaError::contract("predicate_distribution", "empty score vector"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(SgaError::contract(
                "predicate_distribution",
                format!("non-finite score for pair {:?}", pair),
            ));
        }
        Ok(PredicateDistribution { pair, scores })
    }

    /// Scores rescaled to sum to 1. Requires non-negative mass.
    pub fn normalized(&self) -> SgaResult<Vec<f64>> {
        if self.scores.iter().any(|&s| s < 0.0) {
            return Err(SgaError::contract(
                "predicate_distribution.normalized",
                "negative score cannot be normalized",
            ));
        }
        let total: f64 = self.scores.iter().sum();
        if total <= 0.0 {
            return Err(SgaError::contract(
                "predicate_distribution.normalized",
                "zero total mass",
            ));
        }
        Ok(self.scores.iter().map(|s| s / total).collect())
    }

    /// Index of the highest score; ties go to the lowest predicate id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate().skip(1) {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

fn validate_dists(
    op: &'static str,
    dists: &[PredicateDistribution],
    objects: &[ObjectInstance],
) -> SgaResult<()> {
    let mut seen: Vec<(usize, usize)> = Vec::with_capacity(dists.len());
    for d in dists {
        let (s, o) = d.pair;
        if s >= objects.len() || o >= objects.len() {
            return Err(SgaError::contract(
                op,
                format!("pair {:?} references a missing object ({} present)", d.pair, objects.len()),
            ));
        }
        if s == o {
            return Err(SgaError::contract(op, format!("pair {:?} is reflexive", d.pair)));
        }
        if seen.contains(&d.pair) {
            return Err(SgaError::contract(op, format!("pair {:?} appears twice", d.pair)));
        }
        seen.push(d.pair);
    }
    Ok(())
}

/// One triplet per pair: the argmax predicate, scored by its own score.
pub fn build_graph_with_constraint(
    frame_index: usize,
    dists: &[PredicateDistribution],
    objects: &[ObjectInstance],
) -> SgaResult<SceneGraph> {
    validate_dists("build_graph_with_constraint", dists, objects)?;
    let triplets = dists
        .iter()
        .map(|d| {
            let p = d.argmax();
            RelationshipTriplet {
                subject_idx: d.pair.0,
                object_idx: d.pair.1,
                predicate: p,
                score: Some(d.scores[p]),
            }
        })
        .collect();
    Ok(SceneGraph { frame_index, objects: objects.to_vec(), triplets })
}

/// Every (pair, predicate) combination as a scored triplet, globally sorted
/// by score descending (ties: lowest predicate id, then pair order), then
/// truncated to `k_cap` when given.
pub fn build_graph_no_constraint(
    frame_index: usize,
    dists: &[PredicateDistribution],
    objects: &[ObjectInstance],
    k_cap: Option<usize>,
) -> SgaResult<SceneGraph> {
    validate_dists("build_graph_no_constraint", dists, objects)?;
    let mut triplets: Vec<RelationshipTriplet> = Vec::new();
    for d in dists {
        for (p, &s) in d.scores.iter().enumerate() {
            triplets.push(RelationshipTriplet {
                subject_idx: d.pair.0,
                object_idx: d.pair.1,
                predicate: p,
                score: Some(s),
            });
        }
    }
    triplets.sort_by(|a, b| {
        b.score
            .unwrap()
            .total_cmp(&a.score.unwrap())
            .then(a.predicate.cmp(&b.predicate))
            .then(a.subject_idx.cmp(&b.subject_idx))
            .then(a.object_idx.cmp(&b.object_idx))
    });
    if let Some(k) = k_cap {
        triplets.truncate(k);
    }
    Ok(SceneGraph { frame_index, objects: objects.to_vec(), triplets })
}
