//! Ranked-triplet metrics: Recall@K over category-level triplet matches and
//! the class-balanced mean recall pooled across a split.

use crate::error::{SgaError, SgaResult};
use crate::graph::SceneGraph;

/// One ranked prediction, lifted from object indices to category space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredTriplet {
    pub subject_cat: usize,
    pub predicate: usize,
    pub object_cat: usize,
    pub score: f64,
}

impl ScoredTriplet {
    fn matches(&self, other: &ScoredTriplet) -> bool {
        self.subject_cat == other.subject_cat
            && self.predicate == other.predicate
            && self.object_cat == other.object_cat
    }
}

/// Maps a graph's index-level triplets to category space. Ground-truth
/// triplets carry no score and default to 1.0.
pub fn scored_triplets(graph: &SceneGraph) -> SgaResult<Vec<ScoredTriplet>> {
    graph
        .triplets
        .iter()
        .map(|t| {
            let cat = |idx: usize| {
                graph.objects.get(idx).map(|o| o.category).ok_or_else(|| {
                    SgaError::contract(
                        "scored_triplets",
                        format!("triplet references object {idx} of {}", graph.objects.len()),
                    )
                })
            };
            Ok(ScoredTriplet {
                subject_cat: cat(t.subject_idx)?,
                predicate: t.predicate,
                object_cat: cat(t.object_idx)?,
                score: t.score.unwrap_or(1.0),
            })
        })
        .collect()
}

/// Sorts score-descending with ties broken by lowest predicate id; full ties
/// keep their input order, which is the pair order the graph builders emit.
pub fn rank_triplets(mut triplets: Vec<ScoredTriplet>) -> SgaResult<Vec<ScoredTriplet>> {
    if let Some(bad) = triplets.iter().find(|t| !t.score.is_finite()) {
        return Err(SgaError::contract(
            "rank_triplets",
            format!("non-finite score on predicate {}", bad.predicate),
        ));
    }
    triplets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.predicate.cmp(&b.predicate)));
    Ok(triplets)
}

fn check_ranked(ranked: &[ScoredTriplet]) -> SgaResult<()> {
    for w in ranked.windows(2) {
        let ordered = w[0].score > w[1].score
            || (w[0].score == w[1].score && w[0].predicate <= w[1].predicate);
        if !ordered {
            return Err(SgaError::contract(
                "recall_at_k",
                "predictions are not ranked (score descending, ties by predicate id)",
            ));
        }
    }
    Ok(())
}

/// Indices of the ground-truth triplets matched by the top-k predictions,
/// multiset-style: each prediction consumes at most one gt instance.
fn matched_gt_indices(
    gt: &SceneGraph,
    ranked: &[ScoredTriplet],
    k: usize,
) -> SgaResult<Vec<usize>> {
    check_ranked(ranked)?;
    let gt_triplets = scored_triplets(gt)?;
    let mut taken = vec![false; gt_triplets.len()];
    let mut out = Vec::new();
    for pred in ranked.iter().take(k) {
        let hit = gt_triplets
            .iter()
            .enumerate()
            .find(|(i, g)| !taken[*i] && g.matches(pred))
            .map(|(i, _)| i);
        if let Some(i) = hit {
            taken[i] = true;
            out.push(i);
        }
    }
    Ok(out)
}

/// Fraction of this frame's ground-truth triplets found in the top-k
/// predictions. `None` when the frame has no ground truth: such frames are
/// skipped rather than averaged in. A k beyond the prediction count behaves
/// as k = count.
pub fn recall_at_k(gt: &SceneGraph, ranked: &[ScoredTriplet], k: usize) -> SgaResult<Option<f64>> {
    if gt.triplets.is_empty() {
        return Ok(None);
    }
    let hits = matched_gt_indices(gt, ranked, k)?.len();
    Ok(Some(hits as f64 / gt.triplets.len() as f64))
}

/// Per-predicate-class hit and ground-truth counts pooled over many frames.
/// Mean recall averages the per-class recalls, so rare classes weigh the
/// same as common ones; classes never seen in gt stay out of the mean.
#[derive(Debug, Clone)]
pub struct ClassRecallTally {
    hits: Vec<usize>,
    totals: Vec<usize>,
}

impl ClassRecallTally {
    pub fn new(num_predicates: usize) -> Self {
        ClassRecallTally { hits: vec![0; num_predicates], totals: vec![0; num_predicates] }
    }

    pub fn add_frame(
        &mut self,
        gt: &SceneGraph,
        ranked: &[ScoredTriplet],
        k: usize,
    ) -> SgaResult<()> {
        for t in &gt.triplets {
            if t.predicate >= self.totals.len() {
                return Err(SgaError::contract(
                    "class_recall_tally",
                    format!("gt predicate {} outside |P| = {}", t.predicate, self.totals.len()),
                ));
            }
        }
        let gt_triplets = scored_triplets(gt)?;
        let matched = matched_gt_indices(gt, ranked, k)?;
        for g in &gt_triplets {
            self.totals[g.predicate] += 1;
        }
        for i in matched {
            self.hits[gt_triplets[i].predicate] += 1;
        }
        Ok(())
    }

    /// Recall per class; `None` for classes absent from the pooled gt.
    pub fn per_class(&self) -> Vec<Option<f64>> {
        self.hits
            .iter()
            .zip(&self.totals)
            .map(|(&h, &t)| if t == 0 { None } else { Some(h as f64 / t as f64) })
            .collect()
    }

    /// Mean over classes with at least one gt instance; `None` if no class
    /// ever appeared.
    pub fn mean_recall(&self) -> Option<f64> {
        let present: Vec<f64> = self.per_class().into_iter().flatten().collect();
        if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        }
    }
}
