//! Synthetic corpus generator with known dynamics. Each video has one actor
//! and a handful of objects; every (actor, object) pair carries a predicate
//! evolving as a Markov chain under a configured transition matrix. Object
//! geometry can be coupled to the current predicate (the object sits at a
//! predicate-determined bearing from the actor), which is what makes future
//! predicates inferable from an observed prefix rather than only from priors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{SgaError, SgaResult};
use crate::graph::{
    Corpus, ObjectInstance, RelationshipTriplet, SceneGraph, Taxonomy, VideoAnnotation,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Object taxonomy size including the actor class (category 0).
    pub num_object_classes: usize,
    pub num_predicates: usize,
    pub num_videos: usize,
    /// Inclusive frame-count range per video.
    pub frames: (usize, usize),
    /// Inclusive (actor, object) pair-count range per video.
    pub pairs: (usize, usize),
    /// Row-stochastic |P| x |P| matrix: transition[p][q] = P(next = q | now = p).
    pub transition: Vec<Vec<f64>>,
    /// Place each object at a bearing around the actor determined by its
    /// current predicate, so geometry reveals the chain state.
    pub box_coupling: bool,
}

pub fn identity_matrix(p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Deterministic full cycle p -> (p+1) mod |P|.
pub fn cyclic_matrix(p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|i| {
            (0..p)
                .map(|j| if j == (i + 1) % p { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

pub fn uniform_matrix(p: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / p as f64; p]; p]
}

/// First |P|/2 predicates are absorbing; the rest cycle deterministically
/// among themselves. Mixes persistence with forced motion so a copy-forward
/// baseline is right on exactly the absorbing share of pairs.
pub fn mixed_matrix(p: usize) -> Vec<Vec<f64>> {
    let split = p / 2;
    (0..p)
        .map(|i| {
            let target = if i < split { i } else { split + (i - split + 1) % (p - split) };
            (0..p).map(|j| if j == target { 1.0 } else { 0.0 }).collect()
        })
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> SgaResult<()> {
        let p = self.num_predicates;
        if p == 0 || self.num_object_classes < 2 {
            return Err(SgaError::Config(
                "synth: need at least 1 predicate and 2 object classes".into(),
            ));
        }
        if self.frames.0 < 3 || self.frames.0 > self.frames.1 {
            return Err(SgaError::Config(format!(
                "synth: frame range {:?} invalid (min 3, min <= max)",
                self.frames
            )));
        }
        if self.pairs.0 < 1 || self.pairs.0 > self.pairs.1 {
            return Err(SgaError::Config(format!("synth: pair range {:?} invalid", self.pairs)));
        }
        if self.pairs.1 > self.num_object_classes - 1 {
            return Err(SgaError::Config(format!(
                "synth: {} pairs need {} distinct non-actor classes, taxonomy has {}",
                self.pairs.1,
                self.pairs.1,
                self.num_object_classes - 1
            )));
        }
        if self.transition.len() != p {
            return Err(SgaError::Config(format!(
                "synth: transition matrix has {} rows, |P| = {p}",
                self.transition.len()
            )));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != p {
                return Err(SgaError::Config(format!(
                    "synth: transition row {i} has {} entries, |P| = {p}",
                    row.len()
                )));
            }
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x) || !x.is_finite()) {
                return Err(SgaError::Config(format!(
                    "synth: transition row {i} has entries outside [0,1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SgaError::Config(format!(
                    "synth: transition row {i} sums to {sum}, not 1"
                )));
            }
        }
        Ok(())
    }
}

fn sample_row(rng: &mut ChaCha8Rng, row: &[f64]) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    row.len() - 1 // rounding spill lands on the last state
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn box_around(cx: f64, cy: f64, half_w: f64, half_h: f64) -> [f64; 4] {
    [
        clamp01(cx - half_w),
        clamp01(cy - half_h),
        clamp01(cx + half_w),
        clamp01(cy + half_h),
    ]
}

pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> SgaResult<Corpus> {
    cfg.validate()?;
    let p = cfg.num_predicates;
    let taxonomy = Arc::new(Taxonomy {
        object_classes: std::iter::once("person".to_string())
            .chain((1..cfg.num_object_classes).map(|i| format!("thing_{i}")))
            .collect(),
        predicate_classes: (0..p).map(|i| format!("rel_{i}")).collect(),
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut videos = Vec::with_capacity(cfg.num_videos);
    for vid in 0..cfg.num_videos {
        let n_frames = rng.gen_range(cfg.frames.0..=cfg.frames.1);
        let n_pairs = rng.gen_range(cfg.pairs.0..=cfg.pairs.1);

        // Distinct non-actor categories via partial shuffle.
        let mut cats: Vec<usize> = (1..cfg.num_object_classes).collect();
        for i in 0..n_pairs {
            let j = rng.gen_range(i..cats.len());
            cats.swap(i, j);
        }
        cats.truncate(n_pairs);

        // Predicate chains, one per pair, rolled out for the whole video.
        let mut chains: Vec<Vec<usize>> = Vec::with_capacity(n_pairs);
        for _ in 0..n_pairs {
            let mut chain = Vec::with_capacity(n_frames);
            let mut state = rng.gen_range(0..p);
            chain.push(state);
            for _ in 1..n_frames {
                state = sample_row(&mut rng, &cfg.transition[state]);
                chain.push(state);
            }
            chains.push(chain);
        }

        // Actor wanders slightly around the frame center.
        let (mut ax, mut ay) = (rng.gen_range(0.45..0.55), rng.gen_range(0.45..0.55));
        // Uncoupled objects get an independent anchor instead.
        let anchors: Vec<(f64, f64)> = (0..n_pairs)
            .map(|_| (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)))
            .collect();

        let mut frames = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            ax = (ax + rng.gen_range(-0.015f64..0.015)).clamp(0.35, 0.65);
            ay = (ay + rng.gen_range(-0.015f64..0.015)).clamp(0.35, 0.65);
            let mut objects = vec![ObjectInstance {
                category: 0,
                bbox: box_around(ax, ay, 0.12, 0.18),
            }];
            let mut triplets = Vec::with_capacity(n_pairs);
            for k in 0..n_pairs {
                let pred = chains[k][t];
                let (cx, cy) = if cfg.box_coupling {
                    let theta = std::f64::consts::TAU * pred as f64 / p as f64
                        + rng.gen_range(-0.08..0.08);
                    let radius = 0.22 + rng.gen_range(-0.02..0.02);
                    (ax + radius * theta.cos(), ay + radius * theta.sin())
                } else {
                    let (bx, by) = anchors[k];
                    (
                        (bx + rng.gen_range(-0.02f64..0.02)).clamp(0.1, 0.9),
                        (by + rng.gen_range(-0.02f64..0.02)).clamp(0.1, 0.9),
                    )
                };
                objects.push(ObjectInstance {
                    category: cats[k],
                    bbox: box_around(cx, cy, 0.055, 0.055),
                });
                triplets.push(RelationshipTriplet {
                    subject_idx: 0,
                    object_idx: k + 1,
                    predicate: pred,
                    score: None,
                });
            }
            frames.push(SceneGraph { frame_index: t, objects, triplets });
        }
        videos.push(VideoAnnotation {
            video_id: format!("synth_{vid:04}"),
            frames,
            taxonomy: Arc::clone(&taxonomy),
        });
    }
    Ok(Corpus { taxonomy, videos })
}
