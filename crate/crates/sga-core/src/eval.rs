//! Evaluation protocol: anticipation regimes, Recall@K and mean-recall
//! aggregation over a split, the copy-forward persistence reference, and
//! side-by-side ablation tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::{mix_seed, SolverMethod, SolverSpec};
use crate::error::{SgaError, SgaResult};
use crate::graph::{
    build_graph_no_constraint, build_graph_with_constraint, Corpus, PredicateDistribution,
    SceneGraph, Taxonomy, VideoAnnotation,
};
use crate::heads::{predicate_logits, probability_view};
use crate::metrics::{rank_triplets, recall_at_k, scored_triplets, ClassRecallTally, ScoredTriplet};
use crate::model::{anticipate_window, encode_video, Ctx, SgaModel};
use crate::scalar::Scalar;
use crate::tape::Tape;

/// How observed context and anticipation targets are chosen per video.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalRegime {
    /// Observe the first max(3, floor(fraction * frames)) frames, anticipate
    /// every remaining frame.
    ContextFraction { fraction: f64 },
    /// For every context length T with a frame T + horizon in the video,
    /// anticipate that single frame.
    FutureFrames { horizon: usize },
}

impl EvalRegime {
    pub fn validate(&self) -> SgaResult<()> {
        match *self {
            EvalRegime::ContextFraction { fraction } => {
                if !fraction.is_finite() || fraction <= 0.0 || fraction >= 1.0 {
                    return Err(SgaError::Config(format!(
                        "context fraction must lie in (0, 1), got {fraction}"
                    )));
                }
            }
            EvalRegime::FutureFrames { horizon } => {
                if horizon == 0 {
                    return Err(SgaError::Config("future-frame horizon must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match *self {
            EvalRegime::ContextFraction { fraction } => format!("context_fraction_{fraction:.2}"),
            EvalRegime::FutureFrames { horizon } => format!("future_frames_{horizon}"),
        }
    }

    /// (context length, target frames) entries for one video; empty when the
    /// video is too short for the regime.
    pub fn plan(&self, n_frames: usize) -> Vec<(usize, Vec<usize>)> {
        match *self {
            EvalRegime::ContextFraction { fraction } => {
                let t = ((fraction * n_frames as f64).floor() as usize).max(3);
                if t >= n_frames {
                    return Vec::new();
                }
                vec![(t, (t..n_frames).collect())]
            }
            EvalRegime::FutureFrames { horizon } => {
                if n_frames < 3 + horizon {
                    return Vec::new();
                }
                (3..=n_frames - horizon).map(|t| (t, vec![t + horizon - 1])).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphStrategy {
    WithConstraint,
    NoConstraint,
}

impl GraphStrategy {
    pub fn label(self) -> &'static str {
        match self {
            GraphStrategy::WithConstraint => "with_constraint",
            GraphStrategy::NoConstraint => "no_constraint",
        }
    }

    /// Accepts underscore and hyphen spellings.
    pub fn from_name(name: &str) -> SgaResult<Self> {
        match name.replace('-', "_").as_str() {
            "with_constraint" => Ok(GraphStrategy::WithConstraint),
            "no_constraint" => Ok(GraphStrategy::NoConstraint),
            _ => Err(SgaError::Config(format!("unknown graph strategy {name:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub strategies: Vec<GraphStrategy>,
    pub solver: SolverSpec,
    /// Base seed for stochastic evaluation paths; recorded in the report.
    pub seed: u64,
    /// Drop gt triplets whose category pair was never observed in context
    /// instead of counting them as misses.
    pub ignore_unseen_pairs: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![10, 20, 50],
            strategies: vec![GraphStrategy::WithConstraint, GraphStrategy::NoConstraint],
            solver: SolverSpec { method: SolverMethod::Euler, h: 0.04 },
            seed: 0,
            ignore_unseen_pairs: false,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> SgaResult<()> {
        if self.ks.is_empty() || self.strategies.is_empty() {
            return Err(SgaError::Config("evaluation needs at least one K and strategy".into()));
        }
        if self.ks.iter().any(|&k| k == 0) {
            return Err(SgaError::Config("K must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub regime: String,
    pub strategy: GraphStrategy,
    pub k: usize,
    pub recall: f64,
    pub mean_recall: f64,
    /// Per predicate class; `None` where the split holds no gt instance.
    pub per_class: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub regime: String,
    pub evaluated_videos: usize,
    /// Videos too short for the regime.
    pub skipped_videos: usize,
    /// Present when evaluation sampled stochastic paths.
    pub brownian_seed: Option<u64>,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    /// One line per (strategy, K), fixed six-decimal formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,regime,strategy,K,recall,mean_recall\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6}",
                r.model,
                r.regime,
                r.strategy.label(),
                r.k,
                r.recall,
                r.mean_recall
            )
            .expect("string write");
        }
        out
    }

    pub fn to_json(&self) -> SgaResult<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| SgaError::contract("report_json", e.to_string()))
    }

    pub fn row(&self, strategy: GraphStrategy, k: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.strategy == strategy && r.k == k)
    }
}

/// Frame-then-video averaging per (strategy, K), plus the split-wide
/// per-class tallies behind mean recall.
struct Accum {
    strategies: Vec<GraphStrategy>,
    ks: Vec<usize>,
    frame_vals: Vec<Vec<f64>>,
    video_means: Vec<Vec<f64>>,
    tallies: Vec<ClassRecallTally>,
}

impl Accum {
    fn new(opts: &EvalOptions, num_predicates: usize) -> Self {
        let cells = opts.strategies.len() * opts.ks.len();
        Accum {
            strategies: opts.strategies.clone(),
            ks: opts.ks.clone(),
            frame_vals: vec![Vec::new(); cells],
            video_means: vec![Vec::new(); cells],
            tallies: vec![ClassRecallTally::new(num_predicates); cells],
        }
    }

    /// `ranked` is aligned with the strategy list.
    fn add_frame(&mut self, gt: &SceneGraph, ranked: &[Vec<ScoredTriplet>]) -> SgaResult<()> {
        for (si, r) in ranked.iter().enumerate() {
            for (ki, &k) in self.ks.iter().enumerate() {
                let cell = si * self.ks.len() + ki;
                if let Some(v) = recall_at_k(gt, r, k)? {
                    self.frame_vals[cell].push(v);
                }
                self.tallies[cell].add_frame(gt, r, k)?;
            }
        }
        Ok(())
    }

    fn end_video(&mut self) {
        for cell in 0..self.frame_vals.len() {
            let vals = &mut self.frame_vals[cell];
            if !vals.is_empty() {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                self.video_means[cell].push(mean);
                vals.clear();
            }
        }
    }

    fn finish(
        self,
        model: String,
        regime: String,
        evaluated_videos: usize,
        skipped_videos: usize,
        brownian_seed: Option<u64>,
    ) -> SgaResult<MetricReport> {
        let mut rows = Vec::new();
        for (si, &strategy) in self.strategies.iter().enumerate() {
            for (ki, &k) in self.ks.iter().enumerate() {
                let cell = si * self.ks.len() + ki;
                let means = &self.video_means[cell];
                let (Some(mean_recall), false) = (self.tallies[cell].mean_recall(), means.is_empty())
                else {
                    return Err(SgaError::Incompatible(format!(
                        "regime {regime} evaluated no ground-truth triplets"
                    )));
                };
                rows.push(MetricRow {
                    model: model.clone(),
                    regime: regime.clone(),
                    strategy,
                    k,
                    recall: means.iter().sum::<f64>() / means.len() as f64,
                    mean_recall,
                    per_class: self.tallies[cell].per_class(),
                });
            }
        }
        Ok(MetricReport {
            model,
            regime,
            evaluated_videos,
            skipped_videos,
            brownian_seed,
            rows,
        })
    }
}

fn check_taxonomy(model_tax: &Taxonomy, corpus_tax: &Taxonomy) -> SgaResult<()> {
    if model_tax != corpus_tax {
        return Err(SgaError::Incompatible(format!(
            "model taxonomy ({} objects, {} predicates) does not match corpus ({}, {})",
            model_tax.num_object_classes(),
            model_tax.num_predicates(),
            corpus_tax.num_object_classes(),
            corpus_tax.num_predicates()
        )));
    }
    Ok(())
}

/// Category pairs with at least one gt triplet before frame `t_obs`.
fn observed_keys(video: &VideoAnnotation, t_obs: usize) -> BTreeSet<(usize, usize)> {
    let mut keys = BTreeSet::new();
    for f in &video.frames[..t_obs.min(video.frames.len())] {
        for t in &f.triplets {
            keys.insert((f.objects[t.subject_idx].category, f.objects[t.object_idx].category));
        }
    }
    keys
}

fn filter_gt(gt: &SceneGraph, keys: &BTreeSet<(usize, usize)>) -> SceneGraph {
    SceneGraph {
        frame_index: gt.frame_index,
        objects: gt.objects.clone(),
        triplets: gt
            .triplets
            .iter()
            .filter(|t| {
                keys.contains(&(gt.objects[t.subject_idx].category, gt.objects[t.object_idx].category))
            })
            .cloned()
            .collect(),
    }
}

/// Runs the full protocol for one model over a corpus split.
pub fn evaluate<S: Scalar>(
    model: &SgaModel<S>,
    corpus: &Corpus,
    regime: &EvalRegime,
    opts: &EvalOptions,
) -> SgaResult<MetricReport> {
    regime.validate()?;
    opts.validate()?;
    check_taxonomy(&model.taxonomy, &corpus.taxonomy)?;
    if let Some(d) = &model.ids.dynamics {
        d.validate_spec(&opts.solver)?;
    }

    let mut acc = Accum::new(opts, corpus.taxonomy.num_predicates());
    let mut skipped = 0usize;
    let mut evaluated = 0usize;
    for (vi, video) in corpus.videos.iter().enumerate() {
        let plan = regime.plan(video.num_frames());
        if plan.is_empty() {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &model.reg);
        let enc = encode_video(&mut ctx, model, &video.video_id, &video.frames)?;
        let video_seed = mix_seed(opts.seed, vi as u64);
        for (t_obs, targets) in plan {
            let horizon = targets.iter().max().expect("nonempty targets") - t_obs + 1;
            let preds = anticipate_window(
                &mut ctx,
                model,
                &enc,
                t_obs,
                horizon,
                &opts.solver,
                mix_seed(video_seed, t_obs as u64),
            )?;
            for &f in &targets {
                let gt = &video.frames[f];
                let mut dists = Vec::new();
                for wp in &preds {
                    let z = wp
                        .zs
                        .iter()
                        .find(|&&(zf, _)| zf == f)
                        .map(|&(_, z)| z)
                        .expect("window covers every target frame");
                    let key = enc.tracks[wp.track].key;
                    let subj = gt.objects.iter().position(|o| o.category == key.0);
                    let obj = gt.objects.iter().position(|o| o.category == key.1);
                    let (Some(subject_idx), Some(object_idx)) = (subj, obj) else {
                        continue; // pair has no counterpart in the target frame
                    };
                    let logits = predicate_logits(&mut ctx, model.ids.ant_pred, z)?;
                    let probs = probability_view(&mut ctx, logits)?;
                    let scores: Vec<f64> = ctx
                        .tape
                        .value(probs)
                        .iter()
                        .map(|v| v.to_f64().unwrap_or(f64::NAN))
                        .collect();
                    dists.push(PredicateDistribution::new((subject_idx, object_idx), scores)?);
                }
                let gt_eval = if opts.ignore_unseen_pairs {
                    filter_gt(gt, &observed_keys(video, t_obs))
                } else {
                    gt.clone()
                };
                let mut ranked = Vec::with_capacity(opts.strategies.len());
                for strategy in &opts.strategies {
                    let graph = match strategy {
                        GraphStrategy::WithConstraint => {
                            build_graph_with_constraint(f, &dists, &gt.objects)?
                        }
                        GraphStrategy::NoConstraint => {
                            build_graph_no_constraint(f, &dists, &gt.objects, None)?
                        }
                    };
                    ranked.push(rank_triplets(scored_triplets(&graph)?)?);
                }
                acc.add_frame(&gt_eval, &ranked)?;
            }
        }
        acc.end_video();
    }

    let brownian = opts.solver.method.is_stochastic().then_some(opts.seed);
    acc.finish(model.kind.name().to_string(), regime.label(), evaluated, skipped, brownian)
}

/// Copy-forward reference: the last observed frame's gt triplets, scored
/// 1.0, stand in as the prediction for every anticipated frame.
pub fn evaluate_persistence(
    corpus: &Corpus,
    regime: &EvalRegime,
    opts: &EvalOptions,
) -> SgaResult<MetricReport> {
    regime.validate()?;
    opts.validate()?;
    let mut acc = Accum::new(opts, corpus.taxonomy.num_predicates());
    let mut skipped = 0usize;
    let mut evaluated = 0usize;
    for video in &corpus.videos {
        let plan = regime.plan(video.num_frames());
        if plan.is_empty() {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        for (t_obs, targets) in plan {
            let last = &video.frames[t_obs - 1];
            let ranked = rank_triplets(scored_triplets(last)?)?;
            for &f in &targets {
                let gt = &video.frames[f];
                let gt_eval = if opts.ignore_unseen_pairs {
                    filter_gt(gt, &observed_keys(video, t_obs))
                } else {
                    gt.clone()
                };
                let per_strategy = vec![ranked.clone(); opts.strategies.len()];
                acc.add_frame(&gt_eval, &per_strategy)?;
            }
        }
        acc.end_video();
    }
    acc.finish("persistence".to_string(), regime.label(), evaluated, skipped, None)
}

/// Side-by-side rows for several models under several regimes. Columns are
/// the (strategy, K) grid of `opts`; every model must share the corpus
/// taxonomy.
pub fn run_ablation<S: Scalar>(
    models: &[(String, &SgaModel<S>)],
    corpus: &Corpus,
    regimes: &[EvalRegime],
    opts: &EvalOptions,
) -> SgaResult<String> {
    if models.len() < 2 {
        return Err(SgaError::Config("ablation needs at least two checkpoints".into()));
    }
    if regimes.is_empty() {
        return Err(SgaError::Config("ablation needs at least one regime".into()));
    }
    let mut out = String::from("label,model,regime");
    for strategy in &opts.strategies {
        for k in &opts.ks {
            write!(out, ",{}_R@{k},{}_mR@{k}", strategy.label(), strategy.label())
                .expect("string write");
        }
    }
    out.push('\n');
    for (label, model) in models {
        for regime in regimes {
            let report = evaluate(model, corpus, regime, opts)?;
            write!(out, "{label},{},{}", report.model, report.regime).expect("string write");
            for strategy in &opts.strategies {
                for &k in &opts.ks {
                    let row = report.row(*strategy, k).ok_or_else(|| {
                        SgaError::contract("run_ablation", "missing report row")
                    })?;
                    write!(out, ",{:.6},{:.6}", row.recall, row.mean_recall)
                        .expect("string write");
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}
