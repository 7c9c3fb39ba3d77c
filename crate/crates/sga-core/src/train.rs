//! Training objective: sliding anticipation windows over each video and the
//! weighted per-video loss. The epoch loop lives here too, layered on top of
//! `video_loss` so tests can probe the objective in isolation.

use serde::{Deserialize, Serialize};

use crate::anticipator::predict_next_parallel;
use crate::dynamics::{mix_seed, SolverSpec};
use crate::error::{SgaError, SgaResult};
use crate::graph::{Corpus, SceneGraph, VideoAnnotation};
use crate::heads::{bbox_predict, object_logits, predicate_logits, probability_view};
use crate::losses::{
    bbox_regression_loss, object_ce_loss, predicate_margin_loss, reconstruction_frame_loss,
    total_loss, LossTerms, LossWeights,
};
use crate::model::{anticipate_window, encode_video, Ctx, SgaModel};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::{s, Scalar};
use crate::tape::{Tape, Var};

/// Observed-context lengths for one video: every T with 3 <= T <= n - H.
/// Videos shorter than 3 + H yield no windows and are skipped upstream.
pub fn window_starts(n_frames: usize, horizon: usize) -> Vec<usize> {
    if horizon == 0 || n_frames < 3 + horizon {
        return Vec::new();
    }
    (3..=n_frames - horizon).collect()
}

/// Everything `video_loss` needs besides the video itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    /// Anticipation horizon (frames per window).
    pub horizon: usize,
    pub solver: SolverSpec,
    pub weights: LossWeights,
    /// Baselines only: train on one parallel next-step pass per pair track
    /// instead of free-running windows. Ignored by the dynamics models.
    pub teacher_forcing: bool,
}

fn positives_at(frame: &SceneGraph, pair: (usize, usize)) -> Vec<usize> {
    frame
        .triplets
        .iter()
        .filter(|t| t.subject_idx == pair.0 && t.object_idx == pair.1)
        .map(|t| t.predicate)
        .collect()
}

/// The full training objective for one video.
///
/// Observed part: a margin loss on every temporally-encoded pair under the
/// generation head (when the kind carries one) and cross-entropy on every
/// object's class. Anticipated part, per window T: margin loss under the
/// anticipation head, box regression (dynamics kinds), and reconstruction
/// against the encoder's own output at the anticipated frame, each applied
/// only where the pair actually appears in the target frame. Teacher-forced
/// baselines supervise next-occurrence predictions at frames >= 3 instead of
/// rolling out windows; they use the identical loss terms.
pub fn video_loss<S: Scalar>(
    ctx: &mut Ctx<S>,
    model: &SgaModel<S>,
    video: &VideoAnnotation,
    spec: &ObjectiveSpec,
    seed: u64,
) -> SgaResult<Var> {
    let frames = &video.frames;
    let enc = encode_video(ctx, model, &video.video_id, frames)?;
    let mut terms = LossTerms::zero(ctx.tape)?;

    if let Some(gen) = model.ids.gen_pred {
        for (t, reprs) in enc.reprs.iter().enumerate() {
            for r in reprs {
                let pos = positives_at(&frames[t], r.pair);
                if pos.is_empty() {
                    continue;
                }
                let logits = predicate_logits(ctx, gen, r.var)?;
                let l = predicate_margin_loss(ctx.tape, logits, &pos)?;
                terms.gen = ctx.tape.add(terms.gen, l)?;
            }
        }
    }

    let feat_vars: Vec<Var> = enc.obj_feats.iter().flatten().map(|f| f.var).collect();
    if !feat_vars.is_empty() {
        let targets: Vec<usize> =
            frames.iter().flat_map(|f| f.objects.iter().map(|o| o.category)).collect();
        let all = ctx.tape.concat(&feat_vars, 0)?;
        let logits = object_logits(ctx, model.ids.object_head, all)?;
        let probs = probability_view(ctx, logits)?;
        let l = object_ce_loss(ctx.tape, probs, &targets)?;
        terms.obj = ctx.tape.add(terms.obj, l)?;
    }

    let starts = window_starts(frames.len(), spec.horizon);
    if !starts.is_empty() {
        if model.kind.uses_dynamics() || !spec.teacher_forcing {
            for t_obs in starts {
                let preds = anticipate_window(
                    ctx,
                    model,
                    &enc,
                    t_obs,
                    spec.horizon,
                    &spec.solver,
                    mix_seed(seed, t_obs as u64),
                )?;
                let mut recon: Vec<Vec<(Var, Var)>> = vec![Vec::new(); frames.len()];
                for wp in &preds {
                    let track = &enc.tracks[wp.track];
                    for &(f, z) in &wp.zs {
                        let Some(occ_idx) = track.at_frame(f) else { continue };
                        let (_, slot) = track.occ[occ_idx];
                        let r = enc.reprs[f][slot];
                        supervise_step(ctx, model, &frames[f], r.pair, z, &mut terms)?;
                        recon[f].push((z, r.var));
                    }
                }
                flush_recon(ctx, frames, &recon, &mut terms)?;
            }
        } else {
            let ant = model.ids.anticipator.as_ref().ok_or_else(|| {
                SgaError::contract("video_loss", "teacher forcing needs an anticipator")
            })?;
            let mut recon: Vec<Vec<(Var, Var)>> = vec![Vec::new(); frames.len()];
            for track in &enc.tracks {
                if track.occ.len() < 2 {
                    continue;
                }
                let hist: Vec<Var> =
                    track.occ.iter().map(|&(t, slot)| enc.reprs[t][slot].var).collect();
                let preds = predict_next_parallel(ctx, ant, &hist)?;
                for (i, &z) in preds.iter().enumerate().take(track.occ.len() - 1) {
                    let (f, slot) = track.occ[i + 1];
                    // Windows never start before three observed frames, so
                    // earlier occurrences stay context-only here as well.
                    if f < 3 {
                        continue;
                    }
                    let r = enc.reprs[f][slot];
                    supervise_step(ctx, model, &frames[f], r.pair, z, &mut terms)?;
                    recon[f].push((z, r.var));
                }
            }
            flush_recon(ctx, frames, &recon, &mut terms)?;
        }
    }

    total_loss(ctx.tape, &spec.weights, &terms)
}

/// Margin and box terms for one anticipated pair state at a supervised frame.
fn supervise_step<S: Scalar>(
    ctx: &mut Ctx<S>,
    model: &SgaModel<S>,
    frame: &SceneGraph,
    pair: (usize, usize),
    z: Var,
    terms: &mut LossTerms,
) -> SgaResult<()> {
    let pos = positives_at(frame, pair);
    if !pos.is_empty() {
        let logits = predicate_logits(ctx, model.ids.ant_pred, z)?;
        let l = predicate_margin_loss(ctx.tape, logits, &pos)?;
        terms.ant = ctx.tape.add(terms.ant, l)?;
    }
    if let Some(bbox) = &model.ids.bbox {
        let (pred_s, pred_o) = bbox_predict(ctx, bbox, z)?;
        for (pred, gt) in [(pred_s, frame.objects[pair.0].bbox), (pred_o, frame.objects[pair.1].bbox)]
        {
            let gt = ctx.tape.constant(vec![1, 4], gt.iter().map(|&x| s::<S>(x)).collect())?;
            let l = bbox_regression_loss(ctx.tape, pred, gt)?;
            terms.boxes = ctx.tape.add(terms.boxes, l)?;
        }
    }
    Ok(())
}

/// One reconstruction term per anticipated frame, normalized by that frame's
/// squared object count.
fn flush_recon<S: Scalar>(
    ctx: &mut Ctx<S>,
    frames: &[SceneGraph],
    recon: &[Vec<(Var, Var)>],
    terms: &mut LossTerms,
) -> SgaResult<()> {
    for (f, pairs) in recon.iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let l = reconstruction_frame_loss(ctx.tape, pairs, frames[f].objects.len())?;
        terms.recon = ctx.tape.add(terms.recon, l)?;
    }
    Ok(())
}

// ── Epoch loop ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// First epoch index to run; nonzero when resuming from a checkpoint.
    #[serde(default)]
    pub start_epoch: usize,
    pub optim: AdamConfig,
    pub objective: ObjectiveSpec,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> SgaResult<()> {
        if self.epochs == 0 {
            return Err(SgaError::Config("epochs must be positive".into()));
        }
        if self.start_epoch >= self.epochs {
            return Err(SgaError::Config(format!(
                "start epoch {} leaves nothing to run out of {} epochs",
                self.start_epoch, self.epochs
            )));
        }
        if !(self.optim.lr.is_finite() && self.optim.lr > 0.0) {
            return Err(SgaError::Config(format!("learning rate must be positive, got {}", self.optim.lr)));
        }
        if self.objective.horizon == 0 {
            return Err(SgaError::Config("training horizon must be positive".into()));
        }
        self.objective.weights.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Total video loss averaged over the corpus.
    pub mean_loss: f64,
    pub videos: usize,
}

/// Pins the failure to a window by re-running the rollouts and scanning
/// their values; loss arithmetic never turns finite latents non-finite
/// faster than the rollouts themselves blow up.
fn nonfinite_context<S: Scalar>(
    model: &SgaModel<S>,
    video: &VideoAnnotation,
    spec: &ObjectiveSpec,
    seed: u64,
    epoch: usize,
) -> String {
    let at = format!("epoch {epoch}, video {}", video.video_id);
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, &model.reg);
    let Ok(enc) = encode_video(&mut ctx, model, &video.video_id, &video.frames) else {
        return format!("{at}: encoding failed during diagnosis");
    };
    for (f, reprs) in enc.reprs.iter().enumerate() {
        for r in reprs {
            if ctx.tape.value(r.var).iter().any(|v| !v.is_finite()) {
                return format!("{at}: encoder output non-finite at frame {f}");
            }
        }
    }
    for t_obs in window_starts(video.num_frames(), spec.horizon) {
        let preds = match anticipate_window(
            &mut ctx,
            model,
            &enc,
            t_obs,
            spec.horizon,
            &spec.solver,
            mix_seed(seed, t_obs as u64),
        ) {
            Ok(p) => p,
            Err(e) => return format!("{at}, window T={t_obs}: rollout failed ({e})"),
        };
        for wp in &preds {
            for &(f, z) in &wp.zs {
                if ctx.tape.value(z).iter().any(|v| !v.is_finite()) {
                    return format!("{at}, window T={t_obs}: rollout non-finite at frame {f}");
                }
            }
        }
    }
    format!("{at}: loss non-finite with finite rollouts (inspect loss terms)")
}

/// Runs the objective over the corpus for `cfg.epochs` epochs, one combined
/// backward pass and optimizer step per video. `on_epoch` observes the
/// freshly updated model after every epoch, so callers can persist
/// checkpoints and log lines as they go.
pub fn train<S: Scalar>(
    model: &mut SgaModel<S>,
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &SgaModel<S>) -> SgaResult<()>,
) -> SgaResult<Vec<EpochStats>> {
    cfg.validate()?;
    if corpus.videos.is_empty() {
        return Err(SgaError::Config("training corpus is empty".into()));
    }
    if *model.taxonomy != *corpus.taxonomy {
        return Err(SgaError::Incompatible(
            "model taxonomy does not match the training corpus".into(),
        ));
    }
    if let Some(v) = corpus.videos.iter().find(|v| v.num_frames() > model.dims.max_frames) {
        return Err(SgaError::Incompatible(format!(
            "video {} has {} frames, model supports at most {}",
            v.video_id,
            v.num_frames(),
            model.dims.max_frames
        )));
    }
    if let Some(d) = &model.ids.dynamics {
        d.validate_spec(&cfg.objective.solver)?;
    }

    let mut adam = Adam::new(cfg.optim, model.reg.tensors());
    let mut stats = Vec::new();
    for epoch in cfg.start_epoch..cfg.epochs {
        let epoch_seed = mix_seed(cfg.seed, epoch as u64);
        let mut sum = 0.0;
        for (vi, video) in corpus.videos.iter().enumerate() {
            let video_seed = mix_seed(epoch_seed, vi as u64);
            let mut tape = Tape::new();
            let mut ctx = Ctx::new(&mut tape, &model.reg);
            let loss = video_loss(&mut ctx, model, video, &cfg.objective, video_seed)?;
            let lv = tape.scalar_value(loss)?.to_f64().unwrap_or(f64::NAN);
            if !lv.is_finite() {
                return Err(SgaError::NonFinite {
                    context: nonfinite_context(model, video, &cfg.objective, video_seed, epoch),
                });
            }
            sum += lv;
            tape.backward(loss)?;
            tape.write_param_grads(model.reg.tensors_mut())?;
            for t in model.reg.tensors_mut() {
                if t.grad().is_none() {
                    // untouched this video (no windows reached its head):
                    // an exact zero gradient, so Adam still decays moments
                    let zeros = vec![S::zero(); t.len()];
                    t.accumulate_grad(&zeros)?;
                }
            }
            adam.step(model.reg.tensors_mut())?;
        }
        let st = EpochStats {
            epoch,
            mean_loss: sum / corpus.videos.len() as f64,
            videos: corpus.videos.len(),
        };
        on_epoch(&st, model)?;
        stats.push(st);
    }
    Ok(stats)
}
