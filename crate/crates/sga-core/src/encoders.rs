//! Attention encoders that turn symbolic annotations into relationship
//! representations. Three stages share one block shape (single-head scaled
//! dot-product attention plus a tanh feed-forward, both residual):
//!
//! ```text
//! object stage    per object track, causal over observed frames
//! spatial stage   per frame, full attention over that frame's pairs
//! temporal stage  per pair, causal over observed frames, position-aware
//! ```
//!
//! Causal masking uses -inf score entries, so a masked key contributes an
//! exact 0.0 and outputs at frame t are bit-identical whether or not later
//! frames are present on the tape. Prefix encodes therefore never have to be
//! recomputed per anticipation window.
//!
//! A pair representation concatenates `[W1 v_i | W2 v_j | W3 u_ij | S_i | S_j]`:
//! projected subject/object features, the projected union-box geometry, and
//! the two category embeddings, giving d_rel = 3 d_proj + 2 d_sem.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{SgaError, SgaResult};
use crate::graph::{ObjectInstance, SceneGraph};
use crate::model::{add_mlp, mlp, xavier, Ctx, MlpIds, ParamRegistry};
use crate::scalar::{s, Scalar};
use crate::tape::{ParamId, Var};

/// Geometry channels per box: x1, y1, x2, y2, w, h, cx, cy.
pub const GEOM_DIM: usize = 8;

pub fn geometry8(bbox: [f64; 4]) -> [f64; GEOM_DIM] {
    let [x1, y1, x2, y2] = bbox;
    [x1, y1, x2, y2, x2 - x1, y2 - y1, (x1 + x2) / 2.0, (y1 + y2) / 2.0]
}

pub fn union_box(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMask {
    Full,
    Causal,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AttentionBlockIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ff: MlpIds,
}

/// One encoder stage: `layers` stacked attention blocks of width `dim`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderStageIds {
    pub dim: usize,
    pub layers: Vec<AttentionBlockIds>,
}

pub fn add_encoder_stage<S: Scalar>(
    reg: &mut ParamRegistry<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    dim: usize,
    d_ff: usize,
    layers: usize,
) -> EncoderStageIds {
    let layers = (0..layers)
        .map(|l| AttentionBlockIds {
            wq: reg.add(format!("{name}.{l}.wq"), xavier(rng, dim, dim)),
            wk: reg.add(format!("{name}.{l}.wk"), xavier(rng, dim, dim)),
            wv: reg.add(format!("{name}.{l}.wv"), xavier(rng, dim, dim)),
            wo: reg.add(format!("{name}.{l}.wo"), xavier(rng, dim, dim)),
            ff: add_mlp(reg, rng, &format!("{name}.{l}.ff"), dim, d_ff, dim),
        })
        .collect();
    EncoderStageIds { dim, layers }
}

fn attention_block<S: Scalar>(
    ctx: &mut Ctx<S>,
    ids: AttentionBlockIds,
    x: Var,
    mask: AttentionMask,
) -> SgaResult<Var> {
    let n = ctx.tape.shape(x)[0];
    let d = ctx.tape.shape(x)[1];
    let wq = ctx.p(ids.wq)?;
    let wk = ctx.p(ids.wk)?;
    let wv = ctx.p(ids.wv)?;
    let wo = ctx.p(ids.wo)?;
    let q = ctx.tape.matmul(x, wq)?;
    let k = ctx.tape.matmul(x, wk)?;
    let v = ctx.tape.matmul(x, wv)?;
    let kt = ctx.tape.transpose(k)?;
    let scores = ctx.tape.matmul(q, kt)?;
    let scores = ctx.tape.scale(scores, s::<S>(1.0 / (d as f64).sqrt()))?;
    let scores = match mask {
        AttentionMask::Full => scores,
        AttentionMask::Causal => {
            let mut m = vec![S::zero(); n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    m[i * n + j] = S::neg_infinity();
                }
            }
            let mask = ctx.tape.constant(vec![n, n], m)?;
            ctx.tape.add(scores, mask)?
        }
    };
    let attn = ctx.tape.softmax(scores)?;
    let mixed = ctx.tape.matmul(attn, v)?;
    let mixed = ctx.tape.matmul(mixed, wo)?;
    let h = ctx.tape.add(x, mixed)?;
    let f = mlp(ctx, ids.ff, h)?;
    ctx.tape.add(h, f)
}

pub fn encoder_stage<S: Scalar>(
    ctx: &mut Ctx<S>,
    stage: &EncoderStageIds,
    x: Var,
    mask: AttentionMask,
) -> SgaResult<Var> {
    if ctx.tape.shape(x).last() != Some(&stage.dim) {
        return Err(SgaError::contract(
            "encoder_stage",
            format!("input width {:?} != stage dim {}", ctx.tape.shape(x), stage.dim),
        ));
    }
    let mut h = x;
    for ids in &stage.layers {
        h = attention_block(ctx, *ids, h, mask)?;
    }
    Ok(h)
}

/// Contextualized feature of one object at one observed frame.
#[derive(Debug, Clone, Copy)]
pub struct ObjectFeature {
    pub var: Var,
    pub obj_idx: usize,
    pub category: usize,
}

/// Per-pair relationship representation at one frame position.
#[derive(Debug, Clone, Copy)]
pub struct RelRepr {
    pub var: Var,
    /// Frame-local (subject_idx, object_idx).
    pub pair: (usize, usize),
    /// Position of the frame within the video's observed sequence.
    pub frame: usize,
}

/// Raw object feature: category embedding next to box geometry.
fn raw_feature<S: Scalar>(
    ctx: &mut Ctx<S>,
    embed: ParamId,
    obj: &ObjectInstance,
) -> SgaResult<Var> {
    let e = ctx.p(embed)?;
    let sem = ctx.tape.gather_rows(e, &[obj.category])?;
    let geom: Vec<S> = geometry8(obj.bbox).iter().map(|&g| s(g)).collect();
    let g = ctx.tape.constant(vec![1, GEOM_DIM], geom)?;
    ctx.tape.concat(&[sem, g], 1)
}

/// Runs the object stage over every category track of the given frames.
/// Frame `t`'s outputs only see frames <= t. Objects are tracked by category
/// id; a category occurring twice in one frame is a tracking error.
pub fn encode_objects<S: Scalar>(
    ctx: &mut Ctx<S>,
    video_id: &str,
    frames: &[SceneGraph],
    embed: ParamId,
    stage: &EncoderStageIds,
) -> SgaResult<Vec<Vec<ObjectFeature>>> {
    if frames.is_empty() {
        return Err(SgaError::contract("encode_objects", "no frames"));
    }
    // Track = all (frame position, object slot) occurrences of one category.
    let mut track_order: Vec<usize> = Vec::new();
    let mut tracks: Vec<Vec<(usize, usize)>> = Vec::new();
    for (t, f) in frames.iter().enumerate() {
        let mut seen = Vec::with_capacity(f.objects.len());
        for (i, o) in f.objects.iter().enumerate() {
            if seen.contains(&o.category) {
                return Err(SgaError::Corpus {
                    video: video_id.to_string(),
                    frame: Some(f.frame_index),
                    msg: format!("category {} appears twice; tracking is by category", o.category),
                });
            }
            seen.push(o.category);
            match track_order.iter().position(|&c| c == o.category) {
                Some(k) => tracks[k].push((t, i)),
                None => {
                    track_order.push(o.category);
                    tracks.push(vec![(t, i)]);
                }
            }
        }
    }

    let mut out: Vec<Vec<ObjectFeature>> = frames.iter().map(|_| Vec::new()).collect();
    for (k, occurrences) in tracks.iter().enumerate() {
        let cat = track_order[k];
        let feats: Vec<Var> = occurrences
            .iter()
            .map(|&(t, i)| raw_feature(ctx, embed, &frames[t].objects[i]))
            .collect::<SgaResult<_>>()?;
        let x = if feats.len() == 1 {
            feats[0]
        } else {
            ctx.tape.concat(&feats, 0)?
        };
        let y = encoder_stage(ctx, stage, x, AttentionMask::Causal)?;
        let rows = ctx.tape.split_rows(y, &vec![1; occurrences.len()])?;
        for (&(t, i), var) in occurrences.iter().zip(rows) {
            out[t].push(ObjectFeature { var, obj_idx: i, category: cat });
        }
    }
    // Frame order must match the annotation's object order.
    for feats in &mut out {
        feats.sort_by_key(|f| f.obj_idx);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairIds {
    pub w1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
    /// Shared category embedding table, also used for raw object features.
    pub embed: ParamId,
}

pub fn add_pair_ids<S: Scalar>(
    reg: &mut ParamRegistry<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_obj: usize,
    d_proj: usize,
    embed: ParamId,
) -> PairIds {
    PairIds {
        w1: reg.add(format!("{name}.w1"), xavier(rng, d_obj, d_proj)),
        w2: reg.add(format!("{name}.w2"), xavier(rng, d_obj, d_proj)),
        w3: reg.add(format!("{name}.w3"), xavier(rng, GEOM_DIM, d_proj)),
        embed,
    }
}

/// One representation per (actor, object) pair of a frame, in object order.
/// Fewer than 2 objects, or no actor present, yields an empty list.
pub fn build_pair_representations<S: Scalar>(
    ctx: &mut Ctx<S>,
    feats: &[ObjectFeature],
    objects: &[ObjectInstance],
    frame_pos: usize,
    actor_category: usize,
    ids: &PairIds,
) -> SgaResult<Vec<RelRepr>> {
    if feats.len() != objects.len() {
        return Err(SgaError::contract(
            "build_pair_representations",
            format!("{} features for {} objects", feats.len(), objects.len()),
        ));
    }
    let actor = match feats.iter().position(|f| f.category == actor_category) {
        Some(i) => i,
        None => return Ok(Vec::new()),
    };
    if objects.len() < 2 {
        return Ok(Vec::new());
    }
    let w1 = ctx.p(ids.w1)?;
    let w2 = ctx.p(ids.w2)?;
    let w3 = ctx.p(ids.w3)?;
    let embed = ctx.p(ids.embed)?;
    let actor_idx = feats[actor].obj_idx;
    let vi = ctx.tape.matmul(feats[actor].var, w1)?;
    let si = ctx.tape.gather_rows(embed, &[feats[actor].category])?;
    let mut out = Vec::with_capacity(feats.len() - 1);
    for f in feats {
        if f.obj_idx == actor_idx {
            continue;
        }
        let vj = ctx.tape.matmul(f.var, w2)?;
        let u = union_box(objects[actor_idx].bbox, objects[f.obj_idx].bbox);
        let ug: Vec<S> = geometry8(u).iter().map(|&g| s(g)).collect();
        let uv = ctx.tape.constant(vec![1, GEOM_DIM], ug)?;
        let uproj = ctx.tape.matmul(uv, w3)?;
        let sj = ctx.tape.gather_rows(embed, &[f.category])?;
        let z = ctx.tape.concat(&[vi, vj, uproj, si, sj], 1)?;
        out.push(RelRepr { var: z, pair: (actor_idx, f.obj_idx), frame: frame_pos });
    }
    Ok(out)
}

/// Full attention over one frame's pair representations. Permutation
/// equivariant; an empty frame passes through untouched.
pub fn spatial_encode<S: Scalar>(
    ctx: &mut Ctx<S>,
    reprs: &[RelRepr],
    stage: &EncoderStageIds,
) -> SgaResult<Vec<RelRepr>> {
    if reprs.is_empty() {
        return Ok(Vec::new());
    }
    let vars: Vec<Var> = reprs.iter().map(|r| r.var).collect();
    let x = if vars.len() == 1 { vars[0] } else { ctx.tape.concat(&vars, 0)? };
    let y = encoder_stage(ctx, stage, x, AttentionMask::Full)?;
    let rows = ctx.tape.split_rows(y, &vec![1; reprs.len()])?;
    Ok(reprs
        .iter()
        .zip(rows)
        .map(|(r, var)| RelRepr { var, ..*r })
        .collect())
}

/// Causal attention over one pair's history (ordered by frame) with learned
/// absolute frame-position embeddings added to the inputs. The output at the
/// last observed frame is the initial condition for latent dynamics.
pub fn temporal_encode<S: Scalar>(
    ctx: &mut Ctx<S>,
    history: &[RelRepr],
    stage: &EncoderStageIds,
    pos_table: ParamId,
) -> SgaResult<Vec<RelRepr>> {
    if history.is_empty() {
        return Err(SgaError::contract("temporal_encode", "empty pair history"));
    }
    if history.windows(2).any(|w| w[0].frame >= w[1].frame) {
        return Err(SgaError::contract(
            "temporal_encode",
            "history must be strictly ordered by frame",
        ));
    }
    let vars: Vec<Var> = history.iter().map(|r| r.var).collect();
    let x = if vars.len() == 1 { vars[0] } else { ctx.tape.concat(&vars, 0)? };
    let table = ctx.p(pos_table)?;
    let positions: Vec<usize> = history.iter().map(|r| r.frame).collect();
    let pos = ctx.tape.gather_rows(table, &positions)?;
    let x = ctx.tape.add(x, pos)?;
    let y = encoder_stage(ctx, stage, x, AttentionMask::Causal)?;
    let rows = ctx.tape.split_rows(y, &vec![1; history.len()])?;
    Ok(history
        .iter()
        .zip(rows)
        .map(|(r, var)| RelRepr { var, ..*r })
        .collect())
}
