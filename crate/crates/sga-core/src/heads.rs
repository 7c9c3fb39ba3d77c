//! Decoder heads. Each is a two-layer MLP (one tanh hidden layer, linear
//! output): predicate classifiers over relationship representations, an
//! object classifier over contextualized object features, and a pair of
//! bounding-box regressors with dedicated subject and object sub-heads.
//!
//! Heads are allocated individually because the model variants carry
//! different subsets, and every allocated parameter must take part in
//! training. Predicate and object heads emit raw logits; ranking and
//! probability views apply softmax on top. Box heads emit raw 4-vectors.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SgaResult;
use crate::model::{add_mlp, mlp, Ctx, MlpIds, ParamRegistry};
use crate::scalar::Scalar;
use crate::tape::Var;

pub fn add_predicate_head<S: Scalar>(
    reg: &mut ParamRegistry<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_rel: usize,
    hidden: usize,
    num_predicates: usize,
) -> MlpIds {
    add_mlp(reg, rng, name, d_rel, hidden, num_predicates)
}

pub fn add_object_head<S: Scalar>(
    reg: &mut ParamRegistry<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_obj: usize,
    hidden: usize,
    num_object_classes: usize,
) -> MlpIds {
    add_mlp(reg, rng, name, d_obj, hidden, num_object_classes)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BboxHeads {
    pub subject: MlpIds,
    pub object: MlpIds,
}

pub fn add_bbox_heads<S: Scalar>(
    reg: &mut ParamRegistry<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_rel: usize,
    hidden: usize,
) -> BboxHeads {
    BboxHeads {
        subject: add_mlp(reg, rng, &format!("{name}.subject"), d_rel, hidden, 4),
        object: add_mlp(reg, rng, &format!("{name}.object"), d_rel, hidden, 4),
    }
}

/// Raw predicate logits [n, |P|] from either predicate head.
pub fn predicate_logits<S: Scalar>(ctx: &mut Ctx<S>, head: MlpIds, z: Var) -> SgaResult<Var> {
    mlp(ctx, head, z)
}

/// Softmax view of a logit row set, used for ranking and reports.
pub fn probability_view<S: Scalar>(ctx: &mut Ctx<S>, logits: Var) -> SgaResult<Var> {
    ctx.tape.softmax(logits)
}

/// Raw object-class logits [n, |C|].
pub fn object_logits<S: Scalar>(ctx: &mut Ctx<S>, head: MlpIds, v: Var) -> SgaResult<Var> {
    mlp(ctx, head, v)
}

/// Subject and object box predictions, each [n, 4], raw (unclamped).
pub fn bbox_predict<S: Scalar>(
    ctx: &mut Ctx<S>,
    heads: &BboxHeads,
    z: Var,
) -> SgaResult<(Var, Var)> {
    let subj = mlp(ctx, heads.subject, z)?;
    let obj = mlp(ctx, heads.object, z)?;
    Ok((subj, obj))
}
