//! Autoregressive anticipator used by the baseline variants: one causal
//! attention block over a pair's representation history with its own learned
//! position table. Inference generates future representations one frame at a
//! time, appending each output back onto its context; training instead runs
//! the block once over a full sequence and reads every next-step prediction
//! in parallel from the causal outputs.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{add_encoder_stage, encoder_stage, AttentionMask, EncoderStageIds};
use crate::error::{SgaError, SgaResult};
use crate::model::{xavier, Ctx, ParamRegistry};
use crate::scalar::Scalar;
use crate::tape::{ParamId, Var};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnticipatorIds {
    pub stage: EncoderStageIds,
    /// Position table over context slots (not video frame indices).
    pub pos: ParamId,
    pub max_len: usize,
}

pub fn add_anticipator<S: Scalar>(
    reg: &mut ParamRegistry<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_rel: usize,
    d_ff: usize,
    max_len: usize,
) -> AnticipatorIds {
    let stage = add_encoder_stage(reg, rng, &format!("{name}.block"), d_rel, d_ff, 1);
    let pos = reg.add(format!("{name}.pos"), xavier(rng, max_len, d_rel));
    AnticipatorIds { stage, pos, max_len }
}

/// Causal pass over a stacked sequence; row i is the model's prediction of
/// element i+1 given elements 0..=i.
fn encode_sequence<S: Scalar>(
    ctx: &mut Ctx<S>,
    ids: &AnticipatorIds,
    seq: &[Var],
) -> SgaResult<Var> {
    if seq.len() > ids.max_len {
        return Err(SgaError::contract(
            "anticipator",
            format!("sequence length {} exceeds position table ({})", seq.len(), ids.max_len),
        ));
    }
    let x = if seq.len() == 1 { seq[0] } else { ctx.tape.concat(seq, 0)? };
    let table = ctx.p(ids.pos)?;
    let positions: Vec<usize> = (0..seq.len()).collect();
    let pos = ctx.tape.gather_rows(table, &positions)?;
    let x = ctx.tape.add(x, pos)?;
    encoder_stage(ctx, &ids.stage, x, AttentionMask::Causal)
}

/// Next-step predictions for every position of `seq`, computed in one causal
/// pass. Teacher-forced training reads prediction i against target i+1.
pub fn predict_next_parallel<S: Scalar>(
    ctx: &mut Ctx<S>,
    ids: &AnticipatorIds,
    seq: &[Var],
) -> SgaResult<Vec<Var>> {
    if seq.is_empty() {
        return Err(SgaError::contract("anticipator", "empty sequence"));
    }
    let y = encode_sequence(ctx, ids, seq)?;
    ctx.tape.split_rows(y, &vec![1; seq.len()])
}

/// Generates `horizon` future representations, each appended to the context
/// before the next is predicted. Horizon 0 is an empty result, not an error.
pub fn anticipate_autoregressive<S: Scalar>(
    ctx: &mut Ctx<S>,
    ids: &AnticipatorIds,
    context: &[Var],
    horizon: usize,
) -> SgaResult<Vec<Var>> {
    if context.is_empty() {
        return Err(SgaError::contract("anticipator", "empty context"));
    }
    let mut seq = context.to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let y = encode_sequence(ctx, ids, &seq)?;
        let n = seq.len();
        let next = ctx.tape.slice_rows(y, n - 1, n)?;
        seq.push(next);
        out.push(next);
    }
    Ok(out)
}
