//! Training objective. Five weighted terms cover every model in the family:
//!
//! ```text
//! gen    multi-label margin loss on observed-frame predicate logits
//! obj    cross-entropy on object classification over observed frames
//! ant    multi-label margin loss on anticipated predicate logits
//! boxes  smooth-L1 on anticipated-frame box regression
//! recon  smooth-L1 between anticipated and temporally encoded representations
//! ```
//!
//! Models without a term (the autoregressive baselines have no box head, the
//! spatial-only variant no generation head) contribute an exact zero there,
//! so one default weight vector {1, 1, 2, 2, 2} reproduces every published
//! per-variant weighting.

use serde::{Deserialize, Serialize};

use crate::error::{SgaError, SgaResult};
use crate::scalar::{s, Scalar};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub gen: f64,
    pub obj: f64,
    pub ant: f64,
    pub boxes: f64,
    pub recon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { gen: 1.0, obj: 1.0, ant: 2.0, boxes: 2.0, recon: 2.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> SgaResult<()> {
        for (name, w) in [
            ("gen", self.gen),
            ("obj", self.obj),
            ("ant", self.ant),
            ("boxes", self.boxes),
            ("recon", self.recon),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(SgaError::Config(format!(
                    "loss weight {name} must be a nonnegative finite number, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Multi-label margin loss on one row of raw predicate scores:
/// `sum over positive u, negative v of max(0, 1 - s[u] + s[v])`.
pub fn predicate_margin_loss<S: Scalar>(
    tape: &mut Tape<S>,
    scores: Var,
    positives: &[usize],
) -> SgaResult<Var> {
    if positives.is_empty() {
        return Err(SgaError::contract(
            "predicate_margin_loss",
            "positive predicate set must be non-empty",
        ));
    }
    tape.margin_loss(scores, positives)
}

/// Cross-entropy `-sum_i ln p_i[target_i]` over rows of a probability
/// matrix. Rows must already sum to 1 (within 1e-6); a zero probability at
/// the target is clamped inside `ln` and counted on the tape.
pub fn object_ce_loss<S: Scalar>(
    tape: &mut Tape<S>,
    probs: Var,
    targets: &[usize],
) -> SgaResult<Var> {
    let shape = tape.shape(probs).to_vec();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(SgaError::contract(
            "object_ce_loss",
            format!("{} targets for probability shape {shape:?}", targets.len()),
        ));
    }
    let (n, c) = (shape[0], shape[1]);
    let tol = s::<S>(1e-6);
    for (i, row) in tape.value(probs).chunks(c).enumerate() {
        let total: S = row.iter().copied().sum();
        if (total - S::one()).abs() > tol {
            return Err(SgaError::contract(
                "object_ce_loss",
                format!("row {i} sums to {total}, expected 1"),
            ));
        }
    }
    let mut mask = vec![S::zero(); n * c];
    for (i, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(SgaError::contract(
                "object_ce_loss",
                format!("target {t} out of range for {c} classes"),
            ));
        }
        mask[i * c + t] = S::one();
    }
    let logp = tape.ln(probs)?;
    let mask = tape.constant(vec![n, c], mask)?;
    let picked = tape.mul(logp, mask)?;
    let sum = tape.reduce_sum(picked)?;
    tape.neg(sum)
}

/// Box regression over one anticipated frame: summed elementwise smooth-L1
/// between predicted and reference boxes of equal shape.
pub fn bbox_regression_loss<S: Scalar>(tape: &mut Tape<S>, pred: Var, gt: Var) -> SgaResult<Var> {
    tape.smooth_l1(pred, gt)
}

/// Reconstruction term for one anticipated frame: summed smooth-L1 over the
/// frame's pairs, normalized by the squared object count.
pub fn reconstruction_frame_loss<S: Scalar>(
    tape: &mut Tape<S>,
    pairs: &[(Var, Var)],
    num_objects: usize,
) -> SgaResult<Var> {
    if pairs.is_empty() {
        return tape.constant_scalar(S::zero());
    }
    if num_objects == 0 {
        return Err(SgaError::contract(
            "reconstruction_frame_loss",
            "pairs present but object count is zero",
        ));
    }
    let mut total: Option<Var> = None;
    for &(z, zhat) in pairs {
        let l = tape.smooth_l1(z, zhat)?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let norm = 1.0 / (num_objects * num_objects) as f64;
    tape.scale(total.expect("non-empty pairs"), s::<S>(norm))
}

/// The five accumulated component losses of one video, before weighting.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub gen: Var,
    pub obj: Var,
    pub ant: Var,
    pub boxes: Var,
    pub recon: Var,
}

impl LossTerms {
    /// All-zero terms; components accumulate into the relevant slots.
    pub fn zero<S: Scalar>(tape: &mut Tape<S>) -> SgaResult<Self> {
        let z = tape.constant_scalar(S::zero())?;
        Ok(LossTerms { gen: z, obj: z, ant: z, boxes: z, recon: z })
    }
}

/// Weighted total over the component terms.
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    w: &LossWeights,
    t: &LossTerms,
) -> SgaResult<Var> {
    w.validate()?;
    let parts = [
        (w.gen, t.gen),
        (w.obj, t.obj),
        (w.ant, t.ant),
        (w.boxes, t.boxes),
        (w.recon, t.recon),
    ];
    let mut total: Option<Var> = None;
    for (weight, term) in parts {
        let scaled = tape.scale(term, s::<S>(weight))?;
        total = Some(match total {
            None => scaled,
            Some(acc) => tape.add(acc, scaled)?,
        });
    }
    Ok(total.expect("five terms"))
}
