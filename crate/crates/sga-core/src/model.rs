//! Parameter registry and model assembly. Every learnable tensor lives in a
//! flat named registry; modules hold typed id bundles into it. One registry
//! drives Adam, checkpoint manifests, and tape registration.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anticipator::{add_anticipator, anticipate_autoregressive, AnticipatorIds};
use crate::dynamics::{
    add_sde_field, add_vector_field, mix_seed, ode_solve, sde_solve, BrownianPath, DynamicsIds,
    SolverSpec,
};
use crate::encoders::{
    add_encoder_stage, add_pair_ids, build_pair_representations, encode_objects, spatial_encode,
    temporal_encode, EncoderStageIds, ObjectFeature, PairIds, RelRepr,
};
use crate::error::{SgaError, SgaResult};
use crate::graph::{SceneGraph, Taxonomy};
use crate::heads::{add_bbox_heads, add_object_head, add_predicate_head, BboxHeads};
use crate::scalar::{s, Scalar};
use crate::tape::{ParamId, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct ParamRegistry<S: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for ParamRegistry<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamRegistry<S> {
    pub fn new() -> Self {
        ParamRegistry { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<S>) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    pub fn cast<T: Scalar>(&self) -> ParamRegistry<T> {
        ParamRegistry {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// One forward pass: a tape plus lazily-registered parameter vars, so each
/// parameter becomes a single leaf no matter how many modules use it.
pub struct Ctx<'a, S: Scalar> {
    pub tape: &'a mut Tape<S>,
    reg: &'a ParamRegistry<S>,
    cache: Vec<Option<Var>>,
}

impl<'a, S: Scalar> Ctx<'a, S> {
    pub fn new(tape: &'a mut Tape<S>, reg: &'a ParamRegistry<S>) -> Self {
        let cache = vec![None; reg.len()];
        Ctx { tape, reg, cache }
    }

    /// Tape var for a registry parameter.
    pub fn p(&mut self, id: ParamId) -> SgaResult<Var> {
        if let Some(v) = self.cache[id] {
            return Ok(v);
        }
        let v = self.tape.param(id, self.reg.get(id))?;
        self.cache[id] = Some(v);
        Ok(v)
    }

    pub fn registry(&self) -> &ParamRegistry<S> {
        self.reg
    }
}

/// Xavier-uniform init; draws happen in f64 so f32/f64 registries built from
/// the same seed hold identical values.
pub fn xavier<S: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
) -> Tensor<S> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<S> = (0..rows * cols).map(|_| s(rng.gen_range(-a..a))).collect();
    Tensor::new(vec![rows, cols], data).expect("xavier dims")
}

pub fn zeros<S: Scalar>(rows: usize, cols: usize) -> Tensor<S> {
    Tensor::zeros(vec![rows, cols])
}

/// Linear layer ids: weight [in, out], bias [out].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

pub fn add_linear<S: Scalar>(
    reg: &mut ParamRegistry<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_in: usize,
    d_out: usize,
) -> LinearIds {
    LinearIds {
        w: reg.add(format!("{name}.w"), xavier(rng, d_in, d_out)),
        b: reg.add(format!("{name}.b"), Tensor::zeros(vec![d_out])),
    }
}

/// x [n, d_in] -> x W + b.
pub fn linear<S: Scalar>(ctx: &mut Ctx<S>, ids: LinearIds, x: Var) -> SgaResult<Var> {
    let w = ctx.p(ids.w)?;
    let b = ctx.p(ids.b)?;
    let h = ctx.tape.matmul(x, w)?;
    ctx.tape.add_row(h, b)
}

/// Two-layer MLP with tanh hidden activation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MlpIds {
    pub l1: LinearIds,
    pub l2: LinearIds,
}

pub fn add_mlp<S: Scalar>(
    reg: &mut ParamRegistry<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_in: usize,
    d_hidden: usize,
    d_out: usize,
) -> MlpIds {
    MlpIds {
        l1: add_linear(reg, rng, &format!("{name}.l1"), d_in, d_hidden),
        l2: add_linear(reg, rng, &format!("{name}.l2"), d_hidden, d_out),
    }
}

pub fn mlp<S: Scalar>(ctx: &mut Ctx<S>, ids: MlpIds, x: Var) -> SgaResult<Var> {
    let h = linear(ctx, ids.l1, x)?;
    let h = ctx.tape.tanh(h)?;
    linear(ctx, ids.l2, h)
}

/// Shared guard used by training and evaluation.
pub fn ensure_finite<S: Scalar>(v: S, context: impl Into<String>) -> SgaResult<()> {
    if !v.is_finite() {
        return Err(SgaError::NonFinite { context: context.into() });
    }
    Ok(())
}

// ── Model assembly ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ScenesayerOde,
    ScenesayerSde,
    BaselinePlus,
    BaselinePlusPlus,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::ScenesayerOde,
        ModelKind::ScenesayerSde,
        ModelKind::BaselinePlus,
        ModelKind::BaselinePlusPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ScenesayerOde => "scenesayer_ode",
            ModelKind::ScenesayerSde => "scenesayer_sde",
            ModelKind::BaselinePlus => "baseline_plus",
            ModelKind::BaselinePlusPlus => "baseline_plus_plus",
        }
    }

    /// Accepts both underscore and hyphen spellings.
    pub fn from_name(name: &str) -> SgaResult<Self> {
        let canon = name.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == canon)
            .ok_or_else(|| SgaError::Config(format!("unknown model kind {name:?}")))
    }

    /// Latent-dynamics models (as opposed to the autoregressive baselines).
    pub fn uses_dynamics(self) -> bool {
        matches!(self, ModelKind::ScenesayerOde | ModelKind::ScenesayerSde)
    }

    /// Models whose pipeline includes the temporal encoder.
    pub fn uses_temporal(self) -> bool {
        !matches!(self, ModelKind::BaselinePlus)
    }

    /// Models with a generation head decoding observed representations.
    pub fn has_gen_head(self) -> bool {
        self.uses_temporal()
    }

    /// Only the dynamics models regress future bounding boxes.
    pub fn has_bbox_heads(self) -> bool {
        self.uses_dynamics()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    /// Category embedding width.
    pub d_sem: usize,
    /// Projection width for the three pair projections.
    pub d_proj: usize,
    /// Attention blocks per encoder stage.
    pub encoder_layers: usize,
    /// Hidden width of every decoder head.
    pub head_hidden: usize,
    /// Hidden width of the dynamics field MLPs.
    pub field_hidden: usize,
    /// Longest video (in frames) the position tables can address.
    pub max_frames: usize,
    /// Category id that anchors every relationship pair.
    pub actor_category: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d_sem: 16,
            d_proj: 32,
            encoder_layers: 1,
            head_hidden: 64,
            field_hidden: 64,
            max_frames: 64,
            actor_category: 0,
        }
    }
}

impl ModelDims {
    /// Object feature width: embedding next to 8 geometry channels.
    pub fn d_obj(&self) -> usize {
        self.d_sem + crate::encoders::GEOM_DIM
    }

    /// Relationship representation width.
    pub fn d_rel(&self) -> usize {
        3 * self.d_proj + 2 * self.d_sem
    }

    /// The taxonomy-free half of validation, usable before data is loaded.
    pub fn validate_shape(&self) -> SgaResult<()> {
        for (name, v) in [
            ("d_sem", self.d_sem),
            ("d_proj", self.d_proj),
            ("encoder_layers", self.encoder_layers),
            ("head_hidden", self.head_hidden),
            ("field_hidden", self.field_hidden),
        ] {
            if v == 0 {
                return Err(SgaError::Config(format!("model dim {name} must be positive")));
            }
        }
        if self.max_frames < 3 {
            return Err(SgaError::Config("max_frames must be at least 3".into()));
        }
        Ok(())
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> SgaResult<()> {
        self.validate_shape()?;
        if self.actor_category >= taxonomy.num_object_classes() {
            return Err(SgaError::Config(format!(
                "actor category {} outside the {}-class taxonomy",
                self.actor_category,
                taxonomy.num_object_classes()
            )));
        }
        Ok(())
    }
}

/// Typed ids of every component a model kind may carry. Optional parts are
/// absent (not just unused) for kinds that do not train them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelIds {
    pub obj_stage: EncoderStageIds,
    pub pair: PairIds,
    pub spat_stage: EncoderStageIds,
    pub temp: Option<(EncoderStageIds, ParamId)>,
    pub object_head: MlpIds,
    pub ant_pred: MlpIds,
    pub gen_pred: Option<MlpIds>,
    pub bbox: Option<BboxHeads>,
    pub dynamics: Option<DynamicsIds>,
    pub anticipator: Option<AnticipatorIds>,
}

pub struct SgaModel<S: Scalar> {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub taxonomy: Arc<Taxonomy>,
    pub reg: ParamRegistry<S>,
    pub ids: ModelIds,
}

/// Deterministic assembly: one seeded stream initializes components in a
/// fixed order, so the same seed yields the same registry for a given kind,
/// and kinds sharing components share their names.
pub fn build_model<S: Scalar>(
    kind: ModelKind,
    dims: ModelDims,
    taxonomy: Arc<Taxonomy>,
    seed: u64,
) -> SgaResult<SgaModel<S>> {
    dims.validate(&taxonomy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = ParamRegistry::new();
    let d_obj = dims.d_obj();
    let d_rel = dims.d_rel();

    let embed =
        reg.add("embed", xavier(&mut rng, taxonomy.num_object_classes(), dims.d_sem));
    let obj_stage =
        add_encoder_stage(&mut reg, &mut rng, "obj", d_obj, 2 * d_obj, dims.encoder_layers);
    let pair = add_pair_ids(&mut reg, &mut rng, "pair", d_obj, dims.d_proj, embed);
    let spat_stage =
        add_encoder_stage(&mut reg, &mut rng, "spat", d_rel, 2 * d_rel, dims.encoder_layers);
    let temp = if kind.uses_temporal() {
        let stage =
            add_encoder_stage(&mut reg, &mut rng, "temp", d_rel, 2 * d_rel, dims.encoder_layers);
        let pos = reg.add("temp.pos", xavier(&mut rng, dims.max_frames, d_rel));
        Some((stage, pos))
    } else {
        None
    };
    let object_head = add_object_head(
        &mut reg,
        &mut rng,
        "head.object",
        d_obj,
        dims.head_hidden,
        taxonomy.num_object_classes(),
    );
    let ant_pred = add_predicate_head(
        &mut reg,
        &mut rng,
        "head.ant_pred",
        d_rel,
        dims.head_hidden,
        taxonomy.num_predicates(),
    );
    let gen_pred = kind.has_gen_head().then(|| {
        add_predicate_head(
            &mut reg,
            &mut rng,
            "head.gen_pred",
            d_rel,
            dims.head_hidden,
            taxonomy.num_predicates(),
        )
    });
    let bbox = kind
        .has_bbox_heads()
        .then(|| add_bbox_heads(&mut reg, &mut rng, "head.bbox", d_rel, dims.head_hidden));
    let dynamics = match kind {
        ModelKind::ScenesayerOde => Some(DynamicsIds::Ode(add_vector_field(
            &mut reg,
            &mut rng,
            "ode",
            d_rel,
            dims.field_hidden,
        ))),
        ModelKind::ScenesayerSde => Some(DynamicsIds::Sde(add_sde_field(
            &mut reg,
            &mut rng,
            "sde",
            d_rel,
            dims.field_hidden,
            true,
        ))),
        _ => None,
    };
    let anticipator = (!kind.uses_dynamics()).then(|| {
        // Context can grow past video length during generation.
        add_anticipator(&mut reg, &mut rng, "anticipator", d_rel, 2 * d_rel, 2 * dims.max_frames)
    });

    Ok(SgaModel {
        kind,
        dims,
        taxonomy,
        reg,
        ids: ModelIds {
            obj_stage,
            pair,
            spat_stage,
            temp,
            object_head,
            ant_pred,
            gen_pred,
            bbox,
            dynamics,
            anticipator,
        },
    })
}

// ── Shared forward passes ───────────────────────────────────────────────

/// One relationship pair tracked across a video, keyed by the non-actor
/// object's category (the actor anchors every pair).
#[derive(Debug, Clone)]
pub struct PairTrack {
    /// (actor category, object category).
    pub key: (usize, usize),
    /// (frame position, slot within that frame's representation list).
    pub occ: Vec<(usize, usize)>,
}

impl PairTrack {
    /// Index of the last occurrence at a frame < `t_obs`, if any.
    pub fn last_observed(&self, t_obs: usize) -> Option<usize> {
        self.occ.iter().rposition(|&(f, _)| f < t_obs)
    }

    /// Occurrence slot at an exact frame, if the pair appears there.
    pub fn at_frame(&self, frame: usize) -> Option<usize> {
        self.occ.iter().position(|&(f, _)| f == frame)
    }
}

/// Everything one causal pass produces for a video. Outputs at frame t only
/// depend on frames <= t, so any observed prefix can be read off by slicing.
#[derive(Debug)]
pub struct EncodedVideo {
    /// Contextualized object features per frame, in annotation object order.
    pub obj_feats: Vec<Vec<ObjectFeature>>,
    /// Final relationship representations per frame (temporal outputs when
    /// the kind has a temporal stage, spatial outputs otherwise).
    pub reprs: Vec<Vec<RelRepr>>,
    pub tracks: Vec<PairTrack>,
}

/// Runs the encoder pipeline over all frames of one video.
pub fn encode_video<S: Scalar>(
    ctx: &mut Ctx<S>,
    model: &SgaModel<S>,
    video_id: &str,
    frames: &[SceneGraph],
) -> SgaResult<EncodedVideo> {
    if frames.len() > model.dims.max_frames {
        return Err(SgaError::Incompatible(format!(
            "video {video_id} has {} frames, model addresses at most {}",
            frames.len(),
            model.dims.max_frames
        )));
    }
    let ids = &model.ids;
    let obj_feats = encode_objects(ctx, video_id, frames, ids.pair.embed, &ids.obj_stage)?;
    let mut spat: Vec<Vec<RelRepr>> = Vec::with_capacity(frames.len());
    for (t, f) in frames.iter().enumerate() {
        let pairs = build_pair_representations(
            ctx,
            &obj_feats[t],
            &f.objects,
            t,
            model.dims.actor_category,
            &ids.pair,
        )?;
        spat.push(spatial_encode(ctx, &pairs, &ids.spat_stage)?);
    }

    // Pair tracks in first-appearance order, keyed by object category.
    let mut tracks: Vec<PairTrack> = Vec::new();
    for (t, reprs) in spat.iter().enumerate() {
        for (slot, r) in reprs.iter().enumerate() {
            let key = (model.dims.actor_category, frames[t].objects[r.pair.1].category);
            match tracks.iter_mut().find(|tr| tr.key == key) {
                Some(tr) => tr.occ.push((t, slot)),
                None => tracks.push(PairTrack { key, occ: vec![(t, slot)] }),
            }
        }
    }

    let reprs = match &ids.temp {
        None => spat,
        Some((stage, pos)) => {
            let mut out: Vec<Vec<RelRepr>> = frames.iter().map(|_| Vec::new()).collect();
            for tr in &tracks {
                let hist: Vec<RelRepr> =
                    tr.occ.iter().map(|&(t, slot)| spat[t][slot]).collect();
                let enc = temporal_encode(ctx, &hist, stage, *pos)?;
                for r in enc {
                    out[r.frame].push(r);
                }
            }
            // Restore each frame's original pair order; temporal encoding
            // regrouped rows by track.
            for (t, frame_reprs) in out.iter_mut().enumerate() {
                let order: Vec<(usize, usize)> =
                    spat[t].iter().map(|r| r.pair).collect();
                frame_reprs.sort_by_key(|r| {
                    order.iter().position(|&p| p == r.pair).expect("pair known")
                });
            }
            // Track slots remain valid: sorting restored the spatial order.
            out
        }
    };

    Ok(EncodedVideo { obj_feats, reprs, tracks })
}

/// Anticipated latent states of one pair over a window.
#[derive(Debug)]
pub struct WindowPrediction {
    pub track: usize,
    /// (absolute frame position, latent state), frames t_obs..t_obs+horizon.
    pub zs: Vec<(usize, Var)>,
}

/// Rolls every observed pair forward through frames t_obs..t_obs+horizon-1.
///
/// Dynamics models integrate from the pair's last observed representation,
/// one latent time unit per frame gap, so a pair last seen before t_obs-1 is
/// carried across the gap. Baselines append autoregressive generations to
/// the pair's observed context, one per future frame. `solver` is ignored by
/// the baselines; `seed` only feeds stochastic dynamics.
pub fn anticipate_window<S: Scalar>(
    ctx: &mut Ctx<S>,
    model: &SgaModel<S>,
    enc: &EncodedVideo,
    t_obs: usize,
    horizon: usize,
    solver: &SolverSpec,
    seed: u64,
) -> SgaResult<Vec<WindowPrediction>> {
    if horizon == 0 {
        return Err(SgaError::contract("anticipate_window", "horizon must be at least 1"));
    }
    let mut out = Vec::new();
    for (ti, tr) in enc.tracks.iter().enumerate() {
        let Some(last_idx) = tr.last_observed(t_obs) else {
            continue;
        };
        let (last_frame, last_slot) = tr.occ[last_idx];
        let z0 = enc.reprs[last_frame][last_slot].var;
        let zs: Vec<(usize, Var)> = match (&model.ids.dynamics, &model.ids.anticipator) {
            (Some(dynamics), None) => {
                // Integrate far enough to reach the window's last frame.
                let total = t_obs + horizon - 1 - last_frame;
                let traj = match dynamics {
                    DynamicsIds::Ode(field) => ode_solve(ctx, field, z0, total, solver)?,
                    DynamicsIds::Sde(field) => {
                        let mut path =
                            BrownianPath::new(mix_seed(seed, ti as u64), solver.h, field.dim)?;
                        sde_solve(ctx, field, z0, total, solver, &mut path)?
                    }
                };
                (t_obs..t_obs + horizon).map(|f| (f, traj[f - last_frame - 1])).collect()
            }
            (None, Some(ant)) => {
                let context: Vec<Var> =
                    tr.occ[..=last_idx].iter().map(|&(t, s)| enc.reprs[t][s].var).collect();
                let gen = anticipate_autoregressive(ctx, ant, &context, horizon)?;
                (t_obs..).zip(gen).collect()
            }
            _ => {
                return Err(SgaError::contract(
                    "anticipate_window",
                    "model must carry exactly one of dynamics or anticipator",
                ))
            }
        };
        out.push(WindowPrediction { track: ti, zs });
    }
    Ok(out)
}
