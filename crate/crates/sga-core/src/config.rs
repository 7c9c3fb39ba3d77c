//! Experiment configuration: TOML sections for the model, solver, training,
//! loss weights, data source, and evaluation protocol, plus seed resolution
//! (section seed, then the SGA_SEED environment variable, then zero) and a
//! stable hash of the fully-resolved document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::SolverSpec;
use crate::error::{SgaError, SgaResult};
use crate::eval::{EvalOptions, EvalRegime, GraphStrategy};
use crate::losses::LossWeights;
use crate::model::{ModelDims, ModelKind};
use crate::optim::AdamConfig;
use crate::synth::SynthConfig;
use crate::train::{ObjectiveSpec, TrainConfig};

/// FNV-1a, 64-bit; hashes the resolved config so checkpoints can name the
/// exact recipe that produced them.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub dims: ModelDims,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { kind: ModelKind::ScenesayerOde, dims: ModelDims::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Anticipation horizon per sliding window.
    pub horizon: usize,
    /// Baselines only; dynamics kinds always free-run their windows.
    pub teacher_forcing: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 10,
            learning_rate: 1e-3,
            horizon: 1,
            teacher_forcing: true,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Path to an annotation corpus JSON file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
    /// Inline synthetic-corpus recipe; exactly one source must be set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { corpus: None, synth: None, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub future_frames: Option<usize>,
    pub k: Vec<usize>,
    /// "with_constraint", "no_constraint", or "both".
    pub strategy: String,
    pub ignore_unseen_pairs: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            context_fraction: None,
            future_frames: None,
            k: vec![10, 20, 50],
            strategy: "both".into(),
            ignore_unseen_pairs: false,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub solver: SolverSpec,
    pub train: TrainSection,
    pub loss: LossWeights,
    pub data: DataSection,
    pub eval: EvalSection,
}

fn env_seed() -> SgaResult<Option<u64>> {
    match std::env::var("SGA_SEED") {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| SgaError::Config(format!("SGA_SEED must be an unsigned integer, got {s:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(SgaError::Config(format!("SGA_SEED unreadable: {e}"))),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> SgaResult<Self> {
        toml::from_str(text)
            .map_err(|e| SgaError::Parse { path: origin.to_string(), msg: e.to_string() })
    }

    pub fn load(path: &Path) -> SgaResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SgaError::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Fills every unset seed from SGA_SEED (or zero), so the dumped config
    /// pins the run completely.
    pub fn resolve(&self) -> SgaResult<Self> {
        let env = env_seed()?;
        let mut c = self.clone();
        for slot in [&mut c.train.seed, &mut c.data.seed, &mut c.eval.seed] {
            if slot.is_none() {
                *slot = Some(env.unwrap_or(0));
            }
        }
        Ok(c)
    }

    /// The full document, defaults included.
    pub fn resolved_toml(&self) -> SgaResult<String> {
        toml::to_string_pretty(self)
            .map_err(|e| SgaError::contract("config_toml", e.to_string()))
    }

    pub fn config_hash(&self) -> SgaResult<u64> {
        Ok(fnv1a64(self.resolved_toml()?.as_bytes()))
    }

    pub fn strategies(&self) -> SgaResult<Vec<GraphStrategy>> {
        match self.eval.strategy.replace('-', "_").as_str() {
            "both" => Ok(vec![GraphStrategy::WithConstraint, GraphStrategy::NoConstraint]),
            other => Ok(vec![GraphStrategy::from_name(other)?]),
        }
    }

    /// Every regime the eval section names: zero, one, or both kinds.
    pub fn regimes(&self) -> SgaResult<Vec<EvalRegime>> {
        let mut out = Vec::new();
        if let Some(f) = self.eval.context_fraction {
            let r = EvalRegime::ContextFraction { fraction: f };
            r.validate()?;
            out.push(r);
        }
        if let Some(h) = self.eval.future_frames {
            let r = EvalRegime::FutureFrames { horizon: h };
            r.validate()?;
            out.push(r);
        }
        Ok(out)
    }

    pub fn validate(&self) -> SgaResult<()> {
        self.model.dims.validate_shape()?;
        match self.model.kind {
            ModelKind::ScenesayerOde => self.solver.validate_ode()?,
            ModelKind::ScenesayerSde => self.solver.validate_sde()?,
            _ => {
                self.solver.steps_per_frame()?;
            }
        }
        if self.train.epochs == 0 {
            return Err(SgaError::Config("train.epochs must be positive".into()));
        }
        if !(self.train.learning_rate.is_finite() && self.train.learning_rate > 0.0) {
            return Err(SgaError::Config(format!(
                "train.learning_rate must be positive, got {}",
                self.train.learning_rate
            )));
        }
        if self.train.horizon == 0 {
            return Err(SgaError::Config("train.horizon must be positive".into()));
        }
        self.loss.validate()?;
        match (&self.data.corpus, &self.data.synth) {
            (Some(_), Some(_)) => {
                return Err(SgaError::Config(
                    "set exactly one of data.corpus and data.synth, not both".into(),
                ))
            }
            (None, None) => {
                return Err(SgaError::Config("set data.corpus or data.synth".into()));
            }
            _ => {}
        }
        if let Some(s) = &self.data.synth {
            s.validate()?;
        }
        if self.eval.k.is_empty() || self.eval.k.iter().any(|&k| k == 0) {
            return Err(SgaError::Config("eval.k needs positive entries".into()));
        }
        self.strategies()?;
        self.regimes()?;
        Ok(())
    }

    /// Training recipe for `train()`; seeds must be resolved first.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            start_epoch: 0,
            optim: AdamConfig { lr: self.train.learning_rate, ..AdamConfig::default() },
            objective: ObjectiveSpec {
                horizon: self.train.horizon,
                solver: self.solver,
                weights: self.loss,
                teacher_forcing: self.train.teacher_forcing,
            },
            seed: self.train.seed.unwrap_or(0),
        }
    }

    pub fn eval_options(&self) -> SgaResult<EvalOptions> {
        let opts = EvalOptions {
            ks: self.eval.k.clone(),
            strategies: self.strategies()?,
            solver: self.solver,
            seed: self.eval.seed.unwrap_or(0),
            ignore_unseen_pairs: self.eval.ignore_unseen_pairs,
        };
        opts.validate()?;
        Ok(opts)
    }
}
