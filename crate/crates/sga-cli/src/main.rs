//! Command-line front end for the scene-graph anticipation toolkit.
//!
//! Four subcommands cover the experiment cycle: `synth` samples an annotation
//! corpus, `train` fits a model and checkpoints every epoch, `eval` scores a
//! checkpoint with Recall@K under one evaluation regime, and `ablate` lines
//! several checkpoints up in a single table. Every run starts from an
//! optional TOML config, applies flag overrides on top (flags win), resolves
//! unset seeds (SGA_SEED, then zero), and writes the fully-resolved config
//! next to its outputs so the run can be reproduced from the files alone.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sga_core::checkpoint::{load_model, save_checkpoint};
use sga_core::config::{fnv1a64, ExperimentConfig};
use sga_core::corpus::{load_corpus, save_corpus};
use sga_core::dynamics::SolverMethod;
use sga_core::eval::{evaluate, evaluate_persistence, run_ablation};
use sga_core::graph::Corpus;
use sga_core::model::{build_model, ModelKind, SgaModel};
use sga_core::synth::{self, SynthConfig};
use sga_core::train::train;
use sga_core::{Real, SgaError, SgaResult};

#[derive(Parser)]
#[command(name = "sga", version, about = "Scene-graph anticipation toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a synthetic annotation corpus and write it as JSON
    Synth(SynthArgs),
    /// Train a model, logging per-epoch loss and checkpointing every epoch
    Train(TrainArgs),
    /// Score a checkpoint (or the copy-forward reference) with Recall@K
    Eval(EvalArgs),
    /// Evaluate several checkpoints across regimes in one CSV table
    Ablate(AblateArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Ablate(a) => cmd_ablate(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn load_config(path: &Option<PathBuf>) -> SgaResult<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn write_text(path: &Path, text: &str) -> SgaResult<()> {
    fs::write(path, text).map_err(|e| SgaError::io(path.display().to_string(), e))
}

fn prepare_dir(dir: &Path) -> SgaResult<()> {
    fs::create_dir_all(dir).map_err(|e| SgaError::io(dir.display().to_string(), e))
}

/// Materializes the configured data source: a corpus file on disk, or a
/// synthetic corpus sampled from the data seed.
fn load_data(cfg: &ExperimentConfig) -> SgaResult<Corpus> {
    if let Some(path) = &cfg.data.corpus {
        load_corpus(path)
    } else if let Some(s) = &cfg.data.synth {
        synth::generate_synthetic(s, cfg.data.seed.unwrap_or(0))
    } else {
        Err(SgaError::Config("set data.corpus or data.synth".into()))
    }
}

fn parse_range(text: &str, flag: &str) -> SgaResult<(usize, usize)> {
    let parts: Vec<&str> = text.split(',').collect();
    let parsed: Option<(usize, usize)> = match parts.as_slice() {
        [lo, hi] => lo.trim().parse().ok().zip(hi.trim().parse().ok()),
        _ => None,
    };
    parsed.ok_or_else(|| SgaError::Config(format!("{flag} wants \"min,max\", got {text:?}")))
}

fn parse_ks(text: &str) -> SgaResult<Vec<usize>> {
    text.split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| SgaError::Config(format!("--k wants comma-separated integers, got {text:?}")))
}

fn preset_matrix(name: &str, p: usize) -> SgaResult<Vec<Vec<f64>>> {
    match name.replace('-', "_").as_str() {
        "identity" => Ok(synth::identity_matrix(p)),
        "cyclic" => Ok(synth::cyclic_matrix(p)),
        "uniform" => Ok(synth::uniform_matrix(p)),
        "mixed" => Ok(synth::mixed_matrix(p)),
        _ => Err(SgaError::Config(format!(
            "unknown preset {name:?} (want identity, cyclic, uniform, or mixed)"
        ))),
    }
}

/// `corpus.json` gets its resolved config as `corpus.config.toml` alongside.
fn sibling_config_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    out.with_file_name(format!("{stem}.config.toml"))
}

#[derive(Args)]
struct SynthArgs {
    /// Experiment config TOML; flags override its values
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output corpus JSON path
    #[arg(long)]
    out: PathBuf,
    /// Predicate-chain preset: identity, cyclic, uniform, or mixed
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    object_classes: Option<usize>,
    #[arg(long)]
    predicates: Option<usize>,
    #[arg(long)]
    videos: Option<usize>,
    /// Inclusive frame-count range per video, e.g. 8,16
    #[arg(long)]
    frames: Option<String>,
    /// Inclusive pair-count range per video, e.g. 1,4
    #[arg(long)]
    pairs: Option<String>,
    /// Couple box geometry to the predicate state
    #[arg(long)]
    box_coupling: Option<bool>,
    /// Corpus sampling seed (falls back to SGA_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
}

fn default_synth() -> SynthConfig {
    SynthConfig {
        num_object_classes: 8,
        num_predicates: 10,
        num_videos: 50,
        frames: (8, 16),
        pairs: (1, 4),
        transition: synth::mixed_matrix(10),
        box_coupling: true,
    }
}

fn cmd_synth(a: SynthArgs) -> SgaResult<()> {
    let mut cfg = load_config(&a.config)?;
    let from_config = cfg.data.synth.is_some();
    let mut sc = cfg.data.synth.clone().unwrap_or_else(default_synth);
    if let Some(n) = a.object_classes {
        sc.num_object_classes = n;
    }
    if let Some(n) = a.predicates {
        sc.num_predicates = n;
    }
    if let Some(n) = a.videos {
        sc.num_videos = n;
    }
    if let Some(t) = &a.frames {
        sc.frames = parse_range(t, "--frames")?;
    }
    if let Some(t) = &a.pairs {
        sc.pairs = parse_range(t, "--pairs")?;
    }
    if let Some(b) = a.box_coupling {
        sc.box_coupling = b;
    }
    if let Some(name) = &a.preset {
        sc.transition = preset_matrix(name, sc.num_predicates)?;
    } else if !from_config {
        // No configured matrix to preserve; size the default preset to
        // whatever --predicates asked for.
        sc.transition = synth::mixed_matrix(sc.num_predicates);
    } else if sc.transition.len() != sc.num_predicates {
        return Err(SgaError::Config(
            "--predicates disagrees with the configured transition matrix; give --preset".into(),
        ));
    }
    cfg.data.synth = Some(sc);
    cfg.data.corpus = None;
    if let Some(s) = a.seed {
        cfg.data.seed = Some(s);
    }
    let cfg = cfg.resolve()?;
    cfg.validate()?;

    let corpus = load_data(&cfg)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    save_corpus(&a.out, &corpus)?;
    write_text(&sibling_config_path(&a.out), &cfg.resolved_toml()?)?;
    println!("wrote {} videos to {}", corpus.videos.len(), a.out.display());
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config TOML; flags override its values
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Directory for the checkpoint, training log, and resolved config
    #[arg(long)]
    out_dir: PathBuf,
    /// Corpus JSON path; replaces the configured data source
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// scenesayer-ode, scenesayer-sde, baseline-plus, or baseline-plus-plus
    #[arg(long)]
    model: Option<String>,
    /// euler, adams-bashforth4, euler-maruyama, or reversible-heun
    #[arg(long)]
    solver: Option<String>,
    /// Solver substep size; must divide the unit frame interval
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Anticipation horizon per training window
    #[arg(long)]
    horizon: Option<usize>,
    /// Baselines only: condition autoregressive steps on ground truth
    #[arg(long)]
    teacher_forcing: Option<bool>,
    /// Continue from this checkpoint at its next epoch
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Seed for training order, data sampling, and evaluation alike
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_train(a: TrainArgs) -> SgaResult<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(name) = &a.model {
        cfg.model.kind = ModelKind::from_name(name)?;
    }
    if let Some(name) = &a.solver {
        cfg.solver.method = SolverMethod::from_name(name)?;
    }
    if let Some(h) = a.h {
        cfg.solver.h = h;
    }
    if let Some(n) = a.epochs {
        cfg.train.epochs = n;
    }
    if let Some(v) = a.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(n) = a.horizon {
        cfg.train.horizon = n;
    }
    if let Some(b) = a.teacher_forcing {
        cfg.train.teacher_forcing = b;
    }
    if let Some(p) = &a.corpus {
        cfg.data.corpus = Some(p.display().to_string());
        cfg.data.synth = None;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = Some(s);
        cfg.data.seed = Some(s);
        cfg.eval.seed = Some(s);
    }
    let mut cfg = cfg.resolve()?;
    cfg.validate()?;

    let corpus = load_data(&cfg)?;
    let mut tc = cfg.train_config();
    let mut model: SgaModel<Real>;
    if let Some(ckpt) = &a.resume {
        let (m, header) = load_model(ckpt)?;
        if header.kind != cfg.model.kind {
            return Err(SgaError::Incompatible(format!(
                "resume checkpoint holds a {} model, config asks for {}",
                header.kind.name(),
                cfg.model.kind.name()
            )));
        }
        model = m;
        tc.start_epoch = header.epoch + 1;
    } else {
        model = build_model(cfg.model.kind, cfg.model.dims, corpus.taxonomy.clone(), tc.seed)?;
    }
    // The dumped config describes the model that actually trains, which on
    // resume comes from the checkpoint header.
    cfg.model.kind = model.kind;
    cfg.model.dims = model.dims;
    let resolved = cfg.resolved_toml()?;
    let hash = fnv1a64(resolved.as_bytes());

    prepare_dir(&a.out_dir)?;
    write_text(&a.out_dir.join("config.toml"), &resolved)?;
    let log_path = a.out_dir.join("train_log.csv");
    let ckpt_path = a.out_dir.join("checkpoint.ckpt");
    let log_err = |e: std::io::Error| SgaError::io(log_path.display().to_string(), e);
    let mut log = fs::File::create(&log_path).map_err(log_err)?;
    log.write_all(b"epoch,mean_loss,videos\n").map_err(log_err)?;

    let stats = train(&mut model, &corpus, &tc, |st, m| {
        writeln!(log, "{},{:.6},{}", st.epoch, st.mean_loss, st.videos).map_err(log_err)?;
        save_checkpoint(&ckpt_path, m, st.epoch, hash)
    })?;
    log.flush().map_err(log_err)?;

    if let Some(last) = stats.last() {
        println!(
            "trained epochs {}..={} on {} videos, final mean loss {:.6}",
            tc.start_epoch, last.epoch, last.videos, last.mean_loss
        );
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    /// Experiment config TOML; flags override its values
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Directory for the metric report and resolved config
    #[arg(long)]
    out_dir: PathBuf,
    /// Checkpoint to score (omit with --persistence)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score the copy-forward reference instead of a checkpoint
    #[arg(long)]
    persistence: bool,
    /// Corpus JSON path; replaces the configured data source
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Observe the first fraction of each video, anticipate the rest
    #[arg(long)]
    context_fraction: Option<f64>,
    /// Anticipate exactly this many frames past every context length
    #[arg(long)]
    future_frame: Option<usize>,
    /// Comma-separated recall cutoffs, e.g. 10,20,50
    #[arg(long)]
    k: Option<String>,
    /// with-constraint, no-constraint, or both
    #[arg(long)]
    strategy: Option<String>,
    /// euler, adams-bashforth4, euler-maruyama, or reversible-heun
    #[arg(long)]
    solver: Option<String>,
    /// Solver substep size; must divide the unit frame interval
    #[arg(long)]
    h: Option<f64>,
    /// Score only ground-truth pairs whose categories co-occurred in context
    #[arg(long)]
    ignore_unseen_pairs: bool,
    /// Evaluation seed (drives stochastic rollouts)
    #[arg(long)]
    seed: Option<u64>,
}

/// Applies the shared eval/solver/data/seed overrides used by `eval` and
/// `ablate`. Regime flags only replace the like-named config entry; `eval`
/// separately insists on ending up with exactly one regime.
#[allow(clippy::too_many_arguments)]
fn apply_eval_overrides(
    cfg: &mut ExperimentConfig,
    k: &Option<String>,
    strategy: &Option<String>,
    solver: &Option<String>,
    h: Option<f64>,
    ignore_unseen_pairs: bool,
    corpus: &Option<PathBuf>,
    seed: Option<u64>,
) -> SgaResult<()> {
    if let Some(t) = k {
        cfg.eval.k = parse_ks(t)?;
    }
    if let Some(name) = strategy {
        cfg.eval.strategy = name.clone();
    }
    if let Some(name) = solver {
        cfg.solver.method = SolverMethod::from_name(name)?;
    }
    if let Some(h) = h {
        cfg.solver.h = h;
    }
    if ignore_unseen_pairs {
        cfg.eval.ignore_unseen_pairs = true;
    }
    if let Some(p) = corpus {
        cfg.data.corpus = Some(p.display().to_string());
        cfg.data.synth = None;
    }
    if let Some(s) = seed {
        cfg.train.seed = Some(s);
        cfg.data.seed = Some(s);
        cfg.eval.seed = Some(s);
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> SgaResult<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(f) = a.context_fraction {
        cfg.eval.context_fraction = Some(f);
        if a.future_frame.is_none() {
            cfg.eval.future_frames = None;
        }
    }
    if let Some(hh) = a.future_frame {
        cfg.eval.future_frames = Some(hh);
        if a.context_fraction.is_none() {
            cfg.eval.context_fraction = None;
        }
    }
    apply_eval_overrides(
        &mut cfg,
        &a.k,
        &a.strategy,
        &a.solver,
        a.h,
        a.ignore_unseen_pairs,
        &a.corpus,
        a.seed,
    )?;
    let mut cfg = cfg.resolve()?;

    let loaded = match (&a.checkpoint, a.persistence) {
        (Some(p), false) => Some(load_model(p)?),
        (None, true) => None,
        (Some(_), true) => {
            return Err(SgaError::Config(
                "--checkpoint and --persistence are mutually exclusive".into(),
            ))
        }
        (None, false) => {
            return Err(SgaError::Config("give --checkpoint or --persistence".into()))
        }
    };
    if let Some((model, _)) = &loaded {
        // The checkpoint defines the model; validate solver coherence
        // against what actually runs and dump the same.
        cfg.model.kind = model.kind;
        cfg.model.dims = model.dims;
    }
    cfg.validate()?;
    let regimes = cfg.regimes()?;
    if regimes.len() != 1 {
        return Err(SgaError::Config(format!(
            "eval wants exactly one regime (--context-fraction or --future-frame), got {}",
            regimes.len()
        )));
    }
    let opts = cfg.eval_options()?;
    let corpus = load_data(&cfg)?;

    prepare_dir(&a.out_dir)?;
    write_text(&a.out_dir.join("config.toml"), &cfg.resolved_toml()?)?;
    let report = match &loaded {
        Some((model, _)) => evaluate(model, &corpus, &regimes[0], &opts)?,
        None => evaluate_persistence(&corpus, &regimes[0], &opts)?,
    };
    write_text(&a.out_dir.join("report.csv"), &report.to_csv())?;
    write_text(&a.out_dir.join("report.json"), &report.to_json()?)?;
    println!(
        "evaluated {} videos ({} skipped) under {}",
        report.evaluated_videos, report.skipped_videos, report.regime
    );
    print!("{}", report.to_csv());
    Ok(())
}

#[derive(Args)]
struct AblateArgs {
    /// Experiment config TOML; flags override its values
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Directory for the ablation table and resolved config
    #[arg(long)]
    out_dir: PathBuf,
    /// Two or more checkpoints, comma-separated or repeated
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    checkpoints: Vec<PathBuf>,
    /// Row labels matching --checkpoints (default: file stems)
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    /// Corpus JSON path; replaces the configured data source
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Context-fraction regime to include
    #[arg(long)]
    context_fraction: Option<f64>,
    /// Future-frames regime to include; both regimes may be active at once
    #[arg(long)]
    future_frame: Option<usize>,
    /// Comma-separated recall cutoffs, e.g. 10,20,50
    #[arg(long)]
    k: Option<String>,
    /// with-constraint, no-constraint, or both
    #[arg(long)]
    strategy: Option<String>,
    /// euler, adams-bashforth4, euler-maruyama, or reversible-heun
    #[arg(long)]
    solver: Option<String>,
    /// Solver substep size; must divide the unit frame interval
    #[arg(long)]
    h: Option<f64>,
    /// Score only ground-truth pairs whose categories co-occurred in context
    #[arg(long)]
    ignore_unseen_pairs: bool,
    /// Evaluation seed (drives stochastic rollouts)
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_ablate(a: AblateArgs) -> SgaResult<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(f) = a.context_fraction {
        cfg.eval.context_fraction = Some(f);
    }
    if let Some(hh) = a.future_frame {
        cfg.eval.future_frames = Some(hh);
    }
    apply_eval_overrides(
        &mut cfg,
        &a.k,
        &a.strategy,
        &a.solver,
        a.h,
        a.ignore_unseen_pairs,
        &a.corpus,
        a.seed,
    )?;
    let mut cfg = cfg.resolve()?;

    if a.checkpoints.len() < 2 {
        return Err(SgaError::Config("ablation wants at least two --checkpoints".into()));
    }
    if !a.labels.is_empty() && a.labels.len() != a.checkpoints.len() {
        return Err(SgaError::Config(format!(
            "{} labels for {} checkpoints",
            a.labels.len(),
            a.checkpoints.len()
        )));
    }
    let mut owned: Vec<(String, SgaModel<Real>)> = Vec::with_capacity(a.checkpoints.len());
    for (i, path) in a.checkpoints.iter().enumerate() {
        let (model, _) = load_model(path)?;
        let label = a.labels.get(i).cloned().unwrap_or_else(|| {
            path.file_stem()
                .and_then(|s| s.to_str())
                .map(str::to_string)
                .unwrap_or_else(|| format!("model_{i}"))
        });
        owned.push((label, model));
    }
    for (i, (label, _)) in owned.iter().enumerate() {
        if owned[..i].iter().any(|(other, _)| other == label) {
            return Err(SgaError::Config(format!(
                "duplicate row label {label:?}; disambiguate with --labels"
            )));
        }
    }
    // One solver serves every row, so coherence is checked against the
    // first checkpoint; the evaluator re-checks each model as it runs.
    cfg.model.kind = owned[0].1.kind;
    cfg.model.dims = owned[0].1.dims;
    cfg.validate()?;
    let regimes = cfg.regimes()?;
    if regimes.is_empty() {
        return Err(SgaError::Config(
            "ablation wants at least one regime (--context-fraction or --future-frame)".into(),
        ));
    }
    let opts = cfg.eval_options()?;
    let corpus = load_data(&cfg)?;

    prepare_dir(&a.out_dir)?;
    write_text(&a.out_dir.join("config.toml"), &cfg.resolved_toml()?)?;
    let refs: Vec<(String, &SgaModel<Real>)> =
        owned.iter().map(|(label, model)| (label.clone(), model)).collect();
    let table = run_ablation(&refs, &corpus, &regimes, &opts)?;
    write_text(&a.out_dir.join("ablation.csv"), &table)?;
    print!("{table}");
    Ok(())
}
