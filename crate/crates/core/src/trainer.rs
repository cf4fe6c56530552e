//! The training loop: warm-up phase (contrastive only), main phase
//! (adversarial tuning + incomplete sentence filtering + contrastive), one
//! adaptive-moment update per step over encoder and both discriminators.
//!
//! Determinism: every random draw derives from (config seeds, step index,
//! sentence slot), never from shared mutable RNG state, so identical
//! (config, seeds) reproduce identical loss traces bit for bit and a resumed
//! run continues exactly where the interrupted one left off.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::augment::{augment, make_incomplete, AugmentSpec, AugmentStrategy, MaskStyle};
use crate::augment::AugmentError;
use crate::checkpoint::{save_checkpoint, Checkpoint, CheckpointError, OptimizerState};
use crate::encoder::{encode, sentence_embedding, EncodeError, EncodeOptions, EncoderConfig, EncoderParams};
use crate::objectives::{
    adversarial_loss, contrastive_loss, isf_loss, total_loss, ContrastiveOptions,
    DiscriminatorParams, LossComponents, LossWeights, ObjectiveError, Phase,
};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{derive_seed, stream};
use crate::tape::{Tape, TensorId};
use crate::tensor::TensorError;
use crate::vocab::{FrequencyTable, Vocabulary};

#[derive(Debug)]
pub enum TrainError {
    Augment(AugmentError),
    Encode(EncodeError),
    Objective(ObjectiveError),
    Tensor(TensorError),
    Checkpoint(CheckpointError),
    Io(io::Error),
    /// Training aborted on a non-finite loss.
    NonFiniteLoss { step: u64, component: &'static str, max_abs_grad: f64 },
    InvalidConfig(String),
    CorpusTooSmall { sentences: usize, batch: usize },
    ResumeBeyondEnd { step: u64, total: u64 },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Augment(e) => write!(f, "{}", e),
            TrainError::Encode(e) => write!(f, "{}", e),
            TrainError::Objective(e) => write!(f, "{}", e),
            TrainError::Tensor(e) => write!(f, "{}", e),
            TrainError::Checkpoint(e) => write!(f, "{}", e),
            TrainError::Io(e) => write!(f, "i/o error: {}", e),
            TrainError::NonFiniteLoss { step, component, max_abs_grad } => write!(
                f,
                "non-finite loss at step {} (component {}, max |grad| {})",
                step, component, max_abs_grad
            ),
            TrainError::InvalidConfig(detail) => write!(f, "invalid config: {}", detail),
            TrainError::CorpusTooSmall { sentences, batch } => write!(
                f,
                "corpus of {} sentences cannot fill one batch of {}",
                sentences, batch
            ),
            TrainError::ResumeBeyondEnd { step, total } => {
                write!(f, "resume step {} is beyond the {} total steps", step, total)
            }
        }
    }
}

impl std::error::Error for TrainError {}

impl From<AugmentError> for TrainError {
    fn from(e: AugmentError) -> Self {
        TrainError::Augment(e)
    }
}
impl From<EncodeError> for TrainError {
    fn from(e: EncodeError) -> Self {
        TrainError::Encode(e)
    }
}
impl From<ObjectiveError> for TrainError {
    fn from(e: ObjectiveError) -> Self {
        TrainError::Objective(e)
    }
}
impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}
impl From<CheckpointError> for TrainError {
    fn from(e: CheckpointError) -> Self {
        TrainError::Checkpoint(e)
    }
}
impl From<io::Error> for TrainError {
    fn from(e: io::Error) -> Self {
        TrainError::Io(e)
    }
}

/// Which contrastive backbone supplies the two views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    /// Token shuffle + feature cutoff views.
    Consert,
    /// Both views are the sentence itself; dropout provides the variation.
    Simcse,
}

impl Backbone {
    pub fn default_views(self) -> (ViewSpec, ViewSpec) {
        match self {
            Backbone::Consert => (
                ViewSpec { strategy: AugmentStrategy::TokenShuffle, rate: 0.0 },
                ViewSpec { strategy: AugmentStrategy::FeatureCutoff, rate: 0.2 },
            ),
            Backbone::Simcse => (
                ViewSpec { strategy: AugmentStrategy::Dropout, rate: 0.0 },
                ViewSpec { strategy: AugmentStrategy::Dropout, rate: 0.0 },
            ),
        }
    }

    /// Default warm-up fraction of total steps.
    pub fn default_warmup_fraction(self) -> f64 {
        match self {
            Backbone::Consert => 0.5,
            Backbone::Simcse => 0.1,
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backbone::Consert => write!(f, "consert"),
            Backbone::Simcse => write!(f, "simcse"),
        }
    }
}

impl std::str::FromStr for Backbone {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "consert" => Ok(Backbone::Consert),
            "simcse" => Ok(Backbone::Simcse),
            other => Err(format!("unknown backbone `{}` (expected consert|simcse)", other)),
        }
    }
}

/// Strategy and rate for one contrastive view; per-step seeds are derived
/// by the trainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewSpec {
    pub strategy: AugmentStrategy,
    pub rate: f64,
}

/// Independent seed streams, all derived from one base seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub dropout: u64,
    pub masking: u64,
    pub augment: u64,
    pub init: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Seeds {
            data: derive_seed(seed, &[1]),
            dropout: derive_seed(seed, &[2]),
            masking: derive_seed(seed, &[3]),
            augment: derive_seed(seed, &[4]),
            init: derive_seed(seed, &[5]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub disc_hidden: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of total steps spent in warm-up (contrastive only).
    pub warmup_fraction: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Optional separate rate for the two discriminators.
    pub disc_learning_rate: Option<f64>,
    pub weights: LossWeights,
    pub backbone: Backbone,
    pub view_a: ViewSpec,
    pub view_b: ViewSpec,
    /// Low-frequency masking rate for incomplete sentences.
    pub epsilon: f64,
    pub mask_style: MaskStyle,
    pub denominator_includes_positive: bool,
    pub seeds: Seeds,
    /// Save a checkpoint every this many steps (0 = final only).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(encoder: EncoderConfig, backbone: Backbone, seed: u64) -> Self {
        let (view_a, view_b) = backbone.default_views();
        let disc_hidden = encoder.dim;
        TrainConfig {
            encoder,
            disc_hidden,
            batch_size: 32,
            epochs: 1,
            warmup_fraction: backbone.default_warmup_fraction(),
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            disc_learning_rate: None,
            weights: LossWeights::default(),
            backbone,
            view_a,
            view_b,
            epsilon: 0.2,
            mask_style: MaskStyle::MaskToken,
            denominator_includes_positive: false,
            seeds: Seeds::from_base(seed),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::InvalidConfig(format!(
                "batch size {} below the minimum of 2",
                self.batch_size
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(TrainError::InvalidConfig(format!(
                "warmup fraction {} outside [0, 1)",
                self.warmup_fraction
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(TrainError::InvalidConfig(format!(
                "epsilon {} outside [0, 1)",
                self.epsilon
            )));
        }
        LossWeights::new(self.weights.alpha, self.weights.beta, self.weights.tau)
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Encoder plus the two discriminators.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: EncoderParams,
    pub disc_sim: DiscriminatorParams,
    pub disc_info: DiscriminatorParams,
}

impl Model {
    pub fn init(config: &TrainConfig) -> Self {
        Model {
            encoder: EncoderParams::init(config.encoder.clone(), derive_seed(config.seeds.init, &[0])),
            disc_sim: DiscriminatorParams::init(
                config.encoder.dim,
                config.disc_hidden,
                derive_seed(config.seeds.init, &[1]),
            ),
            disc_info: DiscriminatorParams::init(
                config.encoder.dim,
                config.disc_hidden,
                derive_seed(config.seeds.init, &[2]),
            ),
        }
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut crate::tensor::Tensor)> {
        let mut out = self.encoder.named_tensors_mut();
        out.extend(self.disc_sim.named_tensors_mut("disc_sim"));
        out.extend(self.disc_info.named_tensors_mut("disc_info"));
        out
    }

    pub fn to_checkpoint(
        &self,
        vocab: &Vocabulary,
        freq: &FrequencyTable,
        step: u64,
        optimizer: Option<OptimizerState>,
    ) -> Checkpoint {
        Checkpoint {
            encoder: self.encoder.clone(),
            disc_sim: self.disc_sim.clone(),
            disc_info: self.disc_info.clone(),
            vocab: vocab.clone(),
            freq: freq.clone(),
            step,
            optimizer,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> (Self, u64, Option<OptimizerState>) {
        (
            Model {
                encoder: ckpt.encoder,
                disc_sim: ckpt.disc_sim,
                disc_info: ckpt.disc_info,
            },
            ckpt.step,
            ckpt.optimizer,
        )
    }
}

/// Averaged loss components since the start (or resume) of a run.
#[derive(Debug, Clone, Default)]
pub struct RunningLoss {
    pub adversarial_sum: f64,
    pub adversarial_n: u64,
    pub isf_sum: f64,
    pub isf_n: u64,
    pub contrastive_sum: f64,
    pub total_sum: f64,
    pub n: u64,
}

impl RunningLoss {
    fn record(&mut self, report: &StepReport) {
        if let Some(v) = report.adversarial {
            self.adversarial_sum += v;
            self.adversarial_n += 1;
        }
        if let Some(v) = report.isf {
            self.isf_sum += v;
            self.isf_n += 1;
        }
        self.contrastive_sum += report.contrastive;
        self.total_sum += report.total;
        self.n += 1;
    }
}

/// Mutable per-run training state.
#[derive(Debug)]
pub struct TrainState {
    pub step: u64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub optimizer: Adam,
    pub running: RunningLoss,
}

impl TrainState {
    pub fn new(config: &TrainConfig, total_steps: u64) -> Self {
        let warmup_steps = (config.warmup_fraction * total_steps as f64).ceil() as u64;
        TrainState {
            step: 0,
            warmup_steps,
            total_steps,
            optimizer: Adam::new(config.adam_config()),
            running: RunningLoss::default(),
        }
    }

    pub fn phase(&self) -> Phase {
        if self.step < self.warmup_steps {
            Phase::Warmup
        } else {
            Phase::Main
        }
    }
}

/// Itemized losses of one step. Components not computed in this phase (or
/// skipped because their weight is zero) are absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub phase: Phase,
    pub adversarial: Option<f64>,
    pub isf: Option<f64>,
    pub contrastive: f64,
    pub total: f64,
}

pub const METRICS_HEADER: &str = "step,phase,l_at,l_isf,r_usrl,total";

impl StepReport {
    /// One metrics-log line: `step,phase,l_at,l_isf,r_usrl,total` with empty
    /// fields for absent components.
    pub fn metrics_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.phase,
            opt(self.adversarial),
            opt(self.isf),
            self.contrastive,
            self.total
        )
    }
}

struct ForwardOutcome {
    components: LossComponents,
    total: TensorId,
    named_ids: Vec<(String, TensorId)>,
}

/// Builds the phase-appropriate loss graph for one batch at a given step.
/// All randomness (views, masking, dropout) is a function of (seeds, step,
/// sentence slot).
fn forward_pass(
    tape: &mut Tape,
    model: &Model,
    config: &TrainConfig,
    labels: &[u8],
    batch: &[Vec<u32>],
    step: u64,
    phase: Phase,
    trainable: bool,
) -> Result<ForwardOutcome, TrainError> {
    let d = config.encoder.dim;
    let seeds = &config.seeds;

    let mut view_ids = [Vec::with_capacity(batch.len()), Vec::with_capacity(batch.len())];
    let mut view_masks = [Vec::with_capacity(batch.len()), Vec::with_capacity(batch.len())];
    for (tag, spec) in [(0u64, &config.view_a), (1u64, &config.view_b)] {
        for (s, ids) in batch.iter().enumerate() {
            let view = augment(
                ids,
                &AugmentSpec {
                    strategy: spec.strategy,
                    rate: spec.rate,
                    seed: derive_seed(seeds.augment, &[tag, step, s as u64]),
                },
                d,
            )?;
            view_ids[tag as usize].push(view.ids);
            view_masks[tag as usize].push(view.zeroed_dims);
        }
    }

    let enc_binding = model.encoder.bind(tape, trainable);
    let sim_binding = model.disc_sim.bind(tape, trainable);
    let info_binding = model.disc_info.bind(tape, trainable);
    let mut named_ids = enc_binding.named_ids();
    named_ids.extend(sim_binding.named_ids("disc_sim"));
    named_ids.extend(info_binding.named_ids("disc_info"));

    let [ids_a, ids_b] = view_ids;
    let [masks_a, masks_b] = view_masks;
    let enc_a = encode(
        tape,
        &enc_binding,
        &ids_a,
        &EncodeOptions {
            train_mode: true,
            dropout_seed: derive_seed(seeds.dropout, &[step, 0]),
            retain_attention: false,
            feature_masks: Some(masks_a),
        },
    )?;
    let ha = sentence_embedding(tape, &enc_a)?;
    let enc_b = encode(
        tape,
        &enc_binding,
        &ids_b,
        &EncodeOptions {
            train_mode: true,
            dropout_seed: derive_seed(seeds.dropout, &[step, 1]),
            retain_attention: false,
            feature_masks: Some(masks_b),
        },
    )?;
    let hb = sentence_embedding(tape, &enc_b)?;

    let contrastive = contrastive_loss(
        tape,
        &ha,
        &hb,
        &ContrastiveOptions {
            temperature: config.weights.tau,
            denominator_includes_positive: config.denominator_includes_positive,
        },
    )?;

    let mut adversarial = None;
    let mut isf = None;
    if phase == Phase::Main && (config.weights.alpha != 0.0 || config.weights.beta != 0.0) {
        let enc_orig = encode(
            tape,
            &enc_binding,
            batch,
            &EncodeOptions {
                train_mode: true,
                dropout_seed: derive_seed(seeds.dropout, &[step, 2]),
                retain_attention: false,
                feature_masks: None,
            },
        )?;
        if config.weights.alpha != 0.0 {
            adversarial = Some(adversarial_loss(tape, &enc_orig, labels, &sim_binding, true)?);
        }
        if config.weights.beta != 0.0 {
            let mut masked = Vec::with_capacity(batch.len());
            let mut flags = Vec::with_capacity(batch.len());
            for (s, ids) in batch.iter().enumerate() {
                let inc = make_incomplete(
                    ids,
                    labels,
                    config.epsilon,
                    derive_seed(seeds.masking, &[step, s as u64]),
                    config.mask_style,
                )?;
                flags.push(inc.had_low_frequency);
                masked.push(inc.masked);
            }
            let h_orig = sentence_embedding(tape, &enc_orig)?;
            let enc_inc = encode(
                tape,
                &enc_binding,
                &masked,
                &EncodeOptions {
                    train_mode: true,
                    dropout_seed: derive_seed(seeds.dropout, &[step, 3]),
                    retain_attention: false,
                    feature_masks: None,
                },
            )?;
            let h_inc = sentence_embedding(tape, &enc_inc)?;
            isf = Some(isf_loss(tape, &h_orig, &h_inc, &flags, &info_binding)?);
        }
    }

    let components = LossComponents { adversarial, isf, contrastive };
    let total = total_loss(tape, &components, &config.weights, phase)?;
    Ok(ForwardOutcome { components, total, named_ids })
}

/// One optimization step on a batch. Builds the two views, encodes, pools,
/// computes the phase total, runs backward, and applies one Adam update to
/// encoder and discriminators simultaneously.
pub fn train_step(
    model: &mut Model,
    state: &mut TrainState,
    config: &TrainConfig,
    labels: &[u8],
    batch: &[Vec<u32>],
) -> Result<StepReport, TrainError> {
    let step = state.step;
    let phase = state.phase();
    let mut tape = Tape::new();
    let outcome = forward_pass(&mut tape, model, config, labels, batch, step, phase, true)?;

    let value = |id: TensorId| tape.scalar_value(id).expect("loss scalars");
    let report = StepReport {
        step,
        phase,
        adversarial: outcome.components.adversarial.map(&value),
        isf: outcome.components.isf.map(&value),
        contrastive: value(outcome.components.contrastive),
        total: value(outcome.total),
    };

    if !report.total.is_finite() {
        let component = if report.adversarial.is_some_and(|v| !v.is_finite()) {
            "adversarial"
        } else if report.isf.is_some_and(|v| !v.is_finite()) {
            "isf"
        } else if !report.contrastive.is_finite() {
            "contrastive"
        } else {
            "total"
        };
        let max_abs_grad =
            tape.backward(outcome.total).map(|g| g.max_abs()).unwrap_or(f64::NAN);
        return Err(TrainError::NonFiniteLoss { step, component, max_abs_grad });
    }

    let grads = tape.backward(outcome.total)?;
    state.optimizer.begin_step();
    let disc_lr = config.disc_learning_rate.unwrap_or(config.learning_rate);
    let mut tensors = model.named_tensors_mut();
    debug_assert_eq!(tensors.len(), outcome.named_ids.len());
    for ((name, tensor), (bound_name, id)) in tensors.iter_mut().zip(outcome.named_ids.iter()) {
        debug_assert_eq!(name, bound_name);
        if let Some(grad) = grads.get(*id) {
            let lr = if name.starts_with("disc_") { disc_lr } else { config.learning_rate };
            state.optimizer.update(name, lr, tensor.data_mut(), grad);
        }
    }

    state.step += 1;
    state.running.record(&report);
    Ok(report)
}

/// Total loss of a batch under the exact randomness of `step`, without
/// touching the model. Used by descent checks and diagnostics.
pub fn frozen_batch_loss(
    model: &Model,
    config: &TrainConfig,
    labels: &[u8],
    batch: &[Vec<u32>],
    step: u64,
    phase: Phase,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let outcome = forward_pass(&mut tape, model, config, labels, batch, step, phase, false)?;
    Ok(tape.scalar_value(outcome.total)?)
}

/// Inputs of a full training run.
pub struct TrainRun<'a> {
    pub corpus: &'a [Vec<u32>],
    pub vocab: &'a Vocabulary,
    pub freq: &'a FrequencyTable,
    pub config: &'a TrainConfig,
}

/// Model/optimizer state to continue from.
pub struct ResumePoint {
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
    pub step: u64,
}

impl From<Checkpoint> for ResumePoint {
    fn from(ckpt: Checkpoint) -> Self {
        let (model, step, optimizer) = Model::from_checkpoint(ckpt);
        ResumePoint { model, optimizer, step }
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub state: TrainState,
    pub reports: Vec<StepReport>,
    pub checkpoint_paths: Vec<PathBuf>,
}

/// Runs the full loop: seeded shuffling per epoch, fixed-size batches (the
/// last partial batch of each epoch is dropped so the contrastive negative
/// set stays constant), metrics line per step, periodic checkpoints.
pub fn train(
    run: &TrainRun,
    resume: Option<ResumePoint>,
    mut metrics: Option<&mut dyn Write>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    let config = run.config;
    config.validate()?;
    let n = run.corpus.len();
    let steps_per_epoch = n / config.batch_size;
    if steps_per_epoch == 0 {
        return Err(TrainError::CorpusTooSmall { sentences: n, batch: config.batch_size });
    }
    let total_steps = (config.epochs * steps_per_epoch) as u64;

    let (mut model, mut state) = match resume {
        Some(point) => {
            if point.step > total_steps {
                return Err(TrainError::ResumeBeyondEnd { step: point.step, total: total_steps });
            }
            let mut state = TrainState::new(config, total_steps);
            state.step = point.step;
            if let Some(opt) = point.optimizer {
                state.optimizer = Adam::restore(config.adam_config(), opt.t, opt.moments);
            }
            (point.model, state)
        }
        None => (Model::init(config), TrainState::new(config, total_steps)),
    };

    if state.step == 0 {
        if let Some(m) = metrics.as_deref_mut() {
            writeln!(m, "{}", METRICS_HEADER)?;
        }
    }

    let labels = run.freq.labels();
    let mut reports = Vec::new();
    let mut checkpoint_paths = Vec::new();
    let start_epoch = (state.step / steps_per_epoch as u64) as usize;
    for epoch in start_epoch..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(config.seeds.data, &[epoch as u64]));
        let skip = if epoch == start_epoch {
            (state.step % steps_per_epoch as u64) as usize
        } else {
            0
        };
        for batch_indices in order.chunks_exact(config.batch_size).skip(skip) {
            let batch: Vec<Vec<u32>> =
                batch_indices.iter().map(|&i| run.corpus[i].clone()).collect();
            let report = train_step(&mut model, &mut state, config, labels, &batch)?;
            if let Some(m) = metrics.as_deref_mut() {
                writeln!(m, "{}", report.metrics_row())?;
            }
            reports.push(report);
            if config.checkpoint_every > 0
                && state.step % config.checkpoint_every as u64 == 0
                && state.step < total_steps
            {
                if let Some(dir) = checkpoint_dir {
                    let path = dir.join(format!("checkpoint_step{:06}.bin", state.step));
                    let ckpt = model.to_checkpoint(
                        run.vocab,
                        run.freq,
                        state.step,
                        Some(OptimizerState {
                            t: state.optimizer.step_count(),
                            moments: state.optimizer.export_moments(),
                        }),
                    );
                    save_checkpoint(&path, &ckpt)?;
                    checkpoint_paths.push(path);
                }
            }
        }
    }

    if let Some(dir) = checkpoint_dir {
        let path = dir.join("checkpoint_final.bin");
        let ckpt = model.to_checkpoint(
            run.vocab,
            run.freq,
            state.step,
            Some(OptimizerState {
                t: state.optimizer.step_count(),
                moments: state.optimizer.export_moments(),
            }),
        );
        save_checkpoint(&path, &ckpt)?;
        checkpoint_paths.push(path);
    }

    Ok(TrainOutcome { model, state, reports, checkpoint_paths })
}
