//! Optimization loop: minibatching, Adam, EM scheduling, deterministic
//! seeding.
//!
//! Every run is fully determined by `(seed, config, data)`: parameter
//! initialization and per-epoch shuffles draw from streams derived from the
//! run seed, and gradient reductions are chunk-ordered. Identical seeds yield
//! bit-identical checkpoints.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attribution::{LabelPolicy, Snapshot};
use crate::error::{Error, Result};
use crate::event::{EventLog, ObservedSample};
use crate::logio::HISTORY_MAGIC;
use crate::metrics;
use crate::model::{ModelConfig, ModelParams};
use crate::objectives::{self, EStepWeights, LossBreakdown, ObjectiveKind};
use crate::par::derive_seed;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

const STREAM_INIT: u64 = 0x494e_4954;
const STREAM_SHUFFLE: u64 = 0x5348_5546_464c;

/// The five compared training schemes. Day-1, drop, and shift differ only in
/// their label policy; they share the hard-label loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainObjective {
    Esdf,
    Esmm,
    Naive,
    Shift,
    Dfm,
}

impl TrainObjective {
    pub const ALL: [TrainObjective; 5] = [
        TrainObjective::Esdf,
        TrainObjective::Esmm,
        TrainObjective::Naive,
        TrainObjective::Shift,
        TrainObjective::Dfm,
    ];

    pub fn loss_kind(&self) -> ObjectiveKind {
        match self {
            TrainObjective::Esdf => ObjectiveKind::Esdf,
            TrainObjective::Dfm => ObjectiveKind::Dfm,
            _ => ObjectiveKind::Esmm,
        }
    }

    /// The label policy this objective trains on.
    pub fn default_policy(&self) -> LabelPolicy {
        match self {
            TrainObjective::Esdf | TrainObjective::Dfm => LabelPolicy::FullCensored,
            TrainObjective::Esmm => LabelPolicy::EsmmDay1 { calendar_day: false },
            TrainObjective::Naive => LabelPolicy::NaiveDrop,
            TrainObjective::Shift => LabelPolicy::Shift,
        }
    }

    pub fn policy_matches(&self, policy: &LabelPolicy) -> bool {
        matches!(
            (self, policy),
            (TrainObjective::Esdf, LabelPolicy::FullCensored)
                | (TrainObjective::Dfm, LabelPolicy::FullCensored)
                | (TrainObjective::Esmm, LabelPolicy::EsmmDay1 { .. })
                | (TrainObjective::Naive, LabelPolicy::NaiveDrop)
                | (TrainObjective::Shift, LabelPolicy::Shift)
        )
    }
}

impl fmt::Display for TrainObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TrainObjective::Esdf => "esdf",
            TrainObjective::Esmm => "esmm",
            TrainObjective::Naive => "naive",
            TrainObjective::Shift => "shift",
            TrainObjective::Dfm => "dfm",
        };
        write!(f, "{name}")
    }
}

impl FromStr for TrainObjective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "esdf" => Ok(TrainObjective::Esdf),
            "esmm" => Ok(TrainObjective::Esmm),
            "naive" => Ok(TrainObjective::Naive),
            "shift" => Ok(TrainObjective::Shift),
            "dfm" => Ok(TrainObjective::Dfm),
            _ => Err(Error::Config(format!("unknown objective {s:?}"))),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub objective: TrainObjective,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Gradient steps per expectation step (censored objective only).
    pub em_steps_per_estep: usize,
    /// Recompute weights once per epoch over the full snapshot instead of
    /// per minibatch.
    pub full_batch_estep: bool,
    pub emb_dim: usize,
    pub hidden: Vec<usize>,
}

impl TrainConfig {
    pub fn new(objective: TrainObjective, epochs: usize, seed: u64) -> Self {
        Self {
            objective,
            learning_rate: 1e-4,
            batch_size: 1024,
            epochs,
            seed,
            em_steps_per_estep: 1,
            full_batch_estep: false,
            emb_dim: 8,
            hidden: vec![64, 32],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.em_steps_per_estep == 0 {
            return Err(Error::Config("em_steps_per_estep must be positive".into()));
        }
        if self.emb_dim == 0 {
            return Err(Error::Config("emb_dim must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// One epoch's record: loss sums over the epoch's first gradient passes,
/// optional held-out AUC, wall-clock seconds.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub eval_auc: Option<f64>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Held-out evaluation inputs for per-epoch metrics.
#[derive(Clone, Copy)]
pub struct EvalSpec<'a> {
    pub log: &'a EventLog,
    pub snapshot: &'a Snapshot,
}

/// Adam moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected adaptive-moment update, in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidInput(format!(
            "adam shape mismatch: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient at coordinate {bad}"
        )));
    }
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
    Ok(())
}

/// The parameters `train` starts from for a given config and data shape.
pub fn init_params(cfg: &TrainConfig, log: &EventLog, num_bins: usize) -> Result<ModelParams> {
    let model_cfg = ModelConfig {
        feature_dim: log.feature_dim,
        n_fields: log.n_fields,
        emb_dim: cfg.emb_dim,
        hidden: cfg.hidden.clone(),
        num_bins,
        delay_head: cfg.objective.loss_kind().delay_head(),
    };
    ModelParams::init(model_cfg, derive_seed(cfg.seed, STREAM_INIT))
}

fn numerical_context(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Numerical(msg) => {
            Error::Numerical(format!("epoch {epoch}, batch {batch}: {msg}"))
        }
        other => other,
    }
}

/// Trains the configured objective on the given snapshot(s).
///
/// With several snapshots, epochs cycle through them in order (day-by-day
/// re-maturation schedules). For the censored objective each minibatch runs
/// one expectation step (or reuses the epoch's full-batch weights) followed
/// by `em_steps_per_estep` gradient steps with the weights frozen.
pub fn train(
    cfg: &TrainConfig,
    log: &EventLog,
    snapshots: &[Snapshot],
    eval: Option<EvalSpec>,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    if snapshots.is_empty() {
        return Err(Error::Config("at least one snapshot is required".into()));
    }
    for snap in snapshots {
        if !cfg.objective.policy_matches(&snap.policy) {
            return Err(Error::Config(format!(
                "objective {} cannot train on a {} snapshot",
                cfg.objective, snap.policy
            )));
        }
        if snap.slot != snapshots[0].slot {
            return Err(Error::Config("snapshots disagree on slot config".into()));
        }
    }
    let kind = cfg.objective.loss_kind();
    let num_bins = snapshots[0].slot.num_bins();
    let mut params = init_params(cfg, log, num_bins)?;
    let mut adam = AdamState::new(params.len());
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let tick = Instant::now();
        let snap = &snapshots[epoch % snapshots.len()];
        let mut order: Vec<usize> = (0..snap.samples.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE ^ epoch as u64));
        order.shuffle(&mut rng);
        let epoch_samples: Vec<ObservedSample> =
            order.iter().map(|&i| snap.samples[i].clone()).collect();

        let epoch_weights = if kind == ObjectiveKind::Esdf && cfg.full_batch_estep {
            let heads = objectives::e_step_heads(&params, log, &epoch_samples)?;
            Some(objectives::e_step(&heads, &epoch_samples)?)
        } else {
            None
        };

        let mut sums = LossBreakdown::default();
        let inner_steps = if kind == ObjectiveKind::Esdf { cfg.em_steps_per_estep } else { 1 };
        for (bi, start) in (0..epoch_samples.len()).step_by(cfg.batch_size).enumerate() {
            let end = (start + cfg.batch_size).min(epoch_samples.len());
            let batch = &epoch_samples[start..end];
            let weights = match kind {
                ObjectiveKind::Esdf => Some(match &epoch_weights {
                    Some(ws) => EStepWeights(ws.0[start..end].to_vec()),
                    None => {
                        let heads = objectives::e_step_heads(&params, log, batch)
                            .map_err(|e| numerical_context(e, epoch, bi))?;
                        objectives::e_step(&heads, batch)
                            .map_err(|e| numerical_context(e, epoch, bi))?
                    }
                }),
                _ => None,
            };
            for step in 0..inner_steps {
                let (terms, grad) =
                    objectives::batch_gradient(&params, log, batch, weights.as_ref(), kind)
                        .map_err(|e| numerical_context(e, epoch, bi))?;
                adam_step(&mut params.data, &grad, &mut adam, cfg.learning_rate)
                    .map_err(|e| numerical_context(e, epoch, bi))?;
                if step == 0 {
                    sums.merge(&terms);
                }
            }
        }

        let eval_auc = match eval {
            Some(spec) => Some(metrics::evaluate(&params, spec.log, spec.snapshot)?.auc),
            None => None,
        };
        history.epochs.push(EpochStats {
            epoch,
            loss: sums,
            eval_auc,
            wall_secs: tick.elapsed().as_secs_f64(),
        });
    }
    Ok((params, history))
}

/// Writes the per-epoch history as delimited text. Wall-clock times are
/// timing data, not covered by the byte-reproducibility guarantee.
pub fn write_history(path: &Path, history: &TrainHistory, extra_headers: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{HISTORY_MAGIC}")?;
    for h in extra_headers {
        writeln!(w, "#{h}")?;
    }
    writeln!(
        w,
        "epoch\tclick\tconversion\tdelay_observed\tdelay_censored\tmean_total\teval_auc\twall_secs"
    )?;
    for e in &history.epochs {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.3}",
            e.epoch,
            e.loss.click,
            e.loss.conversion,
            e.loss.delay_observed,
            e.loss.delay_censored,
            e.loss.mean_total(),
            e.eval_auc.map(|a| a.to_string()).unwrap_or_default(),
            e.wall_secs
        )?;
    }
    w.flush()?;
    Ok(())
}
