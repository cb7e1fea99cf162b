//! AdamW, learning-rate schedules, the training loop with early stopping
//! and best-AUROC selection, fine-tuning and checkpoints.

mod checkpoint;
mod data;
mod optim;

use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint_header, save_checkpoint, ArrayEntry, Checkpoint, CheckpointHeader, RngState,
    ECKP_MAGIC, ECKP_VERSION,
};
pub use data::{assemble_batch, LeadView, SegmentSet};
pub use optim::{adamw_step, clip_grad_norm, schedule_lr, should_stop, AdamState, OptimizerConfig, Schedule};

use crate::error::{invalid, shape, Error, Result};
use crate::metrics::{auroc, macro_mean, ScoredSet};
use crate::nnet::{
    backward, build_model, forward, forward_features, head_backward, head_logits, init_norm_stats, predict, Matrix,
    ModelConfig, Mode, NormStats, ParamStore, Real,
};
use crate::puloss::{compute_loss, LossConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    #[default]
    None,
    LinearProbe,
    Full,
}

impl std::str::FromStr for FinetuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "linear_probe" => Ok(Self::LinearProbe),
            "full" => Ok(Self::Full),
            other => Err(invalid(format!("unknown fine-tune mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    pub min_lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without a lower validation loss before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub seed: u64,
    pub finetune_mode: FinetuneMode,
    pub lead_view: LeadView,
    /// Global gradient-norm ceiling.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            schedule: Schedule::step_default(),
            min_lr: 1e-5,
            max_epochs: 20,
            batch_size: 256,
            early_stop_patience: 5,
            seed: 0,
            finetune_mode: FinetuneMode::None,
            lead_view: LeadView::AsIs,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    /// Plateau schedule, lower floor and a longer budget.
    pub fn finetune_default(mode: FinetuneMode) -> Self {
        Self { schedule: Schedule::plateau_default(), min_lr: 1e-6, max_epochs: 30, finetune_mode: mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.schedule.validate()?;
        if !(self.min_lr > 0.0 && self.optimizer.lr0 > self.min_lr) {
            return Err(invalid(format!("need lr0 > min_lr > 0, got {} / {}", self.optimizer.lr0, self.min_lr)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(invalid("grad_clip must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub valid_auroc: Option<f64>,
    pub lr: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("epoch,train_loss,valid_loss,valid_auroc,lr\n");
    for r in history {
        writeln!(s, "{},{},{},{},{}", r.epoch, r.train_loss, opt(r.valid_loss), opt(r.valid_auroc), r.lr).expect("write to string");
    }
    s
}

pub struct TrainOutcome<T> {
    /// Highest validation macro-AUROC seen (the last state when none was defined).
    pub best: Checkpoint<T>,
    pub last: Checkpoint<T>,
}

impl<T> TrainOutcome<T> {
    pub fn history(&self) -> &[EpochRecord] {
        &self.last.history
    }
}

/// Freshly initialized state at epoch 0.
pub fn initial_checkpoint<T: Real>(model: &ModelConfig, cfg: &TrainConfig) -> Result<Checkpoint<T>> {
    cfg.validate()?;
    let params = build_model(model, cfg.seed)?;
    Ok(Checkpoint {
        model: model.clone(),
        train: cfg.clone(),
        stats: init_norm_stats(model)?,
        optimizer: AdamState::new(&params),
        params,
        epoch: 0,
        best_auroc: None,
        best_epoch: None,
        history: Vec::new(),
        rng: RngState::capture(&ChaCha8Rng::seed_from_u64(cfg.seed)),
    })
}

/// Logits for every segment, in order, under the given view.
pub fn predict_logits<T: Real>(
    params: &ParamStore<T>,
    stats: &NormStats<T>,
    model: &ModelConfig,
    set: &SegmentSet,
    view: &LeadView,
    batch_size: usize,
) -> Result<Matrix<T>> {
    let view = view.for_eval();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Matrix::zeros(set.len(), model.n_classes);
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = assemble_batch::<T, _>(set, chunk, &view, &mut rng)?;
        let l = predict(params, stats, model, &x)?;
        let start = chunk[0] * model.n_classes;
        out.data[start..start + l.data.len()].copy_from_slice(&l.data);
    }
    Ok(out)
}

/// One scored set per label column (scores are logistic probabilities).
pub fn scored_sets<T: Real>(logits: &Matrix<T>, set: &SegmentSet) -> Result<Vec<ScoredSet>> {
    if logits.rows != set.len() || logits.cols != set.n_labels {
        return Err(shape(format!("{}x{} logits for {} segments x {} labels", logits.rows, logits.cols, set.len(), set.n_labels)));
    }
    (0..set.n_labels)
        .map(|j| {
            let scores = (0..set.len()).map(|i| crate::nnet::ops::sigmoid(logits.at(i, j).f64())).collect();
            ScoredSet::with_ids(scores, set.label_column(j), set.record_ids.clone())
        })
        .collect()
}

/// Mean AUROC over labels where both classes occur.
pub fn macro_auroc<T: Real>(logits: &Matrix<T>, set: &SegmentSet) -> Result<Option<f64>> {
    Ok(macro_mean(scored_sets(logits, set)?.iter().map(|s| auroc(s).ok())))
}

fn check_data(model: &ModelConfig, cfg: &TrainConfig, train: &SegmentSet, valid: &SegmentSet) -> Result<()> {
    if train.is_empty() {
        return Err(invalid("empty training set"));
    }
    cfg.lead_view.validate(train)?;
    let c = cfg.lead_view.out_channels(train);
    if c != model.in_channels {
        return Err(shape(format!("data gives {c} input channels, model expects {}", model.in_channels)));
    }
    if train.n_labels != model.n_classes {
        return Err(shape(format!("{} labels for a head of {}", train.n_labels, model.n_classes)));
    }
    if !valid.is_empty()
        && (valid.n_labels != train.n_labels || valid.length != train.length || valid.channel_names != train.channel_names)
    {
        return Err(shape("validation set layout differs from training set"));
    }
    Ok(())
}

const HEAD_PARAMS: [&str; 3] = ["head.weight", "head.bias", "tau"];

fn diverged<T: Real>(epoch: usize, err: Error, snapshot: &Checkpoint<T>) -> Error {
    match err {
        Error::Numerical(reason) => Error::Diverged { epoch, reason, last_good: snapshot.encode().ok() },
        other => other,
    }
}

/// Pooled features for the whole set, computed once (deterministic views only).
fn feature_matrix<T: Real>(state: &Checkpoint<T>, set: &SegmentSet, view: &LeadView, bs: usize) -> Result<Matrix<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let width = state.model.feature_channels();
    let mut out = Matrix::zeros(set.len(), width);
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(bs) {
        let (x, _) = assemble_batch::<T, _>(set, chunk, view, &mut rng)?;
        let f = forward_features(&state.params, &state.stats, &state.model, &x)?;
        out.data[chunk[0] * width..chunk[0] * width + f.data.len()].copy_from_slice(&f.data);
    }
    Ok(out)
}

fn rows<T: Real>(m: &Matrix<T>, idx: &[usize]) -> Matrix<T> {
    let mut out = Matrix::zeros(idx.len(), m.cols);
    for (k, &i) in idx.iter().enumerate() {
        out.data[k * m.cols..(k + 1) * m.cols].copy_from_slice(m.row(i));
    }
    out
}

/// Loss of one batch, with the parameters updated in place.
fn step<T: Real>(
    state: &mut Checkpoint<T>,
    x: BatchInput<T>,
    labels: &[f32],
    lr: f64,
    mask: Option<&[bool]>,
) -> Result<f64> {
    let cfg = state.train.clone();
    let (value, mut grads) = match x {
        BatchInput::Signal(x) => {
            let (logits, cache) = forward(&state.params, &mut state.stats, &state.model, &x, Mode::Train)?;
            let out = compute_loss(&cfg.loss, &logits, labels)?;
            (out.value, backward(&state.params, &state.model, &cache, &out.dlogits)?)
        }
        BatchInput::Features(f) => {
            let logits = head_logits(&state.params, &state.model, &f)?;
            let out = compute_loss(&cfg.loss, &logits, labels)?;
            (out.value, head_backward(&state.params, &state.model, &f, &out.dlogits)?)
        }
    };
    if let Some(c) = cfg.grad_clip {
        clip_grad_norm(&mut grads, c);
    }
    adamw_step(&mut state.params, &grads, &mut state.optimizer, &cfg.optimizer, lr, mask)?;
    Ok(value)
}

enum BatchInput<T> {
    Signal(crate::nnet::Tensor3<T>),
    Features(Matrix<T>),
}

fn run<T: Real>(
    mut state: Checkpoint<T>,
    mut best: Option<Checkpoint<T>>,
    train: &SegmentSet,
    valid: &SegmentSet,
) -> Result<TrainOutcome<T>> {
    let cfg = state.train.clone();
    cfg.validate()?;
    check_data(&state.model, &cfg, train, valid)?;
    let probe = cfg.finetune_mode == FinetuneMode::LinearProbe;
    let mask: Option<Vec<bool>> =
        probe.then(|| state.params.iter().map(|p| HEAD_PARAMS.contains(&p.name.as_str())).collect());
    let train_features = if probe && !cfg.lead_view.is_random() {
        Some(feature_matrix(&state, train, &cfg.lead_view.for_eval(), cfg.batch_size)?)
    } else {
        None
    };
    let mut rng = state.rng.restore()?;
    let view = cfg.lead_view.clone();

    while state.epoch < cfg.max_epochs {
        let losses: Vec<Option<f64>> = state.history.iter().map(|r| r.valid_loss).collect();
        if should_stop(&losses, cfg.early_stop_patience) {
            break;
        }
        let e = state.epoch;
        let snapshot = state.clone();
        let aurocs: Vec<Option<f64>> = state.history.iter().map(|r| r.valid_auroc).collect();
        let lr = schedule_lr(&cfg.schedule, cfg.optimizer.lr0, cfg.min_lr, e, &aurocs);

        let mut perm: Vec<usize> = (0..train.len()).collect();
        perm.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in perm.chunks(cfg.batch_size) {
            let (input, labels) = match &train_features {
                Some(f) => (BatchInput::Features(rows(f, chunk)), chunk.iter().flat_map(|&i| train.label_row(i).to_vec()).collect()),
                None if probe => {
                    let (x, y) = assemble_batch::<T, _>(train, chunk, &view, &mut rng)?;
                    let f = forward_features(&state.params, &state.stats, &state.model, &x)?;
                    (BatchInput::Features(f), y)
                }
                None => {
                    let (x, y) = assemble_batch::<T, _>(train, chunk, &view, &mut rng)?;
                    (BatchInput::Signal(x), y)
                }
            };
            let v = step(&mut state, input, &labels, lr, mask.as_deref()).map_err(|err| diverged(e, err, &snapshot))?;
            total += v * chunk.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(diverged(e, Error::Numerical("non-finite training loss".into()), &snapshot));
        }

        let (valid_loss, valid_auroc) = if valid.is_empty() {
            (None, None)
        } else {
            let logits = predict_logits(&state.params, &state.stats, &state.model, valid, &view, cfg.batch_size)
                .map_err(|err| diverged(e, err, &snapshot))?;
            let l = compute_loss(&cfg.loss, &logits, &valid.labels).map_err(|err| diverged(e, err, &snapshot))?;
            (Some(l.value), macro_auroc(&logits, valid)?)
        };
        state.history.push(EpochRecord { epoch: e, train_loss, valid_loss, valid_auroc, lr });
        state.epoch += 1;
        state.rng = RngState::capture(&rng);
        if let Some(a) = valid_auroc {
            if state.best_auroc.map_or(true, |b| a > b) {
                state.best_auroc = Some(a);
                state.best_epoch = Some(e);
                best = Some(state.clone());
            }
        }
    }
    state.rng = RngState::capture(&rng);
    let best = match best {
        Some(mut b) => {
            // the best snapshot carries the full history for reference
            b.history = state.history.clone();
            b
        }
        None => state.clone(),
    };
    Ok(TrainOutcome { best, last: state })
}

/// Train from a fresh initialization.
pub fn train<T: Real>(model: &ModelConfig, cfg: &TrainConfig, train: &SegmentSet, valid: &SegmentSet) -> Result<TrainOutcome<T>> {
    run(initial_checkpoint(model, cfg)?, None, train, valid)
}

/// Continue from `last` up to `max_epochs` (taken from `last` unless given).
/// `best` is the best checkpoint of the earlier run, if any.
pub fn resume<T: Real>(
    mut last: Checkpoint<T>,
    best: Option<Checkpoint<T>>,
    max_epochs: Option<usize>,
    train: &SegmentSet,
    valid: &SegmentSet,
) -> Result<TrainOutcome<T>> {
    if let Some(m) = max_epochs {
        last.train.max_epochs = m;
    }
    run(last, best, train, valid)
}

/// Replace the head with a fresh one of `n_classes` outputs and train.
/// `linear_probe` updates only the head (and τ); `full` updates everything.
pub fn finetune<T: Real>(
    pretrained: &Checkpoint<T>,
    n_classes: usize,
    cfg: &TrainConfig,
    train: &SegmentSet,
    valid: &SegmentSet,
) -> Result<TrainOutcome<T>> {
    if n_classes == 0 {
        return Err(invalid("head size must be >= 1"));
    }
    if cfg.finetune_mode == FinetuneMode::None {
        return Err(invalid("fine-tuning needs mode linear_probe or full"));
    }
    let mut model = pretrained.model.clone();
    model.n_classes = n_classes;
    let mut state = initial_checkpoint::<T>(&model, cfg)?;
    for p in state.params.iter_mut() {
        if HEAD_PARAMS.contains(&p.name.as_str()) {
            continue;
        }
        let src = pretrained.params.get(&p.name).ok_or_else(|| invalid(format!("pretrained model lacks {}", p.name)))?;
        if src.shape != p.shape {
            return Err(shape(format!("{}: pretrained shape {:?} vs {:?}", p.name, src.shape, p.shape)));
        }
        p.data.copy_from_slice(&src.data);
    }
    state.stats = pretrained.stats.clone();
    run(state, None, train, valid)
}
