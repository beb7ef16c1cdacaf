use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{load_statics, split_into, tile_scene, InputSpec, TileBatch};
use super::{Mode, TrainConfig, TrainError};
use crate::autodiff::{
    argmax_classes, read_checkpoint, write_checkpoint, AdamState, BatchNormMode, CheckpointFile, LossInfo, Tape,
    Tensor,
};
use crate::features::StaticGrids;
use crate::grid_io::{load_labels, load_scene, DatasetManifest, ManifestEntry, UNLABELED};
use crate::models::{model_from_checkpoint, CldNet};

/// Patience counter on validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss.is_finite() && loss < self.best - self.min_delta {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            return StopDecision::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

/// One optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub scene: String,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch\tlr\ttrain_loss\ttrain_accuracy\tval_loss\tval_accuracy";

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.lr, self.train_loss, self.train_accuracy, self.val_loss, self.val_accuracy
        )
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: CldNet,
    pub adam: AdamState,
    /// First epoch not yet run.
    pub next_epoch: usize,
    pub stopper: EarlyStopping,
    pub seed: u64,
    pub mode: Mode,
    pub input: InputSpec,
}

fn meta_get<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T, TrainError> {
    meta.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| TrainError::Checkpoint(format!("metadata field {key} missing or malformed")))
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let model = CldNet::new(config.model_config(), config.seed)?;
        let sizes: Vec<usize> = model.params().tensors().iter().map(Tensor::len).collect();
        log::info!(
            "model has {} trainable parameters ({} input channels)",
            model.parameter_count(),
            model.config().in_channels
        );
        Ok(Self {
            model,
            adam: AdamState::new(&sizes),
            next_epoch: 0,
            stopper: EarlyStopping::new(config.patience, config.min_delta),
            seed: config.seed,
            mode: config.mode,
            input: config.input_spec(),
        })
    }

    pub fn to_checkpoint(&self) -> CheckpointFile {
        let mut ckpt = self.model.to_checkpoint();
        let names = self.model.params().names();
        for ((n, m), v) in names.iter().zip(&self.adam.m).zip(&self.adam.v) {
            ckpt.push(format!("adam/m/{n}"), Tensor::new(&[m.len()], m.clone()).expect("len"));
            ckpt.push(format!("adam/v/{n}"), Tensor::new(&[v.len()], v.clone()).expect("len"));
        }
        let h = &mut ckpt.header;
        h.epoch = self.next_epoch;
        h.seed = self.seed;
        let meta = &mut h.metadata;
        meta.insert("mode".into(), self.mode.to_string());
        self.input.to_metadata(meta);
        meta.insert("adam_step".into(), self.adam.step.to_string());
        meta.insert("patience".into(), self.stopper.patience.to_string());
        meta.insert("min_delta".into(), format!("{:e}", self.stopper.min_delta));
        // Bit patterns keep the comparison state exact across reloads.
        meta.insert("best_val_loss_bits".into(), self.stopper.best.to_bits().to_string());
        meta.insert("best_val_loss".into(), self.stopper.best.to_string());
        meta.insert(
            "best_epoch".into(),
            self.stopper.best_epoch.map_or("none".into(), |e| e.to_string()),
        );
        meta.insert("bad_epochs".into(), self.stopper.bad_epochs.to_string());
        meta.insert("schedule_epoch".into(), self.next_epoch.to_string());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &CheckpointFile) -> Result<Self, TrainError> {
        let model = model_from_checkpoint(ckpt)?;
        let meta = &ckpt.header.metadata;
        let mode: Mode = meta
            .get("mode")
            .ok_or_else(|| TrainError::Checkpoint("metadata lacks mode".into()))?
            .parse()?;
        let input = InputSpec::from_metadata(meta)?;
        let mut adam = AdamState::new(&model.params().tensors().iter().map(Tensor::len).collect::<Vec<_>>());
        adam.step = meta_get(meta, "adam_step")?;
        for (i, n) in model.params().names().iter().enumerate() {
            let len = [adam.m[i].len()];
            let m = ckpt.require(&format!("adam/m/{n}"), &len)?;
            let v = ckpt.require(&format!("adam/v/{n}"), &len)?;
            adam.m[i] = m.data().to_vec();
            adam.v[i] = v.data().to_vec();
        }
        let best_epoch = match meta.get("best_epoch").map(String::as_str) {
            Some("none") | None => None,
            Some(e) => Some(e.parse().map_err(|_| TrainError::Checkpoint("bad best_epoch".into()))?),
        };
        let stopper = EarlyStopping {
            patience: meta_get(meta, "patience")?,
            min_delta: meta_get(meta, "min_delta")?,
            best: f64::from_bits(meta_get(meta, "best_val_loss_bits")?),
            best_epoch,
            bad_epochs: meta_get(meta, "bad_epochs")?,
        };
        Ok(Self {
            model,
            adam,
            next_epoch: ckpt.header.epoch,
            stopper,
            seed: ckpt.header.seed,
            mode,
            input,
        })
    }
}

/// Loads a trained model and its input recipe from a checkpoint file.
pub fn load_trained(path: &Path) -> Result<(CldNet, InputSpec, Mode), TrainError> {
    let ckpt = read_checkpoint(path)?;
    let state = TrainState::from_checkpoint(&ckpt)?;
    Ok((state.model, state.input, state.mode))
}

#[derive(Debug)]
pub struct FitResult {
    /// Model with the lowest validation loss.
    pub best: CldNet,
    pub best_checkpoint: CheckpointFile,
    /// State after the last epoch run.
    pub last: TrainState,
    pub epochs: Vec<EpochRecord>,
    pub batches: Vec<BatchRecord>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Fraction of labeled target pixels predicted correctly, as `(correct, labeled)`.
pub fn labeled_accuracy(pred: &[u8], targets: &[u8]) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for (&p, &t) in pred.iter().zip(targets) {
        if t != UNLABELED {
            total += 1;
            correct += usize::from(p == t);
        }
    }
    (correct, total)
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        f64::NAN
    }
}

struct Scenes<'a> {
    entries: Vec<ManifestEntry>,
    cache: Vec<Option<TileBatch>>,
    keep: bool,
    spec: &'a InputSpec,
    statics: Option<StaticGrids>,
    tile: usize,
}

impl<'a> Scenes<'a> {
    fn new(entries: Vec<ManifestEntry>, cfg: &TrainConfig, spec: &'a InputSpec, statics: Option<StaticGrids>) -> Self {
        Self {
            cache: vec![None; entries.len()],
            entries,
            keep: cfg.cache_features,
            spec,
            statics,
            tile: cfg.tile_size,
        }
    }

    fn get(&mut self, i: usize) -> Result<TileBatch, TrainError> {
        if let Some(b) = &self.cache[i] {
            return Ok(b.clone());
        }
        let e = &self.entries[i];
        let b = prepare_batch(e, self.spec, self.statics.as_ref(), self.tile)?;
        if self.keep {
            self.cache[i] = Some(b.clone());
        }
        Ok(b)
    }
}

fn prepare_batch(
    e: &ManifestEntry,
    spec: &InputSpec,
    statics: Option<&StaticGrids>,
    tile: usize,
) -> Result<TileBatch, TrainError> {
    let scene = load_scene(&e.scene)?;
    let labels = load_labels(&e.labels)?;
    scene.geometry.check_matches(&labels.geometry)?;
    let stack = spec.prepare(&scene, statics)?;
    tile_scene(&stack, &labels, tile)
}

/// Drops tiles without labeled pixels; they add nothing to the loss.
fn labeled_tiles(b: TileBatch) -> Option<TileBatch> {
    let [n, c, t, _] = b.input.dims4().expect("rank 4");
    let px = t * t;
    let keep: Vec<usize> = (0..n)
        .filter(|&i| b.targets[i * px..(i + 1) * px].iter().any(|&v| v != UNLABELED))
        .collect();
    if keep.is_empty() {
        return None;
    }
    if keep.len() == n {
        return Some(b);
    }
    let mut data = Vec::with_capacity(keep.len() * c * px);
    let mut targets = Vec::with_capacity(keep.len() * px);
    for &i in &keep {
        data.extend_from_slice(&b.input.data()[i * c * px..(i + 1) * c * px]);
        targets.extend_from_slice(&b.targets[i * px..(i + 1) * px]);
    }
    Some(TileBatch {
        input: Tensor::new(&[keep.len(), c, t, t], data).expect("sizes"),
        targets,
        tile_rows: 1,
        tile_cols: keep.len(),
        tile: t,
    })
}

fn train_step(state: &mut TrainState, batch: TileBatch, lr: f64) -> Result<(LossInfo, usize, usize), TrainError> {
    let tape = Tape::new(true);
    let vars = state.model.params().bind(&tape);
    let mut running = state.model.params().running().to_vec();
    let dims = batch.input.dims4()?;
    let x = tape.constant(batch.input);
    let out = state
        .model
        .forward(&tape, &vars, &mut running, &x, BatchNormMode::Train, None)?;
    drop(x);
    let (loss, info) = tape.masked_nll(&out.logits, &batch.targets, None)?;
    let pred = argmax_classes(out.logits.value().data(), [dims[0], state.model.config().num_classes, dims[2], dims[3]]);
    let (correct, total) = labeled_accuracy(&pred, &batch.targets);
    drop(out);
    if !info.loss.is_finite() {
        return Err(TrainError::Data("non-finite loss".into()));
    }
    let mut grads = tape.backward(&loss)?;
    let grads: Vec<Tensor<f32>> = vars
        .iter()
        .map(|v| grads.take(v).unwrap_or_else(|| Tensor::zeros(v.shape())))
        .collect();
    drop(vars);
    let names = state.model.params().names().to_vec();
    state
        .adam
        .update(state.model.params_mut().tensors_mut(), &grads, &names, lr)?;
    state.model.params_mut().running_mut().clone_from_slice(&running);
    Ok((info, correct, total))
}

/// Mean masked loss (pixel-weighted) and accuracy of `model` over scenes, in inference mode.
pub fn score_entries(
    model: &CldNet,
    spec: &InputSpec,
    entries: &[ManifestEntry],
    statics: Option<&StaticGrids>,
    tile: usize,
) -> Result<(f64, f64), TrainError> {
    let mut s = Scoring::default();
    for e in entries {
        s.add(model, prepare_batch(e, spec, statics, tile)?)?;
    }
    Ok(s.result())
}

#[derive(Default)]
struct Scoring {
    loss_sum: f64,
    counted: usize,
    correct: usize,
}

impl Scoring {
    fn add(&mut self, model: &CldNet, b: TileBatch) -> Result<(), TrainError> {
        let dims = b.input.dims4()?;
        let out = model.predict(b.input, None)?;
        let tape = Tape::inference();
        let (_, info) = tape.masked_nll(&out.logits, &b.targets, None)?;
        let pred = argmax_classes(out.logits.value().data(), [dims[0], model.config().num_classes, dims[2], dims[3]]);
        let (c, _) = labeled_accuracy(&pred, &b.targets);
        self.loss_sum += info.loss * info.counted as f64;
        self.counted += info.counted;
        self.correct += c;
        Ok(())
    }

    fn result(&self) -> (f64, f64) {
        (
            ratio(self.loss_sum, self.counted as f64),
            ratio(self.correct as f64, self.counted as f64),
        )
    }
}

/// Trains from scratch with early stopping; returns the best-validation model.
pub fn fit(config: &TrainConfig, manifest: &DatasetManifest) -> Result<FitResult, TrainError> {
    let state = TrainState::new(config)?;
    resume(config, manifest, state)
}

/// Continues training from `state` (a fresh state starts at epoch 0).
pub fn resume(config: &TrainConfig, manifest: &DatasetManifest, mut state: TrainState) -> Result<FitResult, TrainError> {
    config.validate()?;
    if state.model.config().in_channels != state.input.channels() {
        return Err(TrainError::Config("model and input recipe disagree on channels".into()));
    }
    let mut folds = split_into(manifest, config.folds, config.seed)?;
    let val_entries = folds.remove(config.validation_fold);
    let train_entries: Vec<ManifestEntry> = folds.into_iter().flatten().collect();
    let statics = match &config.static_dir {
        Some(d) => load_statics(d)?,
        None => None,
    };
    let spec = state.input.clone();
    let mut train = Scenes::new(train_entries, config, &spec, statics.clone());
    let mut val = Scenes::new(val_entries, config, &spec, statics);
    log::info!(
        "{} training scenes, {} validation scenes",
        train.entries.len(),
        val.entries.len()
    );

    let mut best_ckpt = state.to_checkpoint();
    let mut best = state.model.clone();
    let mut epochs = Vec::new();
    let mut batches = Vec::new();
    let mut stopped_early = false;
    let start = state.next_epoch;
    while state.next_epoch < config.max_epochs {
        let epoch = state.next_epoch;
        let lr = config.schedule.rate_at(epoch);
        let mut order: Vec<usize> = (0..train.entries.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(state.seed.wrapping_add(epoch as u64)));
        let (mut loss_sum, mut counted, mut correct) = (0.0, 0usize, 0usize);
        for (bi, &i) in order.iter().enumerate() {
            let scene = train.entries[i].scene.display().to_string();
            let Some(batch) = labeled_tiles(train.get(i)?) else {
                log::warn!("{scene}: no labeled pixels, skipped");
                continue;
            };
            let (info, c, n) = match train_step(&mut state, batch, lr) {
                Ok(r) => r,
                Err(TrainError::Data(m)) if m == "non-finite loss" => {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: bi,
                        last_good: (epoch > start).then(|| Box::new(best.clone())),
                    })
                }
                Err(e) => return Err(e),
            };
            let acc = ratio(c as f64, n as f64);
            log::debug!("epoch {epoch} batch {bi} {scene}: loss {:.5} accuracy {acc:.4}", info.loss);
            batches.push(BatchRecord {
                epoch,
                batch: bi,
                scene,
                loss: info.loss,
                accuracy: acc,
            });
            loss_sum += info.loss * info.counted as f64;
            counted += info.counted;
            correct += c;
        }
        let mut s = Scoring::default();
        for i in 0..val.entries.len() {
            s.add(&state.model, val.get(i)?)?;
        }
        let (val_loss, val_accuracy) = s.result();
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: ratio(loss_sum, counted as f64),
            train_accuracy: ratio(correct as f64, counted as f64),
            val_loss,
            val_accuracy,
        };
        log::info!("{record}");
        epochs.push(record);
        state.next_epoch += 1;
        let decision = state.stopper.observe(epoch, val_loss);
        if decision == StopDecision::Improved {
            best = state.model.clone();
            best_ckpt = state.to_checkpoint();
            if let Some(p) = &config.checkpoint_path {
                write_checkpoint(p, &best_ckpt)?;
            }
        }
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    let epochs_run = state.next_epoch - start;
    Ok(FitResult {
        best,
        best_checkpoint: best_ckpt,
        last: state,
        epochs,
        batches,
        epochs_run,
        stopped_early,
    })
}
