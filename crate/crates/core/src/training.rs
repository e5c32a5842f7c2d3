//! Training loop: random segment batches with gain augmentation, MSE loss,
//! Adam, early stopping on validation loss and a fine-tuning phase.
//!
//! Epoch 0 is the untrained model's validation loss. Each phase then runs
//! until `patience` consecutive epochs fail to improve on the phase's best
//! validation loss (or `max_epochs` is reached). Fine-tuning restarts from
//! the best weights of the main phase with its own learning rate and batch
//! size. The returned checkpoint is the lowest validation loss seen.

use std::fmt;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetSplits, Track};
use crate::kv::KvMap;
use crate::model::{count_params, fit_lengths, largest_input_within, Model, ModelConfig, ParamSet};
use crate::tensor::{center_crop, mse_loss, FeatureMap};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Requested input segment length in samples; the largest admissible
    /// model input not exceeding it is used.
    pub segment_len: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub fine_tune: bool,
    pub fine_tune_lr: f64,
    pub fine_tune_batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub gain_lo: f64,
    pub gain_hi: f64,
    pub seed: u64,
    /// Hard cap on epochs per phase.
    pub max_epochs: usize,
    /// Batches per epoch; `None` derives it from the training-set size.
    pub batches_per_epoch: Option<usize>,
    /// Fixed validation crops drawn per validation track.
    pub val_crops_per_track: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            segment_len: 147_443,
            batch_size: 16,
            learning_rate: 1e-4,
            fine_tune: true,
            fine_tune_lr: 1e-5,
            fine_tune_batch: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 20,
            gain_lo: 0.7,
            gain_hi: 1.0,
            seed: 0,
            max_epochs: 10_000,
            batches_per_epoch: None,
            val_crops_per_track: 4,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 16] = [
        "segment_len",
        "batch_size",
        "learning_rate",
        "fine_tune",
        "fine_tune_lr",
        "fine_tune_batch",
        "beta1",
        "beta2",
        "epsilon",
        "patience",
        "gain_lo",
        "gain_hi",
        "seed",
        "max_epochs",
        "batches_per_epoch",
        "val_crops_per_track",
    ];

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("segment_len", self.segment_len),
            ("batch_size", self.batch_size),
            ("fine_tune_batch", self.fine_tune_batch),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("val_crops_per_track", self.val_crops_per_track),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be at least 1")));
        }
        if self.batches_per_epoch == Some(0) {
            return Err(Error::config("batches_per_epoch must be at least 1"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("fine_tune_lr", self.fine_tune_lr),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.gain_lo > 0.0 && self.gain_lo <= self.gain_hi && self.gain_hi.is_finite()) {
            return Err(Error::config(format!(
                "gain range must satisfy 0 < lo <= hi, got [{}, {}]",
                self.gain_lo, self.gain_hi
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KvMap) {
        kv.set("segment_len", self.segment_len);
        kv.set("batch_size", self.batch_size);
        kv.set("learning_rate", self.learning_rate);
        kv.set("fine_tune", self.fine_tune);
        kv.set("fine_tune_lr", self.fine_tune_lr);
        kv.set("fine_tune_batch", self.fine_tune_batch);
        kv.set("beta1", self.beta1);
        kv.set("beta2", self.beta2);
        kv.set("epsilon", self.epsilon);
        kv.set("patience", self.patience);
        kv.set("gain_lo", self.gain_lo);
        kv.set("gain_hi", self.gain_hi);
        kv.set("seed", self.seed);
        kv.set("max_epochs", self.max_epochs);
        kv.set("batches_per_epoch", self.batches_per_epoch.unwrap_or(0));
        kv.set("val_crops_per_track", self.val_crops_per_track);
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = Self::default();
        let batches: usize = kv.get_or("batches_per_epoch", 0)?;
        let cfg = Self {
            segment_len: kv.get_or("segment_len", d.segment_len)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            fine_tune: kv.get_or("fine_tune", d.fine_tune)?,
            fine_tune_lr: kv.get_or("fine_tune_lr", d.fine_tune_lr)?,
            fine_tune_batch: kv.get_or("fine_tune_batch", d.fine_tune_batch)?,
            beta1: kv.get_or("beta1", d.beta1)?,
            beta2: kv.get_or("beta2", d.beta2)?,
            epsilon: kv.get_or("epsilon", d.epsilon)?,
            patience: kv.get_or("patience", d.patience)?,
            gain_lo: kv.get_or("gain_lo", d.gain_lo)?,
            gain_hi: kv.get_or("gain_hi", d.gain_hi)?,
            seed: kv.get_or("seed", d.seed)?,
            max_epochs: kv.get_or("max_epochs", d.max_epochs)?,
            batches_per_epoch: (batches > 0).then_some(batches),
            val_crops_per_track: kv.get_or("val_crops_per_track", d.val_crops_per_track)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `(input_len, output_len)` used for training: the largest admissible input
/// within `segment_len`, shrunk to the smallest input giving the same output.
pub fn training_lengths(model: &ModelConfig, segment_len: usize) -> Result<(usize, usize)> {
    let (_, out) = largest_input_within(model, segment_len)?;
    fit_lengths(model, out)
}

/// Training examples: mixture inputs and per-source targets cropped to the
/// model output.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub mixtures: Vec<FeatureMap>,
    pub targets: Vec<Vec<FeatureMap>>,
}

/// Tracks long enough for `input_len`; the rest are dropped with a warning.
pub fn usable_tracks(tracks: &[Track], input_len: usize) -> Vec<&Track> {
    tracks
        .iter()
        .filter(|t| {
            let ok = t.len() >= input_len;
            if !ok {
                log::warn!(
                    "skipping track `{}`: {} samples, need {input_len}",
                    t.name,
                    t.len()
                );
            }
            ok
        })
        .collect()
}

/// Draws `batch_size` random crops. Each source gets an independent gain
/// from `[gain_lo, gain_hi]` and the mixture is rebuilt as the gained sum.
pub fn sample_batch<R: Rng>(
    tracks: &[&Track],
    lengths: (usize, usize),
    batch_size: usize,
    gain: (f64, f64),
    rng: &mut R,
) -> Result<Batch> {
    let (input_len, output_len) = lengths;
    if tracks.is_empty() {
        return Err(Error::invalid("cannot sample from an empty dataset"));
    }
    let mut mixtures = Vec::with_capacity(batch_size);
    let mut targets = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let track = tracks[rng.gen_range(0..tracks.len())];
        if track.len() < input_len {
            return Err(Error::invalid(format!(
                "track `{}` has {} samples, need {input_len}",
                track.name,
                track.len()
            )));
        }
        let start = rng.gen_range(0..=track.len() - input_len);
        let mut mixture: Option<FeatureMap> = None;
        let mut per_source = Vec::with_capacity(track.num_sources());
        for source in &track.sources {
            let g = rng.gen_range(gain.0..=gain.1);
            let crop = source.slice_time(start, input_len)?.scale(g);
            match &mut mixture {
                None => mixture = Some(crop.clone()),
                Some(m) => m.add_assign(&crop)?,
            }
            per_source.push(center_crop(&crop, output_len)?);
        }
        mixtures.push(mixture.expect("tracks have at least one source"));
        targets.push(per_source);
    }
    Ok(Batch { mixtures, targets })
}

/// Adam moment estimates and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    h: AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(Error::invalid(format!(
            "adam_step: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {i} is {}",
            grads[i]
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= h.lr * m_hat / (v_hat.sqrt() + h.epsilon);
    }
    Ok(())
}

/// Patience-based stopping rule within one phase.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Records one validation loss; returns `true` when training should stop.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Main,
    FineTune,
}

impl Phase {
    fn code(self) -> u8 {
        match self {
            Phase::Main => 0,
            Phase::FineTune => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Phase::Main),
            1 => Some(Phase::FineTune),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Main => "main",
            Phase::FineTune => "finetune",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// `None` for epoch 0, which only evaluates.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

pub fn loss_curve_csv(curve: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,phase,train_loss,val_loss\n");
    for r in curve {
        let train = r.train_loss.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.phase, train, r.val_loss
        ));
    }
    out
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"DWTSEPCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Serialized training state. Weights and Adam moments are stored as `f32`
/// in [`ModelConfig::layer_shapes`] order, weights before bias per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub weights: Vec<f32>,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
    pub adam_step: u64,
    pub epoch: u64,
    pub phase: Phase,
    pub best_val_loss: f64,
}

impl Checkpoint {
    pub fn capture(
        model: &Model,
        adam: &AdamState,
        train_config: &TrainConfig,
        epoch: usize,
        phase: Phase,
        best_val_loss: f64,
    ) -> Self {
        let narrow = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        Self {
            model_config: model.config().clone(),
            train_config: train_config.clone(),
            weights: narrow(&model.params().to_flat()),
            adam_m: narrow(&adam.m),
            adam_v: narrow(&adam.v),
            adam_step: adam.step,
            epoch: epoch as u64,
            phase,
            best_val_loss,
        }
    }

    pub fn model(&self) -> Result<Model> {
        let mut params = ParamSet::zeros(&self.model_config)?;
        let flat: Vec<f64> = self.weights.iter().map(|&v| f64::from(v)).collect();
        params.assign_flat(&flat)?;
        Model::from_params(&self.model_config, params)
    }

    pub fn adam_state(&self) -> AdamState {
        let widen = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<f64>>();
        AdamState {
            m: widen(&self.adam_m),
            v: widen(&self.adam_v),
            step: self.adam_step,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut kv = KvMap::new();
        self.model_config.to_kv(&mut kv);
        self.train_config.to_kv(&mut kv);
        let header = kv.to_text();
        let mut out = Vec::with_capacity(64 + header.len() + 12 * self.weights.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.push(self.phase.code());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.best_val_loss.to_le_bytes());
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for block in [&self.weights, &self.adam_m, &self.adam_v] {
            for v in block.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::invalid("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header_len = r.u32()? as usize;
        let header = std::str::from_utf8(r.take(header_len)?)
            .map_err(|_| Error::invalid("checkpoint header is not UTF-8"))?;
        let kv = KvMap::parse(header)?;
        let model_config = ModelConfig::from_kv(&kv)?;
        let train_config = TrainConfig::from_kv(&kv)?;
        let phase = Phase::from_code(r.take(1)?[0])
            .ok_or_else(|| Error::invalid("checkpoint has an unknown phase code"))?;
        let epoch = r.u64()?;
        let best_val_loss = f64::from_le_bytes(r.array()?);
        let adam_step = r.u64()?;
        let n = r.u64()? as usize;
        let expected = count_params(&model_config);
        if n != expected {
            return Err(Error::invalid(format!(
                "checkpoint stores {n} weights, configuration needs {expected}"
            )));
        }
        let mut block =
            || -> Result<Vec<f32>> { (0..n).map(|_| Ok(f32::from_le_bytes(r.array()?))).collect() };
        let weights = block()?;
        let adam_m = block()?;
        let adam_v = block()?;
        if r.pos != bytes.len() {
            return Err(Error::invalid("trailing bytes after checkpoint payload"));
        }
        Ok(Self {
            model_config,
            train_config,
            weights,
            adam_m,
            adam_v,
            adam_step,
            epoch,
            phase,
            best_val_loss,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::invalid("checkpoint is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice has length N"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

const VALIDATION_STREAM: u64 = 0;

/// Mixture / target pairs for validation.
type ValidationSet = Vec<(FeatureMap, Vec<FeatureMap>)>;

/// Training state for one model: weights, optimizer, data and history.
pub struct Trainer {
    model: Model,
    adam: AdamState,
    cfg: TrainConfig,
    lengths: (usize, usize),
    train: Vec<Track>,
    validation: ValidationSet,
    epoch: usize,
    curve: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(model: Model, splits: &DatasetSplits, cfg: &TrainConfig) -> Result<Self> {
        let adam = AdamState::new(model.params().num_scalars());
        Self::with_state(model, adam, splits, cfg, 0)
    }

    /// Resumes from a checkpoint; the next epoch is `checkpoint.epoch + 1`.
    pub fn from_checkpoint(ckpt: &Checkpoint, splits: &DatasetSplits) -> Result<Self> {
        Self::with_state(
            ckpt.model()?,
            ckpt.adam_state(),
            splits,
            &ckpt.train_config,
            ckpt.epoch as usize,
        )
    }

    fn with_state(
        model: Model,
        adam: AdamState,
        splits: &DatasetSplits,
        cfg: &TrainConfig,
        epoch: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let mcfg = model.config();
        let lengths = training_lengths(mcfg, cfg.segment_len)?;
        let check = |t: &Track| -> Result<()> {
            if t.channels() != mcfg.input_channels || t.num_sources() != mcfg.num_sources {
                return Err(Error::config(format!(
                    "track `{}` has {} channel(s) and {} source(s); model expects {} and {}",
                    t.name,
                    t.channels(),
                    t.num_sources(),
                    mcfg.input_channels,
                    mcfg.num_sources
                )));
            }
            Ok(())
        };
        splits
            .train
            .iter()
            .chain(&splits.validation)
            .try_for_each(check)?;
        let train: Vec<Track> = usable_tracks(&splits.train, lengths.0)
            .into_iter()
            .cloned()
            .collect();
        if train.is_empty() {
            return Err(Error::invalid(format!(
                "no training track has the {} samples a segment needs",
                lengths.0
            )));
        }
        let val_tracks = usable_tracks(&splits.validation, lengths.0);
        if val_tracks.is_empty() {
            return Err(Error::invalid(format!(
                "no validation track has the {} samples a segment needs",
                lengths.0
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(VALIDATION_STREAM);
        let mut validation = Vec::new();
        for track in val_tracks {
            for _ in 0..cfg.val_crops_per_track {
                let start = rng.gen_range(0..=track.len() - lengths.0);
                let mixture = track.mixture.slice_time(start, lengths.0)?;
                let targets = track
                    .sources
                    .iter()
                    .map(|s| center_crop(&s.slice_time(start, lengths.0)?, lengths.1))
                    .collect::<Result<Vec<_>>>()?;
                validation.push((mixture, targets));
            }
        }
        Ok(Self {
            model,
            adam,
            cfg: cfg.clone(),
            lengths,
            train,
            validation,
            epoch,
            curve: Vec::new(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn lengths(&self) -> (usize, usize) {
        self.lengths
    }

    pub fn curve(&self) -> &[EpochRecord] {
        &self.curve
    }

    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.cfg.batches_per_epoch.unwrap_or_else(|| {
            let total: usize = self.train.iter().map(Track::len).sum();
            total.div_ceil(batch_size * self.lengths.0).max(1)
        })
    }

    /// MSE over the fixed validation crops, without augmentation.
    pub fn validation_loss(&self) -> Result<f64> {
        let mut total = 0.0;
        for (mixture, targets) in &self.validation {
            let est = self.model.separate(mixture)?;
            total += mse_loss(&est, targets)?.0;
        }
        let loss = total / self.validation.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss is {loss}")));
        }
        Ok(loss)
    }

    /// Loss and summed parameter gradient of one batch.
    fn batch_gradient(&self, batch: &Batch) -> Result<(f64, ParamSet)> {
        let b = batch.mixtures.len() as f64;
        let mut grad = ParamSet::zeros(self.model.config())?;
        let mut loss = 0.0;
        for (mixture, targets) in batch.mixtures.iter().zip(&batch.targets) {
            let (est, cache) = self.model.forward(mixture)?;
            let (l, mut g) = mse_loss(&est, targets)?;
            for gi in &mut g {
                *gi = gi.scale(1.0 / b);
            }
            loss += l / b;
            grad.add_assign(&self.model.backward(&cache, &g)?)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss is {loss}")));
        }
        Ok((loss, grad))
    }

    /// Runs one epoch of `phase` and records its losses.
    pub fn run_epoch(&mut self, phase: Phase) -> Result<EpochRecord> {
        let (lr, batch_size) = match phase {
            Phase::Main => (self.cfg.learning_rate, self.cfg.batch_size),
            Phase::FineTune => (self.cfg.fine_tune_lr, self.cfg.fine_tune_batch),
        };
        let hyper = AdamHyper {
            lr,
            beta1: self.cfg.beta1,
            beta2: self.cfg.beta2,
            epsilon: self.cfg.epsilon,
        };
        let epoch = self.epoch + 1;
        let mut rng = epoch_rng(self.cfg.seed, epoch);
        let tracks: Vec<&Track> = self.train.iter().collect();
        let batches = self.batches_per_epoch(batch_size);
        let mut train_loss = 0.0;
        for _ in 0..batches {
            let batch = sample_batch(
                &tracks,
                self.lengths,
                batch_size,
                (self.cfg.gain_lo, self.cfg.gain_hi),
                &mut rng,
            )?;
            let (loss, grad) = self.batch_gradient(&batch)?;
            train_loss += loss;
            let mut flat = self.model.params().to_flat();
            adam_step(&mut flat, &grad.to_flat(), &mut self.adam, hyper)?;
            self.model.params_mut().assign_flat(&flat)?;
        }
        let val_loss = self.validation_loss()?;
        self.epoch = epoch;
        let record = EpochRecord {
            epoch,
            phase,
            train_loss: Some(train_loss / batches as f64),
            val_loss,
        };
        log::info!(
            "epoch {epoch} ({phase}): train {:.6e} val {val_loss:.6e}",
            train_loss / batches as f64
        );
        self.curve.push(record.clone());
        Ok(record)
    }

    pub fn checkpoint(&self, phase: Phase, best_val_loss: f64) -> Checkpoint {
        Checkpoint::capture(
            &self.model,
            &self.adam,
            &self.cfg,
            self.epoch,
            phase,
            best_val_loss,
        )
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest-validation-loss state seen in either phase.
    pub best: Checkpoint,
    pub curve: Vec<EpochRecord>,
    /// Set when training stopped on a non-finite loss or gradient; `best`
    /// is then the last good checkpoint.
    pub aborted: Option<String>,
}

struct Snapshot {
    model: Model,
    adam: AdamState,
    epoch: usize,
    phase: Phase,
    val_loss: f64,
}

/// Two-phase training with early stopping.
pub fn train(model: Model, splits: &DatasetSplits, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model, splits, cfg)?;
    let initial = trainer.validation_loss()?;
    let mut curve = vec![EpochRecord {
        epoch: 0,
        phase: Phase::Main,
        train_loss: None,
        val_loss: initial,
    }];
    let mut best = Snapshot {
        model: trainer.model.clone(),
        adam: trainer.adam.clone(),
        epoch: 0,
        phase: Phase::Main,
        val_loss: initial,
    };

    let mut phases = vec![Phase::Main];
    if cfg.fine_tune {
        phases.push(Phase::FineTune);
    }
    let mut aborted = None;
    'phases: for phase in phases {
        if phase == Phase::FineTune {
            trainer.model = best.model.clone();
            trainer.adam = best.adam.clone();
        }
        let mut stopper = EarlyStopping::new(cfg.patience);
        for _ in 0..cfg.max_epochs {
            let record = match trainer.run_epoch(phase) {
                Ok(r) => r,
                Err(e @ Error::NonFinite(_)) => {
                    log::error!("training diverged at epoch {}: {e}", trainer.epoch + 1);
                    aborted = Some(e.to_string());
                    break 'phases;
                }
                Err(e) => return Err(e),
            };
            curve.push(record.clone());
            if record.val_loss < best.val_loss {
                best = Snapshot {
                    model: trainer.model.clone(),
                    adam: trainer.adam.clone(),
                    epoch: record.epoch,
                    phase,
                    val_loss: record.val_loss,
                };
            }
            if stopper.observe(record.val_loss) {
                break;
            }
        }
    }
    let best = Checkpoint::capture(
        &best.model,
        &best.adam,
        cfg,
        best.epoch,
        best.phase,
        best.val_loss,
    );
    Ok(TrainOutcome {
        best,
        curve,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_rule() {
        let mut s = EarlyStopping::new(1);
        assert!(!s.observe(1.0));
        assert!(s.observe(1.0));
        let mut s = EarlyStopping::new(3);
        assert!(!s.observe(5.0));
        assert!(!s.observe(4.0));
        assert!(!s.observe(4.5));
        assert!(!s.observe(4.0));
        assert!(s.observe(4.2));
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![0.3, -1.2];
        let mut st = AdamState::new(2);
        let h = AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        adam_step(&mut p, &[0.0, 0.0], &mut st, h).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        let h = AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut st, h),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn train_config_defaults_and_kv() {
        let d = TrainConfig::default();
        assert_eq!((d.segment_len, d.batch_size, d.patience), (147_443, 16, 20));
        assert_eq!(
            (d.learning_rate, d.fine_tune_lr, d.fine_tune_batch),
            (1e-4, 1e-5, 32)
        );
        assert_eq!((d.beta1, d.beta2, d.epsilon), (0.9, 0.999, 1e-8));
        assert_eq!((d.gain_lo, d.gain_hi), (0.7, 1.0));
        let mut kv = KvMap::new();
        d.to_kv(&mut kv);
        assert_eq!(TrainConfig::from_kv(&kv).unwrap(), d);
        let bad = TrainConfig { gain_lo: 1.2, ..d };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn curve_csv_format() {
        let csv = loss_curve_csv(&[
            EpochRecord {
                epoch: 0,
                phase: Phase::Main,
                train_loss: None,
                val_loss: 0.5,
            },
            EpochRecord {
                epoch: 1,
                phase: Phase::FineTune,
                train_loss: Some(0.25),
                val_loss: 0.125,
            },
        ]);
        assert_eq!(
            csv,
            "epoch,phase,train_loss,val_loss\n0,main,,0.5\n1,finetune,0.25,0.125\n"
        );
    }
}
