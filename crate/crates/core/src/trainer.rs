//! Training loop, evaluation, checkpointing, feature export, and the
//! ablation switchboard.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::backbone::{Backbone, BackboneConfig, Mode};
use crate::data::{DataError, SkeletonGraph, SkeletonSequence};
use crate::losses::{
    cross_entropy, feature_consistency_loss, feature_redundancy_loss, total_loss, LossConfig,
    LossError,
};
use crate::optim::{LrSchedule, Sgd, SgdConfig};
use crate::sf_head::{HeadFlags, SfHead, SfHeadConfig};
use crate::tensor::{Element, Tensor};

pub const CKPT_MAGIC: &[u8; 4] = b"SFCK";
pub const HEAD_PREFIX: &str = "sfhead/";

// Deterministic, non-overlapping RNG streams derived from one run seed.
const STREAM_BACKBONE_INIT: u64 = 1;
const STREAM_HEAD_INIT: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;
const STREAM_DROPOUT: u64 = 5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint is corrupt: {0}")]
    BadCheckpoint(String),
    #[error("checkpoint entry '{name}' has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },
    #[error("checkpoint is missing required entry '{0}'")]
    MissingEntry(String),
    #[error("dataset has {found} classes, model was built for {expected}")]
    ClassCountMismatch { found: usize, expected: usize },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub final_lr: f64,
    pub warmup_epochs: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Gated spatial/temporal extraction.
    pub sste: bool,
    /// Adaptive aggregation (attention gates) in the head.
    pub acfa: bool,
    /// The two auxiliary loss terms; off forces both lambdas to zero.
    pub frcl: bool,
    pub acda: bool,
    pub atda: bool,
    pub asda: bool,
}

impl TrainConfig {
    /// Desk-scale recipe: 30 epochs, batch 32.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            base_lr: 0.1,
            final_lr: 0.0001,
            warmup_epochs: 5.0,
            momentum: 0.9,
            weight_decay: 0.0004,
            seed,
            sste: true,
            acfa: true,
            frcl: true,
            acda: true,
            atda: true,
            asda: true,
        }
    }

    /// Full-scale recipe: 90 epochs, batch 64.
    pub fn paper(seed: u64) -> Self {
        TrainConfig { epochs: 90, batch_size: 64, ..Self::desk(seed) }
    }

    pub fn head_flags(&self) -> HeadFlags {
        HeadFlags {
            sste: self.sste,
            acfa: self.acfa,
            acda: self.acda,
            atda: self.atda,
            asda: self.asda,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.base_lr, self.final_lr, self.warmup_epochs, self.epochs as f64)
    }
}

/// Backbone plus auxiliary head, initialized from independent streams of one
/// seed so ablations that skip the head leave the backbone's draw untouched.
pub struct Model<T: Element> {
    pub backbone: Backbone<T>,
    pub head: SfHead<T>,
}

impl<T: Element> Model<T> {
    pub fn new(
        bb_cfg: BackboneConfig,
        head_cfg: SfHeadConfig,
        graph: &SkeletonGraph,
        seed: u64,
    ) -> Self {
        let mut bb_rng = ChaCha8Rng::seed_from_u64(seed);
        bb_rng.set_stream(STREAM_BACKBONE_INIT);
        let block_channels = bb_cfg.block_channels.clone();
        let backbone = Backbone::new(bb_cfg, graph, &mut bb_rng);
        let mut head_rng = ChaCha8Rng::seed_from_u64(seed);
        head_rng.set_stream(STREAM_HEAD_INIT);
        let head = SfHead::new(head_cfg, &block_channels, &mut head_rng);
        Model { backbone, head }
    }

    /// All trainable parameters; head entries carry the serialization prefix.
    pub fn params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = self.backbone.params();
        for (name, p) in self.head.params() {
            out.push((format!("{HEAD_PREFIX}{name}"), p));
        }
        out
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub ce: f64,
    pub con: f64,
    pub red: f64,
    pub total: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub class_names: Vec<String>,
    pub per_class: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    pub fn from_predictions(preds: &[u32], labels: &[u32], class_names: &[String]) -> Self {
        assert_eq!(preds.len(), labels.len());
        let z = class_names.len();
        let mut confusion = vec![vec![0usize; z]; z];
        for (&p, &l) in preds.iter().zip(labels) {
            confusion[l as usize][p as usize] += 1;
        }
        let per_class: Vec<f64> = (0..z)
            .map(|c| {
                let total: usize = confusion[c].iter().sum();
                if total == 0 {
                    0.0
                } else {
                    100.0 * confusion[c][c] as f64 / total as f64
                }
            })
            .collect();
        let correct: usize = (0..z).map(|c| confusion[c][c]).sum();
        let accuracy = if preds.is_empty() {
            0.0
        } else {
            100.0 * correct as f64 / preds.len() as f64
        };
        MetricsReport { accuracy, class_names: class_names.to_vec(), per_class, confusion }
    }

    pub fn render(&self) -> String {
        let mut out = format!("overall accuracy: {:.2}%\n", self.accuracy);
        for (name, acc) in self.class_names.iter().zip(&self.per_class) {
            out.push_str(&format!("  {name:<16} {acc:.2}%\n"));
        }
        out.push_str("confusion (rows = truth):\n");
        for row in &self.confusion {
            out.push_str("  ");
            for v in row {
                out.push_str(&format!("{v:>5}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Ambiguous groups are consecutive class pairs (0,1), (2,3), …; the delta
/// is this run's mean group accuracy minus the baseline's.
pub fn group_deltas(report: &MetricsReport, baseline: &MetricsReport) -> Vec<(String, f64)> {
    assert_eq!(
        report.class_names, baseline.class_names,
        "group comparison requires identical class sets"
    );
    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < report.per_class.len() {
        let ours = 0.5 * (report.per_class[i] + report.per_class[i + 1]);
        let theirs = 0.5 * (baseline.per_class[i] + baseline.per_class[i + 1]);
        out.push((
            format!("{}/{}", report.class_names[i], report.class_names[i + 1]),
            ours - theirs,
        ));
        i += 2;
    }
    out
}

/// Deterministic stratified split: per class, a seeded shuffle, then the
/// first `train_frac` of each class goes to the training set.
pub fn stratified_split(labels: &[u32], train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!(train_frac > 0.0 && train_frac < 1.0);
    let max_label = labels.iter().copied().max().map(|m| m as usize + 1).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SPLIT);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..max_label {
        let mut idx: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] as usize == class).collect();
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let n_train = ((idx.len() as f64) * train_frac).round() as usize;
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn argmax(values: &[f32]) -> u32 {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best as u32
}

/// Classify every sequence on the inference path (eval mode, no taps, head
/// detached).
pub fn evaluate(
    backbone: &Backbone<f32>,
    sequences: &[SkeletonSequence],
    indices: &[usize],
    class_names: &[String],
) -> Result<MetricsReport, TrainError> {
    if class_names.len() != backbone.config.num_classes {
        return Err(TrainError::ClassCountMismatch {
            found: class_names.len(),
            expected: backbone.config.num_classes,
        });
    }
    let mut unused_rng = ChaCha8Rng::seed_from_u64(0);
    let mut preds = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let x = sequences[i].to_tensor::<f32>();
        let (logits, _) = backbone.forward(&x, Mode::Eval, &[], &mut unused_rng);
        preds.push(argmax(&logits.to_vec()));
        labels.push(sequences[i].label);
    }
    Ok(MetricsReport::from_predictions(&preds, &labels, class_names))
}

struct BatchLoss {
    ce: f64,
    con: f64,
    red: f64,
    total: f64,
    correct: usize,
}

/// Forward/backward over one batch; returns scalar loss components and the
/// number of correct training predictions. Gradients are left populated for
/// the caller's optimizer step.
fn batch_forward_backward(
    model: &Model<f32>,
    sequences: &[SkeletonSequence],
    batch: &[usize],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<BatchLoss, TrainError> {
    let flags = cfg.head_flags();
    let effective_loss = if cfg.frcl {
        loss_cfg.clone()
    } else {
        LossConfig { lambda_con: 0.0, lambda_red: 0.0, ..loss_cfg.clone() }
    };
    let aux_active = effective_loss.lambda_con != 0.0 || effective_loss.lambda_red != 0.0;
    let attach = &model.head.config.attach_blocks;
    let taps_requested: &[usize] = if aux_active { attach } else { &[] };

    let mut logits = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    // bundles_per_attach[a][sample] = per-group feature bundles at attach point a.
    let mut bundles_per_attach: Vec<Vec<Vec<crate::sf_head::SfFeatures<f32>>>> =
        (0..attach.len()).map(|_| Vec::new()).collect();
    let mut fs_per_attach: Vec<Vec<Tensor<f32>>> = vec![Vec::new(); attach.len()];
    let mut ft_per_attach: Vec<Vec<Tensor<f32>>> = vec![Vec::new(); attach.len()];

    for &i in batch {
        let x = sequences[i].to_tensor::<f32>();
        let (l, taps) = model.backbone.forward(&x, Mode::Train, taps_requested, dropout_rng);
        logits.push(l);
        labels.push(sequences[i].label);
        for (a, tap) in taps.iter().enumerate() {
            let bundles = model.head.forward(tap.block, &tap.feature, flags, true);
            let g = bundles.len() as f64;
            let n = bundles[0].f_s.len();
            let mean_over_groups = |pick: &dyn Fn(&crate::sf_head::SfFeatures<f32>) -> Tensor<f32>| {
                let mut acc = pick(&bundles[0]).reshape(&[n]);
                for b in &bundles[1..] {
                    acc = acc.add(&pick(b).reshape(&[n]));
                }
                acc.mul_scalar(1.0 / g as f32)
            };
            fs_per_attach[a].push(mean_over_groups(&|b| b.f_s.clone()));
            ft_per_attach[a].push(mean_over_groups(&|b| b.f_t.clone()));
            bundles_per_attach[a].push(bundles);
        }
    }

    let ce = cross_entropy(&logits, &labels)?;
    let (con, red) = if aux_active {
        let scale = 1.0 / attach.len() as f32;
        let mut con_acc = Tensor::<f32>::scalar(0.0);
        let mut red_acc = Tensor::<f32>::scalar(0.0);
        for a in 0..attach.len() {
            con_acc = con_acc.add(&feature_consistency_loss(&bundles_per_attach[a], &effective_loss)?);
            red_acc = red_acc
                .add(&feature_redundancy_loss(&fs_per_attach[a], &ft_per_attach[a], &effective_loss)?);
        }
        (con_acc.mul_scalar(scale), red_acc.mul_scalar(scale))
    } else {
        (Tensor::scalar(0.0), Tensor::scalar(0.0))
    };

    let breakdown = total_loss(ce, con, red, &effective_loss)?;
    let (ce_v, con_v, red_v, total_v) = breakdown.values();
    breakdown.total.backward();

    let correct = logits
        .iter()
        .zip(&labels)
        .filter(|(l, &y)| argmax(&l.to_vec()) == y)
        .count();
    Ok(BatchLoss { ce: ce_v, con: con_v, red: red_v, total: total_v, correct })
}

pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl TrainOutcome {
    pub fn final_val_acc(&self) -> f64 {
        self.metrics.last().map(|m| m.val_acc).unwrap_or(0.0)
    }
}

/// Full training run: stratified 80/20 split, per-batch cosine schedule with
/// warmup, SGD with momentum and coupled weight decay. Writes one JSON line
/// per epoch to `metrics_out` when given.
pub fn train(
    model: &Model<f32>,
    sequences: &[SkeletonSequence],
    class_names: &[String],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    mut metrics_out: Option<&mut dyn Write>,
) -> Result<TrainOutcome, TrainError> {
    assert!(!sequences.is_empty(), "dataset is empty");
    let labels: Vec<u32> = sequences.iter().map(|s| s.label).collect();
    let (train_idx, val_idx) = stratified_split(&labels, 0.8, cfg.seed);
    let schedule = cfg.schedule();
    let params = model.params();
    let mut opt = Sgd::new(
        SgdConfig { momentum: cfg.momentum, weight_decay: cfg.weight_decay },
        &params,
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(STREAM_SHUFFLE);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(STREAM_DROPOUT);

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.clone();
    let batches_per_epoch = order.len().div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let (mut ce_s, mut con_s, mut red_s, mut total_s) = (0.0, 0.0, 0.0, 0.0);
        let mut correct = 0usize;
        let mut lr = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let epoch_f = epoch as f64 + b as f64 / batches_per_epoch as f64;
            lr = schedule.lr_at(epoch_f);
            opt.zero_grad(&params);
            let bl = batch_forward_backward(model, sequences, batch, cfg, loss_cfg, &mut dropout_rng)?;
            opt.step(&params, lr);
            let w = batch.len() as f64 / order.len() as f64;
            ce_s += bl.ce * w;
            con_s += bl.con * w;
            red_s += bl.red * w;
            total_s += bl.total * w;
            correct += bl.correct;
        }
        let train_acc = 100.0 * correct as f64 / order.len() as f64;
        let val_report = evaluate(&model.backbone, sequences, &val_idx, class_names)?;
        let m = EpochMetrics {
            epoch,
            lr,
            ce: ce_s,
            con: con_s,
            red: red_s,
            total: total_s,
            train_acc,
            val_acc: val_report.accuracy,
        };
        if let Some(out) = metrics_out.as_deref_mut() {
            writeln!(out, "{}", serde_json::to_string(&m)?)?;
        }
        metrics.push(m);
    }
    Ok(TrainOutcome { metrics, train_indices: train_idx, val_indices: val_idx })
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, u32 little-endian JSON length, JSON manifest
// (entry names, shapes, offsets), then all values as f32 little-endian in
// entry order. Head entries live under the "sfhead/" prefix; a file without
// them loads as backbone-only.
// ---------------------------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
struct CkptEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CkptManifest {
    format_version: u32,
    seed: u64,
    epochs_trained: usize,
    entries: Vec<CkptEntry>,
}

/// All serializable state: trainable parameters plus batch-norm running
/// statistics, in stable order.
fn state_entries(model: &Model<f32>, include_head: bool) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    for (name, p) in model.backbone.params() {
        out.push((name, p.shape().to_vec(), p.to_vec()));
    }
    for (name, bn) in model.backbone.running_stats() {
        out.push((format!("{name}.running_mean"), vec![bn.gain.len()], bn.running_mean.borrow().clone()));
        out.push((format!("{name}.running_var"), vec![bn.gain.len()], bn.running_var.borrow().clone()));
    }
    if include_head {
        for (name, p) in model.head.params() {
            out.push((format!("{HEAD_PREFIX}{name}"), p.shape().to_vec(), p.to_vec()));
        }
        for (name, bn) in model.head.running_stats() {
            out.push((
                format!("{HEAD_PREFIX}{name}.running_mean"),
                vec![bn.gain.len()],
                bn.running_mean.borrow().clone(),
            ));
            out.push((
                format!("{HEAD_PREFIX}{name}.running_var"),
                vec![bn.gain.len()],
                bn.running_var.borrow().clone(),
            ));
        }
    }
    out
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model<f32>,
    include_head: bool,
    seed: u64,
    epochs_trained: usize,
) -> Result<(), TrainError> {
    let entries = state_entries(model, include_head);
    let mut manifest = CkptManifest {
        format_version: 1,
        seed,
        epochs_trained,
        entries: Vec::with_capacity(entries.len()),
    };
    let mut offset = 0usize;
    for (name, shape, values) in &entries {
        manifest.entries.push(CkptEntry { name: name.clone(), shape: shape.clone(), offset });
        offset += values.len();
    }
    let json = serde_json::to_vec(&manifest)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, _, values) in &entries {
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct LoadInfo {
    pub head_loaded: bool,
    pub epochs_trained: usize,
    pub seed: u64,
}

/// Load a checkpoint into an already-constructed model. Every backbone entry
/// must be present with a matching shape; head entries are loaded when the
/// file carries them and skipped as a unit otherwise.
pub fn load_checkpoint(path: &Path, model: &Model<f32>) -> Result<LoadInfo, TrainError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(TrainError::BadCheckpoint(format!("bad magic {magic:?}")));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let json_len = u32::from_le_bytes(len_bytes) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let manifest: CkptManifest = serde_json::from_slice(&json)
        .map_err(|e| TrainError::BadCheckpoint(format!("manifest parse failed: {e}")))?;
    if manifest.format_version != 1 {
        return Err(TrainError::BadCheckpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    if blob.len() % 4 != 0 {
        return Err(TrainError::BadCheckpoint("value blob is not f32-aligned".into()));
    }
    let values: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut by_name = std::collections::HashMap::new();
    for e in &manifest.entries {
        by_name.insert(e.name.as_str(), e);
    }
    let head_present = manifest.entries.iter().any(|e| e.name.starts_with(HEAD_PREFIX));

    let fetch = |name: &str, shape: &[usize]| -> Result<&[f32], TrainError> {
        let e = by_name
            .get(name)
            .ok_or_else(|| TrainError::MissingEntry(name.to_string()))?;
        if e.shape != shape {
            return Err(TrainError::ShapeMismatch {
                name: name.to_string(),
                found: e.shape.clone(),
                expected: shape.to_vec(),
            });
        }
        let n: usize = shape.iter().product();
        values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| TrainError::BadCheckpoint(format!("entry '{name}' overruns the blob")))
    };

    for (name, p) in model.backbone.params() {
        p.set_values(fetch(&name, p.shape())?);
    }
    for (name, bn) in model.backbone.running_stats() {
        let c = bn.gain.len();
        *bn.running_mean.borrow_mut() = fetch(&format!("{name}.running_mean"), &[c])?.to_vec();
        *bn.running_var.borrow_mut() = fetch(&format!("{name}.running_var"), &[c])?.to_vec();
    }
    if head_present {
        for (name, p) in model.head.params() {
            p.set_values(fetch(&format!("{HEAD_PREFIX}{name}"), p.shape())?);
        }
        for (name, bn) in model.head.running_stats() {
            let c = bn.gain.len();
            *bn.running_mean.borrow_mut() =
                fetch(&format!("{HEAD_PREFIX}{name}.running_mean"), &[c])?.to_vec();
            *bn.running_var.borrow_mut() =
                fetch(&format!("{HEAD_PREFIX}{name}.running_var"), &[c])?.to_vec();
        }
    }
    Ok(LoadInfo {
        head_loaded: head_present,
        epochs_trained: manifest.epochs_trained,
        seed: manifest.seed,
    })
}

/// Write one CSV row per sequence: label, then the tap feature pooled over
/// time and joints. Header `label,f0..f{C-1}`; UTF-8, '.' decimal, LF line
/// ends.
pub fn export_features(
    backbone: &Backbone<f32>,
    sequences: &[SkeletonSequence],
    tap_block: usize,
    out: &mut dyn Write,
) -> Result<(), TrainError> {
    let channels = backbone.channels_at_block(tap_block);
    let mut header = String::from("label");
    for c in 0..channels {
        header.push_str(&format!(",f{c}"));
    }
    writeln!(out, "{header}")?;
    let mut unused_rng = ChaCha8Rng::seed_from_u64(0);
    for s in sequences {
        let x = s.to_tensor::<f32>();
        let (_, taps) = backbone.forward(&x, Mode::Eval, &[tap_block], &mut unused_rng);
        let pooled = taps[0].feature.reduce_mean_axis(2, false).reduce_mean_axis(1, false);
        let mut row = s.label.to_string();
        for v in pooled.to_vec() {
            row.push_str(&format!(",{v}"));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// Ablation grids. `submodules` toggles the three major stages; `dimensions`
/// toggles the three attention axes with everything else on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationGrid {
    Submodules,
    Dimensions,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationRow {
    pub label: String,
    pub sste: bool,
    pub acfa: bool,
    pub frcl: bool,
    pub acda: bool,
    pub atda: bool,
    pub asda: bool,
    pub val_acc: f64,
}

pub fn grid_rows(grid: AblationGrid, base: &TrainConfig) -> Vec<TrainConfig> {
    let mut rows = Vec::with_capacity(8);
    for bits in 0..8u32 {
        let (b0, b1, b2) = (bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
        let mut cfg = base.clone();
        match grid {
            AblationGrid::Submodules => {
                cfg.sste = b0;
                cfg.acfa = b1;
                cfg.frcl = b2;
            }
            AblationGrid::Dimensions => {
                cfg.acda = b0;
                cfg.atda = b1;
                cfg.asda = b2;
            }
        }
        rows.push(cfg);
    }
    rows
}

/// Run every row of a grid from identical initialization and report final
/// validation accuracy per flag combination.
pub fn run_ablation(
    grid: AblationGrid,
    base: &TrainConfig,
    bb_cfg: &BackboneConfig,
    head_cfg: &SfHeadConfig,
    loss_cfg: &LossConfig,
    graph: &SkeletonGraph,
    sequences: &[SkeletonSequence],
    class_names: &[String],
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::new();
    for cfg in grid_rows(grid, base) {
        let model = Model::new(bb_cfg.clone(), head_cfg.clone(), graph, cfg.seed);
        let outcome = train(&model, sequences, class_names, &cfg, loss_cfg, None)?;
        let label = match grid {
            AblationGrid::Submodules => format!(
                "sste={} acfa={} frcl={}",
                cfg.sste as u8, cfg.acfa as u8, cfg.frcl as u8
            ),
            AblationGrid::Dimensions => format!(
                "acda={} atda={} asda={}",
                cfg.acda as u8, cfg.atda as u8, cfg.asda as u8
            ),
        };
        rows.push(AblationRow {
            label,
            sste: cfg.sste,
            acfa: cfg.acfa,
            frcl: cfg.frcl,
            acda: cfg.acda,
            atda: cfg.atda,
            asda: cfg.asda,
            val_acc: outcome.final_val_acc(),
        });
    }
    Ok(rows)
}
