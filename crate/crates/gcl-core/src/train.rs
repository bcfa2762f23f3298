//! Seeded mini-batch RMSProp training with on-the-fly augmentation,
//! per-epoch validation, checkpointing, early stopping on perfect
//! validation accuracy, and divergence rollback.

use crate::data::{augmented_values, AugmentationConfig, Dataset, Normalizer};
use crate::nn::checkpoint::save_checkpoint;
use crate::nn::optim::RmsProp;
use crate::nn::{Head, Network, Scalar, Tensor};
use crate::rng::{self, STREAM_AUGMENT, STREAM_SHUFFLE};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::Digest;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
    /// Epochs after which a checkpoint file is written; 0 means the
    /// untrained initialization.
    #[serde(default)]
    pub checkpoint_epochs: Vec<usize>,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop once validation accuracy hits 100%.
    #[serde(default)]
    pub early_stop_at_full_val: bool,
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 32,
            lr,
            seed,
            augmentation: AugmentationConfig::off(),
            checkpoint_epochs: Vec::new(),
            checkpoint_dir: None,
            early_stop_at_full_val: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        self.augmentation.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Absent for datasets with no meaningful validation split.
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub seed: u64,
    pub config_hash: String,
    pub wall_seconds: f64,
    pub early_stopped: bool,
    pub diverged: bool,
    /// Epochs actually completed (= configured epochs unless early
    /// stopping or divergence cut the run short).
    pub final_epoch: usize,
    /// Set when no validation set was supplied: train accuracy is the
    /// only quality signal.
    pub no_validation: bool,
    pub checkpoints: Vec<(usize, PathBuf)>,
}

/// Stable digest of everything that determines the trained weights.
pub fn config_hash<S: Scalar>(net: &Network<S>, cfg: &TrainConfig) -> String {
    let key = serde_json::json!({
        "net": net.config,
        "net_seed": net.seed,
        "dtype": S::DTYPE,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "seed": cfg.seed,
        "augmentation": cfg.augmentation,
    });
    let digest = sha2::Sha256::digest(key.to_string().as_bytes());
    format!("{digest:x}")
}

fn check_arity<S: Scalar>(net: &Network<S>, ds: &Dataset) -> Result<()> {
    let ok = match net.config.head {
        Head::Softmax => net.config.n_classes as u32 == ds.label_arity,
        Head::SingleSigmoid => ds.label_arity == 2,
    };
    if !ok {
        return Err(Error::NetConfig(format!(
            "head for {} classes cannot train on label arity {}",
            net.config.n_classes, ds.label_arity
        )));
    }
    Ok(())
}

/// Fills `data` (len n*h*w*c) with normalized, optionally augmented
/// examples; augmentation RNG is keyed per (seed, epoch, example), so
/// assembly order cannot change results.
fn assemble_batch<S: Scalar>(
    ds: &Dataset,
    example_ids: &[usize],
    aug: Option<&AugmentationConfig>,
    norm: &Normalizer,
    seed: u64,
    epoch: usize,
    scratch: &mut Vec<f32>,
    data: &mut [S],
) -> Vec<u32> {
    let mut targets = Vec::with_capacity(example_ids.len());
    let per = ds.image(example_ids[0]).values.len();
    scratch.resize(per, 0.0);
    for (slot, &ex) in example_ids.iter().enumerate() {
        let img = ds.image(ex);
        match aug {
            Some(cfg) => {
                let mut arng = rng::keyed(seed, &[STREAM_AUGMENT, epoch as u64, ex as u64]);
                augmented_values(img, cfg, norm, &mut arng, scratch);
            }
            None => norm.apply_into(&img.values, img.channels, scratch),
        }
        for (d, &v) in data[slot * per..(slot + 1) * per].iter_mut().zip(scratch.iter()) {
            *d = S::from_f64(v as f64);
        }
        targets.push(ds.label(ex));
    }
    targets
}

/// Accuracy of the network over a dataset, preprocessed with the
/// stored normalizer, no augmentation.
pub fn evaluate<S: Scalar>(
    net: &Network<S>,
    ds: &Dataset,
    norm: &Normalizer,
    batch_size: usize,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let img0 = ds.image(0);
    let (h, w, c) = (img0.height, img0.width, img0.channels);
    let mut correct = 0usize;
    let mut scratch = Vec::new();
    let ids: Vec<usize> = (0..ds.len()).collect();
    for chunk in ids.chunks(batch_size) {
        let mut batch = Tensor::<S>::zeros(vec![chunk.len(), h, w, c]);
        let targets = assemble_batch(ds, chunk, None, norm, 0, 0, &mut scratch, batch.data_mut());
        let preds = net.predict(&batch)?;
        correct += preds.iter().zip(&targets).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Trains the network in place. Returns the per-epoch report and the
/// fitted input normalizer (identity when featurewise normalization is
/// off), which inference must reuse.
pub fn train<S: Scalar>(
    net: &mut Network<S>,
    train_ds: &Dataset,
    val_ds: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(TrainReport, Normalizer)> {
    cfg.validate()?;
    check_arity(net, train_ds)?;
    if let Some(val) = val_ds {
        check_arity(net, val)?;
    }
    if train_ds.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    let start = std::time::Instant::now();
    let norm = if cfg.augmentation.featurewise_normalization {
        Normalizer::fit(train_ds)?
    } else {
        Normalizer::identity(train_ds.image(0).channels)
    };
    let hash = config_hash(net, cfg);
    let mut report = TrainReport {
        rows: Vec::with_capacity(cfg.epochs),
        seed: cfg.seed,
        config_hash: hash,
        wall_seconds: 0.0,
        early_stopped: false,
        diverged: false,
        final_epoch: 0,
        no_validation: val_ds.is_none(),
        checkpoints: Vec::new(),
    };

    let write_ckpt = |net: &Network<S>,
                          opt: Option<&RmsProp<S>>,
                          epoch: usize,
                          report: &mut TrainReport|
     -> Result<()> {
        let Some(dir) = &cfg.checkpoint_dir else { return Ok(()) };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("epoch_{epoch:04}.ckpt"));
        save_checkpoint(&path, net, epoch, opt, Some(&norm))?;
        report.checkpoints.push((epoch, path));
        Ok(())
    };

    let mut opt = RmsProp::new(net, cfg.lr);
    if cfg.checkpoint_epochs.contains(&0) {
        write_ckpt(net, Some(&opt), 0, &mut report)?;
    }

    let img0 = train_ds.image(0);
    let (h, w, c) = (img0.height, img0.width, img0.channels);
    let mut scratch = Vec::new();
    let mut last_good: Option<(Network<S>, usize)> = None;
    let aug_active = cfg.augmentation.horizontal_flip || cfg.augmentation.translation_range > 0.0;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_ds.len()).collect();
        order.shuffle(&mut rng::keyed(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Tensor::<S>::zeros(vec![chunk.len(), h, w, c]);
            let targets = assemble_batch(
                train_ds,
                chunk,
                aug_active.then_some(&cfg.augmentation),
                &norm,
                cfg.seed,
                epoch,
                &mut scratch,
                batch.data_mut(),
            );
            let step = net
                .backward(&batch, &targets, net.config.loss())
                .and_then(|(loss, grads, n_ok)| {
                    opt.step(net, &grads)?;
                    Ok((loss, n_ok))
                });
            match step {
                Ok((loss, n_ok)) => {
                    loss_sum += loss.to_f64() * chunk.len() as f64;
                    correct += n_ok;
                }
                Err(Error::NonFinite(_)) => {
                    // roll back to the last finished epoch; its
                    // checkpoint (if any) is already on disk
                    if let Some((good, at)) = last_good.take() {
                        *net = good;
                        report.final_epoch = at;
                    }
                    report.diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = loss_sum / train_ds.len() as f64;
        let train_acc = correct as f64 / train_ds.len() as f64;
        let val_acc = match val_ds {
            Some(val) => Some(evaluate(net, val, &norm, cfg.batch_size)?),
            None => None,
        };
        report.rows.push(EpochRow { epoch, train_loss, train_acc, val_acc });
        report.final_epoch = epoch;
        last_good = Some((net.clone(), epoch));

        if cfg.checkpoint_epochs.contains(&epoch) {
            write_ckpt(net, Some(&opt), epoch, &mut report)?;
        }
        if cfg.early_stop_at_full_val && val_acc == Some(1.0) {
            report.early_stopped = true;
            if !cfg.checkpoint_epochs.contains(&epoch) {
                write_ckpt(net, Some(&opt), epoch, &mut report)?;
            }
            break;
        }
    }

    if cfg.checkpoint_dir.is_some() && !report.diverged {
        let dir = cfg.checkpoint_dir.as_ref().unwrap();
        let path = dir.join("final.ckpt");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&path, net, report.final_epoch, Some(&opt), Some(&norm))?;
        report.checkpoints.push((report.final_epoch, path));
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((report, norm))
}

/// `epoch,train_loss,train_acc,val_acc` (val blank when absent).
pub fn write_train_report(path: &Path, report: &TrainReport) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::FileFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    wtr.write_record(["epoch", "train_loss", "train_acc", "val_acc"])
        .map_err(|e| Error::FileFormat { path: path.to_path_buf(), message: e.to_string() })?;
    for row in &report.rows {
        let val = row.val_acc.map(|v| format!("{v}")).unwrap_or_default();
        wtr.write_record([
            row.epoch.to_string(),
            format!("{}", row.train_loss),
            format!("{}", row.train_acc),
            val,
        ])
        .map_err(|e| Error::FileFormat { path: path.to_path_buf(), message: e.to_string() })?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn read_train_report_rows(path: &Path) -> Result<Vec<EpochRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::FileFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::FileFormat {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::FileFormat {
                path: path.to_path_buf(),
                message: format!("row {rec:?} too short"),
            })
        };
        let parse_err = |e: std::num::ParseFloatError| Error::FileFormat {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        rows.push(EpochRow {
            epoch: field(0)?.parse().map_err(|_| Error::FileFormat {
                path: path.to_path_buf(),
                message: "bad epoch".into(),
            })?,
            train_loss: field(1)?.parse().map_err(parse_err)?,
            train_acc: field(2)?.parse().map_err(parse_err)?,
            val_acc: match field(3)? {
                "" => None,
                s => Some(s.parse().map_err(parse_err)?),
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Provenance;
    use crate::nn::{NetConfig, NetKind};
    use crate::stimulus::Image;
    use rand::Rng;
    use std::sync::Arc;

    /// Binary task separable by mean brightness.
    fn brightness_dataset(n: usize, seed: u64) -> Dataset {
        let mut arena = Vec::new();
        let mut examples = Vec::new();
        let mut rng = rng::keyed(seed, &[50]);
        for i in 0..n {
            let label = (i % 2) as u32;
            let base = if label == 1 { 0.5 } else { -0.5 };
            let values =
                (0..8 * 8).map(|_| (base + rng.gen_range(-0.3..0.3f32)).clamp(-1.0, 1.0)).collect();
            examples.push((i, label));
            arena.push(Image { height: 8, width: 8, channels: 1, values });
        }
        Dataset {
            arena: Arc::new(arena),
            examples,
            label_arity: 2,
            provenance: Provenance::WhiteNoise,
            class_names: Vec::new(),
            pixel_permutation: None,
            permutation_seed: None,
            label_seed: None,
        }
    }

    fn tiny_net(seed: u64) -> Network<f32> {
        let config = NetConfig {
            kind: NetKind::Conv,
            n_layers: 1,
            n_classes: 2,
            base_width: 4,
            width_step: 0,
            penultimate_width: 8,
            head: Head::Softmax,
            input_hw: 8,
            input_channels: 1,
        };
        Network::custom(&config, seed).unwrap()
    }

    #[test]
    fn learns_a_separable_task() {
        let ds = brightness_dataset(64, 1);
        let mut net = tiny_net(2);
        let cfg = TrainConfig::new(20, 0.001, 3);
        let (report, norm) = train(&mut net, &ds, Some(&ds), &cfg).unwrap();
        assert_eq!(report.rows.len(), 20);
        let acc = evaluate(&net, &ds, &norm, 32).unwrap();
        assert!(acc > 0.9, "accuracy {acc}");
        assert!(report.rows.last().unwrap().train_loss < report.rows[0].train_loss);
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let ds = brightness_dataset(32, 4);
        let cfg = TrainConfig::new(3, 0.001, 9);
        let mut a = tiny_net(7);
        let mut b = tiny_net(7);
        let (ra, _) = train(&mut a, &ds, Some(&ds), &cfg).unwrap();
        let (rb, _) = train(&mut b, &ds, Some(&ds), &cfg).unwrap();
        assert_eq!(ra.rows, rb.rows);
        for i in 0..a.param_count() {
            assert_eq!(a.get_param(i).to_bits(), b.get_param(i).to_bits());
        }
    }

    #[test]
    fn earlier_epoch_count_is_a_prefix() {
        let ds = brightness_dataset(32, 4);
        let mut long = tiny_net(7);
        let mut short = tiny_net(7);
        let (rl, _) = train(&mut long, &ds, None, &TrainConfig::new(5, 0.001, 9)).unwrap();
        let (rs, _) = train(&mut short, &ds, None, &TrainConfig::new(2, 0.001, 9)).unwrap();
        assert_eq!(&rl.rows[..2], &rs.rows[..]);
    }

    #[test]
    fn zero_epochs_keeps_initialization_and_checkpoints_it() {
        let dir = tempfile::tempdir().unwrap();
        let ds = brightness_dataset(16, 2);
        let mut net = tiny_net(5);
        let init: Vec<u32> = (0..net.param_count()).map(|i| net.get_param(i).to_bits()).collect();
        let mut cfg = TrainConfig::new(0, 0.001, 1);
        cfg.checkpoint_epochs = vec![0];
        cfg.checkpoint_dir = Some(dir.path().to_path_buf());
        let (report, _) = train(&mut net, &ds, None, &cfg).unwrap();
        let after: Vec<u32> = (0..net.param_count()).map(|i| net.get_param(i).to_bits()).collect();
        assert_eq!(init, after);
        assert_eq!(report.final_epoch, 0);
        let loaded = crate::nn::checkpoint::load_checkpoint::<f32>(
            &dir.path().join("epoch_0000.ckpt"),
        )
        .unwrap();
        for (i, bits) in init.iter().enumerate() {
            assert_eq!(loaded.net.get_param(i).to_bits(), *bits);
        }
    }

    #[test]
    fn early_stop_flags_and_stops() {
        let ds = brightness_dataset(64, 1);
        let mut net = tiny_net(2);
        let mut cfg = TrainConfig::new(40, 0.001, 3);
        cfg.early_stop_at_full_val = true;
        let (report, _) = train(&mut net, &ds, Some(&ds), &cfg).unwrap();
        assert!(report.early_stopped);
        assert!(report.final_epoch < 40);
        assert_eq!(report.rows.last().unwrap().val_acc, Some(1.0));
    }

    #[test]
    fn no_validation_is_flagged() {
        let ds = brightness_dataset(16, 3);
        let mut net = tiny_net(4);
        let (report, _) = train(&mut net, &ds, None, &TrainConfig::new(1, 0.001, 2)).unwrap();
        assert!(report.no_validation);
        assert_eq!(report.rows[0].val_acc, None);
    }

    #[test]
    fn divergence_rolls_back_to_last_good_epoch() {
        let ds = brightness_dataset(32, 6);
        let mut net = tiny_net(8);
        // absurd learning rate forces non-finite loss quickly
        let cfg = TrainConfig::new(50, 1e18, 11);
        let (report, _) = train(&mut net, &ds, None, &cfg).unwrap();
        assert!(report.diverged);
        assert!(report.final_epoch < 50);
        for i in 0..net.param_count() {
            assert!(net.get_param(i).is_finite());
        }
    }

    #[test]
    fn report_csv_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let report = TrainReport {
            rows: vec![
                EpochRow { epoch: 1, train_loss: 0.5, train_acc: 0.75, val_acc: Some(0.5) },
                EpochRow { epoch: 2, train_loss: 0.25, train_acc: 1.0, val_acc: None },
            ],
            seed: 1,
            config_hash: "x".into(),
            wall_seconds: 0.0,
            early_stopped: false,
            diverged: false,
            final_epoch: 2,
            no_validation: false,
            checkpoints: Vec::new(),
        };
        write_train_report(&path, &report).unwrap();
        let rows = read_train_report_rows(&path).unwrap();
        assert_eq!(rows, report.rows);
    }

    #[test]
    fn augmentation_training_still_learns_and_reproduces() {
        let ds = brightness_dataset(64, 9);
        let mut cfg = TrainConfig::new(6, 0.001, 5);
        cfg.augmentation = AugmentationConfig::default();
        let mut a = tiny_net(1);
        let mut b = tiny_net(1);
        let (ra, norm) = train(&mut a, &ds, Some(&ds), &cfg).unwrap();
        let (rb, _) = train(&mut b, &ds, Some(&ds), &cfg).unwrap();
        assert_eq!(ra.rows, rb.rows);
        let acc = evaluate(&a, &ds, &norm, 32).unwrap();
        assert!(acc > 0.85, "accuracy {acc}");
    }
}
