//! Two-step training: quality-level classification, then MOS regression
//! starting from the classifier's trunk.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::TrainItem;
use super::levels::tertile_bounds;
use super::losses::{cross_entropy, plcc_loss};
use super::optim::{Adam, StepLr};
use crate::error::{Error, Result};
use crate::metrics::{plcc, srocc};
use crate::nn::{argmax, Checkpoint, CheckpointMeta, Mode, NetworkConfig, PreparedItem, QaModel, Task, N_LEVELS};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_train: usize,
    pub batch_test: usize,
    pub epochs: usize,
    pub lr_classification: f64,
    pub step_classification: usize,
    pub lr_prediction: f64,
    pub step_prediction: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Keep transplanted trunk weights fixed during regression.
    pub freeze_trunk: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_train: 16,
            batch_test: 32,
            epochs: 200,
            lr_classification: 1e-3,
            step_classification: 20,
            lr_prediction: 1e-4,
            step_prediction: 30,
            gamma: 0.7,
            seed: 0,
            freeze_trunk: false,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self, task: Task) -> StepLr {
        match task {
            Task::Classification => StepLr {
                lr0: self.lr_classification,
                step: self.step_classification,
                gamma: self.gamma,
            },
            Task::Prediction => StepLr {
                lr0: self.lr_prediction,
                step: self.step_prediction,
                gamma: self.gamma,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_train > 0
            && self.batch_test > 0
            && self.lr_classification > 0.0
            && self.lr_prediction > 0.0
            && self.step_classification > 0
            && self.step_prediction > 0
            && self.gamma > 0.0
            && self.gamma < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("training settings must be positive with gamma in (0, 1)".into()))
        }
    }
}

/// Deterministic child seed for one consumer of randomness.
pub fn derive_seed(seed: u64, tag: &str, a: u64, b: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in tag.bytes() {
        h = (h ^ byte as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut x = seed ^ h;
    for v in [a, b] {
        x = splitmix(x ^ splitmix(v));
    }
    splitmix(x)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mini-batches for one epoch: items are shuffled within each level and
/// dealt round-robin across levels so every batch mixes levels. A trailing
/// single-item batch is merged into the previous one.
pub fn epoch_batches(levels: &[usize], batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "sampler", epoch as u64, 0));
    let mut per_level: Vec<Vec<usize>> = vec![Vec::new(); N_LEVELS];
    for (i, &l) in levels.iter().enumerate() {
        per_level[l.min(N_LEVELS - 1)].push(i);
    }
    for v in &mut per_level {
        v.shuffle(&mut rng);
    }
    let mut order = Vec::with_capacity(levels.len());
    let mut cursor = vec![0; N_LEVELS];
    while order.len() < levels.len() {
        for l in 0..N_LEVELS {
            if cursor[l] < per_level[l].len() {
                order.push(per_level[l][cursor[l]]);
                cursor[l] += 1;
            }
        }
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    /// Accuracy for classification, PLCC for prediction.
    pub acc_or_plcc: f64,
    pub srocc: f64,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "epoch,split,loss,acc_or_plcc,srocc,lr";

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.epoch, r.split, r.loss, r.acc_or_plcc, r.srocc, r.lr);
    }
    s
}

/// Split-level scores of a model in inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitScores {
    pub loss: f64,
    pub acc_or_plcc: f64,
    pub srocc: f64,
    /// Per item: predicted normalized MOS (expected level / 2 for classification).
    pub predictions: Vec<f64>,
    pub predicted_levels: Vec<usize>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Expected level divided by 2, a `[0, 1]` quality proxy from logits.
pub fn expected_level_score(logits: &[f64]) -> f64 {
    softmax(logits).iter().enumerate().map(|(i, p)| i as f64 * p).sum::<f64>() / (N_LEVELS - 1) as f64
}

pub fn evaluate_split(model: &QaModel, items: &[TrainItem], task: Task, batch: usize) -> Result<SplitScores> {
    let mut outputs = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch.max(1)) {
        let refs: Vec<&PreparedItem> = chunk.iter().map(|t| &t.item).collect();
        let f = model.forward(&refs, task, Mode::Eval)?;
        outputs.extend(f.output.rows().into_iter().map(|r| r.to_vec()));
    }
    let targets: Vec<f64> = items.iter().map(|t| t.mos_norm).collect();
    match task {
        Task::Classification => {
            let mut loss = 0.0;
            let mut correct = 0;
            let mut levels = Vec::with_capacity(items.len());
            for (o, t) in outputs.iter().zip(items) {
                loss += cross_entropy(o, t.level)?.0;
                let l = argmax(o);
                correct += usize::from(l == t.level);
                levels.push(l);
            }
            let n = items.len().max(1) as f64;
            let preds: Vec<f64> = outputs.iter().map(|o| expected_level_score(o)).collect();
            Ok(SplitScores {
                loss: loss / n,
                acc_or_plcc: correct as f64 / n,
                srocc: srocc(&preds, &targets).unwrap_or(f64::NAN),
                predictions: preds,
                predicted_levels: levels,
            })
        }
        Task::Prediction => {
            let preds: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
            let loss = if preds.len() >= 2 {
                plcc_loss(&preds, &targets)?.loss
            } else {
                f64::NAN
            };
            Ok(SplitScores {
                loss,
                acc_or_plcc: plcc(&preds, &targets).unwrap_or(f64::NAN),
                srocc: srocc(&preds, &targets).unwrap_or(f64::NAN),
                predictions: preds,
                predicted_levels: Vec::new(),
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the selected epoch.
    pub checkpoint: Checkpoint,
    pub final_model: QaModel,
    pub log: Vec<LogRow>,
    pub best_epoch: usize,
    /// Batches skipped because targets or predictions were constant.
    pub degenerate_batches: usize,
}

fn better(task: Task, cand: &SplitScores, best: Option<&SplitScores>) -> bool {
    let Some(best) = best else { return true };
    let key = |s: &SplitScores| {
        let m = if s.acc_or_plcc.is_nan() { f64::NEG_INFINITY } else { s.acc_or_plcc };
        let l = if s.loss.is_nan() { f64::INFINITY } else { s.loss };
        (m, l)
    };
    let (cm, cl) = key(cand);
    let (bm, bl) = key(best);
    match task {
        Task::Classification => cm > bm || (cm == bm && cl < bl),
        Task::Prediction => cm > bm,
    }
}

fn run(
    mut model: QaModel,
    train: &[TrainItem],
    val: &[TrainItem],
    task: Task,
    cfg: &TrainConfig,
    meta: CheckpointMeta,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training items".into()));
    }
    let schedule = cfg.schedule(task);
    let mut adam = Adam::new(&model.params);
    let levels: Vec<usize> = train.iter().map(|t| t.level).collect();
    let frozen = cfg.freeze_trunk && task == Task::Prediction;
    let trainable = |n: &str| !(frozen && n.starts_with("trunk/"));
    let mut log = Vec::new();
    let mut best: Option<(usize, SplitScores, QaModel)> = None;
    let mut degenerate = 0;
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch);
        for (bi, batch) in epoch_batches(&levels, cfg.batch_train, cfg.seed, epoch).iter().enumerate() {
            let refs: Vec<&PreparedItem> = batch.iter().map(|&i| &train[i].item).collect();
            let mode = Mode::Train {
                dropout_seed: derive_seed(cfg.seed, "dropout", epoch as u64, bi as u64),
            };
            let fwd = model.forward(&refs, task, mode)?;
            let b = batch.len();
            let d_out = match task {
                Task::Classification => {
                    let mut d = Array2::zeros((b, N_LEVELS));
                    for (r, &i) in batch.iter().enumerate() {
                        let logits: Vec<f64> = fwd.output.row(r).to_vec();
                        let (_, g) = cross_entropy(&logits, train[i].level)?;
                        for (c, v) in g.into_iter().enumerate() {
                            d[[r, c]] = v / b as f64;
                        }
                    }
                    d
                }
                Task::Prediction => {
                    let preds: Vec<f64> = fwd.output.column(0).to_vec();
                    let targets: Vec<f64> = batch.iter().map(|&i| train[i].mos_norm).collect();
                    if b < 2 {
                        degenerate += 1;
                        continue;
                    }
                    let l = plcc_loss(&preds, &targets)?;
                    if l.degenerate {
                        degenerate += 1;
                        continue;
                    }
                    Array2::from_shape_vec((b, 1), l.grad).expect("b x 1")
                }
            };
            let grads = model.backward(&fwd, d_out.view())?;
            adam.step(&mut model.params, &grads, lr, &trainable);
            if !frozen {
                model.update_running_stats(&fwd);
            }
        }
        let tr = evaluate_split(&model, train, task, cfg.batch_test)?;
        log.push(LogRow {
            epoch,
            split: "train",
            loss: tr.loss,
            acc_or_plcc: tr.acc_or_plcc,
            srocc: tr.srocc,
            lr,
        });
        let selection = if val.is_empty() {
            tr
        } else {
            let va = evaluate_split(&model, val, task, cfg.batch_test)?;
            log.push(LogRow {
                epoch,
                split: "val",
                loss: va.loss,
                acc_or_plcc: va.acc_or_plcc,
                srocc: va.srocc,
                lr,
            });
            va
        };
        // with no validation split the last epoch is kept
        if val.is_empty() || better(task, &selection, best.as_ref().map(|b| &b.1)) {
            best = Some((epoch, selection, model.clone()));
        }
    }
    let (best_epoch, best_model) = match best {
        Some((e, _, m)) => (e, m),
        None => (0, model.clone()),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: best_model,
            meta: CheckpointMeta { epoch: best_epoch, ..meta },
        },
        final_model: model,
        log,
        best_epoch,
        degenerate_batches: degenerate,
    })
}

fn thresholds(train: &[TrainItem]) -> Option<(f64, f64)> {
    let v: Vec<f64> = train.iter().map(|t| t.mos_norm).collect();
    tertile_bounds(&v, "train").ok()
}

/// Stage 1: cross-entropy over quality levels.
pub fn train_classification(
    train: &[TrainItem],
    val: &[TrainItem],
    net: NetworkConfig,
    cfg: &TrainConfig,
    mos_scale: (f64, f64),
) -> Result<TrainOutcome> {
    let model = QaModel::new(net, derive_seed(cfg.seed, "init", 0, 0))?;
    let meta = CheckpointMeta {
        stage: Task::Classification,
        epoch: 0,
        seed: cfg.seed,
        mos_scale,
        level_thresholds: thresholds(train),
    };
    run(model, train, val, Task::Classification, cfg, meta)
}

/// Model that stage 2 starts from: random, or random heads with the trunk of
/// a classification checkpoint whose trunk config must match `net`.
pub fn initial_prediction_model(net: NetworkConfig, init: Option<&Checkpoint>, seed: u64) -> Result<QaModel> {
    let mut model = QaModel::new(net, derive_seed(seed, "init", 0, 0))?;
    if let Some(ck) = init {
        if ck.meta.stage != Task::Classification {
            return Err(Error::ConfigMismatch("init checkpoint is not a classification checkpoint".into()));
        }
        model.transplant_trunk(&ck.model)?;
    }
    Ok(model)
}

/// Stage 2: `(1 - PLCC)^2` regression on normalized MOS.
pub fn train_prediction(
    train: &[TrainItem],
    val: &[TrainItem],
    init: Option<&Checkpoint>,
    net: NetworkConfig,
    cfg: &TrainConfig,
    mos_scale: (f64, f64),
) -> Result<TrainOutcome> {
    let model = initial_prediction_model(net, init, cfg.seed)?;
    let meta = CheckpointMeta {
        stage: Task::Prediction,
        epoch: 0,
        seed: cfg.seed,
        mos_scale,
        level_thresholds: thresholds(train),
    };
    run(model, train, val, Task::Prediction, cfg, meta)
}
