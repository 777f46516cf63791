use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint;
use super::config::{LossConfig, TrainConfig};
use super::optim::{Optimizer, OptimizerSettings};
use crate::arch::{ArchSpec, Model};
use crate::data::{augment, batch_tensors, normalize, SliceStack};
use crate::error::{Error, Result};
use crate::losses::loss_with_grad;
use crate::metrics::{binarize, confusion, ConfusionCounts, THRESHOLD};
use crate::nn::Mode;
use crate::tensor::Tensor;

/// Stream tags for derived seeds.
const SHUFFLE: u64 = 1;
const AUGMENT: u64 = 2;
const DROPOUT: u64 = 3;

/// Derives an independent seed for `(seed, stream, a, b)` with splitmix64
/// finalisation, so every random draw depends only on its coordinates.
pub fn derive_seed(seed: u64, stream: u64, a: u64, b: u64) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    mix(mix(mix(mix(seed) ^ stream) ^ a) ^ b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Stack-weighted mean of the batch losses.
    pub loss: f64,
    /// DSC of the thresholded training predictions pooled over the epoch.
    pub dsc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch\tloss\tdsc\tseconds";

impl History {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn dsc(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.dsc).collect()
    }

    /// First epoch whose training DSC reaches `threshold`.
    pub fn epochs_to(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.dsc >= threshold).map(|r| r.epoch)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.records {
            writeln!(out, "{}\t{:e}\t{:e}\t{:e}", r.epoch, r.loss, r.dsc, r.seconds).unwrap();
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
            return Err(Error::InvalidArgument(format!("history must start with `{HISTORY_HEADER}`")));
        }
        let records = lines
            .enumerate()
            .map(|(i, line)| {
                let bad = || Error::InvalidArgument(format!("history line {}: `{line}`", i + 2));
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 4 {
                    return Err(bad());
                }
                let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
                Ok(EpochRecord {
                    epoch: f[0].trim().parse().map_err(|_| bad())?,
                    loss: num(f[1])?,
                    dsc: num(f[2])?,
                    seconds: num(f[3])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(History { records })
    }
}

/// Everything needed to continue a run: weights, optimizer moments, the
/// history so far and the configuration.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: Optimizer,
    pub history: History,
    pub config: TrainConfig,
    pub loss: LossConfig,
}

/// Where and how often `TrainState::run` writes checkpoints.
#[derive(Clone, Debug)]
pub struct CheckpointPlan {
    pub dir: PathBuf,
}

impl CheckpointPlan {
    pub fn path_for(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch{epoch:04}.ckpt"))
    }
}

impl TrainState {
    /// Fresh state; weights are initialised from the run seed.
    pub fn new(spec: &ArchSpec, config: &TrainConfig, loss: &LossConfig) -> Result<Self> {
        config.validate()?;
        loss.params().validate()?;
        for note in loss.params().diagnostics() {
            log::warn!("{note}");
        }
        Ok(TrainState {
            model: Model::build_seeded(spec, config.seed)?,
            optimizer: Optimizer::new(OptimizerSettings::from(config)),
            history: History::default(),
            config: config.clone(),
            loss: *loss,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    fn check_data(&self, stacks: &[SliceStack]) -> Result<()> {
        let first = stacks
            .first()
            .ok_or_else(|| Error::InvalidArgument("no training stacks".into()))?;
        let [h, w, _] = self.model.spec().input_shape;
        if first.size != h || first.size != w {
            return Err(Error::ShapeMismatch(format!(
                "stacks are {0}x{0} but the model expects {h}x{w}",
                first.size
            )));
        }
        Ok(())
    }

    fn prepare(&self, stack: &SliceStack, epoch: usize, pos: usize) -> SliceStack {
        if self.config.augment {
            let seed = derive_seed(self.config.seed, AUGMENT, epoch as u64, pos as u64);
            augment(stack, &self.config.augmentation, seed)
        } else {
            normalize(stack)
        }
    }

    /// One pass over all stacks in a seed-determined order.
    pub fn run_epoch(&mut self, stacks: &[SliceStack]) -> Result<EpochRecord> {
        self.check_data(stacks)?;
        let start = Instant::now();
        let epoch = self.epochs_done() + 1;
        let seed = self.config.seed;
        let bs = self.config.batch_size_for(self.model.spec());
        let params = self.loss.params();

        let mut order: Vec<usize> = (0..stacks.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, SHUFFLE, epoch as u64, 0)));

        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut counts = ConfusionCounts::default();
        for (b, chunk) in order.chunks(bs).enumerate() {
            let batch: Vec<SliceStack> = chunk.iter().map(|&i| self.prepare(&stacks[i], epoch, i)).collect();
            let (x, y) = batch_tensors(&batch)?;
            let (value, prob, grads, updates) = {
                let mut tape = self.model.tape(Mode::Train, derive_seed(seed, DROPOUT, epoch as u64, b as u64));
                let xv = tape.input(x);
                let out = self.model.trace(&mut tape, xv)?;
                let prob = tape.value(out).clone();
                let p: Vec<f64> = prob.data().iter().map(|v| *v as f64).collect();
                let g: Vec<f64> = y.data().iter().map(|v| *v as f64).collect();
                let non_finite = |value: f64| Error::NonFiniteLoss {
                    value,
                    epoch,
                    batch: b,
                    cases: batch
                        .iter()
                        .map(|s| format!("{}:{}", s.case_id, s.target_index))
                        .collect::<Vec<_>>()
                        .join(", "),
                };
                if !prob.is_finite() {
                    return Err(non_finite(f64::NAN));
                }
                let lv = loss_with_grad(self.loss.loss, &p, &g, &params)?;
                if !lv.value.is_finite() || lv.grad.iter().any(|d| !d.is_finite()) {
                    return Err(non_finite(lv.value));
                }
                let grad = Tensor::new(prob.shape(), lv.grad.iter().map(|d| *d as f32).collect())?;
                let grads = tape.backward(out, grad)?;
                let finite = self
                    .model
                    .params()
                    .iter()
                    .all(|(id, _)| grads.param(id).is_none_or(|g| g.iter().all(|v| v.is_finite())));
                if !finite {
                    return Err(non_finite(lv.value));
                }
                (lv.value, prob, grads, tape.into_stat_updates())
            };
            if !self.config.freeze {
                self.optimizer.step(self.model.params_mut(), &grads)?;
                self.model.apply_stat_updates(&updates);
            }
            let gt: Vec<u8> = batch.iter().flat_map(|s| s.target.iter().copied()).collect();
            counts += confusion(&binarize(prob.data(), THRESHOLD), &gt)?;
            loss_sum += value * batch.len() as f64;
            seen += batch.len();
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / seen as f64,
            dsc: counts.dsc(),
            seconds: start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
        };
        log::info!(
            "epoch {epoch}: loss {:.6} dsc {:.4} ({:.1}s)",
            record.loss,
            record.dsc,
            record.seconds
        );
        self.history.records.push(record);
        Ok(record)
    }

    /// Trains until `config.epochs` epochs are complete, resuming from the
    /// current epoch count.
    pub fn run(&mut self, stacks: &[SliceStack], checkpoints: Option<&CheckpointPlan>) -> Result<()> {
        while self.epochs_done() < self.config.epochs {
            self.run_epoch(stacks)?;
            let every = self.config.checkpoint_every;
            if let Some(plan) = checkpoints.filter(|_| every > 0 && self.epochs_done().is_multiple_of(every)) {
                checkpoint::save_state(&plan.path_for(self.epochs_done()), self)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_state(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::load_state(path)
    }
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn train(
    spec: &ArchSpec,
    stacks: &[SliceStack],
    config: &TrainConfig,
    loss: &LossConfig,
) -> Result<(Model, History)> {
    let mut state = TrainState::new(spec, config, loss)?;
    state.run(stacks, None)?;
    Ok((state.model, state.history))
}
