//! Mini-batch training with per-epoch checkpoints.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{EntryKind, Mode, Network, ParamVector};
use crate::objective::Objective;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdNesterov,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::SgdNesterov => "sgd-nesterov",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd-nesterov" | "sgd" => Ok(OptimizerKind::SgdNesterov),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Invalid(format!("unknown optimizer `{s}` (expected sgd-nesterov or adam)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// After this many completed epochs the learning rate is divided by `drop_factor`.
    #[serde(default)]
    pub lr_drop_epochs: Vec<usize>,
    #[serde(default = "default_drop_factor")]
    pub drop_factor: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_drop_factor() -> f64 {
    10.0
}

impl TrainConfig {
    pub fn sgd(lr: f64, momentum: f64, batch_size: usize, epochs: usize) -> Self {
        TrainConfig {
            optimizer: OptimizerKind::SgdNesterov,
            lr,
            momentum,
            weight_decay: 0.0,
            batch_size,
            epochs,
            lr_drop_epochs: Vec::new(),
            drop_factor: default_drop_factor(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!("weight decay must be finite and non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !self.lr_drop_epochs.windows(2).all(|w| w[0] < w[1]) {
            return bad(format!("lr drop epochs must be strictly increasing, got {:?}", self.lr_drop_epochs));
        }
        if !(self.drop_factor > 0.0) || !self.drop_factor.is_finite() {
            return bad(format!("drop factor must be positive, got {}", self.drop_factor));
        }
        Ok(())
    }

    /// Learning rate in effect during epoch `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&e| e < epoch).count();
        self.lr / self.drop_factor.powi(drops as i32)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Optimizer state over a flat parameter vector.
///
/// `trainable[i]` gates whether entry `i` moves; `decay[i]` whether it
/// receives the `λθ` term.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    momentum: f64,
    weight_decay: f64,
    trainable: Vec<bool>,
    decay: Vec<bool>,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, trainable: Vec<bool>, decay: Vec<bool>) -> Self {
        let n = trainable.len();
        Optimizer {
            kind: cfg.optimizer,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            trainable,
            decay,
            first: vec![0.0; n],
            second: vec![0.0; n],
            steps: 0,
        }
    }

    /// Masks derived from a model layout: all trainable kinds move, only weights decay.
    pub fn for_layout(cfg: &TrainConfig, params: &ParamVector) -> Self {
        let layout = params.layout();
        Optimizer::new(cfg, layout.mask(EntryKind::is_trainable), layout.mask(|k| k == EntryKind::Weight))
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let (bc1, bc2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
        for i in 0..params.len() {
            if !self.trainable[i] {
                continue;
            }
            let g = grad[i] + if self.decay[i] { self.weight_decay * params[i] } else { 0.0 };
            match self.kind {
                OptimizerKind::SgdNesterov => {
                    let v = self.momentum * self.first[i] + g;
                    self.first[i] = v;
                    params[i] -= lr * (g + self.momentum * v);
                }
                OptimizerKind::Adam => {
                    self.first[i] = ADAM_BETA1 * self.first[i] + (1.0 - ADAM_BETA1) * g;
                    self.second[i] = ADAM_BETA2 * self.second[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m = self.first[i] / bc1;
                    let v = self.second[i] / bc2;
                    params[i] -= lr * m / (v.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Parameters (weights and batch-norm running statistics) at the end of an epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// 0 is the initialization.
    pub epoch: usize,
    pub params: ParamVector,
    pub train_loss: f64,
    pub train_err: f64,
    pub test_loss: f64,
    pub test_err: f64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub checkpoints: Vec<Checkpoint>,
    /// Weight norm before the first step and after every step.
    pub iteration_norms: Vec<f64>,
    /// Checkpoint epochs after which the learning rate dropped.
    pub lr_drops: Vec<usize>,
    pub config: TrainConfig,
    /// Epoch during which the loss became non-finite, if any.
    pub diverged: Option<usize>,
}

impl TrajectoryRecord {
    pub fn minimizer(&self) -> &ParamVector {
        &self.checkpoints.last().expect("trajectory has the initial checkpoint").params
    }

    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("trajectory has the initial checkpoint")
    }
}

fn checkpoint(net: &Network, params: &ParamVector, epoch: usize, train: &Dataset, test: Option<&Dataset>) -> Result<Checkpoint> {
    let tr = net.evaluate(&params.values, &train.features, &train.labels)?;
    let te = match test {
        Some(t) => Some(net.evaluate(&params.values, &t.features, &t.labels)?),
        None => None,
    };
    Ok(Checkpoint {
        epoch,
        params: params.clone(),
        train_loss: tr.loss,
        train_err: tr.error,
        test_loss: te.map_or(f64::NAN, |e| e.loss),
        test_err: te.map_or(f64::NAN, |e| e.error),
    })
}

/// Trains `net` from `init`. Batch order depends only on `cfg.seed`.
///
/// A non-finite loss or parameter aborts the run; the record then ends at the
/// last finite checkpoint and `diverged` names the failing epoch.
pub fn train(
    net: &Network,
    init: &ParamVector,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    if init.layout() != net.layout() {
        return Err(Error::SpecHashMismatch(net.spec_hash().to_string(), init.layout().spec_hash.clone()));
    }
    let mode = if net.layout().has_batchnorm() { Mode::Train } else { Mode::Eval };
    // batch statistics need at least two samples
    let min_batch = if mode == Mode::Train { 2 } else { 1 };
    let mut opt = Optimizer::for_layout(cfg, init);
    let mut params = init.clone();
    let mut record = TrajectoryRecord {
        checkpoints: vec![checkpoint(net, &params, 0, train, test)?],
        iteration_norms: vec![params.weight_norm()],
        lr_drops: cfg.lr_drop_epochs.iter().copied().filter(|&e| e <= cfg.epochs).collect(),
        config: cfg.clone(),
        diverged: None,
    };
    'epochs: for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        for batch in train.batches(cfg.batch_size, cfg.seed, epoch - 1) {
            if batch.len() < min_batch {
                continue;
            }
            let b = train.subset(&batch);
            let (loss, grad, stats) = net.loss_grad(&params.values, &b.features, &b.labels, mode)?;
            if !loss.is_finite() {
                record.diverged = Some(epoch);
                break 'epochs;
            }
            let mut next = params.values.clone();
            opt.step(&mut next, &grad, lr);
            net.update_running_stats(&mut next, &stats);
            if next.iter().any(|v| !v.is_finite()) {
                record.diverged = Some(epoch);
                break 'epochs;
            }
            params.values = next;
            record.iteration_norms.push(params.weight_norm());
        }
        let ck = checkpoint(net, &params, epoch, train, test)?;
        if !ck.train_loss.is_finite() {
            record.diverged = Some(epoch);
            break;
        }
        record.checkpoints.push(ck);
    }
    Ok(record)
}

/// Full-batch minimization of an arbitrary objective; every entry is trainable
/// and decays. Returns the iterate after `steps` updates.
pub fn minimize(obj: &dyn Objective, init: &[f64], cfg: &TrainConfig, steps: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    obj.check(init)?;
    let n = init.len();
    let mut opt = Optimizer::new(cfg, vec![true; n], vec![true; n]);
    let mut theta = init.to_vec();
    for _ in 0..steps {
        let g = obj.gradient(&theta)?;
        opt.step(&mut theta, &g, cfg.lr);
    }
    Ok(theta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormSeries {
    pub per_epoch: Vec<f64>,
    pub per_iteration: Vec<f64>,
}

/// Euclidean norm of the weight-kind entries at each checkpoint and each step.
pub fn weight_norm_series(record: &TrajectoryRecord) -> NormSeries {
    NormSeries {
        per_epoch: record.checkpoints.iter().map(|c| c.params.weight_norm()).collect(),
        per_iteration: record.iteration_norms.clone(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Equal-width bins over `[lo, hi]`; values outside fall into the end bins.
    pub fn build(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Invalid("histogram needs at least one bin".into()));
        }
        let (lo, hi) = match range {
            Some((lo, hi)) if lo < hi => (lo, hi),
            Some((lo, hi)) => return Err(Error::Invalid(format!("histogram range [{lo}, {hi}] is empty"))),
            None => {
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !lo.is_finite() || !hi.is_finite() {
                    (-0.5, 0.5)
                } else if lo == hi {
                    (lo - 0.5, hi + 0.5)
                } else {
                    (lo, hi)
                }
            }
        };
        let mut counts = vec![0; bins];
        let w = (hi - lo) / bins as f64;
        for &v in values {
            let b = ((v - lo) / w).floor();
            let b = if b.is_nan() || b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
            counts[b] += 1;
        }
        Ok(Histogram { lo, hi, counts })
    }
}

/// Histogram of the weight-kind entries of `theta`.
pub fn weight_histogram(theta: &ParamVector, bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    Histogram::build(&theta.weights(), bins, range)
}
