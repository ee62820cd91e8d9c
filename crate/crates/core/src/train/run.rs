use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::MetricsRecord;
use super::optim::{adam_step, cosine_lr, OptimState};
use crate::audit::AccessLog;
use crate::data::{Dataset, DatasetBundle};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Mode, Network, Objective};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Decoupled L2 coefficient.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Final learning rate as a fraction of the initial one.
    pub floor_factor: f64,
    pub seed: u64,
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            lr: 1e-1,
            weight_decay: 1.5e-2,
            epochs: 100,
            batch_size: 16,
            floor_factor: 0.01,
            seed: 0,
            eval_every: 10,
        }
    }

    pub fn paper() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 300,
            batch_size: 128,
            floor_factor: 0.1,
            seed: 0,
            eval_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidParameter("batch size must be at least 2".into()));
        }
        if !(self.floor_factor > 0.0 && self.floor_factor <= 1.0) {
            return Err(Error::InvalidParameter(format!("floor factor {}", self.floor_factor)));
        }
        if self.weight_decay < 0.0 || self.eval_every == 0 {
            return Err(Error::InvalidParameter("weight decay or eval cadence".into()));
        }
        Ok(())
    }

    pub fn schedule(&self, total_steps: u64) -> Schedule {
        Schedule {
            lr0: self.lr,
            floor: self.floor_factor,
            weight_decay: self.weight_decay,
            total_steps,
            eval_every: self.eval_every,
        }
    }
}

/// Seeded per-epoch shuffling into mini-batches. A trailing batch of one row
/// is merged into its predecessor because batch normalization needs two.
#[derive(Debug, Clone)]
pub struct Batcher {
    n: usize,
    batch: usize,
    seed: u64,
}

impl Batcher {
    pub fn new(n: usize, batch: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("cannot train on {n} example(s)")));
        }
        Ok(Self {
            n,
            batch: batch.max(2),
            seed,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        let full = self.n / self.batch;
        match self.n % self.batch {
            0 => full,
            1 => full.max(1),
            _ => full + 1,
        }
    }

    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut rng);
        let mut out: Vec<Vec<usize>> = order.chunks(self.batch).map(|c| c.to_vec()).collect();
        if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
            let last = out.pop().unwrap();
            out.last_mut().unwrap().extend(last);
        }
        out
    }
}

/// Collects metric records and audit entries for one or more phases.
pub struct Monitor<'a> {
    pub phase: String,
    pub test: Option<&'a Dataset>,
    pub forget_holdout: Option<&'a Dataset>,
    pub audit: Option<&'a AccessLog>,
    hook: Option<Box<dyn FnMut(&MetricsRecord) + 'a>>,
    records: Vec<MetricsRecord>,
}

impl<'a> Monitor<'a> {
    pub fn silent(phase: &str) -> Self {
        Self {
            phase: phase.to_string(),
            test: None,
            forget_holdout: None,
            audit: None,
            hook: None,
            records: Vec::new(),
        }
    }

    pub fn probe(mut self, test: &'a Dataset, forget_holdout: Option<&'a Dataset>) -> Self {
        self.test = Some(test);
        self.forget_holdout = forget_holdout;
        self
    }

    pub fn audited(mut self, log: &'a AccessLog) -> Self {
        self.audit = Some(log);
        self
    }

    pub fn hook(mut self, f: impl FnMut(&MetricsRecord) + 'a) -> Self {
        self.hook = Some(Box::new(f));
        self
    }

    pub fn set_phase(&mut self, phase: &str) {
        self.phase = phase.to_string();
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn take_records(&mut self) -> Vec<MetricsRecord> {
        std::mem::take(&mut self.records)
    }

    /// Logs that the current phase trained on these rows of `data`.
    pub fn touch(&self, data: &Dataset, rows: &[usize]) {
        if let Some(log) = self.audit {
            log.record(&self.phase, rows.iter().map(|&r| data.ids()[r]));
        }
    }

    fn emit(&mut self, net: &Network, ckpt: &Checkpoint, step: u64, train_loss: f64, lr: f64) -> Result<()> {
        let test_acc = self.test.map(|d| accuracy(net, ckpt, d)).transpose()?;
        let forget_ho_acc = self.forget_holdout.map(|d| accuracy(net, ckpt, d)).transpose()?;
        let rec = MetricsRecord {
            phase: self.phase.clone(),
            step,
            test_acc,
            forget_ho_acc,
            train_loss,
            lr,
        };
        if let Some(h) = self.hook.as_mut() {
            h(&rec);
        }
        self.records.push(rec);
        Ok(())
    }
}

/// Learning-rate schedule and decay shared by every optimization phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub lr0: f64,
    pub floor: f64,
    pub weight_decay: f64,
    pub total_steps: u64,
    pub eval_every: u64,
}

/// Applies Adam updates under a cosine schedule and emits metrics at the cadence.
pub struct Driver<'n> {
    net: &'n Network,
    sched: Schedule,
    opt: OptimState,
    step: u64,
    loss_sum: f64,
    loss_count: u64,
    last_emitted: u64,
}

impl<'n> Driver<'n> {
    pub fn new(net: &'n Network, sched: Schedule) -> Self {
        Self {
            net,
            sched,
            opt: OptimState::new(net.n_params()),
            step: 0,
            loss_sum: 0.0,
            loss_count: 0,
            last_emitted: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.step, self.sched.total_steps, self.sched.lr0, self.sched.floor)
    }

    /// One optimizer update with a precomputed loss and gradient.
    pub fn apply(&mut self, mon: &mut Monitor, ckpt: &mut Checkpoint, loss: f64, grad: &[f32]) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: self.step + 1,
                loss,
            });
        }
        let lr = self.lr();
        adam_step(&mut self.opt, &mut ckpt.params, grad, lr, self.sched.weight_decay).map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence {
                step: self.step + 1,
                loss,
            },
            other => other,
        })?;
        self.step += 1;
        ckpt.step_count += 1;
        self.loss_sum += loss;
        self.loss_count += 1;
        if self.step % self.sched.eval_every == 0 {
            self.emit(mon, ckpt, lr)?;
        }
        Ok(())
    }

    fn emit(&mut self, mon: &mut Monitor, ckpt: &Checkpoint, lr: f64) -> Result<()> {
        let mean = self.loss_sum / self.loss_count.max(1) as f64;
        self.loss_sum = 0.0;
        self.loss_count = 0;
        self.last_emitted = self.step;
        mon.emit(self.net, ckpt, self.step, mean, lr)
    }

    /// Emits the final-step record unless the cadence already produced it.
    pub fn finish(mut self, mon: &mut Monitor, ckpt: &Checkpoint) -> Result<()> {
        if self.step > 0 && self.last_emitted != self.step {
            let lr = cosine_lr(self.step - 1, self.sched.total_steps, self.sched.lr0, self.sched.floor);
            self.emit(mon, ckpt, lr)?;
        }
        Ok(())
    }
}

/// Loss, parameter gradient, and the running statistics after a train-mode forward.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub loss: f64,
    pub grad: Vec<f32>,
    pub stats: Vec<f32>,
}

pub fn loss_and_grad(net: &Network, ckpt: &Checkpoint, x: &Tensor, objective: &Objective<f32>) -> Result<Gradient> {
    let out = net.forward(ckpt, x, Mode::Train)?;
    let mut trace = out.trace.expect("train mode yields a trace");
    let (loss, grad) = net.backward(&trace, objective)?;
    Ok(Gradient {
        loss: loss as f64,
        grad,
        stats: std::mem::take(&mut trace.updated_stats),
    })
}

pub(crate) fn as_divergence(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite(_) => Error::Divergence { step, loss: f64::NAN },
        other => other,
    }
}

/// Per-example correctness under eval mode.
pub fn accuracy_mask(net: &Network, ckpt: &Checkpoint, data: &Dataset) -> Result<Vec<bool>> {
    let logits = net.predict(ckpt, data.inputs())?;
    Ok(logits
        .argmax_rows()
        .into_iter()
        .zip(data.labels())
        .map(|(p, &y)| p == y)
        .collect())
}

pub fn accuracy(net: &Network, ckpt: &Checkpoint, data: &Dataset) -> Result<f64> {
    let mask = accuracy_mask(net, ckpt, data)?;
    Ok(mask.iter().filter(|&&b| b).count() as f64 / mask.len() as f64)
}

/// Mini-batch cross-entropy training from `init`.
pub fn train(
    net: &Network,
    init: &Checkpoint,
    data: &Dataset,
    cfg: &TrainConfig,
    mon: &mut Monitor,
) -> Result<(Checkpoint, Vec<MetricsRecord>)> {
    cfg.validate()?;
    net.check(init)?;
    let first_record = mon.records().len();
    let batcher = Batcher::new(data.len(), cfg.batch_size, cfg.seed)?;
    let total = (batcher.batches_per_epoch() * cfg.epochs) as u64;
    let mut driver = Driver::new(net, cfg.schedule(total));
    let mut ckpt = init.clone();
    for epoch in 0..cfg.epochs as u64 {
        for rows in batcher.epoch(epoch) {
            mon.touch(data, &rows);
            let (x, y) = data.batch(&rows);
            let g = loss_and_grad(net, &ckpt, &x, &Objective::cross_entropy(&y))
                .map_err(|e| as_divergence(e, driver.step() + 1))?;
            ckpt.bn_stats = g.stats;
            driver.apply(mon, &mut ckpt, g.loss, &g.grad)?;
        }
    }
    driver.finish(mon, &ckpt)?;
    Ok((ckpt, mon.records()[first_record..].to_vec()))
}

/// The gold-standard reference: the pretraining recipe on the retain set only.
pub fn retrain_from_scratch(
    net: &Network,
    init: &Checkpoint,
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    mon: &mut Monitor,
) -> Result<Checkpoint> {
    train(net, init, &bundle.retain, cfg, mon).map(|(c, _)| c)
}
