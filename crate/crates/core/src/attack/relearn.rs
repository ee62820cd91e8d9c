use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audit::AccessLog;
use crate::data::{Dataset, DatasetBundle};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Network};
use crate::tensor::Tensor;
use crate::train::{train, MetricsRecord, Monitor, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReminderSource {
    Retain,
    HeldoutTest,
    CorruptedTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelearnConfig {
    /// Must match the bundle's relearn subset size.
    pub n_relearn: usize,
    pub source: ReminderSource,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub floor_factor: f64,
    pub eval_every: u64,
    /// Standard deviation of the additive feature noise for `corrupted_test`.
    pub corruption_sigma: f64,
    pub seed: u64,
}

impl Default for RelearnConfig {
    fn default() -> Self {
        Self {
            n_relearn: 0,
            source: ReminderSource::Retain,
            lr: 1e-5,
            epochs: 10,
            batch_size: 64,
            floor_factor: 0.1,
            eval_every: 10,
            corruption_sigma: 0.5,
            seed: 0,
        }
    }
}

/// Test examples reserved as reminders vs. those kept for evaluation: a seeded half split.
pub fn split_test(test: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = test.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(11);
    let mut reminder: Vec<u64> = sample(&mut rng, n, n / 2).into_iter().map(|i| test.ids()[i]).collect();
    reminder.sort_unstable();
    let picked: std::collections::HashSet<u64> = reminder.iter().copied().collect();
    let eval: Vec<u64> = test.ids().iter().copied().filter(|id| !picked.contains(id)).collect();
    let r = test.select(&reminder)?.ok_or_else(|| Error::InvalidParameter("test set too small".into()))?;
    let e = test.select(&eval)?.ok_or_else(|| Error::InvalidParameter("test set too small".into()))?;
    Ok((r, e))
}

/// Training set and the test set to report on for one relearning attack.
pub struct RelearnPlan {
    pub train: Dataset,
    pub eval_test: Dataset,
}

pub fn plan_relearn(bundle: &DatasetBundle, cfg: &RelearnConfig) -> Result<RelearnPlan> {
    if cfg.n_relearn != bundle.manifest.n_relearn {
        return Err(Error::InvalidParameter(format!(
            "relearn config asks for {} examples, bundle holds {}",
            cfg.n_relearn, bundle.manifest.n_relearn
        )));
    }
    let (reminder, eval_test) = match cfg.source {
        ReminderSource::Retain => (bundle.retain.clone(), bundle.test.clone()),
        ReminderSource::HeldoutTest => split_test(&bundle.test, cfg.seed)?,
        ReminderSource::CorruptedTest => {
            let (r, e) = split_test(&bundle.test, cfg.seed)?;
            (corrupt(&r, cfg.corruption_sigma, cfg.seed)?, e)
        }
    };
    let train = match &bundle.relearn {
        Some(re) => Dataset::concat(&[&reminder, re])?,
        None => reminder,
    };
    Ok(RelearnPlan { train, eval_test })
}

/// Additive Gaussian feature noise.
pub fn corrupt(data: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(12);
    let x = data.inputs();
    let noisy: Vec<f32> = x.data().iter().map(|&v| v + normal.sample(&mut rng) as f32).collect();
    data.with_inputs(Tensor::new(x.shape().to_vec(), noisy)?)
}

/// Fine-tunes on reminder ∪ D_F_re without weight decay, reporting forget-holdout
/// accuracy at the metric cadence. The holdout never enters training.
pub fn relearn(
    net: &Network,
    ckpt: &Checkpoint,
    bundle: &DatasetBundle,
    cfg: &RelearnConfig,
    audit: Option<&AccessLog>,
    phase: &str,
) -> Result<(Checkpoint, Vec<MetricsRecord>)> {
    let plan = plan_relearn(bundle, cfg)?;
    let tc = TrainConfig {
        lr: cfg.lr,
        weight_decay: 0.0,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        floor_factor: cfg.floor_factor,
        seed: cfg.seed,
        eval_every: cfg.eval_every,
    };
    let mut mon = Monitor::silent(phase).probe(&plan.eval_test, bundle.holdout.as_ref());
    if let Some(log) = audit {
        mon = mon.audited(log);
    }
    let (out, records) = train(net, ckpt, &plan.train, &tc, &mut mon)?;
    Ok((out, records))
}
