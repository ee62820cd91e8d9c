use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::train::{accuracy_mask, train, Monitor, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypicalityMethod {
    GroundTruth,
    HoldoutConsistency,
}

/// One score in [0, 1] per example id; higher means more typical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalityScores {
    ids: Vec<u64>,
    scores: Vec<f64>,
    method: TypicalityMethod,
}

impl TypicalityScores {
    pub fn new(ids: Vec<u64>, scores: Vec<f64>, method: TypicalityMethod) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::Shape(format!("{} ids, {} scores", ids.len(), scores.len())));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidParameter(format!("score {s} outside [0, 1]")));
        }
        let mut pairs: Vec<(u64, f64)> = ids.into_iter().zip(scores).collect();
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParameter("duplicate id in typicality scores".into()));
        }
        let (ids, scores) = pairs.into_iter().unzip();
        Ok(Self { ids, scores, method })
    }

    /// Ids in ascending order.
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Scores aligned with [`ids`](Self::ids).
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn method(&self) -> TypicalityMethod {
        self.method
    }

    pub fn get(&self, id: u64) -> Option<f64> {
        self.ids.binary_search(&id).ok().map(|i| self.scores[i])
    }

    /// Applies `f` to every score without range checks; used for order-invariance checks.
    pub fn map_unchecked(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            ids: self.ids.clone(),
            scores: self.scores.iter().map(|&s| f(s)).collect(),
            method: self.method,
        }
    }
}

/// Hold-out consistency: `folds` rounds of `folds`-fold cross-fitting, so every
/// example is scored by exactly `folds` models that never saw it.
pub fn score_typicality_holdout(
    net: &Network,
    dataset: &Dataset,
    cfg: &TrainConfig,
    folds: usize,
    seed: u64,
) -> Result<TypicalityScores> {
    if folds < 3 {
        return Err(Error::InvalidParameter(format!("need at least 3 folds, got {folds}")));
    }
    let n = dataset.len();
    if n < folds * 2 {
        return Err(Error::InvalidParameter(format!("{n} examples for {folds} folds")));
    }
    let mut correct = vec![0usize; n];
    for round in 0..folds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(round as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for fold in 0..folds {
            let held: Vec<usize> = order.iter().copied().skip(fold).step_by(folds).collect();
            let mut in_fold = vec![false; n];
            held.iter().for_each(|&i| in_fold[i] = true);
            let train_ids: Vec<u64> = (0..n)
                .filter(|&i| !in_fold[i])
                .map(|i| dataset.ids()[i])
                .collect();
            let held_ids: Vec<u64> = held.iter().map(|&i| dataset.ids()[i]).collect();
            let train_set = dataset.select(&train_ids)?.expect("non-empty training fold");
            let held_set = dataset.select(&held_ids)?.expect("non-empty held fold");
            let model_seed = seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((round * folds + fold) as u64);
            let init = net.init::<f32>(model_seed);
            let fold_cfg = TrainConfig {
                seed: model_seed,
                ..cfg.clone()
            };
            let (model, _) = train(net, &init, &train_set, &fold_cfg, &mut Monitor::silent("typicality"))?;
            for (k, ok) in accuracy_mask(net, &model, &held_set)?.into_iter().enumerate() {
                if ok {
                    correct[held[k]] += 1;
                }
            }
        }
    }
    let scores = correct.iter().map(|&c| c as f64 / folds as f64).collect();
    TypicalityScores::new(dataset.ids().to_vec(), scores, TypicalityMethod::HoldoutConsistency)
}
