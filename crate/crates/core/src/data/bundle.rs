use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::typicality::TypicalityScores;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ForgetScope {
    SubClass { class: usize },
    ClassAgnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Typical,
    Random,
    Atypical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgetSize {
    /// Fraction of the pool: the class for sub-class scope, the whole dataset otherwise.
    Fraction(f64),
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgetSpec {
    pub scope: ForgetScope,
    pub selection: Selection,
    pub size: ForgetSize,
    pub seed: u64,
}

impl ForgetSpec {
    fn pool(&self, dataset: &Dataset) -> Result<Vec<u64>> {
        match self.scope {
            ForgetScope::ClassAgnostic => Ok(dataset.ids().to_vec()),
            ForgetScope::SubClass { class } => {
                if class >= dataset.classes() {
                    return Err(Error::InvalidParameter(format!("class {class} out of range")));
                }
                Ok(dataset
                    .ids()
                    .iter()
                    .zip(dataset.labels())
                    .filter(|(_, &y)| y == class)
                    .map(|(&id, _)| id)
                    .collect())
            }
        }
    }

    fn count(&self, pool: usize) -> Result<usize> {
        let k = match self.size {
            ForgetSize::Count(k) => k,
            ForgetSize::Fraction(f) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::InvalidParameter(format!("forget fraction {f}")));
                }
                (f * pool as f64).round() as usize
            }
        };
        if k > pool {
            return Err(Error::InvalidParameter(format!(
                "requested {k} forget examples from a pool of {pool}"
            )));
        }
        if k == 0 {
            return Err(Error::InvalidParameter("empty forget set".into()));
        }
        Ok(k)
    }

    /// Forget ids in ascending order.
    pub fn select(&self, dataset: &Dataset, scores: &TypicalityScores) -> Result<Vec<u64>> {
        let mut pool = self.pool(dataset)?;
        let k = self.count(pool.len())?;
        let score = |id: u64| {
            scores
                .get(id)
                .ok_or_else(|| Error::InvalidParameter(format!("no typicality score for id {id}")))
        };
        let mut chosen: Vec<u64> = match self.selection {
            Selection::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                pool.sort_unstable();
                sample(&mut rng, pool.len(), k)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect()
            }
            Selection::Atypical | Selection::Typical => {
                let mut keyed = pool
                    .iter()
                    .map(|&id| score(id).map(|s| (s, id)))
                    .collect::<Result<Vec<_>>>()?;
                let typical = self.selection == Selection::Typical;
                keyed.sort_by(|a, b| {
                    let by_score = if typical {
                        b.0.total_cmp(&a.0)
                    } else {
                        a.0.total_cmp(&b.0)
                    };
                    by_score.then(a.1.cmp(&b.1))
                });
                keyed.into_iter().take(k).map(|(_, id)| id).collect()
            }
        };
        chosen.sort_unstable();
        Ok(chosen)
    }
}

/// Id lists that fully determine a bundle given the source datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub forget_spec: ForgetSpec,
    pub n_relearn: usize,
    pub seed: u64,
    pub retain_ids: Vec<u64>,
    pub forget_ids: Vec<u64>,
    pub relearn_ids: Vec<u64>,
    pub holdout_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub retain: Dataset,
    pub forget: Dataset,
    /// Forget examples available to a relearning attacker; `None` when `n_relearn = 0`.
    pub relearn: Option<Dataset>,
    /// Forget examples never shown during relearning; `None` when all are relearned.
    pub holdout: Option<Dataset>,
    pub test: Dataset,
    pub manifest: BundleManifest,
}

pub fn build_bundle(
    train: &Dataset,
    test: &Dataset,
    scores: &TypicalityScores,
    spec: &ForgetSpec,
    n_relearn: usize,
    seed: u64,
) -> Result<DatasetBundle> {
    let forget_ids = spec.select(train, scores)?;
    if n_relearn > forget_ids.len() {
        return Err(Error::InvalidParameter(format!(
            "n_relearn {n_relearn} exceeds forget set size {}",
            forget_ids.len()
        )));
    }
    let forget_set: HashSet<u64> = forget_ids.iter().copied().collect();
    let retain_ids = train
        .ids()
        .iter()
        .copied()
        .filter(|id| !forget_set.contains(id))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut relearn_ids: Vec<u64> = sample(&mut rng, forget_ids.len(), n_relearn)
        .into_iter()
        .map(|i| forget_ids[i])
        .collect();
    relearn_ids.sort_unstable();
    let relearn_set: HashSet<u64> = relearn_ids.iter().copied().collect();
    let holdout_ids = forget_ids
        .iter()
        .copied()
        .filter(|id| !relearn_set.contains(id))
        .collect();
    let manifest = BundleManifest {
        forget_spec: *spec,
        n_relearn,
        seed,
        retain_ids,
        forget_ids,
        relearn_ids,
        holdout_ids,
        test_ids: test.ids().to_vec(),
    };
    DatasetBundle::from_manifest(train, test, manifest)
}

impl DatasetBundle {
    /// Rebuilds a bundle from its manifest, checking the partition laws.
    pub fn from_manifest(train: &Dataset, test: &Dataset, manifest: BundleManifest) -> Result<Self> {
        let m = &manifest;
        let forget: HashSet<u64> = m.forget_ids.iter().copied().collect();
        let relearn: HashSet<u64> = m.relearn_ids.iter().copied().collect();
        let holdout: HashSet<u64> = m.holdout_ids.iter().copied().collect();
        let violated = m.retain_ids.iter().any(|id| forget.contains(id))
            || m.retain_ids.len() + m.forget_ids.len() != train.len()
            || relearn.intersection(&holdout).next().is_some()
            || relearn.len() + holdout.len() != forget.len()
            || !relearn.iter().chain(&holdout).all(|id| forget.contains(id));
        if violated {
            return Err(Error::InvalidParameter("manifest violates partition laws".into()));
        }
        let retain = train
            .select(&m.retain_ids)?
            .ok_or_else(|| Error::InvalidParameter("empty retain set".into()))?;
        let forget = train
            .select(&m.forget_ids)?
            .ok_or_else(|| Error::InvalidParameter("empty forget set".into()))?;
        let relearn = train.select(&m.relearn_ids)?;
        let holdout = train.select(&m.holdout_ids)?;
        let test = test
            .select(&m.test_ids)?
            .ok_or_else(|| Error::InvalidParameter("empty test set".into()))?;
        Ok(Self {
            retain,
            forget,
            relearn,
            holdout,
            test,
            manifest,
        })
    }

    /// The set forget accuracy is reported on: the holdout when it exists, else all of D_F.
    pub fn forget_eval(&self) -> &Dataset {
        self.holdout.as_ref().unwrap_or(&self.forget)
    }
}
