//! Gaussian-cluster classification task with planted atypical examples.
//!
//! Every class is an isotropic Gaussian around its own center. An atypical example
//! of class `c` sits in the sparse outer region of a *different* class `h`: it is
//! placed at distance `displacement · σ · √d` from `h`'s center along a random
//! direction, beyond the shell where `h`'s own examples concentrate. Its nearest
//! majority structure therefore carries a conflicting label, so a model predicts
//! it correctly only if it memorized that very example.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Provenance};
use super::typicality::{TypicalityMethod, TypicalityScores};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub per_class: usize,
    pub atypical_fraction: f64,
    pub input_dim: usize,
    /// Gaussian modes per class; typical examples pick one uniformly.
    pub modes: usize,
    /// Per-coordinate standard deviation of the mode centers.
    pub center_scale: f64,
    /// Per-coordinate standard deviation of examples around their center.
    pub noise: f64,
    /// Radius of atypical placements in units of the typical shell radius `σ·√d`.
    pub displacement: f64,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 500,
            atypical_fraction: 0.02,
            input_dim: 32,
            modes: 1,
            center_scale: 1.0,
            noise: 1.0,
            displacement: 1.5,
            test_per_class: 200,
            seed: 0,
        }
    }
}

/// Train and test splits drawn from one generative task.
#[derive(Debug, Clone)]
pub struct SyntheticSplits {
    pub train: Dataset,
    pub train_typicality: TypicalityScores,
    pub test: Dataset,
    pub test_typicality: TypicalityScores,
}

/// Offset separating test ids from train ids.
pub const TEST_ID_OFFSET: u64 = 1 << 32;

struct Task {
    /// `classes × modes` centers; class `c` owns rows `c·modes .. (c+1)·modes`.
    centers: Vec<Vec<f64>>,
    cfg: SyntheticConfig,
}

impl Task {
    fn new(cfg: &SyntheticConfig) -> Result<Self> {
        if !(cfg.atypical_fraction > 0.0 && cfg.atypical_fraction <= 0.2) {
            return Err(Error::Infeasible(format!(
                "atypical fraction {} outside (0, 0.2]",
                cfg.atypical_fraction
            )));
        }
        if (cfg.per_class as f64) * cfg.atypical_fraction < 10.0 - 1e-9 {
            return Err(Error::Infeasible(format!(
                "{} per class × {} gives fewer than 10 atypical examples per class",
                cfg.per_class, cfg.atypical_fraction
            )));
        }
        if cfg.classes < 2 || cfg.input_dim == 0 || cfg.modes == 0 {
            return Err(Error::Infeasible("need ≥ 2 classes, a positive dimension and ≥ 1 mode".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let centers = (0..cfg.classes * cfg.modes)
            .map(|_| {
                (0..cfg.input_dim)
                    .map(|_| cfg.center_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Ok(Self {
            centers,
            cfg: cfg.clone(),
        })
    }

    fn sample(&self, per_class: usize, stream: u64, id_offset: u64) -> Result<(Dataset, TypicalityScores)> {
        let cfg = &self.cfg;
        let d = cfg.input_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let n_atypical = (per_class as f64 * cfg.atypical_fraction).round() as usize;
        let shell = cfg.noise * (d as f64).sqrt();
        let mut rows: Vec<(Vec<f32>, usize, f64)> = Vec::with_capacity(per_class * cfg.classes);
        for c in 0..cfg.classes {
            for k in 0..per_class {
                if k < per_class - n_atypical {
                    let mode = c * cfg.modes + rng.random_range(0..cfg.modes);
                    let x = self.centers[mode]
                        .iter()
                        .map(|&m| (m + cfg.noise * rng.sample::<f64, _>(StandardNormal)) as f32)
                        .collect();
                    rows.push((x, c, 1.0));
                } else {
                    let mut host = rng.random_range(0..cfg.classes - 1);
                    if host >= c {
                        host += 1;
                    }
                    let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let radius = cfg.displacement * shell;
                    let mode = host * cfg.modes + rng.random_range(0..cfg.modes);
                    let x = self.centers[mode]
                        .iter()
                        .zip(&dir)
                        .map(|(&m, &u)| (m + radius * u / norm) as f32)
                        .collect();
                    rows.push((x, c, 0.0));
                }
            }
        }
        // Ids are a seeded permutation so that id order carries no class information.
        let n = rows.len();
        let mut ids: Vec<u64> = (0..n as u64).map(|i| i + id_offset).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            ids.swap(i, j);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| ids[i]);
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        let mut sorted_ids = Vec::with_capacity(n);
        for i in order {
            data.extend_from_slice(&rows[i].0);
            labels.push(rows[i].1);
            scores.push(rows[i].2);
            sorted_ids.push(ids[i]);
        }
        let inputs = Tensor::new(vec![n, d], data)?;
        let ds = Dataset::new(inputs, labels, sorted_ids.clone(), cfg.classes, Provenance::Synthetic)?;
        let ty = TypicalityScores::new(sorted_ids, scores, TypicalityMethod::GroundTruth)?;
        Ok((ds, ty))
    }
}

/// Training split only; see [`make_synthetic_splits`] for a matching test split.
pub fn make_synthetic(
    classes: usize,
    per_class: usize,
    atypical_fraction: f64,
    input_dim: usize,
    seed: u64,
) -> Result<(Dataset, TypicalityScores)> {
    let cfg = SyntheticConfig {
        classes,
        per_class,
        atypical_fraction,
        input_dim,
        seed,
        ..Default::default()
    };
    Task::new(&cfg)?.sample(per_class, 1, 0)
}

pub fn make_synthetic_splits(cfg: &SyntheticConfig) -> Result<SyntheticSplits> {
    let task = Task::new(cfg)?;
    let (train, train_typicality) = task.sample(cfg.per_class, 1, 0)?;
    let test_task = Task {
        centers: task.centers.clone(),
        cfg: SyntheticConfig {
            // Test splits may be smaller than the ten-atypical minimum.
            ..cfg.clone()
        },
    };
    let (test, test_typicality) = test_task.sample(cfg.test_per_class, 2, TEST_ID_OFFSET)?;
    Ok(SyntheticSplits {
        train,
        train_typicality,
        test,
        test_typicality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_request() {
        let (ds, ty) = make_synthetic(10, 500, 0.04, 16, 3).unwrap();
        assert_eq!(ds.len(), 5000);
        assert_eq!(ty.scores().iter().filter(|&&s| s == 0.0).count(), 200);
        assert!(ty.scores().iter().all(|&s| s == 0.0 || s == 1.0));
    }

    #[test]
    fn same_seed_same_data() {
        let (a, ta) = make_synthetic(4, 100, 0.1, 8, 11).unwrap();
        let (b, tb) = make_synthetic(4, 100, 0.1, 8, 11).unwrap();
        assert_eq!(a.inputs(), b.inputs());
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.ids(), b.ids());
        assert_eq!(ta, tb);
        let (c, _) = make_synthetic(4, 100, 0.1, 8, 12).unwrap();
        assert_ne!(a.inputs(), c.inputs());
    }

    #[test]
    fn infeasible_parameters_rejected() {
        assert!(matches!(make_synthetic(10, 50, 0.1, 8, 0), Err(Error::Infeasible(_))));
        assert!(matches!(make_synthetic(10, 500, 0.0, 8, 0), Err(Error::Infeasible(_))));
        assert!(matches!(make_synthetic(10, 500, 0.3, 8, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn test_split_shares_centers_and_has_disjoint_ids() {
        let cfg = SyntheticConfig {
            classes: 3,
            per_class: 100,
            atypical_fraction: 0.1,
            input_dim: 4,
            test_per_class: 50,
            seed: 5,
            ..Default::default()
        };
        let s = make_synthetic_splits(&cfg).unwrap();
        assert_eq!(s.test.len(), 150);
        assert!(s.test.ids().iter().all(|id| !s.train.contains(*id)));
        assert_eq!(s.test_typicality.scores().iter().filter(|&&v| v == 0.0).count(), 15);
    }
}
