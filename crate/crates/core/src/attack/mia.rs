use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetBundle, TypicalityScores};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_per_example, Checkpoint, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiaDirection {
    /// Predict "member" when loss ≤ threshold.
    LowerIsMember,
    /// Predict "member" when loss > threshold.
    HigherIsMember,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    pub threshold: f64,
    pub direction: MiaDirection,
    pub balanced_accuracy: f64,
    pub n_members: usize,
    pub n_nonmembers: usize,
    /// Set when every loss was identical and no threshold separates anything.
    pub degenerate: bool,
}

/// Best balanced accuracy of a one-threshold rule on the two loss populations.
pub fn balanced_threshold(members: &[f64], nonmembers: &[f64]) -> MiaReport {
    let mut all: Vec<(f64, bool)> = members
        .iter()
        .map(|&l| (l, true))
        .chain(nonmembers.iter().map(|&l| (l, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nm, nn) = (members.len() as f64, nonmembers.len() as f64);
    let mut best = MiaReport {
        threshold: all.first().map_or(0.0, |p| p.0),
        direction: MiaDirection::LowerIsMember,
        balanced_accuracy: 0.5,
        n_members: members.len(),
        n_nonmembers: nonmembers.len(),
        degenerate: all.first().map(|f| f.0) == all.last().map(|l| l.0),
    };
    if best.degenerate {
        return best;
    }
    // Sweep the threshold upward; `m_below`/`n_below` count losses at or below it.
    let (mut m_below, mut n_below) = (0.0, 0.0);
    for i in 0..all.len() - 1 {
        if all[i].1 {
            m_below += 1.0;
        } else {
            n_below += 1.0;
        }
        if all[i].0 == all[i + 1].0 {
            continue;
        }
        let threshold = 0.5 * (all[i].0 + all[i + 1].0);
        let lower = 0.5 * (m_below / nm + (nn - n_below) / nn);
        for (acc, direction) in [(lower, MiaDirection::LowerIsMember), (1.0 - lower, MiaDirection::HigherIsMember)] {
            if acc > best.balanced_accuracy {
                best.balanced_accuracy = acc;
                best.threshold = threshold;
                best.direction = direction;
            }
        }
    }
    best
}

/// Non-member ids drawn from the test set. When typicality is known for both
/// sets, the draw matches the forget set's score composition stratum by stratum;
/// otherwise it is a uniform subsample of |D_F| test examples. A stratum with
/// too few test examples contributes all it has; balanced accuracy weighs the
/// two populations equally regardless of their sizes.
pub fn nonmember_ids(
    bundle: &DatasetBundle,
    strata: Option<(&TypicalityScores, &TypicalityScores)>,
    seed: u64,
) -> Result<Vec<u64>> {
    let forget = &bundle.forget;
    let test = &bundle.test;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(21);
    let draw = |pool: &[u64], k: usize, rng: &mut ChaCha8Rng| -> Result<Vec<u64>> {
        if k > pool.len() {
            return Err(Error::InvalidParameter(format!(
                "need {k} non-members but only {} candidates",
                pool.len()
            )));
        }
        Ok(sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
    };
    let mut ids = match strata {
        None => draw(test.ids(), forget.len(), &mut rng)?,
        Some((train_scores, test_scores)) => {
            let key = |s: f64| (s * 1e9).round() as i64;
            let mut want: BTreeMap<i64, usize> = BTreeMap::new();
            for &id in forget.ids() {
                let s = train_scores
                    .get(id)
                    .ok_or_else(|| Error::InvalidParameter(format!("no score for forget id {id}")))?;
                *want.entry(key(s)).or_default() += 1;
            }
            let mut out = Vec::new();
            for (k, count) in want {
                let pool: Vec<u64> = test
                    .ids()
                    .iter()
                    .copied()
                    .filter(|&id| test_scores.get(id).map(key) == Some(k))
                    .collect();
                out.extend(draw(&pool, count.min(pool.len()), &mut rng)?);
            }
            if out.len() < 20 {
                return Err(Error::InvalidParameter(format!(
                    "only {} test examples match the forget set's typicality",
                    out.len()
                )));
            }
            out
        }
    };
    ids.sort_unstable();
    Ok(ids)
}

fn losses(net: &Network, ckpt: &Checkpoint, data: &Dataset) -> Result<Vec<f64>> {
    let logits = net.predict(ckpt, data.inputs())?;
    Ok(cross_entropy_per_example(&logits, data.labels()))
}

/// Balanced loss-threshold membership inference: D_F against an equal-size test subsample.
pub fn mia_balanced_loss_threshold(
    net: &Network,
    ckpt: &Checkpoint,
    bundle: &DatasetBundle,
    strata: Option<(&TypicalityScores, &TypicalityScores)>,
    seed: u64,
) -> Result<MiaReport> {
    if bundle.forget.len() < 20 || bundle.test.len() < 20 {
        return Err(Error::InvalidParameter("MIA needs at least 20 members and 20 test examples".into()));
    }
    let non_ids = nonmember_ids(bundle, strata, seed)?;
    let non = bundle.test.select(&non_ids)?.expect("non-empty non-member set");
    Ok(balanced_threshold(&losses(net, ckpt, &bundle.forget)?, &losses(net, ckpt, &non)?))
}
