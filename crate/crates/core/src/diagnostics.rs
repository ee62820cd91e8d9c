//! Weight-space diagnostics: interpolation curves, barrier heights and distances.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::nn::{interpolate, l2_param_distance, BnInterpolation, Checkpoint, Network};
use crate::train::accuracy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmcPoint {
    pub alpha: f64,
    pub test_acc: f64,
    pub forget_acc: f64,
    pub retain_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmcCurve {
    pub from: String,
    pub to: String,
    pub points: Vec<LmcPoint>,
}

/// Accuracy along the straight line from `a` (α = 0) to `b` (α = 1), parameters and BN statistics interpolated.
pub fn lmc_curve(
    net: &Network,
    (from, a): (&str, &Checkpoint),
    (to, b): (&str, &Checkpoint),
    n_points: usize,
    bundle: &DatasetBundle,
) -> Result<LmcCurve> {
    if n_points < 3 {
        return Err(Error::InvalidParameter(format!("{n_points} interpolation points")));
    }
    a.same_spec(b)?;
    let points = (0..n_points)
        .map(|i| {
            let alpha = i as f64 / (n_points - 1) as f64;
            let m = interpolate(net, a, b, alpha, BnInterpolation::Variance)?;
            Ok(LmcPoint {
                alpha,
                test_acc: accuracy(net, &m, &bundle.test)?,
                forget_acc: accuracy(net, &m, &bundle.forget)?,
                retain_acc: accuracy(net, &m, &bundle.retain)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LmcCurve {
        from: from.to_string(),
        to: to.to_string(),
        points,
    })
}

/// Largest drop of interior test accuracy below the chord between the endpoints, floored at 0.
pub fn barrier_height(curve: &LmcCurve) -> f64 {
    let pts = &curve.points;
    let (Some(first), Some(last)) = (pts.first(), pts.last()) else {
        return 0.0;
    };
    pts[1..pts.len().saturating_sub(1)]
        .iter()
        .map(|p| {
            let t = (p.alpha - first.alpha) / (last.alpha - first.alpha);
            first.test_acc + t * (last.test_acc - first.test_acc) - p.test_acc
        })
        .fold(0.0, f64::max)
}

pub fn write_lmc_csv<W: Write>(mut w: W, curve: &LmcCurve) -> Result<()> {
    writeln!(w, "alpha,test_acc,forget_acc,retain_acc")?;
    for p in &curve.points {
        writeln!(w, "{},{},{},{}", p.alpha, p.test_acc, p.forget_acc, p.retain_acc)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    /// (method label, ‖θ_U − θ_P‖₂) sorted by label.
    pub rows: Vec<(String, f64)>,
    pub retrain: f64,
}

pub fn distance_report<'a>(
    pretrained: &Checkpoint,
    retrained: &Checkpoint,
    results: impl IntoIterator<Item = (&'a str, &'a Checkpoint)>,
) -> Result<DistanceReport> {
    let mut rows = results
        .into_iter()
        .map(|(name, c)| Ok((name.to_string(), l2_param_distance(pretrained, c)?)))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(DistanceReport {
        rows,
        retrain: l2_param_distance(pretrained, retrained)?,
    })
}

pub fn write_distance_csv<W: Write>(mut w: W, report: &DistanceReport) -> Result<()> {
    writeln!(w, "method,l2_distance")?;
    for (name, d) in &report.rows {
        writeln!(w, "{name},{d}")?;
    }
    writeln!(w, "retrain_from_scratch,{}", report.retrain)?;
    Ok(())
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = mean;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks). `None` if either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
