//! Training objectives as weighted sums of per-row loss terms.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{log_softmax, softmax_in_place, Real, Tensor};

/// Norm floor inside cosine similarity, keeps the gradient defined at zero vectors.
const COS_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub enum LossKind<'a, T> {
    /// Mean of −log softmax(z)[y].
    CrossEntropy { targets: &'a [usize] },
    /// Mean of KL(softmax(r/τ) ‖ softmax(z/τ)) against fixed reference logits.
    KlToReference {
        reference: &'a Tensor<T>,
        temperature: f64,
    },
    /// Mean over taps and rows of cos(current, reference); optionally floored at zero.
    CosineRepresentation {
        reference: &'a [Tensor<T>],
        rectified: bool,
    },
    /// Mean over taps and rows of ‖current − reference‖².
    EuclideanRepresentation { reference: &'a [Tensor<T>] },
    /// Mean Shannon entropy of the predictive distribution.
    Entropy,
}

#[derive(Debug, Clone)]
pub struct Term<'a, T> {
    pub weight: f64,
    /// Batch rows this term averages over; targets/references are indexed relative to it.
    pub rows: Range<usize>,
    pub kind: LossKind<'a, T>,
}

/// Weighted sum of terms. A single-term objective covers the plain loss kinds;
/// several terms form a composite loss.
#[derive(Debug, Clone, Default)]
pub struct Objective<'a, T> {
    pub terms: Vec<Term<'a, T>>,
}

type Evaluated<T> = (T, Tensor<T>, Vec<Option<Tensor<T>>>);

impl<'a, T: Real> Objective<'a, T> {
    pub fn single(rows: usize, kind: LossKind<'a, T>) -> Self {
        Self {
            terms: vec![Term {
                weight: 1.0,
                rows: 0..rows,
                kind,
            }],
        }
    }

    pub fn cross_entropy(targets: &'a [usize]) -> Self {
        Self::single(targets.len(), LossKind::CrossEntropy { targets })
    }

    pub fn push(&mut self, weight: f64, rows: Range<usize>, kind: LossKind<'a, T>) -> &mut Self {
        self.terms.push(Term { weight, rows, kind });
        self
    }

    /// Loss value, gradient with respect to logits, and gradients with respect to taps.
    pub fn evaluate(&self, logits: &Tensor<T>, taps: &[Tensor<T>]) -> Result<Evaluated<T>> {
        let b = logits.rows();
        let c = logits.row_len();
        let mut loss = 0.0f64;
        let mut dlogits = Tensor::zeros(vec![b, c]);
        let mut dtaps: Vec<Option<Tensor<T>>> = vec![None; taps.len()];
        for term in &self.terms {
            let rows = term.rows.clone();
            if rows.end > b || rows.is_empty() {
                return Err(Error::Shape(format!("term rows {rows:?} outside batch {b}")));
            }
            let n = rows.len() as f64;
            let w = term.weight;
            match &term.kind {
                LossKind::CrossEntropy { targets } => {
                    if targets.len() != rows.len() {
                        return Err(Error::Shape("targets do not match term rows".into()));
                    }
                    let scale = T::from_f64(w / n);
                    for (k, r) in rows.clone().enumerate() {
                        let y = targets[k];
                        if y >= c {
                            return Err(Error::InvalidParameter(format!("target {y} >= {c} classes")));
                        }
                        let ls = log_softmax(logits.row(r));
                        loss += w * -ls[y].to_f64() / n;
                        let d = &mut dlogits.data_mut()[r * c..(r + 1) * c];
                        for j in 0..c {
                            let p = ls[j].exp();
                            let t = if j == y { T::one() } else { T::zero() };
                            d[j] += scale * (p - t);
                        }
                    }
                }
                LossKind::KlToReference {
                    reference,
                    temperature,
                } => {
                    if reference.rows() != rows.len() || reference.row_len() != c {
                        return Err(Error::Shape("reference logits do not match term rows".into()));
                    }
                    let tau = *temperature;
                    let inv_t = T::from_f64(1.0 / tau);
                    let scale = T::from_f64(w / (n * tau));
                    for (k, r) in rows.clone().enumerate() {
                        let zr: Vec<T> = reference.row(k).iter().map(|&v| v * inv_t).collect();
                        let z: Vec<T> = logits.row(r).iter().map(|&v| v * inv_t).collect();
                        let lp = log_softmax(&zr);
                        let lq = log_softmax(&z);
                        let mut kl = 0.0;
                        let d = &mut dlogits.data_mut()[r * c..(r + 1) * c];
                        for j in 0..c {
                            let p = lp[j].exp();
                            if p > T::zero() {
                                kl += p.to_f64() * (lp[j] - lq[j]).to_f64();
                            }
                            d[j] += scale * (lq[j].exp() - p);
                        }
                        loss += w * kl / n;
                    }
                }
                LossKind::Entropy => {
                    let scale = T::from_f64(w / n);
                    for r in rows.clone() {
                        let ls = log_softmax(logits.row(r));
                        let mut h = T::zero();
                        for &l in &ls {
                            h -= l.exp() * l;
                        }
                        loss += w * h.to_f64() / n;
                        let d = &mut dlogits.data_mut()[r * c..(r + 1) * c];
                        for j in 0..c {
                            d[j] += scale * (-(ls[j].exp()) * (ls[j] + h));
                        }
                    }
                }
                LossKind::CosineRepresentation {
                    reference,
                    rectified,
                } => {
                    check_taps(reference, taps, &rows)?;
                    let norm = w / (n * taps.len() as f64);
                    for (ti, tap) in taps.iter().enumerate() {
                        let dim = tap.row_len();
                        let dt = dtaps[ti].get_or_insert_with(|| Tensor::zeros(tap.shape().to_vec()));
                        for (k, r) in rows.clone().enumerate() {
                            let a = tap.row(r);
                            let bref = reference[ti].row(k);
                            let dot: f64 = a.iter().zip(bref).map(|(x, y)| x.to_f64() * y.to_f64()).sum();
                            let na2: f64 = a.iter().map(|x| x.to_f64() * x.to_f64()).sum();
                            let nb2: f64 = bref.iter().map(|x| x.to_f64() * x.to_f64()).sum();
                            let na = (na2 + COS_EPS).sqrt();
                            let nb = (nb2 + COS_EPS).sqrt();
                            let cos = dot / (na * nb);
                            if *rectified && cos <= 0.0 {
                                continue;
                            }
                            loss += norm * cos;
                            let d = &mut dt.data_mut()[r * dim..(r + 1) * dim];
                            for i in 0..dim {
                                let g = bref[i].to_f64() / (na * nb) - cos * a[i].to_f64() / (na * na);
                                d[i] += T::from_f64(norm * g);
                            }
                        }
                    }
                }
                LossKind::EuclideanRepresentation { reference } => {
                    check_taps(reference, taps, &rows)?;
                    let norm = w / (n * taps.len() as f64);
                    for (ti, tap) in taps.iter().enumerate() {
                        let dim = tap.row_len();
                        let dt = dtaps[ti].get_or_insert_with(|| Tensor::zeros(tap.shape().to_vec()));
                        for (k, r) in rows.clone().enumerate() {
                            let a = tap.row(r);
                            let bref = reference[ti].row(k);
                            let d = &mut dt.data_mut()[r * dim..(r + 1) * dim];
                            for i in 0..dim {
                                let diff = a[i].to_f64() - bref[i].to_f64();
                                loss += norm * diff * diff;
                                d[i] += T::from_f64(2.0 * norm * diff);
                            }
                        }
                    }
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok((T::from_f64(loss), dlogits, dtaps))
    }
}

fn check_taps<T: Real>(reference: &[Tensor<T>], taps: &[Tensor<T>], rows: &Range<usize>) -> Result<()> {
    if taps.is_empty() {
        return Err(Error::InvalidParameter("network has no representation taps".into()));
    }
    if reference.len() != taps.len() {
        return Err(Error::Shape("reference tap count".into()));
    }
    for (r, t) in reference.iter().zip(taps) {
        if r.rows() != rows.len() || r.row_len() != t.row_len() {
            return Err(Error::Shape("reference representation shape".into()));
        }
    }
    Ok(())
}

/// Per-example cross-entropy losses, `f64` for downstream statistics.
pub fn cross_entropy_per_example<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> Vec<f64> {
    targets
        .iter()
        .enumerate()
        .map(|(r, &y)| -log_softmax(logits.row(r))[y].to_f64())
        .collect()
}

/// Softmax probabilities of one row.
pub fn probabilities<T: Real>(row: &[T]) -> Vec<T> {
    let mut p = row.to_vec();
    softmax_in_place(&mut p);
    p
}
