//! Exact forward and backward passes over the fixed layer set.

use super::checkpoint::Checkpoint;
use super::loss::Objective;
use super::spec::{Layer, Network};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics updated in the trace.
    Train,
    /// Running statistics; no trace.
    Eval,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Everything the backward pass needs from a train-mode forward.
#[derive(Debug, Clone)]
pub struct ForwardTrace<'a, T> {
    params: &'a [T],
    spec_hash: String,
    batch: usize,
    /// Input activation of every layer.
    inputs: Vec<Vec<T>>,
    bn: Vec<Option<BnCache<T>>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
    /// Running statistics after this batch's momentum update.
    pub updated_stats: Vec<T>,
    pub logits: Tensor<T>,
    pub taps: Vec<Tensor<T>>,
}

impl<T> ForwardTrace<'_, T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<'a, T> {
    pub logits: Tensor<T>,
    pub taps: Vec<Tensor<T>>,
    pub trace: Option<ForwardTrace<'a, T>>,
}

impl Network {
    pub fn forward<'a, T: Real>(
        &self,
        ckpt: &'a Checkpoint<T>,
        batch: &Tensor<T>,
        mode: Mode,
    ) -> Result<ForwardOutput<'a, T>> {
        if ckpt.spec_hash != self.spec_hash() {
            return Err(Error::SpecMismatch {
                expected: self.spec_hash().to_string(),
                found: ckpt.spec_hash.clone(),
            });
        }
        if ckpt.params.len() != self.n_params() || ckpt.bn_stats.len() != self.n_stats() {
            return Err(Error::Shape("checkpoint does not fit network".into()));
        }
        if batch.shape()[1..] != self.spec().input_shape[..] {
            return Err(Error::Shape(format!(
                "batch {:?} does not match input {:?}",
                batch.shape(),
                self.spec().input_shape
            )));
        }
        let b = batch.rows();
        let train = mode == Mode::Train;
        let params = &ckpt.params[..];
        let mut stats = ckpt.bn_stats.clone();
        let n_layers = self.plans.len();
        let mut inputs: Vec<Vec<T>> = Vec::with_capacity(n_layers);
        let mut bn: Vec<Option<BnCache<T>>> = vec![None; n_layers];
        let mut pool_argmax: Vec<Option<Vec<usize>>> = vec![None; n_layers];
        let mut taps = Vec::new();
        let mut x = batch.data().to_vec();

        for (li, plan) in self.plans.iter().enumerate() {
            let p = plan.param_offset;
            let out = match plan.layer {
                Layer::Dense { inputs: ni, outputs: no } => {
                    let w = &params[p..p + ni * no];
                    let bias = &params[p + ni * no..p + ni * no + no];
                    dense_forward(&x, w, bias, b, ni, no)
                }
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let (h, wd) = (plan.in_shape[1], plan.in_shape[2]);
                    let nw = out_channels * in_channels * kernel * kernel;
                    conv_forward(
                        &x,
                        &params[p..p + nw],
                        &params[p + nw..p + nw + out_channels],
                        b,
                        in_channels,
                        out_channels,
                        kernel,
                        h,
                        wd,
                    )
                }
                Layer::BatchNorm { features } => {
                    let spatial = plan.in_len() / features;
                    let gamma = &params[p..p + features];
                    let beta = &params[p + features..p + 2 * features];
                    let so = plan.stat_offset;
                    if train {
                        let (y, cache, mean, var_unbiased) =
                            bn_train_forward(&x, gamma, beta, b, features, spatial, self.bn_eps)?;
                        let m = T::from_f64(self.bn_momentum);
                        for c in 0..features {
                            stats[so + c] = (T::one() - m) * stats[so + c] + m * mean[c];
                            stats[so + features + c] =
                                (T::one() - m) * stats[so + features + c] + m * var_unbiased[c];
                        }
                        bn[li] = Some(cache);
                        y
                    } else {
                        bn_eval_forward(
                            &x,
                            gamma,
                            beta,
                            &ckpt.bn_stats[so..so + features],
                            &ckpt.bn_stats[so + features..so + 2 * features],
                            b,
                            features,
                            spatial,
                            self.bn_eps,
                        )
                    }
                }
                Layer::Relu => x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
                Layer::MaxPool2d { size } => {
                    let (y, idx) = pool_forward(&x, b, &plan.in_shape, size);
                    if train {
                        pool_argmax[li] = Some(idx);
                    }
                    y
                }
                Layer::Flatten => x.clone(),
            };
            let input = std::mem::replace(&mut x, out);
            if train {
                inputs.push(input);
            }
            if self.spec().taps.contains(&li) {
                let mut shape = vec![b];
                shape.extend_from_slice(&plan.out_shape);
                taps.push(Tensor::new(shape, x.clone())?);
            }
        }
        let logits = Tensor::new(vec![b, self.classes()], x)?;
        if !logits.all_finite() {
            return Err(Error::NonFinite("forward activations".into()));
        }
        let trace = train.then(|| ForwardTrace {
            params,
            spec_hash: ckpt.spec_hash.clone(),
            batch: b,
            inputs,
            bn,
            pool_argmax,
            updated_stats: stats,
            logits: logits.clone(),
            taps: taps.clone(),
        });
        Ok(ForwardOutput {
            logits,
            taps,
            trace,
        })
    }

    /// Loss value and gradient with respect to every trainable parameter.
    pub fn backward<T: Real>(
        &self,
        trace: &ForwardTrace<'_, T>,
        objective: &Objective<'_, T>,
    ) -> Result<(T, Vec<T>)> {
        if trace.spec_hash != self.spec_hash() {
            return Err(Error::SpecMismatch {
                expected: self.spec_hash().to_string(),
                found: trace.spec_hash.clone(),
            });
        }
        let (loss, dlogits, dtaps) = objective.evaluate(&trace.logits, &trace.taps)?;
        let grad = self.backward_from(trace, dlogits.data(), &dtaps)?;
        Ok((loss, grad))
    }

    /// Backpropagates explicit output and tap gradients.
    pub fn backward_from<T: Real>(
        &self,
        trace: &ForwardTrace<'_, T>,
        dlogits: &[T],
        dtaps: &[Option<Tensor<T>>],
    ) -> Result<Vec<T>> {
        let b = trace.batch;
        if dlogits.len() != b * self.classes() {
            return Err(Error::Shape("logit gradient".into()));
        }
        let params = trace.params;
        let mut grad = vec![T::zero(); self.n_params()];
        let mut g = dlogits.to_vec();
        let taps = &self.spec().taps;
        for (li, plan) in self.plans.iter().enumerate().rev() {
            if let Some(ti) = taps.iter().position(|&t| t == li) {
                if let Some(Some(dt)) = dtaps.get(ti) {
                    for (a, &d) in g.iter_mut().zip(dt.data()) {
                        *a += d;
                    }
                }
            }
            let x = &trace.inputs[li];
            let p = plan.param_offset;
            g = match plan.layer {
                Layer::Dense { inputs: ni, outputs: no } => {
                    let w = &params[p..p + ni * no];
                    let (gw, gb) = grad[p..p + ni * no + no].split_at_mut(ni * no);
                    dense_backward(x, w, &g, gw, gb, b, ni, no)
                }
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let (h, wd) = (plan.in_shape[1], plan.in_shape[2]);
                    let nw = out_channels * in_channels * kernel * kernel;
                    let (gw, gb) = grad[p..p + nw + out_channels].split_at_mut(nw);
                    conv_backward(
                        x,
                        &params[p..p + nw],
                        &g,
                        gw,
                        gb,
                        b,
                        in_channels,
                        out_channels,
                        kernel,
                        h,
                        wd,
                    )
                }
                Layer::BatchNorm { features } => {
                    let cache = trace.bn[li]
                        .as_ref()
                        .ok_or_else(|| Error::InvalidParameter("trace lacks BN cache".into()))?;
                    let spatial = plan.in_len() / features;
                    let gamma = &params[p..p + features];
                    let (gg, gbeta) = grad[p..p + 2 * features].split_at_mut(features);
                    bn_backward(cache, gamma, &g, gg, gbeta, b, features, spatial)
                }
                Layer::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                    .collect(),
                Layer::MaxPool2d { .. } => {
                    let idx = trace.pool_argmax[li]
                        .as_ref()
                        .ok_or_else(|| Error::InvalidParameter("trace lacks pool cache".into()))?;
                    let mut dx = vec![T::zero(); x.len()];
                    for (o, &i) in idx.iter().enumerate() {
                        dx[i] += g[o];
                    }
                    dx
                }
                Layer::Flatten => g,
            };
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok(grad)
    }

    /// Eval-mode logits for a whole tensor, processed in chunks.
    pub fn predict<T: Real>(&self, ckpt: &Checkpoint<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        const CHUNK: usize = 512;
        let n = x.rows();
        if n <= CHUNK {
            return Ok(self.forward(ckpt, x, Mode::Eval)?.logits);
        }
        let mut data = Vec::with_capacity(n * self.classes());
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(CHUNK) {
            let part = x.gather_rows(chunk);
            data.extend(self.forward(ckpt, &part, Mode::Eval)?.logits.into_data());
        }
        Tensor::new(vec![n, self.classes()], data)
    }
}

fn dense_forward<T: Real>(x: &[T], w: &[T], bias: &[T], b: usize, ni: usize, no: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(b * no);
    for r in 0..b {
        let xr = &x[r * ni..(r + 1) * ni];
        for o in 0..no {
            let wr = &w[o * ni..(o + 1) * ni];
            let mut acc = bias[o];
            for (a, c) in wr.iter().zip(xr) {
                acc += *a * *c;
            }
            out.push(acc);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Real>(
    x: &[T],
    w: &[T],
    g: &[T],
    gw: &mut [T],
    gb: &mut [T],
    b: usize,
    ni: usize,
    no: usize,
) -> Vec<T> {
    let mut dx = vec![T::zero(); b * ni];
    for r in 0..b {
        let xr = &x[r * ni..(r + 1) * ni];
        let dxr = &mut dx[r * ni..(r + 1) * ni];
        for o in 0..no {
            let d = g[r * no + o];
            if d == T::zero() {
                continue;
            }
            gb[o] += d;
            let gwr = &mut gw[o * ni..(o + 1) * ni];
            let wr = &w[o * ni..(o + 1) * ni];
            for i in 0..ni {
                gwr[i] += d * xr[i];
                dxr[i] += d * wr[i];
            }
        }
    }
    dx
}

#[allow(clippy::too_many_arguments)]
fn conv_forward<T: Real>(
    x: &[T],
    w: &[T],
    bias: &[T],
    b: usize,
    ci: usize,
    co: usize,
    k: usize,
    h: usize,
    wd: usize,
) -> Vec<T> {
    let pad = (k / 2) as isize;
    let plane = h * wd;
    let mut out = vec![T::zero(); b * co * plane];
    for r in 0..b {
        let xr = &x[r * ci * plane..(r + 1) * ci * plane];
        for oc in 0..co {
            let o = &mut out[(r * co + oc) * plane..(r * co + oc + 1) * plane];
            o.fill(bias[oc]);
            for ic in 0..ci {
                let xin = &xr[ic * plane..(ic + 1) * plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((oc * ci + ic) * k + ky) * k + kx];
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        for y in 0..h {
                            let iy = y as isize + dy;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for xx in 0..wd {
                                let ix = xx as isize + dx;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                o[y * wd + xx] += wv * xin[iy as usize * wd + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    x: &[T],
    w: &[T],
    g: &[T],
    gw: &mut [T],
    gb: &mut [T],
    b: usize,
    ci: usize,
    co: usize,
    k: usize,
    h: usize,
    wd: usize,
) -> Vec<T> {
    let pad = (k / 2) as isize;
    let plane = h * wd;
    let mut dxv = vec![T::zero(); b * ci * plane];
    for r in 0..b {
        for oc in 0..co {
            let go = &g[(r * co + oc) * plane..(r * co + oc + 1) * plane];
            gb[oc] += go.iter().copied().sum::<T>();
            for ic in 0..ci {
                let xin = &x[(r * ci + ic) * plane..(r * ci + ic + 1) * plane];
                let din = &mut dxv[(r * ci + ic) * plane..(r * ci + ic + 1) * plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let wi = ((oc * ci + ic) * k + ky) * k + kx;
                        let wv = w[wi];
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        let mut acc = T::zero();
                        for y in 0..h {
                            let iy = y as isize + dy;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for xx in 0..wd {
                                let ix = xx as isize + dx;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let src = iy as usize * wd + ix as usize;
                                let d = go[y * wd + xx];
                                acc += d * xin[src];
                                din[src] += d * wv;
                            }
                        }
                        gw[wi] += acc;
                    }
                }
            }
        }
    }
    dxv
}

type BnTrainOut<T> = (Vec<T>, BnCache<T>, Vec<T>, Vec<T>);

fn bn_train_forward<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    b: usize,
    c: usize,
    s: usize,
    eps: f64,
) -> Result<BnTrainOut<T>> {
    let n = b * s;
    if n < 2 {
        return Err(Error::Shape(
            "train-mode batch norm needs more than one value per channel".into(),
        ));
    }
    let nf = T::from_f64(n as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for r in 0..b {
        for ch in 0..c {
            let base = (r * c + ch) * s;
            for v in &x[base..base + s] {
                mean[ch] += *v;
            }
        }
    }
    for m in mean.iter_mut() {
        *m /= nf;
    }
    for r in 0..b {
        for ch in 0..c {
            let base = (r * c + ch) * s;
            for v in &x[base..base + s] {
                let d = *v - mean[ch];
                var[ch] += d * d;
            }
        }
    }
    for v in var.iter_mut() {
        *v /= nf;
    }
    let eps = T::from_f64(eps);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for r in 0..b {
        for ch in 0..c {
            let base = (r * c + ch) * s;
            for i in base..base + s {
                let h = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    let unbiased = T::from_f64(n as f64 / (n as f64 - 1.0));
    let var_unbiased = var.iter().map(|&v| v * unbiased).collect();
    Ok((y, BnCache { xhat, inv_std }, mean, var_unbiased))
}

#[allow(clippy::too_many_arguments)]
fn bn_eval_forward<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    b: usize,
    c: usize,
    s: usize,
    eps: f64,
) -> Vec<T> {
    let eps = T::from_f64(eps);
    let scale: Vec<T> = (0..c).map(|ch| gamma[ch] / (var[ch] + eps).sqrt()).collect();
    let mut y = vec![T::zero(); x.len()];
    for r in 0..b {
        for ch in 0..c {
            let base = (r * c + ch) * s;
            for i in base..base + s {
                y[i] = (x[i] - mean[ch]) * scale[ch] + beta[ch];
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn bn_backward<T: Real>(
    cache: &BnCache<T>,
    gamma: &[T],
    g: &[T],
    ggamma: &mut [T],
    gbeta: &mut [T],
    b: usize,
    c: usize,
    s: usize,
) -> Vec<T> {
    let nf = T::from_f64((b * s) as f64);
    let mut sum_d = vec![T::zero(); c];
    let mut sum_dx = vec![T::zero(); c];
    for r in 0..b {
        for ch in 0..c {
            let base = (r * c + ch) * s;
            for i in base..base + s {
                gbeta[ch] += g[i];
                ggamma[ch] += g[i] * cache.xhat[i];
                let dxhat = g[i] * gamma[ch];
                sum_d[ch] += dxhat;
                sum_dx[ch] += dxhat * cache.xhat[i];
            }
        }
    }
    let mut dx = vec![T::zero(); g.len()];
    for r in 0..b {
        for ch in 0..c {
            let base = (r * c + ch) * s;
            let k = cache.inv_std[ch] / nf;
            for i in base..base + s {
                let dxhat = g[i] * gamma[ch];
                dx[i] = k * (nf * dxhat - sum_d[ch] - cache.xhat[i] * sum_dx[ch]);
            }
        }
    }
    dx
}

fn pool_forward<T: Real>(x: &[T], b: usize, in_shape: &[usize], size: usize) -> (Vec<T>, Vec<usize>) {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut idx = Vec::with_capacity(b * c * oh * ow);
    for r in 0..b {
        for ch in 0..c {
            let base = (r * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * size * w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let i = base + (oy * size + dy) * w + ox * size + dx;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(x[best]);
                    idx.push(best);
                }
            }
        }
    }
    (out, idx)
}
