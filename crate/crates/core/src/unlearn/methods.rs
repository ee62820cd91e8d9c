use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{MethodId, UnlearnConfig};
use crate::data::{Dataset, DatasetBundle};
use crate::error::{Error, Result};
use crate::nn::{interpolate, l2_param_distance, perturb, BnInterpolation, Checkpoint, LossKind, Mode, Network, Objective};
use crate::tensor::Tensor;
use crate::train::{adam_step, loss_and_grad, Batcher, Driver, Gradient, MetricsRecord, Monitor, OptimState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseBudget {
    pub method: MethodId,
    pub epochs: usize,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct UnlearnResult {
    /// `first+second` for two-phase runs.
    pub label: String,
    pub checkpoint: Checkpoint,
    pub records: Vec<MetricsRecord>,
    pub wall_secs: f64,
    pub phases: Vec<PhaseBudget>,
    pub pretrained_digest: String,
    pub l2_from_pretrained: f64,
}

impl UnlearnResult {
    pub fn steps(&self) -> u64 {
        self.phases.iter().map(|p| p.steps).sum()
    }
}

/// What a method may see: the models and the retain/forget sets, nothing else.
struct Ctx<'a> {
    net: &'a Network,
    cfg: &'a UnlearnConfig,
    pretrained: &'a Checkpoint,
    safeguard: Option<&'a Checkpoint>,
    retain: &'a Dataset,
    forget: &'a Dataset,
}

impl Ctx<'_> {
    fn batcher(&self, data: &Dataset, salt: u64) -> Result<Batcher> {
        Batcher::new(data.len(), self.cfg.batch_size, self.cfg.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Endless stream of mini-batches over one dataset, reshuffled every pass.
struct Cycle {
    batcher: Batcher,
    pass: u64,
    queue: VecDeque<Vec<usize>>,
}

impl Cycle {
    fn new(batcher: Batcher) -> Self {
        Self {
            batcher,
            pass: 0,
            queue: VecDeque::new(),
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.queue.is_empty() {
            self.queue = self.batcher.epoch(self.pass).into();
            self.pass += 1;
        }
        self.queue.pop_front().expect("batcher yields at least one batch")
    }
}

fn ce(net: &Network, ckpt: &Checkpoint, data: &Dataset, rows: &[usize]) -> Result<Gradient> {
    let (x, y) = data.batch(rows);
    loss_and_grad(net, ckpt, &x, &Objective::cross_entropy(&y))
}

/// Logits and taps of a frozen model in train mode (batch statistics), stats discarded.
fn reference(net: &Network, ckpt: &Checkpoint, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    let out = net.forward(ckpt, x, Mode::Train)?;
    Ok((out.logits, out.taps))
}

fn add_scaled(acc: &mut [f32], g: &[f32], w: f64) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a = (*a as f64 + w * b as f64) as f32;
    }
}

#[derive(Clone, Copy)]
enum Penalty {
    None,
    /// Gradient `c·θ`, i.e. loss `c/2·‖θ‖²`.
    L2(f64),
    /// Gradient `c·sign(θ)`, i.e. loss `c·‖θ‖₁`.
    L1(f64),
}

impl Penalty {
    fn apply(self, params: &[f32], loss: &mut f64, grad: &mut [f32]) {
        match self {
            Penalty::None => {}
            Penalty::L2(c) => {
                *loss += 0.5 * c * params.iter().map(|&p| (p as f64).powi(2)).sum::<f64>();
                add_scaled(grad, params, c);
            }
            Penalty::L1(c) => {
                *loss += c * params.iter().map(|&p| (p as f64).abs()).sum::<f64>();
                for (g, &p) in grad.iter_mut().zip(params) {
                    if p != 0.0 {
                        *g += (c * p.signum() as f64) as f32;
                    }
                }
            }
        }
    }
}

fn finetune(ctx: &Ctx, start: Checkpoint, penalty: Penalty, mon: &mut Monitor, steps: &mut u64) -> Result<Checkpoint> {
    let batcher = ctx.batcher(ctx.retain, 1)?;
    let total = (batcher.batches_per_epoch() * ctx.cfg.epochs) as u64;
    let mut driver = Driver::new(ctx.net, ctx.cfg.schedule(total));
    let mut ckpt = start;
    for epoch in 0..ctx.cfg.epochs as u64 {
        for rows in batcher.epoch(epoch) {
            mon.touch(ctx.retain, &rows);
            let mut g = ce(ctx.net, &ckpt, ctx.retain, &rows)?;
            penalty.apply(&ckpt.params, &mut g.loss, &mut g.grad);
            ckpt.bn_stats = g.stats;
            driver.apply(mon, &mut ckpt, g.loss, &g.grad)?;
        }
    }
    *steps += driver.step();
    driver.finish(mon, &ckpt)?;
    Ok(ckpt)
}

fn scrub(ctx: &Ctx, start: Checkpoint, mon: &mut Monitor, steps: &mut u64) -> Result<Checkpoint> {
    let p = &ctx.cfg.params;
    let epochs = ctx.cfg.epochs;
    let max_epochs = p.max_epochs.unwrap_or(epochs).min(epochs);
    let rb = ctx.batcher(ctx.retain, 1)?;
    let fb = ctx.batcher(ctx.forget, 2)?;
    let total = (rb.batches_per_epoch() * epochs + fb.batches_per_epoch() * max_epochs) as u64;
    let mut driver = Driver::new(ctx.net, ctx.cfg.schedule(total));
    let mut ckpt = start;
    for epoch in 0..epochs {
        if epoch < max_epochs {
            for rows in fb.epoch(epoch as u64) {
                mon.touch(ctx.forget, &rows);
                let (x, _) = ctx.forget.batch(&rows);
                let (teacher, _) = reference(ctx.net, ctx.pretrained, &x)?;
                let mut obj = Objective::default();
                obj.push(
                    -1.0,
                    0..rows.len(),
                    LossKind::KlToReference {
                        reference: &teacher,
                        temperature: p.temperature,
                    },
                );
                let g = loss_and_grad(ctx.net, &ckpt, &x, &obj)?;
                ckpt.bn_stats = g.stats;
                driver.apply(mon, &mut ckpt, g.loss, &g.grad)?;
            }
        }
        for rows in rb.epoch(epoch as u64) {
            mon.touch(ctx.retain, &rows);
            let (x, y) = ctx.retain.batch(&rows);
            let (teacher, _) = reference(ctx.net, ctx.pretrained, &x)?;
            let mut obj = Objective::default();
            obj.push(
                p.kl_weight,
                0..rows.len(),
                LossKind::KlToReference {
                    reference: &teacher,
                    temperature: p.temperature,
                },
            );
            obj.push(p.ce_weight, 0..rows.len(), LossKind::CrossEntropy { targets: &y });
            let g = loss_and_grad(ctx.net, &ckpt, &x, &obj)?;
            ckpt.bn_stats = g.stats;
            driver.apply(mon, &mut ckpt, g.loss, &g.grad)?;
        }
    }
    *steps += driver.step();
    driver.finish(mon, &ckpt)?;
    Ok(ckpt)
}

fn neggrad_plus(ctx: &Ctx, start: Checkpoint, mon: &mut Monitor, steps: &mut u64) -> Result<Checkpoint> {
    let cap = ctx.cfg.params.ascent_cap;
    let rb = ctx.batcher(ctx.retain, 1)?;
    let mut forget = Cycle::new(ctx.batcher(ctx.forget, 2)?);
    let total = (2 * rb.batches_per_epoch() * ctx.cfg.epochs) as u64;
    let mut driver = Driver::new(ctx.net, ctx.cfg.schedule(total));
    let mut ckpt = start;
    for epoch in 0..ctx.cfg.epochs as u64 {
        for rows in rb.epoch(epoch) {
            mon.touch(ctx.retain, &rows);
            let g = ce(ctx.net, &ckpt, ctx.retain, &rows)?;
            ckpt.bn_stats = g.stats;
            driver.apply(mon, &mut ckpt, g.loss, &g.grad)?;

            let frows = forget.next_batch();
            mon.touch(ctx.forget, &frows);
            let mut g = ce(ctx.net, &ckpt, ctx.forget, &frows)?;
            if g.loss > cap {
                continue;
            }
            g.grad.iter_mut().for_each(|v| *v = -*v);
            ckpt.bn_stats = g.stats;
            driver.apply(mon, &mut ckpt, -g.loss, &g.grad)?;
        }
    }
    *steps += driver.step();
    driver.finish(mon, &ckpt)?;
    Ok(ckpt)
}

fn circuit_breakers(ctx: &Ctx, start: Checkpoint, mon: &mut Monitor, steps: &mut u64) -> Result<Checkpoint> {
    let p = &ctx.cfg.params;
    let rb = ctx.batcher(ctx.retain, 1)?;
    let mut forget = Cycle::new(ctx.batcher(ctx.forget, 2)?);
    let total = (rb.batches_per_epoch() * ctx.cfg.epochs) as u64;
    let mut driver = Driver::new(ctx.net, ctx.cfg.schedule(total));
    let mut ckpt = start;
    for epoch in 0..ctx.cfg.epochs as u64 {
        for rows in rb.epoch(epoch) {
            let frows = forget.next_batch();
            mon.touch(ctx.retain, &rows);
            mon.touch(ctx.forget, &frows);
            let (xr, _) = ctx.retain.batch(&rows);
            let (xf, _) = ctx.forget.batch(&frows);
            let x = Tensor::concat_rows(&[&xr, &xf])?;
            let (nr, n) = (rows.len(), rows.len() + frows.len());
            let (_, taps) = reference(ctx.net, ctx.pretrained, &x)?;
            let r_idx: Vec<usize> = (0..nr).collect();
            let f_idx: Vec<usize> = (nr..n).collect();
            let ref_r: Vec<Tensor> = taps.iter().map(|t| t.gather_rows(&r_idx)).collect();
            let ref_f: Vec<Tensor> = taps.iter().map(|t| t.gather_rows(&f_idx)).collect();
            let mut obj = Objective::default();
            obj.push(p.c_retain, 0..nr, LossKind::EuclideanRepresentation { reference: &ref_r });
            obj.push(
                p.c_forget,
                nr..n,
                LossKind::CosineRepresentation {
                    reference: &ref_f,
                    rectified: true,
                },
            );
            let g = loss_and_grad(ctx.net, &ckpt, &x, &obj)?;
            ckpt.bn_stats = g.stats;
            driver.apply(mon, &mut ckpt, g.loss, &g.grad)?;
        }
    }
    *steps += driver.step();
    driver.finish(mon, &ckpt)?;
    Ok(ckpt)
}

/// Diagonal empirical Fisher: mean over mini-batches of the squared batch gradient.
fn fisher_diagonal(ctx: &Ctx, ckpt: &Checkpoint, data: &Dataset, salt: u64, mon: &Monitor) -> Result<Vec<f64>> {
    let batcher = ctx.batcher(data, salt)?;
    let batches = batcher.epoch(0);
    let mut f = vec![0.0f64; ckpt.params.len()];
    for rows in &batches {
        mon.touch(data, rows);
        let g = ce(ctx.net, ckpt, data, rows)?;
        for (a, &b) in f.iter_mut().zip(&g.grad) {
            *a += (b as f64).powi(2);
        }
    }
    f.iter_mut().for_each(|v| *v /= batches.len() as f64);
    Ok(f)
}

/// Per-parameter SSD dampening factors: `min(λ·F_R/F_F, 1)` where `F_F > α·F_R`, else 1.
pub fn ssd_factors(fisher_retain: &[f64], fisher_forget: &[f64], alpha: f64, lambda: f64) -> Vec<f64> {
    fisher_retain
        .iter()
        .zip(fisher_forget)
        .map(|(&r, &f)| if f > alpha * r { (lambda * r / f).min(1.0) } else { 1.0 })
        .collect()
}

fn ssd(ctx: &Ctx, start: Checkpoint, mon: &mut Monitor, steps: &mut u64) -> Result<Checkpoint> {
    let p = &ctx.cfg.params;
    let f_r = fisher_diagonal(ctx, &start, ctx.retain, 3, mon)?;
    let f_f = fisher_diagonal(ctx, &start, ctx.forget, 4, mon)?;
    let mut ckpt = start;
    for (w, s) in ckpt.params.iter_mut().zip(ssd_factors(&f_r, &f_f, p.ssd_alpha, p.ssd_lambda)) {
        *w = (*w as f64 * s) as f32;
    }
    finetune(ctx, ckpt, Penalty::None, mon, steps)
}

fn random_relabel(ctx: &Ctx, start: Checkpoint, mon: &mut Monitor, steps: &mut u64) -> Result<Checkpoint> {
    let union = Dataset::concat(&[ctx.retain, ctx.forget])?;
    let nr = ctx.retain.len();
    let classes = union.classes();
    let batcher = ctx.batcher(&union, 5)?;
    let total = (batcher.batches_per_epoch() * ctx.cfg.epochs) as u64;
    let mut driver = Driver::new(ctx.net, ctx.cfg.schedule(total));
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    rng.set_stream(6);
    let mut ckpt = start;
    for epoch in 0..ctx.cfg.epochs as u64 {
        for rows in batcher.epoch(epoch) {
            mon.touch(&union, &rows);
            let (x, mut y) = union.batch(&rows);
            for (label, &r) in y.iter_mut().zip(&rows) {
                if r >= nr {
                    *label = rng.random_range(0..classes);
                }
            }
            let g = loss_and_grad(ctx.net, &ckpt, &x, &Objective::cross_entropy(&y))?;
            ckpt.bn_stats = g.stats;
            driver.apply(mon, &mut ckpt, g.loss, &g.grad)?;
        }
    }
    *steps += driver.step();
    driver.finish(mon, &ckpt)?;
    Ok(ckpt)
}

fn perturb_then_finetune(ctx: &Ctx, start: Checkpoint, mon: &mut Monitor, steps: &mut u64) -> Result<Checkpoint> {
    let kind = ctx.cfg.perturbation()?;
    let noisy = perturb(&start, kind, ctx.cfg.seed, None)?;
    finetune(ctx, noisy, Penalty::None, mon, steps)
}

/// Gradient of `−λ·‖θ − θ_ref‖/√n`; zero at `θ = θ_ref`. Returns the term's value.
pub fn distance_push(params: &[f32], reference: &[f32], lambda: f64, grad: &mut [f32]) -> f64 {
    let n = params.len() as f64;
    let norm = params
        .iter()
        .zip(reference)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > 0.0 {
        let scale = lambda / (n.sqrt() * norm);
        for ((g, &a), &b) in grad.iter_mut().zip(params).zip(reference) {
            *g = (*g as f64 - scale * (a as f64 - b as f64)) as f32;
        }
    }
    -lambda * norm / n.sqrt()
}

fn weight_dist_reg(ctx: &Ctx, start: Checkpoint, mon: &mut Monitor, steps: &mut u64) -> Result<Checkpoint> {
    let lambda = ctx.cfg.params.lambda_dist;
    let batcher = ctx.batcher(ctx.retain, 1)?;
    let total = (batcher.batches_per_epoch() * ctx.cfg.epochs) as u64;
    let mut driver = Driver::new(ctx.net, ctx.cfg.schedule(total));
    let mut ckpt = start;
    for epoch in 0..ctx.cfg.epochs as u64 {
        for rows in batcher.epoch(epoch) {
            mon.touch(ctx.retain, &rows);
            let mut g = ce(ctx.net, &ckpt, ctx.retain, &rows)?;
            g.loss += distance_push(&ckpt.params, &ctx.pretrained.params, lambda, &mut g.grad);
            ckpt.bn_stats = g.stats;
            driver.apply(mon, &mut ckpt, g.loss, &g.grad)?;
        }
    }
    *steps += driver.step();
    driver.finish(mon, &ckpt)?;
    Ok(ckpt)
}

fn cbft(ctx: &Ctx, start: Checkpoint, mon: &mut Monitor, steps: &mut u64) -> Result<Checkpoint> {
    let p = &ctx.cfg.params;
    let union = Dataset::concat(&[ctx.retain, ctx.forget])?;
    let rb = ctx.batcher(ctx.retain, 1)?;
    let mut mid_batches = Cycle::new(ctx.batcher(&union, 7)?);
    let total = (rb.batches_per_epoch() * ctx.cfg.epochs) as u64;
    let mut driver = Driver::new(ctx.net, ctx.cfg.schedule(total));
    let mut ckpt = start;
    for epoch in 0..ctx.cfg.epochs as u64 {
        for rows in rb.epoch(epoch) {
            mon.touch(ctx.retain, &rows);
            let mut g = ce(ctx.net, &ckpt, ctx.retain, &rows)?;
            let mrows = mid_batches.next_batch();
            mon.touch(&union, &mrows);
            let mid = interpolate(ctx.net, ctx.pretrained, &ckpt, 0.5, BnInterpolation::Variance)?;
            let gm = ce(ctx.net, &mid, &union, &mrows)?;
            if gm.loss <= p.loss_cap {
                g.loss -= p.lambda_mid * gm.loss;
                add_scaled(&mut g.grad, &gm.grad, -0.5 * p.lambda_mid);
            }
            ckpt.bn_stats = g.stats;
            driver.apply(mon, &mut ckpt, g.loss, &g.grad)?;
        }
    }
    *steps += driver.step();
    driver.finish(mon, &ckpt)?;
    Ok(ckpt)
}

fn tar(ctx: &Ctx, start: Checkpoint, mon: &mut Monitor, steps: &mut u64) -> Result<Checkpoint> {
    let p = &ctx.cfg.params;
    let safeguard = ctx
        .safeguard
        .ok_or_else(|| Error::InvalidParameter("tar needs an initial safeguard".into()))?;
    let inner_lr = p.inner_lr.unwrap_or(ctx.cfg.lr);
    let rb = ctx.batcher(ctx.retain, 1)?;
    let mut inner_batches = Cycle::new(ctx.batcher(ctx.retain, 8)?);
    let mut forget = Cycle::new(ctx.batcher(ctx.forget, 2)?);
    let total = (rb.batches_per_epoch() * ctx.cfg.epochs) as u64;
    let mut driver = Driver::new(ctx.net, ctx.cfg.schedule(total));
    let mut ckpt = start;
    for epoch in 0..ctx.cfg.epochs as u64 {
        for rows in rb.epoch(epoch) {
            // Simulated adversary: K retain fine-tuning steps from the current point.
            let mut adapted = ckpt.clone();
            let mut inner = OptimState::new(adapted.params.len());
            for _ in 0..p.inner_steps {
                let irows = inner_batches.next_batch();
                mon.touch(ctx.retain, &irows);
                let g = ce(ctx.net, &adapted, ctx.retain, &irows)?;
                adapted.bn_stats = g.stats;
                adam_step(&mut inner, &mut adapted.params, &g.grad, inner_lr, 0.0)?;
            }
            let frows = forget.next_batch();
            mon.touch(ctx.forget, &frows);
            let (xf, _) = ctx.forget.batch(&frows);
            let ent = loss_and_grad(
                ctx.net,
                &adapted,
                &xf,
                &Objective {
                    terms: vec![crate::nn::Term {
                        weight: -p.lambda_entropy,
                        rows: 0..frows.len(),
                        kind: LossKind::Entropy,
                    }],
                },
            )?;

            mon.touch(ctx.retain, &rows);
            let (xr, _) = ctx.retain.batch(&rows);
            let (_, ref_taps) = reference(ctx.net, safeguard, &xr)?;
            let mut obj = Objective::default();
            obj.push(p.lambda_align, 0..rows.len(), LossKind::EuclideanRepresentation { reference: &ref_taps });
            let mut g = loss_and_grad(ctx.net, &ckpt, &xr, &obj)?;
            add_scaled(&mut g.grad, &ent.grad, 1.0);
            g.loss += ent.loss;
            ckpt.bn_stats = g.stats;
            driver.apply(mon, &mut ckpt, g.loss, &g.grad)?;
        }
    }
    *steps += driver.step();
    driver.finish(mon, &ckpt)?;
    Ok(ckpt)
}

fn run_one(
    net: &Network,
    pretrained: &Checkpoint,
    start: Checkpoint,
    safeguard: Option<&Checkpoint>,
    bundle: &DatasetBundle,
    cfg: &UnlearnConfig,
    mon: &mut Monitor,
) -> Result<(Checkpoint, u64)> {
    cfg.validate()?;
    net.check(&start)?;
    let mut steps = 0;
    if cfg.epochs == 0 {
        return Ok((start, 0));
    }
    let ctx = Ctx {
        net,
        cfg,
        pretrained,
        safeguard,
        retain: &bundle.retain,
        forget: &bundle.forget,
    };
    let p = &cfg.params;
    let out = match cfg.method {
        MethodId::Scrub => scrub(&ctx, start, mon, &mut steps)?,
        MethodId::CircuitBreakers => circuit_breakers(&ctx, start, mon, &mut steps)?,
        MethodId::NeggradPlus => neggrad_plus(&ctx, start, mon, &mut steps)?,
        MethodId::CatastrophicForgetting => finetune(&ctx, start, Penalty::L2(p.penalty), mon, &mut steps)?,
        MethodId::L1Sparse => finetune(&ctx, start, Penalty::L1(p.penalty), mon, &mut steps)?,
        MethodId::Ssd => ssd(&ctx, start, mon, &mut steps)?,
        MethodId::RandomRelabel => random_relabel(&ctx, start, mon, &mut steps)?,
        MethodId::WeightAttenuation | MethodId::WeightDropout | MethodId::WeightDistortion => {
            perturb_then_finetune(&ctx, start, mon, &mut steps)?
        }
        MethodId::WeightDistReg => weight_dist_reg(&ctx, start, mon, &mut steps)?,
        MethodId::Cbft => cbft(&ctx, start, mon, &mut steps)?,
        MethodId::Tar => tar(&ctx, start, mon, &mut steps)?,
    };
    Ok((out, steps))
}

fn finish_result(
    label: String,
    pretrained: &Checkpoint,
    checkpoint: Checkpoint,
    records: Vec<MetricsRecord>,
    started: Instant,
    phases: Vec<PhaseBudget>,
) -> Result<UnlearnResult> {
    let l2_from_pretrained = l2_param_distance(pretrained, &checkpoint)?;
    Ok(UnlearnResult {
        label,
        checkpoint,
        records,
        wall_secs: started.elapsed().as_secs_f64(),
        phases,
        pretrained_digest: pretrained.digest(),
        l2_from_pretrained,
    })
}

/// Runs one unlearning method on the pretrained model. TAR, which needs an
/// initial safeguard, runs as SCRUB followed by TAR with the same shared budget.
pub fn unlearn(
    net: &Network,
    pretrained: &Checkpoint,
    bundle: &DatasetBundle,
    cfg: &UnlearnConfig,
    mon: &mut Monitor,
) -> Result<UnlearnResult> {
    if cfg.method == MethodId::Tar {
        let first = UnlearnConfig {
            method: MethodId::Scrub,
            ..cfg.clone()
        };
        let mut res = compose_two_phase(net, pretrained, bundle, &first, cfg, mon)?;
        res.label = MethodId::Tar.to_string();
        return Ok(res);
    }
    let started = Instant::now();
    let first_record = mon.records().len();
    let (ckpt, steps) = run_one(net, pretrained, pretrained.clone(), None, bundle, cfg, mon)?;
    let records = mon.records()[first_record..].to_vec();
    let phases = vec![PhaseBudget {
        method: cfg.method,
        epochs: cfg.epochs,
        steps,
    }];
    finish_result(cfg.method.to_string(), pretrained, ckpt, records, started, phases)
}

/// `first` on the pretrained model, then `second` from its output. The first
/// result is TAR's initial safeguard; distance-based terms keep referring to the
/// pretrained model.
pub fn compose_two_phase(
    net: &Network,
    pretrained: &Checkpoint,
    bundle: &DatasetBundle,
    first: &UnlearnConfig,
    second: &UnlearnConfig,
    mon: &mut Monitor,
) -> Result<UnlearnResult> {
    if first.method == MethodId::Tar {
        return Err(Error::InvalidParameter("tar cannot be the first phase".into()));
    }
    let started = Instant::now();
    let first_record = mon.records().len();
    let base = mon.phase.clone();
    mon.set_phase(&format!("{base}.1"));
    let (mid, s1) = run_one(net, pretrained, pretrained.clone(), None, bundle, first, mon)?;
    mon.set_phase(&format!("{base}.2"));
    let mut second = second.clone();
    if second.method == MethodId::Tar {
        second.lr = second.params.tar_lr.unwrap_or(second.lr);
    }
    let outcome = run_one(net, pretrained, mid.clone(), Some(&mid), bundle, &second, mon);
    mon.set_phase(&base);
    let (out, s2) = outcome?;
    let records = mon.records()[first_record..].to_vec();
    let phases = vec![
        PhaseBudget {
            method: first.method,
            epochs: first.epochs,
            steps: s1,
        },
        PhaseBudget {
            method: second.method,
            epochs: second.epochs,
            steps: s2,
        },
    ];
    finish_result(format!("{}+{}", first.method, second.method), pretrained, out, records, started, phases)
}
