use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use unlearnlab_core::attack::{mia_balanced_loss_threshold, quantization_sweep, relearn, split_test, RelearnConfig, ReminderSource};
use unlearnlab_core::audit::AccessLog;
use unlearnlab_core::data::{
    build_bundle, load_idx, TEST_ID_OFFSET, make_synthetic_splits, score_typicality_holdout, Dataset, DatasetBundle, TypicalityMethod,
    TypicalityScores,
};
use unlearnlab_core::diagnostics::{barrier_height, distance_report, lmc_curve, spearman, write_lmc_csv};
use unlearnlab_core::nn::{Checkpoint, ModelSpec, Network};
use unlearnlab_core::train::{accuracy, retrain_from_scratch, train, MetricsRecord, Monitor};
use unlearnlab_core::unlearn::{compose_two_phase, unlearn, MethodId, UnlearnConfig, UnlearnResult};

use crate::config::{DatasetKind, ExperimentConfig, MethodEntry, ModelKind, ResolvedMethod};
use crate::error::{LabError, Result};
use crate::manifest::{RunManifest, StageEntry, Store};
use crate::plots::emit_plots;
use crate::report::*;

pub const PRETRAINED: &str = "pretrained";
pub const RETRAIN: &str = "retrain";

/// How far a run goes. Later stages imply the earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Until {
    Pretrain,
    Unlearn,
    Attack,
    Diagnose,
    Full,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub threads: usize,
    pub until: Until,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            until: Until::Full,
        }
    }
}

struct Data {
    train: Dataset,
    test: Dataset,
    train_scores: TypicalityScores,
    test_scores: Option<TypicalityScores>,
    /// One bundle per relearn size; retain and forget sets agree across them.
    bundles: BTreeMap<usize, DatasetBundle>,
}

/// A loaded run directory: config, network, data and the stage store.
pub struct Lab {
    pub cfg: ExperimentConfig,
    pub net: Network,
    data: Data,
    pub store: Store,
    audit: AccessLog,
}

fn io<T>(stage: &str, r: unlearnlab_core::Result<T>) -> Result<T> {
    r.map_err(|e| LabError::stage(stage, e))
}

fn ids(d: &Dataset) -> HashSet<u64> {
    d.ids().iter().copied().collect()
}

impl Lab {
    pub fn open(cfg: &ExperimentConfig, out: &Path) -> Result<Self> {
        cfg.validate()?;
        let store = Store::open(out, &cfg.hash(), cfg.seed)?;
        let audit = AccessLog::new();
        let (train_set, test, truth, test_truth) = match cfg.dataset.kind {
            DatasetKind::Synthetic => {
                let s = io("data", make_synthetic_splits(&cfg.synthetic_config())).map_err(|e| match e {
                    LabError::Stage { source, .. } => LabError::Config(source.to_string()),
                    e => e,
                })?;
                (s.train, s.test, Some(s.train_typicality), Some(s.test_typicality))
            }
            DatasetKind::Idx => {
                let f = cfg.dataset.idx.as_ref().expect("validated idx block");
                let tr = io("data", load_idx(&f.train_images, &f.train_labels, f.classes))?;
                let te = io("data", load_idx(&f.test_images, &f.test_labels, f.classes))?;
                // Test ids live above the training range, as for synthetic data.
                let shifted = te.ids().iter().map(|&i| i + TEST_ID_OFFSET).collect();
                let te = io(
                    "data",
                    Dataset::new(te.inputs().clone(), te.labels().to_vec(), shifted, te.classes(), te.provenance()),
                )?;
                (tr, te, None, None)
            }
        };
        let spec = match cfg.model {
            ModelKind::MlpTiny => ModelSpec::mlp_tiny(train_set.input_shape().iter().product(), train_set.classes()),
            ModelKind::ConvTiny => {
                let s = train_set.input_shape();
                ModelSpec::conv_tiny(s[0], s[1], s[2], train_set.classes())
            }
        };
        let net = io("model", Network::new(spec))?;
        let mut lab = Lab {
            cfg: cfg.clone(),
            net,
            data: Data {
                train: train_set,
                test,
                train_scores: match truth {
                    Some(t) => t,
                    None => io("data", TypicalityScores::new(vec![], vec![], TypicalityMethod::HoldoutConsistency))?,
                },
                test_scores: test_truth,
                bundles: BTreeMap::new(),
            },
            store,
            audit,
        };
        if cfg.dataset.typicality == TypicalityMethod::HoldoutConsistency {
            lab.data.train_scores = lab.typicality()?;
            lab.data.test_scores = None;
        }
        let spec = cfg.forget_spec();
        let mut ns = cfg.n_relearn();
        ns.push(0);
        for n in ns {
            let b = build_bundle(&lab.data.train, &lab.data.test, &lab.data.train_scores, &spec, n, cfg.seed)
                .map_err(|e| LabError::Config(format!("forget set: {e}")))?;
            lab.data.bundles.insert(n, b);
        }
        Ok(lab)
    }

    pub fn bundle(&self, n: usize) -> &DatasetBundle {
        &self.data.bundles[&n]
    }

    fn typicality(&self) -> Result<TypicalityScores> {
        const STAGE: &str = "typicality";
        let rel = "data/typicality.json";
        let path = self.store.root.join(rel);
        if self.store.entry(STAGE).is_some() && path.is_file() {
            return Ok(serde_json::from_slice(&fs::read(&path)?)?);
        }
        let mut tc = self.cfg.pretrain_config();
        tc.epochs = self.cfg.dataset.typicality_epochs;
        eprintln!("[{STAGE}] scoring {} examples with {} folds", self.data.train.len(), self.cfg.dataset.folds);
        let scores = io(
            STAGE,
            score_typicality_holdout(&self.net, &self.data.train, &tc, self.cfg.dataset.folds, self.cfg.seed),
        )?;
        fs::create_dir_all(path.parent().expect("data dir"))?;
        fs::write(&path, serde_json::to_vec(&scores)?)?;
        self.store.commit(STAGE, &self.net, None, &[], StageEntry::default())?;
        Ok(scores)
    }

    /// Confirms every access logged under `stage` (or its sub-phases) is allowed.
    fn verify(&self, stage: &str, allowed: &HashSet<u64>) -> Result<usize> {
        let mut touched = 0;
        for s in self.audit.stages() {
            if s == stage || s.starts_with(&format!("{stage}.")) {
                self.audit.verify(&s, allowed).map_err(|e| LabError::stage(stage, e))?;
                touched += self.audit.touched(&s).len();
            }
        }
        Ok(touched)
    }

    fn init(&self) -> Result<Checkpoint> {
        const STAGE: &str = "init";
        if let Some((_, c)) = self.store.cached_checkpoint(STAGE)? {
            return Ok(c);
        }
        let c = self.net.init::<f32>(self.cfg.seed);
        self.store.commit(STAGE, &self.net, Some(&c), &[], StageEntry::default())?;
        Ok(c)
    }

    fn pretrain(&self, init: &Checkpoint) -> Result<Checkpoint> {
        const STAGE: &str = PRETRAINED;
        if let Some((_, c)) = self.store.cached_checkpoint(STAGE)? {
            return Ok(c);
        }
        eprintln!("[{STAGE}] training on {} examples", self.data.train.len());
        let b0 = self.bundle(0);
        let mut mon = Monitor::silent(STAGE).probe(&b0.test, Some(&b0.forget)).audited(&self.audit);
        let (c, recs) = io(STAGE, train(&self.net, init, &self.data.train, &self.cfg.pretrain_config(), &mut mon))?;
        let touched = self.verify(STAGE, &ids(&self.data.train))?;
        let entry = StageEntry {
            audited_ids: touched,
            steps: Some(c.step_count),
            ..Default::default()
        };
        self.store.commit(STAGE, &self.net, Some(&c), &recs, entry)?;
        Ok(c)
    }

    fn retrain(&self, init: &Checkpoint) -> Result<Checkpoint> {
        const STAGE: &str = RETRAIN;
        if let Some((_, c)) = self.store.cached_checkpoint(STAGE)? {
            return Ok(c);
        }
        eprintln!("[{STAGE}] training on the retain set");
        let b0 = self.bundle(0);
        let mut mon = Monitor::silent(STAGE).probe(&b0.test, Some(&b0.forget)).audited(&self.audit);
        let c = io(STAGE, retrain_from_scratch(&self.net, init, b0, &self.cfg.pretrain_config(), &mut mon))?;
        let recs = mon.take_records();
        let touched = self.verify(STAGE, &ids(&b0.retain))?;
        let entry = StageEntry {
            audited_ids: touched,
            steps: Some(c.step_count),
            ..Default::default()
        };
        self.store.commit(STAGE, &self.net, Some(&c), &recs, entry)?;
        Ok(c)
    }

    fn unlearn_allowed(&self) -> HashSet<u64> {
        let b0 = self.bundle(0);
        ids(&b0.retain).union(&ids(&b0.forget)).copied().collect()
    }

    /// Runs (or reloads) one unlearning stage.
    fn unlearn_stage(
        &self,
        stage: &str,
        pretrained: &Checkpoint,
        first: &UnlearnConfig,
        second: Option<&UnlearnConfig>,
    ) -> Result<(Checkpoint, StageEntry)> {
        if let Some((e, c)) = self.store.cached_checkpoint(stage)? {
            return Ok((c, e));
        }
        eprintln!("[{stage}] unlearning");
        let b0 = self.bundle(0);
        let mut mon = Monitor::silent(stage).probe(&b0.test, Some(b0.forget_eval())).audited(&self.audit);
        let res: UnlearnResult = io(
            stage,
            match second {
                Some(s) => compose_two_phase(&self.net, pretrained, b0, first, s, &mut mon),
                None => unlearn(&self.net, pretrained, b0, first, &mut mon),
            },
        )?;
        let touched = self.verify(stage, &self.unlearn_allowed())?;
        let entry = StageEntry {
            audited_ids: touched,
            l2_from_pretrained: Some(res.l2_from_pretrained),
            steps: Some(res.steps()),
            ..Default::default()
        };
        let entry = self.store.commit(stage, &self.net, Some(&res.checkpoint), &res.records, entry)?;
        Ok((res.checkpoint, entry))
    }

    /// Runs (or reloads) one relearning attack; returns its metric stream.
    fn relearn_stage(&self, stage: &str, ckpt: &Checkpoint, rc: &RelearnConfig) -> Result<Vec<MetricsRecord>> {
        if self.store.entry(stage).is_some() {
            if let Some(recs) = self.store.cached_metrics(stage)? {
                if self.store.cached_checkpoint(stage)?.is_some() {
                    return Ok(recs);
                }
            }
        }
        let bundle = self.bundle(rc.n_relearn);
        let (out, recs) = io(stage, relearn(&self.net, ckpt, bundle, rc, Some(&self.audit), stage))?;
        let mut allowed = ids(&bundle.retain);
        if let Some(re) = &bundle.relearn {
            allowed.extend(re.ids());
        }
        if rc.source != ReminderSource::Retain {
            let (reminder, _) = io(stage, split_test(&bundle.test, rc.seed))?;
            allowed.extend(reminder.ids());
        }
        let touched = self.verify(stage, &allowed)?;
        let entry = StageEntry {
            audited_ids: touched,
            steps: Some(out.step_count),
            ..Default::default()
        };
        self.store.commit(stage, &self.net, Some(&out), &recs, entry)?;
        Ok(recs)
    }

    fn attacks(&self, label: &str, ckpt: &Checkpoint) -> Result<Vec<(usize, ReminderSource, Vec<MetricsRecord>)>> {
        let mut out = Vec::new();
        for n in self.cfg.n_relearn() {
            for &src in &self.cfg.attack.sources {
                let stage = format!("relearn/{label}/{}/{n}", source_name(src));
                let recs = self.relearn_stage(&stage, ckpt, &self.cfg.relearn_config(n, src))?;
                out.push((n, src, recs));
            }
        }
        Ok(out)
    }
}

/// Everything a finished branch contributes to the report.
struct Branch {
    label: String,
    ckpt: Checkpoint,
    entry: StageEntry,
    streams: Vec<(usize, ReminderSource, Vec<MetricsRecord>)>,
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Executes the configured pipeline in `out`, skipping stages the manifest
/// already holds.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> Result<RunManifest> {
    run_experiment_traced(cfg, out, opts).map(|(m, _)| m)
}

/// As [`run_experiment`], also naming the stages that were computed rather than reloaded.
pub fn run_experiment_traced(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> Result<(RunManifest, Vec<String>)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| LabError::Config(e.to_string()))?;
    pool.install(|| {
        let lab = Lab::open(cfg, out)?;
        match run_inner(&lab, opts) {
            Ok(()) => Ok((lab.store.snapshot(), lab.store.computed())),
            Err(e) => {
                lab.store.fail(&e)?;
                Err(e)
            }
        }
    })
}

fn run_inner(lab: &Lab, opts: RunOptions) -> Result<()> {
    let init = lab.init()?;
    let (p, rs) = rayon::join(|| lab.pretrain(&init), || lab.retrain(&init));
    let (p, rs) = (p?, rs?);
    if opts.until == Until::Pretrain {
        return Ok(());
    }
    let methods = lab.cfg.resolved_methods();
    let unlearned = first_error(
        methods
            .par_iter()
            .map(|m| {
                let stage = format!("unlearn/{}", m.label);
                let (c, e) = lab.unlearn_stage(&stage, &p, &m.first, m.second.as_ref())?;
                Ok((m.label.clone(), c, e))
            })
            .collect(),
    )?;
    if opts.until == Until::Unlearn {
        return Ok(());
    }
    let rs_entry = lab.store.entry(RETRAIN).unwrap_or_default();
    let mut jobs = vec![(RETRAIN.to_string(), rs, rs_entry)];
    jobs.extend(unlearned);
    let branches = first_error(
        jobs.into_par_iter()
            .map(|(label, ckpt, entry)| {
                let streams = lab.attacks(&label, &ckpt)?;
                Ok(Branch {
                    label,
                    ckpt,
                    entry,
                    streams,
                })
            })
            .collect(),
    )?;
    let mut report = attack_report(lab, &p, &branches)?;
    if opts.until >= Until::Diagnose {
        diagnostics(lab, &p, &branches, &mut report)?;
    }
    if opts.until == Until::Full {
        if let Some(s) = lab.cfg.sweep.clone() {
            report.sweep = epoch_sweep_with(lab, &p, &s.methods, &s.epochs)?;
        }
    }
    write_reports(lab, &report)?;
    if opts.until == Until::Full {
        for (name, svg) in emit_plots(&report)? {
            lab.store.write_report(&format!("plot:{name}"), &format!("report/plots/{name}.svg"), svg.as_bytes())?;
        }
    }
    Ok(())
}

fn model_row(lab: &Lab, label: &str, c: &Checkpoint, l2: f64, steps: u64) -> Result<ModelRow> {
    let b0 = lab.bundle(0);
    Ok(ModelRow {
        method: label.to_string(),
        test_acc: io(label, accuracy(&lab.net, c, &b0.test))?,
        forget_acc: io(label, accuracy(&lab.net, c, &b0.forget))?,
        retain_acc: io(label, accuracy(&lab.net, c, &b0.retain))?,
        l2_from_pretrained: l2,
        steps,
    })
}

fn attack_report(lab: &Lab, p: &Checkpoint, branches: &[Branch]) -> Result<Report> {
    let mut report = Report::default();
    let window = lab.cfg.diagnostics.window;
    report.models.push(model_row(lab, PRETRAINED, p, 0.0, p.step_count)?);
    for b in branches {
        let l2 = io(&b.label, unlearnlab_core::nn::l2_param_distance(&b.ckpt, p))?;
        report
            .models
            .push(model_row(lab, &b.label, &b.ckpt, l2, b.entry.steps.unwrap_or(0))?);
    }
    let streams = branches
        .iter()
        .flat_map(|b| b.streams.iter().map(move |(n, s, r)| (b.label.as_str(), *n, *s, r.as_slice())));
    report.scatter = aggregate_scatter(streams, window, 10);
    let rs_after: BTreeMap<(usize, &str), f64> = report
        .scatter
        .iter()
        .filter(|r| r.method == RETRAIN)
        .map(|r| ((r.n_relearn, source_name(r.source)), r.mean_forget_ho_acc))
        .collect();
    for b in branches {
        for (n, src, _) in &b.streams {
            let row = report
                .scatter
                .iter()
                .find(|r| r.method == b.label && r.n_relearn == *n && r.source == *src)
                .expect("every stream aggregated");
            let holdout = lab.bundle(*n).forget_eval();
            let before = io(&b.label, accuracy(&lab.net, &b.ckpt, holdout))?;
            report.attacks.push(AttackRow {
                method: b.label.clone(),
                n_relearn: *n,
                source: *src,
                unlearned_forget_ho_acc: before,
                relearned_test_acc: row.mean_test_acc,
                relearned_forget_ho_acc: row.mean_forget_ho_acc,
                recovery: row.mean_forget_ho_acc - before,
                excess_delta: row.mean_forget_ho_acc - rs_after[&(*n, source_name(*src))],
                short_window: row.short_window,
            });
        }
    }
    let b0 = lab.bundle(0);
    let per_branch = first_error(
        branches
            .par_iter()
            .map(|b| {
                let q = io(
                    &b.label,
                    quantization_sweep(&lab.net, &b.ckpt, &lab.cfg.attack.quant_bits, b0),
                )?;
                let mia = if lab.cfg.attack.mia {
                    let strata = match (&lab.data.test_scores, lab.cfg.attack.mia_stratified) {
                        (Some(t), true) => Some((&lab.data.train_scores, t)),
                        _ => None,
                    };
                    Some(io(
                        &b.label,
                        mia_balanced_loss_threshold(&lab.net, &b.ckpt, b0, strata, lab.cfg.seed),
                    )?)
                } else {
                    None
                };
                Ok((q, mia))
            })
            .collect(),
    )?;
    for (b, (q, mia)) in branches.iter().zip(per_branch) {
        report.quantization.extend(q.into_iter().map(|r| QuantTableRow {
            method: b.label.clone(),
            bits: r.bits,
            test_acc: r.test_acc,
            forget_acc: r.forget_acc,
            top_class_share: r.top_class_share,
        }));
        if let Some(m) = mia {
            report.mia.push(MiaRow {
                method: b.label.clone(),
                balanced_accuracy: m.balanced_accuracy,
                threshold: m.threshold,
                direction: m.direction,
                degenerate: m.degenerate,
                n_members: m.n_members,
            });
        }
    }
    Ok(report)
}

fn diagnostics(lab: &Lab, p: &Checkpoint, branches: &[Branch], report: &mut Report) -> Result<()> {
    let b0 = lab.bundle(0);
    if lab.cfg.diagnostics.lmc {
        let curves = first_error(
            branches
                .par_iter()
                .map(|b| {
                    io(
                        "diagnose",
                        lmc_curve(&lab.net, (PRETRAINED, p), (&b.label, &b.ckpt), lab.cfg.diagnostics.lmc_points, b0),
                    )
                })
                .collect(),
        )?;
        for c in curves {
            report.barriers.push(BarrierRow {
                from: c.from.clone(),
                to: c.to.clone(),
                barrier: barrier_height(&c),
            });
            report.lmc.push(c);
        }
    }
    let rs = &branches.iter().find(|b| b.label == RETRAIN).expect("retrain branch").ckpt;
    let methods = branches.iter().filter(|b| b.label != RETRAIN);
    let d = io(
        "diagnose",
        distance_report(p, rs, methods.map(|b| (b.label.as_str(), &b.ckpt))),
    )?;
    report.distances = d.rows.clone();
    report.distances.push((RETRAIN.to_string(), d.retrain));
    report.correlation = correlation(lab, report);
    Ok(())
}

/// Rank correlation of recovery against L2 distance and barrier height over
/// the methods (retrain excluded), at the smallest relearn size.
fn correlation(lab: &Lab, report: &Report) -> Option<Correlation> {
    let n = *lab.cfg.n_relearn().iter().min()?;
    let source = if lab.cfg.attack.sources.contains(&ReminderSource::Retain) {
        ReminderSource::Retain
    } else {
        lab.cfg.attack.sources[0]
    };
    let rows: Vec<&AttackRow> = report
        .attacks
        .iter()
        .filter(|a| a.method != RETRAIN && a.n_relearn == n && a.source == source)
        .collect();
    let recovery: Vec<f64> = rows.iter().map(|a| a.recovery).collect();
    let l2: Vec<f64> = rows
        .iter()
        .map(|a| report.model(&a.method).map(|m| m.l2_from_pretrained).unwrap_or(f64::NAN))
        .collect();
    let barrier: Option<Vec<f64>> = rows.iter().map(|a| report.barrier(PRETRAINED, &a.method)).collect();
    let s_l2 = spearman(&l2, &recovery);
    let s_bar = barrier.and_then(|b| spearman(&b, &recovery));
    let better = match (s_l2, s_bar) {
        (Some(a), Some(b)) => Some(if a <= b { "l2" } else { "barrier" }.to_string()),
        (Some(_), None) => Some("l2".to_string()),
        (None, Some(_)) => Some("barrier".to_string()),
        _ => None,
    };
    Some(Correlation {
        n_relearn: n,
        source,
        methods: rows.len(),
        spearman_l2: s_l2,
        spearman_barrier: s_bar,
        better_predictor: better,
    })
}

fn write_reports(lab: &Lab, report: &Report) -> Result<()> {
    let s = &lab.store;
    s.write_report("models", "report/models.csv", models_csv(&report.models).as_bytes())?;
    s.write_report("attacks", "report/attacks.csv", attacks_csv(&report.attacks).as_bytes())?;
    s.write_report("scatter", "report/scatter.csv", scatter_csv(&report.scatter).as_bytes())?;
    if !report.mia.is_empty() {
        s.write_report("mia", "report/mia.csv", mia_csv(&report.mia).as_bytes())?;
    }
    let mut by_method: BTreeMap<&str, Vec<unlearnlab_core::attack::QuantRow>> = BTreeMap::new();
    for r in &report.quantization {
        by_method.entry(&r.method).or_default().push(unlearnlab_core::attack::QuantRow {
            bits: r.bits,
            test_acc: r.test_acc,
            forget_acc: r.forget_acc,
            top_class_share: r.top_class_share,
        });
    }
    for (m, rows) in by_method {
        let mut buf = Vec::new();
        io("report", unlearnlab_core::attack::write_quant_csv(&mut buf, &rows))?;
        s.write_report(&format!("quantization:{m}"), &format!("report/quantization/{m}.csv"), &buf)?;
    }
    for c in &report.lmc {
        let mut buf = Vec::new();
        io("report", write_lmc_csv(&mut buf, c))?;
        s.write_report(
            &format!("lmc:{}:{}", c.from, c.to),
            &format!("report/lmc/{}__{}.csv", c.from, c.to),
            &buf,
        )?;
    }
    if !report.barriers.is_empty() {
        s.write_report("barriers", "report/barriers.csv", barriers_csv(&report.barriers).as_bytes())?;
    }
    if !report.distances.is_empty() {
        let mut text = String::from("method,l2_distance\n");
        for (m, d) in &report.distances {
            text.push_str(&format!("{m},{d}\n"));
        }
        s.write_report("distance", "report/distance.csv", text.as_bytes())?;
    }
    if let Some(c) = &report.correlation {
        s.write_report("correlation", "report/correlation.csv", correlation_csv(c).as_bytes())?;
    }
    if !report.sweep.is_empty() {
        s.write_report("sweep", "report/sweep.csv", sweep_csv(&report.sweep).as_bytes())?;
    }
    s.write_report("report", "report/report.json", &serde_json::to_vec_pretty(report)?)?;
    Ok(())
}

/// Reads the report a finished run left behind.
pub fn load_report(out: &Path) -> Result<Report> {
    let path = out.join("report/report.json");
    let bytes = fs::read(&path).map_err(|e| LabError::Config(format!("no report at {}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn sweep_config(lab: &Lab, method: MethodId, epochs: usize) -> UnlearnConfig {
    let entry = lab
        .cfg
        .methods
        .iter()
        .find(|e| e.method == method && e.then.is_none())
        .cloned()
        .unwrap_or_else(|| MethodEntry::new(method));
    let ResolvedMethod { mut first, .. } = lab.cfg.resolve_method(&entry);
    first.epochs = epochs;
    first
}

fn epoch_sweep_with(lab: &Lab, p: &Checkpoint, methods: &[MethodId], epochs: &[usize]) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(MethodId, usize)> = methods
        .iter()
        .flat_map(|&m| epochs.iter().map(move |&e| (m, e)))
        .collect();
    let b0 = lab.bundle(0);
    first_error(
        jobs.par_iter()
            .map(|&(m, e)| {
                let stage = format!("sweep/{m}/{e}");
                let cfg = sweep_config(lab, m, e);
                let (c, _) = lab.unlearn_stage(&stage, p, &cfg, None)?;
                let rc = lab.cfg.relearn_config(0, ReminderSource::Retain);
                let recs = lab.relearn_stage(&format!("{stage}/relearn"), &c, &rc)?;
                let w = window_mean(&recs, lab.cfg.diagnostics.window, 10).expect("non-empty stream");
                Ok(SweepRow {
                    method: m.to_string(),
                    epochs: e,
                    test_acc: io(&stage, accuracy(&lab.net, &c, &b0.test))?,
                    forget_ho_pre: io(&stage, accuracy(&lab.net, &c, b0.forget_eval()))?,
                    forget_ho_post: w.forget_ho_acc,
                    relearned_test_acc: w.test_acc,
                })
            })
            .collect(),
    )
}

/// Unlearning-budget sweep: unlearn with each epoch count, then relearn on the
/// retain set with no forget examples.
pub fn epoch_sweep(
    cfg: &ExperimentConfig,
    out: &Path,
    methods: &[MethodId],
    epochs: &[usize],
    threads: usize,
) -> Result<Vec<SweepRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| LabError::Config(e.to_string()))?;
    pool.install(|| {
        let lab = Lab::open(cfg, out)?;
        let run = || -> Result<Vec<SweepRow>> {
            let init = lab.init()?;
            let p = lab.pretrain(&init)?;
            let rows = epoch_sweep_with(&lab, &p, methods, epochs)?;
            lab.store
                .write_report("sweep", "report/sweep.csv", sweep_csv(&rows).as_bytes())?;
            Ok(rows)
        };
        run().inspect_err(|e| {
            let _ = lab.store.fail(e);
        })
    })
}
