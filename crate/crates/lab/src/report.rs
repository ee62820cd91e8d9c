use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use unlearnlab_core::attack::{MiaDirection, ReminderSource};
use unlearnlab_core::train::MetricsRecord;

pub fn source_name(s: ReminderSource) -> &'static str {
    match s {
        ReminderSource::Retain => "retain",
        ReminderSource::HeldoutTest => "heldout_test",
        ReminderSource::CorruptedTest => "corrupted_test",
    }
}

/// Mean accuracies over the tail of one metric stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowMean {
    pub test_acc: f64,
    pub forget_ho_acc: f64,
    pub records: usize,
    /// Fewer records than the window asked for; everything available was used.
    pub short_window: bool,
}

/// Averages the last `window` cadence records plus an off-cadence final record.
/// Records without a probe value are skipped for that column.
pub fn window_mean(records: &[MetricsRecord], window: usize, eval_every: u64) -> Option<WindowMean> {
    let last = records.last()?;
    let wanted = if last.step % eval_every != 0 { window + 1 } else { window };
    let short = records.len() < wanted;
    let tail = &records[records.len().saturating_sub(wanted)..];
    let mean = |f: fn(&MetricsRecord) -> Option<f64>| {
        let v: Vec<f64> = tail.iter().filter_map(f).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Some(WindowMean {
        test_acc: mean(|r| r.test_acc),
        forget_ho_acc: mean(|r| r.forget_ho_acc),
        records: tail.len(),
        short_window: short,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub method: String,
    pub n_relearn: usize,
    pub source: ReminderSource,
    pub mean_test_acc: f64,
    pub mean_forget_ho_acc: f64,
    pub records: usize,
    pub short_window: bool,
}

/// One row per (method, n_relearn, source) stream, in input order.
pub fn aggregate_scatter<'a>(
    streams: impl IntoIterator<Item = (&'a str, usize, ReminderSource, &'a [MetricsRecord])>,
    window: usize,
    eval_every: u64,
) -> Vec<ScatterRow> {
    streams
        .into_iter()
        .filter_map(|(method, n, source, recs)| {
            let w = window_mean(recs, window, eval_every)?;
            Some(ScatterRow {
                method: method.to_string(),
                n_relearn: n,
                source,
                mean_test_acc: w.test_acc,
                mean_forget_ho_acc: w.forget_ho_acc,
                records: w.records,
                short_window: w.short_window,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub method: String,
    pub test_acc: f64,
    pub forget_acc: f64,
    pub retain_acc: f64,
    pub l2_from_pretrained: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub method: String,
    pub n_relearn: usize,
    pub source: ReminderSource,
    pub unlearned_forget_ho_acc: f64,
    pub relearned_test_acc: f64,
    pub relearned_forget_ho_acc: f64,
    /// Relearned minus unlearned forget-holdout accuracy.
    pub recovery: f64,
    /// Relearned forget-holdout accuracy minus the retrained model's under the same attack.
    pub excess_delta: f64,
    pub short_window: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaRow {
    pub method: String,
    pub balanced_accuracy: f64,
    pub threshold: f64,
    pub direction: MiaDirection,
    pub degenerate: bool,
    pub n_members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantTableRow {
    pub method: String,
    pub bits: u32,
    pub test_acc: f64,
    pub forget_acc: f64,
    pub top_class_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierRow {
    pub from: String,
    pub to: String,
    pub barrier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n_relearn: usize,
    pub source: ReminderSource,
    pub methods: usize,
    pub spearman_l2: Option<f64>,
    pub spearman_barrier: Option<f64>,
    /// `l2` or `barrier`: whichever correlates more negatively with recovery.
    pub better_predictor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub epochs: usize,
    pub test_acc: f64,
    pub forget_ho_pre: f64,
    pub forget_ho_post: f64,
    pub relearned_test_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Pretrained and retrained models first, then every method.
    pub models: Vec<ModelRow>,
    pub attacks: Vec<AttackRow>,
    pub scatter: Vec<ScatterRow>,
    pub mia: Vec<MiaRow>,
    pub quantization: Vec<QuantTableRow>,
    pub barriers: Vec<BarrierRow>,
    pub lmc: Vec<unlearnlab_core::diagnostics::LmcCurve>,
    pub distances: Vec<(String, f64)>,
    pub correlation: Option<Correlation>,
    pub sweep: Vec<SweepRow>,
}

impl Report {
    pub fn model(&self, method: &str) -> Option<&ModelRow> {
        self.models.iter().find(|m| m.method == method)
    }

    pub fn attack(&self, method: &str, n: usize, source: ReminderSource) -> Option<&AttackRow> {
        self.attacks
            .iter()
            .find(|a| a.method == method && a.n_relearn == n && a.source == source)
    }

    pub fn barrier(&self, from: &str, to: &str) -> Option<f64> {
        self.barriers
            .iter()
            .find(|b| b.from == from && b.to == to)
            .map(|b| b.barrier)
    }

    pub fn mia(&self, method: &str) -> Option<&MiaRow> {
        self.mia.iter().find(|m| m.method == method)
    }

    pub fn sweep(&self, method: &str, epochs: usize) -> Option<&SweepRow> {
        self.sweep.iter().find(|r| r.method == method && r.epochs == epochs)
    }
}

fn table<T>(header: &str, rows: &[T], line: impl Fn(&T) -> String) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&line(r));
        s.push('\n');
    }
    s
}

pub fn models_csv(rows: &[ModelRow]) -> String {
    table("method,test_acc,forget_acc,retain_acc,l2_from_pretrained,steps", rows, |r| {
        format!(
            "{},{},{},{},{},{}",
            r.method, r.test_acc, r.forget_acc, r.retain_acc, r.l2_from_pretrained, r.steps
        )
    })
}

pub fn attacks_csv(rows: &[AttackRow]) -> String {
    table(
        "method,n_relearn,source,unlearned_forget_ho_acc,relearned_test_acc,relearned_forget_ho_acc,recovery,excess_delta,short_window",
        rows,
        |r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.method,
                r.n_relearn,
                source_name(r.source),
                r.unlearned_forget_ho_acc,
                r.relearned_test_acc,
                r.relearned_forget_ho_acc,
                r.recovery,
                r.excess_delta,
                r.short_window
            )
        },
    )
}

pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    table(
        "method,n_relearn,source,mean_test_acc,mean_forget_ho_acc,records,short_window",
        rows,
        |r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.method,
                r.n_relearn,
                source_name(r.source),
                r.mean_test_acc,
                r.mean_forget_ho_acc,
                r.records,
                r.short_window
            )
        },
    )
}

pub fn mia_csv(rows: &[MiaRow]) -> String {
    table("method,balanced_accuracy,threshold,direction,degenerate,n_members", rows, |r| {
        let dir = match r.direction {
            MiaDirection::LowerIsMember => "lower_is_member",
            MiaDirection::HigherIsMember => "higher_is_member",
        };
        format!(
            "{},{},{},{},{},{}",
            r.method, r.balanced_accuracy, r.threshold, dir, r.degenerate, r.n_members
        )
    })
}

pub fn barriers_csv(rows: &[BarrierRow]) -> String {
    table("from,to,barrier", rows, |r| format!("{},{},{}", r.from, r.to, r.barrier))
}

pub fn correlation_csv(c: &Correlation) -> String {
    let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("n_relearn,source,methods,spearman_l2,spearman_barrier,better_predictor\n");
    let _ = writeln!(
        s,
        "{},{},{},{},{},{}",
        c.n_relearn,
        source_name(c.source),
        c.methods,
        o(c.spearman_l2),
        o(c.spearman_barrier),
        c.better_predictor.as_deref().unwrap_or("")
    );
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    table(
        "method,epochs,test_acc,forget_ho_pre,forget_ho_post,relearned_test_acc",
        rows,
        |r| {
            format!(
                "{},{},{},{},{},{}",
                r.method, r.epochs, r.test_acc, r.forget_ho_pre, r.forget_ho_post, r.relearned_test_acc
            )
        },
    )
}
