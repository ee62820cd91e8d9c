use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One evaluation point. Accuracies are absent when no probe set was attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub phase: String,
    pub step: u64,
    pub test_acc: Option<f64>,
    pub forget_ho_acc: Option<f64>,
    pub train_loss: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "phase,step,test_acc,forget_ho_acc,train_loss,lr";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(mut w: W, records: &[MetricsRecord]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.phase,
            r.step,
            opt(r.test_acc),
            opt(r.forget_ho_acc),
            r.train_loss,
            r.lr
        )?;
    }
    Ok(())
}
