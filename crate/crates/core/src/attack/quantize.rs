use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Network};
use crate::train::accuracy;

/// Per-tensor symmetric round-to-nearest quantization of every trainable tensor.
/// BN running statistics are untouched; an all-zero tensor is left as is.
pub fn quantize(net: &Network, ckpt: &Checkpoint, bits: u32) -> Result<Checkpoint> {
    if !(2..=32).contains(&bits) {
        return Err(Error::InvalidParameter(format!("{bits} bits outside [2, 32]")));
    }
    net.check(ckpt)?;
    let levels = ((1u64 << (bits - 1)) - 1) as f64;
    let mut out = ckpt.clone();
    for t in net.param_tensors() {
        let slice = &mut out.params[t.offset..t.offset + t.len];
        let max = slice.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
        if max == 0.0 {
            continue;
        }
        let scale = max / levels;
        for v in slice.iter_mut() {
            *v = ((*v as f64 / scale).round() * scale) as f32;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantRow {
    pub bits: u32,
    pub test_acc: f64,
    pub forget_acc: f64,
    /// Largest share of test predictions falling on a single class.
    pub top_class_share: f64,
}

pub fn quantization_sweep(net: &Network, ckpt: &Checkpoint, bits: &[u32], bundle: &DatasetBundle) -> Result<Vec<QuantRow>> {
    bits.iter()
        .map(|&b| {
            let q = quantize(net, ckpt, b)?;
            let preds = net.predict(&q, bundle.test.inputs())?.argmax_rows();
            let mut counts = vec![0usize; net.classes()];
            preds.iter().for_each(|&p| counts[p] += 1);
            Ok(QuantRow {
                bits: b,
                test_acc: accuracy(net, &q, &bundle.test)?,
                forget_acc: accuracy(net, &q, bundle.forget_eval())?,
                top_class_share: *counts.iter().max().unwrap_or(&0) as f64 / preds.len() as f64,
            })
        })
        .collect()
}

pub fn write_quant_csv<W: std::io::Write>(mut w: W, rows: &[QuantRow]) -> Result<()> {
    writeln!(w, "bits,test_acc,forget_acc")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.bits, r.test_acc, r.forget_acc)?;
    }
    Ok(())
}
