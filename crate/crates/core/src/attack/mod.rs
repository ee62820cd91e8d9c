mod mia;
mod quantize;
mod relearn;

pub use mia::{balanced_threshold, mia_balanced_loss_threshold, nonmember_ids, MiaDirection, MiaReport};
pub use quantize::{quantization_sweep, quantize, write_quant_csv, QuantRow};
pub use relearn::{corrupt, plan_relearn, relearn, split_test, RelearnConfig, RelearnPlan, ReminderSource};
