mod metrics;
mod optim;
mod run;

pub use metrics::{write_metrics_csv, MetricsRecord, METRICS_HEADER};
pub use optim::{adam_step, cosine_lr, OptimState};
pub use run::{
    accuracy, accuracy_mask, loss_and_grad, retrain_from_scratch, train, Batcher, Driver, Gradient, Monitor,
    Schedule, TrainConfig,
};
