#![allow(dead_code)]

use unlearnlab_core::data::*;
use unlearnlab_core::nn::{Checkpoint, ModelSpec, Network};
use unlearnlab_core::train::{train, Monitor, TrainConfig};

pub struct Fixture {
    pub net: Network,
    pub splits: SyntheticSplits,
    pub bundle: DatasetBundle,
    pub init: Checkpoint,
    pub pretrained: Checkpoint,
    pub cfg: TrainConfig,
}

pub fn small_config(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        classes: 4,
        per_class: 100,
        atypical_fraction: 0.1,
        input_dim: 8,
        center_scale: 1.0,
        test_per_class: 50,
        seed,
        ..Default::default()
    }
}

pub fn small_train_config() -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        weight_decay: 1e-4,
        epochs: 60,
        batch_size: 32,
        floor_factor: 0.1,
        ..TrainConfig::desk()
    }
}

/// Small task with an atypical class-agnostic forget set of 20 and 5 relearn examples.
pub fn fixture(seed: u64) -> Fixture {
    let splits = make_synthetic_splits(&small_config(seed)).unwrap();
    let net = Network::new(ModelSpec::mlp(8, 16, 4)).unwrap();
    let spec = ForgetSpec {
        scope: ForgetScope::ClassAgnostic,
        selection: Selection::Atypical,
        size: ForgetSize::Count(20),
        seed,
    };
    let bundle = build_bundle(&splits.train, &splits.test, &splits.train_typicality, &spec, 5, seed).unwrap();
    let init = net.init::<f32>(seed);
    let cfg = small_train_config();
    let (pretrained, _) = train(&net, &init, &splits.train, &cfg, &mut Monitor::silent("pretrain")).unwrap();
    Fixture {
        net,
        splits,
        bundle,
        init,
        pretrained,
        cfg,
    }
}
